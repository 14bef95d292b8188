//! PLY point clouds, ASCII and binary little-endian.
//!
//! Vertices carry `x, y, z` (float or double), optionally `red, green, blue`
//! (uchar, mapped to `[0, 1]`) and `nx, ny, nz`. Other vertex properties are
//! kept on read as extras and dropped on write. Non-vertex elements are
//! skipped, including list properties.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(Error::Ply(format!("unknown scalar type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// A vertex property that is not part of [`PointCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraProperty {
    pub name: String,
    pub ty: ScalarType,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub cloud: PointCloud,
    pub extras: Vec<ExtraProperty>,
    pub format: PlyFormat,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(PlyFormat, Vec<Element>)> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(Error::Ply("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(Error::Ply("header ends without end_header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Ply(format!("unsupported format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Ply(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let e = elements.last_mut().ok_or_else(|| Error::Ply("property before element".into()))?;
                e.properties.push(Property::List { count: ScalarType::parse(count)?, item: ScalarType::parse(item)? });
            }
            ["property", ty, name] => {
                let e = elements.last_mut().ok_or_else(|| Error::Ply("property before element".into()))?;
                e.properties.push(Property::Scalar { name: name.to_string(), ty: ScalarType::parse(ty)? });
            }
            _ => return Err(Error::Ply(format!("unrecognized header line {:?}", line.trim_end()))),
        }
    }
    Ok((format.ok_or_else(|| Error::Ply("no format line".into()))?, elements))
}

/// Pulls numbers one at a time from either encoding.
enum Source<R> {
    Ascii { reader: R, tokens: std::vec::IntoIter<String> },
    Binary(R),
}

impl<R: BufRead> Source<R> {
    fn value(&mut self, ty: ScalarType) -> Result<f64> {
        match self {
            Source::Binary(r) => {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf[..ty.size()]).map_err(|_| Error::Ply("unexpected end of data".into()))?;
                Ok(ty.decode(&buf))
            }
            Source::Ascii { reader, tokens } => loop {
                if let Some(t) = tokens.next() {
                    return t.parse().map_err(|_| Error::Ply(format!("bad number {t:?}")));
                }
                let mut line = String::new();
                if reader.read_line(&mut line)? == 0 {
                    return Err(Error::Ply("unexpected end of data".into()));
                }
                *tokens = line.split_whitespace().map(str::to_string).collect::<Vec<_>>().into_iter();
            },
        }
    }
}

pub fn read_ply<R: Read>(reader: R) -> Result<PlyData> {
    let mut reader = BufReader::new(reader);
    let (format, elements) = parse_header(&mut reader)?;
    let mut src = match format {
        PlyFormat::Ascii => Source::Ascii { reader, tokens: Vec::new().into_iter() },
        PlyFormat::BinaryLittleEndian => Source::Binary(reader),
    };
    let mut columns: Option<Vec<(String, ScalarType, Vec<f64>)>> = None;
    for e in &elements {
        let is_vertex = e.name == "vertex" && columns.is_none();
        let mut cols: Vec<(String, ScalarType, Vec<f64>)> = e
            .properties
            .iter()
            .filter_map(|p| match p {
                Property::Scalar { name, ty } => Some((name.clone(), *ty, Vec::with_capacity(e.count))),
                Property::List { .. } => None,
            })
            .collect();
        for _ in 0..e.count {
            let mut ci = 0;
            for p in &e.properties {
                match p {
                    Property::Scalar { ty, .. } => {
                        let v = src.value(*ty)?;
                        if is_vertex {
                            cols[ci].2.push(v);
                        }
                        ci += 1;
                    }
                    Property::List { count, item } => {
                        let n = src.value(*count)?;
                        if !(n >= 0.0) {
                            return Err(Error::Ply("negative list length".into()));
                        }
                        for _ in 0..n as usize {
                            src.value(*item)?;
                        }
                    }
                }
            }
        }
        if is_vertex {
            columns = Some(std::mem::take(&mut cols));
        } else if e.name != "vertex" {
            log::debug!("skipping PLY element {:?}", e.name);
        }
    }
    let mut columns = columns.ok_or_else(|| Error::Ply("no vertex element".into()))?;
    let mut take = |name: &str| -> Option<(ScalarType, Vec<f64>)> {
        let i = columns.iter().position(|c| c.0 == name)?;
        let (_, ty, v) = columns.remove(i);
        Some((ty, v))
    };
    let (x, y, z) = match (take("x"), take("y"), take("z")) {
        (Some(x), Some(y), Some(z)) => (x.1, y.1, z.1),
        _ => return Err(Error::Ply("vertex element lacks x, y or z".into())),
    };
    let positions = (0..x.len()).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    let mut cloud = PointCloud::new(positions)?;
    let mut extras = Vec::new();

    match (take("red"), take("green"), take("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let scale = if r.0 == ScalarType::U8 { 1.0 / 255.0 } else { 1.0 };
            let colors = (0..r.1.len()).map(|i| Vec3::new(r.1[i], g.1[i], b.1[i]) * scale).collect();
            cloud = cloud.with_colors(colors)?;
        }
        (r, g, b) => {
            for (name, c) in [("red", r), ("green", g), ("blue", b)] {
                if let Some((ty, values)) = c {
                    extras.push(ExtraProperty { name: name.into(), ty, values });
                }
            }
        }
    }
    match (take("nx"), take("ny"), take("nz")) {
        (Some(a), Some(b), Some(c)) => {
            let normals: Vec<Vec3> = (0..a.1.len()).map(|i| Vec3::new(a.1[i], b.1[i], c.1[i])).collect();
            if normals.iter().any(|n| n.norm() == 0.0 || !n.iter().all(|v| v.is_finite())) {
                log::warn!("PLY normals contain zero or non-finite vectors; normals dropped");
            } else if normals.iter().all(|n| (n.norm() - 1.0).abs() <= 1e-6) {
                cloud = cloud.with_normals(normals)?;
            } else {
                cloud = cloud.with_normals(normals.iter().map(|n| n.normalize()).collect())?;
            }
        }
        (a, b, c) => {
            for (name, n) in [("nx", a), ("ny", b), ("nz", c)] {
                if let Some((ty, values)) = n {
                    extras.push(ExtraProperty { name: name.into(), ty, values });
                }
            }
        }
    }
    extras.extend(columns.into_iter().map(|(name, ty, values)| ExtraProperty { name, ty, values }));
    Ok(PlyData { cloud, extras, format })
}

pub fn read_ply_file(path: &Path) -> Result<PlyData> {
    read_ply(File::open(path)?)
}

/// Writes positions as float32, colors as uchar, normals as float32.
/// Validity flags are not stored.
pub fn write_ply<W: Write>(writer: W, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.colors().is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if cloud.normals().is_some() {
        writeln!(w, "property float nx\nproperty float ny\nproperty float nz")?;
    }
    writeln!(w, "end_header")?;
    let to_u8 = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    for i in 0..cloud.len() {
        let p = cloud.positions()[i].map(|v| v as f32);
        let c = cloud.colors().map(|c| c[i].map(to_u8));
        let n = cloud.normals().map(|n| n[i].map(|v| v as f32));
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(c) = c {
                    write!(w, " {} {} {}", c.x, c.y, c.z)?;
                }
                if let Some(n) = n {
                    write!(w, " {} {} {}", n.x, n.y, n.z)?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = c {
                    w.write_all(&[c.x, c.y, c.z])?;
                }
                if let Some(n) = n {
                    for v in n.iter() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the cloud of `data`; extra properties are dropped with a warning.
pub fn write_ply_data<W: Write>(writer: W, data: &PlyData, format: PlyFormat) -> Result<()> {
    if !data.extras.is_empty() {
        let names: Vec<&str> = data.extras.iter().map(|e| e.name.as_str()).collect();
        log::warn!("dropping PLY properties {names:?} on write");
    }
    write_ply(writer, &data.cloud, format)
}

pub fn write_ply_file(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    write_ply(File::create(path)?, cloud, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ASCII: &str = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty float intensity\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0 0.5\n1 2 3 0 255 51 0.25\n3 0 1 1\n";

    #[test]
    fn ascii_with_extras_and_faces() {
        let d = read_ply(ASCII.as_bytes()).unwrap();
        assert_eq!(d.cloud.len(), 2);
        assert_eq!(d.cloud.positions()[1], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(d.cloud.colors().unwrap()[1], Vec3::new(0.0, 1.0, 0.2));
        assert_eq!(d.extras.len(), 1);
        assert_eq!(d.extras[0].name, "intensity");
        assert_eq!(d.extras[0].values, vec![0.5, 0.25]);
    }

    #[test]
    fn missing_coordinates() {
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(matches!(read_ply(bad.as_bytes()), Err(Error::Ply(_))));
    }

    #[test]
    fn truncated_binary() {
        let cloud = PointCloud::from_arrays(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud, PlyFormat::BinaryLittleEndian).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_ply(buf.as_slice()).is_err());
    }

    #[test]
    fn ascii_round_trip() {
        let cloud = PointCloud::from_arrays(&[[0.5, -1.25, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud, PlyFormat::Ascii).unwrap();
        assert_eq!(read_ply(buf.as_slice()).unwrap().cloud, cloud);
    }
}
