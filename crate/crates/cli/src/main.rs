use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;

use lam3c::geometry::estimate_normals;
use lam3c::gradcheck::{run_gradcheck, GradcheckConfig};
use lam3c::model::{encode, load_checkpoint, save_checkpoint};
use lam3c::pca::pca_colors;
use lam3c::pipeline::{align_directory, list_ply_files, AlignConfig};
use lam3c::ply::{read_ply_file, write_ply_file, PlyFormat};
use lam3c::sinkhorn::{sinkhorn_normalize, LogitsBatch};
use lam3c::synth::{generate_room, SceneSpec};
use lam3c::trainer::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "lam3c", version, about = "Self-supervised point-cloud losses and scene alignment")]
struct Cli {
    /// Seed for all randomness. Required with --strict.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit with code 2 when any scene fails; require --seed.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align every PLY in a directory: z-up floor, normalized scale, normals.
    Align {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write synthetic rooms as PLY plus a JSON ground-truth sidecar each.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// SceneSpec JSON; its seed is replaced per scene.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the toy model on a directory of PLY scenes.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sinkhorn assignment of a CSV logits matrix (no header).
    Sinkhorn {
        /// CSV file; stdin when omitted.
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
    },
    /// Color a scene by the top principal components of its embeddings.
    ExportPca {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        normals_k: usize,
    },
}

enum Outcome {
    Ok,
    /// Some scenes or checks failed.
    Failed,
}

/// Errors that map to exit code 1.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn seed(cli: &Cli, used: bool) -> anyhow::Result<Option<u64>> {
    if used && cli.strict && cli.seed.is_none() {
        return Err(config_error("--seed is required with --strict"));
    }
    Ok(cli.seed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(if cli.strict { 2 } else { 0 }),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().ok();
    }
    match &cli.command {
        Command::Align { input, output, config, report } => {
            let mut config: AlignConfig = read_config(config.as_deref())?;
            if let Some(s) = seed(cli, true)? {
                config.seed = s;
            }
            config.validate().map_err(|e| config_error(e.to_string()))?;
            let result = align_directory(input, output, &config, cli.jobs)?;
            let report_path = report.clone().unwrap_or_else(|| output.join("report.csv"));
            let text = if report_path.extension().is_some_and(|e| e == "json") {
                serde_json::to_string_pretty(&result)?
            } else {
                result.to_csv()?
            };
            std::fs::write(&report_path, text).with_context(|| report_path.display().to_string())?;
            let failed = result.failures();
            if failed > 0 {
                log::warn!("{failed} of {} scenes failed; see {}", result.scenes.len(), report_path.display());
                return Ok(Outcome::Failed);
            }
            Ok(Outcome::Ok)
        }
        Command::GenScenes { out, count, config } => {
            let spec: SceneSpec = read_config(config.as_deref())?;
            let base = seed(cli, true)?.unwrap_or(spec.seed);
            spec.validate().map_err(|e| config_error(e.to_string()))?;
            std::fs::create_dir_all(out)?;
            (0..*count).into_par_iter().try_for_each(|i| -> anyhow::Result<()> {
                let spec = SceneSpec { seed: base.wrapping_add(i as u64), ..spec.clone() };
                let (cloud, truth) = generate_room(&spec)?;
                let stem = format!("scene_{i:04}");
                write_ply_file(&out.join(format!("{stem}.ply")), &cloud, PlyFormat::BinaryLittleEndian)?;
                let sidecar = BufWriter::new(File::create(out.join(format!("{stem}.json")))?);
                serde_json::to_writer(sidecar, &truth)?;
                Ok(())
            })?;
            Ok(Outcome::Ok)
        }
        Command::TrainToy { config, scenes, out } => {
            let mut config: TrainConfig = read_config(config.as_deref())?;
            if let Some(s) = seed(cli, true)? {
                config.seed = s;
            }
            config.validate().map_err(|e| config_error(e.to_string()))?;
            let files = list_ply_files(scenes)?;
            if files.is_empty() {
                bail!(config_error(format!("no PLY files in {}", scenes.display())));
            }
            let clouds = files
                .par_iter()
                .map(|f| read_ply_file(f).map(|d| d.cloud).with_context(|| f.display().to_string()))
                .collect::<anyhow::Result<Vec<_>>>()?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
            let mut trainer = Trainer::new(config, &clouds)?;
            let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
            trainer.run(|r| {
                writeln!(metrics, "{}", r.to_json_line()?)?;
                if r.step % 100 == 0 {
                    log::info!("step {} loss {:.4} entropy {:.3}", r.step, r.total, r.usage_entropy);
                }
                Ok(())
            })?;
            metrics.flush()?;
            save_checkpoint(&out.join("student.ckpt"), &trainer.state().student)?;
            Ok(Outcome::Ok)
        }
        Command::Gradcheck { config } => {
            let mut config: GradcheckConfig = read_config(config.as_deref())?;
            if let Some(s) = seed(cli, true)? {
                config.seed = s;
            }
            let report = run_gradcheck(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                bail!("gradient check failed");
            }
            Ok(Outcome::Ok)
        }
        Command::Sinkhorn { input, temperature, iterations } => {
            let mut text = String::new();
            match input {
                Some(p) => text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?,
                None => {
                    std::io::stdin().read_to_string(&mut text)?;
                }
            }
            let logits = parse_matrix(&text)?;
            let q = sinkhorn_normalize(&LogitsBatch::new(logits, *temperature).map_err(|e| config_error(e.to_string()))?, *iterations)?;
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for row in q.values().rows() {
                w.write_record(row.iter().map(|v| format!("{v:.12}")))?;
            }
            w.flush()?;
            Ok(Outcome::Ok)
        }
        Command::ExportPca { checkpoint, scene, out, normals_k } => {
            let params = load_checkpoint(checkpoint)?;
            let (mut cloud, _) = read_ply_file(scene)?.cloud.compact();
            if cloud.normals().is_none() {
                cloud = estimate_normals(&cloud, *normals_k)?.cloud;
            }
            let emb = encode(&params.encoder, &cloud)?;
            let colors = pca_colors(emb.values())?;
            let colored = cloud.with_colors(colors)?;
            write_ply_file(out, &colored, PlyFormat::BinaryLittleEndian)?;
            Ok(Outcome::Ok)
        }
    }
}

fn parse_matrix(text: &str) -> anyhow::Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| config_error(e.to_string()))?;
        let row = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| config_error(format!("{v:?}: {e}"))))
            .collect::<anyhow::Result<Vec<_>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(config_error("logits must be a non-empty rectangular matrix"));
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), rows.concat())?)
}
