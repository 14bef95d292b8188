use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::geometry::{KdTree, Vec3};

/// `(student index, teacher index)` pairs, at most one per student point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
    /// Student points whose nearest teacher point was beyond the cutoff.
    pub dropped: usize,
    /// Set when either view was empty.
    pub empty_input: bool,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        if let Some(&(i, _)) = pairs.iter().find(|(i, _)| !seen.insert(*i)) {
            return Err(Error::InvalidInput(format!("student index {i} appears twice")));
        }
        Ok(Self { pairs, dropped: 0, empty_input: false })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn student_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn teacher_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub(crate) fn check_bounds(&self, students: usize, teachers: usize) -> Result<()> {
        match self.pairs.iter().find(|(i, j)| *i >= students || *j >= teachers) {
            Some(&(i, j)) => Err(Error::InvalidInput(format!(
                "pair ({i}, {j}) out of range for {students} student / {teachers} teacher points"
            ))),
            None => Ok(()),
        }
    }
}

/// Pairs every student point with its nearest teacher point, both given in
/// the shared pre-augmentation frame. Pairs farther apart than `cutoff` are
/// dropped and counted.
pub fn match_correspondences(teacher_positions: &[Vec3], student_positions: &[Vec3], cutoff: f64) -> CorrespondenceSet {
    if teacher_positions.is_empty() || student_positions.is_empty() {
        return CorrespondenceSet { empty_input: true, ..Default::default() };
    }
    let tree = KdTree::new(teacher_positions);
    let mut pairs = Vec::with_capacity(student_positions.len());
    let mut dropped = 0;
    for (i, p) in student_positions.iter().enumerate() {
        match tree.nearest(p) {
            Some(n) if n.distance() <= cutoff => pairs.push((i, n.index)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::debug!("correspondence matching dropped {dropped} of {} points", student_positions.len());
    }
    CorrespondenceSet { pairs, dropped, empty_input: false }
}
