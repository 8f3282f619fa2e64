use crate::error::{Error, Result};
use crate::openset::DetectionOutcome;

/// Ground truth of a test sample: a target label or a novel-class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrueClass {
    Target(usize),
    Novel(usize),
}

/// Rows: targets `0..k` then novel classes; columns: targets `0..k` then Novel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub targets: usize,
    pub novels: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(targets: usize, novels: usize) -> Self {
        Self { targets, novels, counts: vec![vec![0; targets + 1]; targets + novels] }
    }

    pub fn row_of(&self, truth: TrueClass) -> Result<usize> {
        match truth {
            TrueClass::Target(l) if l < self.targets => Ok(l),
            TrueClass::Novel(c) if c < self.novels => Ok(self.targets + c),
            TrueClass::Target(l) => Err(Error::LabelOutOfRange { label: l, classes: self.targets }),
            TrueClass::Novel(c) => Err(Error::LabelOutOfRange { label: c, classes: self.novels }),
        }
    }

    pub fn add(&mut self, outcome: &DetectionOutcome, truth: TrueClass) -> Result<()> {
        let row = self.row_of(truth)?;
        let col = match *outcome {
            DetectionOutcome::Target { label, .. } if label < self.targets => label,
            DetectionOutcome::Target { label, .. } => {
                return Err(Error::LabelOutOfRange { label, classes: self.targets })
            }
            DetectionOutcome::Novel { .. } => self.targets,
        };
        self.counts[row][col] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if (other.targets, other.novels) != (self.targets, self.novels) {
            return Err(Error::DimensionMismatch { expected: self.counts.len(), actual: other.counts.len() });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// Row-normalised proportions; empty rows stay zero.
    pub fn proportions(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
            })
            .collect()
    }
}

pub fn confusion(
    outcomes: &[DetectionOutcome],
    truths: &[TrueClass],
    targets: usize,
    novels: usize,
) -> Result<ConfusionMatrix> {
    if outcomes.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: outcomes.len(), actual: truths.len() });
    }
    let mut m = ConfusionMatrix::new(targets, novels);
    for (o, &t) in outcomes.iter().zip(truths) {
        m.add(o, t)?;
    }
    Ok(m)
}
