use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::raster::NO_DATA;

/// `C x C` counts, rows indexed by reference class and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub id: u16,
    pub name: String,
    pub recall: f64,
    pub precision: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusedPair {
    pub reference: u16,
    pub predicted: u16,
    pub count: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![vec![0; classes]; classes] }
    }

    /// Counts every pixel that is neither excluded nor no-data in the reference.
    pub fn accumulate(&mut self, reference: &[u16], predicted: &[u16], excluded: Option<&[bool]>) -> Result<()> {
        if reference.len() != predicted.len() || excluded.is_some_and(|e| e.len() != reference.len()) {
            return Err(shape_err!("reference, prediction and mask lengths differ"));
        }
        for (i, (&r, &p)) in reference.iter().zip(predicted).enumerate() {
            if r == NO_DATA || excluded.is_some_and(|e| e[i]) {
                continue;
            }
            if r as usize >= self.classes || p as usize >= self.classes {
                return Err(shape_err!("class pair ({r}, {p}) outside {} classes", self.classes));
            }
            self.counts[r as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(shape_err!("merging {} with {} classes", other.classes, self.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Overall accuracy; 0 for an empty matrix.
    pub fn oa(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.correct() as f64 / t as f64
        }
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.counts.iter().map(|r| r[class]).sum())
    }

    pub fn per_class(&self, name: impl Fn(u16) -> String) -> Vec<ClassMetrics> {
        (0..self.classes)
            .map(|c| ClassMetrics {
                id: c as u16,
                name: name(c as u16),
                recall: self.recall(c),
                precision: self.precision(c),
                support: self.support(c),
            })
            .collect()
    }

    /// Largest off-diagonal cells, most frequent first.
    pub fn most_confused(&self, k: usize) -> Vec<ConfusedPair> {
        let mut pairs: Vec<ConfusedPair> = (0..self.classes)
            .flat_map(|r| (0..self.classes).map(move |p| (r, p)))
            .filter(|&(r, p)| r != p && self.counts[r][p] > 0)
            .map(|(r, p)| ConfusedPair { reference: r as u16, predicted: p as u16, count: self.counts[r][p] })
            .collect();
        pairs.sort_by(|a, b| b.count.cmp(&a.count).then((a.reference, a.predicted).cmp(&(b.reference, b.predicted))));
        pairs.truncate(k);
        pairs
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
