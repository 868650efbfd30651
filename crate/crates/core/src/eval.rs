use alloc::vec;
use alloc::vec::Vec;

use crate::data::SkeletonSequence;
use crate::error::Result;
use crate::model::StaModel;

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, label: usize, predicted: usize) {
        self.counts[label][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Fraction correct; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

pub fn evaluate(model: &StaModel, data: &[SkeletonSequence]) -> Result<Confusion> {
    let mut c = Confusion::new(model.classes());
    for seq in data {
        c.record(seq.label(), model.predict(seq)?);
    }
    Ok(c)
}

pub fn accuracy(model: &StaModel, data: &[SkeletonSequence]) -> Result<f64> {
    Ok(evaluate(model, data)?.accuracy())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_counts() {
        let mut c = Confusion::new(3);
        c.record(0, 0);
        c.record(1, 2);
        c.record(2, 2);
        c.record(2, 2);
        assert_eq!(c.total(), 4);
        assert_eq!(c.correct(), 3);
        assert_eq!(c.accuracy(), 0.75);
        assert_eq!(Confusion::new(2).accuracy(), 0.0);
    }
}
