use serde::{Deserialize, Serialize};

/// Per-coordinate standardisation. Coordinates whose spread is below
/// [`Normalizer::MIN_STD`] are only centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub const MIN_STD: f64 = 1e-8;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits population statistics over `rows`, which must be non-empty.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0.0;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1.0;
            for i in 0..dim {
                let d = row[i] - mean[i];
                mean[i] += d / n;
                m2[i] += d * (row[i] - mean[i]);
            }
        }
        let std = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0.0 { (s / n).sqrt() } else { 0.0 };
                if sd < Self::MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}
