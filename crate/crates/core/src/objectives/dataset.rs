use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, Matrix, RngStream};

/// Batch id that selects the full held-out split instead of a training
/// mini-batch.
pub const EVAL_BATCH: u64 = u64::MAX;

/// Labelled examples with a train/held-out split and a seeded mini-batch
/// schedule.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Arc<Matrix>,
    labels: Arc<Vec<usize>>,
    classes: usize,
    train: Arc<Vec<usize>>,
    held_out: Arc<Vec<usize>>,
    batch_size: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
        held_out: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} examples",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..{classes}")));
        }
        if !features.is_finite() {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        if held_out >= n || batch_size == 0 || batch_size > n - held_out {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n} examples into {held_out} held out and batches of {batch_size}"
            )));
        }
        let split = n - held_out;
        Ok(Self {
            features: Arc::new(features),
            labels: Arc::new(labels),
            classes,
            train: Arc::new((0..split).collect()),
            held_out: Arc::new((split..n).collect()),
            batch_size,
            seed,
        })
    }

    /// Gaussian class clusters whose means lie in a `latent_dim`-dimensional
    /// subspace of feature space: `x = W·z_label·separation + noise·ε`.
    /// Labels are balanced round-robin and shuffled.
    #[allow(clippy::too_many_arguments)]
    pub fn synthetic(
        examples: usize,
        dim: usize,
        classes: usize,
        latent_dim: usize,
        separation: f64,
        noise: f64,
        held_out: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 || latent_dim == 0 {
            return Err(Error::InvalidArgument("need >= 2 classes and latent_dim >= 1".into()));
        }
        let mut rng = RngStream::new(seed, 0xda7a);
        let mixing = gaussian_matrix(&mut rng, latent_dim, dim).scale(1.0 / (latent_dim as f64).sqrt());
        let codes = gaussian_matrix(&mut rng, classes, latent_dim);
        let means = codes.matmul(&mixing).scale(separation);

        let mut labels: Vec<usize> = (0..examples).map(|i| i % classes).collect();
        shuffle(&mut labels, &mut rng);
        let eps = gaussian_matrix(&mut rng, examples, dim);
        let features = Matrix::from_fn(examples, dim, |i, j| means[(labels[i], j)] + noise * eps[(i, j)]);
        Self::new(features, labels, classes, held_out, batch_size, seed)
    }

    /// Reads one example per line: integer label, then whitespace-separated
    /// features. Blank lines and `#` comments are skipped. The class count is
    /// one more than the largest label.
    pub fn load_text(path: &Path, held_out: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut labels = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let bad = |what: &str| Error::InvalidArgument(format!("{}:{}: {what}", path.display(), lineno + 1));
            let label: usize = fields
                .next()
                .ok_or_else(|| bad("missing label"))?
                .parse()
                .map_err(|_| bad("label is not a nonnegative integer"))?;
            let feats = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad("feature is not a number")))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if feats.len() != first.len() {
                    return Err(bad("feature count differs from first example"));
                }
            }
            labels.push(label);
            rows.push(feats);
        }
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no examples", path.display())));
        }
        let classes = labels.iter().max().copied().unwrap_or(0) + 1;
        Self::new(Matrix::from_rows(&rows), labels, classes, held_out, batch_size, seed)
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Example indices for `batch`. Training batches walk a fresh seeded
    /// permutation each epoch; [`EVAL_BATCH`] returns the held-out split.
    pub fn batch_indices(&self, batch: u64) -> Vec<usize> {
        if batch == EVAL_BATCH {
            return self.held_out.to_vec();
        }
        let per_epoch = (self.train.len() / self.batch_size) as u64;
        let epoch = batch / per_epoch;
        let slot = (batch % per_epoch) as usize;
        let mut order = self.train.to_vec();
        shuffle(
            &mut order,
            &mut RngStream::new(self.seed, 0xba7c ^ epoch.wrapping_mul(0x9e37)),
        );
        order[slot * self.batch_size..(slot + 1) * self.batch_size].to_vec()
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut RngStream) {
    for i in (1..items.len()).rev() {
        let j = rng.index(i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::synthetic(64, 5, 4, 2, 2.0, 0.5, 16, 8, 3).unwrap()
    }

    #[test]
    fn batches_are_pure_functions_of_id() {
        let a = small();
        let b = small();
        for id in [0, 1, 5, 6, 17] {
            assert_eq!(a.batch_indices(id), b.batch_indices(id));
            assert_eq!(a.batch_indices(id).len(), 8);
        }
        assert_ne!(a.batch_indices(0), a.batch_indices(1));
    }

    #[test]
    fn epoch_covers_training_split_once() {
        let d = small();
        let mut seen: Vec<usize> = (0..6).flat_map(|b| d.batch_indices(b)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..48).collect::<Vec<_>>());
        assert_eq!(d.batch_indices(EVAL_BATCH), (48..64).collect::<Vec<_>>());
    }

    #[test]
    fn labels_balanced() {
        let d = small();
        for c in 0..4 {
            assert_eq!(d.labels().iter().filter(|&&l| l == c).count(), 16);
        }
    }

    #[test]
    fn load_text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        std::fs::write(&path, "# label features\n0 1.0 2.0\n1 -1 0.5\n\n2 3 3\n1 0 0\n").unwrap();
        let d = Dataset::load_text(&path, 1, 3, 0).unwrap();
        assert_eq!(d.classes(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.features()[(1, 0)], -1.0);
        std::fs::write(&path, "0 1.0\n1 2.0 3.0\n").unwrap();
        assert!(Dataset::load_text(&path, 0, 1, 0).is_err());
        std::fs::write(&path, "x 1.0\n").unwrap();
        assert!(Dataset::load_text(&path, 0, 1, 0).is_err());
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(Dataset::new(Matrix::zeros(4, 2), vec![0, 1, 2, 3], 3, 1, 2, 0).is_err());
    }
}
