use serde::{Deserialize, Serialize};

use super::logistic::{gather_rows, softmax_cross_entropy};
use super::{Dataset, Objective};
use crate::error::{Error, Result};
use crate::ledger::LossFn;
use crate::linalg::{gaussian_matrix, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpLayer {
    /// `d × h` input weight.
    Hidden,
    /// `h × C` output weight.
    Output,
}

/// Two-layer classifier `softmax(tanh(x·W₁)·W₂)` with cross-entropy loss and
/// ridge `½·l2·(‖W₁‖² + ‖W₂‖²)`.
#[derive(Clone, Debug)]
pub struct TinyMlp {
    data: Dataset,
    w1: Matrix,
    w2: Matrix,
    l2: f64,
}

struct Forward {
    x: Matrix,
    hidden: Matrix,
    labels: Vec<usize>,
}

impl TinyMlp {
    /// Weights drawn as `N(0, 1/fan_in)`.
    pub fn new(data: Dataset, hidden: usize, l2: f64, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
        }
        let (d, c) = (data.dim(), data.classes());
        let mut rng = RngStream::new(seed, 0x31b);
        let w1 = gaussian_matrix(&mut rng, d, hidden).scale(1.0 / (d as f64).sqrt());
        let w2 = gaussian_matrix(&mut rng, hidden, c).scale(1.0 / (hidden as f64).sqrt());
        Ok(Self {
            data,
            w1,
            w2,
            l2: l2.max(0.0),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn weight(&self, layer: MlpLayer) -> &Matrix {
        match layer {
            MlpLayer::Hidden => &self.w1,
            MlpLayer::Output => &self.w2,
        }
    }

    pub fn set_weight(&mut self, layer: MlpLayer, w: Matrix) -> Result<()> {
        w.check_shape("TinyMlp layer weight", self.weight(layer).shape())?;
        match layer {
            MlpLayer::Hidden => self.w1 = w,
            MlpLayer::Output => self.w2 = w,
        }
        Ok(())
    }

    fn forward(&self, w1: &Matrix, w2: &Matrix, batch: u64) -> (Forward, Matrix) {
        let idx = self.data.batch_indices(batch);
        let x = gather_rows(self.data.features(), &idx);
        let hidden = x.matmul(w1).map(f64::tanh);
        let logits = hidden.matmul(w2);
        let labels = idx.iter().map(|&i| self.data.labels()[i]).collect();
        (Forward { x, hidden, labels }, logits)
    }

    fn ridge(&self, w1: &Matrix, w2: &Matrix) -> f64 {
        0.5 * self.l2 * (w1.frobenius_norm_sq() + w2.frobenius_norm_sq())
    }

    pub fn loss_with(&self, w1: &Matrix, w2: &Matrix, batch: u64) -> f64 {
        let (fwd, logits) = self.forward(w1, w2, batch);
        softmax_cross_entropy(&logits, &fwd.labels, false).0 + self.ridge(w1, w2)
    }

    /// Backpropagated gradients `(∂/∂W₁, ∂/∂W₂)`.
    pub fn gradients_with(&self, w1: &Matrix, w2: &Matrix, batch: u64) -> (Matrix, Matrix) {
        let (fwd, logits) = self.forward(w1, w2, batch);
        let (_, dlogits) = softmax_cross_entropy(&logits, &fwd.labels, true);
        let dlogits = dlogits.expect("requested");
        let mut g2 = fwd.hidden.t_matmul(&dlogits);
        g2.axpy(self.l2, w2);
        let dh = dlogits.matmul_t(w2);
        let da = Matrix::from_fn(dh.rows(), dh.cols(), |i, j| {
            let h = fwd.hidden[(i, j)];
            dh[(i, j)] * (1.0 - h * h)
        });
        let mut g1 = fwd.x.t_matmul(&da);
        g1.axpy(self.l2, w1);
        (g1, g2)
    }

    pub fn layer_objective(&self, layer: MlpLayer) -> MlpLayerObjective {
        MlpLayerObjective {
            mlp: self.clone(),
            layer,
        }
    }
}

/// One layer of a [`TinyMlp`] as a single-matrix objective, the other layer
/// held at its current value.
#[derive(Clone, Debug)]
pub struct MlpLayerObjective {
    mlp: TinyMlp,
    layer: MlpLayer,
}

impl MlpLayerObjective {
    pub fn layer(&self) -> MlpLayer {
        self.layer
    }

    pub fn mlp(&self) -> &TinyMlp {
        &self.mlp
    }

    /// Replaces the frozen layer's weight.
    pub fn set_frozen(&mut self, w: Matrix) -> Result<()> {
        let other = match self.layer {
            MlpLayer::Hidden => MlpLayer::Output,
            MlpLayer::Output => MlpLayer::Hidden,
        };
        self.mlp.set_weight(other, w)
    }

    fn pair<'a>(&'a self, params: &'a Matrix) -> (&'a Matrix, &'a Matrix) {
        match self.layer {
            MlpLayer::Hidden => (params, &self.mlp.w2),
            MlpLayer::Output => (&self.mlp.w1, params),
        }
    }
}

impl LossFn for MlpLayerObjective {
    fn shape(&self) -> (usize, usize) {
        self.mlp.weight(self.layer).shape()
    }

    fn loss(&self, params: &Matrix, batch: u64) -> f64 {
        let (w1, w2) = self.pair(params);
        self.mlp.loss_with(w1, w2, batch)
    }
}

impl Objective for MlpLayerObjective {
    fn gradient(&self, params: &Matrix, batch: u64) -> Matrix {
        let (w1, w2) = self.pair(params);
        let (g1, g2) = self.mlp.gradients_with(w1, w2, batch);
        match self.layer {
            MlpLayer::Hidden => g1,
            MlpLayer::Output => g2,
        }
    }
}
