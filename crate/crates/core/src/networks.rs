//! Bias-free two- and three-layer ReLU networks with activation
//! regularization, trained by plain SGD.

pub mod metrics;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{invalid, mismatch, NcError, Result};
use crate::linalg::gaussian_matrix;
use crate::rng::RngStream;
use crate::upfm::LossKind;

pub use metrics::{nc_metrics, NcMetrics};

/// `W1` is d×d1 (d×D for depth 2), `W2` is d1×D, `W` is D×K.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNet {
    pub w1: DMatrix<f64>,
    pub w2: Option<DMatrix<f64>>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub depth: usize,
    pub input_dim: usize,
    /// Width of the first hidden layer of a depth-3 net; ignored for depth 2.
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
}

impl ShallowNet {
    /// Random initialization: hidden layers `N(0, 2/fan_in)`, classifier
    /// `N(0, 1/D)`. With `frozen_first`, `W1` has `N(0, 1/d1)` entries instead.
    pub fn init(shape: NetShape, frozen_first: bool, stream: RngStream) -> Result<Self> {
        let NetShape { depth, input_dim: d, hidden_dim: d1, feature_dim: dd, classes: k } = shape;
        if d == 0 || dd == 0 || k < 2 || (depth == 3 && d1 == 0) {
            return invalid("network dimensions must be positive and K >= 2");
        }
        let mut rng = stream.generator();
        let net = match depth {
            2 => {
                let sd = if frozen_first { 1.0 / (dd as f64).sqrt() } else { (2.0 / d as f64).sqrt() };
                let w1 = gaussian_matrix(d, dd, &mut rng) * sd;
                let w = gaussian_matrix(dd, k, &mut rng) / (dd as f64).sqrt();
                Self { w1, w2: None, w }
            }
            3 => {
                let sd = if frozen_first { 1.0 / (d1 as f64).sqrt() } else { (2.0 / d as f64).sqrt() };
                let w1 = gaussian_matrix(d, d1, &mut rng) * sd;
                let w2 = gaussian_matrix(d1, dd, &mut rng) * (2.0 / d1 as f64).sqrt();
                let w = gaussian_matrix(dd, k, &mut rng) / (dd as f64).sqrt();
                Self { w1, w2: Some(w2), w }
            }
            _ => return invalid(format!("depth must be 2 or 3, got {depth}")),
        };
        Ok(net)
    }

    pub fn depth(&self) -> usize {
        if self.w2.is_some() {
            3
        } else {
            2
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let chain_ok = match &self.w2 {
            None => self.w1.ncols() == self.w.nrows(),
            Some(w2) => self.w1.ncols() == w2.nrows() && w2.ncols() == self.w.nrows(),
        };
        if !chain_ok {
            return mismatch("layer dimensions do not chain");
        }
        let all = self.w1.iter().chain(self.w2.iter().flat_map(|m| m.iter())).chain(self.w.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(NcError::Numerical("non-finite weights".into()));
        }
        Ok(())
    }
}

fn relu(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Penultimate features `H(X)`, D×N and entrywise nonnegative.
pub fn forward_features(net: &ShallowNet, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != net.input_dim() {
        return mismatch(format!("input has dimension {}, network expects {}", x.nrows(), net.input_dim()));
    }
    let a1 = relu(net.w1.transpose() * x);
    Ok(match &net.w2 {
        None => a1,
        Some(w2) => relu(w2.transpose() * a1),
    })
}

/// Logits `Wᵀ H(X)`.
pub fn logits(net: &ShallowNet, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(net.w.transpose() * forward_features(net, x)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub lr0: f64,
    /// Fractions of the total step budget at which the rate drops by 10×.
    pub decay_at: [f64; 2],
    pub epochs: usize,
    /// `None` picks full batch for N <= 512 and 128 otherwise.
    pub batch: Option<usize>,
    pub freeze_first_layer: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::CrossEntropy,
            lambda_w: 1e-3,
            lambda_h: 1e-6,
            lr0: 0.1,
            decay_at: [1.0 / 3.0, 2.0 / 3.0],
            epochs: 1000,
            batch: None,
            freeze_first_layer: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return invalid("lr0 must be finite and nonnegative");
        }
        if !(self.lambda_w >= 0.0 && self.lambda_h >= 0.0) {
            return invalid("regularization must be nonnegative");
        }
        if self.decay_at.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return invalid("decay fractions must lie in (0, 1)");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if self.batch == Some(0) {
            return invalid("batch size must be positive");
        }
        Ok(())
    }

    pub fn batch_size(&self, samples: usize) -> usize {
        match self.batch {
            Some(b) => b.min(samples),
            None if samples <= 512 => samples,
            None => 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w1: DMatrix<f64>,
    pub w2: Option<DMatrix<f64>>,
    pub w: DMatrix<f64>,
}

fn mean_loss_and_dlogits(loss: LossKind, z: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let nb = z.ncols() as f64;
    match loss {
        LossKind::CrossEntropy => {
            let mut total = 0.0;
            let mut g = z.clone();
            for (j, mut col) in g.column_iter_mut().enumerate() {
                let m = col.max();
                col.apply(|v| *v = (*v - m).exp());
                let s = col.sum();
                let label = (0..y.nrows()).find(|&r| y[(r, j)] == 1.0).unwrap_or(0);
                total += m + s.ln() - z[(label, j)];
                col /= s;
            }
            (total / nb, (g - y) / nb)
        }
        LossKind::SquaredError => ((z - y).norm_squared() / (2.0 * nb), (z - y) / nb),
    }
}

/// Objective `mean loss + λ_W/2 ‖W‖² + λ_H/2 ‖H‖²` on the given columns and
/// its gradients by backpropagation (ReLU derivative 0 at 0).
pub fn loss_and_grad(net: &ShallowNet, x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(f64, Grads)> {
    if y.ncols() != x.ncols() || y.nrows() != net.classes() {
        return mismatch("label matrix does not match the batch");
    }
    if x.nrows() != net.input_dim() {
        return mismatch("input dimension does not match the network");
    }
    let z1 = net.w1.transpose() * x;
    let a1 = relu(z1.clone());
    let (h, z2) = match &net.w2 {
        None => (a1.clone(), None),
        Some(w2) => {
            let z2 = w2.transpose() * &a1;
            (relu(z2.clone()), Some(z2))
        }
    };
    let logits = net.w.transpose() * &h;
    let (mean_loss, g) = mean_loss_and_dlogits(cfg.loss, &logits, y);
    let objective = mean_loss + 0.5 * cfg.lambda_w * net.w.norm_squared() + 0.5 * cfg.lambda_h * h.norm_squared();
    if !objective.is_finite() {
        return Err(NcError::Numerical("objective is not finite".into()));
    }

    let gw = &h * g.transpose() + &net.w * cfg.lambda_w;
    let dh = &net.w * &g + &h * cfg.lambda_h;
    let (gw1, gw2) = match (&net.w2, z2) {
        (None, _) => {
            let dz1 = dh.zip_map(&z1, |g, z| if z > 0.0 { g } else { 0.0 });
            (x * dz1.transpose(), None)
        }
        (Some(w2), Some(z2)) => {
            let dz2 = dh.zip_map(&z2, |g, z| if z > 0.0 { g } else { 0.0 });
            let gw2 = &a1 * dz2.transpose();
            let da1 = w2 * &dz2;
            let dz1 = da1.zip_map(&z1, |g, z| if z > 0.0 { g } else { 0.0 });
            (x * dz1.transpose(), Some(gw2))
        }
        (Some(_), None) => unreachable!("depth-3 forward pass stores z2"),
    };
    Ok((objective, Grads { w1: gw1, w2: gw2, w: gw }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    /// Full-data objective.
    pub objective: f64,
    pub metrics: NcMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    /// Final weights, or the last finite weights when training aborted.
    pub net: ShallowNet,
    pub trajectory: Vec<Checkpoint>,
    /// Mean minibatch objective of every epoch.
    pub epoch_objectives: Vec<f64>,
    pub aborted: Option<String>,
}

/// Epochs at which metrics are logged: 0, powers of two, the final epoch and
/// any extras within range.
pub fn checkpoint_epochs(epochs: usize, extra: &[usize]) -> Vec<usize> {
    let mut out = vec![0];
    let mut e = 1;
    while e <= epochs {
        out.push(e);
        e *= 2;
    }
    out.push(epochs);
    out.extend(extra.iter().copied().filter(|&x| x <= epochs));
    out.sort_unstable();
    out.dedup();
    out
}

/// Objective and metrics of `net` on the full dataset, tagged with `epoch`.
pub fn evaluate_checkpoint(net: &ShallowNet, data: &LabeledDataset, cfg: &TrainConfig, epoch: usize) -> Result<Checkpoint> {
    net.validate()?;
    if net.classes() != data.classes() || net.input_dim() != data.dim() {
        return mismatch("network does not match the dataset");
    }
    checkpoint(net, data, &data.labels(), cfg, epoch)
}

fn checkpoint(net: &ShallowNet, data: &LabeledDataset, y: &DMatrix<f64>, cfg: &TrainConfig, epoch: usize) -> Result<Checkpoint> {
    let (objective, _) = loss_and_grad(net, data.x(), y, cfg)?;
    let h = forward_features(net, data.x())?;
    let metrics = nc_metrics(&h, &net.w, data.classes(), data.per_class())?;
    Ok(Checkpoint { epoch, objective, metrics })
}

/// Plain SGD with per-epoch shuffling and step decay.
pub fn sgd_train(net: ShallowNet, data: &LabeledDataset, cfg: &TrainConfig, extra_checkpoints: &[usize]) -> Result<TrainResult> {
    cfg.validate()?;
    net.validate()?;
    if net.classes() != data.classes() || net.input_dim() != data.dim() {
        return mismatch("network does not match the dataset");
    }
    let y = data.labels();
    let samples = data.len();
    let batch = cfg.batch_size(samples);
    let steps_per_epoch = samples.div_ceil(batch);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let marks = checkpoint_epochs(cfg.epochs, extra_checkpoints);
    let mut rng = RngStream::new(cfg.seed, 0x5eed).generator();
    let mut order: Vec<usize> = (0..samples).collect();

    let mut net = net;
    let mut trajectory = vec![checkpoint(&net, data, &y, cfg, 0)?];
    let mut epoch_objectives = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let full_batch = batch == samples;
    for epoch in 1..=cfg.epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let mut acc = 0.0;
        for chunk in order.chunks(batch) {
            let drops = cfg.decay_at.iter().filter(|&&f| step as f64 >= f * total_steps).count();
            let lr = cfg.lr0 * 0.1f64.powi(drops as i32);
            let (xb, yb) = if full_batch {
                (data.x().clone(), y.clone())
            } else {
                (data.x().select_columns(chunk), y.select_columns(chunk))
            };
            let (f, g) = match loss_and_grad(&net, &xb, &yb, cfg) {
                Ok(v) => v,
                Err(e) => return Ok(aborted(net, trajectory, epoch_objectives, epoch, e)),
            };
            let mut next = net.clone();
            if !cfg.freeze_first_layer {
                next.w1 -= &g.w1 * lr;
            }
            if let (Some(w2), Some(g2)) = (next.w2.as_mut(), g.w2.as_ref()) {
                *w2 -= g2 * lr;
            }
            next.w -= &g.w * lr;
            if let Err(e) = next.validate() {
                return Ok(aborted(net, trajectory, epoch_objectives, epoch, e));
            }
            net = next;
            acc += f;
            step += 1;
        }
        epoch_objectives.push(acc / steps_per_epoch as f64);
        if marks.binary_search(&epoch).is_ok() {
            match checkpoint(&net, data, &y, cfg, epoch) {
                Ok(c) => trajectory.push(c),
                Err(e) => return Ok(aborted(net, trajectory, epoch_objectives, epoch, e)),
            }
        }
    }
    Ok(TrainResult { net, trajectory, epoch_objectives, aborted: None })
}

fn aborted(net: ShallowNet, trajectory: Vec<Checkpoint>, epoch_objectives: Vec<f64>, epoch: usize, e: NcError) -> TrainResult {
    TrainResult { net, trajectory, epoch_objectives, aborted: Some(format!("epoch {epoch}: {e}")) }
}
