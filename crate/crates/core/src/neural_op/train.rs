//! DeepONet training: minibatch Adam on the mean squared prediction error.
//!
//! The branch input (lambda2) and trunk inputs are affinely mapped to
//! [-1, 1]; targets are standardized per head. Minibatches are taken over
//! lambda2 samples while every batch sees the full shared trunk-point set,
//! which keeps the bilinear branch/trunk factorization cheap: per batch one
//! branch pass over the samples, one trunk pass over the points, and dense
//! feature contractions for predictions and gradients.
//!
//! The best-validation parameters are checkpointed and restored at the end;
//! training aborts with a descriptive error if the loss diverges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::mlp::{Mlp, MlpGrads};
use super::{DeepONetModel, OperatorKind, Scaler};
use crate::{Error, Result};

/// Optimizer and architecture settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Basis components per head.
    pub p: usize,
    /// Hidden-layer widths shared by branch and trunk.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Cosine-decay floor as a fraction of the initial learning rate.
    pub lr_floor: f64,
    /// lambda2 samples per minibatch.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 32,
            hidden: vec![64, 64, 64],
            learning_rate: 1e-3,
            lr_floor: 0.01,
            batch_size: 256,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Cosine decay from `learning_rate` to `learning_rate * lr_floor`.
    fn lr_at(&self, epoch: usize) -> f64 {
        let floor = self.learning_rate * self.lr_floor;
        let phase = epoch as f64 / self.max_epochs.max(1) as f64;
        floor
            + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Best validation loss seen so far (non-increasing).
    pub best_val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Adam state over one flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn flatten_grads(grads: &MlpGrads) -> Vec<f64> {
    grads
        .dw
        .iter()
        .zip(&grads.db)
        .flat_map(|(dw, db)| dw.iter().chain(db.iter()).copied())
        .collect()
}

/// Normalized view of the dataset plus the scalers that produced it.
struct Prepared {
    branch_in: Vec<f64>,
    trunk_in: Vec<f64>,
    targets: Vec<Vec<f64>>,
    input_scaler: Scaler,
    trunk_scalers: Vec<Scaler>,
    output_scalers: Vec<Scaler>,
}

fn prepare(ds: &Dataset) -> Result<Prepared> {
    if ds.n_samples() == 0 || ds.n_points() == 0 {
        return Err(Error::Config("empty dataset".into()));
    }
    let lo = ds.lambda2.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ds.lambda2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let input_scaler = Scaler::from_range(lo, hi);
    let branch_in: Vec<f64> = ds.lambda2.iter().map(|&l| input_scaler.normalize(l)).collect();

    let npoints = ds.n_points();
    let mut trunk_scalers = Vec::with_capacity(ds.trunk_dim);
    for d in 0..ds.trunk_dim {
        let column = (0..npoints).map(|i| ds.trunk_points[i * ds.trunk_dim + d]);
        let lo = column.clone().fold(f64::INFINITY, f64::min);
        let hi = column.fold(f64::NEG_INFINITY, f64::max);
        trunk_scalers.push(Scaler::from_range(lo, hi));
    }
    let mut trunk_in = Vec::with_capacity(ds.trunk_points.len());
    for i in 0..npoints {
        for d in 0..ds.trunk_dim {
            trunk_in.push(trunk_scalers[d].normalize(ds.trunk_points[i * ds.trunk_dim + d]));
        }
    }

    // Standardize each head over the training split.
    let train_view: Vec<usize> =
        if ds.train_idx.is_empty() { (0..ds.n_samples()).collect() } else { ds.train_idx.clone() };
    let mut output_scalers = Vec::with_capacity(ds.heads);
    for h in 0..ds.heads {
        let mut sum = 0.0;
        let mut count = 0usize;
        for &s in &train_view {
            for i in 0..npoints {
                sum += ds.targets[s][h * npoints + i];
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let mut var = 0.0;
        for &s in &train_view {
            for i in 0..npoints {
                let d = ds.targets[s][h * npoints + i] - mean;
                var += d * d;
            }
        }
        let std = (var / count as f64).sqrt().max(1e-12);
        output_scalers.push(Scaler::from_moments(mean, std));
    }

    let targets: Vec<Vec<f64>> = ds
        .targets
        .iter()
        .map(|t| {
            let mut out = Vec::with_capacity(t.len());
            for h in 0..ds.heads {
                for i in 0..npoints {
                    out.push(output_scalers[h].normalize(t[h * npoints + i]));
                }
            }
            out
        })
        .collect();

    Ok(Prepared { branch_in, trunk_in, targets, input_scaler, trunk_scalers, output_scalers })
}

/// Mean squared error of the current parameters over a set of samples.
fn evaluate_loss(
    branch: &Mlp,
    trunk: &Mlp,
    prep: &Prepared,
    samples: &[usize],
    heads: usize,
    p: usize,
    npoints: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let width = heads * p;
    let t_feats = trunk.forward_batch(&prep.trunk_in, npoints)?;
    let t_feats = t_feats.output();
    let inputs: Vec<f64> = samples.iter().map(|&s| prep.branch_in[s]).collect();
    let b_feats = branch.forward_batch(&inputs, samples.len())?;
    let b_feats = b_feats.output();

    let mut sum_sq = 0.0;
    for (row, &s) in samples.iter().enumerate() {
        let b = &b_feats[row * width..(row + 1) * width];
        let target = &prep.targets[s];
        for n in 0..npoints {
            let t = &t_feats[n * width..(n + 1) * width];
            for h in 0..heads {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += b[h * p + k] * t[h * p + k];
                }
                let d = acc - target[h * npoints + n];
                sum_sq += d * d;
            }
        }
    }
    Ok(sum_sq / (samples.len() * npoints * heads) as f64)
}

/// Train a DeepONet on the dataset. Returns the best-validation model and the
/// loss history.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<(DeepONetModel, TrainReport)> {
    let prep = prepare(ds)?;
    let heads = ds.heads;
    let p = config.p;
    let width = heads * p;
    let npoints = ds.n_points();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut branch_widths = vec![1usize];
    branch_widths.extend(&config.hidden);
    branch_widths.push(width);
    let mut trunk_widths = vec![ds.trunk_dim];
    trunk_widths.extend(&config.hidden);
    trunk_widths.push(width);
    let mut branch = Mlp::random(&branch_widths, &mut rng)?;
    let mut trunk = Mlp::random(&trunk_widths, &mut rng)?;

    let mut adam_branch = Adam::new(branch.param_count());
    let mut adam_trunk = Adam::new(trunk.param_count());

    let train_idx: Vec<usize> =
        if ds.train_idx.is_empty() { (0..ds.n_samples()).collect() } else { ds.train_idx.clone() };
    let has_val = !ds.val_idx.is_empty();

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut stale = 0usize;

    let mut order: Vec<usize> = train_idx.clone();
    let mut d_pred = Vec::new();

    for epoch in 0..config.max_epochs {
        let lr = config.lr_at(epoch);
        // Fisher-Yates shuffle, seeded stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_sq = 0.0f64;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch = chunk.len();
            let inputs: Vec<f64> = chunk.iter().map(|&s| prep.branch_in[s]).collect();
            let b_cache = branch.forward_batch(&inputs, batch)?;
            let t_cache = trunk.forward_batch(&prep.trunk_in, npoints)?;
            let b_feats = b_cache.output().to_vec();
            let t_feats = t_cache.output().to_vec();

            let count = batch * npoints * heads;
            d_pred.clear();
            d_pred.resize(count, 0.0);
            let mut batch_sq = 0.0;
            for (row, &s) in chunk.iter().enumerate() {
                let b = &b_feats[row * width..(row + 1) * width];
                let target = &prep.targets[s];
                for n in 0..npoints {
                    let t = &t_feats[n * width..(n + 1) * width];
                    for h in 0..heads {
                        let mut acc = 0.0;
                        for k in 0..p {
                            acc += b[h * p + k] * t[h * p + k];
                        }
                        let d = acc - target[h * npoints + n];
                        batch_sq += d * d;
                        d_pred[(row * npoints + n) * heads + h] = 2.0 * d / count as f64;
                    }
                }
            }
            epoch_sq += batch_sq;
            epoch_count += count;

            // Gradients w.r.t. the feature vectors.
            let mut d_branch = vec![0.0; batch * width];
            let mut d_trunk = vec![0.0; npoints * width];
            for row in 0..batch {
                let b = &b_feats[row * width..(row + 1) * width];
                let db = &mut d_branch[row * width..(row + 1) * width];
                for n in 0..npoints {
                    let t = &t_feats[n * width..(n + 1) * width];
                    let dt = &mut d_trunk[n * width..(n + 1) * width];
                    for h in 0..heads {
                        let g = d_pred[(row * npoints + n) * heads + h];
                        if g == 0.0 {
                            continue;
                        }
                        for k in 0..p {
                            let idx = h * p + k;
                            db[idx] += g * t[idx];
                            dt[idx] += g * b[idx];
                        }
                    }
                }
            }

            let mut branch_grads = MlpGrads::zeros(&branch);
            branch.backward_batch(&b_cache, &d_branch, &mut branch_grads);
            let mut trunk_grads = MlpGrads::zeros(&trunk);
            trunk.backward_batch(&t_cache, &d_trunk, &mut trunk_grads);

            let mut bp = branch.flatten_params();
            adam_branch.step(&mut bp, &flatten_grads(&branch_grads), lr);
            branch.load_params(&bp)?;
            let mut tp = trunk.flatten_params();
            adam_trunk.step(&mut tp, &flatten_grads(&trunk_grads), lr);
            trunk.load_params(&tp)?;
        }

        let train_loss = epoch_sq / epoch_count.max(1) as f64;
        let val_loss = if has_val {
            evaluate_loss(&branch, &trunk, &prep, &ds.val_idx, heads, p, npoints)?
        } else {
            train_loss
        };

        let exploded = train_loss > 1e9 || val_loss > 1e9;
        if !train_loss.is_finite() || !val_loss.is_finite() || exploded {
            let recent: Vec<String> = history
                .iter()
                .rev()
                .take(3)
                .map(|e| format!("epoch {}: train {:.3e} val {:.3e}", e.epoch, e.train_loss, e.val_loss))
                .collect();
            return Err(Error::Numerics(format!(
                "training diverged at epoch {epoch} (train {train_loss:e}, val {val_loss:e}); recent: [{}]",
                recent.join("; ")
            )));
        }

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = Some((branch.flatten_params(), trunk.flatten_params()));
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(EpochStats { epoch, train_loss, val_loss, best_val });

        if stale > config.patience {
            break;
        }
    }

    if let Some((bp, tp)) = best_params {
        branch.load_params(&bp)?;
        trunk.load_params(&tp)?;
    }

    let horizon = if ds.kind == OperatorKind::LawOperator {
        ds.trunk_points.iter().copied().fold(0.0f64, f64::max)
    } else {
        0.0
    };
    let lo = ds.lambda2.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ds.lambda2.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let model = DeepONetModel {
        kind: ds.kind,
        p,
        heads,
        branch,
        trunk,
        input_scaler: prep.input_scaler,
        trunk_scalers: prep.trunk_scalers,
        output_scalers: prep.output_scalers,
        trained_range: (lo, hi),
        horizon,
    };
    model.validate()?;
    Ok((model, TrainReport { history, best_epoch, best_val }))
}
