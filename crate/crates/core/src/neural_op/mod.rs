//! From-scratch DeepONet stack for the two operator mappings.
//!
//! A DeepONet prediction is the p-term inner product of a branch network
//! (encoding the input parameter, here the scalar characteristic speed
//! lambda2) and a trunk network (encoding the query point):
//!
//! ```text
//! G(lambda2)(y) = sum_{k=1..p} g_k(lambda2) f_k(y)
//! ```
//!
//! Two operators are realized behind the same structure:
//!
//! - the kernel operator, lambda2 -> (Kw, Kv) on the triangle (trunk input
//!   y = (x, xi), two heads sharing one trunk);
//! - the control-law operator, lambda2 -> U(.) for the fixed benchmark
//!   scenario family (trunk input y = t, one head).
//!
//! Inputs and outputs are affinely normalized; the stored scalers make a
//! trained model self-contained.

pub mod dataset;
pub mod mlp;
pub mod serialize;
pub mod train;

pub use dataset::{gen_kernel_dataset, gen_law_dataset, Dataset, KernelDatasetConfig, LawDatasetConfig};
pub use mlp::{mlp_gradients, Activation, Mlp, MlpGrads};
pub use serialize::{load_model, load_model_expecting, save_model};
pub use train::{train, EpochStats, TrainConfig, TrainReport};

use crate::kernel_solver::KernelGrid;
use crate::{Error, Result};

/// Which operator a model realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// lambda2 -> gain kernels (Kw, Kv).
    KernelOperator,
    /// lambda2 -> boundary control signal U(t).
    LawOperator,
}

impl OperatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            OperatorKind::KernelOperator => "kernel",
            OperatorKind::LawOperator => "law",
        }
    }
}

/// Affine normalization: `norm = (x - offset) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub offset: f64,
    pub scale: f64,
}

impl Scaler {
    /// Map [lo, hi] onto [-1, 1].
    pub fn from_range(lo: f64, hi: f64) -> Self {
        let half = 0.5 * (hi - lo);
        Self { offset: 0.5 * (lo + hi), scale: if half > 0.0 { 1.0 / half } else { 1.0 } }
    }

    /// Standardize by mean and standard deviation.
    pub fn from_moments(mean: f64, std: f64) -> Self {
        Self { offset: mean, scale: if std > 1e-300 { 1.0 / std } else { 1.0 } }
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.offset) * self.scale
    }

    #[inline]
    pub fn denormalize(&self, y: f64) -> f64 {
        y / self.scale + self.offset
    }
}

/// A trained (or initialized) DeepONet.
///
/// Contract: branch and trunk output dimensions both equal `heads * p`; the
/// prediction for head h is the dot product of block h of the two feature
/// vectors, then de-normalized by that head's output scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepONetModel {
    pub kind: OperatorKind,
    pub p: usize,
    pub heads: usize,
    pub branch: Mlp,
    pub trunk: Mlp,
    /// Normalization of the branch input lambda2.
    pub input_scaler: Scaler,
    /// Normalization of each trunk input dimension.
    pub trunk_scalers: Vec<Scaler>,
    /// Per-head output standardization.
    pub output_scalers: Vec<Scaler>,
    /// lambda2 interval covered by training.
    pub trained_range: (f64, f64),
    /// Time horizon for law models (0 for kernel models).
    pub horizon: f64,
}

/// Model predictions at a set of trunk points.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    /// values[head][point].
    pub per_head: Vec<Vec<f64>>,
    /// lambda2 fell outside the trained range.
    pub extrapolated: bool,
}

impl DeepONetModel {
    pub fn trunk_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// Validate the feature contract.
    pub fn validate(&self) -> Result<()> {
        let expect = self.heads * self.p;
        if self.branch.output_dim() != expect || self.trunk.output_dim() != expect {
            return Err(Error::Shape(format!(
                "branch/trunk output dims {}/{} must both equal heads*p = {}",
                self.branch.output_dim(),
                self.trunk.output_dim(),
                expect
            )));
        }
        if self.branch.input_dim() != 1 {
            return Err(Error::Shape("branch input must be the scalar lambda2".into()));
        }
        if self.trunk_scalers.len() != self.trunk_dim() || self.output_scalers.len() != self.heads {
            return Err(Error::Shape("scaler counts do not match model dimensions".into()));
        }
        Ok(())
    }

    /// Branch feature vector for a parameter value (length heads*p).
    pub fn branch_features(&self, lambda2: f64) -> Vec<f64> {
        self.branch
            .forward(&[self.input_scaler.normalize(lambda2)])
            .expect("scalar branch input")
    }

    /// Trunk feature vector for one query point (length heads*p).
    pub fn trunk_features(&self, point: &[f64]) -> Result<Vec<f64>> {
        let norm: Vec<f64> = point
            .iter()
            .zip(&self.trunk_scalers)
            .map(|(x, s)| s.normalize(*x))
            .collect();
        self.trunk.forward(&norm)
    }

    pub fn is_extrapolating(&self, lambda2: f64) -> bool {
        let slack = 1e-9 * (self.trained_range.1 - self.trained_range.0).abs().max(1.0);
        lambda2 < self.trained_range.0 - slack || lambda2 > self.trained_range.1 + slack
    }

    /// Evaluate all heads at a flat list of trunk points
    /// (`points.len() = n * trunk_dim`).
    pub fn eval(&self, lambda2: f64, points: &[f64]) -> Result<EvalOutput> {
        let dim = self.trunk_dim();
        if !points.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "point buffer of {} values is not a multiple of trunk dim {}",
                points.len(),
                dim
            )));
        }
        let n = points.len() / dim;
        let branch = self.branch_features(lambda2);

        // Batched trunk evaluation.
        let mut norm = Vec::with_capacity(points.len());
        for chunk in points.chunks_exact(dim) {
            for (x, s) in chunk.iter().zip(&self.trunk_scalers) {
                norm.push(s.normalize(*x));
            }
        }
        let cache = self.trunk.forward_batch(&norm, n)?;
        let feats = cache.output();

        let width = self.heads * self.p;
        let mut per_head = vec![Vec::with_capacity(n); self.heads];
        for i in 0..n {
            let t = &feats[i * width..(i + 1) * width];
            for h in 0..self.heads {
                let mut acc = 0.0;
                for k in 0..self.p {
                    acc += branch[h * self.p + k] * t[h * self.p + k];
                }
                per_head[h].push(self.output_scalers[h].denormalize(acc));
            }
        }
        Ok(EvalOutput { per_head, extrapolated: self.is_extrapolating(lambda2) })
    }

    /// Kernel-model convenience: both kernels sampled on the triangular nodes
    /// of `grid`, in the same row-major node order as a solved pair.
    pub fn eval_kernels_on_grid(&self, lambda2: f64, grid: &KernelGrid) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.kind != OperatorKind::KernelOperator {
            return Err(Error::Config("model does not realize the kernel operator".into()));
        }
        let mut points = Vec::with_capacity(grid.node_count() * 2);
        for i in 0..grid.n {
            for j in 0..=i {
                points.push(grid.coord(i));
                points.push(grid.coord(j));
            }
        }
        let out = self.eval(lambda2, &points)?;
        let mut heads = out.per_head.into_iter();
        Ok((heads.next().unwrap(), heads.next().unwrap()))
    }
}

/// Measured operator-approximation accuracy.
///
/// The pointwise error combines the value error with first-difference
/// (derivative-surrogate) errors along each trunk dimension; `eps_sup` is its
/// max and `eps_l2` its RMS over all test parameters and points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxErrorReport {
    pub eps_sup: f64,
    pub eps_l2: f64,
}

/// Accumulate sup/RMS of pointwise combined errors.
struct EpsAccumulator {
    sup: f64,
    sum_sq: f64,
    count: usize,
}

impl EpsAccumulator {
    fn new() -> Self {
        Self { sup: 0.0, sum_sq: 0.0, count: 0 }
    }

    fn push(&mut self, combined: f64) {
        self.sup = self.sup.max(combined);
        self.sum_sq += combined * combined;
        self.count += 1;
    }

    fn report(&self) -> ApproxErrorReport {
        ApproxErrorReport {
            eps_sup: self.sup,
            eps_l2: if self.count > 0 { (self.sum_sq / self.count as f64).sqrt() } else { 0.0 },
        }
    }
}

/// Difference field on the triangular grid -> pointwise |d| + |d_x| + |d_xi|
/// pushed into the accumulator. One-sided stencils at edges, like the
/// residual check of the solver.
fn accumulate_triangle_errors(diff: &[f64], grid: &KernelGrid, acc: &mut EpsAccumulator) {
    let n = grid.n;
    let h = grid.h;
    let at = |i: usize, j: usize| diff[grid.idx(i, j)];
    for i in 0..n {
        for j in 0..=i {
            let dx = {
                let fwd = i + 1 < n;
                let bwd = i > 0 && j < i;
                match (fwd, bwd) {
                    (true, true) => (at(i + 1, j) - at(i - 1, j)) / (2.0 * h),
                    (true, false) => (at(i + 1, j) - at(i, j)) / h,
                    (false, true) => (at(i, j) - at(i - 1, j)) / h,
                    (false, false) => 0.0,
                }
            };
            let dxi = {
                let fwd = j < i;
                let bwd = j > 0;
                match (fwd, bwd) {
                    (true, true) => (at(i, j + 1) - at(i, j - 1)) / (2.0 * h),
                    (true, false) => (at(i, j + 1) - at(i, j)) / h,
                    (false, true) => (at(i, j) - at(i, j - 1)) / h,
                    (false, false) => 0.0,
                }
            };
            acc.push(at(i, j).abs() + dx.abs() + dxi.abs());
        }
    }
}

/// Kernel-operator accuracy of `predict` against `oracle` over a test grid of
/// lambda2 values; both closures return (kw, kv) on the triangular nodes.
pub fn measure_eps_kernels(
    predict: &dyn Fn(f64) -> Result<(Vec<f64>, Vec<f64>)>,
    oracle: &dyn Fn(f64) -> Result<(Vec<f64>, Vec<f64>)>,
    lambdas: &[f64],
    grid: &KernelGrid,
) -> Result<ApproxErrorReport> {
    let mut acc = EpsAccumulator::new();
    for &lambda2 in lambdas {
        let (pw, pv) = predict(lambda2)?;
        let (ow, ov) = oracle(lambda2)?;
        if pw.len() != grid.node_count() || ow.len() != grid.node_count() {
            return Err(Error::Shape("kernel samples do not match the grid".into()));
        }
        let diff_w: Vec<f64> = pw.iter().zip(&ow).map(|(a, b)| a - b).collect();
        let diff_v: Vec<f64> = pv.iter().zip(&ov).map(|(a, b)| a - b).collect();
        accumulate_triangle_errors(&diff_w, grid, &mut acc);
        accumulate_triangle_errors(&diff_v, grid, &mut acc);
    }
    Ok(acc.report())
}

/// Control-law operator accuracy over test lambda2 values; both closures
/// return U sampled at `times`.
pub fn measure_eps_law(
    predict: &dyn Fn(f64) -> Result<Vec<f64>>,
    oracle: &dyn Fn(f64) -> Result<Vec<f64>>,
    lambdas: &[f64],
    times: &[f64],
) -> Result<ApproxErrorReport> {
    let mut acc = EpsAccumulator::new();
    for &lambda2 in lambdas {
        let p = predict(lambda2)?;
        let o = oracle(lambda2)?;
        if p.len() != times.len() || o.len() != times.len() {
            return Err(Error::Shape("law samples do not match the time grid".into()));
        }
        let diff: Vec<f64> = p.iter().zip(&o).map(|(a, b)| a - b).collect();
        for i in 0..diff.len() {
            let dt_deriv = if diff.len() < 2 {
                0.0
            } else if i == 0 {
                (diff[1] - diff[0]) / (times[1] - times[0])
            } else if i + 1 == diff.len() {
                (diff[i] - diff[i - 1]) / (times[i] - times[i - 1])
            } else {
                (diff[i + 1] - diff[i - 1]) / (times[i + 1] - times[i - 1])
            };
            acc.push(diff[i].abs() + dt_deriv.abs());
        }
    }
    Ok(acc.report())
}
