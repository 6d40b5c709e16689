//! Boundary controllers and stability diagnostics.
//!
//! Every controller implements [`Controller`] and produces the outlet
//! perturbation U(t); the simulator applies v(L, t) = v* + U(t).
//!
//! - Backstepping: U = int_0^L Kw(L, xi) w(xi) + Kv(L, xi) v(xi) d xi with
//!   the exact solved kernels;
//! - NO-kernels: same quadrature with DeepONet-predicted kernel rows;
//! - NO-law: U = model(lambda2)(t), open loop in the state;
//! - PI: U = kp (v(0,t) - v*) + ki int (v(0,t) - v*) from the inlet velocity;
//! - Zero: U = 0 (open-loop baseline).
//!
//! Diagnostics: the backstepping target transform (alpha, beta), the Lyapunov
//! functional V_k, and a log-linear decay fit.

use crate::kernel_solver::{eval_kernel, KernelPair};
use crate::neural_op::{DeepONetModel, OperatorKind};
use crate::traffic_model::{CharacteristicParams, RiemannState};
use crate::trapezoid;
use crate::{Error, Result};

/// Everything a controller may look at when asked for U.
pub struct ControlContext<'a> {
    /// Riemann coordinates of the current state on the cell grid.
    pub riemann: &'a RiemannState,
    /// Inlet velocity v(0, t) (first cell).
    pub v_inlet: f64,
    /// Current time [s].
    pub t: f64,
    /// Step size the control will act over [s]; 0 for a probe evaluation.
    pub dt: f64,
}

/// Boundary control interface.
///
/// Implementations other than PI are pure in (state, t); PI advances its
/// integral state by `ctx.dt` on every call.
pub trait Controller {
    fn control(&mut self, ctx: &ControlContext<'_>) -> f64;

    /// Warnings accumulated during the run (extrapolation, clamping).
    fn drain_warnings(&mut self) -> Vec<String> {
        Vec::new()
    }
}

/// U = 0: the open-loop baseline.
pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&mut self, _ctx: &ControlContext<'_>) -> f64 {
        0.0
    }
}

const LAMBDA2_MATCH_TOL: f64 = 1e-9;

/// Backstepping control law evaluated directly from a kernel pair:
/// trapezoidal quadrature of the x = L kernel row against the state.
pub fn backstepping_control(rs: &RiemannState, kernels: &KernelPair) -> Result<f64> {
    let length = kernels.grid.length;
    let mut integrand_w = Vec::with_capacity(rs.grid.len());
    let mut integrand_v = Vec::with_capacity(rs.grid.len());
    for (i, &xi) in rs.grid.iter().enumerate() {
        let (kw, kv) = eval_kernel(kernels, length, xi)?;
        integrand_w.push(kw * rs.w[i]);
        integrand_v.push(kv * rs.v[i]);
    }
    Ok(trapezoid(&rs.grid, &integrand_w) + trapezoid(&rs.grid, &integrand_v))
}

/// Exact-kernel backstepping controller with the x = L row interpolated once
/// at the quadrature nodes.
pub struct BacksteppingController {
    row_kw: Vec<f64>,
    row_kv: Vec<f64>,
    grid: Vec<f64>,
}

impl BacksteppingController {
    pub fn new(
        kernels: &KernelPair,
        chars: &CharacteristicParams,
        grid: &[f64],
    ) -> Result<Self> {
        let scale = chars.lambda2.abs().max(1.0);
        if (kernels.chars.lambda2 - chars.lambda2).abs() > LAMBDA2_MATCH_TOL * scale {
            return Err(Error::Config(format!(
                "kernel pair solved for lambda2 = {} cannot control a loop linearized at lambda2 = {}",
                kernels.chars.lambda2, chars.lambda2
            )));
        }
        let mut row_kw = Vec::with_capacity(grid.len());
        let mut row_kv = Vec::with_capacity(grid.len());
        for &xi in grid {
            let (kw, kv) = eval_kernel(kernels, kernels.grid.length, xi)?;
            row_kw.push(kw);
            row_kv.push(kv);
        }
        Ok(Self { row_kw, row_kv, grid: grid.to_vec() })
    }

    fn quadrature(&self, rs: &RiemannState) -> f64 {
        debug_assert_eq!(rs.grid.len(), self.grid.len());
        let mut iw = Vec::with_capacity(self.grid.len());
        let mut iv = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            iw.push(self.row_kw[i] * rs.w[i]);
            iv.push(self.row_kv[i] * rs.v[i]);
        }
        trapezoid(&self.grid, &iw) + trapezoid(&self.grid, &iv)
    }
}

impl Controller for BacksteppingController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> f64 {
        self.quadrature(ctx.riemann)
    }
}

/// PI gains and integral state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    /// [1/s]
    pub ki: f64,
    /// Accumulated inlet velocity error [m].
    pub integral_state: f64,
}

impl PiGains {
    pub fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki, integral_state: 0.0 }
    }
}

impl Default for PiGains {
    /// Gains from a coarse grid search over kp in [-2, 2] (step 0.25) and
    /// ki in [-0.05, 0.05] (step 0.00625), minimizing the time-integrated
    /// state norm of the benchmark scenario. The integral action does not
    /// help against the 25 s inlet-to-outlet loop delay, so the argmin sits
    /// at ki = 0.
    fn default() -> Self {
        Self::new(-0.25, 0.0)
    }
}

/// One PI update: advance the integral by (v_inlet - v*) dt, then return
/// U = kp (v_inlet - v*) + ki * integral.
pub fn pi_control(v_inlet: f64, v_star: f64, gains: &mut PiGains, dt: f64) -> f64 {
    let err = v_inlet - v_star;
    gains.integral_state += err * dt;
    gains.kp * err + gains.ki * gains.integral_state
}

/// PI boundary feedback from the inlet velocity.
pub struct PiController {
    pub gains: PiGains,
    v_star: f64,
}

impl PiController {
    pub fn new(gains: PiGains, v_star: f64) -> Self {
        Self { gains, v_star }
    }
}

impl Controller for PiController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> f64 {
        pi_control(ctx.v_inlet, self.v_star, &mut self.gains, ctx.dt)
    }
}

/// Backstepping control with DeepONet-predicted kernel rows. One-off op form;
/// the row coordinate is taken from the model's trained trunk domain.
pub fn no_kernel_control(rs: &RiemannState, model: &DeepONetModel, lambda2: f64) -> Result<f64> {
    let length = model.trunk_scalers[0].denormalize(1.0);
    let controller = NoKernelController::new(model, lambda2, &rs.grid, length)?;
    Ok(controller.quadrature(rs))
}

/// Controller embedding NO-approximated gain kernels in the backstepping law.
pub struct NoKernelController {
    row_kw: Vec<f64>,
    row_kv: Vec<f64>,
    grid: Vec<f64>,
    warnings: Vec<String>,
}

impl NoKernelController {
    /// Evaluate the model's kernel row at x = L over the quadrature nodes.
    /// `length` is the row coordinate (the road length).
    pub fn new(model: &DeepONetModel, lambda2: f64, grid: &[f64], length: f64) -> Result<Self> {
        if model.kind != OperatorKind::KernelOperator {
            return Err(Error::Config(format!(
                "a {}-operator model cannot supply backstepping kernels",
                model.kind.label()
            )));
        }
        let mut points = Vec::with_capacity(grid.len() * 2);
        for &xi in grid {
            points.push(length);
            points.push(xi);
        }
        let out = model.eval(lambda2, &points)?;
        let mut warnings = Vec::new();
        if out.extrapolated {
            warnings.push(format!(
                "lambda2 = {lambda2} outside the model's trained range [{}, {}]; kernel predictions are extrapolated",
                model.trained_range.0, model.trained_range.1
            ));
        }
        Ok(Self {
            row_kw: out.per_head[0].clone(),
            row_kv: out.per_head[1].clone(),
            grid: grid.to_vec(),
            warnings,
        })
    }

    fn quadrature(&self, rs: &RiemannState) -> f64 {
        let mut iw = Vec::with_capacity(self.grid.len());
        let mut iv = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            iw.push(self.row_kw[i] * rs.w[i]);
            iv.push(self.row_kv[i] * rs.v[i]);
        }
        trapezoid(&self.grid, &iw) + trapezoid(&self.grid, &iv)
    }
}

impl Controller for NoKernelController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> f64 {
        self.quadrature(ctx.riemann)
    }

    fn drain_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}

/// Directly learned control law U = model(lambda2)(t). One-off op form;
/// clamps t to the trained horizon.
pub fn no_law_control(t: f64, model: &DeepONetModel, lambda2: f64) -> Result<f64> {
    if model.kind != OperatorKind::LawOperator {
        return Err(Error::Config(format!(
            "a {}-operator model cannot supply a control law",
            model.kind.label()
        )));
    }
    let t_eval = t.clamp(0.0, model.horizon);
    let out = model.eval(lambda2, &[t_eval])?;
    Ok(out.per_head[0][0])
}

/// Open-loop (state-independent) controller reading U(t) off a law model.
pub struct NoLawController {
    model: DeepONetModel,
    lambda2: f64,
    warnings: Vec<String>,
    clamp_warned: bool,
}

impl NoLawController {
    pub fn new(model: &DeepONetModel, lambda2: f64) -> Result<Self> {
        if model.kind != OperatorKind::LawOperator {
            return Err(Error::Config(format!(
                "a {}-operator model cannot supply a control law",
                model.kind.label()
            )));
        }
        let mut warnings = Vec::new();
        if model.is_extrapolating(lambda2) {
            warnings.push(format!(
                "lambda2 = {lambda2} outside the model's trained range [{}, {}]; control law is extrapolated",
                model.trained_range.0, model.trained_range.1
            ));
        }
        Ok(Self { model: model.clone(), lambda2, warnings, clamp_warned: false })
    }
}

impl Controller for NoLawController {
    fn control(&mut self, ctx: &ControlContext<'_>) -> f64 {
        let mut t = ctx.t;
        if t > self.model.horizon {
            if !self.clamp_warned {
                self.warnings.push(format!(
                    "t = {:.1} s beyond the trained horizon {:.1} s; clamping",
                    t, self.model.horizon
                ));
                self.clamp_warned = true;
            }
            t = self.model.horizon;
        }
        let out = self.model.eval(self.lambda2, &[t]).expect("scalar trunk input");
        out.per_head[0][0]
    }

    fn drain_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }
}

/// Controller selection, mirrored by the benchmark configuration.
pub enum ControllerKind {
    Backstepping(KernelPair),
    NoKernels(DeepONetModel),
    NoLaw(DeepONetModel),
    Pi(PiGains),
    Zero,
}

impl ControllerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::Backstepping(_) => "backstepping",
            ControllerKind::NoKernels(_) => "no-kernels",
            ControllerKind::NoLaw(_) => "no-law",
            ControllerKind::Pi(_) => "pi",
            ControllerKind::Zero => "zero",
        }
    }

    /// Wire the controller to a loop linearized at `chars` with quadrature
    /// nodes `grid`; `v_star` and `length` come from the same scenario.
    pub fn build(
        &self,
        chars: &CharacteristicParams,
        grid: &[f64],
        v_star: f64,
        length: f64,
    ) -> Result<Box<dyn Controller>> {
        match self {
            ControllerKind::Backstepping(kernels) => {
                Ok(Box::new(BacksteppingController::new(kernels, chars, grid)?))
            }
            ControllerKind::NoKernels(model) => {
                Ok(Box::new(NoKernelController::new(model, chars.lambda2, grid, length)?))
            }
            ControllerKind::NoLaw(model) => {
                Ok(Box::new(NoLawController::new(model, chars.lambda2)?))
            }
            ControllerKind::Pi(gains) => Ok(Box::new(PiController::new(*gains, v_star))),
            ControllerKind::Zero => Ok(Box::new(ZeroController)),
        }
    }
}

/// Backstepping target coordinates (alpha, beta).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub grid: Vec<f64>,
}

/// Volterra transform of the state: alpha = w,
/// beta(x) = v(x) - int_0^x Kw(x,xi) w + Kv(x,xi) v d xi.
pub fn target_transform(rs: &RiemannState, kernels: &KernelPair) -> Result<TargetState> {
    let n = rs.grid.len();
    let mut beta = Vec::with_capacity(n);
    let mut integrand = vec![0.0; n];
    for i in 0..n {
        let x = rs.grid[i];
        for j in 0..=i {
            let (kw, kv) = eval_kernel(kernels, x, rs.grid[j])?;
            integrand[j] = kw * rs.w[j] + kv * rs.v[j];
        }
        let volterra = trapezoid(&rs.grid[..=i], &integrand[..=i]);
        beta.push(rs.v[i] - volterra);
    }
    Ok(TargetState { alpha: rs.w.clone(), beta, grid: rs.grid.clone() })
}

/// Lyapunov functional weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    /// Decay weight nu [1/s].
    pub nu: f64,
    /// beta-weight a, required > r^2.
    pub a: f64,
}

impl LyapunovParams {
    pub fn new(nu: f64, a: f64, chars: &CharacteristicParams) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Config(format!("nu = {nu} must be positive")));
        }
        if !(a > chars.r * chars.r) {
            return Err(Error::Config(format!(
                "a = {a} must exceed r^2 = {}",
                chars.r * chars.r
            )));
        }
        Ok(Self { nu, a })
    }

    /// nu = min(lambda1, lambda2) / (2 L), a = 2 max(1, r^2).
    pub fn defaults(chars: &CharacteristicParams, length: f64) -> Self {
        Self {
            nu: 0.5 * chars.lambda1.min(chars.lambda2) / length,
            a: 2.0 * (chars.r * chars.r).max(1.0),
        }
    }
}

/// V_k = int_0^L e^{-nu x / lambda1}/lambda1 alpha^2
///        + a e^{-nu x / lambda2}/lambda2 beta^2 dx.
pub fn lyapunov_vk(ts: &TargetState, lp: &LyapunovParams, chars: &CharacteristicParams) -> f64 {
    let mut integrand = Vec::with_capacity(ts.grid.len());
    for i in 0..ts.grid.len() {
        let x = ts.grid[i];
        let wa = (-lp.nu * x / chars.lambda1).exp() / chars.lambda1;
        let wb = lp.a * (-lp.nu * x / chars.lambda2).exp() / chars.lambda2;
        integrand.push(wa * ts.alpha[i] * ts.alpha[i] + wb * ts.beta[i] * ts.beta[i]);
    }
    trapezoid(&ts.grid, &integrand)
}

/// Least-squares fit of ln(values) ~ ln(C) - eta t over a time window.
///
/// Returns (eta, r_squared). Non-positive samples in the window are skipped;
/// at least three points are required.
pub fn fit_exponential_decay(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
) -> Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::Numerics(format!(
            "decay fit needs at least 3 positive samples in [{}, {}], found {}",
            window.0,
            window.1,
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_t = pairs.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (t, y) in &pairs {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numerics("degenerate decay-fit window".into()));
    }
    let slope = sxy / sxx;
    let r_squared = (sxy * sxy) / (sxx * syy);
    Ok((-slope, r_squared))
}
