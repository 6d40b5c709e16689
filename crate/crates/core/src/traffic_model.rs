//! Physical traffic model: fundamental diagram, equilibria, linearization.
//!
//! The Greenshields-family fundamental diagram
//!
//! ```text
//! V(rho) = v_f (1 - (rho/rho_m)^gamma)
//! ```
//!
//! closes the ARZ system. Around a congested equilibrium (rho*, v*) the
//! linearized dynamics diagonalize into Riemann fields
//!
//! ```text
//! w(x) = e^{x/(tau v*)} (v(x) - v* - V'(rho*) (rho(x) - rho*)),
//! v(x) = v(x) - v*,
//! ```
//!
//! transported at speeds lambda1 = v* (downstream) and
//! -lambda2 = rho* V'(rho*) + v* (upstream), coupled by the source
//! c(x) = -(1/tau) e^{-x/(tau v*)} and reflected at the inlet with
//! coefficient r = lambda2/lambda1.
//!
//! All quantities are strict SI internally: densities in veh/m, speeds in
//! m/s, lengths in m, times in s. Conversions from veh/km happen at the
//! configuration boundary, not here.

use crate::{Error, Result};

/// Vehicles-per-kilometer to vehicles-per-meter.
pub const VEH_PER_KM: f64 = 1e-3;

/// Physical constants of the road section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Free-flow speed [m/s].
    pub v_f: f64,
    /// Maximum (jam) density [veh/m].
    pub rho_m: f64,
    /// Fundamental-diagram exponent, >= 1.
    pub gamma: f64,
    /// Driver relaxation time [s].
    pub tau: f64,
    /// Road length [m].
    pub length: f64,
}

impl ModelParams {
    pub fn new(v_f: f64, rho_m: f64, gamma: f64, tau: f64, length: f64) -> Result<Self> {
        let p = Self { v_f, rho_m, gamma, tau, length };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.v_f > 0.0 && self.rho_m > 0.0 && self.tau > 0.0 && self.length > 0.0) {
            return Err(Error::Config(
                "model parameters v_f, rho_m, tau, L must be strictly positive".into(),
            ));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::Config(format!(
                "diagram exponent gamma = {} must be >= 1",
                self.gamma
            )));
        }
        Ok(())
    }
}

impl Default for ModelParams {
    /// Benchmark road: v_f = 40 m/s, rho_m = 160 veh/km, gamma = 1,
    /// tau = 60 s, L = 500 m.
    fn default() -> Self {
        Self { v_f: 40.0, rho_m: 160.0 * VEH_PER_KM, gamma: 1.0, tau: 60.0, length: 500.0 }
    }
}

/// A congested equilibrium point of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    /// Equilibrium density [veh/m].
    pub rho_star: f64,
    /// Equilibrium speed v* = V(rho*) [m/s].
    pub v_star: f64,
    /// Equilibrium flow q* = rho* v* [veh/s].
    pub q_star: f64,
}

/// Linearization data at an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicParams {
    /// Speed of the w-characteristic, lambda1 = v* [m/s].
    pub lambda1: f64,
    /// Speed of the v-characteristic, lambda2 = -rho* V'(rho*) - v* [m/s].
    pub lambda2: f64,
    /// Inlet reflection coefficient r = lambda2/lambda1.
    pub r: f64,
    /// Source amplitude -1/tau [1/s].
    pub c_amp: f64,
    /// Source decay rate 1/(tau v*) [1/m].
    pub c_decay: f64,
}

impl CharacteristicParams {
    /// In-domain coupling coefficient c(x) = c_amp * exp(-c_decay * x).
    pub fn c(&self, x: f64) -> f64 {
        self.c_amp * (-self.c_decay * x).exp()
    }
}

/// Riemann (characteristic) coordinates of a perturbation field.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannState {
    /// w field samples [m/s].
    pub w: Vec<f64>,
    /// v field samples [m/s].
    pub v: Vec<f64>,
    /// Sample coordinates on [0, L], strictly increasing.
    pub grid: Vec<f64>,
}

impl RiemannState {
    /// L2 norms (sqrt of the trapezoidal integral of the square) of the two
    /// component fields.
    pub fn l2_norms(&self) -> (f64, f64) {
        let sq_w: Vec<f64> = self.w.iter().map(|a| a * a).collect();
        let sq_v: Vec<f64> = self.v.iter().map(|a| a * a).collect();
        (
            crate::trapezoid(&self.grid, &sq_w).sqrt(),
            crate::trapezoid(&self.grid, &sq_v).sqrt(),
        )
    }

    /// Combined L2 norm of (w, v).
    pub fn l2_combined(&self) -> f64 {
        let (nw, nv) = self.l2_norms();
        (nw * nw + nv * nv).sqrt()
    }
}

/// Equilibrium speed V(rho) and slope V'(rho) of the fundamental diagram.
///
/// Densities outside [0, rho_m] are a domain error.
pub fn fundamental_diagram(rho: f64, params: &ModelParams) -> Result<(f64, f64)> {
    if !(0.0..=params.rho_m).contains(&rho) {
        return Err(Error::Domain(format!(
            "density {rho} veh/m outside [0, {}]",
            params.rho_m
        )));
    }
    let ratio = rho / params.rho_m;
    let speed = params.v_f * (1.0 - ratio.powf(params.gamma));
    // gamma = 1 gives the constant slope -v_f/rho_m, including at rho = 0.
    let slope = if params.gamma == 1.0 {
        -params.v_f / params.rho_m
    } else {
        -params.v_f * params.gamma * rho.powf(params.gamma - 1.0) / params.rho_m.powf(params.gamma)
    };
    Ok((speed, slope))
}

/// Equilibrium at a prescribed density.
///
/// Only congested equilibria are accepted: lambda2 = -rho* V'(rho*) - v* must
/// be strictly positive, otherwise the upstream characteristic disappears and
/// outlet actuation cannot reach the inlet.
pub fn equilibrium(rho_star: f64, params: &ModelParams) -> Result<Equilibrium> {
    if !(rho_star > 0.0 && rho_star < params.rho_m) {
        return Err(Error::Config(format!(
            "equilibrium density {rho_star} veh/m outside (0, {})",
            params.rho_m
        )));
    }
    let (v_star, slope) = fundamental_diagram(rho_star, params)?;
    let lambda2 = -rho_star * slope - v_star;
    if lambda2 <= 0.0 {
        return Err(Error::Config(format!(
            "equilibrium density {:.4} veh/km is not congested: lambda2 = -rho* V'(rho*) - v* = {:.4} m/s must be > 0",
            rho_star / VEH_PER_KM,
            lambda2
        )));
    }
    Ok(Equilibrium { rho_star, v_star, q_star: rho_star * v_star })
}

/// Linearization coefficients at an equilibrium.
pub fn characteristics(eq: &Equilibrium, params: &ModelParams) -> Result<CharacteristicParams> {
    let (_, slope) = fundamental_diagram(eq.rho_star, params)?;
    let lambda1 = eq.v_star;
    let lambda2 = -eq.rho_star * slope - eq.v_star;
    if lambda2 <= 0.0 {
        return Err(Error::Config(format!(
            "lambda2 = {lambda2:.4} m/s <= 0: equilibrium is outside the congested regime"
        )));
    }
    Ok(CharacteristicParams {
        lambda1,
        lambda2,
        r: lambda2 / lambda1,
        c_amp: -1.0 / params.tau,
        c_decay: 1.0 / (params.tau * eq.v_star),
    })
}

/// Map physical fields (rho, v) on a grid to Riemann coordinates (w, v).
pub fn to_riemann(
    grid: &[f64],
    rho_field: &[f64],
    v_field: &[f64],
    eq: &Equilibrium,
    chars: &CharacteristicParams,
    params: &ModelParams,
) -> Result<RiemannState> {
    if grid.len() != rho_field.len() || grid.len() != v_field.len() {
        return Err(Error::Shape(format!(
            "grid/rho/v lengths {}/{}/{} differ",
            grid.len(),
            rho_field.len(),
            v_field.len()
        )));
    }
    let (_, slope) = fundamental_diagram(eq.rho_star, params)?;
    let mut w = Vec::with_capacity(grid.len());
    let mut v = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let v_tilde = v_field[i] - eq.v_star;
        let rho_tilde = rho_field[i] - eq.rho_star;
        w.push((chars.c_decay * grid[i]).exp() * (v_tilde - slope * rho_tilde));
        v.push(v_tilde);
    }
    Ok(RiemannState { w, v, grid: grid.to_vec() })
}

/// Inverse of [`to_riemann`]: recover (rho, v) from Riemann coordinates.
///
/// Returns the fields plus a list of warnings for any cell whose recovered
/// density leaves (0, rho_m).
pub fn from_riemann(
    rs: &RiemannState,
    eq: &Equilibrium,
    chars: &CharacteristicParams,
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<String>)> {
    let (_, slope) = fundamental_diagram(eq.rho_star, params)?;
    let mut rho = Vec::with_capacity(rs.grid.len());
    let mut v = Vec::with_capacity(rs.grid.len());
    let mut warnings = Vec::new();
    for i in 0..rs.grid.len() {
        let v_tilde = rs.v[i];
        let r = eq.rho_star + (v_tilde - (-chars.c_decay * rs.grid[i]).exp() * rs.w[i]) / slope;
        if !(r > 0.0 && r < params.rho_m) && warnings.is_empty() {
            warnings.push(format!(
                "recovered density {:.6} veh/m at x = {:.1} m outside (0, {})",
                r, rs.grid[i], params.rho_m
            ));
        }
        rho.push(r);
        v.push(eq.v_star + v_tilde);
    }
    Ok((rho, v, warnings))
}
