//! Time marching for the ARZ system under boundary control.
//!
//! The nonlinear model
//!
//! ```text
//! rho_t + (rho v)_x = 0
//! (v - V(rho))_t + v (v - V(rho))_x = (V(rho) - v)/tau
//! rho(0, t) v(0, t) = q*,      v(L, t) = v* + U(t)
//! ```
//!
//! is marched in the conservative variables (rho, y), y = rho (v - V(rho)),
//! by a first-order finite-volume scheme with the local Lax-Friedrichs
//! (Rusanov) flux and explicit splitting of the -y/tau relaxation. Ghost
//! cells impose the boundary traces: the inlet ghost extrapolates v and sets
//! rho_g = q*/v_g, the outlet ghost extrapolates rho and reflects
//! v_g = 2 (v* + U) - v_N so the face average equals the prescribed trace.
//!
//! A linearized mode advects the Riemann fields (w, v) directly by upwinding
//! with the c(x) w source; it exists for verification against the theory,
//! which is stated for the linearized system.

use std::time::{Duration, Instant};

use crate::control::{ControlContext, Controller};
use crate::traffic_model::{
    self, to_riemann, CharacteristicParams, Equilibrium, ModelParams, RiemannState,
};
use crate::{Error, Result};

/// Integration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    Nonlinear,
    Linearized,
}

/// Simulation configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: ModelParams,
    pub eq: Equilibrium,
    /// Finite-volume cell count.
    pub nx: usize,
    /// Time horizon [s].
    pub t_end: f64,
    /// Courant number in (0, 1).
    pub cfl: f64,
    pub mode: SimMode,
    /// Output decimation: seconds of simulated time between records.
    pub record_every: f64,
}

impl SimConfig {
    pub fn new(
        params: ModelParams,
        eq: Equilibrium,
        nx: usize,
        t_end: f64,
        cfl: f64,
        mode: SimMode,
        record_every: f64,
    ) -> Result<Self> {
        if nx < 10 {
            return Err(Error::Config(format!("nx = {nx} must be >= 10")));
        }
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(Error::Config(format!("cfl = {cfl} must lie in (0, 1)")));
        }
        if !(t_end > 0.0) {
            return Err(Error::Config(format!("t_end = {t_end} must be positive")));
        }
        if !(record_every > 0.0) {
            return Err(Error::Config(format!("record_every = {record_every} must be positive")));
        }
        Ok(Self { params, eq, nx, t_end, cfl, mode, record_every })
    }

    /// Benchmark scenario defaults: nx = 100, T = 300 s, cfl = 0.8,
    /// nonlinear, one record per second.
    pub fn with_defaults(params: ModelParams, eq: Equilibrium) -> Self {
        Self { params, eq, nx: 100, t_end: 300.0, cfl: 0.8, mode: SimMode::Nonlinear, record_every: 1.0 }
    }

    /// Cell width [m].
    pub fn h(&self) -> f64 {
        self.params.length / self.nx as f64
    }

    /// Cell-center coordinates.
    pub fn cell_centers(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.nx).map(|i| (i as f64 + 0.5) * h).collect()
    }
}

/// Cell-averaged traffic state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    /// Densities [veh/m].
    pub rho: Vec<f64>,
    /// Velocities [m/s].
    pub v: Vec<f64>,
    /// Simulation time [s].
    pub t: f64,
}

impl TrafficState {
    /// Build a state from custom fields, enforcing the cell invariants.
    pub fn from_fields(rho: Vec<f64>, v: Vec<f64>, config: &SimConfig) -> Result<Self> {
        if rho.len() != config.nx || v.len() != config.nx {
            return Err(Error::Shape(format!(
                "fields of length {}/{} do not match nx = {}",
                rho.len(),
                v.len(),
                config.nx
            )));
        }
        let state = Self { rho, v, t: 0.0 };
        state.validate(config)?;
        Ok(state)
    }

    fn validate(&self, config: &SimConfig) -> Result<()> {
        for i in 0..self.rho.len() {
            let (rho, v) = (self.rho[i], self.v[i]);
            if !(rho.is_finite() && v.is_finite() && rho > 0.0 && rho < config.params.rho_m && v > 0.0)
            {
                return Err(Error::Numerics(format!(
                    "state invariant violated at cell {i} (x = {:.1} m), t = {:.3} s: rho = {rho}, v = {v}",
                    (i as f64 + 0.5) * config.h(),
                    self.t
                )));
            }
        }
        Ok(())
    }
}

/// L2 norms of the Riemann fields at one record time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSample {
    pub t: f64,
    pub l2_w: f64,
    pub l2_v: f64,
}

impl NormSample {
    pub fn combined(&self) -> f64 {
        (self.l2_w * self.l2_w + self.l2_v * self.l2_v).sqrt()
    }
}

/// Aggregate controller-evaluation timing over a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct ControlTiming {
    pub calls: u64,
    pub total: Duration,
}

impl ControlTiming {
    pub fn mean_seconds(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.total.as_secs_f64() / self.calls as f64
        }
    }
}

/// Recorded closed-loop run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<TrafficState>,
    /// (t, U) at each record time; U is the control applied from that time.
    pub control: Vec<(f64, f64)>,
    pub norms: Vec<NormSample>,
    pub warnings: Vec<String>,
    pub control_timing: ControlTiming,
}

impl Trajectory {
    pub fn initial_norm(&self) -> f64 {
        self.norms.first().map(NormSample::combined).unwrap_or(0.0)
    }

    pub fn final_norm(&self) -> f64 {
        self.norms.last().map(NormSample::combined).unwrap_or(0.0)
    }

    /// Combined norm at the record time nearest to `t`.
    pub fn norm_at(&self, t: f64) -> f64 {
        self.norms
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .map(NormSample::combined)
            .unwrap_or(0.0)
    }

    /// Trapezoidal time integral of the combined norm.
    pub fn integrated_norm(&self) -> f64 {
        let times: Vec<f64> = self.norms.iter().map(|n| n.t).collect();
        let values: Vec<f64> = self.norms.iter().map(NormSample::combined).collect();
        crate::trapezoid(&times, &values)
    }

    /// Long-format CSV: `t,x,rho,v`, one row per (record, cell).
    pub fn states_csv(&self, config: &SimConfig) -> String {
        let centers = config.cell_centers();
        let mut out = String::from("t,x,rho,v\n");
        for snap in &self.snapshots {
            for (i, &x) in centers.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", snap.t, x, snap.rho[i], snap.v[i]));
            }
        }
        out
    }

    /// Control record CSV: `t,u`.
    pub fn control_csv(&self) -> String {
        let mut out = String::from("t,u\n");
        for (t, u) in &self.control {
            out.push_str(&format!("{t},{u}\n"));
        }
        out
    }

    /// Norm record CSV: `t,l2_w,l2_v`.
    pub fn norms_csv(&self) -> String {
        let mut out = String::from("t,l2_w,l2_v\n");
        for n in &self.norms {
            out.push_str(&format!("{},{},{}\n", n.t, n.l2_w, n.l2_v));
        }
        out
    }
}

/// Baseline-relative average L2 error between two recorded runs:
///
/// ```text
/// err = sqrt( sum_t ||rho_c - rho_b||^2 + ||v_c - v_b||^2 )
///     / sqrt( sum_t ||rho_b - rho*||^2 + ||v_b - v*||^2 )
/// ```
///
/// with spatial L2 norms over [0, L] and sums over the recorded snapshots.
/// Dimensionless, zero when the candidate is the baseline itself.
pub fn relative_l2_error(
    candidate: &Trajectory,
    baseline: &Trajectory,
    config: &SimConfig,
) -> Result<f64> {
    if candidate.snapshots.len() != baseline.snapshots.len() {
        return Err(Error::Shape(format!(
            "snapshot counts differ: {} vs {}",
            candidate.snapshots.len(),
            baseline.snapshots.len()
        )));
    }
    let h = config.h();
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, b) in candidate.snapshots.iter().zip(&baseline.snapshots) {
        if (c.t - b.t).abs() > 1e-6 {
            return Err(Error::Shape(format!(
                "snapshot clocks differ: {} vs {}",
                c.t, b.t
            )));
        }
        for i in 0..config.nx {
            let dr = c.rho[i] - b.rho[i];
            let dv = c.v[i] - b.v[i];
            num += (dr * dr + dv * dv) * h;
            let br = b.rho[i] - config.eq.rho_star;
            let bv = b.v[i] - config.eq.v_star;
            den += (br * br + bv * bv) * h;
        }
    }
    if den == 0.0 {
        return Err(Error::Numerics(
            "baseline run never leaves equilibrium; relative error undefined".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Initial-condition families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IcKind {
    /// rho = rho* (1 + A sin(k pi x / L)), v = v* (1 - A sin(k pi x / L)):
    /// antiphase perturbations seeding a stop-and-go wave.
    Sinusoidal { amplitude: f64, wavenumber: u32 },
}

/// Build the initial state for a configured road.
pub fn initial_condition(kind: IcKind, eq: &Equilibrium, config: &SimConfig) -> Result<TrafficState> {
    match kind {
        IcKind::Sinusoidal { amplitude, wavenumber } => {
            if !(amplitude.abs() < 0.5) {
                return Err(Error::Config(format!(
                    "sinusoidal amplitude {amplitude} must satisfy |A| < 0.5"
                )));
            }
            let length = config.params.length;
            let mut rho = Vec::with_capacity(config.nx);
            let mut v = Vec::with_capacity(config.nx);
            for x in config.cell_centers() {
                let s = (wavenumber as f64 * std::f64::consts::PI * x / length).sin();
                rho.push(eq.rho_star * (1.0 + amplitude * s));
                v.push(eq.v_star * (1.0 - amplitude * s));
            }
            TrafficState::from_fields(rho, v, config).map_err(|e| {
                Error::Config(format!("initial condition leaves the admissible state set: {e}"))
            })
        }
    }
}

/// Equilibrium speed without the domain guard, for ghost-cell states that may
/// transiently leave [0, rho_m].
fn diagram_speed(rho: f64, params: &ModelParams) -> f64 {
    params.v_f * (1.0 - (rho / params.rho_m).abs().powf(params.gamma))
}

fn diagram_slope(rho: f64, params: &ModelParams) -> f64 {
    if params.gamma == 1.0 {
        -params.v_f / params.rho_m
    } else {
        -params.v_f * params.gamma * rho.abs().powf(params.gamma - 1.0)
            / params.rho_m.powf(params.gamma)
    }
}

/// Largest characteristic speed magnitude of a cell state.
fn wave_speed(rho: f64, v: f64, params: &ModelParams) -> f64 {
    v.abs().max((v + rho * diagram_slope(rho, params)).abs())
}

/// CFL-stable time step for the current state.
pub fn cfl_dt(state: &TrafficState, config: &SimConfig) -> Result<f64> {
    let mut max_speed = 0.0f64;
    for i in 0..state.rho.len() {
        max_speed = max_speed.max(wave_speed(state.rho[i], state.v[i], &config.params));
    }
    if max_speed <= 0.0 {
        return Err(Error::Numerics("zero wave speed everywhere; cannot pick a time step".into()));
    }
    Ok(config.cfl * config.h() / max_speed)
}

#[derive(Clone, Copy)]
struct CellState {
    rho: f64,
    y: f64,
    v: f64,
}

fn cell_state(rho: f64, v: f64, params: &ModelParams) -> CellState {
    CellState { rho, y: rho * (v - diagram_speed(rho, params)), v }
}

fn physical_flux(c: &CellState) -> [f64; 2] {
    [c.rho * c.v, c.y * c.v]
}

fn rusanov(left: &CellState, right: &CellState, params: &ModelParams) -> [f64; 2] {
    let fl = physical_flux(left);
    let fr = physical_flux(right);
    let s = wave_speed(left.rho, left.v, params).max(wave_speed(right.rho, right.v, params));
    [
        0.5 * (fl[0] + fr[0]) - 0.5 * s * (right.rho - left.rho),
        0.5 * (fl[1] + fr[1]) - 0.5 * s * (right.y - left.y),
    ]
}

/// All nx + 1 face fluxes of (rho, y), ghosts included.
fn face_fluxes(state: &TrafficState, u: f64, config: &SimConfig) -> Vec<[f64; 2]> {
    let params = &config.params;
    let nx = config.nx;
    let first = cell_state(state.rho[0], state.v[0], params);
    let last = cell_state(state.rho[nx - 1], state.v[nx - 1], params);

    // Inlet: extrapolate v, impose the flux trace rho_g v_g = q*.
    let v_in = first.v;
    let inlet = cell_state(config.eq.q_star / v_in, v_in, params);
    // Outlet: extrapolate rho, reflect v around the prescribed trace.
    let v_out = 2.0 * (config.eq.v_star + u) - last.v;
    let outlet = cell_state(last.rho, v_out, params);

    let mut fluxes = Vec::with_capacity(nx + 1);
    fluxes.push(rusanov(&inlet, &first, params));
    for i in 1..nx {
        let l = cell_state(state.rho[i - 1], state.v[i - 1], params);
        let r = cell_state(state.rho[i], state.v[i], params);
        fluxes.push(rusanov(&l, &r, params));
    }
    fluxes.push(rusanov(&last, &outlet, params));
    fluxes
}

/// Mass fluxes actually used at the inlet and outlet faces for (state, U).
///
/// `step` telescopes the interior fluxes, so the vehicle count changes by
/// exactly `(inlet - outlet) * dt` per step.
pub fn boundary_mass_fluxes(state: &TrafficState, u: f64, config: &SimConfig) -> (f64, f64) {
    let fluxes = face_fluxes(state, u, config);
    (fluxes[0][0], fluxes[config.nx][0])
}

/// One conservative finite-volume step of the nonlinear system.
pub fn step(state: &TrafficState, u: f64, dt: f64, config: &SimConfig) -> Result<TrafficState> {
    let dt_max = cfl_dt(state, config)?;
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::Numerics(format!(
            "CFL violation at t = {:.3} s: dt = {dt:.6e} exceeds bound {dt_max:.6e}",
            state.t
        )));
    }
    let params = &config.params;
    let nx = config.nx;
    let h = config.h();
    let fluxes = face_fluxes(state, u, config);

    let mut rho = Vec::with_capacity(nx);
    let mut v = Vec::with_capacity(nx);
    for i in 0..nx {
        let c = cell_state(state.rho[i], state.v[i], params);
        let rho_new = c.rho - dt / h * (fluxes[i + 1][0] - fluxes[i][0]);
        let mut y_new = c.y - dt / h * (fluxes[i + 1][1] - fluxes[i][1]);
        // Relaxation substep, explicit.
        y_new -= dt * y_new / params.tau;
        rho.push(rho_new);
        v.push(y_new / rho_new + diagram_speed(rho_new, params));
    }

    let next = TrafficState { rho, v, t: state.t + dt };
    next.validate(config)?;
    Ok(next)
}

/// One upwind step of the linearized Riemann system; `u` is the outlet trace
/// of the v field and the inlet trace of w is -r v(0).
pub fn step_linearized(
    rs: &RiemannState,
    u: f64,
    dt: f64,
    chars: &CharacteristicParams,
    config: &SimConfig,
) -> RiemannState {
    let nx = rs.w.len();
    let h = config.h();
    let cw = chars.lambda1 * dt / h;
    let cv = chars.lambda2 * dt / h;
    let mut w = Vec::with_capacity(nx);
    let mut v = Vec::with_capacity(nx);
    for i in 0..nx {
        let upstream = if i == 0 { -chars.r * rs.v[0] } else { rs.w[i - 1] };
        w.push(rs.w[i] - cw * (rs.w[i] - upstream));
    }
    for i in 0..nx {
        let downstream = if i == nx - 1 { u } else { rs.v[i + 1] };
        v.push(rs.v[i] + cv * (downstream - rs.v[i]) + dt * chars.c(rs.grid[i]) * rs.w[i]);
    }
    RiemannState { w, v, grid: rs.grid.clone() }
}

/// March the configured scenario under a boundary controller, recording
/// snapshots, the control signal, and the Riemann-field norms.
pub fn simulate(
    config: &SimConfig,
    init: &TrafficState,
    controller: &mut dyn Controller,
) -> Result<Trajectory> {
    let chars = traffic_model::characteristics(&config.eq, &config.params)?;
    let grid = config.cell_centers();
    let mark_eps = 1e-9 * config.record_every.max(1.0);

    let riemann = |state: &TrafficState| -> Result<RiemannState> {
        to_riemann(&grid, &state.rho, &state.v, &config.eq, &chars, &config.params)
    };

    let mut traj = Trajectory {
        snapshots: Vec::new(),
        control: Vec::new(),
        norms: Vec::new(),
        warnings: Vec::new(),
        control_timing: ControlTiming::default(),
    };

    let timed_control =
        |controller: &mut dyn Controller, ctx: &ControlContext, traj: &mut Trajectory| -> f64 {
            let start = Instant::now();
            let u = controller.control(ctx);
            traj.control_timing.total += start.elapsed();
            traj.control_timing.calls += 1;
            u
        };

    let record = |traj: &mut Trajectory, state: &TrafficState, rs: &RiemannState| {
        let (l2_w, l2_v) = rs.l2_norms();
        traj.norms.push(NormSample { t: state.t, l2_w, l2_v });
        traj.snapshots.push(state.clone());
    };

    // Linearized mode keeps its own Riemann fields and mirrors them back to
    // physical snapshots; nonlinear mode is the other way around.
    let linear = config.mode == SimMode::Linearized;
    let lin_dt_bound = config.cfl * config.h() / chars.lambda1.max(chars.lambda2);

    let mut state = init.clone();
    state.t = 0.0;
    state.validate(config)?;
    let mut rs = riemann(&state)?;
    record(&mut traj, &state, &rs);

    let mut at_mark = true;
    let mut next_mark = 1usize;
    let mut t = 0.0f64;

    while t < config.t_end - 1e-12 {
        let mark_time = (next_mark as f64 * config.record_every).min(config.t_end);
        let dt_bound = if linear { lin_dt_bound } else { cfl_dt(&state, config)? };
        let dt = dt_bound.min(mark_time - t);

        let ctx = ControlContext { riemann: &rs, v_inlet: state.v[0], t, dt };
        let u = timed_control(controller, &ctx, &mut traj);
        if at_mark {
            traj.control.push((t, u));
            at_mark = false;
        }

        if linear {
            rs = step_linearized(&rs, u, dt, &chars, config);
            t += dt;
            if (t - mark_time).abs() < mark_eps {
                t = mark_time;
            }
            let (rho, v, mut range_warnings) =
                traffic_model::from_riemann(&rs, &config.eq, &chars, &config.params)?;
            state = TrafficState { rho, v, t };
            if traj.warnings.is_empty() {
                traj.warnings.append(&mut range_warnings);
            }
        } else {
            state = step(&state, u, dt, config).map_err(|e| match e {
                Error::Numerics(msg) => Error::Numerics(format!("at t = {t:.3} s: {msg}")),
                other => other,
            })?;
            t = state.t;
            if (t - mark_time).abs() < mark_eps {
                t = mark_time;
                state.t = t;
            }
            rs = riemann(&state)?;
        }

        if t >= mark_time - mark_eps {
            record(&mut traj, &state, &rs);
            next_mark += 1;
            at_mark = true;
        }
    }

    // Close the control record on the final mark; dt = 0 keeps stateful
    // controllers untouched.
    let ctx = ControlContext { riemann: &rs, v_inlet: state.v[0], t, dt: 0.0 };
    let u = timed_control(controller, &ctx, &mut traj);
    traj.control.push((t, u));
    traj.warnings.extend(controller.drain_warnings());

    Ok(traj)
}
