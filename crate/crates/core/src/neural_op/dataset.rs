//! Training datasets for the two operators, generated from the numerical
//! oracles: the kernel solver for lambda2 -> (Kw, Kv) and the exact
//! backstepping closed loop for lambda2 -> U(t).
//!
//! Samples span lambda2 in [5, 25] m/s, the image of the congested densities
//! 90..130 veh/km under the benchmark diagram (the relation is affine for
//! gamma = 1, so uniform spacing in lambda2 is uniform in rho*). Generation
//! is deterministic; each kernel sample is gated on its residual report
//! before inclusion.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::OperatorKind;
use crate::arz_sim::{initial_condition, simulate, IcKind, SimConfig, SimMode};
use crate::control::BacksteppingController;
use crate::kernel_solver::{kernel_residual, solve_kernels, KernelGrid};
use crate::traffic_model::{characteristics, equilibrium, fundamental_diagram, ModelParams};
use crate::{Error, Result};

/// In-memory operator-learning dataset.
///
/// All samples share one trunk-point set; targets are stored head-major per
/// sample (`targets[s][h * npoints + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: OperatorKind,
    /// lambda2 per sample, ascending.
    pub lambda2: Vec<f64>,
    /// Flat trunk points, `trunk_dim` values each.
    pub trunk_points: Vec<f64>,
    pub trunk_dim: usize,
    pub heads: usize,
    pub targets: Vec<Vec<f64>>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    /// Canonical description of the generator configuration.
    pub provenance: String,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.lambda2.len()
    }

    pub fn n_points(&self) -> usize {
        self.trunk_points.len() / self.trunk_dim
    }

    /// 800/100-style split: every ninth sample (offset 4) is validation,
    /// stratifying the held-out lambda2 values across the span.
    pub fn assign_split(&mut self) {
        self.train_idx.clear();
        self.val_idx.clear();
        for i in 0..self.n_samples() {
            if self.n_samples() >= 9 && i % 9 == 4 {
                self.val_idx.push(i);
            } else {
                self.train_idx.push(i);
            }
        }
    }

    /// Restrict to one sample (diagnostics, overfit checks).
    pub fn single_sample(&self, idx: usize) -> Dataset {
        Dataset {
            kind: self.kind,
            lambda2: vec![self.lambda2[idx]],
            trunk_points: self.trunk_points.clone(),
            trunk_dim: self.trunk_dim,
            heads: self.heads,
            targets: vec![self.targets[idx].clone()],
            train_idx: vec![0],
            val_idx: vec![],
            provenance: format!("{} (single sample {idx})", self.provenance),
        }
    }
}

/// Invert lambda2(rho*) for the configured diagram.
pub fn rho_star_for_lambda2(lambda2: f64, params: &ModelParams) -> Result<f64> {
    if params.gamma == 1.0 {
        // lambda2 = v_f (2 rho/rho_m - 1).
        let rho = (lambda2 / params.v_f + 1.0) * params.rho_m / 2.0;
        if !(rho > 0.0 && rho < params.rho_m) {
            return Err(Error::Config(format!(
                "lambda2 = {lambda2} has no congested equilibrium for these parameters"
            )));
        }
        return Ok(rho);
    }
    // lambda2 is strictly increasing in rho*; bisect.
    let value_at = |rho: f64| -> Result<f64> {
        let (v, slope) = fundamental_diagram(rho, params)?;
        Ok(-rho * slope - v)
    };
    let (mut lo, mut hi) = (1e-12 * params.rho_m, (1.0 - 1e-12) * params.rho_m);
    if lambda2 <= value_at(lo)? || lambda2 >= value_at(hi)? {
        return Err(Error::Config(format!(
            "lambda2 = {lambda2} outside the attainable congested range"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value_at(mid)? < lambda2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn lambda_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {n}")));
    }
    if !(hi > lo) {
        return Err(Error::Config(format!("empty lambda2 span [{lo}, {hi}]")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Kernel-operator dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDatasetConfig {
    pub params: ModelParams,
    pub lambda2_min: f64,
    pub lambda2_max: f64,
    pub n_samples: usize,
    /// Trunk grid nodes per side (targets are stored on this grid).
    pub grid_n: usize,
    /// Solver grid nodes per side; (solver_n-1) must be a multiple of
    /// (grid_n-1) so the trunk grid is a sub-grid of the solve.
    pub solver_n: usize,
    /// Residual gate each sample must pass before inclusion.
    pub residual_tol: f64,
}

impl Default for KernelDatasetConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            lambda2_min: 5.0,
            lambda2_max: 25.0,
            n_samples: 900,
            grid_n: 26,
            solver_n: 101,
            residual_tol: 1e-6,
        }
    }
}

impl KernelDatasetConfig {
    pub fn provenance(&self) -> String {
        format!(
            "kernel-dataset v1: lambda2 in [{}, {}], {} samples, grid_n {}, solver_n {}, residual_tol {:e}, v_f {}, rho_m {}, gamma {}, tau {}, L {}",
            self.lambda2_min,
            self.lambda2_max,
            self.n_samples,
            self.grid_n,
            self.solver_n,
            self.residual_tol,
            self.params.v_f,
            self.params.rho_m,
            self.params.gamma,
            self.params.tau,
            self.params.length
        )
    }
}

/// Solve the kernels for every lambda2 sample and collect triangular-node
/// targets, residual-gated.
pub fn gen_kernel_dataset(config: &KernelDatasetConfig) -> Result<Dataset> {
    if !(config.solver_n - 1).is_multiple_of(config.grid_n - 1) {
        return Err(Error::Config(format!(
            "solver grid {} does not refine dataset grid {}",
            config.solver_n, config.grid_n
        )));
    }
    let stride = (config.solver_n - 1) / (config.grid_n - 1);
    let lambdas = lambda_grid(config.lambda2_min, config.lambda2_max, config.n_samples)?;
    let grid = KernelGrid::new(config.params.length, config.grid_n)?;

    let targets: Result<Vec<Vec<f64>>> = lambdas
        .par_iter()
        .map(|&lambda2| {
            let rho_star = rho_star_for_lambda2(lambda2, &config.params)?;
            let eq = equilibrium(rho_star, &config.params)?;
            let chars = characteristics(&eq, &config.params)?;
            let pair = solve_kernels(&chars, config.params.length, config.solver_n)?;
            let res = kernel_residual(&pair);
            if res.max() > config.residual_tol {
                return Err(Error::Numerics(format!(
                    "kernel sample at lambda2 = {lambda2} failed the residual gate: {:.3e} > {:.3e}",
                    res.max(),
                    config.residual_tol
                )));
            }
            let mut values = Vec::with_capacity(grid.node_count() * 2);
            for i in 0..config.grid_n {
                for j in 0..=i {
                    values.push(pair.kw_at(i * stride, j * stride));
                }
            }
            for i in 0..config.grid_n {
                for j in 0..=i {
                    values.push(pair.kv_at(i * stride, j * stride));
                }
            }
            Ok(values)
        })
        .collect();

    let mut trunk_points = Vec::with_capacity(grid.node_count() * 2);
    for i in 0..config.grid_n {
        for j in 0..=i {
            trunk_points.push(grid.coord(i));
            trunk_points.push(grid.coord(j));
        }
    }

    let mut ds = Dataset {
        kind: OperatorKind::KernelOperator,
        lambda2: lambdas,
        trunk_points,
        trunk_dim: 2,
        heads: 2,
        targets: targets?,
        train_idx: vec![],
        val_idx: vec![],
        provenance: config.provenance(),
    };
    ds.assign_split();
    Ok(ds)
}

/// Control-law dataset generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LawDatasetConfig {
    pub params: ModelParams,
    pub lambda2_min: f64,
    pub lambda2_max: f64,
    pub n_samples: usize,
    /// Closed-loop simulation resolution and horizon.
    pub nx: usize,
    pub t_end: f64,
    pub cfl: f64,
    pub record_every: f64,
    /// Sinusoidal initial-condition family, scaled by each sample's
    /// equilibrium.
    pub amplitude: f64,
    pub wavenumber: u32,
    /// Kernel solver grid for the exact controller.
    pub solver_n: usize,
}

impl Default for LawDatasetConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            lambda2_min: 5.0,
            lambda2_max: 25.0,
            n_samples: 900,
            nx: 100,
            t_end: 300.0,
            cfl: 0.8,
            record_every: 1.0,
            amplitude: 0.1,
            wavenumber: 3,
            solver_n: 101,
        }
    }
}

impl LawDatasetConfig {
    pub fn provenance(&self) -> String {
        format!(
            "law-dataset v1: lambda2 in [{}, {}], {} samples, nx {}, t_end {}, cfl {}, record_every {}, A {}, k {}, solver_n {}, v_f {}, rho_m {}, gamma {}, tau {}, L {}",
            self.lambda2_min,
            self.lambda2_max,
            self.n_samples,
            self.nx,
            self.t_end,
            self.cfl,
            self.record_every,
            self.amplitude,
            self.wavenumber,
            self.solver_n,
            self.params.v_f,
            self.params.rho_m,
            self.params.gamma,
            self.params.tau,
            self.params.length
        )
    }
}

/// Run the exact-backstepping closed loop for every lambda2 sample and record
/// the control signal on the recording grid.
pub fn gen_law_dataset(config: &LawDatasetConfig) -> Result<Dataset> {
    let lambdas = lambda_grid(config.lambda2_min, config.lambda2_max, config.n_samples)?;

    let runs: Result<Vec<(Vec<f64>, Vec<f64>)>> = lambdas
        .par_iter()
        .map(|&lambda2| {
            let rho_star = rho_star_for_lambda2(lambda2, &config.params)?;
            let eq = equilibrium(rho_star, &config.params)?;
            let chars = characteristics(&eq, &config.params)?;
            let sim = SimConfig::new(
                config.params,
                eq,
                config.nx,
                config.t_end,
                config.cfl,
                SimMode::Nonlinear,
                config.record_every,
            )?;
            let pair = solve_kernels(&chars, config.params.length, config.solver_n)?;
            let mut controller =
                BacksteppingController::new(&pair, &chars, &sim.cell_centers())?;
            let init = initial_condition(
                IcKind::Sinusoidal { amplitude: config.amplitude, wavenumber: config.wavenumber },
                &eq,
                &sim,
            )?;
            let traj = simulate(&sim, &init, &mut controller)?;
            let times: Vec<f64> = traj.control.iter().map(|(t, _)| *t).collect();
            let values: Vec<f64> = traj.control.iter().map(|(_, u)| *u).collect();
            Ok((times, values))
        })
        .collect();
    let runs = runs?;

    let times = runs[0].0.clone();
    for (t, _) in &runs {
        if t.len() != times.len() {
            return Err(Error::Shape("control records differ in length across samples".into()));
        }
    }

    let mut ds = Dataset {
        kind: OperatorKind::LawOperator,
        lambda2: lambdas,
        trunk_points: times,
        trunk_dim: 1,
        heads: 1,
        targets: runs.into_iter().map(|(_, u)| u).collect(),
        train_idx: vec![],
        val_idx: vec![],
        provenance: config.provenance(),
    };
    ds.assign_split();
    Ok(ds)
}

/// Persist a dataset: `manifest.txt`, `samples.csv`, and one CSV per sample.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("kind = {}\n", ds.kind.label()));
    manifest.push_str(&format!("n_samples = {}\n", ds.n_samples()));
    manifest.push_str(&format!("trunk_dim = {}\n", ds.trunk_dim));
    manifest.push_str(&format!("heads = {}\n", ds.heads));
    manifest.push_str(&format!("lambda2_min = {}\n", ds.lambda2.first().unwrap_or(&0.0)));
    manifest.push_str(&format!("lambda2_max = {}\n", ds.lambda2.last().unwrap_or(&0.0)));
    manifest.push_str(&format!("provenance = {}\n", ds.provenance));
    fs::write(dir.join("manifest.txt"), manifest)?;

    let mut index = String::from("index,lambda2,file\n");
    for (i, lambda2) in ds.lambda2.iter().enumerate() {
        index.push_str(&format!("{i},{lambda2},sample_{i:04}.csv\n"));
    }
    fs::write(dir.join("samples.csv"), index)?;

    let npoints = ds.n_points();
    for (i, targets) in ds.targets.iter().enumerate() {
        let mut csv = String::new();
        match ds.kind {
            OperatorKind::KernelOperator => {
                csv.push_str("x,xi,kw,kv\n");
                for p in 0..npoints {
                    csv.push_str(&format!(
                        "{},{},{},{}\n",
                        ds.trunk_points[2 * p],
                        ds.trunk_points[2 * p + 1],
                        targets[p],
                        targets[npoints + p]
                    ));
                }
            }
            OperatorKind::LawOperator => {
                csv.push_str("t,u\n");
                for p in 0..npoints {
                    csv.push_str(&format!("{},{}\n", ds.trunk_points[p], targets[p]));
                }
            }
        }
        fs::write(dir.join(format!("sample_{i:04}.csv")), csv)?;
    }
    Ok(())
}

fn manifest_value<'a>(manifest: &'a str, key: &str) -> Result<&'a str> {
    manifest
        .lines()
        .find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == key).then_some(v.trim())
        })
        .ok_or_else(|| Error::Config(format!("dataset manifest is missing key '{key}'")))
}

fn parse_f64(text: &str, what: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::Config(format!("could not parse {what} from '{text}'")))
}

/// Load a dataset previously written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let kind = match manifest_value(&manifest, "kind")? {
        "kernel" => OperatorKind::KernelOperator,
        "law" => OperatorKind::LawOperator,
        other => return Err(Error::Config(format!("unknown dataset kind '{other}'"))),
    };
    let n_samples = parse_f64(manifest_value(&manifest, "n_samples")?, "n_samples")? as usize;
    let trunk_dim = parse_f64(manifest_value(&manifest, "trunk_dim")?, "trunk_dim")? as usize;
    let heads = parse_f64(manifest_value(&manifest, "heads")?, "heads")? as usize;
    let provenance = manifest_value(&manifest, "provenance")?.to_string();

    let index = fs::read_to_string(dir.join("samples.csv"))?;
    let mut lambda2 = Vec::with_capacity(n_samples);
    let mut files = Vec::with_capacity(n_samples);
    for line in index.lines().skip(1) {
        let mut cols = line.split(',');
        let _idx = cols.next();
        let l = cols.next().ok_or_else(|| Error::Config("bad samples.csv row".into()))?;
        let f = cols.next().ok_or_else(|| Error::Config("bad samples.csv row".into()))?;
        lambda2.push(parse_f64(l, "lambda2")?);
        files.push(f.to_string());
    }
    if lambda2.len() != n_samples {
        return Err(Error::Config(format!(
            "samples.csv lists {} samples, manifest says {n_samples}",
            lambda2.len()
        )));
    }

    let mut trunk_points: Vec<f64> = Vec::new();
    let mut targets = Vec::with_capacity(n_samples);
    for (s, file) in files.iter().enumerate() {
        let body = fs::read_to_string(dir.join(file))?;
        let mut kw = Vec::new();
        let mut kv = Vec::new();
        let mut points = Vec::new();
        for line in body.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != trunk_dim + heads {
                return Err(Error::Config(format!("bad row in {file}: '{line}'")));
            }
            for c in cols.iter().take(trunk_dim) {
                points.push(parse_f64(c, "trunk point")?);
            }
            kw.push(parse_f64(cols[trunk_dim], "target")?);
            if heads == 2 {
                kv.push(parse_f64(cols[trunk_dim + 1], "target")?);
            }
        }
        if s == 0 {
            trunk_points = points;
        } else if points != trunk_points {
            return Err(Error::Config(format!("trunk points differ in {file}")));
        }
        kw.extend(kv);
        targets.push(kw);
    }

    let mut ds = Dataset {
        kind,
        lambda2,
        trunk_points,
        trunk_dim,
        heads,
        targets,
        train_idx: vec![],
        val_idx: vec![],
        provenance,
    };
    ds.assign_split();
    Ok(ds)
}
