//! Experiment configuration: a fully-defaulted TOML schema with unknown keys
//! rejected. Roadside quantities use the units of the benchmark literature
//! (densities in veh/km); everything is converted to strict SI at the
//! boundary into the library.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use arz_control::arz_sim::{SimConfig, SimMode};
use arz_control::control::PiGains;
use arz_control::neural_op::{KernelDatasetConfig, LawDatasetConfig, TrainConfig};
use arz_control::traffic_model::{equilibrium, Equilibrium, ModelParams, VEH_PER_KM};
use arz_control::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// RNG seed for training and dataset provenance.
    pub seed: u64,
    /// Output directory for all artifacts.
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub sim: SimSection,
    pub ic: IcSection,
    pub kernels: KernelSection,
    pub controller: ControllerSection,
    pub dataset: DatasetSection,
    pub training: TrainingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            sim: SimSection::default(),
            ic: IcSection::default(),
            kernels: KernelSection::default(),
            controller: ControllerSection::default(),
            dataset: DatasetSection::default(),
            training: TrainingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Free-flow speed [m/s].
    pub v_f: f64,
    /// Jam density [veh/km].
    pub rho_m_veh_km: f64,
    /// Fundamental-diagram exponent.
    pub gamma: f64,
    /// Relaxation time [s].
    pub tau: f64,
    /// Road length [m].
    pub length: f64,
    /// Equilibrium density [veh/km]; must be congested.
    pub rho_star_veh_km: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            v_f: 40.0,
            rho_m_veh_km: 160.0,
            gamma: 1.0,
            tau: 60.0,
            length: 500.0,
            rho_star_veh_km: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub nx: usize,
    pub t_end: f64,
    pub cfl: f64,
    /// "nonlinear" or "linearized".
    pub mode: String,
    pub record_every: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { nx: 100, t_end: 300.0, cfl: 0.8, mode: "nonlinear".into(), record_every: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcSection {
    /// Relative sinusoidal amplitude.
    pub amplitude: f64,
    pub wavenumber: u32,
}

impl Default for IcSection {
    fn default() -> Self {
        Self { amplitude: 0.1, wavenumber: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    /// Solver grid nodes per side.
    pub n: usize,
    /// Residual gate for solve-kernels and dataset generation.
    pub residual_tol: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { n: 101, residual_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// backstepping | no-kernels | no-law | pi | zero.
    pub kind: String,
    /// PI gains (grid-search defaults for the benchmark scenario).
    pub kp: f64,
    pub ki: f64,
    /// Model file paths, relative to out_dir unless absolute.
    pub kernel_model: PathBuf,
    pub law_model: PathBuf,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let gains = PiGains::default();
        Self {
            kind: "backstepping".into(),
            kp: gains.kp,
            ki: gains.ki,
            kernel_model: PathBuf::from("kernel_model.bin"),
            law_model: PathBuf::from("law_model.bin"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub lambda2_min: f64,
    pub lambda2_max: f64,
    /// Trunk grid (nodes per side) for kernel-operator targets.
    pub grid_n: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { n_samples: 900, lambda2_min: 5.0, lambda2_max: 25.0, grid_n: 26 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub p: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        Self {
            p: tc.p,
            hidden: tc.hidden,
            learning_rate: tc.learning_rate,
            lr_floor: tc.lr_floor,
            batch_size: tc.batch_size,
            max_epochs: tc.max_epochs,
            patience: tc.patience,
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file; unknown keys are rejected with their location.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(
            self.model.v_f,
            self.model.rho_m_veh_km * VEH_PER_KM,
            self.model.gamma,
            self.model.tau,
            self.model.length,
        )
    }

    pub fn equilibrium(&self) -> Result<Equilibrium> {
        equilibrium(self.model.rho_star_veh_km * VEH_PER_KM, &self.params()?)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mode = match self.sim.mode.as_str() {
            "nonlinear" => SimMode::Nonlinear,
            "linearized" => SimMode::Linearized,
            other => {
                return Err(Error::Config(format!(
                    "sim.mode must be 'nonlinear' or 'linearized', got '{other}'"
                )))
            }
        };
        SimConfig::new(
            self.params()?,
            self.equilibrium()?,
            self.sim.nx,
            self.sim.t_end,
            self.sim.cfl,
            mode,
            self.sim.record_every,
        )
    }

    pub fn kernel_dataset_config(&self) -> Result<KernelDatasetConfig> {
        Ok(KernelDatasetConfig {
            params: self.params()?,
            lambda2_min: self.dataset.lambda2_min,
            lambda2_max: self.dataset.lambda2_max,
            n_samples: self.dataset.n_samples,
            grid_n: self.dataset.grid_n,
            solver_n: self.kernels.n,
            residual_tol: self.kernels.residual_tol,
        })
    }

    pub fn law_dataset_config(&self) -> Result<LawDatasetConfig> {
        Ok(LawDatasetConfig {
            params: self.params()?,
            lambda2_min: self.dataset.lambda2_min,
            lambda2_max: self.dataset.lambda2_max,
            n_samples: self.dataset.n_samples,
            nx: self.sim.nx,
            t_end: self.sim.t_end,
            cfl: self.sim.cfl,
            record_every: self.sim.record_every,
            amplitude: self.ic.amplitude,
            wavenumber: self.ic.wavenumber,
            solver_n: self.kernels.n,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            p: self.training.p,
            hidden: self.training.hidden.clone(),
            learning_rate: self.training.learning_rate,
            lr_floor: self.training.lr_floor,
            batch_size: self.training.batch_size,
            max_epochs: self.training.max_epochs,
            patience: self.training.patience,
            seed: self.seed,
        }
    }

    /// Resolve a model path against the output directory.
    pub fn model_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }
}
