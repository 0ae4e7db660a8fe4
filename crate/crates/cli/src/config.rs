//! Experiment configuration: TOML schema, presets and validation.

use std::path::{Path, PathBuf};

use qsntk::dynamics::TimeModel;
use qsntk::hilbert::Boundary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const PRESETS: [&str; 4] = ["tfim", "hubbard", "tfim-small", "hubbard-small"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory receiving every artifact of the experiment.
    pub output: PathBuf,
    /// Duration of the real-time evolution that prepares the target.
    pub evolution_time: f64,
    pub model: ModelConfig,
    pub lattice: LatticeConfig,
    pub training: TrainingConfig,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub pd_check: PdCheckConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// Transverse-field Ising model, evolved from the polarized state.
    Tfim { j: f64 },
    /// Hubbard quench: ground state at `u_init`, evolved at `u_quench`.
    Hubbard {
        u_init: f64,
        u_quench: f64,
        n_up: usize,
        n_down: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_boundary() -> Boundary {
    Boundary::Open
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub width: usize,
    pub ensemble: usize,
    pub batch: usize,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    pub n_steps: usize,
    /// Draw a fresh train/test split for every ensemble member.
    #[serde(default)]
    pub per_run_split: bool,
    #[serde(default = "default_time_model")]
    pub time_model: TimeModel,
}

fn default_lr_factor() -> f64 {
    0.9
}

fn default_time_model() -> TimeModel {
    TimeModel::GradientFlow
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub split: u64,
    pub init: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub widths: Vec<usize>,
    pub batches: Vec<usize>,
    /// Ensemble size for each entry of `widths`.
    pub ensembles: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            widths: vec![300, 1000, 5000],
            batches: vec![2400, 3200, 4000],
            ensembles: vec![10, 10, 10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Iid,
    GaussianProcess,
    GaussNet,
    Nnqs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub ensemble: EnsembleKind,
    /// Qubit counts; each is cut in half.
    pub sizes: Vec<u32>,
    pub draws: usize,
    /// Replica orders of the Renyi traces.
    pub renyi: Vec<u32>,
    /// Add exact Wick moments where the ensemble is Gaussian.
    pub wick: bool,
    pub amplitude: f64,
    /// Gauss-net `σ` or Gaussian-process length scale; one scan per value.
    pub sigmas: Vec<f64>,
    /// Network width of the gauss_net and nnqs ensembles.
    pub width: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            ensemble: EnsembleKind::Iid,
            sizes: (2..=10).collect(),
            draws: 10_000,
            renyi: vec![2],
            wick: true,
            amplitude: 1.0,
            sigmas: vec![1.0],
            width: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdKernel {
    GaussNet,
    Gaussian,
    ReluNtk,
    RffArccos,
}

impl PdKernel {
    pub fn name(self) -> &'static str {
        match self {
            PdKernel::GaussNet => "gauss_net",
            PdKernel::Gaussian => "gaussian",
            PdKernel::ReluNtk => "relu_ntk",
            PdKernel::RffArccos => "rff_arccos",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdCheckConfig {
    pub kernel: PdKernel,
    pub n_points: usize,
    pub dim: usize,
    pub sigma: f64,
}

impl Default for PdCheckConfig {
    fn default() -> Self {
        Self {
            kernel: PdKernel::GaussNet,
            n_points: 100,
            dim: 12,
            sigma: 1.0,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_owned(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn finite(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite, got {v}")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<(), CliError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let tfim = Self {
            output: PathBuf::from("runs/tfim"),
            evolution_time: 2.1,
            model: ModelConfig::Tfim { j: 0.1 },
            lattice: LatticeConfig {
                rows: 3,
                cols: 4,
                boundary: Boundary::Open,
            },
            training: TrainingConfig {
                width: 5000,
                ensemble: 10,
                batch: 2400,
                lr_factor: 0.9,
                n_steps: 10_000,
                per_run_split: false,
                time_model: TimeModel::GradientFlow,
            },
            seeds: SeedConfig {
                split: 2021,
                init: 7,
            },
            sweep: SweepConfig {
                ensembles: vec![100, 10, 10],
                ..SweepConfig::default()
            },
            entropy: EntropyConfig::default(),
            pd_check: PdCheckConfig::default(),
        };
        let cfg = match name {
            "tfim" => tfim,
            "hubbard" => Self {
                output: PathBuf::from("runs/hubbard"),
                model: ModelConfig::Hubbard {
                    u_init: 4.0,
                    u_quench: 8.0,
                    n_up: 2,
                    n_down: 2,
                },
                sweep: SweepConfig::default(),
                ..tfim
            },
            "tfim-small" => Self {
                output: PathBuf::from("runs/tfim-small"),
                lattice: LatticeConfig {
                    rows: 2,
                    cols: 3,
                    boundary: Boundary::Open,
                },
                training: TrainingConfig {
                    width: 2000,
                    batch: 40,
                    ..tfim.training
                },
                sweep: SweepConfig {
                    widths: vec![300, 1000, 5000],
                    batches: vec![24, 32, 40],
                    ensembles: vec![10, 10, 10],
                },
                ..tfim
            },
            "hubbard-small" => Self {
                output: PathBuf::from("runs/hubbard-small"),
                model: ModelConfig::Hubbard {
                    u_init: 4.0,
                    u_quench: 8.0,
                    n_up: 1,
                    n_down: 1,
                },
                lattice: LatticeConfig {
                    rows: 2,
                    cols: 3,
                    boundary: Boundary::Open,
                },
                training: TrainingConfig {
                    width: 2000,
                    batch: 30,
                    ..tfim.training
                },
                sweep: SweepConfig {
                    widths: vec![300, 1000, 5000],
                    batches: vec![18, 24, 30],
                    ensembles: vec![10, 10, 10],
                },
                ..tfim
            },
            other => {
                return Err(invalid(
                    "--preset",
                    format!(
                        "unknown preset {other:?}; expected one of {}",
                        PRESETS.join(", ")
                    ),
                ))
            }
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            invalid(&field, e.message().to_owned())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config { field, message } => CliError::Config {
                field: format!("{}: {field}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Git-style blob hash of the resolved TOML.
    pub fn sha256(&self) -> String {
        let text = self.to_toml();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", text.len()));
        h.update(text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.rows * self.lattice.cols
    }

    /// Number of basis states of the configured model.
    pub fn basis_size(&self) -> usize {
        let n = self.n_sites();
        match self.model {
            ModelConfig::Tfim { .. } => 1usize.checked_shl(n as u32).unwrap_or(usize::MAX),
            ModelConfig::Hubbard { n_up, n_down, .. } => {
                binomial(n, n_up).saturating_mul(binomial(n, n_down))
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        nonzero("lattice.rows", self.lattice.rows)?;
        nonzero("lattice.cols", self.lattice.cols)?;
        finite("evolution_time", self.evolution_time)?;
        if self.evolution_time < 0.0 {
            return Err(invalid(
                "evolution_time",
                format!("must be non-negative, got {}", self.evolution_time),
            ));
        }
        match self.model {
            ModelConfig::Tfim { j } => finite("model.j", j)?,
            ModelConfig::Hubbard {
                u_init,
                u_quench,
                n_up,
                n_down,
            } => {
                finite("model.u_init", u_init)?;
                finite("model.u_quench", u_quench)?;
                let n = self.n_sites();
                if n_up > n {
                    return Err(invalid(
                        "model.n_up",
                        format!("{n_up} exceeds the {n} sites"),
                    ));
                }
                if n_down > n {
                    return Err(invalid(
                        "model.n_down",
                        format!("{n_down} exceeds the {n} sites"),
                    ));
                }
            }
        }
        let t = &self.training;
        nonzero("training.width", t.width)?;
        nonzero("training.ensemble", t.ensemble)?;
        nonzero("training.batch", t.batch)?;
        positive("training.lr_factor", t.lr_factor)?;
        let n = self.basis_size();
        if t.batch > n {
            return Err(invalid(
                "training.batch",
                format!("{} exceeds the basis size {n}", t.batch),
            ));
        }
        let s = &self.sweep;
        if s.widths.is_empty() {
            return Err(invalid("sweep.widths", "must not be empty"));
        }
        if s.batches.is_empty() {
            return Err(invalid("sweep.batches", "must not be empty"));
        }
        if s.ensembles.len() != s.widths.len() {
            return Err(invalid(
                "sweep.ensembles",
                format!(
                    "needs one entry per width ({}), got {}",
                    s.widths.len(),
                    s.ensembles.len()
                ),
            ));
        }
        for &w in &s.widths {
            nonzero("sweep.widths", w)?;
        }
        for &k in &s.ensembles {
            nonzero("sweep.ensembles", k)?;
        }
        for &b in &s.batches {
            nonzero("sweep.batches", b)?;
            if b > n {
                return Err(invalid(
                    "sweep.batches",
                    format!("{b} exceeds the basis size {n}"),
                ));
            }
        }
        let e = &self.entropy;
        if e.sizes.is_empty() {
            return Err(invalid("entropy.sizes", "must not be empty"));
        }
        if let Some(&m) = e.sizes.iter().find(|&&m| m == 0 || m > 24) {
            return Err(invalid(
                "entropy.sizes",
                format!("qubit count {m} outside 1..=24"),
            ));
        }
        nonzero("entropy.draws", e.draws)?;
        if let Some(&r) = e.renyi.iter().find(|&&r| r < 2) {
            return Err(invalid(
                "entropy.renyi",
                format!("replica order {r} must be at least 2"),
            ));
        }
        if e.wick && e.ensemble != EnsembleKind::Nnqs {
            if let Some(&r) = e.renyi.iter().find(|&&r| !(2..=3).contains(&r)) {
                return Err(invalid(
                    "entropy.renyi",
                    format!("Wick moments support n = 2 or 3, got {r}"),
                ));
            }
        }
        positive("entropy.amplitude", e.amplitude)?;
        if e.sigmas.is_empty() {
            return Err(invalid("entropy.sigmas", "must not be empty"));
        }
        for &sg in &e.sigmas {
            positive("entropy.sigmas", sg)?;
        }
        nonzero("entropy.width", e.width)?;
        let p = &self.pd_check;
        if p.n_points < 2 {
            return Err(invalid("pd_check.n_points", "needs at least 2 points"));
        }
        nonzero("pd_check.dim", p.dim)?;
        positive("pd_check.sigma", p.sigma)?;
        Ok(())
    }
}
