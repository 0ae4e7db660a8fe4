//! Subcommand implementations. Every artifact carries the resolved
//! configuration and its content hash.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use qsntk::dynamics::{
    record_schedule, AnalyticKernels, AnalyticLosses, LossCurves, LossPoint, TimeModel,
};
use qsntk::entropy::{
    entanglement_entropy_mc, linear_fit, page_value, renyi_mc, renyi_wick, EntropyMethod,
    EntropyReport, GaussNetSampler, GaussianKernelSpec, GaussianProcessSampler, IidGaussianSampler,
    NnqsSampler, PageMode, RegionSplit, WavefunctionSampler, MAX_WICK_DOMAIN,
};
use qsntk::hamiltonian::{
    build_hubbard, build_tfim, evolve, ground_state, polarized_state, Wavefunction,
};
use qsntk::hilbert::{enumerate_hubbard_basis, BasisMeta, Lattice};
use qsntk::io::{read_json, run_curves, write_json, write_loss_csv_file};
use qsntk::kernel::{analytic_nngp, analytic_ntk, KernelHyperparams};
use qsntk::nnqs::Checkpoint;
use qsntk::rng::derive_seed;
use qsntk::spectra::{
    gaussian_points, gaussnet_kernel, gram_matrix, gram_pd_check_matrix, rff_compose,
    unit_sphere_points, DotProductProfile, PdReport, RffMap, DEFAULT_PD_JITTER,
};
use qsntk::trainer::{
    learning_rate, mean_std, member_seed, split_indices, train_ensemble, RecordedLoss,
    SupervisedTask,
};
use serde::Serialize;

use crate::config::{EnsembleKind, ExperimentConfig, ModelConfig, PdKernel};
use crate::error::{CliError, CliResult};

/// Norm tolerance of a prepared target.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub config: ExperimentConfig,
}

/// A validated configuration bound to its output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    provenance: Provenance,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> CliResult<Self> {
        cfg.validate()?;
        let provenance = Provenance {
            config_sha256: cfg.sha256(),
            config: cfg.clone(),
        };
        Ok(Self { cfg, provenance })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    /// Create the output layout and write `config.toml`.
    pub fn prepare_output(&self) -> CliResult<()> {
        for dir in [self.cfg.output.clone(), self.path("losses")] {
            fs::create_dir_all(&dir)
                .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        }
        let path = self.path("config.toml");
        fs::write(&path, self.cfg.to_toml())
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    /// Comment lines opening every CSV artifact.
    pub fn csv_preamble(&self) -> Vec<String> {
        let mut lines = vec![format!("config_sha256={}", self.provenance.config_sha256)];
        lines.extend(self.cfg.to_toml().lines().map(str::to_owned));
        lines
    }

    /// Write `value` as a JSON object with an added `provenance` member.
    pub fn write_artifact<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut json = serde_json::to_value(value).map_err(qsntk::error::Error::from)?;
        let prov = serde_json::to_value(&self.provenance).map_err(qsntk::error::Error::from)?;
        match json.as_object_mut() {
            Some(obj) => {
                obj.insert("provenance".into(), prov);
            }
            None => json = serde_json::json!({ "value": json, "provenance": prov }),
        }
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
        }
        write_json(&path, &json)?;
        Ok(path)
    }

    pub fn write_curves(&self, name: &str, curves: &LossCurves) -> CliResult<PathBuf> {
        let path = self.path(name);
        write_loss_csv_file(&path, curves, &self.csv_preamble())?;
        Ok(path)
    }
}

/// Prepare the configured target state by exact evolution.
pub fn build_target(cfg: &ExperimentConfig) -> CliResult<Wavefunction> {
    let lat = Lattice::new(cfg.lattice.rows, cfg.lattice.cols, cfg.lattice.boundary)?;
    let n = lat.sites();
    let wf = match cfg.model {
        ModelConfig::Tfim { j } => {
            let h = build_tfim(&lat, j)?;
            evolve(&h, &polarized_state(n)?, cfg.evolution_time)?
        }
        ModelConfig::Hubbard {
            u_init,
            u_quench,
            n_up,
            n_down,
        } => {
            let basis = enumerate_hubbard_basis(n, n_up, n_down)?;
            let meta = BasisMeta::Fock {
                n_sites: n,
                n_up,
                n_down,
            };
            let init = ground_state(&build_hubbard(&lat, u_init, &basis)?, meta)?;
            evolve(
                &build_hubbard(&lat, u_quench, &basis)?,
                &init.state,
                cfg.evolution_time,
            )?
        }
    };
    Ok(wf)
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetInfo {
    pub path: PathBuf,
    pub basis_size: usize,
    pub norm: f64,
}

pub fn make_target(exp: &Experiment) -> CliResult<(Wavefunction, TargetInfo)> {
    exp.prepare_output()?;
    let wf = build_target(&exp.cfg)?;
    let norm = wf.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(
            qsntk::error::Error::Domain(format!("target norm {norm} deviates from 1")).into(),
        );
    }
    let path = exp.write_artifact("target.json", &wf)?;
    Ok((
        wf.clone(),
        TargetInfo {
            path,
            basis_size: wf.len(),
            norm,
        },
    ))
}

/// Read the target from `path`, or from the output directory, building it
/// there when absent.
pub fn load_or_make_target(exp: &Experiment, path: Option<&Path>) -> CliResult<Wavefunction> {
    let default = exp.path("target.json");
    let wf: Wavefunction = match path {
        Some(p) => read_json(p)?,
        None if default.exists() => read_json(&default)?,
        None => return Ok(make_target(exp)?.0),
    };
    if wf.len() != exp.cfg.basis_size() {
        return Err(CliError::Config {
            field: "target".into(),
            message: format!(
                "target has {} amplitudes, the configured basis has {}",
                wf.len(),
                exp.cfg.basis_size()
            ),
        });
    }
    Ok(wf)
}

/// Encoded basis, split into train and test sets, with the infinite-width
/// kernels and the learning rate derived from them.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task: SupervisedTask,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub theta_bb: Array2<f64>,
    pub theta_xb: Array2<f64>,
    pub k_bb: Array2<f64>,
    pub k_xb: Array2<f64>,
    pub k_xx_diag: Array1<f64>,
    pub eta: f64,
}

impl PreparedTask {
    pub fn basis_size(&self) -> usize {
        self.train_indices.len() + self.test_indices.len()
    }

    pub fn analytic(&self, time_model: TimeModel) -> CliResult<AnalyticLosses> {
        let kernels = AnalyticKernels {
            theta_bb: self.theta_bb.view(),
            theta_xb: self.theta_xb.view(),
            k_bb: self.k_bb.view(),
            k_xb: self.k_xb.view(),
            k_xx_diag: self.k_xx_diag.view(),
        };
        Ok(AnalyticLosses::new(
            kernels,
            self.task.train_targets.view(),
            self.task.test_targets.view(),
            self.eta,
            time_model,
        )?)
    }

    /// Loss over the whole basis from the train and test means.
    pub fn total_mse(&self, train: f64, test: f64) -> f64 {
        let b = self.train_indices.len() as f64;
        let n = self.basis_size() as f64;
        (b * train + (n - b) * test) / n
    }
}

pub fn prepare_task(
    wf: &Wavefunction,
    batch: usize,
    split_seed: u64,
    lr_factor: f64,
) -> CliResult<PreparedTask> {
    let basis = wf.basis.build()?;
    let xs = basis.encode_all();
    let targets = Array1::from(wf.amplitudes.clone());
    let (train_indices, test_indices) = split_indices(basis.len(), batch, split_seed)?;
    let task =
        SupervisedTask::from_split(xs.view(), targets.view(), &train_indices, &test_indices)?;
    let hp = KernelHyperparams::default();
    let (xb, xt) = (task.train_inputs.view(), task.test_inputs.view());
    let theta_bb = analytic_ntk(xb, xb, hp)?;
    let theta_xb = analytic_ntk(xt, xb, hp)?;
    let k_bb = analytic_nngp(xb, xb, hp)?;
    let k_xb = analytic_nngp(xt, xb, hp)?;
    let mut k_xx_diag = Array1::zeros(xt.nrows());
    for (i, row) in xt.axis_iter(Axis(0)).enumerate() {
        let x = row.insert_axis(Axis(0));
        k_xx_diag[i] = analytic_nngp(x, x, hp)?[[0, 0]];
    }
    let eta = learning_rate(theta_bb.view(), lr_factor)?;
    Ok(PreparedTask {
        task,
        train_indices,
        test_indices,
        theta_bb,
        theta_xb,
        k_bb,
        k_xb,
        k_xx_diag,
        eta,
    })
}

/// One completed ensemble member.
#[derive(Debug, Clone, Serialize)]
pub struct MemberRecord {
    pub index: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub eta: f64,
    #[serde(skip)]
    pub history: Vec<RecordedLoss>,
    pub final_train: f64,
    pub final_test: f64,
    pub final_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberFailure {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub width: usize,
    pub batch: usize,
    pub members: Vec<MemberRecord>,
    pub failures: Vec<MemberFailure>,
    pub curves: LossCurves,
    pub checkpoints: Vec<Checkpoint>,
}

impl EnsembleRun {
    pub fn final_totals(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.final_total).collect()
    }
}

/// Train `k` members of the given width. A shared split is drawn once from
/// the split seed; otherwise member `i` uses the split seed mixed with `i`.
pub fn run_ensemble(
    cfg: &ExperimentConfig,
    wf: &Wavefunction,
    shared: Option<&PreparedTask>,
    width: usize,
    k: usize,
    batch: usize,
) -> CliResult<EnsembleRun> {
    let t = &cfg.training;
    let sched = record_schedule(t.n_steps);
    if let Some(prep) = shared {
        let res = train_ensemble(
            k,
            width,
            &prep.task,
            prep.eta,
            t.n_steps,
            &sched,
            cfg.seeds.init,
        )?;
        let seeds: Vec<u64> = (0..k).map(|i| member_seed(cfg.seeds.init, i)).collect();
        let members = res
            .members
            .iter()
            .map(|(seed, history)| {
                let index = seeds.iter().position(|s| s == seed).unwrap_or(usize::MAX);
                member_record(index, *seed, cfg.seeds.split, prep, history)
            })
            .collect();
        let failures = res
            .failures
            .iter()
            .map(|(seed, reason)| MemberFailure {
                index: seeds.iter().position(|s| s == seed).unwrap_or(usize::MAX),
                seed: *seed,
                reason: reason.clone(),
            })
            .collect();
        return Ok(EnsembleRun {
            width,
            batch,
            members,
            failures,
            curves: res.curves,
            checkpoints: res.checkpoints,
        });
    }
    let mut members = Vec::new();
    let mut failures = Vec::new();
    let mut checkpoints = Vec::new();
    for i in 0..k {
        let split_seed = derive_seed(cfg.seeds.split, i as u64);
        let prep = prepare_task(wf, batch, split_seed, t.lr_factor)?;
        let seed = member_seed(cfg.seeds.init, i);
        let res = train_ensemble(1, width, &prep.task, prep.eta, t.n_steps, &sched, seed)?;
        match res.members.first() {
            Some((s, history)) => {
                members.push(member_record(i, *s, split_seed, &prep, history));
                checkpoints.extend(res.checkpoints);
            }
            None => failures.extend(res.failures.into_iter().map(|(s, reason)| MemberFailure {
                index: i,
                seed: s,
                reason,
            })),
        }
    }
    let curves = mean_member_curves(&members);
    Ok(EnsembleRun {
        width,
        batch,
        members,
        failures,
        curves,
        checkpoints,
    })
}

fn member_record(
    index: usize,
    seed: u64,
    split_seed: u64,
    prep: &PreparedTask,
    history: &[RecordedLoss],
) -> MemberRecord {
    let last = history.last().copied().unwrap_or(RecordedLoss {
        step: 0,
        train: f64::NAN,
        test: f64::NAN,
    });
    MemberRecord {
        index,
        seed,
        split_seed,
        eta: prep.eta,
        history: history.to_vec(),
        final_train: last.train,
        final_test: last.test,
        final_total: prep.total_mse(last.train, last.test),
    }
}

/// Member-averaged losses when members do not share a test set. The mean
/// prediction is undefined there, so the whole loss goes in the `μ` columns.
fn mean_member_curves(members: &[MemberRecord]) -> LossCurves {
    let Some(first) = members.first() else {
        return LossCurves::default();
    };
    let n = members.len() as f64;
    let points = (0..first.history.len())
        .map(|i| {
            let train = members.iter().map(|m| m.history[i].train).sum::<f64>() / n;
            let test = members.iter().map(|m| m.history[i].test).sum::<f64>() / n;
            LossPoint {
                train_l_mu: train,
                train_l_gamma: 0.0,
                test_l_mu: test,
                test_l_gamma: 0.0,
                test_l_total: test,
            }
        })
        .collect();
    let steps: Vec<usize> = first.history.iter().map(|r| r.step).collect();
    LossCurves {
        t: steps.iter().map(|&s| s as f64).collect(),
        steps,
        points,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            stderr: std / (values.len().max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub basis_size: usize,
    pub width: usize,
    pub batch: usize,
    pub ensemble: usize,
    pub n_steps: usize,
    pub per_run_split: bool,
    pub members: Vec<MemberRecord>,
    pub failures: Vec<MemberFailure>,
    pub final_test: Stats,
    pub final_total: Stats,
}

pub fn train(exp: &Experiment, target: Option<&Path>) -> CliResult<TrainSummary> {
    exp.prepare_output()?;
    let wf = load_or_make_target(exp, target)?;
    let t = &exp.cfg.training;
    let shared = if t.per_run_split {
        None
    } else {
        Some(prepare_task(
            &wf,
            t.batch,
            exp.cfg.seeds.split,
            t.lr_factor,
        )?)
    };
    let run = run_ensemble(&exp.cfg, &wf, shared.as_ref(), t.width, t.ensemble, t.batch)?;
    for (m, ckpt) in run.members.iter().zip(&run.checkpoints) {
        exp.write_curves(
            &format!("losses/run_{:03}.csv", m.index),
            &run_curves(&m.history),
        )?;
        exp.write_artifact(&format!("checkpoints/run_{:03}.json", m.index), ckpt)?;
    }
    if !run.members.is_empty() {
        exp.write_curves("losses/ensemble.csv", &run.curves)?;
    }
    let finals: Vec<f64> = run.members.iter().map(|m| m.final_test).collect();
    let summary = TrainSummary {
        basis_size: wf.len(),
        width: t.width,
        batch: t.batch,
        ensemble: t.ensemble,
        n_steps: t.n_steps,
        per_run_split: t.per_run_split,
        final_test: Stats::of(&finals),
        final_total: Stats::of(&run.final_totals()),
        members: run.members,
        failures: run.failures,
    };
    exp.write_artifact("summary.json", &summary)?;
    if !summary.failures.is_empty() {
        return Err(CliError::Diverged {
            failed: summary.failures.len(),
            total: t.ensemble,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossValues {
    pub train_l_mu: f64,
    pub train_l_gamma: f64,
    pub test_l_mu: f64,
    pub test_l_gamma: f64,
    pub test_l_total: f64,
}

impl From<LossPoint> for LossValues {
    fn from(p: LossPoint) -> Self {
        Self {
            train_l_mu: p.train_l_mu,
            train_l_gamma: p.train_l_gamma,
            test_l_mu: p.test_l_mu,
            test_l_gamma: p.test_l_gamma,
            test_l_total: p.test_l_total,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NtkPrediction {
    pub batch: usize,
    pub eta: f64,
    pub min_eigenvalue: f64,
    pub n_steps: usize,
    pub final_losses: LossValues,
    /// The converged `t → ∞` values.
    pub limit: LossValues,
}

pub fn ntk_predict(exp: &Experiment, target: Option<&Path>) -> CliResult<NtkPrediction> {
    exp.prepare_output()?;
    let wf = load_or_make_target(exp, target)?;
    let t = &exp.cfg.training;
    let prep = prepare_task(&wf, t.batch, exp.cfg.seeds.split, t.lr_factor)?;
    let al = prep.analytic(t.time_model)?;
    al.solver().require_pd()?;
    let curves = al.curves(&record_schedule(t.n_steps));
    exp.write_curves("losses/ntk.csv", &curves)?;
    let pred = NtkPrediction {
        batch: t.batch,
        eta: prep.eta,
        min_eigenvalue: al.solver().min_eigenvalue(),
        n_steps: t.n_steps,
        final_losses: al.at(t.n_steps as f64).into(),
        limit: al.at(f64::INFINITY).into(),
    };
    exp.write_artifact("ntk.json", &pred)?;
    Ok(pred)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub width: usize,
    pub batch: usize,
    pub ensemble: usize,
    pub completed: usize,
    pub total_mse: Stats,
    pub ntk_total_mse: f64,
    pub failures: Vec<MemberFailure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub n_steps: usize,
    pub cells: Vec<SweepCell>,
}

/// Final total loss over the basis for every (width, batch) pair, with the
/// infinite-width value of each batch.
pub fn sweep(exp: &Experiment, target: Option<&Path>) -> CliResult<SweepSummary> {
    let s = &exp.cfg.sweep;
    let cells: Vec<(usize, usize, usize)> = s
        .batches
        .iter()
        .flat_map(|&b| {
            s.widths
                .iter()
                .zip(&s.ensembles)
                .map(move |(&w, &k)| (w, b, k))
        })
        .collect();
    sweep_cells(exp, target, &cells)
}

/// [`sweep`] restricted to explicit `(width, batch, ensemble)` cells.
pub fn sweep_cells(
    exp: &Experiment,
    target: Option<&Path>,
    cells: &[(usize, usize, usize)],
) -> CliResult<SweepSummary> {
    exp.prepare_output()?;
    let wf = load_or_make_target(exp, target)?;
    let cfg = &exp.cfg;
    let t = &cfg.training;
    let mut out = Vec::new();
    let mut batches: Vec<usize> = cells.iter().map(|c| c.1).collect();
    batches.dedup();
    for batch in batches {
        let prep = prepare_task(&wf, batch, cfg.seeds.split, t.lr_factor)?;
        let al = prep.analytic(t.time_model)?;
        let p = al.at(t.n_steps as f64);
        let ntk_total = prep.total_mse(p.train_total(), p.test_l_total);
        for &(width, _, k) in cells.iter().filter(|c| c.1 == batch) {
            let shared = (!t.per_run_split).then_some(&prep);
            let run = run_ensemble(cfg, &wf, shared, width, k, batch)?;
            exp.write_curves(&format!("losses/sweep_w{width}_b{batch}.csv"), &run.curves)?;
            out.push(SweepCell {
                width,
                batch,
                ensemble: k,
                completed: run.members.len(),
                total_mse: Stats::of(&run.final_totals()),
                ntk_total_mse: ntk_total,
                failures: run.failures,
            });
        }
    }
    let summary = SweepSummary {
        n_steps: t.n_steps,
        cells: out,
    };
    let mut csv = exp
        .csv_preamble()
        .iter()
        .map(|l| format!("# {l}\n"))
        .collect::<String>();
    csv.push_str("width,batch,ensemble,completed,mean_total_mse,std_total_mse,stderr_total_mse,ntk_total_mse\n");
    for c in &summary.cells {
        csv.push_str(&format!(
            "{},{},{},{},{:e},{:e},{:e},{:e}\n",
            c.width,
            c.batch,
            c.ensemble,
            c.completed,
            c.total_mse.mean,
            c.total_mse.std,
            c.total_mse.stderr,
            c.ntk_total_mse
        ));
    }
    let path = exp.path("sweep.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    exp.write_artifact("summary.json", &summary)?;
    let failed: usize = summary.cells.iter().map(|c| c.failures.len()).sum();
    if failed > 0 {
        let total = summary.cells.iter().map(|c| c.ensemble).sum();
        return Err(CliError::Diverged { failed, total });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyRow {
    pub qubits: u32,
    pub sigma: Option<f64>,
    pub report: EntropyReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeFit {
    pub sigma: Option<f64>,
    /// Regressor: qubits in the smaller half.
    pub slope: f64,
    pub intercept: f64,
    pub page_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySummary {
    pub ensemble: EnsembleKind,
    pub rows: Vec<EntropyRow>,
    pub fits: Vec<VolumeFit>,
}

/// Qubit-encoded points of an `m`-qubit domain.
fn qubit_points(m: u32) -> CliResult<Array2<f64>> {
    Ok(qsntk::hilbert::Basis::Spin(qsntk::hilbert::enumerate_spin_basis(m as usize)?).encode_all())
}

fn sampler_for(
    kind: EnsembleKind,
    m: u32,
    sigma: f64,
    amplitude: f64,
    width: usize,
) -> CliResult<(Box<dyn WavefunctionSampler>, Option<GaussianKernelSpec>)> {
    let d = 1usize << m;
    Ok(match kind {
        EnsembleKind::Iid => (
            Box::new(IidGaussianSampler { dim: d, amplitude }),
            Some(GaussianKernelSpec::on_line(d, 1.0, amplitude, 1e-3)?),
        ),
        EnsembleKind::GaussianProcess => {
            let spec = GaussianKernelSpec::on_qubits(m as usize, amplitude, sigma)?;
            (Box::new(GaussianProcessSampler::new(&spec)?), Some(spec))
        }
        EnsembleKind::GaussNet => {
            let s = GaussNetSampler::new(width, sigma, amplitude, qubit_points(m)?)?;
            let spec = s.limit_kernel()?;
            (Box::new(s), Some(spec))
        }
        EnsembleKind::Nnqs => (
            Box::new(NnqsSampler {
                width,
                inputs: qubit_points(m)?,
            }),
            None,
        ),
    })
}

pub fn entropy(exp: &Experiment) -> CliResult<EntropySummary> {
    exp.prepare_output()?;
    let e = &exp.cfg.entropy;
    let seed = exp.cfg.seeds.init;
    let sigmas: Vec<Option<f64>> = match e.ensemble {
        EnsembleKind::Iid | EnsembleKind::Nnqs => vec![None],
        _ => e.sigmas.iter().copied().map(Some).collect(),
    };
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        let (mut xs, mut ys, mut pages) = (Vec::new(), Vec::new(), Vec::new());
        for &m in &e.sizes {
            let split = RegionSplit::half_cut(m)?;
            let (sampler, spec) =
                sampler_for(e.ensemble, m, sigma.unwrap_or(1.0), e.amplitude, e.width)?;
            let run_seed = derive_seed(seed, ((si as u64) << 32) | m as u64);
            let vn = entanglement_entropy_mc(sampler.as_ref(), split, e.draws, run_seed)?;
            xs.push(f64::from(m / 2));
            ys.push(vn.mean);
            pages.push(page_value(split.d_a, split.d_b, PageMode::Exact)?);
            rows.push(EntropyRow {
                qubits: m,
                sigma,
                report: EntropyReport::sampled(
                    split,
                    None,
                    EntropyMethod::VonNeumannMonteCarlo,
                    &vn,
                )?,
            });
            for &n in &e.renyi {
                let est = renyi_mc(
                    sampler.as_ref(),
                    split,
                    n,
                    e.draws,
                    false,
                    derive_seed(run_seed, u64::from(n)),
                )?;
                rows.push(EntropyRow {
                    qubits: m,
                    sigma,
                    report: EntropyReport::sampled(
                        split,
                        Some(n),
                        EntropyMethod::MonteCarlo,
                        &est,
                    )?,
                });
                if let (true, Some(spec)) = (e.wick, spec.as_ref()) {
                    if split.dim() <= MAX_WICK_DOMAIN {
                        let v = renyi_wick(spec, split, n)?;
                        rows.push(EntropyRow {
                            qubits: m,
                            sigma,
                            report: EntropyReport::exact(split, n, EntropyMethod::Wick, v)?,
                        });
                    }
                }
            }
        }
        if xs.len() >= 2 && xs.iter().any(|&x| x != xs[0]) {
            let (slope, intercept) = linear_fit(&xs, &ys)?;
            let (page_slope, _) = linear_fit(&xs, &pages)?;
            fits.push(VolumeFit {
                sigma,
                slope,
                intercept,
                page_slope,
            });
        }
    }
    let summary = EntropySummary {
        ensemble: e.ensemble,
        rows,
        fits,
    };
    exp.write_artifact("entropy.json", &summary)?;
    Ok(summary)
}

pub fn pd_check(exp: &Experiment) -> CliResult<PdReport> {
    exp.prepare_output()?;
    let p = exp.cfg.pd_check;
    let pts = match p.kernel {
        PdKernel::GaussNet | PdKernel::Gaussian => {
            gaussian_points(p.n_points, p.dim, exp.cfg.seeds.init)
        }
        PdKernel::ReluNtk | PdKernel::RffArccos => {
            unit_sphere_points(p.n_points, p.dim, exp.cfg.seeds.init)
        }
    };
    let sigma = p.sigma;
    let gram = match p.kernel {
        PdKernel::GaussNet => gram_matrix(|x, y| gaussnet_kernel(x, y, sigma), pts.view())?,
        PdKernel::Gaussian => gram_matrix(
            |x, y| {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            },
            pts.view(),
        )?,
        PdKernel::ReluNtk => analytic_ntk(pts.view(), pts.view(), KernelHyperparams::default())?,
        PdKernel::RffArccos => {
            let k = rff_compose(
                RffMap::sample(p.dim, derive_seed(exp.cfg.seeds.init, 1))?,
                DotProductProfile::arccos1(),
            )?;
            gram_matrix(|x, y| k.eval(x, y), pts.view())?
        }
    };
    let check = gram_pd_check_matrix(gram.view(), DEFAULT_PD_JITTER)?;
    let report = PdReport::new(p.kernel.name(), p.n_points, &check);
    exp.write_artifact("pd_check.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// TFIM training curves against the infinite-width prediction.
    One,
    /// Hubbard batch and width sweep.
    Two,
    /// Hubbard training curves.
    S1,
    /// TFIM batch and width sweep.
    S2,
}

impl Figure {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Some(Figure::One),
            "2" => Some(Figure::Two),
            "s1" => Some(Figure::S1),
            "s2" => Some(Figure::S2),
            _ => None,
        }
    }

    pub fn default_preset(self) -> &'static str {
        match self {
            Figure::One | Figure::S2 => "tfim",
            Figure::Two | Figure::S1 => "hubbard",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum FigureData {
    Curves {
        train: TrainSummary,
        ntk: NtkPrediction,
    },
    Sweep(SweepSummary),
}

pub fn reproduce_figure(exp: &Experiment, fig: Figure) -> CliResult<FigureData> {
    make_target(exp)?;
    match fig {
        Figure::One | Figure::S1 => {
            let ntk = ntk_predict(exp, None)?;
            let train = train(exp, None)?;
            Ok(FigureData::Curves { train, ntk })
        }
        Figure::Two | Figure::S2 => Ok(FigureData::Sweep(sweep(exp, None)?)),
    }
}
