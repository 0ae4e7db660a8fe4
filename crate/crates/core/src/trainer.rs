//! Full-batch gradient descent on finite-width network states.
//!
//! The loss is `L = (1/|B|) Σ_B |ψ − ψ_T|²`; the real and imaginary networks
//! are disjoint, so each is updated from its own component of `L`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LossCurves, LossPoint};
use crate::error::{Error, Result};
use crate::kernel::max_learning_rate;
use crate::nnqs::{Checkpoint, ComplexNnqs};
use crate::rng::{derive_seed, stream_rng};

/// Loss growth factor over the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Training and test data for supervised learning of a wavefunction.
#[derive(Debug, Clone)]
pub struct SupervisedTask {
    pub train_inputs: Array2<f64>,
    pub train_targets: Array1<Complex64>,
    pub test_inputs: Array2<f64>,
    pub test_targets: Array1<Complex64>,
}

impl SupervisedTask {
    pub fn new(
        train_inputs: Array2<f64>,
        train_targets: Array1<Complex64>,
        test_inputs: Array2<f64>,
        test_targets: Array1<Complex64>,
    ) -> Result<Self> {
        if train_inputs.nrows() == 0 {
            return Err(Error::Argument("training set is empty".into()));
        }
        if train_inputs.nrows() != train_targets.len() || test_inputs.nrows() != test_targets.len()
        {
            return Err(Error::Shape("one target per input row required".into()));
        }
        if test_inputs.nrows() > 0 && test_inputs.ncols() != train_inputs.ncols() {
            return Err(Error::Shape(
                "train and test inputs differ in dimension".into(),
            ));
        }
        Ok(Self {
            train_inputs,
            train_targets,
            test_inputs,
            test_targets,
        })
    }

    /// Select rows of an encoded basis.
    pub fn from_split(
        inputs: ArrayView2<f64>,
        targets: ArrayView1<Complex64>,
        train: &[usize],
        test: &[usize],
    ) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::Shape("one target per basis element required".into()));
        }
        if train.iter().chain(test).any(|&i| i >= targets.len()) {
            return Err(Error::Argument("split index outside the basis".into()));
        }
        Self::new(
            inputs.select(Axis(0), train),
            targets.select(Axis(0), train),
            inputs.select(Axis(0), test),
            targets.select(Axis(0), test),
        )
    }

    pub fn batch_size(&self) -> usize {
        self.train_inputs.nrows()
    }
}

/// Uniform draw of `n_train` of `n` indices without replacement; the rest
/// form the test set. Both lists are sorted.
pub fn split_indices(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train == 0 || n_train > n {
        return Err(Error::Argument(format!(
            "cannot draw {n_train} training points from {n}"
        )));
    }
    let mut rng = stream_rng(seed, 1 << 32);
    let mut train = sample(&mut rng, n, n_train).into_vec();
    train.sort_unstable();
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let test = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((train, test))
}

/// `factor` times the largest stable rate `|B| / λ_max(Θ_BB)` for the loss
/// `L` above (half of [`max_learning_rate`], which refers to the loss
/// without the factor of two in its gradient).
pub fn learning_rate(train_gram: ArrayView2<f64>, factor: f64) -> Result<f64> {
    Ok(factor * max_learning_rate(train_gram, train_gram.nrows())? / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordedLoss {
    pub step: usize,
    pub train: f64,
    pub test: f64,
}

/// One network being trained.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub net: ComplexNnqs,
    pub step: usize,
    pub eta: f64,
    pub seed: u64,
    pub history: Vec<RecordedLoss>,
    initial_loss: Option<f64>,
}

fn mse(pred: &Array1<Complex64>, targets: &Array1<Complex64>) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(targets)
        .map(|(p, t)| (p - t).norm_sqr())
        .sum::<f64>()
        / pred.len() as f64
}

impl TrainRun {
    pub fn new(net: ComplexNnqs, eta: f64, seed: u64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {eta} must be finite and non-negative"
            )));
        }
        if !net.is_disjoint() {
            return Err(Error::Argument(
                "training requires disjoint real and imaginary networks".into(),
            ));
        }
        Ok(Self {
            net,
            step: 0,
            eta,
            seed,
            history: Vec::new(),
            initial_loss: None,
        })
    }

    /// Fresh network of the given width.
    pub fn init(width: usize, input_dim: usize, eta: f64, seed: u64) -> Result<Self> {
        Self::new(
            ComplexNnqs::init_disjoint(width, input_dim, seed)?,
            eta,
            seed,
        )
    }

    /// Predictions on the train and test sets.
    pub fn predict(&self, task: &SupervisedTask) -> Result<(Array1<Complex64>, Array1<Complex64>)> {
        let train = self.net.values_batch(task.train_inputs.view())?;
        let test = if task.test_inputs.nrows() > 0 {
            self.net.values_batch(task.test_inputs.view())?
        } else {
            Array1::zeros(0)
        };
        Ok((train, test))
    }

    /// Gradients of `L` with respect to the real and imaginary networks.
    pub fn gradients(&self, task: &SupervisedTask) -> Result<(Array1<f64>, Array1<f64>)> {
        let ComplexNnqs::Disjoint { re, im } = &self.net else {
            unreachable!("checked at construction")
        };
        let xs = task.train_inputs.view();
        let scale = 2.0 / task.batch_size() as f64;
        let (_, g_re) = re.value_and_gradient(xs, |out| {
            Ok((&out - &task.train_targets.mapv(|z| z.re)) * scale)
        })?;
        let (_, g_im) = im.value_and_gradient(xs, |out| {
            Ok((&out - &task.train_targets.mapv(|z| z.im)) * scale)
        })?;
        Ok((g_re, g_im))
    }
}

/// `θ ← θ − η ∇L` for both networks.
pub fn gd_step(run: &mut TrainRun, task: &SupervisedTask) -> Result<()> {
    let (g_re, g_im) = run.gradients(task)?;
    // The output-bias component is the residual sum, so it turns non-finite
    // as soon as any train prediction does.
    let bias_grads = [g_re.last(), g_im.last()];
    if bias_grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            step: run.step,
            loss: f64::NAN,
        });
    }
    let eta = run.eta;
    let ComplexNnqs::Disjoint { re, im } = &mut run.net else {
        unreachable!("checked at construction")
    };
    re.axpy(-eta, g_re.view())?;
    im.axpy(-eta, g_im.view())?;
    run.step += 1;
    Ok(())
}

/// Called at each recorded step with the train and test predictions.
pub type Observer<'a> = dyn FnMut(usize, &Array1<Complex64>, &Array1<Complex64>) + 'a;

/// Run `n_steps` updates, recording losses at the steps listed in
/// `schedule` (relative to the run's step counter).
pub fn train(
    run: &mut TrainRun,
    task: &SupervisedTask,
    n_steps: usize,
    schedule: &[usize],
) -> Result<()> {
    train_observed(run, task, n_steps, schedule, &mut |_, _, _| {})
}

pub fn train_observed(
    run: &mut TrainRun,
    task: &SupervisedTask,
    n_steps: usize,
    schedule: &[usize],
    observer: &mut Observer<'_>,
) -> Result<()> {
    let start = run.step;
    let stop = start + n_steps;
    let mut next = schedule
        .iter()
        .copied()
        .filter(|&s| s >= start && s <= stop)
        .peekable();
    loop {
        let record = next.peek() == Some(&run.step);
        if record || run.initial_loss.is_none() {
            let (train_pred, test_pred) = run.predict(task)?;
            let train_loss = mse(&train_pred, &task.train_targets);
            let initial = *run.initial_loss.get_or_insert(train_loss);
            if !train_loss.is_finite()
                || train_loss > DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE)
            {
                return Err(Error::Divergence {
                    step: run.step,
                    loss: train_loss,
                });
            }
            if record {
                next.next();
                run.history.push(RecordedLoss {
                    step: run.step,
                    train: train_loss,
                    test: mse(&test_pred, &task.test_targets),
                });
                observer(run.step, &train_pred, &test_pred);
            }
        }
        if run.step >= stop {
            break;
        }
        gd_step(run, task)?;
    }
    Ok(())
}

/// Outcome of an ensemble of independently initialised runs.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub width: usize,
    pub batch: usize,
    pub steps: Vec<usize>,
    /// Per completed member, its loss history.
    pub members: Vec<(u64, Vec<RecordedLoss>)>,
    /// Members that failed, with the reason.
    pub failures: Vec<(u64, String)>,
    /// Ensemble split about the ensemble mean prediction at each step.
    pub curves: LossCurves,
    /// Final parameters of each completed member, in `members` order.
    pub checkpoints: Vec<Checkpoint>,
}

impl EnsembleResult {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Final test loss of each completed member.
    pub fn final_losses(&self) -> Vec<f64> {
        self.members
            .iter()
            .filter_map(|(_, h)| h.last().map(|r| r.test))
            .collect()
    }

    /// Mean and sample standard deviation over members at each step.
    pub fn member_stats(&self, test: bool) -> Vec<(f64, f64)> {
        (0..self.steps.len())
            .map(|i| {
                let vals: Vec<f64> = self
                    .members
                    .iter()
                    .filter_map(|(_, h)| h.get(i).map(|r| if test { r.test } else { r.train }))
                    .collect();
                mean_std(&vals)
            })
            .collect()
    }

    pub fn summary(&self) -> EnsembleSummary {
        let final_losses = self.final_losses();
        let (mean, std) = mean_std(&final_losses);
        EnsembleSummary {
            width: self.width,
            k: self.k(),
            batch: self.batch,
            final_losses,
            mean,
            std,
        }
    }
}

pub fn mean_std(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = if vals.len() > 1 {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub width: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub batch: usize,
    pub final_losses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Seed of ensemble member `index`.
pub fn member_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

type MemberTrace = (
    Vec<RecordedLoss>,
    Vec<Array1<Complex64>>,
    Vec<Array1<Complex64>>,
    Checkpoint,
);

struct MemberOutput {
    seed: u64,
    outcome: std::result::Result<MemberTrace, String>,
}

/// Train `k` members in parallel and aggregate in member order, so results
/// do not depend on the number of threads.
pub fn train_ensemble(
    k: usize,
    width: usize,
    task: &SupervisedTask,
    eta: f64,
    n_steps: usize,
    schedule: &[usize],
    base_seed: u64,
) -> Result<EnsembleResult> {
    if k == 0 {
        return Err(Error::Argument("ensemble size must be at least 1".into()));
    }
    let steps: Vec<usize> = schedule.iter().copied().filter(|&s| s <= n_steps).collect();
    let d = task.train_inputs.ncols();
    let chunk = rayon::current_num_threads().max(1);
    let n_rec = steps.len();
    let mut train_sum = vec![Array1::<Complex64>::zeros(task.batch_size()); n_rec];
    let mut test_sum = vec![Array1::<Complex64>::zeros(task.test_targets.len()); n_rec];
    let mut members = Vec::new();
    let mut failures = Vec::new();
    let mut checkpoints = Vec::new();
    for start in (0..k).step_by(chunk) {
        let outputs: Vec<MemberOutput> = (start..(start + chunk).min(k))
            .into_par_iter()
            .map(|i| {
                let seed = member_seed(base_seed, i);
                let outcome = (|| -> Result<_> {
                    let mut run = TrainRun::init(width, d, eta, seed)?;
                    let mut tr = Vec::with_capacity(n_rec);
                    let mut te = Vec::with_capacity(n_rec);
                    train_observed(&mut run, task, n_steps, &steps, &mut |_, a, b| {
                        tr.push(a.clone());
                        te.push(b.clone());
                    })?;
                    let ckpt = run.net.to_checkpoint(run.step)?;
                    Ok((run.history, tr, te, ckpt))
                })()
                .map_err(|e| e.to_string());
                MemberOutput { seed, outcome }
            })
            .collect();
        for out in outputs {
            match out.outcome {
                Ok((history, tr, te, ckpt)) => {
                    for i in 0..n_rec {
                        train_sum[i] += &tr[i];
                        test_sum[i] += &te[i];
                    }
                    members.push((out.seed, history));
                    checkpoints.push(ckpt);
                }
                Err(msg) => failures.push((out.seed, msg)),
            }
        }
    }
    let done = members.len();
    let mut points = Vec::with_capacity(n_rec);
    for i in 0..n_rec {
        if done == 0 {
            points.push(LossPoint::default());
            continue;
        }
        let scale = Complex64::new(1.0 / done as f64, 0.0);
        let train_mean = &train_sum[i] * scale;
        let test_mean = &test_sum[i] * scale;
        let mean_member = |test: bool| {
            members
                .iter()
                .map(|(_, h)| if test { h[i].test } else { h[i].train })
                .sum::<f64>()
                / done as f64
        };
        let l_mu_train = mse(&train_mean, &task.train_targets);
        let l_mu_test = mse(&test_mean, &task.test_targets);
        let (total_train, total_test) = (mean_member(false), mean_member(true));
        points.push(LossPoint {
            train_l_mu: l_mu_train,
            train_l_gamma: total_train - l_mu_train,
            test_l_mu: l_mu_test,
            test_l_gamma: total_test - l_mu_test,
            test_l_total: total_test,
        });
    }
    Ok(EnsembleResult {
        width,
        batch: task.batch_size(),
        steps: steps.clone(),
        members,
        failures,
        curves: LossCurves {
            t: steps.iter().map(|&s| s as f64).collect(),
            steps,
            points,
        },
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::record_schedule;
    use crate::kernel::{analytic_ntk, KernelHyperparams};
    use crate::nnqs::NetworkParams;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_task(n_train: usize, n_test: usize, d: usize, seed: u64) -> SupervisedTask {
        let mut rng = stream_rng(seed, 3);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let xs = Array2::from_shape_fn((n_train + n_test, d), |_| g());
        let ts: Array1<Complex64> = (0..n_train + n_test)
            .map(|_| Complex64::new(g() * 0.3, g() * 0.3))
            .collect();
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..n_train + n_test).collect();
        SupervisedTask::from_split(xs.view(), ts.view(), &train, &test).unwrap()
    }

    fn stable_eta(task: &SupervisedTask) -> f64 {
        let g = analytic_ntk(
            task.train_inputs.view(),
            task.train_inputs.view(),
            KernelHyperparams::default(),
        )
        .unwrap();
        learning_rate(g.view(), 0.9).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (train, test) = split_indices(50, 20, 4).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 30);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_indices(50, 20, 4).unwrap(), (train, test));
        assert!(split_indices(5, 6, 0).is_err());
    }

    #[test]
    fn zero_residual_means_no_update() {
        let task0 = toy_task(6, 2, 3, 1);
        let mut run = TrainRun::init(8, 3, 0.1, 5).unwrap();
        let (pred, test_pred) = run.predict(&task0).unwrap();
        let task = SupervisedTask::new(
            task0.train_inputs.clone(),
            pred,
            task0.test_inputs.clone(),
            test_pred,
        )
        .unwrap();
        let before = run.net.clone();
        gd_step(&mut run, &task).unwrap();
        assert_eq!(run.net, before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = toy_task(5, 0, 3, 2);
        let run = TrainRun::init(6, 3, 0.1, 9).unwrap();
        let (g_re, _) = run.gradients(&task).unwrap();
        let ComplexNnqs::Disjoint { re, im } = &run.net else {
            panic!()
        };
        let loss = |p: &NetworkParams| {
            let net = ComplexNnqs::Disjoint {
                re: p.clone(),
                im: im.clone(),
            };
            mse(
                &net.values_batch(task.train_inputs.view()).unwrap(),
                &task.train_targets,
            )
        };
        let theta = re.flatten();
        let h = 1e-6;
        for i in 0..re.n_params() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let fd = (loss(&NetworkParams::from_flat(6, 3, plus.view(), 0).unwrap())
                - loss(&NetworkParams::from_flat(6, 3, minus.view(), 0).unwrap()))
                / (2.0 * h);
            assert!(
                (fd - g_re[i]).abs() <= 1e-6 * g_re[i].abs().max(1e-3),
                "param {i}: {fd} vs {}",
                g_re[i]
            );
        }
    }

    #[test]
    fn zero_learning_rate_keeps_losses() {
        let task = toy_task(8, 4, 3, 3);
        let mut run = TrainRun::init(10, 3, 0.0, 1).unwrap();
        train(&mut run, &task, 20, &record_schedule(20)).unwrap();
        assert_eq!(run.history.len(), 21);
        assert!(run
            .history
            .iter()
            .all(|r| r.train == run.history[0].train && r.test == run.history[0].test));
    }

    #[test]
    fn training_is_deterministic_and_extends() {
        let task = toy_task(10, 5, 4, 4);
        let eta = stable_eta(&task);
        let mut a = TrainRun::init(50, 4, eta, 2).unwrap();
        let mut b = TrainRun::init(50, 4, eta, 2).unwrap();
        train(&mut a, &task, 200, &record_schedule(400)).unwrap();
        train(&mut b, &task, 400, &record_schedule(400)).unwrap();
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x, y);
        }
        assert!(b.history.last().unwrap().train < b.history[0].train);
    }

    #[test]
    fn divergence_is_detected() {
        let task = toy_task(10, 0, 4, 5);
        let eta = stable_eta(&task) / 0.9 * 2.2;
        let mut run = TrainRun::init(200, 4, eta, 3).unwrap();
        let r = train(&mut run, &task, 10_000, &record_schedule(10_000));
        assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn ensemble_of_one_is_a_single_run() {
        let task = toy_task(8, 4, 3, 6);
        let eta = stable_eta(&task);
        let sched = record_schedule(30);
        let ens = train_ensemble(1, 20, &task, eta, 30, &sched, 17).unwrap();
        let mut run = TrainRun::init(20, 3, eta, member_seed(17, 0)).unwrap();
        train(&mut run, &task, 30, &sched).unwrap();
        assert_eq!(ens.members[0].1, run.history);
        let p = ens.curves.points.last().unwrap();
        assert!(p.train_l_gamma.abs() < 1e-15 && p.test_l_gamma.abs() < 1e-15);
        assert_eq!(
            ens.summary().final_losses,
            vec![run.history.last().unwrap().test]
        );
    }

    #[test]
    fn ensemble_split_adds_up() {
        let task = toy_task(8, 4, 3, 7);
        let eta = stable_eta(&task);
        let ens = train_ensemble(3, 20, &task, eta, 10, &record_schedule(10), 1).unwrap();
        let stats = ens.member_stats(true);
        for (p, (mean, _)) in ens.curves.points.iter().zip(stats) {
            assert!((p.test_l_mu + p.test_l_gamma - mean).abs() < 1e-12);
            assert!(p.test_l_gamma >= -1e-15);
        }
        assert!(matches!(
            train_ensemble(0, 20, &task, eta, 10, &[0], 1),
            Err(Error::Argument(_))
        ));
        let json = serde_json::to_value(ens.summary()).unwrap();
        assert_eq!(json["K"], 3);
    }
}
