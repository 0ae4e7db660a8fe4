//! Closed-form training dynamics of the linearised model under the batch-mean
//! squared loss `L = (1/|B|) Σ_B |ψ − ψ_T|²`.
//!
//! Time `t` counts gradient-descent steps at learning rate `η`. Each real
//! component follows `df/dt = −(2η/|B|) Θ_xB (f_B − T_B)`, so with
//! `Θ_BB = V diag(λ) Vᵀ`
//!
//! ```text
//! μ_x(t) = Θ_xB V diag((1 − e^{−2ηλt/|B|}) / λ) Vᵀ T_B
//! γ_x(t) = f_x(0) − Θ_xB V diag((1 − e^{−2ηλt/|B|}) / λ) Vᵀ f_B(0)
//! ```
//!
//! The coupled form `dΨ/dt = −(η/|B|) ΩM (Ψ − Ψ_T)` on `Ψ = (ψ, ψ*)` is solved
//! by [`BlockOdeSolver`].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymmetricEigen};

/// Relative eigenvalue cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// How the learning-rate exponent is applied to a step count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeModel {
    /// `e^{−rλt}`.
    #[default]
    GradientFlow,
    /// `(1 − rλ)^t`, the exact iterate of discrete gradient descent.
    DiscreteSteps,
}

/// Steps at which losses are recorded: every step up to 100, then 50
/// log-spaced points per decade, and always the final step.
pub fn record_schedule(n_steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=n_steps.min(100)).collect();
    if n_steps > 100 {
        let mut k = 0u32;
        loop {
            let step = (100.0 * 10f64.powf(k as f64 / 50.0)).round() as usize;
            if step >= n_steps {
                break;
            }
            if step > *out.last().unwrap() {
                out.push(step);
            }
            k += 1;
        }
        out.push(n_steps);
    }
    out
}

/// `per_decade` log-spaced times from `t_min` to `t_max` inclusive.
pub fn log_time_grid(t_min: f64, t_max: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max >= t_min && per_decade > 0) {
        return Err(Error::Argument(
            "log grid needs 0 < t_min <= t_max and per_decade > 0".into(),
        ));
    }
    let decades = (t_max / t_min).log10();
    let n = (decades * per_decade as f64).round() as usize;
    Ok((0..=n)
        .map(|k| {
            if n == 0 {
                t_min
            } else {
                t_min * 10f64.powf(decades * k as f64 / n as f64)
            }
        })
        .collect())
}

/// Eigen-cached solver for one real component trained on one Gram.
#[derive(Debug, Clone)]
pub struct DecoupledSolver {
    eig: SymmetricEigen,
    rate: f64,
    threshold: f64,
    n_cut: usize,
    time_model: TimeModel,
}

impl DecoupledSolver {
    /// `train_gram` is `Θ_BB`; the batch size is its dimension.
    pub fn new(train_gram: ArrayView2<f64>, eta: f64, time_model: TimeModel) -> Result<Self> {
        let batch = train_gram.nrows();
        if batch == 0 {
            return Err(Error::Argument("empty training set".into()));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate {eta} must be finite and non-negative"
            )));
        }
        let eig = linalg::sym_eigh(train_gram)?;
        let threshold = PINV_CUTOFF * eig.max().abs();
        let n_cut = eig.values.iter().filter(|&&l| l < threshold).count();
        Ok(Self {
            eig,
            rate: 2.0 * eta / batch as f64,
            threshold,
            n_cut,
            time_model,
        })
    }

    pub fn batch(&self) -> usize {
        self.eig.dim()
    }

    pub fn eigen(&self) -> &SymmetricEigen {
        &self.eig
    }

    /// Number of modes discarded by the pseudo-inverse cutoff.
    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig.min()
    }

    /// Fail unless every mode survives the cutoff.
    pub fn require_pd(&self) -> Result<()> {
        if self.n_cut > 0 {
            return Err(Error::Conditioning {
                min_eigenvalue: self.min_eigenvalue(),
            });
        }
        Ok(())
    }

    fn kept(&self, j: usize) -> bool {
        self.eig.values[j] >= self.threshold
    }

    fn decay(&self, lambda: f64, t: f64) -> f64 {
        let x = self.rate * lambda;
        if t.is_infinite() {
            return 0.0;
        }
        match self.time_model {
            TimeModel::GradientFlow => (-x * t).exp(),
            TimeModel::DiscreteSteps => (1.0 - x).powf(t),
        }
    }

    /// `g_j = 1 − decay_j` (zero on discarded modes).
    pub fn learned_fraction(&self, t: f64) -> Array1<f64> {
        Array1::from_iter((0..self.batch()).map(|j| {
            if !self.kept(j) {
                return 0.0;
            }
            let lambda = self.eig.values[j];
            match (self.time_model, t.is_infinite()) {
                (TimeModel::GradientFlow, false) => -(-self.rate * lambda * t).exp_m1(),
                _ => 1.0 - self.decay(lambda, t),
            }
        }))
    }

    /// `h_j = g_j / λ_j`.
    pub fn filter(&self, t: f64) -> Array1<f64> {
        let g = self.learned_fraction(t);
        Array1::from_iter(g.iter().zip(self.eig.values.iter()).map(|(&g, &l)| {
            if g == 0.0 {
                0.0
            } else {
                g / l
            }
        }))
    }

    fn check_len(&self, v: usize, what: &str) -> Result<()> {
        if v != self.batch() {
            return Err(Error::Shape(format!(
                "{what} has length {v}, batch is {}",
                self.batch()
            )));
        }
        Ok(())
    }

    /// `Vᵀ v`.
    pub fn project(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_len(v.len(), "vector")?;
        Ok(self.eig.vectors.t().dot(&v))
    }

    /// `μ` on the training points.
    pub fn mu_train(&self, targets: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        let coeff = self.project(targets)? * self.learned_fraction(t);
        Ok(self.eig.vectors.dot(&coeff))
    }

    /// `μ` on points whose cross-Gram with the batch is `cross` (`Θ_xB`).
    pub fn mu_test(
        &self,
        cross: ArrayView2<f64>,
        targets: ArrayView1<f64>,
        t: f64,
    ) -> Result<Array1<f64>> {
        self.check_len(cross.ncols(), "cross Gram row")?;
        let coeff = self.project(targets)? * self.filter(t);
        Ok(cross.dot(&self.eig.vectors.dot(&coeff)))
    }

    pub fn gamma_train(&self, init: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        Ok(&init - &self.mu_train(init, t)?)
    }

    pub fn gamma_test(
        &self,
        cross: ArrayView2<f64>,
        init_x: ArrayView1<f64>,
        init_b: ArrayView1<f64>,
        t: f64,
    ) -> Result<Array1<f64>> {
        if cross.nrows() != init_x.len() {
            return Err(Error::Shape(
                "one initial value per evaluation point required".into(),
            ));
        }
        Ok(&init_x - &self.mu_test(cross, init_b, t)?)
    }
}

fn split(v: ArrayView1<Complex64>) -> (Array1<f64>, Array1<f64>) {
    (v.mapv(|z| z.re), v.mapv(|z| z.im))
}

fn join(re: Array1<f64>, im: Array1<f64>) -> Array1<Complex64> {
    Zip::from(&re)
        .and(&im)
        .map_collect(|&a, &b| Complex64::new(a, b))
}

/// Complex state whose real and imaginary parts train on their own Grams.
#[derive(Debug, Clone)]
pub struct ComplexDecoupled {
    pub re: DecoupledSolver,
    pub im: DecoupledSolver,
}

impl ComplexDecoupled {
    pub fn new(
        gram_re: ArrayView2<f64>,
        gram_im: ArrayView2<f64>,
        eta: f64,
        time_model: TimeModel,
    ) -> Result<Self> {
        Ok(Self {
            re: DecoupledSolver::new(gram_re, eta, time_model)?,
            im: DecoupledSolver::new(gram_im, eta, time_model)?,
        })
    }

    pub fn mu(
        &self,
        cross_re: ArrayView2<f64>,
        cross_im: ArrayView2<f64>,
        targets: ArrayView1<Complex64>,
        t: f64,
    ) -> Result<Array1<Complex64>> {
        let (tr, ti) = split(targets);
        Ok(join(
            self.re.mu_test(cross_re, tr.view(), t)?,
            self.im.mu_test(cross_im, ti.view(), t)?,
        ))
    }

    pub fn gamma(
        &self,
        cross_re: ArrayView2<f64>,
        cross_im: ArrayView2<f64>,
        init_x: ArrayView1<Complex64>,
        init_b: ArrayView1<Complex64>,
        t: f64,
    ) -> Result<Array1<Complex64>> {
        let (xr, xi) = split(init_x);
        let (br, bi) = split(init_b);
        Ok(join(
            self.re.gamma_test(cross_re, xr.view(), br.view(), t)?,
            self.im.gamma_test(cross_im, xi.view(), bi.view(), t)?,
        ))
    }
}

/// Loss values at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossPoint {
    pub train_l_mu: f64,
    pub train_l_gamma: f64,
    pub test_l_mu: f64,
    pub test_l_gamma: f64,
    pub test_l_total: f64,
}

impl LossPoint {
    pub fn train_total(&self) -> f64 {
        self.train_l_mu + self.train_l_gamma
    }
}

/// Loss curves on a grid of steps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurves {
    pub steps: Vec<usize>,
    pub t: Vec<f64>,
    pub points: Vec<LossPoint>,
}

/// Inputs of the infinite-width loss prediction. Both parts of `ψ` share the
/// tangent kernel `Θ` and initial covariance `K` (the NNGP).
#[derive(Debug, Clone, Copy)]
pub struct AnalyticKernels<'a> {
    pub theta_bb: ArrayView2<'a, f64>,
    pub theta_xb: ArrayView2<'a, f64>,
    pub k_bb: ArrayView2<'a, f64>,
    pub k_xb: ArrayView2<'a, f64>,
    /// Diagonal of `K` on the test points.
    pub k_xx_diag: ArrayView1<'a, f64>,
}

/// Mean and variance parts of the expected loss of the infinite ensemble.
///
/// Train: `L_μ = (1/|B|) Σ_j (1−g_j)² |a_j|²` with `a = Vᵀ T`, and
/// `L_γ = (2/|B|) Σ_j (1−g_j)² K̃_jj` with `K̃ = Vᵀ K_BB V`.
/// Test: `L_γ = (2/n)[tr K_xx − 2 Σ_j h_j (QᵀC)_jj + Σ_jk h_j h_k (QᵀQ)_jk K̃_jk]`
/// with `Q = Θ_xB V` and `C = K_xB V`.
#[derive(Debug, Clone)]
pub struct AnalyticLosses {
    solver: DecoupledSolver,
    target_coeff: Array1<Complex64>,
    k_tilde: Array2<f64>,
    q: Array2<f64>,
    q_gram: Array2<f64>,
    qc_diag: Array1<f64>,
    trace_kxx: f64,
    test_targets: Array1<Complex64>,
}

impl AnalyticLosses {
    pub fn new(
        kernels: AnalyticKernels<'_>,
        train_targets: ArrayView1<Complex64>,
        test_targets: ArrayView1<Complex64>,
        eta: f64,
        time_model: TimeModel,
    ) -> Result<Self> {
        let b = kernels.theta_bb.nrows();
        let n = kernels.theta_xb.nrows();
        let shapes_ok = kernels.theta_xb.ncols() == b
            && kernels.k_bb.dim() == (b, b)
            && kernels.k_xb.dim() == (n, b)
            && kernels.k_xx_diag.len() == n
            && train_targets.len() == b
            && test_targets.len() == n;
        if !shapes_ok {
            return Err(Error::Shape(
                "inconsistent kernel or target dimensions".into(),
            ));
        }
        let solver = DecoupledSolver::new(kernels.theta_bb, eta, time_model)?;
        let v = &solver.eig.vectors;
        let (tr, ti) = split(train_targets);
        let target_coeff = join(v.t().dot(&tr), v.t().dot(&ti));
        let k_tilde = v.t().dot(&kernels.k_bb.dot(v));
        let q = kernels.theta_xb.dot(v);
        let c = kernels.k_xb.dot(v);
        let q_gram = q.t().dot(&q);
        let qc_diag = (&q * &c).sum_axis(Axis(0));
        Ok(Self {
            solver,
            target_coeff,
            k_tilde,
            q,
            q_gram,
            qc_diag,
            trace_kxx: kernels.k_xx_diag.sum(),
            test_targets: test_targets.to_owned(),
        })
    }

    pub fn solver(&self) -> &DecoupledSolver {
        &self.solver
    }

    /// Loss values at `t` steps (`f64::INFINITY` gives the converged limit).
    pub fn at(&self, t: f64) -> LossPoint {
        let b = self.solver.batch() as f64;
        let n = self.q.nrows().max(1) as f64;
        let g = self.solver.learned_fraction(t);
        let h = self.solver.filter(t);
        let rest = g.mapv(|g| 1.0 - g);

        let train_l_mu = Zip::from(&rest)
            .and(&self.target_coeff)
            .fold(0.0, |acc, &r, a| acc + r * r * a.norm_sqr())
            / b;
        let train_l_gamma = 2.0
            * Zip::from(&rest)
                .and(self.k_tilde.diag())
                .fold(0.0, |acc, &r, &k| acc + r * r * k)
            / b;

        let weighted = Zip::from(&h)
            .and(&self.target_coeff)
            .map_collect(|&h, &a| a * h);
        let (wr, wi) = split(weighted.view());
        let mu = join(self.q.dot(&wr), self.q.dot(&wi));
        let test_l_mu = Zip::from(&mu)
            .and(&self.test_targets)
            .fold(0.0, |acc, m, t| acc + (m - t).norm_sqr())
            / n;
        let hk = &self.k_tilde * &self.q_gram;
        let quad = h.dot(&hk.dot(&h));
        let test_l_gamma = 2.0 * (self.trace_kxx - 2.0 * h.dot(&self.qc_diag) + quad) / n;
        LossPoint {
            train_l_mu,
            train_l_gamma,
            test_l_mu,
            test_l_gamma,
            test_l_total: test_l_mu + test_l_gamma,
        }
    }

    pub fn curves(&self, steps: &[usize]) -> LossCurves {
        LossCurves {
            steps: steps.to_vec(),
            t: steps.iter().map(|&s| s as f64).collect(),
            points: steps.iter().map(|&s| self.at(s as f64)).collect(),
        }
    }

    /// `μ` on the test points at time `t`.
    pub fn mu_test(&self, t: f64) -> Array1<Complex64> {
        let h = self.solver.filter(t);
        let weighted = Zip::from(&h)
            .and(&self.target_coeff)
            .map_collect(|&h, &a| a * h);
        let (wr, wi) = split(weighted.view());
        join(self.q.dot(&wr), self.q.dot(&wi))
    }
}

/// Ensemble losses split against a reference mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDecomposition {
    pub l_mu: f64,
    pub l_gamma: f64,
    pub l_total: f64,
    /// `L_total − L_μ − L_γ`.
    pub cross: f64,
}

/// Split the ensemble loss of predictions `μ + γ_k` against `targets`.
pub fn loss_decomposition(
    mu: ArrayView1<Complex64>,
    gammas: &[Array1<Complex64>],
    targets: ArrayView1<Complex64>,
) -> Result<LossDecomposition> {
    if gammas.is_empty() {
        return Err(Error::Argument("ensemble size K must be at least 1".into()));
    }
    let n = mu.len();
    if targets.len() != n || gammas.iter().any(|g| g.len() != n) {
        return Err(Error::Shape(
            "predictions and targets differ in length".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Argument("no evaluation points".into()));
    }
    let k = gammas.len() as f64;
    let nf = n as f64;
    let l_mu = Zip::from(&mu)
        .and(&targets)
        .fold(0.0, |acc, m, t| acc + (m - t).norm_sqr())
        / nf;
    let l_gamma = gammas
        .iter()
        .map(|g| g.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / (k * nf);
    let l_total = gammas
        .iter()
        .map(|g| {
            Zip::from(&mu)
                .and(&targets)
                .and(g)
                .fold(0.0, |acc, m, t, g| acc + (m + g - t).norm_sqr())
        })
        .sum::<f64>()
        / (k * nf);
    Ok(LossDecomposition {
        l_mu,
        l_gamma,
        l_total,
        cross: l_total - l_mu - l_gamma,
    })
}

/// Empirical split of an ensemble of predictions about its own mean:
/// `L_μ = mean|ψ̄ − T|²`, `L_γ = mean_k mean|ψ_k − ψ̄|²`; these add up to the
/// mean per-member loss.
pub fn ensemble_decomposition(
    predictions: &[Array1<Complex64>],
    targets: ArrayView1<Complex64>,
) -> Result<LossDecomposition> {
    if predictions.is_empty() {
        return Err(Error::Argument("ensemble size K must be at least 1".into()));
    }
    let mut mean = Array1::<Complex64>::zeros(targets.len());
    for p in predictions {
        if p.len() != targets.len() {
            return Err(Error::Shape(
                "predictions and targets differ in length".into(),
            ));
        }
        mean += p;
    }
    mean /= Complex64::new(predictions.len() as f64, 0.0);
    let gammas: Vec<Array1<Complex64>> = predictions.iter().map(|p| p - &mean).collect();
    loss_decomposition(mean.view(), &gammas, targets)
}

/// Swap `M = [[0, 1], [1, 0]]` on the `(ψ, ψ*)` blocks of a vector.
pub fn swap_blocks(v: ArrayView1<Complex64>) -> Array1<Complex64> {
    let n = v.len() / 2;
    let mut out = Array1::zeros(v.len());
    out.slice_mut(s![..n]).assign(&v.slice(s![n..]));
    out.slice_mut(s![n..]).assign(&v.slice(s![..n]));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOdeMethod {
    /// Eigen-modes of `[ΩM]_BB`, with integration as a fallback when the
    /// eigenvector matrix is ill-conditioned.
    Eigen,
    /// Adaptive RK4 with step doubling.
    Integrate,
}

/// Solver for `dΨ/dt = −(η/|B|) [ΩM]_{·B} (Ψ_B − Ψ_T)` on the points
/// `0..n`, of which `0..n_train` form the batch. `Ω` is `2n × 2n` with the
/// `ψ` block first.
#[derive(Debug, Clone)]
pub struct BlockOdeSolver {
    n: usize,
    n_train: usize,
    c: f64,
    /// `[ΩM]` restricted to batch columns, `2n × 2|B|`.
    omega_m_b: Array2<Complex64>,
    modes: Option<(Array1<Complex64>, Array2<Complex64>, Array2<Complex64>)>,
    /// `true` if the eigen path was requested but rejected.
    pub used_fallback: bool,
}

impl BlockOdeSolver {
    pub fn new(
        omega: &Array2<Complex64>,
        n_train: usize,
        eta: f64,
        method: BlockOdeMethod,
    ) -> Result<Self> {
        let (rows, cols) = omega.dim();
        if rows != cols || rows % 2 != 0 {
            return Err(Error::Shape(format!(
                "block kernel must be 2n x 2n, got {rows}x{cols}"
            )));
        }
        let n = rows / 2;
        if n_train == 0 || n_train > n {
            return Err(Error::Argument(format!(
                "batch of {n_train} out of {n} points"
            )));
        }
        let batch_cols: Vec<usize> = (0..2)
            .flat_map(|b| (0..n_train).map(move |x| (1 - b) * n + x))
            .collect();
        let omega_m_b = omega.select(Axis(1), &batch_cols);
        let batch_rows: Vec<usize> = (0..2)
            .flat_map(|a| (0..n_train).map(move |x| a * n + x))
            .collect();
        let a_bb = omega_m_b.select(Axis(0), &batch_rows);
        let mut solver = Self {
            n,
            n_train,
            c: eta / n_train as f64,
            omega_m_b,
            modes: None,
            used_fallback: false,
        };
        if method == BlockOdeMethod::Eigen {
            let (d, s) = linalg::eig_general(&a_bb)?;
            let ok = linalg::inverse_complex(&s).ok().and_then(|s_inv| {
                let rebuilt = (&s * &d.view().insert_axis(Axis(0))).dot(&s_inv);
                let scale = a_bb.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
                let err = Zip::from(&rebuilt)
                    .and(&a_bb)
                    .fold(0.0f64, |m, x, y| m.max((x - y).norm()));
                (err <= 1e-9 * scale).then_some(s_inv)
            });
            match ok {
                Some(s_inv) => solver.modes = Some((d, s, s_inv)),
                None => solver.used_fallback = true,
            }
        }
        Ok(solver)
    }

    fn batch_residual(
        &self,
        psi: &Array1<Complex64>,
        targets: ArrayView1<Complex64>,
    ) -> Array1<Complex64> {
        let b = self.n_train;
        let mut e = Array1::zeros(2 * b);
        for x in 0..b {
            e[x] = psi[x] - targets[x];
            e[b + x] = psi[self.n + x] - targets[x].conj();
        }
        e
    }

    /// `(Ψ(t), Ψ*(t))` on all points. `psi0` holds `ψ(0)` on all points and
    /// `targets` holds `ψ_T` on the batch.
    pub fn solve(
        &self,
        psi0: ArrayView1<Complex64>,
        targets: ArrayView1<Complex64>,
        t: f64,
    ) -> Result<(Array1<Complex64>, Array1<Complex64>)> {
        if psi0.len() != self.n || targets.len() != self.n_train {
            return Err(Error::Shape(
                "initial values or targets have the wrong length".into(),
            ));
        }
        let mut state = Array1::zeros(2 * self.n);
        state.slice_mut(s![..self.n]).assign(&psi0);
        state
            .slice_mut(s![self.n..])
            .assign(&psi0.mapv(|z| z.conj()));
        if t != 0.0 {
            state = match &self.modes {
                Some((d, s, s_inv)) => {
                    let e0 = self.batch_residual(&state, targets);
                    let coeff = s_inv.dot(&e0);
                    let weighted = Zip::from(&coeff).and(d).map_collect(|&a, &dk| {
                        let x = self.c * dk;
                        // (1 − e^{−x t}) / d, continuous at d = 0.
                        let factor = if x.norm() < 1e-14 {
                            Complex64::new(self.c * t, 0.0)
                        } else {
                            -(-x * t).exp_m1_c() / dk
                        };
                        a * factor
                    });
                    &state - &self.omega_m_b.dot(&s.dot(&weighted))
                }
                None => self.integrate(state, targets, t)?,
            };
        }
        let first = state.slice(s![..self.n]).to_owned();
        let second = state.slice(s![self.n..]).to_owned();
        Ok((first, second))
    }

    fn rhs(&self, state: &Array1<Complex64>, targets: ArrayView1<Complex64>) -> Array1<Complex64> {
        self.omega_m_b.dot(&self.batch_residual(state, targets)) * Complex64::new(-self.c, 0.0)
    }

    fn rk4(
        &self,
        y: &Array1<Complex64>,
        targets: ArrayView1<Complex64>,
        h: f64,
    ) -> Array1<Complex64> {
        let hc = Complex64::new(h, 0.0);
        let half = Complex64::new(h / 2.0, 0.0);
        let k1 = self.rhs(y, targets);
        let k2 = self.rhs(&(y + &(&k1 * half)), targets);
        let k3 = self.rhs(&(y + &(&k2 * half)), targets);
        let k4 = self.rhs(&(y + &(&k3 * hc)), targets);
        y + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (hc / 6.0))
    }

    fn integrate(
        &self,
        mut y: Array1<Complex64>,
        targets: ArrayView1<Complex64>,
        t: f64,
    ) -> Result<Array1<Complex64>> {
        const TOL: f64 = 1e-12;
        let mut elapsed = 0.0;
        let mut h = t / 16.0;
        let mut guard = 0usize;
        while elapsed < t {
            guard += 1;
            if guard > 10_000_000 {
                return Err(Error::NotConverged {
                    method: "block ode integration",
                    residual: h,
                });
            }
            h = h.min(t - elapsed);
            let full = self.rk4(&y, targets, h);
            let halfway = self.rk4(&y, targets, h / 2.0);
            let fine = self.rk4(&halfway, targets, h / 2.0);
            let scale = fine.iter().fold(1.0f64, |m, z| m.max(z.norm()));
            let err = Zip::from(&fine)
                .and(&full)
                .fold(0.0f64, |m, a, b| m.max((a - b).norm()))
                / 15.0;
            if err <= TOL * scale {
                // Richardson extrapolation of the two estimates.
                y = &fine + &((&fine - &full) / Complex64::new(15.0, 0.0));
                elapsed += h;
                if err < TOL * scale / 64.0 {
                    h *= 2.0;
                }
            } else {
                h /= 2.0;
                if h < t * 1e-14 {
                    return Err(Error::NotConverged {
                        method: "block ode integration",
                        residual: err,
                    });
                }
            }
        }
        Ok(y)
    }
}

trait ExpM1C {
    fn exp_m1_c(self) -> Complex64;
}

impl ExpM1C for Complex64 {
    /// `e^z − 1`, accurate for small `|z|`.
    fn exp_m1_c(self) -> Complex64 {
        if self.norm() < 1e-5 {
            self + self * self / 2.0 + self * self * self / 6.0
        } else {
            self.exp() - 1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{assemble_qsntk, empirical_real_grams};
    use crate::nnqs::ComplexNnqs;
    use crate::rng::stream_rng;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_psd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0);
        let a = Array2::from_shape_fn((n, n + 2), |_| StandardNormal.sample(&mut rng));
        a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1
    }

    fn random_vec(n: usize, seed: u64) -> Array1<f64> {
        let mut rng = stream_rng(seed, 1);
        Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(record_schedule(0), vec![0]);
        assert_eq!(record_schedule(5), vec![0, 1, 2, 3, 4, 5]);
        let s = record_schedule(10_000);
        assert_eq!(s[..101], (0..=100).collect::<Vec<_>>()[..]);
        assert_eq!(*s.last().unwrap(), 10_000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.len() > 190 && s.len() < 210, "{}", s.len());
    }

    #[test]
    fn log_grid() {
        let g = log_time_grid(1.0, 1e4, 50).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g[0] - 1.0).abs() < 1e-12 && (g[200] - 1e4).abs() < 1e-8);
        assert!(log_time_grid(0.0, 1.0, 5).is_err());
    }

    #[test]
    fn scalar_case() {
        let lambda = 3.0;
        let eta = 0.2;
        let gram = array![[lambda]];
        let s = DecoupledSolver::new(gram.view(), eta, TimeModel::GradientFlow).unwrap();
        let target = array![1.7];
        for t in [0.0, 0.5, 4.0] {
            let mu = s.mu_train(target.view(), t).unwrap()[0];
            let expected = (1.0 - (-2.0 * eta * lambda * t).exp()) * 1.7;
            assert!((mu - expected).abs() < 1e-14);
        }
        assert_eq!(s.mu_train(target.view(), 0.0).unwrap()[0], 0.0);
        let discrete = DecoupledSolver::new(gram.view(), eta, TimeModel::DiscreteSteps).unwrap();
        let mu = discrete.mu_train(target.view(), 3.0).unwrap()[0];
        assert!((mu - (1.0 - (1.0 - 2.0 * eta * lambda).powi(3)) * 1.7).abs() < 1e-14);
    }

    #[test]
    fn discrete_model_matches_gradient_descent_iterates() {
        let gram = random_psd(6, 3);
        let target = random_vec(6, 4);
        let eta = 0.5 * 6.0 / linalg::sym_eigvals(gram.view()).unwrap()[5];
        let s = DecoupledSolver::new(gram.view(), eta, TimeModel::DiscreteSteps).unwrap();
        let mut f = Array1::<f64>::zeros(6);
        for _ in 0..7 {
            f = &f - &(gram.dot(&(&f - &target)) * (2.0 * eta / 6.0));
        }
        let mu = s.mu_train(target.view(), 7.0).unwrap();
        for (a, b) in f.iter().zip(mu.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn train_limit_reproduces_targets() {
        let gram = random_psd(8, 1);
        let target = random_vec(8, 2);
        let s = DecoupledSolver::new(gram.view(), 0.1, TimeModel::GradientFlow).unwrap();
        let mu = s.mu_train(target.view(), f64::INFINITY).unwrap();
        for (a, b) in mu.iter().zip(target.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let g = s
            .gamma_train(random_vec(8, 5).view(), f64::INFINITY)
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        // μ_test with the train Gram as cross Gram agrees with μ_train.
        let via_test = s.mu_test(gram.view(), target.view(), 2.0).unwrap();
        let direct = s.mu_train(target.view(), 2.0).unwrap();
        for (a, b) in via_test.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_boundary_cases() {
        let gram = random_psd(5, 7);
        let cross = random_psd(5, 8).slice(s![..3, ..]).to_owned();
        let s = DecoupledSolver::new(gram.view(), 0.3, TimeModel::GradientFlow).unwrap();
        let zeros = Array1::zeros(5);
        let g = s
            .gamma_test(cross.view(), Array1::zeros(3).view(), zeros.view(), 1.5)
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let init_x = random_vec(3, 1);
        let g0 = s
            .gamma_test(cross.view(), init_x.view(), random_vec(5, 2).view(), 0.0)
            .unwrap();
        assert_eq!(g0, init_x);
    }

    #[test]
    fn singular_gram_is_cut_and_reported() {
        let v = array![1.0, 2.0, -1.0];
        let gram = ndarray::Array2::from_shape_fn((3, 3), |(i, j)| v[i] * v[j]);
        let s = DecoupledSolver::new(gram.view(), 0.1, TimeModel::GradientFlow).unwrap();
        assert_eq!(s.n_cut(), 2);
        assert!(matches!(s.require_pd(), Err(Error::Conditioning { .. })));
        let mu = s.mu_train(v.view(), f64::INFINITY).unwrap();
        for (a, b) in mu.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Brute-force expected losses from explicit sums over points.
    #[test]
    fn analytic_losses_match_direct_sums() {
        let (b, n) = (6, 4);
        let joint_theta = random_psd(b + n, 11);
        let joint_k = random_psd(b + n, 12);
        let theta_bb = joint_theta.slice(s![..b, ..b]).to_owned();
        let theta_xb = joint_theta.slice(s![b.., ..b]).to_owned();
        let k_bb = joint_k.slice(s![..b, ..b]).to_owned();
        let k_xb = joint_k.slice(s![b.., ..b]).to_owned();
        let k_xx = joint_k.slice(s![b.., b..]).to_owned();
        let tr = join(random_vec(b, 1), random_vec(b, 2));
        let te = join(random_vec(n, 3), random_vec(n, 4));
        let eta = 0.05;
        let model = AnalyticLosses::new(
            AnalyticKernels {
                theta_bb: theta_bb.view(),
                theta_xb: theta_xb.view(),
                k_bb: k_bb.view(),
                k_xb: k_xb.view(),
                k_xx_diag: k_xx.diag(),
            },
            tr.view(),
            te.view(),
            eta,
            TimeModel::GradientFlow,
        )
        .unwrap();
        let s = DecoupledSolver::new(theta_bb.view(), eta, TimeModel::GradientFlow).unwrap();
        for t in [0.0, 3.0, 40.0, f64::INFINITY] {
            let p = model.at(t);
            // Mean parts from explicit μ.
            let (trr, tri) = split(tr.view());
            let mu_b = join(
                s.mu_train(trr.view(), t).unwrap(),
                s.mu_train(tri.view(), t).unwrap(),
            );
            let l_mu_b = (&mu_b - &tr).iter().map(|z| z.norm_sqr()).sum::<f64>() / b as f64;
            let mu_x = join(
                s.mu_test(theta_xb.view(), trr.view(), t).unwrap(),
                s.mu_test(theta_xb.view(), tri.view(), t).unwrap(),
            );
            let l_mu_x = (&mu_x - &te).iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
            assert!((p.train_l_mu - l_mu_b).abs() < 1e-10 * l_mu_b.max(1.0));
            assert!((p.test_l_mu - l_mu_x).abs() < 1e-10 * l_mu_x.max(1.0));
            // Variance parts: γ = P f(0) is linear in f(0) with
            // P = [ -A | I ] on (B, x); E|γ|² = 2 diag(P K Pᵀ).
            let v = &s.eig.vectors;
            let h = s.filter(t);
            let a_test = theta_xb
                .dot(&(v * &h.view().insert_axis(Axis(0))))
                .dot(&v.t());
            let a_train = v
                .dot(&Array2::from_diag(&s.learned_fraction(t)))
                .dot(&v.t());
            let var = |a: &Array2<f64>, kxx: &Array2<f64>, kxb: &Array2<f64>| {
                let m = kxx - &a.dot(&kxb.t()) - &kxb.dot(&a.t()) + &a.dot(&k_bb).dot(&a.t());
                2.0 * m.diag().sum() / m.nrows() as f64
            };
            let g_test = var(&a_test, &k_xx, &k_xb);
            let g_train = var(&a_train, &k_bb, &k_bb);
            assert!(
                (p.test_l_gamma - g_test).abs() < 1e-9 * g_test.max(1.0),
                "{t}"
            );
            assert!(
                (p.train_l_gamma - g_train).abs() < 1e-9 * g_train.max(1.0),
                "{t}"
            );
        }
        let lim = model.at(f64::INFINITY);
        assert!(lim.train_l_mu < 1e-18 && lim.train_l_gamma.abs() < 1e-12);
    }

    #[test]
    fn train_mu_loss_is_non_increasing() {
        let gram = random_psd(10, 21);
        let k = random_psd(10, 22);
        let tr = join(random_vec(10, 1), random_vec(10, 2));
        let empty = Array2::<f64>::zeros((0, 10));
        let model = AnalyticLosses::new(
            AnalyticKernels {
                theta_bb: gram.view(),
                theta_xb: empty.view(),
                k_bb: k.view(),
                k_xb: empty.view(),
                k_xx_diag: Array1::zeros(0).view(),
            },
            tr.view(),
            Array1::zeros(0).view(),
            0.01,
            TimeModel::GradientFlow,
        )
        .unwrap();
        let losses: Vec<f64> = log_time_grid(1.0, 1e5, 20)
            .unwrap()
            .iter()
            .map(|&t| model.at(t).train_l_mu)
            .collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn decomposition_identities() {
        let targets = join(random_vec(5, 1), random_vec(5, 2));
        let mu = join(random_vec(5, 3), random_vec(5, 4));
        assert!(matches!(
            loss_decomposition(mu.view(), &[], targets.view()),
            Err(Error::Argument(_))
        ));
        let gammas: Vec<_> = (0..3)
            .map(|k| join(random_vec(5, 10 + k), random_vec(5, 20 + k)))
            .collect();
        let d = loss_decomposition(mu.view(), &gammas, targets.view()).unwrap();
        assert!((d.l_total - d.l_mu - d.l_gamma - d.cross).abs() < 1e-12);
        let preds: Vec<_> = gammas.iter().map(|g| &mu + g).collect();
        let e = ensemble_decomposition(&preds, targets.view()).unwrap();
        assert!(e.cross.abs() < 1e-12);
        assert!((e.l_total - d.l_total).abs() < 1e-12);
    }

    #[test]
    fn cross_term_shrinks_with_ensemble_size() {
        let targets = join(random_vec(20, 1), random_vec(20, 2));
        let mu = join(random_vec(20, 3), random_vec(20, 4));
        let cross = |k: u64| {
            let gammas: Vec<_> = (0..k)
                .map(|i| join(random_vec(20, 100 + i), random_vec(20, 5000 + i)))
                .collect();
            loss_decomposition(mu.view(), &gammas, targets.view())
                .unwrap()
                .cross
                .abs()
        };
        assert!(cross(4000) < cross(1));
        assert!(cross(4000) < 0.1);
    }

    fn block_setup(seed: u64, shared: bool) -> (Array2<Complex64>, ComplexNnqs, Array2<f64>) {
        let width = 12;
        let c = if shared {
            ComplexNnqs::init_shared_hidden(width, 3, seed).unwrap()
        } else {
            ComplexNnqs::init_disjoint(width, 3, seed).unwrap()
        };
        let mut rng = stream_rng(seed, 7);
        let xs = Array2::from_shape_fn((7, 3), |_| StandardNormal.sample(&mut rng));
        let q = assemble_qsntk(&empirical_real_grams(&c, xs.view(), xs.view()).unwrap()).unwrap();
        (q.omega, c, xs)
    }

    #[test]
    fn block_ode_matches_decoupled_solution() {
        let (omega, c, xs) = block_setup(3, false);
        let n_train = 4;
        let eta = 0.3;
        let psi0 = c.values_batch(xs.view()).unwrap();
        let targets = join(random_vec(n_train, 1), random_vec(n_train, 2));
        let solver = BlockOdeSolver::new(&omega, n_train, eta, BlockOdeMethod::Eigen).unwrap();
        assert!(!solver.used_fallback);
        let grams = empirical_real_grams(&c, xs.view(), xs.view()).unwrap();
        let dec = ComplexDecoupled::new(
            grams.theta1.slice(s![..n_train, ..n_train]),
            grams.theta2.slice(s![..n_train, ..n_train]),
            eta,
            TimeModel::GradientFlow,
        )
        .unwrap();
        for t in [0.0, 0.7, 5.0, 60.0] {
            let (psi, psi_conj) = solver.solve(psi0.view(), targets.view(), t).unwrap();
            let mu = dec
                .mu(
                    grams.theta1.slice(s![.., ..n_train]),
                    grams.theta2.slice(s![.., ..n_train]),
                    targets.view(),
                    t,
                )
                .unwrap();
            let gamma = dec
                .gamma(
                    grams.theta1.slice(s![.., ..n_train]),
                    grams.theta2.slice(s![.., ..n_train]),
                    psi0.view(),
                    psi0.slice(s![..n_train]),
                    t,
                )
                .unwrap();
            for x in 0..7 {
                assert!((psi[x] - (mu[x] + gamma[x])).norm() < 1e-10, "t={t} x={x}");
                assert!((psi_conj[x] - psi[x].conj()).norm() < 1e-12);
            }
            if t == 0.0 {
                assert_eq!(psi, psi0);
            }
        }
    }

    #[test]
    fn eigen_modes_match_direct_integration() {
        let (omega, c, xs) = block_setup(5, true);
        let psi0 = c.values_batch(xs.view()).unwrap();
        let targets = join(random_vec(5, 3), random_vec(5, 4));
        let eig = BlockOdeSolver::new(&omega, 5, 0.2, BlockOdeMethod::Eigen).unwrap();
        let ode = BlockOdeSolver::new(&omega, 5, 0.2, BlockOdeMethod::Integrate).unwrap();
        for t in [0.3, 2.0, 9.0] {
            let (a, a_conj) = eig.solve(psi0.view(), targets.view(), t).unwrap();
            let (b, _) = ode.solve(psi0.view(), targets.view(), t).unwrap();
            for x in 0..7 {
                assert!((a[x] - b[x]).norm() < 1e-8);
                assert!((a_conj[x] - a[x].conj()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn swap_is_involution() {
        let v = join(random_vec(6, 1), random_vec(6, 2));
        assert_eq!(swap_blocks(swap_blocks(v.view()).view()), v);
    }
}
