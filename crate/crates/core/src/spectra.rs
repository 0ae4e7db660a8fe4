//! Positive-definiteness checks for kernels: the Gauss-net kernel and its
//! explicit features, Gram certification, a numerical Bochner test for 1-d
//! translation-invariant profiles and random-Fourier-feature composition.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::entropy::McEstimate;
use crate::error::{Error, Result};
use crate::kernel::{analytic_ntk, KernelHyperparams};
use crate::linalg;
use crate::rng::stream_rng;

/// Relative jitter: a Gram is PD when its smallest eigenvalue exceeds
/// `DEFAULT_PD_JITTER · trace / n`.
pub const DEFAULT_PD_JITTER: f64 = 1e-10;
/// Largest profile magnitude tolerated at the edge of a decaying grid.
pub const EDGE_DECAY: f64 = 1e-8;
/// Spectral values above `−tol · max|S|` count as non-negative.
pub const DEFAULT_BOCHNER_TOL: f64 = 1e-10;
/// Largest asymmetry `|k(x,y) − k(y,x)|` accepted when assembling a Gram.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// `exp(−σ²|x−y|²/(2d))` with `d` the input dimension.
pub fn gaussnet_kernel(x: ArrayView1<f64>, y: ArrayView1<f64>, sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-0.5 * sigma * sigma * d2 / x.len() as f64).exp()
}

/// Hidden feature `g(x) = exp(W⁰·x) / sqrt(exp(2σ²|x|²/d))` for one row
/// `W⁰` of first-layer weights.
pub fn gaussnet_feature(w0: ArrayView1<f64>, x: ArrayView1<f64>, sigma: f64) -> f64 {
    let d = x.len() as f64;
    (w0.dot(&x) - sigma * sigma * x.dot(&x) / d).exp()
}

/// Finite Gauss-net `f(x) = N^{-1/2} Σ_j W_j g_j(x)` with
/// `W⁰_jk ~ N(0, σ²/d)` and `W_j ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussNet {
    pub sigma: f64,
    pub w0: Array2<f64>,
    pub w: Array1<f64>,
}

impl GaussNet {
    pub fn init(width: usize, input_dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        if width == 0 || input_dim == 0 {
            return Err(Error::Argument(
                "Gauss-net width and input dimension must be positive".into(),
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Argument(format!("σ must be positive, got {sigma}")));
        }
        let mut rng = stream_rng(seed, 0);
        let normal = Normal::new(0.0, sigma / (input_dim as f64).sqrt()).expect("positive scale");
        let w0 = Array2::from_shape_fn((width, input_dim), |_| normal.sample(&mut rng));
        let w = Array1::from_shape_fn(width, |_| StandardNormal.sample(&mut rng));
        Ok(Self { sigma, w0, w })
    }

    pub fn width(&self) -> usize {
        self.w.len()
    }

    pub fn features(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.w0
            .rows()
            .into_iter()
            .map(|w0| gaussnet_feature(w0, x, self.sigma))
            .collect()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> f64 {
        self.features(x).dot(&self.w) / (self.width() as f64).sqrt()
    }

    /// Tangent kernel with respect to the last layer only,
    /// `N^{-1} Σ_j g_j(x) g_j(y)`.
    pub fn frozen_ntk(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        self.features(x).dot(&self.features(y)) / self.width() as f64
    }
}

/// Monte Carlo estimate of `E[g(x) g(y)]` over `n_draws` independent
/// first-layer rows.
pub fn gaussnet_mc_kernel(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    sigma: f64,
    n_draws: usize,
    seed: u64,
) -> Result<McEstimate> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "inputs of lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if n_draws < 2 {
        return Err(Error::Argument("at least two draws are required".into()));
    }
    let d = x.len();
    let normal =
        Normal::new(0.0, sigma / (d as f64).sqrt()).map_err(|e| Error::Argument(e.to_string()))?;
    const CHUNK: usize = 1 << 14;
    let n_chunks = n_draws.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut w0 = Array1::zeros(d);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in c * CHUNK..((c + 1) * CHUNK).min(n_draws) {
                w0.mapv_inplace(|_| normal.sample(&mut rng));
                let v =
                    gaussnet_feature(w0.view(), x, sigma) * gaussnet_feature(w0.view(), y, sigma);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let n = n_draws as f64;
    let s: f64 = partial.iter().map(|p| p.0).sum();
    let s2: f64 = partial.iter().map(|p| p.1).sum();
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        stderr: Some((var / n).sqrt()),
        n_samples: n_draws,
        resampled: 0,
    })
}

/// Gram matrix `K[i, j] = k(p_i, p_j)` over the rows of `points`.
///
/// Fails if the kernel is not symmetric on the points.
pub fn gram_matrix<K>(kernel: K, points: ArrayView2<f64>) -> Result<Array2<f64>>
where
    K: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64 + Sync,
{
    let n = points.nrows();
    let mut gram = Array2::zeros((n, n));
    gram.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = kernel(points.row(i), points.row(j));
            }
        });
    let scale = gram.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = linalg::asymmetry(gram.view());
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Domain(format!(
            "kernel is not symmetric (max deviation {asym:.3e})"
        )));
    }
    Ok(gram)
}

/// Smallest Gram eigenvalue against the jitter threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdCheck {
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub is_pd: bool,
}

/// PD verdict for an assembled Gram; the threshold is
/// `rel_jitter · trace / n`.
pub fn gram_pd_check_matrix(gram: ArrayView2<f64>, rel_jitter: f64) -> Result<PdCheck> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(Error::Shape(format!(
            "Gram of shape {:?} is not square and non-empty",
            gram.dim()
        )));
    }
    let min_eigenvalue = linalg::sym_eigvals(gram)?[0];
    let threshold = rel_jitter * gram.diag().sum() / n as f64;
    Ok(PdCheck {
        min_eigenvalue,
        threshold,
        is_pd: min_eigenvalue > threshold,
    })
}

pub fn gram_pd_check<K>(kernel: K, points: ArrayView2<f64>, rel_jitter: f64) -> Result<PdCheck>
where
    K: Fn(ArrayView1<f64>, ArrayView1<f64>) -> f64 + Sync,
{
    gram_pd_check_matrix(gram_matrix(kernel, points)?.view(), rel_jitter)
}

/// `n_points` independent standard normal points in `ℝ^dim`.
pub fn gaussian_points(n_points: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 7);
    Array2::from_shape_fn((n_points, dim), |_| StandardNormal.sample(&mut rng))
}

/// `n_points` independent uniform points on the unit sphere in `ℝ^dim`.
pub fn unit_sphere_points(n_points: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut pts: Array2<f64> =
        Array2::from_shape_fn((n_points, dim), |_| StandardNormal.sample(&mut rng));
    for mut row in pts.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    pts
}

/// PD check of the analytic ReLU network tangent kernel restricted to
/// random unit-sphere points.
pub fn relu_ntk_sphere_check(
    n_points: usize,
    dim: usize,
    seed: u64,
    rel_jitter: f64,
) -> Result<PdCheck> {
    let pts = unit_sphere_points(n_points, dim, seed);
    let gram = analytic_ntk(pts.view(), pts.view(), KernelHyperparams::default())?;
    gram_pd_check_matrix(gram.view(), rel_jitter)
}

/// Sampling grid for [`bochner_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileGrid {
    /// `2·n_half` points on `[−half_width, half_width)`; the profile must
    /// have decayed below [`EDGE_DECAY`] at both ends.
    Decaying { half_width: f64, n_half: usize },
    /// `n` points on one period `[0, period)` of a periodic profile.
    Periodic { period: f64, n: usize },
}

/// Discrete spectrum of a 1-d profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BochnerReport {
    /// Angular frequencies in FFT order.
    pub frequencies: Vec<f64>,
    pub spectrum: Vec<f64>,
    pub min_spectral_density: f64,
    pub max_spectral_density: f64,
    pub verdict: bool,
}

/// Fourier transform of an even profile `k(τ)` sampled on `grid`; the
/// profile is PSD-consistent when no spectral value falls below
/// `−tol · max|S|`.
pub fn bochner_check<F: Fn(f64) -> f64>(
    profile: F,
    grid: ProfileGrid,
    tol: f64,
) -> Result<BochnerReport> {
    let (samples, step) = match grid {
        ProfileGrid::Decaying { half_width, n_half } => {
            if n_half == 0 || !(half_width > 0.0) {
                return Err(Error::Argument(
                    "decaying grid needs a positive half width and size".into(),
                ));
            }
            let edge = profile(-half_width).abs().max(profile(half_width).abs());
            if !(edge < EDGE_DECAY) {
                return Err(Error::Domain(format!(
                    "profile is {edge:.3e} at |τ| = {half_width}, above the truncation limit {EDGE_DECAY:e}"
                )));
            }
            let h = half_width / n_half as f64;
            let n = 2 * n_half;
            let samples: Vec<f64> = (0..n)
                .map(|j| {
                    if j < n_half {
                        profile(j as f64 * h)
                    } else {
                        profile((j as f64 - n as f64) * h)
                    }
                })
                .collect();
            (samples, h)
        }
        ProfileGrid::Periodic { period, n } => {
            if n == 0 || !(period > 0.0) {
                return Err(Error::Argument(
                    "periodic grid needs a positive period and size".into(),
                ));
            }
            let (k0, kt) = (profile(0.0), profile(period));
            if (k0 - kt).abs() > EDGE_DECAY * k0.abs().max(1.0) {
                return Err(Error::Domain(format!(
                    "profile is not periodic with period {period}: k(0) = {k0}, k(T) = {kt}"
                )));
            }
            let h = period / n as f64;
            ((0..n).map(|j| profile(j as f64 * h)).collect(), h)
        }
    };
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = buf.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let odd = buf.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    if odd > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "profile is not even (odd spectral part {odd:.3e})"
        )));
    }
    let spectrum: Vec<f64> = buf.iter().map(|z| z.re * step).collect();
    let span = n as f64 * step;
    let frequencies = (0..n)
        .map(|m| {
            let m = if m <= n / 2 {
                m as f64
            } else {
                m as f64 - n as f64
            };
            2.0 * PI * m / span
        })
        .collect();
    let min = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let max = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bound = tol * spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BochnerReport {
        frequencies,
        spectrum,
        min_spectral_density: min,
        max_spectral_density: max,
        verdict: min >= -bound,
    })
}

/// Random Fourier features `γ(v) = (a_k cos(2π b_k·v), a_k sin(2π b_k·v))_k`.
///
/// `γ(v)·γ(v) = Σ a_k²` for every `v` and `γ(v₁)·γ(v₂) = h_γ(v₁ − v₂)` with
/// `h_γ(τ) = Σ a_k² cos(2π b_k·τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    pub amplitudes: Array1<f64>,
    /// Row `k` is `b_k`.
    pub frequencies: Array2<f64>,
}

impl RffMap {
    pub fn new(amplitudes: Array1<f64>, frequencies: Array2<f64>) -> Result<Self> {
        if amplitudes.len() != frequencies.nrows() || amplitudes.is_empty() {
            return Err(Error::Shape(format!(
                "{} amplitudes for {} frequency rows",
                amplitudes.len(),
                frequencies.nrows()
            )));
        }
        Ok(Self {
            amplitudes,
            frequencies,
        })
    }

    /// `d` features on `ℝ^d` with `a_k = 1/√d` and `b_k ~ N(0, I)`, so that
    /// `γ` maps onto the unit sphere.
    pub fn sample(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Argument("input dimension must be positive".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let b = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
        Self::new(Array1::from_elem(d, 1.0 / (d as f64).sqrt()), b)
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.amplitudes.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.dot(&self.amplitudes)
    }

    pub fn features(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.output_dim());
        for (k, (a, b)) in self
            .amplitudes
            .iter()
            .zip(self.frequencies.rows())
            .enumerate()
        {
            let phase = 2.0 * PI * b.dot(&v);
            out[2 * k] = a * phase.cos();
            out[2 * k + 1] = a * phase.sin();
        }
        out
    }

    pub fn profile(&self, tau: ArrayView1<f64>) -> f64 {
        self.amplitudes
            .iter()
            .zip(self.frequencies.rows())
            .map(|(a, b)| a * a * (2.0 * PI * b.dot(&tau)).cos())
            .sum()
    }
}

/// Scalar function `h_g` of a dot-product kernel `g(u, w) = h_g(u·w)`,
/// defined on a closed interval.
#[derive(Clone)]
pub struct DotProductProfile {
    pub name: String,
    pub domain: (f64, f64),
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for DotProductProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DotProductProfile")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

impl DotProductProfile {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(
        name: &str,
        domain: (f64, f64),
        f: F,
    ) -> Self {
        Self {
            name: name.to_owned(),
            domain,
            f: Arc::new(f),
        }
    }

    pub fn identity() -> Self {
        Self::new("identity", (f64::NEG_INFINITY, f64::INFINITY), |c| c)
    }

    /// First-order arc-cosine kernel of unit vectors,
    /// `(sin θ + (π − θ) cos θ)/π` with `cos θ = c`.
    pub fn arccos1() -> Self {
        Self::new("arccos1", (-1.0, 1.0), |c| {
            let c = c.clamp(-1.0, 1.0);
            let theta = c.acos();
            (theta.sin() + (PI - theta) * c) / PI
        })
    }

    pub fn eval(&self, c: f64) -> f64 {
        (self.f)(c)
    }
}

/// Kernel `h_g(γ(v₁)·γ(v₂)) = h_g(h_γ(v₁ − v₂))`.
#[derive(Debug, Clone)]
pub struct ComposedKernel {
    pub rff: RffMap,
    pub outer: DotProductProfile,
}

/// Compose a dot-product kernel with random Fourier features. Fails when
/// `h_g` is not defined on the range `[−Σa², Σa²]` of `h_γ`.
pub fn rff_compose(rff: RffMap, outer: DotProductProfile) -> Result<ComposedKernel> {
    let r = rff.norm_sq();
    let (lo, hi) = outer.domain;
    let slack = 1e-12 * r.max(1.0);
    if -r < lo - slack || r > hi + slack {
        return Err(Error::Domain(format!(
            "{} is defined on [{lo}, {hi}] but the feature dot products range over [{}, {r}]",
            outer.name, -r
        )));
    }
    Ok(ComposedKernel { rff, outer })
}

impl ComposedKernel {
    pub fn eval_tau(&self, tau: ArrayView1<f64>) -> f64 {
        self.outer.eval(self.rff.profile(tau))
    }

    pub fn eval(&self, v1: ArrayView1<f64>, v2: ArrayView1<f64>) -> f64 {
        self.eval_tau((&v1 - &v2).view())
    }

    pub fn eval_features(&self, v1: ArrayView1<f64>, v2: ArrayView1<f64>) -> f64 {
        self.outer
            .eval(self.rff.features(v1).dot(&self.rff.features(v2)))
    }
}

/// Serialized PD verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdReport {
    pub kernel: String,
    pub n_points: usize,
    pub min_eig: f64,
    pub verdict: bool,
}

impl PdReport {
    pub fn new(kernel: &str, n_points: usize, check: &PdCheck) -> Self {
        Self {
            kernel: kernel.to_owned(),
            n_points,
            min_eig: check.min_eigenvalue,
            verdict: check.is_pd,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        gaussian_points(n, d, seed)
    }

    #[test]
    fn gaussnet_kernel_values() {
        let x = array![0.3, -1.2, 2.0];
        assert_eq!(gaussnet_kernel(x.view(), x.view(), 1.7), 1.0);
        // |x − y|² = 2d/σ² gives e^{-1}.
        let sigma: f64 = 2.0;
        let d: f64 = 3.0;
        let shift = (2.0 * d / (sigma * sigma) / d).sqrt();
        let y = &x + shift;
        assert!((gaussnet_kernel(x.view(), y.view(), sigma) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussnet_kernel_matches_feature_average() {
        let pts = random_points(2, 12, 3);
        for sigma in [0.5, 1.0] {
            let exact = gaussnet_kernel(pts.row(0), pts.row(1), sigma);
            let est = gaussnet_mc_kernel(pts.row(0), pts.row(1), sigma, 1_000_000, 4).unwrap();
            assert!(
                est.z_score(exact).unwrap() < 3.0,
                "σ={sigma}: {exact} vs {est:?}"
            );
        }
    }

    #[test]
    fn frozen_ntk_is_the_feature_average() {
        let net = GaussNet::init(20_000, 4, 0.8, 1).unwrap();
        let pts = random_points(3, 4, 2) * 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let (x, y) = (pts.row(i), pts.row(j));
                let exact = gaussnet_kernel(x, y, 0.8);
                assert!((net.frozen_ntk(x, y) - exact).abs() < 0.05, "{i}{j}");
            }
        }
        // The last-layer gradient is g/√N, so its self inner product is the
        // frozen kernel.
        let x = pts.row(0);
        let grad = net.features(x) / (net.width() as f64).sqrt();
        assert!((grad.dot(&grad) - net.frozen_ntk(x, x)).abs() < 1e-12);
        assert!(net.forward(x).is_finite());
    }

    #[test]
    fn gaussnet_gram_on_random_points_is_pd() {
        let pts = random_points(100, 12, 5);
        let check = gram_pd_check(
            |x, y| gaussnet_kernel(x, y, 1.0),
            pts.view(),
            DEFAULT_PD_JITTER,
        )
        .unwrap();
        assert!(check.is_pd && check.min_eigenvalue > 0.0, "{check:?}");
    }

    #[test]
    fn rank_one_kernel_is_not_pd() {
        let pts = random_points(5, 3, 1);
        let check = gram_pd_check(|x, y| x.sum() * y.sum(), pts.view(), DEFAULT_PD_JITTER).unwrap();
        assert!(!check.is_pd);
        assert!(
            check.min_eigenvalue.abs() <= check.threshold.max(1e-12),
            "{check:?}"
        );
    }

    #[test]
    fn duplicated_point_is_flagged() {
        let mut pts = random_points(6, 3, 2);
        let first = pts.row(0).to_owned();
        pts.row_mut(5).assign(&first);
        let check = gram_pd_check(
            |x, y| gaussnet_kernel(x, y, 1.0),
            pts.view(),
            DEFAULT_PD_JITTER,
        )
        .unwrap();
        assert!(!check.is_pd, "{check:?}");
    }

    #[test]
    fn asymmetric_kernel_is_rejected() {
        let pts = random_points(4, 2, 3);
        assert!(matches!(
            gram_matrix(|x, y| x[0] - 2.0 * y[0], pts.view()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn relu_ntk_is_pd_on_the_sphere() {
        let check = relu_ntk_sphere_check(60, 5, 11, DEFAULT_PD_JITTER).unwrap();
        assert!(check.is_pd, "{check:?}");
    }

    #[test]
    fn gaussian_profile_has_positive_spectrum() {
        let grid = ProfileGrid::Decaying {
            half_width: 12.0,
            n_half: 256,
        };
        let r = bochner_check(|t| (-0.5 * t * t).exp(), grid, DEFAULT_BOCHNER_TOL).unwrap();
        assert!(r.verdict);
        // Self-dual: the transform is √(2π) e^{-p²/2}.
        for (p, s) in r.frequencies.iter().zip(&r.spectrum) {
            assert!(
                (s - (2.0 * PI).sqrt() * (-0.5 * p * p).exp()).abs() < 1e-10,
                "p={p}"
            );
        }
    }

    #[test]
    fn cosine_profile_has_two_spikes() {
        let grid = ProfileGrid::Periodic {
            period: 2.0 * PI,
            n: 64,
        };
        let r = bochner_check(f64::cos, grid, DEFAULT_BOCHNER_TOL).unwrap();
        assert!(r.verdict);
        let spikes: Vec<f64> = r
            .frequencies
            .iter()
            .zip(&r.spectrum)
            .filter(|(_, s)| s.abs() > 1e-9)
            .map(|(p, s)| {
                assert!((s - PI).abs() < 1e-12);
                *p
            })
            .collect();
        assert_eq!(spikes.len(), 2);
        assert!(spikes.iter().all(|p| (p.abs() - 1.0).abs() < 1e-12));
        let err = bochner_check(
            f64::cos,
            ProfileGrid::Decaying {
                half_width: 10.0,
                n_half: 64,
            },
            1e-10,
        );
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn signed_measure_profile_is_rejected() {
        // (1 − aτ²)e^{−τ²/2} transforms to √(2π)e^{−p²/2}((1 − a) + a p²),
        // negative near p = 0 once a > 1.
        let a = 2.0;
        let grid = ProfileGrid::Decaying {
            half_width: 14.0,
            n_half: 512,
        };
        let r = bochner_check(
            |t| (1.0 - a * t * t) * (-0.5 * t * t).exp(),
            grid,
            DEFAULT_BOCHNER_TOL,
        )
        .unwrap();
        assert!(!r.verdict);
        assert!(
            (r.min_spectral_density + (2.0 * PI).sqrt() * (a - 1.0)).abs() < 1e-9,
            "{}",
            r.min_spectral_density
        );
        let r1 = bochner_check(|t| (1.0 - t * t) * (-0.5 * t * t).exp(), grid, 1e-9).unwrap();
        assert!(r1.verdict, "{}", r1.min_spectral_density);
    }

    #[test]
    fn odd_profile_is_rejected() {
        let grid = ProfileGrid::Decaying {
            half_width: 12.0,
            n_half: 64,
        };
        assert!(bochner_check(|t| t * (-t * t).exp(), grid, 1e-10).is_err());
    }

    #[test]
    fn rff_identity_and_origin() {
        let rff = RffMap::sample(4, 2).unwrap();
        let k = rff_compose(rff.clone(), DotProductProfile::identity()).unwrap();
        let tau = array![0.1, -0.4, 0.25, 0.0];
        assert!((k.eval_tau(tau.view()) - rff.profile(tau.view())).abs() < 1e-15);
        let zero = Array1::zeros(4);
        assert!((k.eval_tau(zero.view()) - rff.norm_sq()).abs() < 1e-15);
        assert!((rff.norm_sq() - 1.0).abs() < 1e-15);
        assert_eq!(rff.output_dim(), 8);
    }

    #[test]
    fn rff_outer_domain_is_enforced() {
        let rff = RffMap::new(array![1.0, 1.0], array![[0.3], [0.7]]).unwrap();
        assert!(matches!(
            rff_compose(rff, DotProductProfile::arccos1()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pd_report_json_fields() {
        let r = PdReport::new(
            "gaussnet",
            10,
            &PdCheck {
                min_eigenvalue: 0.1,
                threshold: 1e-10,
                is_pd: true,
            },
        );
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kernel"], "gaussnet");
        assert_eq!(v["n_points"], 10);
        assert_eq!(v["verdict"], true);
        assert!(v.get("min_eig").is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rff_features_live_on_a_sphere(seed in any::<u64>(), v in proptest::collection::vec(-3.0f64..3.0, 5)) {
            let rff = RffMap::sample(5, seed).unwrap();
            let g = rff.features(Array1::from(v).view());
            prop_assert!((g.dot(&g) - rff.norm_sq()).abs() < 1e-12);
        }

        #[test]
        fn composed_kernel_routes_agree_and_are_shift_invariant(
            seed in any::<u64>(),
            v1 in proptest::collection::vec(-2.0f64..2.0, 3),
            v2 in proptest::collection::vec(-2.0f64..2.0, 3),
            shift in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let k = rff_compose(RffMap::sample(3, seed).unwrap(), DotProductProfile::arccos1()).unwrap();
            let (v1, v2, s) = (Array1::from(v1), Array1::from(v2), Array1::from(shift));
            let via_features = k.eval_features(v1.view(), v2.view());
            prop_assert!((via_features - k.eval(v1.view(), v2.view())).abs() < 1e-12);
            let shifted = k.eval_features((&v1 + &s).view(), (&v2 + &s).view());
            prop_assert!((shifted - via_features).abs() < 1e-12);
        }

        #[test]
        fn kernels_are_symmetric(seed in any::<u64>(), sigma in 0.1f64..3.0) {
            let pts = random_points(2, 4, seed);
            let (x, y) = (pts.row(0), pts.row(1));
            prop_assert!((gaussnet_kernel(x, y, sigma) - gaussnet_kernel(y, x, sigma)).abs() < 1e-12);
            let k = rff_compose(RffMap::sample(4, seed).unwrap(), DotProductProfile::arccos1()).unwrap();
            prop_assert!((k.eval_features(x, y) - k.eval_features(y, x)).abs() < 1e-12);
        }
    }
}
