//! Ensemble entanglement of sampled wavefunctions.
//!
//! A wavefunction on a domain of size `d = d_A·d_B` is reshaped into a
//! `d_A × d_B` matrix `W`; the reduced density matrix of region `A` is
//! `ρ_A = W W†`. Replica traces `Tr ρ_A^n` are computed exactly for complex
//! Gaussian ensembles by Wick contraction and estimated for arbitrary
//! samplers by Monte Carlo.

use ndarray::{Array1, Array2, ArrayView1};
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{enumerate_spin_basis, Basis};
use crate::linalg;
use crate::nnqs::ComplexNnqs;
use crate::rng::stream_rng;

/// Largest domain accepted by [`renyi_wick`].
pub const MAX_WICK_DOMAIN: usize = 64;
/// Largest domain accepted by the Monte Carlo estimators.
pub const MAX_MC_DOMAIN: usize = 4096;
/// Redraws allowed for a single zero-norm sample before giving up.
pub const MAX_RESAMPLES: usize = 64;

/// Factorisation of a domain into a region `A` and its complement `B`.
///
/// Domain index `i` corresponds to `(a, b)` with `i = a·d_B + b` when `A` is
/// the major index, and `i = b·d_A + a` otherwise. [`RegionSplit::complement`]
/// swaps the roles of the regions without changing which domain index an
/// `(a, b)` pair refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSplit {
    pub d_a: usize,
    pub d_b: usize,
    #[serde(default = "a_major_default")]
    pub a_major: bool,
}

fn a_major_default() -> bool {
    true
}

impl RegionSplit {
    /// Region `A` is conventionally the smaller one, `d_A ≤ d_B`.
    pub fn new(d_a: usize, d_b: usize) -> Result<Self> {
        if d_a == 0 || d_b == 0 {
            return Err(Error::Argument(format!(
                "region dimensions must be positive, got {d_a}×{d_b}"
            )));
        }
        Ok(Self {
            d_a,
            d_b,
            a_major: true,
        })
    }

    /// Half cut of `m` qubits; `A` holds the first `⌊m/2⌋` of them.
    pub fn half_cut(m: u32) -> Result<Self> {
        if m == 0 || m > 31 {
            return Err(Error::Argument(format!("qubit count {m} outside 1..=31")));
        }
        Self::new(1 << (m / 2), 1 << (m - m / 2))
    }

    pub fn dim(&self) -> usize {
        self.d_a * self.d_b
    }

    pub fn complement(&self) -> Self {
        Self {
            d_a: self.d_b,
            d_b: self.d_a,
            a_major: !self.a_major,
        }
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        if self.a_major {
            a * self.d_b + b
        } else {
            b * self.d_a + a
        }
    }

    pub fn pair(&self, index: usize) -> (usize, usize) {
        if self.a_major {
            (index / self.d_b, index % self.d_b)
        } else {
            (index % self.d_a, index / self.d_a)
        }
    }

    /// The `d_A × d_B` matrix `W[a, b] = ψ(index(a, b))`.
    pub fn matrix(&self, psi: ArrayView1<Complex64>) -> Result<Array2<Complex64>> {
        if psi.len() != self.dim() {
            return Err(Error::Shape(format!(
                "wavefunction of length {} does not fit a {}×{} split",
                psi.len(),
                self.d_a,
                self.d_b
            )));
        }
        Ok(Array2::from_shape_fn((self.d_a, self.d_b), |(a, b)| {
            psi[self.index(a, b)]
        }))
    }
}

/// Complex Gaussian field with `E[ψ(x)ψ*(y)] = α exp(−|x−y|²/(2σ²))` and
/// `E[ψ(x)ψ(y)] = 0`, on a finite set of embedded domain points.
///
/// Equivalently `ψ = ψ₁ + iψ₂` with independent real parts of covariance
/// `G/2` each.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernelSpec {
    pub amplitude: f64,
    pub length: f64,
    /// Row `k` is the input that domain index `k` is embedded at.
    pub points: Array2<f64>,
}

impl GaussianKernelSpec {
    pub fn new(amplitude: f64, length: f64, points: Array2<f64>) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Argument(format!(
                "amplitude must be positive, got {amplitude}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Argument(format!(
                "length scale must be positive, got {length}"
            )));
        }
        if points.nrows() == 0 {
            return Err(Error::Argument(
                "kernel needs at least one domain point".into(),
            ));
        }
        Ok(Self {
            amplitude,
            length,
            points,
        })
    }

    /// Domain index `k` at `k·spacing` on a line. With `spacing ≫ length`
    /// the field is i.i.d. across the domain.
    pub fn on_line(d: usize, spacing: f64, amplitude: f64, length: f64) -> Result<Self> {
        Self::new(
            amplitude,
            length,
            Array2::from_shape_fn((d, 1), |(k, _)| k as f64 * spacing),
        )
    }

    /// Domain index `k` at the `±1` spin encoding of basis state `k` of `m`
    /// qubits.
    pub fn on_qubits(m: usize, amplitude: f64, length: f64) -> Result<Self> {
        Self::new(
            amplitude,
            length,
            Basis::Spin(enumerate_spin_basis(m)?).encode_all(),
        )
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn eval(&self, i: usize, j: usize) -> f64 {
        let d2: f64 = self
            .points
            .row(i)
            .iter()
            .zip(self.points.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.amplitude * (-d2 / (2.0 * self.length * self.length)).exp()
    }

    pub fn gram(&self) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(i, j)| self.eval(i, j))
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// `Σ E[Π_k ψ(a_k, b_k) ψ*(a_{k+shift}, b_k)]` over all replica indices.
///
/// Only `ψ`–`ψ*` pairs contract, so the Wick sum over perfect matchings of
/// the `2n` fields reduces to a permanent over the `n!` assignments of each
/// `ψ` to a `ψ*`.
fn replica_sum(g: &Array2<f64>, split: RegionSplit, n: usize, shift: usize) -> f64 {
    let perms = permutations(n);
    let (da, db) = (split.d_a, split.d_b);
    let n_a = da.pow(n as u32);
    let n_b = db.pow(n as u32);
    let mut a = vec![0usize; n];
    let mut b = vec![0usize; n];
    let mut x = vec![0usize; n];
    let mut y = vec![0usize; n];
    let mut total = 0.0;
    for ia in 0..n_a {
        let mut r = ia;
        for ak in a.iter_mut() {
            *ak = r % da;
            r /= da;
        }
        for ib in 0..n_b {
            let mut r = ib;
            for bk in b.iter_mut() {
                *bk = r % db;
                r /= db;
            }
            for k in 0..n {
                x[k] = split.index(a[k], b[k]);
                y[k] = split.index(a[(k + shift) % n], b[k]);
            }
            for p in &perms {
                let mut prod = 1.0;
                for k in 0..n {
                    prod *= g[[x[k], y[p[k]]]];
                }
                total += prod;
            }
        }
    }
    total
}

fn wick_inputs(spec: &GaussianKernelSpec, split: RegionSplit, n: u32) -> Result<Array2<f64>> {
    if !(2..=3).contains(&n) {
        return Err(Error::Argument(format!(
            "Wick contraction supports n = 2 or 3, got {n}"
        )));
    }
    if split.dim() != spec.dim() {
        return Err(Error::Shape(format!(
            "split of size {} on a domain of size {}",
            split.dim(),
            spec.dim()
        )));
    }
    if split.dim() > MAX_WICK_DOMAIN {
        return Err(Error::Capacity {
            what: "Wick domain size",
            requested: split.dim(),
            limit: MAX_WICK_DOMAIN,
        });
    }
    Ok(spec.gram())
}

/// Exact `E Tr[ρ_A^n]` of the unnormalized Gaussian ensemble.
pub fn renyi_wick(spec: &GaussianKernelSpec, split: RegionSplit, n: u32) -> Result<f64> {
    let g = wick_inputs(spec, split, n)?;
    Ok(replica_sum(&g, split, n as usize, 1))
}

/// `E Tr[ρ_A^n] / E[(Tr ρ_A)^n]`, a ratio of exact Gaussian moments.
///
/// This equals one whenever `ρ_A` has rank one for every draw, so the
/// corresponding Renyi entropy vanishes for `d_A = 1`. It is not the mean of
/// the per-draw normalized trace.
pub fn renyi_wick_normalized(spec: &GaussianKernelSpec, split: RegionSplit, n: u32) -> Result<f64> {
    let g = wick_inputs(spec, split, n)?;
    let n = n as usize;
    Ok(replica_sum(&g, split, n, 1) / replica_sum(&g, split, n, 0))
}

/// Renyi entropy `ln(Tr ρ^n)/(1 − n)` from a replica trace.
pub fn renyi_entropy(trace: f64, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::Argument(format!(
            "Renyi index must be at least 2, got {n}"
        )));
    }
    Ok(trace.ln() / (1.0 - n as f64))
}

/// Source of random wavefunctions on a discrete domain.
pub trait WavefunctionSampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>>;
}

fn complex_normal(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// Independent complex Gaussian amplitudes with `E|ψ(x)|² = α`.
#[derive(Debug, Clone, Copy)]
pub struct IidGaussianSampler {
    pub dim: usize,
    pub amplitude: f64,
}

impl WavefunctionSampler for IidGaussianSampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>> {
        let scale = (self.amplitude / 2.0).sqrt();
        Ok(Array1::from_shape_fn(self.dim, |_| {
            complex_normal(rng, scale)
        }))
    }
}

/// Draws of the Gaussian field of a [`GaussianKernelSpec`], `ψ = L z` with
/// `L Lᵀ = G` from the eigendecomposition of `G`.
#[derive(Debug, Clone)]
pub struct GaussianProcessSampler {
    factor: Array2<f64>,
}

impl GaussianProcessSampler {
    pub fn new(spec: &GaussianKernelSpec) -> Result<Self> {
        let eig = linalg::sym_eigh(spec.gram().view())?;
        let mut factor = eig.vectors;
        for (mut col, &lam) in factor.columns_mut().into_iter().zip(eig.values.iter()) {
            col *= lam.max(0.0).sqrt();
        }
        Ok(Self { factor })
    }
}

impl WavefunctionSampler for GaussianProcessSampler {
    fn dim(&self) -> usize {
        self.factor.nrows()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>> {
        let d = self.factor.ncols();
        let z = Array1::from_shape_fn(d, |_| complex_normal(rng, std::f64::consts::FRAC_1_SQRT_2));
        Ok(Array1::from_shape_fn(self.factor.nrows(), |i| {
            self.factor
                .row(i)
                .iter()
                .zip(&z)
                .map(|(l, zk)| zk * *l)
                .sum()
        }))
    }
}

/// Finite-width Gauss-net ensemble `ψ = √(α/2)(f₁ + i f₂)` with
/// `f(x) = N^{-1/2} Σ_j W_j g_j(x)`, `g_j(x) = exp(W⁰_j·x − σ²|x|²/d)`,
/// `W⁰ ~ N(0, σ²/d)` and `W ~ N(0, 1)`.
///
/// As the width grows the ensemble tends to the Gaussian field returned by
/// [`GaussNetSampler::limit_kernel`].
#[derive(Debug, Clone)]
pub struct GaussNetSampler {
    pub width: usize,
    pub sigma: f64,
    pub amplitude: f64,
    pub points: Array2<f64>,
}

impl GaussNetSampler {
    pub fn new(width: usize, sigma: f64, amplitude: f64, points: Array2<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::Argument("Gauss-net width must be positive".into()));
        }
        if !(sigma > 0.0 && amplitude > 0.0) {
            return Err(Error::Argument(format!(
                "σ = {sigma} and α = {amplitude} must be positive"
            )));
        }
        Ok(Self {
            width,
            sigma,
            amplitude,
            points,
        })
    }

    pub fn limit_kernel(&self) -> Result<GaussianKernelSpec> {
        let d = self.points.ncols() as f64;
        GaussianKernelSpec::new(self.amplitude, d.sqrt() / self.sigma, self.points.clone())
    }

    fn real_network(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let d = self.points.ncols();
        let scale = self.sigma / (d as f64).sqrt();
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let norms: Vec<f64> = self
            .points
            .rows()
            .into_iter()
            .map(|x| x.dot(&x) * scale * scale)
            .collect();
        let mut w0 = vec![0.0; d];
        for _ in 0..self.width {
            for w in w0.iter_mut() {
                *w = normal.sample(rng);
            }
            let w: f64 = StandardNormal.sample(rng);
            for ((o, x), nrm) in out.iter_mut().zip(self.points.rows()).zip(&norms) {
                let z: f64 = w0.iter().zip(x).map(|(a, b)| a * b).sum();
                *o += w * (z - nrm).exp();
            }
        }
        let inv = 1.0 / (self.width as f64).sqrt();
        out.iter_mut().for_each(|o| *o *= inv);
    }
}

impl WavefunctionSampler for GaussNetSampler {
    fn dim(&self) -> usize {
        self.points.nrows()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>> {
        let n = self.dim();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        self.real_network(rng, &mut re);
        self.real_network(rng, &mut im);
        let s = (self.amplitude / 2.0).sqrt();
        Ok(re
            .iter()
            .zip(&im)
            .map(|(r, i)| Complex64::new(r * s, i * s))
            .collect())
    }
}

/// Freshly initialised complex networks with disjoint real and imaginary
/// parts, evaluated on fixed domain inputs.
#[derive(Debug, Clone)]
pub struct NnqsSampler {
    pub width: usize,
    pub inputs: Array2<f64>,
}

impl WavefunctionSampler for NnqsSampler {
    fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>> {
        let net = ComplexNnqs::init_disjoint(self.width, self.inputs.ncols(), rng.random())?;
        net.values_batch(self.inputs.view())
    }
}

/// Product states `u(a)v(b)` with complex Gaussian factors.
#[derive(Debug, Clone, Copy)]
pub struct ProductStateSampler {
    pub split: RegionSplit,
}

impl WavefunctionSampler for ProductStateSampler {
    fn dim(&self) -> usize {
        self.split.dim()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Array1<Complex64>> {
        let u: Vec<Complex64> = (0..self.split.d_a)
            .map(|_| complex_normal(rng, 1.0))
            .collect();
        let v: Vec<Complex64> = (0..self.split.d_b)
            .map(|_| complex_normal(rng, 1.0))
            .collect();
        let mut psi = Array1::zeros(self.dim());
        for (a, ua) in u.iter().enumerate() {
            for (b, vb) in v.iter().enumerate() {
                psi[self.split.index(a, b)] = ua * vb;
            }
        }
        Ok(psi)
    }
}

/// Eigenvalues of `ρ_A = W W†`, from the singular values of `W`, in
/// descending order. Only the `min(d_A, d_B)` possibly nonzero ones are
/// returned.
pub fn reduced_spectrum(psi: ArrayView1<Complex64>, split: RegionSplit) -> Result<Array1<f64>> {
    let w = split.matrix(psi)?;
    let (_, s, _) = w.svd(false, false)?;
    Ok(s.mapv(|v| v * v))
}

/// `Σ λ^n`.
pub fn replica_trace(spectrum: ArrayView1<f64>, n: u32) -> f64 {
    spectrum.iter().map(|l| l.powi(n as i32)).sum()
}

/// `−Σ λ ln λ` of a normalized spectrum.
pub fn von_neumann(spectrum: ArrayView1<f64>) -> f64 {
    -spectrum
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|l| l * l.ln())
        .sum::<f64>()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// `None` for fewer than two samples.
    pub stderr: Option<f64>,
    pub n_samples: usize,
    /// Zero-norm draws that were discarded and redrawn.
    pub resampled: usize,
}

impl McEstimate {
    fn from_values(values: &[f64], resampled: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self {
            mean,
            stderr,
            n_samples: n,
            resampled,
        }
    }

    /// `|mean − reference|` in units of the standard error.
    pub fn z_score(&self, reference: f64) -> Option<f64> {
        self.stderr.map(|s| (self.mean - reference).abs() / s)
    }
}

fn draw_normalized(
    sampler: &dyn WavefunctionSampler,
    rng: &mut ChaCha8Rng,
) -> Result<(Array1<Complex64>, usize)> {
    for redraws in 0..=MAX_RESAMPLES {
        let psi = sampler.sample(rng)?;
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return Ok((psi.mapv(|z| z / norm), redraws));
        }
    }
    Err(Error::Domain(format!(
        "sampler returned {} consecutive zero-norm draws",
        MAX_RESAMPLES + 1
    )))
}

fn run_mc<F>(
    sampler: &dyn WavefunctionSampler,
    split: RegionSplit,
    n_samples: usize,
    seed: u64,
    per_draw: F,
) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<(f64, usize)> + Sync,
{
    if n_samples == 0 {
        return Err(Error::Argument("at least one sample is required".into()));
    }
    if sampler.dim() != split.dim() {
        return Err(Error::Shape(format!(
            "sampler of size {} on a split of size {}",
            sampler.dim(),
            split.dim()
        )));
    }
    if split.dim() > MAX_MC_DOMAIN {
        return Err(Error::Capacity {
            what: "Monte Carlo domain size",
            requested: split.dim(),
            limit: MAX_MC_DOMAIN,
        });
    }
    let draws: Vec<(f64, usize)> = (0..n_samples)
        .into_par_iter()
        .map(|i| per_draw(&mut stream_rng(seed, i as u64)))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    Ok(McEstimate::from_values(
        &values,
        draws.iter().map(|d| d.1).sum(),
    ))
}

/// Monte Carlo mean of `Tr[ρ_A^n]`, optionally normalizing every draw.
pub fn renyi_mc(
    sampler: &dyn WavefunctionSampler,
    split: RegionSplit,
    n: u32,
    n_samples: usize,
    normalize: bool,
    seed: u64,
) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::Argument("replica index must be positive".into()));
    }
    run_mc(sampler, split, n_samples, seed, |rng| {
        let (psi, redraws) = if normalize {
            draw_normalized(sampler, rng)?
        } else {
            (sampler.sample(rng)?, 0)
        };
        Ok((
            replica_trace(reduced_spectrum(psi.view(), split)?.view(), n),
            redraws,
        ))
    })
}

/// Monte Carlo mean of the von Neumann entropy of normalized draws.
pub fn entanglement_entropy_mc(
    sampler: &dyn WavefunctionSampler,
    split: RegionSplit,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    run_mc(sampler, split, n_samples, seed, |rng| {
        let (psi, redraws) = draw_normalized(sampler, rng)?;
        Ok((
            von_neumann(reduced_spectrum(psi.view(), split)?.view()),
            redraws,
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageMode {
    /// `ln d_A − d_A/(2 d_B)`; negative and meaningless for `d_A = 1`.
    Leading,
    /// `Σ_{k=d_B+1}^{d_A d_B} 1/k − (d_A − 1)/(2 d_B)`.
    Exact,
}

/// Mean entanglement entropy of Haar-random pure states. The smaller
/// dimension is taken as `d_A`.
pub fn page_value(d_a: usize, d_b: usize, mode: PageMode) -> Result<f64> {
    if d_a == 0 || d_b == 0 {
        return Err(Error::Argument(format!(
            "region dimensions must be positive, got {d_a}×{d_b}"
        )));
    }
    let (m, n) = (d_a.min(d_b), d_a.max(d_b));
    Ok(match mode {
        PageMode::Leading => (m as f64).ln() - m as f64 / (2.0 * n as f64),
        PageMode::Exact => {
            (n + 1..=m * n).map(|k| 1.0 / k as f64).sum::<f64>() - (m - 1) as f64 / (2.0 * n as f64)
        }
    })
}

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(
            "a line fit needs at least two paired points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("line fit abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMethod {
    Wick,
    WickNormalized,
    MonteCarlo,
    MonteCarloNormalized,
    VonNeumannMonteCarlo,
}

/// Serialized result of one entropy computation. `n` is absent for the von
/// Neumann entropy; `page_value` is the exact Page mean for the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub split: RegionSplit,
    pub n: Option<u32>,
    pub method: EntropyMethod,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub n_samples: Option<usize>,
    pub page_value: f64,
}

impl EntropyReport {
    pub fn exact(split: RegionSplit, n: u32, method: EntropyMethod, value: f64) -> Result<Self> {
        Ok(Self {
            split,
            n: Some(n),
            method,
            estimate: value,
            stderr: None,
            n_samples: None,
            page_value: page_value(split.d_a, split.d_b, PageMode::Exact)?,
        })
    }

    pub fn sampled(
        split: RegionSplit,
        n: Option<u32>,
        method: EntropyMethod,
        est: &McEstimate,
    ) -> Result<Self> {
        Ok(Self {
            split,
            n,
            method,
            estimate: est.mean,
            stderr: est.stderr,
            n_samples: Some(est.n_samples),
            page_value: page_value(split.d_a, split.d_b, PageMode::Exact)?,
        })
    }
}
