//! Tangent kernels of the network states.
//!
//! Real kernels: `Θ₁`, `Θ₂` (tangent kernels of the real and imaginary
//! networks) and the mixing kernel `Θ₁₂(x, y) = Σ ∂ψ₁(x)/∂θ · ∂ψ₂(y)/∂θ`.
//! From these, [`assemble_qsntk`] builds the complex kernel `Θ`, the Hermitian
//! kernel `Φ` and the 2×2 block kernel `Ω` acting on `(ψ, ψ*)`.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg;
use crate::nnqs::{relu, relu_prime, ComplexNnqs, NetworkParams, BIAS_VARIANCE, WEIGHT_VARIANCE};
use crate::rng::stream_rng;

/// Largest Gram (rows × cols) or Jacobian (rows × params) held in memory.
pub const MAX_DENSE_ENTRIES: usize = 1 << 28;
/// Default number of rows processed per block when forming empirical Grams.
pub const DEFAULT_BLOCK_ROWS: usize = 512;
/// Tolerance for cosines drifting past ±1.
pub const ARCCOS_CLAMP_TOL: f64 = 1e-9;
pub const GAUSS_HERMITE_ORDER: usize = 200;

fn guard(what: &'static str, requested: usize) -> Result<()> {
    if requested > MAX_DENSE_ENTRIES {
        return Err(Error::Capacity {
            what,
            requested,
            limit: MAX_DENSE_ENTRIES,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelHyperparams {
    pub weight_variance: f64,
    pub bias_variance: f64,
}

impl Default for KernelHyperparams {
    fn default() -> Self {
        Self {
            weight_variance: WEIGHT_VARIANCE,
            bias_variance: BIAS_VARIANCE,
        }
    }
}

/// Empirical tangent kernel `Σ_i ∂f(x)/∂θ_i ∂f(y)/∂θ_i` of one real network,
/// evaluated from hidden features without forming Jacobians:
/// `A_x A_yᵀ/N + (G_x G_yᵀ) ⊙ (1 + X Yᵀ/d) + 1`.
pub fn empirical_ntk(
    p: &NetworkParams,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    empirical_ntk_blocked(p, xs, ys, DEFAULT_BLOCK_ROWS)
}

pub fn empirical_ntk_blocked(
    p: &NetworkParams,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    block_rows: usize,
) -> Result<Array2<f64>> {
    guard("kernel Gram entries", xs.nrows() * ys.nrows())?;
    let block_rows = block_rows.max(1);
    let n = p.width() as f64;
    let d = p.input_dim() as f64;
    let features = |pts: ArrayView2<f64>| -> Result<(Array2<f64>, Array2<f64>)> {
        let pre = p.preactivations(pts)?;
        let act = pre.mapv(relu) / n.sqrt();
        let mut gate = pre.mapv_into(relu_prime);
        gate *= &(&p.w2 / n.sqrt());
        Ok((act, gate))
    };
    let (ay, gy) = features(ys)?;
    let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
    for start in (0..xs.nrows()).step_by(block_rows) {
        let stop = (start + block_rows).min(xs.nrows());
        let xb = xs.slice(s![start..stop, ..]);
        let (ax, gx) = features(xb)?;
        let mut block = ax.dot(&ay.t());
        let gates = gx.dot(&gy.t());
        let dots = xb.dot(&ys.t());
        Zip::from(&mut block)
            .and(&gates)
            .and(&dots)
            .for_each(|b, &g, &xy| {
                *b += g * (1.0 + xy / d) + 1.0;
            });
        out.slice_mut(s![start..stop, ..]).assign(&block);
    }
    Ok(out)
}

/// Same kernel by explicit Jacobian contraction `J_x J_yᵀ`.
pub fn empirical_ntk_jacobian(
    p: &NetworkParams,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    guard("jacobian entries", (xs.nrows() + ys.nrows()) * p.n_params())?;
    Ok(p.jacobian_batch(xs)?.dot(&p.jacobian_batch(ys)?.t()))
}

/// `Θ₁₂(x_a, y_b)`, summed over parameters shared by both parts. Exactly
/// zero for disjoint networks.
pub fn empirical_mixing_kernel(
    c: &ComplexNnqs,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    guard("kernel Gram entries", xs.nrows() * ys.nrows())?;
    match c {
        ComplexNnqs::Disjoint { .. } => Ok(Array2::zeros((xs.nrows(), ys.nrows()))),
        ComplexNnqs::SharedHidden { re, .. } => {
            let shared = re.width() * (re.input_dim() + 1);
            let (j1, _) = c.joint_jacobians(xs)?;
            let (_, j2) = c.joint_jacobians(ys)?;
            Ok(j1
                .slice(s![.., ..shared])
                .dot(&j2.slice(s![.., ..shared]).t()))
        }
    }
}

/// The three real Grams of a complex network on `(xs, ys)`, plus the
/// swapped mixing Gram `Θ₁₂(y_b, x_a)` needed when `xs ≠ ys`.
#[derive(Debug, Clone)]
pub struct RealGrams {
    pub theta1: Array2<f64>,
    pub theta2: Array2<f64>,
    pub theta12: Array2<f64>,
    pub theta21: Array2<f64>,
}

pub fn empirical_real_grams(
    c: &ComplexNnqs,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<RealGrams> {
    let theta1 = empirical_ntk(c.real_part(), xs, ys)?;
    let theta2 = empirical_ntk(&c.imag_part(), xs, ys)?;
    let theta12 = empirical_mixing_kernel(c, xs, ys)?;
    let theta21 = empirical_mixing_kernel(c, ys, xs)?.reversed_axes();
    Ok(RealGrams {
        theta1,
        theta2,
        theta12,
        theta21,
    })
}

/// `E[relu(u) relu(v)]` and `E[relu'(u) relu'(v)]` for a centred Gaussian
/// pair with the given covariance.
pub fn relu_expectations(kxx: f64, kyy: f64, kxy: f64) -> Result<(f64, f64)> {
    if kxx < 0.0 || kyy < 0.0 {
        return Err(Error::Domain("negative variance".into()));
    }
    let norm = (kxx * kyy).sqrt();
    if norm == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut cos = kxy / norm;
    if cos.abs() > 1.0 + ARCCOS_CLAMP_TOL {
        return Err(Error::Domain(format!("correlation {cos} outside [-1, 1]")));
    }
    cos = cos.clamp(-1.0, 1.0);
    let theta = cos.acos();
    let e_act = norm / (2.0 * PI) * (theta.sin() + (PI - theta) * cos);
    let e_gate = (PI - theta) / (2.0 * PI);
    Ok((e_act, e_gate))
}

fn analytic_gram<F>(
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    h: KernelHyperparams,
    entry: F,
) -> Result<Array2<f64>>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    if xs.ncols() != ys.ncols() {
        return Err(Error::Shape("point sets have different dimensions".into()));
    }
    guard("kernel Gram entries", xs.nrows() * ys.nrows())?;
    let d = xs.ncols() as f64;
    let layer = |dot: f64| h.weight_variance * dot / d + h.bias_variance;
    let sx: Array1<f64> = xs.outer_iter().map(|r| layer(r.dot(&r))).collect();
    let sy: Array1<f64> = ys.outer_iter().map(|r| layer(r.dot(&r))).collect();
    let dots = xs.dot(&ys.t());
    let mut out = Array2::zeros(dots.dim());
    let mut failure = None;
    for ((a, b), v) in out.indexed_iter_mut() {
        let dot = dots[[a, b]];
        match relu_expectations(sx[a], sy[b], layer(dot)) {
            Ok((act, gate)) => *v = entry(act, gate, dot / d),
            Err(e) => failure = Some(e),
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Infinite-width output covariance (NNGP) of the real network.
pub fn analytic_nngp(
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    h: KernelHyperparams,
) -> Result<Array2<f64>> {
    analytic_gram(xs, ys, h, |act, _, _| {
        h.weight_variance * act + h.bias_variance
    })
}

/// Infinite-width tangent kernel of the real network:
/// `E[σσ] + 1 + σ_w² (1 + x·y/d) E[σ'σ']`.
pub fn analytic_ntk(
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    h: KernelHyperparams,
) -> Result<Array2<f64>> {
    analytic_gram(xs, ys, h, |act, gate, xy| {
        act + 1.0 + h.weight_variance * (1.0 + xy) * gate
    })
}

/// Complex and block kernels built from the real Grams.
#[derive(Debug, Clone)]
pub struct QsNtk {
    /// `Θ = Θ₁ − Θ₂ + i(Θ₁₂ + Θ₂₁)`.
    pub theta: Array2<Complex64>,
    /// `Φ = Θ₁ + Θ₂ − i(Θ₁₂ − Θ₂₁)`.
    pub phi: Array2<Complex64>,
    /// `[[Θ, Φ], [Φ*, Θ*]]`.
    pub omega: Array2<Complex64>,
    /// `[[Θ₁, Θ₁₂], [Θ₂₁, Θ₂]]`.
    pub omega_ri: Array2<f64>,
}

fn blocks<T: num_complex::ComplexFloat>(
    tl: &Array2<T>,
    tr: &Array2<T>,
    bl: &Array2<T>,
    br: &Array2<T>,
) -> Array2<T> {
    let (r, c) = tl.dim();
    let mut out = Array2::<T>::zeros((2 * r, 2 * c));
    out.slice_mut(s![..r, ..c]).assign(tl);
    out.slice_mut(s![..r, c..]).assign(tr);
    out.slice_mut(s![r.., ..c]).assign(bl);
    out.slice_mut(s![r.., c..]).assign(br);
    out
}

/// Assemble `Θ`, `Φ`, `Ω` and `Ω_RI`. `theta21[a, b] = Θ₁₂(y_b, x_a)`;
/// for a square Gram on one point set this is `theta12ᵀ`.
pub fn assemble_qsntk(grams: &RealGrams) -> Result<QsNtk> {
    let dim = grams.theta1.dim();
    if dim.0 == 0 || dim.1 == 0 {
        return Err(Error::Shape("empty Gram".into()));
    }
    for (name, g) in [
        ("theta2", &grams.theta2),
        ("theta12", &grams.theta12),
        ("theta21", &grams.theta21),
    ] {
        if g.dim() != dim {
            return Err(Error::Shape(format!(
                "{name} is {:?}, theta1 is {dim:?}",
                g.dim()
            )));
        }
    }
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let mut theta = Array2::zeros(dim);
    let mut phi = Array2::zeros(dim);
    Zip::from(&mut theta)
        .and(&mut phi)
        .and(&grams.theta1)
        .and(&grams.theta2)
        .and(&grams.theta12)
        .and(&grams.theta21)
        .for_each(|t, p, &t1, &t2, &t12, &t21| {
            *t = c(t1 - t2, t12 + t21);
            *p = c(t1 + t2, -(t12 - t21));
        });
    let phi_conj = phi.mapv(|z| z.conj());
    let theta_conj = theta.mapv(|z| z.conj());
    let omega = blocks(&theta, &phi, &phi_conj, &theta_conj);
    let omega_ri = blocks(&grams.theta1, &grams.theta12, &grams.theta21, &grams.theta2);
    Ok(QsNtk {
        theta,
        phi,
        omega,
        omega_ri,
    })
}

/// Square case: `Θ₂₁ = Θ₁₂ᵀ`.
pub fn assemble_qsntk_square(
    theta1: Array2<f64>,
    theta2: Array2<f64>,
    theta12: Array2<f64>,
) -> Result<QsNtk> {
    let theta21 = theta12.t().to_owned();
    assemble_qsntk(&RealGrams {
        theta1,
        theta2,
        theta12,
        theta21,
    })
}

/// `R Ω_RI Rᵀ` with `R = [[1, i], [1, −i]]` applied blockwise.
pub fn rotate_real_imag(omega_ri: &Array2<f64>) -> Array2<Complex64> {
    let (r2, c2) = omega_ri.dim();
    let (r, c) = (r2 / 2, c2 / 2);
    let rm = [
        [Complex64::new(1.0, 0.0), Complex64::i()],
        [Complex64::new(1.0, 0.0), -Complex64::i()],
    ];
    let mut out = Array2::zeros((r2, c2));
    for a in 0..2 {
        for b in 0..2 {
            let mut block = out.slice_mut(s![a * r..(a + 1) * r, b * c..(b + 1) * c]);
            for cc in 0..2 {
                for dd in 0..2 {
                    let coeff = rm[a][cc] * rm[b][dd];
                    let src = omega_ri.slice(s![cc * r..(cc + 1) * r, dd * c..(dd + 1) * c]);
                    Zip::from(&mut block)
                        .and(&src)
                        .for_each(|o, &v| *o += coeff * v);
                }
            }
        }
    }
    out
}

/// Stability threshold `2 / λ_max(gram / batch)` of gradient descent on the
/// linearised model.
pub fn max_learning_rate(gram: ArrayView2<f64>, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let scale = gram
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    if linalg::asymmetry(gram) > 1e-10 * scale {
        return Err(Error::Domain("learning-rate Gram is not symmetric".into()));
    }
    let lmax = linalg::sym_eigvals(gram)?.last().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return Err(Error::Conditioning {
            min_eigenvalue: lmax,
        });
    }
    Ok(2.0 * batch_size as f64 / lmax)
}

/// Nodes and weights of the `order`-point Gauss-Hermite rule for a standard
/// normal weight (weights sum to one), by Golub-Welsch.
pub fn gauss_hermite_normal(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::Argument("quadrature order must be positive".into()));
    }
    let mut jacobi = Array2::zeros((order, order));
    for k in 1..order {
        let b = (k as f64).sqrt();
        jacobi[[k, k - 1]] = b;
        jacobi[[k - 1, k]] = b;
    }
    let eig = linalg::sym_eigh(jacobi.view())?;
    let weights: Vec<f64> = eig.vectors.row(0).iter().map(|v| v * v).collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NotConverged {
            method: "gauss-hermite weights",
            residual: (total - 1.0).abs(),
        });
    }
    Ok((eig.values.to_vec(), weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu(z),
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu_prime(z),
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Limits `(Θ∞, Φ∞)` for the scalar network
/// `ψ(x) = (1/√N) Σ_j (a_j + i b_j) σ(c_j x)` with standard-normal `a, b, c`.
///
/// `Θ∞ = x y E[(a+ib)²] E[σ'(cx)σ'(cy)]` vanishes because `E[(a+ib)²] = 0`;
/// `Φ∞ = 2 E[σ(cx)σ(cy)] + 2 x y E[σ'(cx)σ'(cy)]`.
pub fn scalar_limit_kernels(x: f64, y: f64, act: Activation) -> Result<(Complex64, f64)> {
    let (nodes, weights) = gauss_hermite_normal(GAUSS_HERMITE_ORDER)?;
    let mut e_act = 0.0;
    let mut e_gate = 0.0;
    for (&c, &w) in nodes.iter().zip(&weights) {
        e_act += w * act.eval(c * x) * act.eval(c * y);
        e_gate += w * act.derivative(c * x) * act.derivative(c * y);
    }
    // E[(a + ib)²] = E[a²] − E[b²] + 2i E[ab] = 0 for independent standard normals.
    let moment = Complex64::new(0.0, 0.0);
    Ok((moment * x * y * e_gate, 2.0 * e_act + 2.0 * x * y * e_gate))
}

/// Finite-width instance of the scalar complex network above.
#[derive(Debug, Clone)]
pub struct ScalarComplexNet {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
    pub c: Array1<f64>,
    pub activation: Activation,
}

impl ScalarComplexNet {
    pub fn init(width: usize, seed: u64, activation: Activation) -> Result<Self> {
        if width == 0 {
            return Err(Error::Argument("width must be positive".into()));
        }
        let draw = |stream| {
            let mut rng = stream_rng(seed, stream);
            Array1::from_iter((0..width).map(|_| StandardNormal.sample(&mut rng)))
        };
        Ok(Self {
            a: draw(0),
            b: draw(1),
            c: draw(2),
            activation,
        })
    }

    pub fn width(&self) -> usize {
        self.a.len()
    }

    pub fn value(&self, x: f64) -> Complex64 {
        let n = self.width() as f64;
        let s: Complex64 = (0..self.width())
            .map(|j| Complex64::new(self.a[j], self.b[j]) * self.activation.eval(self.c[j] * x))
            .sum();
        s / n.sqrt()
    }

    /// Per-neuron contributions `N · (∂ψ(x)·∂ψ(y), ∂ψ(x)·∂ψ*(y))`; their
    /// mean is the empirical `(Θ, Φ)`.
    pub fn kernel_summands(&self, x: f64, y: f64) -> Vec<(Complex64, f64)> {
        let act = self.activation;
        (0..self.width())
            .map(|j| {
                let z = Complex64::new(self.a[j], self.b[j]);
                let (sx, sy) = (act.eval(self.c[j] * x), act.eval(self.c[j] * y));
                let gates = act.derivative(self.c[j] * x) * act.derivative(self.c[j] * y) * x * y;
                // a-direction: sx·sy; b-direction: (i sx)(i sy) = −sx·sy.
                let theta = z * z * gates;
                let phi = 2.0 * sx * sy + z.norm_sqr() * gates;
                (theta, phi)
            })
            .collect()
    }

    /// Empirical `(Θ(x, y), Φ(x, y))`.
    pub fn qsntk(&self, x: f64, y: f64) -> (Complex64, f64) {
        let terms = self.kernel_summands(x, y);
        let n = terms.len() as f64;
        let (t, p) = terms
            .iter()
            .fold((Complex64::new(0.0, 0.0), 0.0), |(t, p), (a, b)| {
                (t + a, p + b)
            });
        (t / n, p / n)
    }

    /// `∂ψ(x)/∂(a, b, c)` flattened, for direct oracles.
    pub fn jacobian(&self, x: f64) -> Array1<Complex64> {
        let n = (self.width() as f64).sqrt();
        let act = self.activation;
        let mut out = Array1::zeros(3 * self.width());
        for j in 0..self.width() {
            let s = act.eval(self.c[j] * x);
            out[j] = Complex64::new(s / n, 0.0);
            out[self.width() + j] = Complex64::new(0.0, s / n);
            out[2 * self.width() + j] =
                Complex64::new(self.a[j], self.b[j]) * act.derivative(self.c[j] * x) * x / n;
        }
        out
    }
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖`.
pub fn relative_frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let diff = (&a - &b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt()
}
