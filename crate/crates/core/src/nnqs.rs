//! Finite-width network quantum states.
//!
//! A real network is `f(x) = (1/√N) w2 · relu(W1 x / √d + b1) + b2`. The
//! complex state is `ψ = f_re + i f_im`.
//!
//! Flattened parameter order: `W1` row-major, `b1`, `w2`, `b2`. The ReLU
//! derivative at exactly zero is taken to be 0.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Wavefunction;
use crate::hilbert::Basis;
use crate::rng::stream_rng;

pub const WEIGHT_VARIANCE: f64 = 0.25;
pub const BIAS_VARIANCE: f64 = 0.01;

/// Pre-activation entries held at once by the batched kernels; larger
/// batches are processed in row blocks.
const BLOCK_ENTRIES: usize = 1 << 22;

/// `y ← y + a x`.
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &mut y[..n]);
    for i in 0..n {
        y[i] += a * x[i];
    }
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
pub fn relu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One real single-hidden-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub seed: u64,
}

fn normal_vec(seed: u64, stream: u64, variance: f64, len: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    let dist = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    (0..len).map(|_| dist.sample(&mut rng)).collect()
}

impl NetworkParams {
    /// Random initialisation. `slot` selects a disjoint block of four RNG
    /// streams so the real and imaginary networks never share draws.
    pub fn init(width: usize, input_dim: usize, seed: u64, slot: u64) -> Result<Self> {
        if width == 0 || input_dim == 0 {
            return Err(Error::Argument(
                "width and input dimension must be positive".into(),
            ));
        }
        let base = 4 * slot;
        let w1 = Array2::from_shape_vec(
            (width, input_dim),
            normal_vec(seed, base, WEIGHT_VARIANCE, width * input_dim),
        )
        .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            w1,
            b1: Array1::from(normal_vec(seed, base + 1, BIAS_VARIANCE, width)),
            w2: Array1::from(normal_vec(seed, base + 2, WEIGHT_VARIANCE, width)),
            b2: normal_vec(seed, base + 3, BIAS_VARIANCE, 1)[0],
            seed,
        })
    }

    pub fn zeros(width: usize, input_dim: usize) -> Self {
        Self {
            w1: Array2::zeros((width, input_dim)),
            b1: Array1::zeros(width),
            w2: Array1::zeros(width),
            b2: 0.0,
            seed: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.w1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.width() * (self.input_dim() + 2) + 1
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {len}, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Hidden pre-activations `W1 x / √d + b1` for every row of `xs`.
    pub fn preactivations(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(xs.ncols())?;
        Ok(self.augmented_inputs(xs).dot(&self.augmented_weights().t()))
    }

    /// Rows `[x / √d, 1]`, so that the bias rides along in products.
    fn augmented_inputs(&self, xs: ArrayView2<f64>) -> Array2<f64> {
        let d = self.input_dim();
        let scale = (d as f64).sqrt().recip();
        let mut aug = Array2::ones((xs.nrows(), d + 1));
        aug.slice_mut(s![.., ..d]).assign(&(&xs * scale));
        aug
    }

    /// Rows `[w1_j, b1_j]`.
    fn augmented_weights(&self) -> Array2<f64> {
        let (width, d) = (self.width(), self.input_dim());
        let w1 = self.w1.as_standard_layout();
        let w1 = w1.as_slice().expect("standard layout");
        let b1 = self.b1.as_standard_layout();
        let b1 = b1.as_slice().expect("standard layout");
        let mut aug = vec![0.0; width * (d + 1)];
        for j in 0..width {
            aug[j * (d + 1)..j * (d + 1) + d].copy_from_slice(&w1[j * d..(j + 1) * d]);
            aug[j * (d + 1) + d] = b1[j];
        }
        Array2::from_shape_vec((width, d + 1), aug).expect("length matches shape")
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x.len())?;
        let x = ArrayView1::from(x);
        let scale = (self.input_dim() as f64).sqrt().recip();
        let pre = self.w1.dot(&x) * scale + &self.b1;
        let n = self.width() as f64;
        Ok(pre.mapv(relu).dot(&self.w2) / n.sqrt() + self.b2)
    }

    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(xs.ncols())?;
        let mut out = Array1::zeros(xs.nrows());
        for (start, block) in self.row_blocks(xs) {
            let act = self.preactivations(block)?.mapv_into(relu);
            let stop = start + block.nrows();
            out.slice_mut(s![start..stop]).assign(&self.readout(&act));
        }
        Ok(out)
    }

    fn readout(&self, act: &Array2<f64>) -> Array1<f64> {
        let inv_sqrt_n = (self.width() as f64).sqrt().recip();
        let mut out = act.dot(&self.w2);
        out.mapv_inplace(|v| v * inv_sqrt_n + self.b2);
        out
    }

    /// Apply the ReLU to pre-activations in place and read out the network.
    fn relu_readout(&self, pre: &mut Array2<f64>) -> Array1<f64> {
        let inv_sqrt_n = (self.width() as f64).sqrt().recip();
        let w2 = self.w2.as_standard_layout();
        let w2 = w2.as_slice().expect("standard layout");
        let mut out = Array1::from_elem(pre.nrows(), self.b2);
        for (mut row, o) in pre.outer_iter_mut().zip(out.iter_mut()) {
            let row = row.as_slice_mut().expect("fresh array");
            // Independent lanes keep the reduction vectorizable.
            let mut lanes = [0.0; 8];
            let mut rows = row.chunks_exact_mut(8);
            let mut ws = w2.chunks_exact(8);
            for (zs, ws) in (&mut rows).zip(&mut ws) {
                for l in 0..8 {
                    zs[l] = relu(zs[l]);
                    lanes[l] += zs[l] * ws[l];
                }
            }
            let mut sum: f64 = lanes.iter().sum();
            for (z, &w) in rows.into_remainder().iter_mut().zip(ws.remainder()) {
                *z = relu(*z);
                sum += *z * w;
            }
            *o += inv_sqrt_n * sum;
        }
        out
    }

    fn row_blocks<'a>(
        &self,
        xs: ArrayView2<'a, f64>,
    ) -> impl Iterator<Item = (usize, ArrayView2<'a, f64>)> {
        let rows = (BLOCK_ENTRIES / self.width().max(1)).max(1);
        let n = xs.nrows();
        (0..n).step_by(rows).map(move |start| {
            (
                start,
                xs.slice_move(s![start..(start + rows).min(n), ..]),
            )
        })
    }

    /// Outputs on `xs` together with the gradient of `Σ_a c_a f(x_a)`,
    /// where `c = coeff_of(outputs)`. Pre-activations are reused between
    /// the two passes when the batch fits in one block.
    pub fn value_and_gradient<F>(
        &self,
        xs: ArrayView2<f64>,
        coeff_of: F,
    ) -> Result<(Array1<f64>, Array1<f64>)>
    where
        F: FnOnce(ArrayView1<f64>) -> Result<Array1<f64>>,
    {
        self.check_input(xs.ncols())?;
        let mut acc = GradientAccumulator::new(self);
        let weights = self.augmented_weights();
        let rows = (BLOCK_ENTRIES / self.width().max(1)).max(1);
        if xs.nrows() <= rows {
            let aug = self.augmented_inputs(xs);
            let mut act = aug.dot(&weights.t());
            let out = self.relu_readout(&mut act);
            let coeff = check_coeff(coeff_of(out.view())?, xs.nrows())?;
            acc.add(aug.view(), act, coeff.view());
            return Ok((out, acc.finish(self, coeff.sum())));
        }
        let out = self.forward_batch(xs)?;
        let coeff = check_coeff(coeff_of(out.view())?, xs.nrows())?;
        for (start, block) in self.row_blocks(xs) {
            let c = coeff.slice(s![start..start + block.nrows()]);
            let aug = self.augmented_inputs(block);
            let act = aug.dot(&weights.t()).mapv_into(relu);
            acc.add(aug.view(), act, c);
        }
        Ok((out, acc.finish(self, coeff.sum())))
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<Array1<f64>> {
        let xs =
            ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.jacobian_batch(xs)?.row(0).to_owned())
    }

    /// Row `a` holds `∂f(x_a)/∂θ` in flattened order.
    pub fn jacobian_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let pre = self.preactivations(xs)?;
        let (n_pts, width, d) = (xs.nrows(), self.width(), self.input_dim());
        let inv_sqrt_n = (width as f64).sqrt().recip();
        let inv_sqrt_d = (d as f64).sqrt().recip();
        let mut jac = Array2::zeros((n_pts, self.n_params()));
        for (a, (pre_row, mut out)) in pre.outer_iter().zip(jac.outer_iter_mut()).enumerate() {
            let x = xs.row(a);
            for j in 0..width {
                let z = pre_row[j];
                let gate = relu_prime(z) * self.w2[j] * inv_sqrt_n;
                if gate != 0.0 {
                    for k in 0..d {
                        out[j * d + k] = gate * x[k] * inv_sqrt_d;
                    }
                    out[width * d + j] = gate;
                }
                out[width * (d + 1) + j] = relu(z) * inv_sqrt_n;
            }
            out[width * (d + 2)] = 1.0;
        }
        Ok(jac)
    }

    /// Gradient of `Σ_a coeff_a f(x_a)` in flattened order.
    pub fn weighted_gradient(
        &self,
        xs: ArrayView2<f64>,
        coeff: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        Ok(self.value_and_gradient(xs, |_| Ok(coeff.to_owned()))?.1)
    }

    pub fn flatten(&self) -> Array1<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.push(self.b2);
        Array1::from(v)
    }

    pub fn from_flat(
        width: usize,
        input_dim: usize,
        flat: ArrayView1<f64>,
        seed: u64,
    ) -> Result<Self> {
        let mut p = Self::zeros(width, input_dim);
        if flat.len() != p.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.n_params(),
                flat.len()
            )));
        }
        p.assign_flat(flat);
        p.seed = seed;
        Ok(p)
    }

    fn assign_flat(&mut self, flat: ArrayView1<f64>) {
        let (w, d) = (self.width(), self.input_dim());
        self.w1
            .iter_mut()
            .zip(flat.slice(s![..w * d]))
            .for_each(|(a, b)| *a = *b);
        self.b1.assign(&flat.slice(s![w * d..w * (d + 1)]));
        self.w2.assign(&flat.slice(s![w * (d + 1)..w * (d + 2)]));
        self.b2 = flat[w * (d + 2)];
    }

    /// `θ ← θ + alpha · direction` in flattened order.
    pub fn axpy(&mut self, alpha: f64, direction: ArrayView1<f64>) -> Result<()> {
        if direction.len() != self.n_params() {
            return Err(Error::Shape(
                "direction length does not match parameters".into(),
            ));
        }
        let (w, d) = (self.width(), self.input_dim());
        let dir = direction.as_standard_layout();
        let dir = dir.as_slice().expect("standard layout");
        match (
            self.w1.as_slice_mut(),
            self.b1.as_slice_mut(),
            self.w2.as_slice_mut(),
        ) {
            (Some(w1), Some(b1), Some(w2)) => {
                axpy(alpha, &dir[..w * d], w1);
                axpy(alpha, &dir[w * d..w * (d + 1)], b1);
                axpy(alpha, &dir[w * (d + 1)..w * (d + 2)], w2);
                self.b2 += alpha * dir[w * (d + 2)];
            }
            _ => {
                let updated = self.flatten() + &(&direction * alpha);
                self.assign_flat(updated.view());
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            width: self.width(),
            input_dim: self.input_dim(),
            w1: self.w1.iter().copied().collect(),
            b1: self.b1.to_vec(),
            w2: self.w2.to_vec(),
            b2: self.b2,
        }
    }

    pub fn from_checkpoint(c: &NetworkCheckpoint, seed: u64) -> Result<Self> {
        let w1 = Array2::from_shape_vec((c.width, c.input_dim), c.w1.clone())
            .map_err(|e| Error::Shape(e.to_string()))?;
        if c.b1.len() != c.width || c.w2.len() != c.width {
            return Err(Error::Shape("checkpoint vectors do not match width".into()));
        }
        Ok(Self {
            w1,
            b1: Array1::from(c.b1.clone()),
            w2: Array1::from(c.w2.clone()),
            b2: c.b2,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub width: usize,
    pub input_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Serialized training state of a complex network with disjoint parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub seed: u64,
    pub re: NetworkCheckpoint,
    pub im: NetworkCheckpoint,
}

/// Complex network `ψ = ψ₁ + iψ₂`.
#[derive(Debug, Clone, PartialEq)]
pub enum ComplexNnqs {
    /// Two independent networks; no parameter is shared.
    Disjoint {
        re: NetworkParams,
        im: NetworkParams,
    },
    /// Real and imaginary parts share `W1` and `b1` (taken from `re`) and
    /// have their own output layers.
    SharedHidden {
        re: NetworkParams,
        im_w2: Array1<f64>,
        im_b2: f64,
    },
}

impl ComplexNnqs {
    pub fn init_disjoint(width: usize, input_dim: usize, seed: u64) -> Result<Self> {
        Ok(Self::Disjoint {
            re: NetworkParams::init(width, input_dim, seed, 0)?,
            im: NetworkParams::init(width, input_dim, seed, 1)?,
        })
    }

    pub fn init_shared_hidden(width: usize, input_dim: usize, seed: u64) -> Result<Self> {
        let re = NetworkParams::init(width, input_dim, seed, 0)?;
        let im = NetworkParams::init(width, input_dim, seed, 1)?;
        Ok(Self::SharedHidden {
            re,
            im_w2: im.w2,
            im_b2: im.b2,
        })
    }

    pub fn is_disjoint(&self) -> bool {
        matches!(self, Self::Disjoint { .. })
    }

    pub fn input_dim(&self) -> usize {
        self.real_part().input_dim()
    }

    pub fn real_part(&self) -> &NetworkParams {
        match self {
            Self::Disjoint { re, .. } | Self::SharedHidden { re, .. } => re,
        }
    }

    /// The imaginary-part network as a standalone real network.
    pub fn imag_part(&self) -> NetworkParams {
        match self {
            Self::Disjoint { im, .. } => im.clone(),
            Self::SharedHidden { re, im_w2, im_b2 } => NetworkParams {
                w1: re.w1.clone(),
                b1: re.b1.clone(),
                w2: im_w2.clone(),
                b2: *im_b2,
                seed: re.seed,
            },
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<Complex64> {
        Ok(Complex64::new(
            self.real_part().forward(x)?,
            self.imag_part().forward(x)?,
        ))
    }

    pub fn values_batch(&self, xs: ArrayView2<f64>) -> Result<Array1<Complex64>> {
        let re = self.real_part().forward_batch(xs)?;
        let im = self.imag_part().forward_batch(xs)?;
        Ok(re
            .iter()
            .zip(im.iter())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect())
    }

    /// Number of entries in the joint parameter vector.
    pub fn n_params(&self) -> usize {
        match self {
            Self::Disjoint { re, im } => re.n_params() + im.n_params(),
            Self::SharedHidden { re, .. } => re.n_params() + re.width() + 1,
        }
    }

    /// Jacobians of `ψ₁` and `ψ₂` with respect to the joint parameter vector.
    ///
    /// Disjoint layout: `[θ_re, θ_im]`. Shared layout: `[W1, b1, w2_re,
    /// b2_re, w2_im, b2_im]`.
    pub fn joint_jacobians(&self, xs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = xs.nrows();
        match self {
            Self::Disjoint { re, im } => {
                let (p1, p2) = (re.n_params(), im.n_params());
                let mut j1 = Array2::zeros((n, p1 + p2));
                let mut j2 = Array2::zeros((n, p1 + p2));
                j1.slice_mut(s![.., ..p1]).assign(&re.jacobian_batch(xs)?);
                j2.slice_mut(s![.., p1..]).assign(&im.jacobian_batch(xs)?);
                Ok((j1, j2))
            }
            Self::SharedHidden { re, .. } => {
                let im = self.imag_part();
                let (w, d) = (re.width(), re.input_dim());
                let head = w * (d + 1);
                let tail = w + 1;
                let total = head + 2 * tail;
                let jr = re.jacobian_batch(xs)?;
                let ji = im.jacobian_batch(xs)?;
                let mut j1 = Array2::zeros((n, total));
                let mut j2 = Array2::zeros((n, total));
                j1.slice_mut(s![.., ..head + tail]).assign(&jr);
                j2.slice_mut(s![.., ..head])
                    .assign(&ji.slice(s![.., ..head]));
                j2.slice_mut(s![.., head + tail..])
                    .assign(&ji.slice(s![.., head..]));
                Ok((j1, j2))
            }
        }
    }

    pub fn evaluate_on_basis(&self, basis: &Basis) -> Result<Wavefunction> {
        let xs = basis.encode_all();
        Wavefunction::new(basis.meta(), self.values_batch(xs.view())?.to_vec())
    }

    pub fn to_checkpoint(&self, step: usize) -> Result<Checkpoint> {
        match self {
            Self::Disjoint { re, im } => Ok(Checkpoint {
                step,
                seed: re.seed,
                re: re.to_checkpoint(),
                im: im.to_checkpoint(),
            }),
            Self::SharedHidden { .. } => Err(Error::Argument(
                "checkpoints are only defined for disjoint networks".into(),
            )),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Ok(Self::Disjoint {
            re: NetworkParams::from_checkpoint(&c.re, c.seed)?,
            im: NetworkParams::from_checkpoint(&c.im, c.seed)?,
        })
    }
}

/// First-order Taylor expansion of a real network around `base`:
/// `f_lin(x; θ) = f(x; θ₀) + J(x; θ₀)·(θ − θ₀)`.
#[derive(Debug, Clone)]
pub struct LinearizedNetwork {
    base: NetworkParams,
    delta: Array1<f64>,
}

impl LinearizedNetwork {
    pub fn new(base: NetworkParams) -> Self {
        let p = base.n_params();
        Self {
            base,
            delta: Array1::zeros(p),
        }
    }

    pub fn n_params(&self) -> usize {
        self.delta.len()
    }

    /// Current parameters `θ` in flattened order.
    pub fn params(&self) -> Array1<f64> {
        self.base.flatten() + &self.delta
    }

    pub fn set_params(&mut self, theta: ArrayView1<f64>) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Shape("parameter length mismatch".into()));
        }
        self.delta = &theta - &self.base.flatten();
        Ok(())
    }

    pub fn forward_batch(&self, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.base.forward_batch(xs)? + self.base.jacobian_batch(xs)?.dot(&self.delta))
    }

    /// Gradient of `Σ_a coeff_a f_lin(x_a)`; independent of `θ`.
    pub fn weighted_gradient(
        &self,
        xs: ArrayView2<f64>,
        coeff: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        self.base.weighted_gradient(xs, coeff)
    }
}

fn check_coeff(coeff: Array1<f64>, rows: usize) -> Result<Array1<f64>> {
    if coeff.len() != rows {
        return Err(Error::Shape(
            "one coefficient per input row required".into(),
        ));
    }
    Ok(coeff)
}

/// Running sums `Σ_a c_a σ'(z_a) x_a`, `Σ_a c_a σ'(z_a)` and `Σ_a c_a σ(z_a)`
/// before the per-unit output-weight scaling.
struct GradientAccumulator {
    /// Row `k < d` holds the `W1` sums (inputs already scaled by `1/√d`),
    /// row `d` the bias sums.
    gate_x: Array2<f64>,
    act: Array1<f64>,
}

impl GradientAccumulator {
    fn new(p: &NetworkParams) -> Self {
        Self {
            gate_x: Array2::zeros((p.input_dim() + 1, p.width())),
            act: Array1::zeros(p.width()),
        }
    }

    /// `aug` holds augmented input rows and `act` their hidden activations.
    fn add(&mut self, aug: ArrayView2<f64>, mut act: Array2<f64>, coeff: ArrayView1<f64>) {
        let sums = self.act.as_slice_mut().expect("fresh array");
        for (mut row, &c) in act.outer_iter_mut().zip(coeff) {
            let row = row.as_slice_mut().expect("fresh array");
            for (a, sum) in row.iter_mut().zip(sums.iter_mut()) {
                *sum += c * *a;
                // σ(z) > 0 exactly where σ'(z) = 1.
                *a = if *a > 0.0 { c } else { 0.0 };
            }
        }
        general_mat_mul(1.0, &aug.t(), &act, 1.0, &mut self.gate_x);
    }

    fn finish(self, p: &NetworkParams, coeff_sum: f64) -> Array1<f64> {
        let (width, d) = (p.width(), p.input_dim());
        let inv_sqrt_n = (width as f64).sqrt().recip();
        let mut grad = Array1::zeros(p.n_params());
        let g = grad.as_slice_mut().expect("fresh array");
        let (g_w1, rest) = g.split_at_mut(width * d);
        let (g_b1, rest) = rest.split_at_mut(width);
        let (g_w2, g_b2) = rest.split_at_mut(width);
        let scale: Vec<f64> = p.w2.iter().map(|w| w * inv_sqrt_n).collect();
        let sums = self.gate_x.as_slice().expect("fresh array");
        for j in 0..width {
            for k in 0..d {
                g_w1[j * d + k] = scale[j] * sums[k * width + j];
            }
            g_b1[j] = scale[j] * sums[d * width + j];
            g_w2[j] = inv_sqrt_n * self.act[j];
        }
        g_b2[0] = coeff_sum;
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::BasisMeta;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let v = normal_vec(seed, 99, 1.0, n * d);
        Array2::from_shape_vec((n, d), v).unwrap()
    }

    /// Scalar-loop oracle written without ndarray algebra.
    fn forward_oracle(p: &NetworkParams, x: &[f64]) -> f64 {
        let (n, d) = (p.width(), p.input_dim());
        let mut out = 0.0;
        for j in 0..n {
            let mut z = p.b1[j];
            for k in 0..d {
                z += p.w1[[j, k]] * x[k] / (d as f64).sqrt();
            }
            if z > 0.0 {
                out += p.w2[j] * z;
            }
        }
        out / (n as f64).sqrt() + p.b2
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let p = NetworkParams::init(4, 12, 17, 0).unwrap();
        let x = vec![1.0; 12];
        assert!((p.forward(&x).unwrap() - forward_oracle(&p, &x)).abs() < 1e-12);
        let xs = random_inputs(20, 12, 3);
        let batch = p.forward_batch(xs.view()).unwrap();
        for (a, row) in xs.outer_iter().enumerate() {
            assert!((batch[a] - forward_oracle(&p, row.as_slice().unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_network_outputs_bias() {
        let mut p = NetworkParams::init(8, 3, 1, 0).unwrap();
        p.w2.fill(0.0);
        p.b2 = 0.7;
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), 0.7);
        let mut q = NetworkParams::init(8, 3, 1, 0).unwrap();
        q.b1.fill(0.0);
        assert_eq!(q.forward(&[0.0; 3]).unwrap(), q.b2);
    }

    #[test]
    fn shape_errors() {
        let p = NetworkParams::init(3, 4, 0, 0).unwrap();
        assert!(matches!(p.forward(&[1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            NetworkParams::init(0, 4, 0, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn jacobian_structure() {
        let p = NetworkParams::init(6, 5, 4, 0).unwrap();
        let x = [0.3, -1.0, 0.5, 1.2, -0.4];
        let jac = p.jacobian(&x).unwrap();
        assert_eq!(jac[p.n_params() - 1], 1.0);
        let pre = p
            .preactivations(ArrayView2::from_shape((1, 5), &x).unwrap())
            .unwrap();
        for j in 0..6 {
            if pre[[0, j]] < 0.0 {
                assert!((0..5).all(|k| jac[j * 5 + k] == 0.0));
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for seed in 0..5 {
            let p = NetworkParams::init(7, 4, seed, 0).unwrap();
            let x = random_inputs(1, 4, seed + 100).row(0).to_vec();
            let jac = p.jacobian(&x).unwrap();
            let theta = p.flatten();
            let h = 1e-6;
            for i in 0..p.n_params() {
                let mut plus = theta.clone();
                plus[i] += h;
                let mut minus = theta.clone();
                minus[i] -= h;
                let fp = NetworkParams::from_flat(7, 4, plus.view(), 0)
                    .unwrap()
                    .forward(&x)
                    .unwrap();
                let fm = NetworkParams::from_flat(7, 4, minus.view(), 0)
                    .unwrap()
                    .forward(&x)
                    .unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - jac[i]).abs() <= 1e-6 * jac[i].abs().max(1.0),
                    "param {i}"
                );
            }
        }
    }

    #[test]
    fn weighted_gradient_is_jacobian_contraction() {
        let p = NetworkParams::init(9, 3, 5, 0).unwrap();
        let xs = random_inputs(6, 3, 8);
        let c = Array1::from(vec![0.5, -1.0, 2.0, 0.1, 0.0, -0.3]);
        let direct = p.jacobian_batch(xs.view()).unwrap().t().dot(&c);
        let fast = p.weighted_gradient(xs.view(), c.view()).unwrap();
        for (a, b) in direct.iter().zip(fast.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn flatten_round_trip_and_checkpoint() {
        let p = NetworkParams::init(5, 3, 11, 0).unwrap();
        let q = NetworkParams::from_flat(5, 3, p.flatten().view(), 11).unwrap();
        assert_eq!(p, q);
        let c = ComplexNnqs::init_disjoint(5, 3, 11).unwrap();
        let json = serde_json::to_string(&c.to_checkpoint(7).unwrap()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(ComplexNnqs::from_checkpoint(&back).unwrap(), c);
    }

    #[test]
    fn relu_positive_homogeneity() {
        let mut p = NetworkParams::init(10, 4, 2, 0).unwrap();
        p.b1.fill(0.0);
        p.b2 = 0.0;
        let x = [0.2, -0.7, 1.1, 0.4];
        let f = p.forward(&x).unwrap();
        for lambda in [0.5, 2.0, 7.3] {
            let xl: Vec<f64> = x.iter().map(|v| v * lambda).collect();
            assert!((p.forward(&xl).unwrap() - lambda * f).abs() < 1e-12);
        }
    }

    #[test]
    fn initialisation_variance() {
        let p = NetworkParams::init(1000, 1000, 3, 0).unwrap();
        let var = p.w1.iter().map(|v| v * v).sum::<f64>() / 1e6;
        assert!((var / WEIGHT_VARIANCE - 1.0).abs() < 0.01, "{var}");
        let q = NetworkParams::init(100_000, 1, 3, 0).unwrap();
        let var_b = q.b1.iter().map(|v| v * v).sum::<f64>() / 1e5;
        assert!((var_b / BIAS_VARIANCE - 1.0).abs() < 0.02, "{var_b}");
    }

    #[test]
    fn seeds_are_reproducible_and_parts_independent() {
        let a = ComplexNnqs::init_disjoint(4, 2, 9).unwrap();
        let b = ComplexNnqs::init_disjoint(4, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.real_part().w1, a.imag_part().w1);
    }

    #[test]
    fn complex_value_parts() {
        let c = ComplexNnqs::init_disjoint(6, 3, 1).unwrap();
        let x = [1.0, -1.0, 1.0];
        let v = c.value(&x).unwrap();
        assert_eq!(v.re, c.real_part().forward(&x).unwrap());
        assert_eq!(v.im, c.imag_part().forward(&x).unwrap());
        if let ComplexNnqs::Disjoint { re, mut im } = c.clone() {
            im.w2.fill(0.0);
            im.b2 = 0.0;
            let real_only = ComplexNnqs::Disjoint {
                re: re.clone(),
                im: im.clone(),
            };
            assert_eq!(real_only.value(&x).unwrap().im, 0.0);
            let mut neg = im.clone();
            neg.w2.mapv_inplace(|w| -w);
            neg.b2 = -neg.b2;
            let orig = ComplexNnqs::Disjoint {
                re: re.clone(),
                im: c.imag_part(),
            };
            let mut flipped_im = c.imag_part();
            flipped_im.w2.mapv_inplace(|w| -w);
            flipped_im.b2 = -flipped_im.b2;
            let flipped = ComplexNnqs::Disjoint { re, im: flipped_im };
            assert_eq!(orig.value(&x).unwrap().conj(), flipped.value(&x).unwrap());
        }
    }

    #[test]
    fn output_mean_over_seeds_vanishes() {
        let x = [1.0, -1.0, 1.0, 1.0];
        let k = 10_000;
        let vals: Vec<Complex64> = (0..k)
            .map(|s| {
                ComplexNnqs::init_disjoint(16, 4, s)
                    .unwrap()
                    .value(&x)
                    .unwrap()
            })
            .collect();
        for part in [|z: &Complex64| z.re, |z: &Complex64| z.im] {
            let xs: Vec<f64> = vals.iter().map(part).collect();
            let mean = xs.iter().sum::<f64>() / k as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            assert!(mean.abs() < 3.0 * (var / k as f64).sqrt(), "{mean}");
        }
    }

    #[test]
    fn evaluate_on_basis_matches_pointwise_values() {
        let basis = BasisMeta::Spin { n_sites: 3 }.build().unwrap();
        let c = ComplexNnqs::init_disjoint(5, 3, 4).unwrap();
        let psi = c.evaluate_on_basis(&basis).unwrap();
        assert_eq!(psi.len(), 8);
        for k in 0..8 {
            let v = c.value(&basis.encode(k).0).unwrap();
            assert!((psi.amplitudes[k] - v).norm() < 1e-14);
        }
        assert_eq!(psi, c.evaluate_on_basis(&basis).unwrap());

        let mut constant = c.clone();
        if let ComplexNnqs::Disjoint { re, im } = &mut constant {
            re.w2.fill(0.0);
            im.w2.fill(0.0);
        }
        let flat = constant.evaluate_on_basis(&basis).unwrap();
        let expected = Complex64::new(c.real_part().b2, c.imag_part().b2);
        assert!(flat.amplitudes.iter().all(|z| *z == expected));
    }

    #[test]
    fn joint_jacobians_shared_layout() {
        let c = ComplexNnqs::init_shared_hidden(4, 3, 2).unwrap();
        let xs = random_inputs(3, 3, 1);
        let (j1, j2) = c.joint_jacobians(xs.view()).unwrap();
        assert_eq!(j1.ncols(), c.n_params());
        let head = 4 * 4;
        // ψ₁ does not depend on the imaginary head, ψ₂ not on the real head.
        assert!(j1.slice(s![.., head + 5..]).iter().all(|v| *v == 0.0));
        assert!(j2.slice(s![.., head..head + 5]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linearized_network_at_base_matches_network() {
        let p = NetworkParams::init(6, 3, 8, 0).unwrap();
        let lin = LinearizedNetwork::new(p.clone());
        let xs = random_inputs(4, 3, 2);
        assert_eq!(
            lin.forward_batch(xs.view()).unwrap(),
            p.forward_batch(xs.view()).unwrap()
        );
    }
}
