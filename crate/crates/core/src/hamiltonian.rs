//! Transverse-field Ising and Fermi-Hubbard Hamiltonians, ground states and
//! real-time evolution (ħ = 1).
//!
//! Both Hamiltonians are real symmetric in the occupation basis, so matrix
//! elements are stored as `f64`. Wavefunctions are complex.
//!
//! Fermion modes are ordered up-spins on sites `0..n` followed by down-spins
//! on sites `0..n`; the Jordan-Wigner string runs over that ordering.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hilbert::{BasisMeta, FockBasis, Lattice};
use crate::linalg;

/// Dimension up to which ground states and evolution use a dense
/// eigendecomposition; Krylov methods take over above it.
pub const DENSE_LIMIT: usize = 8192;
/// Target accuracy of the Krylov propagator and Lanczos ground state.
pub const KRYLOV_TOL: f64 = 1e-10;

/// Real symmetric sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseHamiltonian {
    /// Assemble from `(row, col, value)` triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= dim || c >= dim) {
            return Err(Error::Shape(format!(
                "entry ({r}, {c}) outside dimension {dim}"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut h = Self {
            dim,
            row_ptr,
            cols,
            values,
        };
        h.prune_zeros();
        Ok(h)
    }

    fn prune_zeros(&mut self) {
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    cols.push(self.cols[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.values = values;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|H_ij - conj(H_ji)|` over stored entries.
    pub fn hermiticity_error(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() == 0.0
    }

    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        for r in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k]] * self.values[k];
            }
            y[r] = acc;
        }
    }

    fn apply_real(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k]] * self.values[k];
            }
            y[r] = acc;
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.entries() {
            m[[r, c]] = v;
        }
        m
    }
}

/// `H = -Σ_<ij> σᶻ_i σᶻ_j - J Σ_i σˣ_i` on the full spin basis of `lattice`.
pub fn build_tfim(lattice: &Lattice, j: f64) -> Result<SparseHamiltonian> {
    let n = lattice.sites();
    let basis = crate::hilbert::enumerate_spin_basis(n)?;
    let dim = basis.len();
    let mut triplets = Vec::with_capacity(dim * (n + 1));
    for s in basis.states() {
        let spin = |i: usize| if s >> i & 1 == 1 { 1.0 } else { -1.0 };
        let diag: f64 = -lattice
            .bonds()
            .iter()
            .map(|&(a, b)| spin(a) * spin(b))
            .sum::<f64>();
        triplets.push((s as usize, s as usize, diag));
        if j != 0.0 {
            for i in 0..n {
                triplets.push(((s ^ (1 << i)) as usize, s as usize, -j));
            }
        }
    }
    SparseHamiltonian::from_triplets(dim, triplets)
}

/// Apply `c†_p c_q` to a packed occupation (up bits low, down bits high).
/// Returns the new occupation and the fermionic sign, or `None` if the
/// result vanishes.
fn hop(occ: u64, p: usize, q: usize) -> Option<(u64, f64)> {
    if occ >> q & 1 == 0 {
        return None;
    }
    let below = |o: u64, m: usize| (o & ((1u64 << m) - 1)).count_ones();
    let mut parity = below(occ, q);
    let occ = occ & !(1u64 << q);
    if occ >> p & 1 == 1 {
        return None;
    }
    parity += below(occ, p);
    let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
    Some((occ | 1u64 << p, sign))
}

/// `H = -Σ_<ij>,σ (c†_iσ c_jσ + h.c.) + U Σ_i n_i↑ n_i↓` in a fixed sector.
pub fn build_hubbard(lattice: &Lattice, u: f64, basis: &FockBasis) -> Result<SparseHamiltonian> {
    let n = lattice.sites();
    if basis.n_sites() != n {
        return Err(Error::Shape(format!(
            "basis has {} sites, lattice has {n}",
            basis.n_sites()
        )));
    }
    let pack = |up: u32, down: u32| up as u64 | (down as u64) << n;
    let mut triplets = Vec::new();
    for (col, state) in basis.states().iter().enumerate() {
        let doubles = (state.up & state.down).count_ones() as f64;
        triplets.push((col, col, u * doubles));
        let occ = pack(state.up, state.down);
        for &(i, j) in lattice.bonds() {
            for offset in [0, n] {
                for (p, q) in [(i + offset, j + offset), (j + offset, i + offset)] {
                    if let Some((new, sign)) = hop(occ, p, q) {
                        let mask = (1u64 << n) - 1;
                        let target = crate::hilbert::FockState {
                            up: (new & mask) as u32,
                            down: (new >> n) as u32,
                        };
                        let row = basis
                            .index_of(target)
                            .ok_or_else(|| Error::Domain("hopping left the sector".into()))?;
                        triplets.push((row, col, -sign));
                    }
                }
            }
        }
    }
    SparseHamiltonian::from_triplets(basis.len(), triplets)
}

/// Complex amplitudes in basis order.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    pub basis: BasisMeta,
    pub amplitudes: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct WavefunctionRepr {
    basis: BasisMeta,
    amplitudes: Vec<[f64; 2]>,
}

impl Serialize for Wavefunction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        WavefunctionRepr {
            basis: self.basis.clone(),
            amplitudes: self.amplitudes.iter().map(|z| [z.re, z.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Wavefunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = WavefunctionRepr::deserialize(d)?;
        Ok(Wavefunction {
            basis: repr.basis,
            amplitudes: repr
                .amplitudes
                .into_iter()
                .map(|[re, im]| Complex64::new(re, im))
                .collect(),
        })
    }
}

impl Wavefunction {
    pub fn new(basis: BasisMeta, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Domain(
                "wavefunction has non-finite amplitudes".into(),
            ));
        }
        Ok(Self { basis, amplitudes })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes.iter_mut().for_each(|z| *z /= n);
        }
        self
    }

    pub fn inner(&self, other: &Wavefunction) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// `|+⟩^{⊗n}`: uniform amplitude `2^{-n/2}` on every spin configuration.
pub fn polarized_state(n_sites: usize) -> Result<Wavefunction> {
    let basis = crate::hilbert::enumerate_spin_basis(n_sites)?;
    let amp = Complex64::new((basis.len() as f64).sqrt().recip(), 0.0);
    Wavefunction::new(BasisMeta::Spin { n_sites }, vec![amp; basis.len()])
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub state: Wavefunction,
}

/// Fix the global phase: largest-magnitude amplitude real and positive.
fn fix_phase(v: &mut [f64]) {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |best, (i, &x)| {
            if x.abs() > best.1 + 1e-12 {
                (i, x.abs())
            } else {
                best
            }
        })
        .0;
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Lowest eigenpair. Dense below [`DENSE_LIMIT`], restarted Lanczos above.
///
/// Degenerate ground manifolds return whichever vector the solver produces.
pub fn ground_state(h: &SparseHamiltonian, basis: BasisMeta) -> Result<GroundState> {
    let (energy, mut v) = if h.dim() <= DENSE_LIMIT {
        let eig = linalg::sym_eigh(h.to_dense().view())?;
        (eig.values[0], eig.vectors.column(0).to_vec())
    } else {
        lanczos_ground_state(h, KRYLOV_TOL, 50)?
    };
    fix_phase(&mut v);
    let state = Wavefunction::new(
        basis,
        v.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
    )?;
    Ok(GroundState { energy, state })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted Lanczos with full reorthogonalisation.
pub fn lanczos_ground_state(
    h: &SparseHamiltonian,
    tol: f64,
    max_restarts: usize,
) -> Result<(f64, Vec<f64>)> {
    let dim = h.dim();
    let m = dim.min(120);
    // Deterministic, generic start vector.
    let mut start: Vec<f64> = (0..dim)
        .map(|i| 1.0 + 0.1 * ((i as f64) * 0.7).sin())
        .collect();
    let mut residual = f64::INFINITY;
    let mut w = vec![0.0; dim];
    for _ in 0..max_restarts {
        let norm = dot(&start, &start).sqrt();
        start.iter_mut().for_each(|x| *x /= norm);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..m {
            h.apply_real(&basis[j], &mut w);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            for v in &basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
            let b = dot(&w, &w).sqrt();
            if j + 1 == m || b < 1e-13 {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let k = alpha.len();
        let mut t = Array2::zeros((k, k));
        for i in 0..k {
            t[[i, i]] = alpha[i];
            if i + 1 < k {
                t[[i, i + 1]] = beta[i];
                t[[i + 1, i]] = beta[i];
            }
        }
        let eig = linalg::sym_eigh(t.view())?;
        let coeffs = eig.vectors.column(0);
        let mut ritz = vec![0.0; dim];
        for (c, v) in coeffs.iter().zip(&basis) {
            ritz.iter_mut().zip(v).for_each(|(x, y)| *x += c * y);
        }
        let norm = dot(&ritz, &ritz).sqrt();
        ritz.iter_mut().for_each(|x| *x /= norm);
        h.apply_real(&ritz, &mut w);
        let energy = dot(&ritz, &w);
        residual = w
            .iter()
            .zip(&ritz)
            .map(|(hx, x)| (hx - energy * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < tol {
            return Ok((energy, ritz));
        }
        start = ritz;
    }
    Err(Error::NotConverged {
        method: "lanczos ground state",
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMethod {
    /// Dense below [`DENSE_LIMIT`], Krylov above.
    Auto,
    Dense,
    Krylov,
}

/// `e^{-iHt} ψ₀`.
pub fn evolve(h: &SparseHamiltonian, psi0: &Wavefunction, t: f64) -> Result<Wavefunction> {
    evolve_with(h, psi0, t, EvolutionMethod::Auto)
}

pub fn evolve_with(
    h: &SparseHamiltonian,
    psi0: &Wavefunction,
    t: f64,
    method: EvolutionMethod,
) -> Result<Wavefunction> {
    if psi0.len() != h.dim() {
        return Err(Error::Shape(format!(
            "state has {} amplitudes, Hamiltonian dimension {}",
            psi0.len(),
            h.dim()
        )));
    }
    if t == 0.0 {
        return Ok(psi0.clone());
    }
    let dense = match method {
        EvolutionMethod::Auto => h.dim() <= DENSE_LIMIT,
        EvolutionMethod::Dense => true,
        EvolutionMethod::Krylov => false,
    };
    let amplitudes = if dense {
        evolve_dense(h, &psi0.amplitudes, t)?
    } else {
        evolve_krylov(h, &psi0.amplitudes, t, KRYLOV_TOL)?
    };
    Wavefunction::new(psi0.basis.clone(), amplitudes)
}

fn evolve_dense(h: &SparseHamiltonian, psi0: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
    let eig = linalg::sym_eigh(h.to_dense().view())?;
    let v = &eig.vectors;
    let re = Array1::from_iter(psi0.iter().map(|z| z.re));
    let im = Array1::from_iter(psi0.iter().map(|z| z.im));
    let (cr, ci) = (v.t().dot(&re), v.t().dot(&im));
    let mut rot_re = Array1::zeros(eig.dim());
    let mut rot_im = Array1::zeros(eig.dim());
    for k in 0..eig.dim() {
        let phase = Complex64::from_polar(1.0, -eig.values[k] * t);
        let c = Complex64::new(cr[k], ci[k]) * phase;
        rot_re[k] = c.re;
        rot_im[k] = c.im;
    }
    let (out_re, out_im) = (v.dot(&rot_re), v.dot(&rot_im));
    Ok(out_re
        .iter()
        .zip(out_im.iter())
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect())
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Lanczos propagator with adaptive sub-steps.
///
/// For each sub-step a Krylov basis of dimension up to `MAX_KRYLOV` is built
/// once; the step is halved until the a-posteriori error estimate
/// `β_m |[e^{-iTτ} e₁]_m|` falls below its share of `tol`.
pub fn evolve_krylov(
    h: &SparseHamiltonian,
    psi0: &[Complex64],
    t: f64,
    tol: f64,
) -> Result<Vec<Complex64>> {
    const MAX_KRYLOV: usize = 40;
    let dim = h.dim();
    let mut psi = psi0.to_vec();
    let mut elapsed = 0.0;
    let mut w = vec![Complex64::new(0.0, 0.0); dim];
    let mut tau = t;
    while (t - elapsed).abs() > 0.0 {
        let norm = cnorm(&psi);
        if norm == 0.0 {
            return Ok(psi);
        }
        let mut basis: Vec<Vec<Complex64>> = vec![psi.iter().map(|z| z / norm).collect()];
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        let mut tail_beta = 0.0;
        for j in 0..MAX_KRYLOV.min(dim) {
            h.apply(&basis[j], &mut w);
            alpha.push(cdot(&basis[j], &w).re);
            for v in &basis {
                let c = cdot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
            let b = cnorm(&w);
            tail_beta = b;
            if b < 1e-13 || j + 1 == MAX_KRYLOV.min(dim) {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|z| z / b).collect());
        }
        let k = alpha.len();
        let mut tri = Array2::zeros((k, k));
        for i in 0..k {
            tri[[i, i]] = alpha[i];
            if i + 1 < k {
                tri[[i, i + 1]] = beta[i];
                tri[[i + 1, i]] = beta[i];
            }
        }
        let eig = linalg::sym_eigh(tri.view())?;
        let remaining = t - elapsed;
        tau = if tau.abs() > remaining.abs() || tau == 0.0 {
            remaining
        } else {
            tau.min(remaining)
        };
        let coeffs = loop {
            let c: Vec<Complex64> = (0..k)
                .map(|row| {
                    (0..k)
                        .map(|m| {
                            eig.vectors[[row, m]]
                                * eig.vectors[[0, m]]
                                * Complex64::from_polar(1.0, -eig.values[m] * tau)
                        })
                        .sum()
                })
                .collect();
            let err = tail_beta * c[k - 1].norm() * norm;
            let budget = tol * (tau / t).abs().max(1e-3);
            if tail_beta < 1e-13 || err <= budget {
                break c;
            }
            tau *= 0.5;
            if tau.abs() < 1e-12 * t.abs() {
                return Err(Error::NotConverged {
                    method: "krylov propagator",
                    residual: err,
                });
            }
        };
        let mut next = vec![Complex64::new(0.0, 0.0); dim];
        for (c, v) in coeffs.iter().zip(&basis) {
            next.iter_mut().zip(v).for_each(|(x, y)| *x += c * y * norm);
        }
        psi = next;
        elapsed += tau;
        if (t - elapsed).abs() < 1e-14 * t.abs() {
            break;
        }
        // let the next step try to grow again
        tau *= 2.0;
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{enumerate_hubbard_basis, FockState};

    fn spectrum(h: &SparseHamiltonian) -> Vec<f64> {
        linalg::sym_eigvals(h.to_dense().view()).unwrap().to_vec()
    }

    #[test]
    fn classical_ising_two_sites() {
        let lat = Lattice::open(1, 2).unwrap();
        let h = build_tfim(&lat, 0.0).unwrap();
        assert_eq!(h.diagonal(), vec![-1.0, 1.0, 1.0, -1.0]);
        assert_eq!(h.nnz(), 4);
    }

    #[test]
    fn single_site_transverse_field() {
        let h = build_tfim(&Lattice::open(1, 1).unwrap(), 1.0).unwrap();
        let w = spectrum(&h);
        assert!((w[0] + 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let gs = ground_state(&h, BasisMeta::Spin { n_sites: 1 }).unwrap();
        let s = 0.5f64.sqrt();
        assert!((gs.state.amplitudes[0].re - s).abs() < 1e-12);
        assert!((gs.state.amplitudes[1].re - s).abs() < 1e-12);
    }

    #[test]
    fn tfim_weak_field_ground_state_lives_on_aligned_states() {
        let h = build_tfim(&Lattice::open(1, 2).unwrap(), 0.0).unwrap();
        let gs = ground_state(&h, BasisMeta::Spin { n_sites: 2 }).unwrap();
        assert_eq!(gs.energy, -1.0);
        assert!(gs.state.amplitudes[1].norm() < 1e-12 && gs.state.amplitudes[2].norm() < 1e-12);
    }

    #[test]
    fn builders_are_exactly_hermitian() {
        let lat = Lattice::open(2, 3).unwrap();
        assert!(build_tfim(&lat, 0.37).unwrap().is_hermitian());
        let basis = enumerate_hubbard_basis(6, 2, 1).unwrap();
        assert!(build_hubbard(&lat, 3.0, &basis).unwrap().is_hermitian());
    }

    #[test]
    fn hubbard_dimer_free_spectrum() {
        let lat = Lattice::open(1, 2).unwrap();
        let basis = enumerate_hubbard_basis(2, 1, 1).unwrap();
        let w = spectrum(&build_hubbard(&lat, 0.0, &basis).unwrap());
        for (a, b) in w.iter().zip([-2.0, 0.0, 0.0, 2.0]) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn hubbard_diagonal_counts_doubles() {
        let lat = Lattice::open(1, 3).unwrap();
        let basis = enumerate_hubbard_basis(3, 2, 2).unwrap();
        let h = build_hubbard(&lat, 2.5, &basis).unwrap();
        for (k, s) in basis.states().iter().enumerate() {
            assert_eq!(h.get(k, k), 2.5 * (s.up & s.down).count_ones() as f64);
        }
    }

    #[test]
    fn hubbard_dimer_ground_energy() {
        let lat = Lattice::open(1, 2).unwrap();
        let basis = enumerate_hubbard_basis(2, 1, 1).unwrap();
        for u in [4.0, 40.0, 400.0] {
            let h = build_hubbard(&lat, u, &basis).unwrap();
            let e = ground_state(
                &h,
                BasisMeta::Fock {
                    n_sites: 2,
                    n_up: 1,
                    n_down: 1,
                },
            )
            .unwrap()
            .energy;
            let dense_oracle = spectrum(&h)[0];
            assert!((e - dense_oracle).abs() < 1e-12);
            assert!((e - (u - (u * u + 16.0).sqrt()) / 2.0).abs() < 1e-10);
            if u >= 400.0 {
                assert!((e / (-4.0 / u) - 1.0).abs() < 1e-3);
            }
        }
    }

    /// Explicit Jordan-Wigner operators on the full Fock space of `modes`
    /// modes. Basis index bit `m` is the occupation of mode `m`.
    fn jw_annihilators(modes: usize) -> Vec<Array2<f64>> {
        let dim = 1usize << modes;
        let a = ndarray::array![[0.0, 1.0], [0.0, 0.0]];
        let z = ndarray::array![[1.0, 0.0], [0.0, -1.0]];
        let id = Array2::<f64>::eye(2);
        (0..modes)
            .map(|p| {
                // Kronecker order: highest mode leftmost, so mode m is bit m.
                let mut op = Array2::<f64>::eye(1);
                for m in (0..modes).rev() {
                    let f = if m == p {
                        &a
                    } else if m < p {
                        &z
                    } else {
                        &id
                    };
                    op = kron(&op, f);
                }
                assert_eq!(op.dim(), (dim, dim));
                op
            })
            .collect()
    }

    fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let (ar, ac) = a.dim();
        let (br, bc) = b.dim();
        let mut out = Array2::zeros((ar * br, ac * bc));
        for i in 0..ar {
            for j in 0..ac {
                for k in 0..br {
                    for l in 0..bc {
                        out[[i * br + k, j * bc + l]] = a[[i, j]] * b[[k, l]];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn jordan_wigner_operators_anticommute() {
        let c = jw_annihilators(4);
        for p in 0..4 {
            for q in 0..4 {
                let anti = c[p].dot(&c[q].t()) + c[q].t().dot(&c[p]);
                let expected: Array2<f64> = if p == q {
                    Array2::eye(16)
                } else {
                    Array2::zeros((16, 16))
                };
                assert_eq!(anti, expected);
            }
        }
    }

    #[test]
    fn hubbard_matches_operator_oracle() {
        for (rows, cols, n_up, n_down) in [(1, 2, 1, 1), (1, 3, 2, 1), (1, 3, 2, 2)] {
            let lat = Lattice::open(rows, cols).unwrap();
            let n = lat.sites();
            let u = 1.7;
            let c = jw_annihilators(2 * n);
            let full = 1usize << (2 * n);
            let mut oracle = Array2::<f64>::zeros((full, full));
            for &(i, j) in lat.bonds() {
                for off in [0, n] {
                    let t = c[i + off].t().dot(&c[j + off]);
                    oracle = oracle - &t - &t.t();
                }
            }
            for i in 0..n {
                let nu = c[i].t().dot(&c[i]);
                let nd = c[i + n].t().dot(&c[i + n]);
                oracle = oracle + nu.dot(&nd) * u;
            }
            let basis = enumerate_hubbard_basis(n, n_up, n_down).unwrap();
            let h = build_hubbard(&lat, u, &basis).unwrap();
            let index = |s: FockState| s.up as usize | (s.down as usize) << n;
            for (r, sr) in basis.states().iter().enumerate() {
                for (col, sc) in basis.states().iter().enumerate() {
                    assert_eq!(
                        h.get(r, col),
                        oracle[[index(*sr), index(*sc)]],
                        "({r},{col})"
                    );
                }
            }
        }
    }

    #[test]
    fn polarized_states() {
        let p1 = polarized_state(1).unwrap();
        assert!((p1.amplitudes[0].re - 0.5f64.sqrt()).abs() < 1e-15);
        let p12 = polarized_state(12).unwrap();
        assert!(p12
            .amplitudes
            .iter()
            .all(|z| *z == Complex64::new(1.0 / 64.0, 0.0)));
        for n in 1..10 {
            assert!((polarized_state(n).unwrap().norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn evolution_identity_and_diagonal_phases() {
        let h = build_tfim(&Lattice::open(1, 3).unwrap(), 0.0).unwrap();
        let psi = polarized_state(3).unwrap();
        assert_eq!(evolve(&h, &psi, 0.0).unwrap(), psi);
        for method in [EvolutionMethod::Dense, EvolutionMethod::Krylov] {
            let out = evolve_with(&h, &psi, 0.8, method).unwrap();
            for (k, (a, b)) in out.amplitudes.iter().zip(&psi.amplitudes).enumerate() {
                let expected = b * Complex64::from_polar(1.0, -h.get(k, k) * 0.8);
                assert!((a - expected).norm() < 1e-11, "{method:?}");
            }
        }
    }

    #[test]
    fn krylov_agrees_with_dense() {
        let h = build_tfim(&Lattice::open(2, 3).unwrap(), 0.7).unwrap();
        let psi = polarized_state(6).unwrap();
        let dense = evolve_with(&h, &psi, 2.1, EvolutionMethod::Dense).unwrap();
        let krylov = evolve_with(&h, &psi, 2.1, EvolutionMethod::Krylov).unwrap();
        let err = dense
            .amplitudes
            .iter()
            .zip(&krylov.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn lanczos_matches_dense_ground_energy() {
        let lat = Lattice::open(2, 3).unwrap();
        let basis = enumerate_hubbard_basis(6, 2, 2).unwrap();
        let h = build_hubbard(&lat, 4.0, &basis).unwrap();
        let (e, v) = lanczos_ground_state(&h, 1e-10, 50).unwrap();
        assert!((e - spectrum(&h)[0]).abs() < 1e-10);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wavefunction_json_format() {
        let psi = Wavefunction::new(
            BasisMeta::Spin { n_sites: 1 },
            vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, -0.8)],
        )
        .unwrap();
        let json = serde_json::to_string(&psi).unwrap();
        assert_eq!(
            json,
            r#"{"basis":{"kind":"spin","n_sites":1},"amplitudes":[[0.6,0.0],[0.0,-0.8]]}"#
        );
        let back: Wavefunction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, psi);
    }

    #[test]
    fn rejects_non_finite_amplitudes() {
        let r = Wavefunction::new(
            BasisMeta::Spin { n_sites: 1 },
            vec![Complex64::new(f64::NAN, 0.0); 2],
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
