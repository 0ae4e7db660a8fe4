//! Lattices, basis enumeration and the input encodings fed to the networks.
//!
//! Spin configurations are bitstrings with bit `i` set when site `i` is
//! spin-up. Fermion configurations are pairs of bitstrings (up occupations,
//! down occupations). Both bases are kept in integer / lexicographic order so
//! that basis indices are stable across runs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest basis handled with dense downstream storage.
pub const MAX_BASIS_SIZE: usize = 1 << 20;
/// Largest number of sites for a full spin basis.
pub const MAX_SPIN_SITES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Rectangular lattice with nearest-neighbour bonds. Site `(r, c)` has index
/// `r * cols + c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lattice {
    rows: usize,
    cols: usize,
    boundary: Boundary,
    bonds: Vec<(usize, usize)>,
}

impl Lattice {
    pub fn new(rows: usize, cols: usize, boundary: Boundary) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain(format!("lattice {rows}x{cols} has no sites")));
        }
        let site = |r: usize, c: usize| r * cols + c;
        let mut bonds = Vec::new();
        let mut push = |a: usize, b: usize| {
            if a == b {
                return;
            }
            let bond = (a.min(b), a.max(b));
            if !bonds.contains(&bond) {
                bonds.push(bond);
            }
        };
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    push(site(r, c), site(r, c + 1));
                } else if boundary == Boundary::Periodic {
                    push(site(r, c), site(r, 0));
                }
                if r + 1 < rows {
                    push(site(r, c), site(r + 1, c));
                } else if boundary == Boundary::Periodic {
                    push(site(r, c), site(0, c));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            boundary,
            bonds,
        })
    }

    pub fn open(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, Boundary::Open)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn sites(&self) -> usize {
        self.rows * self.cols
    }

    /// Nearest-neighbour pairs `(i, j)` with `i < j`, each listed once.
    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }
}

/// Which physical model a basis belongs to; selects the input encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Spin,
    Hubbard,
}

/// Real input vector for a basis element.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector(pub Vec<f64>);

impl InputVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// All `2^n` spin configurations in integer order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinBasis {
    n_sites: usize,
}

impl SpinBasis {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        1 << self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, index: usize) -> u32 {
        assert!(index < self.len(), "spin basis index {index} out of range");
        index as u32
    }

    pub fn index_of(&self, state: u32) -> Option<usize> {
        ((state as usize) < self.len()).then_some(state as usize)
    }

    pub fn states(&self) -> impl Iterator<Item = u32> + '_ {
        0..self.len() as u32
    }
}

pub fn enumerate_spin_basis(n_sites: usize) -> Result<SpinBasis> {
    if n_sites == 0 {
        return Err(Error::Domain("spin basis needs at least one site".into()));
    }
    if n_sites > MAX_SPIN_SITES {
        return Err(Error::Capacity {
            what: "spin basis sites",
            requested: n_sites,
            limit: MAX_SPIN_SITES,
        });
    }
    Ok(SpinBasis { n_sites })
}

/// Occupations of the up and down species, bit `i` = site `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FockState {
    pub up: u32,
    pub down: u32,
}

/// Fixed-particle-number sector, ordered lexicographically by `(up, down)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockBasis {
    n_sites: usize,
    n_up: usize,
    n_down: usize,
    states: Vec<FockState>,
}

impl FockBasis {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_up(&self) -> usize {
        self.n_up
    }

    pub fn n_down(&self) -> usize {
        self.n_down
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, index: usize) -> FockState {
        self.states[index]
    }

    pub fn states(&self) -> &[FockState] {
        &self.states
    }

    pub fn index_of(&self, state: FockState) -> Option<usize> {
        self.states.binary_search(&state).ok()
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn fixed_popcount(n_sites: usize, count: usize) -> Vec<u32> {
    (0..1u32 << n_sites)
        .filter(|s| s.count_ones() as usize == count)
        .collect()
}

pub fn enumerate_hubbard_basis(n_sites: usize, n_up: usize, n_down: usize) -> Result<FockBasis> {
    if n_sites == 0 {
        return Err(Error::Domain(
            "fermion basis needs at least one site".into(),
        ));
    }
    if n_up > n_sites || n_down > n_sites {
        return Err(Error::Domain(format!(
            "cannot place {n_up} up and {n_down} down fermions on {n_sites} sites"
        )));
    }
    if n_sites > MAX_SPIN_SITES {
        return Err(Error::Capacity {
            what: "fermion basis sites",
            requested: n_sites,
            limit: MAX_SPIN_SITES,
        });
    }
    let size = binomial(n_sites, n_up) * binomial(n_sites, n_down);
    if size > MAX_BASIS_SIZE {
        return Err(Error::Capacity {
            what: "fermion basis size",
            requested: size,
            limit: MAX_BASIS_SIZE,
        });
    }
    let ups = fixed_popcount(n_sites, n_up);
    let downs = fixed_popcount(n_sites, n_down);
    let states = ups
        .iter()
        .flat_map(|&up| downs.iter().map(move |&down| FockState { up, down }))
        .collect();
    Ok(FockBasis {
        n_sites,
        n_up,
        n_down,
        states,
    })
}

/// Spin site value: +1 for up, -1 for down.
pub fn encode_spin(state: u32, n_sites: usize) -> InputVector {
    InputVector(
        (0..n_sites)
            .map(|i| if state >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// Hubbard site value: hole -1.5, down -0.5, up +0.5, double +1.5.
pub fn encode_fock(state: FockState, n_sites: usize) -> InputVector {
    InputVector(
        (0..n_sites)
            .map(|i| match (state.up >> i & 1, state.down >> i & 1) {
                (0, 0) => -1.5,
                (0, _) => -0.5,
                (_, 0) => 0.5,
                _ => 1.5,
            })
            .collect(),
    )
}

/// Serializable description of a basis; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BasisMeta {
    Spin {
        n_sites: usize,
    },
    Fock {
        n_sites: usize,
        n_up: usize,
        n_down: usize,
    },
}

impl BasisMeta {
    pub fn build(&self) -> Result<Basis> {
        match *self {
            BasisMeta::Spin { n_sites } => enumerate_spin_basis(n_sites).map(Basis::Spin),
            BasisMeta::Fock {
                n_sites,
                n_up,
                n_down,
            } => enumerate_hubbard_basis(n_sites, n_up, n_down).map(Basis::Fock),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Basis {
    Spin(SpinBasis),
    Fock(FockBasis),
}

impl Basis {
    pub fn len(&self) -> usize {
        match self {
            Basis::Spin(b) => b.len(),
            Basis::Fock(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Basis::Spin(b) => b.n_sites(),
            Basis::Fock(b) => b.n_sites(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Basis::Spin(_) => ModelKind::Spin,
            Basis::Fock(_) => ModelKind::Hubbard,
        }
    }

    pub fn meta(&self) -> BasisMeta {
        match self {
            Basis::Spin(b) => BasisMeta::Spin {
                n_sites: b.n_sites(),
            },
            Basis::Fock(b) => BasisMeta::Fock {
                n_sites: b.n_sites(),
                n_up: b.n_up(),
                n_down: b.n_down(),
            },
        }
    }

    pub fn encode(&self, index: usize) -> InputVector {
        match self {
            Basis::Spin(b) => encode_spin(b.state(index), b.n_sites()),
            Basis::Fock(b) => encode_fock(b.state(index), b.n_sites()),
        }
    }

    /// Encodings of every basis element as rows of a `len x n_sites` matrix.
    pub fn encode_all(&self) -> Array2<f64> {
        let n = self.n_sites();
        let mut out = Array2::zeros((self.len(), n));
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&ndarray::ArrayView1::from(self.encode(k).as_slice()));
        }
        out
    }

    /// Rows of `encode_all` for a subset of indices.
    pub fn encode_subset(&self, indices: &[usize]) -> Array2<f64> {
        let n = self.n_sites();
        let mut out = Array2::zeros((indices.len(), n));
        for (row, &k) in indices.iter().enumerate() {
            for (j, v) in self.encode(k).0.into_iter().enumerate() {
                out[[row, j]] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lattice_3x4_has_17_bonds() {
        let lat = Lattice::open(3, 4).unwrap();
        assert_eq!(lat.sites(), 12);
        assert_eq!(lat.bonds().len(), 17);
        let unique: HashSet<_> = lat.bonds().iter().collect();
        assert_eq!(unique.len(), 17);
        assert!(lat.bonds().iter().all(|&(i, j)| i < j && j < 12));
    }

    #[test]
    fn periodic_lattice_dedupes_short_wraps() {
        // 3x4 torus: 12 horizontal + 12 vertical.
        assert_eq!(
            Lattice::new(3, 4, Boundary::Periodic)
                .unwrap()
                .bonds()
                .len(),
            24
        );
        // A 2-wide wrap coincides with the open bond.
        assert_eq!(
            Lattice::new(1, 2, Boundary::Periodic)
                .unwrap()
                .bonds()
                .len(),
            1
        );
        assert_eq!(
            Lattice::new(1, 1, Boundary::Periodic)
                .unwrap()
                .bonds()
                .len(),
            0
        );
    }

    #[test]
    fn spin_basis_small_cases() {
        let b = enumerate_spin_basis(2).unwrap();
        assert_eq!(b.states().collect::<Vec<_>>(), vec![0b00, 0b01, 0b10, 0b11]);
        assert_eq!(enumerate_spin_basis(12).unwrap().len(), 4096);
        let b3 = enumerate_spin_basis(3).unwrap();
        for k in 0..b3.len() {
            assert_eq!(b3.index_of(b3.state(k)), Some(k));
        }
    }

    #[test]
    fn spin_basis_guard() {
        assert!(matches!(
            enumerate_spin_basis(21),
            Err(Error::Capacity { .. })
        ));
        assert!(matches!(enumerate_spin_basis(0), Err(Error::Domain(_))));
    }

    #[test]
    fn hubbard_basis_sizes() {
        assert_eq!(enumerate_hubbard_basis(2, 1, 1).unwrap().len(), 4);
        assert_eq!(enumerate_hubbard_basis(12, 2, 2).unwrap().len(), 4356);
        assert_eq!(enumerate_hubbard_basis(3, 3, 0).unwrap().len(), 1);
        assert!(matches!(
            enumerate_hubbard_basis(3, 4, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn hubbard_basis_is_sorted_with_fixed_filling() {
        let b = enumerate_hubbard_basis(6, 2, 3).unwrap();
        assert!(b.states().windows(2).all(|w| w[0] < w[1]));
        assert!(b
            .states()
            .iter()
            .all(|s| s.up.count_ones() == 2 && s.down.count_ones() == 3));
        for k in 0..b.len() {
            assert_eq!(b.index_of(b.state(k)), Some(k));
        }
    }

    #[test]
    fn spin_encoding() {
        // sites 0 and 1 up, site 2 down
        assert_eq!(encode_spin(0b011, 3).0, vec![1.0, 1.0, -1.0]);
        assert_eq!(encode_spin(0, 5).0, vec![-1.0; 5]);
    }

    #[test]
    fn hubbard_encoding() {
        let s = FockState {
            up: 0b0110,
            down: 0b1100,
        };
        // site0 hole, site1 up, site2 double, site3 down
        assert_eq!(encode_fock(s, 4).0, vec![-1.5, 0.5, 1.5, -0.5]);
    }

    #[test]
    fn encodings_are_injective() {
        let spin = Basis::Spin(enumerate_spin_basis(8).unwrap());
        let fock = Basis::Fock(enumerate_hubbard_basis(6, 2, 2).unwrap());
        for basis in [spin, fock] {
            let seen: HashSet<Vec<u64>> = (0..basis.len())
                .map(|k| basis.encode(k).0.iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(seen.len(), basis.len());
        }
    }

    #[test]
    fn meta_round_trip() {
        let b = Basis::Fock(enumerate_hubbard_basis(4, 1, 2).unwrap());
        let json = serde_json::to_string(&b.meta()).unwrap();
        assert_eq!(json, r#"{"kind":"fock","n_sites":4,"n_up":1,"n_down":2}"#);
        let back: BasisMeta = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), b);
    }
}
