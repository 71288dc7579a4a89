//! Row and column symmetry operators `P_i = Π_j σ^y_ij`, `Q_j = Π_i σ^x_ij`
//! and the block decomposition of the Hilbert space by the eigenvalues of the
//! `Q_j`.
//!
//! In the X basis every `Q_j` is diagonal: its eigenvalue on a basis state is
//! the product of the σ^x eigenvalues down column `j`. A sector fixes all N
//! column parities; the bits of rows `0..N−1` are free and the last row is
//! determined by parity, so the sector rank of a state is simply its low
//! `N(N−1)` bits.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonians::{build_lri, CouplingParams};
use crate::linalg::{LinearOperator, Scalar};
use crate::pauli::{
    apply_operator, apply_pauli_string, parity_sign, Basis, Lattice, OperatorSum, Pauli, PauliString, Space,
    StateVector, I_POW,
};

const PAR_CHUNK: usize = 1 << 12;

/// Eigenvalues `q_j ∈ {+1, −1}` of the column operators. Bit `j` of `bits`
/// is set when `q_j = −1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Parities {
    n: usize,
    bits: u32,
}

impl Parities {
    pub fn all_even(n: usize) -> Self {
        Self { n, bits: 0 }
    }

    pub fn from_bits(n: usize, bits: u32) -> Self {
        Self { n, bits: bits & ((1 << n) - 1) }
    }

    pub fn from_signs(signs: &[i32]) -> Result<Self> {
        let mut bits = 0;
        for (j, &s) in signs.iter().enumerate() {
            match s {
                1 => {}
                -1 => bits |= 1 << j,
                _ => return Err(Error::InvalidParameter(format!("parity {s} is not ±1"))),
            }
        }
        Ok(Self { n: signs.len(), bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn sign(&self, j: usize) -> i32 {
        if self.bits >> j & 1 == 1 {
            -1
        } else {
            1
        }
    }

    pub fn signs(&self) -> Vec<i32> {
        (0..self.n).map(|j| self.sign(j)).collect()
    }

    /// `−q`: every column parity reversed.
    pub fn flipped(&self) -> Self {
        Self::from_bits(self.n, !self.bits)
    }

    /// All 2^N parity vectors in reflected Gray-code order.
    pub fn gray_order(n: usize) -> Vec<Parities> {
        (0u32..1 << n).map(|k| Self::from_bits(n, k ^ (k >> 1))).collect()
    }
}

impl fmt::Display for Parities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 0..self.n {
            f.write_str(if self.sign(j) > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl Serialize for Parities {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug)]
pub struct SymmetrySet {
    pub p_ops: Vec<PauliString>,
    pub q_ops: Vec<PauliString>,
}

impl SymmetrySet {
    pub fn new(lattice: Lattice) -> Self {
        let n = lattice.n();
        let one = C64::new(1.0, 0.0);
        let p_ops = (0..n)
            .map(|i| {
                let letters: Vec<_> = (0..n).map(|j| (lattice.site_index(i, j), Pauli::Y)).collect();
                PauliString::new(one, &letters).expect("row sites are distinct")
            })
            .collect();
        let q_ops = (0..n)
            .map(|j| {
                let letters: Vec<_> = (0..n).map(|i| (lattice.site_index(i, j), Pauli::X)).collect();
                PauliString::new(one, &letters).expect("column sites are distinct")
            })
            .collect();
        Self { p_ops, q_ops }
    }
}

/// Admissible X-basis bitstrings of one Q-parity sector.
#[derive(Debug)]
pub struct SectorBasis {
    lattice: Lattice,
    parities: Parities,
    low_mask: u32,
    // full bitstring of each rank
    states: Vec<u32>,
}

impl SectorBasis {
    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn parities(&self) -> Parities {
        self.parities
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn contains(&self, state: u32) -> bool {
        (0..self.lattice.n()).all(|j| {
            let odd = (state & self.lattice.column_mask(j)).count_ones() & 1 == 1;
            odd == (self.parities.sign(j) < 0)
        })
    }

    pub fn rank(&self, state: u32) -> Option<usize> {
        self.contains(state).then_some((state & self.low_mask) as usize)
    }

    pub fn unrank(&self, rank: usize) -> u32 {
        self.states[rank]
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    /// Places sector amplitudes into a full-space X-basis state vector.
    pub fn embed<T: Scalar>(&self, amplitudes: &[T]) -> StateVector {
        assert_eq!(amplitudes.len(), self.dim());
        let mut full = vec![C64::new(0.0, 0.0); self.lattice.full_dim()];
        for (&s, &a) in self.states.iter().zip(amplitudes) {
            full[s as usize] = a.into_complex();
        }
        StateVector::new(Space::Full(self.lattice), Basis::X, full).expect("dimensions agree")
    }

    /// Sector amplitudes of a full-space X-basis state (components outside
    /// the sector are discarded).
    pub fn restrict(&self, state: &StateVector) -> Result<Vec<C64>> {
        if !state.is_full() || state.basis() != Basis::X || state.lattice() != self.lattice {
            return Err(Error::BasisMismatch("restriction needs a full-space X-basis state".into()));
        }
        Ok(self.states.iter().map(|&s| state.amplitudes()[s as usize]).collect())
    }
}

pub fn sector_decompose(lattice: Lattice, parities: Parities) -> SectorBasis {
    assert_eq!(parities.n(), lattice.n(), "one parity per column");
    let n = lattice.n();
    let free = n * (n - 1);
    let low_mask = if free == 0 { 0 } else { (1u32 << free) - 1 };
    let last_row = n - 1;
    let states = (0u32..1 << free)
        .map(|r| {
            let mut s = r;
            for j in 0..n {
                let odd = (r & lattice.column_mask(j)).count_ones() & 1 == 1;
                if odd != (parities.sign(j) < 0) {
                    s |= 1 << lattice.site_index(last_row, j);
                }
            }
            s
        })
        .collect();
    SectorBasis { lattice, parities, low_mask, states }
}

/// A Q-conserving Hermitian operator restricted to one sector, applied
/// matrix-free in the X basis.
#[derive(Debug)]
pub struct SectorOperator {
    sector: Arc<SectorBasis>,
    diagonal: Vec<f64>,
    // (flip mask in rank space, [(z mask on full bitstring, folded coefficient)])
    offdiag: Vec<(u32, Vec<(u32, C64)>)>,
    real: bool,
}

impl SectorOperator {
    pub fn sector(&self) -> &Arc<SectorBasis> {
        &self.sector
    }

    pub fn dim(&self) -> usize {
        self.sector.dim()
    }

    /// True when every matrix element is real, so the block can be solved in `f64`.
    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn apply_state(&self, state: &StateVector) -> Result<StateVector> {
        match state.space() {
            Space::Sector(s) if Arc::ptr_eq(s, &self.sector) || s.parities() == self.sector.parities() => {}
            _ => return Err(Error::BasisMismatch("state lives outside this operator's sector".into())),
        }
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        LinearOperator::<C64>::apply(self, state.amplitudes(), &mut out);
        StateVector::new(state.space().clone(), Basis::X, out)
    }

    fn apply_generic<T: Scalar>(&self, x: &[T], y: &mut [T], fold: impl Fn(C64) -> T + Sync) {
        let states = &self.sector.states;
        y.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(c, out)| {
            let base = c * PAR_CHUNK;
            for (off, o) in out.iter_mut().enumerate() {
                let r = base + off;
                let mut acc = x[r] * T::lift(self.diagonal[r]);
                for (flip, zs) in &self.offdiag {
                    let k = r ^ *flip as usize;
                    let amp = x[k];
                    let s = states[k];
                    let mut coeff = C64::new(0.0, 0.0);
                    for &(z, cz) in zs {
                        coeff += cz * parity_sign(s & z);
                    }
                    acc += fold(coeff) * amp;
                }
                *o = acc;
            }
        });
    }
}

impl LinearOperator<C64> for SectorOperator {
    fn dim(&self) -> usize {
        self.sector.dim()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.apply_generic(x, y, |c| c)
    }
}

impl LinearOperator<f64> for SectorOperator {
    fn dim(&self) -> usize {
        self.sector.dim()
    }
    /// Panics unless [`SectorOperator::is_real`].
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert!(self.real, "complex sector block applied to real vectors");
        self.apply_generic(x, y, |c| c.re)
    }
}

/// Restricts `op` to `sector`. Every term must commute with every `Q_j`.
pub fn project_operator(op: &OperatorSum, sector: &Arc<SectorBasis>) -> Result<SectorOperator> {
    let lattice = sector.lattice();
    if op.lattice() != lattice {
        return Err(Error::InvalidOperator("operator and sector use different lattices".into()));
    }
    if !op.is_hermitian() {
        return Err(Error::InvalidOperator("only Hermitian operators are projected".into()));
    }
    let sym = SymmetrySet::new(lattice);
    for (j, q) in sym.q_ops.iter().enumerate() {
        if let Some(t) = op.terms().iter().find(|t| !t.commutes_with(q)) {
            return Err(Error::SymmetryMismatch(format!("term {t} anticommutes with Q_{j}")));
        }
    }

    let framed = op.in_x_frame();
    let mut diag_terms: Vec<(u32, f64)> = Vec::new();
    let mut offdiag: Vec<(u32, Vec<(u32, C64)>)> = Vec::new();
    let mut real = true;
    for t in framed.terms() {
        if t.coeff() == C64::new(0.0, 0.0) {
            continue;
        }
        let c = t.coeff() * I_POW[((t.x_mask() & t.z_mask()).count_ones() % 4) as usize];
        if t.x_mask() == 0 {
            diag_terms.push((t.z_mask(), c.re));
            continue;
        }
        // Flips come in pairs within a column, so dropping the last-row bit
        // gives the flip in rank space.
        let flip = t.x_mask() & sector.low_mask;
        real &= c.im.abs() <= 1e-14 * c.norm().max(1.0);
        match offdiag.iter_mut().find(|(f, _)| *f == flip) {
            Some((_, zs)) => zs.push((t.z_mask(), c)),
            None => offdiag.push((flip, vec![(t.z_mask(), c)])),
        }
    }
    let diagonal = sector
        .states
        .par_iter()
        .map(|&s| diag_terms.iter().map(|&(z, c)| c * parity_sign(s & z)).sum())
        .collect();
    Ok(SectorOperator { sector: Arc::clone(sector), diagonal, offdiag, real })
}

#[derive(Clone, Debug, Serialize)]
pub struct AlgebraCheck {
    pub relation: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlgebraReport {
    pub n: usize,
    /// `"exhaustive"` (every basis state) or `"random"`.
    pub method: &'static str,
    pub test_vectors: usize,
    pub checks: Vec<AlgebraCheck>,
    pub max_residual: f64,
}

pub const ALGEBRA_TOLERANCE: f64 = 1e-10;

/// Checks the P/Q algebra and the commutation of the long-range Hamiltonian
/// (Jx = Jy = 1) with every symmetry.
pub fn verify_algebra(lattice: Lattice) -> Result<AlgebraReport> {
    let h = build_lri(lattice, CouplingParams::isotropic(1.0))?;
    verify_algebra_with(lattice, &h, 0)
}

/// As [`verify_algebra`] with a caller-supplied Hamiltonian. Exhaustive over
/// basis states for N ≤ 3, otherwise on four seeded random vectors.
pub fn verify_algebra_with(lattice: Lattice, hamiltonian: &OperatorSum, seed: u64) -> Result<AlgebraReport> {
    let n = lattice.n();
    let sym = SymmetrySet::new(lattice);
    let (method, vectors): (&'static str, Vec<StateVector>) = if n <= 3 {
        let dim = lattice.full_dim();
        ("exhaustive", (0..dim).map(|k| StateVector::basis_state(lattice, Basis::Z, k)).collect())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..4)
            .map(|_| {
                let amps = (0..lattice.full_dim()).map(|_| C64::sample(&mut rng)).collect();
                let mut s = StateVector::new(Space::Full(lattice), Basis::Z, amps).expect("dimension");
                s.normalize();
                s
            })
            .collect();
        ("random", v)
    };

    fn ps(p: &PauliString) -> impl Fn(&StateVector) -> Result<StateVector> + '_ {
        move |v| apply_pauli_string(v, p)
    }
    let mut checks = Vec::new();

    // ‖(A·B − s·B·A) v‖ maximized over the test vectors
    let residual = |a: &dyn Fn(&StateVector) -> Result<StateVector>,
                    b: &dyn Fn(&StateVector) -> Result<StateVector>,
                    sign: f64|
     -> Result<f64> {
        let mut worst = 0.0f64;
        for v in &vectors {
            let ab = a(&b(v)?)?;
            let ba = b(&a(v)?)?;
            let d: f64 = ab
                .amplitudes()
                .iter()
                .zip(ba.amplitudes())
                .map(|(x, y)| (x - y * sign).norm_sqr())
                .sum();
            worst = worst.max(d.sqrt());
        }
        Ok(worst)
    };
    let square_residual = |a: &dyn Fn(&StateVector) -> Result<StateVector>| -> Result<f64> {
        let mut worst = 0.0f64;
        for v in &vectors {
            let aa = a(&a(v)?)?;
            let d: f64 = aa.amplitudes().iter().zip(v.amplitudes()).map(|(x, y)| (x - y).norm_sqr()).sum();
            worst = worst.max(d.sqrt());
        }
        Ok(worst)
    };

    for i in 0..n {
        for j in 0..n {
            if i < j {
                checks.push(AlgebraCheck {
                    relation: format!("[P{i},P{j}]"),
                    residual: residual(&ps(&sym.p_ops[i]), &ps(&sym.p_ops[j]), 1.0)?,
                });
                checks.push(AlgebraCheck {
                    relation: format!("[Q{i},Q{j}]"),
                    residual: residual(&ps(&sym.q_ops[i]), &ps(&sym.q_ops[j]), 1.0)?,
                });
            }
            checks.push(AlgebraCheck {
                relation: format!("{{P{i},Q{j}}}"),
                residual: residual(&ps(&sym.p_ops[i]), &ps(&sym.q_ops[j]), -1.0)?,
            });
        }
    }
    for i in 0..n {
        checks.push(AlgebraCheck { relation: format!("P{i}^2-I"), residual: square_residual(&ps(&sym.p_ops[i]))? });
        checks.push(AlgebraCheck { relation: format!("Q{i}^2-I"), residual: square_residual(&ps(&sym.q_ops[i]))? });
    }
    let h = |v: &StateVector| apply_operator(v, hamiltonian);
    for i in 0..n {
        checks.push(AlgebraCheck { relation: format!("[H,P{i}]"), residual: residual(&h, &ps(&sym.p_ops[i]), 1.0)? });
        checks.push(AlgebraCheck { relation: format!("[H,Q{i}]"), residual: residual(&h, &ps(&sym.q_ops[i]), 1.0)? });
    }

    let worst = checks
        .iter()
        .max_by(|a, b| a.residual.total_cmp(&b.residual))
        .cloned()
        .unwrap_or(AlgebraCheck { relation: String::new(), residual: 0.0 });
    if worst.residual > ALGEBRA_TOLERANCE {
        return Err(Error::AlgebraViolation { check: worst.relation, residual: worst.residual });
    }
    Ok(AlgebraReport { n, method, test_vectors: vectors.len(), checks, max_residual: worst.residual })
}
