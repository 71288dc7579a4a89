//! Bit-level Pauli strings on an N×N lattice and matrix-free application to
//! state vectors.
//!
//! A basis state is an integer whose bit `i·N + j` holds the spin at row `i`,
//! column `j`. In the Z basis bit 0 is the σ^z = +1 state; in the X basis the
//! same layout is used with bit 0 the σ^x = +1 state. A Pauli string is stored
//! as an (x, z) bitmask pair: X = (1, 0), Z = (0, 1), Y = (1, 1), with the
//! phase convention Y|0⟩ = i|1⟩, Y|1⟩ = −i|0⟩. Acting on a basis state,
//!
//! ```text
//! P |k⟩ = c · i^{|x ∧ z|} · (−1)^{|k ∧ z|} |k ⊕ x⟩
//! ```

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator};
use crate::symmetries::SectorBasis;

pub const MAX_LINEAR_SIZE: usize = 5;

const PAR_CHUNK: usize = 1 << 12;

/// Powers of i.
pub(crate) const I_POW: [C64; 4] = [
    C64 { re: 1.0, im: 0.0 },
    C64 { re: 0.0, im: 1.0 },
    C64 { re: -1.0, im: 0.0 },
    C64 { re: 0.0, im: -1.0 },
];

#[inline]
pub(crate) fn parity_sign(bits: u32) -> f64 {
    if bits.count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Lattice {
    n: usize,
}

impl Lattice {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_LINEAR_SIZE {
            return Err(Error::InvalidLattice(format!(
                "linear size {n} outside 1..={MAX_LINEAR_SIZE}"
            )));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn site_count(&self) -> usize {
        self.n * self.n
    }

    /// Bit position of row `i`, column `j` (both 0-based).
    pub fn site_index(&self, i: usize, j: usize) -> usize {
        assert!(i < self.n && j < self.n, "site ({i}, {j}) outside {0}×{0} lattice", self.n);
        i * self.n + j
    }

    pub fn full_dim(&self) -> usize {
        1usize << self.site_count()
    }

    pub fn row_mask(&self, i: usize) -> u32 {
        ((1u32 << self.n) - 1) << (i * self.n)
    }

    pub fn column_mask(&self, j: usize) -> u32 {
        (0..self.n).fold(0, |m, i| m | 1 << self.site_index(i, j))
    }

    pub fn all_sites_mask(&self) -> u32 {
        if self.site_count() == 32 {
            u32::MAX
        } else {
            (1u32 << self.site_count()) - 1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }
}

/// `coefficient × ⊗ σ` over a sparse set of sites.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliString {
    coeff: C64,
    x: u32,
    z: u32,
}

impl PauliString {
    pub fn identity(coeff: C64) -> Self {
        Self { coeff, x: 0, z: 0 }
    }

    pub fn new(coeff: C64, letters: &[(usize, Pauli)]) -> Result<Self> {
        let (mut x, mut z) = (0u32, 0u32);
        for &(site, p) in letters {
            if site >= 32 {
                return Err(Error::InvalidOperator(format!("site {site} out of range")));
            }
            let bit = 1u32 << site;
            if (x | z) & bit != 0 {
                return Err(Error::InvalidOperator(format!("site {site} appears twice")));
            }
            let (px, pz) = p.bits();
            if px {
                x |= bit;
            }
            if pz {
                z |= bit;
            }
        }
        Ok(Self { coeff, x, z })
    }

    pub fn single(coeff: C64, site: usize, p: Pauli) -> Result<Self> {
        Self::new(coeff, &[(site, p)])
    }

    pub fn coeff(&self) -> C64 {
        self.coeff
    }

    pub fn x_mask(&self) -> u32 {
        self.x
    }

    pub fn z_mask(&self) -> u32 {
        self.z
    }

    pub fn support(&self) -> u32 {
        self.x | self.z
    }

    pub fn weight(&self) -> u32 {
        self.support().count_ones()
    }

    pub fn letter(&self, site: usize) -> Option<Pauli> {
        let bit = 1u32 << site;
        match (self.x & bit != 0, self.z & bit != 0) {
            (true, false) => Some(Pauli::X),
            (true, true) => Some(Pauli::Y),
            (false, true) => Some(Pauli::Z),
            (false, false) => None,
        }
    }

    pub fn letters(&self) -> Vec<(usize, Pauli)> {
        (0..32)
            .filter_map(|s| self.letter(s).map(|p| (s, p)))
            .collect()
    }

    pub fn with_coeff(mut self, coeff: C64) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn dagger(&self) -> Self {
        Self { coeff: self.coeff.conj(), ..*self }
    }

    /// Symplectic commutation test; coefficients are irrelevant.
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()).is_multiple_of(2)
    }

    /// Operator product `self · other`, phases included.
    pub fn product(&self, other: &PauliString) -> PauliString {
        // σ(x, z) = i^{x·z} X^x Z^z per site; moving Z^{z1} past X^{x2} costs (−1)^{z1·x2}.
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let exp = (self.x & self.z).count_ones()
            + (other.x & other.z).count_ones()
            + 2 * (self.z & other.x).count_ones()
            + 4
            - (x & z).count_ones() % 4;
        let coeff = self.coeff * other.coeff * I_POW[(exp % 4) as usize];
        PauliString { coeff, x, z }
    }

    /// Phase-stripped action on one basis state: returns (target, amplitude factor).
    #[inline]
    pub fn act_on_basis(&self, k: usize) -> (usize, C64) {
        let phase = self.coeff
            * I_POW[((self.x & self.z).count_ones() % 4) as usize]
            * parity_sign(k as u32 & self.z);
        (k ^ self.x as usize, phase)
    }

    /// The same operator written in the Hadamard-rotated frame:
    /// X → Z, Z → X, Y → −Y.
    pub fn in_x_frame(&self) -> PauliString {
        let sign = parity_sign(self.x & self.z);
        PauliString { coeff: self.coeff * sign, x: self.z, z: self.x }
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+.6}{:+.6}i)", self.coeff.re, self.coeff.im)?;
        let letters = self.letters();
        if letters.is_empty() {
            return write!(f, " I");
        }
        for (s, p) in letters {
            write!(f, " {p:?}{s}")?;
        }
        Ok(())
    }
}

/// A sum of Pauli strings on one lattice, applied matrix-free.
#[derive(Clone, Debug)]
pub struct OperatorSum {
    lattice: Lattice,
    terms: Vec<PauliString>,
    hermitian: bool,
    // terms grouped by flip mask, phases i^{|x∧z|} folded into the coefficient
    groups: Vec<(u32, Vec<(u32, C64)>)>,
}

impl OperatorSum {
    /// Combines repeated strings (first-appearance order) and records whether
    /// the sum is closed under conjugation.
    pub fn new(lattice: Lattice, terms: Vec<PauliString>) -> Result<Self> {
        let valid = lattice.all_sites_mask();
        let mut index: HashMap<(u32, u32), usize> = HashMap::new();
        let mut merged: Vec<PauliString> = Vec::with_capacity(terms.len());
        for t in terms {
            if t.support() & !valid != 0 {
                return Err(Error::InvalidOperator(format!(
                    "term {t} acts outside the {0}×{0} lattice",
                    lattice.n()
                )));
            }
            match index.get(&(t.x, t.z)) {
                Some(&k) => merged[k].coeff += t.coeff,
                None => {
                    index.insert((t.x, t.z), merged.len());
                    merged.push(t);
                }
            }
        }
        // Pauli strings are Hermitian, so the sum is Hermitian iff every
        // combined coefficient is its own conjugate partner.
        let hermitian = merged
            .iter()
            .all(|t| t.coeff.im.abs() <= 1e-12 * t.coeff.norm().max(1.0));

        let mut group_index: HashMap<u32, usize> = HashMap::new();
        let mut groups: Vec<(u32, Vec<(u32, C64)>)> = Vec::new();
        for t in &merged {
            if t.coeff == C64::new(0.0, 0.0) {
                continue;
            }
            let c = t.coeff * I_POW[((t.x & t.z).count_ones() % 4) as usize];
            let g = *group_index.entry(t.x).or_insert_with(|| {
                groups.push((t.x, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push((t.z, c));
        }

        Ok(Self { lattice, terms: merged, hermitian, groups })
    }

    pub fn zero(lattice: Lattice) -> Self {
        Self::new(lattice, Vec::new()).expect("empty sum is valid")
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn scaled(&self, a: f64) -> OperatorSum {
        let terms = self.terms.iter().map(|t| t.with_coeff(t.coeff * a)).collect();
        OperatorSum::new(self.lattice, terms).expect("scaling keeps sites valid")
    }

    pub fn plus(&self, other: &OperatorSum) -> Result<OperatorSum> {
        if self.lattice != other.lattice {
            return Err(Error::InvalidOperator("operators live on different lattices".into()));
        }
        let terms = self.terms.iter().chain(&other.terms).copied().collect();
        OperatorSum::new(self.lattice, terms)
    }

    /// Coefficient of the identity string.
    pub fn constant(&self) -> C64 {
        self.terms
            .iter()
            .filter(|t| t.support() == 0)
            .map(|t| t.coeff)
            .sum()
    }

    /// True when every term commutes with `p`. Distinct strings have distinct
    /// commutators, so this is exact for the whole sum.
    pub fn commutes_with(&self, p: &PauliString) -> bool {
        self.terms
            .iter()
            .all(|t| t.coeff == C64::new(0.0, 0.0) || t.commutes_with(p))
    }

    pub fn in_x_frame(&self) -> OperatorSum {
        let terms = self.terms.iter().map(PauliString::in_x_frame).collect();
        OperatorSum::new(self.lattice, terms).expect("frame change keeps sites valid")
    }

    fn apply_slice(&self, x: &[C64], y: &mut [C64]) {
        y.par_chunks_mut(PAR_CHUNK).enumerate().for_each(|(c, out)| {
            let base = c * PAR_CHUNK;
            for (off, o) in out.iter_mut().enumerate() {
                let m = base + off;
                let mut acc = C64::new(0.0, 0.0);
                for (flip, zs) in &self.groups {
                    let k = m ^ *flip as usize;
                    let amp = x[k];
                    if amp == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut coeff = C64::new(0.0, 0.0);
                    for &(z, c) in zs {
                        if (k as u32 & z).count_ones() & 1 == 0 {
                            coeff += c;
                        } else {
                            coeff -= c;
                        }
                    }
                    acc += coeff * amp;
                }
                *o = acc;
            }
        });
    }
}

impl LinearOperator<C64> for OperatorSum {
    fn dim(&self) -> usize {
        self.lattice.full_dim()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.apply_slice(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Basis {
    Z,
    X,
}

#[derive(Clone, Debug)]
pub enum Space {
    Full(Lattice),
    Sector(Arc<SectorBasis>),
}

impl Space {
    pub fn lattice(&self) -> Lattice {
        match self {
            Space::Full(l) => *l,
            Space::Sector(s) => s.lattice(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Space::Full(l) => l.full_dim(),
            Space::Sector(s) => s.dim(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StateVector {
    amplitudes: Vec<C64>,
    basis: Basis,
    space: Space,
}

impl StateVector {
    pub fn new(space: Space, basis: Basis, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        if matches!(space, Space::Sector(_)) && basis != Basis::X {
            return Err(Error::BasisMismatch("sector states are stored in the X basis".into()));
        }
        Ok(Self { amplitudes, basis, space })
    }

    pub fn basis_state(lattice: Lattice, basis: Basis, index: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); lattice.full_dim()];
        amplitudes[index] = C64::new(1.0, 0.0);
        Self { amplitudes, basis, space: Space::Full(lattice) }
    }

    /// |+x⟩^⊗N² for `sign = +1`, |−x⟩^⊗N² for `sign = −1`, in the Z basis.
    pub fn x_polarized(lattice: Lattice, sign: i32) -> Self {
        let index = if sign >= 0 { 0 } else { lattice.full_dim() - 1 };
        Self::basis_state(lattice, Basis::X, index).to_z_basis()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn lattice(&self) -> Lattice {
        self.space.lattice()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_full(&self) -> bool {
        matches!(self.space, Space::Full(_))
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.amplitudes)
    }

    pub fn normalize(&mut self) -> f64 {
        linalg::normalize(&mut self.amplitudes)
    }

    /// ⟨self|other⟩; both must share basis and space dimension.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.basis != other.basis || self.dim() != other.dim() {
            return Err(Error::BasisMismatch("inner product of incompatible states".into()));
        }
        Ok(linalg::dot(&self.amplitudes, &other.amplitudes))
    }

    fn with_amplitudes(&self, amplitudes: Vec<C64>) -> Self {
        Self { amplitudes, basis: self.basis, space: self.space.clone() }
    }

    pub fn to_x_basis(&self) -> StateVector {
        self.rotated(Basis::X)
    }

    pub fn to_z_basis(&self) -> StateVector {
        self.rotated(Basis::Z)
    }

    fn rotated(&self, target: Basis) -> StateVector {
        assert!(self.is_full(), "basis rotation needs a full-space state; embed the sector first");
        if self.basis == target {
            return self.clone();
        }
        let mut a = self.amplitudes.clone();
        hadamard_all(&mut a);
        StateVector { amplitudes: a, basis: target, space: self.space.clone() }
    }
}

/// Applies H^{⊗n} in place (normalized Walsh–Hadamard transform).
pub(crate) fn hadamard_all(a: &mut [C64]) {
    let dim = a.len();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = 1;
    while h < dim {
        for block in a.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (p, q) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*p, *q);
                *p = (u + v) * s;
                *q = (u - v) * s;
            }
        }
        h *= 2;
    }
}

fn check_full(state: &StateVector, lattice: Lattice, what: &str) -> Result<()> {
    match &state.space {
        Space::Full(l) if *l == lattice => Ok(()),
        Space::Full(_) => Err(Error::BasisMismatch(format!("{what}: lattice size differs from the state's"))),
        Space::Sector(_) => Err(Error::BasisMismatch(format!(
            "{what}: sector states need a projected operator (symmetries::project_operator)"
        ))),
    }
}

/// `p|ψ⟩` for a full-space Z-basis state.
pub fn apply_pauli_string(state: &StateVector, p: &PauliString) -> Result<StateVector> {
    let lattice = state.lattice();
    if p.support() & !lattice.all_sites_mask() != 0 {
        return Err(Error::InvalidOperator(format!("{p} acts outside the lattice")));
    }
    check_full(state, lattice, "apply_pauli_string")?;
    if state.basis != Basis::Z {
        return Err(Error::BasisMismatch("apply_pauli_string expects a Z-basis state".into()));
    }
    let mut out = vec![C64::new(0.0, 0.0); state.dim()];
    for (k, &a) in state.amplitudes.iter().enumerate() {
        let (t, ph) = p.act_on_basis(k);
        out[t] += ph * a;
    }
    Ok(state.with_amplitudes(out))
}

/// `op|ψ⟩` for a full-space state in either basis (X-basis states are
/// handled by rotating the operator, not the state).
pub fn apply_operator(state: &StateVector, op: &OperatorSum) -> Result<StateVector> {
    check_full(state, op.lattice(), "apply_operator")?;
    let mut out = vec![C64::new(0.0, 0.0); state.dim()];
    match state.basis {
        Basis::Z => op.apply(&state.amplitudes, &mut out),
        Basis::X => op.in_x_frame().apply(&state.amplitudes, &mut out),
    }
    Ok(state.with_amplitudes(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub value: f64,
    /// Imaginary part of ⟨ψ|op|ψ⟩; round-off only for Hermitian operators.
    pub imaginary: f64,
}

pub fn expectation(state: &StateVector, op: &OperatorSum) -> Result<Expectation> {
    if !op.is_hermitian() {
        return Err(Error::InvalidOperator("expectation needs a Hermitian operator".into()));
    }
    let image = apply_operator(state, op)?;
    let v = linalg::dot(&state.amplitudes, &image.amplitudes);
    Ok(Expectation { value: v.re, imaginary: v.im })
}
