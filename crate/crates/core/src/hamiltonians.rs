//! Builders for the long-range row/column model, the nearest-neighbour
//! comparison model, the polarizing field used for initialization, and the
//! local random-field noise.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pauli::{Lattice, OperatorSum, Pauli, PauliString};

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Row (σ^x) and column (σ^y) coupling strengths, in units of a reference energy J.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingParams {
    pub jx: f64,
    pub jy: f64,
}

impl CouplingParams {
    pub fn new(jx: f64, jy: f64) -> Result<Self> {
        let p = Self { jx, jy };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(j: f64) -> Self {
        Self { jx: j, jy: j }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jx.is_finite() && self.jy.is_finite()) || self.jx < 0.0 || self.jy < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "couplings must be finite and non-negative (jx = {}, jy = {})",
                self.jx, self.jy
            )));
        }
        if self.jx == 0.0 && self.jy == 0.0 {
            return Err(Error::InvalidParameter("jx and jy cannot both vanish".into()));
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.jx.max(self.jy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Boundary {
    Open,
    Periodic,
}

/// `−Jx Σ_i (Σ_j σ^x_ij)² − Jy Σ_j (Σ_i σ^y_ij)²`, expanded to
/// `−(Jx+Jy)N²·I − 2Jx Σ_rows σ^xσ^x − 2Jy Σ_columns σ^yσ^y` over all pairs.
pub fn build_lri(lattice: Lattice, params: CouplingParams) -> Result<OperatorSum> {
    params.validate()?;
    let n = lattice.n();
    let mut terms = Vec::with_capacity(1 + n * n * (n - 1));
    terms.push(PauliString::identity(re(-(params.jx + params.jy) * (n * n) as f64)));
    for a in 0..n {
        for b in 0..n {
            for c in b + 1..n {
                if params.jx != 0.0 {
                    terms.push(PauliString::new(
                        re(-2.0 * params.jx),
                        &[(lattice.site_index(a, b), Pauli::X), (lattice.site_index(a, c), Pauli::X)],
                    )?);
                }
                if params.jy != 0.0 {
                    terms.push(PauliString::new(
                        re(-2.0 * params.jy),
                        &[(lattice.site_index(b, a), Pauli::Y), (lattice.site_index(c, a), Pauli::Y)],
                    )?);
                }
            }
        }
    }
    OperatorSum::new(lattice, terms)
}

/// Nearest-neighbour compass model:
/// `−s·[Jx Σ σ^x_{i,j}σ^x_{i,j+1} + Jy Σ σ^y_{i,j}σ^y_{i+1,j}]` with `s = normalization`.
///
/// With periodic boundaries the wrap bond is only added for N ≥ 3 (for N = 2
/// it would duplicate the open bond).
pub fn build_sri(
    lattice: Lattice,
    params: CouplingParams,
    boundary: Boundary,
    normalization: f64,
) -> Result<OperatorSum> {
    params.validate()?;
    let n = lattice.n();
    if n < 2 {
        return Err(Error::InvalidLattice("the nearest-neighbour model needs N ≥ 2".into()));
    }
    if !(normalization.is_finite() && normalization > 0.0) {
        return Err(Error::InvalidParameter(format!("normalization {normalization} must be positive")));
    }
    let bonds: Vec<(usize, usize)> = {
        let mut v: Vec<(usize, usize)> = (0..n - 1).map(|k| (k, k + 1)).collect();
        if boundary == Boundary::Periodic && n > 2 {
            v.push((n - 1, 0));
        }
        v
    };
    let mut terms = Vec::new();
    for line in 0..n {
        for &(a, b) in &bonds {
            if params.jx != 0.0 {
                terms.push(PauliString::new(
                    re(-normalization * params.jx),
                    &[(lattice.site_index(line, a), Pauli::X), (lattice.site_index(line, b), Pauli::X)],
                )?);
            }
            if params.jy != 0.0 {
                terms.push(PauliString::new(
                    re(-normalization * params.jy),
                    &[(lattice.site_index(a, line), Pauli::Y), (lattice.site_index(b, line), Pauli::Y)],
                )?);
            }
        }
    }
    OperatorSum::new(lattice, terms)
}

/// `−sign·strength·Σ σ^x`; `sign = +1` favours |+x⟩ on every site.
pub fn build_external_field(lattice: Lattice, sign: i32, strength: f64) -> Result<OperatorSum> {
    if !(strength.is_finite() && strength > 0.0) {
        return Err(Error::InvalidParameter(format!("field strength {strength} must be positive")));
    }
    if sign != 1 && sign != -1 {
        return Err(Error::InvalidParameter(format!("field sign must be ±1, got {sign}")));
    }
    let c = re(-(sign as f64) * strength);
    let terms = (0..lattice.site_count())
        .map(|s| PauliString::single(c, s, Pauli::X))
        .collect::<Result<Vec<_>>>()?;
    OperatorSum::new(lattice, terms)
}

/// Static local fields `(b^x, b^y, b^z)` per site, indexed by `Lattice::site_index`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseField {
    n: usize,
    b: Vec<[f64; 3]>,
}

impl NoiseField {
    pub fn zeros(lattice: Lattice) -> Self {
        Self { n: lattice.n(), b: vec![[0.0; 3]; lattice.site_count()] }
    }

    pub fn from_values(lattice: Lattice, b: Vec<[f64; 3]>) -> Result<Self> {
        if b.len() != lattice.site_count() {
            return Err(Error::InvalidParameter(format!(
                "noise field has {} sites, lattice has {}",
                b.len(),
                lattice.site_count()
            )));
        }
        if b.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("noise field values must be finite".into()));
        }
        Ok(Self { n: lattice.n(), b })
    }

    /// The same `(b^x, b^y, b^z)` on every site.
    pub fn uniform(lattice: Lattice, b: [f64; 3]) -> Self {
        Self { n: lattice.n(), b: vec![b; lattice.site_count()] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.b
    }

    pub fn set(&mut self, site: usize, b: [f64; 3]) {
        self.b[site] = b;
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { n: self.n, b: self.b.iter().map(|v| v.map(|x| a * x)).collect() }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `Σ_{ij} (b^x σ^x + b^y σ^y + b^z σ^z)_{ij}`; zero coefficients are dropped.
pub fn build_noise(lattice: Lattice, field: &NoiseField) -> Result<OperatorSum> {
    if field.n != lattice.n() {
        return Err(Error::InvalidParameter(format!(
            "noise field is {0}×{0}, lattice is {1}×{1}",
            field.n,
            lattice.n()
        )));
    }
    let mut terms = Vec::with_capacity(3 * lattice.site_count());
    for (site, b) in field.b.iter().enumerate() {
        for (v, p) in b.iter().zip([Pauli::X, Pauli::Y, Pauli::Z]) {
            if *v != 0.0 {
                terms.push(PauliString::single(re(*v), site, p)?);
            }
        }
    }
    OperatorSum::new(lattice, terms)
}

/// I.i.d. uniform fields on the open interval (−b_max, b_max), drawn site by
/// site in (x, y, z) order from a ChaCha8 stream seeded with `seed`.
pub fn sample_noise(lattice: Lattice, b_max: f64, seed: u64) -> Result<NoiseField> {
    sample_noise_stream(lattice, b_max, seed, 0)
}

/// Like [`sample_noise`] but on an independent ChaCha stream, so trial `k` of
/// a sweep gets its own sequence regardless of scheduling.
pub fn sample_noise_stream(lattice: Lattice, b_max: f64, seed: u64, stream: u64) -> Result<NoiseField> {
    if !(b_max.is_finite() && b_max >= 0.0) {
        return Err(Error::InvalidParameter(format!("b_max = {b_max} must be finite and ≥ 0")));
    }
    if b_max == 0.0 {
        return Ok(NoiseField::zeros(lattice));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut draw = || loop {
        let v: f64 = rng.gen_range(-b_max..b_max);
        if v != -b_max {
            break v;
        }
    };
    let b = (0..lattice.site_count()).map(|_| [draw(), draw(), draw()]).collect();
    Ok(NoiseField { n: lattice.n(), b })
}
