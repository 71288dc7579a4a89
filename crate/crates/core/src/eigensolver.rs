//! Dense and Lanczos eigensolvers, the symmetry-sector scan and the ground
//! doublet of the lattice models.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonians::{build_lri, build_sri, Boundary, CouplingParams};
use crate::linalg::{assemble_dense, axpy, dot, norm, normalize, scale, LinearOperator, Scalar};
use crate::pauli::{Basis, Lattice, OperatorSum, PauliString, Space, StateVector};
use crate::symmetries::{project_operator, sector_decompose, Parities, SectorBasis, SectorOperator, SymmetrySet};

/// Largest dimension accepted by [`dense_spectrum`].
pub const DENSE_MAX_DIM: usize = 4096;
/// Sector blocks up to this size are solved densely during a scan; larger
/// ones go through Lanczos.
pub const DENSE_SCAN_MAX_DIM: usize = 1024;
pub const DEGENERACY_REL_TOL: f64 = 1e-8;
pub const RESIDUAL_REL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub ground_degeneracy: usize,
    /// First level above the ground level minus E₀; NaN when no such level was computed.
    pub gap: f64,
    /// `‖Hv − λv‖` for the lowest `residuals.len()` pairs.
    pub residuals: Vec<f64>,
    pub sector_labels: Option<Vec<Parities>>,
    /// Lowest Ritz value at each convergence check of an iterative solve.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ritz_history: Vec<f64>,
}

impl SpectrumResult {
    /// Sorts the levels (carrying residuals and labels along) and extracts
    /// degeneracy and gap with absolute tolerance `deg_tol`.
    pub fn from_levels(levels: Vec<f64>, residuals: Vec<f64>, labels: Option<Vec<Parities>>, deg_tol: f64) -> Self {
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| levels[i]).collect();
        let residuals = if residuals.len() == levels.len() {
            order.iter().map(|&i| residuals[i]).collect()
        } else {
            residuals
        };
        let sector_labels = labels.map(|l| order.iter().map(|&i| l[i]).collect());
        let e0 = eigenvalues.first().copied().unwrap_or(f64::NAN);
        let ground_degeneracy = eigenvalues.iter().take_while(|&&e| e - e0 <= deg_tol).count();
        let gap = eigenvalues.get(ground_degeneracy).map_or(f64::NAN, |e| e - e0);
        Self { eigenvalues, ground_degeneracy, gap, residuals, sector_labels, ritz_history: Vec::new() }
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn default_deg_tol(e0: f64) -> f64 {
    DEGENERACY_REL_TOL * e0.abs().max(1.0)
}

/// Eigenvalues (ascending) and matching eigenvector columns.
pub(crate) fn dense_eigenpairs<T: Scalar, A: LinearOperator<T> + ?Sized>(op: &A) -> Result<(Vec<f64>, DMatrix<T>)> {
    let dim = op.dim();
    if dim > DENSE_MAX_DIM {
        return Err(Error::DimensionExceeded { dim, max: DENSE_MAX_DIM });
    }
    let eig = assemble_dense(op).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

fn dense_generic<T: Scalar, A: LinearOperator<T> + ?Sized>(op: &A) -> Result<SpectrumResult> {
    let (values, vectors) = dense_eigenpairs(op)?;
    let checked = values.len().min(32);
    let residuals = (0..checked)
        .map(|c| {
            let v: Vec<T> = vectors.column(c).iter().copied().collect();
            residual(op, values[c], &v)
        })
        .collect();
    let tol = default_deg_tol(values.first().copied().unwrap_or(0.0));
    Ok(SpectrumResult::from_levels(values, residuals, None, tol))
}

/// Full spectrum of a complex Hermitian operator (`dim ≤ 4096`).
pub fn dense_spectrum<A: LinearOperator<C64> + ?Sized>(op: &A) -> Result<SpectrumResult> {
    dense_generic(op)
}

/// Full spectrum of a real symmetric operator (`dim ≤ 4096`).
pub fn dense_spectrum_real<A: LinearOperator<f64> + ?Sized>(op: &A) -> Result<SpectrumResult> {
    dense_generic(op)
}

fn residual<T: Scalar, A: LinearOperator<T> + ?Sized>(op: &A, lambda: f64, v: &[T]) -> f64 {
    let mut w = vec![T::zero(); v.len()];
    op.apply(v, &mut w);
    axpy(T::lift(-lambda), v, &mut w);
    norm(&w)
}

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    pub k: usize,
    /// Relative residual target: converged when `‖Hv − θv‖ < tol·max(1, |θ|)`.
    pub tol: f64,
    /// Total matrix-vector products allowed.
    pub max_iter: usize,
    pub seed: u64,
    /// Krylov basis size before an explicit restart.
    pub krylov_max: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { k: 1, tol: 1e-10, max_iter: 20_000, seed: 0, krylov_max: 100 }
    }
}

pub(crate) struct Eigenpairs<T> {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<T>>,
    pub residuals: Vec<f64>,
    pub history: Vec<f64>,
}

fn orthogonalize<T: Scalar>(w: &mut [T], against: &[&[T]]) {
    // two classical Gram–Schmidt passes
    for _ in 0..2 {
        for u in against {
            let c = dot(u, w);
            axpy(-c, u, w);
        }
    }
}

fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alphas[r]
        } else if r + 1 == c {
            betas[r]
        } else if c + 1 == r {
            betas[c]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Lowest `k` eigenpairs by Lanczos with full reorthogonalization, explicit
/// restarts and locking. Degenerate copies are found by restarting from a
/// fresh random vector orthogonal to everything already locked.
pub(crate) fn lanczos_eigenpairs<T: Scalar, A: LinearOperator<T> + ?Sized>(
    op: &A,
    opts: &LanczosOptions,
) -> Result<Eigenpairs<T>> {
    let dim = op.dim();
    if opts.k == 0 || opts.k > 10 || opts.k > dim {
        return Err(Error::InvalidParameter(format!("k = {} must lie in 1..=min(10, dim = {dim})", opts.k)));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.krylov_max < 2 {
        return Err(Error::InvalidParameter("Lanczos needs tol > 0 and krylov_max ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked: Vec<Vec<T>> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut best_residual = f64::INFINITY;
    let mut restart: Option<Vec<T>> = None;

    while locked.len() < opts.k {
        let mut v0 = restart.take().unwrap_or_else(|| (0..dim).map(|_| T::sample(&mut rng)).collect());
        {
            let refs: Vec<&[T]> = locked.iter().map(|v| v.as_slice()).collect();
            orthogonalize(&mut v0, &refs);
        }
        if normalize(&mut v0) < 1e-12 {
            // start vector fell into the locked space; draw again
            continue;
        }
        let room = dim - locked.len();
        let m_max = opts.krylov_max.min(room);
        let mut basis: Vec<Vec<T>> = vec![v0];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![T::zero(); dim];
        let mut lowest: Option<(f64, Vec<f64>)> = None;
        let mut converged = false;

        for j in 0..m_max {
            op.apply(&basis[j], &mut w);
            iterations += 1;
            let alpha = dot(&basis[j], &w).real();
            axpy(T::lift(-alpha), &basis[j], &mut w);
            if j > 0 {
                axpy(T::lift(-betas[j - 1]), &basis[j - 1], &mut w);
            }
            {
                let refs: Vec<&[T]> = locked.iter().chain(basis.iter()).map(|v| v.as_slice()).collect();
                orthogonalize(&mut w, &refs);
            }
            let beta = norm(&w);
            alphas.push(alpha);
            let m = alphas.len();
            let scale_est = alphas.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
            let exhausted = beta <= 1e-13 * scale_est || m == m_max;
            if m.is_multiple_of(5) || exhausted || iterations >= opts.max_iter {
                let (theta, s) = tridiagonal_eigen(&alphas, &betas);
                let coeffs: Vec<f64> = s.column(0).iter().copied().collect();
                let res = (beta * coeffs[m - 1]).abs();
                best_residual = best_residual.min(res);
                if locked.is_empty() {
                    history.push(theta[0]);
                }
                lowest = Some((theta[0], coeffs));
                if res < opts.tol * theta[0].abs().max(1.0) || beta <= 1e-13 * scale_est {
                    converged = true;
                    break;
                }
                if exhausted {
                    break;
                }
                if iterations >= opts.max_iter {
                    return Err(Error::NotConverged { iterations, best_residual });
                }
            }
            betas.push(beta);
            let mut next = w.clone();
            scale(T::lift(1.0 / beta), &mut next);
            basis.push(next);
        }

        let (_, coeffs) = lowest.expect("at least one convergence check per run");
        let mut y = vec![T::zero(); dim];
        for (c, v) in coeffs.iter().zip(&basis) {
            axpy(T::lift(*c), v, &mut y);
        }
        normalize(&mut y);
        if converged {
            locked.push(y);
        } else {
            if iterations >= opts.max_iter {
                return Err(Error::NotConverged { iterations, best_residual });
            }
            restart = Some(y);
        }
    }

    // Rayleigh–Ritz on the locked space removes cross-talk between close pairs.
    let k = locked.len();
    let mut hy: Vec<Vec<T>> = Vec::with_capacity(k);
    for v in &locked {
        let mut w = vec![T::zero(); dim];
        op.apply(v, &mut w);
        hy.push(w);
    }
    let small = DMatrix::from_fn(k, k, |r, c| dot(&locked[r], &hy[c]));
    let eig = small.symmetric_eigen();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for &c in &order {
        let lambda = eig.eigenvalues[c];
        let mut v = vec![T::zero(); dim];
        let mut w = vec![T::zero(); dim];
        for r in 0..k {
            let coef = eig.eigenvectors[(r, c)];
            axpy(coef, &locked[r], &mut v);
            axpy(coef, &hy[r], &mut w);
        }
        axpy(T::lift(-lambda), &v, &mut w);
        residuals.push(norm(&w));
        values.push(lambda);
        vectors.push(v);
    }
    Ok(Eigenpairs { values, vectors, residuals, history })
}

/// Lowest `k` eigenvalues of a Hermitian operator; see [`LanczosOptions`].
pub fn lanczos_extremal<T: Scalar, A: LinearOperator<T> + ?Sized>(
    op: &A,
    k: usize,
    tol: f64,
    max_iter: usize,
    rng_seed: u64,
) -> Result<SpectrumResult> {
    let opts = LanczosOptions { k, tol, max_iter, seed: rng_seed, ..LanczosOptions::default() };
    let pairs = lanczos_eigenpairs(op, &opts)?;
    let tol = default_deg_tol(pairs.values[0]);
    let mut s = SpectrumResult::from_levels(pairs.values, pairs.residuals, None, tol);
    s.ritz_history = pairs.history;
    Ok(s)
}

/// Lowest `k` eigenpairs of one sector block, dense or Lanczos by size.
/// Vectors are returned as complex sector amplitudes.
fn solve_block(block: &SectorOperator, k: usize, opts: &LanczosOptions) -> Result<Eigenpairs<C64>> {
    let k = k.min(block.dim());
    if block.dim() <= DENSE_SCAN_MAX_DIM {
        fn take<T: Scalar>(vals: Vec<f64>, vecs: DMatrix<T>, k: usize, op: &dyn LinearOperator<T>) -> Eigenpairs<C64> {
            let mut out = Eigenpairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new(), history: Vec::new() };
            for (c, &val) in vals.iter().enumerate().take(k) {
                let v: Vec<T> = vecs.column(c).iter().copied().collect();
                out.residuals.push(residual(op, val, &v));
                out.vectors.push(v.into_iter().map(Scalar::into_complex).collect());
                out.values.push(val);
            }
            out
        }
        return Ok(if block.is_real() {
            let (vals, vecs) = dense_eigenpairs::<f64, _>(block)?;
            take(vals, vecs, k, block)
        } else {
            let (vals, vecs) = dense_eigenpairs::<C64, _>(block)?;
            take(vals, vecs, k, block)
        });
    }
    let opts = LanczosOptions { k, ..*opts };
    if block.is_real() {
        let p = lanczos_eigenpairs::<f64, _>(block, &opts)?;
        Ok(Eigenpairs {
            values: p.values,
            vectors: p.vectors.into_iter().map(|v| v.into_iter().map(Scalar::into_complex).collect()).collect(),
            residuals: p.residuals,
            history: p.history,
        })
    } else {
        lanczos_eigenpairs::<C64, _>(block, &opts)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScanOptions {
    pub lanczos: LanczosOptions,
    /// Solve only one sector of each `q, −q` pair when the operator commutes
    /// with `P_0` (the spectra of the two are identical).
    pub exploit_mirror: bool,
    /// Absolute tolerance for counting degenerate ground levels.
    pub deg_tol: Option<f64>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { lanczos: LanczosOptions::default(), exploit_mirror: true, deg_tol: None }
    }
}

/// A ground-level eigenvector found by the scan, in sector coordinates.
#[derive(Clone, Debug)]
pub struct SectorState {
    pub sector: Arc<SectorBasis>,
    pub energy: f64,
    pub amplitudes: Vec<C64>,
}

impl SectorState {
    pub fn parities(&self) -> Parities {
        self.sector.parities()
    }

    pub fn to_state_vector(&self) -> StateVector {
        StateVector::new(Space::Sector(Arc::clone(&self.sector)), Basis::X, self.amplitudes.clone())
            .expect("amplitudes match sector dimension")
    }
}

#[derive(Clone, Debug)]
pub struct SectorScan {
    pub spectrum: SpectrumResult,
    /// Every ground-level state (mirror partners included).
    pub ground: Vec<SectorState>,
}

/// Maps sector amplitudes through a Pauli string that carries `from` onto `to`.
fn map_sector_state(p: &PauliString, from: &SectorBasis, to: &Arc<SectorBasis>, amps: &[C64]) -> Result<Vec<C64>> {
    let px = p.in_x_frame();
    let mut out = vec![C64::new(0.0, 0.0); to.dim()];
    for (r, &a) in amps.iter().enumerate() {
        let (t, phase) = px.act_on_basis(from.unrank(r) as usize);
        let rt = to
            .rank(t as u32)
            .ok_or_else(|| Error::SymmetryMismatch(format!("{p} does not map sector {} to {}", from.parities(), to.parities())))?;
        out[rt] = phase * a;
    }
    Ok(out)
}

/// Lowest levels of every Q-parity sector of `h`.
///
/// Pass one takes the lowest level of each sector. Pass two refines the
/// sectors holding the ground level until a higher level turns up, so the
/// returned spectrum always contains E₀ with its multiplicity and the first
/// excited level.
pub fn sector_scan(h: &OperatorSum, opts: &ScanOptions) -> Result<SectorScan> {
    let lattice = h.lattice();
    let n = lattice.n();
    let sym = SymmetrySet::new(lattice);
    let mirror = opts.exploit_mirror && h.commutes_with(&sym.p_ops[0]);

    struct Solved {
        sector: Arc<SectorBasis>,
        block: SectorOperator,
        pairs: Eigenpairs<C64>,
        mirror_of: Option<usize>,
    }
    let mut solved: Vec<Solved> = Vec::new();
    let mut done: Vec<Parities> = Vec::new();
    for (idx, q) in Parities::gray_order(n).into_iter().enumerate() {
        let sector = Arc::new(sector_decompose(lattice, q));
        let block = project_operator(h, &sector)?;
        let partner = if mirror { solved.iter().position(|s| s.sector.parities() == q.flipped()) } else { None };
        let lanczos = LanczosOptions { seed: opts.lanczos.seed.wrapping_add(idx as u64), ..opts.lanczos };
        let pairs = match partner {
            Some(_) => Eigenpairs { values: Vec::new(), vectors: Vec::new(), residuals: Vec::new(), history: Vec::new() },
            None => solve_block(&block, 1, &lanczos)?,
        };
        solved.push(Solved { sector, block, pairs, mirror_of: partner });
        done.push(q);
    }

    let levels_of = |s: &Solved, all: &[Solved]| -> Vec<f64> {
        match s.mirror_of {
            Some(m) => all[m].pairs.values.clone(),
            None => s.pairs.values.clone(),
        }
    };
    let e0 = solved.iter().map(|s| levels_of(s, &solved)[0]).fold(f64::INFINITY, f64::min);
    let deg_tol = opts.deg_tol.unwrap_or_else(|| default_deg_tol(e0));

    // pass two
    let ground_idx: Vec<usize> = (0..solved.len())
        .filter(|&i| solved[i].mirror_of.is_none() && solved[i].pairs.values[0] - e0 <= deg_tol)
        .collect();
    for &i in &ground_idx {
        let mut k = 2;
        loop {
            let dim = solved[i].block.dim();
            let k_eff = k.min(dim);
            let lanczos = LanczosOptions { seed: opts.lanczos.seed.wrapping_add(1000 + i as u64), ..opts.lanczos };
            let pairs = solve_block(&solved[i].block, k_eff, &lanczos)?;
            let found_higher = pairs.values.iter().any(|&e| e - e0 > deg_tol);
            solved[i].pairs = pairs;
            if found_higher || k_eff == dim || k >= 10 {
                break;
            }
            k += 2;
        }
    }

    let mut levels = Vec::new();
    let mut residuals = Vec::new();
    let mut labels = Vec::new();
    let mut ground = Vec::new();
    let mut history = Vec::new();
    for s in &solved {
        let src = s.mirror_of.map_or(s, |m| &solved[m]);
        if history.is_empty() {
            history = src.pairs.history.clone();
        }
        for (c, &e) in src.pairs.values.iter().enumerate() {
            levels.push(e);
            residuals.push(src.pairs.residuals[c]);
            labels.push(s.sector.parities());
            if e - e0 <= deg_tol {
                let amplitudes = match s.mirror_of {
                    None => src.pairs.vectors[c].clone(),
                    Some(_) => map_sector_state(&sym.p_ops[0], &src.sector, &s.sector, &src.pairs.vectors[c])?,
                };
                ground.push(SectorState { sector: Arc::clone(&s.sector), energy: e, amplitudes });
            }
        }
    }
    let mut spectrum = SpectrumResult::from_levels(levels, residuals, Some(labels), deg_tol);
    spectrum.ritz_history = history;
    ground.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.parities().cmp(&b.parities())));
    Ok(SectorScan { spectrum, ground })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Model {
    Lri,
    Sri { boundary: Boundary, normalization: f64 },
}

impl Model {
    pub fn build(&self, lattice: Lattice, params: CouplingParams) -> Result<OperatorSum> {
        match *self {
            Model::Lri => build_lri(lattice, params),
            Model::Sri { boundary, normalization } => build_sri(lattice, params, boundary, normalization),
        }
    }

    /// Coupling of a single σσ pair in units of Jx.
    pub fn pair_coupling(&self) -> f64 {
        match *self {
            Model::Lri => 2.0,
            Model::Sri { normalization, .. } => normalization,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundDoublet {
    /// Full-space X-basis states for N ≤ 3, sector states for N ≥ 4.
    pub states: Vec<StateVector>,
    pub labels: Vec<Parities>,
    pub spectrum: SpectrumResult,
}

/// The two-fold ground space of a lattice model, each state carrying a
/// definite set of column parities.
pub fn ground_doublet(lattice: Lattice, params: CouplingParams, model: Model) -> Result<GroundDoublet> {
    ground_doublet_with(lattice, params, model, &ScanOptions::default())
}

pub fn ground_doublet_with(
    lattice: Lattice,
    params: CouplingParams,
    model: Model,
    opts: &ScanOptions,
) -> Result<GroundDoublet> {
    let h = model.build(lattice, params)?;
    let opts = ScanOptions { deg_tol: Some(opts.deg_tol.unwrap_or(DEGENERACY_REL_TOL * params.max())), ..*opts };
    let scan = sector_scan(&h, &opts)?;
    if scan.spectrum.ground_degeneracy != 2 {
        return Err(Error::UnexpectedDegeneracy {
            degeneracy: scan.spectrum.ground_degeneracy,
            spectrum: Box::new(scan.spectrum),
        });
    }
    let states = scan
        .ground
        .iter()
        .map(|g| if lattice.n() <= 3 { g.sector.embed(&g.amplitudes) } else { g.to_state_vector() })
        .collect();
    let labels = scan.ground.iter().map(|g| g.parities()).collect();
    Ok(GroundDoublet { states, labels, spectrum: scan.spectrum })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub e0: f64,
    pub ground_degeneracy: usize,
    /// Δ / Jx.
    pub gap: f64,
    /// Δ / (pair coupling), the convention of the reference gap values.
    pub gap_pair_units: f64,
}

pub fn gap_row(lattice: Lattice, params: CouplingParams, model: Model, opts: &ScanOptions) -> Result<GapRow> {
    let h = model.build(lattice, params)?;
    let opts = ScanOptions { deg_tol: Some(opts.deg_tol.unwrap_or(DEGENERACY_REL_TOL * params.max())), ..*opts };
    let s = sector_scan(&h, &opts)?.spectrum;
    Ok(GapRow {
        n: lattice.n(),
        e0: s.ground_energy(),
        ground_degeneracy: s.ground_degeneracy,
        gap: s.gap / params.jx,
        gap_pair_units: s.gap / (params.jx * model.pair_coupling()),
    })
}
