//! Normal modes of a linear Paul-trap ion chain and of a planar array of
//! microtraps, and the gap between the centre-of-mass mode and the rest.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::least_squares_slope;

/// Coulomb constant 1/(4πε₀) in SI units.
pub const COULOMB_K: f64 = 8.987_551_792_3e9;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ion {
    /// kg
    pub mass: f64,
    /// C
    pub charge: f64,
}

impl Ion {
    pub fn calcium40() -> Self {
        Self { mass: 39.962_590_9 * ATOMIC_MASS_UNIT, charge: ELEMENTARY_CHARGE }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite() && self.charge.is_finite() && self.charge != 0.0) {
            return Err(Error::InvalidParameter(format!("ion mass {} / charge {} invalid", self.mass, self.charge)));
        }
        Ok(())
    }
}

impl Default for Ion {
    fn default() -> Self {
        Self::calcium40()
    }
}

fn check_chain_size(n_ions: usize) -> Result<()> {
    if !(2..=30).contains(&n_ions) {
        return Err(Error::InvalidParameter(format!("chain length {n_ions} outside 2..=30")));
    }
    Ok(())
}

/// Force on each ion in units where the axial trap force is `−u`.
fn chain_force(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| {
            let coulomb: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d = u[i] - u[j];
                    d.signum() / (d * d)
                })
                .sum();
            coulomb - u[i]
        })
        .collect()
}

/// `½Σu² + Σ_{i<j} 1/|u_i − u_j|`.
pub fn chain_energy(u: &[f64]) -> f64 {
    let mut e = 0.5 * u.iter().map(|x| x * x).sum::<f64>();
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            e += 1.0 / (u[i] - u[j]).abs();
        }
    }
    e
}

/// Hessian of [`chain_energy`]: `A_ii = 1 + 2Σ 1/|u_i−u_k|³`, `A_ij = −2/|u_i−u_j|³`.
pub fn chain_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 + (0..n).filter(|&k| k != i).map(|k| 2.0 / (u[i] - u[k]).abs().powi(3)).sum::<f64>()
        } else {
            -2.0 / (u[i] - u[j]).abs().powi(3)
        }
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Dimensionless equilibrium positions (units of ℓ with ℓ³ = q²/(4πε₀Mω²)),
/// by damped Newton from a uniformly spaced seed.
pub fn chain_equilibrium(n_ions: usize, tol: f64) -> Result<Vec<f64>> {
    check_chain_size(n_ions)?;
    let spacing = 2.0 * (n_ions as f64).powf(-0.56);
    let mut u: Vec<f64> = (0..n_ions).map(|i| (i as f64 - 0.5 * (n_ions - 1) as f64) * spacing).collect();
    let mut f = chain_force(&u);
    let mut iterations = 0;
    while max_abs(&f) >= tol {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NotConverged { iterations, best_residual: max_abs(&f) });
        }
        let step = chain_hessian(&u)
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&f))
            .ok_or_else(|| Error::NotConverged { iterations, best_residual: max_abs(&f) })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, s)| x + lambda * s).collect();
            let ordered = trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                let ft = chain_force(&trial);
                if max_abs(&ft) < max_abs(&f) || lambda < 1e-3 {
                    u = trial;
                    f = ft;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                return Err(Error::NotConverged { iterations, best_residual: max_abs(&f) });
            }
        }
    }
    // enforce exact antisymmetry
    let sym: Vec<f64> = (0..n_ions).map(|i| 0.5 * (u[i] - u[n_ions - 1 - i])).collect();
    Ok(sym)
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainModel {
    pub n_ions: usize,
    pub positions: Vec<f64>,
    /// Ascending, in units of the axial trap frequency.
    pub mode_frequencies: Vec<f64>,
}

impl ChainModel {
    pub fn min_spacing(&self) -> f64 {
        self.positions.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

pub fn chain_modes(n_ions: usize) -> Result<ChainModel> {
    let positions = chain_equilibrium(n_ions, 1e-13)?;
    let eig = chain_hessian(&positions).symmetric_eigen();
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    lambdas.sort_by(f64::total_cmp);
    if lambdas[0] <= 0.0 {
        return Err(Error::UnstableConfiguration(format!("chain Hessian eigenvalue {}", lambdas[0])));
    }
    Ok(ChainModel { n_ions, positions, mode_frequencies: lambdas.iter().map(|l| l.sqrt()).collect() })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainGap {
    pub n_ions: usize,
    /// Hz
    pub nu: f64,
    pub nu1: f64,
    pub gap: f64,
}

/// Trap frequency at which the closest pair of ions sits exactly `a_min`
/// apart, with the breathing-mode frequency and the gap to it.
///
/// Lengths scale as ℓ ∝ ν^(−2/3), so ν follows in closed form from the
/// dimensionless minimum spacing.
pub fn chain_gap_fixed_spacing(n_ions: usize, a_min: f64, ion: Ion) -> Result<ChainGap> {
    if !(a_min.is_finite() && a_min > 0.0) {
        return Err(Error::InvalidParameter(format!("a_min = {a_min} must be positive")));
    }
    ion.validate()?;
    let model = chain_modes(n_ions)?;
    let ell = a_min / model.min_spacing();
    let omega = (COULOMB_K * ion.charge * ion.charge / (ion.mass * ell.powi(3))).sqrt();
    let nu = omega / (2.0 * PI);
    let nu1 = model.mode_frequencies[1] * nu;
    Ok(ChainGap { n_ions, nu, nu1, gap: nu1 - nu })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainScaling {
    pub rows: Vec<ChainGap>,
    /// Exponent α of gap ∝ 1/L^α with L = √n_ions, the side of the square
    /// lattice the chain encodes.
    pub alpha_linear_size: f64,
    /// Same fit against the ion count itself.
    pub alpha_ion_count: f64,
}

pub fn chain_gap_scaling(ns: &[usize], a_min: f64, ion: Ion) -> Result<ChainScaling> {
    if ns.len() < 2 {
        return Err(Error::InvalidParameter("scaling fit needs at least two chain lengths".into()));
    }
    let rows = ns.iter().map(|&n| chain_gap_fixed_spacing(n, a_min, ion)).collect::<Result<Vec<_>>>()?;
    let by_count: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n_ions as f64).ln(), r.gap.ln())).collect();
    let by_side: Vec<(f64, f64)> = rows.iter().map(|r| (0.5 * (r.n_ions as f64).ln(), r.gap.ln())).collect();
    Ok(ChainScaling {
        rows,
        alpha_linear_size: -least_squares_slope(&by_side),
        alpha_ion_count: -least_squares_slope(&by_count),
    })
}

pub const CHAIN_CSV_HEADER: &str = "n,nu_Hz,nu1_Hz,gap_Hz,alpha_fit";

pub fn chain_csv_rows(s: &ChainScaling) -> Vec<String> {
    s.rows
        .iter()
        .map(|r| format!("{},{:.8e},{:.8e},{:.8e},{:.8e}", r.n_ions, r.nu, r.nu1, r.gap, s.alpha_linear_size))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ArrayModel {
    pub n: usize,
    /// m
    pub spacing: f64,
    /// Hz
    pub trap_frequency: f64,
    pub ion: Ion,
    /// Displacement components per ion (1: along rows only, 2: in plane).
    pub dims: usize,
    /// Ascending, Hz.
    pub mode_frequencies: Vec<f64>,
    /// Indices into `mode_frequencies` of the centre-of-mass modes.
    pub com_modes: Vec<usize>,
    /// Frequency of the non-COM mode closest to ν.
    pub nu1: f64,
    /// |ν − ν₁|
    pub gap: f64,
    /// Coulomb-to-trap stiffness ratio q²/(4πε₀Mω²a³).
    pub kappa: f64,
}

/// Eigenvalues (ascending, units of Mω²) and eigenvectors of the stiffness
/// matrix of identical isotropic wells at `sites` (units of the spacing),
/// with Coulomb stiffness ratio `kappa`.
fn stiffness_modes(sites: &[[f64; 2]], kappa: f64, dims: usize) -> (Vec<f64>, DMatrix<f64>) {
    let m = sites.len() * dims;
    let mut k_mat = DMatrix::<f64>::identity(m, m);
    for a in 0..sites.len() {
        for b in a + 1..sites.len() {
            let d = [sites[b][0] - sites[a][0], sites[b][1] - sites[a][1]];
            let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let dhat = [d[0] / r, d[1] / r];
            let c = kappa / r.powi(3);
            for p in 0..dims {
                for q in 0..dims {
                    let block = c * (3.0 * dhat[p] * dhat[q] - if p == q { 1.0 } else { 0.0 });
                    k_mat[(a * dims + p, a * dims + q)] += block;
                    k_mat[(b * dims + p, b * dims + q)] += block;
                    k_mat[(a * dims + p, b * dims + q)] -= block;
                    k_mat[(b * dims + p, a * dims + q)] -= block;
                }
            }
        }
    }
    let eig = k_mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Modes of an n×n square array of identical isotropic harmonic wells with
/// the Coulomb interaction expanded to second order about the lattice sites.
pub fn array_modes(n: usize, spacing: f64, trap_frequency: f64, ion: Ion) -> Result<ArrayModel> {
    array_modes_dims(n, spacing, trap_frequency, ion, 2)
}

pub fn array_modes_dims(n: usize, spacing: f64, trap_frequency: f64, ion: Ion, dims: usize) -> Result<ArrayModel> {
    if n == 0 || !(1..=2).contains(&dims) {
        return Err(Error::InvalidParameter(format!("array size {n} / dims {dims} invalid")));
    }
    if !(spacing > 0.0 && spacing.is_finite() && trap_frequency > 0.0 && trap_frequency.is_finite()) {
        return Err(Error::InvalidParameter("spacing and trap frequency must be positive".into()));
    }
    ion.validate()?;
    let omega = 2.0 * PI * trap_frequency;
    let kappa = COULOMB_K * ion.charge * ion.charge / (ion.mass * omega * omega * spacing.powi(3));
    let sites: Vec<[f64; 2]> = (0..n * n).map(|k| [(k % n) as f64, (k / n) as f64]).collect();
    let m = n * n * dims;
    let (lambdas, vectors) = stiffness_modes(&sites, kappa, dims);
    if lambdas[0] <= 0.0 {
        return Err(Error::UnstableConfiguration(format!(
            "stiffness eigenvalue {:.3e}·Mω²: trap too weak for spacing {spacing:e} m",
            lambdas[0]
        )));
    }
    let mode_frequencies: Vec<f64> = lambdas.iter().map(|l| l.sqrt() * trap_frequency).collect();

    // COM modes: largest overlap with uniform displacement along each axis
    let mut com_modes = Vec::with_capacity(dims);
    for p in 0..dims {
        let best = (0..m)
            .max_by(|&x, &y| {
                let ov = |c: usize| -> f64 {
                    (0..n * n).map(|a| vectors[(a * dims + p, c)]).sum::<f64>().abs()
                };
                ov(x).total_cmp(&ov(y))
            })
            .expect("non-empty");
        com_modes.push(best);
    }
    let nu1 = (0..m)
        .filter(|c| !com_modes.contains(c))
        .map(|c| mode_frequencies[c])
        .min_by(|a, b| (a - trap_frequency).abs().total_cmp(&(b - trap_frequency).abs()))
        .unwrap_or(trap_frequency);
    Ok(ArrayModel {
        n,
        spacing,
        trap_frequency,
        ion,
        dims,
        gap: (trap_frequency - nu1).abs(),
        nu1,
        mode_frequencies,
        com_modes,
        kappa,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpacingSweep {
    pub spacings: Vec<f64>,
    /// gap/ν per spacing; NaN where the configuration is unstable.
    pub relative_gaps: Vec<f64>,
    /// Spacing at which gap/ν crosses `target`, by bisection between grid points.
    pub crossing: Option<f64>,
    /// Stable grid point whose gap/ν lies closest to `target`, as (spacing, gap/ν).
    pub closest: Option<(f64, f64)>,
    pub target: f64,
}

/// Logarithmic spacing sweep of [`array_modes`] locating gap/ν = `target`.
pub fn array_spacing_sweep(
    n: usize,
    trap_frequency: f64,
    ion: Ion,
    (lo, hi): (f64, f64),
    points: usize,
    target: f64,
) -> Result<SpacingSweep> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(Error::InvalidParameter("sweep needs 0 < lo < hi and ≥ 2 points".into()));
    }
    let rel = |a: f64| -> f64 {
        array_modes(n, a, trap_frequency, ion).map_or(f64::NAN, |m| m.gap / trap_frequency)
    };
    let spacings: Vec<f64> = (0..points).map(|k| lo * (hi / lo).powf(k as f64 / (points - 1) as f64)).collect();
    let relative_gaps: Vec<f64> = spacings.iter().map(|&a| rel(a)).collect();
    let mut crossing = None;
    for k in 0..points - 1 {
        let (g0, g1) = (relative_gaps[k] - target, relative_gaps[k + 1] - target);
        if g0.is_finite() && g1.is_finite() && g0.signum() != g1.signum() {
            let (mut a, mut b) = (spacings[k], spacings[k + 1]);
            let fa = g0;
            for _ in 0..80 {
                let mid = (a * b).sqrt();
                let fm = rel(mid) - target;
                if fm.signum() == fa.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            crossing = Some((a * b).sqrt());
            break;
        }
    }
    let closest = spacings
        .iter()
        .zip(&relative_gaps)
        .filter(|(_, g)| g.is_finite())
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(&a, &g)| (a, g));
    Ok(SpacingSweep { spacings, relative_gaps, crossing, closest, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain gradient descent on the chain energy, started from a wide grid.
    fn descend(n: usize) -> Vec<f64> {
        let mut u: Vec<f64> = (0..n).map(|i| (i as f64 - 0.5 * (n - 1) as f64) * 1.5).collect();
        for _ in 0..200_000 {
            let f = chain_force(&u);
            if max_abs(&f) < 1e-12 {
                break;
            }
            for (x, g) in u.iter_mut().zip(&f) {
                *x += 0.02 * g;
            }
        }
        u
    }

    #[test]
    fn two_ions_closed_form() {
        let u = chain_equilibrium(2, 1e-14).unwrap();
        let a = 2f64.powf(-2.0 / 3.0);
        assert!((u[0] + a).abs() < 1e-12 && (u[1] - a).abs() < 1e-12);
        let m = chain_modes(2).unwrap();
        assert_eq!(m.mode_frequencies.len(), 2);
        assert!((m.mode_frequencies[0] - 1.0).abs() < 1e-12);
        assert!((m.mode_frequencies[1] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn three_ions() {
        let u = chain_equilibrium(3, 1e-14).unwrap();
        let a = 1.25f64.cbrt();
        assert!((u[2] - a).abs() < 1e-12 && u[1].abs() < 1e-15);
        let m = chain_modes(3).unwrap();
        assert!((m.mode_frequencies[2] - 5.8f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn newton_matches_gradient_descent() {
        for n in 3..=10 {
            let newton = chain_equilibrium(n, 1e-13).unwrap();
            let gd = descend(n);
            assert!((chain_energy(&newton) - chain_energy(&gd)).abs() < 1e-8, "n = {n}");
            for (a, b) in newton.iter().zip(&gd) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_difference() {
        let u = chain_equilibrium(4, 1e-13).unwrap();
        let a = chain_hessian(&u);
        let h = 1e-5;
        for j in 0..4 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += h;
            dn[j] -= h;
            let (fp, fm) = (chain_force(&up), chain_force(&dn));
            for i in 0..4 {
                let fd = -(fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - a[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn com_and_breathing_modes_for_all_lengths() {
        for n in 2..=16 {
            let m = chain_modes(n).unwrap();
            assert!((m.mode_frequencies[0] - 1.0).abs() < 1e-9, "n = {n}");
            assert!((m.mode_frequencies[1] - 3f64.sqrt()).abs() < 1e-9, "n = {n}");
            assert!(m.positions.windows(2).all(|w| w[0] < w[1]));
            for i in 0..n {
                assert_eq!(m.positions[i], -m.positions[n - 1 - i]);
            }
        }
    }

    #[test]
    fn reflected_positions_give_same_modes() {
        let u = chain_equilibrium(7, 1e-13).unwrap();
        let r: Vec<f64> = u.iter().rev().map(|x| -x).collect();
        let a = chain_hessian(&u).symmetric_eigen().eigenvalues;
        let b = chain_hessian(&r).symmetric_eigen().eigenvalues;
        let (mut a, mut b): (Vec<f64>, Vec<f64>) = (a.iter().copied().collect(), b.iter().copied().collect());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_spacing_inversion() {
        let ion = Ion::calcium40();
        let g1 = chain_gap_fixed_spacing(2, 2e-6, ion).unwrap();
        let g2 = chain_gap_fixed_spacing(2, 4e-6, ion).unwrap();
        assert!((g2.nu / g1.nu - 2f64.powf(-1.5)).abs() < 1e-12);
        // two ions: spacing 2·2^(−2/3)·ℓ = a_min
        let ell = 2e-6 / (2.0 * 2f64.powf(-2.0 / 3.0));
        let nu = (COULOMB_K * ion.charge.powi(2) / (ion.mass * ell.powi(3))).sqrt() / (2.0 * PI);
        assert!((g1.nu / nu - 1.0).abs() < 1e-12);
        assert!((g1.gap - (3f64.sqrt() - 1.0) * nu).abs() < 1e-6 * nu);
    }

    #[test]
    fn gap_shrinks_roughly_as_inverse_lattice_area() {
        let ns: Vec<usize> = (4..=16).collect();
        let s = chain_gap_scaling(&ns, 2e-6, Ion::calcium40()).unwrap();
        assert!(s.rows.windows(2).all(|w| w[1].gap < w[0].gap));
        assert!((1.5..=2.5).contains(&s.alpha_linear_size), "{}", s.alpha_linear_size);
        assert!((s.alpha_linear_size - 2.0 * s.alpha_ion_count).abs() < 1e-12);
    }

    #[test]
    fn chain_size_bounds() {
        assert!(chain_equilibrium(1, 1e-12).is_err());
        assert!(chain_equilibrium(31, 1e-12).is_err());
        assert!(chain_equilibrium(30, 1e-12).is_ok());
    }

    #[test]
    fn distant_traps_decouple() {
        let m = array_modes(3, 1.0, 1e7, Ion::calcium40()).unwrap();
        assert_eq!(m.mode_frequencies.len(), 18);
        assert!(m.mode_frequencies.iter().all(|f| (f / 1e7 - 1.0).abs() < 1e-9));
        assert!(m.gap / 1e7 < 1e-9);
    }

    #[test]
    fn com_modes_sit_at_trap_frequency() {
        let m = array_modes(5, 3e-6, 1e7, Ion::calcium40()).unwrap();
        assert_eq!(m.com_modes.len(), 2);
        for &c in &m.com_modes {
            assert!((m.mode_frequencies[c] / 1e7 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_ion_array_reduces_to_chain() {
        // κ = 1/2 is where a free two-ion chain settles; projected on the
        // bond axis the fixed-well model must give the chain's {1, √3}
        let (l, _) = stiffness_modes(&[[0.0, 0.0], [1.0, 0.0]], 0.5, 1);
        assert!((l[0] - 1.0).abs() < 1e-14);
        assert!((l[1].sqrt() - chain_modes(2).unwrap().mode_frequencies[1]).abs() < 1e-12);
        // in plane the transverse relative mode softens to 1 − 2κ
        let (l, _) = stiffness_modes(&[[0.0, 0.0], [1.0, 0.0]], 0.5, 2);
        assert!(l[0].abs() < 1e-14);
    }

    #[test]
    fn weak_trap_is_unstable() {
        let r = array_modes(5, 2e-6, 1e5, Ion::calcium40());
        assert!(matches!(r, Err(Error::UnstableConfiguration(_))));
    }

    #[test]
    fn sweep_locates_target_gap() {
        // a 5×5 array at 10 MHz turns unstable before gap/ν reaches 0.1
        let s = array_spacing_sweep(5, 1e7, Ion::calcium40(), (1e-6, 1e-4), 201, 0.1).unwrap();
        assert!(s.crossing.is_none());
        let (a, g) = s.closest.unwrap();
        assert!(g > 0.07 && g < 0.1, "{a:e} {g}");
        assert!(s.relative_gaps[0].is_nan());
        // a lower target is crossed and refined
        let s = array_spacing_sweep(5, 1e7, Ion::calcium40(), (1e-6, 1e-4), 41, 0.05).unwrap();
        let a = s.crossing.unwrap();
        let m = array_modes(5, a, 1e7, Ion::calcium40()).unwrap();
        assert!((m.gap / 1e7 - 0.05).abs() < 1e-9);
    }
}
