//! Doublet splitting under static random fields, the protected decoherence
//! rate and the lifetime table built from it.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::eigensolver::{dense_eigenpairs, lanczos_eigenpairs, LanczosOptions};
use crate::error::{Error, Result};
use crate::hamiltonians::{build_lri, build_noise, sample_noise_stream, CouplingParams, NoiseField};
use crate::pauli::{Lattice, OperatorSum};

/// Full spaces up to this size are diagonalized densely; beyond it the two
/// lowest levels come from Lanczos.
const SPLITTING_DENSE_MAX_DIM: usize = 64;
/// Relative Lanczos residual for the two lowest levels. The nearest level to
/// each Ritz value is its doublet partner, so the error is about residual²/δE
/// and the residual must sit well below the smallest splitting.
const SPLITTING_RESIDUAL_TOL: f64 = 1e-12;
/// Splittings below this fraction of the coupling scale are treated as exact
/// degeneracy by [`perturbation_scaling`].
const EXACT_SPLITTING_REL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct SplittingStats {
    pub n: usize,
    pub b_max: f64,
    pub trials: usize,
    pub seed: u64,
    /// δE = E₁ − E₀ per trial, in units of J.
    pub samples: Vec<f64>,
    pub e0: Vec<f64>,
    pub e1: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SplittingStats {
    fn from_levels(n: usize, b_max: f64, seed: u64, levels: Vec<(f64, f64)>) -> Self {
        let e0: Vec<f64> = levels.iter().map(|l| l.0).collect();
        let e1: Vec<f64> = levels.iter().map(|l| l.1).collect();
        let samples: Vec<f64> = levels.iter().map(|(a, b)| b - a).collect();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let t = sorted.len();
        let median = if t == 0 {
            f64::NAN
        } else if t % 2 == 1 {
            sorted[t / 2]
        } else {
            0.5 * (sorted[t / 2 - 1] + sorted[t / 2])
        };
        Self {
            n,
            b_max,
            trials: t,
            seed,
            mean: samples.iter().sum::<f64>() / t as f64,
            min: sorted.first().copied().unwrap_or(f64::NAN),
            max: sorted.last().copied().unwrap_or(f64::NAN),
            median,
            samples,
            e0,
            e1,
        }
    }

    /// CSV data rows: `trial,seed,b_max,E0,E1,deltaE`.
    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.trials)
            .map(|t| {
                format!(
                    "{t},{},{:.8e},{:.8e},{:.8e},{:.8e}",
                    self.seed, self.b_max, self.e0[t], self.e1[t], self.samples[t]
                )
            })
            .collect()
    }
}

pub const SPLITTING_CSV_HEADER: &str = "trial,seed,b_max,E0,E1,deltaE";

/// Two lowest levels of a Hermitian operator on the full space.
fn lowest_pair(h: &OperatorSum, seed: u64) -> Result<(f64, f64)> {
    if h.lattice().full_dim() <= SPLITTING_DENSE_MAX_DIM {
        let (vals, _): (Vec<f64>, DMatrix<C64>) = dense_eigenpairs(h)?;
        return Ok((vals[0], vals[1]));
    }
    let opts = LanczosOptions { k: 2, tol: SPLITTING_RESIDUAL_TOL, seed, ..LanczosOptions::default() };
    let p = lanczos_eigenpairs::<C64, _>(h, &opts)?;
    Ok((p.values[0], p.values[1]))
}

/// Monte Carlo splitting of the long-range model's ground doublet under
/// i.i.d. uniform fields in (−b_max, b_max). Trial `t` draws its field from
/// ChaCha stream `t` of `seed`.
pub fn doublet_splitting(
    lattice: Lattice,
    params: CouplingParams,
    b_max: f64,
    trials: usize,
    seed: u64,
) -> Result<SplittingStats> {
    if lattice.n() > 4 {
        return Err(Error::InvalidLattice("noise splitting needs the full space, so N ≤ 4".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let h0 = build_lri(lattice, params)?;
    let levels = (0..trials)
        .into_par_iter()
        .map(|t| {
            let run = || -> Result<(f64, f64)> {
                let field = sample_noise_stream(lattice, b_max, seed, t as u64)?;
                let h = h0.plus(&build_noise(lattice, &field)?)?;
                lowest_pair(&h, seed ^ t as u64)
            };
            run().map_err(|e| Error::Trial { trial: t, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplittingStats::from_levels(lattice.n(), b_max, seed, levels))
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingFit {
    pub eps: Vec<f64>,
    pub splitting: Vec<f64>,
    /// Least-squares slope of log δE against log ε; infinite when the
    /// doublet stays degenerate at every ε.
    pub exponent: f64,
    pub exact_protection: bool,
}

/// δE(ε) for `H_LRI + ε·N(field)` and the fitted power law.
pub fn perturbation_scaling(
    lattice: Lattice,
    params: CouplingParams,
    field: &NoiseField,
    eps: &[f64],
) -> Result<ScalingFit> {
    if eps.len() < 2 || eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidParameter("need at least two positive ε values".into()));
    }
    let h0 = build_lri(lattice, params)?;
    let floor = EXACT_SPLITTING_REL * params.max();
    let mut splitting = Vec::with_capacity(eps.len());
    for (k, &e) in eps.iter().enumerate() {
        let h = h0.plus(&build_noise(lattice, &field.scaled(e))?)?;
        let (e0, e1) = lowest_pair(&h, k as u64)?;
        splitting.push(e1 - e0);
    }
    if splitting.iter().all(|&d| d < floor) {
        return Ok(ScalingFit { eps: eps.to_vec(), splitting, exponent: f64::INFINITY, exact_protection: true });
    }
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(&splitting)
        .filter(|(_, &d)| d >= floor)
        .map(|(e, d)| (e.ln(), d.ln()))
        .collect();
    let exponent = if pts.len() < 2 { f64::INFINITY } else { least_squares_slope(&pts) };
    Ok(ScalingFit { eps: eps.to_vec(), splitting, exponent, exact_protection: false })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Inputs of the protected-rate formula. Rates and energies in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProtectionParams {
    pub gamma0: f64,
    pub alpha_n: f64,
    pub b_max: f64,
    pub delta_gap: f64,
    pub n: u32,
}

impl ProtectionParams {
    pub fn validate(&self) -> Result<()> {
        let named = [("gamma0", self.gamma0), ("alpha_n", self.alpha_n), ("b_max", self.b_max), ("delta_gap", self.delta_gap)];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("protection order must be ≥ 1".into()));
        }
        Ok(())
    }

    /// The power law is only meaningful while the noise is below the gap.
    pub fn is_perturbative(&self) -> bool {
        self.b_max < self.delta_gap
    }
}

/// `Γ_p = α_N·Γ₀·(b_max/Δ)^(N−1)`.
pub fn decoherence_rate(p: &ProtectionParams) -> Result<f64> {
    p.validate()?;
    Ok(p.alpha_n * p.gamma0 * (p.b_max / p.delta_gap).powi(p.n as i32 - 1))
}

#[derive(Clone, Debug, Serialize)]
pub struct LifetimeConfig {
    pub label: String,
    pub params: ProtectionParams,
    /// Reference Γ_eff for this configuration, if any.
    pub reference_rate: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LifetimeRow {
    pub label: String,
    pub n: u32,
    pub delta_gap: f64,
    pub b_max: f64,
    pub gamma_eff: f64,
    pub tau: f64,
    pub perturbative: bool,
    pub reference_rate: Option<f64>,
    /// α_N·Γ₀ that reproduces `reference_rate` at this row's b_max and Δ.
    pub implied_alpha_gamma0: Option<f64>,
}

pub fn lifetime_table(configs: &[LifetimeConfig]) -> Result<Vec<LifetimeRow>> {
    configs
        .iter()
        .map(|c| {
            let p = c.params;
            let gamma_eff = decoherence_rate(&p)?;
            let suppression = (p.b_max / p.delta_gap).powi(p.n as i32 - 1);
            Ok(LifetimeRow {
                label: c.label.clone(),
                n: p.n,
                delta_gap: p.delta_gap,
                b_max: p.b_max,
                gamma_eff,
                tau: 1.0 / gamma_eff,
                perturbative: p.is_perturbative(),
                reference_rate: c.reference_rate,
                implied_alpha_gamma0: c.reference_rate.map(|r| r / suppression),
            })
        })
        .collect()
}

pub const LIFETIME_CSV_HEADER: &str = "label,n,delta_gap_hz,b_max_hz,gamma_eff_hz,tau_s,implied_alpha_gamma0";

pub fn lifetime_csv_rows(rows: &[LifetimeRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let implied = r.implied_alpha_gamma0.map_or_else(|| "nan".to_string(), |v| format!("{v:.8e}"));
            format!(
                "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{implied}",
                r.label, r.n, r.delta_gap, r.b_max, r.gamma_eff, r.tau
            )
        })
        .collect()
}

/// The three reference array configurations: 2×2 and 3×3 linear traps at
/// J = 10⁴ Hz and the 5×5 planar array at J = 10⁵ Hz, each with Δ = gap·J
/// from the reference gap values and laser frequency noise `b_max`.
pub fn reference_configs(alpha_n: f64, gamma0: f64, b_max: f64) -> Vec<LifetimeConfig> {
    let rows = [
        ("4 ions", 2u32, 0.84, 1e4, 1.5e-3),
        ("9 ions", 3, 0.96, 1e4, 7.5e-5),
        ("5x5 ions", 5, 0.80, 1e5, 1.9e-11),
    ];
    rows.iter()
        .map(|&(label, n, gap, j, reference)| LifetimeConfig {
            label: label.to_string(),
            params: ProtectionParams { gamma0, alpha_n, b_max, delta_gap: gap * j, n },
            reference_rate: Some(reference),
        })
        .collect()
}

pub const DEFAULT_GAMMA0: f64 = 1.0;
pub const DEFAULT_ALPHA_N: f64 = 1.0;
pub const DEFAULT_LASER_NOISE_HZ: f64 = 500.0;

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(n: usize) -> Lattice {
        Lattice::new(n).unwrap()
    }

    fn params(n: u32, b: f64, delta: f64) -> ProtectionParams {
        ProtectionParams { gamma0: 1.0, alpha_n: 1.0, b_max: b, delta_gap: delta, n }
    }

    #[test]
    fn no_suppression_for_single_site() {
        let p = ProtectionParams { gamma0: 3.0, alpha_n: 0.5, b_max: 10.0, delta_gap: 2.0, n: 1 };
        assert_eq!(decoherence_rate(&p).unwrap(), 1.5);
    }

    #[test]
    fn halving_noise_divides_by_power_of_two() {
        for n in 1..=5 {
            let a = decoherence_rate(&params(n, 500.0, 8400.0)).unwrap();
            let b = decoherence_rate(&params(n, 250.0, 8400.0)).unwrap();
            let ratio = a / b / 2f64.powi(n as i32 - 1);
            assert!((ratio - 1.0).abs() < 4.0 * f64::EPSILON, "N = {n}: {ratio}");
        }
    }

    #[test]
    fn rate_ratio_between_configs() {
        let rows = lifetime_table(&reference_configs(1.0, 1.0, 500.0)).unwrap();
        let expect = (500.0f64 / 0.96e4).powi(2) / (500.0 / 0.84e4);
        assert!((rows[1].gamma_eff / rows[0].gamma_eff / expect - 1.0).abs() < 1e-14);
        for r in &rows {
            assert_eq!(r.tau, 1.0 / r.gamma_eff);
            assert!(r.perturbative);
            let implied = r.implied_alpha_gamma0.unwrap();
            assert!((implied * r.gamma_eff - r.reference_rate.unwrap()).abs() <= 1e-12 * r.reference_rate.unwrap());
        }
    }

    #[test]
    fn reference_rates_are_self_consistent() {
        // τ = 1/Γ for each reference pair, to the quoted precision
        for (gamma, tau) in [(1.5e-3f64, 6.6e2f64), (7.5e-5, 1.3e4), (1.9e-11, 5.3e10)] {
            assert!(((1.0 / gamma) / tau - 1.0).abs() < 0.035);
        }
        let p = ProtectionParams { gamma0: 1.9e-11, alpha_n: 1.0, b_max: 1.0, delta_gap: 1.0, n: 1 };
        assert!((1.0 / decoherence_rate(&p).unwrap() - 5.263e10).abs() < 1e8);
    }

    #[test]
    fn ideal_isolated_ions_live_astronomically_long() {
        let p = ProtectionParams { gamma0: 1.0, alpha_n: 1.0, b_max: 1.0, delta_gap: 0.80e5, n: 5 };
        let tau = 1.0 / decoherence_rate(&p).unwrap();
        assert!(tau > 1e19, "{tau:e}");
    }

    #[test]
    fn monotonicity() {
        let base = decoherence_rate(&params(3, 500.0, 9600.0)).unwrap();
        assert!(decoherence_rate(&params(3, 600.0, 9600.0)).unwrap() > base);
        assert!(decoherence_rate(&params(3, 500.0, 12000.0)).unwrap() < base);
        assert!(decoherence_rate(&params(4, 500.0, 9600.0)).unwrap() < base);
        assert!(!params(2, 2.0, 1.0).is_perturbative());
        assert!(decoherence_rate(&params(2, 0.0, 1.0)).is_err());
    }

    #[test]
    fn zero_noise_leaves_doublet_degenerate() {
        for n in 2..=3 {
            let s = doublet_splitting(lat(n), CouplingParams::isotropic(1.0), 0.0, 3, 5).unwrap();
            assert_eq!(s.samples.len(), 3);
            assert!(s.max < 1e-10, "N = {n}: {:?}", s.samples);
        }
    }

    #[test]
    fn splitting_is_reproducible() {
        let a = doublet_splitting(lat(2), CouplingParams::isotropic(1.0), 0.1, 8, 42).unwrap();
        let b = doublet_splitting(lat(2), CouplingParams::isotropic(1.0), 0.1, 8, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!(a.samples.iter().all(|&d| d >= 0.0));
        assert!(a.min <= a.median && a.median <= a.max);
        assert_eq!(a.csv_rows(), b.csv_rows());
    }

    #[test]
    fn single_site_field_cannot_split() {
        let mut f = NoiseField::zeros(lat(2));
        f.set(0, [0.0, 0.0, 1.0]);
        let fit = perturbation_scaling(lat(2), CouplingParams::isotropic(1.0), &f, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!(fit.exact_protection);
        assert!(fit.exponent >= 2.0);
    }

    #[test]
    fn column_field_splits_at_second_order() {
        // σ^x on both sites of column 0 builds Q_0 at second order
        let l = lat(2);
        let mut f = NoiseField::zeros(l);
        f.set(l.site_index(0, 0), [1.0, 0.0, 0.0]);
        f.set(l.site_index(1, 0), [1.0, 0.0, 0.0]);
        let fit = perturbation_scaling(l, CouplingParams::isotropic(1.0), &f, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!(!fit.exact_protection);
        assert!((fit.exponent - 2.0).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn sign_flip_has_no_linear_term() {
        let l = lat(2);
        let f = crate::hamiltonians::sample_noise(l, 1.0, 9).unwrap();
        let eps = [-1e-3, -5e-4, 5e-4, 1e-3];
        let h0 = build_lri(l, CouplingParams::isotropic(1.0)).unwrap();
        let pts: Vec<(f64, f64)> = eps
            .iter()
            .map(|&e| {
                let h = h0.plus(&build_noise(l, &f.scaled(e)).unwrap()).unwrap();
                let (a, b) = lowest_pair(&h, 0).unwrap();
                (e, b - a)
            })
            .collect();
        let slope = least_squares_slope(&pts);
        assert!(slope.abs() < 1e-6, "linear coefficient {slope}");
    }
}
