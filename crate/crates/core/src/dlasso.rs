//! Desparsified-Lasso inference on a compressed design, plus an OLS backend
//! for designs with fewer columns than rows.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::lasso::{self, dot, noise_from_residual, solve_gram, universal_rate, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::pipeline::{FamilyKind, FamilyLevel, PValueFamily};

/// Columns whose nodewise residual variance falls below this are treated
/// as exact linear combinations of the others.
pub const DEGENERATE_TAU_SQ: f64 = 1e-12;

/// A penalized nodewise fit never drives `τ²` below its penalty, so exact
/// duplicates are caught by their cosine instead.
/// Relative change in `σ̂` at which the penalty iteration stops.
const NOISE_REL_TOL: f64 = 1e-4;

const COLLINEAR_COSINE: f64 = 1.0 - 1e-10;

/// First column `k ≠ c` that is collinear with column `c` of a Gram matrix.
fn collinear_partner(gram: &DMatrix<f64>, c: usize) -> Option<usize> {
    let gcc = gram[(c, c)];
    (0..gram.ncols()).find(|&k| k != c && gram[(c, k)].abs() >= COLLINEAR_COSINE * (gcc * gram[(k, k)]).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    DesparsifiedLasso,
    Ols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub backend: Backend,
    /// Fixed penalty for the main fit; overrides the two-stage rule.
    pub lambda_main: Option<f64>,
    /// Fixed penalty for every nodewise fit.
    pub lambda_nodewise: Option<f64>,
    /// Multiplier on the universal rate for the main fit.
    pub kappa_main: f64,
    /// Refits allowed when iterating the noise-scaled penalty.
    pub noise_iterations: usize,
    /// Shift `a` subtracted from the standardized statistic.
    pub adjustment_a: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            backend: Backend::DesparsifiedLasso,
            lambda_main: None,
            lambda_nodewise: None,
            kappa_main: 0.5,
            noise_iterations: 50,
            adjustment_a: 0.0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adjustment_a >= 0.0) {
            return Err(Error::Config(format!("adjustment_a must be >= 0, got {}", self.adjustment_a)));
        }
        if !(self.kappa_main > 0.0) {
            return Err(Error::Config(format!("kappa_main must be > 0, got {}", self.kappa_main)));
        }
        for (name, v) in [("lambda_main", self.lambda_main), ("lambda_nodewise", self.lambda_nodewise)] {
            if let Some(l) = v {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(Error::Config(format!("{name} must be a positive number, got {l}")));
                }
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("solver tolerance and iteration budget must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one desparsified-Lasso fit. Estimates are on the scale of the
/// input design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesparsifiedFit {
    pub theta_hat: DVector<f64>,
    pub omega_diag: DVector<f64>,
    pub sigma_eta_hat: f64,
    pub n: usize,
    pub n_clusters: usize,
    pub lasso_coef: DVector<f64>,
    pub lambda_main: f64,
    pub lambda_nodewise: f64,
    /// Largest KKT residual over the main and nodewise solves.
    pub max_kkt_residual: f64,
    /// Whether every Lasso solve met its stopping rule.
    pub all_converged: bool,
}

impl DesparsifiedFit {
    /// `√n |θ̂_c| / (σ̂ √Ω̂_cc)` per cluster.
    pub fn statistics(&self) -> Vec<f64> {
        let sqrt_n = (self.n as f64).sqrt();
        self.theta_hat
            .iter()
            .zip(self.omega_diag.iter())
            .map(|(&t, &w)| {
                if t == 0.0 {
                    0.0
                } else if self.sigma_eta_hat == 0.0 {
                    f64::INFINITY
                } else {
                    sqrt_n * t.abs() / (self.sigma_eta_hat * w.sqrt())
                }
            })
            .collect()
    }

    /// Symmetric interval `θ̂_c ± z σ̂ √(Ω̂_cc / n)`.
    pub fn confidence_interval(&self, c: usize, z: f64) -> (f64, f64) {
        let half = z * self.sigma_eta_hat * (self.omega_diag[c] / self.n as f64).sqrt();
        (self.theta_hat[c] - half, self.theta_hat[c] + half)
    }
}

/// Two-sided standard normal tail `2(1 − Φ(|s|))`.
pub fn two_sided_normal_pvalue(stat: f64) -> f64 {
    if stat.is_infinite() {
        return 0.0;
    }
    erfc(stat.abs() / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodewiseFit {
    /// Coefficients on the other `C − 1` columns, in column order.
    pub gamma: DVector<f64>,
    pub tau_sq: f64,
}

/// Lasso regression of column `c` of `z` on the remaining columns.
pub fn nodewise_lasso(z: &DMatrix<f64>, c: usize, lambda: f64) -> Result<NodewiseFit> {
    let cols = z.ncols();
    if cols < 2 {
        return Err(Error::Config("nodewise regression needs at least two columns".into()));
    }
    if c >= cols {
        return Err(Error::IndexOutOfRange { index: c, size: cols });
    }
    let n = z.nrows() as f64;
    if collinear_partner(&z.tr_mul(z), c).is_some() {
        return Err(Error::DegenerateColumn { column: c, tau_sq: 0.0 });
    }
    let target: Vec<f64> = z.column(c).iter().copied().collect();
    let others = z.clone().remove_column(c);
    let sol = lasso::lasso_cd(&others, &DVector::from_vec(target.clone()), lambda, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let resid = DVector::from_vec(target.clone()) - &others * &sol.coef;
    let tau_sq = dot(&target, resid.as_slice()) / n;
    if tau_sq <= DEGENERATE_TAU_SQ {
        return Err(Error::DegenerateColumn { column: c, tau_sq });
    }
    Ok(NodewiseFit { gamma: sol.coef, tau_sq })
}

/// Penalty rate for a design with `cols` columns. A single column would give
/// a zero universal rate, so the two-column rate is used as a floor.
fn rate(n: usize, cols: usize) -> f64 {
    universal_rate(n, cols.max(2))
}

struct Standardized {
    z: DMatrix<f64>,
    scale: Vec<f64>,
    y: Vec<f64>,
}

/// Centers every column to mean zero and scales it to unit mean square;
/// centers `y`.
fn standardize(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Standardized> {
    let (n, cols) = z.shape();
    let nf = n as f64;
    let mut zs = z.clone();
    let mut scale = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut col = zs.column_mut(c);
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
        let s = (col.norm_squared() / nf).sqrt();
        if !(s > 0.0) || s.is_nan() {
            return Err(Error::DegenerateColumn { column: c, tau_sq: 0.0 });
        }
        col /= s;
        scale.push(s);
    }
    let ybar = y.sum() / nf;
    let yc = y.iter().map(|v| v - ybar).collect();
    Ok(Standardized { z: zs, scale, y: yc })
}

/// Debiased Lasso estimate of the coefficients of `y` on `z`.
///
/// Columns are centered and scaled internally and `y` is centered. Unless
/// fixed by the config, the main penalty is `κ σ̂ sqrt(2 log C / n)` where
/// `σ̂` is the residual noise estimate of the fit at that same penalty,
/// found by iterating from `σ̂ = sd(y)`.
pub fn desparsified_lasso(z: &DMatrix<f64>, y: &DVector<f64>, config: &InferenceConfig) -> Result<DesparsifiedFit> {
    config.validate()?;
    let (n, cols) = z.shape();
    if n < 8 {
        return Err(Error::Config(format!("desparsified Lasso needs at least 8 samples, got {n}")));
    }
    if cols == 0 {
        return Err(Error::Config("design has no columns".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, target has {}", y.len())));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("inputs contain non-finite entries".into()));
    }
    let nf = n as f64;
    let std = standardize(z, y)?;
    let zs = &std.z;
    let gram = zs.tr_mul(zs) / nf;
    let tol = config.tol;
    let max_iter = config.max_iter;

    // Nodewise regressions give the rows of the relaxed inverse.
    let lambda_nw = config.lambda_nodewise.unwrap_or_else(|| rate(n, cols));
    // (gamma, tau², residual mean square, kkt residual, converged)
    type Nodewise = (Vec<f64>, f64, f64, f64, bool);
    let nodewise: Vec<Result<Nodewise>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            if cols == 1 {
                return Ok((vec![0.0], 1.0, 1.0, 0.0, true));
            }
            if collinear_partner(&gram, c).is_some() {
                return Err(Error::DegenerateColumn { column: c, tau_sq: 0.0 });
            }
            let gc: Vec<f64> = gram.column(c).iter().copied().collect();
            let sol = solve_gram(&gram, &gc, gram[(c, c)], Some(c), lambda_nw, tol, max_iter);
            let gamma = sol.coef.as_slice();
            let g_gamma = &gram * &sol.coef;
            let tau_sq = gram[(c, c)] - dot(&gc, gamma);
            let resid_sq = gram[(c, c)] - 2.0 * dot(&gc, gamma) + dot(gamma, g_gamma.as_slice());
            if tau_sq <= DEGENERATE_TAU_SQ {
                return Err(Error::DegenerateColumn { column: c, tau_sq });
            }
            Ok((sol.coef.as_slice().to_vec(), tau_sq, resid_sq.max(0.0), sol.kkt_residual, sol.converged))
        })
        .collect();
    let nodewise = nodewise.into_iter().collect::<Result<Vec<_>>>()?;

    let zty: Vec<f64> = zs.tr_mul(&DVector::from_column_slice(&std.y)).iter().map(|v| v / nf).collect();
    let yy = dot(&std.y, &std.y) / nf;
    let mut max_kkt = nodewise.iter().map(|t| t.3).fold(0.0, f64::max);
    let mut all_converged = nodewise.iter().all(|t| t.4);

    let (coef, lambda_main, sigma) = if yy == 0.0 {
        (DVector::zeros(cols), config.lambda_main.unwrap_or(0.0), 0.0)
    } else {
        let lambda_main = match config.lambda_main {
            Some(l) => l,
            None => noise_scaled_lambda(&gram, &zty, yy, zs, &std.y, config)?,
        };
        let main = solve_gram(&gram, &zty, yy, None, lambda_main, tol, max_iter);
        max_kkt = max_kkt.max(main.kkt_residual);
        all_converged &= main.converged;
        let sigma = residual_noise(zs, &std.y, &main.coef)?;
        (main.coef, lambda_main, sigma)
    };

    // Score `Zᵀ(y − Zb)/n` on the standardized scale.
    let g_coef = &gram * &coef;
    let score: Vec<f64> = zty.iter().zip(g_coef.iter()).map(|(a, b)| a - b).collect();

    let mut theta_hat = DVector::zeros(cols);
    let mut omega = DVector::zeros(cols);
    for (c, (gamma, tau_sq, resid_sq, _, _)) in nodewise.iter().enumerate() {
        // Row c of the relaxed inverse is (e_c − γ̃_c) / τ²_c with γ̃_c zero at c.
        let proj = score[c] - if cols == 1 { 0.0 } else { dot(gamma, &score) - gamma[c] * score[c] };
        let t = coef[c] + proj / tau_sq;
        theta_hat[c] = t / std.scale[c];
        omega[c] = resid_sq / (tau_sq * tau_sq) / (std.scale[c] * std.scale[c]);
    }

    Ok(DesparsifiedFit {
        theta_hat,
        omega_diag: omega,
        sigma_eta_hat: sigma,
        n,
        n_clusters: cols,
        lasso_coef: DVector::from_iterator(cols, coef.iter().zip(&std.scale).map(|(b, s)| b / s)),
        lambda_main,
        lambda_nodewise: lambda_nw,
        max_kkt_residual: max_kkt,
        all_converged,
    })
}

/// Penalty `κ · rate · σ̂` at the fixed point of refitting and re-estimating
/// `σ̂`, starting from `σ̂ = sd(y)`.
fn noise_scaled_lambda(
    gram: &DMatrix<f64>,
    zty: &[f64],
    yy: f64,
    zs: &DMatrix<f64>,
    y: &[f64],
    config: &InferenceConfig,
) -> Result<f64> {
    let step = config.kappa_main * rate(zs.nrows(), zs.ncols());
    let mut sigma = yy.sqrt();
    for _ in 0..config.noise_iterations {
        let fit = solve_gram(gram, zty, yy, None, step * sigma, config.tol, config.max_iter);
        let next = match residual_noise(zs, y, &fit.coef) {
            Ok(s) if s > 0.0 => s,
            // Saturated or exact fits: keep the last usable scale.
            _ => break,
        };
        let done = (next - sigma).abs() <= NOISE_REL_TOL * sigma;
        sigma = next;
        if done {
            break;
        }
    }
    Ok(step * sigma)
}

fn residual_noise(z: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> Result<f64> {
    let fitted = z * coef;
    let rss: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let active = coef.iter().filter(|b| **b != 0.0).count();
    noise_from_residual(rss, z.nrows(), active)
}

/// Raw two-sided p-values of the fit.
pub fn cluster_pvalues(fit: &DesparsifiedFit) -> PValueFamily {
    let values = fit.statistics().into_iter().map(two_sided_normal_pvalue).collect();
    PValueFamily::new_unchecked(values, FamilyLevel::Cluster, FamilyKind::Raw)
}

/// Raw p-values of the statistic shifted down by `a` and clipped at zero.
pub fn adjusted_cluster_pvalues(fit: &DesparsifiedFit, a: f64) -> Result<PValueFamily> {
    if !(a >= 0.0) {
        return Err(Error::Config(format!("adjustment a must be >= 0, got {a}")));
    }
    let sqrt_n = (fit.n as f64).sqrt();
    let values = fit
        .statistics()
        .into_iter()
        .map(|s| {
            if a == 0.0 {
                return two_sided_normal_pvalue(s);
            }
            // The shift lives on the unscaled statistic.
            let shifted = (s / sqrt_n - a).max(0.0) * sqrt_n;
            two_sided_normal_pvalue(shifted)
        })
        .collect();
    Ok(PValueFamily::new_unchecked(values, FamilyLevel::Cluster, FamilyKind::Raw))
}

/// Two-sided t-test p-values of the OLS coefficients of `y` on `z` with an
/// intercept.
pub fn ols_inference(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<PValueFamily> {
    let (n, cols) = z.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, target has {}", y.len())));
    }
    if cols + 1 >= n {
        return Err(Error::DegenerateDesign(format!(
            "least squares with {cols} columns and an intercept needs more than {} rows, got {n}",
            cols + 1
        )));
    }
    let nf = n as f64;
    let mut zc = z.clone();
    for mut col in zc.column_iter_mut() {
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
    }
    let ybar = y.sum() / nf;
    let yc = y.add_scalar(-ybar);

    let gram = zc.tr_mul(&zc);
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::DegenerateDesign(format!(
            "Gram matrix is singular (eigenvalues {lo:.3e} .. {hi:.3e})"
        )));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("Gram matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let beta = &inv * zc.tr_mul(&yc);
    let resid = &yc - &zc * &beta;
    let dof = (n - cols - 1) as f64;
    let s2 = resid.norm_squared() / dof;
    let t_dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Contract(e.to_string()))?;

    let values = (0..cols)
        .map(|c| {
            let b = beta[c];
            let se = (s2 * inv[(c, c)]).sqrt();
            if b == 0.0 {
                1.0
            } else if se == 0.0 {
                0.0
            } else {
                (2.0 * t_dist.sf((b / se).abs())).min(1.0)
            }
        })
        .collect();
    Ok(PValueFamily::new_unchecked(values, FamilyLevel::Cluster, FamilyKind::Raw))
}

/// Spectral summary of `ZᵀZ/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub phi_min_hat: f64,
    pub max_upsilon_diag: f64,
    pub condition_number: f64,
}

pub fn diagnostics(z: &DMatrix<f64>) -> Diagnostics {
    let n = z.nrows().max(1) as f64;
    let gram = z.tr_mul(z) / n;
    let max_diag = gram.diagonal().iter().copied().fold(0.0, f64::max);
    let eig = gram.symmetric_eigenvalues();
    let lo = eig.min().max(0.0);
    let hi = eig.max();
    Diagnostics {
        phi_min_hat: lo,
        max_upsilon_diag: max_diag,
        condition_number: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn normal_pvalue_examples() {
        assert_eq!(two_sided_normal_pvalue(0.0), 1.0);
        assert!((two_sided_normal_pvalue(1.959964) - 0.05).abs() < 1e-6);
        assert_eq!(two_sided_normal_pvalue(f64::INFINITY), 0.0);
        let mut prev = 1.0;
        for k in 1..80 {
            let p = two_sided_normal_pvalue(k as f64 * 0.1);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn nodewise_on_orthogonal_columns() {
        // Columns of a scaled Hadamard block are exactly orthogonal.
        let h = DMatrix::from_row_slice(4, 4, &[1., 1., 1., 1., 1., -1., 1., -1., 1., 1., -1., -1., 1., -1., -1., 1.]);
        let z = DMatrix::from_fn(8, 3, |i, j| h[(i % 4, j + 1)]);
        let fit = nodewise_lasso(&z, 0, 0.1).unwrap();
        assert!(fit.gamma.iter().all(|&g| g == 0.0));
        assert!((fit.tau_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nodewise_two_columns_closed_form() {
        let mut rng = rng_from_seed(4);
        let n = 400;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|i| 0.6 * a[i] + 0.8 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut z = DMatrix::from_fn(n, 2, |i, j| if j == 0 { a[i] } else { b[i] });
        for mut col in z.column_iter_mut() {
            let m = col.sum() / n as f64;
            col.add_scalar_mut(-m);
            let s = (col.norm_squared() / n as f64).sqrt();
            col /= s;
        }
        let r = z.column(0).dot(&z.column(1)) / n as f64;
        let lambda = 0.1;
        let fit = nodewise_lasso(&z, 0, lambda).unwrap();
        let expected_gamma = r.signum() * (r.abs() - lambda).max(0.0);
        assert!((fit.gamma[0] - expected_gamma).abs() < 1e-6);
        assert!((fit.tau_sq - (1.0 - r * expected_gamma)).abs() < 1e-6);
    }

    #[test]
    fn duplicated_column_is_degenerate() {
        let mut z = gaussian(50, 3, 1);
        let c0 = z.column(0).into_owned();
        z.set_column(2, &c0);
        assert!(matches!(nodewise_lasso(&z, 0, 1e-4), Err(Error::DegenerateColumn { .. })));
        let y = z.column(1).into_owned();
        let cfg = InferenceConfig {
            lambda_nodewise: Some(1e-4),
            ..Default::default()
        };
        assert!(matches!(desparsified_lasso(&z, &y, &cfg), Err(Error::DegenerateColumn { .. })));
        assert!(matches!(ols_inference(&z, &y), Err(Error::DegenerateDesign(_))));
        assert!(diagnostics(&z).phi_min_hat < 1e-10);
    }

    #[test]
    fn zero_target_gives_unit_pvalues() {
        let z = gaussian(60, 5, 2);
        let fit = desparsified_lasso(&z, &DVector::zeros(60), &InferenceConfig::default()).unwrap();
        assert!(fit.theta_hat.iter().all(|&t| t == 0.0));
        assert!(cluster_pvalues(&fit).values().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn small_penalty_matches_least_squares() {
        let z = gaussian(100, 5, 3);
        let mut rng = rng_from_seed(30);
        let truth = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.25, 2.0]);
        let y = &z * &truth + DVector::from_fn(100, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let cfg = InferenceConfig {
            lambda_main: Some(1e-7),
            lambda_nodewise: Some(1e-7),
            tol: 1e-12,
            max_iter: 100_000,
            ..Default::default()
        };
        let fit = desparsified_lasso(&z, &y, &cfg).unwrap();

        // Normal equations with an intercept column.
        let mut design = DMatrix::from_element(100, 6, 1.0);
        design.view_mut((0, 1), (100, 5)).copy_from(&z);
        let ols = (design.tr_mul(&design)).cholesky().unwrap().solve(&design.tr_mul(&y));
        for c in 0..5 {
            assert!((fit.theta_hat[c] - ols[c + 1]).abs() < 1e-3, "{c}: {} vs {}", fit.theta_hat[c], ols[c + 1]);
        }
    }

    #[test]
    fn adjusted_pvalues_reduce_and_shift() {
        let z = gaussian(80, 6, 5);
        let mut y = z.column(0) * 0.8;
        let mut rng = rng_from_seed(50);
        y += DVector::from_fn(80, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fit = desparsified_lasso(&z, &y, &InferenceConfig::default()).unwrap();
        let raw = cluster_pvalues(&fit);
        assert_eq!(adjusted_cluster_pvalues(&fit, 0.0).unwrap().values(), raw.values());
        let stats = fit.statistics();
        let n = (fit.n as f64).sqrt();
        let big = stats.iter().fold(0.0f64, |m, s| m.max(s / n)) + 1e-9;
        assert!(adjusted_cluster_pvalues(&fit, big).unwrap().values().iter().all(|&p| p == 1.0));
        let mut prev = raw.values().to_vec();
        for a in [0.05, 0.1, 0.2, 0.5] {
            let cur = adjusted_cluster_pvalues(&fit, a).unwrap().values().to_vec();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c >= p));
            prev = cur;
        }
        assert!(adjusted_cluster_pvalues(&fit, -1.0).is_err());
    }

    #[test]
    fn ols_exact_relation() {
        let z = gaussian(40, 3, 6);
        let y = z.column(0).into_owned();
        let p = ols_inference(&z, &y).unwrap();
        assert!(p.values()[0] < 1e-10);
    }

    #[test]
    fn ols_needs_enough_rows() {
        let z = gaussian(5, 4, 7);
        assert!(matches!(ols_inference(&z, &DVector::zeros(5)), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn diagnostics_on_orthonormal_design() {
        let q = gaussian(50, 4, 8).qr().q() * (50f64).sqrt();
        let d = diagnostics(&q);
        assert!((d.phi_min_hat - 1.0).abs() < 1e-10);
        assert!((d.max_upsilon_diag - 1.0).abs() < 1e-10);
        assert!((d.condition_number - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = gaussian(7, 2, 9);
        assert!(matches!(desparsified_lasso(&z, &DVector::zeros(7), &InferenceConfig::default()), Err(Error::Config(_))));
        let z = gaussian(20, 2, 9);
        assert!(matches!(desparsified_lasso(&z, &DVector::zeros(19), &InferenceConfig::default()), Err(Error::DimensionMismatch(_))));
        let cfg = InferenceConfig {
            adjustment_a: -0.1,
            ..Default::default()
        };
        assert!(matches!(desparsified_lasso(&z, &DVector::zeros(20), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn single_column_fit() {
        let z = gaussian(50, 1, 10);
        let y = z.column(0) * 2.0;
        let fit = desparsified_lasso(&z, &y, &InferenceConfig::default()).unwrap();
        assert!(fit.theta_hat[0] > 1.0);
        assert!(cluster_pvalues(&fit).values()[0] < 1e-6);
    }
}
