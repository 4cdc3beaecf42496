//! Cyclic coordinate-descent Lasso with duality-gap certification.
//!
//! The objective is `(1/2n)‖y − Zb‖² + λ‖b‖₁`. Two equivalent engines are
//! provided: a residual-form solver that touches the design column by column
//! (cheap when features outnumber samples) and a covariance-form solver that
//! works on a precomputed Gram matrix `ZᵀZ/n` (cheap when many regressions
//! share one design, as in nodewise regression). Both alternate full sweeps
//! with sweeps restricted to the active set and stop only once the duality
//! gap and the KKT residual are both within tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Restricted sweeps allowed between two full sweeps.
const MAX_ACTIVE_SWEEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Coordinate sweeps performed (full and active-set).
    pub n_iter: usize,
    pub dual_gap: f64,
    /// Largest KKT residual at the returned point.
    pub kkt_residual: f64,
    /// False when `max_iter` was hit before certification.
    pub converged: bool,
}

impl LassoSolution {
    /// Number of nonzero coefficients.
    pub fn active_count(&self) -> usize {
        self.coef.iter().filter(|&&b| b != 0.0).count()
    }

    /// Objective value on `(z, y)`.
    pub fn objective(&self, z: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        lasso_objective(z, y, &self.coef, self.lambda)
    }
}

pub fn lasso_objective(z: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = z.nrows() as f64;
    let r = y - z * coef;
    r.norm_squared() / (2.0 * n) + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the Lasso optimality conditions at `coef`:
/// `|g_c| ≤ λ` for inactive and `g_c = λ·sign(b_c)` for active coordinates,
/// where `g = Zᵀ(y − Zb)/n`.
pub fn kkt_violation(z: &DMatrix<f64>, y: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = z.nrows() as f64;
    let r = y - z * coef;
    let grad = z.tr_mul(&r) / n;
    kkt_from_grad(grad.as_slice(), coef.as_slice(), lambda, None)
}

fn kkt_from_grad(grad: &[f64], coef: &[f64], lambda: f64, exclude: Option<usize>) -> f64 {
    let mut worst = 0.0f64;
    for (j, (&g, &b)) in grad.iter().zip(coef).enumerate() {
        if Some(j) == exclude {
            continue;
        }
        let v = if b == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Duality gap of the scaled objective given the gradient `g = Zᵀr/n`,
/// `rr = ‖r‖²/n` and `ry = rᵀy/n`.
fn duality_gap(grad: &[f64], coef: &[f64], lambda: f64, rr: f64, ry: f64, exclude: Option<usize>) -> f64 {
    let mut dual_norm = 0.0f64;
    let mut l1 = 0.0;
    for (j, (&g, &b)) in grad.iter().zip(coef).enumerate() {
        if Some(j) == exclude {
            continue;
        }
        dual_norm = dual_norm.max(g.abs());
        l1 += b.abs();
    }
    let scale = if dual_norm > lambda { lambda / dual_norm } else { 1.0 };
    let gap = 0.5 * rr * (1.0 + scale * scale) + lambda * l1 - scale * ry;
    gap.max(0.0)
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn validate_params(lambda: f64, tol: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lasso penalty must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("lasso tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Solves the Lasso by cyclic coordinate descent on `(z, y)`.
///
/// Hitting `max_iter` is not an error: the returned solution carries
/// `converged = false` together with its final gap.
pub fn lasso_cd(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoSolution> {
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, target has {}",
            z.nrows(),
            y.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("design contains non-finite entries".into()));
    }
    validate_params(lambda, tol)?;
    Ok(solve_residual(z, y.as_slice(), None, lambda, tol, max_iter))
}

/// Residual-form solver. Column `exclude`, if any, is held at zero.
pub(crate) fn solve_residual(
    z: &DMatrix<f64>,
    y: &[f64],
    exclude: Option<usize>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> LassoSolution {
    let (n, c) = z.shape();
    let nf = n as f64;
    let data = z.as_slice();
    let col = |j: usize| &data[j * n..(j + 1) * n];
    let col_sq: Vec<f64> = (0..c).map(|j| dot(col(j), col(j)) / nf).collect();

    let yy = dot(y, y) / nf;
    let gap_tol = tol * yy / 2.0;
    let kkt_tol = tol * yy.sqrt().max(1.0);

    let mut beta = vec![0.0; c];
    let mut r = y.to_vec();
    let mut grad = vec![0.0; c];
    let mut active: Vec<usize> = Vec::new();
    let mut n_iter = 0;
    let mut gap;
    let mut kkt;

    let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> f64 {
        let cj = col_sq[j];
        if cj == 0.0 {
            return 0.0;
        }
        let zj = col(j);
        let old = beta[j];
        let rho = dot(zj, r) / nf + cj * old;
        let new = soft_threshold(rho, lambda) / cj;
        let delta = new - old;
        if delta != 0.0 {
            axpy(-delta, zj, r);
            beta[j] = new;
        }
        delta.abs() * cj.sqrt()
    };

    loop {
        for j in 0..c {
            if Some(j) != exclude {
                update(j, &mut beta, &mut r);
            }
        }
        n_iter += 1;

        for (j, g) in grad.iter_mut().enumerate() {
            *g = dot(col(j), &r) / nf;
        }
        let rr = dot(&r, &r) / nf;
        let ry = dot(&r, y) / nf;
        gap = duality_gap(&grad, &beta, lambda, rr, ry, exclude);
        kkt = kkt_from_grad(&grad, &beta, lambda, exclude);
        if (gap <= gap_tol && kkt <= kkt_tol) || n_iter >= max_iter {
            break;
        }

        active.clear();
        active.extend((0..c).filter(|&j| beta[j] != 0.0));
        for _ in 0..MAX_ACTIVE_SWEEPS {
            let mut biggest = 0.0f64;
            for &j in &active {
                biggest = biggest.max(update(j, &mut beta, &mut r));
            }
            n_iter += 1;
            if biggest <= kkt_tol || n_iter >= max_iter {
                break;
            }
        }
        if n_iter >= max_iter {
            for (j, g) in grad.iter_mut().enumerate() {
                *g = dot(col(j), &r) / nf;
            }
            let rr = dot(&r, &r) / nf;
            let ry = dot(&r, y) / nf;
            gap = duality_gap(&grad, &beta, lambda, rr, ry, exclude);
            kkt = kkt_from_grad(&grad, &beta, lambda, exclude);
            break;
        }
    }

    LassoSolution {
        coef: DVector::from_vec(beta),
        lambda,
        n_iter,
        dual_gap: gap,
        kkt_residual: kkt,
        converged: gap <= gap_tol && kkt <= kkt_tol,
    }
}

/// Covariance-form solver on `gram = ZᵀZ/n`, `zty = Zᵀy/n`, `yy = ‖y‖²/n`.
/// Column `exclude`, if any, is held at zero.
pub(crate) fn solve_gram(
    gram: &DMatrix<f64>,
    zty: &[f64],
    yy: f64,
    exclude: Option<usize>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> LassoSolution {
    let c = gram.nrows();
    let data = gram.as_slice();
    let col = |j: usize| &data[j * c..(j + 1) * c];

    let gap_tol = tol * yy / 2.0;
    let kkt_tol = tol * yy.sqrt().max(1.0);

    let mut beta = vec![0.0; c];
    let mut grad = zty.to_vec();
    let mut active: Vec<usize> = Vec::new();
    let mut n_iter = 0;

    let update = |j: usize, beta: &mut [f64], grad: &mut [f64]| -> f64 {
        let cj = data[j * c + j];
        if cj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let rho = grad[j] + cj * old;
        let new = soft_threshold(rho, lambda) / cj;
        let delta = new - old;
        if delta != 0.0 {
            axpy(-delta, col(j), grad);
            beta[j] = new;
        }
        delta.abs() * cj.sqrt()
    };

    let certify = |beta: &[f64], grad: &[f64]| -> (f64, f64) {
        let bb = dot(zty, beta);
        let gb = dot(grad, beta);
        let rr = (yy - bb - gb).max(0.0);
        let ry = yy - bb;
        (
            duality_gap(grad, beta, lambda, rr, ry, exclude),
            kkt_from_grad(grad, beta, lambda, exclude),
        )
    };

    let (mut gap, mut kkt);
    loop {
        for j in 0..c {
            if Some(j) != exclude {
                update(j, &mut beta, &mut grad);
            }
        }
        n_iter += 1;
        (gap, kkt) = certify(&beta, &grad);
        if (gap <= gap_tol && kkt <= kkt_tol) || n_iter >= max_iter {
            break;
        }
        active.clear();
        active.extend((0..c).filter(|&j| beta[j] != 0.0));
        for _ in 0..MAX_ACTIVE_SWEEPS {
            let mut biggest = 0.0f64;
            for &j in &active {
                biggest = biggest.max(update(j, &mut beta, &mut grad));
            }
            n_iter += 1;
            if biggest <= kkt_tol || n_iter >= max_iter {
                break;
            }
        }
        if n_iter >= max_iter {
            (gap, kkt) = certify(&beta, &grad);
            break;
        }
    }

    LassoSolution {
        coef: DVector::from_vec(beta),
        lambda,
        n_iter,
        dual_gap: gap,
        kkt_residual: kkt,
        converged: gap <= gap_tol && kkt <= kkt_tol,
    }
}

/// `κ · y_scale · sqrt(2 log C / n)` for an `n × C` design.
pub fn lambda_universal(z: &DMatrix<f64>, y_scale: f64, kappa: f64) -> f64 {
    universal_rate(z.nrows(), z.ncols()) * y_scale * kappa
}

/// `sqrt(2 log C / n)`.
pub fn universal_rate(n_samples: usize, n_features: usize) -> f64 {
    (2.0 * (n_features.max(1) as f64).ln() / n_samples as f64).sqrt()
}

/// Residual noise estimate `sqrt(‖y − Zb‖² / (n − ŝ))` with ŝ the number of
/// active coefficients.
pub fn noise_std_reid(z: &DMatrix<f64>, y: &DVector<f64>, solution: &LassoSolution) -> Result<f64> {
    let n = z.nrows();
    if solution.coef.len() != z.ncols() || y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solution of length {} for a {}x{} design",
            solution.coef.len(),
            n,
            z.ncols()
        )));
    }
    let resid = y - z * &solution.coef;
    noise_from_residual(resid.norm_squared(), n, solution.active_count())
}

pub(crate) fn noise_from_residual(rss: f64, n: usize, active: usize) -> Result<f64> {
    if active >= n {
        return Err(Error::SaturatedFit {
            active,
            samples: n,
        });
    }
    Ok((rss / (n - active) as f64).sqrt())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
