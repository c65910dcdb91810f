//! L1-regularized least squares, `min ||S - A T||^2 + alpha^2 ||T||_1`,
//! solved with monotone FISTA.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::spectral_norm_sq;
use crate::operator::{dot, norm2, LinearOperator};

/// Power-iteration tolerance for the Lipschitz constant.
const LIPSCHITZ_TOL: f64 = 1e-6;
const LIPSCHITZ_MAX_ITERS: usize = 1000;
/// The step is shrunk by this factor to absorb the power-iteration error.
const STEP_SAFETY: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Regularization weight; the penalty is `alpha^2 ||T||_1`.
    pub alpha: f64,
    pub max_iters: usize,
    /// Stop when `||T_k - T_{k-1}|| / max(||T_k||, eps)` drops below this.
    pub rel_tol: f64,
    pub nonnegative: bool,
    /// Seed of the power-iteration start vector.
    pub seed: u64,
    /// Known `sigma_max(A)^2`; skips the power iteration when set.
    pub lipschitz: Option<f64>,
    /// Reset the momentum whenever the step direction turns against it.
    pub restart: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            alpha: 0.0,
            max_iters: 2000,
            rel_tol: 1e-6,
            nonnegative: false,
            seed: 0,
            lipschitz: None,
            restart: true,
        }
    }
}

impl SolverOptions {
    pub fn with_alpha(self, alpha: f64) -> Self {
        SolverOptions { alpha, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid("alpha must be finite and non-negative"));
        }
        if self.max_iters < 1 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(invalid("rel_tol must be non-negative"));
        }
        if let Some(l) = self.lipschitz {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(invalid("lipschitz must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// How the regularization weight is chosen for each reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaPolicy {
    /// Use this alpha as is.
    Fixed { alpha: f64 },
    /// `alpha^2 = max(factor * 2 sigma ||a||_max, floor * alpha_max^2)`.
    ///
    /// `2 sigma ||a||_max` is the standard deviation of the noise term of the
    /// gradient `2 A^T S`; the floor keeps noiseless problems sparse.
    NoiseScaled {
        factor: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_floor() -> f64 {
    DEFAULT_ALPHA_FLOOR
}

/// Default multiplier of [`AlphaPolicy::NoiseScaled`].
pub const DEFAULT_NOISE_FACTOR: f64 = 1.0;
/// Default floor of [`AlphaPolicy::NoiseScaled`], relative to `alpha_max^2`.
pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-3;

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::NoiseScaled {
            factor: DEFAULT_NOISE_FACTOR,
            floor: DEFAULT_ALPHA_FLOOR,
        }
    }
}

impl AlphaPolicy {
    /// Alpha for noise level `sigma`, largest model column norm and the data's
    /// `alpha_max` (see [`alpha_max`]).
    pub fn resolve(&self, sigma: f64, column_norm: f64, alpha_max: f64) -> Result<f64> {
        match *self {
            AlphaPolicy::Fixed { alpha } => {
                if !(alpha >= 0.0) || !alpha.is_finite() {
                    return Err(invalid("alpha must be finite and non-negative"));
                }
                Ok(alpha)
            }
            AlphaPolicy::NoiseScaled { factor, floor } => {
                if !(factor >= 0.0) || !factor.is_finite() || !(floor >= 0.0) || !floor.is_finite() {
                    return Err(invalid("noise factor and floor must be finite and non-negative"));
                }
                if !(sigma >= 0.0) || !(column_norm >= 0.0) || !(alpha_max >= 0.0) {
                    return Err(invalid("sigma, column norm and alpha_max must be non-negative"));
                }
                let noise = factor * 2.0 * sigma * column_norm;
                Ok(noise.max(floor * alpha_max * alpha_max).sqrt())
            }
        }
    }
}

/// Per-iteration diagnostics of the retained (best-objective) iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub objective: f64,
    pub residual_l2: f64,
    pub l1_norm: f64,
    pub nonzero_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEstimate {
    pub image: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub diagnostics: Vec<IterationStats>,
    pub iterations_run: usize,
    pub final_objective: f64,
    pub alpha_used: f64,
    pub converged: bool,
    /// Largest eigenvalue of `A^T A` used for the step size.
    pub lipschitz: f64,
}

impl ImageEstimate {
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("iteration,objective,residual_l2,l1_norm,nonzero_count\n");
        for d in &self.diagnostics {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{}\n",
                d.iteration, d.objective, d.residual_l2, d.l1_norm, d.nonzero_count
            ));
        }
        out
    }
}

/// `sign(v) max(|v| - theta, 0)` elementwise.
pub fn soft_threshold(v: &[f64], theta: f64) -> Result<Vec<f64>> {
    if !(theta >= 0.0) {
        return Err(invalid("threshold must be non-negative"));
    }
    Ok(v.iter().map(|&x| shrink(x, theta)).collect())
}

#[inline]
fn shrink(x: f64, theta: f64) -> f64 {
    let m = x.abs() - theta;
    if m > 0.0 {
        m.copysign(x)
    } else {
        0.0
    }
}

/// Quadratic pieces of the objective: `||S||^2`, `A^T S`, and the operator.
struct Problem<'a, A: LinearOperator + ?Sized> {
    op: &'a A,
    data_sq: f64,
    atb: Vec<f64>,
    penalty: f64,
}

impl<A: LinearOperator + ?Sized> Problem<'_, A> {
    /// `(F(T), ||S - A T||)` given `G T = A^T A T`.
    fn evaluate(&self, t: &[f64], gt: &[f64]) -> (f64, f64) {
        let quad = self.data_sq - 2.0 * dot(t, &self.atb) + dot(t, gt);
        let l1: f64 = t.iter().map(|v| v.abs()).sum();
        let res_sq = quad.max(0.0);
        (res_sq + self.penalty * l1, res_sq.sqrt())
    }
}

/// `sigma_max(A)^2` by power iteration; zero operators give 0.
pub fn lipschitz_constant<A: LinearOperator + ?Sized>(op: &A, seed: u64) -> Result<f64> {
    if op.rows() == 0 || op.cols() == 0 {
        return Err(invalid("operator is empty"));
    }
    Ok(spectral_norm_sq(op, LIPSCHITZ_TOL, LIPSCHITZ_MAX_ITERS, seed)
        .map(|e| e.value)
        .unwrap_or(0.0))
}

/// Minimizes `||S - A T||^2 + alpha^2 ||T||_1` starting from `T = 0`.
pub fn fista<A: LinearOperator + ?Sized>(
    op: &A,
    data: &[f64],
    opts: &SolverOptions,
) -> Result<ImageEstimate> {
    fista_from(op, data, opts, None)
}

/// As [`fista`], optionally warm-started. The start is discarded if its
/// objective exceeds `F(0)` so the result never does worse than zero.
pub fn fista_from<A: LinearOperator + ?Sized>(
    op: &A,
    data: &[f64],
    opts: &SolverOptions,
    start: Option<&[f64]>,
) -> Result<ImageEstimate> {
    opts.validate()?;
    let (m, n) = (op.rows(), op.cols());
    if data.len() != m {
        return Err(invalid(format!(
            "data vector has length {}, operator has {m} rows",
            data.len()
        )));
    }
    if let Some(s) = start {
        if s.len() != n {
            return Err(invalid("warm start has the wrong length"));
        }
    }
    let lipschitz = match opts.lipschitz {
        Some(l) => l,
        None => lipschitz_constant(op, opts.seed)?,
    };
    let mut atb = vec![0.0; n];
    op.adjoint_to(data, &mut atb);
    let problem = Problem {
        op,
        data_sq: dot(data, data),
        atb,
        penalty: opts.alpha * opts.alpha,
    };
    if lipschitz <= 0.0 {
        let image = vec![0.0; n];
        return Ok(ImageEstimate {
            image,
            objective_trace: vec![problem.data_sq],
            diagnostics: vec![IterationStats {
                iteration: 1,
                objective: problem.data_sq,
                residual_l2: problem.data_sq.sqrt(),
                l1_norm: 0.0,
                nonzero_count: 0,
            }],
            iterations_run: 1,
            final_objective: problem.data_sq,
            alpha_used: opts.alpha,
            converged: true,
            lipschitz,
        });
    }
    // gradient of ||S - A T||^2 is 2 (A^T A T - A^T S); Lipschitz 2 L
    let step = STEP_SAFETY / (2.0 * lipschitz);
    let threshold = problem.penalty * step;

    let mut x = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut fx = problem.data_sq;
    if let Some(s) = start {
        let mut gs = vec![0.0; n];
        problem.op.normal_to(s, &mut gs);
        let (fs, _) = problem.evaluate(s, &gs);
        if fs <= fx {
            x.copy_from_slice(s);
            gx = gs;
            fx = fs;
        }
    }
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut z = vec![0.0; n];
    let mut gz = vec![0.0; n];
    let mut momentum = 1.0f64;

    let mut objective_trace = Vec::with_capacity(opts.max_iters.min(4096));
    let mut diagnostics = Vec::with_capacity(opts.max_iters.min(4096));
    let mut converged = false;

    for it in 1..=opts.max_iters {
        for p in 0..n {
            let v = y[p] - step * 2.0 * (gy[p] - problem.atb[p]);
            let s = shrink(v, threshold);
            z[p] = if opts.nonnegative { s.max(0.0) } else { s };
        }
        problem.op.normal_to(&z, &mut gz);
        let (fz, _) = problem.evaluate(&z, &gz);
        if !fz.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }

        let diff: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let change = diff / norm2(&z).max(f64::MIN_POSITIVE);

        // gradient restart test on the prox step: (y - z) . (z - x_{k-1}) > 0
        let restart = opts.restart
            && y.iter().zip(&z).zip(&x).map(|((yp, zp), xp)| (yp - zp) * (zp - xp)).sum::<f64>() > 0.0;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let c_z = momentum / next_momentum;
        let c_prev = (momentum - 1.0) / next_momentum;
        let accepted = fz <= fx;
        if accepted {
            std::mem::swap(&mut x, &mut z);
            std::mem::swap(&mut gx, &mut gz);
            fx = fz;
        }
        if restart {
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            momentum = 1.0;
        } else if accepted {
            // x_k = z, and z now holds x_{k-1}: y = x_k + c_prev (x_k - x_{k-1})
            for p in 0..n {
                y[p] = x[p] + c_prev * (x[p] - z[p]);
                gy[p] = gx[p] + c_prev * (gx[p] - gz[p]);
            }
            momentum = next_momentum;
        } else {
            // x_k = x_{k-1}: y = x + c_z (z - x)
            for p in 0..n {
                y[p] = x[p] + c_z * (z[p] - x[p]);
                gy[p] = gx[p] + c_z * (gz[p] - gx[p]);
            }
            momentum = next_momentum;
        }

        let (_, residual) = problem.evaluate(&x, &gx);
        objective_trace.push(fx);
        diagnostics.push(IterationStats {
            iteration: it,
            objective: fx,
            residual_l2: residual,
            l1_norm: x.iter().map(|v| v.abs()).sum(),
            nonzero_count: x.iter().filter(|v| **v != 0.0).count(),
        });
        if change <= opts.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(ImageEstimate {
        iterations_run: objective_trace.len(),
        final_objective: fx,
        image: x,
        objective_trace,
        diagnostics,
        alpha_used: opts.alpha,
        converged,
        lipschitz,
    })
}

/// One entry of a regularization path.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweepEntry {
    pub alpha: f64,
    pub estimate: ImageEstimate,
    /// Entries above `1e-6` of the largest magnitude.
    pub sparsity: usize,
    pub residual: f64,
}

/// Solves for every alpha in descending order, warm-starting each solve from
/// the previous solution. Entries are returned in descending-alpha order.
pub fn alpha_sweep<A: LinearOperator + ?Sized>(
    op: &A,
    data: &[f64],
    alphas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<AlphaSweepEntry>> {
    if alphas.is_empty() {
        return Err(invalid("alpha list is empty"));
    }
    if alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(invalid("alphas must be positive and finite"));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<AlphaSweepEntry> = Vec::with_capacity(sorted.len());
    for alpha in sorted {
        let start = out.last().map(|e| e.estimate.image.as_slice());
        let estimate = fista_from(op, data, &opts.with_alpha(alpha), start)?;
        let peak = max_abs(&estimate.image);
        let sparsity = estimate.image.iter().filter(|v| v.abs() > 1e-6 * peak && peak > 0.0).count();
        let residual = estimate
            .diagnostics
            .last()
            .map(|d| d.residual_l2)
            .unwrap_or(0.0);
        out.push(AlphaSweepEntry {
            alpha,
            estimate,
            sparsity,
            residual,
        });
    }
    Ok(out)
}

/// Reaches `opts.alpha` through `steps` log-spaced intermediate problems,
/// starting at [`alpha_max`] and warm-starting each from the last. Helps
/// when `opts.alpha` is far below `alpha_max`.
pub fn fista_continuation<A: LinearOperator + ?Sized>(
    op: &A,
    data: &[f64],
    opts: &SolverOptions,
    steps: usize,
) -> Result<ImageEstimate> {
    opts.validate()?;
    let top = alpha_max(op, data)?;
    if steps == 0 || opts.alpha <= 0.0 || top <= opts.alpha {
        return fista(op, data, opts);
    }
    let ratio = opts.alpha / top;
    let alphas: Vec<f64> = (1..=steps)
        .map(|q| top * ratio.powf(q as f64 / steps as f64))
        .collect();
    let opts = SolverOptions {
        lipschitz: Some(match opts.lipschitz {
            Some(l) => l,
            None => lipschitz_constant(op, opts.seed)?,
        }),
        ..*opts
    };
    let mut path = alpha_sweep(op, data, &alphas, &opts)?;
    let mut last = path.pop().expect("non-empty path").estimate;
    last.alpha_used = opts.alpha;
    Ok(last)
}

/// Smallest alpha for which every solution of a zero-start problem is zero:
/// `alpha^2 = ||2 A^T S||_inf`.
pub fn alpha_max<A: LinearOperator + ?Sized>(op: &A, data: &[f64]) -> Result<f64> {
    if data.len() != op.rows() {
        return Err(invalid("data length does not match the operator"));
    }
    let mut atb = vec![0.0; op.cols()];
    op.adjoint_to(data, &mut atb);
    Ok((2.0 * max_abs(&atb)).sqrt())
}

/// Outcome of the automatic alpha choice.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub path: Vec<AlphaSweepEntry>,
}

/// Sweeps `points` alphas log-spaced from `alpha_max` down to
/// `alpha_max * floor_ratio` and keeps the smallest alpha whose solution has at
/// most `3 * expected_sources` entries above 10 % of its maximum. The sweep
/// stops at the first alpha that breaks the bound.
pub fn select_alpha<A: LinearOperator + ?Sized>(
    op: &A,
    data: &[f64],
    expected_sources: usize,
    points: usize,
    floor_ratio: f64,
    opts: &SolverOptions,
) -> Result<AlphaSelection> {
    if points < 2 || !(floor_ratio > 0.0 && floor_ratio < 1.0) {
        return Err(invalid("alpha selection needs >= 2 points and a ratio in (0, 1)"));
    }
    let top = alpha_max(op, data)?;
    if top == 0.0 {
        return Ok(AlphaSelection {
            alpha: 0.0,
            path: Vec::new(),
        });
    }
    let limit = 3 * expected_sources;
    let mut path: Vec<AlphaSweepEntry> = Vec::with_capacity(points);
    let mut chosen = top;
    for q in 0..points {
        let alpha = top * floor_ratio.powf(q as f64 / (points - 1) as f64);
        let start = path.last().map(|e| e.estimate.image.as_slice());
        let estimate = fista_from(op, data, &opts.with_alpha(alpha), start)?;
        let count = count_above(&estimate.image, 0.1);
        let peak = max_abs(&estimate.image);
        let residual = estimate.diagnostics.last().map(|d| d.residual_l2).unwrap_or(0.0);
        path.push(AlphaSweepEntry {
            alpha,
            sparsity: estimate.image.iter().filter(|v| v.abs() > 1e-6 * peak && peak > 0.0).count(),
            estimate,
            residual,
        });
        if count > limit {
            break;
        }
        chosen = alpha;
    }
    Ok(AlphaSelection { alpha: chosen, path })
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Entries whose magnitude exceeds `frac` of the largest magnitude.
pub fn count_above(v: &[f64], frac: f64) -> usize {
    let peak = max_abs(v);
    if peak == 0.0 {
        return 0;
    }
    v.iter().filter(|x| x.abs() > frac * peak).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DenseOperator;
    use ndarray::Array2;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random_problem(seed: u64, m: usize, n: usize) -> (DenseOperator, Vec<f64>) {
        let mut s = seed;
        let a = Array2::from_shape_fn((m, n), |_| lcg(&mut s));
        let b = (0..m).map(|_| lcg(&mut s)).collect();
        (DenseOperator::new(a), b)
    }

    #[test]
    fn soft_threshold_closed_form() {
        assert_eq!(soft_threshold(&[3.0, -0.5, -3.0], 1.0).unwrap(), vec![2.0, 0.0, -2.0]);
        let v = [1.5, -2.0, 0.25];
        assert_eq!(soft_threshold(&v, 0.0).unwrap(), v.to_vec());
        assert!(soft_threshold(&v, 2.0).unwrap().iter().all(|&x| x == 0.0));
        assert!(soft_threshold(&v, -1.0).is_err());
    }

    #[test]
    fn zero_data_gives_zero_image() {
        let (op, _) = random_problem(1, 20, 10);
        let est = fista(&op, &[0.0; 20], &SolverOptions::default().with_alpha(0.5)).unwrap();
        assert!(est.image.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_model_is_soft_threshold() {
        let op = DenseOperator::identity(3);
        let opts = SolverOptions {
            alpha: 2f64.sqrt(),
            rel_tol: 1e-12,
            ..Default::default()
        };
        let est = fista(&op, &[4.0, 1.0, -0.2], &opts).unwrap();
        for (a, b) in est.image.iter().zip([3.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-6, "{:?}", est.image);
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        let (op, b) = random_problem(4, 20, 30);
        let est = fista(&op, &b, &SolverOptions::default().with_alpha(0.3)).unwrap();
        assert_eq!(est.objective_trace.len(), est.iterations_run);
        assert!(est.final_objective <= dot(&b, &b));
        assert!(est.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fista_agrees_with_long_ista() {
        let (op, b) = random_problem(9, 20, 10);
        let alpha = 0.4;
        let opts = SolverOptions {
            alpha,
            max_iters: 400,
            rel_tol: 0.0,
            ..Default::default()
        };
        let fast = fista(&op, &b, &opts).unwrap();
        // plain ISTA, 50x the iterations
        let l = spectral_norm_sq(&op, 1e-12, 10_000, 0).unwrap().value;
        let step = 1.0 / (2.0 * l);
        let mut atb = vec![0.0; 10];
        op.adjoint_to(&b, &mut atb);
        let mut t = vec![0.0; 10];
        let mut g = vec![0.0; 10];
        for _ in 0..50 * 400 {
            op.normal_to(&t, &mut g);
            for p in 0..10 {
                t[p] = shrink(t[p] - step * 2.0 * (g[p] - atb[p]), alpha * alpha * step);
            }
        }
        let mut r = vec![0.0; 20];
        op.apply_to(&t, &mut r);
        let f_ista: f64 = r.iter().zip(&b).map(|(a, y)| (y - a).powi(2)).sum::<f64>()
            + alpha * alpha * t.iter().map(|v| v.abs()).sum::<f64>();
        assert!((fast.final_objective - f_ista).abs() <= 1e-8 * f_ista);
    }

    #[test]
    fn large_alpha_gives_zero() {
        let (op, b) = random_problem(2, 20, 10);
        let mut atb = vec![0.0; 10];
        op.adjoint_to(&b, &mut atb);
        let alpha = (2.0 * 2.0 * max_abs(&atb)).sqrt();
        let path = alpha_sweep(&op, &b, &[alpha], &SolverOptions::default()).unwrap();
        assert!(path[0].estimate.image.iter().all(|&v| v == 0.0));
        assert_eq!(path[0].sparsity, 0);
    }

    #[test]
    fn sweep_path_properties() {
        let (op, b) = random_problem(6, 20, 40);
        let top = alpha_max(&op, &b).unwrap();
        let alphas: Vec<f64> = (0..8).map(|q| top * 0.6f64.powi(q)).collect();
        let opts = SolverOptions {
            rel_tol: 1e-10,
            max_iters: 20_000,
            ..Default::default()
        };
        let path = alpha_sweep(&op, &b, &alphas, &opts).unwrap();
        assert!(path.windows(2).all(|w| w[0].alpha > w[1].alpha));
        for w in path.windows(2) {
            assert!(w[1].residual <= w[0].residual * (1.0 + 1e-6) + 1e-9);
        }
        assert!(alpha_sweep(&op, &b, &[], &opts).is_err());
        assert!(alpha_sweep(&op, &b, &[1.0, -1.0], &opts).is_err());
    }

    #[test]
    fn rejects_bad_shapes_and_options() {
        let (op, b) = random_problem(2, 20, 10);
        assert!(fista(&op, &b[..5], &SolverOptions::default()).is_err());
        let bad = SolverOptions {
            alpha: -1.0,
            ..Default::default()
        };
        assert!(fista(&op, &b, &bad).is_err());
        let bad = SolverOptions {
            max_iters: 0,
            ..Default::default()
        };
        assert!(fista(&op, &b, &bad).is_err());
    }

    #[test]
    fn nonnegative_option_clips() {
        let op = DenseOperator::identity(3);
        let opts = SolverOptions {
            alpha: 1.0,
            nonnegative: true,
            rel_tol: 1e-12,
            ..Default::default()
        };
        let est = fista(&op, &[4.0, -3.0, 0.2], &opts).unwrap();
        assert!((est.image[0] - 3.5).abs() < 1e-6);
        assert_eq!(est.image[1], 0.0);
        assert_eq!(est.image[2], 0.0);
    }

    #[test]
    fn diagnostics_csv_layout() {
        let (op, b) = random_problem(3, 20, 10);
        let est = fista(&op, &b, &SolverOptions::default().with_alpha(0.2)).unwrap();
        let csv = est.diagnostics_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,objective,residual_l2,l1_norm,nonzero_count"));
        assert_eq!(lines.count(), est.iterations_run);
    }
}
