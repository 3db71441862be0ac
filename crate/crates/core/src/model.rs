//! Diffusion models and the elliptic generator.
//!
//! A model holds risk-neutral dynamics `dX_i = k_i dt + sigma_i . dW` together
//! with a discount rate field `r(x)` on an axis-aligned domain. The generator
//!
//! ```text
//! L h = 1/2 sum_ij a_ij d_ij h + sum_i k_i d_i h - r h,    a = sigma sigma^T
//! ```
//!
//! is applied pointwise through the field traits, so candidate eigenpairs
//! `(lambda, h)` of `L h = -lambda h` can be residual-checked on any grid.

use std::sync::Arc;

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::field::{ClosureVector, MatrixField, ScalarField, VectorField};

/// One axis of the domain box. `None` bounds are infinite.
#[derive(Debug, Clone)]
pub struct AxisDomain {
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub left_label: String,
    pub right_label: String,
}

impl AxisDomain {
    pub fn whole_line() -> Self {
        AxisDomain {
            left: None,
            right: None,
            left_label: "infinite".into(),
            right_label: "infinite".into(),
        }
    }

    pub fn interval(left: Option<f64>, right: Option<f64>) -> Result<Self> {
        if let (Some(a), Some(b)) = (left, right) {
            if a >= b {
                return Err(Error::Usage(format!(
                    "axis interval [{a}, {b}] is empty"
                )));
            }
        }
        Ok(AxisDomain {
            left_label: if left.is_some() { "boundary".into() } else { "infinite".into() },
            right_label: if right.is_some() { "boundary".into() } else { "infinite".into() },
            left,
            right,
        })
    }
}

/// Axis-aligned product domain.
#[derive(Debug, Clone)]
pub struct Domain {
    pub axes: Vec<AxisDomain>,
}

impl Domain {
    pub fn whole_space(dim: usize) -> Self {
        Domain {
            axes: (0..dim).map(|_| AxisDomain::whole_line()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Strict interior membership.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        if x.len() != self.axes.len() {
            return false;
        }
        self.axes.iter().zip(x).all(|(axis, &xi)| {
            axis.left.map_or(true, |a| xi > a) && axis.right.map_or(true, |b| xi < b)
        })
    }

    /// Truncated extent of one axis around a center, clipped at finite
    /// boundaries.
    pub fn truncated_axis(&self, axis: usize, center: f64, cutoff: f64) -> (f64, f64) {
        let a = &self.axes[axis];
        let lo = a.left.map_or(center - cutoff, |v| v.max(center - cutoff));
        let hi = a.right.map_or(center + cutoff, |v| v.min(center + cutoff));
        (lo, hi)
    }

    /// Default reference point: midpoint for bounded axes, 0 (clipped inside)
    /// otherwise.
    pub fn reference_point(&self, cutoff: f64) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| match (a.left, a.right) {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => lo + 0.5 * cutoff,
                (None, Some(hi)) => hi - 0.5 * cutoff,
                (None, None) => 0.0,
            })
            .collect()
    }

    /// Tensor sampling grid over the truncated domain, `per_axis` points per
    /// axis with a small inset from finite boundaries.
    pub fn sample_grid(&self, center: &[f64], cutoff: f64, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut axes_pts: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = self.truncated_axis(i, center[i], cutoff);
            let span = hi - lo;
            let inset = 1e-6 * span.max(1.0);
            let (lo, hi) = (lo + inset, hi - inset);
            let mut pts = Vec::with_capacity(per_axis);
            if per_axis == 1 {
                pts.push(0.5 * (lo + hi));
            } else {
                for k in 0..per_axis {
                    pts.push(lo + (hi - lo) * k as f64 / (per_axis - 1) as f64);
                }
            }
            axes_pts.push(pts);
        }
        let mut grid = vec![Vec::new()];
        for pts in &axes_pts {
            let mut next = Vec::with_capacity(grid.len() * pts.len());
            for g in &grid {
                for &p in pts {
                    let mut q = g.clone();
                    q.push(p);
                    next.push(q);
                }
            }
            grid = next;
        }
        grid
    }
}

/// Drift and diffusion only; what path simulation needs. The transformed
/// (objective-measure) dynamics have this shape because the h-transform
/// removes the killing term.
#[derive(Clone)]
pub struct Dynamics {
    pub dim: usize,
    pub drift: Arc<dyn VectorField>,
    pub sigma: Arc<dyn MatrixField>,
    pub domain: Domain,
}

impl Dynamics {
    /// `a(x) = sigma(x) sigma(x)^T`, row-major.
    pub fn diffusion_matrix_into(&self, x: &[f64], sig_buf: &mut [f64], out: &mut [f64]) {
        let n = self.dim;
        self.sigma.eval_into(x, sig_buf);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += sig_buf[i * n + k] * sig_buf[j * n + k];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
    }

    pub fn diffusion_matrix(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut sig = vec![0.0; n * n];
        let mut out = vec![0.0; n * n];
        self.diffusion_matrix_into(x, &mut sig, &mut out);
        out
    }
}

/// Risk-neutral model: dynamics plus the nonnegative discount rate field.
#[derive(Clone)]
pub struct DiffusionModel {
    pub dynamics: Dynamics,
    pub rate: Arc<dyn ScalarField>,
}

/// A candidate `(lambda, h)` eigenpair of the generator, `h > 0`.
#[derive(Clone)]
pub struct CandidatePair {
    pub lambda: f64,
    pub h: Arc<dyn ScalarField>,
}

impl CandidatePair {
    pub fn new(lambda: f64, h: Arc<dyn ScalarField>) -> Self {
        CandidatePair { lambda, h }
    }
}

/// Transformed-measure dynamics produced by the h-transform, together with
/// the market price of risk `rho = sigma^T grad h / h`.
#[derive(Clone)]
pub struct TransformedMeasure {
    pub lambda: f64,
    pub h: Arc<dyn ScalarField>,
    pub dynamics: Dynamics,
    pub rho: Arc<dyn VectorField>,
}

impl DiffusionModel {
    /// Builds a model and validates Assumption-level invariants on a sampled
    /// grid: `a(x)` symmetric positive definite and `r(x) >= 0`.
    pub fn new(
        drift: Arc<dyn VectorField>,
        sigma: Arc<dyn MatrixField>,
        rate: Arc<dyn ScalarField>,
        domain: Domain,
        cfg: &NumericsConfig,
    ) -> Result<Self> {
        let dim = domain.dim();
        if drift.dim() != dim || sigma.dim() != dim || rate.dim() != dim {
            return Err(Error::Usage(format!(
                "field dimensions disagree with domain dimension {dim}"
            )));
        }
        let model = DiffusionModel {
            dynamics: Dynamics {
                dim,
                drift,
                sigma,
                domain,
            },
            rate,
        };
        let center = model.reference_point(cfg);
        let per_axis = match dim {
            1 => 33,
            2 => 9,
            _ => 5,
        };
        let grid = model.dynamics.domain.sample_grid(&center, cfg.cutoff, per_axis);
        for x in &grid {
            let a = model.dynamics.diffusion_matrix(x);
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::Evaluation(format!(
                    "diffusion matrix not finite at {x:?}"
                )));
            }
            if !is_positive_definite(&a, dim) {
                return Err(Error::Domain(format!(
                    "diffusion matrix a(x) = sigma sigma^T not positive definite at {x:?}"
                )));
            }
            let r = model.rate.value(x);
            if !r.is_finite() {
                return Err(Error::Evaluation(format!("rate not finite at {x:?}")));
            }
            if r < 0.0 {
                return Err(Error::Domain(format!("rate negative at {x:?}: {r}")));
            }
            let k = model.dynamics.drift.eval(x);
            if !k.iter().all(|v| v.is_finite()) {
                return Err(Error::Evaluation(format!("drift not finite at {x:?}")));
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.dynamics.domain
    }

    pub fn reference_point(&self, cfg: &NumericsConfig) -> Vec<f64> {
        match &cfg.reference_point {
            Some(p) => p.clone(),
            None => self.dynamics.domain.reference_point(cfg.cutoff),
        }
    }

    /// Scalar coefficients `(a, k, r)` for one-dimensional models.
    pub fn coefficients_1d(&self, x: f64) -> (f64, f64, f64) {
        debug_assert_eq!(self.dim(), 1);
        let xs = [x];
        let mut sig = [0.0];
        self.dynamics.sigma.eval_into(&xs, &mut sig);
        let mut k = [0.0];
        self.dynamics.drift.eval_into(&xs, &mut k);
        (sig[0] * sig[0], k[0], self.rate.value(&xs))
    }

    /// Applies the generator to `h` at an interior state.
    pub fn apply_generator(&self, h: &dyn ScalarField, x: &[f64]) -> Result<f64> {
        if !self.dynamics.domain.contains_interior(x) {
            return Err(Error::Domain(format!("state {x:?} not interior to the domain")));
        }
        let n = self.dim();
        let a = self.dynamics.diffusion_matrix(x);
        let hx = h.value(x);
        let grad = h.gradient(x);
        let hess = h.hessian(x);
        let k = self.dynamics.drift.eval(x);
        let r = self.rate.value(x);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += 0.5 * a[i * n + j] * hess[i * n + j];
            }
            acc += k[i] * grad[i];
        }
        acc -= r * hx;
        if !acc.is_finite() {
            return Err(Error::Evaluation(format!(
                "generator application not finite at {x:?}"
            )));
        }
        Ok(acc)
    }

    /// Scaled sup-norm residual of `L h + lambda h = 0` over a grid:
    /// `max_x |L h(x) + lambda h(x)| / max(1, |h(x)|)`.
    pub fn pde_residual(&self, pair: &CandidatePair, grid: &[Vec<f64>]) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::Usage("pde_residual needs a nonempty grid".into()));
        }
        let mut worst = 0.0f64;
        for x in grid {
            let lh = self.apply_generator(pair.h.as_ref(), x)?;
            let hx = pair.h.value(x);
            let res = (lh + pair.lambda * hx).abs() / hx.abs().max(1.0);
            worst = worst.max(res);
        }
        Ok(worst)
    }

    /// Doob h-transform: drift becomes `k + a grad h / h`, sigma is unchanged,
    /// and the market price of risk is `sigma^T grad h / h`. `h` must be
    /// positive; checked on a sampled grid.
    pub fn h_transform(&self, pair: &CandidatePair, cfg: &NumericsConfig) -> Result<TransformedMeasure> {
        let n = self.dim();
        let center = self.reference_point(cfg);
        let per_axis = if n == 1 { 33 } else { 7 };
        for x in self.dynamics.domain.sample_grid(&center, cfg.cutoff, per_axis) {
            let v = pair.h.value(&x);
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Positivity(format!(
                    "candidate function must be positive; h({x:?}) = {v}"
                )));
            }
        }
        let h = pair.h.clone();
        let base_drift = self.dynamics.drift.clone();
        let sigma = self.dynamics.sigma.clone();

        let drift = {
            let h = h.clone();
            let sigma = sigma.clone();
            ClosureVector::new(n, move |x, out| {
                let n = out.len();
                let mut sig = vec![0.0; n * n];
                sigma.eval_into(x, &mut sig);
                let hx = h.value(x);
                let grad = h.gradient(x);
                base_drift.eval_into(x, out);
                // a grad h / h with a = sigma sigma^T
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        let mut aij = 0.0;
                        for k in 0..n {
                            aij += sig[i * n + k] * sig[j * n + k];
                        }
                        s += aij * grad[j];
                    }
                    out[i] += s / hx;
                }
            })
        };

        let rho = {
            let h = h.clone();
            let sigma = sigma.clone();
            ClosureVector::new(n, move |x, out| {
                let n = out.len();
                let mut sig = vec![0.0; n * n];
                sigma.eval_into(x, &mut sig);
                let hx = h.value(x);
                let grad = h.gradient(x);
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += sig[i * n + j] * grad[i];
                    }
                    out[j] = s / hx;
                }
            })
        };

        Ok(TransformedMeasure {
            lambda: pair.lambda,
            h,
            dynamics: Dynamics {
                dim: n,
                drift: Arc::new(drift),
                sigma: self.dynamics.sigma.clone(),
                domain: self.dynamics.domain.clone(),
            },
            rho: Arc::new(rho),
        })
    }
}

/// SPD test on a row-major matrix: symmetric and smallest eigenvalue
/// bounded away from zero relative to the largest.
fn is_positive_definite(a: &[f64], n: usize) -> bool {
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = 1.0 + a[i * n + i].abs().max(a[j * n + j].abs());
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-10 * scale {
                return false;
            }
        }
    }
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    let eigs = m.symmetric_eigenvalues();
    let max = eigs.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    eigs.iter().all(|&e| e > 1e-12 * max.max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstantMatrix, ConstantScalar, ConstantVector, ExpAffine, ExprScalar};
    use crate::testkit::{bm2_model, cfg, gbm_log_model, quadratic_lambda};
    use approx::assert_relative_eq;

    #[test]
    fn generator_on_constant_is_minus_rate() {
        let model = gbm_log_model();
        let one = ConstantScalar::new(1, 1.0);
        for x in [-2.0, 0.0, 1.7] {
            assert_relative_eq!(
                model.apply_generator(&one, &[x]).unwrap(),
                -0.05,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn generator_matches_quadratic_oracle_on_exponential() {
        let model = gbm_log_model();
        // oracle: lambda(alpha) for alpha = -1.5 equals 0.05
        let lam = quadratic_lambda(0.04, 0.03, 0.05, -1.5);
        assert_relative_eq!(lam, 0.05, max_relative = 1e-14);
        let h = ExpAffine::new(vec![-1.5], 0.0);
        for x in [-2.0, -0.3, 0.0, 1.1, 2.0] {
            let lh = model.apply_generator(&h, &[x]).unwrap();
            assert_relative_eq!(lh, -0.05 * h.value(&[x]), max_relative = 1e-12);
        }
    }

    #[test]
    fn generator_on_bm2_harmonic_exponential_vanishes() {
        let model = bm2_model();
        let h = ExpAffine::new(vec![1.0, 0.0], 0.0);
        for x in [[0.0, 0.0], [1.2, -0.7], [-2.0, 3.0]] {
            let lh = model.apply_generator(&h, &x).unwrap();
            // L h = Delta h - h = 0 here, so (lambda = 0) solves G h = 0 with
            // beta = 0, i.e. Delta h + lambda h = 0 at lambda = -1 + beta.
            assert!(lh.abs() <= 1e-12 * h.value(&x).max(1.0), "lh = {lh}");
        }
    }

    #[test]
    fn generator_rejects_exterior_states() {
        let model = DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.0])),
            Arc::new(ConstantMatrix::scaled_identity(1, 1.0)),
            Arc::new(ConstantScalar::new(1, 0.0)),
            Domain {
                axes: vec![AxisDomain::interval(Some(0.0), Some(1.0)).unwrap()],
            },
            &cfg(),
        )
        .unwrap();
        let one = ConstantScalar::new(1, 1.0);
        assert!(matches!(
            model.apply_generator(&one, &[2.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn degenerate_diffusion_is_rejected() {
        let res = DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.0, 0.0])),
            Arc::new(ConstantMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0])),
            Arc::new(ConstantScalar::new(2, 0.0)),
            Domain::whole_space(2),
            &cfg(),
        );
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let res = DiffusionModel::new(
            Arc::new(ConstantVector::new(vec![0.0])),
            Arc::new(ConstantMatrix::scaled_identity(1, 1.0)),
            Arc::new(ConstantScalar::new(1, -0.01)),
            Domain::whole_space(1),
            &cfg(),
        );
        assert!(matches!(res, Err(Error::Domain(_))));
    }

    fn grid_1d(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64])
            .collect()
    }

    #[test]
    fn residual_accepts_exact_eigenfunction_and_rejects_non_solution() {
        let model = gbm_log_model();
        let grid = grid_1d(-2.0, 2.0, 101);

        let exact = CandidatePair::new(0.05, Arc::new(ExpAffine::new(vec![-1.5], 0.0)));
        assert!(model.pde_residual(&exact, &grid).unwrap() <= 1e-8);

        // constant rate r0 with h = 1 is an exact pair at lambda = r0
        let trivial = CandidatePair::new(0.05, Arc::new(ConstantScalar::new(1, 1.0)));
        assert!(model.pde_residual(&trivial, &grid).unwrap() <= 1e-14);

        // oracle: alpha = 1 gives lambda(1) = 0.05 - 0.02 - 0.03 = 0, not 0.05
        let wrong = CandidatePair::new(0.05, Arc::new(ExpAffine::new(vec![1.0], 0.0)));
        assert!(model.pde_residual(&wrong, &grid).unwrap() > 1e-2);

        assert!(matches!(
            model.pde_residual(&exact, &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn residual_with_expression_field_matches_closed_form() {
        let model = gbm_log_model();
        let h = ExprScalar::new("exp(-1.5*x1)", 1).unwrap();
        let pair = CandidatePair::new(0.05, Arc::new(h));
        let grid = grid_1d(-2.0, 2.0, 101);
        assert!(model.pde_residual(&pair, &grid).unwrap() <= 1e-10);
    }

    #[test]
    fn h_transform_identity_for_constant_h() {
        let model = gbm_log_model();
        let pair = CandidatePair::new(0.05, Arc::new(ConstantScalar::new(1, 1.0)));
        let tm = model.h_transform(&pair, &cfg()).unwrap();
        for x in [-3.0, 0.0, 2.5] {
            let d = tm.dynamics.drift.eval(&[x]);
            assert_relative_eq!(d[0], 0.03, max_relative = 1e-15);
            let rho = tm.rho.eval(&[x]);
            assert_relative_eq!(rho[0], 0.0);
        }
    }

    #[test]
    fn h_transform_shifts_drift_by_a_gradlog() {
        let model = gbm_log_model();
        let pair = CandidatePair::new(0.05, Arc::new(ExpAffine::new(vec![-1.5], 0.0)));
        let tm = model.h_transform(&pair, &cfg()).unwrap();
        // scalar oracle: 0.03 + 0.04 * (-1.5) = -0.03
        for x in [-1.0, 0.0, 2.0] {
            assert_relative_eq!(tm.dynamics.drift.eval(&[x])[0], -0.03, max_relative = 1e-12);
            // rho = sigma * grad h / h = 0.2 * (-1.5)
            assert_relative_eq!(tm.rho.eval(&[x])[0], -0.3, max_relative = 1e-12);
        }
    }

    #[test]
    fn h_transform_on_bm2_gives_a_times_direction() {
        let model = bm2_model();
        let pair = CandidatePair::new(0.0, Arc::new(ExpAffine::new(vec![1.0, 0.0], 0.0)));
        let tm = model.h_transform(&pair, &cfg()).unwrap();
        // a = 2 I, grad h / h = (1, 0): drift a grad h / h = (2, 0)
        let d = tm.dynamics.drift.eval(&[0.3, -0.4]);
        assert_relative_eq!(d[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(d[1], 0.0);
        // rho = sigma^T grad h / h = sqrt(2) (1, 0)
        let rho = tm.rho.eval(&[0.3, -0.4]);
        assert_relative_eq!(rho[0], 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(rho[1], 0.0);
    }

    #[test]
    fn h_transform_rejects_nonpositive_h() {
        let model = gbm_log_model();
        let pair = CandidatePair::new(
            0.05,
            Arc::new(crate::field::ClosureScalar::new(1, |x| x[0])),
        );
        assert!(matches!(
            model.h_transform(&pair, &cfg()),
            Err(Error::Positivity(_))
        ));
    }

    #[test]
    fn generator_is_linear() {
        use crate::field::LinearCombination;
        let model = gbm_log_model();
        let f1: Arc<dyn ScalarField> = Arc::new(ExpAffine::new(vec![-1.5], 0.0));
        let f2: Arc<dyn ScalarField> = Arc::new(ExpAffine::new(vec![0.7], 0.1));
        let (alpha, beta) = (1.3, -0.4);
        let comb = LinearCombination::new(vec![(alpha, f1.clone()), (beta, f2.clone())]);
        for x in [-1.2, 0.0, 0.8] {
            let lhs = model.apply_generator(&comb, &[x]).unwrap();
            let rhs = alpha * model.apply_generator(f1.as_ref(), &[x]).unwrap()
                + beta * model.apply_generator(f2.as_ref(), &[x]).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
    }
}
