//! Closed-form Martin kernels for multi-dimensional models: scaled Brownian
//! motion, constant-coefficient operators (reduced to `Delta + lambda`), and
//! two-dimensional Ornstein-Uhlenbeck processes; plus the Martin metric on
//! boundary points.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::field::{ExpAffine, ScalarField};
use crate::model::DiffusionModel;
use crate::quad::{integrate_real_line, tensor_gauss_legendre};
use crate::sturm::Side;

// ---------------------------------------------------------------------------
// Boundary points and curves
// ---------------------------------------------------------------------------

/// Identifier of a Martin boundary point.
#[derive(Debug, Clone)]
pub enum BoundaryKind {
    /// One-dimensional boundary side (-1 or +1).
    Side(Side),
    /// Unit direction on the sphere at infinity.
    Direction(Vec<f64>),
    /// The single-point boundary (constant kernel).
    Point,
}

#[derive(Clone)]
enum CurveSpec {
    Ray { origin: Vec<f64>, direction: Vec<f64> },
    MatrixCurve { m: Matrix2<f64>, gamma: Vector2<f64>, rotation: Matrix2<f64> },
    Fixed { point: Vec<f64> },
}

/// A Martin boundary point together with a curve `t -> y(t)` realizing
/// convergence to it.
#[derive(Clone)]
pub struct MartinBoundaryPoint {
    pub kind: BoundaryKind,
    curve: CurveSpec,
}

impl MartinBoundaryPoint {
    pub fn side(side: Side, origin: f64) -> Self {
        MartinBoundaryPoint {
            kind: BoundaryKind::Side(side),
            curve: CurveSpec::Ray {
                origin: vec![origin],
                direction: vec![side.signum()],
            },
        }
    }

    pub fn direction(gamma: Vec<f64>) -> Self {
        MartinBoundaryPoint {
            kind: BoundaryKind::Direction(gamma.clone()),
            curve: CurveSpec::Ray {
                origin: vec![0.0; gamma.len()],
                direction: gamma,
            },
        }
    }

    pub fn ray(gamma: Vec<f64>, direction: Vec<f64>) -> Self {
        MartinBoundaryPoint {
            kind: BoundaryKind::Direction(gamma),
            curve: CurveSpec::Ray {
                origin: vec![0.0; direction.len()],
                direction,
            },
        }
    }

    pub fn single_point(dim: usize) -> Self {
        MartinBoundaryPoint {
            kind: BoundaryKind::Point,
            curve: CurveSpec::Fixed { point: vec![0.0; dim] },
        }
    }

    fn matrix_curve(gamma: Vec<f64>, m: Matrix2<f64>, gamma_rot: Vector2<f64>, rotation: Matrix2<f64>) -> Self {
        MartinBoundaryPoint {
            kind: BoundaryKind::Direction(gamma),
            curve: CurveSpec::MatrixCurve { m, gamma: gamma_rot, rotation },
        }
    }

    /// The Martin curve evaluated at parameter `t >= 0`.
    pub fn curve(&self, t: f64) -> Vec<f64> {
        match &self.curve {
            CurveSpec::Ray { origin, direction } => origin
                .iter()
                .zip(direction)
                .map(|(o, d)| o + d * t)
                .collect(),
            CurveSpec::MatrixCurve { m, gamma, rotation } => {
                let y = expm2(m, t) * gamma;
                let x = rotation * y;
                vec![x[0], x[1]]
            }
            CurveSpec::Fixed { point } => point.clone(),
        }
    }
}

fn check_unit(gamma: &[f64]) -> Result<()> {
    let norm: f64 = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Usage(format!(
            "boundary direction must be a unit vector; |gamma| = {norm}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Brownian-motion kernels
// ---------------------------------------------------------------------------

/// Minimal positive solution of `Delta h + lambda h = 0` attached to the
/// sphere direction `gamma`: `exp(sqrt(-lambda) gamma . x)`. For
/// `lambda = 0` in dimension >= 3 the boundary degenerates to one point and
/// the kernel is the constant 1.
pub struct BmKernel {
    pub lambda: f64,
    field: ExpAffine,
    point: MartinBoundaryPoint,
}

impl BmKernel {
    pub fn new(lambda: f64, gamma: Vec<f64>) -> Result<Self> {
        let dim = gamma.len();
        if lambda == 0.0 && dim >= 3 {
            return Ok(BmKernel {
                lambda,
                field: ExpAffine::new(vec![0.0; dim], 0.0),
                point: MartinBoundaryPoint::single_point(dim),
            });
        }
        if lambda >= 0.0 {
            return Err(Error::Domain(format!(
                "directional kernels need lambda < 0 (got {lambda}); at lambda = 0 the boundary is a single point only in dimension >= 3"
            )));
        }
        check_unit(&gamma)?;
        let root = (-lambda).sqrt();
        let w: Vec<f64> = gamma.iter().map(|g| root * g).collect();
        Ok(BmKernel {
            lambda,
            field: ExpAffine::new(w, 0.0),
            point: MartinBoundaryPoint::direction(gamma),
        })
    }

    pub fn boundary_point(&self) -> &MartinBoundaryPoint {
        &self.point
    }

    pub fn as_field(&self) -> Arc<dyn ScalarField> {
        Arc::new(self.field.clone())
    }
}

impl ScalarField for BmKernel {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.field.value(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.gradient_into(x, out)
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.hessian_into(x, out)
    }
}

/// Evaluates the Brownian minimal kernel at one state.
pub fn bm_minimal(lambda: f64, gamma: &[f64], x: &[f64]) -> Result<f64> {
    let k = BmKernel::new(lambda, gamma.to_vec())?;
    Ok(k.value(x))
}

// ---------------------------------------------------------------------------
// Constant-coefficient reduction
// ---------------------------------------------------------------------------

/// Change of variables reducing a constant-coefficient operator
/// `a/2 : D^2 + k . D - r + beta` to `Delta + lambda`: substituting
/// `h(x) = exp(c . x) g(S x)` with `S = sqrt(2) a^{-1/2}`, `c = -a^{-1} k`
/// turns the operator into `exp(c . x) (Delta + lambda) g(Sx)` with
/// `lambda = beta - r - k^T a^{-1} k / 2`.
pub struct ConstCoefReduction {
    pub s: DMatrix<f64>,
    pub s_inv: DMatrix<f64>,
    pub tilt: DVector<f64>,
    pub lambda: f64,
    pub a: DMatrix<f64>,
    pub k: DVector<f64>,
    pub r: f64,
}

impl ConstCoefReduction {
    /// The minimal function for sphere direction `gamma` in original
    /// coordinates: `exp(sqrt(-lambda) gamma . S x + c . x)`.
    pub fn minimal_function(&self, gamma: &[f64]) -> Result<ExpAffine> {
        let n = self.s.nrows();
        if self.lambda == 0.0 && n >= 3 {
            let w: Vec<f64> = self.tilt.iter().copied().collect();
            return Ok(ExpAffine::new(w, 0.0));
        }
        if self.lambda >= 0.0 {
            return Err(Error::Domain(format!(
                "reduced operator has lambda = {} >= 0: no directional escape available",
                self.lambda
            )));
        }
        check_unit(gamma)?;
        let g = DVector::from_column_slice(gamma);
        let root = (-self.lambda).sqrt();
        let w = self.s.transpose() * g * root + &self.tilt;
        Ok(ExpAffine::new(w.iter().copied().collect(), 0.0))
    }

    /// Escape direction of the curve `t -> S^{-1} gamma t` in original
    /// coordinates (unnormalized).
    pub fn curve_direction(&self, gamma: &[f64]) -> Vec<f64> {
        let g = DVector::from_column_slice(gamma);
        let d = &self.s_inv * g;
        d.iter().copied().collect()
    }
}

/// Extracts constant coefficients from a model (erroring if they vary on a
/// sample) and computes the reduction for the given `beta`.
pub fn constcoef_reduce(
    model: &DiffusionModel,
    beta: f64,
    cfg: &NumericsConfig,
) -> Result<ConstCoefReduction> {
    let n = model.dim();
    let center = model.reference_point(cfg);
    let a0 = model.dynamics.diffusion_matrix(&center);
    let k0 = model.dynamics.drift.eval(&center);
    let r0 = model.rate.value(&center);
    // probe a handful of states for constancy
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for &s in &[-0.61, 0.37] {
            let mut p = center.clone();
            p[i] += s * cfg.cutoff;
            probes.push(p);
        }
    }
    let mut mixed = center.clone();
    for (i, m) in mixed.iter_mut().enumerate() {
        *m += 0.11 * (i as f64 + 1.0);
    }
    probes.push(mixed);
    for p in &probes {
        if !model.domain().contains_interior(p) {
            continue;
        }
        let a = model.dynamics.diffusion_matrix(p);
        let k = model.dynamics.drift.eval(p);
        let r = model.rate.value(p);
        let close = |u: f64, v: f64| (u - v).abs() <= 1e-10 * (1.0 + u.abs().max(v.abs()));
        if !a.iter().zip(&a0).all(|(x, y)| close(*x, *y))
            || !k.iter().zip(&k0).all(|(x, y)| close(*x, *y))
            || !close(r, r0)
        {
            return Err(Error::Usage(
                "constant-coefficient reduction requires constant drift, diffusion, and rate".into(),
            ));
        }
    }

    let a = DMatrix::from_row_slice(n, n, &a0);
    let k = DVector::from_column_slice(&k0);

    // spectral square root with ascending eigenvalues for determinism
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut s = DMatrix::zeros(n, n);
    for &idx in &order {
        let lam = eig.eigenvalues[idx];
        if lam <= 0.0 {
            return Err(Error::Domain("diffusion matrix not positive definite".into()));
        }
        let v = eig.eigenvectors.column(idx);
        // sqrt(2) a^{-1/2} accumulated as sum of rank-one terms
        s += (2.0 / lam).sqrt() * &v * v.transpose();
    }
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("reduction matrix not invertible".into()))?;
    let a_inv_k = a
        .clone()
        .lu()
        .solve(&k)
        .ok_or_else(|| Error::Numeric("diffusion matrix solve failed".into()))?;
    let tilt = -&a_inv_k;
    let lambda = beta - r0 - 0.5 * k.dot(&a_inv_k);
    Ok(ConstCoefReduction {
        s,
        s_inv,
        tilt,
        lambda,
        a,
        k,
        r: r0,
    })
}

// ---------------------------------------------------------------------------
// Two-dimensional Ornstein-Uhlenbeck kernels
// ---------------------------------------------------------------------------

/// Specification of the OU drift matrix `B` in `dX = dW + B X dt`.
#[derive(Debug, Clone)]
pub struct OuSpec {
    pub b: Matrix2<f64>,
    pub eigs: (Complex<f64>, Complex<f64>),
}

impl OuSpec {
    pub fn new(b: Matrix2<f64>) -> Result<Self> {
        let det = b.determinant();
        if det.abs() < 1e-14 * (1.0 + b.norm()) {
            return Err(Error::Usage("OU drift matrix must be nonsingular".into()));
        }
        let tr = b.trace();
        let disc = Complex::new(tr * tr / 4.0 - det, 0.0);
        let root = disc.sqrt();
        let half = Complex::new(tr / 2.0, 0.0);
        let eigs = (half + root, half - root);
        // characteristic-polynomial residual as a construction check
        for z in [eigs.0, eigs.1] {
            let res = (z * z - z * tr + det).norm();
            if res > 1e-10 * (1.0 + det.abs() + tr.abs()) {
                return Err(Error::Numeric(format!("eigenvalue residual {res} too large")));
            }
        }
        Ok(OuSpec { b, eigs })
    }
}

/// Solves the Lyapunov equation `B C + C B^T = I`, the stationary relation
/// satisfied by `C = int_0^inf exp(-Bs) exp(-B^T s) ds` when both
/// eigenvalues of `B` have positive real part.
pub fn ou_covariance(spec: &OuSpec) -> Result<Matrix2<f64>> {
    let b = &spec.b;
    if !(b.trace() > 0.0 && b.determinant() > 0.0) {
        return Err(Error::Domain(
            "covariance integral diverges: both eigenvalues of B must have positive real part"
                .into(),
        ));
    }
    let (b11, b12, b21, b22) = (b[(0, 0)], b[(0, 1)], b[(1, 0)], b[(1, 1)]);
    // unknowns (c11, c12, c22) of the symmetric C
    let m = Matrix3::new(
        2.0 * b11,
        2.0 * b12,
        0.0,
        b21,
        b11 + b22,
        b12,
        0.0,
        2.0 * b21,
        2.0 * b22,
    );
    let rhs = Vector3::new(1.0, 0.0, 1.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("Lyapunov system is singular".into()))?;
    let c = Matrix2::new(sol[0], sol[1], sol[1], sol[2]);
    // positive definiteness of the result
    if !(c[(0, 0)] > 0.0 && c.determinant() > 0.0) {
        return Err(Error::Numeric("Lyapunov solution not positive definite".into()));
    }
    Ok(c)
}

/// Closed-form 2x2 matrix exponential. Distinct real eigenvalues use the
/// spectral-projector split `e^{z1 t} P1 + e^{z2 t} P2`, which keeps the
/// slow mode accurate at large `t` (the hyperbolic-function form cancels
/// catastrophically there). Complex pairs use the rotation form; a nearly
/// defective spectrum falls back to the series.
pub fn expm2(b: &Matrix2<f64>, t: f64) -> Matrix2<f64> {
    let mu = 0.5 * b.trace();
    let m = b - Matrix2::identity() * mu;
    let disc = mu * mu - b.determinant();
    let scale = 1.0 + mu * mu + b.determinant().abs();
    let exp_clamped = |x: f64| x.min(700.0).exp();
    if disc > 1e-10 * scale {
        let d = disc.sqrt();
        let p1 = (m + Matrix2::identity() * d) * (0.5 / d);
        let p2 = (Matrix2::identity() * d - m) * (0.5 / d);
        p1 * exp_clamped((mu + d) * t) + p2 * exp_clamped((mu - d) * t)
    } else if disc < -1e-10 * scale {
        let w = (-disc).sqrt();
        (Matrix2::identity() * (w * t).cos() + m * ((w * t).sin() / w)) * exp_clamped(mu * t)
    } else {
        // nearly defective: series in disc * t^2
        let x = disc * t * t;
        (Matrix2::identity() * (1.0 + 0.5 * x) + m * (t * (1.0 + x / 6.0))) * exp_clamped(mu * t)
    }
}

/// The printed kernel-density formula:
/// `K_B(x, t; gamma) = e^{(z1+z2) t} exp(-1/2 (e^{Bt} gamma - x)^T C^{-1} (e^{Bt} gamma - x) - gamma^T C^{-1} gamma)`.
pub fn ou_kernel_density(
    spec: &OuSpec,
    c_b: &Matrix2<f64>,
    x: &[f64],
    t: f64,
    gamma: &[f64],
) -> Result<f64> {
    let c_inv = c_b
        .try_inverse()
        .ok_or_else(|| Error::Numeric("covariance matrix is singular".into()))?;
    let g = Vector2::new(gamma[0], gamma[1]);
    let xv = Vector2::new(x[0], x[1]);
    let d = expm2(&spec.b, t) * g - xv;
    let quad = 0.5 * (d.transpose() * c_inv * d)[(0, 0)] + (g.transpose() * c_inv * g)[(0, 0)];
    Ok(((spec.eigs.0.re + spec.eigs.1.re) * t - quad).exp())
}

/// Martin kernel of a 2D OU process for a boundary direction, evaluated by
/// integrating the kernel density over the curve parameter. Handles both the
/// positive-real-part case (curves `e^{Bt} gamma`) and the mixed-eigenvalue
/// case, where the drift matrix is rotated to lower-subtriangular form and
/// the sign of the negative eigenvalue is flipped before building the curve
/// matrix.
pub struct OuKernel {
    rotation: Matrix2<f64>,
    curve_matrix: Matrix2<f64>,
    c_inv: Matrix2<f64>,
    trace: f64,
    gamma: Vector2<f64>,
    gamma_rot: Vector2<f64>,
    norm_const: f64,
    point: MartinBoundaryPoint,
    rel_tol: f64,
    halfwidth: f64,
}

impl OuKernel {
    pub fn new(spec: &OuSpec, gamma: Vec<f64>, cfg: &NumericsConfig) -> Result<Self> {
        check_unit(&gamma)?;
        let g = Vector2::new(gamma[0], gamma[1]);
        let tr = spec.b.trace();
        let det = spec.b.determinant();
        let (rotation, curve_matrix) = if tr > 0.0 && det > 0.0 {
            (Matrix2::identity(), spec.b)
        } else if det < 0.0 {
            // real eigenvalues z2 < 0 < z1: orthogonal change of coordinates
            // to lower-subtriangular form [[z2, 0], [b, z1]], then flip z2
            let (q, tilde) = subtriangular_rotation(&spec.b)?;
            let mut hat = tilde;
            hat[(0, 0)] = -tilde[(0, 0)];
            (q, hat)
        } else {
            return Err(Error::Criticality(
                "OU process with non-positive spectrum is recurrent; no directional Martin kernel"
                    .into(),
            ));
        };
        // covariance of the curve matrix (both eigenvalues positive now)
        let hat_spec = OuSpec::new(curve_matrix)?;
        let c = ou_covariance(&hat_spec)?;
        let c_inv = c
            .try_inverse()
            .ok_or_else(|| Error::Numeric("covariance matrix is singular".into()))?;
        let gamma_rot = rotation.transpose() * g;
        let mut kernel = OuKernel {
            rotation,
            curve_matrix,
            c_inv,
            trace: curve_matrix.trace(),
            gamma: g,
            gamma_rot,
            norm_const: 1.0,
            point: MartinBoundaryPoint::matrix_curve(
                gamma.clone(),
                curve_matrix,
                gamma_rot,
                rotation,
            ),
            rel_tol: cfg.quad_rel_tol,
            halfwidth: cfg.quad_initial_halfwidth,
        };
        let c0 = kernel.raw_integral(&Vector2::zeros(), Weight::One)?;
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::Quadrature(format!(
                "normalization integral degenerate: {c0}"
            )));
        }
        kernel.norm_const = c0;
        Ok(kernel)
    }

    pub fn boundary_point(&self) -> &MartinBoundaryPoint {
        &self.point
    }

    fn density(&self, y: &Vector2<f64>, s: f64) -> f64 {
        let d = expm2(&self.curve_matrix, s) * self.gamma_rot - y;
        let quad = 0.5 * (d.transpose() * self.c_inv * d)[(0, 0)]
            + (self.gamma_rot.transpose() * self.c_inv * self.gamma_rot)[(0, 0)];
        (self.trace * s - quad).exp()
    }

    fn raw_integral(&self, y: &Vector2<f64>, weight: Weight) -> Result<f64> {
        let f = |s: f64| -> f64 {
            let k = self.density(y, s);
            match weight {
                Weight::One => k,
                Weight::Grad(i) => {
                    let d = expm2(&self.curve_matrix, s) * self.gamma_rot - y;
                    let v = self.c_inv * d;
                    v[i] * k
                }
                Weight::Hess(i, j) => {
                    let d = expm2(&self.curve_matrix, s) * self.gamma_rot - y;
                    let v = self.c_inv * d;
                    (v[i] * v[j] - self.c_inv[(i, j)]) * k
                }
            }
        };
        integrate_real_line(&f, self.halfwidth, self.rel_tol, 24)
    }

    fn rotated(&self, x: &[f64]) -> Vector2<f64> {
        self.rotation.transpose() * Vector2::new(x[0], x[1])
    }
}

#[derive(Clone, Copy)]
enum Weight {
    One,
    Grad(usize),
    Hess(usize, usize),
}

impl ScalarField for OuKernel {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        let y = self.rotated(x);
        self.raw_integral(&y, Weight::One).map(|v| v / self.norm_const).unwrap_or(f64::NAN)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let y = self.rotated(x);
        let gy = Vector2::new(
            self.raw_integral(&y, Weight::Grad(0)).unwrap_or(f64::NAN),
            self.raw_integral(&y, Weight::Grad(1)).unwrap_or(f64::NAN),
        ) / self.norm_const;
        let gx = self.rotation * gy;
        out[0] = gx[0];
        out[1] = gx[1];
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let y = self.rotated(x);
        let mut hy = Matrix2::zeros();
        for i in 0..2 {
            for j in i..2 {
                let v = self.raw_integral(&y, Weight::Hess(i, j)).unwrap_or(f64::NAN)
                    / self.norm_const;
                hy[(i, j)] = v;
                hy[(j, i)] = v;
            }
        }
        let hx = self.rotation * hy * self.rotation.transpose();
        out[0] = hx[(0, 0)];
        out[1] = hx[(0, 1)];
        out[2] = hx[(1, 0)];
        out[3] = hx[(1, 1)];
    }
}

/// Orthogonal `Q` (det +1, deterministic sign convention) with
/// `Q^T B Q = [[z2, 0], [b', z1]]` lower-subtriangular, `z2 < 0 < z1`.
fn subtriangular_rotation(b: &Matrix2<f64>) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    let tr = b.trace();
    let det = b.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc <= 0.0 {
        return Err(Error::Numeric("mixed-eigenvalue reduction needs real spectrum".into()));
    }
    let z1 = tr / 2.0 + disc.sqrt();
    let z2 = tr / 2.0 - disc.sqrt();
    // left eigenvector of B for z2: (B^T - z2 I) w = 0
    let bt = b.transpose();
    let m = bt - Matrix2::identity() * z2;
    // null vector of a rank-one-deficient 2x2: pick the larger row
    let w = if m[(0, 0)].abs() + m[(0, 1)].abs() >= m[(1, 0)].abs() + m[(1, 1)].abs() {
        Vector2::new(-m[(0, 1)], m[(0, 0)])
    } else {
        Vector2::new(-m[(1, 1)], m[(1, 0)])
    };
    let norm = w.norm();
    if norm == 0.0 {
        return Err(Error::Numeric("failed to build the rotation".into()));
    }
    let mut w = w / norm;
    // deterministic sign: larger component positive
    let pick = if w[0].abs() >= w[1].abs() { 0 } else { 1 };
    if w[pick] < 0.0 {
        w = -w;
    }
    let q = Matrix2::new(w[0], -w[1], w[1], w[0]); // [w, rot90(w)], det = +1
    let tilde = q.transpose() * b * q;
    if tilde[(0, 1)].abs() > 1e-8 * (1.0 + b.norm()) {
        return Err(Error::Numeric(format!(
            "rotation did not produce subtriangular form: off-diagonal {}",
            tilde[(0, 1)]
        )));
    }
    let mut clean = tilde;
    clean[(0, 0)] = z2;
    clean[(1, 1)] = z1;
    clean[(0, 1)] = 0.0;
    Ok((q, clean))
}

/// Kernel value at one state (builds the quadrature context per call; use
/// [`OuKernel`] directly for repeated evaluation).
pub fn ou_martin_kernel(
    spec: &OuSpec,
    x: &[f64],
    gamma: &[f64],
    cfg: &NumericsConfig,
) -> Result<f64> {
    let k = OuKernel::new(spec, gamma.to_vec(), cfg)?;
    let v = k.value(x);
    if !v.is_finite() {
        return Err(Error::Quadrature("kernel quadrature did not converge".into()));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Martin metric
// ---------------------------------------------------------------------------

/// The Martin metric between two kernels over a bounded box `U`:
/// `rho = int_U |k1 - k2| / (1 + |k1 - k2|) dx`, by tensor-grid quadrature.
pub fn martin_metric(
    k1: &dyn ScalarField,
    k2: &dyn ScalarField,
    bounds: &[(f64, f64)],
    panels_per_axis: usize,
) -> f64 {
    tensor_gauss_legendre(
        &|x: &[f64]| {
            let d = (k1.value(x) - k2.value(x)).abs();
            d / (1.0 + d)
        },
        bounds,
        panels_per_axis,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstantMatrix, ConstantScalar, ConstantVector};
    use crate::model::{CandidatePair, DiffusionModel, Domain};
    use crate::testkit::{bm2_model, cfg};
    use approx::assert_relative_eq;

    #[test]
    fn bm_kernel_values_match_the_formula() {
        // normalization at the origin
        assert_relative_eq!(bm_minimal(-1.0, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
        // printed formula e^{sqrt(-lambda) gamma . x}
        assert_relative_eq!(
            bm_minimal(-1.0, &[1.0, 0.0], &[2.0, 5.0]).unwrap(),
            2f64.exp(),
            max_relative = 1e-14
        );
        // direct-evaluation oracle: sqrt(4) * (3/5 + 4/5) = 2.8
        assert_relative_eq!(
            bm_minimal(-4.0, &[0.6, 0.8], &[1.0, 1.0]).unwrap(),
            (2.8f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn bm_kernel_rejects_nonnegative_lambda_except_single_point() {
        assert!(bm_minimal(0.5, &[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(bm_minimal(0.0, &[1.0, 0.0], &[0.0, 0.0]).is_err());
        // single-point boundary in dimension 3
        let v = bm_minimal(0.0, &[1.0, 0.0, 0.0], &[4.0, -1.0, 2.0]).unwrap();
        assert_relative_eq!(v, 1.0);
        assert!(bm_minimal(-1.0, &[0.5, 0.5], &[0.0, 0.0]).is_err(), "non-unit gamma");
    }

    #[test]
    fn bm_kernel_is_harmonic_for_the_shifted_laplacian() {
        let lambda = -1.7;
        let k = BmKernel::new(lambda, vec![0.6, -0.8]).unwrap();
        for x in [[0.3, -0.9], [2.0, 1.0], [-1.4, 0.2]] {
            let h = k.hessian(&x);
            let lap = h[0] + h[3];
            let v = k.value(&x);
            assert!((lap + lambda * v).abs() <= 1e-8 * v.max(1.0));
        }
    }

    #[test]
    fn bm_curve_is_a_ray() {
        let k = BmKernel::new(-1.0, vec![0.0, 1.0]).unwrap();
        let p = k.boundary_point().curve(3.0);
        assert_relative_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 3.0);
    }

    #[test]
    fn reduction_of_scaled_bm_is_identity() {
        let model = bm2_model();
        let red = constcoef_reduce(&model, 0.0, &cfg()).unwrap();
        assert_relative_eq!(red.lambda, -1.0, max_relative = 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(red.s[(i, j)], expect, epsilon = 1e-12);
            }
            assert_relative_eq!(red.tilt[i], 0.0, epsilon = 1e-14);
        }
        // beta = r gives lambda = 0
        let red = constcoef_reduce(&model, 1.0, &cfg()).unwrap();
        assert_relative_eq!(red.lambda, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn reduction_scales_anisotropic_diffusion() {
        let model = DiffusionModel::new(
            std::sync::Arc::new(ConstantVector::new(vec![0.0, 0.0])),
            std::sync::Arc::new(ConstantMatrix::new(
                2,
                vec![8f64.sqrt(), 0.0, 0.0, 2f64.sqrt()],
            )),
            std::sync::Arc::new(ConstantScalar::new(2, 1.0)),
            Domain::whole_space(2),
            &cfg(),
        )
        .unwrap();
        let red = constcoef_reduce(&model, 0.0, &cfg()).unwrap();
        assert_relative_eq!(red.s[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(red.s[(1, 1)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(red.lambda, -1.0, max_relative = 1e-12);

        // substitution oracle: the composed minimal function solves
        // L h + beta h = 0 at random states
        let gamma = [0.6, 0.8];
        let h = red.minimal_function(&gamma).unwrap();
        let pair = CandidatePair::new(0.0, std::sync::Arc::new(h));
        let grid: Vec<Vec<f64>> = vec![
            vec![0.13, -0.7],
            vec![1.9, 0.4],
            vec![-1.2, -1.6],
            vec![0.0, 2.3],
            vec![2.7, 1.1],
        ];
        let res = model.pde_residual(&pair, &grid).unwrap();
        assert!(res <= 1e-8, "substitution residual {res}");
    }

    #[test]
    fn reduction_rejects_variable_coefficients() {
        let model = DiffusionModel::new(
            std::sync::Arc::new(crate::field::ClosureVector::new(1, |x, out| {
                out[0] = 0.1 * x[0]
            })),
            std::sync::Arc::new(ConstantMatrix::scaled_identity(1, 1.0)),
            std::sync::Arc::new(ConstantScalar::new(1, 0.1)),
            Domain::whole_space(1),
            &cfg(),
        )
        .unwrap();
        assert!(matches!(
            constcoef_reduce(&model, 0.0, &cfg()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn lyapunov_solution_matches_the_integral_oracle() {
        // B = diag(1, 2): C = int diag(e^{-2s}, e^{-4s}) = diag(1/2, 1/4)
        let spec = OuSpec::new(Matrix2::new(1.0, 0.0, 0.0, 2.0)).unwrap();
        let c = ou_covariance(&spec).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(c[(1, 1)], 0.25, max_relative = 1e-12);
        assert_relative_eq!(c[(0, 1)], 0.0, epsilon = 1e-14);

        // B = I: scalar case twice
        let spec = OuSpec::new(Matrix2::identity()).unwrap();
        let c = ou_covariance(&spec).unwrap();
        assert_relative_eq!(c[(0, 0)], 0.5);
        assert_relative_eq!(c[(1, 1)], 0.5);
    }

    #[test]
    fn lyapunov_residual_is_tiny_for_random_stable_matrices() {
        let mats = [
            Matrix2::new(1.3, 0.4, -0.2, 0.9),
            Matrix2::new(2.0, 1.0, 0.0, 0.5),
            Matrix2::new(0.8, -0.6, 0.6, 0.8), // complex pair with positive real part
        ];
        for b in mats {
            let spec = OuSpec::new(b).unwrap();
            let c = ou_covariance(&spec).unwrap();
            let resid = b * c + c * b.transpose() - Matrix2::identity();
            assert!(resid.norm() <= 1e-10, "residual {}", resid.norm());
            assert!((c[(0, 1)] - c[(1, 0)]).abs() <= 1e-12);
        }
    }

    #[test]
    fn lyapunov_rejects_unstable_spectra() {
        let spec = OuSpec::new(Matrix2::new(-1.0, 0.0, 0.0, 2.0)).unwrap();
        assert!(matches!(ou_covariance(&spec), Err(Error::Domain(_))));
    }

    #[test]
    fn kernel_density_matches_hand_evaluations() {
        let spec = OuSpec::new(Matrix2::new(1.0, 0.0, 0.0, 2.0)).unwrap();
        let c = ou_covariance(&spec).unwrap();
        // zero displacement along the curve: x = e^{B t0} gamma
        let gamma = [0.6, 0.8];
        let t0 = 0.7;
        let e = expm2(&spec.b, t0);
        let x = [e[(0, 0)] * gamma[0], e[(1, 1)] * gamma[1]];
        let v = ou_kernel_density(&spec, &c, &x, t0, &gamma).unwrap();
        let c_inv = c.try_inverse().unwrap();
        let g = Vector2::new(gamma[0], gamma[1]);
        let expect = ((3.0 * t0) - (g.transpose() * c_inv * g)[(0, 0)]).exp();
        assert_relative_eq!(v, expect, max_relative = 1e-12);

        // hand evaluation at the origin: exp(-3) with C^{-1} = diag(2, 4)
        let v = ou_kernel_density(&spec, &c, &[0.0, 0.0], 0.0, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(v, (-3f64).exp(), max_relative = 1e-12);

        // nonnegativity
        for t in [-2.0, 0.3, 1.5] {
            assert!(ou_kernel_density(&spec, &c, &[0.4, -1.0], t, &[0.0, 1.0]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn ou_kernel_is_normalized_and_matches_brute_force() {
        let spec = OuSpec::new(Matrix2::new(1.0, 0.0, 0.0, 2.0)).unwrap();
        let c = ou_covariance(&spec).unwrap();
        let cfgv = cfg();
        let gammas = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-0.28, 0.96], [-1.0, 0.0]];
        let states = [[0.0, 0.0], [0.5, -0.3], [-1.0, 0.7], [1.2, 1.1], [0.3, -1.4]];
        for (g, x) in gammas.iter().zip(&states) {
            let k = OuKernel::new(&spec, g.to_vec(), &cfgv).unwrap();
            assert_relative_eq!(k.value(&[0.0, 0.0]), 1.0, max_relative = 1e-9);
            // brute-force fixed-grid Simpson oracle on the density formula
            let brute = |y: &[f64]| -> f64 {
                let n = 100_001;
                let (lo, hi) = (-40.0, 40.0);
                let h = (hi - lo) / (n - 1) as f64;
                let mut acc = 0.0;
                for i in 0..n {
                    let s = lo + i as f64 * h;
                    let w = if i == 0 || i == n - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * ou_kernel_density(&spec, &c, y, s, g).unwrap();
                }
                acc * h / 3.0
            };
            let expect = brute(x) / brute(&[0.0, 0.0]);
            assert_relative_eq!(k.value(x), expect, max_relative = 1e-6);
        }
    }

    #[test]
    fn ou_kernel_solves_the_drifted_laplace_equation() {
        // generator residual  1/2 Lap k + <B x, grad k>  via analytic
        // quadrature derivatives
        let spec = OuSpec::new(Matrix2::new(1.0, 0.0, 0.0, 2.0)).unwrap();
        let k = OuKernel::new(&spec, vec![0.6, 0.8], &cfg()).unwrap();
        for x in [[0.4, -0.2], [-0.8, 0.5], [1.0, 1.0]] {
            let h = k.hessian(&x);
            let g = k.gradient(&x);
            let res = 0.5 * (h[0] + h[3])
                + (spec.b[(0, 0)] * x[0] + spec.b[(0, 1)] * x[1]) * g[0]
                + (spec.b[(1, 0)] * x[0] + spec.b[(1, 1)] * x[1]) * g[1];
            assert!(
                res.abs() <= 1e-6 * k.value(&x).max(1.0),
                "residual {res} at {x:?}"
            );
        }
    }

    #[test]
    fn mixed_spectrum_kernel_uses_the_flipped_curve_matrix() {
        // already subtriangular: z2 = -1, z1 = 2
        let b = Matrix2::new(-1.0, 0.0, 0.5, 2.0);
        let spec = OuSpec::new(b).unwrap();
        let k = OuKernel::new(&spec, vec![0.6, 0.8], &cfg()).unwrap();
        assert_relative_eq!(k.value(&[0.0, 0.0]), 1.0, max_relative = 1e-9);
        assert!(k.value(&[0.5, 0.5]) > 0.0);
        // the curve leaves through the expanding directions
        let far = k.boundary_point().curve(3.0);
        assert!(far[0].hypot(far[1]) > 10.0);
    }

    #[test]
    fn metric_axioms_hold_on_brownian_kernels() {
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let k1 = BmKernel::new(-1.0, vec![1.0, 0.0]).unwrap();
        let k2 = BmKernel::new(-1.0, vec![0.0, 1.0]).unwrap();
        let k3 = BmKernel::new(-1.0, vec![-0.6, 0.8]).unwrap();

        assert_eq!(martin_metric(&k1, &k1, &bounds, 32), 0.0);
        let d12 = martin_metric(&k1, &k2, &bounds, 32);
        let d21 = martin_metric(&k2, &k1, &bounds, 32);
        assert_eq!(d12, d21, "symmetry must be exact");
        let d13 = martin_metric(&k1, &k3, &bounds, 32);
        let d23 = martin_metric(&k2, &k3, &bounds, 32);
        assert!(d13 <= d12 + d23 + 1e-9);
        assert!(d12 > 0.0);
    }

    #[test]
    fn metric_matches_a_dense_midpoint_oracle() {
        let bounds = [(-1.0, 1.0), (-1.0, 1.0)];
        let k1 = BmKernel::new(-1.0, vec![1.0, 0.0]).unwrap();
        let k2 = BmKernel::new(-1.0, vec![0.0, 1.0]).unwrap();
        // the integrand has a kink along the diagonal, so both quadratures
        // need real resolution; the full-resolution comparison runs in
        // release, a coarser one in debug builds
        let (panels, n, tol) = if cfg!(debug_assertions) {
            (512usize, 1500usize, 1e-5)
        } else {
            (1024, 6000, 1e-6)
        };
        let v = martin_metric(&k1, &k2, &bounds, panels);
        // brute force: midpoint rule on a dense shifted grid
        let h = 2.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h];
                let d = (k1.value(&x) - k2.value(&x)).abs();
                acc += d / (1.0 + d);
            }
        }
        acc *= h * h;
        assert_relative_eq!(v, acc, max_relative = tol);
    }
}
