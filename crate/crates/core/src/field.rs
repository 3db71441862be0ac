//! Scalar, vector, and matrix fields over states in R^N.
//!
//! Fields carry optional analytic derivatives; when absent, scale-aware
//! central finite differences are used with step `fd_step * (1 + |x_i|)`
//! per axis.

use std::sync::Arc;

use crate::expr::Expr;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// A real-valued function of the state, with gradient and Hessian access.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Finite-difference step scale used by the default derivative
    /// implementations.
    fn fd_step(&self) -> f64 {
        DEFAULT_FD_STEP
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        fd_gradient(&|y| self.value(y), x, self.fd_step(), out);
    }

    /// Row-major Hessian. The default differentiates the gradient, so a
    /// field with an analytic gradient gets a second-order accurate Hessian
    /// without extra work.
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        let mut xt = x.to_vec();
        for j in 0..n {
            let h = self.fd_step() * (1.0 + x[j].abs());
            xt[j] = x[j] + h;
            self.gradient_into(&xt, &mut gp);
            xt[j] = x[j] - h;
            self.gradient_into(&xt, &mut gm);
            xt[j] = x[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        // symmetrize
        for i in 0..n {
            for j in (i + 1)..n {
                let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim() * self.dim()];
        self.hessian_into(x, &mut out);
        out
    }
}

/// A vector-valued function of the state (drift fields, market price of risk).
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

/// A matrix-valued function of the state (diffusion coefficient sigma).
/// Output is row-major N x N.
pub trait MatrixField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim() * self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl<F: ScalarField + ?Sized> ScalarField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn fd_step(&self) -> f64 {
        (**self).fd_step()
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient_into(x, out)
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).hessian_into(x, out)
    }
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

impl<F: MatrixField + ?Sized> MatrixField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

/// Central-difference gradient with per-axis scale-aware step.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64, out: &mut [f64]) {
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        xt[i] = x[i] + h;
        let fp = f(&xt);
        xt[i] = x[i] - h;
        let fm = f(&xt);
        xt[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

// ---------------------------------------------------------------------------
// Concrete scalar fields
// ---------------------------------------------------------------------------

/// Constant scalar field.
#[derive(Debug, Clone)]
pub struct ConstantScalar {
    pub dim: usize,
    pub value: f64,
}

impl ConstantScalar {
    pub fn new(dim: usize, value: f64) -> Self {
        ConstantScalar { dim, value }
    }
}

impl ScalarField for ConstantScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn hessian_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Scalar field defined by a parsed expression; derivatives are symbolic.
pub struct ExprScalar {
    dim: usize,
    source: String,
    expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Expr>,
}

impl ExprScalar {
    pub fn new(src: &str, dim: usize) -> crate::error::Result<Self> {
        let expr = Expr::parse(src, dim)?;
        let grad: Vec<Expr> = (0..dim).map(|i| expr.diff(i)).collect();
        let mut hess = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                hess.push(grad[i].diff(j));
            }
        }
        Ok(ExprScalar {
            dim,
            source: src.to_string(),
            expr,
            grad,
            hess,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl ScalarField for ExprScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(x);
        }
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.hess) {
            *o = h.eval(x);
        }
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Scalar field backed by closures, with optional analytic derivatives.
pub struct ClosureScalar {
    dim: usize,
    value: Box<ValueFn>,
    grad: Option<Box<GradFn>>,
    hess: Option<Box<GradFn>>,
    fd_step: f64,
}

impl ClosureScalar {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ClosureScalar {
            dim,
            value: Box::new(value),
            grad: None,
            hess: None,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Box::new(hess));
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        self.fd_step = step;
        self
    }
}

impl ScalarField for ClosureScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn fd_step(&self) -> f64 {
        self.fd_step
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(g) => g(x, out),
            None => fd_gradient(&|y| (self.value)(y), x, self.fd_step, out),
        }
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        if let Some(h) = &self.hess {
            h(x, out);
            return;
        }
        if self.grad.is_some() {
            // fall back to differencing the analytic gradient
            let n = self.dim;
            let mut gp = vec![0.0; n];
            let mut gm = vec![0.0; n];
            let mut xt = x.to_vec();
            for j in 0..n {
                let h = self.fd_step * (1.0 + x[j].abs());
                xt[j] = x[j] + h;
                self.gradient_into(&xt, &mut gp);
                xt[j] = x[j] - h;
                self.gradient_into(&xt, &mut gm);
                xt[j] = x[j];
                for i in 0..n {
                    out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                    out[i * n + j] = s;
                    out[j * n + i] = s;
                }
            }
            return;
        }
        // value-only: direct second differences
        let n = self.dim;
        let f0 = (self.value)(x);
        let mut xt = x.to_vec();
        for i in 0..n {
            let hi = self.fd_step * (1.0 + x[i].abs());
            xt[i] = x[i] + hi;
            let fp = (self.value)(&xt);
            xt[i] = x[i] - hi;
            let fm = (self.value)(&xt);
            xt[i] = x[i];
            out[i * n + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
            for j in (i + 1)..n {
                let hj = self.fd_step * (1.0 + x[j].abs());
                xt[i] = x[i] + hi;
                xt[j] = x[j] + hj;
                let fpp = (self.value)(&xt);
                xt[j] = x[j] - hj;
                let fpm = (self.value)(&xt);
                xt[i] = x[i] - hi;
                let fmm = (self.value)(&xt);
                xt[j] = x[j] + hj;
                let fmp = (self.value)(&xt);
                xt[i] = x[i];
                xt[j] = x[j];
                let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
    }
}

/// `exp(w . x + offset)` with exact derivatives; the closed form of minimal
/// positive solutions for constant-coefficient operators.
#[derive(Debug, Clone)]
pub struct ExpAffine {
    pub w: Vec<f64>,
    pub offset: f64,
}

impl ExpAffine {
    pub fn new(w: Vec<f64>, offset: f64) -> Self {
        ExpAffine { w, offset }
    }
}

impl ScalarField for ExpAffine {
    fn dim(&self) -> usize {
        self.w.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let mut s = self.offset;
        for (wi, xi) in self.w.iter().zip(x) {
            s += wi * xi;
        }
        s.exp()
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        for (o, wi) in out.iter_mut().zip(&self.w) {
            *o = wi * v;
        }
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.w.len();
        let v = self.value(x);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.w[i] * self.w[j] * v;
            }
        }
    }
}

/// Linear combination of scalar fields: sum_i c_i * f_i. Coefficients may be
/// any reals; boundary measures impose positivity separately.
pub struct LinearCombination {
    terms: Vec<(f64, Arc<dyn ScalarField>)>,
    dim: usize,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, Arc<dyn ScalarField>)>) -> Self {
        assert!(!terms.is_empty(), "linear combination needs at least one term");
        let dim = terms[0].1.dim();
        for (_, f) in &terms {
            assert_eq!(f.dim(), dim, "mixed dimensions in linear combination");
        }
        LinearCombination { terms, dim }
    }

    pub fn terms(&self) -> &[(f64, Arc<dyn ScalarField>)] {
        &self.terms
    }
}

impl ScalarField for LinearCombination {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(x)).sum()
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; self.dim];
        for (c, f) in &self.terms {
            f.gradient_into(x, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += c * t;
            }
        }
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; self.dim * self.dim];
        for (c, f) in &self.terms {
            f.hessian_into(x, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += c * t;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Concrete vector fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConstantVector {
    pub values: Vec<f64>,
}

impl ConstantVector {
    pub fn new(values: Vec<f64>) -> Self {
        ConstantVector { values }
    }
}

impl VectorField for ConstantVector {
    fn dim(&self) -> usize {
        self.values.len()
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.values);
    }
}

/// `A x + b`, the drift shape of Ornstein-Uhlenbeck models. `matrix` is
/// row-major N x N.
#[derive(Debug, Clone)]
pub struct LinearVector {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
    dim: usize,
}

impl LinearVector {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Self {
        let dim = offset.len();
        assert_eq!(matrix.len(), dim * dim);
        LinearVector { matrix, offset, dim }
    }
}

impl VectorField for LinearVector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let mut s = self.offset[i];
            for j in 0..self.dim {
                s += self.matrix[i * self.dim + j] * x[j];
            }
            out[i] = s;
        }
    }
}

pub struct ExprVector {
    comps: Vec<Expr>,
    sources: Vec<String>,
}

impl ExprVector {
    pub fn new(sources: &[String], dim: usize) -> crate::error::Result<Self> {
        if sources.len() != dim {
            return Err(crate::error::Error::Usage(format!(
                "expected {dim} component expressions, got {}",
                sources.len()
            )));
        }
        let comps = sources
            .iter()
            .map(|s| Expr::parse(s, dim))
            .collect::<crate::error::Result<Vec<_>>>()?;
        Ok(ExprVector {
            comps,
            sources: sources.to_vec(),
        })
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }
}

impl VectorField for ExprVector {
    fn dim(&self) -> usize {
        self.comps.len()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.eval(x);
        }
    }
}

type VecFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

pub struct ClosureVector {
    dim: usize,
    f: Box<VecFn>,
}

impl ClosureVector {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        ClosureVector { dim, f: Box::new(f) }
    }
}

impl VectorField for ClosureVector {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

// ---------------------------------------------------------------------------
// Concrete matrix fields
// ---------------------------------------------------------------------------

/// Constant N x N matrix field (row-major).
#[derive(Debug, Clone)]
pub struct ConstantMatrix {
    pub values: Vec<f64>,
    dim: usize,
}

impl ConstantMatrix {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), dim * dim);
        ConstantMatrix { values, dim }
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = c;
        }
        ConstantMatrix { values, dim }
    }
}

impl MatrixField for ConstantMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.values);
    }
}

/// Diagonal matrix field with expression entries.
pub struct DiagonalMatrix {
    diag: Vec<Expr>,
    sources: Vec<String>,
}

impl DiagonalMatrix {
    pub fn new(sources: &[String], dim: usize) -> crate::error::Result<Self> {
        if sources.len() != dim {
            return Err(crate::error::Error::Usage(format!(
                "expected {dim} diagonal expressions, got {}",
                sources.len()
            )));
        }
        let diag = sources
            .iter()
            .map(|s| Expr::parse(s, dim))
            .collect::<crate::error::Result<Vec<_>>>()?;
        Ok(DiagonalMatrix {
            diag,
            sources: sources.to_vec(),
        })
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }
}

impl MatrixField for DiagonalMatrix {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.diag.len();
        out.fill(0.0);
        for (i, d) in self.diag.iter().enumerate() {
            out[i * n + i] = d.eval(x);
        }
    }
}

pub struct ClosureMatrix {
    dim: usize,
    f: Box<VecFn>,
}

impl ClosureMatrix {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        ClosureMatrix { dim, f: Box::new(f) }
    }
}

impl MatrixField for ClosureMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}
