//! One-dimensional analysis of the eigen-ODE `a/2 h'' + k h' + (lambda - r) h = 0`.
//!
//! Infinite boundaries are truncated at configurable cutoffs and refined by
//! doubling; boundary (minimal) solutions are produced by shooting from the
//! truncated ends with Dirichlet data and extrapolating pointwise over the
//! truncation levels. The Green's function, Martin kernels, criticality
//! classification, and the critical-value search are all built on the same
//! integrator.
//!
//! Shooting away from a boundary is numerically stable for the solution
//! minimal at that boundary: its relative share of the integrated mixture
//! grows exponentially, so any generic initial data converges in direction
//! to the minimal solution with contamination `~ exp(-gap * distance)`.

use std::sync::Arc;

use serde::Serialize;

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::model::{CandidatePair, DiffusionModel};

/// A one-dimensional boundary side; `Left` is -1, `Right` is +1 in the
/// Martin-boundary identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn signum(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

// ---------------------------------------------------------------------------
// Dense solution storage and Hermite field view
// ---------------------------------------------------------------------------

/// Dense solution of the eigen-ODE on a uniform grid.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub lambda: f64,
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    /// Set when the raw (un-normalized) solution left the representable
    /// range before reaching the truncated boundary; the grid stops there.
    pub overflow_at: Option<f64>,
}

impl OdeSolution {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.x0 + i as f64 * self.dx).collect()
    }

    pub fn x_last(&self) -> f64 {
        self.x0 + (self.len().saturating_sub(1)) as f64 * self.dx
    }

    /// Cubic-Hermite field view with log-linear tail extension.
    pub fn field(&self) -> Arc<Hermite1d> {
        Arc::new(Hermite1d::new(
            self.x0,
            self.dx,
            self.values.clone(),
            self.derivs.clone(),
        ))
    }
}

/// Piecewise-cubic Hermite interpolant of `(value, derivative)` samples on a
/// uniform grid, extended log-linearly beyond the grid from the endpoint
/// logarithmic derivative. The Hessian comes from the cubic itself, so PDE
/// residual checks against this field are independent of the ODE that
/// produced the samples.
pub struct Hermite1d {
    x0: f64,
    dx: f64,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl Hermite1d {
    pub fn new(x0: f64, dx: f64, values: Vec<f64>, derivs: Vec<f64>) -> Self {
        assert_eq!(values.len(), derivs.len());
        assert!(values.len() >= 2, "need at least two samples");
        Hermite1d {
            x0,
            dx,
            values,
            derivs,
        }
    }

    fn x_last(&self) -> f64 {
        self.x0 + (self.values.len() - 1) as f64 * self.dx
    }

    /// (value, first derivative, second derivative) at x.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let n = self.values.len();
        if x < self.x0 {
            let (u, v) = (self.values[0], self.derivs[0]);
            return Self::tail(u, v, x - self.x0);
        }
        if x > self.x_last() {
            let (u, v) = (self.values[n - 1], self.derivs[n - 1]);
            return Self::tail(u, v, x - self.x_last());
        }
        let pos = (x - self.x0) / self.dx;
        let mut i = pos.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let t = (x - (self.x0 + i as f64 * self.dx)) / self.dx;
        let (u0, v0, u1, v1) = (
            self.values[i],
            self.derivs[i],
            self.values[i + 1],
            self.derivs[i + 1],
        );
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let value = h00 * u0 + h10 * self.dx * v0 + h01 * u1 + h11 * self.dx * v1;

        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let deriv = (d00 * u0 + d01 * u1) / self.dx + d10 * v0 + d11 * v1;

        let s00 = 12.0 * t - 6.0;
        let s10 = 6.0 * t - 4.0;
        let s01 = -12.0 * t + 6.0;
        let s11 = 6.0 * t - 2.0;
        let second = (s00 * u0 + s01 * u1) / (self.dx * self.dx) + (s10 * v0 + s11 * v1) / self.dx;

        (value, deriv, second)
    }

    fn tail(u: f64, v: f64, offset: f64) -> (f64, f64, f64) {
        if u.abs() < 1e-300 {
            // no meaningful logarithmic derivative; extend linearly
            return (u + v * offset, v, 0.0);
        }
        let mu = v / u;
        let w = u * (mu * offset).exp();
        (w, mu * w, mu * mu * w)
    }
}

impl ScalarField for Hermite1d {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval_all(x[0]).0
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.eval_all(x[0]).1;
    }
    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.eval_all(x[0]).2;
    }
}

// ---------------------------------------------------------------------------
// Adaptive Dormand-Prince integrator for the linear second-order ODE
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct State {
    u: f64,
    v: f64,
    /// values are stored rescaled; true u = u * exp(log_scale)
    log_scale: f64,
}

fn rhs(model: &DiffusionModel, lambda: f64, x: f64, u: f64, v: f64) -> (f64, f64) {
    let (a, k, r) = model.coefficients_1d(x);
    (v, -2.0 * (k * v + (lambda - r) * u) / a)
}

#[allow(clippy::too_many_arguments)]
fn dp45_step(
    model: &DiffusionModel,
    lambda: f64,
    x: f64,
    u: f64,
    v: f64,
    h: f64,
) -> ((f64, f64), (f64, f64)) {
    let f = |xx: f64, uu: f64, vv: f64| rhs(model, lambda, xx, uu, vv);
    let (k1u, k1v) = f(x, u, v);
    let (k2u, k2v) = f(x + 0.2 * h, u + h * 0.2 * k1u, v + h * 0.2 * k1v);
    let (k3u, k3v) = f(
        x + 0.3 * h,
        u + h * (3.0 / 40.0 * k1u + 9.0 / 40.0 * k2u),
        v + h * (3.0 / 40.0 * k1v + 9.0 / 40.0 * k2v),
    );
    let (k4u, k4v) = f(
        x + 0.8 * h,
        u + h * (44.0 / 45.0 * k1u - 56.0 / 15.0 * k2u + 32.0 / 9.0 * k3u),
        v + h * (44.0 / 45.0 * k1v - 56.0 / 15.0 * k2v + 32.0 / 9.0 * k3v),
    );
    let (k5u, k5v) = f(
        x + 8.0 / 9.0 * h,
        u + h * (19372.0 / 6561.0 * k1u - 25360.0 / 2187.0 * k2u + 64448.0 / 6561.0 * k3u
            - 212.0 / 729.0 * k4u),
        v + h * (19372.0 / 6561.0 * k1v - 25360.0 / 2187.0 * k2v + 64448.0 / 6561.0 * k3v
            - 212.0 / 729.0 * k4v),
    );
    let (k6u, k6v) = f(
        x + h,
        u + h * (9017.0 / 3168.0 * k1u - 355.0 / 33.0 * k2u + 46732.0 / 5247.0 * k3u
            + 49.0 / 176.0 * k4u
            - 5103.0 / 18656.0 * k5u),
        v + h * (9017.0 / 3168.0 * k1v - 355.0 / 33.0 * k2v + 46732.0 / 5247.0 * k3v
            + 49.0 / 176.0 * k4v
            - 5103.0 / 18656.0 * k5v),
    );
    let u5 = u + h
        * (35.0 / 384.0 * k1u + 500.0 / 1113.0 * k3u + 125.0 / 192.0 * k4u
            - 2187.0 / 6784.0 * k5u
            + 11.0 / 84.0 * k6u);
    let v5 = v + h
        * (35.0 / 384.0 * k1v + 500.0 / 1113.0 * k3v + 125.0 / 192.0 * k4v
            - 2187.0 / 6784.0 * k5v
            + 11.0 / 84.0 * k6v);
    let (k7u, k7v) = f(x + h, u5, v5);
    let u4 = u + h
        * (5179.0 / 57600.0 * k1u + 7571.0 / 16695.0 * k3u + 393.0 / 640.0 * k4u
            - 92097.0 / 339200.0 * k5u
            + 187.0 / 2100.0 * k6u
            + 1.0 / 40.0 * k7u);
    let v4 = v + h
        * (5179.0 / 57600.0 * k1v + 7571.0 / 16695.0 * k3v + 393.0 / 640.0 * k4v
            - 92097.0 / 339200.0 * k5v
            + 187.0 / 2100.0 * k6v
            + 1.0 / 40.0 * k7v);
    ((u5, v5), (u5 - u4, v5 - v4))
}

/// Uniform recording grid (closed index range).
#[derive(Clone, Copy)]
struct RecordGrid {
    x0: f64,
    dx: f64,
    i_lo: i64,
    i_hi: i64,
}

impl RecordGrid {
    fn position(&self, i: i64) -> f64 {
        self.x0 + i as f64 * self.dx
    }
}

struct SweepOpts {
    rtol: f64,
    atol: f64,
    h_max: f64,
    record: Option<RecordGrid>,
    stop_on_sign_change: bool,
}

struct RecordedNode {
    index: i64,
    u: f64,
    v: f64,
    log_scale: f64,
}

struct SweepOutcome {
    recorded: Vec<RecordedNode>,
    sign_change: Option<f64>,
    grazed: bool,
    end: State,
    end_x: f64,
}

/// Integrates the linear ODE from `x_from` to `x_to` (either direction),
/// rescaling the state to avoid overflow, landing exactly on recording nodes,
/// and watching for sign changes of the solution.
fn sweep(
    model: &DiffusionModel,
    lambda: f64,
    x_from: f64,
    x_to: f64,
    y0: State,
    opts: &SweepOpts,
) -> Result<SweepOutcome> {
    let dir = if x_to >= x_from { 1.0 } else { -1.0 };
    let span = (x_to - x_from).abs();
    let mut out = SweepOutcome {
        recorded: Vec::new(),
        sign_change: None,
        grazed: false,
        end: y0,
        end_x: x_from,
    };
    if span == 0.0 {
        maybe_record(&mut out, x_from, &y0, opts);
        return Ok(out);
    }

    // ordered list of record indices along the traversal
    let mut next_record: Option<i64> = opts.record.map(|g| {
        if dir > 0.0 {
            let mut i = ((x_from - g.x0) / g.dx).ceil() as i64;
            if g.position(i) < x_from - 1e-12 * (1.0 + x_from.abs()) {
                i += 1;
            }
            i.max(g.i_lo)
        } else {
            let mut i = ((x_from - g.x0) / g.dx).floor() as i64;
            if g.position(i) > x_from + 1e-12 * (1.0 + x_from.abs()) {
                i -= 1;
            }
            i.min(g.i_hi)
        }
    });
    // record the start point if it sits on a node
    if let (Some(g), Some(i)) = (opts.record, next_record) {
        if in_range(i, &g) && (g.position(i) - x_from).abs() <= 1e-9 * (1.0 + x_from.abs()) {
            out.recorded.push(RecordedNode {
                index: i,
                u: y0.u,
                v: y0.v,
                log_scale: y0.log_scale,
            });
            next_record = advance(i, dir, &g);
        }
    }

    let mut x = x_from;
    let mut st = y0;
    let mut h = (opts.h_max.min(span)).max(1e-12);
    let mut sign_armed = st.u != 0.0;
    let mut prev_sign = st.u.signum();
    let mut prev_u = st.u;
    let mut prev_v = st.v;

    let mut steps = 0usize;
    loop {
        let remaining = (x_to - x) * dir;
        if remaining <= 1e-12 * (1.0 + x.abs()) {
            break;
        }
        steps += 1;
        if steps > 50_000_000 {
            return Err(Error::Numeric("ODE sweep exceeded step budget".into()));
        }
        let mut h_try = h.min(remaining);
        if let (Some(g), Some(i)) = (opts.record, next_record) {
            if in_range(i, &g) {
                let to_node = (g.position(i) - x) * dir;
                if to_node > 0.0 {
                    h_try = h_try.min(to_node);
                }
            }
        }
        let h_signed = dir * h_try;
        let ((u5, v5), (eu, ev)) = dp45_step(model, lambda, x, st.u, st.v, h_signed);
        if !u5.is_finite() || !v5.is_finite() {
            // halve and retry
            h = h_try * 0.25;
            if h < 1e-14 * (1.0 + x.abs()) {
                return Err(Error::Numeric(format!(
                    "integration broke down near x = {x}"
                )));
            }
            continue;
        }
        let scale_u = opts.atol + opts.rtol * st.u.abs().max(u5.abs());
        let scale_v = opts.atol + opts.rtol * st.v.abs().max(v5.abs());
        let err = (eu.abs() / scale_u).max(ev.abs() / scale_v);
        if err > 1.0 {
            let shrink = (0.9 * err.powf(-0.2)).max(0.2);
            h = (h_try * shrink).max(1e-14 * (1.0 + x.abs()));
            if h <= 1e-14 * (1.0 + x.abs()) {
                return Err(Error::Numeric(format!(
                    "step size underflow near x = {x}"
                )));
            }
            continue;
        }

        // accepted
        let x_new = x + h_signed;
        // interior dip check when the derivative flips inside the step
        if sign_armed && out.sign_change.is_none() && prev_v * v5 < 0.0 {
            for &t in &[0.25, 0.5, 0.75] {
                let hv = hermite_point(prev_u, prev_v, u5, v5, h_signed, t);
                if hv * prev_sign < 0.0 {
                    out.sign_change = Some(x + t * h_signed);
                    break;
                }
            }
        }
        if sign_armed && out.sign_change.is_none() {
            if u5 == 0.0 {
                out.sign_change = Some(x_new);
            } else if u5.signum() != prev_sign {
                // linear interpolation of the crossing
                let frac = prev_u / (prev_u - u5);
                out.sign_change = Some(x + frac * h_signed);
            }
        }
        if !sign_armed && u5 != 0.0 {
            sign_armed = true;
            prev_sign = u5.signum();
        } else if u5 != 0.0 {
            prev_sign = u5.signum();
        }
        // graze metric: solution close to zero relative to its local scale
        if sign_armed && out.sign_change.is_none() {
            let local = u5.abs().max(h_try * v5.abs());
            if local > 0.0 && u5.abs() / local < 1e-9 {
                out.grazed = true;
            }
        }

        st.u = u5;
        st.v = v5;
        x = x_new;
        prev_u = u5;
        prev_v = v5;

        // rescale to keep the state representable
        let mag = st.u.abs().max(st.v.abs());
        if mag > 1e250 || (mag > 0.0 && mag < 1e-250) {
            let ln = mag.ln();
            st.u /= mag;
            st.v /= mag;
            st.log_scale += ln;
        }

        // record if we landed on the pending node
        if let (Some(g), Some(i)) = (opts.record, next_record) {
            if in_range(i, &g) && (x - g.position(i)).abs() <= 1e-9 * (1.0 + x.abs()) {
                out.recorded.push(RecordedNode {
                    index: i,
                    u: st.u,
                    v: st.v,
                    log_scale: st.log_scale,
                });
                next_record = advance(i, dir, &g);
            }
        }

        if opts.stop_on_sign_change && out.sign_change.is_some() {
            break;
        }

        let grow = (0.9 * err.max(1e-10).powf(-0.2)).min(5.0).max(0.2);
        h = (h_try * grow).min(opts.h_max);
    }

    out.end = st;
    out.end_x = x;
    Ok(out)
}

fn in_range(i: i64, g: &RecordGrid) -> bool {
    i >= g.i_lo && i <= g.i_hi
}

fn advance(i: i64, dir: f64, g: &RecordGrid) -> Option<i64> {
    let next = if dir > 0.0 { i + 1 } else { i - 1 };
    if in_range(next, g) {
        Some(next)
    } else {
        None
    }
}

fn maybe_record(out: &mut SweepOutcome, x: f64, y: &State, opts: &SweepOpts) {
    if let Some(g) = opts.record {
        let i = ((x - g.x0) / g.dx).round() as i64;
        if in_range(i, &g) && (g.position(i) - x).abs() <= 1e-9 * (1.0 + x.abs()) {
            out.recorded.push(RecordedNode {
                index: i,
                u: y.u,
                v: y.v,
                log_scale: y.log_scale,
            });
        }
    }
}

/// Hermite cubic value at fraction `t` of a step of signed width `h`.
fn hermite_point(u0: f64, v0: f64, u1: f64, v1: f64, h: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * u0
        + (t3 - 2.0 * t2 + t) * h * v0
        + (-2.0 * t3 + 3.0 * t2) * u1
        + (t3 - t2) * h * v1
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

fn require_1d(model: &DiffusionModel) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Usage(format!(
            "one-dimensional operation called on a {}-dimensional model",
            model.dim()
        )));
    }
    Ok(())
}

/// Integrates the eigen-ODE from `anchor` with data `(value, slope)` toward
/// the indicated boundary, truncated at the configured cutoff, and returns
/// the dense solution. If the raw solution leaves the representable range
/// the grid is cut short and `overflow_at` reports where.
pub fn integrate_ode(
    model: &DiffusionModel,
    lambda: f64,
    anchor: f64,
    value: f64,
    slope: f64,
    direction: Side,
    cfg: &NumericsConfig,
) -> Result<OdeSolution> {
    require_1d(model)?;
    if !model.domain().contains_interior(&[anchor]) {
        return Err(Error::Domain(format!("anchor {anchor} not interior")));
    }
    let (w_lo, w_hi) = model.domain().truncated_axis(0, anchor, cfg.cutoff);
    let x_end = match direction {
        Side::Left => w_lo,
        Side::Right => w_hi,
    };
    let dx = cfg.dense_dx;
    let n_nodes = ((x_end - anchor).abs() / dx).floor() as i64;
    let grid = match direction {
        Side::Right => RecordGrid {
            x0: anchor,
            dx,
            i_lo: 0,
            i_hi: n_nodes,
        },
        Side::Left => RecordGrid {
            x0: anchor - n_nodes as f64 * dx,
            dx,
            i_lo: 0,
            i_hi: n_nodes,
        },
    };
    let opts = SweepOpts {
        rtol: cfg.ode_rtol,
        atol: cfg.ode_atol,
        h_max: dx,
        record: Some(grid),
        stop_on_sign_change: false,
    };
    let y0 = State {
        u: value,
        v: slope,
        log_scale: 0.0,
    };
    let outcome = sweep(model, lambda, anchor, x_end, y0, &opts)?;

    // unpack in ascending order
    let mut nodes = outcome.recorded;
    nodes.sort_by_key(|n| n.index);
    let mut values = Vec::with_capacity(nodes.len());
    let mut derivs = Vec::with_capacity(nodes.len());
    let mut overflow_at = None;
    let mut cut: Option<usize> = None;
    for (pos, node) in nodes.iter().enumerate() {
        let s = node.log_scale.exp();
        let (u, v) = (node.u * s, node.v * s);
        if !u.is_finite() || !v.is_finite() || node.log_scale > 690.0 {
            overflow_at = Some(grid.position(node.index));
            cut = Some(pos);
            break;
        }
        values.push(u);
        derivs.push(v);
    }
    // for leftward integration an overflow truncates the *far* (small-index)
    // part of the grid; keep the contiguous block adjacent to the anchor
    if cut.is_some() && direction == Side::Left {
        // nodes ascend; anchor is the last index. Re-extract from the far end.
        values.clear();
        derivs.clear();
        let mut first_ok = nodes.len();
        for (pos, node) in nodes.iter().enumerate().rev() {
            let s = node.log_scale.exp();
            let (u, v) = (node.u * s, node.v * s);
            if !u.is_finite() || !v.is_finite() || node.log_scale > 690.0 {
                first_ok = pos + 1;
                break;
            }
            if pos == 0 {
                first_ok = 0;
            }
        }
        for node in &nodes[first_ok..] {
            let s = node.log_scale.exp();
            values.push(node.u * s);
            derivs.push(node.v * s);
        }
        let x0 = grid.position(nodes[first_ok].index);
        return Ok(OdeSolution {
            lambda,
            x0,
            dx,
            values,
            derivs,
            overflow_at,
        });
    }
    let x0 = if nodes.is_empty() {
        anchor
    } else {
        grid.position(nodes[0].index)
    };
    Ok(OdeSolution {
        lambda,
        x0,
        dx,
        values,
        derivs,
        overflow_at,
    })
}

/// A normalized positive solution minimal at one boundary: the 1D Martin
/// kernel `k(x; side)` once `side` is the boundary the induced diffusion
/// escapes to (the opposite end of where the solution is minimal).
pub struct MinimalSolution {
    /// Boundary at which this solution is minimal.
    pub minimal_at: Side,
    /// Martin boundary point this kernel belongs to (opposite of `minimal_at`).
    pub martin_side: Side,
    pub lambda: f64,
    pub xi: f64,
    pub solution: OdeSolution,
    field: Arc<Hermite1d>,
    /// max relative disagreement between the two finest truncation levels
    pub truncation_disagreement: f64,
}

impl MinimalSolution {
    pub fn value(&self, x: f64) -> f64 {
        self.field.eval_all(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.field.eval_all(x).1
    }

    pub fn as_field(&self) -> Arc<dyn ScalarField> {
        self.field.clone()
    }

    pub fn as_pair(&self) -> CandidatePair {
        CandidatePair::new(self.lambda, self.as_field())
    }
}

struct LevelShot {
    values: Vec<f64>,
    derivs: Vec<f64>,
}

/// Reporting window and node grid used by the boundary-solution machinery.
struct Window {
    x0: f64,
    dx: f64,
    n: usize,
    xi_index: usize,
    w_lo: f64,
    w_hi: f64,
}

fn window(model: &DiffusionModel, xi: f64, cfg: &NumericsConfig) -> Window {
    let (w_lo, w_hi) = model.domain().truncated_axis(0, xi, cfg.cutoff);
    let dx = cfg.dense_dx;
    let n_lo = ((xi - w_lo) / dx + 1e-9).floor() as usize;
    let n_hi = ((w_hi - xi) / dx + 1e-9).floor() as usize;
    Window {
        x0: xi - n_lo as f64 * dx,
        dx,
        n: n_lo + n_hi + 1,
        xi_index: n_lo,
        w_lo,
        w_hi,
    }
}

/// One Dirichlet shot from a truncated boundary across the window; returns
/// normalized (at xi) values and derivatives on the window grid.
fn shoot_level(
    model: &DiffusionModel,
    lambda: f64,
    minimal_at: Side,
    trunc_distance: f64,
    win: &Window,
    cfg: &NumericsConfig,
) -> Result<LevelShot> {
    let axis = &model.domain().axes[0];
    let xi = win.x0 + win.xi_index as f64 * win.dx;
    let (x_start, x_far_end) = match minimal_at {
        Side::Left => {
            let start = axis.left.map_or(xi - trunc_distance, |a| a.max(xi - trunc_distance));
            (start, win.w_hi)
        }
        Side::Right => {
            let start = axis.right.map_or(xi + trunc_distance, |b| b.min(xi + trunc_distance));
            (start, win.w_lo)
        }
    };
    let slope = match minimal_at {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    let mut y = State {
        u: 0.0,
        v: slope,
        log_scale: 0.0,
    };
    // far zone: no recording, generous steps
    let window_entry = match minimal_at {
        Side::Left => win.w_lo.max(x_start),
        Side::Right => win.w_hi.min(x_start),
    };
    if (window_entry - x_start).abs() > 0.0 {
        let far = sweep(
            model,
            lambda,
            x_start,
            window_entry,
            y,
            &SweepOpts {
                rtol: cfg.ode_rtol,
                atol: cfg.ode_atol,
                h_max: cfg.classify_h_max,
                record: None,
                stop_on_sign_change: true,
            },
        )?;
        if let Some(at) = far.sign_change {
            return Err(Error::Criticality(format!(
                "solution shot from the {minimal_at:?} truncation oscillates (sign change near x = {at:.6}); operator not subcritical at lambda = {lambda}"
            )));
        }
        y = far.end;
    }
    let grid = RecordGrid {
        x0: win.x0,
        dx: win.dx,
        i_lo: 0,
        i_hi: (win.n - 1) as i64,
    };
    let dense = sweep(
        model,
        lambda,
        window_entry,
        x_far_end,
        y,
        &SweepOpts {
            rtol: cfg.ode_rtol,
            atol: cfg.ode_atol,
            h_max: win.dx,
            record: Some(grid),
            stop_on_sign_change: false,
        },
    )?;
    if let Some(at) = dense.sign_change {
        return Err(Error::Criticality(format!(
            "solution shot from the {minimal_at:?} truncation oscillates (sign change near x = {at:.6}); operator not subcritical at lambda = {lambda}"
        )));
    }
    let mut nodes = dense.recorded;
    nodes.sort_by_key(|n| n.index);
    if nodes.len() != win.n {
        return Err(Error::Numeric(format!(
            "dense sweep recorded {} of {} nodes",
            nodes.len(),
            win.n
        )));
    }
    let anchor = &nodes[win.xi_index];
    let (u_xi, scale_xi) = (anchor.u, anchor.log_scale);
    if !(u_xi > 0.0) {
        return Err(Error::Criticality(format!(
            "shot solution nonpositive at the reference point (lambda = {lambda})"
        )));
    }
    let mut values = Vec::with_capacity(win.n);
    let mut derivs = Vec::with_capacity(win.n);
    for node in &nodes {
        let factor = (node.log_scale - scale_xi).exp();
        if !factor.is_finite() {
            return Err(Error::Numeric(
                "normalized boundary solution overflows on the window".into(),
            ));
        }
        values.push(node.u / u_xi * factor);
        derivs.push(node.v / u_xi * factor);
    }
    Ok(LevelShot { values, derivs })
}

/// Pointwise Aitken extrapolation over three refinement levels with guards:
/// geometric contraction is extrapolated, stalls fall back to the finest
/// level.
fn aitken3(s0: f64, s1: f64, s2: f64) -> f64 {
    let d1 = s1 - s0;
    let d2 = s2 - s1;
    let denom = d2 - d1;
    let scale = s0.abs().max(s1.abs()).max(s2.abs());
    if denom.abs() <= 1e-12 * scale + 1e-300 {
        return s2;
    }
    if d1 != 0.0 && d2.abs() > 0.95 * d1.abs() {
        return s2;
    }
    let ext = s2 - d2 * d2 / denom;
    if ext.is_finite() {
        ext
    } else {
        s2
    }
}

fn extrapolate_levels(levels: &[LevelShot]) -> (Vec<f64>, Vec<f64>) {
    let n = levels.last().unwrap().values.len();
    match levels.len() {
        1 => (levels[0].values.clone(), levels[0].derivs.clone()),
        2 => (levels[1].values.clone(), levels[1].derivs.clone()),
        _ => {
            let (l0, l1, l2) = (&levels[0], &levels[1], &levels[2]);
            let mut values = Vec::with_capacity(n);
            let mut derivs = Vec::with_capacity(n);
            for i in 0..n {
                values.push(aitken3(l0.values[i], l1.values[i], l2.values[i]));
                derivs.push(aitken3(l0.derivs[i], l1.derivs[i], l2.derivs[i]));
            }
            (values, derivs)
        }
    }
}

fn build_minimal(
    model: &DiffusionModel,
    lambda: f64,
    minimal_at: Side,
    win: &Window,
    cfg: &NumericsConfig,
) -> Result<MinimalSolution> {
    let axis = &model.domain().axes[0];
    let finite = match minimal_at {
        Side::Left => axis.left.is_some() && axis.left.unwrap() >= win.w_lo - 1e-12,
        Side::Right => axis.right.is_some() && axis.right.unwrap() <= win.w_hi + 1e-12,
    };
    let n_levels = if finite { 1 } else { cfg.trunc_levels.max(1) };
    let mut levels = Vec::with_capacity(n_levels);
    for k in 0..n_levels {
        let dist = cfg.cutoff * 2f64.powi(k as i32 + 1);
        levels.push(shoot_level(model, lambda, minimal_at, dist, win, cfg)?);
    }
    let disagreement = if levels.len() >= 2 {
        let a = &levels[levels.len() - 2];
        let b = &levels[levels.len() - 1];
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    let (mut values, mut derivs) = extrapolate_levels(&levels);

    // extrapolation must not break the ODE structure; fall back to the
    // finest level if the interpolated residual degrades
    if levels.len() >= 2 {
        let candidate = Hermite1d::new(win.x0, win.dx, values.clone(), derivs.clone());
        let pair = CandidatePair::new(lambda, Arc::new(candidate));
        let probe: Vec<Vec<f64>> = (1..32)
            .map(|j| vec![win.x0 + (j * (win.n - 1) / 32) as f64 * win.dx])
            .collect();
        let res = model.pde_residual(&pair, &probe)?;
        if res > 0.3 * cfg.residual_tol {
            let finest = levels.last().unwrap();
            values = finest.values.clone();
            derivs = finest.derivs.clone();
        }
    }

    // positivity on interior nodes
    for (i, v) in values.iter().enumerate() {
        let interior = i > 0 && i + 1 < values.len();
        let at_finite_edge = (i == 0 && axis.left.is_some()) || (i + 1 == values.len() && axis.right.is_some());
        if (interior || !at_finite_edge) && !(*v > 0.0) {
            return Err(Error::Criticality(format!(
                "boundary solution nonpositive at x = {:.6} (lambda = {lambda})",
                win.x0 + i as f64 * win.dx
            )));
        }
    }

    let solution = OdeSolution {
        lambda,
        x0: win.x0,
        dx: win.dx,
        values,
        derivs,
        overflow_at: None,
    };
    let field = solution.field();
    Ok(MinimalSolution {
        minimal_at,
        martin_side: minimal_at.opposite(),
        lambda,
        xi: win.x0 + win.xi_index as f64 * win.dx,
        solution,
        field,
        truncation_disagreement: disagreement,
    })
}

/// Computes the pair of boundary (minimal) solutions `(u_left, u_right)`,
/// each normalized to 1 at the reference point. Errors with a criticality
/// report if the operator is not subcritical at `lambda` (oscillation, or
/// the two solutions are numerically proportional).
pub fn boundary_solutions(
    model: &DiffusionModel,
    lambda: f64,
    cfg: &NumericsConfig,
) -> Result<(MinimalSolution, MinimalSolution)> {
    require_1d(model)?;
    let xi = model.reference_point(cfg)[0];
    let win = window(model, xi, cfg);
    let left = build_minimal(model, lambda, Side::Left, &win, cfg)?;
    let right = build_minimal(model, lambda, Side::Right, &win, cfg)?;
    // independence: Wronskian at the reference point, both solutions normalized
    let w = wronskian_of(&left, &right, xi);
    let scale = (1.0 + left.derivative(xi).abs()) * (1.0 + right.derivative(xi).abs());
    if w.abs() < cfg.wronskian_tol * scale {
        return Err(Error::Criticality(format!(
            "boundary solutions are proportional (Wronskian {w:.3e}); operator critical near lambda = {lambda}"
        )));
    }
    Ok((left, right))
}

fn wronskian_of(left: &MinimalSolution, right: &MinimalSolution, x: f64) -> f64 {
    left.value(x) * right.derivative(x) - left.derivative(x) * right.value(x)
}

/// Green's function of `G = L + lambda` built from the boundary solutions:
/// `G(x, y) = -2 u_l(x ^ y) u_r(x v y) / (a(y) W(y))`, which satisfies the
/// distributional identity `G G(., y) = -delta_y` (continuity at the diagonal
/// plus the derivative jump `-2 / a(y)`).
pub struct GreensFunction1d {
    pub left: MinimalSolution,
    pub right: MinimalSolution,
    model: DiffusionModel,
    pub xi: f64,
}

impl GreensFunction1d {
    pub fn new(model: &DiffusionModel, lambda: f64, cfg: &NumericsConfig) -> Result<Self> {
        let (left, right) = boundary_solutions(model, lambda, cfg)?;
        let xi = left.xi;
        Ok(GreensFunction1d {
            left,
            right,
            model: model.clone(),
            xi,
        })
    }

    pub fn wronskian(&self, y: f64) -> f64 {
        wronskian_of(&self.left, &self.right, y)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let (a, _, _) = self.model.coefficients_1d(y);
        -2.0 * self.left.value(lo) * self.right.value(hi) / (a * self.wronskian(y))
    }

    /// `G(x, y) / G(xi, y)`; converges to the Martin kernel as `y` marches to
    /// a boundary.
    pub fn kernel_ratio(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y) / self.eval(self.xi, y)
    }
}

/// Convenience single-value wrapper matching the operation signature.
pub fn greens_function_1d(
    model: &DiffusionModel,
    lambda: f64,
    x: f64,
    y: f64,
    cfg: &NumericsConfig,
) -> Result<f64> {
    Ok(GreensFunction1d::new(model, lambda, cfg)?.eval(x, y))
}

/// The 1D Martin kernel for a boundary side: `k(.; +1)` is the positive
/// solution minimal at the *left* boundary (the Green's-ratio limit toward
/// the right boundary), normalized to 1 at the reference point. The
/// orientation is verified by the sign of the transformed drift near the
/// truncation; an unsettled sign is reported rather than guessed.
pub fn martin_kernel_1d(
    model: &DiffusionModel,
    lambda: f64,
    side: Side,
    cfg: &NumericsConfig,
) -> Result<MinimalSolution> {
    let (left, right) = boundary_solutions(model, lambda, cfg)?;
    let sol = match side {
        Side::Right => left,
        Side::Left => right,
    };
    verify_orientation(model, &sol, side, cfg)?;
    Ok(sol)
}

fn verify_orientation(
    model: &DiffusionModel,
    sol: &MinimalSolution,
    side: Side,
    cfg: &NumericsConfig,
) -> Result<()> {
    let xi = sol.xi;
    let (w_lo, w_hi) = model.domain().truncated_axis(0, xi, cfg.cutoff);
    let span = match side {
        Side::Right => w_hi - xi,
        Side::Left => xi - w_lo,
    };
    let mut settled = 0;
    for &frac in &[0.7, 0.8, 0.9] {
        let x = xi + side.signum() * frac * span;
        let (a, k, _) = model.coefficients_1d(x);
        let drift = k + a * sol.derivative(x) / sol.value(x);
        let floor = 1e-10 * (1.0 + k.abs() + a);
        if drift * side.signum() > floor {
            settled += 1;
        } else if drift * side.signum() < -floor {
            return Err(Error::Criticality(format!(
                "transformed drift points away from the {side:?} boundary at x = {x:.4}; kernel orientation inconsistent"
            )));
        }
    }
    if settled == 0 {
        return Err(Error::Criticality(format!(
            "transformed drift sign not settled near the {side:?} truncation; kernel orientation ambiguous"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criticality classification and the critical value
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalityClass {
    Subcritical,
    Critical,
    Supercritical,
}

/// Wronskian evidence: per-level values at the reference point and the
/// linear-in-inverse-truncation extrapolation (which vanishes at a critical
/// lambda and stalls at a nonzero limit otherwise).
#[derive(Debug, Clone, Serialize)]
pub struct WronskianWitness {
    pub per_level: Vec<f64>,
    pub extrapolated: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalityReport {
    pub lambda: f64,
    pub class: CriticalityClass,
    /// Extrapolated critical value, when the search succeeded.
    pub beta_bar: Option<f64>,
    /// Location of a sign change of the boundary shot, when one exists at
    /// the finest truncation.
    pub oscillation_at: Option<f64>,
    pub wronskian: Option<WronskianWitness>,
    pub witness: String,
}

/// Detects a sign change of the Dirichlet shot across `(lo, hi)`; grazing
/// near-zeros escalate the tolerance once before deciding.
fn oscillation_on(
    model: &DiffusionModel,
    lambda: f64,
    lo: f64,
    hi: f64,
    cfg: &NumericsConfig,
) -> Result<Option<f64>> {
    let mut rtol = cfg.ode_rtol;
    for _attempt in 0..2 {
        let outcome = sweep(
            model,
            lambda,
            lo,
            hi,
            State {
                u: 0.0,
                v: 1.0,
                log_scale: 0.0,
            },
            &SweepOpts {
                rtol,
                atol: cfg.ode_atol,
                h_max: cfg.classify_h_max,
                record: None,
                stop_on_sign_change: true,
            },
        )?;
        if outcome.sign_change.is_some() || !outcome.grazed {
            return Ok(outcome.sign_change);
        }
        rtol *= 1e-3;
    }
    Ok(None)
}

/// Truncated interval at distance `d` each side of the reference point,
/// clipped at finite boundaries.
fn truncated_interval(model: &DiffusionModel, xi: f64, d: f64) -> (f64, f64) {
    model.domain().truncated_axis(0, xi, d)
}

/// Principal Dirichlet eigenvalue of the truncated interval, located by
/// bisection on the oscillation test; the bracket top is doubled until the
/// shot oscillates.
fn dirichlet_eigenvalue(
    model: &DiffusionModel,
    lo_x: f64,
    hi_x: f64,
    cfg: &NumericsConfig,
) -> Result<f64> {
    if oscillation_on(model, 0.0, lo_x, hi_x, cfg)?.is_some() {
        return Err(Error::Search(
            "boundary shot oscillates at lambda = 0; nonnegative rate violated?".into(),
        ));
    }
    let mut hi = 0.5;
    let mut doublings = 0;
    while oscillation_on(model, hi, lo_x, hi_x, cfg)?.is_none() {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Search(
                "could not bracket the critical value: no oscillation up to huge lambda".into(),
            ));
        }
    }
    let mut lo = if doublings == 0 { 0.0 } else { hi / 2.0 };
    let eps = cfg.beta_tol.max(1e-13) * (1.0 + hi.abs());
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        if oscillation_on(model, mid, lo_x, hi_x, cfg)?.is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Finds the critical value: the threshold between subcritical and
/// supercritical lambda. Dirichlet eigenvalues of truncated intervals
/// converge to it like `1/L^2` in the interval length, so two stages of
/// length-weighted extrapolation over doubled truncations recover it to the
/// requested tolerance; the truncations are doubled further if the stage
/// disagreement is still above `tol`.
pub fn critical_beta(model: &DiffusionModel, tol: f64, cfg: &NumericsConfig) -> Result<f64> {
    require_1d(model)?;
    if tol <= 0.0 {
        return Err(Error::Usage("tolerance must be positive".into()));
    }
    let xi = model.reference_point(cfg)[0];
    let axis = &model.domain().axes[0];
    if axis.left.is_some() && axis.right.is_some() {
        let (lo, hi) = (axis.left.unwrap(), axis.right.unwrap());
        return dirichlet_eigenvalue(model, lo, hi, cfg);
    }

    let mut base = cfg.cutoff;
    for _escalation in 0..3 {
        let mut eigs = Vec::new();
        let mut lens = Vec::new();
        for k in 0..3 {
            let d = base * 2f64.powi(k as i32 + 1);
            let (lo, hi) = truncated_interval(model, xi, d);
            eigs.push(dirichlet_eigenvalue(model, lo, hi, cfg)?);
            lens.push(hi - lo);
        }
        // eliminate the 1/L^2 term pairwise
        let stage = |i: usize, j: usize| -> f64 {
            let (li2, lj2) = (lens[i] * lens[i], lens[j] * lens[j]);
            (eigs[j] * lj2 - eigs[i] * li2) / (lj2 - li2)
        };
        let est01 = stage(0, 1);
        let est12 = stage(1, 2);
        if (est12 - est01).abs() <= tol {
            return Ok(est12);
        }
        base *= 2.0;
    }
    Err(Error::Search(format!(
        "critical value did not converge to tolerance {tol} within the truncation budget"
    )))
}

/// Raw Wronskian witness at two truncation levels plus the linear
/// extrapolation in the inverse truncation distance.
fn wronskian_witness(
    model: &DiffusionModel,
    lambda: f64,
    cfg: &NumericsConfig,
) -> Result<WronskianWitness> {
    let xi = model.reference_point(cfg)[0];
    let win = window(model, xi, cfg);
    let mut per_level = Vec::new();
    for k in 0..2 {
        let d = cfg.cutoff * 2f64.powi(k as i32 + 1);
        let l = shoot_level(model, lambda, Side::Left, d, &win, cfg)?;
        let r = shoot_level(model, lambda, Side::Right, d, &win, cfg)?;
        let i = win.xi_index;
        per_level.push(l.values[i] * r.derivs[i] - l.derivs[i] * r.values[i]);
    }
    // W(d) ~ W_inf + c/d with d doubling: W_inf = 2 W(2d) - W(d)
    let extrapolated = 2.0 * per_level[1] - per_level[0];
    Ok(WronskianWitness {
        per_level,
        extrapolated,
    })
}

/// Classifies `G = L + lambda`: supercritical beyond the critical value,
/// critical inside a small band around it, subcritical below. The report
/// always carries concrete evidence: the oscillation location when the
/// boundary shot changes sign, and the Wronskian refinement witness
/// otherwise.
pub fn classify_criticality(
    model: &DiffusionModel,
    lambda: f64,
    cfg: &NumericsConfig,
) -> CriticalityReport {
    let mk = |class, beta_bar, oscillation_at, wronskian, witness: String| CriticalityReport {
        lambda,
        class,
        beta_bar,
        oscillation_at,
        wronskian,
        witness,
    };

    let xi = match model.dim() {
        1 => model.reference_point(cfg)[0],
        _ => {
            return mk(
                CriticalityClass::Subcritical,
                None,
                None,
                None,
                "classification requires a one-dimensional model".into(),
            )
        }
    };
    let finest = cfg.cutoff * 2f64.powi(cfg.trunc_levels.max(1) as i32);
    let (lo, hi) = truncated_interval(model, xi, finest);
    let oscillation = oscillation_on(model, lambda, lo, hi, cfg).unwrap_or(None);

    match critical_beta(model, cfg.class_band.min(1e-9), cfg) {
        Ok(beta_bar) => {
            let band = cfg.class_band * (1.0 + beta_bar.abs());
            if lambda > beta_bar + band {
                let witness = match oscillation {
                    Some(x) => format!(
                        "boundary shot changes sign at x = {x:.6}; lambda exceeds the critical value {beta_bar:.9}"
                    ),
                    None => format!(
                        "lambda exceeds the extrapolated critical value {beta_bar:.9} (oscillation beyond the finest truncation)"
                    ),
                };
                mk(CriticalityClass::Supercritical, Some(beta_bar), oscillation, None, witness)
            } else if lambda >= beta_bar - band {
                let wr = wronskian_witness(model, lambda, cfg).ok();
                let witness = match &wr {
                    Some(w) => format!(
                        "positive boundary solutions proportional in the truncation limit (Wronskian levels {:?} -> {:.3e}); lambda within {band:.1e} of the critical value {beta_bar:.9}",
                        w.per_level, w.extrapolated
                    ),
                    None => format!(
                        "lambda within {band:.1e} of the critical value {beta_bar:.9}"
                    ),
                };
                mk(CriticalityClass::Critical, Some(beta_bar), oscillation, wr, witness)
            } else {
                let wr = wronskian_witness(model, lambda, cfg).ok();
                let witness = match &wr {
                    Some(w) => format!(
                        "two independent positive boundary solutions (Wronskian extrapolates to {:.3e}); lambda below the critical value {beta_bar:.9}",
                        w.extrapolated
                    ),
                    None => format!("lambda below the critical value {beta_bar:.9}"),
                };
                mk(CriticalityClass::Subcritical, Some(beta_bar), oscillation, wr, witness)
            }
        }
        Err(e) => match oscillation {
            Some(x) => mk(
                CriticalityClass::Supercritical,
                None,
                Some(x),
                None,
                format!("boundary shot changes sign at x = {x:.6} (critical-value search failed: {e})"),
            ),
            None => mk(
                CriticalityClass::Subcritical,
                None,
                None,
                None,
                format!("no oscillation at the finest truncation (critical-value search failed: {e})"),
            ),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{cfg, cosh_model, gbm_log_model, quadratic_lambda};
    use approx::assert_relative_eq;

    #[test]
    fn integrates_exponential_eigenfunction() {
        let model = gbm_log_model();
        let c = cfg();
        let sol = integrate_ode(&model, 0.05, 0.0, 1.0, -1.5, Side::Right, &c).unwrap();
        let f = sol.field();
        for x in [0.0, 0.5, 1.0, 1.7, 2.0] {
            let exact = (-1.5f64 * x).exp();
            assert!(
                (f.eval_all(x).0 - exact).abs() <= 1e-8 * exact.max(1.0),
                "x = {x}"
            );
        }
        let sol_l = integrate_ode(&model, 0.05, 0.0, 1.0, -1.5, Side::Left, &c).unwrap();
        let f = sol_l.field();
        for x in [-2.0, -1.0, -0.25] {
            let exact = (-1.5f64 * x).exp();
            assert!(
                (f.eval_all(x).0 - exact).abs() <= 1e-8 * exact.max(1.0),
                "x = {x}"
            );
        }
    }

    #[test]
    fn integrates_hyperbolic_solution() {
        // k = 0, sigma = sqrt(2), r = 1, lambda = 0: h'' = h, data (1, 1) -> e^x
        let model = cosh_model();
        let sol = integrate_ode(&model, 0.0, 0.0, 1.0, 1.0, Side::Right, &cfg()).unwrap();
        let f = sol.field();
        for x in [0.3, 1.0, 2.0, 4.0] {
            assert_relative_eq!(f.eval_all(x).0, x.exp(), max_relative = 1e-8);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let model = gbm_log_model();
        let sol = integrate_ode(&model, 0.05, 0.0, 0.0, 0.0, Side::Right, &cfg()).unwrap();
        assert!(sol.values.iter().all(|&v| v == 0.0));
        assert!(sol.derivs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ode_solutions_pass_the_residual_gate() {
        let model = gbm_log_model();
        let sol = integrate_ode(&model, 0.05, 0.0, 1.0, -1.5, Side::Right, &cfg()).unwrap();
        let pair = sol_pair(&sol);
        let grid: Vec<Vec<f64>> = (0..=40).map(|i| vec![0.05 + i as f64 * 0.05]).collect();
        let res = model.pde_residual(&pair, &grid).unwrap();
        assert!(res <= 1e-6, "residual {res}");
    }

    fn sol_pair(sol: &OdeSolution) -> CandidatePair {
        CandidatePair::new(sol.lambda, sol.field())
    }

    #[test]
    fn boundary_solutions_match_the_quadratic_roots() {
        // roots of 0.02 a^2 + 0.03 a + (0.05 - 0.05) = 0 are 0 and -1.5
        assert_relative_eq!(quadratic_lambda(0.04, 0.03, 0.05, 0.0), 0.05);
        assert_relative_eq!(quadratic_lambda(0.04, 0.03, 0.05, -1.5), 0.05);
        let model = gbm_log_model();
        let (left, right) = boundary_solutions(&model, 0.05, &cfg()).unwrap();
        for x in [-2.0, -0.7, 0.0, 1.3, 2.0] {
            assert!(
                (left.value(x) - 1.0).abs() <= 1e-7,
                "u_left({x}) = {}",
                left.value(x)
            );
            let exact = (-1.5f64 * x).exp();
            assert!(
                (right.value(x) - exact).abs() <= 1e-7 * exact.max(1.0),
                "u_right({x}) = {} vs {exact}",
                right.value(x)
            );
        }
        assert_relative_eq!(left.value(left.xi), 1.0, max_relative = 1e-12);
        assert_relative_eq!(right.value(right.xi), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn boundary_solutions_of_hyperbolic_model_are_exponentials() {
        let model = cosh_model();
        let (left, right) = boundary_solutions(&model, 0.0, &cfg()).unwrap();
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert_relative_eq!(left.value(x), x.exp(), max_relative = 1e-7);
            assert_relative_eq!(right.value(x), (-x).exp(), max_relative = 1e-7);
        }
        // symmetric coefficients: u_left(x) = u_right(-x)
        for x in [0.4, 1.1, 2.3] {
            assert_relative_eq!(left.value(x), right.value(-x), max_relative = 1e-9);
        }
    }

    #[test]
    fn greens_function_matches_the_exponential_form() {
        // G h = h'' - h; textbook solution from u_l = e^x, u_r = e^{-x}:
        // G(x, y) = exp(-|x - y|) / 2
        let model = cosh_model();
        let g = GreensFunction1d::new(&model, 0.0, &cfg()).unwrap();
        for (x, y) in [(0.0, 1.0), (-1.0, 2.0), (0.5, 0.25), (2.0, -2.0)] {
            let exact = 0.5 * (-(x - y as f64).abs()).exp();
            assert_relative_eq!(g.eval(x, y), exact, max_relative = 1e-6);
            assert!(g.eval(x, y) > 0.0);
        }
        // ratio converges to the kernel e^{x - xi} as y marches right
        for y in [10.0, 15.0, 20.0] {
            for x in [-1.0, 0.0, 1.5] {
                assert_relative_eq!(g.kernel_ratio(x, y), x.exp(), max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn wronskian_times_a_is_constant_for_divergence_form() {
        let model = cosh_model();
        let g = GreensFunction1d::new(&model, 0.0, &cfg()).unwrap();
        let w0 = g.wronskian(0.0) * 2.0 / 2.0;
        for y in [-2.0, -0.5, 0.7, 1.9] {
            let (a, _, _) = model.coefficients_1d(y);
            let w = g.wronskian(y) * a / 2.0;
            assert_relative_eq!(w, w0, max_relative = 1e-6);
        }
    }

    #[test]
    fn greens_jump_condition_holds() {
        let model = cosh_model();
        let g = GreensFunction1d::new(&model, 0.0, &cfg()).unwrap();
        let y = 0.4;
        let (a, _, _) = model.coefficients_1d(y);
        let h = 1e-5;
        let left_slope = (g.eval(y - h, y) - g.eval(y - 2.0 * h, y)) / h;
        let right_slope = (g.eval(y + 2.0 * h, y) - g.eval(y + h, y)) / h;
        assert_relative_eq!(right_slope - left_slope, -2.0 / a, max_relative = 1e-3);
    }

    #[test]
    fn martin_kernels_pick_the_drift_consistent_solution() {
        let model = gbm_log_model();
        let c = cfg();
        let plus = martin_kernel_1d(&model, 0.05, Side::Right, &c).unwrap();
        let minus = martin_kernel_1d(&model, 0.05, Side::Left, &c).unwrap();
        // right-going kernel is the constant 1 (alpha = 0 root, drift +0.03)
        for x in [-2.0, 0.0, 2.0] {
            assert!((plus.value(x) - 1.0).abs() <= 1e-7);
            let exact = (-1.5f64 * x).exp();
            assert!((minus.value(x) - exact).abs() <= 1e-7 * exact.max(1.0));
        }
        assert_relative_eq!(plus.value(plus.xi), 1.0, max_relative = 1e-12);

        let model = cosh_model();
        let plus = martin_kernel_1d(&model, 0.0, Side::Right, &c).unwrap();
        let minus = martin_kernel_1d(&model, 0.0, Side::Left, &c).unwrap();
        for x in [-1.0, 0.5, 2.0] {
            assert_relative_eq!(plus.value(x), x.exp(), max_relative = 1e-7);
            assert_relative_eq!(minus.value(x), (-x).exp(), max_relative = 1e-7);
        }
    }

    #[test]
    fn kernel_induced_drift_signs_point_at_their_boundaries() {
        let c = cfg();
        for model in [gbm_log_model(), cosh_model()] {
            let lambda = match model.coefficients_1d(0.0).2 {
                r if (r - 1.0).abs() < 1e-12 => 0.0,
                _ => 0.05,
            };
            for side in [Side::Left, Side::Right] {
                let k = martin_kernel_1d(&model, lambda, side, &c).unwrap();
                let x = 0.9 * c.cutoff * side.signum();
                let (a, kk, _) = model.coefficients_1d(x);
                let drift = kk + a * k.derivative(x) / k.value(x);
                assert!(drift * side.signum() > 0.0, "side {side:?} drift {drift}");
            }
        }
    }

    #[test]
    fn classifies_the_three_regimes() {
        let model = gbm_log_model();
        let c = cfg();
        // oracle: discriminant of 0.02 a^2 + 0.03 a + (lambda - 0.05)
        // vanishes at lambda = 0.06125 (double root alpha = -0.75)
        let sub = classify_criticality(&model, 0.05, &c);
        assert_eq!(sub.class, CriticalityClass::Subcritical);
        let crit = classify_criticality(&model, 0.06125, &c);
        assert_eq!(crit.class, CriticalityClass::Critical);
        let sup = classify_criticality(&model, 0.07, &c);
        assert_eq!(sup.class, CriticalityClass::Supercritical);
        assert!(sup.oscillation_at.is_some());
        // the critical case shows a vanishing extrapolated Wronskian
        let w = crit.wronskian.expect("witness");
        assert!(
            w.extrapolated.abs() < 0.02 * w.per_level[0].abs().max(1e-12),
            "wronskian witness {w:?}"
        );
    }

    #[test]
    fn classification_is_monotone_in_lambda() {
        let model = gbm_log_model();
        let c = cfg();
        let mut saw_supercritical_at = f64::INFINITY;
        for i in 0..12 {
            let lambda = 0.02 + i as f64 * 0.005;
            let rep = classify_criticality(&model, lambda, &c);
            match rep.class {
                CriticalityClass::Supercritical => {
                    saw_supercritical_at = saw_supercritical_at.min(lambda)
                }
                _ => assert!(
                    lambda < saw_supercritical_at,
                    "subcritical report above a supercritical one"
                ),
            }
        }
    }

    #[test]
    fn critical_value_matches_the_discriminant_oracle() {
        let model = gbm_log_model();
        // maximize r - a/2 alpha^2 - k alpha: alpha* = -k/a = -0.75,
        // beta_bar = 0.05 + 0.03^2 / (2 * 0.04) = 0.06125
        let oracle = 0.05 + 0.03f64 * 0.03 / (2.0 * 0.04);
        assert_relative_eq!(oracle, 0.06125);
        let beta = critical_beta(&model, 1e-8, &cfg()).unwrap();
        assert!((beta - 0.06125).abs() <= 1e-8, "beta_bar = {beta}");
    }

    #[test]
    fn critical_value_of_driftless_constant_rate_model_is_the_rate() {
        let model = cosh_model();
        let beta = critical_beta(&model, 1e-8, &cfg()).unwrap();
        assert!((beta - 1.0).abs() <= 1e-8, "beta_bar = {beta}");
    }

    #[test]
    fn bisection_output_separates_the_regimes() {
        let model = gbm_log_model();
        let c = cfg();
        let tol = 1e-7;
        let beta = critical_beta(&model, tol, &c).unwrap();
        let below = classify_criticality(&model, beta - 10.0 * tol, &c);
        assert_eq!(below.class, CriticalityClass::Subcritical);
        let above = classify_criticality(&model, beta + 10.0 * tol, &c);
        assert_eq!(above.class, CriticalityClass::Supercritical);
    }

    #[test]
    fn boundary_solutions_error_in_the_supercritical_regime() {
        let model = gbm_log_model();
        assert!(matches!(
            boundary_solutions(&model, 0.07, &cfg()),
            Err(Error::Criticality(_))
        ));
    }
}
