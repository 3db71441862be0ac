//! Quadrature helpers: adaptive Simpson on finite intervals, whole-line
//! integration with growing symmetric truncation, and deterministic
//! tensor-grid Gauss-Legendre for box integrals.

use crate::error::{Error, Result};

/// Adaptive Simpson with local error control from the two-panel refinement.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut depth_exceeded = false;
    let v = simpson_rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        rel_tol,
        abs_tol,
        60,
        &mut depth_exceeded,
    );
    if depth_exceeded {
        return Err(Error::Quadrature(format!(
            "adaptive refinement exhausted on [{a}, {b}]"
        )));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: u32,
    depth_exceeded: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let refined = left + right;
    let err = (refined - whole) / 15.0;
    if err.abs() <= abs_tol + rel_tol * refined.abs() {
        return refined + err;
    }
    if depth == 0 {
        *depth_exceeded = true;
        return refined;
    }
    let half_abs = 0.5 * abs_tol;
    simpson_rec(f, a, m, fa, flm, fm, left, rel_tol, half_abs, depth - 1, depth_exceeded)
        + simpson_rec(f, m, b, fm, frm, fb, right, rel_tol, half_abs, depth - 1, depth_exceeded)
}

/// Integral of `f` over the whole real line: adaptive Simpson on `[-T, T]`
/// with `T` doubled from `initial_halfwidth` until the added shells
/// contribute less than `rel_tol` of the running total.
pub fn integrate_real_line(
    f: &dyn Fn(f64) -> f64,
    initial_halfwidth: f64,
    rel_tol: f64,
    max_doublings: usize,
) -> Result<f64> {
    let mut t = initial_halfwidth;
    let mut total = adaptive_simpson(f, -t, t, rel_tol * 0.1, 0.0)?;
    for _ in 0..max_doublings {
        let t2 = 2.0 * t;
        let left = adaptive_simpson(f, -t2, -t, rel_tol * 0.1, rel_tol * 0.01 * total.abs())?;
        let right = adaptive_simpson(f, t, t2, rel_tol * 0.1, rel_tol * 0.01 * total.abs())?;
        let shell = left + right;
        total += shell;
        t = t2;
        if shell.abs() <= rel_tol * total.abs().max(f64::MIN_POSITIVE) {
            return Ok(total);
        }
    }
    Err(Error::Quadrature(format!(
        "tail of whole-line integral did not settle; last truncation {t}, partial value {total}"
    )))
}

// 5-point Gauss-Legendre nodes/weights on [-1, 1].
const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite 5-point Gauss-Legendre on a tensor box, fixed node ordering so
/// results are bit-reproducible.
pub fn tensor_gauss_legendre(
    f: &dyn Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    panels_per_axis: usize,
) -> f64 {
    let dim = bounds.len();
    // per-axis node/weight lists
    let mut axis_nodes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(dim);
    for &(lo, hi) in bounds {
        let w_panel = (hi - lo) / panels_per_axis as f64;
        let mut nodes = Vec::with_capacity(panels_per_axis * 5);
        for p in 0..panels_per_axis {
            let a = lo + p as f64 * w_panel;
            let c = a + 0.5 * w_panel;
            for q in 0..5 {
                nodes.push((c + 0.5 * w_panel * GL5_NODES[q], 0.5 * w_panel * GL5_WEIGHTS[q]));
            }
        }
        axis_nodes.push(nodes);
    }
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut total = 0.0;
    'outer: loop {
        let mut w = 1.0;
        for d in 0..dim {
            let (xi, wi) = axis_nodes[d][idx[d]];
            x[d] = xi;
            w *= wi;
        }
        total += w * f(&x);
        // odometer increment
        for d in (0..dim).rev() {
            idx[d] += 1;
            if idx[d] < axis_nodes[d].len() {
                continue 'outer;
            }
            idx[d] = 0;
            if d == 0 {
                break 'outer;
            }
        }
    }
    total
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x| x.exp(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert_relative_eq!(v, 1f64.exp() - 1.0, max_relative = 1e-11);
    }

    #[test]
    fn whole_line_gaussian_has_sqrt_pi_mass() {
        let v = integrate_real_line(&|x| (-x * x).exp(), 4.0, 1e-12, 20).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn tensor_rule_integrates_separable_exponential() {
        let v = tensor_gauss_legendre(&|x| (x[0] + x[1]).exp(), &[(-1.0, 1.0), (-1.0, 1.0)], 16);
        let one_d = 1f64.exp() - (-1f64).exp();
        assert_relative_eq!(v, one_d * one_d, max_relative = 1e-12);
    }

    #[test]
    fn log_add_exp_is_stable() {
        assert_relative_eq!(log_add_exp(1000.0, 1000.0), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_add_exp(-1e308, 3.0), 3.0);
    }
}
