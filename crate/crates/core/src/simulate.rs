//! Euler-Maruyama path simulation with reproducible per-path streams, and
//! the Monte Carlo estimators built on it: escape statistics, long-term
//! bond yields, and cash-flow decay curves.
//!
//! Reproducibility: every path owns a ChaCha stream keyed by
//! `(seed, path index)` and results are reduced in path order, so output is
//! bit-identical for a fixed seed regardless of thread count. Antithetic
//! pairs `(2j, 2j+1)` share stream `j` with negated increments; standard
//! errors are computed over pair averages.

use rayon::prelude::*;

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::model::{DiffusionModel, Dynamics};
use crate::recovery::RecoveredMeasure;
use crate::rng::PathRng;
use crate::sturm::Side;

/// Everything that pins down an ensemble.
#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub x0: Vec<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Times at which states (and the rate integral) are recorded; the
    /// final time is always recorded. Each must sit on the step grid.
    pub record_times: Vec<f64>,
    /// 1D absorbing thresholds (lower, upper): paths freeze on first passage.
    pub absorb: Option<(f64, f64)>,
}

impl SimulationPlan {
    pub fn new(x0: Vec<f64>, t_final: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        SimulationPlan {
            x0,
            t_final,
            dt,
            n_paths,
            seed,
            antithetic: true,
            record_times: Vec::new(),
            absorb: None,
        }
    }

    pub fn with_records(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    pub fn with_absorb(mut self, lower: f64, upper: f64) -> Self {
        self.absorb = Some((lower, upper));
        self
    }

    pub fn without_antithetic(mut self) -> Self {
        self.antithetic = false;
        self
    }

    fn n_steps(&self) -> Result<usize> {
        if self.dt <= 0.0 || self.t_final <= 0.0 {
            return Err(Error::Usage("time step and horizon must be positive".into()));
        }
        let steps = self.t_final / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Usage(format!(
                "dt = {} does not divide the horizon T = {}",
                self.dt, self.t_final
            )));
        }
        Ok(rounded as usize)
    }
}

/// Simulated ensemble: states (and rate integrals) at the recorded times.
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub record_times: Vec<f64>,
    /// `states[r][p * dim + d]`
    pub states: Vec<Vec<f64>>,
    /// `int_r[r][p]`, present when a rate field was supplied
    pub int_r: Option<Vec<Vec<f64>>>,
    /// first-passage record per path when absorption was enabled
    pub hits: Option<Vec<Option<(Side, f64)>>>,
    /// paths that left the representable range (kept in counts)
    pub flagged: Vec<bool>,
}

impl PathEnsemble {
    pub fn record_index(&self, t: f64) -> Option<usize> {
        self.record_times
            .iter()
            .position(|&rt| (rt - t).abs() <= 1e-9 * t.max(1.0))
    }

    pub fn state(&self, record: usize, path: usize) -> &[f64] {
        &self.states[record][path * self.dim..(path + 1) * self.dim]
    }

    pub fn terminal_record(&self) -> usize {
        self.record_times.len() - 1
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// Componentwise mean and variance at a record.
    pub fn component_stats(&self, record: usize) -> Vec<(f64, f64)> {
        let n = self.n_paths as f64;
        (0..self.dim)
            .map(|d| {
                let mut sum = 0.0;
                let mut sum2 = 0.0;
                for p in 0..self.n_paths {
                    let v = self.states[record][p * self.dim + d];
                    sum += v;
                    sum2 += v * v;
                }
                let mean = sum / n;
                (mean, (sum2 / n - mean * mean).max(0.0))
            })
            .collect()
    }
}

/// Sample mean and standard error of per-path values; antithetic ensembles
/// reduce over pair averages.
pub fn mean_se(values: &[f64], antithetic: bool) -> (f64, f64) {
    if antithetic && values.len() >= 2 && values.len() % 2 == 0 {
        let m = values.len() / 2;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for j in 0..m {
            let pair = 0.5 * (values[2 * j] + values[2 * j + 1]);
            sum += pair;
            sum2 += pair * pair;
        }
        let mean = sum / m as f64;
        let var = ((sum2 / m as f64 - mean * mean) * m as f64 / (m as f64 - 1.0).max(1.0)).max(0.0);
        (mean, (var / m as f64).sqrt())
    } else {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }
}

struct PathOutcome {
    states: Vec<f64>,
    int_r: Vec<f64>,
    hit: Option<(Side, f64)>,
    flagged: bool,
}

/// Euler-Maruyama ensemble under the given dynamics; the rate integral is
/// accumulated by the trapezoid rule on the same step grid when a rate
/// field is supplied.
pub fn simulate_paths(
    dynamics: &Dynamics,
    rate: Option<&dyn ScalarField>,
    plan: &SimulationPlan,
) -> Result<PathEnsemble> {
    let dim = dynamics.dim;
    if plan.x0.len() != dim {
        return Err(Error::Usage(format!(
            "start state has dimension {}, dynamics {}",
            plan.x0.len(),
            dim
        )));
    }
    if plan.n_paths == 0 {
        return Err(Error::Usage("need at least one path".into()));
    }
    if plan.antithetic && plan.n_paths % 2 != 0 {
        return Err(Error::Usage("antithetic ensembles need an even path count".into()));
    }
    if plan.absorb.is_some() && dim != 1 {
        return Err(Error::Usage("absorbing thresholds are one-dimensional".into()));
    }
    let n_steps = plan.n_steps()?;

    // record schedule: requested times + the horizon, on the step grid
    let mut record_steps: Vec<usize> = Vec::new();
    for &t in plan.record_times.iter().chain(std::iter::once(&plan.t_final)) {
        if t < -1e-12 || t > plan.t_final * (1.0 + 1e-12) {
            return Err(Error::Usage(format!("record time {t} outside [0, T]")));
        }
        let k = t / plan.dt;
        let rounded = k.round();
        if (k - rounded).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::Usage(format!(
                "record time {t} does not sit on the step grid"
            )));
        }
        record_steps.push(rounded as usize);
    }
    record_steps.sort_unstable();
    record_steps.dedup();
    let record_times: Vec<f64> = record_steps.iter().map(|&k| k as f64 * plan.dt).collect();

    let sqrt_dt = plan.dt.sqrt();
    let outcomes: Vec<PathOutcome> = (0..plan.n_paths)
        .into_par_iter()
        .map(|p| {
            let (stream, negate) = if plan.antithetic {
                ((p / 2) as u64, p % 2 == 1)
            } else {
                (p as u64, false)
            };
            let mut rng = PathRng::new(plan.seed, stream);
            let mut x = plan.x0.clone();
            let mut mu = vec![0.0; dim];
            let mut sig = vec![0.0; dim * dim];
            let mut z = vec![0.0; dim];
            let mut acc_r = 0.0;
            let mut r_prev = rate.map(|r| r.value(&x)).unwrap_or(0.0);
            let mut states = Vec::with_capacity(record_steps.len() * dim);
            let mut int_r = Vec::with_capacity(record_steps.len());
            let mut hit: Option<(Side, f64)> = None;
            let mut flagged = false;
            let mut next_record = 0usize;
            if record_steps[0] == 0 {
                states.extend_from_slice(&x);
                int_r.push(0.0);
                next_record = 1;
            }
            for step in 0..n_steps {
                let frozen = hit.is_some() || flagged;
                if !frozen {
                    dynamics.drift.eval_into(&x, &mut mu);
                    dynamics.sigma.eval_into(&x, &mut sig);
                    rng.fill_normals(&mut z);
                    if negate {
                        for zi in z.iter_mut() {
                            *zi = -*zi;
                        }
                    }
                    for i in 0..dim {
                        let mut dw = 0.0;
                        for j in 0..dim {
                            dw += sig[i * dim + j] * z[j];
                        }
                        x[i] += mu[i] * plan.dt + sqrt_dt * dw;
                    }
                    if !x.iter().all(|v| v.is_finite()) {
                        flagged = true;
                        for v in x.iter_mut() {
                            if !v.is_finite() {
                                *v = 0.0;
                            }
                        }
                    }
                    if let Some((lo, hi)) = plan.absorb {
                        if x[0] <= lo {
                            x[0] = lo;
                            hit = Some((Side::Left, (step + 1) as f64 * plan.dt));
                        } else if x[0] >= hi {
                            x[0] = hi;
                            hit = Some((Side::Right, (step + 1) as f64 * plan.dt));
                        }
                    }
                }
                if let Some(r) = rate {
                    let r_new = r.value(&x);
                    acc_r += 0.5 * (r_prev + r_new) * plan.dt;
                    r_prev = r_new;
                }
                if next_record < record_steps.len() && record_steps[next_record] == step + 1 {
                    states.extend_from_slice(&x);
                    int_r.push(acc_r);
                    next_record += 1;
                }
            }
            PathOutcome {
                states,
                int_r,
                hit,
                flagged,
            }
        })
        .collect();

    // transpose into record-major storage
    let n_rec = record_steps.len();
    let mut states = vec![vec![0.0; plan.n_paths * dim]; n_rec];
    let mut int_r = rate.map(|_| vec![vec![0.0; plan.n_paths]; n_rec]);
    let mut hits = plan.absorb.map(|_| vec![None; plan.n_paths]);
    let mut flagged = vec![false; plan.n_paths];
    for (p, o) in outcomes.into_iter().enumerate() {
        for r in 0..n_rec {
            states[r][p * dim..(p + 1) * dim].copy_from_slice(&o.states[r * dim..(r + 1) * dim]);
            if let Some(ir) = &mut int_r {
                ir[r][p] = o.int_r[r];
            }
        }
        if let Some(h) = &mut hits {
            h[p] = o.hit;
        }
        flagged[p] = o.flagged;
    }
    Ok(PathEnsemble {
        dim,
        n_paths: plan.n_paths,
        dt: plan.dt,
        seed: plan.seed,
        antithetic: plan.antithetic,
        record_times,
        states,
        int_r,
        hits,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// Escape statistics
// ---------------------------------------------------------------------------

/// How to bin long-run path behavior.
pub enum EscapeSpec {
    /// 1D: first-passage records from the absorbing thresholds.
    Thresholds,
    /// 2D: angular bins `[edges[i], edges[i+1])` for the terminal direction
    /// `X_T / |X_T|`.
    Arcs { edges: Vec<f64> },
    /// Nearest boundary atom by dot product with the terminal direction.
    Directions { atoms: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct EscapeOutcome {
    pub label: String,
    pub count: usize,
    pub frequency: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct EscapeStats {
    pub outcomes: Vec<EscapeOutcome>,
    pub decided: usize,
    pub undecided: usize,
    /// fewer than 100 decided paths
    pub low_power: bool,
}

pub fn escape_statistics(ensemble: &PathEnsemble, spec: &EscapeSpec) -> Result<EscapeStats> {
    let mut labels: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut undecided = 0usize;
    match spec {
        EscapeSpec::Thresholds => {
            let hits = ensemble
                .hits
                .as_ref()
                .ok_or_else(|| Error::Usage("ensemble has no absorbing thresholds".into()))?;
            labels = vec!["left".into(), "right".into()];
            counts = vec![0, 0];
            for h in hits {
                match h {
                    Some((Side::Left, _)) => counts[0] += 1,
                    Some((Side::Right, _)) => counts[1] += 1,
                    None => undecided += 1,
                }
            }
        }
        EscapeSpec::Arcs { edges } => {
            if ensemble.dim != 2 {
                return Err(Error::Usage("angular bins need a 2-dimensional ensemble".into()));
            }
            if edges.len() < 2 {
                return Err(Error::Usage("need at least two arc edges".into()));
            }
            for w in edges.windows(2) {
                labels.push(format!("[{:.4}, {:.4})", w[0], w[1]));
                counts.push(0);
            }
            let r = ensemble.terminal_record();
            for p in 0..ensemble.n_paths {
                let s = ensemble.state(r, p);
                let norm = s[0].hypot(s[1]);
                if norm == 0.0 || ensemble.flagged[p] {
                    undecided += 1;
                    continue;
                }
                let angle = s[1].atan2(s[0]);
                let mut placed = false;
                for (i, w) in edges.windows(2).enumerate() {
                    if angle >= w[0] && angle < w[1] {
                        counts[i] += 1;
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    undecided += 1;
                }
            }
        }
        EscapeSpec::Directions { atoms } => {
            for (i, a) in atoms.iter().enumerate() {
                labels.push(format!("atom{} {:?}", i, a));
                counts.push(0);
            }
            let r = ensemble.terminal_record();
            for p in 0..ensemble.n_paths {
                let s = ensemble.state(r, p);
                let norm: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 || ensemble.flagged[p] {
                    undecided += 1;
                    continue;
                }
                let mut best = 0usize;
                let mut best_dot = f64::NEG_INFINITY;
                for (i, a) in atoms.iter().enumerate() {
                    let dot: f64 = a.iter().zip(s).map(|(ai, si)| ai * si / norm).sum();
                    if dot > best_dot {
                        best_dot = dot;
                        best = i;
                    }
                }
                counts[best] += 1;
            }
        }
    }
    let decided: usize = counts.iter().sum();
    let outcomes = labels
        .into_iter()
        .zip(&counts)
        .map(|(label, &count)| {
            let n = decided.max(1) as f64;
            let freq = count as f64 / n;
            EscapeOutcome {
                label,
                count,
                frequency: freq,
                std_error: (freq * (1.0 - freq) / n).sqrt(),
            }
        })
        .collect();
    Ok(EscapeStats {
        outcomes,
        decided,
        undecided,
        low_power: decided < 100,
    })
}

// ---------------------------------------------------------------------------
// Long-term yield
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct YieldPoint {
    pub t: f64,
    pub price: f64,
    pub yield_: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct YieldCurve {
    pub points: Vec<YieldPoint>,
    /// least-squares decay rate of log price over the last half of the grid
    pub tail_yield: f64,
}

/// Monte Carlo bond prices `E[exp(-int r)]` and yields `-log(price)/t` per
/// horizon, with a tail fit as the long-term estimate.
pub fn long_term_yield(
    model: &DiffusionModel,
    x0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<YieldCurve> {
    if t_grid.is_empty() {
        return Err(Error::Usage("horizon grid must be nonempty".into()));
    }
    if t_grid.iter().any(|&t| t <= 0.0) {
        return Err(Error::Usage("horizons must be positive".into()));
    }
    let t_max = t_grid.iter().cloned().fold(f64::MIN, f64::max);
    let plan = SimulationPlan::new(x0.to_vec(), t_max, dt, n_paths, seed)
        .with_records(t_grid.to_vec());
    let ensemble = simulate_paths(&model.dynamics, Some(&model.rate), &plan)?;
    let int_r = ensemble.int_r.as_ref().expect("rate integrals recorded");
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let r = ensemble
            .record_index(t)
            .ok_or_else(|| Error::Numeric(format!("horizon {t} was not recorded")))?;
        let discounts: Vec<f64> = int_r[r].iter().map(|ir| (-ir).exp()).collect();
        let (price, se) = mean_se(&discounts, ensemble.antithetic);
        points.push(YieldPoint {
            t,
            price,
            yield_: -price.ln() / t,
            std_error: se / (price * t),
        });
    }
    points.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    // least squares on log price over the last half: log P = a - y t
    let half = points.len().div_ceil(2);
    let tail = &points[points.len() - half..];
    let tail_yield = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let sx: f64 = tail.iter().map(|p| p.t).sum();
        let sy: f64 = tail.iter().map(|p| p.price.ln()).sum();
        let sxx: f64 = tail.iter().map(|p| p.t * p.t).sum();
        let sxy: f64 = tail.iter().map(|p| p.t * p.price.ln()).sum();
        -(n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        tail[0].yield_
    };
    Ok(YieldCurve { points, tail_yield })
}

// ---------------------------------------------------------------------------
// Cash-flow decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CashflowPoint {
    pub t: f64,
    /// estimate of e^{beta t} P_t(f)(x0)
    pub value: f64,
    pub std_error: f64,
    /// largest |f / phi| seen at this time across the ensemble
    pub max_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct CashflowCurve {
    pub points: Vec<CashflowPoint>,
    pub tail_average: f64,
    /// boundary-integral reference value the curve should converge to
    pub reference: f64,
    pub convergent: bool,
    pub tail_slope: f64,
    /// set when |f / phi| grows materially along the horizon
    pub ratio_growth: bool,
    /// set when the boundary limit of f / phi did not settle along the curve
    pub limit_unsettled: bool,
}

/// Cash-flow decay curve `t -> e^{beta t} P_t(f)(x0)`.
///
/// The pricing identity `P_t(f)(x) = phi(x) e^{-beta t} E[(f/phi)(X_t)]`
/// under the transformed measure turns the curve into a bounded-integrand
/// Monte Carlo average along the recovered dynamics, which keeps the
/// variance controlled at long horizons where the direct risk-neutral
/// estimator is swamped by its tail. The reference value is the boundary
/// integral `sum (f/phi)(y) k(x0; y) mu(y)` over the recovery measure's
/// atoms, with the boundary limit of `f/phi` read along each Martin curve.
pub fn cashflow_rate(
    f: &dyn ScalarField,
    recovered: &RecoveredMeasure,
    x0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
    cfg: &NumericsConfig,
) -> Result<CashflowCurve> {
    if t_grid.is_empty() {
        return Err(Error::Usage("time grid must be nonempty".into()));
    }
    let t_max = t_grid.iter().cloned().fold(f64::MIN, f64::max);
    if t_max <= 0.0 {
        return Err(Error::Usage("need a positive final horizon".into()));
    }
    let phi = &recovered.principal.h;
    let phi_x0 = phi.value(x0);
    if !(phi_x0 > 0.0) {
        return Err(Error::Positivity("principal function nonpositive at x0".into()));
    }
    let plan = SimulationPlan::new(x0.to_vec(), t_max, dt, n_paths, seed)
        .with_records(t_grid.to_vec());
    let ensemble = simulate_paths(&recovered.dynamics, None, &plan)?;

    let ratio = |x: &[f64]| f.value(x) / phi.value(x);
    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let r = ensemble
            .record_index(t)
            .ok_or_else(|| Error::Numeric(format!("time {t} was not recorded")))?;
        let mut vals = Vec::with_capacity(ensemble.n_paths);
        let mut max_ratio = 0.0f64;
        for p in 0..ensemble.n_paths {
            let g = ratio(ensemble.state(r, p));
            max_ratio = max_ratio.max(g.abs());
            vals.push(g);
        }
        let (mean, se) = mean_se(&vals, ensemble.antithetic);
        points.push(CashflowPoint {
            t,
            value: phi_x0 * mean,
            std_error: phi_x0 * se,
            max_ratio,
        });
    }
    points.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());

    // boundary-integral reference over the measure atoms
    let mut reference = 0.0;
    let mut limit_unsettled = false;
    for ((atom, weight), kernel) in recovered
        .measure
        .atoms
        .iter()
        .zip(&recovered.kernels)
    {
        let (g_limit, settled) = boundary_limit(&ratio, atom, cfg);
        if !settled {
            limit_unsettled = true;
        }
        reference += g_limit * kernel.value(x0) * weight;
    }

    let half = points.len().div_ceil(2);
    let tail = &points[points.len() - half..];
    let tail_average = tail.iter().map(|p| p.value).sum::<f64>() / tail.len() as f64;
    let tail_slope = if tail.len() >= 2 {
        let n = tail.len() as f64;
        let sx: f64 = tail.iter().map(|p| p.t).sum();
        let sy: f64 = tail.iter().map(|p| p.value).sum();
        let sxx: f64 = tail.iter().map(|p| p.t * p.t).sum();
        let sxy: f64 = tail.iter().map(|p| p.t * p.value).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        0.0
    };
    let span = tail.last().unwrap().t - tail.first().unwrap().t;
    let drift = (tail_slope * span).abs();
    let convergent = drift <= 0.1 * tail_average.abs().max(1e-8);

    let first_max = points.first().unwrap().max_ratio;
    let last_max = points.last().unwrap().max_ratio;
    let ratio_growth = last_max > 10.0 * first_max.max(ratio(x0).abs()).max(1e-12);

    Ok(CashflowCurve {
        points,
        tail_average,
        reference,
        convergent,
        tail_slope,
        ratio_growth,
        limit_unsettled,
    })
}

/// Limit of a state function along a Martin curve, read near the truncation
/// radius; returns the value and whether it settled.
fn boundary_limit(
    g: &dyn Fn(&[f64]) -> f64,
    atom: &crate::martin::MartinBoundaryPoint,
    cfg: &NumericsConfig,
) -> (f64, bool) {
    if matches!(atom.kind, crate::martin::BoundaryKind::Point) {
        return (g(&atom.curve(0.0)), true);
    }
    // march the curve parameter until the state reaches the truncation scale
    let target = 0.99 * cfg.cutoff;
    let mut t_hit = 1.0;
    for _ in 0..200 {
        let x = atom.curve(t_hit);
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= target {
            break;
        }
        t_hit *= 1.3;
    }
    let v1 = g(&atom.curve(0.8 * t_hit));
    let v2 = g(&atom.curve(t_hit));
    let settled = (v2 - v1).abs() <= 1e-3 * v2.abs().max(1.0);
    (v2, settled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ConstantMatrix, ConstantVector};
    use crate::testkit::{cfg, gbm_log_model};
    use crate::model::Domain;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn deterministic_dynamics(c: f64) -> Dynamics {
        Dynamics {
            dim: 1,
            drift: Arc::new(ConstantVector::new(vec![c])),
            sigma: Arc::new(ConstantMatrix::scaled_identity(1, 0.0)),
            domain: Domain::whole_space(1),
        }
    }

    #[test]
    fn zero_noise_paths_are_exact_lines() {
        let dyn1 = deterministic_dynamics(0.7);
        let plan = SimulationPlan::new(vec![1.0], 2.0, 0.125, 8, 3);
        let ens = simulate_paths(&dyn1, None, &plan).unwrap();
        let r = ens.terminal_record();
        for p in 0..ens.n_paths {
            assert_relative_eq!(ens.state(r, p)[0], 1.0 + 0.7 * 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn dt_must_divide_the_horizon() {
        let dyn1 = deterministic_dynamics(0.0);
        let plan = SimulationPlan::new(vec![0.0], 1.0, 0.3, 2, 1);
        assert!(matches!(
            simulate_paths(&dyn1, None, &plan),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn ensembles_are_bit_reproducible_across_thread_counts() {
        let model = gbm_log_model();
        let plan = SimulationPlan::new(vec![0.0], 1.0, 1.0 / 64.0, 512, 11);
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let e1 = pool1.install(|| {
            simulate_paths(&model.dynamics, Some(&model.rate), &plan).unwrap()
        });
        let e4 = pool4.install(|| {
            simulate_paths(&model.dynamics, Some(&model.rate), &plan).unwrap()
        });
        assert_eq!(e1.states, e4.states);
        assert_eq!(e1.int_r, e4.int_r);
        // and across repeated runs
        let e1b = pool1.install(|| {
            simulate_paths(&model.dynamics, Some(&model.rate), &plan).unwrap()
        });
        assert_eq!(e1.states, e1b.states);
    }

    #[test]
    fn brownian_variance_matches_the_oracle() {
        // dX = sqrt(2) dW: Var X_T = 2T
        let dyn2 = Dynamics {
            dim: 2,
            drift: Arc::new(ConstantVector::new(vec![0.0, 0.0])),
            sigma: Arc::new(ConstantMatrix::scaled_identity(2, 2f64.sqrt())),
            domain: Domain::whole_space(2),
        };
        let t = 2.0;
        let plan = SimulationPlan::new(vec![0.0, 0.0], t, 1.0 / 64.0, 10_000, 5)
            .without_antithetic();
        let ens = simulate_paths(&dyn2, None, &plan).unwrap();
        let stats = ens.component_stats(ens.terminal_record());
        for (_, var) in stats {
            assert!((var - 2.0 * t).abs() <= 0.05 * 2.0 * t, "var = {var}");
        }
    }

    #[test]
    fn deterministic_drift_escapes_on_the_drift_side() {
        let dyn1 = deterministic_dynamics(1.0);
        let plan = SimulationPlan::new(vec![0.0], 30.0, 1.0 / 16.0, 64, 9)
            .with_absorb(-24.75, 24.75);
        let ens = simulate_paths(&dyn1, None, &plan).unwrap();
        let stats = escape_statistics(&ens, &EscapeSpec::Thresholds).unwrap();
        let right = stats.outcomes.iter().find(|o| o.label == "right").unwrap();
        assert_eq!(right.count, 64);
        assert_relative_eq!(right.frequency, 1.0);
        assert_eq!(stats.undecided, 0);
    }

    #[test]
    fn constant_rate_yield_is_exact() {
        let model = gbm_log_model();
        let grid = [1.0, 2.0, 4.0, 8.0];
        let curve = long_term_yield(&model, &[0.0], &grid, 256, 1.0 / 32.0, 17).unwrap();
        for p in &curve.points {
            assert!((p.yield_ - 0.05).abs() <= 1e-12, "yield {}", p.yield_);
            assert!(p.std_error <= 1e-12);
        }
        assert!((curve.tail_yield - 0.05).abs() <= 1e-12);
    }

    #[test]
    fn strong_error_halves_like_order_one_half() {
        // multiplicative noise: dS = mu S dt + sig S dW, exact solution via
        // the same Brownian increments summed across fine steps
        let (mu, sig) = (0.05, 0.4);
        let t = 1.0;
        let n_paths = 4000;
        let fine_steps = 256usize;
        let dt_f = t / fine_steps as f64;
        let mut err_fine = 0.0;
        let mut err_coarse = 0.0;
        for p in 0..n_paths {
            let mut rng = PathRng::new(123, p as u64);
            let mut w_sum = 0.0;
            let mut s_fine = 1.0;
            let mut s_coarse = 1.0;
            let mut pending = 0.0;
            for step in 0..fine_steps {
                let dw = dt_f.sqrt() * rng.next_normal();
                w_sum += dw;
                s_fine += mu * s_fine * dt_f + sig * s_fine * dw;
                pending += dw;
                if step % 2 == 1 {
                    s_coarse += mu * s_coarse * (2.0 * dt_f) + sig * s_coarse * pending;
                    pending = 0.0;
                }
            }
            let exact = ((mu - 0.5 * sig * sig) * t + sig * w_sum).exp();
            err_fine += (s_fine - exact).abs();
            err_coarse += (s_coarse - exact).abs();
        }
        let ratio = err_coarse / err_fine;
        assert!(
            (1.2..=1.7).contains(&ratio),
            "strong-error ratio {ratio} outside the order-1/2 band"
        );
    }

    #[test]
    fn mean_se_pairs_antithetic_samples() {
        // pair-averaged values are constant here, so the SE must vanish
        let vals = [1.5, 0.5, 2.0, 0.0, 1.25, 0.75];
        let (mean, se) = mean_se(&vals, true);
        assert_relative_eq!(mean, 1.0);
        assert!(se <= 1e-12);
        let (_, se_plain) = mean_se(&vals, false);
        assert!(se_plain > 0.1);
    }

    #[test]
    fn low_power_warning_fires_on_tiny_ensembles() {
        let dyn1 = deterministic_dynamics(0.0);
        let plan = SimulationPlan::new(vec![0.0], 1.0, 0.25, 8, 2).with_absorb(-5.0, 5.0);
        let ens = simulate_paths(&dyn1, None, &plan).unwrap();
        let stats = escape_statistics(&ens, &EscapeSpec::Thresholds).unwrap();
        assert_eq!(stats.decided, 0);
        assert!(stats.low_power);
        assert_eq!(stats.undecided, 8);
    }

    #[test]
    fn yield_grid_must_be_valid() {
        let model = gbm_log_model();
        assert!(long_term_yield(&model, &[0.0], &[], 16, 0.25, 1).is_err());
        assert!(long_term_yield(&model, &[0.0], &[-1.0], 16, 0.25, 1).is_err());
    }

    #[test]
    fn cfg_is_send_sync() {
        fn takes_send_sync<T: Send + Sync>(_: T) {}
        takes_send_sync(cfg());
    }
}
