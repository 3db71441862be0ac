//! Numerical configuration shared by the solver and simulation modules.
//!
//! Every tolerance, truncation, and discretization default lives here so
//! the command-line front end can surface each one as a flag.

/// Tunable numerical parameters with desk-scale defaults.
#[derive(Debug, Clone)]
pub struct NumericsConfig {
    /// Truncation of infinite boundaries, in coordinate units from the
    /// reference point. Refinement levels double this value.
    pub cutoff: f64,
    /// Number of truncation levels used for extrapolation (cutoff * 2^k).
    pub trunc_levels: usize,
    /// Spacing of the dense output grid carried by ODE solutions.
    pub dense_dx: f64,
    /// Relative local error tolerance of the adaptive ODE integrator.
    pub ode_rtol: f64,
    /// Absolute local error tolerance of the adaptive ODE integrator.
    pub ode_atol: f64,
    /// Step cap for oscillation-detection sweeps (no dense output).
    pub classify_h_max: f64,
    /// Acceptance tolerance for PDE residuals of candidate pairs.
    pub residual_tol: f64,
    /// Scaled Wronskian threshold below which boundary solutions are
    /// declared proportional (critical).
    pub wronskian_tol: f64,
    /// Half-width of the band around the critical value inside which a
    /// lambda is classified as critical.
    pub class_band: f64,
    /// Bisection tolerance used internally when locating the critical value.
    pub beta_tol: f64,
    /// Finite-difference step scale: step = fd_step_scale * (1 + |x_i|).
    pub fd_step_scale: f64,
    /// Relative tolerance for adaptive quadrature.
    pub quad_rel_tol: f64,
    /// Initial half-width for quadrature over the whole real line; doubled
    /// until the tail contribution is negligible.
    pub quad_initial_halfwidth: f64,
    /// Panels per axis for the tensor-grid quadrature of the Martin metric.
    pub metric_panels: usize,
    /// Nodes per truncation level in the explosion-test quadrature.
    pub explosion_nodes: usize,
    /// Value beyond which a still-growing explosion integral is declared
    /// divergent.
    pub explosion_threshold: f64,
    /// Minimum growth factor per truncation refinement for divergence.
    pub explosion_growth: f64,
    /// Maximum truncation doublings in the explosion test.
    pub explosion_max_levels: usize,
    /// Default number of Monte Carlo paths for certification.
    pub mc_paths: usize,
    /// Number of Euler steps over the Monte Carlo horizon (dt = T / steps).
    pub mc_steps: usize,
    /// Width of the acceptance band for the martingale mean, in standard
    /// errors.
    pub mc_band: f64,
    /// Default RNG seed.
    pub seed: u64,
    /// Reference point override; defaults to the domain midpoint (0 for
    /// unbounded axes).
    pub reference_point: Option<Vec<f64>>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            cutoff: 25.0,
            trunc_levels: 3,
            dense_dx: 1e-3,
            ode_rtol: 1e-10,
            ode_atol: 1e-12,
            classify_h_max: 0.05,
            residual_tol: 1e-6,
            wronskian_tol: 1e-8,
            class_band: 1e-8,
            beta_tol: 1e-10,
            fd_step_scale: 1e-4,
            quad_rel_tol: 1e-10,
            quad_initial_halfwidth: 10.0,
            metric_panels: 48,
            explosion_nodes: 4001,
            explosion_threshold: 1e6,
            explosion_growth: 1.1,
            explosion_max_levels: 24,
            mc_paths: 50_000,
            mc_steps: 1024,
            mc_band: 4.0,
            seed: 42,
            reference_point: None,
        }
    }
}
