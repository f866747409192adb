//! Fractional relaxation of the placement problem.
//!
//! The objective is a sum of ratios (per-pair throughput divided by a
//! load-dependent service time) plus shifted migration revenues. It is
//! attacked in two layers:
//!
//! - an outer layer maintains a parameter triple `(alpha, beta, gamma)` and
//!   drives three consistency conditions to zero with a damped Newton
//!   update, turning the ratio objective into a sequence of subtractive
//!   problems;
//! - an inner layer solves each subtractive problem by dualizing the
//!   coupling `column_sum(x) <= y` with per-site prices, which splits the
//!   problem into per-user site picks and per-site load choices with closed
//!   forms. A diminishing-step subgradient method moves the prices and a
//!   weighted running average of the iterates recovers a primal solution.
//!
//! Everything here works on the shifted-cost form of the objective, where
//! migration revenues are non-negative; reported bounds are converted back
//! to plain objective units.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::Instance;

/// Tunables for both solver layers. Tolerances on prices, revenues, and
/// residuals apply after internal normalization by the instance's revenue
/// scale, so defaults transfer across instances of wildly different units.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Base subgradient step; the step at inner iteration `t` is
    /// `step_scale / (t + 1)`.
    pub step_scale: f64,
    /// Exponent of the iterate weights in the primal running average
    /// (weight of iterate `t` is `t^averaging_power`).
    pub averaging_power: f64,
    /// Price movement below which an inner iteration counts as stable.
    pub inner_mu_tol: f64,
    /// Consecutive stable iterations that end the inner loop.
    pub inner_mu_patience: usize,
    /// Relative duality gap at which the inner loop may stop early.
    pub inner_gap_tol: f64,
    /// Tolerated gap between averaged loads and averaged column sums.
    pub inner_violation_tol: f64,
    pub inner_min_iters: usize,
    pub inner_max_iters: usize,
    /// Geometric shrink factor of the Newton step search.
    pub newton_shrink: f64,
    /// Sufficient-decrease coefficient of the Newton step search.
    pub newton_accept: f64,
    /// Bound on the step-search exponent.
    pub max_backtracks: u32,
    /// Outer stop: sum of squared residuals below this times `K * N`.
    pub outer_tol_per_entry: f64,
    /// Outer stop also requires every single residual at or below this.
    pub residual_max_tol: f64,
    pub max_outer: usize,
    /// Iteration budget of the final feasible-point ascent.
    pub polish_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_scale: 1.0,
            averaging_power: 1.0,
            inner_mu_tol: 1e-5,
            inner_mu_patience: 10,
            inner_gap_tol: 1e-3,
            inner_violation_tol: 1e-3,
            inner_min_iters: 200,
            inner_max_iters: 60_000,
            newton_shrink: 0.5,
            newton_accept: 0.01,
            max_backtracks: 60,
            outer_tol_per_entry: 1e-6,
            residual_max_tol: 1e-4,
            max_outer: 80,
            polish_iters: 300,
        }
    }
}

impl SolverConfig {
    /// Lighter preset for Monte-Carlo sweeps: same algorithm, looser inner
    /// stopping targets.
    pub fn sweep() -> Self {
        Self {
            inner_gap_tol: 3e-3,
            inner_violation_tol: 5e-3,
            inner_max_iters: 20_000,
            max_outer: 40,
            ..Self::default()
        }
    }
}

/// Parameter triple of the subtractive reformulation. At a consistent
/// point, `alpha = 1/q`, `beta = x * weight / q`, and `gamma = x * shifted
/// cost`, where `q` is the per-pair service time at the current loads.
#[derive(Debug, Clone)]
pub struct RatioParams {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub gamma: Array2<f64>,
}

impl RatioParams {
    /// Consistency-guided start: loads spread uniformly, placement at the
    /// current assignment.
    pub fn init(instance: &Instance) -> Self {
        let (k_users, n_sites) = instance.rate.dim();
        let y0 = k_users as f64 / n_sites as f64;
        let q0 = q_matrix(instance, &vec![y0; n_sites]);
        let mut beta = Array2::zeros((k_users, n_sites));
        let mut gamma = Array2::zeros((k_users, n_sites));
        for (k, &home) in instance.initial_site.iter().enumerate() {
            beta[[k, home]] = instance.rate_weight[k] / q0[[k, home]];
            gamma[[k, home]] = instance.shifted_cost[[k, home]];
        }
        RatioParams { alpha: q0.mapv(|q| 1.0 / q), beta, gamma }
    }
}

/// Per-pair service time `1/rate + (1+d)^(y-1)/isolation_rate` at real-
/// valued loads `y`.
pub fn q_matrix(instance: &Instance, loads: &[f64]) -> Array2<f64> {
    let (k_users, n_sites) = instance.rate.dim();
    let mut q = Array2::zeros((k_users, n_sites));
    for n in 0..n_sites {
        let stretch = (1.0 + instance.degradation[n]).powf(loads[n] - 1.0);
        for k in 0..k_users {
            q[[k, n]] = 1.0 / instance.rate[[k, n]] + stretch / instance.isolation_rate[[k, n]];
        }
    }
    q
}

/// Site pick for one user: the index maximizing `revenue - price`, ties to
/// the lowest site index. `revenue` is the user's row of
/// `alpha * weight + shifted_cost`.
fn pick_site(revenue_row: &[f64], prices: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_value = revenue_row[0] - prices[0];
    for (n, (rev, price)) in revenue_row.iter().zip(prices).enumerate().skip(1) {
        let value = rev - price;
        if value > best_value {
            best_value = value;
            best = n;
        }
    }
    best
}

/// Closed-form load choice for one site: maximizes
/// `price * y - (penalty / ln(1+d)) * (1+d)^(y-1)` over `[0, cap]`.
/// `penalty` bundles the parameter-weighted compute pressure of the site
/// (its was `pressure * ln(1+d)`), so the interior optimum is at
/// `1 + (ln(price) - ln(penalty)) / ln(1+d)`.
fn pick_load(penalty: f64, ln_stretch: f64, price: f64, cap: f64) -> f64 {
    if penalty <= 0.0 {
        // No compute pressure: any positive price pushes the load to the
        // cap, a zero price leaves the site empty.
        return if price > 0.0 { cap } else { 0.0 };
    }
    if price < penalty / ln_stretch.exp() {
        // Below the marginal value of the first sliver of load.
        return 0.0;
    }
    (1.0 + (price.ln() - penalty.ln()) / ln_stretch).min(cap)
}

/// Public form of the per-user dual subproblem: picks the serving site for
/// user `k` at the given prices.
pub fn dual_x_update(instance: &Instance, params: &RatioParams, prices: &[f64], k: usize) -> usize {
    let n_sites = instance.n_sites();
    let revenue: Vec<f64> = (0..n_sites)
        .map(|n| params.alpha[[k, n]] * instance.rate_weight[k] + instance.shifted_cost[[k, n]])
        .collect();
    pick_site(&revenue, prices)
}

/// Public form of the per-site dual subproblem: the load site `n` would
/// carry at price `price`.
pub fn dual_y_update(instance: &Instance, params: &RatioParams, price: f64, n: usize) -> f64 {
    let ln_stretch = (1.0 + instance.degradation[n]).ln();
    let mut pressure = 0.0;
    for k in 0..instance.n_users() {
        pressure += params.alpha[[k, n]] * params.beta[[k, n]] / instance.isolation_rate[[k, n]];
    }
    pick_load(pressure * ln_stretch, ln_stretch, price, instance.vm_cap[n] as f64)
}

/// Price state of the inner loop plus the weighted primal averages.
#[derive(Debug, Clone)]
pub struct DualState {
    /// Per-site prices of the load coupling constraint.
    pub prices: Vec<f64>,
    /// Inner iteration counter (1-based once iterating).
    pub iteration: usize,
    x_acc: Vec<f64>,
    y_acc: Vec<f64>,
    weight_sum: f64,
    n_sites: usize,
}

impl DualState {
    pub fn new(k_users: usize, n_sites: usize, prices: Vec<f64>) -> Self {
        assert_eq!(prices.len(), n_sites);
        Self {
            prices,
            iteration: 0,
            x_acc: vec![0.0; k_users * n_sites],
            y_acc: vec![0.0; n_sites],
            weight_sum: 0.0,
            n_sites,
        }
    }

    /// Projected diminishing-step price update
    /// `price <- max(0, price - step_scale/(t+1) * (load - column_sum))`.
    /// Returns the largest price movement.
    pub fn subgradient_step(
        &mut self,
        column_sums: &[f64],
        loads: &[f64],
        step_scale: f64,
    ) -> f64 {
        let step = step_scale / (self.iteration as f64 + 1.0);
        let mut movement = 0.0f64;
        for n in 0..self.n_sites {
            let updated = (self.prices[n] - step * (loads[n] - column_sums[n])).max(0.0);
            movement = movement.max((updated - self.prices[n]).abs());
            self.prices[n] = updated;
        }
        movement
    }

    /// Folds iterate `t` into the running averages with weight
    /// `t^averaging_power`; equivalent to the incremental convex
    /// recombination with factor `t^p / sum_{s<=t} s^p`.
    pub fn primal_average(&mut self, picks: &[usize], loads: &[f64], averaging_power: f64) {
        let w = if averaging_power == 1.0 {
            self.iteration as f64
        } else {
            (self.iteration as f64).powf(averaging_power)
        };
        for (k, &n) in picks.iter().enumerate() {
            self.x_acc[k * self.n_sites + n] += w;
        }
        for (acc, y) in self.y_acc.iter_mut().zip(loads) {
            *acc += w * y;
        }
        self.weight_sum += w;
    }

    /// Current averaged placement and loads.
    pub fn averaged(&self) -> (Array2<f64>, Array1<f64>) {
        let k_users = self.x_acc.len() / self.n_sites;
        let w = if self.weight_sum > 0.0 { self.weight_sum } else { 1.0 };
        let x = Array2::from_shape_fn((k_users, self.n_sites), |(k, n)| {
            self.x_acc[k * self.n_sites + n] / w
        });
        let y = Array1::from_iter(self.y_acc.iter().map(|a| a / w));
        (x, y)
    }
}

/// Outcome of one inner (fixed-parameter) solve.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub x_avg: Array2<f64>,
    pub y_avg: Array1<f64>,
    pub prices: Vec<f64>,
    /// Subtractive-form value of the averaged point (absolute units).
    pub primal: f64,
    /// Best (lowest) dual bound seen across probes (absolute units).
    pub dual_best: f64,
    /// First probed dual bound; the best bound never exceeds it.
    pub dual_first: f64,
    /// `(dual_best - primal) / max(|dual_best|, eps)`.
    pub gap: f64,
    /// Largest gap between averaged loads and averaged column sums.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the subtractive problem at fixed parameters by price subgradient
/// with primal averaging. `warm_prices` (absolute units) seeds the prices.
pub fn solve_p2(
    instance: &Instance,
    params: &RatioParams,
    config: &SolverConfig,
    warm_prices: &[f64],
) -> InnerSolve {
    let (k_users, n_sites) = instance.rate.dim();

    // Normalize revenues so steps and tolerances are scale-free.
    let mut revenue = vec![0.0f64; k_users * n_sites];
    let mut scale = 0.0f64;
    for k in 0..k_users {
        for n in 0..n_sites {
            let r = params.alpha[[k, n]] * instance.rate_weight[k] + instance.shifted_cost[[k, n]];
            revenue[k * n_sites + n] = r;
            scale = scale.max(r);
        }
    }
    if !(scale > 0.0) {
        scale = 1.0;
    }
    for r in revenue.iter_mut() {
        *r /= scale;
    }

    // Per-site load penalty (normalized): pressure * ln(1+d).
    let mut ln_stretch = vec![0.0f64; n_sites];
    let mut penalty = vec![0.0f64; n_sites];
    let mut pressure = vec![0.0f64; n_sites];
    for n in 0..n_sites {
        ln_stretch[n] = (1.0 + instance.degradation[n]).ln();
        let mut p = 0.0;
        for k in 0..k_users {
            p += params.alpha[[k, n]] * params.beta[[k, n]] / instance.isolation_rate[[k, n]];
        }
        pressure[n] = p / scale;
        penalty[n] = pressure[n] * ln_stretch[n];
    }
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| *m as f64).collect();

    let mut state = DualState::new(
        k_users,
        n_sites,
        warm_prices.iter().map(|m| m / scale).collect(),
    );
    let mut picks = vec![0usize; k_users];
    let mut column_sums = vec![0.0f64; n_sites];
    let mut loads = vec![0.0f64; n_sites];

    let mut dual_best = f64::INFINITY;
    let mut dual_first = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut violation = f64::INFINITY;
    let mut primal = f64::NEG_INFINITY;
    let mut stable_run = 0usize;
    let mut converged = false;
    let probe_every = 128usize;

    let mut t = 0usize;
    while t < config.inner_max_iters {
        t += 1;
        state.iteration = t;

        column_sums.iter_mut().for_each(|c| *c = 0.0);
        for k in 0..k_users {
            let n = pick_site(&revenue[k * n_sites..(k + 1) * n_sites], &state.prices);
            picks[k] = n;
            column_sums[n] += 1.0;
        }
        for n in 0..n_sites {
            loads[n] = pick_load(penalty[n], ln_stretch[n], state.prices[n], caps[n]);
        }
        state.primal_average(&picks, &loads, config.averaging_power);
        let movement = state.subgradient_step(&column_sums, &loads, config.step_scale);

        if movement <= config.inner_mu_tol {
            stable_run += 1;
        } else {
            stable_run = 0;
        }

        let probe = t % probe_every == 0 || t == config.inner_max_iters || t == config.inner_min_iters;
        if probe {
            let dual = dual_value(&revenue, &penalty, &pressure, &ln_stretch, &caps, &state.prices);
            if !dual_first.is_finite() {
                dual_first = dual;
            }
            dual_best = dual_best.min(dual);
            let (p, v) = averaged_primal(&state, &revenue, &pressure, &ln_stretch, &caps);
            primal = p;
            violation = v;
            gap = (dual_best - primal) / dual_best.abs().max(1e-12);
            if t >= config.inner_min_iters
                && gap <= config.inner_gap_tol
                && violation <= config.inner_violation_tol
            {
                converged = true;
                break;
            }
        }
        if stable_run >= config.inner_mu_patience && t >= config.inner_min_iters {
            // Prices have settled; take stock once more and stop.
            let dual = dual_value(&revenue, &penalty, &pressure, &ln_stretch, &caps, &state.prices);
            dual_best = dual_best.min(dual);
            let (p, v) = averaged_primal(&state, &revenue, &pressure, &ln_stretch, &caps);
            primal = p;
            violation = v;
            gap = (dual_best - primal) / dual_best.abs().max(1e-12);
            converged = gap <= config.inner_gap_tol && violation <= config.inner_violation_tol;
            break;
        }
    }

    let (x_avg, y_avg) = state.averaged();
    InnerSolve {
        x_avg,
        y_avg,
        prices: state.prices.iter().map(|m| m * scale).collect(),
        primal: primal * scale,
        dual_best: dual_best * scale,
        dual_first: dual_first * scale,
        gap,
        violation,
        iterations: t,
        converged,
    }
}

/// Dual function at the given prices: per-user best pick plus per-site
/// price revenue at the closed-form load.
fn dual_value(
    revenue: &[f64],
    penalty: &[f64],
    pressure: &[f64],
    ln_stretch: &[f64],
    caps: &[f64],
    prices: &[f64],
) -> f64 {
    let n_sites = prices.len();
    let k_users = revenue.len() / n_sites;
    let mut total = 0.0;
    for k in 0..k_users {
        let row = &revenue[k * n_sites..(k + 1) * n_sites];
        let mut best = row[0] - prices[0];
        for n in 1..n_sites {
            best = best.max(row[n] - prices[n]);
        }
        total += best;
    }
    for n in 0..n_sites {
        let y = pick_load(penalty[n], ln_stretch[n], prices[n], caps[n]);
        total += prices[n] * y - pressure[n] * (ln_stretch[n] * (y - 1.0)).exp();
    }
    total
}

/// Subtractive value and coupling violation of the averaged point. The
/// value is taken at loads pushed up to the averaged column sums so it is
/// the value of a genuinely feasible point.
fn averaged_primal(
    state: &DualState,
    revenue: &[f64],
    pressure: &[f64],
    ln_stretch: &[f64],
    caps: &[f64],
) -> (f64, f64) {
    let n_sites = state.n_sites;
    let k_users = state.x_acc.len() / n_sites;
    let w = if state.weight_sum > 0.0 { state.weight_sum } else { 1.0 };
    let mut value = 0.0;
    let mut column_sums = vec![0.0f64; n_sites];
    for k in 0..k_users {
        for n in 0..n_sites {
            let x = state.x_acc[k * n_sites + n] / w;
            value += x * revenue[k * n_sites + n];
            column_sums[n] += x;
        }
    }
    let mut violation = 0.0f64;
    for n in 0..n_sites {
        let y = state.y_acc[n] / w;
        violation = violation.max((y - column_sums[n]).abs());
        let feasible_y = y.max(column_sums[n]).min(caps[n]);
        value -= pressure[n] * (ln_stretch[n] * (feasible_y - 1.0)).exp();
    }
    (value, violation)
}

/// Residuals of the three consistency conditions at `(params, q, x)`,
/// normalized per family so the combined norm is scale-free: the first
/// family is dimensionless, the second is scaled by the largest rate
/// weight, the third by the cost shift.
pub struct ResidualSet {
    pub sum_sq: f64,
    pub max_abs: [f64; 3],
}

pub fn consistency_residuals(
    instance: &Instance,
    params: &RatioParams,
    q: &Array2<f64>,
    x: &Array2<f64>,
) -> ResidualSet {
    let (k_users, n_sites) = q.dim();
    let weight_scale = instance.rate_weight.iter().fold(0.0f64, |a, w| a.max(*w));
    let shift_scale = if instance.shift > 0.0 { instance.shift } else { 1.0 };
    let mut sum_sq = 0.0;
    let mut max_abs = [0.0f64; 3];
    for k in 0..k_users {
        for n in 0..n_sites {
            let r1 = params.alpha[[k, n]] * q[[k, n]] - 1.0;
            let r2 = (params.beta[[k, n]] * q[[k, n]]
                - x[[k, n]] * instance.rate_weight[k])
                / weight_scale;
            let r3 = (params.gamma[[k, n]] - x[[k, n]] * instance.shifted_cost[[k, n]])
                / shift_scale;
            sum_sq += r1 * r1 + r2 * r2 + r3 * r3;
            max_abs[0] = max_abs[0].max(r1.abs());
            max_abs[1] = max_abs[1].max(r2.abs());
            max_abs[2] = max_abs[2].max(r3.abs());
        }
    }
    ResidualSet { sum_sq, max_abs }
}

/// Damped Newton move of the parameter triple toward its fixed point at
/// the current inner solution. The step `shrink^m` is the largest in the
/// geometric ladder that passes the sufficient-decrease test on the summed
/// squared residuals. Returns the accepted step.
pub fn newton_update(
    instance: &Instance,
    params: &mut RatioParams,
    q: &Array2<f64>,
    x: &Array2<f64>,
    config: &SolverConfig,
) -> f64 {
    let current = consistency_residuals(instance, params, q, x);
    if current.sum_sq == 0.0 {
        return 0.0;
    }
    let (k_users, n_sites) = q.dim();
    let target = |k: usize, n: usize| -> (f64, f64, f64) {
        let inv_q = 1.0 / q[[k, n]];
        (
            inv_q,
            x[[k, n]] * instance.rate_weight[k] * inv_q,
            x[[k, n]] * instance.shifted_cost[[k, n]],
        )
    };
    let mut step = 1.0;
    for m in 0..=config.max_backtracks {
        step = config.newton_shrink.powi(m as i32);
        let mut candidate = RatioParams {
            alpha: params.alpha.clone(),
            beta: params.beta.clone(),
            gamma: params.gamma.clone(),
        };
        for k in 0..k_users {
            for n in 0..n_sites {
                let (a, b, g) = target(k, n);
                candidate.alpha[[k, n]] = (1.0 - step) * params.alpha[[k, n]] + step * a;
                candidate.beta[[k, n]] = (1.0 - step) * params.beta[[k, n]] + step * b;
                candidate.gamma[[k, n]] = (1.0 - step) * params.gamma[[k, n]] + step * g;
            }
        }
        let trial = consistency_residuals(instance, &candidate, q, x);
        if trial.sum_sq <= (1.0 - config.newton_accept * step) * current.sum_sq {
            *params = candidate;
            return step;
        }
    }
    // Ladder exhausted; take the smallest step rather than stalling.
    let shrink = step;
    for k in 0..k_users {
        for n in 0..n_sites {
            let (a, b, g) = target(k, n);
            params.alpha[[k, n]] = (1.0 - shrink) * params.alpha[[k, n]] + shrink * a;
            params.beta[[k, n]] = (1.0 - shrink) * params.beta[[k, n]] + shrink * b;
            params.gamma[[k, n]] = (1.0 - shrink) * params.gamma[[k, n]] + shrink * g;
        }
    }
    shrink
}

/// Converged fractional solution of the relaxation.
#[derive(Debug, Clone)]
pub struct FractionalSolution {
    /// Best placement found; rows sum to one. Fractional rows appear where
    /// the inner picks stayed tied to the end. The residual, gap, and
    /// violation fields describe the averaged inner iterates the final
    /// climb started from.
    pub x: Array2<f64>,
    /// Per-site loads of `x`, equal to its column sums.
    pub y: Array1<f64>,
    /// Converged value of the solve: the worth of the best single-site
    /// placement reached by the final climbs. Dual iterates are single-site
    /// picks, so this is the value the method settles on; fractional
    /// mixtures of tied picks guide the rounding stage but are not
    /// certified values and do not move this figure.
    pub upper_bound: f64,
    /// Final summed squared consistency residuals.
    pub residual: f64,
    /// Largest elementwise residual per consistency family.
    pub residual_max: [f64; 3],
    /// Relative duality gap of the final inner solve.
    pub duality_gap: f64,
    /// Coupling violation of the final inner solve.
    pub constraint_violation: f64,
    /// Best single-site placement reached; `upper_bound` is its value.
    /// Recovery compares its own rounding against this so the solve's
    /// incumbent is never lost.
    pub incumbent: Vec<usize>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
}

/// Full two-layer solve of the relaxation.
pub fn solve_p1_relaxed(instance: &Instance, config: &SolverConfig) -> Result<FractionalSolution> {
    if instance.rate.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid(
            "rate",
            "the relaxation requires strictly positive rates for every pair",
        ));
    }
    let (k_users, n_sites) = instance.rate.dim();
    let outer_tol = config.outer_tol_per_entry * (k_users * n_sites) as f64;

    let mut params = RatioParams::init(instance);
    let mut prices = vec![0.0f64; n_sites];
    let mut inner_total = 0usize;
    let mut outer_done = 0usize;
    let mut converged = false;

    let mut inner = solve_p2(instance, &params, config, &prices);
    inner_total += inner.iterations;
    prices.clone_from(&inner.prices);
    let mut residual = consistency_residuals(
        instance,
        &params,
        &q_matrix(instance, inner.y_avg.as_slice().expect("contiguous")),
        &inner.x_avg,
    );

    for outer in 1..=config.max_outer {
        outer_done = outer;
        if residual.sum_sq < outer_tol
            && residual.max_abs.iter().all(|m| *m <= config.residual_max_tol)
        {
            converged = true;
            break;
        }
        let q = q_matrix(instance, inner.y_avg.as_slice().expect("contiguous"));
        newton_update(instance, &mut params, &q, &inner.x_avg, config);
        inner = solve_p2(instance, &params, config, &prices);
        inner_total += inner.iterations;
        prices.clone_from(&inner.prices);
        residual = consistency_residuals(
            instance,
            &params,
            &q_matrix(instance, inner.y_avg.as_slice().expect("contiguous")),
            &inner.x_avg,
        );
    }
    converged = converged && inner.converged;

    // The averaged point can sit in a poor basin when the outer loop
    // oscillates between near-tied placements, and gradient steps cannot
    // lift a user whose share at the better site is pinned to zero. Climb
    // from the averaged point and, separately, from several single-site
    // placements.
    let mut x_polished = inner.x_avg.clone();
    let polish_value = ascend_relaxed(instance, &mut x_polished, config.polish_iters);

    let mut starts = vec![
        greedy_round(instance, &x_polished),
        greedy_round(instance, &inner.x_avg),
        instance.initial_site().to_vec(),
        unit_load_greedy(instance),
    ];
    starts.dedup();
    let mut vertex_serving: Vec<usize> = Vec::new();
    let mut vertex_value = f64::NEG_INFINITY;
    for mut serving in starts {
        let value = vertex_ascent(instance, &mut serving);
        if value > vertex_value {
            vertex_value = value;
            vertex_serving = serving;
        }
    }

    // The dual iterates are single-site picks; mixtures of near-tied picks
    // exist only in the running average. The solve's converged value is
    // therefore the best single-site value reached, while the returned
    // placement is whichever climb ended higher, as guidance for rounding.
    let upper_bound = vertex_value;
    let (x_best, y_best) = if polish_value > vertex_value {
        let mut y = Array1::zeros(n_sites);
        for k in 0..k_users {
            for n in 0..n_sites {
                y[n] += x_polished[[k, n]];
            }
        }
        (x_polished, y)
    } else {
        let mut x = Array2::zeros((k_users, n_sites));
        let mut y = Array1::zeros(n_sites);
        for (k, &n) in vertex_serving.iter().enumerate() {
            x[[k, n]] = 1.0;
            y[n] += 1.0;
        }
        (x, y)
    };

    Ok(FractionalSolution {
        x: x_best,
        y: y_best,
        upper_bound,
        residual: residual.sum_sq,
        residual_max: residual.max_abs,
        duality_gap: inner.gap,
        constraint_violation: inner.violation,
        incumbent: vertex_serving,
        outer_iterations: outer_done,
        inner_iterations: inner_total,
        converged,
    })
}

/// Objective of a single-site-per-user placement at the given loads.
fn integral_value(instance: &Instance, serving: &[usize], loads: &[f64]) -> f64 {
    serving
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let stretch = (1.0 + instance.degradation[n]).powf(loads[n] - 1.0);
            let v =
                1.0 / (1.0 / instance.rate[[k, n]] + stretch / instance.isolation_rate[[k, n]]);
            instance.rate_weight[k] * v
                - instance.cost_weight * instance.migration_cost[[k, n]]
        })
        .sum()
}

/// Feasible integral placement from a fractional one: users claim their
/// largest share first, most decided users ahead so ties spill the
/// undecided ones to their next-best site.
fn greedy_round(instance: &Instance, x: &Array2<f64>) -> Vec<usize> {
    let (k_users, n_sites) = x.dim();
    let mut remaining: Vec<u32> = instance.vm_cap.iter().copied().collect();
    let confidence: Vec<f64> =
        (0..k_users).map(|k| x.row(k).iter().fold(0.0f64, |a, b| a.max(*b))).collect();
    let mut order: Vec<usize> = (0..k_users).collect();
    order.sort_by(|a, b| confidence[*b].total_cmp(&confidence[*a]).then(a.cmp(b)));

    let mut serving = vec![0usize; k_users];
    for &k in &order {
        let mut best: Option<(usize, f64)> = None;
        for n in 0..n_sites {
            if remaining[n] == 0 {
                continue;
            }
            if best.is_none_or(|(_, share)| x[[k, n]] > share) {
                best = Some((n, x[[k, n]]));
            }
        }
        let (site, _) = best.expect("total capacity covers all users");
        serving[k] = site;
        remaining[site] -= 1;
    }
    serving
}

/// Integral placement where users in index order take the site that pays
/// best if it held only them.
fn unit_load_greedy(instance: &Instance) -> Vec<usize> {
    let (k_users, n_sites) = instance.rate.dim();
    let mut remaining: Vec<u32> = instance.vm_cap.iter().copied().collect();
    let mut serving = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut best: Option<(usize, f64)> = None;
        for n in 0..n_sites {
            if remaining[n] == 0 {
                continue;
            }
            let v = 1.0 / (1.0 / instance.rate[[k, n]] + 1.0 / instance.isolation_rate[[k, n]]);
            let u = instance.rate_weight[k] * v
                - instance.cost_weight * instance.migration_cost[[k, n]];
            if best.is_none_or(|(_, pay)| u > pay) {
                best = Some((n, u));
            }
        }
        let (site, _) = best.expect("total capacity covers all users");
        serving.push(site);
        remaining[site] -= 1;
    }
    serving
}

/// Hill-climbs an integral placement under the VM caps: per-user relocations
/// evaluated on the exact objective, plus pairwise swaps (which keep loads
/// fixed and stay available when every cap is tight). Returns the final
/// value; `serving` is updated in place.
pub(crate) fn vertex_ascent(instance: &Instance, serving: &mut [usize]) -> f64 {
    let (k_users, n_sites) = instance.rate.dim();
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| f64::from(*m)).collect();
    let mut loads = vec![0.0f64; n_sites];
    for &n in serving.iter() {
        loads[n] += 1.0;
    }
    let mut value = integral_value(instance, serving, &loads);
    let mut pay = Array2::<f64>::zeros((k_users, n_sites));

    for _ in 0..200 {
        let mut moved = false;

        for k in 0..k_users {
            let home = serving[k];
            let mut best_site = home;
            let mut best_value = value;
            for b in 0..n_sites {
                if b == home || loads[b] + 1.0 > caps[b] + 1e-9 {
                    continue;
                }
                serving[k] = b;
                loads[home] -= 1.0;
                loads[b] += 1.0;
                let trial = integral_value(instance, serving, &loads);
                serving[k] = home;
                loads[home] += 1.0;
                loads[b] -= 1.0;
                if trial > best_value + 1e-12 * best_value.abs().max(1.0) {
                    best_value = trial;
                    best_site = b;
                }
            }
            if best_site != home {
                serving[k] = best_site;
                loads[home] -= 1.0;
                loads[best_site] += 1.0;
                value = best_value;
                moved = true;
            }
        }

        // Swap pass at fixed loads; per-pair payoffs at the current loads
        // stay valid across applied swaps.
        for k in 0..k_users {
            for n in 0..n_sites {
                let stretch = (1.0 + instance.degradation[n]).powf(loads[n] - 1.0);
                let v = 1.0
                    / (1.0 / instance.rate[[k, n]] + stretch / instance.isolation_rate[[k, n]]);
                pay[[k, n]] = instance.rate_weight[k] * v
                    - instance.cost_weight * instance.migration_cost[[k, n]];
            }
        }
        for k in 0..k_users {
            for j in (k + 1)..k_users {
                let (a, b) = (serving[k], serving[j]);
                if a == b {
                    continue;
                }
                let delta = pay[[k, b]] + pay[[j, a]] - pay[[k, a]] - pay[[j, b]];
                if delta > 1e-12 * value.abs().max(1.0) {
                    serving[k] = b;
                    serving[j] = a;
                    moved = true;
                }
            }
        }
        value = integral_value(instance, serving, &loads);

        if !moved {
            break;
        }
    }
    value
}

/// Relocation-only variant of [`vertex_ascent`]: single users hop under the
/// caps until nobody improves, no swap phase. Used to settle an association
/// into a computing-aware resting point without the stronger pair moves.
pub(crate) fn relocation_equilibrium(instance: &Instance, serving: &mut [usize]) -> f64 {
    let (k_users, n_sites) = instance.rate.dim();
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| f64::from(*m)).collect();
    let mut loads = vec![0.0f64; n_sites];
    for &n in serving.iter() {
        loads[n] += 1.0;
    }
    let mut value = integral_value(instance, serving, &loads);

    for _ in 0..200 {
        let mut moved = false;
        for k in 0..k_users {
            let home = serving[k];
            let mut best_site = home;
            let mut best_value = value;
            for b in 0..n_sites {
                if b == home || loads[b] + 1.0 > caps[b] + 1e-9 {
                    continue;
                }
                serving[k] = b;
                loads[home] -= 1.0;
                loads[b] += 1.0;
                let trial = integral_value(instance, serving, &loads);
                serving[k] = home;
                loads[home] += 1.0;
                loads[b] -= 1.0;
                if trial > best_value + 1e-12 * best_value.abs().max(1.0) {
                    best_value = trial;
                    best_site = b;
                }
            }
            if best_site != home {
                serving[k] = best_site;
                loads[home] -= 1.0;
                loads[best_site] += 1.0;
                value = best_value;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    value
}

/// Plain-objective value of a fractional placement with loads equal to its
/// column sums. Loads below one are flattened to one: a fraction of a user
/// must not run faster than an isolated one, or the value would credit
/// capacity no integral placement has.
pub fn relaxed_value(instance: &Instance, x: &Array2<f64>) -> f64 {
    let (k_users, n_sites) = x.dim();
    let mut column_sums = vec![0.0f64; n_sites];
    for k in 0..k_users {
        for n in 0..n_sites {
            column_sums[n] += x[[k, n]];
        }
    }
    let mut value = 0.0;
    for n in 0..n_sites {
        let stretch = (1.0 + instance.degradation[n]).powf(column_sums[n].max(1.0) - 1.0);
        for k in 0..k_users {
            let x_kn = x[[k, n]];
            if x_kn == 0.0 {
                continue;
            }
            let v = 1.0 / (1.0 / instance.rate[[k, n]] + stretch / instance.isolation_rate[[k, n]]);
            value += x_kn
                * (instance.rate_weight[k] * v
                    - instance.cost_weight * instance.migration_cost[[k, n]]);
        }
    }
    value
}

/// Projected-gradient ascent of [`relaxed_value`] over row-stochastic
/// placements, rejecting moves that breach a VM cap. Returns the final
/// value and leaves the improved placement in `x`.
pub(crate) fn ascend_relaxed(instance: &Instance, x: &mut Array2<f64>, max_iters: usize) -> f64 {
    let (k_users, n_sites) = x.dim();
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| *m as f64).collect();
    let mut value = relaxed_value(instance, x);
    let mut grad = Array2::<f64>::zeros((k_users, n_sites));

    for _ in 0..max_iters {
        // Gradient: direct payoff plus the load feedback through each
        // site's column sum.
        let mut column_sums = vec![0.0f64; n_sites];
        for k in 0..k_users {
            for n in 0..n_sites {
                column_sums[n] += x[[k, n]];
            }
        }
        let mut feedback = vec![0.0f64; n_sites];
        for n in 0..n_sites {
            let ln_stretch = (1.0 + instance.degradation[n]).ln();
            let stretch =
                (1.0 + instance.degradation[n]).powf(column_sums[n].max(1.0) - 1.0);
            // Below the flattening point the stretch is constant in the
            // load, so there is no feedback.
            let active = if column_sums[n] > 1.0 { 1.0 } else { 0.0 };
            let mut total = 0.0;
            for k in 0..k_users {
                let v = 1.0
                    / (1.0 / instance.rate[[k, n]] + stretch / instance.isolation_rate[[k, n]]);
                grad[[k, n]] = instance.rate_weight[k] * v
                    - instance.cost_weight * instance.migration_cost[[k, n]];
                total -= active
                    * x[[k, n]]
                    * instance.rate_weight[k]
                    * v
                    * v
                    * ln_stretch
                    * stretch
                    / instance.isolation_rate[[k, n]];
            }
            feedback[n] = total;
        }
        for k in 0..k_users {
            for n in 0..n_sites {
                grad[[k, n]] += feedback[n];
            }
        }

        let grad_scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_scale == 0.0 {
            break;
        }
        let mut step = 1.0 / grad_scale;
        let mut improved = false;
        for _ in 0..30 {
            let mut candidate = x.clone();
            for k in 0..k_users {
                for n in 0..n_sites {
                    candidate[[k, n]] += step * grad[[k, n]];
                }
                project_to_simplex(candidate.row_mut(k).into_slice().expect("contiguous"));
            }
            let mut cap_ok = true;
            let mut sums = vec![0.0f64; n_sites];
            for k in 0..k_users {
                for n in 0..n_sites {
                    sums[n] += candidate[[k, n]];
                }
            }
            for n in 0..n_sites {
                if sums[n] > caps[n] + 1e-9 {
                    cap_ok = false;
                }
            }
            if cap_ok {
                let trial = relaxed_value(instance, &candidate);
                if trial > value {
                    improved = trial - value > 1e-13 * value.abs().max(1e-12);
                    *x = candidate;
                    value = trial;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    value
}

/// Euclidean projection of a vector onto the probability simplex.
fn project_to_simplex(v: &mut [f64]) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (i as f64 + 1.0);
        if s - candidate > 0.0 {
            threshold = candidate;
        }
    }
    for entry in v.iter_mut() {
        *entry = (*entry - threshold).max(0.0);
    }
}
