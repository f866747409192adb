//! Placement with explicit radio resource blocks. Instead of a fixed uplink
//! rate per pair, each site owns an orthogonal RB budget and a user's rate is
//! `b * eta`: blocks granted times spectral efficiency. The relaxation
//! alternates the placement solve with a closed-form block split; recovery
//! fixes the rounded loads and prices the budgets with a subgradient loop.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::hungarian;
use crate::integer_recovery::round_loads;
use crate::model::{objective_p1, Assignment, Instance, ObjectiveBreakdown};
use crate::relaxed_solver::{
    ascend_relaxed, consistency_residuals, newton_update, q_matrix, relaxed_value, solve_p2,
    FractionalSolution, RatioParams, SolverConfig,
};
use crate::report::SolveReport;
use crate::scenario::GeneratedScenario;

/// Smallest block share kept while iterating, as a fraction of an even
/// split. Keeps intermediate rates strictly positive for the inner solver.
const MIN_SHARE: f64 = 1e-9;

/// A planning slot where radio rates are decision variables: site `n` may
/// distribute up to `rb_budget[n]` resource blocks over the users it
/// serves, and user `k` turns blocks into bits at `efficiency[k][n]`.
#[derive(Debug, Clone)]
pub struct BandwidthInstance {
    /// Everything except the rate matrix; its `rate` field holds the
    /// efficiency matrix so shared validation applies, and is replaced
    /// before any solve.
    template: Instance,
    efficiency: Array2<f64>,
    rb_budget: Array1<f64>,
}

impl BandwidthInstance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        efficiency: Array2<f64>,
        rb_budget: Array1<f64>,
        isolation_rate: Array2<f64>,
        degradation: Array1<f64>,
        vm_cap: Array1<u32>,
        rate_weight: Array1<f64>,
        cost_weight: f64,
        migration_cost: Array2<f64>,
        initial_site: Vec<usize>,
    ) -> Result<Self> {
        if efficiency.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::invalid("efficiency", "all entries must be positive and finite"));
        }
        if rb_budget.len() != efficiency.ncols() {
            return Err(Error::Shape(format!(
                "rb_budget must have {} entries",
                efficiency.ncols()
            )));
        }
        if rb_budget.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::invalid("rb_budget", "all entries must be positive and finite"));
        }
        let template = Instance::new(
            efficiency.clone(),
            isolation_rate,
            degradation,
            vm_cap,
            rate_weight,
            cost_weight,
            migration_cost,
            initial_site,
        )?;
        Ok(Self { template, efficiency, rb_budget })
    }

    /// Derives the RB view of a generated slot: non-overlapping per-site
    /// spectrum (an equal slice of the shared band each) and single-user
    /// efficiency `log2(1 + p g / noise)` over that slice.
    pub fn from_scenario(scenario: &GeneratedScenario) -> Result<Self> {
        let params = &scenario.rate_params;
        let gains = params.channel_gain();
        let (k_users, n_sites) = gains.dim();
        let budget = params.bandwidth_hz() / n_sites as f64;
        let mut efficiency = Array2::zeros((k_users, n_sites));
        for n in 0..n_sites {
            // Noise power over the site's own slice of the band.
            let noise = params.noise_power_w()[n] / n_sites as f64;
            for k in 0..k_users {
                let sinr = params.tx_power_w()[k] * gains[[k, n]] / noise;
                efficiency[[k, n]] = (1.0 + sinr).log2();
            }
        }
        let inst = &scenario.instance;
        Self::new(
            efficiency,
            Array1::from_elem(n_sites, budget),
            inst.isolation_rate().clone(),
            inst.degradation().clone(),
            inst.vm_cap().clone(),
            inst.rate_weight().clone(),
            inst.cost_weight(),
            inst.migration_cost().clone(),
            inst.initial_site().to_vec(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.efficiency.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.efficiency.ncols()
    }

    pub fn efficiency(&self) -> &Array2<f64> {
        &self.efficiency
    }

    pub fn rb_budget(&self) -> &Array1<f64> {
        &self.rb_budget
    }

    pub fn base(&self) -> &Instance {
        &self.template
    }

    /// The fixed-rate instance induced by a block allocation. Shares below
    /// the safety floor are lifted so every rate stays positive.
    pub fn with_rates(&self, rb: &Array2<f64>) -> Result<Instance> {
        if rb.dim() != self.efficiency.dim() {
            return Err(Error::Shape("allocation shape mismatch".into()));
        }
        let mut instance = self.template.clone();
        let mut rate = Array2::zeros(self.efficiency.dim());
        for n in 0..self.n_sites() {
            let floor = MIN_SHARE * self.rb_budget[n] / self.n_users() as f64;
            for k in 0..self.n_users() {
                rate[[k, n]] = rb[[k, n]].max(floor) * self.efficiency[[k, n]];
            }
        }
        instance.rate = rate;
        Ok(instance)
    }
}

/// Block grants per pair. Column sums never exceed the site budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct RbAllocation {
    rb: Array2<f64>,
}

impl RbAllocation {
    pub fn new(rb: Array2<f64>, budgets: &Array1<f64>) -> Result<Self> {
        if rb.ncols() != budgets.len() {
            return Err(Error::Shape(format!("allocation must have {} columns", budgets.len())));
        }
        if rb.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("rb", "all entries must be non-negative and finite"));
        }
        for n in 0..budgets.len() {
            let used: f64 = rb.column(n).sum();
            if used > budgets[n] * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Infeasible(format!(
                    "site {} grants {} blocks but owns only {}",
                    n, used, budgets[n]
                )));
            }
        }
        Ok(Self { rb })
    }

    pub fn rb(&self) -> &Array2<f64> {
        &self.rb
    }

    pub fn site_usage(&self) -> Array1<f64> {
        Array1::from_iter((0..self.rb.ncols()).map(|n| self.rb.column(n).sum()))
    }
}

/// Splits one site's budget across all users proportionally to
/// `sqrt(alpha * beta / eta)`, the closed-form minimizer of the
/// parameterized radio term at a fixed total. Saturates the budget exactly;
/// an all-zero weight column degenerates to an even split.
pub fn rb_split_closed_form(
    alpha: &Array2<f64>,
    beta: &Array2<f64>,
    efficiency: &Array2<f64>,
    budget: f64,
    site: usize,
) -> Vec<f64> {
    let k_users = efficiency.nrows();
    let mut share: Vec<f64> = (0..k_users)
        .map(|k| (alpha[[k, site]] * beta[[k, site]] / efficiency[[k, site]]).max(0.0).sqrt())
        .collect();
    let total: f64 = share.iter().sum();
    if !(total > 0.0) {
        return vec![budget / k_users as f64; k_users];
    }
    for s in share.iter_mut() {
        *s *= budget / total;
    }
    // Pin the column sum to the budget exactly by balancing on the largest
    // grant; float dust from the division otherwise leaks through.
    let largest = (0..k_users)
        .max_by(|a, b| share[*a].total_cmp(&share[*b]))
        .expect("at least one user");
    let others: f64 = share.iter().enumerate().filter(|(k, _)| *k != largest).map(|(_, s)| s).sum();
    share[largest] = (budget - others).max(0.0);
    share
}

/// A user's block demand at price `price`: the stationary point of
/// `weight * R(b) - price * b` where `R(b) = b eta f / (f + b eta stretch)`.
/// Zero once the price reaches `weight * eta`; rejects non-positive prices
/// (demand is unbounded there).
pub fn rb_demand(
    weight: f64,
    price: f64,
    efficiency: f64,
    isolation_rate: f64,
    stretch: f64,
) -> Result<f64> {
    if !(price > 0.0) {
        return Err(Error::invalid("price", "block demand needs a positive price"));
    }
    let root = (weight / (price * efficiency)).sqrt() - 1.0 / efficiency;
    if root <= 0.0 {
        return Ok(0.0);
    }
    Ok(isolation_rate / stretch * root)
}

/// Offloading rate from a block grant at a fixed compute stretch.
fn rate_of(rb: f64, efficiency: f64, isolation_rate: f64, stretch: f64) -> f64 {
    if rb <= 0.0 {
        return 0.0;
    }
    let radio = rb * efficiency;
    radio * isolation_rate / (isolation_rate + radio * stretch)
}

/// Exact one-site budget split for a fixed user set: bisects the block
/// price until demand meets the budget. Users are given as parallel slices
/// of `(weight, efficiency, isolation_rate)`; `stretch` is the site's
/// congestion factor. Returns grants summing to the budget exactly, except
/// when every weight is zero (nobody wants blocks; all grants zero).
pub fn waterfill_rbs(
    weights: &[f64],
    efficiencies: &[f64],
    isolation_rates: &[f64],
    stretch: f64,
    budget: f64,
) -> Vec<f64> {
    let count = weights.len();
    if count == 0 {
        return Vec::new();
    }
    let shutoff = weights
        .iter()
        .zip(efficiencies)
        .map(|(w, e)| w * e)
        .fold(0.0f64, f64::max);
    if !(shutoff > 0.0) {
        return vec![0.0; count];
    }
    let demand_sum = |price: f64| -> f64 {
        (0..count)
            .map(|k| {
                rb_demand(weights[k], price, efficiencies[k], isolation_rates[k], stretch)
                    .unwrap_or(0.0)
            })
            .sum()
    };

    // Demand falls from unbounded to zero as the price sweeps up to the
    // largest shutoff; bracket below and bisect.
    let mut hi = shutoff;
    let mut lo = shutoff;
    for _ in 0..200 {
        lo *= 0.5;
        if demand_sum(lo) >= budget {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if demand_sum(mid) >= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut grants: Vec<f64> = (0..count)
        .map(|k| rb_demand(weights[k], lo, efficiencies[k], isolation_rates[k], stretch).unwrap_or(0.0))
        .collect();
    let total: f64 = grants.iter().sum();
    if total > 0.0 {
        for g in grants.iter_mut() {
            *g *= budget / total;
        }
        let largest = (0..count)
            .max_by(|a, b| grants[*a].total_cmp(&grants[*b]))
            .expect("non-empty");
        let others: f64 = grants.iter().enumerate().filter(|(k, _)| *k != largest).map(|(_, g)| g).sum();
        grants[largest] = (budget - others).max(0.0);
    }
    grants
}

/// Best feasible block matrix for a fractional placement: each site's
/// budget is waterfilled over its users weighted by `x * omega`, at the
/// congestion its column sum induces. Columns nobody uses stay empty.
fn placement_waterfill(bw: &BandwidthInstance, x: &Array2<f64>) -> Array2<f64> {
    let (k_users, n_sites) = x.dim();
    let base = bw.base();
    let mut rb = Array2::zeros((k_users, n_sites));
    for n in 0..n_sites {
        let load: f64 = x.column(n).sum();
        let stretch = (1.0 + base.degradation()[n]).powf(load - 1.0);
        let weights: Vec<f64> =
            (0..k_users).map(|k| x[[k, n]] * base.rate_weight()[k]).collect();
        let efficiencies: Vec<f64> = (0..k_users).map(|k| bw.efficiency[[k, n]]).collect();
        let isolation: Vec<f64> = (0..k_users).map(|k| base.isolation_rate()[[k, n]]).collect();
        let grants = waterfill_rbs(&weights, &efficiencies, &isolation, stretch, bw.rb_budget[n]);
        for k in 0..k_users {
            rb[[k, n]] = grants[k];
        }
    }
    rb
}

/// Fractional placement value when blocks are re-split optimally for it.
fn placement_value(bw: &BandwidthInstance, x: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let rb = placement_waterfill(bw, x);
    let instance = bw.with_rates(&rb)?;
    Ok((relaxed_value(&instance, x), rb))
}

/// Coordinate ascent from a placement seed: climb the placement at fixed
/// rates, re-split the budgets for the new placement, repeat while the
/// joint value improves. The gradient cannot see across sites where a user
/// holds no blocks (the re-split value function is kinked there), so a
/// vertex stage follows: single-user moves on the nearest integral
/// placement, each scored by an exact budget refill. Returns the best
/// point seen under either stage.
fn polish_bw(
    bw: &BandwidthInstance,
    mut x: Array2<f64>,
    ascent_iters: usize,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (mut value, mut rb) = placement_value(bw, &x)?;
    for _ in 0..30 {
        let instance = bw.with_rates(&rb)?;
        ascend_relaxed(&instance, &mut x, ascent_iters);
        let (next, rb_next) = placement_value(bw, &x)?;
        if next <= value + 1e-12 * value.abs().max(1e-12) {
            break;
        }
        value = next;
        rb = rb_next;
    }

    let (k_users, n_sites) = x.dim();
    let caps = bw.base().vm_cap();
    let mut serving: Vec<usize> = (0..k_users)
        .map(|k| {
            (0..n_sites)
                .max_by(|a, b| x[[k, *a]].total_cmp(&x[[k, *b]]))
                .expect("at least one site")
        })
        .collect();
    let mut loads = vec![0u32; n_sites];
    for &s in &serving {
        loads[s] += 1;
    }
    let one_hot = |serving: &[usize]| {
        let mut v = Array2::zeros((k_users, n_sites));
        for (k, &s) in serving.iter().enumerate() {
            v[[k, s]] = 1.0;
        }
        v
    };
    let (mut vertex_value, mut vertex_rb) = placement_value(bw, &one_hot(&serving))?;
    for _ in 0..50 {
        // Best single-user move under the exact refill, if any improves.
        let mut move_found: Option<(usize, usize, f64, Array2<f64>)> = None;
        for k in 0..k_users {
            let from = serving[k];
            for to in 0..n_sites {
                if to == from || loads[to] >= caps[to] {
                    continue;
                }
                serving[k] = to;
                let (trial, trial_rb) = placement_value(bw, &one_hot(&serving))?;
                serving[k] = from;
                let bar = move_found.as_ref().map_or(vertex_value, |m| m.2);
                if trial > bar + 1e-12 * bar.abs().max(1e-12) {
                    move_found = Some((k, to, trial, trial_rb));
                }
            }
        }
        match move_found {
            Some((k, to, trial, trial_rb)) => {
                loads[serving[k]] -= 1;
                loads[to] += 1;
                serving[k] = to;
                vertex_value = trial;
                vertex_rb = trial_rb;
            }
            None => break,
        }
    }
    if vertex_value > value {
        Ok((vertex_value, one_hot(&serving), vertex_rb))
    } else {
        Ok((value, x, rb))
    }
}

/// Relaxation of the joint placement / block-split problem. Alternates the
/// fixed-rate parameterized solve with the closed-form split, then polishes
/// by coordinate ascent (placement gradient steps against budget-optimal
/// block grants) plus single-user vertex moves. The returned placement,
/// loads and allocation describe the one best point found; the residual
/// and gap fields diagnose the averaged inner iterates that led there.
pub fn solve_bw_relaxed(
    bw: &BandwidthInstance,
    config: &SolverConfig,
) -> Result<(FractionalSolution, RbAllocation)> {
    let k_users = bw.n_users();
    let n_sites = bw.n_sites();
    let outer_tol = config.outer_tol_per_entry * (k_users * n_sites) as f64;

    let mut rb = Array2::from_shape_fn((k_users, n_sites), |(_, n)| {
        bw.rb_budget[n] / k_users as f64
    });
    let mut instance = bw.with_rates(&rb)?;
    let mut params = RatioParams::init(&instance);
    let mut prices = vec![0.0f64; n_sites];
    let mut inner_total = 0usize;
    let mut outer_done = 0usize;
    let mut converged = false;

    let mut inner = solve_p2(&instance, &params, config, &prices);
    inner_total += inner.iterations;
    prices.clone_from(&inner.prices);
    let mut residual = consistency_residuals(
        &instance,
        &params,
        &q_matrix(&instance, inner.y_avg.as_slice().expect("contiguous")),
        &inner.x_avg,
    );

    for outer in 1..=config.max_outer {
        outer_done = outer;
        if residual.sum_sq < outer_tol {
            converged = true;
            break;
        }
        let q = q_matrix(&instance, inner.y_avg.as_slice().expect("contiguous"));
        newton_update(&instance, &mut params, &q, &inner.x_avg, config);

        // Re-split every budget under the fresh parameters, then re-rate.
        for n in 0..n_sites {
            let column =
                rb_split_closed_form(&params.alpha, &params.beta, &bw.efficiency, bw.rb_budget[n], n);
            for k in 0..k_users {
                rb[[k, n]] = column[k];
            }
        }
        instance = bw.with_rates(&rb)?;

        inner = solve_p2(&instance, &params, config, &prices);
        inner_total += inner.iterations;
        prices.clone_from(&inner.prices);
        residual = consistency_residuals(
            &instance,
            &params,
            &q_matrix(&instance, inner.y_avg.as_slice().expect("contiguous")),
            &inner.x_avg,
        );
    }
    converged = converged && inner.converged;

    // Polish: alternate placement ascent at fixed rates with budget-optimal
    // re-splits at the improved placement. Each half-step is monotone in
    // the joint relaxed objective. The ascent is local, so it runs from the
    // averaged point and from its nearest vertex and keeps the better end.
    let mut rounded = Array2::zeros(inner.x_avg.dim());
    for k in 0..k_users {
        let best = (0..n_sites)
            .max_by(|a, b| inner.x_avg[[k, *a]].total_cmp(&inner.x_avg[[k, *b]]))
            .expect("at least one site");
        rounded[[k, best]] = 1.0;
    }
    let mut upper_bound = f64::NEG_INFINITY;
    let mut rb_best = rb.clone();
    let mut x_best = inner.x_avg.clone();
    for seed in [inner.x_avg, rounded] {
        let (value, x_out, rb_out) = polish_bw(bw, seed, config.polish_iters)?;
        if value > upper_bound {
            upper_bound = value;
            x_best = x_out;
            rb_best = rb_out;
        }
    }
    let y_best = Array1::from_iter((0..n_sites).map(|n| x_best.column(n).sum()));

    let allocation = RbAllocation::new(rb_best, &bw.rb_budget)?;
    Ok((
        FractionalSolution {
            x: x_best,
            y: y_best,
            upper_bound,
            residual: residual.sum_sq,
            residual_max: residual.max_abs,
            duality_gap: inner.gap,
            constraint_violation: inner.violation,
            // No single-site incumbent here: values depend on the block
            // split, so recovery re-derives placements itself.
            incumbent: vec![],
            outer_iterations: outer_done,
            inner_iterations: inner_total,
            converged,
        },
        allocation,
    ))
}

/// Value of an integral placement under its best block split: every site
/// waterfills its own budget over the users placed there. Useful to score
/// placements chosen by other policies on the same footing as the solver.
pub fn evaluate_assignment(
    bw: &BandwidthInstance,
    assignment: &Assignment,
) -> Result<(ObjectiveBreakdown, RbAllocation)> {
    if assignment.n_users() != bw.n_users() {
        return Err(Error::Shape(format!(
            "assignment covers {} users, instance has {}",
            assignment.n_users(),
            bw.n_users()
        )));
    }
    let base = bw.base();
    let k_users = bw.n_users();
    let mut rb = Array2::zeros((k_users, bw.n_sites()));
    let mut sum_rate = 0.0;
    let mut total_cost = 0.0;
    for n in 0..bw.n_sites() {
        let members: Vec<usize> =
            (0..k_users).filter(|k| assignment.serving()[*k] == n).collect();
        let stretch =
            (1.0 + base.degradation()[n]).powf(f64::from(assignment.loads()[n]) - 1.0);
        let weights: Vec<f64> = members.iter().map(|k| base.rate_weight()[*k]).collect();
        let efficiencies: Vec<f64> = members.iter().map(|k| bw.efficiency[[*k, n]]).collect();
        let isolation: Vec<f64> =
            members.iter().map(|k| base.isolation_rate()[[*k, n]]).collect();
        let grants = waterfill_rbs(&weights, &efficiencies, &isolation, stretch, bw.rb_budget[n]);
        for (slot, &k) in members.iter().enumerate() {
            rb[[k, n]] = grants[slot];
            sum_rate += base.rate_weight()[k]
                * rate_of(grants[slot], bw.efficiency[[k, n]], base.isolation_rate()[[k, n]], stretch);
            total_cost += base.migration_cost()[[k, n]];
        }
    }
    let breakdown = ObjectiveBreakdown {
        utility: sum_rate - base.cost_weight() * total_cost,
        sum_rate,
        total_cost,
    };
    Ok((breakdown, RbAllocation::new(rb, &bw.rb_budget)?))
}

/// Iteration budget of the block-price subgradient loop.
const PRICE_ROUNDS: usize = 2000;

/// Integral recovery with explicit blocks: loads are rounded and frozen,
/// then a subgradient loop prices each budget, matching users to slots at
/// priced utilities and waterfilling the budgets of each candidate
/// assignment for a feasible primal. Reports the best primal found and the
/// residual Lagrangian gap (this stage is not exact; the gap says how far
/// the bound and the incumbent ended up apart).
pub fn recover_bw_integer(
    bw: &BandwidthInstance,
    fractional: &FractionalSolution,
) -> Result<(Assignment, RbAllocation, SolveReport)> {
    let k_users = bw.n_users();
    let n_sites = bw.n_sites();
    let base = bw.base();
    let caps: Vec<u32> = base.vm_cap().iter().copied().collect();
    let loads = round_loads(
        fractional.y.as_slice().expect("contiguous"),
        &caps,
        k_users as u32,
    )?;

    let stretch: Vec<f64> = (0..n_sites)
        .map(|n| (1.0 + base.degradation()[n]).powf(f64::from(loads[n]) - 1.0))
        .collect();

    // Utility scale at full budgets calibrates prices and steps.
    let mut utility_scale = 0.0f64;
    for k in 0..k_users {
        for n in 0..n_sites {
            let full = rate_of(
                bw.rb_budget[n],
                bw.efficiency[[k, n]],
                base.isolation_rate()[[k, n]],
                stretch[n],
            );
            let u = base.rate_weight()[k] * full
                - base.cost_weight() * base.migration_cost()[[k, n]];
            utility_scale = utility_scale.max(u.abs());
        }
    }
    if !(utility_scale > 0.0) {
        utility_scale = 1.0;
    }

    let slot_site: Vec<usize> = (0..n_sites)
        .flat_map(|n| std::iter::repeat_n(n, loads[n] as usize))
        .collect();
    debug_assert_eq!(slot_site.len(), k_users);

    let mut price: Vec<f64> = (0..n_sites).map(|n| utility_scale / (2.0 * bw.rb_budget[n])).collect();
    let price_floor: Vec<f64> =
        (0..n_sites).map(|n| 1e-12 * utility_scale / bw.rb_budget[n]).collect();

    let mut dual_best = f64::INFINITY;
    let mut primal_best = f64::NEG_INFINITY;
    let mut serving_best: Option<Vec<usize>> = None;
    let mut rb_best = Array2::zeros((k_users, n_sites));

    let mut priced = Array2::zeros((k_users, k_users));
    let mut demand = Array2::zeros((k_users, n_sites));
    for round in 0..PRICE_ROUNDS {
        for k in 0..k_users {
            for n in 0..n_sites {
                demand[[k, n]] = rb_demand(
                    base.rate_weight()[k],
                    price[n].max(price_floor[n]),
                    bw.efficiency[[k, n]],
                    base.isolation_rate()[[k, n]],
                    stretch[n],
                )?;
            }
        }
        for k in 0..k_users {
            for (slot, &site) in slot_site.iter().enumerate() {
                let b = demand[[k, site]];
                let value = base.rate_weight()[k]
                    * rate_of(b, bw.efficiency[[k, site]], base.isolation_rate()[[k, site]], stretch[site])
                    - base.cost_weight() * base.migration_cost()[[k, site]]
                    - price[site].max(price_floor[site]) * b;
                priced[[k, slot]] = value;
            }
        }
        let lap = hungarian::solve_max(&priced)?;
        let serving: Vec<usize> = lap.row_to_col.iter().map(|slot| slot_site[*slot]).collect();

        let dual = lap.total
            + price
                .iter()
                .zip(bw.rb_budget.iter())
                .map(|(nu, b)| nu.max(price_floor[0]) * b)
                .sum::<f64>();
        dual_best = dual_best.min(dual);

        // A feasible primal for this round's matching: refill each budget
        // exactly over the users the matching put there.
        let mut rb_round = Array2::zeros((k_users, n_sites));
        let mut primal = 0.0;
        for n in 0..n_sites {
            let members: Vec<usize> = (0..k_users).filter(|k| serving[*k] == n).collect();
            let weights: Vec<f64> = members.iter().map(|k| base.rate_weight()[*k]).collect();
            let efficiencies: Vec<f64> = members.iter().map(|k| bw.efficiency[[*k, n]]).collect();
            let isolation: Vec<f64> =
                members.iter().map(|k| base.isolation_rate()[[*k, n]]).collect();
            let grants = waterfill_rbs(&weights, &efficiencies, &isolation, stretch[n], bw.rb_budget[n]);
            for (slot, &k) in members.iter().enumerate() {
                rb_round[[k, n]] = grants[slot];
                primal += base.rate_weight()[k]
                    * rate_of(grants[slot], bw.efficiency[[k, n]], base.isolation_rate()[[k, n]], stretch[n])
                    - base.cost_weight() * base.migration_cost()[[k, n]];
            }
        }
        if primal > primal_best {
            primal_best = primal;
            serving_best = Some(serving.clone());
            rb_best = rb_round;
        }

        // Price step: harmonic decay against the budget slack, scaled so a
        // full-budget mismatch moves the price by its own magnitude order.
        for n in 0..n_sites {
            let used: f64 = (0..k_users).filter(|k| serving[*k] == n).map(|k| demand[[k, n]]).sum();
            let step = utility_scale / (bw.rb_budget[n] * bw.rb_budget[n]) / (round + 1) as f64;
            price[n] = (price[n] - step * (bw.rb_budget[n] - used)).max(0.0);
        }
    }

    let serving = serving_best.ok_or_else(|| {
        Error::NoConvergence("no feasible block assignment found within the price rounds".into())
    })?;
    let assignment = Assignment::new(serving, n_sites, &caps)?;
    debug_assert_eq!(assignment.loads(), &loads[..]);

    let instance = bw.with_rates(&rb_best)?;
    let breakdown = objective_p1(&instance, &assignment)?;
    let upper_bound = fractional.upper_bound.max(breakdown.utility);
    let migrated = assignment.migrated_from(base.initial_site());
    let allocation = RbAllocation::new(rb_best, &bw.rb_budget)?;

    let report = SolveReport {
        utility: breakdown.utility,
        sum_rate: breakdown.sum_rate,
        total_cost: breakdown.total_cost,
        upper_bound,
        gap_to_upper_bound: SolveReport::relative_gap(upper_bound, breakdown.utility),
        migrated_users: migrated,
        migrated_pct: 100.0 * migrated as f64 / k_users as f64,
        outer_iterations: fractional.outer_iterations,
        inner_iterations: fractional.inner_iterations,
        residual: fractional.residual,
        // The residual stage keeps its own gap: rounded loads break strong
        // duality, so the bound rarely closes.
        duality_gap: SolveReport::relative_gap(dual_best, primal_best),
        constraint_violation: fractional.constraint_violation,
        converged: fractional.converged,
    };
    Ok((assignment, allocation, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_bw(k_users: usize, n_sites: usize, seed: u64) -> BandwidthInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let efficiency =
            Array2::from_shape_fn((k_users, n_sites), |_| rng.random_range(0.5..2.0));
        let rb_budget = Array1::from_shape_fn(n_sites, |_| rng.random_range(4.0..10.0));
        let isolation = Array2::from_shape_fn((k_users, n_sites), |_| rng.random_range(4.0..8.0));
        let degradation = Array1::from_shape_fn(n_sites, |_| rng.random_range(0.2..0.5));
        let initial: Vec<usize> = (0..k_users).map(|_| rng.random_range(0..n_sites)).collect();
        let mut cost = Array2::from_shape_fn((k_users, n_sites), |_| rng.random_range(0.1..0.6));
        for (k, &home) in initial.iter().enumerate() {
            cost[[k, home]] = 0.0;
        }
        BandwidthInstance::new(
            efficiency,
            rb_budget,
            isolation,
            degradation,
            Array1::from_elem(n_sites, k_users as u32),
            Array1::from_elem(k_users, 1.0),
            0.5,
            cost,
            initial,
        )
        .unwrap()
    }

    /// Best integral value over every placement, waterfilling each budget.
    fn exhaustive_bw(bw: &BandwidthInstance) -> f64 {
        let k_users = bw.n_users();
        let n_sites = bw.n_sites();
        let base = bw.base();
        let mut serving = vec![0usize; k_users];
        let mut best = f64::NEG_INFINITY;
        loop {
            let mut loads = vec![0u32; n_sites];
            for &s in &serving {
                loads[s] += 1;
            }
            if loads.iter().zip(base.vm_cap()).all(|(l, c)| l <= c) {
                let mut value = 0.0;
                for n in 0..n_sites {
                    let members: Vec<usize> =
                        (0..k_users).filter(|k| serving[*k] == n).collect();
                    let stretch =
                        (1.0 + base.degradation()[n]).powf(f64::from(loads[n]) - 1.0);
                    let weights: Vec<f64> =
                        members.iter().map(|k| base.rate_weight()[*k]).collect();
                    let efficiencies: Vec<f64> =
                        members.iter().map(|k| bw.efficiency()[[*k, n]]).collect();
                    let isolation: Vec<f64> =
                        members.iter().map(|k| base.isolation_rate()[[*k, n]]).collect();
                    let grants =
                        waterfill_rbs(&weights, &efficiencies, &isolation, stretch, bw.rb_budget()[n]);
                    for (slot, &k) in members.iter().enumerate() {
                        value += base.rate_weight()[k]
                            * rate_of(
                                grants[slot],
                                bw.efficiency()[[k, n]],
                                base.isolation_rate()[[k, n]],
                                stretch,
                            )
                            - base.cost_weight() * base.migration_cost()[[k, n]];
                    }
                }
                best = best.max(value);
            }
            // Odometer step through the placement space.
            let mut pos = 0;
            loop {
                if pos == k_users {
                    return best;
                }
                serving[pos] += 1;
                if serving[pos] < n_sites {
                    break;
                }
                serving[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn split_gives_everything_to_the_only_positive_weight() {
        let alpha = ndarray::arr2(&[[1.0], [0.0]]);
        let beta = ndarray::arr2(&[[2.0], [0.0]]);
        let eta = ndarray::arr2(&[[1.0], [1.0]]);
        let b = rb_split_closed_form(&alpha, &beta, &eta, 7.0, 0);
        assert_relative_eq!(b[0], 7.0);
        assert_relative_eq!(b[1], 0.0);
    }

    #[test]
    fn split_halves_between_equal_weights() {
        let alpha = ndarray::arr2(&[[1.0], [1.0]]);
        let beta = ndarray::arr2(&[[2.0], [2.0]]);
        let eta = ndarray::arr2(&[[0.7], [0.7]]);
        let b = rb_split_closed_form(&alpha, &beta, &eta, 6.0, 0);
        assert_relative_eq!(b[0], 3.0);
        assert_relative_eq!(b[1], 3.0);
    }

    #[test]
    fn split_obeys_the_square_root_law() {
        // Quadrupling one weight doubles its share factor.
        let alpha = ndarray::arr2(&[[4.0], [1.0]]);
        let beta = ndarray::arr2(&[[1.0], [1.0]]);
        let eta = ndarray::arr2(&[[1.0], [1.0]]);
        let b = rb_split_closed_form(&alpha, &beta, &eta, 3.0, 0);
        assert_relative_eq!(b[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(b[1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn split_degenerates_to_even_shares() {
        let zero = Array2::zeros((3, 1));
        let eta = Array2::from_elem((3, 1), 1.0);
        let b = rb_split_closed_form(&zero, &zero, &eta, 9.0, 0);
        assert_eq!(b, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn split_saturates_budgets_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let k = rng.random_range(1..9);
            let alpha = Array2::from_shape_fn((k, 1), |_| rng.random_range(0.0..3.0));
            let beta = Array2::from_shape_fn((k, 1), |_| rng.random_range(0.0..3.0));
            let eta = Array2::from_shape_fn((k, 1), |_| rng.random_range(0.5..2.0));
            let budget = rng.random_range(1.0..20.0);
            let b = rb_split_closed_form(&alpha, &beta, &eta, budget, 0);
            // Saturation is exact to rounding; the rebalance pins the sum
            // to the budget within a couple of ulps.
            assert!((b.iter().sum::<f64>() - budget).abs() <= 4.0 * f64::EPSILON * budget);
        }
    }

    #[test]
    fn demand_vanishes_at_the_shutoff_price() {
        // weight * eta is the largest price with positive demand.
        assert_eq!(rb_demand(1.0, 2.0 + 1e-9, 2.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(rb_demand(1.0, 2.0 - 1e-3, 2.0, 1.0, 1.0).unwrap() > 0.0);
        assert_eq!(rb_demand(1.0, 1e9, 2.0, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn demand_matches_direct_substitution() {
        // weight 1, price 1, eta 2, f 1, stretch 1:
        // sqrt(1/2) - 1/2 = 0.20710678...
        let b = rb_demand(1.0, 1.0, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(b, 0.5f64.sqrt() - 0.5, max_relative = 1e-12);
    }

    #[test]
    fn demand_rejects_a_free_market() {
        assert!(rb_demand(1.0, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn demand_maximizes_its_priced_payoff() {
        // Grid-check the stationarity: no nearby grant does better.
        let (w, nu, eta, f, s) = (1.3, 0.4, 1.1, 5.0, 1.7);
        let b = rb_demand(w, nu, eta, f, s).unwrap();
        let payoff = |b: f64| w * rate_of(b, eta, f, s) - nu * b;
        let at = payoff(b);
        for trial in [0.0, b * 0.5, b * 0.9, b * 1.1, b * 2.0, b + 1.0] {
            assert!(payoff(trial) <= at + 1e-12);
        }
    }

    #[test]
    fn waterfill_matches_golden_section_on_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let w = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let e = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
            let f = [rng.random_range(3.0..9.0), rng.random_range(3.0..9.0)];
            let stretch = rng.random_range(1.0..3.0);
            let budget = rng.random_range(2.0..12.0);
            let grants = waterfill_rbs(&w, &e, &f, stretch, budget);
            assert_relative_eq!(grants.iter().sum::<f64>(), budget, max_relative = 1e-12);

            let value = |b0: f64| {
                w[0] * rate_of(b0, e[0], f[0], stretch)
                    + w[1] * rate_of(budget - b0, e[1], f[1], stretch)
            };
            // Golden-section search over the single free coordinate.
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut lo, mut hi) = (0.0, budget);
            for _ in 0..120 {
                let a = hi - phi * (hi - lo);
                let b = lo + phi * (hi - lo);
                if value(a) < value(b) {
                    lo = a;
                } else {
                    hi = b;
                }
            }
            let best = value(0.5 * (lo + hi));
            let got = w[0] * rate_of(grants[0], e[0], f[0], stretch)
                + w[1] * rate_of(grants[1], e[1], f[1], stretch);
            assert_relative_eq!(got, best, max_relative = 1e-9);
        }
    }

    #[test]
    fn waterfill_refuses_nothing_to_nobody() {
        assert!(waterfill_rbs(&[], &[], &[], 1.0, 5.0).is_empty());
        assert_eq!(waterfill_rbs(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0], 1.0, 5.0), vec![0.0, 0.0]);
        let solo = waterfill_rbs(&[1.0], &[1.0], &[4.0], 1.0, 5.0);
        assert_relative_eq!(solo[0], 5.0);
    }

    #[test]
    fn priced_utility_is_non_increasing_in_price() {
        let (w, eta, f, s, cost) = (1.2, 1.5, 6.0, 1.4, 0.3);
        let mut last = f64::INFINITY;
        for step in 1..40 {
            let nu = 0.05 * step as f64;
            let b = rb_demand(w, nu, eta, f, s).unwrap();
            let u = w * rate_of(b, eta, f, s) - cost - nu * b;
            assert!(u <= last + 1e-12);
            last = u;
        }
    }

    #[test]
    fn relaxed_bound_dominates_the_exhaustive_optimum() {
        for seed in [1, 2, 3, 4, 5] {
            let bw = tiny_bw(4, 2, seed);
            let (fractional, allocation) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
            let oracle = exhaustive_bw(&bw);
            assert!(
                fractional.upper_bound >= oracle - 1e-9 * oracle.abs().max(1.0),
                "seed {seed}: bound {} fell under the enumerated best {oracle}",
                fractional.upper_bound
            );
            for n in 0..bw.n_sites() {
                assert!(allocation.site_usage()[n] <= bw.rb_budget()[n] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn more_spectrum_never_hurts() {
        let bw = tiny_bw(4, 2, 11);
        let (base_solution, _) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
        let richer = BandwidthInstance::new(
            bw.efficiency().clone(),
            bw.rb_budget() * 4.0,
            bw.base().isolation_rate().clone(),
            bw.base().degradation().clone(),
            bw.base().vm_cap().clone(),
            bw.base().rate_weight().clone(),
            bw.base().cost_weight(),
            bw.base().migration_cost().clone(),
            bw.base().initial_site().to_vec(),
        )
        .unwrap();
        let (rich_solution, _) = solve_bw_relaxed(&richer, &SolverConfig::default()).unwrap();
        assert!(rich_solution.upper_bound >= base_solution.upper_bound - 1e-9);
    }

    #[test]
    fn single_site_serves_everyone_from_one_budget() {
        let bw = tiny_bw(3, 1, 7);
        let (fractional, allocation) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
        assert_relative_eq!(
            allocation.site_usage()[0],
            bw.rb_budget()[0],
            max_relative = 1e-9
        );
        assert!(fractional.upper_bound.is_finite());
    }

    #[test]
    fn recovery_is_feasible_and_weakly_dual() {
        for seed in [21, 22, 23] {
            let bw = tiny_bw(4, 2, seed);
            let (fractional, _) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
            let (assignment, allocation, report) = recover_bw_integer(&bw, &fractional).unwrap();
            assert_eq!(assignment.n_users(), 4);
            for n in 0..bw.n_sites() {
                assert!(allocation.site_usage()[n] <= bw.rb_budget()[n] * (1.0 + 1e-9));
            }
            // The residual dual stays above the incumbent: gap clamps at 0.
            assert!(report.duality_gap >= 0.0);
            assert!(report.utility <= fractional.upper_bound + 1e-9 * report.utility.abs().max(1.0));
        }
    }

    #[test]
    fn recovery_lands_near_the_enumerated_best() {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let bw = tiny_bw(4, 2, 100 + seed);
            let (fractional, _) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
            let (_, _, report) = recover_bw_integer(&bw, &fractional).unwrap();
            let oracle = exhaustive_bw(&bw);
            let shortfall = (oracle - report.utility) / oracle.abs().max(1e-12);
            worst = worst.max(shortfall);
        }
        assert!(worst <= 0.05, "worst shortfall {worst}");
    }

    #[test]
    fn scoring_a_recovered_assignment_reproduces_its_report() {
        for seed in [3, 9, 41] {
            let bw = tiny_bw(4, 2, seed);
            let (fractional, _) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
            let (assignment, _, report) = recover_bw_integer(&bw, &fractional).unwrap();
            let (breakdown, allocation) = evaluate_assignment(&bw, &assignment).unwrap();
            assert!((breakdown.utility - report.utility).abs() <= 1e-9 * report.utility.abs().max(1.0));
            for n in 0..bw.n_sites() {
                assert!(allocation.site_usage()[n] <= bw.rb_budget()[n] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn zero_blocks_for_unserved_pairs_in_recovery() {
        let bw = tiny_bw(5, 2, 77);
        let (fractional, _) = solve_bw_relaxed(&bw, &SolverConfig::default()).unwrap();
        let (assignment, allocation, _) = recover_bw_integer(&bw, &fractional).unwrap();
        for k in 0..5 {
            for n in 0..2 {
                if assignment.serving()[k] != n {
                    assert_eq!(allocation.rb()[[k, n]], 0.0);
                }
            }
        }
    }

    #[test]
    fn scenario_bridge_shapes_and_positivity() {
        let config = crate::scenario::ScenarioConfig {
            n_users: 6,
            n_sites: 3,
            vm_cap: 6,
            ..Default::default()
        };
        let scenario = crate::scenario::generate(&config, 5).unwrap();
        let bw = BandwidthInstance::from_scenario(&scenario).unwrap();
        assert_eq!(bw.efficiency().dim(), (6, 3));
        assert_relative_eq!(
            bw.rb_budget()[0],
            config.bandwidth_hz / 3.0,
            max_relative = 1e-12
        );
        assert!(bw.efficiency().iter().all(|e| *e > 0.0));
    }

    #[test]
    fn budgets_must_be_positive() {
        let bw = tiny_bw(2, 2, 1);
        let bad = BandwidthInstance::new(
            bw.efficiency().clone(),
            arr1(&[1.0, 0.0]),
            bw.base().isolation_rate().clone(),
            bw.base().degradation().clone(),
            bw.base().vm_cap().clone(),
            bw.base().rate_weight().clone(),
            bw.base().cost_weight(),
            bw.base().migration_cost().clone(),
            bw.base().initial_site().to_vec(),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn allocation_rejects_a_blown_budget() {
        let rb = Array2::from_elem((2, 1), 3.0);
        assert!(RbAllocation::new(rb, &arr1(&[5.0])).is_err());
        let ok = Array2::from_elem((2, 1), 2.5);
        assert!(RbAllocation::new(ok, &arr1(&[5.0])).is_ok());
    }
}

