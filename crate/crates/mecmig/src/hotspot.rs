//! Capacity planning around one overloaded site: all users start on site 0
//! and the only question is how many services each site should host.
//! Users are interchangeable, so the placement collapses to an integer
//! load vector.
//!
//! Below the saturation point the problem is concave after restricting
//! each site to its one-sided optimal load, and is solved exactly
//! (multiplier bisection plus an optimal rounding step). Past saturation
//! the full sum-of-ratios machinery runs in scalar-per-site form and the
//! result is rounded by fractional part.

use ndarray::Array1;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::integer_recovery::round_loads;

/// One fast site (index 0, free to stay on) plus helper sites users can be
/// pushed to. Rates are per-user averages; every user is identical.
#[derive(Debug, Clone)]
pub struct HotspotInstance {
    rate: Array1<f64>,
    isolation_rate: Array1<f64>,
    degradation: Array1<f64>,
    migration_cost: Array1<f64>,
    vm_cap: Array1<u32>,
    cost_weight: f64,
    k_users: u32,
}

/// File-facing description of a hotspot topology: parallel per-site arrays
/// plus the cost weight. The default is the bundled experiment: one strong
/// home site and four identical helpers that charge for migrations.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HotspotConfig {
    pub rate: Vec<f64>,
    pub isolation_rate: Vec<f64>,
    pub degradation: Vec<f64>,
    pub migration_cost: Vec<f64>,
    pub vm_cap: Vec<u32>,
    pub cost_weight: f64,
}

impl Default for HotspotConfig {
    fn default() -> Self {
        Self {
            rate: vec![5e6, 2e6, 2e6, 2e6, 2e6],
            isolation_rate: vec![5e7, 1e7, 1e7, 1e7, 1e7],
            degradation: vec![0.25, 0.4, 0.4, 0.4, 0.4],
            migration_cost: vec![0.0, 2e5, 2e5, 2e5, 2e5],
            vm_cap: vec![45, 45, 45, 45, 45],
            cost_weight: 0.5,
        }
    }
}

impl HotspotConfig {
    pub fn instance(&self, k_users: u32) -> Result<HotspotInstance> {
        HotspotInstance::new(
            Array1::from(self.rate.clone()),
            Array1::from(self.isolation_rate.clone()),
            Array1::from(self.degradation.clone()),
            Array1::from(self.migration_cost.clone()),
            Array1::from(self.vm_cap.clone()),
            self.cost_weight,
            k_users,
        )
    }
}

impl HotspotInstance {
    pub fn new(
        rate: Array1<f64>,
        isolation_rate: Array1<f64>,
        degradation: Array1<f64>,
        migration_cost: Array1<f64>,
        vm_cap: Array1<u32>,
        cost_weight: f64,
        k_users: u32,
    ) -> Result<Self> {
        let n_sites = rate.len();
        if n_sites == 0 {
            return Err(Error::invalid("rate", "at least one site required"));
        }
        for (name, arr) in [
            ("isolation_rate", &isolation_rate),
            ("degradation", &degradation),
            ("migration_cost", &migration_cost),
        ] {
            if arr.len() != n_sites {
                return Err(Error::Shape(format!(
                    "{name} has {} entries for {n_sites} sites",
                    arr.len()
                )));
            }
        }
        if vm_cap.len() != n_sites {
            return Err(Error::Shape(format!(
                "vm_cap has {} entries for {n_sites} sites",
                vm_cap.len()
            )));
        }
        if rate.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("rate", "all rates must be positive"));
        }
        if isolation_rate.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("isolation_rate", "must be positive"));
        }
        if degradation.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("degradation", "must be positive"));
        }
        if migration_cost.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::invalid("migration_cost", "must be non-negative"));
        }
        if migration_cost[0] != 0.0 {
            return Err(Error::invalid(
                "migration_cost",
                "staying on the home site must be free (cost[0] == 0)",
            ));
        }
        if !(cost_weight >= 0.0) {
            return Err(Error::invalid("cost_weight", "must be non-negative"));
        }
        let cap_sum: u64 = vm_cap.iter().map(|m| u64::from(*m)).sum();
        if cap_sum < u64::from(k_users) {
            return Err(Error::Infeasible(format!(
                "caps admit {cap_sum} users but {k_users} are present"
            )));
        }
        Ok(Self { rate, isolation_rate, degradation, migration_cost, vm_cap, cost_weight, k_users })
    }

    pub fn n_sites(&self) -> usize {
        self.rate.len()
    }

    pub fn k_users(&self) -> u32 {
        self.k_users
    }

    pub fn vm_cap(&self) -> &Array1<u32> {
        &self.vm_cap
    }

    /// Same sites, different population.
    pub fn with_users(&self, k_users: u32) -> Result<Self> {
        Self::new(
            self.rate.clone(),
            self.isolation_rate.clone(),
            self.degradation.clone(),
            self.migration_cost.clone(),
            self.vm_cap.clone(),
            self.cost_weight,
            k_users,
        )
    }

    /// Per-user service time at real-valued load `y`.
    fn service_time(&self, n: usize, y: f64) -> f64 {
        1.0 / self.rate[n] + (1.0 + self.degradation[n]).powf(y - 1.0) / self.isolation_rate[n]
    }

    /// Net utility contributed by site `n` hosting `y` services: total
    /// offloading rate minus weighted migration cost.
    pub fn site_value(&self, n: usize, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        y / self.service_time(n, y) - self.cost_weight * self.migration_cost[n] * y
    }

    /// Derivative of [`site_value`] in the load.
    pub fn site_slope(&self, n: usize, y: f64) -> f64 {
        let q = self.service_time(n, y);
        let q_prime = (1.0 + self.degradation[n]).ln()
            * (1.0 + self.degradation[n]).powf(y - 1.0)
            / self.isolation_rate[n];
        (q - y * q_prime) / (q * q) - self.cost_weight * self.migration_cost[n]
    }

    /// Total utility of an integer load vector.
    pub fn objective(&self, loads: &[u32]) -> f64 {
        loads
            .iter()
            .enumerate()
            .map(|(n, &y)| self.site_value(n, f64::from(y)))
            .sum()
    }

    /// Load at which site `n`'s value peaks, capped by its VM budget. Zero
    /// when even the first service is not worth its migration cost.
    pub fn one_sided_load(&self, n: usize) -> f64 {
        let cap = f64::from(self.vm_cap[n]);
        if self.site_slope(n, 0.0) <= 0.0 {
            return 0.0;
        }
        if self.site_slope(n, cap) >= 0.0 {
            return cap;
        }
        bisect_decreasing(|y| self.site_slope(n, y), 0.0, cap)
    }

    /// Sum of the one-sided loads: the population at which the system
    /// utility peaks.
    pub fn k_star(&self) -> f64 {
        (0..self.n_sites()).map(|n| self.one_sided_load(n)).sum()
    }
}

/// Root of a strictly decreasing function on `[lo, hi]` with
/// `f(lo) > 0 > f(hi)`, to near machine width.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            return mid;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Continuous optimum below saturation: maximizes the separable concave
/// utility over loads in `[0, J_n]` summing to the population. Returns the
/// loads and the KKT residual (normalized by the largest entry slope).
pub fn solve_underloaded(instance: &HotspotInstance) -> Result<(Vec<f64>, f64)> {
    let n_sites = instance.n_sites();
    let k = f64::from(instance.k_users);
    let peaks: Vec<f64> = (0..n_sites).map(|n| instance.one_sided_load(n)).collect();
    let k_star: f64 = peaks.iter().sum();
    if k > k_star.floor() + 1e-9 {
        return Err(Error::Infeasible(format!(
            "population {k} exceeds the exact-path limit {k_star}"
        )));
    }

    // Site response to a shared marginal-value multiplier.
    let load_at = |n: usize, nu: f64| -> f64 {
        if peaks[n] <= 0.0 || nu >= instance.site_slope(n, 0.0) {
            return 0.0;
        }
        if nu <= instance.site_slope(n, peaks[n]) {
            return peaks[n];
        }
        bisect_decreasing(|y| instance.site_slope(n, y) - nu, 0.0, peaks[n])
    };
    let total_at = |nu: f64| -> f64 { (0..n_sites).map(|n| load_at(n, nu)).sum() };

    let slope_scale = (0..n_sites)
        .map(|n| instance.site_slope(n, 0.0))
        .fold(0.0f64, f64::max)
        .max(1e-30);
    let mut lo = 0.0;
    let mut hi = slope_scale;
    // total_at is non-increasing: total_at(0) = K* >= K, total_at(hi) = 0.
    for _ in 0..128 {
        let mid = 0.5 * (lo + hi);
        if total_at(mid) >= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut loads: Vec<f64> = (0..n_sites).map(|n| load_at(n, hi)).collect();
    let mut deficit = k - loads.iter().sum::<f64>();
    for n in 0..n_sites {
        if deficit <= 0.0 {
            break;
        }
        let room = load_at(n, lo) - loads[n];
        let add = deficit.min(room.max(0.0));
        loads[n] += add;
        deficit -= add;
    }

    // KKT check: interior sites sit at the shared slope, boundary sites on
    // the right side of it.
    let nu = hi;
    let mut residual = (loads.iter().sum::<f64>() - k).abs() / k.max(1.0);
    for n in 0..n_sites {
        let slope = instance.site_slope(n, loads[n]);
        let r = if loads[n] <= 1e-12 {
            (slope - nu).max(0.0)
        } else if loads[n] >= peaks[n] - 1e-12 {
            (nu - slope).max(0.0)
        } else {
            (slope - nu).abs()
        };
        residual = residual.max(r / slope_scale);
    }
    Ok((loads, residual))
}

/// Exact integer rounding below saturation: floor everything, then grant
/// the leftover units to the sites with the largest utility gain for one
/// more service (ties to the lowest index). Discrete concavity of the
/// per-site values makes this the integer optimum.
pub fn optimal_round_hotspot(instance: &HotspotInstance, fractional: &[f64]) -> Result<Vec<u32>> {
    let n_sites = instance.n_sites();
    if fractional.len() != n_sites {
        return Err(Error::Shape(format!(
            "{} load entries for {n_sites} sites",
            fractional.len()
        )));
    }
    let mut loads: Vec<u32> = fractional
        .iter()
        .zip(instance.vm_cap.iter())
        .map(|(y, cap)| y.clamp(0.0, f64::from(*cap)).floor() as u32)
        .collect();
    let mut remaining = i64::from(instance.k_users) - loads.iter().map(|y| i64::from(*y)).sum::<i64>();
    if remaining < 0 {
        return Err(Error::invalid("loads", "fractional loads oversum the population"));
    }
    while remaining > 0 {
        let mut gains: Vec<(usize, f64)> = (0..n_sites)
            .filter(|&n| loads[n] < instance.vm_cap[n])
            .map(|n| {
                let y = f64::from(loads[n]);
                (n, instance.site_value(n, y + 1.0) - instance.site_value(n, y))
            })
            .collect();
        gains.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let before = remaining;
        for (n, _) in gains {
            if remaining == 0 {
                break;
            }
            loads[n] += 1;
            remaining -= 1;
        }
        if remaining == before {
            return Err(Error::Infeasible("caps cannot absorb the population".into()));
        }
    }
    Ok(loads)
}

/// Diagnostics of the saturated-regime fixed-point solve.
#[derive(Debug, Clone, Copy)]
pub struct OverloadDiagnostics {
    pub outer_iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Continuous solve past saturation. The per-site utilities are concave
/// near their peaks but turn convex in the far tail, so the stationarity
/// system has several solution branches: loads spread evenly, or most
/// sites held at their peaks with the surplus parked on one site's tail.
/// The parameterized fixed point converges to whichever branch its start
/// point selects, so this runs it from a capacity-proportional start plus
/// one surplus-on-`s` start per site and keeps the best value.
pub fn solve_overloaded(instance: &HotspotInstance) -> Result<(Vec<f64>, OverloadDiagnostics)> {
    let n_sites = instance.n_sites();
    let k = f64::from(instance.k_users);
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| f64::from(*m)).collect();
    let cap_sum: f64 = caps.iter().sum();
    let peaks: Vec<f64> = (0..n_sites).map(|n| instance.one_sided_load(n)).collect();

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n_sites + 1);
    starts.push(caps.iter().map(|m| k * m / cap_sum).collect());
    for surplus_site in 0..n_sites {
        let mut y0 = peaks.clone();
        y0[surplus_site] = 0.0;
        let spare = (k - y0.iter().sum::<f64>()).max(0.0);
        y0[surplus_site] = spare.min(caps[surplus_site]);
        starts.push(y0);
    }

    let mut best: Option<(f64, Vec<f64>, OverloadDiagnostics)> = None;
    for y0 in starts {
        let (loads, diag) = overloaded_fixed_point(instance, y0)?;
        let value: f64 = loads
            .iter()
            .enumerate()
            .map(|(n, &y)| instance.site_value(n, y))
            .sum();
        let replace = match &best {
            None => true,
            Some((best_value, _, _)) => value > *best_value,
        };
        if replace {
            best = Some((value, loads, diag));
        }
    }
    let (_, loads, diag) = best.expect("at least one start");
    Ok((loads, diag))
}

/// One run of the parameterized fixed point from the given load seed.
fn overloaded_fixed_point(
    instance: &HotspotInstance,
    y0: Vec<f64>,
) -> Result<(Vec<f64>, OverloadDiagnostics)> {
    let n_sites = instance.n_sites();
    let k = f64::from(instance.k_users);
    let caps: Vec<f64> = instance.vm_cap.iter().map(|m| f64::from(*m)).collect();

    // Shift migration revenues so every site's is non-negative.
    let max_cost = instance
        .migration_cost
        .iter()
        .fold(0.0f64, |a, c| a.max(instance.cost_weight * c));
    let revenue: Vec<f64> = instance
        .migration_cost
        .iter()
        .map(|c| max_cost - instance.cost_weight * c)
        .collect();

    let mut alpha: Vec<f64> = (0..n_sites)
        .map(|n| 1.0 / instance.service_time(n, y0[n]))
        .collect();
    let mut beta: Vec<f64> = (0..n_sites)
        .map(|n| y0[n] / instance.service_time(n, y0[n]))
        .collect();
    let mut gamma: Vec<f64> = (0..n_sites).map(|n| revenue[n] * y0[n]).collect();

    let ln_stretch: Vec<f64> = (0..n_sites)
        .map(|n| (1.0 + instance.degradation[n]).ln())
        .collect();

    let load_at = |alpha: &[f64], beta: &[f64], n: usize, nu: f64| -> f64 {
        let surplus = alpha[n] + revenue[n] - nu;
        if surplus <= 0.0 {
            return 0.0;
        }
        let pressure = alpha[n] * beta[n] * ln_stretch[n] / instance.isolation_rate[n];
        if pressure <= 0.0 {
            return caps[n];
        }
        (1.0 + (surplus / pressure).ln() / ln_stretch[n]).clamp(0.0, caps[n])
    };

    let mut loads = y0;
    let mut best_loads = loads.clone();
    let mut best_residual = f64::INFINITY;
    let mut outer_done = 0usize;
    let tol = 1e-16 * n_sites as f64;

    for outer in 1..=200 {
        outer_done = outer;

        // Multiplier bracket: high end empties every site, low end fills
        // them; expand downward until the population fits.
        let total = |nu: f64| -> f64 { (0..n_sites).map(|n| load_at(&alpha, &beta, n, nu)).sum() };
        let scale = (0..n_sites)
            .map(|n| alpha[n] + revenue[n])
            .fold(0.0f64, f64::max);
        let mut hi = scale;
        let mut lo = 0.0;
        let mut guard = 0;
        while total(lo) < k {
            lo = if lo == 0.0 { -scale.max(1.0) } else { lo * 2.0 };
            guard += 1;
            if guard > 80 {
                return Err(Error::NoConvergence(
                    "population multiplier bracket expansion failed".into(),
                ));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) >= k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        loads = (0..n_sites).map(|n| load_at(&alpha, &beta, n, hi)).collect();
        let mut deficit = k - loads.iter().sum::<f64>();
        if deficit > 0.0 {
            // Bang-bang sites can make the response jump over K; fill the
            // gap from the low-multiplier solution in index order.
            for n in 0..n_sites {
                if deficit <= 0.0 {
                    break;
                }
                let room = (load_at(&alpha, &beta, n, lo) - loads[n]).max(0.0);
                let add = deficit.min(room).min(caps[n] - loads[n]);
                loads[n] += add;
                deficit -= add;
            }
        }

        // Consistency residuals and the damped move to their targets.
        let q: Vec<f64> = (0..n_sites).map(|n| instance.service_time(n, loads[n])).collect();
        let rev_scale = revenue.iter().fold(1e-30f64, |a, z| a.max(*z)).max(1e-30);
        let mut residual = 0.0f64;
        for n in 0..n_sites {
            let r1 = alpha[n] * q[n] - 1.0;
            let r2 = (beta[n] * q[n] - loads[n]) / k.max(1.0);
            let r3 = (gamma[n] - revenue[n] * loads[n]) / (rev_scale * k.max(1.0));
            residual += r1 * r1 + r2 * r2 + r3 * r3;
        }
        if residual < best_residual {
            best_residual = residual;
            best_loads.clone_from(&loads);
        }
        if residual < tol {
            break;
        }
        let mut step = 1.0;
        for m in 0..60 {
            step = 0.5f64.powi(m);
            let mut trial = 0.0f64;
            for n in 0..n_sites {
                let a = (1.0 - step) * alpha[n] + step / q[n];
                let b = (1.0 - step) * beta[n] + step * loads[n] / q[n];
                let g = (1.0 - step) * gamma[n] + step * revenue[n] * loads[n];
                let r1 = a * q[n] - 1.0;
                let r2 = (b * q[n] - loads[n]) / k.max(1.0);
                let r3 = (g - revenue[n] * loads[n]) / (rev_scale * k.max(1.0));
                trial += r1 * r1 + r2 * r2 + r3 * r3;
            }
            if trial <= (1.0 - 0.01 * step) * residual {
                break;
            }
        }
        for n in 0..n_sites {
            alpha[n] = (1.0 - step) * alpha[n] + step / q[n];
            beta[n] = (1.0 - step) * beta[n] + step * loads[n] / q[n];
            gamma[n] = (1.0 - step) * gamma[n] + step * revenue[n] * loads[n];
        }
    }

    let converged = best_residual < tol;
    Ok((
        best_loads,
        OverloadDiagnostics { outer_iterations: outer_done, residual: best_residual, converged },
    ))
}

/// Regime taken by [`solve_p4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HotspotRegime {
    /// Population at or below the utility peak: exact path.
    Exact,
    /// Population past the peak: parameterized solve plus rounding.
    Rounded,
}

impl std::fmt::Display for HotspotRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HotspotRegime::Exact => write!(f, "exact"),
            HotspotRegime::Rounded => write!(f, "rounded"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HotspotSolve {
    pub loads: Vec<u32>,
    pub objective: f64,
    pub fractional: Vec<f64>,
    pub k_star: f64,
    pub regime: HotspotRegime,
    pub converged: bool,
    pub outer_iterations: usize,
    pub residual: f64,
}

/// Full solve: picks the regime from the population against the utility
/// peak and returns integer loads with diagnostics.
pub fn solve_p4(instance: &HotspotInstance) -> Result<HotspotSolve> {
    let k_star = instance.k_star();
    let exact = f64::from(instance.k_users) <= k_star.floor() + 1e-9;
    if exact {
        let (fractional, residual) = solve_underloaded(instance)?;
        let loads = optimal_round_hotspot(instance, &fractional)?;
        let objective = instance.objective(&loads);
        Ok(HotspotSolve {
            loads,
            objective,
            fractional,
            k_star,
            regime: HotspotRegime::Exact,
            converged: residual <= 1e-8,
            outer_iterations: 1,
            residual,
        })
    } else {
        let (fractional, diag) = solve_overloaded(instance)?;
        let caps = instance.vm_cap.as_slice().expect("contiguous");
        let loads = round_loads(&fractional, caps, instance.k_users)?;
        let objective = instance.objective(&loads);
        Ok(HotspotSolve {
            loads,
            objective,
            fractional,
            k_star,
            regime: HotspotRegime::Rounded,
            converged: diag.converged,
            outer_iterations: diag.outer_iterations,
            residual: diag.residual,
        })
    }
}
