//! Problem data for the migration planner.
//!
//! A slot of the planning problem is described by an [`Instance`]: per-pair
//! uplink rates, per-pair computing rates in isolation, per-site degradation
//! factors for virtualization interference, VM capacities, and the cost of
//! moving each user's service away from its current site. The objective
//! evaluated by [`objective_p1`] trades weighted offloading throughput
//! against migration cost.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Uplink radio parameters for `K` users sharing one band over `N` sites.
#[derive(Debug, Clone)]
pub struct RateParams {
    bandwidth_hz: f64,
    tx_power_w: Array1<f64>,
    noise_power_w: Array1<f64>,
    channel_gain: Array2<f64>,
}

impl RateParams {
    /// Validates shapes and ranges. `channel_gain` is `K x N`, `tx_power_w`
    /// has length `K`, `noise_power_w` length `N`.
    pub fn new(
        bandwidth_hz: f64,
        tx_power_w: Array1<f64>,
        noise_power_w: Array1<f64>,
        channel_gain: Array2<f64>,
    ) -> Result<Self> {
        if !(bandwidth_hz > 0.0) || !bandwidth_hz.is_finite() {
            return Err(Error::invalid("bandwidth_hz", "must be positive and finite"));
        }
        let (k, n) = channel_gain.dim();
        if k == 0 || n == 0 {
            return Err(Error::Shape("channel_gain must be non-empty".into()));
        }
        if tx_power_w.len() != k {
            return Err(Error::Shape(format!(
                "tx_power_w has {} entries, expected {} users",
                tx_power_w.len(),
                k
            )));
        }
        if noise_power_w.len() != n {
            return Err(Error::Shape(format!(
                "noise_power_w has {} entries, expected {} sites",
                noise_power_w.len(),
                n
            )));
        }
        if tx_power_w.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("tx_power_w", "all entries must be positive and finite"));
        }
        if noise_power_w.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise_power_w", "all entries must be positive and finite"));
        }
        if channel_gain.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("channel_gain", "all entries must be non-negative and finite"));
        }
        Ok(Self { bandwidth_hz, tx_power_w, noise_power_w, channel_gain })
    }

    pub fn n_users(&self) -> usize {
        self.channel_gain.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.channel_gain.ncols()
    }

    /// Achievable uplink rate in bit/s of user `k` at site `n`.
    ///
    /// Every other user transmits on the same band, so interference at `n`
    /// sums over all of them regardless of where they are served.
    pub fn uplink_rate(&self, k: usize, n: usize) -> f64 {
        let signal = self.tx_power_w[k] * self.channel_gain[[k, n]];
        if signal == 0.0 {
            return 0.0;
        }
        let mut interference = 0.0;
        for j in 0..self.n_users() {
            if j != k {
                interference += self.tx_power_w[j] * self.channel_gain[[j, n]];
            }
        }
        let sinr = signal / (self.noise_power_w[n] + interference);
        self.bandwidth_hz * (1.0 + sinr).log2()
    }

    /// Full `K x N` rate matrix.
    pub fn rate_matrix(&self) -> Array2<f64> {
        let (k_users, n_sites) = self.channel_gain.dim();
        Array2::from_shape_fn((k_users, n_sites), |(k, n)| self.uplink_rate(k, n))
    }

    /// Uplink SINR of every pair, with the same all-users interference model
    /// as [`RateParams::uplink_rate`].
    pub fn sinr_matrix(&self) -> Array2<f64> {
        let (k_users, n_sites) = self.channel_gain.dim();
        // Total received power per site, then subtract the user of interest.
        let mut totals = vec![0.0f64; n_sites];
        for k in 0..k_users {
            for n in 0..n_sites {
                totals[n] += self.tx_power_w[k] * self.channel_gain[[k, n]];
            }
        }
        Array2::from_shape_fn((k_users, n_sites), |(k, n)| {
            let signal = self.tx_power_w[k] * self.channel_gain[[k, n]];
            signal / (self.noise_power_w[n] + (totals[n] - signal).max(0.0))
        })
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn tx_power_w(&self) -> &Array1<f64> {
        &self.tx_power_w
    }

    pub fn noise_power_w(&self) -> &Array1<f64> {
        &self.noise_power_w
    }

    pub fn channel_gain(&self) -> &Array2<f64> {
        &self.channel_gain
    }
}

/// Computing-side parameters: isolated per-pair throughput, per-site
/// degradation under VM multiplexing, and VM capacities.
#[derive(Debug, Clone)]
pub struct ComputeParams {
    isolation_rate: Array2<f64>,
    degradation: Array1<f64>,
    vm_cap: Array1<u32>,
}

impl ComputeParams {
    pub fn new(
        isolation_rate: Array2<f64>,
        degradation: Array1<f64>,
        vm_cap: Array1<u32>,
    ) -> Result<Self> {
        let (k, n) = isolation_rate.dim();
        if k == 0 || n == 0 {
            return Err(Error::Shape("isolation_rate must be non-empty".into()));
        }
        if degradation.len() != n || vm_cap.len() != n {
            return Err(Error::Shape(format!(
                "degradation/vm_cap must have {} entries (one per site)",
                n
            )));
        }
        if isolation_rate.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("isolation_rate", "all entries must be positive and finite"));
        }
        if degradation.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("degradation", "all entries must be positive and finite"));
        }
        if vm_cap.iter().any(|m| *m == 0) {
            return Err(Error::invalid("vm_cap", "all entries must be at least 1"));
        }
        if (k as u64) > vm_cap.iter().map(|m| *m as u64).sum::<u64>() {
            return Err(Error::Infeasible(format!(
                "total VM capacity {} is below the number of users {}",
                vm_cap.iter().map(|m| *m as u64).sum::<u64>(),
                k
            )));
        }
        Ok(Self { isolation_rate, degradation, vm_cap })
    }

    /// Effective computing rate of user `k` at site `n` when the site hosts
    /// `load >= 1` VMs: each additional co-located VM stretches execution
    /// time by a factor `1 + d`.
    pub fn computation_rate(&self, k: usize, n: usize, load: u32) -> f64 {
        assert!(load >= 1, "a served user implies load >= 1");
        self.isolation_rate[[k, n]] * (1.0 + self.degradation[n]).powi(1 - load as i32)
    }

    pub fn vm_cap(&self) -> &Array1<u32> {
        &self.vm_cap
    }
}

/// Combined rate through the radio and computing stages. The two run in
/// series, so the slower stage dominates; a dead stage kills the pair.
pub fn offloading_rate(radio_rate: f64, compute_rate: f64) -> f64 {
    if radio_rate <= 0.0 || compute_rate <= 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / radio_rate + 1.0 / compute_rate)
}

/// [`offloading_rate`] with the compute stage degraded to the given load.
pub fn offloading_rate_at_load(
    radio_rate: f64,
    isolation_rate: f64,
    degradation: f64,
    load: u32,
) -> f64 {
    if load == 0 {
        return 0.0;
    }
    offloading_rate(radio_rate, isolation_rate * (1.0 + degradation).powi(1 - load as i32))
}

/// Migration-cost description. `raw_cost[[k, j, n]]` is what moving user
/// `k`'s service from site `j` to site `n` costs; staying put is free.
#[derive(Debug, Clone)]
pub struct CostParams {
    raw_cost: Array3<f64>,
    cost_weight: f64,
    rate_weight: Array1<f64>,
}

impl CostParams {
    pub fn new(raw_cost: Array3<f64>, cost_weight: f64, rate_weight: Array1<f64>) -> Result<Self> {
        let (k, n1, n2) = raw_cost.dim();
        if k == 0 || n1 == 0 || n1 != n2 {
            return Err(Error::Shape(format!(
                "raw_cost must be K x N x N, got {} x {} x {}",
                k, n1, n2
            )));
        }
        if rate_weight.len() != k {
            return Err(Error::Shape(format!("rate_weight must have {} entries", k)));
        }
        if raw_cost.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid("raw_cost", "all entries must be non-negative and finite"));
        }
        for u in 0..k {
            for j in 0..n1 {
                if raw_cost[[u, j, j]] != 0.0 {
                    return Err(Error::invalid(
                        "raw_cost",
                        format!("staying at site {} must cost user {} nothing", j, u),
                    ));
                }
            }
        }
        if !(cost_weight >= 0.0) || !cost_weight.is_finite() {
            return Err(Error::invalid("cost_weight", "must be non-negative and finite"));
        }
        if rate_weight.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("rate_weight", "all entries must be positive and finite"));
        }
        Ok(Self { raw_cost, cost_weight, rate_weight })
    }

    /// Collapses the cost tensor against each user's current site:
    /// `collapsed[[k, n]]` is the cost of user `k` ending the slot at `n`.
    pub fn collapse(&self, initial_site: &[usize]) -> Result<Array2<f64>> {
        let (k, n, _) = self.raw_cost.dim();
        if initial_site.len() != k {
            return Err(Error::Shape(format!("initial_site must have {} entries", k)));
        }
        if let Some(bad) = initial_site.iter().find(|s| **s >= n) {
            return Err(Error::invalid("initial_site", format!("site index {} out of range", bad)));
        }
        Ok(Array2::from_shape_fn((k, n), |(u, to)| self.raw_cost[[u, initial_site[u], to]]))
    }

    pub fn cost_weight(&self) -> f64 {
        self.cost_weight
    }

    pub fn rate_weight(&self) -> &Array1<f64> {
        &self.rate_weight
    }
}

/// One slot of the planning problem, fully evaluated: all matrices are
/// `K x N` and the migration cost is already collapsed against the current
/// placement.
#[derive(Debug, Clone)]
pub struct Instance {
    pub(crate) rate: Array2<f64>,
    pub(crate) isolation_rate: Array2<f64>,
    pub(crate) degradation: Array1<f64>,
    pub(crate) vm_cap: Array1<u32>,
    pub(crate) rate_weight: Array1<f64>,
    pub(crate) cost_weight: f64,
    pub(crate) migration_cost: Array2<f64>,
    pub(crate) initial_site: Vec<usize>,
    /// Uniform shift making every shifted cost non-negative.
    pub(crate) shift: f64,
    /// `shift - cost_weight * migration_cost`, elementwise non-negative.
    pub(crate) shifted_cost: Array2<f64>,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rate: Array2<f64>,
        isolation_rate: Array2<f64>,
        degradation: Array1<f64>,
        vm_cap: Array1<u32>,
        rate_weight: Array1<f64>,
        cost_weight: f64,
        migration_cost: Array2<f64>,
        initial_site: Vec<usize>,
    ) -> Result<Self> {
        let (k, n) = rate.dim();
        if k == 0 || n == 0 {
            return Err(Error::Shape("rate must be non-empty".into()));
        }
        for (name, dim) in [("isolation_rate", isolation_rate.dim()), ("migration_cost", migration_cost.dim())] {
            if dim != (k, n) {
                return Err(Error::Shape(format!("{} must be {} x {}", name, k, n)));
            }
        }
        if degradation.len() != n || vm_cap.len() != n {
            return Err(Error::Shape(format!("degradation/vm_cap must have {} entries", n)));
        }
        if rate_weight.len() != k || initial_site.len() != k {
            return Err(Error::Shape(format!("rate_weight/initial_site must have {} entries", k)));
        }
        if rate.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("rate", "all entries must be non-negative and finite"));
        }
        if isolation_rate.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("isolation_rate", "all entries must be positive and finite"));
        }
        if degradation.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid("degradation", "all entries must be positive and finite"));
        }
        if vm_cap.iter().any(|m| *m == 0) {
            return Err(Error::invalid("vm_cap", "all entries must be at least 1"));
        }
        if (k as u64) > vm_cap.iter().map(|m| *m as u64).sum::<u64>() {
            return Err(Error::Infeasible(format!(
                "total VM capacity {} is below the number of users {}",
                vm_cap.iter().map(|m| *m as u64).sum::<u64>(),
                k
            )));
        }
        if rate_weight.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("rate_weight", "all entries must be positive and finite"));
        }
        if !(cost_weight >= 0.0) || !cost_weight.is_finite() {
            return Err(Error::invalid("cost_weight", "must be non-negative and finite"));
        }
        if migration_cost.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid("migration_cost", "all entries must be non-negative and finite"));
        }
        for (u, s) in initial_site.iter().enumerate() {
            if *s >= n {
                return Err(Error::invalid("initial_site", format!("site index {} out of range", s)));
            }
            if migration_cost[[u, *s]] != 0.0 {
                return Err(Error::invalid(
                    "migration_cost",
                    format!("user {} must pay nothing to stay at site {}", u, s),
                ));
            }
        }
        // Current placement must itself be feasible.
        let mut loads = vec![0u32; n];
        for s in &initial_site {
            loads[*s] += 1;
        }
        for (site, (&load, &cap)) in loads.iter().zip(vm_cap.iter()).enumerate() {
            if load > cap {
                return Err(Error::Infeasible(format!(
                    "initial load {} at site {} exceeds VM capacity {}",
                    load, site, cap
                )));
            }
        }

        // Smallest shift that keeps every shifted cost non-negative.
        let shift = migration_cost.iter().fold(0.0f64, |a, c| a.max(cost_weight * c));
        let shifted_cost = migration_cost.mapv(|c| shift - cost_weight * c);
        Ok(Self {
            rate,
            isolation_rate,
            degradation,
            vm_cap,
            rate_weight,
            cost_weight,
            migration_cost,
            initial_site,
            shift,
            shifted_cost,
        })
    }

    pub fn n_users(&self) -> usize {
        self.rate.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.rate.ncols()
    }

    pub fn rate(&self) -> &Array2<f64> {
        &self.rate
    }

    pub fn isolation_rate(&self) -> &Array2<f64> {
        &self.isolation_rate
    }

    pub fn degradation(&self) -> &Array1<f64> {
        &self.degradation
    }

    pub fn vm_cap(&self) -> &Array1<u32> {
        &self.vm_cap
    }

    pub fn rate_weight(&self) -> &Array1<f64> {
        &self.rate_weight
    }

    pub fn cost_weight(&self) -> f64 {
        self.cost_weight
    }

    pub fn migration_cost(&self) -> &Array2<f64> {
        &self.migration_cost
    }

    pub fn initial_site(&self) -> &[usize] {
        &self.initial_site
    }

    pub fn cost_shift(&self) -> f64 {
        self.shift
    }

    pub fn shifted_cost(&self) -> &Array2<f64> {
        &self.shifted_cost
    }

    /// Offloading rate of user `k` served at site `n` carrying `load` VMs.
    pub fn offload_rate_at(&self, k: usize, n: usize, load: u32) -> f64 {
        offloading_rate_at_load(
            self.rate[[k, n]],
            self.isolation_rate[[k, n]],
            self.degradation[n],
            load,
        )
    }
}

/// Integral placement of every user on one site, with per-site loads kept
/// consistent by construction (each row of the implied decision matrix has
/// exactly one `1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    serving: Vec<usize>,
    loads: Vec<u32>,
}

impl Assignment {
    /// Builds and checks an assignment against site count and VM caps.
    pub fn new(serving: Vec<usize>, n_sites: usize, vm_cap: &[u32]) -> Result<Self> {
        if vm_cap.len() != n_sites {
            return Err(Error::Shape(format!("vm_cap must have {} entries", n_sites)));
        }
        let mut loads = vec![0u32; n_sites];
        for (user, site) in serving.iter().enumerate() {
            if *site >= n_sites {
                return Err(Error::Infeasible(format!(
                    "user {} assigned to site {} but only {} sites exist",
                    user, site, n_sites
                )));
            }
            loads[*site] += 1;
        }
        for (site, (&load, &cap)) in loads.iter().zip(vm_cap.iter()).enumerate() {
            if load > cap {
                return Err(Error::Infeasible(format!(
                    "load {} at site {} exceeds VM capacity {}",
                    load, site, cap
                )));
            }
        }
        Ok(Self { serving, loads })
    }

    pub fn n_users(&self) -> usize {
        self.serving.len()
    }

    pub fn serving(&self) -> &[usize] {
        &self.serving
    }

    pub fn loads(&self) -> &[u32] {
        &self.loads
    }

    /// Users whose serving site differs from `initial_site`.
    pub fn migrated_from(&self, initial_site: &[usize]) -> usize {
        self.serving.iter().zip(initial_site).filter(|(a, b)| a != b).count()
    }
}

/// Objective value split into its components:
/// `utility = sum_rate - cost_weight * total_cost`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub utility: f64,
    pub sum_rate: f64,
    pub total_cost: f64,
}

/// Evaluates the planning objective for an integral assignment: weighted
/// offloading throughput at the loads the assignment induces, minus the
/// weighted migration cost.
pub fn objective_p1(instance: &Instance, assignment: &Assignment) -> Result<ObjectiveBreakdown> {
    if assignment.n_users() != instance.n_users() {
        return Err(Error::Shape(format!(
            "assignment covers {} users, instance has {}",
            assignment.n_users(),
            instance.n_users()
        )));
    }
    if assignment.loads().len() != instance.n_sites() {
        return Err(Error::Shape(format!(
            "assignment spans {} sites, instance has {}",
            assignment.loads().len(),
            instance.n_sites()
        )));
    }
    for (site, (&load, &cap)) in assignment.loads().iter().zip(instance.vm_cap.iter()).enumerate() {
        if load > cap {
            return Err(Error::Infeasible(format!(
                "load {} at site {} exceeds VM capacity {}",
                load, site, cap
            )));
        }
    }
    let mut sum_rate = 0.0;
    let mut total_cost = 0.0;
    for (k, &n) in assignment.serving().iter().enumerate() {
        let load = assignment.loads()[n];
        sum_rate += instance.rate_weight[k] * instance.offload_rate_at(k, n, load);
        total_cost += instance.migration_cost[[k, n]];
    }
    Ok(ObjectiveBreakdown {
        utility: sum_rate - instance.cost_weight * total_cost,
        sum_rate,
        total_cost,
    })
}
