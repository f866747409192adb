//! Summary emitted by the end-to-end solve paths.

/// What a full solve produced, in evaluation units of the plain objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Objective of the recovered integral placement.
    pub utility: f64,
    /// Weighted offloading throughput component.
    pub sum_rate: f64,
    /// Unweighted migration cost component.
    pub total_cost: f64,
    /// Best value of the fractional relaxation seen; an estimate of the
    /// tightest bound the relaxation offers on the integral optimum.
    pub upper_bound: f64,
    /// `(upper_bound - utility) / |upper_bound|`, clamped at zero.
    pub gap_to_upper_bound: f64,
    /// Users whose serving site changed relative to the start of the slot.
    pub migrated_users: usize,
    /// Same, as a percentage of all users.
    pub migrated_pct: f64,
    /// Outer parameter-update rounds performed by the relaxation.
    pub outer_iterations: usize,
    /// Total inner dual iterations across all rounds.
    pub inner_iterations: usize,
    /// Final sum of squared consistency residuals (scale-normalized).
    pub residual: f64,
    /// Relative duality gap of the final inner solve.
    pub duality_gap: f64,
    /// Largest gap between averaged site loads and assigned column sums.
    pub constraint_violation: f64,
    /// Whether all tolerances were met within the iteration budgets.
    pub converged: bool,
}

impl SolveReport {
    /// Relative gap helper used everywhere a bound is compared to a value.
    pub fn relative_gap(bound: f64, value: f64) -> f64 {
        if bound == value {
            return 0.0;
        }
        let denom = bound.abs().max(1e-30);
        ((bound - value) / denom).max(0.0)
    }
}
