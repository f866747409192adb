//! From a fractional relaxation solution back to a feasible assignment:
//! round the per-site loads to integers, then match users to VM slots with
//! the exact assignment solver.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hungarian;
use crate::model::{objective_p1, Assignment, Instance};
use crate::relaxed_solver::{vertex_ascent, FractionalSolution};
use crate::report::SolveReport;

/// Rounds fractional per-site loads to integers summing to `total` without
/// breaching `caps`. Entries are clamped to `[0, cap]`, floored, and the
/// remaining units go to the largest fractional parts (ties to the lowest
/// site index). Among integer vectors summing to `total` this minimizes
/// both the l1 and l2 distance to the input.
pub fn round_loads(fractional: &[f64], caps: &[u32], total: u32) -> Result<Vec<u32>> {
    if fractional.len() != caps.len() {
        return Err(Error::Shape(format!(
            "loads have {} entries but caps have {}",
            fractional.len(),
            caps.len()
        )));
    }
    if fractional.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("loads", "non-finite entry"));
    }
    let cap_sum: u64 = caps.iter().map(|c| u64::from(*c)).sum();
    if cap_sum < u64::from(total) {
        return Err(Error::Infeasible(format!(
            "caps admit {cap_sum} users in total but {total} must be placed"
        )));
    }

    let n_sites = caps.len();
    let mut loads = vec![0u32; n_sites];
    let mut frac = vec![0.0f64; n_sites];
    let mut assigned: u64 = 0;
    for n in 0..n_sites {
        let clamped = fractional[n].clamp(0.0, caps[n] as f64);
        let floor = clamped.floor();
        loads[n] = floor as u32;
        frac[n] = clamped - floor;
        assigned += u64::from(loads[n]);
    }

    let mut order: Vec<usize> = (0..n_sites).collect();
    while assigned < u64::from(total) {
        // Grant +1 to eligible sites in decreasing fractional-part order.
        // A granted site's key drops by one so repeat grants (possible only
        // when caps block most sites) rank behind everything untouched.
        order.sort_by(|a, b| frac[*b].total_cmp(&frac[*a]).then(a.cmp(b)));
        let mut granted = false;
        for &n in &order {
            if assigned == u64::from(total) {
                break;
            }
            if loads[n] < caps[n] {
                loads[n] += 1;
                frac[n] -= 1.0;
                assigned += 1;
                granted = true;
            }
        }
        debug_assert!(granted, "caps were validated to admit the total");
        if !granted {
            break;
        }
    }
    while assigned > u64::from(total) {
        // Over-committed floors (possible only when the input oversums):
        // shed from the smallest fractional parts, ties to the highest
        // index so early sites keep their units.
        order.sort_by(|a, b| frac[*a].total_cmp(&frac[*b]).then(b.cmp(a)));
        let mut shed = false;
        for &n in &order {
            if assigned == u64::from(total) {
                break;
            }
            if loads[n] > 0 {
                loads[n] -= 1;
                frac[n] += 1.0;
                assigned -= 1;
                shed = true;
            }
        }
        if !shed {
            break;
        }
    }
    Ok(loads)
}

/// Slot-level assignment problem at fixed integer loads: site `n`
/// contributes `loads[n]` identical columns whose utility for user `k` is
/// the weighted offloading rate at that load minus the weighted migration
/// cost.
#[derive(Debug, Clone)]
pub struct SlotProblem {
    /// Square utility matrix, one column per VM slot.
    pub utility: Array2<f64>,
    /// Owning site of each slot column.
    pub slot_site: Vec<usize>,
}

pub fn lap_utilities(instance: &Instance, loads: &[u32]) -> Result<SlotProblem> {
    let (k_users, n_sites) = (instance.n_users(), instance.n_sites());
    if loads.len() != n_sites {
        return Err(Error::Shape(format!(
            "{} load entries for {} sites",
            loads.len(),
            n_sites
        )));
    }
    let total: u64 = loads.iter().map(|y| u64::from(*y)).sum();
    if total != k_users as u64 {
        return Err(Error::Shape(format!(
            "loads sum to {total} but there are {k_users} users"
        )));
    }
    for n in 0..n_sites {
        if loads[n] > instance.vm_cap()[n] {
            return Err(Error::Infeasible(format!(
                "load {} exceeds cap {} at site {n}",
                loads[n],
                instance.vm_cap()[n]
            )));
        }
    }

    let mut slot_site = Vec::with_capacity(k_users);
    for (n, &y) in loads.iter().enumerate() {
        slot_site.extend(std::iter::repeat(n).take(y as usize));
    }
    let utility = Array2::from_shape_fn((k_users, k_users), |(k, j)| {
        let n = slot_site[j];
        instance.rate_weight()[k] * instance.offload_rate_at(k, n, loads[n])
            - instance.cost_weight() * instance.migration_cost()[[k, n]]
    });
    Ok(SlotProblem { utility, slot_site })
}

/// Compositions of `total` over `bins` ignoring caps, capped at `limit`.
/// The incremental binomial stays exact at every step and is monotone, so
/// the walk can stop as soon as the count passes the cap.
fn composition_bound(total: usize, bins: usize, limit: u128) -> u128 {
    if bins == 0 {
        return if total == 0 { 1 } else { 0 };
    }
    let (n, r) = ((total + bins - 1) as u128, (bins - 1) as u128);
    let mut acc: u128 = 1;
    for i in 1..=r {
        acc = acc * (n - r + i) / i;
        if acc > limit {
            return acc;
        }
    }
    acc
}

/// Feasible load vectors small instances can afford to scan outright.
const LOAD_SCAN_LIMIT: u128 = 4096;

fn scan_loads(
    instance: &Instance,
    suffix_cap: &[u32],
    site: usize,
    remaining: u32,
    loads: &mut [u32],
    best: &mut Option<(Vec<usize>, f64)>,
) -> Result<()> {
    let caps = instance.vm_cap();
    if site + 1 == loads.len() {
        if remaining > caps[site] {
            return Ok(());
        }
        loads[site] = remaining;
        let slots = lap_utilities(instance, loads)?;
        let matching = hungarian::solve_max(&slots.utility)?;
        let value: f64 = matching
            .row_to_col
            .iter()
            .enumerate()
            .map(|(k, &j)| slots.utility[[k, j]])
            .sum();
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            let serving = matching.row_to_col.iter().map(|&j| slots.slot_site[j]).collect();
            *best = Some((serving, value));
        }
        return Ok(());
    }
    let tail = suffix_cap[site + 1];
    let lo = remaining.saturating_sub(tail);
    let hi = remaining.min(caps[site]);
    for y in lo..=hi {
        loads[site] = y;
        scan_loads(instance, suffix_cap, site + 1, remaining - y, loads, best)?;
    }
    Ok(())
}

/// Exact best placement by scanning every feasible load vector: at fixed
/// integer loads the slot matching is exact, so the scan is the true
/// optimum. Returns `None` when the load-vector space is too large.
pub fn best_by_load_scan(instance: &Instance) -> Result<Option<(Vec<usize>, f64)>> {
    let (k_users, n_sites) = (instance.n_users(), instance.n_sites());
    if composition_bound(k_users, n_sites, LOAD_SCAN_LIMIT) > LOAD_SCAN_LIMIT {
        return Ok(None);
    }
    let caps = instance.vm_cap();
    let mut suffix_cap = vec![0u32; n_sites + 1];
    for n in (0..n_sites).rev() {
        suffix_cap[n] = suffix_cap[n + 1].saturating_add(caps[n]);
    }
    let mut loads = vec![0u32; n_sites];
    let mut best = None;
    scan_loads(instance, &suffix_cap, 0, k_users as u32, &mut loads, &mut best)?;
    Ok(best)
}

/// Rounds the relaxation's loads, solves the slot assignment exactly, and
/// wraps the result with the relaxation's diagnostics. The reported upper
/// bound is the larger of the relaxation bound and the achieved utility,
/// so the gap is always well defined.
pub fn recover_integer(
    instance: &Instance,
    fractional: &FractionalSolution,
) -> Result<(Assignment, SolveReport)> {
    let k_users = instance.n_users();
    let caps = instance.vm_cap().as_slice().expect("contiguous");
    let y = fractional.y.as_slice().expect("contiguous");
    let loads = round_loads(y, caps, k_users as u32)?;

    let slots = lap_utilities(instance, &loads)?;
    let matching = hungarian::solve_max(&slots.utility)?;
    let mut serving: Vec<usize> = matching
        .row_to_col
        .iter()
        .map(|&j| slots.slot_site[j])
        .collect();

    // The rounded loads can pin the matching into a worse basin than the
    // placement the relaxation solve already holds; climb from the rounded
    // point and keep whichever of the two ends higher. When the instance is
    // small enough, the full load-vector scan settles the question exactly.
    let mut best_value = vertex_ascent(instance, &mut serving);
    if !fractional.incumbent.is_empty() {
        let mut settled = fractional.incumbent.clone();
        let settled_value = vertex_ascent(instance, &mut settled);
        if settled_value > best_value {
            serving = settled;
            best_value = settled_value;
        }
    }
    if let Some((scanned, scan_value)) = best_by_load_scan(instance)? {
        if scan_value > best_value {
            serving = scanned;
        }
    }
    let assignment = Assignment::new(serving, instance.n_sites(), caps)?;

    let breakdown = objective_p1(instance, &assignment)?;
    let migrated = assignment.migrated_from(instance.initial_site());
    let upper_bound = fractional.upper_bound.max(breakdown.utility);
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
        duality_gap: fractional.duality_gap,
        constraint_violation: fractional.constraint_violation,
        converged: fractional.converged,
    };
    Ok((assignment, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integral_input_passes_through() {
        let loads = round_loads(&[2.0, 0.0, 3.0], &[5, 5, 5], 5).unwrap();
        assert_eq!(loads, vec![2, 0, 3]);
    }

    #[test]
    fn leftover_unit_goes_to_the_largest_fractional_part() {
        let loads = round_loads(&[2.3, 1.7, 2.0], &[10, 10, 10], 6).unwrap();
        assert_eq!(loads, vec![2, 2, 2]);
    }

    #[test]
    fn fractional_ties_break_toward_the_lowest_index() {
        let loads = round_loads(&[2.5, 1.5, 2.0], &[10, 10, 10], 6).unwrap();
        assert_eq!(loads, vec![3, 1, 2]);
    }

    #[test]
    fn caps_push_overflow_to_the_next_site() {
        // Site 0 is clamped at its cap, so both leftover units land on 1.
        let loads = round_loads(&[5.0, 1.0], &[3, 4], 6).unwrap();
        assert_eq!(loads, vec![3, 3]);
    }

    #[test]
    fn oversummed_input_sheds_from_the_highest_index_on_ties() {
        let loads = round_loads(&[3.0, 3.0], &[4, 4], 5).unwrap();
        assert_eq!(loads, vec![3, 2]);
    }

    #[test]
    fn impossible_totals_are_rejected() {
        assert!(round_loads(&[1.0, 1.0], &[1, 1], 3).is_err());
        assert!(round_loads(&[1.0], &[1, 1], 2).is_err());
        assert!(round_loads(&[f64::NAN, 1.0], &[2, 2], 2).is_err());
    }

    /// Every integer vector with the given sum and caps.
    fn for_each_composition(total: u32, caps: &[u32], mut f: impl FnMut(&[u32])) {
        fn descend(
            site: usize,
            left: u32,
            caps: &[u32],
            current: &mut Vec<u32>,
            f: &mut impl FnMut(&[u32]),
        ) {
            if site + 1 == caps.len() {
                if left <= caps[site] {
                    current.push(left);
                    f(current);
                    current.pop();
                }
                return;
            }
            let tail: u32 = caps[site + 1..].iter().sum();
            let lo = left.saturating_sub(tail);
            for y in lo..=left.min(caps[site]) {
                current.push(y);
                descend(site + 1, left - y, caps, current, f);
                current.pop();
            }
        }
        let mut current = Vec::with_capacity(caps.len());
        descend(0, total, caps, &mut current, &mut f);
    }

    #[test]
    fn rounding_minimizes_both_distance_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n_sites = rng.random_range(2..=5);
            let total = rng.random_range(1..=12u32);
            let caps = vec![12u32; n_sites];
            // Random fractional point summing exactly to the total.
            let mut y: Vec<f64> = (0..n_sites).map(|_| rng.random_range(0.0..1.0)).collect();
            let sum: f64 = y.iter().sum();
            for v in y.iter_mut() {
                *v *= total as f64 / sum;
            }
            let rounded = round_loads(&y, &caps, total).unwrap();

            let dist = |candidate: &[u32]| -> (f64, f64) {
                let mut l1 = 0.0;
                let mut l2 = 0.0;
                for (c, target) in candidate.iter().zip(&y) {
                    let d = (*c as f64 - target).abs();
                    l1 += d;
                    l2 += d * d;
                }
                (l1, l2)
            };
            let (mut best_l1, mut best_l2) = (f64::INFINITY, f64::INFINITY);
            for_each_composition(total, &caps, |candidate| {
                let (l1, l2) = dist(candidate);
                best_l1 = best_l1.min(l1);
                best_l2 = best_l2.min(l2);
            });
            let (l1, l2) = dist(&rounded);
            assert!(l1 <= best_l1 + 1e-9, "l1 {l1} vs best {best_l1} for {y:?}");
            assert!(l2 <= best_l2 + 1e-9, "l2 {l2} vs best {best_l2} for {y:?}");
        }
    }

    fn three_user_instance() -> Instance {
        Instance::new(
            arr2(&[[6.0, 3.0, 4.0], [2.5, 5.0, 3.0], [4.0, 4.0, 5.0]]),
            arr2(&[[8.0, 7.0, 6.0], [6.0, 9.0, 7.0], [7.0, 6.0, 8.0]]),
            arr1(&[0.5, 0.4, 0.3]),
            arr1(&[3, 3, 3]),
            arr1(&[1.0, 0.8, 1.2]),
            0.5,
            arr2(&[[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0]]),
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn slot_columns_replicate_sites_by_load() {
        let instance = three_user_instance();
        let slots = lap_utilities(&instance, &[2, 0, 1]).unwrap();
        assert_eq!(slots.slot_site, vec![0, 0, 2]);
        // Column utility is the weighted rate at the fixed load minus the
        // weighted migration cost.
        let expected = instance.rate_weight()[1] * instance.offload_rate_at(1, 0, 2)
            - 0.5 * instance.migration_cost()[[1, 0]];
        assert_relative_eq!(slots.utility[[1, 0]], expected);
        assert_relative_eq!(slots.utility[[1, 0]], slots.utility[[1, 1]]);
        // Load one means the isolation rate applies unchanged.
        let lone = lap_utilities(&instance, &[1, 1, 1]).unwrap();
        let v = 1.0 / (1.0 / instance.rate()[[2, 2]] + 1.0 / instance.isolation_rate()[[2, 2]]);
        assert_relative_eq!(
            lone.utility[[2, 2]],
            instance.rate_weight()[2] * v - 0.5 * instance.migration_cost()[[2, 2]]
        );
    }

    #[test]
    fn mismatched_loads_are_rejected() {
        let instance = three_user_instance();
        assert!(lap_utilities(&instance, &[2, 1]).is_err());
        assert!(lap_utilities(&instance, &[2, 1, 1]).is_err());
        assert!(lap_utilities(&instance, &[3, 0, 0]).is_ok());
    }

    fn binary_fractional(instance: &Instance, serving: &[usize]) -> FractionalSolution {
        let (k_users, n_sites) = (instance.n_users(), instance.n_sites());
        let mut x = Array2::zeros((k_users, n_sites));
        let mut y = Array1::zeros(n_sites);
        for (k, &n) in serving.iter().enumerate() {
            x[[k, n]] = 1.0;
            y[n] += 1.0;
        }
        FractionalSolution {
            x,
            y,
            upper_bound: 0.0,
            residual: 0.0,
            residual_max: [0.0; 3],
            duality_gap: 0.0,
            constraint_violation: 0.0,
            incumbent: vec![],
            outer_iterations: 1,
            inner_iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn binary_fractional_solutions_recover_at_least_their_own_utility() {
        let instance = three_user_instance();
        for serving in [vec![0, 1, 2], vec![1, 1, 2], vec![2, 0, 1]] {
            let assignment = Assignment::new(serving.clone(), 3, &[3, 3, 3]).unwrap();
            let direct = objective_p1(&instance, &assignment).unwrap().utility;
            let mut fractional = binary_fractional(&instance, &serving);
            fractional.upper_bound = direct;
            let (_, report) = recover_integer(&instance, &fractional).unwrap();
            // The slot matching recovers the seed placement at those loads
            // and the climb afterwards can only raise it.
            assert!(report.utility >= direct - 1e-12 * direct.abs());
            assert!(report.upper_bound >= report.utility);
            assert!(report.gap_to_upper_bound >= 0.0);
        }
    }

    #[test]
    fn report_counts_migrations_against_the_initial_placement() {
        let instance = three_user_instance();
        let fractional = binary_fractional(&instance, &[1, 0, 2]);
        let (assignment, report) = recover_integer(&instance, &fractional).unwrap();
        let migrated = assignment.migrated_from(instance.initial_site());
        assert_eq!(report.migrated_users, migrated);
        assert_relative_eq!(report.migrated_pct, 100.0 * migrated as f64 / 3.0);
    }
}
