//! Independent reference solvers for testing, plus the two comparison
//! baselines. The enumerators are deliberately naive: they share no code
//! with the production solvers so agreement between the two is meaningful.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hotspot::HotspotInstance;
use crate::model::{objective_p1, Assignment, Instance, ObjectiveBreakdown};

/// Global optimum of the placement problem by enumerating every
/// cap-feasible assignment. Ties resolve to the lexicographically smallest
/// serving vector. Refuses instances beyond `n_sites^n_users = 1e8`.
pub fn exhaustive_p1(instance: &Instance) -> Result<(Assignment, ObjectiveBreakdown)> {
    let (k_users, n_sites) = (instance.n_users(), instance.n_sites());
    let combos = (n_sites as f64).powi(k_users as i32);
    if combos > 1e8 {
        return Err(Error::TooLarge(format!(
            "{combos:.3e} placements to enumerate; use the relaxation solver instead"
        )));
    }
    let caps = instance.vm_cap();

    // value[k][n][y-1]: user k's net utility on site n at integer load y.
    let max_load = k_users;
    let mut value = vec![f64::NEG_INFINITY; k_users * n_sites * max_load];
    for k in 0..k_users {
        for n in 0..n_sites {
            let net = instance.cost_weight() * instance.migration_cost()[[k, n]];
            for y in 1..=max_load.min(caps[n] as usize) {
                value[(k * n_sites + n) * max_load + (y - 1)] =
                    instance.rate_weight()[k] * instance.offload_rate_at(k, n, y as u32) - net;
            }
        }
    }

    let mut serving = vec![0usize; k_users];
    let mut loads = vec![0u32; n_sites];
    let mut best_serving: Option<Vec<usize>> = None;
    let mut best_value = f64::NEG_INFINITY;
    'outer: loop {
        loads.iter_mut().for_each(|l| *l = 0);
        for &n in &serving {
            loads[n] += 1;
        }
        if loads.iter().zip(caps.iter()).all(|(l, cap)| l <= cap) {
            let mut total = 0.0;
            for (k, &n) in serving.iter().enumerate() {
                total += value[(k * n_sites + n) * max_load + (loads[n] as usize - 1)];
            }
            // Strict improvement keeps the first (lexicographically
            // smallest) maximizer; the odometer counts in lex order.
            if total > best_value {
                best_value = total;
                best_serving = Some(serving.clone());
            }
        }
        for digit in (0..k_users).rev() {
            serving[digit] += 1;
            if serving[digit] < n_sites {
                continue 'outer;
            }
            serving[digit] = 0;
        }
        break;
    }

    let best = best_serving.ok_or_else(|| Error::Infeasible("no cap-feasible placement".into()))?;
    let assignment = Assignment::new(best, n_sites, caps.as_slice().expect("contiguous"))?;
    let breakdown = objective_p1(instance, &assignment)?;
    debug_assert!((breakdown.utility - best_value).abs() <= 1e-9 * best_value.abs().max(1.0));
    Ok((assignment, breakdown))
}

/// Calls `f` with every integer load vector summing to `total` under the
/// caps, in lexicographic order.
pub fn for_each_load_vector(total: u32, caps: &[u32], mut f: impl FnMut(&[u32])) {
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
        let tail: u64 = caps[site + 1..].iter().map(|c| u64::from(*c)).sum();
        let lo = if u64::from(left) > tail { left - tail as u32 } else { 0 };
        for y in lo..=left.min(caps[site]) {
            current.push(y);
            descend(site + 1, left - y, caps, current, f);
            current.pop();
        }
    }
    if caps.is_empty() {
        return;
    }
    let mut current = Vec::with_capacity(caps.len());
    descend(0, total, caps, &mut current, &mut f);
}

/// Global optimum of the hotspot problem by enumerating every feasible
/// load vector. Ties resolve to the lexicographically smallest vector.
pub fn exhaustive_p4(instance: &HotspotInstance) -> Result<(Vec<u32>, f64)> {
    let n_sites = instance.n_sites();
    let k = instance.k_users();
    // Compositions of k into n_sites parts, ignoring caps, as a guard.
    let mut combos = 1.0f64;
    for i in 1..n_sites {
        combos *= (k as f64 + i as f64) / i as f64;
        if combos > 1e7 {
            return Err(Error::TooLarge(format!(
                "more than 1e7 load vectors to enumerate for {k} users on {n_sites} sites"
            )));
        }
    }

    // Per-site value table at integer loads.
    let caps: Vec<u32> = instance.vm_cap().iter().copied().collect();
    let table: Vec<Vec<f64>> = (0..n_sites)
        .map(|n| {
            (0..=k.min(caps[n]))
                .map(|y| instance.site_value(n, f64::from(y)))
                .collect()
        })
        .collect();

    let mut best_value = f64::NEG_INFINITY;
    let mut best_loads: Option<Vec<u32>> = None;
    for_each_load_vector(k, &caps, |candidate| {
        let total: f64 = candidate
            .iter()
            .enumerate()
            .map(|(n, &y)| table[n][y as usize])
            .sum();
        if total > best_value {
            best_value = total;
            best_loads = Some(candidate.to_vec());
        }
    });
    let loads =
        best_loads.ok_or_else(|| Error::Infeasible("caps cannot hold the population".into()))?;
    Ok((loads, best_value))
}

/// Exact assignment optimum by trying all permutations. Ties resolve to
/// the lexicographically smallest permutation. Factorial cost; capped at
/// 10x10.
pub fn lap_by_enumeration(utility: &Array2<f64>) -> Result<(Vec<usize>, f64)> {
    let (rows, cols) = utility.dim();
    if rows != cols {
        return Err(Error::Shape(format!("{rows}x{cols} utility matrix is not square")));
    }
    if rows > 10 {
        return Err(Error::TooLarge(format!("{rows}! permutations to enumerate")));
    }
    fn descend(
        utility: &Array2<f64>,
        row: usize,
        used: &mut [bool],
        current: &mut Vec<usize>,
        running: f64,
        best: &mut f64,
        best_perm: &mut Option<Vec<usize>>,
    ) {
        if row == utility.nrows() {
            if running > *best {
                *best = running;
                *best_perm = Some(current.clone());
            }
            return;
        }
        for col in 0..utility.ncols() {
            if used[col] {
                continue;
            }
            used[col] = true;
            current.push(col);
            descend(utility, row + 1, used, current, running + utility[[row, col]], best, best_perm);
            current.pop();
            used[col] = false;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_perm = None;
    let mut used = vec![false; cols];
    let mut current = Vec::with_capacity(rows);
    descend(utility, 0, &mut used, &mut current, 0.0, &mut best, &mut best_perm);
    let perm = best_perm.unwrap_or_default();
    Ok((perm, if rows == 0 { 0.0 } else { best }))
}

/// Baseline: everyone stays where they are. Costs are identically zero, so
/// the utility is the weighted sum rate of the initial placement.
pub fn baseline_no_migration(instance: &Instance) -> Result<(Assignment, ObjectiveBreakdown)> {
    let assignment = Assignment::new(
        instance.initial_site().to_vec(),
        instance.n_sites(),
        instance.vm_cap().as_slice().expect("contiguous"),
    )?;
    let breakdown = objective_p1(instance, &assignment)?;
    Ok((assignment, breakdown))
}

/// Baseline: each user chases the best radio rate net of weighted
/// migration cost, blind to compute load. Users are ranked by their best
/// metric; when a site fills up, lower-ranked users spill to their best
/// remaining site.
pub fn baseline_radio_oriented(instance: &Instance) -> Result<(Assignment, ObjectiveBreakdown)> {
    let (k_users, n_sites) = (instance.n_users(), instance.n_sites());
    let metric = |k: usize, n: usize| {
        instance.rate()[[k, n]] - instance.cost_weight() * instance.migration_cost()[[k, n]]
    };
    let mut order: Vec<usize> = (0..k_users).collect();
    let best_metric: Vec<f64> = (0..k_users)
        .map(|k| (0..n_sites).map(|n| metric(k, n)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    order.sort_by(|a, b| best_metric[*b].total_cmp(&best_metric[*a]).then(a.cmp(b)));

    let caps = instance.vm_cap();
    let mut loads = vec![0u32; n_sites];
    let mut serving = vec![0usize; k_users];
    for &k in &order {
        let mut choice: Option<(usize, f64)> = None;
        for n in 0..n_sites {
            if loads[n] >= caps[n] {
                continue;
            }
            let m = metric(k, n);
            let better = match choice {
                None => true,
                Some((_, best)) => m > best,
            };
            if better {
                choice = Some((n, m));
            }
        }
        let (n, _) = choice.ok_or_else(|| Error::Infeasible("all sites full".into()))?;
        serving[k] = n;
        loads[n] += 1;
    }
    let assignment =
        Assignment::new(serving, n_sites, caps.as_slice().expect("contiguous"))?;
    let breakdown = objective_p1(instance, &assignment)?;
    Ok((assignment, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integer_recovery::recover_integer;
    use crate::relaxed_solver::{solve_p1_relaxed, SolverConfig};
    use crate::scenario::{generate, ScenarioConfig};
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2};

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
    fn single_user_takes_its_best_site() {
        let instance = Instance::new(
            arr2(&[[2.0, 8.0]]),
            arr2(&[[5.0, 5.0]]),
            arr1(&[0.2, 0.2]),
            arr1(&[2, 2]),
            arr1(&[1.0]),
            0.0,
            arr2(&[[0.0, 1.0]]),
            vec![0],
        )
        .unwrap();
        let (assignment, breakdown) = exhaustive_p1(&instance).unwrap();
        assert_eq!(assignment.serving(), &[1]);
        let expected = 1.0 / (1.0 / 8.0 + 1.0 / 5.0);
        assert_relative_eq!(breakdown.utility, expected);
    }

    #[test]
    fn symmetric_users_resolve_to_the_lex_smallest_split() {
        // Identical users, identical sites, no costs: splitting beats
        // stacking, and [0, 1] is the lex-smallest split.
        let instance = Instance::new(
            arr2(&[[4.0, 4.0], [4.0, 4.0]]),
            arr2(&[[6.0, 6.0], [6.0, 6.0]]),
            arr1(&[0.5, 0.5]),
            arr1(&[2, 2]),
            arr1(&[1.0, 1.0]),
            0.0,
            arr2(&[[0.0, 0.0], [0.0, 0.0]]),
            vec![0, 0],
        )
        .unwrap();
        let (assignment, _) = exhaustive_p1(&instance).unwrap();
        assert_eq!(assignment.serving(), &[0, 1]);
    }

    #[test]
    fn enumeration_guard_rejects_huge_instances() {
        let k = 30;
        let instance = Instance::new(
            Array2::from_elem((k, 2), 4.0),
            Array2::from_elem((k, 2), 6.0),
            arr1(&[0.5, 0.5]),
            arr1(&[30, 30]),
            ndarray::Array1::ones(k),
            0.0,
            Array2::zeros((k, 2)),
            vec![0; k],
        )
        .unwrap();
        // 2^30 > 1e8: the oracle must refuse.
        assert!(matches!(exhaustive_p1(&instance), Err(Error::TooLarge(_))));
    }

    #[test]
    fn load_vector_enumeration_is_lexicographic_and_capped() {
        let mut seen = Vec::new();
        for_each_load_vector(3, &[2, 2], |v| seen.push(v.to_vec()));
        assert_eq!(seen, vec![vec![1, 2], vec![2, 1]]);
        let mut count = 0;
        for_each_load_vector(4, &[4, 4, 4], |v| {
            assert_eq!(v.iter().sum::<u32>(), 4);
            count += 1;
        });
        assert_eq!(count, 15);
    }

    #[test]
    fn hotspot_enumeration_handles_edges() {
        let single = HotspotInstance::new(
            arr1(&[5.0]),
            arr1(&[8.0]),
            arr1(&[0.3]),
            arr1(&[0.0]),
            arr1(&[10]),
            0.5,
            7,
        )
        .unwrap();
        let (loads, value) = exhaustive_p4(&single).unwrap();
        assert_eq!(loads, vec![7]);
        assert_relative_eq!(value, single.objective(&[7]));
        let empty = single.with_users(0).unwrap();
        let (loads, value) = exhaustive_p4(&empty).unwrap();
        assert_eq!(loads, vec![0]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn permutation_oracle_agrees_with_hand_cases() {
        let (perm, total) = lap_by_enumeration(&arr2(&[[1.0, 2.0], [2.0, 1.0]])).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_relative_eq!(total, 4.0);
        // All-equal matrix: lex-smallest permutation is the identity.
        let (perm, _) = lap_by_enumeration(&Array2::from_elem((3, 3), 1.0)).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert!(lap_by_enumeration(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn staying_put_is_free() {
        let instance = three_user_instance();
        let (_, breakdown) = baseline_no_migration(&instance).unwrap();
        assert_eq!(breakdown.total_cost, 0.0);
        assert_relative_eq!(breakdown.utility, breakdown.sum_rate);
    }

    #[test]
    fn radio_baseline_chases_rates_when_costs_are_free() {
        let instance = Instance::new(
            arr2(&[[2.0, 8.0], [7.0, 3.0]]),
            arr2(&[[5.0, 5.0], [5.0, 5.0]]),
            arr1(&[0.2, 0.2]),
            arr1(&[2, 2]),
            arr1(&[1.0, 1.0]),
            0.0,
            arr2(&[[0.0, 1.0], [1.0, 0.0]]),
            vec![0, 1],
        )
        .unwrap();
        let (assignment, _) = baseline_radio_oriented(&instance).unwrap();
        assert_eq!(assignment.serving(), &[1, 0]);
    }

    #[test]
    fn radio_baseline_freezes_under_heavy_cost_weight() {
        let instance = Instance::new(
            arr2(&[[2.0, 8.0], [7.0, 3.0]]),
            arr2(&[[5.0, 5.0], [5.0, 5.0]]),
            arr1(&[0.2, 0.2]),
            arr1(&[2, 2]),
            arr1(&[1.0, 1.0]),
            1e6,
            arr2(&[[0.0, 1.0], [1.0, 0.0]]),
            vec![0, 1],
        )
        .unwrap();
        let (assignment, _) = baseline_radio_oriented(&instance).unwrap();
        assert_eq!(assignment.serving(), &[0, 1]);
    }

    #[test]
    fn radio_baseline_spills_the_lower_ranked_user() {
        // Both prefer site 0; caps force one out. User 1 has the higher
        // metric and keeps the site.
        let instance = Instance::new(
            arr2(&[[6.0, 2.0], [9.0, 2.5]]),
            arr2(&[[5.0, 5.0], [5.0, 5.0]]),
            arr1(&[0.2, 0.2]),
            arr1(&[1, 2]),
            arr1(&[1.0, 1.0]),
            0.0,
            arr2(&[[0.0, 1.0], [1.0, 0.0]]),
            vec![0, 1],
        )
        .unwrap();
        let (assignment, _) = baseline_radio_oriented(&instance).unwrap();
        assert_eq!(assignment.serving(), &[1, 0]);
    }

    #[test]
    fn pipeline_lands_between_baselines_and_the_enumerated_optimum() {
        let config = ScenarioConfig {
            n_users: 5,
            n_sites: 3,
            vm_cap: 4,
            ..ScenarioConfig::default()
        };
        config.validate().unwrap();
        for seed in [3u64, 17, 40] {
            let scenario = generate(&config, seed).unwrap();
            let instance = &scenario.instance;
            let (_, optimum) = exhaustive_p1(instance).unwrap();
            let fractional = solve_p1_relaxed(instance, &SolverConfig::default()).unwrap();
            let (_, report) = recover_integer(instance, &fractional).unwrap();
            let (_, stay) = baseline_no_migration(instance).unwrap();
            let (_, radio) = baseline_radio_oriented(instance).unwrap();

            let slack = 1e-9 * optimum.utility.abs().max(1.0);
            assert!(optimum.utility + slack >= report.utility, "seed {seed}");
            assert!(optimum.utility + slack >= stay.utility, "seed {seed}");
            assert!(optimum.utility + slack >= radio.utility, "seed {seed}");
            assert!(
                report.upper_bound >= optimum.utility - slack,
                "seed {seed}: bound {} vs optimum {}",
                report.upper_bound,
                optimum.utility
            );
            assert!(
                report.utility >= optimum.utility - 5e-3 * optimum.utility.abs(),
                "seed {seed}: recovered {} vs optimum {}",
                report.utility,
                optimum.utility
            );
        }
    }
}
