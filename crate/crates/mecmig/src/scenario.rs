//! Scenario generation: site layout, user mobility, channels, and the
//! assembly of planning instances from them.
//!
//! A generated slot works like this: users get uniform positions in a square
//! service area, associate with the strongest site, then move for one slot
//! of random-waypoint motion. The planning instance is built from the
//! channel *after* the move, while the association from *before* the move
//! defines where each service currently lives and what migrations cost.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Assignment, CostParams, Instance, RateParams};
use crate::relaxed_solver::relocation_equilibrium;

/// Planar position in kilometers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x_km: f64,
    pub y_km: f64,
}

impl Point {
    pub fn distance_km(&self, other: &Point) -> f64 {
        ((self.x_km - other.x_km).powi(2) + (self.y_km - other.y_km).powi(2)).sqrt()
    }
}

/// Site positions inside a square service area of the given side length.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub side_km: f64,
    pub sites: Vec<Point>,
}

/// Places sites hexagonally: one in the center of the area, then concentric
/// rings of 6, 12, 18, ... sites at evenly spaced angles. With a single
/// ring the ring radius is a third of the area side; deeper layouts shrink
/// the ring pitch so everything stays inside the area.
pub fn hex_layout(n_sites: usize, side_km: f64) -> Result<Geometry> {
    if n_sites == 0 {
        return Err(Error::invalid("n_sites", "at least one site is required"));
    }
    if !(side_km > 0.0) || !side_km.is_finite() {
        return Err(Error::invalid("side_km", "must be positive and finite"));
    }
    let mut rings = 0usize;
    let mut capacity = 1usize;
    while capacity < n_sites {
        rings += 1;
        capacity += 6 * rings;
    }
    let pitch = if rings <= 1 {
        side_km / 3.0
    } else {
        (side_km / 3.0).min(0.45 * side_km / rings as f64)
    };
    let center = Point { x_km: side_km / 2.0, y_km: side_km / 2.0 };
    let mut sites = vec![center];
    'outer: for ring in 1..=rings {
        let slots = 6 * ring;
        let radius = pitch * ring as f64;
        for slot in 0..slots {
            if sites.len() == n_sites {
                break 'outer;
            }
            let angle = 2.0 * std::f64::consts::PI * slot as f64 / slots as f64;
            sites.push(Point {
                x_km: center.x_km + radius * angle.cos(),
                y_km: center.y_km + radius * angle.sin(),
            });
        }
    }
    Ok(Geometry { side_km, sites })
}

/// Urban-macro path loss in dB at the given distance, with the distance
/// floored at one meter so the loss stays defined arbitrarily close to a
/// site.
pub fn path_loss_db(distance_km: f64) -> f64 {
    let d = distance_km.max(1e-3);
    128.1 + 37.6 * d.log10()
}

/// Linear channel gain implied by [`path_loss_db`].
pub fn channel_gain(distance_km: f64) -> f64 {
    10f64.powf(-path_loss_db(distance_km) / 10.0)
}

/// Gain matrix between every user position and every site.
pub fn gain_matrix(users: &[Point], sites: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((users.len(), sites.len()), |(k, n)| {
        channel_gain(users[k].distance_km(&sites[n]))
    })
}

/// One-slot random-waypoint mobility parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    /// Lower speed bound, m/s.
    pub v_min_m_s: f64,
    /// Upper speed bound, m/s.
    pub v_max_m_s: f64,
    /// Probability that a user sits out the slot entirely.
    pub static_prob: f64,
    /// Pause on reaching a waypoint, seconds. Only the zero value is
    /// modeled; a slot is too short to observe pauses.
    pub pause_time_s: f64,
    /// Slot duration, seconds.
    pub slot_s: f64,
    /// Seed for the per-slot draws.
    pub rng_seed: u64,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min_m_s >= 0.0) || self.v_max_m_s < self.v_min_m_s {
            return Err(Error::invalid("v_min_m_s/v_max_m_s", "need 0 <= v_min <= v_max"));
        }
        if !(0.0..=1.0).contains(&self.static_prob) {
            return Err(Error::invalid("static_prob", "must lie in [0, 1]"));
        }
        if self.pause_time_s != 0.0 {
            return Err(Error::invalid("pause_time_s", "only 0 is supported"));
        }
        if !(self.slot_s > 0.0) {
            return Err(Error::invalid("slot_s", "must be positive"));
        }
        Ok(())
    }
}

/// Advances every user by one slot of random-waypoint motion: each mobile
/// user draws a fresh waypoint uniformly in the area and a speed uniform in
/// `[v_min, v_max]`, then moves toward the waypoint for one slot (stopping
/// there if it is closer). Deterministic in `mobility.rng_seed`.
pub fn rwp_step(positions: &[Point], side_km: f64, mobility: &MobilityConfig) -> Result<Vec<Point>> {
    mobility.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mobility.rng_seed);
    let mut moved = Vec::with_capacity(positions.len());
    for p in positions {
        // Fixed draw pattern per user keeps streams aligned across configs.
        let stay: f64 = rng.random_range(0.0..1.0);
        let wx: f64 = rng.random_range(0.0..side_km);
        let wy: f64 = rng.random_range(0.0..side_km);
        let speed: f64 = if mobility.v_max_m_s > mobility.v_min_m_s {
            rng.random_range(mobility.v_min_m_s..mobility.v_max_m_s)
        } else {
            mobility.v_min_m_s
        };
        if stay < mobility.static_prob {
            moved.push(*p);
            continue;
        }
        let step_km = speed * mobility.slot_s / 1000.0;
        let to_waypoint = ((wx - p.x_km).powi(2) + (wy - p.y_km).powi(2)).sqrt();
        if to_waypoint <= step_km || to_waypoint == 0.0 {
            moved.push(Point { x_km: wx, y_km: wy });
        } else {
            let frac = step_km / to_waypoint;
            moved.push(Point {
                x_km: p.x_km + frac * (wx - p.x_km),
                y_km: p.y_km + frac * (wy - p.y_km),
            });
        }
    }
    Ok(moved)
}

/// Associates every user with its strongest site by uplink SINR. When a
/// site attracts more users than it has VM slots, its weakest-SINR surplus
/// users spill to their next-best site with room left.
pub fn max_sinr_association(params: &RateParams, vm_cap: &Array1<u32>) -> Result<Assignment> {
    let k_users = params.n_users();
    let n_sites = params.n_sites();
    if vm_cap.len() != n_sites {
        return Err(Error::Shape(format!("vm_cap must have {} entries", n_sites)));
    }
    let total_cap: u64 = vm_cap.iter().map(|m| *m as u64).sum();
    if (k_users as u64) > total_cap {
        return Err(Error::Infeasible(format!(
            "total VM capacity {} is below the number of users {}",
            total_cap, k_users
        )));
    }
    let sinr = params.sinr_matrix();
    let mut serving: Vec<usize> = (0..k_users)
        .map(|k| {
            let row = sinr.row(k);
            let mut best = 0usize;
            for n in 1..n_sites {
                if row[n] > row[best] {
                    best = n;
                }
            }
            best
        })
        .collect();
    let mut loads = vec![0u32; n_sites];
    for s in &serving {
        loads[*s] += 1;
    }
    loop {
        let Some(over) = (0..n_sites).find(|n| loads[*n] > vm_cap[*n]) else {
            break;
        };
        // Weakest user on the crowded site moves to its best open site.
        let evict = (0..k_users)
            .filter(|k| serving[*k] == over)
            .min_by(|a, b| sinr[[*a, over]].total_cmp(&sinr[[*b, over]]).then(a.cmp(b)))
            .expect("an over-capacity site has at least one user");
        let fallback = (0..n_sites)
            .filter(|n| loads[*n] < vm_cap[*n])
            .max_by(|a, b| sinr[[evict, *a]].total_cmp(&sinr[[evict, *b]]).then(b.cmp(a)))
            .expect("total capacity covers all users");
        loads[over] -= 1;
        loads[fallback] += 1;
        serving[evict] = fallback;
    }
    Assignment::new(serving, n_sites, vm_cap.as_slice().expect("contiguous"))
}

/// Everything needed to generate slots, mirroring the measurement setup the
/// defaults come from. All keys are accepted from configuration files
/// verbatim; unknown keys are rejected there.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_sites: usize,
    pub n_users: usize,
    pub area_side_km: f64,
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    /// Receiver noise density; the noise power is this integrated over the
    /// shared band.
    pub noise_dbm_per_hz: f64,
    pub isolation_rate_min: f64,
    pub isolation_rate_max: f64,
    pub degradation: f64,
    pub vm_cap: u32,
    pub rate_weight: f64,
    pub cost_weight: f64,
    /// Fixed signalling cost paid by any migration.
    pub handover_cost: f64,
    /// Per-user service sizes; each user draws one uniformly.
    pub migration_cost_classes: Vec<f64>,
    pub v_min_m_s: f64,
    pub v_max_m_s: f64,
    pub static_prob: f64,
    pub pause_time_s: f64,
    /// Time between planning epochs. Migrations are decided once per slot,
    /// so users cover v * slot_s metres between decisions.
    pub slot_s: f64,
    /// Monte-Carlo trials per configuration point.
    pub trials: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_sites: 7,
            n_users: 60,
            area_side_km: 1.0,
            bandwidth_hz: 20e6,
            tx_power_w: 0.1,
            noise_dbm_per_hz: -174.0,
            isolation_rate_min: 0.5e7,
            isolation_rate_max: 2e7,
            degradation: 0.25,
            vm_cap: 45,
            rate_weight: 1.0,
            cost_weight: 0.5,
            handover_cost: 1e5,
            migration_cost_classes: vec![1e5, 2e5, 5e5],
            v_min_m_s: 0.0,
            v_max_m_s: 5.0,
            static_prob: 0.0,
            pause_time_s: 0.0,
            slot_s: 60.0,
            trials: 500,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::invalid("n_sites", "at least one site is required"));
        }
        if self.n_users == 0 {
            return Err(Error::invalid("n_users", "at least one user is required"));
        }
        if !(self.area_side_km > 0.0) {
            return Err(Error::invalid("area_side_km", "must be positive"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::invalid("bandwidth_hz", "must be positive"));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(Error::invalid("tx_power_w", "must be positive"));
        }
        if !self.noise_dbm_per_hz.is_finite() {
            return Err(Error::invalid("noise_dbm_per_hz", "must be finite"));
        }
        if !(self.isolation_rate_min > 0.0) || self.isolation_rate_max < self.isolation_rate_min {
            return Err(Error::invalid(
                "isolation_rate_min/isolation_rate_max",
                "need 0 < min <= max",
            ));
        }
        if !(self.degradation > 0.0) {
            return Err(Error::invalid("degradation", "must be positive"));
        }
        if self.vm_cap == 0 {
            return Err(Error::invalid("vm_cap", "must be at least 1"));
        }
        if (self.n_users as u64) > self.vm_cap as u64 * self.n_sites as u64 {
            return Err(Error::Infeasible(format!(
                "total VM capacity {} is below the number of users {}",
                self.vm_cap as u64 * self.n_sites as u64,
                self.n_users
            )));
        }
        if !(self.rate_weight > 0.0) {
            return Err(Error::invalid("rate_weight", "must be positive"));
        }
        if !(self.cost_weight >= 0.0) {
            return Err(Error::invalid("cost_weight", "must be non-negative"));
        }
        if !(self.handover_cost >= 0.0) {
            return Err(Error::invalid("handover_cost", "must be non-negative"));
        }
        if self.migration_cost_classes.is_empty()
            || self.migration_cost_classes.iter().any(|c| !(*c >= 0.0))
        {
            return Err(Error::invalid(
                "migration_cost_classes",
                "need at least one non-negative class",
            ));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        self.mobility(0).validate()
    }

    pub fn mobility(&self, rng_seed: u64) -> MobilityConfig {
        MobilityConfig {
            v_min_m_s: self.v_min_m_s,
            v_max_m_s: self.v_max_m_s,
            static_prob: self.static_prob,
            pause_time_s: self.pause_time_s,
            slot_s: self.slot_s,
            rng_seed,
        }
    }

    /// Noise power over the shared band, in watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_dbm_per_hz - 30.0) / 10.0) * self.bandwidth_hz
    }
}

/// A fully generated slot: geometry, the association before the move, and
/// the planning instance after it.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub geometry: Geometry,
    pub start_positions: Vec<Point>,
    pub end_positions: Vec<Point>,
    /// Association in force when the slot begins: strongest-signal picks at
    /// the start positions, settled for computing interference. Stands in
    /// for the placement earlier slots would have converged to, so the
    /// slot's own migration decisions answer the move, not a cold start.
    pub initial: Assignment,
    pub instance: Instance,
    /// Radio parameters at the end positions (the ones the instance uses).
    pub rate_params: RateParams,
}

/// Builds an instance from the current channel and the given isolation-rate
/// and per-user service-size draws.
pub fn build_instance(
    config: &ScenarioConfig,
    rate_params: &RateParams,
    initial: &Assignment,
    isolation: Array2<f64>,
    service_size: &[f64],
) -> Result<Instance> {
    let k = config.n_users;
    let n = config.n_sites;
    let mut raw_cost = Array3::zeros((k, n, n));
    for user in 0..k {
        for from in 0..n {
            for to in 0..n {
                if from != to {
                    raw_cost[[user, from, to]] = config.handover_cost + service_size[user];
                }
            }
        }
    }
    let costs = CostParams::new(
        raw_cost,
        config.cost_weight,
        Array1::from_elem(k, config.rate_weight),
    )?;
    let collapsed = costs.collapse(initial.serving())?;
    Instance::new(
        rate_params.rate_matrix(),
        isolation,
        Array1::from_elem(n, config.degradation),
        Array1::from_elem(n, config.vm_cap),
        Array1::from_elem(k, config.rate_weight),
        config.cost_weight,
        collapsed,
        initial.serving().to_vec(),
    )
}

/// Settles an association into a resting point of the zero-cost objective
/// at the given channel: from the seed placement, users relocate one at a
/// time to whichever site raises the total utility most, until nobody
/// moves. Pair swaps are deliberately left out, so the settled point is a
/// plausible operating state rather than a polished optimum.
fn settle_association(
    config: &ScenarioConfig,
    rate_params: &RateParams,
    isolation: &Array2<f64>,
    seed: &Assignment,
) -> Result<Assignment> {
    let free_moves = Array2::zeros((config.n_users, config.n_sites));
    let resting = Instance::new(
        rate_params.rate_matrix(),
        isolation.clone(),
        Array1::from_elem(config.n_sites, config.degradation),
        Array1::from_elem(config.n_sites, config.vm_cap),
        Array1::from_elem(config.n_users, config.rate_weight),
        config.cost_weight,
        free_moves,
        seed.serving().to_vec(),
    )?;
    let mut serving = seed.serving().to_vec();
    relocation_equilibrium(&resting, &mut serving);
    let caps = Array1::from_elem(config.n_sites, config.vm_cap);
    Assignment::new(serving, config.n_sites, caps.as_slice().expect("contiguous"))
}

/// Generates one complete slot deterministically from `(config, seed)`.
pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<GeneratedScenario> {
    config.validate()?;
    let geometry = hex_layout(config.n_sites, config.area_side_km)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let start_positions: Vec<Point> = (0..config.n_users)
        .map(|_| Point {
            x_km: rng.random_range(0.0..config.area_side_km),
            y_km: rng.random_range(0.0..config.area_side_km),
        })
        .collect();
    let k = config.n_users;
    let isolation = Array2::from_shape_fn((k, config.n_sites), |_| {
        if config.isolation_rate_max > config.isolation_rate_min {
            rng.random_range(config.isolation_rate_min..config.isolation_rate_max)
        } else {
            config.isolation_rate_min
        }
    });
    let class_count = config.migration_cost_classes.len();
    let service_size: Vec<f64> = (0..k)
        .map(|_| config.migration_cost_classes[rng.random_range(0..class_count)])
        .collect();

    let caps = Array1::from_elem(config.n_sites, config.vm_cap);
    let start_params = RateParams::new(
        config.bandwidth_hz,
        Array1::from_elem(config.n_users, config.tx_power_w),
        Array1::from_elem(config.n_sites, config.noise_power_w()),
        gain_matrix(&start_positions, &geometry.sites),
    )?;
    let strongest = max_sinr_association(&start_params, &caps)?;
    let initial = settle_association(config, &start_params, &isolation, &strongest)?;

    let mobility_seed = rng.random::<u64>();
    let end_positions = rwp_step(
        &start_positions,
        config.area_side_km,
        &config.mobility(mobility_seed),
    )?;
    let rate_params = RateParams::new(
        config.bandwidth_hz,
        Array1::from_elem(config.n_users, config.tx_power_w),
        Array1::from_elem(config.n_sites, config.noise_power_w()),
        gain_matrix(&end_positions, &geometry.sites),
    )?;
    let instance = build_instance(config, &rate_params, &initial, isolation, &service_size)?;
    Ok(GeneratedScenario {
        geometry,
        start_positions,
        end_positions,
        initial,
        instance,
        rate_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr1;

    #[test]
    fn hex_layout_single_site_sits_in_the_center() {
        let geo = hex_layout(1, 1.0).unwrap();
        assert_eq!(geo.sites.len(), 1);
        assert_relative_eq!(geo.sites[0].x_km, 0.5);
        assert_relative_eq!(geo.sites[0].y_km, 0.5);
    }

    #[test]
    fn hex_layout_seven_sites_form_a_regular_ring() {
        let geo = hex_layout(7, 1.0).unwrap();
        assert_eq!(geo.sites.len(), 7);
        let center = geo.sites[0];
        for site in &geo.sites[1..] {
            assert_relative_eq!(site.distance_km(&center), 1.0 / 3.0, max_relative = 1e-12);
        }
        // Neighbors on a hexagon sit one ring radius apart.
        for i in 1..=6 {
            let j = if i == 6 { 1 } else { i + 1 };
            assert_relative_eq!(
                geo.sites[i].distance_km(&geo.sites[j]),
                1.0 / 3.0,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn hex_layout_stays_inside_the_area() {
        for n in [1, 7, 13, 19, 37] {
            let geo = hex_layout(n, 2.0).unwrap();
            assert_eq!(geo.sites.len(), n);
            for site in &geo.sites {
                assert!(site.x_km >= 0.0 && site.x_km <= 2.0);
                assert!(site.y_km >= 0.0 && site.y_km <= 2.0);
            }
        }
    }

    #[test]
    fn hex_layout_rejects_zero_sites() {
        assert!(hex_layout(0, 1.0).is_err());
    }

    #[test]
    fn path_loss_reference_points() {
        assert_relative_eq!(path_loss_db(1.0), 128.1);
        assert_relative_eq!(path_loss_db(0.1), 90.5, max_relative = 1e-12);
        // Distances below a meter are floored at a meter.
        assert_relative_eq!(path_loss_db(0.0), path_loss_db(1e-3));
        assert_relative_eq!(path_loss_db(1e-9), 128.1 - 3.0 * 37.6, max_relative = 1e-12);
    }

    #[test]
    fn channel_gain_decreases_with_distance() {
        assert!(channel_gain(0.1) > channel_gain(0.2));
        assert!(channel_gain(0.2) > channel_gain(0.9));
    }

    fn mobility(seed: u64, v_max: f64) -> MobilityConfig {
        MobilityConfig {
            v_min_m_s: 0.0,
            v_max_m_s: v_max,
            static_prob: 0.0,
            pause_time_s: 0.0,
            slot_s: 1.0,
            rng_seed: seed,
        }
    }

    #[test]
    fn rwp_step_is_deterministic_and_bounded() {
        let start = vec![
            Point { x_km: 0.1, y_km: 0.9 },
            Point { x_km: 0.5, y_km: 0.5 },
            Point { x_km: 0.99, y_km: 0.01 },
        ];
        let a = rwp_step(&start, 1.0, &mobility(7, 5.0)).unwrap();
        let b = rwp_step(&start, 1.0, &mobility(7, 5.0)).unwrap();
        assert_eq!(a, b);
        let c = rwp_step(&start, 1.0, &mobility(8, 5.0)).unwrap();
        assert_ne!(a, c);
        for (p, q) in start.iter().zip(a.iter()) {
            // One slot at at most 5 m/s moves at most 5 m.
            assert!(p.distance_km(q) <= 5.0 / 1000.0 + 1e-12);
            assert!(q.x_km >= 0.0 && q.x_km <= 1.0 && q.y_km >= 0.0 && q.y_km <= 1.0);
        }
    }

    #[test]
    fn rwp_step_zero_speed_keeps_positions() {
        let start = vec![Point { x_km: 0.3, y_km: 0.4 }];
        let moved = rwp_step(&start, 1.0, &mobility(3, 0.0)).unwrap();
        assert_eq!(start, moved);
    }

    #[test]
    fn rwp_step_static_users_never_move() {
        let start = vec![Point { x_km: 0.3, y_km: 0.4 }; 20];
        let mut all_static = mobility(3, 5.0);
        all_static.static_prob = 1.0;
        let moved = rwp_step(&start, 1.0, &all_static).unwrap();
        assert_eq!(start, moved);
    }

    #[test]
    fn mobility_rejects_pauses() {
        let mut bad = mobility(0, 5.0);
        bad.pause_time_s = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn association_prefers_the_strongest_site() {
        // Users parked on top of distinct sites go to those sites.
        let sites = vec![Point { x_km: 0.2, y_km: 0.5 }, Point { x_km: 0.8, y_km: 0.5 }];
        let users = vec![Point { x_km: 0.21, y_km: 0.5 }, Point { x_km: 0.79, y_km: 0.5 }];
        let params = RateParams::new(
            20e6,
            Array1::from_elem(2, 0.1),
            Array1::from_elem(2, 7.96e-14),
            gain_matrix(&users, &sites),
        )
        .unwrap();
        let assoc = max_sinr_association(&params, &arr1(&[2, 2])).unwrap();
        assert_eq!(assoc.serving(), &[0, 1]);
    }

    #[test]
    fn association_spills_weakest_users_when_full() {
        // Three users, all closest to site 0, which only has one slot.
        let sites = vec![Point { x_km: 0.3, y_km: 0.5 }, Point { x_km: 0.9, y_km: 0.5 }];
        let users = vec![
            Point { x_km: 0.30, y_km: 0.50 },
            Point { x_km: 0.35, y_km: 0.50 },
            Point { x_km: 0.40, y_km: 0.50 },
        ];
        let params = RateParams::new(
            20e6,
            Array1::from_elem(3, 0.1),
            Array1::from_elem(2, 7.96e-14),
            gain_matrix(&users, &sites),
        )
        .unwrap();
        let assoc = max_sinr_association(&params, &arr1(&[1, 2])).unwrap();
        // The user sitting on the site keeps it; the two weaker ones spill.
        assert_eq!(assoc.serving(), &[0, 1, 1]);
    }

    #[test]
    fn generate_is_deterministic_per_seed() {
        let config = ScenarioConfig { n_users: 12, vm_cap: 9, ..ScenarioConfig::default() };
        let a = generate(&config, 42).unwrap();
        let b = generate(&config, 42).unwrap();
        assert_eq!(a.instance.rate(), b.instance.rate());
        assert_eq!(a.instance.isolation_rate(), b.instance.isolation_rate());
        assert_eq!(a.instance.migration_cost(), b.instance.migration_cost());
        assert_eq!(a.initial.serving(), b.initial.serving());
        let c = generate(&config, 43).unwrap();
        assert_ne!(a.instance.rate(), c.instance.rate());
    }

    #[test]
    fn generate_produces_consistent_costs_and_rates() {
        let config = ScenarioConfig { n_users: 15, vm_cap: 11, ..ScenarioConfig::default() };
        let slot = generate(&config, 9).unwrap();
        let inst = &slot.instance;
        for k in 0..config.n_users {
            let home = slot.initial.serving()[k];
            assert_eq!(inst.migration_cost()[[k, home]], 0.0);
            let mut seen_class = false;
            for n in 0..config.n_sites {
                if n != home {
                    let move_cost = inst.migration_cost()[[k, n]] - config.handover_cost;
                    seen_class = seen_class
                        || config
                            .migration_cost_classes
                            .iter()
                            .any(|c| (c - move_cost).abs() < 1e-9);
                }
                let f = inst.isolation_rate()[[k, n]];
                assert!(f >= config.isolation_rate_min && f <= config.isolation_rate_max);
            }
            assert!(seen_class);
        }
        // Instance rates reproduce the end-position channel.
        assert_eq!(inst.rate(), &slot.rate_params.rate_matrix());
    }

    #[test]
    fn config_rejects_undersized_capacity() {
        let config = ScenarioConfig { n_users: 10, n_sites: 3, vm_cap: 3, ..Default::default() };
        assert!(matches!(config.validate(), Err(Error::Infeasible(_))));
    }
}
