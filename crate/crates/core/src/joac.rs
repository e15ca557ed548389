//! Service-provider optimization instance: the threshold-parameterized cost
//! objective, feasibility checks, the maximum usable threshold, and price
//! calibration back from thresholds.

use std::sync::Arc;

use thiserror::Error;

use crate::aoi::{aggregate_rates, AggregateRates, AoiError, UploadAnalytics};
use crate::mdp::{
    extract_thresholds, solve_average_reward, AgingMdpInstance, MdpError, ThresholdPolicy,
};
use crate::mobility::MobilityModel;

#[derive(Debug, Error)]
pub enum JoacError {
    #[error("invalid instance: {0}")]
    InvalidParameter(String),
    #[error(
        "no price reproduces threshold {target} at location {location} (nearest achieved {achieved})"
    )]
    Uncalibratable {
        location: usize,
        target: usize,
        achieved: usize,
        calibration: Box<PriceCalibration>,
    },
    #[error(transparent)]
    Aoi(#[from] AoiError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// AoI tolerance, either shared or per collection location.
#[derive(Debug, Clone)]
pub enum Epsilon {
    Scalar(f64),
    PerLocation(Vec<f64>),
}

impl Epsilon {
    pub fn at(&self, location: usize) -> f64 {
        match self {
            Epsilon::Scalar(e) => *e,
            Epsilon::PerLocation(v) => v[location],
        }
    }

    fn validate(&self, num_locations: usize) -> Result<(), JoacError> {
        let check = |e: f64| {
            if e <= 0.0 || e >= 1.0 {
                Err(JoacError::InvalidParameter(format!(
                    "epsilon {e} outside (0, 1)"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Epsilon::Scalar(e) => check(*e),
            Epsilon::PerLocation(v) => {
                if v.len() != num_locations {
                    return Err(JoacError::InvalidParameter(format!(
                        "{} epsilon entries for {} locations",
                        v.len(),
                        num_locations
                    )));
                }
                v.iter().try_for_each(|&e| check(e))
            }
        }
    }
}

/// The provider's cost-minimization instance over threshold vectors.
#[derive(Debug, Clone)]
pub struct JoacInstance {
    pub model: Arc<MobilityModel>,
    /// Leasing cost per data volume at each upload location.
    pub costs: Vec<f64>,
    /// Bandwidth cap per location, data volume per second.
    pub capacities: Vec<f64>,
    pub device_count: u64,
    pub mean_size: f64,
    pub slot_seconds: f64,
    /// Latency target d in slots.
    pub latency_target: usize,
    pub epsilon: Epsilon,
    pub max_age: usize,
    pub utility: Vec<f64>,
    /// When set, additionally cap t_max at d + 3.
    pub cap_t_max_at_d_plus_3: bool,
}

/// Feasibility breakdown for one threshold vector.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// (origin, P(age > d), epsilon) triples exceeding the tolerance.
    pub aoi_violations: Vec<(usize, f64, f64)>,
    /// (location, Y_j, B_j) triples exceeding the capacity.
    pub capacity_violations: Vec<(usize, f64, f64)>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.aoi_violations.is_empty() && self.capacity_violations.is_empty()
    }
}

/// Full evaluation of one threshold vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub analytics: UploadAnalytics,
    pub rates: AggregateRates,
    pub cost: f64,
}

/// Calibrated price vector and the thresholds it actually induces.
#[derive(Debug, Clone)]
pub struct PriceCalibration {
    pub prices: Vec<f64>,
    pub achieved: Vec<usize>,
    pub verified: Vec<bool>,
}

impl JoacInstance {
    pub fn validate(&self) -> Result<(), JoacError> {
        let l = self.model.num_locations();
        if self.costs.len() != l || self.capacities.len() != l {
            return Err(JoacError::InvalidParameter(format!(
                "costs/capacities must have {l} entries"
            )));
        }
        if self.costs.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(JoacError::InvalidParameter(
                "costs must be finite and non-negative".into(),
            ));
        }
        if self.capacities.iter().any(|&b| b <= 0.0) {
            return Err(JoacError::InvalidParameter(
                "capacities must be positive".into(),
            ));
        }
        self.epsilon.validate(l)?;
        if self.latency_target < 1 || self.latency_target >= self.max_age {
            return Err(JoacError::InvalidParameter(format!(
                "latency target must satisfy 1 <= d < M, got d = {}, M = {}",
                self.latency_target, self.max_age
            )));
        }
        if self.device_count < 1 || self.mean_size <= 0.0 || self.slot_seconds <= 0.0 {
            return Err(JoacError::InvalidParameter(
                "device count, mean size and slot duration must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn num_locations(&self) -> usize {
        self.model.num_locations()
    }

    /// NF/kappa: total collected volume per second.
    pub fn demand_scale(&self) -> f64 {
        self.device_count as f64 * self.mean_size / self.slot_seconds
    }

    /// Aging-control instance seen by one device under a price vector.
    pub fn aging_instance(&self, prices: Vec<f64>) -> Result<AgingMdpInstance, MdpError> {
        AgingMdpInstance::new(
            Arc::clone(&self.model),
            self.max_age,
            self.utility.clone(),
            prices,
        )
    }

    /// Analytics, aggregate rates and total cost for one threshold vector.
    pub fn evaluate(&self, thresholds: &ThresholdPolicy) -> Result<Evaluation, JoacError> {
        let analytics = UploadAnalytics::compute(&self.model, thresholds)?;
        let rates = aggregate_rates(
            analytics.per_device_rates(),
            &self.model,
            self.device_count,
            self.mean_size,
            self.slot_seconds,
        );
        let cost = rates
            .uploads
            .iter()
            .zip(self.costs.iter())
            .map(|(y, c)| y * c)
            .sum();
        Ok(Evaluation {
            analytics,
            rates,
            cost,
        })
    }

    /// Total leasing cost W(tau) = sum_j C_j Y_j(tau).
    pub fn objective(&self, thresholds: &ThresholdPolicy) -> Result<f64, JoacError> {
        Ok(self.evaluate(thresholds)?.cost)
    }

    /// Checks the AoI tail and capacity constraints.
    pub fn feasible(&self, thresholds: &ThresholdPolicy) -> Result<FeasibilityReport, JoacError> {
        let eval = self.evaluate(thresholds)?;
        Ok(self.feasibility_of(&eval))
    }

    /// Feasibility from an existing evaluation.
    pub fn feasibility_of(&self, eval: &Evaluation) -> FeasibilityReport {
        let l = self.num_locations();
        let d = self.latency_target;
        let mut aoi_violations = Vec::new();
        for origin in 0..l {
            let tail = eval.analytics.ccdf(origin, d);
            let eps = self.epsilon.at(origin);
            if tail > eps {
                aoi_violations.push((origin, tail, eps));
            }
        }
        let mut capacity_violations = Vec::new();
        for j in 0..l {
            if eval.rates.uploads[j] > self.capacities[j] {
                capacity_violations.push((j, eval.rates.uploads[j], self.capacities[j]));
            }
        }
        FeasibilityReport {
            aoi_violations,
            capacity_violations,
        }
    }

    /// Largest threshold any location can use: the biggest t such that for
    /// every origin i, tau_i = t with all other thresholds zero keeps
    /// P(age > d) strictly below the tolerance. Capped at M - 1 and, when
    /// configured, at d + 3.
    pub fn t_max(&self) -> Result<usize, JoacError> {
        self.validate()?;
        let l = self.num_locations();
        let mut cap = self.max_age - 1;
        if self.cap_t_max_at_d_plus_3 {
            cap = cap.min(self.latency_target + 3);
        }
        let d = self.latency_target;
        let mut best = 0usize;
        't_loop: for t in 1..=cap {
            for origin in 0..l {
                let mut taus = vec![0usize; l];
                taus[origin] = t;
                let policy = ThresholdPolicy::new(taus);
                let slice = crate::aoi::upload_time_distribution(&self.model, &policy, origin);
                let t_cap = t + 1;
                let tail: f64 = ((d + 1)..=t_cap)
                    .flat_map(|tt| (0..l).map(move |z| (z, tt)))
                    .map(|(z, tt)| slice[z * t_cap + (tt - 1)])
                    .sum();
                if tail >= self.epsilon.at(origin) {
                    break 't_loop;
                }
            }
            best = t;
        }
        Ok(best)
    }

    /// Finds a per-location price vector whose optimal device policy
    /// reproduces the target thresholds.
    ///
    /// Locations sharing a target threshold share a price level. Levels are
    /// fitted in ascending threshold order by bisection (thresholds are
    /// monotone in the local price), then the whole vector is verified with
    /// one final solve.
    pub fn calibrate_prices(
        &self,
        thresholds: &ThresholdPolicy,
    ) -> Result<PriceCalibration, JoacError> {
        self.validate()?;
        let l = self.num_locations();
        if thresholds.num_locations() != l {
            return Err(JoacError::InvalidParameter(format!(
                "thresholds cover {} locations, instance has {l}",
                thresholds.num_locations()
            )));
        }
        let u_m = self.utility[self.max_age - 1];
        let price_hi: f64 =
            self.utility.iter().map(|u| u - u_m).sum::<f64>() + 1.0;

        let mut groups: Vec<usize> = thresholds.thresholds().to_vec();
        groups.sort_unstable();
        groups.dedup();

        let solve_taus = |prices: &[f64]| -> Result<Vec<usize>, JoacError> {
            let inst = self.aging_instance(prices.to_vec())?;
            let sol = solve_average_reward(&inst, 1e-9)?;
            Ok(extract_thresholds(&sol)?.thresholds().to_vec())
        };

        // Start everything at the prohibitive ceiling, fit groups from the
        // smallest target threshold up, then sweep again to settle cross
        // effects.
        let mut prices = vec![price_hi; l];
        for sweep in 0..3 {
            let mut changed = false;
            for &target in &groups {
                let members: Vec<usize> = (0..l)
                    .filter(|&i| thresholds.threshold(i) == target)
                    .collect();
                if target == 0 {
                    for &m in &members {
                        if prices[m] != 0.0 {
                            prices[m] = 0.0;
                            changed = true;
                        }
                    }
                    continue;
                }
                // Predicate: all members reach at least the target threshold.
                // Monotone non-decreasing in the group price.
                let reaches = |p: f64, prices: &mut Vec<f64>| -> Result<bool, JoacError> {
                    for &m in &members {
                        prices[m] = p;
                    }
                    let taus = solve_taus(prices)?;
                    Ok(members.iter().all(|&m| taus[m] >= target))
                };
                let mut lo = 0.0f64;
                let mut hi = price_hi;
                if !reaches(hi, &mut prices)? {
                    // Even the ceiling cannot push the thresholds this high.
                    continue;
                }
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if reaches(mid, &mut prices)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                if reaches(hi, &mut prices)? {
                    changed = true;
                }
            }
            if sweep > 0 && !changed {
                break;
            }
        }

        let achieved = solve_taus(&prices)?;
        let verified: Vec<bool> = (0..l)
            .map(|i| achieved[i] == thresholds.threshold(i))
            .collect();
        let calibration = PriceCalibration {
            prices,
            achieved: achieved.clone(),
            verified: verified.clone(),
        };
        if let Some(bad) = verified.iter().position(|v| !v) {
            return Err(JoacError::Uncalibratable {
                location: bad,
                target: thresholds.threshold(bad),
                achieved: achieved[bad],
                calibration: Box::new(calibration),
            });
        }
        Ok(calibration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp;
    use crate::testing::{random_mdp_instance, random_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_instance(costs: Vec<f64>, model: Arc<MobilityModel>) -> JoacInstance {
        let l = model.num_locations();
        JoacInstance {
            model,
            costs,
            capacities: vec![1e9; l],
            device_count: 1,
            mean_size: 1.0,
            slot_seconds: 1.0,
            latency_target: 4,
            epsilon: Epsilon::Scalar(0.3),
            max_age: 8,
            utility: AgingMdpInstance::linear_utility(8),
            cap_t_max_at_d_plus_3: false,
        }
    }

    #[test]
    fn zero_thresholds_cost_is_flat_price_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = Arc::new(random_model(4, &mut rng));
        let costs = vec![1.0, 2.0, 3.0, 4.0];
        let inst = small_instance(costs.clone(), Arc::clone(&model));
        let w = inst
            .objective(&ThresholdPolicy::uniform(4, 0))
            .unwrap();
        let expect: f64 = (0..4).map(|j| costs[j] * model.stationary()[j]).sum();
        assert!((w - expect).abs() < 1e-9);
    }

    #[test]
    fn uniform_costs_make_objective_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = Arc::new(random_model(3, &mut rng));
        let inst = small_instance(vec![2.5; 3], model);
        let w0 = inst.objective(&ThresholdPolicy::uniform(3, 0)).unwrap();
        for taus in [[1, 0, 2], [3, 3, 3], [0, 2, 1]] {
            let w = inst
                .objective(&ThresholdPolicy::new(taus.to_vec()))
                .unwrap();
            assert!((w - w0).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_scales_with_costs_and_stays_within_conservation_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = Arc::new(random_model(4, &mut rng));
        let costs = vec![1.0, 5.0, 2.0, 4.0];
        let inst = small_instance(costs.clone(), Arc::clone(&model));
        let mut scaled = small_instance(costs.iter().map(|c| 3.0 * c).collect(), model);
        scaled.capacities = inst.capacities.clone();
        let tau = ThresholdPolicy::new(vec![2, 0, 1, 3]);
        let w = inst.objective(&tau).unwrap();
        assert!((scaled.objective(&tau).unwrap() - 3.0 * w).abs() < 1e-9);
        let total_d: f64 = inst.demand_scale();
        assert!(w >= 1.0 * total_d - 1e-9);
        assert!(w <= 5.0 * total_d + 1e-9);
    }

    #[test]
    fn zero_vector_feasible_under_ample_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let model = Arc::new(random_model(3, &mut rng));
        let inst = small_instance(vec![1.0; 3], model);
        let report = inst.feasible(&ThresholdPolicy::uniform(3, 0)).unwrap();
        assert!(report.feasible());
    }

    #[test]
    fn deferring_origin_reports_aoi_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let model = Arc::new(random_model(2, &mut rng));
        let mut inst = small_instance(vec![1.0, 1.0], model);
        inst.latency_target = 1;
        inst.epsilon = Epsilon::Scalar(0.05);
        let report = inst.feasible(&ThresholdPolicy::new(vec![0, 2])).unwrap();
        assert!(!report.feasible());
        assert_eq!(report.aoi_violations.len(), 1);
        assert_eq!(report.aoi_violations[0].0, 1);
    }

    #[test]
    fn tiny_capacity_reports_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let model = Arc::new(random_model(3, &mut rng));
        let mut inst = small_instance(vec![1.0; 3], model);
        inst.capacities[0] = 1e-9;
        let report = inst.feasible(&ThresholdPolicy::uniform(3, 0)).unwrap();
        assert!(!report.feasible());
        assert!(report
            .capacity_violations
            .iter()
            .any(|&(j, y, b)| j == 0 && y > b));
    }

    #[test]
    fn t_max_single_location_is_d_minus_one() {
        // One location: upload happens at exactly age tau + 1, so the tail
        // constraint P(age > d) < eps forces tau + 1 <= d.
        let model = Arc::new(
            MobilityModel::from_transitions(nalgebra::DMatrix::from_row_slice(1, 1, &[1.0]))
                .unwrap(),
        );
        let mut inst = small_instance(vec![1.0], model);
        inst.epsilon = Epsilon::Scalar(0.05);
        for d in 2..6 {
            inst.latency_target = d;
            assert_eq!(inst.t_max().unwrap(), d - 1);
        }
    }

    #[test]
    fn t_max_caps_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let model = Arc::new(random_model(3, &mut rng));
        let mut inst = small_instance(vec![1.0; 3], model);
        inst.epsilon = Epsilon::Scalar(0.999);
        inst.latency_target = 6;
        // Vacuous tolerance: the M - 1 guard cap applies.
        assert_eq!(inst.t_max().unwrap(), inst.max_age - 1);
        inst.cap_t_max_at_d_plus_3 = true;
        inst.max_age = 20;
        inst.utility = AgingMdpInstance::linear_utility(20);
        assert_eq!(inst.t_max().unwrap(), inst.latency_target + 3);
    }

    #[test]
    fn t_max_monotone_in_d_and_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = Arc::new(random_model(4, &mut rng));
        let mut inst = small_instance(vec![1.0; 4], model);
        inst.max_age = 12;
        inst.utility = AgingMdpInstance::linear_utility(12);
        let mut prev = 0;
        for d in 1..8 {
            inst.latency_target = d;
            let t = inst.t_max().unwrap();
            assert!(t >= prev);
            prev = t;
        }
        inst.latency_target = 4;
        let mut prev = 0;
        for eps in [0.01, 0.1, 0.3, 0.7] {
            inst.epsilon = Epsilon::Scalar(eps);
            let t = inst.t_max().unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn calibrate_zero_thresholds_gives_zero_prices() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let model = Arc::new(random_model(3, &mut rng));
        let inst = small_instance(vec![1.0; 3], model);
        let cal = inst
            .calibrate_prices(&ThresholdPolicy::uniform(3, 0))
            .unwrap();
        assert_eq!(cal.prices, vec![0.0; 3]);
        assert!(cal.verified.iter().all(|&v| v));
    }

    #[test]
    fn calibrate_round_trips_mdp_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..5 {
            let mdp_inst = random_mdp_instance(4, 8, 3, &mut rng);
            let sol = mdp::solve_average_reward(&mdp_inst, 1e-9).unwrap();
            let target = mdp::extract_thresholds(&sol).unwrap();
            let mut joac = small_instance(vec![1.0; 4], Arc::clone(&mdp_inst.model));
            joac.max_age = mdp_inst.max_age;
            joac.utility = mdp_inst.utility.clone();
            let cal = joac.calibrate_prices(&target).unwrap();
            assert_eq!(cal.achieved, target.thresholds());
        }
    }

    #[test]
    fn unreachable_thresholds_are_uncalibratable() {
        // Flat utility: deferring never costs anything, so any positive
        // price means never upload (tau = M) and a zero price means upload
        // immediately (tau = 0). Intermediate thresholds are unreachable.
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let model = Arc::new(random_model(2, &mut rng));
        let mut inst = small_instance(vec![1.0, 1.0], model);
        inst.max_age = 4;
        inst.latency_target = 2;
        inst.utility = vec![1.0; 4];
        let err = inst
            .calibrate_prices(&ThresholdPolicy::new(vec![0, 2]))
            .unwrap_err();
        match err {
            JoacError::Uncalibratable {
                location,
                target,
                calibration,
                ..
            } => {
                assert_eq!(location, 1);
                assert_eq!(target, 2);
                assert!(!calibration.verified[1]);
            }
            other => panic!("expected Uncalibratable, got {other}"),
        }
    }
}
