//! Monte Carlo replay and brute-force search oracles.
//!
//! Everything here recomputes quantities the analytic modules derive in
//! closed form, by direct simulation or exhaustive enumeration, so the two
//! routes can be checked against each other.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::joac::{JoacError, JoacInstance};
use crate::mdp::{
    policy_average_reward, AgingMdpInstance, DeterministicPolicy, MdpError, ThresholdPolicy,
};
use crate::mobility::MobilityModel;

/// Enumeration guard: at most this many threshold vectors.
pub const MAX_THRESHOLD_VECTORS: u64 = 1_000_000;
/// Enumeration guard: at most 2^20 deterministic policies.
pub const MAX_POLICY_BITS: usize = 20;
/// Collection-to-upload cycles discarded before recording.
pub const DEFAULT_WARMUP_CYCLES: u64 = 100;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("search space too large: {size} candidates exceed the {limit} cap")]
    TooLarge { size: u128, limit: u128 },
    #[error("no feasible threshold vector in the search range")]
    NoFeasible,
    #[error("trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Joac(#[from] JoacError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Upload decision rule shared by simulation entry points.
pub trait UploadRule {
    fn uploads(&self, age: usize, location: usize) -> bool;
}

impl UploadRule for ThresholdPolicy {
    fn uploads(&self, age: usize, location: usize) -> bool {
        ThresholdPolicy::uploads(self, age, location)
    }
}

impl UploadRule for DeterministicPolicy {
    fn uploads(&self, age: usize, location: usize) -> bool {
        DeterministicPolicy::uploads(self, age, location)
    }
}

/// Outcome of a policy replay.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub slots: u64,
    pub uploads: u64,
    pub total_reward: f64,
    pub average_reward: f64,
}

/// Replays a device under `rule` for `slots` slots after a warmup period and
/// accumulates the per-slot reward U(age) minus the price on upload slots.
pub fn simulate_policy<R: UploadRule>(
    instance: &AgingMdpInstance,
    rule: &R,
    slots: u64,
    warmup_slots: u64,
    seed: u64,
) -> SimResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = instance.max_age;
    let mut loc = instance.model.sample_trajectory(1, &mut rng)[0];
    let mut age = 1usize;
    let mut total = 0.0f64;
    let mut uploads = 0u64;
    for slot in 0..(warmup_slots + slots) {
        let upload = rule.uploads(age, loc);
        if slot >= warmup_slots {
            total += instance.utility_at(age);
            if upload {
                total -= instance.prices[loc];
                uploads += 1;
            }
        }
        age = if upload { 1 } else { (age + 1).min(m) };
        loc = instance.model.sample_next(loc, &mut rng);
    }
    SimResult {
        slots,
        uploads,
        total_reward: total,
        average_reward: total / slots as f64,
    }
}

/// Replays a recorded location trajectory (one entry per slot) under `rule`
/// with the same reward accounting as [`simulate_policy`]. No warmup is
/// discarded: real traces are short.
pub fn simulate_from_trace<R: UploadRule>(
    instance: &AgingMdpInstance,
    rule: &R,
    trajectory: &[usize],
) -> Result<SimResult, SimError> {
    if trajectory.is_empty() {
        return Err(SimError::EmptyTrace);
    }
    let m = instance.max_age;
    let mut age = 1usize;
    let mut total = 0.0f64;
    let mut uploads = 0u64;
    for &loc in trajectory {
        let upload = rule.uploads(age, loc);
        total += instance.utility_at(age);
        if upload {
            total -= instance.prices[loc];
            uploads += 1;
        }
        age = if upload { 1 } else { (age + 1).min(m) };
    }
    Ok(SimResult {
        slots: trajectory.len() as u64,
        uploads,
        total_reward: total,
        average_reward: total / trajectory.len() as f64,
    })
}

/// Empirical upload-time statistics from cycle replay.
#[derive(Debug, Clone)]
pub struct EmpiricalUploads {
    num_locations: usize,
    t_cap: usize,
    /// Recorded cycles that started at each origin.
    pub cycles_per_origin: Vec<u64>,
    counts: Vec<u64>,
    /// Empirical fraction of data collected at i uploaded at z.
    pub y_hat: DMatrix<f64>,
    /// Empirical mean upload age per origin (NaN for unseen origins).
    pub mean_aoi: Vec<f64>,
}

impl EmpiricalUploads {
    /// Empirical estimate of f(origin, z, t).
    pub fn f_hat(&self, origin: usize, z: usize, t: usize) -> f64 {
        if t == 0 || t > self.t_cap || self.cycles_per_origin[origin] == 0 {
            return 0.0;
        }
        let c = self.counts[(origin * self.num_locations + z) * self.t_cap + (t - 1)];
        c as f64 / self.cycles_per_origin[origin] as f64
    }

    pub fn t_cap(&self) -> usize {
        self.t_cap
    }
}

/// Replays `cycles` collection-to-upload cycles under a threshold policy and
/// histograms the upload location and age per collection origin.
pub fn simulate_upload_cycles(
    model: &MobilityModel,
    thresholds: &ThresholdPolicy,
    cycles: u64,
    seed: u64,
) -> EmpiricalUploads {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = model.num_locations();
    let t_cap = thresholds.max_threshold() + 1;
    let mut counts = vec![0u64; l * l * t_cap];
    let mut cycles_per_origin = vec![0u64; l];
    let mut loc = model.sample_trajectory(1, &mut rng)[0];
    for cycle in 0..(DEFAULT_WARMUP_CYCLES + cycles) {
        let origin = loc;
        let mut age = 1usize;
        while !thresholds.uploads(age, loc) {
            loc = model.sample_next(loc, &mut rng);
            age += 1;
        }
        if cycle >= DEFAULT_WARMUP_CYCLES {
            cycles_per_origin[origin] += 1;
            counts[(origin * l + loc) * t_cap + (age - 1)] += 1;
        }
        loc = model.sample_next(loc, &mut rng);
    }
    let mut y_hat = DMatrix::<f64>::zeros(l, l);
    let mut mean_aoi = vec![f64::NAN; l];
    for i in 0..l {
        if cycles_per_origin[i] == 0 {
            continue;
        }
        let n = cycles_per_origin[i] as f64;
        let mut mean = 0.0;
        for z in 0..l {
            let mut tot = 0u64;
            for t in 1..=t_cap {
                let c = counts[(i * l + z) * t_cap + (t - 1)];
                tot += c;
                mean += (t * c as usize) as f64;
            }
            y_hat[(i, z)] = tot as f64 / n;
        }
        mean_aoi[i] = mean / n;
    }
    EmpiricalUploads {
        num_locations: l,
        t_cap,
        cycles_per_origin,
        counts,
        y_hat,
        mean_aoi,
    }
}

/// Result of the exhaustive threshold search.
#[derive(Debug, Clone)]
pub struct ExhaustiveSearch {
    pub thresholds: ThresholdPolicy,
    pub cost: f64,
    pub evaluated: u64,
    pub feasible: u64,
}

/// Enumerates every threshold vector in {0..t_max}^L in lexicographic order
/// and returns the cheapest feasible one; lexicographic order breaks cost
/// ties. Guarded at one million candidates.
pub fn exhaustive_threshold_search(
    instance: &JoacInstance,
    t_max: usize,
) -> Result<ExhaustiveSearch, SimError> {
    let l = instance.num_locations();
    let size = ((t_max + 1) as u128).checked_pow(l as u32);
    match size {
        Some(s) if s <= MAX_THRESHOLD_VECTORS as u128 => {}
        s => {
            return Err(SimError::TooLarge {
                size: s.unwrap_or(u128::MAX),
                limit: MAX_THRESHOLD_VECTORS as u128,
            })
        }
    }
    let mut taus = vec![0usize; l];
    let mut best: Option<(ThresholdPolicy, f64)> = None;
    let mut evaluated = 0u64;
    let mut feasible = 0u64;
    loop {
        evaluated += 1;
        let policy = ThresholdPolicy::new(taus.clone());
        let eval = instance.evaluate(&policy)?;
        if instance.feasibility_of(&eval).feasible() {
            feasible += 1;
            // Strict improvement keeps the lexicographically smallest winner.
            if best.as_ref().is_none_or(|(_, c)| eval.cost < *c) {
                best = Some((policy, eval.cost));
            }
        }
        // Odometer increment from the last coordinate, so iteration order is
        // lexicographic over the vectors.
        let mut pos = l;
        while pos > 0 {
            if taus[pos - 1] < t_max {
                taus[pos - 1] += 1;
                break;
            }
            taus[pos - 1] = 0;
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
    }
    let (thresholds, cost) = best.ok_or(SimError::NoFeasible)?;
    Ok(ExhaustiveSearch {
        thresholds,
        cost,
        evaluated,
        feasible,
    })
}

/// Enumerates all 2^(M * L) deterministic policies, evaluates each exactly
/// through its stationary distribution, and returns the best one. Policies
/// whose induced chain has no computable stationary distribution are skipped.
/// Guarded at 2^20 policies.
pub fn exhaustive_policy_enumeration(
    instance: &AgingMdpInstance,
) -> Result<(DeterministicPolicy, f64), SimError> {
    let m = instance.max_age;
    let l = instance.num_locations();
    let bits = m * l;
    if bits > MAX_POLICY_BITS {
        return Err(SimError::TooLarge {
            size: 1u128 << bits.min(127),
            limit: 1u128 << MAX_POLICY_BITS,
        });
    }
    // Exact-equality tie rule (smaller mask wins) keeps the parallel
    // reduction deterministic.
    let best = (0u32..(1u32 << bits))
        .into_par_iter()
        .filter_map(|mask| {
            let upload: Vec<bool> = (0..bits).map(|b| mask >> b & 1 == 1).collect();
            let policy = DeterministicPolicy::new(m, l, upload);
            policy_average_reward(instance, &policy)
                .ok()
                .map(|gain| (mask, policy, gain))
        })
        .reduce_with(|a, b| {
            if b.2 > a.2 || (b.2 == a.2 && b.0 < a.0) {
                b
            } else {
                a
            }
        });
    best.map(|(_, policy, gain)| (policy, gain))
        .ok_or(SimError::NoFeasible)
}
