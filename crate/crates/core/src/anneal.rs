//! Simulated annealing over threshold vectors, plus the Metropolis-Hastings
//! building blocks it is made of.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::joac::{JoacError, JoacInstance};
use crate::mdp::ThresholdPolicy;

/// Edge threshold for the neighborhood graph: rates below this are treated
/// as structural zeros.
pub const EDGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AnnealError {
    #[error("invalid annealing config: {0}")]
    InvalidConfig(String),
    #[error("the starting threshold vector is infeasible")]
    NoFeasibleStart,
    #[error(transparent)]
    Joac(#[from] JoacError),
}

/// Cooling schedule for the temperature at (1-based) iteration t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// T_t = a / ln(1 + t); converges to the global optimum when `a` exceeds
    /// the objective range.
    Log,
    /// T_t = a / t^q; faster, no optimality guarantee.
    Power { q: f64 },
}

impl Schedule {
    pub fn temperature(&self, a: f64, t: u64) -> f64 {
        match self {
            Schedule::Log => a / (1.0 + t as f64).ln(),
            Schedule::Power { q } => a / (t as f64).powf(*q),
        }
    }
}

/// Tuning knobs for [`sa_optimize`].
#[derive(Debug, Clone)]
pub struct AnnealConfig {
    /// Cooling numerator; `None` picks (NF/kappa) * max_j C_j, which bounds
    /// the objective range and so satisfies the convergence condition of the
    /// log schedule.
    pub a_hat: Option<f64>,
    pub schedule: Schedule,
    /// Stop once the chain state has not moved for this many iterations.
    pub stop_unchanged: u64,
    /// Stop once the temperature drops below this.
    pub stop_temperature: f64,
    pub iteration_cap: u64,
    /// Override for the per-coordinate range {0..t_max}; `None` derives it
    /// from the instance.
    pub t_max: Option<usize>,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            a_hat: None,
            schedule: Schedule::Log,
            stop_unchanged: 200,
            stop_temperature: 1e-6,
            iteration_cap: 200_000,
            t_max: None,
            seed: 0,
        }
    }
}

/// Why the annealer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Unchanged,
    Temperature,
    IterationCap,
}

/// Outcome of an annealing run.
#[derive(Debug, Clone)]
pub struct AnnealTrace {
    pub best: ThresholdPolicy,
    pub best_cost: f64,
    pub final_state: ThresholdPolicy,
    pub final_cost: f64,
    pub iterations: u64,
    pub accepted: u64,
    pub rejected_infeasible: u64,
    pub stop_reason: StopReason,
    /// (iteration, current cost) samples, roughly 1000 per run.
    pub cost_history: Vec<(u64, f64)>,
    /// (iteration, best cost) at every improvement of the best-so-far.
    pub best_history: Vec<(u64, f64)>,
}

/// Static neighborhood structure over locations: i and j are neighbors when
/// traffic can flow between them under the widest thresholds.
#[derive(Debug, Clone)]
pub struct NeighborhoodGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NeighborhoodGraph {
    /// Graph from an explicit edge list; self-loops ignored.
    pub fn from_edges(num_vertices: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); num_vertices];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self { adjacency }
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Builds the location neighborhood graph: an edge between i and j when data
/// collected at one can be uploaded at the other under uniform t_max
/// thresholds (the widest flow pattern any vector in the search space can
/// produce).
pub fn neighborhood_graph(
    instance: &JoacInstance,
    t_max: usize,
) -> Result<NeighborhoodGraph, AnnealError> {
    let l = instance.num_locations();
    let eval = instance.evaluate(&ThresholdPolicy::uniform(l, t_max))?;
    let y = &eval.analytics.per_device_rates();
    let mut adjacency = vec![Vec::new(); l];
    for i in 0..l {
        for j in 0..l {
            if i != j && (y[(i, j)] > EDGE_TOLERANCE || y[(j, i)] > EDGE_TOLERANCE) {
                adjacency[i].push(j);
            }
        }
    }
    Ok(NeighborhoodGraph { adjacency })
}

/// Single-coordinate uniform proposal: coordinate picked uniformly, new value
/// uniform over the t_max alternatives to the current one.
pub fn propose<R: Rng + ?Sized>(
    current: &[usize],
    t_max: usize,
    rng: &mut R,
) -> (usize, usize) {
    let coord = rng.random_range(0..current.len());
    let mut value = rng.random_range(0..t_max);
    if value >= current[coord] {
        value += 1;
    }
    (coord, value)
}

/// Metropolis acceptance probability for a cost increase `delta` at
/// temperature `t`.
pub fn acceptance_probability(delta: f64, t: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-delta / t).exp()
    }
}

/// Exact Boltzmann-Gibbs distribution over all feasible threshold vectors at
/// a fixed temperature. Enumeration-guarded; meant for validating the MH
/// chain on tiny instances.
pub fn boltzmann_target(
    instance: &JoacInstance,
    t_max: usize,
    temperature: f64,
) -> Result<BTreeMap<Vec<usize>, f64>, AnnealError> {
    let l = instance.num_locations();
    let size = ((t_max + 1) as u64).pow(l as u32);
    if size > 100_000 {
        return Err(AnnealError::InvalidConfig(format!(
            "{size} states is too many for exact enumeration"
        )));
    }
    let mut weights = BTreeMap::new();
    let mut taus = vec![0usize; l];
    loop {
        let policy = ThresholdPolicy::new(taus.clone());
        let eval = instance.evaluate(&policy)?;
        if instance.feasibility_of(&eval).feasible() {
            weights.insert(taus.clone(), (-eval.cost / temperature).exp());
        }
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
    let z: f64 = weights.values().sum();
    for w in weights.values_mut() {
        *w /= z;
    }
    Ok(weights)
}

/// Runs the MH chain at a fixed temperature and returns per-state visit
/// counts. Infeasible proposals are rejected outright.
pub fn mh_chain_fixed_temperature(
    instance: &JoacInstance,
    start: &ThresholdPolicy,
    t_max: usize,
    temperature: f64,
    iterations: u64,
    seed: u64,
) -> Result<BTreeMap<Vec<usize>, u64>, AnnealError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = Walker::start(instance, start.clone())?;
    let mut visits: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    for _ in 0..iterations {
        chain.step(instance, t_max, temperature, &mut rng)?;
        *visits.entry(chain.state.thresholds().to_vec()).or_insert(0) += 1;
    }
    Ok(visits)
}

/// MH chain state with a cost memo keyed by threshold vector.
pub(crate) struct Walker {
    pub(crate) state: ThresholdPolicy,
    pub(crate) cost: f64,
    memo: BTreeMap<Vec<usize>, Option<f64>>,
    pub(crate) accepted: u64,
    pub(crate) rejected_infeasible: u64,
}

impl Walker {
    pub(crate) fn start(
        instance: &JoacInstance,
        state: ThresholdPolicy,
    ) -> Result<Self, AnnealError> {
        let eval = instance.evaluate(&state)?;
        if !instance.feasibility_of(&eval).feasible() {
            return Err(AnnealError::NoFeasibleStart);
        }
        let mut memo = BTreeMap::new();
        memo.insert(state.thresholds().to_vec(), Some(eval.cost));
        Ok(Self {
            state,
            cost: eval.cost,
            memo,
            accepted: 0,
            rejected_infeasible: 0,
        })
    }

    /// Feasible cost of a vector, memoized; `None` marks infeasible vectors.
    pub(crate) fn cost_of(
        &mut self,
        instance: &JoacInstance,
        taus: &[usize],
    ) -> Result<Option<f64>, AnnealError> {
        if let Some(c) = self.memo.get(taus) {
            return Ok(*c);
        }
        let eval = instance.evaluate(&ThresholdPolicy::new(taus.to_vec()))?;
        let c = instance
            .feasibility_of(&eval)
            .feasible()
            .then_some(eval.cost);
        self.memo.insert(taus.to_vec(), c);
        Ok(c)
    }

    /// Evaluates any not-yet-memoized candidates in parallel and fills the
    /// memo, so later `cost_of` calls are lookups.
    pub(crate) fn prime(
        &mut self,
        instance: &JoacInstance,
        candidates: &[Vec<usize>],
    ) -> Result<(), AnnealError> {
        use rayon::prelude::*;
        let missing: Vec<Vec<usize>> = candidates
            .iter()
            .filter(|c| !self.memo.contains_key(c.as_slice()))
            .cloned()
            .collect();
        type Evaluated = (Vec<usize>, Result<Option<f64>, JoacError>);
        let computed: Vec<Evaluated> = missing
            .into_par_iter()
            .map(|taus| {
                let r = instance
                    .evaluate(&ThresholdPolicy::new(taus.clone()))
                    .map(|eval| {
                        instance
                            .feasibility_of(&eval)
                            .feasible()
                            .then_some(eval.cost)
                    });
                (taus, r)
            })
            .collect();
        for (taus, r) in computed {
            self.memo.insert(taus, r?);
        }
        Ok(())
    }

    /// One proposal step. Returns whether the state moved.
    pub(crate) fn step<R: Rng + ?Sized>(
        &mut self,
        instance: &JoacInstance,
        t_max: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<bool, AnnealError> {
        let (coord, value) = propose(self.state.thresholds(), t_max, rng);
        let mut candidate = self.state.thresholds().to_vec();
        candidate[coord] = value;
        let Some(cost) = self.cost_of(instance, &candidate)? else {
            self.rejected_infeasible += 1;
            return Ok(false);
        };
        let delta = cost - self.cost;
        if delta <= 0.0 || rng.random::<f64>() < acceptance_probability(delta, temperature) {
            self.state = ThresholdPolicy::new(candidate);
            self.cost = cost;
            self.accepted += 1;
            return Ok(true);
        }
        Ok(false)
    }
}

/// Anneals the threshold vector from the all-zero start under the configured
/// cooling schedule, tracking the best feasible vector seen.
pub fn sa_optimize(
    instance: &JoacInstance,
    config: &AnnealConfig,
) -> Result<AnnealTrace, AnnealError> {
    let l = instance.num_locations();
    let t_max = match config.t_max {
        Some(t) => t,
        None => instance.t_max()?,
    };
    let a = match config.a_hat {
        Some(a) if a > 0.0 => a,
        Some(a) => {
            return Err(AnnealError::InvalidConfig(format!(
                "cooling numerator must be positive, got {a}"
            )))
        }
        None => {
            instance.demand_scale()
                * instance
                    .costs
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max)
        }
    };
    if config.iteration_cap == 0 {
        return Err(AnnealError::InvalidConfig("iteration cap is zero".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chain = Walker::start(instance, ThresholdPolicy::uniform(l, 0))?;
    let mut best = chain.state.clone();
    let mut best_cost = chain.cost;
    let mut unchanged = 0u64;
    let sample_every = (config.iteration_cap / 1000).max(1);
    let mut cost_history = vec![(0, chain.cost)];
    let mut best_history = vec![(0, best_cost)];
    let mut iterations = 0u64;
    let stop_reason;
    loop {
        if iterations >= config.iteration_cap {
            stop_reason = StopReason::IterationCap;
            break;
        }
        iterations += 1;
        let temperature = config.schedule.temperature(a, iterations);
        if temperature < config.stop_temperature {
            stop_reason = StopReason::Temperature;
            break;
        }
        let moved = chain.step(instance, t_max, temperature, &mut rng)?;
        if moved {
            unchanged = 0;
            if chain.cost < best_cost {
                best_cost = chain.cost;
                best = chain.state.clone();
                best_history.push((iterations, best_cost));
            }
        } else {
            unchanged += 1;
            if unchanged >= config.stop_unchanged {
                stop_reason = StopReason::Unchanged;
                break;
            }
        }
        if iterations.is_multiple_of(sample_every) {
            cost_history.push((iterations, chain.cost));
        }
    }
    Ok(AnnealTrace {
        best,
        best_cost,
        final_cost: chain.cost,
        final_state: chain.state,
        iterations,
        accepted: chain.accepted,
        rejected_infeasible: chain.rejected_infeasible,
        stop_reason,
        cost_history,
        best_history,
    })
}
