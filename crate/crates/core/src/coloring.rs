//! Coloring of the location neighborhood graph and the color-parallel
//! accelerated annealer built on it.
//!
//! Locations of one color class are pairwise non-adjacent, so their threshold
//! updates cannot interact through traffic flow and may run concurrently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anneal::{
    acceptance_probability, AnnealConfig, AnnealError, AnnealTrace, NeighborhoodGraph, StopReason,
    Walker,
};
use crate::joac::JoacInstance;
use crate::mdp::ThresholdPolicy;

/// Vertex cap for the exhaustive chromatic-number oracle.
pub const MAX_EXHAUSTIVE_VERTICES: usize = 12;
/// Coloring iterations interleaved per optimizer slot.
pub const COLORING_ITERATIONS_PER_SLOT: u64 = 10;

#[derive(Debug, Error)]
pub enum ColoringError {
    #[error("coloring assigns {got} vertices, graph has {want}")]
    WrongLength { got: usize, want: usize },
    #[error("coloring gives adjacent vertices {a} and {b} the same color")]
    Conflict { a: usize, b: usize },
    #[error("graph has {0} vertices, exhaustive search is capped at {MAX_EXHAUSTIVE_VERTICES}")]
    TooLarge(usize),
}

/// Assignment of one color id per location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    colors: Vec<usize>,
}

impl Coloring {
    pub fn new(colors: Vec<usize>) -> Self {
        Self { colors }
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn color(&self, vertex: usize) -> usize {
        self.colors[vertex]
    }

    /// Distinct colors in use, sorted.
    pub fn used(&self) -> Vec<usize> {
        let mut used = self.colors.clone();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn num_used(&self) -> usize {
        self.used().len()
    }

    pub fn class(&self, color: usize) -> Vec<usize> {
        (0..self.colors.len())
            .filter(|&v| self.colors[v] == color)
            .collect()
    }

    pub fn check(&self, graph: &NeighborhoodGraph) -> Result<(), ColoringError> {
        if self.colors.len() != graph.num_vertices() {
            return Err(ColoringError::WrongLength {
                got: self.colors.len(),
                want: graph.num_vertices(),
            });
        }
        for a in 0..self.colors.len() {
            for &b in graph.neighbors(a) {
                if b > a && self.colors[a] == self.colors[b] {
                    return Err(ColoringError::Conflict { a, b });
                }
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, graph: &NeighborhoodGraph) -> bool {
        self.check(graph).is_ok()
    }
}

/// First-fit greedy coloring in degree-descending order. Uses at most
/// max-degree + 1 colors.
pub fn greedy_coloring(graph: &NeighborhoodGraph) -> Coloring {
    let n = graph.num_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(graph.degree(v)), v));
    let mut colors = vec![usize::MAX; n];
    for &v in &order {
        let mut taken = vec![false; n];
        for &u in graph.neighbors(v) {
            if colors[u] != usize::MAX {
                taken[colors[u]] = true;
            }
        }
        colors[v] = taken.iter().position(|t| !t).unwrap();
    }
    Coloring::new(colors)
}

/// Exact chromatic number by backtracking; small graphs only.
pub fn exhaustive_chromatic_number(graph: &NeighborhoodGraph) -> Result<usize, ColoringError> {
    let n = graph.num_vertices();
    if n > MAX_EXHAUSTIVE_VERTICES {
        return Err(ColoringError::TooLarge(n));
    }
    if n == 0 {
        return Ok(0);
    }
    fn extend(graph: &NeighborhoodGraph, colors: &mut Vec<usize>, v: usize, k: usize) -> bool {
        if v == graph.num_vertices() {
            return true;
        }
        for c in 0..k {
            if graph.neighbors(v).iter().all(|&u| colors[u] != c) {
                colors[v] = c;
                if extend(graph, colors, v + 1, k) {
                    return true;
                }
                colors[v] = usize::MAX;
            }
        }
        false
    }
    for k in 1..=n {
        let mut colors = vec![usize::MAX; n];
        if extend(graph, &mut colors, 0, k) {
            return Ok(k);
        }
    }
    unreachable!("n colors always suffice")
}

/// Annealing search for colorings with fewer classes; proposals that break
/// feasibility are rejected outright, temperature b / ln(1 + n).
#[derive(Debug, Clone)]
pub struct ColoringAnnealer {
    current: Coloring,
    best: Coloring,
    iteration: u64,
    b: f64,
}

impl ColoringAnnealer {
    /// Starts from a feasible coloring; `b` is the temperature numerator
    /// (the number of locations in the simplest setting).
    pub fn new(
        graph: &NeighborhoodGraph,
        initial: Coloring,
        b: f64,
    ) -> Result<Self, ColoringError> {
        initial.check(graph)?;
        Ok(Self {
            best: initial.clone(),
            current: initial,
            iteration: 0,
            b,
        })
    }

    pub fn current(&self) -> &Coloring {
        &self.current
    }

    pub fn best(&self) -> &Coloring {
        &self.best
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// One proposal: vertex uniform, new color uniform over the other L - 1
    /// ids. Returns `true` when the best-so-far strictly improved (the
    /// broadcast event).
    pub fn step<R: Rng + ?Sized>(&mut self, graph: &NeighborhoodGraph, rng: &mut R) -> bool {
        self.iteration += 1;
        let l = graph.num_vertices();
        let temperature = self.b / (1.0 + self.iteration as f64).ln();
        let vertex = rng.random_range(0..l);
        let mut color = rng.random_range(0..l - 1);
        if color >= self.current.colors[vertex] {
            color += 1;
        }
        if graph
            .neighbors(vertex)
            .iter()
            .any(|&u| self.current.colors[u] == color)
        {
            return false;
        }
        let mut proposal = self.current.clone();
        proposal.colors[vertex] = color;
        let beta = proposal.num_used() as f64 - self.current.num_used() as f64;
        if beta <= 0.0 || rng.random::<f64>() < acceptance_probability(beta, temperature) {
            self.current = proposal;
            if self.current.num_used() < self.best.num_used() {
                self.best = self.current.clone();
                return true;
            }
        }
        false
    }
}

/// Trace of an accelerated run: the plain annealing trace plus coloring
/// progress and merge statistics.
#[derive(Debug, Clone)]
pub struct AcceleratedTrace {
    pub anneal: AnnealTrace,
    /// Best coloring at the end of the run.
    pub coloring: Coloring,
    /// (slot, colors in use) at each broadcast adoption.
    pub coloring_history: Vec<(u64, usize)>,
    /// Per-location changes undone by the merge-feasibility audit.
    pub reverted: u64,
}

/// Color-parallel annealer: per slot, one color class is drawn and every
/// location in it runs one proposal/acceptance step against the slot-start
/// vector; accepted changes merge, with an audit that reverts changes in
/// ascending location order if the merged vector is infeasible. The coloring
/// annealer advances on its own clock, a fixed number of iterations per slot.
pub fn accelerated_sa(
    instance: &JoacInstance,
    config: &AnnealConfig,
) -> Result<AcceleratedTrace, AnnealError> {
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

    let graph = neighborhood(instance, t_max)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut colorer = ColoringAnnealer::new(&graph, greedy_coloring(&graph), l as f64)
        .expect("greedy coloring is feasible");
    let mut adopted = colorer.best().clone();
    let mut coloring_history = vec![(0, adopted.num_used())];

    let mut chain = Walker::start(instance, ThresholdPolicy::uniform(l, 0))?;
    let mut best = chain.state.clone();
    let mut best_cost = chain.cost;
    let mut unchanged = 0u64;
    let mut reverted = 0u64;
    let sample_every = (config.iteration_cap / 1000).max(1);
    let mut cost_history = vec![(0, chain.cost)];
    let mut best_history = vec![(0, best_cost)];
    let mut slots = 0u64;
    let stop_reason;
    loop {
        if slots >= config.iteration_cap {
            stop_reason = StopReason::IterationCap;
            break;
        }
        slots += 1;
        let temperature = config.schedule.temperature(a, slots);
        if temperature < config.stop_temperature {
            stop_reason = StopReason::Temperature;
            break;
        }

        for _ in 0..COLORING_ITERATIONS_PER_SLOT {
            colorer.step(&graph, &mut rng);
        }
        if colorer.best().num_used() < adopted.num_used() {
            adopted = colorer.best().clone();
            coloring_history.push((slots, adopted.num_used()));
        }

        let used = adopted.used();
        let class = adopted.class(used[rng.random_range(0..used.len())]);
        let snapshot = chain.state.thresholds().to_vec();
        let snapshot_cost = chain.cost;

        // Draw all proposals first (ascending location order keeps the RNG
        // stream deterministic), evaluate candidates in parallel, then make
        // the acceptance decisions.
        let mut proposals: Vec<(usize, Vec<usize>)> = Vec::with_capacity(class.len());
        for &loc in &class {
            let mut value = rng.random_range(0..t_max);
            if value >= snapshot[loc] {
                value += 1;
            }
            let mut candidate = snapshot.clone();
            candidate[loc] = value;
            proposals.push((loc, candidate));
        }
        let candidates: Vec<Vec<usize>> = proposals.iter().map(|(_, c)| c.clone()).collect();
        chain.prime(instance, &candidates)?;

        let mut accepted: Vec<(usize, usize)> = Vec::new();
        for (loc, candidate) in &proposals {
            let Some(cost) = chain.cost_of(instance, candidate)? else {
                chain.rejected_infeasible += 1;
                continue;
            };
            let delta = cost - snapshot_cost;
            if delta <= 0.0 || rng.random::<f64>() < acceptance_probability(delta, temperature) {
                accepted.push((*loc, candidate[*loc]));
            }
        }

        // Merge and audit: the color classes come from the tau_max flow
        // proxy, so joint feasibility can still fail; revert in ascending
        // location order until it holds.
        let mut merged = snapshot.clone();
        for &(loc, value) in &accepted {
            merged[loc] = value;
        }
        let mut kept = accepted.clone();
        while !kept.is_empty() && chain.cost_of(instance, &merged)?.is_none() {
            let (loc, _) = kept.remove(0);
            merged[loc] = snapshot[loc];
            reverted += 1;
        }
        if !kept.is_empty() {
            let cost = chain
                .cost_of(instance, &merged)?
                .expect("audited merge is feasible");
            chain.state = ThresholdPolicy::new(merged);
            chain.cost = cost;
            chain.accepted += kept.len() as u64;
        }

        if chain.state.thresholds() == snapshot.as_slice() {
            unchanged += 1;
            if unchanged >= config.stop_unchanged {
                stop_reason = StopReason::Unchanged;
                break;
            }
        } else {
            unchanged = 0;
            if chain.cost < best_cost {
                best_cost = chain.cost;
                best = chain.state.clone();
                best_history.push((slots, best_cost));
            }
        }
        if slots.is_multiple_of(sample_every) {
            cost_history.push((slots, chain.cost));
        }
    }
    Ok(AcceleratedTrace {
        anneal: AnnealTrace {
            best,
            best_cost,
            final_cost: chain.cost,
            final_state: chain.state,
            iterations: slots,
            accepted: chain.accepted,
            rejected_infeasible: chain.rejected_infeasible,
            stop_reason,
            cost_history,
            best_history,
        },
        coloring: adopted,
        coloring_history,
        reverted,
    })
}

fn neighborhood(instance: &JoacInstance, t_max: usize) -> Result<NeighborhoodGraph, AnnealError> {
    crate::anneal::neighborhood_graph(instance, t_max)
}
