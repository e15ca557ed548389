//! Location Markov chain: construction, trace estimation and taboo
//! (restricted) transition probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::linalg::stationary_distribution;

/// Row-sum slack accepted by [`MobilityModel::from_transitions`]. Rows within
/// this tolerance are renormalized exactly.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("row {row} sums to {sum}, not a probability distribution")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("entry ({row},{col}) = {value} outside [0,1]")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("transition matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("chain is reducible: location {unreached} unreachable {direction} location 0")]
    Reducible { unreached: usize, direction: &'static str },
    #[error("stationary distribution solve failed")]
    StationaryFailed,
    #[error("taboo set covers all locations")]
    TabooCoversAll,
    #[error("location index {index} out of range (L = {num_locations})")]
    LocationOutOfRange { index: usize, num_locations: usize },
    #[error("taboo query requires at least one step")]
    ZeroSteps,
    #[error("trace contains no records")]
    EmptyTrace,
    #[error("trace exposes fewer than two distinct locations, no transitions observable")]
    SingleLocationTrace,
}

/// Irreducible location chain with precomputed stationary distribution.
#[derive(Debug, Clone)]
pub struct MobilityModel {
    transitions: DMatrix<f64>,
    stationary: DVector<f64>,
}

impl MobilityModel {
    /// Builds and validates a model from a row-stochastic matrix.
    ///
    /// Rows are renormalized exactly after the tolerance check, the chain is
    /// checked for irreducibility, and the stationary distribution is solved
    /// for (dense solve at small sizes, power iteration above).
    pub fn from_transitions(mut transitions: DMatrix<f64>) -> Result<Self, MobilityError> {
        let (rows, cols) = transitions.shape();
        if rows != cols || rows == 0 {
            return Err(MobilityError::NotSquare { rows, cols });
        }
        let l = rows;
        for i in 0..l {
            for j in 0..l {
                let v = transitions[(i, j)];
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&v) || !v.is_finite() {
                    return Err(MobilityError::InvalidEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = transitions.row(i).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MobilityError::NonStochasticRow { row: i, sum });
            }
            for j in 0..l {
                transitions[(i, j)] /= sum;
            }
        }
        check_irreducible(&transitions)?;
        let stationary =
            stationary_distribution(&transitions).ok_or(MobilityError::StationaryFailed)?;
        Ok(Self {
            transitions,
            stationary,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[(from, to)]
    }

    /// Stationary occupation probabilities.
    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    /// Plain n-step transition matrix.
    pub fn n_step(&self, n: usize) -> DMatrix<f64> {
        let l = self.num_locations();
        let mut acc = DMatrix::<f64>::identity(l, l);
        for _ in 0..n {
            acc *= &self.transitions;
        }
        acc
    }

    /// Restricted chain for a taboo set, with memoized matrix powers.
    pub fn taboo_chain(&self, taboo: &BTreeSet<usize>) -> Result<TabooChain<'_>, MobilityError> {
        let l = self.num_locations();
        for &a in taboo {
            if a >= l {
                return Err(MobilityError::LocationOutOfRange {
                    index: a,
                    num_locations: l,
                });
            }
        }
        if taboo.len() >= l {
            return Err(MobilityError::TabooCoversAll);
        }
        let mut restricted = self.transitions.clone();
        for &a in taboo {
            for i in 0..l {
                restricted[(i, a)] = 0.0;
            }
        }
        Ok(TabooChain {
            model: self,
            restricted,
            powers: RwLock::new(vec![DMatrix::identity(l, l)]),
        })
    }

    /// Samples a location trajectory of `steps` positions, starting from the
    /// stationary distribution.
    pub fn sample_trajectory<R: Rng + ?Sized>(&self, steps: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(steps);
        if steps == 0 {
            return out;
        }
        let mut loc = sample_index(self.stationary.as_slice(), rng);
        out.push(loc);
        for _ in 1..steps {
            loc = self.sample_next(loc, rng);
            out.push(loc);
        }
        out
    }

    /// Samples the next location from the row of `from`.
    pub fn sample_next<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let row: Vec<f64> = self.transitions.row(from).iter().copied().collect();
        sample_index(&row, rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn check_irreducible(p: &DMatrix<f64>) -> Result<(), MobilityError> {
    let l = p.nrows();
    let forward = reach_from(p, false);
    if let Some(u) = (0..l).find(|&i| !forward[i]) {
        return Err(MobilityError::Reducible {
            unreached: u,
            direction: "from",
        });
    }
    let backward = reach_from(p, true);
    if let Some(u) = (0..l).find(|&i| !backward[i]) {
        return Err(MobilityError::Reducible {
            unreached: u,
            direction: "to",
        });
    }
    Ok(())
}

fn reach_from(p: &DMatrix<f64>, transpose: bool) -> Vec<bool> {
    let l = p.nrows();
    let mut seen = vec![false; l];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..l {
            let w = if transpose { p[(j, i)] } else { p[(i, j)] };
            if w > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// A taboo probability query: avoid `taboo_set` at all intermediate steps of
/// an `steps`-step transition. Endpoints are unrestricted.
#[derive(Debug, Clone)]
pub struct TabooQuery {
    pub taboo_set: BTreeSet<usize>,
    pub steps: usize,
}

/// P{l_1..l_{n-1} not in A, l_n = to | l_0 = from}.
///
/// Computed as (B^{n-1} Lambda)[from, to] where B is the transition matrix
/// with the columns of A zeroed.
pub fn taboo_transition(
    model: &MobilityModel,
    query: &TabooQuery,
    from: usize,
    to: usize,
) -> Result<f64, MobilityError> {
    let chain = model.taboo_chain(&query.taboo_set)?;
    chain.transition(query.steps, from, to)
}

/// Restricted transition chain. Powers of the restricted matrix are memoized
/// so repeated queries for growing step counts reuse earlier work.
pub struct TabooChain<'m> {
    model: &'m MobilityModel,
    restricted: DMatrix<f64>,
    powers: RwLock<Vec<DMatrix<f64>>>,
}

impl TabooChain<'_> {
    /// n-step taboo transition probability; intermediate states avoid the
    /// taboo set, endpoints are free.
    pub fn transition(&self, n: usize, from: usize, to: usize) -> Result<f64, MobilityError> {
        let l = self.model.num_locations();
        if from >= l || to >= l {
            return Err(MobilityError::LocationOutOfRange {
                index: from.max(to),
                num_locations: l,
            });
        }
        if n == 0 {
            return Err(MobilityError::ZeroSteps);
        }
        self.ensure_powers(n - 1);
        let powers = self.powers.read().unwrap();
        let row = powers[n - 1].row(from);
        let col = self.model.transitions.column(to);
        Ok(row.iter().zip(col.iter()).map(|(a, b)| a * b).sum())
    }

    /// Applies the k-th restricted power from the left: returns v^T B^k.
    pub fn propagate(&self, v: &DVector<f64>, k: usize) -> DVector<f64> {
        self.ensure_powers(k);
        let powers = self.powers.read().unwrap();
        (v.transpose() * &powers[k]).transpose()
    }

    fn ensure_powers(&self, up_to: usize) {
        {
            let powers = self.powers.read().unwrap();
            if powers.len() > up_to {
                return;
            }
        }
        let mut powers = self.powers.write().unwrap();
        while powers.len() <= up_to {
            let next = powers.last().unwrap() * &self.restricted;
            powers.push(next);
        }
    }
}

/// Raw trace record: one observation of one device in one cell.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub time: f64,
    pub device: String,
    pub cell: String,
}

/// Raw trace record in cartesian coordinates, mapped to the nearest cell
/// center before estimation.
#[derive(Debug, Clone)]
pub struct XyRecord {
    pub time: f64,
    pub device: String,
    pub x: f64,
    pub y: f64,
}

/// How record times falling between resample ticks are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Use the last record at or before the tick.
    #[default]
    HoldLast,
    /// Use the record closest in time to the tick.
    Nearest,
}

/// Estimation output: the model over observed cells plus the remap from
/// compacted indices back to the original cell labels.
#[derive(Debug, Clone)]
pub struct TraceEstimate {
    pub model: MobilityModel,
    /// `remap[i]` is the original label of compacted location index `i`.
    pub remap: Vec<String>,
}

/// Estimates a transition matrix from resampled per-device positions.
///
/// Records are grouped per device and resampled at `resample_step` seconds;
/// consecutive resampled positions contribute transition counts. Cells never
/// observed in the resampled sequences are dropped and the index remap is
/// reported.
pub fn estimate_from_trace(
    records: &[TraceRecord],
    resample_step: f64,
    resampling: Resampling,
) -> Result<TraceEstimate, MobilityError> {
    if records.is_empty() {
        return Err(MobilityError::EmptyTrace);
    }
    assert!(resample_step > 0.0, "resample step must be positive");

    let mut per_device: BTreeMap<&str, Vec<(f64, &str)>> = BTreeMap::new();
    for r in records {
        per_device
            .entry(&r.device)
            .or_default()
            .push((r.time, &r.cell));
    }

    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut observed: BTreeSet<&str> = BTreeSet::new();
    for samples in per_device.values_mut() {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let resampled = resample(samples, resample_step, resampling);
        for cell in &resampled {
            observed.insert(cell);
        }
        for w in resampled.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }

    if observed.len() < 2 {
        return Err(MobilityError::SingleLocationTrace);
    }

    let remap: Vec<String> = observed.iter().map(|s| s.to_string()).collect();
    let index: BTreeMap<&str, usize> = observed
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let l = remap.len();
    let mut matrix = DMatrix::<f64>::zeros(l, l);
    for ((from, to), c) in &counts {
        matrix[(index[from], index[to])] += *c as f64;
    }
    for i in 0..l {
        let sum: f64 = matrix.row(i).iter().sum();
        if sum == 0.0 {
            // Cell only ever seen as a final sample; no outgoing data.
            matrix[(i, i)] = 1.0;
        } else {
            for j in 0..l {
                matrix[(i, j)] /= sum;
            }
        }
    }
    let model = MobilityModel::from_transitions(matrix)?;
    Ok(TraceEstimate { model, remap })
}

fn resample<'a>(
    samples: &[(f64, &'a str)],
    step: f64,
    resampling: Resampling,
) -> Vec<&'a str> {
    if samples.len() < 2 {
        return samples.iter().map(|&(_, c)| c).collect();
    }
    let t0 = samples[0].0;
    let t_end = samples[samples.len() - 1].0;
    let mut out = Vec::new();
    let mut tick = t0;
    let mut idx = 0usize;
    while tick <= t_end + 1e-9 {
        while idx + 1 < samples.len() && samples[idx + 1].0 <= tick + 1e-9 {
            idx += 1;
        }
        let chosen = match resampling {
            Resampling::HoldLast => idx,
            Resampling::Nearest => {
                if idx + 1 < samples.len()
                    && (samples[idx + 1].0 - tick).abs() < (tick - samples[idx].0).abs()
                {
                    idx + 1
                } else {
                    idx
                }
            }
        };
        out.push(samples[chosen].1);
        tick += step;
    }
    out
}

/// Assigns each cartesian record to its nearest cell center, producing cell
/// labeled records. `centers` maps a label to an (x, y) position.
pub fn assign_cells(records: &[XyRecord], centers: &[(String, f64, f64)]) -> Vec<TraceRecord> {
    records
        .iter()
        .map(|r| {
            let (label, _, _) = centers
                .iter()
                .min_by(|a, b| {
                    let da = (a.1 - r.x).powi(2) + (a.2 - r.y).powi(2);
                    let db = (b.1 - r.x).powi(2) + (b.2 - r.y).powi(2);
                    da.total_cmp(&db)
                })
                .expect("cell centers must be non-empty");
            TraceRecord {
                time: r.time,
                device: r.device.clone(),
                cell: label.clone(),
            }
        })
        .collect()
}
