//! Per-device aging-control MDP: average-reward solver, threshold policy
//! extraction and closed-form upload-set conditions.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::stationary_distribution;
use crate::mobility::MobilityModel;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("utility must be non-increasing, violated at age {age}")]
    IncreasingUtility { age: usize },
    #[error("price at location {location} is {value}, must be finite and non-negative")]
    InvalidPrice { location: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("max age must be at least 2, got {0}")]
    MaxAgeTooSmall(usize),
    #[error("value iteration did not converge, residual {residual}")]
    NoConvergence { residual: f64 },
    #[error("greedy policy is not of threshold form at (age, location) pairs {0:?}")]
    StructureViolation(Vec<(usize, usize)>),
    #[error("stationary solve of the induced chain failed")]
    StationaryFailed,
}

/// Sorted distinct upload prices and the class index of every location.
///
/// Class `i` holds locations with price equal to the i-th distinct price;
/// prices are compared exactly, no epsilon clustering.
#[derive(Debug, Clone)]
pub struct PriceLadder {
    prices: Vec<f64>,
    class_of: Vec<usize>,
}

impl PriceLadder {
    pub fn new(location_prices: &[f64]) -> Self {
        let mut prices: Vec<f64> = location_prices.to_vec();
        prices.sort_by(|a, b| a.total_cmp(b));
        prices.dedup();
        let class_of = location_prices
            .iter()
            .map(|p| prices.iter().position(|q| q == p).unwrap())
            .collect();
        Self { prices, class_of }
    }

    /// Number of distinct prices K.
    pub fn num_classes(&self) -> usize {
        self.prices.len()
    }

    /// The i-th distinct price (0-based class index).
    pub fn price(&self, class: usize) -> f64 {
        self.prices[class]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn class_of(&self, location: usize) -> usize {
        self.class_of[location]
    }

    /// Locations with price less than or equal to the class price.
    pub fn cheap_set(&self, class: usize) -> Vec<usize> {
        (0..self.class_of.len())
            .filter(|&l| self.class_of[l] <= class)
            .collect()
    }

    /// Locations with price exactly the class price.
    pub fn class_members(&self, class: usize) -> Vec<usize> {
        (0..self.class_of.len())
            .filter(|&l| self.class_of[l] == class)
            .collect()
    }

    /// Probability of moving from `l` into a location of class at most `class`.
    pub fn cheap_mass(&self, model: &MobilityModel, l: usize, class: usize) -> f64 {
        (0..self.class_of.len())
            .filter(|&j| self.class_of[j] <= class)
            .map(|j| model.transition(l, j))
            .sum()
    }
}

/// One device's aging-control problem: mobility, max age, utility curve and
/// per-location upload prices.
#[derive(Debug, Clone)]
pub struct AgingMdpInstance {
    pub model: Arc<MobilityModel>,
    pub max_age: usize,
    pub utility: Vec<f64>,
    pub prices: Vec<f64>,
}

impl AgingMdpInstance {
    pub fn new(
        model: Arc<MobilityModel>,
        max_age: usize,
        utility: Vec<f64>,
        prices: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if max_age < 2 {
            return Err(MdpError::MaxAgeTooSmall(max_age));
        }
        if utility.len() != max_age {
            return Err(MdpError::DimensionMismatch(format!(
                "utility has {} entries, expected max_age = {}",
                utility.len(),
                max_age
            )));
        }
        for x in 1..max_age {
            if utility[x] > utility[x - 1] {
                return Err(MdpError::IncreasingUtility { age: x + 1 });
            }
        }
        if prices.len() != model.num_locations() {
            return Err(MdpError::DimensionMismatch(format!(
                "{} prices for {} locations",
                prices.len(),
                model.num_locations()
            )));
        }
        for (l, &p) in prices.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(MdpError::InvalidPrice {
                    location: l,
                    value: p,
                });
            }
        }
        Ok(Self {
            model,
            max_age,
            utility,
            prices,
        })
    }

    /// Utility of uploading at age `x` (1-based).
    pub fn utility_at(&self, x: usize) -> f64 {
        self.utility[x - 1]
    }

    pub fn num_locations(&self) -> usize {
        self.model.num_locations()
    }

    pub fn price_ladder(&self) -> PriceLadder {
        PriceLadder::new(&self.prices)
    }

    /// Utility decaying linearly with age: U(x) = max(M - x, 0).
    pub fn linear_utility(max_age: usize) -> Vec<f64> {
        (1..=max_age).map(|x| (max_age - x) as f64).collect()
    }
}

/// Binary action table over (age, location): true means upload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    max_age: usize,
    num_locations: usize,
    upload: Vec<bool>,
}

impl DeterministicPolicy {
    pub fn new(max_age: usize, num_locations: usize, upload: Vec<bool>) -> Self {
        assert_eq!(upload.len(), max_age * num_locations);
        Self {
            max_age,
            num_locations,
            upload,
        }
    }

    /// Whether the device uploads at age `x` (1-based) in `location`.
    pub fn uploads(&self, x: usize, location: usize) -> bool {
        self.upload[(x - 1) * self.num_locations + location]
    }

    pub fn max_age(&self) -> usize {
        self.max_age
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }
}

/// Per-location AoI thresholds: upload at location l iff age > tau_l.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdPolicy {
    per_location: Vec<usize>,
}

impl ThresholdPolicy {
    pub fn new(per_location: Vec<usize>) -> Self {
        Self { per_location }
    }

    pub fn uniform(num_locations: usize, tau: usize) -> Self {
        Self {
            per_location: vec![tau; num_locations],
        }
    }

    pub fn thresholds(&self) -> &[usize] {
        &self.per_location
    }

    pub fn threshold(&self, location: usize) -> usize {
        self.per_location[location]
    }

    pub fn num_locations(&self) -> usize {
        self.per_location.len()
    }

    pub fn max_threshold(&self) -> usize {
        self.per_location.iter().copied().max().unwrap_or(0)
    }

    pub fn uploads(&self, x: usize, location: usize) -> bool {
        x > self.per_location[location]
    }

    /// Per-price-class threshold ladder, when the thresholds are
    /// price-consistent: every location of a class shares one threshold and
    /// thresholds are non-decreasing in price. Returns `None` otherwise.
    pub fn per_price(&self, ladder: &PriceLadder) -> Option<Vec<usize>> {
        let mut per_class = vec![None; ladder.num_classes()];
        for (l, &tau) in self.per_location.iter().enumerate() {
            let c = ladder.class_of(l);
            match per_class[c] {
                None => per_class[c] = Some(tau),
                Some(t) if t == tau => {}
                Some(_) => return None,
            }
        }
        let ladder: Vec<usize> = per_class.into_iter().map(|t| t.unwrap()).collect();
        if ladder.windows(2).any(|w| w[0] > w[1]) {
            return None;
        }
        Some(ladder)
    }
}

/// Solution of the average-reward problem.
#[derive(Debug, Clone)]
pub struct MdpSolution {
    max_age: usize,
    num_locations: usize,
    /// Relative value table, anchored at (age 1, location 0).
    value: Vec<f64>,
    /// Exact long-run average reward of the greedy policy.
    pub gain: f64,
    pub policy: DeterministicPolicy,
    /// Final span of the value-iteration update.
    pub residual: f64,
    pub iterations: usize,
}

impl MdpSolution {
    pub fn value(&self, x: usize, location: usize) -> f64 {
        self.value[(x - 1) * self.num_locations + location]
    }

    pub fn max_age(&self) -> usize {
        self.max_age
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }
}

const ITERATION_CAP: usize = 1_000_000;

/// Damping factor of the aperiodicity transform applied inside relative
/// value iteration. Keeps the span convergent on periodic mobility chains;
/// the greedy policy is unchanged and the reported gain is evaluated exactly
/// on the untransformed chain.
const APERIODICITY_DAMPING: f64 = 0.9;

/// Solves the aging-control problem by relative value iteration on the
/// (age, location) state space with reward U(x) - p(l) * a.
///
/// Ties (upload and defer equally good) resolve to upload. The returned gain
/// is the exact stationary average reward of the extracted policy.
pub fn solve_average_reward(
    instance: &AgingMdpInstance,
    tol: f64,
) -> Result<MdpSolution, MdpError> {
    assert!(tol > 0.0);
    let m = instance.max_age;
    let l = instance.num_locations();
    let n = m * l;
    let tau = APERIODICITY_DAMPING;
    let lambda = instance.model.transitions();

    let mut v = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let idx = |x: usize, loc: usize| (x - 1) * l + loc;

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < ITERATION_CAP {
        iterations += 1;
        // Expected continuation values per target age, shared across ages.
        let mut cont_fresh = vec![0.0f64; l];
        for loc in 0..l {
            cont_fresh[loc] = (0..l).map(|j| lambda[(loc, j)] * v[idx(1, j)]).sum();
        }
        for x in 1..=m {
            let xn = (x + 1).min(m);
            for loc in 0..l {
                let cont_defer: f64 = (0..l).map(|j| lambda[(loc, j)] * v[idx(xn, j)]).sum();
                let u = instance.utility_at(x);
                let q1 = tau * (u - instance.prices[loc] + cont_fresh[loc]);
                let q0 = tau * (u + cont_defer);
                next[idx(x, loc)] = q1.max(q0) + (1.0 - tau) * v[idx(x, loc)];
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let d = next[s] - v[s];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        residual = hi - lo;
        let anchor = next[idx(1, 0)];
        for s in 0..n {
            v[s] = next[s] - anchor;
        }
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(MdpError::NoConvergence { residual });
    }

    // Greedy policy, ties to upload.
    let mut upload = vec![false; n];
    let mut cont_fresh = vec![0.0f64; l];
    for loc in 0..l {
        cont_fresh[loc] = (0..l).map(|j| lambda[(loc, j)] * v[idx(1, j)]).sum();
    }
    for x in 1..=m {
        let xn = (x + 1).min(m);
        for loc in 0..l {
            let cont_defer: f64 = (0..l).map(|j| lambda[(loc, j)] * v[idx(xn, j)]).sum();
            let delta_h = -instance.prices[loc] + cont_fresh[loc] - cont_defer;
            upload[idx(x, loc)] = delta_h >= 0.0;
        }
    }
    let policy = DeterministicPolicy::new(m, l, upload);
    let gain = policy_average_reward(instance, &policy)?;
    Ok(MdpSolution {
        max_age: m,
        num_locations: l,
        value: v,
        gain,
        policy,
        residual,
        iterations,
    })
}

/// Extracts per-location thresholds from the greedy policy and verifies the
/// threshold shape: upload iff age > tau_l.
pub fn extract_thresholds(solution: &MdpSolution) -> Result<ThresholdPolicy, MdpError> {
    let m = solution.max_age;
    let l = solution.num_locations;
    let mut taus = Vec::with_capacity(l);
    let mut violations = Vec::new();
    for loc in 0..l {
        let tau = (1..=m)
            .rev()
            .find(|&x| !solution.policy.uploads(x, loc))
            .unwrap_or(0);
        for x in 1..=m {
            if solution.policy.uploads(x, loc) != (x > tau) {
                violations.push((x, loc));
            }
        }
        taus.push(tau);
    }
    if !violations.is_empty() {
        return Err(MdpError::StructureViolation(violations));
    }
    Ok(ThresholdPolicy::new(taus))
}

/// Exact long-run average reward of a threshold policy, from the stationary
/// distribution of the induced (age, location) chain.
pub fn average_reward(
    instance: &AgingMdpInstance,
    policy: &ThresholdPolicy,
) -> Result<f64, MdpError> {
    if policy.num_locations() != instance.num_locations() {
        return Err(MdpError::DimensionMismatch(format!(
            "policy covers {} locations, instance has {}",
            policy.num_locations(),
            instance.num_locations()
        )));
    }
    let m = instance.max_age;
    let l = instance.num_locations();
    let upload: Vec<bool> = (1..=m)
        .flat_map(|x| (0..l).map(move |loc| policy.uploads(x, loc)))
        .collect();
    policy_average_reward(
        instance,
        &DeterministicPolicy::new(m, l, upload),
    )
}

/// Exact long-run average reward of an arbitrary deterministic policy.
pub fn policy_average_reward(
    instance: &AgingMdpInstance,
    policy: &DeterministicPolicy,
) -> Result<f64, MdpError> {
    let m = instance.max_age;
    let l = instance.num_locations();
    let n = m * l;
    let lambda = instance.model.transitions();
    let idx = |x: usize, loc: usize| (x - 1) * l + loc;
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut reward = vec![0.0f64; n];
    for x in 1..=m {
        for loc in 0..l {
            let s = idx(x, loc);
            let a = policy.uploads(x, loc);
            let xn = if a { 1 } else { (x + 1).min(m) };
            for j in 0..l {
                p[(s, idx(xn, j))] += lambda[(loc, j)];
            }
            reward[s] = instance.utility_at(x) - if a { instance.prices[loc] } else { 0.0 };
        }
    }
    let pi = stationary_distribution(&p).ok_or(MdpError::StationaryFailed)?;
    Ok(pi.iter().zip(reward.iter()).map(|(a, b)| a * b).sum())
}

/// Stationary upload probability per price class under a threshold policy:
/// the probability that, in steady state, the device uploads at a location of
/// the given class this slot.
pub fn upload_mass_per_class(
    instance: &AgingMdpInstance,
    policy: &ThresholdPolicy,
) -> Result<Vec<f64>, MdpError> {
    let m = instance.max_age;
    let l = instance.num_locations();
    let n = m * l;
    let lambda = instance.model.transitions();
    let ladder = instance.price_ladder();
    let idx = |x: usize, loc: usize| (x - 1) * l + loc;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for x in 1..=m {
        for loc in 0..l {
            let s = idx(x, loc);
            let xn = if policy.uploads(x, loc) {
                1
            } else {
                (x + 1).min(m)
            };
            for j in 0..l {
                p[(s, idx(xn, j))] += lambda[(loc, j)];
            }
        }
    }
    let pi = stationary_distribution(&p).ok_or(MdpError::StationaryFailed)?;
    let mut mass = vec![0.0f64; ladder.num_classes()];
    for x in 1..=m {
        for loc in 0..l {
            if policy.uploads(x, loc) {
                mass[ladder.class_of(loc)] += pi[idx(x, loc)];
            }
        }
    }
    Ok(mass)
}

/// Raw predicate values and the predicted upload price set from the
/// closed-form upload-set conditions.
#[derive(Debug, Clone)]
pub struct UploadSetPrediction {
    /// Predicted set of prices used with positive probability.
    pub predicted_prices: Vec<f64>,
    /// Predicted class indices (prefix of the ladder).
    pub predicted_classes: Vec<usize>,
    /// For each class i, the margins p(l) - S_l(i) over locations l above
    /// class i; all positive means no location above class i uploads.
    pub cutoff_margins: Vec<Vec<(usize, f64)>>,
    /// For each class i, the margin U(1) - (Kbar U(2) + (1 - Kbar) U(M)) - P_i
    /// per class member; positive means uploading at class i pays off.
    pub worth_margins: Vec<Vec<(usize, f64)>>,
    /// Whether the never-upload condition holds at every location.
    pub never_upload: bool,
}

/// Evaluates the closed-form conditions for the set of prices the optimal
/// policy uses with positive probability.
///
/// The cutoff predicate for class i states that at every location priced
/// above P_i the deferral value S_l(i) is below the local price, so no
/// upload happens there; the predicted set is the classes up to the first
/// class whose cutoff predicate holds.
pub fn upload_set_conditions(instance: &AgingMdpInstance) -> UploadSetPrediction {
    let ladder = instance.price_ladder();
    let k = ladder.num_classes();
    let m = instance.max_age;
    let model = &instance.model;
    let u = |x: usize| instance.utility_at(x);
    let u_m = u(m);
    let tail: f64 = (2..=m).map(|x| u(x) - u_m).sum();
    let full: f64 = (1..=m).map(|x| u(x) - u_m).sum();

    // S_l(i) = sum_{x=2..M} (U(x)-U(M)) (1 - K_{lP_i}) + U(1) - U(M)
    let s_value = |l: usize, class: usize| -> f64 {
        let cheap = ladder.cheap_mass(model, l, class);
        tail * (1.0 - cheap) + u(1) - u_m
    };

    let mut cutoff_margins = Vec::with_capacity(k);
    let mut worth_margins = Vec::with_capacity(k);
    for i in 0..k {
        let above: Vec<(usize, f64)> = (0..instance.num_locations())
            .filter(|&l| ladder.class_of(l) > i)
            .map(|l| (l, instance.prices[l] - s_value(l, i)))
            .collect();
        cutoff_margins.push(above);
        let members: Vec<(usize, f64)> = ladder
            .class_members(i)
            .into_iter()
            .map(|l| {
                let kbar = ladder.cheap_mass(model, l, i)
                    - if i > 0 {
                        ladder.cheap_mass(model, l, i - 1)
                    } else {
                        0.0
                    };
                let margin = u(1) - (kbar * u(2) + (1.0 - kbar) * u_m) - ladder.price(i);
                (l, margin)
            })
            .collect();
        worth_margins.push(members);
    }

    let never_upload = (0..instance.num_locations()).all(|l| full < instance.prices[l]);

    let predicted_classes: Vec<usize> = if never_upload {
        Vec::new()
    } else {
        let top = (0..k)
            .find(|&i| cutoff_margins[i].iter().all(|&(_, margin)| margin > 0.0))
            .unwrap_or(k - 1);
        (0..=top).collect()
    };
    let predicted_prices = predicted_classes.iter().map(|&i| ladder.price(i)).collect();

    UploadSetPrediction {
        predicted_prices,
        predicted_classes,
        cutoff_margins,
        worth_margins,
        never_upload,
    }
}
