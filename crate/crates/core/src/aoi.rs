//! Closed-form upload analytics under a threshold policy: where and when
//! collected data is uploaded, per-device and aggregate flow rates, and the
//! age-of-information distribution per origin.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::mdp::ThresholdPolicy;
use crate::mobility::MobilityModel;

/// Dense f tensors are refused above this location count.
pub const MAX_DENSE_LOCATIONS: usize = 512;

#[derive(Debug, Error)]
pub enum AoiError {
    #[error("{num_locations} locations exceed the dense-tensor limit {MAX_DENSE_LOCATIONS}")]
    TooLarge { num_locations: usize },
    #[error("thresholds cover {policy} locations, model has {model}")]
    DimensionMismatch { policy: usize, model: usize },
}

/// Upload-time distribution tensor f(i, z, t) and derived per-device rates.
///
/// `t` runs from 1 to `t_cap = max(tau) + 1`; the upload is forced at
/// `t_cap` regardless of location, so every origin's mass sums to one.
#[derive(Debug, Clone)]
pub struct UploadAnalytics {
    num_locations: usize,
    t_cap: usize,
    f: Vec<f64>,
    y: DMatrix<f64>,
}

impl UploadAnalytics {
    /// Computes the full tensor by forward propagation, one origin at a time
    /// (origins evaluated in parallel).
    pub fn compute(
        model: &MobilityModel,
        thresholds: &ThresholdPolicy,
    ) -> Result<Self, AoiError> {
        let l = check_dims(model, thresholds)?;
        let t_cap = thresholds.max_threshold() + 1;
        let slices: Vec<Vec<f64>> = (0..l)
            .into_par_iter()
            .map(|origin| upload_time_distribution(model, thresholds, origin))
            .collect();
        let mut f = Vec::with_capacity(l * l * t_cap);
        for slice in &slices {
            f.extend_from_slice(slice);
        }
        let mut y = DMatrix::<f64>::zeros(l, l);
        for i in 0..l {
            for z in 0..l {
                y[(i, z)] = (0..t_cap).map(|ti| slices[i][z * t_cap + ti]).sum();
            }
        }
        Ok(Self {
            num_locations: l,
            t_cap,
            f,
            y,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.num_locations
    }

    /// Largest upload time with support: max(tau) + 1.
    pub fn t_cap(&self) -> usize {
        self.t_cap
    }

    /// Probability of collecting at `origin` and uploading at `z` at age `t`.
    pub fn f(&self, origin: usize, z: usize, t: usize) -> f64 {
        if t == 0 || t > self.t_cap {
            return 0.0;
        }
        self.f[(origin * self.num_locations + z) * self.t_cap + (t - 1)]
    }

    /// Per-device rate matrix y: y[(i, z)] is the fraction of data collected
    /// at i that is uploaded at z.
    pub fn per_device_rates(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// P(age at upload > d) for data collected at `origin`.
    pub fn ccdf(&self, origin: usize, d: usize) -> f64 {
        let mut p = 0.0;
        for t in (d + 1)..=self.t_cap {
            for z in 0..self.num_locations {
                p += self.f(origin, z, t);
            }
        }
        p
    }

    /// Expected age at upload for data collected at `origin`.
    pub fn mean_aoi(&self, origin: usize) -> f64 {
        let mut e = 0.0;
        for t in 1..=self.t_cap {
            for z in 0..self.num_locations {
                e += t as f64 * self.f(origin, z, t);
            }
        }
        e
    }
}

fn check_dims(model: &MobilityModel, thresholds: &ThresholdPolicy) -> Result<usize, AoiError> {
    let l = model.num_locations();
    if thresholds.num_locations() != l {
        return Err(AoiError::DimensionMismatch {
            policy: thresholds.num_locations(),
            model: l,
        });
    }
    if l > MAX_DENSE_LOCATIONS {
        return Err(AoiError::TooLarge { num_locations: l });
    }
    Ok(l)
}

/// One origin's slice of f, by forward propagation of the age-conditioned
/// sub-stochastic chain. Layout: `slice[z * t_cap + (t - 1)]`.
///
/// Mass starts at (origin, age 1); each step it either uploads (age exceeds
/// the local threshold) or moves along the mobility chain with age + 1. The
/// upload is certain by age max(tau) + 1, so the slice sums to one.
pub fn upload_time_distribution(
    model: &MobilityModel,
    thresholds: &ThresholdPolicy,
    origin: usize,
) -> Vec<f64> {
    let l = model.num_locations();
    let t_cap = thresholds.max_threshold() + 1;
    let mut slice = vec![0.0f64; l * t_cap];
    let mut alive = vec![0.0f64; l];
    if thresholds.uploads(1, origin) {
        slice[origin * t_cap] = 1.0;
        return slice;
    }
    alive[origin] = 1.0;
    let lambda = model.transitions();
    for t in 2..=t_cap {
        let mut next = vec![0.0f64; l];
        for (from, &mass) in alive.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for z in 0..l {
                next[z] += mass * lambda[(from, z)];
            }
        }
        for z in 0..l {
            if thresholds.uploads(t, z) {
                slice[z * t_cap + (t - 1)] += next[z];
                next[z] = 0.0;
            }
        }
        alive = next;
    }
    slice
}

/// One origin's slice of f via products of memoized taboo-matrix powers.
///
/// The survivor set at age s is R_s = {l : tau_l >= s}; its complement is a
/// taboo set that is constant over stretches of ages, so the alive mass at
/// age t - 1 is a product of cached restricted-matrix powers applied to the
/// origin's unit vector, followed by one free transition with the upload
/// condition at age t. Serves as an independent route to the same tensor.
pub fn taboo_product_distribution(
    model: &MobilityModel,
    thresholds: &ThresholdPolicy,
    origin: usize,
) -> Vec<f64> {
    let l = model.num_locations();
    let t_cap = thresholds.max_threshold() + 1;
    let mut slice = vec![0.0f64; l * t_cap];
    if thresholds.uploads(1, origin) {
        slice[origin * t_cap] = 1.0;
        return slice;
    }

    // Taboo set blocking arrivals at age s: locations uploading at age s.
    let taboo_at = |s: usize| -> Vec<usize> {
        (0..l).filter(|&z| thresholds.uploads(s, z)).collect()
    };
    let mut chains = BTreeMap::new();
    let lambda = model.transitions();

    for t in 2..=t_cap {
        // alive(t-1) = e_origin * prod_{s=2..t-1} B_{A_s}, grouped into runs
        // of equal taboo set.
        let mut v = DVector::<f64>::zeros(l);
        v[origin] = 1.0;
        let mut s = 2usize;
        while s < t {
            let key = taboo_at(s);
            let mut run = 1usize;
            while s + run < t && taboo_at(s + run) == key {
                run += 1;
            }
            let chain = chains.entry(key.clone()).or_insert_with(|| {
                model
                    .taboo_chain(&key.iter().copied().collect())
                    .expect("survivor set non-empty below t_cap")
            });
            v = chain.propagate(&v, run);
            s += run;
        }
        for z in 0..l {
            if thresholds.uploads(t, z) {
                let mass: f64 = (0..l).map(|from| v[from] * lambda[(from, z)]).sum();
                slice[z * t_cap + (t - 1)] += mass;
            }
        }
    }
    slice
}

/// Aggregate demand and upload rates in data volume per second.
#[derive(Debug, Clone)]
pub struct AggregateRates {
    /// D_j = N pi_j F / kappa: rate of data collected at location j.
    pub demand: Vec<f64>,
    /// Y_j: rate of data uploaded at location j.
    pub uploads: Vec<f64>,
}

/// Scales the per-device rate matrix by the collection demand:
/// D_j = N pi_j F / kappa and Y_j = sum_i D_i y_ij.
pub fn aggregate_rates(
    y: &DMatrix<f64>,
    model: &MobilityModel,
    device_count: u64,
    mean_size: f64,
    slot_seconds: f64,
) -> AggregateRates {
    assert!(device_count >= 1);
    assert!(mean_size > 0.0 && slot_seconds > 0.0);
    let l = model.num_locations();
    let scale = device_count as f64 * mean_size / slot_seconds;
    let demand: Vec<f64> = (0..l).map(|j| scale * model.stationary()[j]).collect();
    let uploads: Vec<f64> = (0..l)
        .map(|j| (0..l).map(|i| demand[i] * y[(i, j)]).sum())
        .collect();
    AggregateRates { demand, uploads }
}
