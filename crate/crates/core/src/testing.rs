//! Seeded random-instance generators shared by unit, property and
//! acceptance tests.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::mdp::AgingMdpInstance;
use crate::mobility::MobilityModel;

/// Random irreducible mobility model with strictly positive entries.
pub fn random_model<R: Rng + ?Sized>(num_locations: usize, rng: &mut R) -> MobilityModel {
    let l = num_locations;
    let mut m = DMatrix::<f64>::zeros(l, l);
    for i in 0..l {
        let mut row: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        for j in 0..l {
            m[(i, j)] = row[j];
        }
    }
    MobilityModel::from_transitions(m).expect("positive matrix is irreducible")
}

/// Random aging-control instance: linear utility, `num_classes` distinct
/// prices with the cheapest fixed at zero, random class assignment covering
/// class zero at least once.
pub fn random_mdp_instance<R: Rng + ?Sized>(
    num_locations: usize,
    max_age: usize,
    num_classes: usize,
    rng: &mut R,
) -> AgingMdpInstance {
    let model = Arc::new(random_model(num_locations, rng));
    let mut class_prices = vec![0.0f64];
    let mut p = 0.0;
    for _ in 1..num_classes {
        p += rng.random_range(0.5..4.0);
        class_prices.push(p);
    }
    let prices: Vec<f64> = (0..num_locations)
        .map(|l| {
            if l == 0 {
                class_prices[0]
            } else {
                class_prices[rng.random_range(0..num_classes)]
            }
        })
        .collect();
    AgingMdpInstance::new(
        model,
        max_age,
        AgingMdpInstance::linear_utility(max_age),
        prices,
    )
    .expect("generated instance is valid")
}
