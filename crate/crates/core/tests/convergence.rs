//! Lattice discretisation of a density speed measure: halving the grid step
//! shrinks the distance to the target law.

use gapdiff::chain::DEFAULT_STEP_CAP;
use gapdiff::measure::{presets, PotentialProfile};
use gapdiff::pathsim::{simulate_poisson_stops, simulate_time_change};
use gapdiff::speed::build_speed_measure;
use gapdiff::stats::{ks_distance, EmpiricalLaw};

fn uniform_ks(h: f64, poisson: bool) -> f64 {
    let p = PotentialProfile::new(presets::uniform(-1.0, 1.0)).unwrap();
    let sm = build_speed_measure(&p).unwrap();
    let xs = if poisson {
        simulate_poisson_stops(&sm, h, 20_000, 11, DEFAULT_STEP_CAP)
            .unwrap()
            .into_iter()
            .map(|s| s.position)
            .collect()
    } else {
        simulate_time_change(&sm, h, 20_000, 11, DEFAULT_STEP_CAP).unwrap()
    };
    ks_distance(&EmpiricalLaw::new(xs).unwrap(), &p)
}

#[test]
fn halving_the_grid_step_reduces_ks_distance() {
    for poisson in [false, true] {
        let ks: Vec<f64> = [0.4, 0.2, 0.1].iter().map(|&h| uniform_ks(h, poisson)).collect();
        assert!(ks[1] < ks[0] && ks[2] < ks[1], "poisson={poisson}: {ks:?}");
    }
}
