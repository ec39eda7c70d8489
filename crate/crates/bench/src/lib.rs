//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use overlap_dr::datagen::make_dataset;
use overlap_dr::models::build_design;
use overlap_dr::{CovariateForm, Scenario};

/// Correct-form design, treatment and outcome for one simulated dataset.
pub struct Fixture {
    pub design: DMatrix<f64>,
    pub z: Vec<bool>,
    pub y: Vec<f64>,
}

pub fn fixture(scenario: &str, n: usize, seed: u64) -> Fixture {
    let sc = Scenario::named(scenario).expect("preset scenario");
    let ds = make_dataset(&sc, n, &mut ChaCha8Rng::seed_from_u64(seed)).expect("dataset");
    let design = build_design(&ds.obs.x, CovariateForm::Correct).expect("design");
    Fixture { design, z: ds.obs.z.clone(), y: ds.obs.y.clone() }
}
