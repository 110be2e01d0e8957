mod common;

use common::{adjacency_gradient_error, gradient_instance, scorer_gradient_error, scorer_instance,
    victim_param_gradient_error};
use projrank::Arch;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const TOLERANCE: f64 = 1e-4;

fn worst_over_instances(arch: Arch, check: impl Fn(&projrank::Graph, &projrank::VictimModel) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..INSTANCES)
        .map(|id| {
            let (g, victim) = gradient_instance(&mut rng, arch, id);
            check(&g, &victim)
        })
        .fold(0.0, f64::max)
}

#[test]
fn gcn_parameter_gradients_match_finite_differences() {
    let err = worst_over_instances(Arch::Gcn, victim_param_gradient_error);
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn gat_parameter_gradients_match_finite_differences() {
    let err = worst_over_instances(Arch::Gat, victim_param_gradient_error);
    assert!(err < TOLERANCE, "relative error {err}");
}

#[test]
fn adjacency_gradients_match_finite_differences() {
    for arch in [Arch::Gcn, Arch::Gat] {
        let err = worst_over_instances(arch, adjacency_gradient_error);
        assert!(err < TOLERANCE, "{arch:?}: relative error {err}");
    }
}

#[test]
fn scorer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let err = (0..INSTANCES)
        .map(|id| {
            let (g, victim, strategy) = scorer_instance(&mut rng, id);
            scorer_gradient_error(&g, &victim, &strategy)
        })
        .fold(0.0, f64::max);
    assert!(err < TOLERANCE, "relative error {err}");
}
