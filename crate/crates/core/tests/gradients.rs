//! Analytic BPTT gradients against central finite differences.

use std::time::Instant;

use gridcast::gradcheck::{check_s2s, check_stack, GradCheckOptions};
use gridcast::lstm::CellVariant;
use gridcast::SeededRng;

/// Twelve configurations drawn from layers {1,2,3} x units {2,4,8} x
/// steps {1,5,10}, alternating cell variants.
pub fn random_configs(seed: u64) -> Vec<GradCheckOptions> {
    let mut rng = SeededRng::new(seed);
    let mut pick = |xs: &[usize]| xs[(rng.next_u64() % xs.len() as u64) as usize];
    (0..12)
        .map(|k| GradCheckOptions {
            layers: pick(&[1, 2, 3]),
            units: pick(&[2, 4, 8]),
            steps: pick(&[1, 5, 10]),
            variant: if k % 2 == 0 { CellVariant::Standard } else { CellVariant::PaperVerbatim },
            seed: 1000 + k as u64,
            ..Default::default()
        })
        .collect()
}

#[test]
fn twelve_random_stacks_match_finite_differences() {
    let t0 = Instant::now();
    for opts in random_configs(2024) {
        let r = check_stack(&opts).unwrap();
        assert!(r.passed(), "{r}");
    }
    assert!(t0.elapsed().as_secs() < 120);
}

#[test]
fn extreme_corner_configs_pass() {
    for (layers, units, steps) in [(1, 2, 1), (3, 8, 10), (1, 16, 10)] {
        for variant in [CellVariant::Standard, CellVariant::PaperVerbatim] {
            let r = check_stack(&GradCheckOptions { layers, units, steps, variant, ..Default::default() }).unwrap();
            assert!(r.passed(), "{r}");
        }
    }
}

#[test]
fn encoder_gradient_through_the_handoff() {
    for variant in [CellVariant::Standard, CellVariant::PaperVerbatim] {
        let r = check_s2s(&GradCheckOptions { layers: 2, units: 4, steps: 5, variant, ..Default::default() }).unwrap();
        assert!(r.passed(), "{r}");
        let enc = r.get("encoder.layer0.w_ix").unwrap();
        assert!(enc.passed && enc.max_rel_error < 1e-5);
    }
}

#[test]
fn mutation_is_detected() {
    let r = check_stack(&GradCheckOptions { corrupt_backward: true, ..Default::default() }).unwrap();
    assert!(!r.passed());
}
