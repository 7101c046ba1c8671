mod common;

#[test]
fn clip_bounds_norm_and_keeps_direction() {
    common::clip_properties(512).unwrap();
}

#[test]
fn adam_first_step_has_magnitude_alpha() {
    common::adam_first_step_properties(256).unwrap();
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    common::checkpoint_round_trip_properties(64).unwrap();
}

#[test]
fn same_seed_same_artifacts() {
    common::determinism_check(5).unwrap();
}

#[test]
fn decoder_never_sees_loads() {
    common::decoder_audit_properties(128).unwrap();
}
