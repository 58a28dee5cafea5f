//! MALA with every data term removed must leave the standard matrix-normal
//! distribution invariant.

mod common;

#[test]
fn second_moment_is_one_after_adaptation() {
    let (second, rate) = common::checks::mala_data_free(100_000);
    assert!((second - 1.0).abs() < 0.03, "second moment {second}");
    assert!(rate > 0.3 && rate < 0.9, "acceptance {rate}");
}
