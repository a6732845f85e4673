use voxsplat::selftest;

#[test]
fn every_selftest_check_passes() {
    for seed in [1, 2] {
        let results = selftest::run(seed);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "seed {seed}: {failed:#?}");
    }
}
