mod common;

use common::normalization_deviations;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_distribution_sums_to_one(seed in any::<u64>(), scale in prop_oneof![0.0f64..2.0, 2.0f64..200.0]) {
        for (name, dev) in normalization_deviations(seed, scale) {
            prop_assert!(dev <= 1e-9, "{} deviates by {:e}", name, dev);
        }
    }
}
