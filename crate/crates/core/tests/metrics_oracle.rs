mod common;

use cavscreen::metrics::{auroc, bedroc, enrichment_factor, RankedEntry, RankedLibrary, DEFAULT_BEDROC_ALPHA};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn library_case(seed: u64) -> Vec<RankedEntry> {
    let mut r = rng(seed);
    let n = r.random_range(2..=500);
    let n_act = r.random_range(1..n);
    random_library(&mut r, n, n_act, seed % 3 == 0)
}

#[test]
fn matches_brute_force_on_random_libraries() {
    for seed in 0..500 {
        let entries = library_case(seed);
        let ranked = RankedLibrary::new(entries.clone()).unwrap();
        let b = bedroc(&ranked, DEFAULT_BEDROC_ALPHA).unwrap();
        assert!(
            (b - oracle_bedroc(&entries, DEFAULT_BEDROC_ALPHA)).abs() <= 1e-9,
            "bedroc seed {seed}"
        );
        for delta in [0.5, 1.0, 5.0] {
            let ef = enrichment_factor(&ranked, delta).unwrap();
            assert!((ef - oracle_ef(&entries, delta)).abs() <= 1e-9, "ef{delta} seed {seed}");
        }
        let a = auroc(&ranked).unwrap();
        assert!((a - oracle_auroc(&entries)).abs() <= 1e-9, "auroc seed {seed}");
    }
}

#[test]
fn bedroc_extremes() {
    let mut entries: Vec<RankedEntry> = (0..100)
        .map(|i| RankedEntry {
            ligand_id: format!("l{i}"),
            score: -(i as f64),
            is_active: i == 0,
        })
        .collect();
    let best = bedroc(&RankedLibrary::new(entries.clone()).unwrap(), 80.5).unwrap();
    assert!((best - 1.0).abs() <= 1e-3, "{best}");
    entries[0].is_active = false;
    entries[99].is_active = true;
    let worst = bedroc(&RankedLibrary::new(entries).unwrap(), 80.5).unwrap();
    assert!(worst <= 1e-3, "{worst}");
}

#[test]
fn ef_of_random_order_is_near_one() {
    let mut r = rng(9);
    let mut total = 0.0;
    let trials = 200;
    for _ in 0..trials {
        let entries = random_library(&mut r, 1000, 100, false)
            .into_iter()
            .map(|mut e| {
                e.score = r.random_range(0.0..1.0);
                e
            })
            .collect();
        total += enrichment_factor(&RankedLibrary::new(entries).unwrap(), 10.0).unwrap();
    }
    let mean = total / trials as f64;
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strictly_monotone_transform_leaves_metrics_unchanged(seed in 0u64..10_000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let entries = library_case(seed);
        let moved: Vec<RankedEntry> = entries
            .iter()
            .map(|e| RankedEntry { score: (scale * e.score + shift).exp(), ..e.clone() })
            .collect();
        let a = RankedLibrary::new(entries).unwrap();
        let b = RankedLibrary::new(moved).unwrap();
        prop_assert_eq!(a.active_ranks(), b.active_ranks());
        prop_assert_eq!(auroc(&a).unwrap(), auroc(&b).unwrap());
        prop_assert_eq!(bedroc(&a, 80.5).unwrap(), bedroc(&b, 80.5).unwrap());
        prop_assert_eq!(enrichment_factor(&a, 1.0).unwrap(), enrichment_factor(&b, 1.0).unwrap());
    }

    #[test]
    fn metric_ranges(seed in 0u64..10_000) {
        let ranked = RankedLibrary::new(library_case(seed)).unwrap();
        let a = auroc(&ranked).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let b = bedroc(&ranked, 80.5).unwrap();
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&b));
        let ef = enrichment_factor(&ranked, 1.0).unwrap();
        prop_assert!(ef >= 0.0);
    }
}
