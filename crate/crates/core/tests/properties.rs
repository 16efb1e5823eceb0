//! Structural invariants checked on randomized inputs.

mod common;

use batch_conformal::{
    adaptive_simes_p, bonferroni_p, build_calibration, class_count_bounds, conformal_pvalues,
    count_vector, enumerate_set, fisher_p, individual_sets, quantile_m0, rng::seeded_rng,
    simes_p, storey_m0, CalibrationMode, CombinerContext, CombinerSpec, InclusionRule, M0Value,
    RankPValue, ScorePanel,
};
use common::mc_margin;
use proptest::prelude::*;
use rand::Rng;

fn pvec_strategy() -> impl Strategy<Value = Vec<RankPValue>> {
    prop::collection::vec((2u32..=60).prop_flat_map(|den| (1u32..=den, Just(den))), 1..=8)
        .prop_map(|pairs| {
            pairs
                .into_iter()
                .map(|(num, den)| RankPValue::new(num, den).unwrap())
                .collect()
        })
}

proptest! {
    #[test]
    fn combiners_are_permutation_invariant(pvec in pvec_strategy(), seed in 0u64..1000) {
        let mut shuffled = pvec.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut rng = seeded_rng(seed, &[1]);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(
            bonferroni_p(&pvec).unwrap().value(),
            bonferroni_p(&shuffled).unwrap().value()
        );
        prop_assert_eq!(
            simes_p(&pvec).unwrap().value(),
            simes_p(&shuffled).unwrap().value()
        );
        prop_assert_eq!(
            fisher_p(&pvec).unwrap().value(),
            fisher_p(&shuffled).unwrap().value()
        );
        let ell = pvec.len().div_ceil(2);
        prop_assert_eq!(
            quantile_m0(&pvec, ell).unwrap().value(),
            quantile_m0(&shuffled, ell).unwrap().value()
        );
    }

    #[test]
    fn simes_dominates_bonferroni(pvec in pvec_strategy()) {
        let s = simes_p(&pvec).unwrap();
        let b = bonferroni_p(&pvec).unwrap();
        prop_assert!(s.value() <= b.value());
        prop_assert!(s.raw_statistic() <= b.raw_statistic());
    }

    #[test]
    fn combiners_are_coordinatewise_monotone(
        pvec in pvec_strategy(),
        coord in 0usize..8,
        bump in 1u32..10,
    ) {
        let coord = coord % pvec.len();
        let mut bumped = pvec.clone();
        let old = bumped[coord];
        let new_num = (old.numerator() + bump).min(old.denominator());
        bumped[coord] = RankPValue::new(new_num, old.denominator()).unwrap();

        prop_assert!(bonferroni_p(&pvec).unwrap().value() <= bonferroni_p(&bumped).unwrap().value());
        prop_assert!(simes_p(&pvec).unwrap().value() <= simes_p(&bumped).unwrap().value());
        prop_assert!(fisher_p(&pvec).unwrap().value() <= fisher_p(&bumped).unwrap().value() + 1e-15);

        // The m0 estimators must be monotone too (the shortcut relies on it).
        let ctx = CombinerContext::full(40, 2);
        let labels = vec![0usize; pvec.len()];
        let before = storey_m0(&pvec, 0.5, &ctx, &labels).unwrap().value();
        let after = storey_m0(&bumped, 0.5, &ctx, &labels).unwrap().value();
        prop_assert!(before <= after);

        let ell = pvec.len().div_ceil(2);
        let q_before = quantile_m0(&pvec, ell).unwrap().value();
        let q_after = quantile_m0(&bumped, ell).unwrap().value();
        prop_assert!(q_before <= q_after);

        // And adaptive Simes is monotone given a fixed estimate.
        let m0 = M0Value::Approx(1.7);
        prop_assert!(
            adaptive_simes_p(&pvec, &m0).unwrap().value()
                <= adaptive_simes_p(&bumped, &m0).unwrap().value()
        );
    }

    #[test]
    fn conformal_pvalues_ignore_calibration_order(
        scores in prop::collection::vec((0usize..3, -5.0f64..5.0), 6..30),
        test in prop::collection::vec(-5.0f64..5.0, 2..5),
        seed in 0u64..100,
    ) {
        let mut entries = scores;
        for k in 0..3 {
            entries.push((k, 0.0)); // every class nonempty
        }
        let rows: Vec<Vec<f64>> = test.iter().map(|&s| vec![s, s + 0.5, s - 0.5]).collect();
        let panel = ScorePanel::from_rows(rows).unwrap();

        let cal = build_calibration(entries.clone(), CalibrationMode::ClassConditional).unwrap();
        let base = conformal_pvalues(&cal, &panel).unwrap();

        let mut rng = seeded_rng(seed, &[2]);
        for i in (1..entries.len()).rev() {
            entries.swap(i, rng.random_range(0..=i));
        }
        let cal = build_calibration(entries, CalibrationMode::ClassConditional).unwrap();
        let permuted = conformal_pvalues(&cal, &panel).unwrap();
        prop_assert_eq!(base, permuted);
    }

    #[test]
    fn conformal_pvalues_decrease_in_the_test_score(
        cal_scores in prop::collection::vec(-5.0f64..5.0, 4..40),
        lo in -6.0f64..6.0,
        gap in 0.0f64..3.0,
    ) {
        let entries: Vec<(usize, f64)> = cal_scores.iter().map(|&s| (0, s)).collect();
        let cal = build_calibration(entries, CalibrationMode::Full).unwrap();
        let hi = lo + gap;
        let panel = ScorePanel::from_rows(vec![vec![lo, hi]]).unwrap();
        let pv = conformal_pvalues(&cal, &panel).unwrap();
        // Same item scored lower in class 0 than in class 1.
        prop_assert!(pv.get(0, 0) >= pv.get(0, 1));
    }
}

#[test]
fn conformal_pvalues_are_marginally_super_uniform() {
    // Empirical P(p <= u) stays below u plus Monte-Carlo noise when all
    // scores are iid uniform, for n+1 both dividing and not dividing 1/u.
    let replications = 50_000;
    for n in [19usize, 24] {
        let mut hits = [0usize; 3];
        let levels = [0.05, 0.1, 0.25];
        let mut rng = seeded_rng(0x5EED, &[n as u64]);
        for _ in 0..replications {
            let mut cal: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let test: f64 = rng.random();
            cal.sort_unstable_by(f64::total_cmp);
            let geq = n - cal.partition_point(|&x| x < test);
            let p = (geq + 1) as f64 / (n + 1) as f64;
            for (slot, &u) in hits.iter_mut().zip(&levels) {
                if p <= u {
                    *slot += 1;
                }
            }
        }
        for (&count, &u) in hits.iter().zip(&levels) {
            let freq = count as f64 / replications as f64;
            assert!(
                freq <= u + mc_margin(u, replications),
                "n={n}: P(p <= {u}) = {freq}"
            );
        }
    }
}

#[test]
fn sets_shrink_as_alpha_grows() {
    let mut rng = seeded_rng(0xA1FA, &[3]);
    for _ in 0..40 {
        let mode = if rng.random_bool(0.5) {
            CalibrationMode::Full
        } else {
            CalibrationMode::ClassConditional
        };
        let m = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        let panel = common::random_panel(&mut rng, m, k, mode);
        let combiner = CombinerSpec::Simes;
        let loose = enumerate_set(&panel, &combiner, &InclusionRule::Alpha(0.05), false, 1 << 20).unwrap();
        let tight = enumerate_set(&panel, &combiner, &InclusionRule::Alpha(0.2), false, 1 << 20).unwrap();
        for member in &tight.members {
            assert!(loose.contains(&member.labels));
        }
    }
}

#[test]
fn reconstructed_set_sits_between_simes_and_bonferroni() {
    // Filtering the Bonferroni per-item sets by the Simes count bounds
    // keeps every exact Simes member and never leaves the Bonferroni set.
    use batch_conformal::{bonferroni_prefilter, conservative_set_filter, AppliedRule};
    let mut rng = seeded_rng(0xF117, &[1]);
    for _ in 0..30 {
        let m = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        let panel = common::random_panel(&mut rng, m, k, CalibrationMode::ClassConditional);
        let alpha = 0.1;
        let simes = enumerate_set(
            &panel,
            &CombinerSpec::Simes,
            &InclusionRule::Alpha(alpha),
            false,
            1 << 20,
        )
        .unwrap();
        let bounds = class_count_bounds(&simes);
        if bounds.is_empty() {
            continue;
        }
        let individual = bonferroni_prefilter(&panel, alpha).unwrap();
        let filtered = conservative_set_filter(
            &bounds,
            &individual,
            panel.mode(),
            "simes",
            AppliedRule::Alpha { alpha },
            1 << 20,
        )
        .unwrap();
        let bonferroni = enumerate_set(
            &panel,
            &CombinerSpec::Bonferroni,
            &InclusionRule::Alpha(alpha),
            false,
            1 << 20,
        )
        .unwrap();
        for member in &simes.members {
            assert!(filtered.contains(&member.labels));
        }
        for member in &filtered.members {
            assert!(bonferroni.contains(&member.labels));
        }
    }
}

#[test]
fn projections_and_bounds_are_sound() {
    let mut rng = seeded_rng(0xB0B, &[9]);
    for _ in 0..40 {
        let m = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        let panel = common::random_panel(&mut rng, m, k, CalibrationMode::ClassConditional);
        let set = enumerate_set(
            &panel,
            &CombinerSpec::Simes,
            &InclusionRule::Alpha(0.1),
            false,
            1 << 20,
        )
        .unwrap();
        let projection = individual_sets(&set);
        let bounds = class_count_bounds(&set);
        if set.is_empty() {
            assert!(projection.set_empty);
            assert!(bounds.is_empty());
            continue;
        }
        let intervals = bounds.intervals().unwrap();
        for member in &set.members {
            for (i, &label) in member.labels.iter().enumerate() {
                assert!(projection.per_item[i].contains(&label));
            }
            for (count, &(lo, hi)) in count_vector(&member.labels, k).iter().zip(intervals) {
                assert!(lo <= *count && *count <= hi);
            }
        }
    }
}
