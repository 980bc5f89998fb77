use proptest::prelude::*;
use vlsf_core::channel::{nested_log, q_function, q_inverse, ChannelParams};
use vlsf_core::codebook::{check_power, generate_codebook, Schedule};
use vlsf_core::schedule::{newton_root, round_times};
use vlsf_core::simulator::{stopping_rule, thresholds};

fn schedule_strategy() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::btree_set(0u64..60, 1..5).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_lengths_partition_the_last_time(times in schedule_strategy()) {
        let s = Schedule::new(times.clone()).unwrap();
        prop_assert_eq!(s.segment_lengths().iter().sum::<u64>(), s.last());
        let pieces = s.spherical_pieces();
        prop_assert!(pieces.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn codebooks_meet_power_with_equality(times in schedule_strategy(), m in 1u64..6, seed in any::<u64>(), snr in 0.1f64..10.0) {
        let s = Schedule::new(times).unwrap();
        let cb = generate_codebook(m, &s, snr, seed).unwrap();
        let report = check_power(&cb, &s, snr).unwrap();
        prop_assert!(report.ok);
        for cw in &report.codewords {
            for (&t, r) in s.times().iter().zip(&cw.prefix_ratio) {
                if t > 0 {
                    prop_assert!((r - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn stopping_never_later_with_lower_threshold(
        times in schedule_strategy(),
        scores in prop::collection::vec(-10.0f64..10.0, 4 * 3),
        gamma in -5.0f64..5.0,
        drop in 0.0f64..5.0,
    ) {
        let s = Schedule::new(times).unwrap();
        let k = s.k();
        let m = 3;
        let scores: Vec<f64> = (0..k * m).map(|i| scores[i % scores.len()]).collect();
        let ch = ChannelParams::new(1.0).unwrap();
        let hi = stopping_rule(&scores, m, &thresholds(&s, gamma, true, &ch), &s);
        let lo = stopping_rule(&scores, m, &thresholds(&s, gamma - drop, true, &ch), &s);
        prop_assert!(lo.tau <= hi.tau);
        prop_assert!(hi.decision >= 1 && hi.decision <= m as u64);
    }

    #[test]
    fn q_inverse_round_trips(p in 1e-12f64..0.999_999) {
        let x = q_inverse(p).unwrap();
        prop_assert!((q_function(x) / p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nested_log_is_increasing(x in 20.0f64..1e12, f in 1.0001f64..10.0, k in 1u32..4) {
        prop_assert!(nested_log(k, x * f).unwrap() > nested_log(k, x).unwrap());
    }

    #[test]
    fn newton_solves_affine_equations(a in 0.1f64..100.0, b in -1e3f64..1e3, x0 in -1e3f64..1e3) {
        let r = newton_root(|x| (a * x - b, a), x0, 1e-9, 50).unwrap();
        prop_assert!((a * r.root - b).abs() < 1e-9);
    }

    #[test]
    fn rounded_times_keep_the_last_time_above(times in prop::collection::vec(1.0f64..1e6, 1..5)) {
        let r = round_times(&times);
        prop_assert!(*r.last().unwrap() as f64 >= *times.last().unwrap());
    }
}
