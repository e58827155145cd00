use proptest::prelude::*;

use crmp_core::campaign::{Campaign, Domain, OutcomeClass};
use crmp_core::instrument::{instrument, Mode, ShadowPolicy};
use crmp_core::ir::{parse_program, serialize};
use crmp_core::metrics::{ccc, total_cost, CccDenominator, MetricsConfig};
use crmp_core::vm::{Image, Outcome, SchedConfig};
use crmp_core::workloads::{expected_output, generate, BenchKind, BenchSpec};

fn kind() -> impl Strategy<Value = BenchKind> {
    prop_oneof![Just(BenchKind::Quicksort), Just(BenchKind::Matmul), Just(BenchKind::Linkedlist)]
}

fn small(kind: BenchKind, half: usize, seed: u64) -> BenchSpec {
    BenchSpec {
        size: 2 * half,
        ..BenchSpec::new(kind, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn text_round_trips(k in kind(), half in 1usize..5, seed in 0u64..1000, mode in prop_oneof![Just(Mode::None), Just(Mode::Crmp), Just(Mode::Bcp)]) {
        let ip = instrument(&generate(&small(k, half, seed)), mode, ShadowPolicy::Globals).unwrap();
        let text = serialize(&ip.program);
        prop_assert_eq!(parse_program(&text).unwrap(), ip.program);
    }

    #[test]
    fn instrumentation_preserves_output(k in kind(), half in 1usize..4, seed in 0u64..1000, quantum in 1u64..40, sched_seed in 0u64..50) {
        let s = small(k, half, seed);
        let want = expected_output(&s);
        let cfg = SchedConfig { quantum, seed: sched_seed, ..SchedConfig::default() };
        for mode in [Mode::None, Mode::Crmp, Mode::Bcp] {
            for shadow in [ShadowPolicy::Globals, ShadowPolicy::All] {
                let ip = instrument(&generate(&s), mode, shadow).unwrap();
                let r = Image::compile(&ip.program).unwrap().run(&cfg);
                prop_assert_eq!(&r.outcome, &Outcome::Completed);
                prop_assert_eq!(&r.output, &want);
            }
        }
    }

    #[test]
    fn weighted_ccc_is_twice_unit_sum_at_half(cov in 0.0f64..1.0, perf in 0.01f64..5.0, mem in 0.01f64..5.0) {
        let u = ccc(cov, total_cost(perf, mem, &MetricsConfig::new(0.5, CccDenominator::UnitSum).unwrap())).unwrap();
        let w = ccc(cov, total_cost(perf, mem, &MetricsConfig::new(0.5, CccDenominator::Weighted).unwrap())).unwrap();
        prop_assert!((w - 2.0 * u).abs() <= 1e-9 * w.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn campaign_invariants(k in kind(), seed in 0u64..1000, all in any::<bool>()) {
        let ip = instrument(&generate(&small(k, 2, 1)), Mode::Crmp, ShadowPolicy::Globals).unwrap();
        let c = Campaign::new(&ip, &SchedConfig::default()).unwrap();
        let domain = if all { Domain::All } else { Domain::Original };
        let faults = c.sample_faults(60, seed, &"equal".parse().unwrap(), domain).unwrap().faults;
        let r = c.run_campaign(&faults).unwrap();
        prop_assert_eq!(r.injections, 60);
        prop_assert_eq!(r.classes.values().sum::<usize>(), r.injections);
        for o in &r.outcomes {
            if !o.activated {
                prop_assert!(o.class != OutcomeClass::DetectedCorrected);
            }
            if let Some(cl) = o.correction_latency {
                prop_assert_eq!(o.class, OutcomeClass::DetectedCorrected);
                prop_assert_eq!(cl, o.components.unwrap().total());
                prop_assert!(cl >= o.detection_latency.unwrap());
            }
        }
    }
}
