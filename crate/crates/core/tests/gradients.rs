use fetr_core::backbone::NetworkSpec;
use fetr_core::gradcheck::{check_inputs, describe, module_suite, network_check, primitive_suite, GradCheck};
use fetr_core::Tensor;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[test]
fn primitives_match_finite_differences() {
    let cfg = GradCheck::default();
    for seed in SEEDS {
        for case in primitive_suite(&cfg, seed).unwrap() {
            assert!(
                case.report.passed(&cfg),
                "seed {seed}: {} {:?}",
                describe(&case),
                case.report.worst
            );
        }
    }
}

#[test]
fn modules_match_finite_differences() {
    let cfg = GradCheck::default();
    for seed in SEEDS {
        for case in module_suite(&cfg, seed).unwrap() {
            assert!(
                case.report.passed(&cfg),
                "seed {seed}: {} {:?}",
                describe(&case),
                case.report.worst
            );
        }
    }
}

#[test]
fn tiny_network_matches_finite_differences() {
    let cfg = GradCheck::default();
    let spec = NetworkSpec::default();
    for seed in SEEDS {
        for case in network_check(&cfg, &spec, 3, 2, seed).unwrap() {
            assert!(
                case.report.passed(&cfg),
                "seed {seed}: {} {:?}",
                describe(&case),
                case.report.worst
            );
        }
    }
}

#[test]
fn inputs_within_one_step_of_a_kink_still_check() {
    // central differences straddle zero for these inputs
    let cfg = GradCheck::default();
    for v in [3e-6, -4e-6, 0.0] {
        let x = Tensor::from_f64(&[1], &[v]).unwrap();
        let report = check_inputs(&cfg, &[x], None, 0, |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!((report.checked, report.kinks), (1, 0));
        assert!(report.max_rel_error <= 1e-9, "{v}: {report:?}");
    }
}
