use stea_core::gradcheck::GradCheckOptions;
use stea_core::graph::OpKind;
use stea_core::suite::{case_names, run_suite};

#[test]
fn every_case_matches_finite_differences() {
    let results = run_suite(GradCheckOptions::default()).unwrap();
    assert!(results.len() >= 15);
    for r in &results {
        println!("{:<26} {:.3e} ({} coords)", r.name, r.report.max_rel_err, r.report.coords);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn suite_covers_the_composite_modules() {
    let names = case_names();
    for want in ["stea", "mlfr", "lstea_block", "labnet_1block", "adapter", "fusion"] {
        assert!(names.contains(&want), "{want} missing");
    }
}

#[test]
fn corrupted_conv_backward_fails_the_suite() {
    let opts = GradCheckOptions {
        corrupt: Some(OpKind::Conv),
        ..Default::default()
    };
    let results = run_suite(opts).unwrap();
    let bad: Vec<_> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(bad.contains(&"conv_stride1"), "{bad:?}");
    assert!(bad.contains(&"conv_stride2"));
    // ops that never touch a full convolution stay clean
    assert!(!bad.contains(&"matmul"));
    assert!(results.iter().all(|r| r.report.max_rel_err.is_finite()));
}
