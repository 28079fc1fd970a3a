use spnet_core::model::SpnetConfig;
use spnet_core::verify::{end_to_end_gradcheck, GradcheckOptions};

#[test]
fn toy_network_gradient_matches_finite_differences() {
    let report = end_to_end_gradcheck(
        &SpnetConfig::toy(),
        &GradcheckOptions {
            seed: 3,
            max_per_tensor: Some(12),
            ..GradcheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    assert!(report.checked * 3 > report.skipped, "{report:?}");
    assert!(
        report.tensors.iter().filter(|t| t.checked > 0).count() * 10 >= report.tensors.len() * 9
    );
}

#[test]
fn conv1x1_and_unshared_variants_also_match() {
    for config in [
        SpnetConfig {
            share_decoder: false,
            ..SpnetConfig::toy()
        },
        SpnetConfig {
            side_output: spnet_core::SideOutput::Conv1x1,
            ..SpnetConfig::toy()
        },
    ] {
        let report = end_to_end_gradcheck(
            &config,
            &GradcheckOptions {
                max_per_tensor: Some(4),
                ..GradcheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
