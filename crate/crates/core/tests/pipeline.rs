use bilip_core::io::to_json;
use bilip_core::pipeline::{run_pipeline, verify_run, PatchSource};
use bilip_core::{Generator, Instance, PipelineOptions};
use proptest::prelude::*;

fn run(g: &Generator) -> (Instance, bilip_core::Run) {
    let inst = Instance::generate(g).unwrap();
    let source = PatchSource::default_for(&inst).unwrap();
    let run = run_pipeline(&inst, &source, &PipelineOptions::default()).unwrap();
    (inst, run)
}

#[test]
fn built_in_instances_pass_hard_checks() {
    for g in [Generator::Grid { n: 8 }, Generator::Line { n: 65 }, Generator::Random { n: 50, dim: 3, seed: 9 }] {
        let (inst, run) = run(&g);
        let report = verify_run(&inst, &run).unwrap();
        let failed: Vec<_> = report.hard_failures().iter().map(|c| c.name.clone()).collect();
        assert!(failed.is_empty(), "{g:?}: {failed:?}");
        assert!(run.distortion.distortion.is_finite(), "{g:?}");
        assert_eq!(run.embedding.dim(), run.constants.dim);
    }
}

#[test]
fn runs_are_deterministic() {
    let g = Generator::Random { n: 40, dim: 2, seed: 5 };
    let (_, a) = run(&g);
    let (_, b) = run(&g);
    assert_eq!(to_json(&a.distortion, false).unwrap(), to_json(&b.distortion, false).unwrap());
    for p in 0..40 {
        assert_eq!(a.embedding.row(p), b.embedding.row(p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_clouds_embed_bi_lipschitz(seed in 0u64..1000, n in 10usize..40) {
        let (inst, run) = run(&Generator::Random { n, dim: 2, seed });
        let report = verify_run(&inst, &run).unwrap();
        prop_assert!(report.hard_failures().is_empty());
        prop_assert!(run.distortion.distortion.is_finite() && run.distortion.distortion >= 1.0);
    }
}
