use taskgrasp_core::bench::*;

#[test]
fn small_suite_reports_one_outcome_per_weight() {
    let params = BenchParams { n_scenes: 3, base_seed: 40, ..Default::default() };
    let report = run_benchmark(&params);
    assert_eq!(report.scenes.len(), 3);
    assert_eq!(report.rates.len(), params.weights.len());
    for (i, s) in report.scenes.iter().enumerate() {
        assert_eq!(s.index, i);
        assert_eq!(s.seed, 40 + i as u64);
        assert!(s.error.is_none(), "{:?}", s.error);
        assert_eq!(s.outcomes.iter().map(|o| o.weight).collect::<Vec<_>>(), params.weights);
        assert!(s.outcomes.iter().all(|o| o.correct_object || !o.correct_part));
    }
    for r in &report.rates {
        let n =
            report.scenes.iter().filter(|s| s.outcomes.iter().any(|o| o.weight == r.weight && o.correct_part)).count();
        assert_eq!(r.correct_part, n as f64 / 3.0);
    }
    assert_eq!(report.rate(0.95).unwrap().correct_object, 1.0);
}

#[test]
fn scene_results_do_not_depend_on_the_batch() {
    let params = BenchParams { n_scenes: 2, base_seed: 7, ..Default::default() };
    let batch = run_benchmark(&params);
    assert_eq!(run_scene(1, &params), batch.scenes[1]);
}
