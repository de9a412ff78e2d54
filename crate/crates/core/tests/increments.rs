use winseq::design::Allocation;
use winseq::mc::{independent_increment_check, McConfig, Method};
use winseq::sim::GenerationSpec;

fn null_model() -> GenerationSpec {
    GenerationSpec {
        kendall_tau: 0.3,
        lambda: vec![0.08, 0.1],
        beta: vec![0.0, 0.0, 0.0],
        baseline_probs: vec![0.25; 4],
        censor_upper: 12.0,
        terminal_index: 1,
    }
}

fn config(allocation: Allocation, total: usize) -> McConfig {
    McConfig {
        reps: 2000,
        seed: 11,
        generation: null_model(),
        allocation,
        total,
        alpha: 0.05,
        nb_boundaries: None,
        wr_boundaries: None,
        methods: vec![Method::FixSnb],
    }
}

#[test]
fn stage_statistics_have_independent_increments_with_unequal_looks() {
    // Looks after 30%, 60% and 100% of a 2:1 randomized trial.
    let alloc = Allocation::new(vec![0.2, 0.2, 4.0 / 15.0], vec![0.1, 0.1, 2.0 / 15.0]).unwrap();
    let report = independent_increment_check(&config(alloc, 600)).unwrap();
    assert_eq!(report.net_benefit.len(), 3);
    assert!(report.max_abs_nb < 0.05, "{:?}", report.net_benefit);
    assert!(report.max_abs_wr < 0.05, "{:?}", report.log_win_ratio);
}

#[test]
fn two_looks_at_small_sizes() {
    let report = independent_increment_check(&config(Allocation::even(2).unwrap(), 240)).unwrap();
    assert_eq!(report.net_benefit.len(), 1);
    let c = &report.net_benefit[0];
    assert!((c.theoretical - 0.5f64.sqrt()).abs() < 0.02, "{c:?}");
    assert!(report.max_abs_nb < 0.05 && report.max_abs_wr < 0.05, "{report:?}");
}
