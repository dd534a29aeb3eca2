use lowmt_core::hpo::{self, Baseline, SearchSpace, StagedSearchOptions, ToyTrainer, TrialStatus};
use lowmt_core::Execution;

fn run(exec: Execution, seed: u64, baseline: Baseline) -> hpo::SearchOutcome {
    let opts = StagedSearchOptions { execution: exec, baseline, seed, ..StagedSearchOptions::default() };
    hpo::staged_search(&SearchSpace::transformer(), &ToyTrainer::new(seed), &opts).unwrap()
}

#[test]
fn parallel_and_sequential_searches_agree() {
    for baseline in [Baseline::FirstListed, Baseline::Sampled] {
        let a = run(Execution::Sequential, 3, baseline);
        let b = run(Execution::Parallel, 3, baseline);
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        hpo::write_trial_log(&a.trials, &mut la).unwrap();
        hpo::write_trial_log(&b.trials, &mut lb).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.best, b.best);
    }
}

#[test]
fn ledger_totals_are_sums_of_trials() {
    let out = run(Execution::default(), 0, Baseline::FirstListed);
    assert_eq!(out.trials.len(), 24);
    assert!(out.trials.iter().all(|t| t.status != TrialStatus::Failed));
    let kwh: f64 = out.trials.iter().map(|t| t.energy_kwh).sum();
    let kg: f64 = out.trials.iter().map(|t| t.emissions_kg).sum();
    assert!((out.ledger.total_kwh() - kwh).abs() < 1e-9);
    assert!((out.ledger.total_kg() - kg).abs() < 1e-9);
    assert!((out.ledger.total_kg() - hpo::kg_co2(kwh, hpo::DEFAULT_EMISSION_FACTOR)).abs() < 1e-9);
}

#[test]
fn full_training_after_search_stops_early() {
    let out = run(Execution::default(), 0, Baseline::FirstListed);
    let trainer = ToyTrainer::new(0);
    let rec = hpo::full_train(&out.best, &trainer, hpo::DEFAULT_MAX_STEPS, hpo::DEFAULT_CYCLE_STEPS, hpo::DEFAULT_PATIENCE, 324.0)
        .unwrap();
    assert!(rec.objective.unwrap() > out.trials.iter().filter_map(|t| t.objective).fold(f64::MIN, f64::max) - 1e-9);
    assert!(rec.steps_run <= hpo::DEFAULT_MAX_STEPS);
}
