//! Staged random-search hyperparameter optimization.
//!
//! Parameters are tuned one at a time in declared order. Each stage trains
//! one short cycle per candidate value while every other parameter stays at
//! its current value, then locks in the best candidate before moving on.
//! Trials within a stage are independent and run on the thread pool; stage
//! boundaries are barriers.

mod emissions;
mod space;
mod trainer;

use std::io::Write;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};

pub use emissions::{kg_co2, record_emissions, EmissionEntry, EmissionsLedger, DEFAULT_EMISSION_FACTOR};
pub use space::{Config, Parameter, SearchSpace, Value, SPACE_VERSION};
pub use trainer::{
    parse_result_line, CommandTrainer, EarlyStopping, ToyTrainer, TrainBudget, TrainOutcome, Trainer, TrainerError,
};

pub const DEFAULT_CYCLE_STEPS: u64 = 5_000;
pub const DEFAULT_MAX_STEPS: u64 = 200_000;
pub const DEFAULT_PATIENCE: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum HpoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("every trial of stage {parameter:?} failed")]
    StageFailed { parameter: String },
    #[error("energy must be non-negative, got {0}")]
    Range(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    EarlyStopped,
    Failed,
}

/// One trained configuration. Serialized as one line of the trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    /// Parameter being tuned when this trial ran; absent for full runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<String>,
    pub config: Config,
    pub objective: Option<f64>,
    #[serde(rename = "steps")]
    pub steps_run: u64,
    pub runtime_hours: f64,
    pub energy_kwh: f64,
    #[serde(rename = "kg_co2")]
    pub emissions_kg: f64,
    pub status: TrialStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl TrialRecord {
    fn from_result(
        id: usize,
        stage: Option<String>,
        config: Config,
        result: Result<TrainOutcome, TrainerError>,
        factor_g_per_kwh: f64,
    ) -> Self {
        match result {
            Ok(o) => TrialRecord {
                id,
                stage,
                config,
                objective: Some(o.objective),
                steps_run: o.steps_run,
                runtime_hours: o.runtime_hours,
                energy_kwh: o.energy_kwh,
                emissions_kg: emissions::kg_co2(o.energy_kwh, factor_g_per_kwh),
                status: if o.early_stopped {
                    TrialStatus::EarlyStopped
                } else {
                    TrialStatus::Completed
                },
                error: None,
            },
            Err(e) => TrialRecord {
                id,
                stage,
                config,
                objective: None,
                steps_run: 0,
                runtime_hours: 0.0,
                energy_kwh: 0.0,
                emissions_kg: 0.0,
                status: TrialStatus::Failed,
                error: Some(e.0),
            },
        }
    }
}

/// Writes one JSON object per trial.
pub fn write_trial_log<W: Write>(trials: &[TrialRecord], mut out: W) -> std::io::Result<()> {
    for t in trials {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Draws a configuration: locked parameters keep their value, the rest are
/// sampled uniformly from their candidates.
pub fn sample_config(space: &SearchSpace, locked: &Config, seed: u64) -> Result<Config, HpoError> {
    for key in locked.keys() {
        if space.get(key).is_none() {
            return Err(HpoError::Config(format!("unknown locked parameter {key:?}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(space
        .parameters()
        .iter()
        .map(|p| {
            let value = match locked.get(&p.name) {
                Some(v) => v.clone(),
                None => p.values.choose(&mut rng).expect("non-empty candidates").clone(),
            };
            (p.name.clone(), value)
        })
        .collect())
}

/// Values used for parameters whose stage has not run yet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Baseline {
    #[default]
    FirstListed,
    Sampled,
}

#[derive(Clone, Debug)]
pub struct StagedSearchOptions {
    pub cycle_steps: u64,
    /// Candidates tried per stage; `None` enumerates every candidate.
    pub trials_per_stage: Option<usize>,
    pub baseline: Baseline,
    pub seed: u64,
    pub emission_factor: f64,
    pub execution: Execution,
}

impl Default for StagedSearchOptions {
    fn default() -> Self {
        StagedSearchOptions {
            cycle_steps: DEFAULT_CYCLE_STEPS,
            trials_per_stage: None,
            baseline: Baseline::FirstListed,
            seed: 0,
            emission_factor: DEFAULT_EMISSION_FACTOR,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Config,
    pub trials: Vec<TrialRecord>,
    pub ledger: EmissionsLedger,
}

pub fn staged_search(
    space: &SearchSpace,
    trainer: &dyn Trainer,
    options: &StagedSearchOptions,
) -> Result<SearchOutcome, HpoError> {
    if options.trials_per_stage == Some(0) {
        return Err(HpoError::Config("trials per stage must be at least 1".into()));
    }
    if options.cycle_steps == 0 {
        return Err(HpoError::Config("cycle steps must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut current: Config = match options.baseline {
        Baseline::FirstListed => space
            .parameters()
            .iter()
            .map(|p| (p.name.clone(), p.values[0].clone()))
            .collect(),
        Baseline::Sampled => sample_config(space, &Config::new(), options.seed ^ 0x5EED)?,
    };
    let budget = TrainBudget {
        max_steps: options.cycle_steps,
        eval_interval: options.cycle_steps,
        patience: None,
    };
    let mut trials = Vec::new();
    let mut ledger = EmissionsLedger::new(options.emission_factor);

    for param in space.parameters() {
        let mut candidates: Vec<usize> = (0..param.values.len()).collect();
        if let Some(k) = options.trials_per_stage {
            if k < candidates.len() {
                candidates = candidates.into_iter().choose_multiple(&mut rng, k);
                candidates.sort_unstable();
            }
        }
        let configs: Vec<Config> = candidates
            .iter()
            .map(|&i| {
                let mut c = current.clone();
                c.insert(param.name.clone(), param.values[i].clone());
                c
            })
            .collect();
        let results = par::map(&configs, options.execution, |c| trainer.train(c, &budget));

        let mut best: Option<(f64, usize)> = None;
        for (slot, (config, result)) in configs.into_iter().zip(results).enumerate() {
            let record = TrialRecord::from_result(
                trials.len(),
                Some(param.name.clone()),
                config,
                result,
                options.emission_factor,
            );
            if let Some(obj) = record.objective {
                if best.is_none_or(|(b, _)| obj > b) {
                    best = Some((obj, slot));
                }
            }
            if record.status != TrialStatus::Failed {
                ledger.record(record.id, record.energy_kwh)?;
            }
            trials.push(record);
        }
        let Some((_, slot)) = best else {
            return Err(HpoError::StageFailed {
                parameter: param.name.clone(),
            });
        };
        current.insert(param.name.clone(), param.values[candidates[slot]].clone());
    }

    Ok(SearchOutcome {
        best: current,
        trials,
        ledger,
    })
}

/// Trains one configuration to `max_steps` or until `patience` evaluations
/// (every `eval_interval` steps) pass without improvement.
pub fn full_train(
    config: &Config,
    trainer: &dyn Trainer,
    max_steps: u64,
    eval_interval: u64,
    patience: u32,
    emission_factor: f64,
) -> Result<TrialRecord, HpoError> {
    if patience == 0 {
        return Err(HpoError::Config("early-stop patience must be at least 1".into()));
    }
    if max_steps == 0 || eval_interval == 0 {
        return Err(HpoError::Config("step counts must be positive".into()));
    }
    let budget = TrainBudget {
        max_steps,
        eval_interval,
        patience: Some(patience),
    };
    let result = trainer.train(config, &budget).and_then(|o| {
        if o.steps_run > max_steps {
            Err(TrainerError(format!("trainer ran {} of {max_steps} steps", o.steps_run)))
        } else {
            Ok(o)
        }
    });
    Ok(TrialRecord::from_result(0, None, config.clone(), result, emission_factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Failing;

    impl Trainer for Failing {
        fn train(&self, _: &Config, _: &TrainBudget) -> Result<TrainOutcome, TrainerError> {
            Err(TrainerError("boom".into()))
        }
    }

    /// Objective read from a lookup on one parameter.
    struct Lookup(fn(&Config) -> f64);

    impl Trainer for Lookup {
        fn train(&self, c: &Config, b: &TrainBudget) -> Result<TrainOutcome, TrainerError> {
            Ok(TrainOutcome {
                objective: (self.0)(c),
                steps_run: b.max_steps,
                energy_kwh: 1.0,
                runtime_hours: 0.5,
                early_stopped: false,
            })
        }
    }

    fn one_param(values: &[i64]) -> SearchSpace {
        SearchSpace::new(vec![Parameter {
            name: "a".into(),
            values: values.iter().map(|v| Value::Int(*v)).collect(),
        }])
        .unwrap()
    }

    #[test]
    fn sample_respects_locks() {
        let space = one_param(&[1, 2]);
        for seed in 0..20 {
            let c = sample_config(&space, &Config::new(), seed).unwrap();
            assert!(matches!(c["a"], Value::Int(1) | Value::Int(2)));
            assert_eq!(c, sample_config(&space, &Config::new(), seed).unwrap());
        }
        let locked: Config = [("a".to_string(), Value::Int(2))].into_iter().collect();
        for seed in 0..20 {
            assert_eq!(sample_config(&space, &locked, seed).unwrap()["a"], Value::Int(2));
        }
        let bad: Config = [("zzz".to_string(), Value::Int(2))].into_iter().collect();
        assert!(matches!(sample_config(&space, &bad, 0), Err(HpoError::Config(_))));
    }

    #[test]
    fn single_parameter_matches_exhaustive() {
        let space = one_param(&[3, 9, 4, 9]);
        let objective = |c: &Config| match c["a"] {
            Value::Int(v) => -((v - 8) * (v - 8)) as f64,
            _ => unreachable!(),
        };
        let out = staged_search(&space, &Lookup(objective), &StagedSearchOptions::default()).unwrap();
        let exhaustive = space
            .enumerate()
            .into_iter()
            .max_by(|a, b| objective(a).total_cmp(&objective(b)))
            .unwrap();
        assert_eq!(out.best, exhaustive);
        assert_eq!(out.trials.len(), 4);
        // ties go to the earlier-listed candidate
        assert_eq!(out.trials.iter().filter(|t| t.objective == Some(-1.0)).count(), 2);
    }

    #[test]
    fn failing_trainer_errors_after_first_stage() {
        let space = SearchSpace::transformer();
        let err = staged_search(&space, &Failing, &StagedSearchOptions::default()).unwrap_err();
        assert_eq!(err, HpoError::StageFailed { parameter: "learning_rate".into() });
    }

    #[test]
    fn trials_per_stage_limits_work() {
        let space = SearchSpace::transformer();
        let opts = StagedSearchOptions { trials_per_stage: Some(1), seed: 4, ..Default::default() };
        let out = staged_search(&space, &ToyTrainer::new(1), &opts).unwrap();
        assert_eq!(out.trials.len(), space.parameters().len());
        let opts = StagedSearchOptions { trials_per_stage: Some(0), ..Default::default() };
        assert!(staged_search(&space, &ToyTrainer::new(1), &opts).is_err());
    }

    #[test]
    fn full_train_early_stops() {
        let cfg = SearchSpace::transformer().enumerate().remove(0);
        let rec = full_train(&cfg, &ToyTrainer::new(0), DEFAULT_MAX_STEPS, 5000, 5, DEFAULT_EMISSION_FACTOR).unwrap();
        assert_eq!(rec.status, TrialStatus::EarlyStopped);
        assert!(rec.steps_run < DEFAULT_MAX_STEPS);
        assert!((rec.emissions_kg - rec.energy_kwh * 0.324).abs() < 1e-12);
    }

    #[test]
    fn full_train_completes_without_plateau() {
        let cfg = SearchSpace::transformer().enumerate().remove(0);
        let mut toy = ToyTrainer::new(0);
        toy.time_constant_steps = 1.0e6;
        let rec = full_train(&cfg, &toy, 50_000, 5000, 2, DEFAULT_EMISSION_FACTOR).unwrap();
        assert_eq!(rec.status, TrialStatus::Completed);
        assert_eq!(rec.steps_run, 50_000);
    }

    #[test]
    fn full_train_validation() {
        let cfg = Config::new();
        assert!(matches!(
            full_train(&cfg, &ToyTrainer::new(0), 1000, 100, 0, 324.0),
            Err(HpoError::Config(_))
        ));
        let rec = full_train(&cfg, &Failing, 1000, 100, 3, 324.0).unwrap();
        assert_eq!(rec.status, TrialStatus::Failed);
        assert!(rec.objective.is_none());
    }

    #[test]
    fn space_file_roundtrip() {
        let space = SearchSpace::transformer();
        let text = space.to_toml();
        assert_eq!(SearchSpace::from_toml(&text).unwrap(), space);
        assert!(SearchSpace::from_toml("version = 2\nparameter = []").is_err());
        assert!(SearchSpace::from_toml("version = 1\n[[parameter]]\nname = \"a\"\nvalues = []").is_err());
    }

    #[test]
    fn trial_log_is_jsonl() {
        let out = staged_search(&one_param(&[1, 2]), &ToyTrainer::new(0), &StagedSearchOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_trial_log(&out.trials, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["config", "objective", "steps", "runtime_hours", "kg_co2", "status"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    fn bold() -> Config {
        let v: [(&str, Value); 10] = [
            ("learning_rate", Value::Int(2)),
            ("batch_size", Value::Int(2048)),
            ("attention_heads", Value::Int(2)),
            ("layers", Value::Int(6)),
            ("feed_forward_dim", Value::Int(2048)),
            ("embedding_dim", Value::Int(256)),
            ("label_smoothing", Value::Float(0.1)),
            ("dropout", Value::Float(0.3)),
            ("attention_dropout", Value::Float(0.1)),
            ("average_decay", Value::Float(0.0001)),
        ];
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn toy_argmax_is_unique_over_grid() {
        for seed in [0, 1, 17] {
            let toy = ToyTrainer::new(seed);
            let grid = SearchSpace::transformer().enumerate();
            assert_eq!(grid.len(), 2304);
            let target = toy.asymptote(&bold());
            for c in grid.iter().filter(|c| **c != bold()) {
                assert!(toy.asymptote(c) < target, "{c:?}");
            }
        }
    }

    #[test]
    fn staged_search_recovers_bold_config() {
        for seed in [0, 5] {
            let opts = StagedSearchOptions { seed, ..Default::default() };
            let out = staged_search(&SearchSpace::transformer(), &ToyTrainer::new(seed), &opts).unwrap();
            assert_eq!(out.best, bold());
            assert_eq!(out.trials.len(), 24);
            assert_eq!(out.ledger.entries().len(), 24);
        }
    }
}
