//! Building blocks for low-resource machine translation experiments:
//! corpus preparation, shared subword vocabularies, automatic metrics
//! (BLEU, TER, chrF), staged random-search hyperparameter optimization with
//! emissions accounting, and blind human evaluation (SQM, MQM, Cohen's kappa).

pub mod corpus;
pub mod hpo;
pub mod humeval;
pub mod metrics;
pub mod par;
pub mod subword;

pub use par::Execution;
