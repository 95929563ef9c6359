//! Policy mirror descent with a finite stack of Q-functions.

pub mod audit;
pub mod behavior;
pub mod closed_form;
pub mod config;
pub mod stack;
pub mod step;

pub use audit::{audit_surrogate, perturb_logits, ImprovementAudit};
pub use behavior::{epsilon_softmax, StickySampler};
pub use closed_form::{check_closed_form_update, ClosedFormReport};
pub use config::{PmdConfig, Variant};
pub use stack::{logits_from_stack, softmax_policy, QStack};
pub use step::{
    deleted_policy, pmd_step, run_pmd, Evaluation, Evaluator, IterationRecord, NoiseSeeding,
    PmdState,
};
