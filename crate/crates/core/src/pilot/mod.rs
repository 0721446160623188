//! Pilot stage: sampling, dual annotation, Cohen's kappa, the agreement gate and
//! the round ledger that tracks prompt refinement.

mod annotations;
mod disagreement;
mod gate;
mod kappa;
mod rounds;
mod sample;

pub use annotations::{export_annotations_csv, import_annotations_csv, infer_schema};
pub use disagreement::{export_disagreements_csv, list_disagreements, DisagreementRow};
pub use gate::{evaluate_gate, GateConfig, GateDecision, GateOutcome, GateReason, ReasonKind};
pub use kappa::{cohens_kappa, kappa_from_labels, AgreementResult, AgreementStatus};
pub use rounds::{
    AgreementView, PilotRound, RoundLedger, RoundSetup, RoundState, RoundStore, SubmitOutcome,
};
pub use sample::{allocate_largest_remainder, draw_sample};
