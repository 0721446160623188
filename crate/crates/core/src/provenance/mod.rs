//! Append-only record of every model interaction, per-project exports and run manifests.

mod export;
mod ledger;
mod manifest;

pub use export::export_project_csv;
pub use ledger::ProvenanceLedger;
pub use manifest::{write_manifest, RunManifest};

