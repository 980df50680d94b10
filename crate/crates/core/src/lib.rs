//! Reference engine for a state-synchronized, declarative agent protocol.
//!
//! An agent sees the system only through an [`Scr`] document: a component
//! tree that starts as a low-fidelity latent map. It asks for more context
//! with `provide` requests and changes the system only through validated,
//! atomic, replayable `edit`/`write`/`delete` transactions.

pub mod adapter;
pub mod digest;
pub mod engine;
pub mod harness;
pub mod ledger;
pub mod policy;
pub mod scr;
pub mod tokens;
pub mod validation;

pub use adapter::{
    build_latent_map, provide_content, verify_sync, AdapterError, FsAdapter, MapConfig, Mismatch, MismatchKind,
    SystemAdapter, VirtualAdapter,
};
pub use digest::Digest;
pub use engine::{Engine, StepOutcome};
pub use ledger::{replay, Ledger, LedgerEntry};
pub use scr::{canonical_serialize, parse, scr_digest, Component, Fidelity, Kind, Request, Scr, ScrError};
pub use tokens::estimate_tokens;
pub use validation::{extract_actions, is_valid, ActionSet, Proposal, ValidationReport, ViolationCode};
