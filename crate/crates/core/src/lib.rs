//! Locally private, anonymous stream aggregation.
//!
//! Data owners privatize boolean answers with two-coin randomized response
//! ([`rr`]), then write the privatized vector anonymously into a table held
//! by several aggregation servers using XOR distributed point functions
//! ([`dpf`]). Servers accumulate shares per epoch ([`epoch`]), can check that
//! an uploaded key set is a well-formed single write without learning it
//! ([`audit`]), and reconstruct the table by exchanging intermediates.

pub mod audit;
pub mod dpf;
pub mod epoch;
pub mod prg;
pub mod rr;

pub use audit::{AuditMode, AuditTranscript, DummyPolicy, Verdict};
pub use dpf::{Dpf, DpfKey, DpfKeySet, KeyMaterial, KeygenRequest, TableGeometry};
pub use epoch::{EpochState, EpochStatus, OwnerId, ServerConfig, WriteTable};
pub use prg::{AesCtrPrg, Prg};
pub use rr::{PrivacyParams, PrivatizedVector};
