//! Symmetric private information retrieval (SPIR) with user-side common
//! randomness over prime fields.
//!
//! - [`field`]: prime-field arithmetic, exact rationals, seeded randomness.
//! - [`pir`]: the underlying PIR query plans.
//! - [`scheme`]: common-randomness assignment, cycling and query selection.
//! - [`sim`]: dealer, databases and user running in one process.
//! - [`audit`]: exact enumeration audits of reliability and privacy.
//! - [`capacity`]: the `(d, rho_S, rho_U)` region and time sharing.
//! - [`net`]: wire format, database servers, client and provisioning files.

pub mod audit;
pub mod capacity;
pub mod field;
pub mod net;
pub mod pir;
pub mod scheme;
pub mod sim;

pub use field::{FieldElement, PrimeModulus, Rational, Seed};
pub use pir::{MessageIndex, SchemeParams};
pub use scheme::{CrIndex, Fault, RateTriple, SpirQuery, SpirRequest};
