//! Empirical privacy auditing.
//!
//! Membership-inference scoring ([`lira`], [`rmia`]), threshold metrics and
//! empirical epsilon ([`roc`]) with bootstrap intervals ([`bootstrap`]),
//! guess-count audits ([`guess`]), probabilistic extraction analysis for
//! language models ([`extraction`]) and seeded generators with known ground
//! truth ([`synthetic`]). [`report`] assembles results into report cards.

pub mod bootstrap;
pub mod error;
pub mod extraction;
pub mod extreal;
pub mod guess;
pub mod lira;
pub mod observation;
pub mod par;
pub mod report;
pub mod rmia;
pub mod rng;
pub mod roc;
pub mod stats;
pub mod synthetic;

pub use error::{AuditError, ErrorKind, Result};
pub use observation::{CompletionRecord, GuessSummary, LogitPanel, ScoreRecord, ScoreRecordSet, TokenStep, TokenTrace};
