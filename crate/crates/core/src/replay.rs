//! Offline verification of a recorded trace: hash check, state rebuild and
//! re-running the checkers.

use serde::Serialize;

use crate::checker::{check_all, Violation};
use crate::kernel::Kernel;
use crate::trace::{parse_jsonl, ParsedTrace, TraceError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verification {
    pub events: usize,
    pub hash_matches: bool,
    /// Why the event sequence could not be applied, if it could not.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rebuild_error: Option<String>,
    pub verdicts_match: bool,
    pub recomputed: Vec<Violation>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.hash_matches && self.rebuild_error.is_none() && self.verdicts_match
    }
}

pub fn verify(parsed: &ParsedTrace) -> Verification {
    let trace = &parsed.trace;
    let (rebuild_error, recomputed) =
        match Kernel::replay(trace.header.config.clone(), &trace.events) {
            Ok(k) => (
                None,
                check_all(k.events(), k.state(), k.workspace(), &k.config().role_map),
            ),
            Err(e) => (Some(e.to_string()), Vec::new()),
        };
    Verification {
        events: trace.events.len(),
        hash_matches: parsed.hash_matches(),
        verdicts_match: rebuild_error.is_none() && recomputed == parsed.footer.verdicts,
        rebuild_error,
        recomputed,
    }
}

pub fn verify_str(text: &str) -> Result<Verification, TraceError> {
    Ok(verify(&parse_jsonl(text)?))
}
