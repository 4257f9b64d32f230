//! Shared append-only revision log used for staleness and revocation checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::SegId;
use crate::network::AgentId;
use crate::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevisionOp {
    Update,
    Revoke,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionEvent {
    pub op: RevisionOp,
    pub seg_id: SegId,
    pub t: Tick,
    pub author: Option<AgentId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "at", rename_all = "kebab-case")]
pub enum Validity {
    Valid,
    /// Earliest update after the reader's observation time.
    Stale(Tick),
    /// Earliest revocation after the reader's observation time.
    Revoked(Tick),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }

    pub fn is_revoked(&self) -> bool {
        matches!(self, Validity::Revoked(_))
    }
}

impl std::fmt::Display for Validity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Validity::Valid => f.write_str("valid"),
            Validity::Stale(t) => write!(f, "stale since t={t}"),
            Validity::Revoked(t) => write!(f, "revoked at t={t}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RevisionLog {
    events: Vec<RevisionEvent>,
}

impl RevisionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, event: RevisionEvent) -> Result<()> {
        if let Some(last) = self.events.last() {
            if event.t <= last.t {
                return Err(Error::NonMonotonicTime {
                    last: last.t,
                    t: event.t,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Revocations after `t0` dominate updates after `t0`.
    pub fn valid(&self, seg_id: SegId, t0: Tick) -> Validity {
        // events are sorted by t, so the first hit of each kind is the earliest
        let start = self.events.partition_point(|e| e.t <= t0);
        let mut stale = None;
        for e in self.events[start..].iter().filter(|e| e.seg_id == seg_id) {
            match e.op {
                RevisionOp::Revoke => return Validity::Revoked(e.t),
                RevisionOp::Update => {
                    stale.get_or_insert(e.t);
                }
            }
        }
        stale.map_or(Validity::Valid, Validity::Stale)
    }

    pub fn audit(&self, from: Tick, to: Tick) -> Result<&[RevisionEvent]> {
        if from > to {
            return Err(Error::BadRange { from, to });
        }
        let lo = self.events.partition_point(|e| e.t < from);
        let hi = self.events.partition_point(|e| e.t <= to);
        Ok(&self.events[lo..hi])
    }

    pub fn events(&self) -> &[RevisionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(op: RevisionOp, seg: u64, t: Tick) -> RevisionEvent {
        RevisionEvent {
            op,
            seg_id: SegId(seg),
            t,
            author: Some(AgentId(0)),
        }
    }

    #[test]
    fn append_monotone() {
        let mut log = RevisionLog::new();
        log.append(ev(RevisionOp::Update, 1, 3)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(
            log.append(ev(RevisionOp::Update, 1, 3)),
            Err(Error::NonMonotonicTime { last: 3, t: 3 })
        );
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn validity_verdicts() {
        let mut log = RevisionLog::new();
        assert_eq!(log.valid(SegId(1), 5), Validity::Valid);
        log.append(ev(RevisionOp::Update, 1, 7)).unwrap();
        assert_eq!(log.valid(SegId(1), 5), Validity::Stale(7));
        assert_eq!(log.valid(SegId(2), 5), Validity::Valid);
        log.append(ev(RevisionOp::Revoke, 1, 9)).unwrap();
        assert_eq!(log.valid(SegId(1), 5), Validity::Revoked(9));
        assert_eq!(log.valid(SegId(1), 9), Validity::Valid);
    }

    #[test]
    fn audit_ranges() {
        let mut log = RevisionLog::new();
        for t in [2, 4, 6] {
            log.append(ev(RevisionOp::Update, 1, t)).unwrap();
        }
        assert_eq!(log.audit(0, 100).unwrap(), log.events());
        assert!(log.audit(7, 9).unwrap().is_empty());
        assert_eq!(log.audit(3, 4).unwrap().len(), 1);
        assert_eq!(log.audit(5, 4), Err(Error::BadRange { from: 5, to: 4 }));
    }
}
