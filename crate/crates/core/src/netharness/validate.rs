//! Causal-order checks on a message log.
//!
//! Within a slot the log is read as a linearization of the run. A node is
//! influenced by a station's setting from the moment it logs that setting
//! draw, or receives a message from an influenced node. Three things are
//! forbidden: the source emitting a particle after any setting draw, the
//! source emitting while influenced by a setting, and a station committing its
//! outcome while influenced by the other station's setting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::message::{Message, MessageKind, MessageLog, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationRule {
    /// A particle left the source after a setting had been drawn.
    EmissionAfterSettingDraw,
    /// A setting reached the source before it emitted.
    SettingReachesSource,
    /// A setting reached the other station before it committed.
    SettingReachesOtherOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub slot: u64,
    pub rule: ViolationRule,
    /// The message through which the setting information arrived (or the
    /// draw itself, for emission order).
    pub cited: Message,
    /// The forbidden action.
    pub action: Message,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "evidence")]
pub enum ScheduleVerdict {
    #[serde(rename = "LOCAL-SCHEDULE")]
    Local,
    #[serde(rename = "NONLOCAL-SCHEDULE")]
    Nonlocal(Vec<Violation>),
}

impl ScheduleVerdict {
    pub fn is_local(&self) -> bool {
        matches!(self, ScheduleVerdict::Local)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScheduleVerdict::Local => "LOCAL-SCHEDULE",
            ScheduleVerdict::Nonlocal(_) => "NONLOCAL-SCHEDULE",
        }
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        match self {
            ScheduleVerdict::Local => None,
            ScheduleVerdict::Nonlocal(v) => v.first(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Origin {
    Alice,
    Bob,
}

fn check_shape(m: &Message) -> Result<()> {
    let ok = match m.kind {
        MessageKind::SettingDrawLocal => m.from == m.to && matches!(m.from, NodeId::Alice | NodeId::Bob),
        MessageKind::Record => m.from == NodeId::Referee && m.to == NodeId::Referee,
        MessageKind::Particle => m.from == NodeId::Source && m.from != m.to,
        MessageKind::SettingReport => matches!(m.from, NodeId::Alice | NodeId::Bob) && m.from != m.to,
        MessageKind::OutcomeCommit => matches!(m.from, NodeId::Alice | NodeId::Bob) && m.from != m.to,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Structural(format!("malformed event {m:?}")))
    }
}

/// Checks one slot's events; returns the violations in log order.
pub fn validate_slot(events: &[Message]) -> Result<Vec<Violation>> {
    let mut violations = Vec::new();
    // influence[node][origin] = message that brought it.
    let mut influence: HashMap<(NodeId, Origin), Message> = HashMap::new();
    let mut draws: Vec<Message> = Vec::new();
    let mut last_t = 0;
    for (i, m) in events.iter().enumerate() {
        check_shape(m)?;
        if i > 0 && m.t < last_t {
            return Err(Error::Structural(format!(
                "slot {}: time goes back from {last_t} to {}",
                m.slot, m.t
            )));
        }
        last_t = m.t;

        // Forbidden actions are judged against the state before this event.
        match m.kind {
            MessageKind::Particle => {
                for origin in [Origin::Alice, Origin::Bob] {
                    if let Some(cited) = influence.get(&(NodeId::Source, origin)) {
                        violations.push(Violation {
                            slot: m.slot,
                            rule: ViolationRule::SettingReachesSource,
                            cited: *cited,
                            action: *m,
                        });
                    }
                }
                for d in &draws {
                    violations.push(Violation {
                        slot: m.slot,
                        rule: ViolationRule::EmissionAfterSettingDraw,
                        cited: *d,
                        action: *m,
                    });
                }
            }
            MessageKind::OutcomeCommit => {
                let foreign = match m.from {
                    NodeId::Alice => Origin::Bob,
                    _ => Origin::Alice,
                };
                if let Some(cited) = influence.get(&(m.from, foreign)) {
                    violations.push(Violation {
                        slot: m.slot,
                        rule: ViolationRule::SettingReachesOtherOutcome,
                        cited: *cited,
                        action: *m,
                    });
                }
            }
            _ => {}
        }

        if m.kind == MessageKind::SettingDrawLocal {
            let origin = if m.from == NodeId::Alice {
                Origin::Alice
            } else {
                Origin::Bob
            };
            influence.entry((m.from, origin)).or_insert(*m);
            draws.push(*m);
        } else if m.from != m.to {
            for origin in [Origin::Alice, Origin::Bob] {
                if influence.contains_key(&(m.from, origin)) {
                    influence.entry((m.to, origin)).or_insert(*m);
                }
            }
        }
    }
    // The cited message closest to the source of the problem comes first.
    violations.sort_by_key(|v| {
        let pos = events.iter().position(|e| e == &v.cited).unwrap_or(usize::MAX);
        let rank = match v.rule {
            ViolationRule::SettingReachesSource | ViolationRule::SettingReachesOtherOutcome => 0,
            ViolationRule::EmissionAfterSettingDraw => 1,
        };
        (rank, pos)
    });
    Ok(violations)
}

/// Verdict for a whole log; a pure function of the events.
pub fn validate_log(log: &MessageLog) -> Result<ScheduleVerdict> {
    let mut all = Vec::new();
    for slot in log.slots()? {
        all.extend(validate_slot(slot)?);
    }
    Ok(if all.is_empty() {
        ScheduleVerdict::Local
    } else {
        ScheduleVerdict::Nonlocal(all)
    })
}
