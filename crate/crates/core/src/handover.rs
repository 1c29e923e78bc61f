//! Deterministic finite-state machine for the sliced-network handover
//! signaling procedure: measurement report, controller decision, command
//! and sync to the target, path switch through the core, and source
//! release. Timeouts are explicit events so every run is replayable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signaling message kinds, in canonical procedure order (plus Timeout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    MeasurementReport,
    HandoverDecision,
    HandoverCommand,
    SyncToTarget,
    PathSwitchRequest,
    PathSwitchAck,
    HandoverComplete,
    ReleaseSource,
    Timeout,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::MeasurementReport,
        EventKind::HandoverDecision,
        EventKind::HandoverCommand,
        EventKind::SyncToTarget,
        EventKind::PathSwitchRequest,
        EventKind::PathSwitchAck,
        EventKind::HandoverComplete,
        EventKind::ReleaseSource,
        EventKind::Timeout,
    ];

    /// The only actor allowed to emit this kind; `None` means any actor
    /// (timeouts can be observed anywhere).
    pub fn legal_actor(self) -> Option<Actor> {
        match self {
            EventKind::MeasurementReport => Some(Actor::User),
            EventKind::HandoverDecision => Some(Actor::SdnController),
            EventKind::HandoverCommand => Some(Actor::SourceAccess),
            EventKind::SyncToTarget => Some(Actor::User),
            EventKind::PathSwitchRequest => Some(Actor::TargetAccess),
            EventKind::PathSwitchAck => Some(Actor::CoreCloud),
            EventKind::HandoverComplete => Some(Actor::User),
            EventKind::ReleaseSource => Some(Actor::SdnController),
            EventKind::Timeout => None,
        }
    }
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Network elements that emit signaling events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Actor {
    User,
    SourceAccess,
    TargetAccess,
    SourceEdge,
    TargetEdge,
    CoreCloud,
    SdnController,
}

impl std::fmt::Display for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Actor::User => "user",
            Actor::SourceAccess => "source-access",
            Actor::TargetAccess => "target-access",
            Actor::SourceEdge => "source-edge",
            Actor::TargetEdge => "target-edge",
            Actor::CoreCloud => "core-cloud",
            Actor::SdnController => "sdn-controller",
        };
        f.write_str(name)
    }
}

/// One signaling message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub kind: EventKind,
    pub actor: Actor,
    pub slice_id: String,
}

/// Procedure phase. `Executing` tracks whether the user has synchronized
/// to the target; `PathSwitching` tracks the ack and the user-side
/// completion, which must both precede the source release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Reported,
    Decided,
    Executing { synced: bool },
    PathSwitching { acked: bool, completed: bool },
    Complete,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Complete | Phase::Failed)
    }

    /// Phase family name, without the progress flags.
    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::Reported => "Reported",
            Phase::Decided => "Decided",
            Phase::Executing { .. } => "Executing",
            Phase::PathSwitching { .. } => "PathSwitching",
            Phase::Complete => "Complete",
            Phase::Failed => "Failed",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The cells involved in one handover, and the slice it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoverContext {
    pub slice_id: String,
    pub source_cell: String,
    pub target_cell: String,
}

/// One handover procedure instance: current phase plus the append-only
/// event history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoverState {
    pub phase: Phase,
    pub context: HandoverContext,
    pub history: Vec<HandoverEvent>,
}

/// Transition failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandoverError {
    #[error("IllegalTransition: {kind} by {actor} is not legal in phase {phase}")]
    IllegalTransition {
        phase: &'static str,
        kind: EventKind,
        actor: Actor,
    },
    #[error("TerminalState: phase {phase} accepts no further events")]
    TerminalState { phase: &'static str },
}

impl HandoverState {
    pub fn new(context: HandoverContext) -> Self {
        Self {
            phase: Phase::Idle,
            context,
            history: Vec::new(),
        }
    }

    /// Applies one event; on success returns the successor state with the
    /// event appended to the history. The input state is never mutated, so
    /// equal inputs always yield equal outputs.
    pub fn advance(&self, event: HandoverEvent) -> Result<HandoverState, HandoverError> {
        if self.phase.is_terminal() {
            return Err(HandoverError::TerminalState {
                phase: self.phase.name(),
            });
        }
        let illegal = || HandoverError::IllegalTransition {
            phase: self.phase.name(),
            kind: event.kind,
            actor: event.actor,
        };
        if let Some(required) = event.kind.legal_actor() {
            if event.actor != required {
                return Err(illegal());
            }
        }

        let next_phase = match (self.phase, event.kind) {
            (_, EventKind::Timeout) => Phase::Failed,
            (Phase::Idle, EventKind::MeasurementReport) => Phase::Reported,
            (Phase::Reported, EventKind::HandoverDecision) => Phase::Decided,
            (Phase::Decided, EventKind::HandoverCommand) => Phase::Executing { synced: false },
            (Phase::Executing { synced: false }, EventKind::SyncToTarget) => {
                Phase::Executing { synced: true }
            }
            (Phase::Executing { synced: true }, EventKind::PathSwitchRequest) => {
                Phase::PathSwitching {
                    acked: false,
                    completed: false,
                }
            }
            (
                Phase::PathSwitching {
                    acked: false,
                    completed: false,
                },
                EventKind::PathSwitchAck,
            ) => Phase::PathSwitching {
                acked: true,
                completed: false,
            },
            (
                Phase::PathSwitching {
                    acked: true,
                    completed: false,
                },
                EventKind::HandoverComplete,
            ) => Phase::PathSwitching {
                acked: true,
                completed: true,
            },
            (
                Phase::PathSwitching {
                    acked: true,
                    completed: true,
                },
                EventKind::ReleaseSource,
            ) => Phase::Complete,
            _ => return Err(illegal()),
        };

        let mut next = self.clone();
        next.phase = next_phase;
        next.history.push(event);
        Ok(next)
    }
}

/// A trace failure: which event broke the procedure, and how.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index}: {source}")]
pub struct TraceError {
    pub index: usize,
    pub source: HandoverError,
}

/// Left-fold of `advance` over the events, starting from `Idle` with the
/// given context. Returns the final state, or the first error with its
/// 0-based event index.
pub fn run_trace(
    context: HandoverContext,
    events: impl IntoIterator<Item = HandoverEvent>,
) -> Result<HandoverState, TraceError> {
    let mut state = HandoverState::new(context);
    for (index, event) in events.into_iter().enumerate() {
        state = state
            .advance(event)
            .map_err(|source| TraceError { index, source })?;
    }
    Ok(state)
}

/// The canonical eight-message procedure, in order: report, decision,
/// command, sync, path-switch request and ack, completion, release.
pub fn canonical_trace(context: &HandoverContext) -> Vec<HandoverEvent> {
    let event = |kind: EventKind| HandoverEvent {
        kind,
        actor: kind.legal_actor().expect("canonical kinds have one actor"),
        slice_id: context.slice_id.clone(),
    };
    vec![
        event(EventKind::MeasurementReport),
        event(EventKind::HandoverDecision),
        event(EventKind::HandoverCommand),
        event(EventKind::SyncToTarget),
        event(EventKind::PathSwitchRequest),
        event(EventKind::PathSwitchAck),
        event(EventKind::HandoverComplete),
        event(EventKind::ReleaseSource),
    ]
}

/// Outcome of the bounded exhaustive search over event-kind sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCheckReport {
    /// Sequences accounted for, including all extensions of rejected or
    /// terminal prefixes.
    pub sequences_covered: u128,
    /// Kind sequences that reach `Complete`.
    pub completing_sequences: Vec<Vec<EventKind>>,
    /// Whether every completing sequence contains MeasurementReport,
    /// HandoverDecision, PathSwitchRequest, and PathSwitchAck in that
    /// relative order.
    pub ordering_holds: bool,
}

/// Exhaustively explores every event sequence of length ≤ `max_len` drawn
/// from the nine kinds (each with its legal actor; timeouts attributed to
/// the controller) and checks the path-switch ordering safety property on
/// every sequence that reaches `Complete`. Rejected and terminal prefixes
/// are counted in bulk: all `9^k` extensions of a dead prefix are covered
/// without being enumerated.
pub fn model_check(max_len: usize) -> ModelCheckReport {
    let context = HandoverContext {
        slice_id: "model".into(),
        source_cell: "source".into(),
        target_cell: "target".into(),
    };
    let num_kinds = EventKind::ALL.len() as u128;
    // Σ_{l=0..=k} 9^l extensions of a node at depth max_len − k.
    let extensions = |remaining: usize| -> u128 {
        let mut total = 0u128;
        let mut pow = 1u128;
        for _ in 0..=remaining {
            total += pow;
            pow *= num_kinds;
        }
        total
    };

    let mut report = ModelCheckReport {
        sequences_covered: 0,
        completing_sequences: Vec::new(),
        ordering_holds: true,
    };
    let mut prefix: Vec<EventKind> = Vec::new();
    let state = HandoverState::new(context);
    descend(&state, &mut prefix, max_len, &extensions, &mut report);
    report
}

fn descend(
    state: &HandoverState,
    prefix: &mut Vec<EventKind>,
    max_len: usize,
    extensions: &dyn Fn(usize) -> u128,
    report: &mut ModelCheckReport,
) {
    // The empty extension: this prefix itself is one covered sequence.
    report.sequences_covered += 1;
    if state.phase == Phase::Complete {
        report.completing_sequences.push(prefix.clone());
        if !path_switch_order_holds(prefix) {
            report.ordering_holds = false;
        }
    }
    let remaining = max_len - prefix.len();
    if remaining == 0 {
        return;
    }
    for kind in EventKind::ALL {
        let event = HandoverEvent {
            kind,
            actor: kind.legal_actor().unwrap_or(Actor::SdnController),
            slice_id: state.context.slice_id.clone(),
        };
        match state.advance(event) {
            Ok(next) => {
                prefix.push(kind);
                descend(&next, prefix, max_len, extensions, report);
                prefix.pop();
            }
            // Every extension of a rejected event is also invalid: count
            // the whole subtree (the rejected event plus its extensions).
            Err(_) => report.sequences_covered += extensions(remaining - 1),
        }
    }
}

/// True if the four procedure milestones appear in relative order.
fn path_switch_order_holds(kinds: &[EventKind]) -> bool {
    let required = [
        EventKind::MeasurementReport,
        EventKind::HandoverDecision,
        EventKind::PathSwitchRequest,
        EventKind::PathSwitchAck,
    ];
    let mut next = 0;
    for kind in kinds {
        if next < required.len() && *kind == required[next] {
            next += 1;
        }
    }
    next == required.len()
}
