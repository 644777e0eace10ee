//! Case splits, snapshots and conflict-directed backjumping.
//!
//! Only bounds, phases, repair counters and the derived-bound log are
//! snapshotted. The tableau and assignment are left alone on backtracking:
//! every tableau reachable by pivoting has the same solution set, and the
//! next repair round moves the assignment back inside the restored bounds.

use serde::Serialize;

use crate::engine::{EngineError, Phase, Reluplex};
use crate::simplex::{BoundsSnapshot, VarId};

/// `l(var) > u(var)` was derived; the contradiction only depends on split
/// decisions up to `depth_of_cause`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Conflict {
    pub var: VarId,
    pub lower: f64,
    pub upper: f64,
    pub depth_of_cause: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOrder {
    ActiveFirst,
    InactiveFirst,
}

impl CaseOrder {
    pub fn first(self) -> Phase {
        match self {
            CaseOrder::ActiveFirst => Phase::Active,
            CaseOrder::InactiveFirst => Phase::Inactive,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Snapshot {
    bounds: BoundsSnapshot,
    phases: Vec<Phase>,
    repair_counts: Vec<u32>,
    log_len: usize,
}

#[derive(Clone, Debug)]
pub struct SplitFrame {
    pub pair: usize,
    pub taken: CaseOrder,
    pub explored_other: bool,
    pub(crate) snapshot: Snapshot,
}

impl SplitFrame {
    /// The case currently applied by this frame.
    pub fn current_phase(&self) -> Phase {
        let first = self.taken.first();
        if self.explored_other {
            first.opposite()
        } else {
            first
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Push {
        depth: usize,
        pair: usize,
        case: Phase,
    },
    Flip {
        depth: usize,
        pair: usize,
        case: Phase,
    },
    Pop {
        depth: usize,
        pair: usize,
        explored_sibling: bool,
    },
    Conflict {
        depth: usize,
        var: VarId,
        lower: f64,
        upper: f64,
        cause_depth: u32,
    },
}

#[derive(Clone, Debug, Default)]
pub struct SplitStack {
    pub(crate) frames: Vec<SplitFrame>,
    pub(crate) trace: Option<Vec<TraceEvent>>,
    pub(crate) max_depth: usize,
    pub(crate) total_splits: u64,
}

impl SplitStack {
    pub fn new(trace: bool) -> Self {
        Self {
            trace: trace.then(Vec::new),
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConflictOutcome {
    /// Search continues at the given depth with a flipped case.
    Backjumped(usize),
    RootUnsat,
}

/// Depth responsible for `l(x) > u(x)`: the later of the two levels at which
/// the bounds were introduced.
pub fn cause_depth(lower_level: u32, upper_level: u32) -> u32 {
    lower_level.max(upper_level)
}

impl Reluplex {
    fn capture_snapshot(&self) -> Snapshot {
        Snapshot {
            bounds: self.state.snapshot_bounds(),
            phases: self.pairs.iter().map(|p| p.phase).collect(),
            repair_counts: self.pairs.iter().map(|p| p.repair_count).collect(),
            log_len: self.log.len(),
        }
    }

    fn restore_snapshot(&mut self, snap: &Snapshot) {
        self.state.restore_bounds(&snap.bounds);
        for (p, (&phase, &count)) in self
            .pairs
            .iter_mut()
            .zip(snap.phases.iter().zip(&snap.repair_counts))
        {
            p.phase = phase;
            p.repair_count = count;
        }
        self.log.truncate(snap.log_len);
    }

    /// Opens a new frame and applies its first case. A conflict raised while
    /// applying the case is returned for the caller to resolve; the frame
    /// stays on the stack.
    pub fn push_split(
        &mut self,
        pair: usize,
        first: CaseOrder,
    ) -> Result<Option<Conflict>, EngineError> {
        if self.pair_checked(pair)?.phase != Phase::Undecided {
            return Err(EngineError::PairFixed(pair));
        }
        let snapshot = self.capture_snapshot();
        self.stack.frames.push(SplitFrame {
            pair,
            taken: first,
            explored_other: false,
            snapshot,
        });
        let depth = self.stack.frames.len();
        self.stack.max_depth = self.stack.max_depth.max(depth);
        self.stack.total_splits += 1;
        self.trace_event(TraceEvent::Push {
            depth,
            pair,
            case: first.first(),
        });
        Ok(self.fix_phase(pair, first.first(), depth as u32).err())
    }

    /// Pops frames above the cause of `conflict` and flips the first frame
    /// whose sibling case is still open.
    pub fn handle_conflict(&mut self, conflict: Conflict) -> ConflictOutcome {
        let mut conflict = conflict;
        loop {
            let depth = self.depth();
            self.trace_event(TraceEvent::Conflict {
                depth,
                var: conflict.var,
                lower: conflict.lower,
                upper: conflict.upper,
                cause_depth: conflict.depth_of_cause,
            });
            let mut target = if self.config.backjumping {
                (conflict.depth_of_cause as usize).min(depth)
            } else {
                depth
            };
            loop {
                while self.depth() > target {
                    let frame = self.stack.frames.pop().expect("depth > target ≥ 0");
                    if !frame.explored_other {
                        self.stats.backjumped_frames += 1;
                    }
                    self.trace_event(TraceEvent::Pop {
                        depth: self.depth() + 1,
                        pair: frame.pair,
                        explored_sibling: frame.explored_other,
                    });
                    if self.depth() == 0 {
                        self.restore_snapshot(&frame.snapshot);
                    }
                }
                if target == 0 {
                    return ConflictOutcome::RootUnsat;
                }
                if self.stack.frames[target - 1].explored_other {
                    target -= 1;
                    continue;
                }
                break;
            }
            let frame = self.stack.frames.last_mut().expect("target ≥ 1");
            frame.explored_other = true;
            let pair = frame.pair;
            let case = frame.current_phase();
            let snapshot = frame.snapshot.clone();
            self.restore_snapshot(&snapshot);
            self.stack.total_splits += 1;
            self.trace_event(TraceEvent::Flip {
                depth: target,
                pair,
                case,
            });
            match self.fix_phase(pair, case, target as u32) {
                Ok(()) => return ConflictOutcome::Backjumped(target),
                Err(c) => conflict = c,
            }
        }
    }
}
