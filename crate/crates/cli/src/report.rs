use reluplex::encoding::Witness;
use reluplex::SolveStats;

/// Version tag of the `--json` report layout.
pub const SCHEMA: &str = "reluplex-report/1";

/// Sums counters over sub-queries; depth is the maximum.
pub fn aggregate<'a>(parts: impl Iterator<Item = &'a SolveStats>) -> SolveStats {
    let mut total = SolveStats::default();
    for s in parts {
        total.max_stack_depth = total.max_stack_depth.max(s.max_stack_depth);
        total.total_splits += s.total_splits;
        total.pivots += s.pivots;
        total.forced_pivots += s.forced_pivots;
        total.relu_repairs += s.relu_repairs;
        total.tableau_restorations += s.tableau_restorations;
        total.conflicts += s.conflicts;
        total.backjumped_frames += s.backjumped_frames;
        total.derived_bounds += s.derived_bounds;
        total.phase_eliminations += s.phase_eliminations;
        total.wall_time += s.wall_time;
    }
    total
}

fn list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn print_witness(w: &Witness) {
    say!("witness inputs  [{}]", list(&w.inputs));
    if let Some(raw) = &w.raw_inputs {
        say!("raw inputs      [{}]", list(raw));
    }
    say!("witness outputs [{}]", list(&w.outputs));
    say!(
        "replay {} (max error {:e})",
        if w.verified { "ok" } else { "MISMATCH" },
        w.max_replay_error
    );
}

pub fn print_stats(s: &SolveStats) {
    say!(
        "time {:.3}s  stack {}  splits {}  pivots {}  restorations {}",
        s.wall_time, s.max_stack_depth, s.total_splits, s.pivots, s.tableau_restorations
    );
}
