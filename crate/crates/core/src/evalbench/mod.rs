//! Differential benchmark: protocols, pair scoring, APCER/BPCER, DET curves,
//! face recognition score fusion and method comparison.

mod compare;
mod metrics;
mod plot;
mod protocol;

pub use compare::{compare_runs, CompareRow, Comparison};
pub use metrics::{
    apcer_at_bpcer, apcer_bpcer, det_curve, fuse_fr_score, DetCurve, DetPoint, FusionMode, OperatingPoint,
};
pub use plot::det_svg;
pub use protocol::{
    generate_protocol, score_protocol, Protocol, ProtocolBuild, ProtocolEntry, ScoreOutcome, ScoreSet, ScoredEntry,
    Truth,
};

/// Scores and thresholds as text: 9 significant digits, `inf` for +∞.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.8e}")
    }
}
