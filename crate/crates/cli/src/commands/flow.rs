use geoflow_core::csf::{run as flow, Fate, FlowRun};
use geoflow_core::curve::DiscreteCurve;
use geoflow_core::knots::{link_intersections, self_intersections};
use geoflow_core::surface::SurfaceModel;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::io::{csv, to_json_line};
use crate::{to_value, Artifact, CliResult, Outcome};

/// Intersection counts of one kept frame; `None` where the polygon was degenerate.
#[derive(Debug, Clone, Serialize)]
pub struct FrameCounts {
    pub step: usize,
    pub self_x: Option<usize>,
    pub ref_x: Option<Vec<usize>>,
}

pub fn frame_counts(surf: &SurfaceModel, run: &FlowRun, refs: &[DiscreteCurve]) -> Vec<FrameCounts> {
    run.frames
        .iter()
        .map(|f| FrameCounts {
            step: f.step,
            self_x: self_intersections(surf, &f.curve).ok().map(|r| r.count),
            ref_x: link_intersections(surf, &f.curve, refs).ok().map(|v| v.iter().map(|r| r.count).collect()),
        })
        .collect()
}

/// Frame pairs where a count went up.
pub fn monotonicity_violations(counts: &[FrameCounts]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for w in counts.windows(2) {
        let up_self = matches!((w[0].self_x, w[1].self_x), (Some(a), Some(b)) if b > a);
        let up_ref = match (&w[0].ref_x, &w[1].ref_x) {
            (Some(a), Some(b)) => a.iter().zip(b).any(|(x, y)| y > x),
            _ => false,
        };
        if up_self || up_ref {
            out.push((w[0].step, w[1].step));
        }
    }
    out
}

#[derive(Serialize)]
struct FlowReport<'a> {
    fate: &'a Fate,
    steps: usize,
    initial_length: f64,
    final_length: f64,
    max_length_increase: f64,
    frames: usize,
    monotonicity_violations: Vec<(usize, usize)>,
    counts: Vec<FrameCounts>,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let Experiment::Flow { curve, policy, references } = &cfg.experiment else { unreachable!() };
    let surf = super::surface(cfg)?;
    let c0 = super::curve(&surf, curve, cfg)?;
    let refs: Vec<DiscreteCurve> = references.iter().map(|r| super::curve(&surf, r, cfg)).collect::<CliResult<_>>()?;
    let r = flow(&surf, &c0, policy)?;
    let counts = frame_counts(&surf, &r, &refs);
    let violations = monotonicity_violations(&counts);
    let aborted = matches!(r.fate, Fate::Aborted { .. });
    let passed = !aborted && violations.is_empty();
    let mut frames = Vec::new();
    for (f, c) in r.frames.iter().zip(&counts) {
        let verts: Vec<(usize, f64, f64)> = f.curve.vertices.iter().map(|v| (v.chart, v.coords[0], v.coords[1])).collect();
        let line = serde_json::json!({
            "step": f.step, "t": f.t, "length": f.length, "max_kappa": f.max_kappa,
            "self_x": c.self_x, "ref_x": c.ref_x, "vertices": verts,
        });
        frames.extend(to_json_line(&line).expect("frame serializes"));
        frames.push(b'\n');
    }
    let lengths = csv(&["t", "length"], r.times.iter().zip(&r.lengths).map(|(t, l)| vec![*t, *l]));
    let report = FlowReport {
        fate: &r.fate,
        steps: r.steps,
        initial_length: r.lengths[0],
        final_length: *r.lengths.last().unwrap_or(&f64::NAN),
        max_length_increase: r.max_length_increase,
        frames: r.frames.len(),
        monotonicity_violations: violations,
        counts,
    };
    Ok(Outcome {
        passed,
        verdict: r.fate.name().into(),
        result: to_value(&report),
        artifacts: vec![Artifact::new("frames.jsonl", frames), Artifact::new("lengths.csv", lengths)],
    })
}
