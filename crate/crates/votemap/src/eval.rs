//! Evaluation against ground truth: TP/FP/FN/duplicate classification,
//! reprojection statistics, and the passes experiment with leave-one-out
//! reprojection.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::pipeline::{self, PipelineError};
use crate::synth::{self, DetectorSpec, GroundTruth, SceneSpec};
use crate::voting::{ObjectEstimate, SolveConfig};

/// Default matching radius in meters: separates adjacent objects while
/// tolerating refinement error.
pub const DEFAULT_MATCH_DIST: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub object_id: String,
    pub gt_id: String,
    pub distance_m: f64,
}

/// Classification of a prediction set against recoverable ground truth.
///
/// Invariants: `tp + duplicates + fp == predictions` and
/// `tp + fn == recoverable ground-truth objects`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub duplicates: usize,
    pub matches: Vec<MatchPair>,
    /// Mean reprojection rms over matched objects; `None` with no matches.
    pub mean_rms_px: Option<f64>,
}

/// Greedy globally-closest matching of predictions to recoverable
/// ground-truth objects.
///
/// The closest unmatched (prediction, gt) pair under `match_dist` matches
/// first, repeatedly; each gt takes at most one prediction as its true
/// positive. Leftover predictions within `match_dist` of an already-matched
/// gt count as duplicates; other leftovers are false positives; unmatched
/// recoverable gts are false negatives.
pub fn match_objects(
    predicted: &[ObjectEstimate],
    gt: &GroundTruth,
    match_dist: f64,
) -> MatchResult {
    assert!(match_dist > 0.0);
    let recoverable: Vec<&synth::GtObject> =
        gt.objects.iter().filter(|o| o.recoverable).collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in predicted.iter().enumerate() {
        for (gi, g) in recoverable.iter().enumerate() {
            let d = p.position.distance(&g.position);
            if d < match_dist {
                candidates.push((d, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut pred_matched = vec![false; predicted.len()];
    let mut gt_matched = vec![false; recoverable.len()];
    let mut matches = Vec::new();
    for (d, pi, gi) in &candidates {
        if pred_matched[*pi] || gt_matched[*gi] {
            continue;
        }
        pred_matched[*pi] = true;
        gt_matched[*gi] = true;
        matches.push(MatchPair {
            object_id: predicted[*pi].id.clone(),
            gt_id: recoverable[*gi].id.clone(),
            distance_m: *d,
        });
    }

    let mut duplicates = 0;
    let mut false_positives = 0;
    for (pi, p) in predicted.iter().enumerate() {
        if pred_matched[pi] {
            continue;
        }
        let near_matched_gt = recoverable.iter().enumerate().any(|(gi, g)| {
            gt_matched[gi] && p.position.distance(&g.position) < match_dist
        });
        if near_matched_gt {
            duplicates += 1;
        } else {
            false_positives += 1;
        }
    }

    let true_positives = matches.len();
    let false_negatives = recoverable.len() - true_positives;
    let mean_rms_px = if matches.is_empty() {
        None
    } else {
        let matched_ids: std::collections::BTreeSet<&str> =
            matches.iter().map(|m| m.object_id.as_str()).collect();
        let sum: f64 = predicted
            .iter()
            .filter(|p| matched_ids.contains(p.id.as_str()))
            .map(|p| p.rms_px)
            .sum();
        Some(sum / true_positives as f64)
    };

    MatchResult {
        true_positives,
        false_positives,
        false_negatives,
        duplicates,
        matches,
        mean_rms_px,
    }
}

/// Recall over recoverable objects; 1.0 when nothing is recoverable.
pub fn recall(result: &MatchResult) -> f64 {
    let denom = result.true_positives + result.false_negatives;
    if denom == 0 {
        1.0
    } else {
        result.true_positives as f64 / denom as f64
    }
}

/// Leave-one-out reprojection statistics, pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooStats {
    pub mean_px: f64,
    pub q25_px: f64,
    pub median_px: f64,
    pub q75_px: f64,
    pub samples: usize,
}

impl LooStats {
    fn from_samples(mut samples: Vec<f64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let q = |p: f64| samples[((samples.len() - 1) as f64 * p).round() as usize];
        Some(Self {
            mean_px: samples.iter().sum::<f64>() / samples.len() as f64,
            q25_px: q(0.25),
            median_px: q(0.5),
            q75_px: q(0.75),
            samples: samples.len(),
        })
    }
}

/// One point of the passes curve: metrics at pass count `passes`, averaged
/// over seeds (leave-one-out samples are pooled across seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassesPoint {
    pub passes: usize,
    pub mean_recall: f64,
    pub mean_false_positives: f64,
    /// `None` at one pass (no held-out pass exists) or when no recovered
    /// object projected into the held-out pass.
    pub loo: Option<LooStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassesCurve {
    pub points: Vec<PassesPoint>,
}

/// Performance as a function of the number of passes through the area.
///
/// For each seed and each `k` in `1..=max_passes`, the `k`-pass prefix of
/// the scene is generated and solved end to end; recall and false positives
/// come from [`match_objects`]. Localization generalization is measured by
/// leave-one-out reprojection: the objects solved from passes `1..k-1` are
/// projected into the held-out pass `k`'s images, and for every image where
/// the matched ground-truth object was truly detected, the pixel distance
/// between the projection and that detection is recorded. Seeds fan out in
/// parallel; aggregation order is fixed.
pub fn passes_experiment(
    scene: &SceneSpec,
    det: &DetectorSpec,
    solve_cfg: &SolveConfig,
    cluster_cfg: &ClusterConfig,
    max_passes: usize,
    seeds: &[u64],
) -> Result<PassesCurve, PipelineError> {
    assert!(max_passes >= 1);
    assert!(!seeds.is_empty());

    struct SeedPoint {
        recall: f64,
        false_positives: usize,
        loo_samples: Vec<f64>,
    }

    let per_seed: Vec<Result<Vec<SeedPoint>, PipelineError>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut points = Vec::with_capacity(max_passes);
            let mut prev_objects: Vec<ObjectEstimate> = Vec::new();
            for k in 1..=max_passes {
                let scene_k = SceneSpec { n_passes: k, rng_seed: seed, ..scene.clone() };
                let (corpus, gt) = synth::generate(&scene_k, det, solve_cfg);
                let report = pipeline::run(&corpus, solve_cfg, cluster_cfg, 1)?;
                let m = match_objects(&report.objects, &gt, DEFAULT_MATCH_DIST);

                let mut loo_samples = Vec::new();
                if k >= 2 && !prev_objects.is_empty() {
                    let held_out = format!("p{:02}", k - 1);
                    // Detections of the held-out pass, keyed by (image, object).
                    let mut held_dets: std::collections::BTreeMap<(&str, &str), crate::geometry::PixelPoint> =
                        Default::default();
                    for d in &corpus.detections {
                        if let Some(Some(gt_id)) = gt.detection_labels.get(&d.id) {
                            held_dets.insert((d.image_id.as_str(), gt_id.as_str()), d.center);
                        }
                    }
                    let prev_match = match_objects(&prev_objects, &gt, DEFAULT_MATCH_DIST);
                    for pair in &prev_match.matches {
                        let est = prev_objects
                            .iter()
                            .find(|o| o.id == pair.object_id)
                            .expect("matched id comes from prev_objects");
                        for view in corpus.views.iter().filter(|v| v.pass_id == held_out) {
                            let Some(truth) =
                                held_dets.get(&(view.id.as_str(), pair.gt_id.as_str()))
                            else {
                                continue;
                            };
                            let depth = view.camera.depth_of(&est.position);
                            if depth < solve_cfg.depth_min || depth > solve_cfg.depth_max {
                                continue;
                            }
                            if view.camera.distance_to(&est.position) >= solve_cfg.r_max {
                                continue;
                            }
                            let Ok(px) = view.camera.project(&est.position) else { continue };
                            loo_samples.push(px.distance(truth));
                        }
                    }
                }

                points.push(SeedPoint {
                    recall: recall(&m),
                    false_positives: m.false_positives,
                    loo_samples,
                });
                prev_objects = report.objects;
            }
            Ok(points)
        })
        .collect();

    let per_seed: Vec<Vec<SeedPoint>> =
        per_seed.into_iter().collect::<Result<Vec<_>, _>>()?;

    let points = (0..max_passes)
        .map(|ki| {
            let n = per_seed.len() as f64;
            let mean_recall = per_seed.iter().map(|s| s[ki].recall).sum::<f64>() / n;
            let mean_false_positives =
                per_seed.iter().map(|s| s[ki].false_positives as f64).sum::<f64>() / n;
            let pooled: Vec<f64> =
                per_seed.iter().flat_map(|s| s[ki].loo_samples.iter().copied()).collect();
            PassesPoint {
                passes: ki + 1,
                mean_recall,
                mean_false_positives,
                loo: LooStats::from_samples(pooled),
            }
        })
        .collect();

    Ok(PassesCurve { points })
}

// ── report emission ──────────────────────────────────────────────────────────

fn json_mirror_path(path: &Path) -> std::path::PathBuf {
    let mirror = path.with_extension("json");
    if mirror == path {
        // The CSV itself was named *.json; keep the mirror distinct.
        path.with_extension("mirror.json")
    } else {
        mirror
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a match result as CSV at `path` plus a JSON mirror alongside
/// (same stem, `.json` extension).
pub fn emit_match_report(result: &MatchResult, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "tp,fp,fn,duplicates,mean_rms_px")?;
    writeln!(
        w,
        "{},{},{},{},{}",
        result.true_positives,
        result.false_positives,
        result.false_negatives,
        result.duplicates,
        opt_cell(result.mean_rms_px),
    )?;
    w.flush()?;
    let json = serde_json::to_string_pretty(result)?;
    std::fs::write(json_mirror_path(path), json + "\n")
}

/// Writes a passes curve as CSV (one row per pass count) plus a JSON mirror.
pub fn emit_passes_report(curve: &PassesCurve, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "passes,mean_recall,mean_false_positives,loo_mean_px,loo_q25_px,loo_median_px,loo_q75_px,loo_samples"
    )?;
    for p in &curve.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.passes,
            p.mean_recall,
            p.mean_false_positives,
            opt_cell(p.loo.as_ref().map(|l| l.mean_px)),
            opt_cell(p.loo.as_ref().map(|l| l.q25_px)),
            opt_cell(p.loo.as_ref().map(|l| l.median_px)),
            opt_cell(p.loo.as_ref().map(|l| l.q75_px)),
            p.loo.as_ref().map(|l| l.samples.to_string()).unwrap_or_default(),
        )?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(curve)?;
    std::fs::write(json_mirror_path(path), json + "\n")
}
