//! End-to-end orchestration: ingest posed views and detections from JSON
//! Lines files, cluster, solve clusters on a worker pool, merge duplicates,
//! and report.
//!
//! Cluster solves are embarrassingly parallel; results are reduced in
//! cluster-id order regardless of completion order, so the final object
//! list is bit-identical for any thread count.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{self, ClusterConfig, ClusterError};
use crate::geometry::{Camera, CameraIntrinsics, CameraView, PixelPoint, Pose, WorldPoint};
use crate::voting::{self, Detection, ObjectEstimate, SolveConfig};

/// Quaternions may deviate from unit norm by at most this much at ingest;
/// accepted rows are renormalized.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {path}")]
    FileNotFound { path: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("detection {detection_id:?} references unknown image id {image_id:?}")]
    DanglingImageId { detection_id: String, image_id: String },
    #[error("view {view_id:?} quaternion norm deviates from 1 by {deviation:.3e} (tolerance {QUAT_NORM_TOLERANCE:.0e})")]
    NonUnitQuaternion { view_id: String, deviation: f64 },
}

impl IngestError {
    pub(crate) fn open_error(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::FileNotFound { path: path.display().to_string() }
        } else {
            Self::Io { path: path.display().to_string(), source: e }
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source: e }
    }

    pub(crate) fn parse(path: &Path, line: usize, msg: String) -> Self {
        Self::Parse { path: path.display().to_string(), line, msg }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Where a corpus came from, for the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub views_path: Option<String>,
    pub detections_path: Option<String>,
    /// Generator seed when the corpus is synthetic.
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn synthetic(seed: u64) -> Self {
        Self { seed: Some(seed), ..Self::default() }
    }
}

/// A validated, immutable input set: views and detections sorted by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub views: Vec<CameraView>,
    pub detections: Vec<Detection>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Builds a corpus from already-validated parts (the synthetic
    /// generator's path). Panics on inconsistent inputs.
    pub fn from_parts(
        mut views: Vec<CameraView>,
        mut detections: Vec<Detection>,
        provenance: Provenance,
    ) -> Self {
        views.sort_by(|a, b| a.id.cmp(&b.id));
        detections.sort_by(|a, b| a.id.cmp(&b.id));
        let ids: std::collections::BTreeSet<&str> = views.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(ids.len(), views.len(), "duplicate view ids");
        for d in &detections {
            assert!(ids.contains(d.image_id.as_str()), "detection {} dangles", d.id);
        }
        Self { views, detections, provenance }
    }

    pub fn view(&self, id: &str) -> Option<&CameraView> {
        self.views.binary_search_by(|v| v.id.as_str().cmp(id)).ok().map(|i| &self.views[i])
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

// ── ingest ───────────────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct ViewRow {
    id: String,
    pass_id: String,
    q: [f64; 4],
    c: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct DetectionRow {
    id: String,
    image_id: String,
    u: f64,
    v: f64,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Serialize)]
struct ViewRowOut<'a> {
    id: &'a str,
    pass_id: &'a str,
    q: [f64; 4],
    c: [f64; 3],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct DetectionRowOut<'a> {
    id: &'a str,
    image_id: &'a str,
    u: f64,
    v: f64,
    score: Option<f64>,
}

fn lines_of(path: &Path) -> Result<Vec<String>, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::open_error(path, e))?;
    std::io::BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| IngestError::io(path, e))
}

/// Reads and validates a views file and a detections file (JSON Lines, one
/// record per line). Rejects rows that violate the corpus invariants with
/// row-numbered diagnostics; ingest is strict because corrupt poses poison
/// triangulation silently.
pub fn ingest(views_path: &Path, detections_path: &Path) -> Result<Corpus, IngestError> {
    let mut views = Vec::new();
    let mut seen_views: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in lines_of(views_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: ViewRow = serde_json::from_str(line)
            .map_err(|e| IngestError::parse(views_path, line_no, e.to_string()))?;
        if let Some(prev) = seen_views.insert(row.id.clone(), line_no) {
            return Err(IngestError::parse(
                views_path,
                line_no,
                format!("duplicate view id {:?} (first seen on line {prev})", row.id),
            ));
        }
        let intr = CameraIntrinsics::new(row.fx, row.fy, row.cx, row.cy, row.width, row.height);
        if !intr.is_valid() {
            return Err(IngestError::parse(
                views_path,
                line_no,
                format!("invalid intrinsics for view {:?}", row.id),
            ));
        }
        if !(row.c.iter().all(|v| v.is_finite()) && row.q.iter().all(|v| v.is_finite())) {
            return Err(IngestError::parse(
                views_path,
                line_no,
                format!("non-finite pose for view {:?}", row.id),
            ));
        }
        let (pose, norm_err) = Pose::from_raw(row.q, row.c);
        if norm_err > QUAT_NORM_TOLERANCE {
            return Err(IngestError::NonUnitQuaternion { view_id: row.id, deviation: norm_err });
        }
        views.push(CameraView { id: row.id, pass_id: row.pass_id, camera: Camera::new(pose, intr) });
    }

    let view_ids: std::collections::BTreeSet<&str> = views.iter().map(|v| v.id.as_str()).collect();

    let mut detections = Vec::new();
    let mut seen_dets: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in lines_of(detections_path)?.iter().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: DetectionRow = serde_json::from_str(line)
            .map_err(|e| IngestError::parse(detections_path, line_no, e.to_string()))?;
        if let Some(prev) = seen_dets.insert(row.id.clone(), line_no) {
            return Err(IngestError::parse(
                detections_path,
                line_no,
                format!("duplicate detection id {:?} (first seen on line {prev})", row.id),
            ));
        }
        if !(row.u.is_finite() && row.v.is_finite()) {
            return Err(IngestError::parse(
                detections_path,
                line_no,
                format!("non-finite center for detection {:?}", row.id),
            ));
        }
        if let Some(score) = row.score {
            if !(0.0..=1.0).contains(&score) {
                return Err(IngestError::parse(
                    detections_path,
                    line_no,
                    format!("score {score} outside [0, 1] for detection {:?}", row.id),
                ));
            }
        }
        if !view_ids.contains(row.image_id.as_str()) {
            return Err(IngestError::DanglingImageId {
                detection_id: row.id,
                image_id: row.image_id,
            });
        }
        detections.push(Detection {
            id: row.id,
            image_id: row.image_id,
            center: PixelPoint::new(row.u, row.v),
            score: row.score,
        });
    }

    views.sort_by(|a, b| a.id.cmp(&b.id));
    detections.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus {
        views,
        detections,
        provenance: Provenance {
            views_path: Some(views_path.display().to_string()),
            detections_path: Some(detections_path.display().to_string()),
            seed: None,
        },
    })
}

/// Writes a corpus back out in the ingest formats.
pub fn write_corpus(
    corpus: &Corpus,
    views_path: &Path,
    detections_path: &Path,
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(views_path)?);
    for v in &corpus.views {
        let q = v.camera.pose.rotation();
        let c = v.camera.pose.center();
        let intr = &v.camera.intrinsics;
        let row = ViewRowOut {
            id: &v.id,
            pass_id: &v.pass_id,
            q: [q.w, q.i, q.j, q.k],
            c: [c.x, c.y, c.z],
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(detections_path)?);
    for d in &corpus.detections {
        let row = DetectionRowOut {
            id: &d.id,
            image_id: &d.image_id,
            u: d.center.u,
            v: d.center.v,
            score: d.score,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

// ── run ──────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterRunStats {
    pub id: String,
    pub n_views: usize,
    pub n_detections: usize,
    pub n_hypotheses: usize,
    pub n_degenerate_pairs: usize,
    pub n_accepted: usize,
    pub iterations: usize,
    /// Wall-clock time of this cluster's solve. Excluded from determinism
    /// comparisons, which scrub timing before comparing reports.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub images: usize,
    pub detections: usize,
    pub clusters: usize,
    pub objects_before_merge: usize,
    pub objects: usize,
    pub objects_merged: usize,
    pub support_conflicts: usize,
    pub post_refine_close_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportConfig {
    pub solve: SolveConfig,
    pub cluster: ClusterConfig,
    pub threads: usize,
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: ReportConfig,
    pub seed: Option<u64>,
    pub totals: Totals,
    pub per_cluster: Vec<ClusterRunStats>,
    pub total_wall_ms: f64,
    pub objects: Vec<ObjectEstimate>,
}

/// Runs the full pipeline: cluster, solve each cluster on a worker pool of
/// `threads`, concatenate in cluster-id order, merge duplicates.
///
/// The objects in the report are bit-identical for any thread count.
pub fn run(
    corpus: &Corpus,
    solve_cfg: &SolveConfig,
    cluster_cfg: &ClusterConfig,
    threads: usize,
) -> Result<PipelineReport, PipelineError> {
    if !solve_cfg.is_valid() {
        return Err(PipelineError::InvalidConfig("solver thresholds out of range".into()));
    }
    if !cluster_cfg.is_valid() {
        return Err(PipelineError::InvalidConfig("cluster radii out of range".into()));
    }
    if threads == 0 {
        return Err(PipelineError::InvalidConfig("threads must be at least 1".into()));
    }
    let started = Instant::now();
    let config =
        ReportConfig { solve: solve_cfg.clone(), cluster: cluster_cfg.clone(), threads };

    if corpus.is_empty() {
        return Ok(PipelineReport {
            config,
            seed: corpus.provenance.seed,
            totals: Totals::default(),
            per_cluster: Vec::new(),
            total_wall_ms: elapsed_ms(started),
            objects: Vec::new(),
        });
    }

    let clusters = clustering::cluster_images(&corpus.views, cluster_cfg)?;

    // Materialize each cluster's slice of the corpus. Detections follow
    // their view into every cluster that contains it; the merge step removes
    // the duplicates this creates.
    let jobs: Vec<(Vec<CameraView>, Vec<Detection>)> = clusters
        .iter()
        .map(|cl| {
            let members: std::collections::BTreeSet<&str> =
                cl.image_ids.iter().map(String::as_str).collect();
            let views: Vec<CameraView> =
                corpus.views.iter().filter(|v| members.contains(v.id.as_str())).cloned().collect();
            let dets: Vec<Detection> = corpus
                .detections
                .iter()
                .filter(|d| members.contains(d.image_id.as_str()))
                .cloned()
                .collect();
            (views, dets)
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Internal(format!("worker pool: {e}")))?;
    let solved: Vec<(Vec<ObjectEstimate>, voting::SolveStats, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|(views, dets)| {
                let t = Instant::now();
                let (objects, stats) = voting::solve_cluster_with_stats(views, dets, solve_cfg);
                (objects, stats, elapsed_ms(t))
            })
            .collect()
    });

    let mut per_cluster = Vec::with_capacity(clusters.len());
    let mut all_objects = Vec::new();
    for ((cluster, job), (objects, stats, wall_ms)) in
        clusters.iter().zip(&jobs).zip(solved)
    {
        per_cluster.push(ClusterRunStats {
            id: cluster.id.clone(),
            n_views: job.0.len(),
            n_detections: job.1.len(),
            n_hypotheses: stats.n_hypotheses,
            n_degenerate_pairs: stats.n_degenerate_pairs,
            n_accepted: stats.n_accepted,
            iterations: stats.iterations,
            wall_ms,
        });
        for mut o in objects {
            o.id = format!("{}.{}", cluster.id, o.id);
            o.cluster_ids = vec![cluster.id.clone()];
            all_objects.push(o);
        }
    }

    let objects_before_merge = all_objects.len();
    let (objects, merge_stats) = clustering::merge_objects_with_stats(
        &all_objects,
        &corpus.detections,
        &corpus.views,
        cluster_cfg,
    );

    Ok(PipelineReport {
        config,
        seed: corpus.provenance.seed,
        totals: Totals {
            images: corpus.views.len(),
            detections: corpus.detections.len(),
            clusters: clusters.len(),
            objects_before_merge,
            objects: objects.len(),
            objects_merged: merge_stats.objects_merged,
            support_conflicts: merge_stats.support_conflicts,
            post_refine_close_pairs: merge_stats.post_refine_close_pairs,
        },
        per_cluster,
        total_wall_ms: elapsed_ms(started),
        objects,
    })
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

// ── object file I/O ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ObjectRow {
    id: String,
    x: f64,
    y: f64,
    z: f64,
    n_support: usize,
    rms_px: f64,
    cluster_ids: Vec<String>,
}

/// Writes the final objects as JSON Lines:
/// `{"id", "x", "y", "z", "n_support", "rms_px", "cluster_ids"}`.
pub fn write_objects(objects: &[ObjectEstimate], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for o in objects {
        let row = ObjectRow {
            id: o.id.clone(),
            x: o.position.x,
            y: o.position.y,
            z: o.position.z,
            n_support: o.support.len(),
            rms_px: o.rms_px,
            cluster_ids: o.cluster_ids.clone(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads an objects file written by [`write_objects`]. The individual
/// support detection ids are not stored in the file, so the returned
/// estimates carry empty support lists.
pub fn read_objects(path: &Path) -> Result<Vec<ObjectEstimate>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in lines_of(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ObjectRow = serde_json::from_str(line)
            .map_err(|e| IngestError::parse(path, i + 1, e.to_string()))?;
        out.push(ObjectEstimate {
            id: row.id,
            position: WorldPoint::new(row.x, row.y, row.z),
            support: Vec::new(),
            rms_px: row.rms_px,
            cluster_ids: row.cluster_ids,
        });
    }
    Ok(out)
}

/// Writes the full report as pretty JSON.
pub fn write_report(report: &PipelineReport, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, DetectorSpec, SceneSpec};

    fn write_lines(path: &Path, lines: &[&str]) {
        std::fs::write(path, lines.join("\n")).unwrap();
    }

    const VIEW_A: &str = r#"{"id":"a","pass_id":"p0","q":[1,0,0,0],"c":[0,0,0],"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480}"#;
    const VIEW_B: &str = r#"{"id":"b","pass_id":"p0","q":[1,0,0,0],"c":[2,0,0],"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480}"#;

    #[test]
    fn well_formed_fixture_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");
        write_lines(&views, &[VIEW_A, VIEW_B]);
        write_lines(
            &dets,
            &[
                r#"{"id":"d0","image_id":"a","u":320.0,"v":240.0,"score":0.9}"#,
                r#"{"id":"d1","image_id":"b","u":300.0,"v":240.0,"score":null}"#,
            ],
        );
        let corpus = ingest(&views, &dets).unwrap();
        assert_eq!(corpus.views.len(), 2);
        assert_eq!(corpus.detections.len(), 2);
        assert_eq!(corpus.detections[0].score, Some(0.9));
    }

    #[test]
    fn dangling_image_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");
        write_lines(&views, &[VIEW_A]);
        write_lines(&dets, &[r#"{"id":"d0","image_id":"nope","u":1.0,"v":2.0}"#]);
        let err = ingest(&views, &dets).unwrap_err();
        assert!(matches!(err, IngestError::DanglingImageId { .. }), "{err}");
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");
        write_lines(
            &views,
            &[r#"{"id":"a","pass_id":"p0","q":[1.1,0,0,0],"c":[0,0,0],"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480}"#],
        );
        write_lines(&dets, &[]);
        let err = ingest(&views, &dets).unwrap_err();
        assert!(matches!(err, IngestError::NonUnitQuaternion { .. }), "{err}");
    }

    #[test]
    fn truncated_line_is_a_parse_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");
        write_lines(&views, &[VIEW_A, r#"{"id":"b","pass_id":"p0","q":[1,0"#]);
        write_lines(&dets, &[]);
        match ingest(&views, &dets).unwrap_err() {
            IngestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_file_is_file_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest(&dir.path().join("absent.jsonl"), &dir.path().join("x")).unwrap_err();
        assert!(matches!(err, IngestError::FileNotFound { .. }));
    }

    #[test]
    fn duplicate_ids_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");

        write_lines(&views, &[VIEW_A, VIEW_A]);
        write_lines(&dets, &[]);
        match ingest(&views, &dets).unwrap_err() {
            IngestError::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("duplicate view id"), "{msg}");
            }
            other => panic!("expected parse error, got {other}"),
        }

        let row = r#"{"id":"d0","image_id":"a","u":1.0,"v":2.0}"#;
        write_lines(&views, &[VIEW_A]);
        write_lines(&dets, &[row, row]);
        match ingest(&views, &dets).unwrap_err() {
            IngestError::Parse { msg, .. } => {
                assert!(msg.contains("duplicate detection id"), "{msg}")
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let views = dir.path().join("views.jsonl");
        let dets = dir.path().join("dets.jsonl");
        write_lines(&views, &[VIEW_A]);
        write_lines(&dets, &[r#"{"id":"d0","image_id":"a","u":1.0,"v":2.0,"score":1.5}"#]);
        assert!(matches!(ingest(&views, &dets).unwrap_err(), IngestError::Parse { .. }));
    }

    #[test]
    fn empty_corpus_runs_to_empty_report() {
        let corpus = Corpus::default();
        let report = run(&corpus, &SolveConfig::default(), &ClusterConfig::default(), 2).unwrap();
        assert_eq!(report.totals.clusters, 0);
        assert_eq!(report.objects.len(), 0);
    }

    #[test]
    fn single_cluster_run_equals_solve_then_merge() {
        let scene = SceneSpec {
            n_objects: 6,
            area: (40.0, 30.0),
            n_passes: 2,
            images_per_pass: 10,
            frame_spacing: 2.0,
            ..SceneSpec::default()
        };
        let solve_cfg = SolveConfig::default();
        let cluster_cfg = ClusterConfig::default();
        let (corpus, _) = synth::generate(&scene, &DetectorSpec::noiseless(), &solve_cfg);
        let clusters = clustering::cluster_images(&corpus.views, &cluster_cfg).unwrap();
        assert_eq!(clusters.len(), 1, "fixture must fit a single cluster");

        let report = run(&corpus, &solve_cfg, &cluster_cfg, 1).unwrap();
        let mut direct = voting::solve_cluster(&corpus.views, &corpus.detections, &solve_cfg);
        for o in direct.iter_mut() {
            o.id = format!("c0000.{}", o.id);
            o.cluster_ids = vec!["c0000".into()];
        }
        let merged =
            clustering::merge_objects(&direct, &corpus.detections, &corpus.views, &cluster_cfg);
        assert_eq!(report.objects, merged);
    }

    #[test]
    fn corpus_roundtrips_through_files() {
        let scene =
            SceneSpec { n_objects: 5, n_passes: 2, images_per_pass: 8, ..SceneSpec::default() };
        let (corpus, _) =
            synth::generate(&scene, &DetectorSpec::default(), &SolveConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("views.jsonl");
        let dp = dir.path().join("dets.jsonl");
        write_corpus(&corpus, &vp, &dp).unwrap();
        let back = ingest(&vp, &dp).unwrap();
        assert_eq!(back.views.len(), corpus.views.len());
        assert_eq!(back.detections, corpus.detections);
        for (a, b) in back.views.iter().zip(corpus.views.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.pass_id, b.pass_id);
            assert!(a.camera.pose.center().distance(&b.camera.pose.center()) < 1e-12);
        }
    }
}
