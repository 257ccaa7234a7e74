//! Synthetic ground truth: city-block object layouts, multi-pass camera
//! trajectories, and a simulated noisy-but-unbiased detector, so the
//! system's behavior can be reproduced at desk scale.
//!
//! Trajectories are straight lanes across the area with per-pass lateral
//! offset and alternating travel direction. All randomness derives from
//! `(rng_seed, pass index)` streams, which gives the pass-prefix property:
//! the first `k` passes of an `n`-pass scene are bit-identical to a
//! `k`-pass scene with the same seed, so passes-vs-recall curves compare
//! like with like.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::geometry::{self, Camera, CameraIntrinsics, CameraView, PixelPoint, Pose, WorldPoint};
use crate::pipeline::{Corpus, IngestError, Provenance};
use crate::voting::{Detection, SolveConfig};

/// Scene layout and trajectory parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_objects: usize,
    /// Area extent in meters (x span, y span).
    pub area: (f64, f64),
    /// Objects are placed uniformly at heights in this range (meters).
    pub object_height_range: (f64, f64),
    pub n_passes: usize,
    pub images_per_pass: usize,
    /// Meters between consecutive frames along a pass.
    pub frame_spacing: f64,
    /// Lateral offset of the driving lane from the area midline; passes
    /// alternate direction and side like two lanes of a road.
    pub lane_offset: f64,
    /// Camera height above ground (meters).
    pub camera_height: f64,
    /// Minimum distance between placed objects (meters). Distinct fixtures
    /// closer than the merge radius are indistinguishable from duplicates
    /// by construction, so realistic layouts keep them apart.
    pub min_separation: f64,
    pub intrinsics: CameraIntrinsics,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 20,
            area: (300.0, 40.0),
            object_height_range: (3.0, 6.0),
            n_passes: 5,
            images_per_pass: 60,
            frame_spacing: 5.0,
            lane_offset: 1.75,
            camera_height: 2.0,
            min_separation: 3.0,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480),
            rng_seed: 1,
        }
    }
}

/// Detector noise model: recall, isotropic center noise, and a Poisson
/// false-positive rate. A fraction of false positives re-project a pool of
/// persistent phantom 3D points, the failure mode where a non-object is
/// detected consistently over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub recall: f64,
    pub pixel_sigma: f64,
    pub fp_per_image: f64,
    pub fp_cluster_prob: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self { recall: 0.85, pixel_sigma: 1.5, fp_per_image: 0.3, fp_cluster_prob: 0.1 }
    }
}

impl DetectorSpec {
    /// Exact detector: every visible object detected at its true projection.
    pub fn noiseless() -> Self {
        Self { recall: 1.0, pixel_sigma: 0.0, fp_per_image: 0.0, fp_cluster_prob: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.recall)
            && self.pixel_sigma >= 0.0
            && self.fp_per_image >= 0.0
            && (0.0..=1.0).contains(&self.fp_cluster_prob)
    }
}

/// One ground-truth object. `recoverable` is true iff two of its generated
/// detections see it under a ray-angle difference of at least `theta_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: String,
    pub position: WorldPoint,
    pub recoverable: bool,
}

/// Ground truth for a generated scene.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<GtObject>,
    /// Detection id → ground-truth object id, or `None` for false positives.
    pub detection_labels: BTreeMap<String, Option<String>>,
    /// Number of (object, frame) visibility events the detector was rolled
    /// for; the empirical recall is #true detections / this.
    pub n_visibility_events: usize,
}

impl GroundTruth {
    pub fn recoverable_ids(&self) -> Vec<&str> {
        self.objects.iter().filter(|o| o.recoverable).map(|o| o.id.as_str()).collect()
    }
}

/// Rotation whose optical axis heads along +x (`dir = 1`) or −x (`dir = -1`)
/// with the image v axis pointing at the ground.
fn heading_rotation(dir: f64) -> UnitQuaternion<f64> {
    let forward = Vector3::new(dir, 0.0, 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let right = down.cross(&forward);
    let m = Matrix3::from_columns(&[right, down, forward]);
    UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
}

fn stream(seed: u64, idx: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx);
    rng
}

/// Whether an object at `l` would appear in the frame: inside the image
/// bounds, within the solver's valid depth range, and nearer than `r_max`.
fn visible(cam: &Camera, l: &WorldPoint, cfg: &SolveConfig) -> Option<PixelPoint> {
    let depth = cam.depth_of(l);
    if depth < cfg.depth_min || depth > cfg.depth_max {
        return None;
    }
    if cam.distance_to(l) >= cfg.r_max {
        return None;
    }
    let px = cam.project(l).ok()?;
    cam.intrinsics.contains(&px).then_some(px)
}

/// Generates a corpus and its ground truth. Deterministic in
/// `scene.rng_seed`; the solver config provides the visibility gates
/// (depth range, `r_max`) and the `theta_min` used for recoverability.
pub fn generate(
    scene: &SceneSpec,
    det: &DetectorSpec,
    solve_cfg: &SolveConfig,
) -> (Corpus, GroundTruth) {
    assert!(det.is_valid(), "invalid detector parameters");
    assert!(scene.frame_spacing > 0.0, "frame spacing must be positive");
    assert!(scene.area.0 > 0.0 && scene.area.1 > 0.0, "area must be positive");

    let (area_x, area_y) = scene.area;
    let mut scene_rng = stream(scene.rng_seed, 0);

    // Objects, then the phantom pool, both from the scene stream so they are
    // identical for any number of passes. Placement rejection-samples until
    // the minimum separation holds (or gives up after a bounded number of
    // draws for over-dense requests).
    let mut objects: Vec<WorldPoint> = Vec::with_capacity(scene.n_objects);
    let mut attempts = 0usize;
    while objects.len() < scene.n_objects && attempts < scene.n_objects * 1000 {
        attempts += 1;
        let candidate = WorldPoint::new(
            scene_rng.random::<f64>() * area_x,
            scene_rng.random::<f64>() * area_y,
            scene.object_height_range.0
                + scene_rng.random::<f64>()
                    * (scene.object_height_range.1 - scene.object_height_range.0),
        );
        if objects.iter().all(|o| o.distance(&candidate) >= scene.min_separation) {
            objects.push(candidate);
        }
    }
    assert_eq!(
        objects.len(),
        scene.n_objects,
        "area too dense for the requested min_separation"
    );
    let n_phantoms = (scene.n_objects / 8).max(1);
    let phantoms: Vec<WorldPoint> = (0..n_phantoms)
        .map(|_| {
            WorldPoint::new(
                scene_rng.random::<f64>() * area_x,
                scene_rng.random::<f64>() * area_y,
                scene.object_height_range.0
                    + scene_rng.random::<f64>()
                        * (scene.object_height_range.1 - scene.object_height_range.0),
            )
        })
        .collect();

    let mut views = Vec::new();
    let mut detections = Vec::new();
    let mut labels: BTreeMap<String, Option<String>> = BTreeMap::new();
    // Views (by index into `views`) holding a true detection of each object.
    let mut sightings: Vec<Vec<usize>> = vec![Vec::new(); objects.len()];
    let mut visibility_events = 0usize;

    let noise = Normal::new(0.0, det.pixel_sigma).expect("pixel_sigma >= 0");
    let poisson = if det.fp_per_image > 0.0 {
        Some(Poisson::new(det.fp_per_image).expect("fp_per_image > 0"))
    } else {
        None
    };

    for pass in 0..scene.n_passes {
        let mut rng = stream(scene.rng_seed, 1 + pass as u64);
        let dir: f64 = if pass % 2 == 0 { 1.0 } else { -1.0 };
        let lane_y = area_y / 2.0 - dir * scene.lane_offset + (rng.random::<f64>() - 0.5);
        let phase = rng.random::<f64>() * scene.frame_spacing;
        let length = (scene.images_per_pass.saturating_sub(1)) as f64 * scene.frame_spacing;
        let start_x = if dir > 0.0 {
            (area_x - length) / 2.0 + phase - scene.frame_spacing / 2.0
        } else {
            (area_x + length) / 2.0 - phase + scene.frame_spacing / 2.0
        };
        let rotation = heading_rotation(dir);

        for frame in 0..scene.images_per_pass {
            let center = WorldPoint::new(
                start_x + dir * frame as f64 * scene.frame_spacing,
                lane_y,
                scene.camera_height,
            );
            let camera = Camera::new(Pose::new(rotation, center), scene.intrinsics);
            let view_id = format!("v{pass:02}-{frame:04}");
            let view_index = views.len();

            let mut frame_dets = 0usize;
            for (oi, obj) in objects.iter().enumerate() {
                let Some(px) = visible(&camera, obj, solve_cfg) else {
                    continue;
                };
                visibility_events += 1;
                if !rng.random_bool(det.recall) {
                    continue;
                }
                let center = PixelPoint::new(
                    px.u + noise.sample(&mut rng),
                    px.v + noise.sample(&mut rng),
                );
                let det_id = format!("d{pass:02}-{frame:04}-{frame_dets:02}");
                frame_dets += 1;
                detections.push(Detection {
                    id: det_id.clone(),
                    image_id: view_id.clone(),
                    center,
                    score: None,
                });
                labels.insert(det_id, Some(format!("g{oi:03}")));
                sightings[oi].push(view_index);
            }

            if let Some(poisson) = &poisson {
                let n_fp = poisson.sample(&mut rng) as usize;
                for _ in 0..n_fp {
                    let center = if rng.random_bool(det.fp_cluster_prob) {
                        let phantom = &phantoms[rng.random_range(0..phantoms.len())];
                        match visible(&camera, phantom, solve_cfg) {
                            Some(px) => PixelPoint::new(
                                px.u + noise.sample(&mut rng),
                                px.v + noise.sample(&mut rng),
                            ),
                            // Phantom out of frame: degrade to a uniform FP.
                            None => uniform_pixel(&mut rng, &scene.intrinsics),
                        }
                    } else {
                        uniform_pixel(&mut rng, &scene.intrinsics)
                    };
                    let det_id = format!("d{pass:02}-{frame:04}-{frame_dets:02}");
                    frame_dets += 1;
                    detections.push(Detection {
                        id: det_id.clone(),
                        image_id: view_id.clone(),
                        center,
                        score: None,
                    });
                    labels.insert(det_id, None);
                }
            }

            views.push(CameraView { id: view_id, pass_id: format!("p{pass:02}"), camera });
        }
    }

    let gt_objects: Vec<GtObject> = objects
        .iter()
        .enumerate()
        .map(|(oi, pos)| {
            let vs = &sightings[oi];
            let recoverable = vs.iter().enumerate().any(|(i, &a)| {
                vs[i + 1..].iter().any(|&b| {
                    geometry::ray_angle(pos, &views[a].camera.pose, &views[b].camera.pose)
                        .is_ok_and(|angle| angle >= solve_cfg.theta_min)
                })
            });
            GtObject { id: format!("g{oi:03}"), position: *pos, recoverable }
        })
        .collect();

    let corpus = Corpus::from_parts(views, detections, Provenance::synthetic(scene.rng_seed));
    let gt = GroundTruth {
        objects: gt_objects,
        detection_labels: labels,
        n_visibility_events: visibility_events,
    };
    (corpus, gt)
}

fn uniform_pixel(rng: &mut ChaCha8Rng, intr: &CameraIntrinsics) -> PixelPoint {
    PixelPoint::new(
        rng.random::<f64>() * f64::from(intr.width),
        rng.random::<f64>() * f64::from(intr.height),
    )
}

// ── ground-truth file I/O ────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct GtRow {
    id: String,
    x: f64,
    y: f64,
    z: f64,
    recoverable: bool,
}

/// Writes ground-truth objects as JSON Lines.
pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for o in &gt.objects {
        let row = GtRow {
            id: o.id.clone(),
            x: o.position.x,
            y: o.position.y,
            z: o.position.z,
            recoverable: o.recoverable,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a ground-truth file written by [`write_ground_truth`]. Detection
/// labels are not stored in the file, so the returned value carries objects
/// only.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::open_error(path, e))?;
    let mut objects = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: GtRow = serde_json::from_str(&line)
            .map_err(|e| IngestError::parse(path, i + 1, e.to_string()))?;
        objects.push(GtObject {
            id: row.id,
            position: WorldPoint::new(row.x, row.y, row.z),
            recoverable: row.recoverable,
        });
    }
    Ok(GroundTruth { objects, ..GroundTruth::default() })
}
