//! Spatial scale-out: overlapping ball clusters of images solved
//! independently, and duplicate-object merging across cluster boundaries.
//!
//! Cluster membership is seeded greedily over camera centers: the first
//! unconsumed view (in id order) anchors a cluster holding every view within
//! `n_max` of it, and views within `assign_radius` of the seed are consumed.
//! Clusters overlap on purpose: any two views within `assign_radius` of each
//! other always share at least one cluster, so objects near a boundary are
//! triangulable somewhere, and the duplicates the overlap creates are
//! exactly what the merge step removes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Camera, CameraView, PixelPoint, WorldPoint};
use crate::voting::{Detection, ObjectEstimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("cannot cluster an empty view set")]
    EmptyInput,
}

/// Clustering and merging thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Cluster ball radius in meters.
    pub n_max: f64,
    /// Seed-consumption radius in meters; seeds are spaced at least this far
    /// apart, and views closer than this to each other share a cluster.
    pub assign_radius: f64,
    /// Objects closer than this (meters) are considered the same and merged.
    pub merge_dist: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { n_max: 50.0, assign_radius: 25.0, merge_dist: 1.0 }
    }
}

impl ClusterConfig {
    pub fn with_n_max(n_max: f64) -> Self {
        Self { n_max, assign_radius: n_max / 2.0, ..Self::default() }
    }

    pub fn is_valid(&self) -> bool {
        self.assign_radius > 0.0 && self.assign_radius <= self.n_max && self.merge_dist > 0.0
    }
}

/// One spatial cluster of views, anchored at the seed view's camera center.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub seed_center: WorldPoint,
    /// Member view ids, ascending.
    pub image_ids: Vec<String>,
}

/// Greedy overlapping ball cover over camera centers. Every view lands in at
/// least one cluster; every member lies within `n_max` of its seed; output
/// depends only on the set of views, not their ordering.
pub fn cluster_images(
    views: &[CameraView],
    cfg: &ClusterConfig,
) -> Result<Vec<Cluster>, ClusterError> {
    if views.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| views[a].id.cmp(&views[b].id));

    let center = |i: usize| views[i].camera.pose.center();
    let mut consumed = vec![false; views.len()];
    let mut clusters = Vec::new();
    for &seed in &order {
        if consumed[seed] {
            continue;
        }
        let seed_center = center(seed);
        let mut image_ids = Vec::new();
        for &v in &order {
            let dist = seed_center.distance(&center(v));
            if dist <= cfg.n_max {
                image_ids.push(views[v].id.clone());
            }
            if dist <= cfg.assign_radius {
                consumed[v] = true;
            }
        }
        clusters.push(Cluster {
            id: format!("c{:04}", clusters.len()),
            seed_center,
            image_ids,
        });
    }
    Ok(clusters)
}

/// Counters from one merge pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeStats {
    /// Input objects merged away (inputs minus surviving components).
    pub objects_merged: usize,
    /// Output pairs still closer than `merge_dist` after refinement moved
    /// the merged positions. Zero in healthy scenes.
    pub post_refine_close_pairs: usize,
    /// Detections that supported more than one surviving object and were
    /// reassigned to the best one.
    pub support_conflicts: usize,
}

/// Merges duplicate objects found by different clusters.
///
/// Connected components of the "closer than `merge_dist`" graph collapse
/// into one object each: the union of their supports (deduplicated) is
/// re-refined from the support-count-weighted centroid. Output ids are
/// reassigned in position order.
pub fn merge_objects(
    objects: &[ObjectEstimate],
    all_detections: &[Detection],
    views: &[CameraView],
    cfg: &ClusterConfig,
) -> Vec<ObjectEstimate> {
    merge_objects_with_stats(objects, all_detections, views, cfg).0
}

pub fn merge_objects_with_stats(
    objects: &[ObjectEstimate],
    all_detections: &[Detection],
    views: &[CameraView],
    cfg: &ClusterConfig,
) -> (Vec<ObjectEstimate>, MergeStats) {
    let mut stats = MergeStats::default();
    if objects.is_empty() {
        return (Vec::new(), stats);
    }

    let mut uf = UnionFind::new(objects.len());
    for i in 0..objects.len() {
        for j in (i + 1)..objects.len() {
            if objects[i].position.distance(&objects[j].position) < cfg.merge_dist {
                uf.union(i, j);
            }
        }
    }

    let mut components: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..objects.len() {
        components.entry(uf.find(i)).or_default().push(i);
    }
    stats.objects_merged = objects.len() - components.len();

    let det_by_id: std::collections::BTreeMap<&str, &Detection> =
        all_detections.iter().map(|d| (d.id.as_str(), d)).collect();
    let view_by_id: std::collections::BTreeMap<&str, &CameraView> =
        views.iter().map(|v| (v.id.as_str(), v)).collect();

    let mut merged: Vec<ObjectEstimate> = Vec::new();
    for members in components.values() {
        if members.len() == 1 {
            merged.push(objects[members[0]].clone());
            continue;
        }
        // Support-count-weighted centroid seeds the refinement.
        let mut weight_sum = 0.0;
        let mut centroid = nalgebra::Vector3::zeros();
        for &m in members {
            let w = objects[m].support.len() as f64;
            weight_sum += w;
            centroid += objects[m].position.coords() * w;
        }
        let centroid = WorldPoint::from_coords(centroid / weight_sum);

        let mut support: Vec<String> = members
            .iter()
            .flat_map(|&m| objects[m].support.iter().cloned())
            .collect();
        support.sort();
        support.dedup();
        sort_support(&mut support, &det_by_id);

        let mut cluster_ids: Vec<String> = members
            .iter()
            .flat_map(|&m| objects[m].cluster_ids.iter().cloned())
            .collect();
        cluster_ids.sort();
        cluster_ids.dedup();

        let obs: Vec<(PixelPoint, &Camera)> = support
            .iter()
            .map(|id| {
                let d = det_by_id[id.as_str()];
                (d.center, &view_by_id[d.image_id.as_str()].camera)
            })
            .collect();
        let (position, rms_px) = match geometry::refine_multiview(&centroid, &obs) {
            Ok(r) => r,
            Err(_) => (centroid, f64::MAX),
        };
        merged.push(ObjectEstimate { id: String::new(), position, support, rms_px, cluster_ids });
    }

    resolve_support_conflicts(&mut merged, &det_by_id, &view_by_id, &mut stats);

    merged.sort_by(|a, b| {
        (a.position.x, a.position.y, a.position.z)
            .partial_cmp(&(b.position.x, b.position.y, b.position.z))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (i, o) in merged.iter_mut().enumerate() {
        o.id = format!("o{i:05}");
    }

    for i in 0..merged.len() {
        for j in (i + 1)..merged.len() {
            if merged[i].position.distance(&merged[j].position) < cfg.merge_dist {
                stats.post_refine_close_pairs += 1;
            }
        }
    }
    (merged, stats)
}

/// Support lists stay ordered by (image id, detection id).
fn sort_support(
    support: &mut [String],
    det_by_id: &std::collections::BTreeMap<&str, &Detection>,
) {
    support.sort_by(|a, b| {
        let da = det_by_id[a.as_str()];
        let db = det_by_id[b.as_str()];
        (da.image_id.as_str(), da.id.as_str()).cmp(&(db.image_id.as_str(), db.id.as_str()))
    });
}

/// A detection may end up supporting two surviving objects when overlapping
/// clusters associated it differently. Each such detection stays with the
/// object that reprojects it best; objects left with fewer than two supports
/// are dropped.
fn resolve_support_conflicts(
    merged: &mut Vec<ObjectEstimate>,
    det_by_id: &std::collections::BTreeMap<&str, &Detection>,
    view_by_id: &std::collections::BTreeMap<&str, &CameraView>,
    stats: &mut MergeStats,
) {
    use std::collections::BTreeMap;
    let mut owners: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in merged.iter().enumerate() {
        for s in &o.support {
            owners.entry(s.as_str()).or_default().push(i);
        }
    }
    let mut evict: Vec<(usize, String)> = Vec::new();
    for (det_id, objs) in owners {
        if objs.len() < 2 {
            continue;
        }
        stats.support_conflicts += 1;
        let d = det_by_id[det_id];
        let cam = &view_by_id[d.image_id.as_str()].camera;
        let reproj = |o: &ObjectEstimate| {
            cam.project(&o.position).map(|p| p.distance(&d.center)).unwrap_or(f64::MAX)
        };
        let keep = *objs
            .iter()
            .min_by(|&&a, &&b| {
                reproj(&merged[a])
                    .partial_cmp(&reproj(&merged[b]))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            })
            .unwrap();
        for &o in &objs {
            if o != keep {
                evict.push((o, det_id.to_string()));
            }
        }
    }
    if evict.is_empty() {
        return;
    }
    let touched: std::collections::BTreeSet<usize> = evict.iter().map(|(o, _)| *o).collect();
    for (o, det_id) in evict {
        merged[o].support.retain(|s| *s != det_id);
    }
    // Recompute the rms of touched objects over their remaining support.
    for &i in &touched {
        let o = &mut merged[i];
        let distinct_images: std::collections::BTreeSet<&str> =
            o.support.iter().map(|s| det_by_id[s.as_str()].image_id.as_str()).collect();
        if distinct_images.len() < 2 {
            o.support.clear();
            continue;
        }
        let mut sum_sq = 0.0;
        for s in &o.support {
            let d = det_by_id[s.as_str()];
            let cam = &view_by_id[d.image_id.as_str()].camera;
            let err = cam.project(&o.position).map(|p| p.distance(&d.center)).unwrap_or(f64::MAX);
            sum_sq += err * err;
        }
        o.rms_px = (sum_sq / o.support.len() as f64).sqrt();
    }
    merged.retain(|o| !o.support.is_empty());
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Root at the smaller index keeps component ids stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
