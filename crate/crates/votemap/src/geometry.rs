//! Pinhole camera model, SE(3) poses and reprojection-error triangulation.
//!
//! Conventions used throughout the crate:
//!
//! * A [`Pose`] stores the camera-to-world rotation `R` (unit quaternion) and
//!   the camera center `c` in world coordinates. A world point `l` maps into
//!   the camera frame as `x_c = Rᵀ (l − c)`; the optical axis in world
//!   coordinates is `R · (0, 0, 1)`.
//! * Pixel coordinates follow the usual image convention: `u` to the right,
//!   `v` downward, so `u = fx · x/z + cx` and `v = fy · y/z + cy`.
//!
//! All functions here are pure: identical inputs produce bit-identical
//! outputs, so they are safe to call from any number of threads.

use nalgebra::{Matrix2x3, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum camera-frame depth for a point to count as "in front of" a camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Rays closer to parallel than this (in radians) cannot be intersected.
pub const PARALLEL_RAY_EPSILON: f64 = 1e-8;

/// Camera centers closer than this (meters) give a degenerate baseline.
pub const MIN_BASELINE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("back-projected rays are parallel or the baseline is degenerate")]
    DegenerateRays,
    #[error("point coincides with a camera center")]
    DegeneratePoint,
    #[error("need at least 2 observations, got {got}")]
    InsufficientObservations { got: usize },
    #[error("objective or step became non-finite during refinement")]
    NonFinite,
}

/// Pinhole intrinsics (no distortion): focal lengths and principal point in
/// pixels plus the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, width, height }
    }

    /// Field validity per the type invariants; ingest rejects rows where this
    /// fails.
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0
    }

    /// True when a pixel position lies inside the image bounds.
    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= 0.0 && p.u < f64::from(self.width) && p.v >= 0.0 && p.v < f64::from(self.height)
    }
}

/// A continuous pixel position. Not required to be inside image bounds:
/// reprojections of 3D points may legitimately fall outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// A 3D point in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: Vector3<f64>) -> Self {
        Self { x: v.x, y: v.y, z: v.z }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.coords() - other.coords()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Camera-to-world rotation plus the camera center in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    center: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, center: WorldPoint) -> Self {
        Self { rotation, center: center.coords() }
    }

    /// Builds a pose from raw `[w, x, y, z]` quaternion components and a
    /// center, normalizing the quaternion. Returns the deviation of the input
    /// norm from 1 so callers can enforce their own tolerance.
    pub fn from_raw(q_wxyz: [f64; 4], center: [f64; 3]) -> (Self, f64) {
        let q = nalgebra::Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        let norm_err = (q.norm() - 1.0).abs();
        let pose = Self {
            rotation: UnitQuaternion::from_quaternion(q),
            center: Vector3::new(center[0], center[1], center[2]),
        };
        (pose, norm_err)
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), center: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn center(&self) -> WorldPoint {
        WorldPoint::from_coords(self.center)
    }

    /// World point into the camera frame: `Rᵀ (l − c)`.
    pub fn world_to_camera(&self, l: &WorldPoint) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(l.coords() - self.center))
    }

    /// The viewing direction of the camera in world coordinates, `R · ẑ`.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.transform_vector(&Vector3::z())
    }
}

/// A calibrated camera: pose plus intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl Camera {
    pub fn new(pose: Pose, intrinsics: CameraIntrinsics) -> Self {
        Self { pose, intrinsics }
    }

    pub fn project(&self, l: &WorldPoint) -> Result<PixelPoint, GeometryError> {
        project(l, &self.pose, &self.intrinsics)
    }

    /// Camera-frame depth of a world point.
    pub fn depth_of(&self, l: &WorldPoint) -> f64 {
        self.pose.world_to_camera(l).z
    }

    /// Distance from the camera center to a world point.
    pub fn distance_to(&self, l: &WorldPoint) -> f64 {
        self.pose.center().distance(l)
    }

    /// World-frame unit direction of the ray through a pixel.
    pub fn ray_direction(&self, p: &PixelPoint) -> Vector3<f64> {
        let d = Vector3::new(
            (p.u - self.intrinsics.cx) / self.intrinsics.fx,
            (p.v - self.intrinsics.cy) / self.intrinsics.fy,
            1.0,
        );
        self.pose.rotation.transform_vector(&d).normalize()
    }
}

/// A posed, calibrated image record: the unit everything downstream operates
/// on. `pass_id` tags which traversal of the area produced the image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub id: String,
    pub pass_id: String,
    pub camera: Camera,
}

/// Projects a world point into a camera, `(fx·x/z + cx, fy·y/z + cy)` with
/// `(x, y, z) = Rᵀ (l − c)`. Fails when the depth is at or below
/// [`DEPTH_EPSILON`].
pub fn project(
    l: &WorldPoint,
    pose: &Pose,
    q: &CameraIntrinsics,
) -> Result<PixelPoint, GeometryError> {
    let pc = pose.world_to_camera(l);
    if pc.z <= DEPTH_EPSILON {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    Ok(PixelPoint::new(q.fx * pc.x / pc.z + q.cx, q.fy * pc.y / pc.z + q.cy))
}

/// Jacobian of the projection with respect to the world point,
/// `∂(u, v)/∂l = [[fx/z, 0, −fx·x/z²], [0, fy/z, −fy·y/z²]] · Rᵀ`.
///
/// Returns `None` when the point is at or behind the depth epsilon.
pub fn projection_jacobian(
    l: &WorldPoint,
    pose: &Pose,
    q: &CameraIntrinsics,
) -> Option<Matrix2x3<f64>> {
    let pc = pose.world_to_camera(l);
    if pc.z <= DEPTH_EPSILON {
        return None;
    }
    let z_inv = 1.0 / pc.z;
    let z_inv_sq = z_inv * z_inv;
    let d_pix_d_cam = Matrix2x3::new(
        q.fx * z_inv,
        0.0,
        -q.fx * pc.x * z_inv_sq,
        0.0,
        q.fy * z_inv,
        -q.fy * pc.y * z_inv_sq,
    );
    let r_t: Matrix3<f64> = pose.rotation.inverse().to_rotation_matrix().into_inner();
    Some(d_pix_d_cam * r_t)
}

/// One pixel observation of a 3D point by a camera.
pub type Observation<'a> = (PixelPoint, &'a Camera);

/// Triangulates a point from two views: closest-point-of-rays midpoint
/// initialization followed by [`refine_multiview`] on the two observations.
///
/// The returned point has positive depth in both cameras.
pub fn triangulate_two_view(
    z_a: &PixelPoint,
    cam_a: &Camera,
    z_b: &PixelPoint,
    cam_b: &Camera,
) -> Result<WorldPoint, GeometryError> {
    let c1 = cam_a.pose.center().coords();
    let c2 = cam_b.pose.center().coords();
    if (c1 - c2).norm() < MIN_BASELINE {
        return Err(GeometryError::DegenerateRays);
    }

    let d1 = cam_a.ray_direction(z_a);
    let d2 = cam_b.ray_direction(z_b);
    // sin of the ray angle; parallel and anti-parallel rays are both degenerate.
    if d1.cross(&d2).norm() < PARALLEL_RAY_EPSILON {
        return Err(GeometryError::DegenerateRays);
    }

    // Closest points of the two rays (unit directions): midpoint of the
    // common perpendicular segment.
    let w0 = c1 - c2;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = 1.0 - b * b;
    let t1 = (b * e - d) / denom;
    let t2 = (e - b * d) / denom;
    let midpoint = WorldPoint::from_coords(0.5 * ((c1 + t1 * d1) + (c2 + t2 * d2)));

    let obs = [(*z_a, cam_a), (*z_b, cam_b)];
    let (point, _rms) = refine_multiview(&midpoint, &obs)?;

    for cam in [cam_a, cam_b] {
        let depth = cam.depth_of(&point);
        if depth <= DEPTH_EPSILON {
            return Err(GeometryError::BehindCamera { depth });
        }
    }
    Ok(point)
}

/// Refines a 3D point by damped Gauss-Newton descent on the summed squared
/// reprojection error, starting from `l0`.
///
/// Damping starts at 1e-3, is divided by 10 on a successful (decreasing)
/// step and multiplied by 10 on an increase. Terminates when the step norm
/// drops below 1e-9 m, the objective decrease drops below 1e-12, or after
/// 100 iterations. Observations whose depth is non-positive at the current
/// iterate contribute no residual for that iteration.
///
/// Returns the refined point and the root-mean-square reprojection error in
/// pixels over the observations active at the solution. The objective at the
/// result never exceeds the objective at `l0`.
pub fn refine_multiview(
    l0: &WorldPoint,
    obs: &[Observation<'_>],
) -> Result<(WorldPoint, f64), GeometryError> {
    const MAX_ITERATIONS: usize = 100;
    const STEP_TOLERANCE: f64 = 1e-9;
    const DECREASE_TOLERANCE: f64 = 1e-12;
    const MAX_DAMPING: f64 = 1e12;

    if obs.len() < 2 {
        return Err(GeometryError::InsufficientObservations { got: obs.len() });
    }

    // Objective and active-observation count at a candidate point.
    let objective = |x: &WorldPoint| -> (f64, usize) {
        let mut sum = 0.0;
        let mut active = 0;
        for (z, cam) in obs {
            if let Ok(p) = cam.project(x) {
                let du = p.u - z.u;
                let dv = p.v - z.v;
                sum += du * du + dv * dv;
                active += 1;
            }
        }
        (sum, active)
    };

    let mut x = *l0;
    let (mut f, mut n_active) = objective(&x);
    if !f.is_finite() {
        return Err(GeometryError::NonFinite);
    }

    let mut damping = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if n_active < 2 {
            break;
        }

        // Normal equations over the active observations.
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (z, cam) in obs {
            let (proj, jac) = match (cam.project(&x), projection_jacobian(&x, &cam.pose, &cam.intrinsics)) {
                (Ok(p), Some(j)) => (p, j),
                _ => continue,
            };
            let r = Vector3::from([proj.u - z.u, proj.v - z.v, 0.0]).xy();
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * r;
        }

        let mut stepped = false;
        while damping <= MAX_DAMPING {
            let lhs = jtj + Matrix3::identity() * damping;
            let Some(delta) = lhs.lu().solve(&(-jtr)) else {
                damping *= 10.0;
                continue;
            };
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
            if delta.norm() < STEP_TOLERANCE {
                // Converged: no meaningful step remains at this damping.
                return Ok((x, rms_from(f, n_active)));
            }
            let candidate = WorldPoint::from_coords(x.coords() + delta);
            let (f_new, active_new) = objective(&candidate);
            if !f_new.is_finite() {
                return Err(GeometryError::NonFinite);
            }
            if f_new < f {
                let decrease = f - f_new;
                x = candidate;
                f = f_new;
                n_active = active_new;
                damping = (damping / 10.0).max(1e-12);
                stepped = true;
                if decrease < DECREASE_TOLERANCE {
                    return Ok((x, rms_from(f, n_active)));
                }
                break;
            }
            damping *= 10.0;
        }
        if !stepped {
            break;
        }
    }

    Ok((x, rms_from(f, n_active)))
}

fn rms_from(sum_sq: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (sum_sq / n as f64).sqrt()
    }
}

/// Angle in `[0, π]` between the viewing rays from two camera centers to a
/// world point. Fails when the point coincides with either center.
pub fn ray_angle(l: &WorldPoint, p_a: &Pose, p_b: &Pose) -> Result<f64, GeometryError> {
    let va = l.coords() - p_a.center().coords();
    let vb = l.coords() - p_b.center().coords();
    if va.norm() <= MIN_BASELINE || vb.norm() <= MIN_BASELINE {
        return Err(GeometryError::DegeneratePoint);
    }
    Ok(angle_between(&va, &vb))
}

/// Angle in `[0, π]` between the optical axes of two poses.
pub fn optical_axis_angle(p_a: &Pose, p_b: &Pose) -> f64 {
    angle_between(&p_a.optical_axis(), &p_b.optical_axis())
}

/// atan2 of cross and dot: stable near 0 and π, unlike acos of the dot.
fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let an = a.normalize();
    let bn = b.normalize();
    an.cross(&bn).norm().atan2(an.dot(&bn))
}
