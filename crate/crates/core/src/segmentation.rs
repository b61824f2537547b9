//! Envelope point clouds from a depth frame and detection boxes.
//!
//! Per frame, horizontal supporting planes are extracted once by sequential
//! RANSAC. Per detection, the points inside the box are lifted to 3-D, the
//! nearest plane below their centroid is taken as the support, points not
//! clearly above it are dropped, and the Euclidean cluster closest to the
//! back-projected box centre is kept.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector3;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::geometry::{BBox, Camera, Plane};
use crate::linalg::{centroid, covariance, sym_eigen_sorted};
use crate::spatial::KdTree;

/// Maximum number of points used to score RANSAC hypotheses; the winning
/// hypothesis is always re-counted on the full cloud.
const RANSAC_SCORE_SAMPLES: usize = 4000;
const MAX_PLANES: usize = 8;
/// Search radius (px) for a valid anchor pixel around the box centre.
const ANCHOR_SEARCH_PX: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SegmentationError {
    #[error("no valid depth in region")]
    EmptyRegion,
    #[error("no supporting plane below the object")]
    NoSupportingPlane,
    #[error("no points remain above the supporting plane")]
    NothingAbovePlane,
    #[error("no valid anchor pixel near the box centre")]
    NoAnchor,
    #[error("best cluster has {0} points, below the minimum")]
    ClusterTooSmall(usize),
}

/// Row-major 16-bit depth image; zero marks an invalid sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<u16>,
    /// Counts per metre.
    pub depth_scale: f64,
}

impl DepthImage {
    pub const DEFAULT_SCALE: f64 = 5000.0;

    pub fn new(width: u32, height: u32, samples: Vec<u16>, depth_scale: f64) -> Option<Self> {
        if samples.len() != (width as usize) * (height as usize) || !(depth_scale > 0.0) {
            return None;
        }
        Some(Self { width, height, samples, depth_scale })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, samples: vec![0; (width * height) as usize], depth_scale: Self::DEFAULT_SCALE }
    }

    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.samples[(v * self.width + u) as usize]
    }

    /// Depth in metres, `None` for invalid or out-of-range pixels.
    pub fn depth(&self, u: i64, v: i64) -> Option<f64> {
        if u < 0 || v < 0 || u >= self.width as i64 || v >= self.height as i64 {
            return None;
        }
        let raw = self.get(u as u32, v as u32);
        (raw != 0).then(|| raw as f64 / self.depth_scale)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        centroid(&self.points)
    }
}

impl From<Vec<Vector3<f64>>> for PointCloud {
    fn from(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    /// Maximum angle between a plane normal and the up direction (deg).
    pub eps0_deg: f64,
    /// Minimum plane inlier count.
    pub eps1_min_plane_inliers: usize,
    /// Minimum height above the supporting plane (m).
    pub eps2_min_height: f64,
    /// Minimum cluster size.
    pub eps3_min_cluster: usize,
    pub ransac_iters: usize,
    pub ransac_inlier_dist: f64,
    pub cluster_tolerance: f64,
    /// Unit gravity direction in the camera frame.
    pub gravity: Vector3<f64>,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            eps0_deg: 10.0,
            eps1_min_plane_inliers: 200,
            eps2_min_height: 0.05,
            eps3_min_cluster: 100,
            ransac_iters: 200,
            ransac_inlier_dist: 0.01,
            cluster_tolerance: 0.05,
            // level camera, y axis pointing down
            gravity: Vector3::new(0.0, 1.0, 0.0),
        }
    }
}

impl SegmentationParams {
    pub fn is_valid(&self) -> bool {
        self.eps0_deg > 0.0
            && self.eps1_min_plane_inliers > 0
            && self.eps2_min_height > 0.0
            && self.eps3_min_cluster > 0
            && self.ransac_iters > 0
            && self.ransac_inlier_dist > 0.0
            && self.cluster_tolerance > 0.0
            && (self.gravity.norm() - 1.0).abs() < 1e-6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedPlane {
    pub plane: Plane,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedObject {
    pub bbox: BBox,
    pub label: String,
    pub p_det: f64,
    pub cloud: PointCloud,
    pub support_plane: Plane,
}

/// Lifts valid pixels of `region` (or the whole image) to camera-frame points.
pub fn backproject(depth: &DepthImage, cam: &Camera, region: Option<&BBox>) -> Result<PointCloud, SegmentationError> {
    let (u0, v0, u1, v1) = pixel_range(depth, region);
    let mut points = Vec::new();
    for v in v0..=v1 {
        for u in u0..=u1 {
            if let Some(z) = depth.depth(u, v) {
                points.push(cam.backproject(u as f64, v as f64, z));
            }
        }
    }
    if points.is_empty() {
        return Err(SegmentationError::EmptyRegion);
    }
    Ok(PointCloud::new(points))
}

/// Inclusive integer pixel range covered by a box, clamped to the image.
fn pixel_range(depth: &DepthImage, region: Option<&BBox>) -> (i64, i64, i64, i64) {
    let (w, h) = (depth.width as i64 - 1, depth.height as i64 - 1);
    match region {
        None => (0, 0, w, h),
        Some(b) => (
            (b.x_min.ceil() as i64).clamp(0, w),
            (b.y_min.ceil() as i64).clamp(0, h),
            (b.x_max.floor() as i64).clamp(0, w),
            (b.y_max.floor() as i64).clamp(0, h),
        ),
    }
}

fn plane_from_three(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    if n.norm() < 1e-12 {
        return None;
    }
    Plane::through_point(n, a)
}

/// Least-squares plane through a point set.
pub(crate) fn fit_plane(points: &[Vector3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let c = centroid(points);
    let (_, vectors) = sym_eigen_sorted(&covariance(points, &c));
    Plane::through_point(vectors.column(0).into_owned(), &c)
}

/// Orients a plane so that its normal opposes gravity.
fn orient_up(plane: Plane, gravity: &Vector3<f64>) -> Plane {
    if plane.normal.dot(gravity) > 0.0 {
        plane.flipped()
    } else {
        plane
    }
}

/// Sequential RANSAC: fit, remove inliers, repeat until no plane reaches
/// `eps1_min_plane_inliers`.
pub fn extract_planes<R: Rng + ?Sized>(cloud: &PointCloud, params: &SegmentationParams, rng: &mut R) -> Vec<DetectedPlane> {
    let mut remaining: Vec<Vector3<f64>> = cloud.points.clone();
    let mut planes = Vec::new();
    let dist = params.ransac_inlier_dist;
    while remaining.len() >= 3 && planes.len() < MAX_PLANES {
        let sample: Vec<Vector3<f64>> = if remaining.len() > RANSAC_SCORE_SAMPLES {
            (0..RANSAC_SCORE_SAMPLES).map(|_| remaining[rng.random_range(0..remaining.len())]).collect()
        } else {
            remaining.clone()
        };
        let mut best: Option<(Plane, usize)> = None;
        for _ in 0..params.ransac_iters {
            let i = rng.random_range(0..sample.len());
            let j = rng.random_range(0..sample.len());
            let k = rng.random_range(0..sample.len());
            if i == j || j == k || i == k {
                continue;
            }
            let Some(plane) = plane_from_three(&sample[i], &sample[j], &sample[k]) else { continue };
            let score = sample.iter().filter(|p| plane.distance(p).abs() <= dist).count();
            if best.as_ref().is_none_or(|(_, s)| score > *s) {
                best = Some((plane, score));
            }
        }
        let Some((plane, _)) = best else { break };
        let inliers: Vec<Vector3<f64>> = remaining.iter().filter(|p| plane.distance(p).abs() <= dist).copied().collect();
        let refined = fit_plane(&inliers).unwrap_or(plane);
        let (inlier_pts, rest): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) =
            remaining.iter().partition(|p| refined.distance(p).abs() <= dist);
        if inlier_pts.len() < params.eps1_min_plane_inliers {
            break;
        }
        planes.push(DetectedPlane { plane: orient_up(refined, &params.gravity), inliers: inlier_pts.len() });
        remaining = rest;
    }
    planes
}

/// Keeps planes whose normal is within `eps0` of the up direction and whose
/// inlier count exceeds `eps1`.
pub fn filter_support_planes(planes: &[DetectedPlane], params: &SegmentationParams) -> Vec<Plane> {
    let up = -params.gravity.normalize();
    let max_angle = params.eps0_deg.to_radians();
    planes
        .iter()
        .filter(|p| p.inliers > params.eps1_min_plane_inliers)
        .filter(|p| p.plane.normal.dot(&up).clamp(-1.0, 1.0).acos() < max_angle)
        .map(|p| p.plane)
        .collect()
}

/// Closest plane strictly below `center` (positive signed distance).
pub fn select_supporting_plane(planes: &[Plane], center: &Vector3<f64>) -> Result<Plane, SegmentationError> {
    planes
        .iter()
        .map(|p| (p, p.distance(center)))
        .filter(|(_, d)| *d > 0.0)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal))
        .map(|(p, _)| *p)
        .ok_or(SegmentationError::NoSupportingPlane)
}

/// Points strictly more than `min_height` above `plane`.
pub fn filter_above_plane(cloud: &PointCloud, plane: &Plane, min_height: f64) -> PointCloud {
    PointCloud::new(cloud.points.iter().filter(|p| plane.distance(p) > min_height).copied().collect())
}

/// Connected components of the `tolerance`-neighbourhood graph, ordered by
/// their lowest point index.
pub fn euclidean_cluster(cloud: &PointCloud, tolerance: f64) -> Vec<PointCloud> {
    let tree = KdTree::new(&cloud.points);
    let n = cloud.len();
    let mut visited = vec![false; n];
    let mut clusters = Vec::new();
    let mut queue = Vec::new();
    let mut found = Vec::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.clear();
        queue.push(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(i);
            found.clear();
            tree.within_radius(&cloud.points[i], tolerance, &mut found);
            for &j in &found {
                if !visited[j] {
                    visited[j] = true;
                    queue.push(j);
                }
            }
        }
        members.sort_unstable();
        clusters.push(PointCloud::new(members.into_iter().map(|i| cloud.points[i]).collect()));
    }
    clusters
}

/// Cluster whose nearest point to `anchor` is closest; rejected unless it
/// holds more than `min_size` points.
pub fn select_cluster(clusters: &[PointCloud], anchor: &Vector3<f64>, min_size: usize) -> Result<PointCloud, SegmentationError> {
    let best = clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let d = c.points.iter().map(|p| (p - anchor).norm_squared()).fold(f64::INFINITY, f64::min);
            (c, d)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));
    match best {
        None => Err(SegmentationError::NothingAbovePlane),
        Some((c, _)) if c.len() > min_size => Ok(c.clone()),
        Some((c, _)) => Err(SegmentationError::ClusterTooSmall(c.len())),
    }
}

/// Back-projection of the box centre pixel, falling back to the nearest
/// valid pixel within a few pixels.
pub fn anchor_point(depth: &DepthImage, cam: &Camera, bbox: &BBox) -> Option<Vector3<f64>> {
    let (cu, cv) = bbox.center();
    let (u, v) = (cu.round() as i64, cv.round() as i64);
    let mut best: Option<(i64, Vector3<f64>)> = None;
    for dv in -ANCHOR_SEARCH_PX..=ANCHOR_SEARCH_PX {
        for du in -ANCHOR_SEARCH_PX..=ANCHOR_SEARCH_PX {
            let r2 = du * du + dv * dv;
            if r2 > ANCHOR_SEARCH_PX * ANCHOR_SEARCH_PX || best.as_ref().is_some_and(|(b, _)| *b <= r2) {
                continue;
            }
            if let Some(z) = depth.depth(u + du, v + dv) {
                best = Some((r2, cam.backproject((u + du) as f64, (v + dv) as f64, z)));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Supporting-plane candidates of a whole frame.
pub fn frame_support_planes<R: Rng + ?Sized>(
    depth: &DepthImage,
    cam: &Camera,
    params: &SegmentationParams,
    rng: &mut R,
) -> Vec<Plane> {
    match backproject(depth, cam, None) {
        Ok(cloud) => filter_support_planes(&extract_planes(&cloud, params, rng), params),
        Err(_) => Vec::new(),
    }
}

/// Segments one detection given the frame's supporting planes.
pub fn segment_with_planes(
    depth: &DepthImage,
    cam: &Camera,
    bbox: &BBox,
    label: &str,
    p_det: f64,
    planes: &[Plane],
    params: &SegmentationParams,
) -> Result<SegmentedObject, SegmentationError> {
    let region = backproject(depth, cam, Some(bbox))?;
    let support = select_supporting_plane(planes, &region.centroid())?;
    let above = filter_above_plane(&region, &support, params.eps2_min_height);
    if above.is_empty() {
        return Err(SegmentationError::NothingAbovePlane);
    }
    let anchor = anchor_point(depth, cam, bbox).ok_or(SegmentationError::NoAnchor)?;
    let clusters = euclidean_cluster(&above, params.cluster_tolerance);
    let cloud = select_cluster(&clusters, &anchor, params.eps3_min_cluster)?;
    Ok(SegmentedObject { bbox: *bbox, label: label.into(), p_det, cloud, support_plane: support })
}

/// Full segmentation of one detection, including plane extraction.
pub fn segment_object<R: Rng + ?Sized>(
    depth: &DepthImage,
    cam: &Camera,
    bbox: &BBox,
    label: &str,
    p_det: f64,
    params: &SegmentationParams,
    rng: &mut R,
) -> Result<SegmentedObject, SegmentationError> {
    let planes = frame_support_planes(depth, cam, params, rng);
    segment_with_planes(depth, cam, bbox, label, p_det, &planes, params)
}
