//! Symmetry-plane estimation and mirror completion of envelope clouds.
//!
//! Man-made objects standing on a support are mirror-symmetric about one
//! vertical plane (chairs, cups) or two perpendicular vertical planes
//! (tables, screens). The plane is initialised from the in-plane principal
//! direction of the cloud, refined by a grid search over rotation about the
//! support normal and offset, and scored by how well the mirrored cloud
//! lands on the original one.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix2, Vector3};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::geometry::Plane;
use crate::linalg::centroid;
use crate::segmentation::PointCloud;
use crate::spatial::KdTree;

const DEDUP_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SymmetryError {
    #[error("cloud is degenerate after projection onto the support plane")]
    DegenerateCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymmetryKind {
    PlaneReflection,
    DualPlaneReflection,
}

impl SymmetryKind {
    pub fn plane_count(self) -> usize {
        match self {
            SymmetryKind::PlaneReflection => 1,
            SymmetryKind::DualPlaneReflection => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SymmetryKind::PlaneReflection => "plane",
            SymmetryKind::DualPlaneReflection => "dual",
        }
    }

    pub fn from_name(s: &str) -> Option<SymmetryKind> {
        match s {
            "plane" => Some(SymmetryKind::PlaneReflection),
            "dual" => Some(SymmetryKind::DualPlaneReflection),
            _ => None,
        }
    }
}

/// Label to symmetry-type table. Lookups are case-insensitive; labels not in
/// the table fall back to a single reflection plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryTable {
    entries: Vec<(String, SymmetryKind)>,
}

impl Default for SymmetryTable {
    fn default() -> Self {
        use SymmetryKind::*;
        let entries = [
            ("chair", PlaneReflection),
            ("laptop", PlaneReflection),
            ("cup", PlaneReflection),
            ("table", DualPlaneReflection),
            ("tv", DualPlaneReflection),
            ("keyboard", DualPlaneReflection),
        ];
        Self { entries: entries.iter().map(|(l, k)| (l.to_string(), *k)).collect() }
    }
}

impl SymmetryTable {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// Adds or replaces an entry.
    pub fn insert(&mut self, label: &str, kind: SymmetryKind) {
        let key = label.to_ascii_lowercase();
        match self.entries.iter_mut().find(|(l, _)| *l == key) {
            Some(entry) => entry.1 = kind,
            None => self.entries.push((key, kind)),
        }
    }

    pub fn get(&self, label: &str) -> Option<SymmetryKind> {
        let key = label.to_ascii_lowercase();
        self.entries.iter().find(|(l, _)| *l == key).map(|(_, k)| *k)
    }

    pub fn entries(&self) -> &[(String, SymmetryKind)] {
        &self.entries
    }

    /// Symmetry prior of a detection label.
    pub fn prior(&self, label: &str) -> SymmetryKind {
        self.get(label).unwrap_or(SymmetryKind::PlaneReflection)
    }
}

/// Symmetry prior from the built-in table.
pub fn symmetry_prior(label: &str) -> SymmetryKind {
    SymmetryTable::default().prior(label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryParams {
    /// Length scale of the score (m).
    pub sigma_sym: f64,
    /// Half-range of the rotation search (deg).
    pub angle_search_deg: f64,
    /// Half-range of the offset search (m).
    pub offset_search: f64,
    pub grid_steps: usize,
    /// Angular tolerance (rad) of the line-of-sight test used while
    /// refining. A mirrored point whose nearest observed viewing ray lies
    /// within this angle and ends in front of it is hidden from the camera
    /// (at the cloud's origin) and is not penalised. Zero scores every
    /// mirrored point.
    pub occlusion_angle: f64,
}

impl Default for SymmetryParams {
    fn default() -> Self {
        Self { sigma_sym: 0.02, angle_search_deg: 15.0, offset_search: 0.05, grid_steps: 11, occlusion_angle: 0.01 }
    }
}

impl SymmetryParams {
    pub fn is_valid(&self) -> bool {
        self.sigma_sym > 0.0 && self.angle_search_deg > 0.0 && self.offset_search > 0.0 && self.grid_steps > 0 && self.occlusion_angle >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryResult {
    pub planes: Vec<Plane>,
    pub p_sym: f64,
    pub completed: PointCloud,
}

/// Orthonormal basis `(e1, e2)` spanning the support plane.
fn support_basis(up: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - up * up.dot(&helper)).normalize();
    let e2 = up.cross(&e1);
    (e1, e2)
}

/// Vertical plane through the cloud centroid whose normal is the main
/// in-support-plane direction of the cloud.
pub fn init_symmetry_plane(cloud: &PointCloud, support: &Plane) -> Result<Plane, SymmetryError> {
    if cloud.len() < 3 {
        return Err(SymmetryError::DegenerateCloud);
    }
    let up = support.normal;
    let (e1, e2) = support_basis(&up);
    let c = centroid(&cloud.points);
    let mut cov = Matrix2::zeros();
    for p in &cloud.points {
        let d = p - c;
        let (a, b) = (d.dot(&e1), d.dot(&e2));
        cov[(0, 0)] += a * a;
        cov[(0, 1)] += a * b;
        cov[(1, 1)] += b * b;
    }
    cov[(1, 0)] = cov[(0, 1)];
    cov /= cloud.len() as f64;
    let eig = cov.symmetric_eigen();
    let (big, small) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let (l_big, l_small) = (eig.eigenvalues[big], eig.eigenvalues[small]);
    if !(l_big > 1e-12) || l_small <= 1e-9 * l_big {
        return Err(SymmetryError::DegenerateCloud);
    }
    let dir = e1 * eig.eigenvectors[(0, big)] + e2 * eig.eigenvectors[(1, big)];
    let normal = (dir - up * up.dot(&dir)).normalize();
    Plane::through_point(normal, &c).ok_or(SymmetryError::DegenerateCloud)
}

fn score_with_tree(tree: &KdTree<'_>, cloud: &[Vector3<f64>], plane: &Plane, sigma: f64) -> f64 {
    if cloud.is_empty() {
        return 1.0;
    }
    let sum: f64 = cloud
        .iter()
        .map(|p| tree.nearest(&plane.reflect_point(p)).map(|(_, d2)| d2).unwrap_or(0.0))
        .sum();
    let mean = sum / cloud.len() as f64;
    (-mean / (2.0 * sigma * sigma)).exp()
}

/// Search structures shared by every candidate plane of one refinement.
struct Scorer<'a> {
    cloud: &'a [Vector3<f64>],
    tree: KdTree<'a>,
    /// Unit viewing directions and ranges of the cloud points; present when
    /// the line-of-sight test is enabled.
    rays: Option<(KdTree<'a>, Vec<f64>, f64)>,
    sigma: f64,
}

impl<'a> Scorer<'a> {
    fn new(cloud: &'a [Vector3<f64>], dirs: &'a [Vector3<f64>], params: &SymmetryParams) -> Self {
        let rays = if params.occlusion_angle > 0.0 && dirs.len() == cloud.len() {
            let ranges = cloud.iter().map(|p| p.norm()).collect();
            let chord = 2.0 * (0.5 * params.occlusion_angle).sin();
            Some((KdTree::new(dirs), ranges, chord))
        } else {
            None
        };
        Self { cloud, tree: KdTree::new(cloud), rays, sigma: params.sigma_sym }
    }

    /// Z-buffer test: the observed ray closest in direction to `q`, if within
    /// the angular tolerance, ends in front of `q`.
    fn hidden(&self, q: &Vector3<f64>) -> bool {
        let (dir_tree, ranges, chord) = match &self.rays {
            Some(r) => r,
            None => return false,
        };
        let range = q.norm();
        if range <= 0.0 {
            return false;
        }
        match dir_tree.nearest(&(q / range)) {
            Some((j, d2)) => d2 <= chord * chord && ranges[j] < range,
            None => false,
        }
    }

    fn score(&self, plane: &Plane) -> f64 {
        if self.cloud.is_empty() {
            return 1.0;
        }
        let sum: f64 = self
            .cloud
            .iter()
            .map(|p| {
                let q = plane.reflect_point(p);
                let d2 = self.tree.nearest(&q).map(|(_, d2)| d2).unwrap_or(0.0);
                if d2 > 0.0 && self.hidden(&q) {
                    0.0
                } else {
                    d2
                }
            })
            .sum();
        let mean = sum / self.cloud.len() as f64;
        (-mean / (2.0 * self.sigma * self.sigma)).exp()
    }
}

fn unit_directions(cloud: &[Vector3<f64>], params: &SymmetryParams) -> Vec<Vector3<f64>> {
    if params.occlusion_angle > 0.0 {
        cloud.iter().map(|p| p.try_normalize(0.0).unwrap_or_else(Vector3::z)).collect()
    } else {
        Vec::new()
    }
}

/// `exp(-mean_i d_i^2 / (2 sigma^2))` with `d_i` the distance from the
/// mirror image of point `i` to its nearest neighbour in the cloud.
pub fn symmetry_score(cloud: &PointCloud, plane: &Plane, params: &SymmetryParams) -> f64 {
    let tree = KdTree::new(&cloud.points);
    score_with_tree(&tree, &cloud.points, plane, params.sigma_sym)
}

/// Symmetry score with the line-of-sight test of
/// [`SymmetryParams::occlusion_angle`]: mirror images hidden behind the
/// observed surface contribute no distance. This is the score
/// [`refine_symmetry`] maximizes; with `occlusion_angle == 0` it equals
/// [`symmetry_score`].
pub fn visibility_aware_score(cloud: &PointCloud, plane: &Plane, params: &SymmetryParams) -> f64 {
    let dirs = unit_directions(&cloud.points, params);
    Scorer::new(&cloud.points, &dirs, params).score(plane)
}

fn grid_values(half_range: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![0.0];
    }
    (0..steps).map(|i| -half_range + 2.0 * half_range * i as f64 / (steps - 1) as f64).collect()
}

/// Plane obtained by rotating `base` about the support normal by `angle`
/// (around `pivot`) and shifting it by `offset` along its normal.
fn perturbed_plane(base: &Plane, up: &Vector3<f64>, pivot: &Vector3<f64>, angle: f64, offset: f64) -> Plane {
    let n0 = base.normal;
    let side = up.cross(&n0);
    let n = (n0 * angle.cos() + side * angle.sin()).normalize();
    let n = (n - up * up.dot(&n)).normalize();
    let point = base.project_point(pivot) + n * offset;
    Plane { normal: n, offset: -n.dot(&point) }
}

/// Best plane over an offset-only search along the plane normal.
fn search_offsets(scorer: &Scorer<'_>, base: &Plane, params: &SymmetryParams) -> (Plane, f64) {
    let mut best = (*base, scorer.score(base));
    for off in grid_values(params.offset_search, params.grid_steps) {
        let cand = Plane { normal: base.normal, offset: base.offset - off };
        let s = scorer.score(&cand);
        if s > best.1 {
            best = (cand, s);
        }
    }
    best
}

/// Grid refinement of an initial plane, maximizing
/// [`visibility_aware_score`]. For dual reflection the second plane
/// is perpendicular to the first through the same vertical axis and gets its
/// own offset search; `p_sym` is then the geometric mean of both scores.
/// The returned `completed` cloud is left empty; see [`complete_cloud`].
pub fn refine_symmetry(
    cloud: &PointCloud,
    init: &Plane,
    support: &Plane,
    kind: SymmetryKind,
    params: &SymmetryParams,
) -> SymmetryResult {
    let up = support.normal;
    let dirs = unit_directions(&cloud.points, params);
    let scorer = Scorer::new(&cloud.points, &dirs, params);
    let pivot = centroid(&cloud.points);
    let mut best = (*init, scorer.score(init));
    for angle in grid_values(params.angle_search_deg.to_radians(), params.grid_steps) {
        for off in grid_values(params.offset_search, params.grid_steps) {
            let cand = perturbed_plane(init, &up, &pivot, angle, off);
            let s = scorer.score(&cand);
            if s > best.1 {
                best = (cand, s);
            }
        }
    }
    let (first, first_score) = best;
    match kind {
        SymmetryKind::PlaneReflection => SymmetryResult { planes: vec![first], p_sym: first_score, completed: PointCloud::default() },
        SymmetryKind::DualPlaneReflection => {
            let axis_point = first.project_point(&pivot);
            let n2 = up.cross(&first.normal).normalize();
            let base = Plane { normal: n2, offset: -n2.dot(&axis_point) };
            let (second, second_score) = search_offsets(&scorer, &base, params);
            SymmetryResult {
                planes: vec![first, second],
                p_sym: (first_score * second_score).sqrt(),
                completed: PointCloud::default(),
            }
        }
    }
}

/// Reflects every point about `plane`.
pub fn mirror_cloud(cloud: &PointCloud, plane: &Plane) -> PointCloud {
    PointCloud::new(cloud.points.iter().map(|p| plane.reflect_point(p)).collect())
}

/// Union of the cloud with its mirror images (and, for two planes, the
/// composed reflection), with near-duplicates removed.
pub fn complete_cloud(cloud: &PointCloud, planes: &[Plane]) -> PointCloud {
    let mut all = cloud.points.clone();
    match planes {
        [] => return cloud.clone(),
        [p] => all.extend(mirror_cloud(cloud, p).points),
        [p1, p2, ..] => {
            let m1 = mirror_cloud(cloud, p1);
            all.extend(m1.points.iter().copied());
            all.extend(mirror_cloud(cloud, p2).points);
            all.extend(mirror_cloud(&m1, p2).points);
        }
    }
    dedup(all, cloud.len())
}

/// Drops points within `DEDUP_RADIUS` of an earlier kept point. The first
/// `keep_prefix` points are kept unconditionally so the original cloud
/// survives intact.
fn dedup(points: Vec<Vector3<f64>>, keep_prefix: usize) -> PointCloud {
    let tree = KdTree::new(&points);
    let mut kept = vec![false; points.len()];
    let mut out = Vec::with_capacity(points.len());
    let mut near = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let duplicate = i >= keep_prefix && {
            near.clear();
            tree.within_radius(p, DEDUP_RADIUS, &mut near);
            near.iter().any(|&j| j < i && kept[j])
        };
        if !duplicate {
            kept[i] = true;
            out.push(*p);
        }
    }
    PointCloud::new(out)
}

/// Prior lookup, initialisation, refinement and completion in one call.
pub fn estimate_symmetry(
    cloud: &PointCloud,
    support: &Plane,
    kind: SymmetryKind,
    params: &SymmetryParams,
) -> Result<SymmetryResult, SymmetryError> {
    let init = init_symmetry_plane(cloud, support)?;
    let mut result = refine_symmetry(cloud, &init, support, kind, params);
    result.completed = complete_cloud(cloud, &result.planes);
    Ok(result)
}
