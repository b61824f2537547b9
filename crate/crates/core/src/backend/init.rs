//! Landmark initialization from one single-frame ellipsoid or from several
//! bounding boxes.

use nalgebra::{DMatrix, Matrix4};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;
use thiserror::Error;

use crate::geometry::{BBox, Camera, DualQuadric, EllipsoidState, GeometryError, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InitError {
    #[error("need at least {need} views, got {got}")]
    InsufficientViews { got: usize, need: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const MIN_BOX_VIEWS: usize = 3;

/// Moves a camera-frame ellipsoid into the world through its dual quadric.
pub fn initialize_landmark_3d(observed: &EllipsoidState, pose: &Pose) -> Result<EllipsoidState, InitError> {
    Ok(observed.to_dual().transform(pose).decompose()?)
}

/// Linear dual-quadric estimate from the back-projected planes of the box
/// edges. Each edge line `l` of view `P` gives a plane `pi = P^T l` tangent
/// to the quadric, i.e. one linear equation `pi^T Q* pi = 0` in the ten
/// entries of `Q*`. The solution is the right null vector of the stacked,
/// row-normalised system.
pub fn initialize_landmark_2d(views: &[(Pose, BBox)], cam: &Camera) -> Result<EllipsoidState, InitError> {
    if views.len() < MIN_BOX_VIEWS {
        return Err(InitError::InsufficientViews { got: views.len(), need: MIN_BOX_VIEWS });
    }
    let mut a = DMatrix::<f64>::zeros(4 * views.len(), 10);
    let mut row = 0;
    for (pose, bbox) in views {
        let p = cam.projection(pose);
        for line in bbox.edge_lines().iter() {
            let pi = p.transpose() * line;
            let coeffs = [
                pi[0] * pi[0],
                2.0 * pi[0] * pi[1],
                2.0 * pi[0] * pi[2],
                2.0 * pi[0] * pi[3],
                pi[1] * pi[1],
                2.0 * pi[1] * pi[2],
                2.0 * pi[1] * pi[3],
                pi[2] * pi[2],
                2.0 * pi[2] * pi[3],
                pi[3] * pi[3],
            ];
            let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (k, c) in coeffs.iter().enumerate() {
                    a[(row, k)] = c / norm;
                }
            }
            row += 1;
        }
    }
    // The null vector of A is the eigenvector of A^T A with the smallest
    // eigenvalue; the 10x10 normal matrix keeps this cheap.
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let q = eig.eigenvectors.column(k);
    let dual = Matrix4::new(
        q[0], q[1], q[2], q[3], //
        q[1], q[4], q[5], q[6], //
        q[2], q[5], q[7], q[8], //
        q[3], q[6], q[8], q[9],
    );
    let state = DualQuadric(dual).decompose()?;
    for (pose, _) in views {
        if !(pose.inverse().transform_point(&state.center).z > 0.0) {
            return Err(GeometryError::BehindCamera.into());
        }
    }
    Ok(state)
}
