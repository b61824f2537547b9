//! Graph construction from per-frame detections and single-frame estimates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix3;

use super::init::{initialize_landmark_2d, initialize_landmark_3d, InitError, MIN_BOX_VIEWS};
use super::{BoxFactor, EllipsoidFactor, FactorGraph, GraphConfig, Landmark, Mode, OdometryFactor};
use crate::fitting::{Detection, Observation};
use crate::geometry::{nearest_frame, BBox, Camera, EllipsoidState, Pose};

/// Everything the back end consumes. `poses[i]` is the camera-in-world pose
/// of frame `i`; `odometry[j]`, when given, is the measured motion from
/// frame `j` to `j + 1` (otherwise it is taken from consecutive poses).
#[derive(Debug, Clone, Copy)]
pub struct SlamInput<'a> {
    pub camera: Camera,
    pub poses: &'a [Pose],
    pub odometry: Option<&'a [Pose]>,
    pub detections: &'a [Detection],
    pub observations: &'a [Observation],
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitFailure {
    pub object_id: u32,
    pub label: String,
    pub error: InitError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildLog {
    pub init_failures: Vec<InitFailure>,
    /// Detections or observations referring to frames without a pose.
    pub dropped: usize,
}

#[derive(Default)]
struct ObjectTrack<'a> {
    label: String,
    frames: Vec<u32>,
    detections: Vec<&'a Detection>,
    observations: Vec<&'a Observation>,
}

/// Builds the graph for `config.mode`. With `max_observations = Some(k)` each
/// object only keeps the first `k` frames in which it was seen.
///
/// Landmarks are initialized from the first usable single-frame ellipsoid
/// (`DwB`, `DepthOnly`) or from the linear box solution, growing the view set
/// one frame at a time until it yields an ellipsoid (`TwoDOnly`, and `DwB`
/// when no ellipsoid is available). Objects that cannot be initialized are
/// reported in the log and left out.
pub fn build_graph(input: &SlamInput<'_>, config: &GraphConfig, max_observations: Option<usize>) -> (FactorGraph, BuildLog) {
    let mut graph = FactorGraph::new(input.camera, input.poses.to_vec());
    let mut log = BuildLog::default();
    let n = input.poses.len();

    for j in 0..n.saturating_sub(1) {
        let motion = match input.odometry.and_then(|o| o.get(j)) {
            Some(u) => *u,
            None => input.poses[j].inverse().compose(&input.poses[j + 1]),
        };
        graph.odometry.push(OdometryFactor { from: j, to: j + 1, motion });
    }

    let mut tracks: BTreeMap<u32, ObjectTrack<'_>> = BTreeMap::new();
    for d in input.detections {
        if d.frame_id as usize >= n {
            log.dropped += 1;
            continue;
        }
        let t = tracks.entry(d.object_id).or_default();
        if t.label.is_empty() {
            t.label = d.label.clone();
        }
        t.frames.push(d.frame_id);
        t.detections.push(d);
    }
    for o in input.observations {
        if o.frame_id as usize >= n {
            log.dropped += 1;
            continue;
        }
        let t = tracks.entry(o.object_id).or_default();
        if t.label.is_empty() {
            t.label = o.label.clone();
        }
        t.frames.push(o.frame_id);
        t.observations.push(o);
    }

    for (&object_id, track) in tracks.iter_mut() {
        track.frames.sort_unstable();
        track.frames.dedup();
        if let Some(k) = max_observations {
            track.frames.truncate(k);
        }
        let last = match track.frames.last() {
            Some(f) => *f,
            None => continue,
        };
        track.detections.retain(|d| d.frame_id <= last);
        track.detections.sort_by_key(|d| d.frame_id);
        track.observations.retain(|o| o.frame_id <= last);
        track.observations.sort_by_key(|o| o.frame_id);

        let init = initialize_track(track, input, config.mode);
        let state = match init {
            Ok(s) => s,
            Err(error) => {
                log.init_failures.push(InitFailure { object_id, label: track.label.clone(), error });
                continue;
            }
        };
        // Start from the frame nearest the world axes so that Euler angles
        // stay away from gimbal lock for upright objects.
        let (rot, axes) = nearest_frame(&state.rotation(), &state.axes, &Matrix3::identity());
        let landmark = graph.landmarks.len();
        graph.landmarks.push(Landmark {
            object_id,
            label: track.label.clone(),
            state: EllipsoidState::from_rotation(state.center, &rot, axes),
        });
        if config.mode.uses_boxes() {
            for d in &track.detections {
                graph.box_factors.push(BoxFactor { pose: d.frame_id as usize, landmark, bbox: d.bbox, p_det: d.p_det });
            }
        }
        if config.mode.uses_ellipsoids() {
            for o in &track.observations {
                graph.ellipsoid_factors.push(EllipsoidFactor {
                    pose: o.frame_id as usize,
                    landmark,
                    ellipsoid: o.ellipsoid,
                    p_e: o.p_e,
                });
            }
        }
    }
    (graph, log)
}

fn initialize_track(track: &ObjectTrack<'_>, input: &SlamInput<'_>, mode: Mode) -> Result<EllipsoidState, InitError> {
    let mut last_err = InitError::InsufficientViews { got: 0, need: 1 };
    if mode.uses_ellipsoids() {
        for o in &track.observations {
            match initialize_landmark_3d(&o.ellipsoid, &input.poses[o.frame_id as usize]) {
                Ok(s) => return Ok(s),
                Err(e) => last_err = e,
            }
        }
        if mode == Mode::DepthOnly {
            return Err(last_err);
        }
    }
    let views: Vec<(Pose, BBox)> = track.detections.iter().map(|d| (input.poses[d.frame_id as usize], d.bbox)).collect();
    if views.len() < MIN_BOX_VIEWS {
        return Err(InitError::InsufficientViews { got: views.len(), need: MIN_BOX_VIEWS });
    }
    for m in MIN_BOX_VIEWS..=views.len() {
        match initialize_landmark_2d(&views[..m], &input.camera) {
            Ok(s) => return Ok(s),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use nalgebra::{UnitQuaternion, Vector3};

    fn poses(n: usize) -> Vec<Pose> {
        (0..n).map(|i| Pose::new(Vector3::new(0.1 * i as f64, 0.0, 0.0), UnitQuaternion::identity())).collect()
    }

    fn observation(frame: u32, object: u32) -> Observation {
        Observation {
            frame_id: frame,
            object_id: object,
            label: "cup".to_string(),
            bbox: BBox::new(10.0, 10.0, 40.0, 40.0),
            p_det: 0.99,
            ellipsoid: EllipsoidState::new(Vector3::new(0.0, 0.0, 2.0), Vector3::zeros(), Vector3::new(0.2, 0.1, 0.1)),
            p_sym: 0.8,
            p_fit: 0.3,
            p_e: 0.24,
        }
    }

    fn detection(frame: u32, object: u32) -> Detection {
        Detection { frame_id: frame, object_id: object, label: "cup".to_string(), bbox: BBox::new(10.0, 10.0, 40.0, 40.0), p_det: 0.99 }
    }

    #[test]
    fn depth_only_graph_shape() {
        let p = poses(4);
        let obs: Vec<Observation> = (0..4).map(|f| observation(f, 7)).collect();
        let input = SlamInput {
            camera: Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480),
            poses: &p,
            odometry: None,
            detections: &[],
            observations: &obs,
        };
        let (g, log) = build_graph(&input, &GraphConfig::default().with_mode(Mode::DepthOnly), None);
        assert!(log.init_failures.is_empty());
        assert_eq!(g.odometry.len(), 3);
        assert_eq!(g.landmarks.len(), 1);
        assert_eq!(g.ellipsoid_factors.len(), 4);
        assert!(g.box_factors.is_empty());
        assert!(g.is_consistent());
        let (g2, _) = build_graph(&input, &GraphConfig::default().with_mode(Mode::DepthOnly), Some(2));
        assert_eq!(g2.ellipsoid_factors.len(), 2);
    }

    #[test]
    fn two_d_with_too_few_views_fails() {
        let p = poses(4);
        let dets: Vec<Detection> = (0..2).map(|f| detection(f, 3)).collect();
        let input = SlamInput {
            camera: Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480),
            poses: &p,
            odometry: None,
            detections: &dets,
            observations: &[],
        };
        let (g, log) = build_graph(&input, &GraphConfig::default().with_mode(Mode::TwoDOnly), None);
        assert!(g.landmarks.is_empty());
        assert_eq!(log.init_failures.len(), 1);
        assert_eq!(log.init_failures[0].error, InitError::InsufficientViews { got: 2, need: 3 });
    }

    #[test]
    fn frames_beyond_trajectory_are_dropped() {
        let p = poses(2);
        let obs = [observation(0, 1), observation(5, 1)];
        let input = SlamInput {
            camera: Camera::new(500.0, 500.0, 320.0, 240.0, 640, 480),
            poses: &p,
            odometry: None,
            detections: &[],
            observations: &obs,
        };
        let (g, log) = build_graph(&input, &GraphConfig::default(), None);
        assert_eq!(log.dropped, 1);
        assert_eq!(g.ellipsoid_factors.len(), 1);
    }
}
