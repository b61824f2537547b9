//! Plain-text dataset formats and 16-bit PGM depth images.
//!
//! Every loader reports the offending line (or byte offset for binary PGM
//! data) and never truncates silently.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use quadric_map_core::{BBox, Camera, DepthImage, Detection, EllipsoidState, Observation, Pose};
use thiserror::Error;

/// Tolerated deviation of a stored quaternion's norm from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1")]
    NonUnitQuaternion { path: PathBuf, line: usize, norm: f64 },
    #[error("{path}:{line}: invalid bounding box (need x_min < x_max and y_min < y_max)")]
    InvalidBBox { path: PathBuf, line: usize },
    #[error("{path}:{line}: semi-axes must be positive")]
    NonPositiveAxis { path: PathBuf, line: usize },
    #[error("{path}: unsupported image format {magic:?} (expected P2 or P5)")]
    UnsupportedFormat { path: PathBuf, magic: String },
    #[error("{path}: truncated image data at byte {offset}: expected {expected} samples, found {found}")]
    TruncatedFile { path: PathBuf, offset: usize, expected: usize, found: usize },
}

fn read(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

pub fn write(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    fs::write(path, contents).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then(|| (i + 1, t.split_whitespace().collect()))
    })
}

struct Fields<'a> {
    path: &'a Path,
    line: usize,
    fields: &'a [&'a str],
}

impl<'a> Fields<'a> {
    fn new(path: &'a Path, line: usize, fields: &'a [&'a str], expected: usize) -> Result<Self, FormatError> {
        if fields.len() != expected {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        Ok(Self { path, line, fields })
    }

    fn err(&self, message: String) -> FormatError {
        FormatError::Parse { path: self.path.to_path_buf(), line: self.line, message }
    }

    fn f64(&self, i: usize) -> Result<f64, FormatError> {
        let v: f64 = self.fields[i].parse().map_err(|_| self.err(format!("field {}: {:?} is not a number", i + 1, self.fields[i])))?;
        if !v.is_finite() {
            return Err(self.err(format!("field {}: value must be finite", i + 1)));
        }
        Ok(v)
    }

    fn u32(&self, i: usize) -> Result<u32, FormatError> {
        self.fields[i].parse().map_err(|_| self.err(format!("field {}: {:?} is not a non-negative integer", i + 1, self.fields[i])))
    }

    fn vec3(&self, i: usize) -> Result<Vector3<f64>, FormatError> {
        Ok(Vector3::new(self.f64(i)?, self.f64(i + 1)?, self.f64(i + 2)?))
    }

    fn probability(&self, i: usize) -> Result<f64, FormatError> {
        let p = self.f64(i)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(self.err(format!("field {}: probability {p} outside [0, 1]", i + 1)));
        }
        Ok(p)
    }

    fn bbox(&self, i: usize) -> Result<BBox, FormatError> {
        let b = BBox::new(self.f64(i)?, self.f64(i + 1)?, self.f64(i + 2)?, self.f64(i + 3)?);
        if !b.is_valid() {
            return Err(FormatError::InvalidBBox { path: self.path.to_path_buf(), line: self.line });
        }
        Ok(b)
    }

    fn ellipsoid(&self, i: usize) -> Result<EllipsoidState, FormatError> {
        let e = EllipsoidState::new(self.vec3(i)?, self.vec3(i + 3)?, self.vec3(i + 6)?);
        if e.axes.iter().any(|s| *s <= 0.0) {
            return Err(FormatError::NonPositiveAxis { path: self.path.to_path_buf(), line: self.line });
        }
        Ok(e)
    }
}

// ---------------------------------------------------------------- trajectory

/// One `timestamp tx ty tz qx qy qz qw` record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// TUM trajectory: camera-in-world poses, quaternions renormalized on load.
pub fn load_trajectory(path: &Path) -> Result<Vec<StampedPose>, FormatError> {
    parse_trajectory(path, &read(path)?)
}

pub fn parse_trajectory(path: &Path, text: &str) -> Result<Vec<StampedPose>, FormatError> {
    records(text)
        .map(|(line, fields)| {
            let f = Fields::new(path, line, &fields, 8)?;
            let q = Quaternion::new(f.f64(7)?, f.f64(4)?, f.f64(5)?, f.f64(6)?);
            let norm = q.norm();
            if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
                return Err(FormatError::NonUnitQuaternion { path: path.to_path_buf(), line, norm });
            }
            Ok(StampedPose { timestamp: f.f64(0)?, pose: Pose::new(f.vec3(1)?, UnitQuaternion::from_quaternion(q)) })
        })
        .collect()
}

pub fn format_trajectory(poses: &[StampedPose]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.pose.translation;
        let q = p.pose.rotation.quaternion();
        writeln!(out, "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}", p.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w).unwrap();
    }
    out
}

/// Poses stamped with their frame index.
pub fn indexed(poses: &[Pose]) -> Vec<StampedPose> {
    poses.iter().enumerate().map(|(i, p)| StampedPose { timestamp: i as f64, pose: *p }).collect()
}

// ---------------------------------------------------------------- detections

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, FormatError> {
    parse_detections(path, &read(path)?)
}

pub fn parse_detections(path: &Path, text: &str) -> Result<Vec<Detection>, FormatError> {
    records(text)
        .map(|(line, fields)| {
            let f = Fields::new(path, line, &fields, 8)?;
            Ok(Detection {
                frame_id: f.u32(0)?,
                object_id: f.u32(1)?,
                label: fields[2].to_string(),
                bbox: f.bbox(3)?,
                p_det: f.probability(7)?,
            })
        })
        .collect()
}

pub fn format_detections(detections: &[Detection]) -> String {
    let mut out = String::from("# frame_id object_id label x_min y_min x_max y_max p_det\n");
    for d in detections {
        let b = d.bbox;
        writeln!(out, "{} {} {} {:.9} {:.9} {:.9} {:.9} {:.9}", d.frame_id, d.object_id, d.label, b.x_min, b.y_min, b.x_max, b.y_max, d.p_det)
            .unwrap();
    }
    out
}

// ---------------------------------------------------------------- objects

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub object_id: u32,
    pub label: String,
    pub ellipsoid: EllipsoidState,
}

pub fn load_objects(path: &Path) -> Result<Vec<ObjectRecord>, FormatError> {
    parse_objects(path, &read(path)?)
}

pub fn parse_objects(path: &Path, text: &str) -> Result<Vec<ObjectRecord>, FormatError> {
    records(text)
        .map(|(line, fields)| {
            let f = Fields::new(path, line, &fields, 11)?;
            Ok(ObjectRecord { object_id: f.u32(0)?, label: fields[1].to_string(), ellipsoid: f.ellipsoid(2)? })
        })
        .collect()
}

fn push_ellipsoid(out: &mut String, e: &EllipsoidState) {
    for v in e.center.iter().chain(e.rpy.iter()).chain(e.axes.iter()) {
        write!(out, " {v:.9}").unwrap();
    }
}

pub fn format_objects(objects: &[ObjectRecord]) -> String {
    let mut out = String::from("# object_id label x y z roll pitch yaw s1 s2 s3\n");
    for o in objects {
        write!(out, "{} {}", o.object_id, o.label).unwrap();
        push_ellipsoid(&mut out, &o.ellipsoid);
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- observations

/// Single-frame estimates; the ellipsoid is in the camera frame.
pub fn load_observations(path: &Path) -> Result<Vec<Observation>, FormatError> {
    parse_observations(path, &read(path)?)
}

pub fn parse_observations(path: &Path, text: &str) -> Result<Vec<Observation>, FormatError> {
    records(text)
        .map(|(line, fields)| {
            let f = Fields::new(path, line, &fields, 20)?;
            Ok(Observation {
                frame_id: f.u32(0)?,
                object_id: f.u32(1)?,
                label: fields[2].to_string(),
                bbox: f.bbox(3)?,
                p_det: f.probability(7)?,
                p_sym: f.probability(8)?,
                p_fit: f.probability(9)?,
                p_e: f.probability(10)?,
                ellipsoid: f.ellipsoid(11)?,
            })
        })
        .collect()
}

pub fn format_observations(observations: &[Observation]) -> String {
    let mut out = String::from(
        "# frame_id object_id label x_min y_min x_max y_max p_det p_sym p_fit p_e x y z roll pitch yaw s1 s2 s3 (camera frame)\n",
    );
    for o in observations {
        let b = o.bbox;
        write!(
            out,
            "{} {} {} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            o.frame_id, o.object_id, o.label, b.x_min, b.y_min, b.x_max, b.y_max, o.p_det, o.p_sym, o.p_fit, o.p_e
        )
        .unwrap();
        push_ellipsoid(&mut out, &o.ellipsoid);
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------- camera

/// `fx fy cx cy width height` on one line.
pub fn load_camera(path: &Path) -> Result<Camera, FormatError> {
    parse_camera(path, &read(path)?)
}

pub fn parse_camera(path: &Path, text: &str) -> Result<Camera, FormatError> {
    let mut recs = records(text);
    let (line, fields) = recs.next().ok_or_else(|| FormatError::Parse { path: path.to_path_buf(), line: 1, message: "no camera record".into() })?;
    let f = Fields::new(path, line, &fields, 6)?;
    let cam = Camera::new(f.f64(0)?, f.f64(1)?, f.f64(2)?, f.f64(3)?, f.u32(4)?, f.u32(5)?);
    if !cam.is_valid() {
        return Err(f.err("focal lengths and image size must be positive".into()));
    }
    if let Some((line, _)) = recs.next() {
        return Err(FormatError::Parse { path: path.to_path_buf(), line, message: "unexpected extra record".into() });
    }
    Ok(cam)
}

pub fn format_camera(cam: &Camera) -> String {
    format!("# fx fy cx cy width height\n{:.9} {:.9} {:.9} {:.9} {} {}\n", cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
}

// ---------------------------------------------------------------- depth

/// Reads a 16-bit (or 8-bit) P2/P5 PGM; `scale` is counts per metre.
pub fn load_depth(path: &Path, scale: f64) -> Result<DepthImage, FormatError> {
    let bytes = fs::read(path).map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    parse_depth(path, &bytes, scale)
}

/// Whitespace/comment-separated header token starting at `*pos`.
fn header_token<'b>(bytes: &'b [u8], pos: &mut usize) -> Option<&'b [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn line_of(bytes: &[u8], pos: usize) -> usize {
    1 + bytes[..pos.min(bytes.len())].iter().filter(|&&b| b == b'\n').count()
}

pub fn parse_depth(path: &Path, bytes: &[u8], scale: f64) -> Result<DepthImage, FormatError> {
    let parse_err = |pos: usize, message: String| FormatError::Parse { path: path.to_path_buf(), line: line_of(bytes, pos), message };
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos).unwrap_or_default();
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => return Err(FormatError::UnsupportedFormat { path: path.to_path_buf(), magic: String::from_utf8_lossy(other).into_owned() }),
    };
    let mut header = [0u32; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let at = pos;
        let tok = header_token(bytes, &mut pos).ok_or_else(|| parse_err(at, format!("missing {name}")))?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|v| *v > 0)
            .ok_or_else(|| parse_err(at, format!("invalid {name} {:?}", String::from_utf8_lossy(tok))))?;
    }
    let [width, height, maxval] = header;
    if maxval > u16::MAX as u32 {
        return Err(parse_err(pos, format!("maxval {maxval} exceeds 65535")));
    }
    if !(scale > 0.0) {
        return Err(parse_err(0, "depth scale must be positive".into()));
    }
    let expected = width as usize * height as usize;
    let mut samples = Vec::with_capacity(expected);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let width_bytes = if maxval > 255 { 2 } else { 1 };
        let data = bytes.get(pos..).unwrap_or_default();
        let found = data.len() / width_bytes;
        if found < expected {
            return Err(FormatError::TruncatedFile { path: path.to_path_buf(), offset: bytes.len(), expected, found });
        }
        for k in 0..expected {
            let v = if width_bytes == 2 { u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) } else { data[k] as u16 };
            if v as u32 > maxval {
                return Err(parse_err(pos + k * width_bytes, format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v);
        }
        if data.len() > expected * width_bytes {
            return Err(parse_err(pos + expected * width_bytes, "trailing bytes after raster".into()));
        }
    } else {
        while samples.len() < expected {
            let at = pos;
            let tok = match header_token(bytes, &mut pos) {
                Some(t) => t,
                None => return Err(FormatError::TruncatedFile { path: path.to_path_buf(), offset: at, expected, found: samples.len() }),
            };
            let v: u32 = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(at, format!("invalid sample {:?}", String::from_utf8_lossy(tok))))?;
            if v > maxval {
                return Err(parse_err(at, format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as u16);
        }
        let at = pos;
        if header_token(bytes, &mut pos).is_some() {
            return Err(parse_err(at, "more samples than declared".into()));
        }
    }
    Ok(DepthImage::new(width, height, samples, scale).expect("sample count matches header"))
}

/// Binary 16-bit PGM (P5, big-endian samples, maxval 65535).
pub fn format_depth(depth: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.samples.len() * 2);
    for s in &depth.samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn trajectory_identity_record() {
        let t = parse_trajectory(p(), "0.0 2.0 0.0 1.0 0.0 0.0 0.0 1.0\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].pose.translation, Vector3::new(2.0, 0.0, 1.0));
        assert!(t[0].pose.rotation.angle() < 1e-15);
    }

    #[test]
    fn trajectory_comments_only() {
        assert!(parse_trajectory(p(), "# header\n\n# more\n").unwrap().is_empty());
    }

    #[test]
    fn trajectory_short_line() {
        let e = parse_trajectory(p(), "# c\n0.0 2.0 0.0 1.0 0.0 0.0 0.0\n").unwrap_err();
        assert!(matches!(e, FormatError::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn trajectory_quaternion_tolerance() {
        let t = parse_trajectory(p(), "0 0 0 0 0 0 0 1.0005\n").unwrap();
        assert!((t[0].pose.rotation.quaternion().norm() - 1.0).abs() < 1e-15);
        assert!(matches!(parse_trajectory(p(), "0 0 0 0 0 0 0 1.01\n"), Err(FormatError::NonUnitQuaternion { .. })));
    }

    #[test]
    fn detection_record() {
        let d = parse_detections(p(), "12 3 tv 100.5 200.0 300.5 400.0 0.97\n").unwrap();
        assert_eq!(d[0].frame_id, 12);
        assert_eq!(d[0].object_id, 3);
        assert_eq!(d[0].label, "tv");
        assert_eq!(d[0].bbox, BBox::new(100.5, 200.0, 300.5, 400.0));
        assert_eq!(d[0].p_det, 0.97);
    }

    #[test]
    fn detection_errors() {
        assert!(matches!(parse_detections(p(), "1 1 tv 300 0 100 10 0.9"), Err(FormatError::InvalidBBox { line: 1, .. })));
        assert!(matches!(parse_detections(p(), "1 1 tv 0 0 100 10 1.2"), Err(FormatError::Parse { line: 1, .. })));
    }

    #[test]
    fn object_record_and_errors() {
        let o = parse_objects(p(), "0 tv 1.0 2.0 0.5 0 0 1.5707963 0.6 0.05 0.4\n").unwrap();
        assert!(o[0].ellipsoid.is_valid());
        assert!(matches!(parse_objects(p(), "0 tv 1 2 0.5 0 0 0 0.6 0 0.4"), Err(FormatError::NonPositiveAxis { .. })));
    }

    #[test]
    fn depth_ascii() {
        let d = parse_depth(p(), b"P2\n# c\n2 2\n65535\n5000 5000\n5000 5000\n", 5000.0).unwrap();
        assert!((0..2).all(|v| (0..2).all(|u| d.depth(u, v) == Some(1.0))));
    }

    #[test]
    fn depth_rejects_color_and_truncation() {
        assert!(matches!(parse_depth(p(), b"P6\n2 2\n255\n", 5000.0), Err(FormatError::UnsupportedFormat { .. })));
        assert!(matches!(
            parse_depth(p(), b"P2\n2 2\n65535\n1 2 3\n", 5000.0),
            Err(FormatError::TruncatedFile { expected: 4, found: 3, .. })
        ));
        assert!(matches!(parse_depth(p(), b"P5\n2 2\n65535\n\x00\x01\x00\x02", 5000.0), Err(FormatError::TruncatedFile { .. })));
    }

    #[test]
    fn depth_binary_roundtrip() {
        let d = DepthImage::new(3, 2, vec![0, 1, 255, 256, 40000, 65535], 5000.0).unwrap();
        assert_eq!(parse_depth(p(), &format_depth(&d), 5000.0).unwrap(), d);
    }
}
