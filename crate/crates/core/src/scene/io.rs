//! Plain-text scene files: stereo rig parameters plus a labelled point cloud.
//!
//! The format is line oriented. The header names the format, the `rig` line
//! carries the camera intrinsics and baseline, and every remaining line is
//! one reconstructed point with its label:
//!
//! ```text
//! SCENE1
//! rig 721.0 609.5 172.8 0.54 1242 375
//! point 1.2 0.8 14.3 ground
//! point -0.4 -0.2 12.9 object
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scene::StereoRig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Ground,
    Object,
    Unlabeled,
}

impl PointLabel {
    pub fn name(self) -> &'static str {
        match self {
            PointLabel::Ground => "ground",
            PointLabel::Object => "object",
            PointLabel::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for PointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PointLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<PointLabel> {
        match s {
            "ground" => Ok(PointLabel::Ground),
            "object" => Ok(PointLabel::Object),
            "unlabeled" => Ok(PointLabel::Unlabeled),
            other => Err(Error::format("scene", format!("unknown label {other:?}"))),
        }
    }
}

/// A reconstructed stereo scene: rig parameters and labelled 3D points in
/// the left-camera frame.
#[derive(Debug, Clone)]
pub struct SceneData {
    pub rig: StereoRig,
    pub points: Vec<(Point3<f64>, PointLabel)>,
}

impl SceneData {
    pub fn labelled(&self, label: PointLabel) -> Vec<Point3<f64>> {
        self.points
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn parse(text: &str) -> Result<SceneData> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some("SCENE1") => {}
            other => {
                return Err(Error::format(
                    "scene",
                    format!("expected SCENE1 header, got {other:?}"),
                ))
            }
        }
        let mut rig = None;
        let mut points = Vec::new();
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("rig") => {
                    let v: Vec<&str> = parts.collect();
                    if v.len() != 6 {
                        return Err(Error::format("scene", "rig line needs 6 fields"));
                    }
                    let num = |s: &str| -> Result<f64> {
                        s.parse()
                            .map_err(|_| Error::format("scene", format!("bad number {s:?}")))
                    };
                    rig = Some(StereoRig {
                        focal_px: num(v[0])?,
                        cx: num(v[1])?,
                        cy: num(v[2])?,
                        baseline_m: num(v[3])?,
                        width: num(v[4])? as u32,
                        height: num(v[5])? as u32,
                    });
                }
                Some("point") => {
                    let v: Vec<&str> = parts.collect();
                    if v.len() != 4 {
                        return Err(Error::format("scene", "point line needs 4 fields"));
                    }
                    let num = |s: &str| -> Result<f64> {
                        s.parse()
                            .map_err(|_| Error::format("scene", format!("bad number {s:?}")))
                    };
                    points.push((
                        Point3::new(num(v[0])?, num(v[1])?, num(v[2])?),
                        v[3].parse()?,
                    ));
                }
                Some(other) => {
                    return Err(Error::format(
                        "scene",
                        format!("unknown record {other:?}"),
                    ))
                }
                None => {}
            }
        }
        let rig = rig.ok_or_else(|| Error::format("scene", "missing rig line"))?;
        Ok(SceneData { rig, points })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::from("SCENE1\n");
        out.push_str(&format!(
            "rig {} {} {} {} {} {}\n",
            self.rig.focal_px,
            self.rig.cx,
            self.rig.cy,
            self.rig.baseline_m,
            self.rig.width,
            self.rig.height
        ));
        for (p, label) in &self.points {
            out.push_str(&format!("point {:.6} {:.6} {:.6} {label}\n", p.x, p.y, p.z));
        }
        out
    }

    pub fn read(path: &Path) -> Result<SceneData> {
        SceneData::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.serialize())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SceneData {
        SceneData {
            rig: StereoRig::street_default(),
            points: vec![
                (Point3::new(1.25, 0.5, 14.0), PointLabel::Ground),
                (Point3::new(-0.5, -0.25, 12.0), PointLabel::Object),
                (Point3::new(0.0, 0.0, 5.0), PointLabel::Unlabeled),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let scene = sample();
        let back = SceneData::parse(&scene.serialize()).unwrap();
        assert_eq!(back.points.len(), scene.points.len());
        for ((p, l), (q, m)) in scene.points.iter().zip(&back.points) {
            assert!((p - q).norm() < 1e-9);
            assert_eq!(l, m);
        }
        assert_eq!(back.rig.width, scene.rig.width);
        assert!((back.rig.focal_px - scene.rig.focal_px).abs() < 1e-12);
    }

    #[test]
    fn labelled_filters() {
        let scene = sample();
        assert_eq!(scene.labelled(PointLabel::Ground).len(), 1);
        assert_eq!(scene.labelled(PointLabel::Object).len(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SceneData::parse("NOPE\n").is_err());
        assert!(SceneData::parse("SCENE1\npoint 1 2 3 ground\n").is_err());
        assert!(SceneData::parse("SCENE1\nrig 721 609.5 172.8 0.54 1242 375\npoint 1 2 ground\n").is_err());
        assert!(
            SceneData::parse("SCENE1\nrig 721 609.5 172.8 0.54 1242 375\npoint 1 2 3 sky\n")
                .is_err()
        );
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "SCENE1\n# a comment\n\nrig 721 609.5 172.8 0.54 1242 375\npoint 0 0 5 object\n";
        let scene = SceneData::parse(text).unwrap();
        assert_eq!(scene.points.len(), 1);
    }
}
