//! NDJSON pose stream: one frame per line,
//! `{"frame":int,"detections":[{"head":[x,y]|null,...,"score":float}]}`.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameDetections, Point2, Pose};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameIn {
    frame: u64,
    detections: Vec<DetectionIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionIn {
    #[serde(default)]
    head: Option<Vec<f64>>,
    #[serde(default)]
    neck: Option<Vec<f64>>,
    #[serde(default)]
    waist: Option<Vec<f64>>,
    #[serde(default)]
    abdomen: Option<Vec<f64>>,
    score: f64,
}

#[derive(Serialize)]
struct FrameOut {
    frame: u64,
    detections: Vec<DetectionOut>,
}

#[derive(Serialize)]
pub(crate) struct DetectionOut {
    head: Option<[f64; 2]>,
    neck: Option<[f64; 2]>,
    waist: Option<[f64; 2]>,
    abdomen: Option<[f64; 2]>,
    score: f64,
}

impl From<&Pose> for DetectionOut {
    fn from(p: &Pose) -> Self {
        let arr = |q: Option<Point2>| q.map(|q| [q.x, q.y]);
        DetectionOut { head: arr(p.head), neck: arr(p.neck), waist: arr(p.waist), abdomen: arr(p.abdomen), score: p.score }
    }
}

pub(crate) fn keypoint(v: Option<Vec<f64>>, name: &str, line: usize) -> Result<Option<Point2>> {
    match v {
        None => Ok(None),
        Some(v) if v.len() == 2 => Ok(Some(Point2::new(v[0], v[1]))),
        Some(v) => Err(Error::Parse {
            line,
            message: format!("keypoint '{name}' has {} coordinates, expected 2", v.len()),
        }),
    }
}

fn parse_line(text: &str, line: usize) -> Result<FrameDetections> {
    let raw: FrameIn = serde_json::from_str(text).map_err(|e| Error::Parse { line, message: e.to_string() })?;
    let poses = raw
        .detections
        .into_iter()
        .map(|d| {
            let pose = Pose {
                head: keypoint(d.head, "head", line)?,
                neck: keypoint(d.neck, "neck", line)?,
                waist: keypoint(d.waist, "waist", line)?,
                abdomen: keypoint(d.abdomen, "abdomen", line)?,
                score: d.score,
            };
            pose.validate().map_err(|e| Error::Parse { line, message: e.to_string() })?;
            Ok(pose)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameDetections { frame_index: raw.frame, poses })
}

/// Incremental reader that enforces strictly increasing frame indices.
/// Blank lines are skipped.
pub struct PoseStreamReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    last_frame: Option<u64>,
}

impl<R: BufRead> PoseStreamReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line_no: 0, last_frame: None }
    }
}

impl<R: BufRead> Iterator for PoseStreamReader<R> {
    type Item = Result<FrameDetections>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if text.trim().is_empty() {
                continue;
            }
            let frame = match parse_line(&text, self.line_no) {
                Ok(f) => f,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev) = self.last_frame {
                if frame.frame_index <= prev {
                    return Some(Err(Error::Parse {
                        line: self.line_no,
                        message: format!("frame {} does not follow frame {prev}", frame.frame_index),
                    }));
                }
            }
            self.last_frame = Some(frame.frame_index);
            return Some(Ok(frame));
        }
    }
}

pub fn parse_pose_stream(text: &str) -> Result<Vec<FrameDetections>> {
    PoseStreamReader::new(text.as_bytes()).collect()
}

pub fn pose_line(frame: &FrameDetections) -> String {
    let out = FrameOut {
        frame: frame.frame_index,
        detections: frame.poses.iter().map(DetectionOut::from).collect(),
    };
    serde_json::to_string(&out).expect("pose serialization is infallible")
}

pub fn write_pose_stream(frames: &[FrameDetections]) -> String {
    frames.iter().map(|f| pose_line(f) + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_frame() {
        let frames = parse_pose_stream(r#"{"frame":0,"detections":[]}"#).unwrap();
        assert_eq!(frames, vec![FrameDetections { frame_index: 0, poses: vec![] }]);
    }

    #[test]
    fn full_detection() {
        let text = r#"{"frame":3,"detections":[{"head":[1,2],"neck":[3,4],"waist":[5,6.5],"abdomen":[7,8],"score":0.9}]}"#;
        let frames = parse_pose_stream(text).unwrap();
        let p = frames[0].poses[0];
        assert_eq!(p.head, Some(Point2::new(1.0, 2.0)));
        assert_eq!(p.waist, Some(Point2::new(5.0, 6.5)));
        assert_eq!(p.abdomen, Some(Point2::new(7.0, 8.0)));
        assert_eq!(p.score, 0.9);
    }

    #[test]
    fn null_and_missing_keypoints() {
        let text = r#"{"frame":0,"detections":[{"head":null,"waist":[5,6],"score":0.5}]}"#;
        let p = parse_pose_stream(text).unwrap()[0].poses[0];
        assert!(p.head.is_none() && p.neck.is_none());
    }

    #[test]
    fn ordering_violation_reports_line() {
        let text = "{\"frame\":0,\"detections\":[]}\n{\"frame\":2,\"detections\":[]}\n{\"frame\":1,\"detections\":[]}\n";
        assert!(matches!(parse_pose_stream(text), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn bad_keypoint_and_json() {
        let text = r#"{"frame":0,"detections":[{"head":[1,2,3],"score":0.5}]}"#;
        assert!(matches!(parse_pose_stream(text), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_pose_stream("{\"frame\":0,"), Err(Error::Parse { line: 1, .. })));
        let garbage = r#"{"frame":0,"detections":[]} x"#;
        assert!(parse_pose_stream(garbage).is_err());
    }

    #[test]
    fn writer_round_trips() {
        let pose = Pose::new(Some(Point2::new(0.1, 1e-7)), None, Some(Point2::new(123.456789, 9.0)), None, 0.75).unwrap();
        let frames = vec![
            FrameDetections { frame_index: 0, poses: vec![pose] },
            FrameDetections { frame_index: 5, poses: vec![] },
        ];
        let text = write_pose_stream(&frames);
        assert_eq!(parse_pose_stream(&text).unwrap(), frames);
    }
}
