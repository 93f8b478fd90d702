//! Track listing as NDJSON, one line per track entry:
//! `{"track":id,"frame":f,"head":[x,y]|null,...,"score":s}`.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::poses::{keypoint, DetectionOut};
use crate::error::{Error, Result};
use crate::model::{Pose, Track};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryIn {
    track: u64,
    frame: u64,
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

pub fn write_tracks(tracks: &[Track]) -> String {
    let mut out = String::new();
    for t in tracks {
        for (frame, pose) in &t.entries {
            let mut v = serde_json::to_value(DetectionOut::from(pose)).expect("serializable");
            let obj = v.as_object_mut().expect("object");
            let mut line = serde_json::Map::new();
            line.insert("track".into(), t.track_id.into());
            line.insert("frame".into(), (*frame).into());
            for key in ["head", "neck", "waist", "abdomen", "score"] {
                line.insert(key.into(), obj.remove(key).unwrap_or_default());
            }
            out.push_str(&serde_json::Value::Object(line).to_string());
            out.push('\n');
        }
    }
    out
}

pub fn parse_tracks(text: &str) -> Result<Vec<Track>> {
    let mut tracks: BTreeMap<u64, Track> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let e: EntryIn = serde_json::from_str(raw).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let pose = Pose {
            head: keypoint(e.head, "head", line)?,
            neck: keypoint(e.neck, "neck", line)?,
            waist: keypoint(e.waist, "waist", line)?,
            abdomen: keypoint(e.abdomen, "abdomen", line)?,
            score: e.score,
        };
        pose.validate().map_err(|err| Error::Parse { line, message: err.to_string() })?;
        let track = tracks.entry(e.track).or_insert_with(|| Track { track_id: e.track, entries: vec![] });
        if track.last_frame().is_some_and(|f| f >= e.frame) {
            return Err(Error::Parse { line, message: format!("track {} entries out of order", e.track) });
        }
        track.entries.push((e.frame, pose));
    }
    Ok(tracks.into_values().collect())
}
