//! Visit event NDJSON. Field order is fixed so output is byte-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VisitEvent;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    #[serde(rename = "type")]
    kind: String,
    flower_id: u32,
    track_id: u64,
    start_frame: u64,
    end_frame: u64,
    n_frames: u64,
}

pub fn event_line(e: &VisitEvent) -> String {
    let line = EventLine {
        kind: "visit".into(),
        flower_id: e.flower_id,
        track_id: e.track_id,
        start_frame: e.start_frame,
        end_frame: e.end_frame,
        n_frames: e.n_frames(),
    };
    serde_json::to_string(&line).expect("event serialization is infallible")
}

pub fn sort_events(events: &mut [VisitEvent]) {
    events.sort_by_key(VisitEvent::sort_key);
}

/// Writes events sorted by start frame, then flower id.
pub fn write_event_stream(events: &[VisitEvent]) -> String {
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    sorted.iter().map(|e| event_line(e) + "\n").collect()
}

pub fn parse_event_stream(text: &str) -> Result<Vec<VisitEvent>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let ev: EventLine = serde_json::from_str(raw).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let bad = |m: &str| Error::Parse { line, message: m.to_string() };
        if ev.kind != "visit" {
            return Err(bad("event type must be \"visit\""));
        }
        if ev.start_frame > ev.end_frame {
            return Err(bad("start_frame after end_frame"));
        }
        if ev.n_frames != ev.end_frame - ev.start_frame + 1 {
            return Err(bad("n_frames inconsistent with frame bounds"));
        }
        out.push(VisitEvent {
            flower_id: ev.flower_id,
            track_id: ev.track_id,
            start_frame: ev.start_frame,
            end_frame: ev.end_frame,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(f: u32, t: u64, s: u64, e: u64) -> VisitEvent {
        VisitEvent { flower_id: f, track_id: t, start_frame: s, end_frame: e }
    }

    #[test]
    fn empty_stream() {
        assert_eq!(write_event_stream(&[]), "");
    }

    #[test]
    fn single_event_line() {
        assert_eq!(
            write_event_stream(&[ev(1, 7, 10, 20)]),
            "{\"type\":\"visit\",\"flower_id\":1,\"track_id\":7,\"start_frame\":10,\"end_frame\":20,\"n_frames\":11}\n"
        );
    }

    #[test]
    fn sorted_on_write() {
        let events = vec![ev(1, 2, 30, 40), ev(1, 1, 5, 9), ev(0, 3, 30, 35)];
        let parsed = parse_event_stream(&write_event_stream(&events)).unwrap();
        let mut oracle = events.clone();
        // Independent ordering: insertion sort on (start, flower).
        for i in 1..oracle.len() {
            let mut j = i;
            while j > 0 && (oracle[j - 1].start_frame, oracle[j - 1].flower_id) > (oracle[j].start_frame, oracle[j].flower_id) {
                oracle.swap(j - 1, j);
                j -= 1;
            }
        }
        assert_eq!(parsed, oracle);
    }

    #[test]
    fn rejects_inconsistent_lines() {
        let bad = "{\"type\":\"visit\",\"flower_id\":1,\"track_id\":7,\"start_frame\":10,\"end_frame\":20,\"n_frames\":3}";
        assert!(matches!(parse_event_stream(bad), Err(Error::Parse { line: 1, .. })));
    }
}
