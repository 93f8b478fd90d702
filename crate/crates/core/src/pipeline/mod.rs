//! Streaming tracking, visit detection and event export over bounded
//! queues, with per-stage latency statistics.

mod sink;
mod stats;

pub use sink::*;
pub use stats::*;

use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::formats::sort_events;
use crate::model::{Flower, FrameDetections, Pose, VisitEvent};
use crate::tracking::{assigned_poses, run_tracker, TrackerParams, TrackerState};
use crate::visits::{detect_visits, VisitParams, VisitStream};

pub const STAGES: [&str; 4] = ["source", "track", "visit", "export"];
pub const THREADS_ENV: &str = "PATCHPIPE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueMode {
    /// Producer waits for space.
    Block,
    /// Frames that find the first queue full are discarded.
    Drop,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub queue_capacity: usize,
    /// Replay rate; `None` replays as fast as possible.
    pub fps: Option<f64>,
    pub mode: QueueMode,
    /// Stage threads; `None` reads `PATCHPIPE_THREADS`, defaulting to one per stage.
    pub threads: Option<usize>,
    pub tracker: TrackerParams,
    pub visit: VisitParams,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { queue_capacity: 64, fps: None, mode: QueueMode::Block, threads: None, tracker: TrackerParams::default(), visit: VisitParams::default() }
    }
}

/// Stage thread count from `PATCHPIPE_THREADS`, clamped to `1..=4`.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(STAGES.len()),
        Ok(s) => {
            let n: usize = s.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{s}'")))?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
            }
            Ok(n.min(STAGES.len()))
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub error: Error,
    pub partial: PipelineReport,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} frames)", self.error, self.partial.frames)
    }
}

impl std::error::Error for PipelineError {}

impl From<PipelineError> for Error {
    fn from(e: PipelineError) -> Self {
        e.error
    }
}

enum Payload {
    Detections(FrameDetections),
    Poses(Vec<(u64, Pose)>),
    Events(Vec<VisitEvent>),
    Done,
}

struct Msg {
    /// `None` marks end-of-stream flushes.
    frame: Option<u64>,
    emitted: Instant,
    payload: Payload,
}

#[derive(Default)]
struct Timing {
    samples_ms: Vec<f64>,
    busy_s: f64,
    stalls: u64,
}

impl Timing {
    fn record(&mut self, started: Instant, frame: bool) {
        let dt = started.elapsed().as_secs_f64();
        self.busy_s += dt;
        if frame {
            self.samples_ms.push(dt * 1e3);
        }
    }
}

enum Stage<'a> {
    Track(TrackerState),
    Visit(VisitStream),
    Export { sink: &'a mut dyn EventSink, events: u64, latencies_ms: Vec<f64> },
}

impl Stage<'_> {
    fn process(&mut self, msg: Msg) -> Result<Msg> {
        let Msg { frame, emitted, payload } = msg;
        let payload = match (self, payload) {
            (Stage::Track(state), Payload::Detections(d)) => {
                let a = state.step(&d)?;
                Payload::Poses(assigned_poses(&d, &a))
            }
            (Stage::Visit(vs), Payload::Poses(p)) => Payload::Events(vs.push_frame(frame.expect("frames carry an index"), &p)),
            (Stage::Export { sink, events, latencies_ms }, Payload::Events(evs)) => {
                for e in &evs {
                    sink.write_event(e)?;
                }
                *events += evs.len() as u64;
                if frame.is_some() {
                    latencies_ms.push(emitted.elapsed().as_secs_f64() * 1e3);
                }
                Payload::Done
            }
            _ => unreachable!("stage received a message of the wrong kind"),
        };
        Ok(Msg { frame, emitted, payload })
    }

    fn finish(&mut self) -> Result<Option<Msg>> {
        match self {
            Stage::Track(_) => Ok(None),
            Stage::Visit(vs) => Ok(Some(Msg { frame: None, emitted: Instant::now(), payload: Payload::Events(vs.finish()) })),
            Stage::Export { sink, .. } => sink.finish().map(|_| None),
        }
    }
}

type Source<'s> = Box<dyn Iterator<Item = Result<FrameDetections>> + Send + 's>;

enum Input<'s> {
    Source { frames: Source<'s>, fps: Option<f64> },
    Queue(Receiver<Msg>),
}

struct GroupResult {
    /// Indexed like `STAGES`; only this group's slots are filled.
    timings: Vec<Option<Timing>>,
    frames: u64,
    dropped: u64,
    export: Option<(u64, Vec<f64>)>,
    error: Option<Error>,
}

/// Runs a contiguous run of stages on one thread: `first` is the index in
/// `STAGES` of the group's first stage.
fn run_group(first: usize, input: Input<'_>, mut stages: Vec<Stage<'_>>, out: Option<SyncSender<Msg>>, mode: QueueMode) -> GroupResult {
    let mut timings: Vec<Option<Timing>> = (0..STAGES.len()).map(|_| None).collect();
    let n_own = stages.len() + matches!(input, Input::Source { .. }) as usize;
    for t in timings.iter_mut().skip(first).take(n_own) {
        *t = Some(Timing::default());
    }
    let stage_base = first + matches!(input, Input::Source { .. }) as usize;
    let last_slot = first + n_own - 1;
    let mut res = GroupResult { timings: Vec::new(), frames: 0, dropped: 0, export: None, error: None };

    // Pushes a message through stages `from..` and forwards it downstream.
    // Returns false once downstream has gone away.
    let cascade = |stages: &mut Vec<Stage<'_>>, timings: &mut Vec<Option<Timing>>, from: usize, mut msg: Msg, droppable: bool, dropped: &mut u64| -> Result<bool> {
        for (i, st) in stages.iter_mut().enumerate().skip(from) {
            let t0 = Instant::now();
            let is_frame = msg.frame.is_some();
            msg = st.process(msg)?;
            timings[stage_base + i].as_mut().unwrap().record(t0, is_frame);
        }
        let Some(tx) = &out else { return Ok(true) };
        match tx.try_send(msg) {
            Ok(()) => Ok(true),
            Err(TrySendError::Disconnected(_)) => Ok(false),
            Err(TrySendError::Full(m)) => {
                timings[last_slot].as_mut().unwrap().stalls += 1;
                if droppable && mode == QueueMode::Drop {
                    *dropped += 1;
                    return Ok(true);
                }
                Ok(tx.send(m).is_ok())
            }
        }
    };

    let outcome: Result<()> = (|| {
        match input {
            Input::Source { frames, fps } => {
                let start = Instant::now();
                let mut first_frame = None;
                for item in frames {
                    let t0 = Instant::now();
                    let d = item?;
                    if let Some(fps) = fps {
                        let base = *first_frame.get_or_insert(d.frame_index);
                        let deadline = start + Duration::from_secs_f64((d.frame_index - base) as f64 / fps);
                        let now = Instant::now();
                        if deadline > now {
                            std::thread::sleep(deadline - now);
                        }
                    }
                    let emitted = Instant::now();
                    timings[first].as_mut().unwrap().record(t0, true);
                    res.frames += 1;
                    let msg = Msg { frame: Some(d.frame_index), emitted, payload: Payload::Detections(d) };
                    if !cascade(&mut stages, &mut timings, 0, msg, true, &mut res.dropped)? {
                        return Ok(());
                    }
                }
            }
            Input::Queue(rx) => {
                for msg in rx {
                    if msg.frame.is_some() {
                        res.frames += 1;
                    }
                    if !cascade(&mut stages, &mut timings, 0, msg, false, &mut res.dropped)? {
                        return Ok(());
                    }
                }
            }
        }
        for i in 0..stages.len() {
            if let Some(m) = stages[i].finish()? {
                if !cascade(&mut stages, &mut timings, i + 1, m, false, &mut res.dropped)? {
                    return Ok(());
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        res.error = Some(e);
    }
    for st in stages {
        if let Stage::Export { events, latencies_ms, .. } = st {
            res.export = Some((events, latencies_ms));
        }
    }
    res.timings = timings;
    res
}

/// Splits the four stages into `groups` contiguous runs, as evenly as
/// possible. Returns the first stage index of each run.
fn group_starts(groups: usize) -> Vec<usize> {
    let n = STAGES.len();
    let g = groups.clamp(1, n);
    (0..g).map(|i| i * n / g).collect()
}

/// Runs source, tracker, visit detector and exporter connected by bounded
/// queues of `queue_capacity`. Events reach the sink in the same order as
/// the batch path.
pub fn run_pipeline<'s>(
    frames: impl Iterator<Item = Result<FrameDetections>> + Send + 's,
    flowers: &[Flower],
    sink: &mut dyn EventSink,
    opts: &PipelineOptions,
) -> std::result::Result<PipelineReport, PipelineError> {
    let fail = |error: Error| PipelineError { error, partial: empty_report() };
    if opts.queue_capacity == 0 {
        return Err(fail(Error::Config("queue capacity must be at least 1".into())));
    }
    if let Some(f) = opts.fps {
        if !(f > 0.0 && f.is_finite()) {
            return Err(fail(Error::Config(format!("fps must be positive, got {f}"))));
        }
    }
    let threads = match opts.threads {
        Some(t) if t >= 1 => t.min(STAGES.len()),
        Some(_) => return Err(fail(Error::Config("threads must be at least 1".into()))),
        None => threads_from_env().map_err(fail)?,
    };
    let starts = group_starts(threads);
    let wall = Instant::now();

    let mut all_stages: Vec<Option<Stage<'_>>> = vec![
        Some(Stage::Track(TrackerState::new(opts.tracker))),
        Some(Stage::Visit(VisitStream::new(flowers.to_vec(), opts.visit))),
        Some(Stage::Export { sink, events: 0, latencies_ms: Vec::new() }),
    ];
    let mut source: Option<Source<'s>> = Some(Box::new(frames));

    let results: Vec<GroupResult> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut rx_prev: Option<Receiver<Msg>> = None;
        for (gi, &s0) in starts.iter().enumerate() {
            let s1 = starts.get(gi + 1).copied().unwrap_or(STAGES.len());
            let input = match rx_prev.take() {
                None => Input::Source { frames: source.take().unwrap(), fps: opts.fps },
                Some(rx) => Input::Queue(rx),
            };
            let stages: Vec<Stage<'_>> = (s0.max(1)..s1).map(|i| all_stages[i - 1].take().unwrap()).collect();
            let out = if s1 < STAGES.len() {
                let (tx, rx) = sync_channel(opts.queue_capacity);
                rx_prev = Some(rx);
                Some(tx)
            } else {
                None
            };
            let mode = opts.mode;
            handles.push(scope.spawn(move || run_group(s0, input, stages, out, mode)));
        }
        handles.into_iter().map(|h| h.join().expect("pipeline stage panicked")).collect()
    });

    let wall_s = wall.elapsed().as_secs_f64();
    let mut timings: Vec<Option<Timing>> = (0..STAGES.len()).map(|_| None).collect();
    let mut error = None;
    let (mut frames, mut dropped, mut events, mut e2e) = (0, 0, 0, Vec::new());
    for (gi, r) in results.into_iter().enumerate() {
        for (slot, t) in timings.iter_mut().zip(r.timings) {
            if t.is_some() {
                *slot = t;
            }
        }
        if gi == 0 {
            frames = r.frames;
            dropped = r.dropped;
        }
        if let Some((n, lat)) = r.export {
            events = n;
            e2e = lat;
        }
        if error.is_none() {
            error = r.error;
        }
    }
    let stages = STAGES
        .iter()
        .zip(timings)
        .map(|(name, t)| {
            let t = t.unwrap_or_default();
            StageStats::from_samples(name, &t.samples_ms, t.busy_s, t.stalls)
        })
        .collect();
    let report = PipelineReport {
        stages,
        end_to_end: StageStats::from_samples(END_TO_END, &e2e, wall_s, 0),
        frames,
        events,
        dropped,
        wall_s,
    };
    match error {
        Some(error) => Err(PipelineError { error, partial: report }),
        None => Ok(report),
    }
}

fn empty_report() -> PipelineReport {
    PipelineReport {
        stages: STAGES.iter().map(|s| StageStats::empty(s)).collect(),
        end_to_end: StageStats::empty(END_TO_END),
        frames: 0,
        events: 0,
        dropped: 0,
        wall_s: 0.0,
    }
}

/// The batch path: track everything, then detect visits.
pub fn offline_events(frames: &[FrameDetections], flowers: &[Flower], tracker: TrackerParams, visit: &VisitParams) -> Result<Vec<VisitEvent>> {
    let tracks = run_tracker(frames.iter(), tracker)?;
    let mut events = detect_visits(&tracks, flowers, visit);
    sort_events(&mut events);
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::write_event_stream;
    use crate::synth::{generate_world, WorldConfig};

    fn world_stream(seed: u64) -> (Vec<FrameDetections>, Vec<Flower>) {
        let cfg = WorldConfig { seed, visits: 12, ..WorldConfig::default() };
        let w = generate_world(&cfg).unwrap();
        (w.pose_stream(), w.flowers.clone())
    }

    fn replay(frames: &[FrameDetections], flowers: &[Flower], cap: usize, threads: usize) -> (String, PipelineReport) {
        let mut sink = MemorySink::new();
        let view = sink.clone();
        let opts = PipelineOptions { queue_capacity: cap, threads: Some(threads), ..Default::default() };
        let rep = run_pipeline(frames.iter().cloned().map(Ok), flowers, &mut sink, &opts).unwrap();
        (view.text(), rep)
    }

    #[test]
    fn empty_source() {
        let (text, rep) = replay(&[], &[], 4, 4);
        assert!(text.is_empty());
        assert_eq!(rep.frames, 0);
        assert_eq!(rep.events, 0);
        assert_eq!(rep.end_to_end.frames, 0);
        assert_eq!(bench(&rep.end_to_end, 20.0).verdict, Verdict::Indeterminate);
    }

    #[test]
    fn online_equals_offline_for_any_capacity_and_threads() {
        let (frames, flowers) = world_stream(4);
        let offline = write_event_stream(&offline_events(&frames, &flowers, TrackerParams::default(), &VisitParams::default()).unwrap());
        assert!(offline.lines().count() >= 12);
        for cap in [1, 4, 64] {
            for threads in 1..=4 {
                let (text, rep) = replay(&frames, &flowers, cap, threads);
                assert_eq!(text, offline, "capacity {cap} threads {threads}");
                assert_eq!(rep.frames, frames.len() as u64);
                assert_eq!(rep.events as usize, offline.lines().count());
                for s in &rep.stages {
                    assert!(s.p50_ms <= s.p95_ms && s.p95_ms <= s.max_ms);
                }
            }
        }
    }

    #[test]
    fn group_partition() {
        assert_eq!(group_starts(1), vec![0]);
        assert_eq!(group_starts(2), vec![0, 2]);
        assert_eq!(group_starts(3), vec![0, 1, 2]);
        assert_eq!(group_starts(4), vec![0, 1, 2, 3]);
        assert_eq!(group_starts(9), vec![0, 1, 2, 3]);
    }

    struct FailingSink {
        after: usize,
    }

    impl EventSink for FailingSink {
        fn write_event(&mut self, _: &VisitEvent) -> Result<()> {
            if self.after == 0 {
                return Err(Error::Sink("broken pipe".into()));
            }
            self.after -= 1;
            Ok(())
        }
        fn describe(&self) -> String {
            "failing".into()
        }
    }

    #[test]
    fn sink_failure_stops_with_partial_stats() {
        let (frames, flowers) = world_stream(5);
        for threads in [1, 4] {
            let mut sink = FailingSink { after: 2 };
            let opts = PipelineOptions { queue_capacity: 2, threads: Some(threads), ..Default::default() };
            let err = run_pipeline(frames.iter().cloned().map(Ok), &flowers, &mut sink, &opts).unwrap_err();
            assert!(matches!(err.error, Error::Sink(_)));
            assert!(err.partial.frames > 0);
            assert!(err.partial.events <= 2);
        }
    }

    #[test]
    fn source_error_propagates() {
        let (frames, flowers) = world_stream(6);
        let items = frames.iter().take(20).cloned().map(Ok).chain(std::iter::once(Err(Error::Parse { line: 21, message: "bad".into() })));
        let mut sink = MemorySink::new();
        let err = run_pipeline(items, &flowers, &mut sink, &PipelineOptions { threads: Some(2), ..Default::default() }).unwrap_err();
        assert!(matches!(err.error, Error::Parse { line: 21, .. }));
        assert_eq!(err.partial.frames, 20);
    }

    #[test]
    fn fps_replay_paces_the_source() {
        let frames: Vec<FrameDetections> = (0..6).map(|i| FrameDetections { frame_index: i, poses: vec![] }).collect();
        let mut sink = MemorySink::new();
        let opts = PipelineOptions { fps: Some(100.0), threads: Some(2), ..Default::default() };
        let rep = run_pipeline(frames.into_iter().map(Ok), &[], &mut sink, &opts).unwrap();
        assert!(rep.wall_s >= 0.05, "6 frames at 100 fps span 50 ms, took {}", rep.wall_s);
    }

    #[test]
    fn drop_mode_drops_only_when_full() {
        let (frames, flowers) = world_stream(7);
        let mut sink = MemorySink::new();
        let opts = PipelineOptions { queue_capacity: 1, mode: QueueMode::Drop, threads: Some(4), ..Default::default() };
        let rep = run_pipeline(frames.iter().cloned().map(Ok), &flowers, &mut sink, &opts).unwrap();
        assert_eq!(rep.frames, frames.len() as u64);
        assert!(rep.dropped <= rep.stage("source").unwrap().stalls);
        assert_eq!(rep.stage("track").unwrap().frames + rep.dropped, rep.frames);
    }

    #[test]
    fn bad_options() {
        let mut sink = MemorySink::new();
        let none = std::iter::empty();
        assert!(run_pipeline(none, &[], &mut sink, &PipelineOptions { queue_capacity: 0, ..Default::default() }).is_err());
        let none = std::iter::empty();
        assert!(run_pipeline(none, &[], &mut sink, &PipelineOptions { fps: Some(0.0), ..Default::default() }).is_err());
    }
}
