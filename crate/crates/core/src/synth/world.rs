use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ScriptedPass, WorldConfig};
use crate::error::{Error, Result};
use crate::model::{FrameDetections, Flower, Point2, Pose, Track, VisitEvent};

/// Keypoint offsets along the body axis, in body lengths from the waist.
pub const HEAD_ALONG: f64 = 0.42;
pub const NECK_ALONG: f64 = 0.30;
pub const ABDOMEN_ALONG: f64 = -0.35;

pub const PALETTE: [[u8; 3]; 8] = [
    [230, 30, 30],
    [30, 200, 40],
    [40, 70, 230],
    [240, 220, 30],
    [220, 40, 200],
    [30, 210, 220],
    [250, 140, 20],
    [250, 250, 250],
];

pub const FLOWER_COLORS: [[u8; 3]; 2] = [[245, 245, 245], [170, 200, 255]];

/// Every 1-dot and 2-dot palette combination.
pub fn paint_codes() -> Vec<Vec<usize>> {
    let mut codes: Vec<Vec<usize>> = (0..PALETTE.len()).map(|i| vec![i]).collect();
    for i in 0..PALETTE.len() {
        for j in i + 1..PALETTE.len() {
            codes.push(vec![i, j]);
        }
    }
    codes
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaintDot {
    pub color: [u8; 3],
    /// Offset from the waist in body lengths (along the axis, lateral).
    pub along: f64,
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBee {
    pub id_label: String,
    pub paint: Vec<PaintDot>,
    pub stripe_period: f64,
    pub stripe_phase: f64,
    pub stripe_contrast: f64,
    pub body_length: f64,
}

/// One trip of one bee: enter, drink, turn, leave. Each pass is one
/// ground-truth track and one ground-truth visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Pass {
    pub track_id: u64,
    pub bee: usize,
    pub flower: usize,
    pub start_frame: u64,
    /// Direction the head points on the way in.
    pub heading: f64,
    pub origin: Point2,
    pub dwell: Point2,
    pub approach: u64,
    pub dwell1: u64,
    pub drink_twice: bool,
    pub hold: u64,
    pub dwell2: u64,
    pub turn: u64,
    pub step_back: f64,
}

const STEP_FRAMES: u64 = 2;

impl Pass {
    fn drink_extra(&self) -> u64 {
        if self.drink_twice { 2 * STEP_FRAMES + self.hold + self.dwell2 } else { 0 }
    }

    pub fn len(&self) -> u64 {
        2 * self.approach + self.dwell1 + self.drink_extra() + self.turn
    }

    pub fn end_frame(&self) -> u64 {
        self.start_frame + self.len() - 1
    }

    pub fn visit(&self) -> VisitEvent {
        let start = self.start_frame + self.approach;
        VisitEvent {
            flower_id: self.flower as u32,
            track_id: self.track_id,
            start_frame: start,
            end_frame: start + self.dwell1 + self.drink_extra() - 1,
        }
    }

    /// Frames in which the head rests on the well.
    pub fn dwell_frames(&self) -> Vec<u64> {
        let s = self.start_frame + self.approach;
        let mut v: Vec<u64> = (s..s + self.dwell1).collect();
        if self.drink_twice {
            let s2 = s + self.dwell1 + 2 * STEP_FRAMES + self.hold;
            v.extend(s2..s2 + self.dwell2);
        }
        v
    }

    /// Waist position and heading at `frame`.
    pub fn state(&self, frame: u64) -> Option<(Point2, f64)> {
        if frame < self.start_frame || frame > self.end_frame() {
            return None;
        }
        let lerp = |a: Point2, b: Point2, t: f64| Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
        let u = Point2::new(self.heading.cos(), self.heading.sin());
        let back = Point2::new(self.dwell.x - self.step_back * u.x, self.dwell.y - self.step_back * u.y);
        let wobble = |k: u64| {
            let k = k as f64;
            Point2::new(self.dwell.x + 0.6 * (0.7 * k).sin(), self.dwell.y + 0.6 * (0.5 * k).cos())
        };
        let mut k = frame - self.start_frame;
        if k < self.approach {
            return Some((lerp(self.origin, self.dwell, (k + 1) as f64 / self.approach as f64), self.heading));
        }
        k -= self.approach;
        if k < self.dwell1 {
            return Some((wobble(k), self.heading));
        }
        k -= self.dwell1;
        if self.drink_twice {
            if k < STEP_FRAMES {
                return Some((lerp(self.dwell, back, (k + 1) as f64 / STEP_FRAMES as f64), self.heading));
            }
            k -= STEP_FRAMES;
            if k < self.hold {
                return Some((back, self.heading));
            }
            k -= self.hold;
            if k < STEP_FRAMES {
                return Some((lerp(back, self.dwell, (k + 1) as f64 / STEP_FRAMES as f64), self.heading));
            }
            k -= STEP_FRAMES;
            if k < self.dwell2 {
                return Some((wobble(k + self.dwell1), self.heading));
            }
            k -= self.dwell2;
        }
        if k < self.turn {
            return Some((self.dwell, self.heading + PI * (k + 1) as f64 / self.turn as f64));
        }
        k -= self.turn;
        Some((lerp(self.dwell, self.origin, (k + 1) as f64 / self.approach as f64), self.heading + PI))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeeState {
    pub pass: usize,
    pub bee: usize,
    pub waist: Point2,
    pub heading: f64,
    pub body_length: f64,
}

impl BeeState {
    pub fn axis(&self) -> (Point2, Point2) {
        let (s, c) = self.heading.sin_cos();
        (Point2::new(c, s), Point2::new(-s, c))
    }

    pub fn true_pose(&self) -> Pose {
        let (u, _) = self.axis();
        let at = |a: f64| Point2::new(self.waist.x + a * self.body_length * u.x, self.waist.y + a * self.body_length * u.y);
        Pose { head: Some(at(HEAD_ALONG)), neck: Some(at(NECK_ALONG)), waist: Some(self.waist), abdomen: Some(at(ABDOMEN_ALONG)), score: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub flowers: Vec<Flower>,
    pub bees: Vec<SyntheticBee>,
    pub passes: Vec<Pass>,
    pub n_frames: u64,
}

pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for one frame and purpose.
pub(crate) fn frame_rng(seed: u64, frame: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)) ^ frame))
}

const STREAM_POSES: u64 = 1;
pub(crate) const STREAM_GAIN: u64 = 2;

fn layout(cfg: &WorldConfig) -> Result<Vec<Flower>> {
    let mut flowers = Vec::new();
    let side = cfg.flower_side;
    for row in 0..cfg.flower_rows {
        let cy = if cfg.flower_rows == 1 { cfg.height as f64 / 2.0 } else { cfg.height as f64 * (0.3 + 0.4 * row as f64) };
        for col in 0..cfg.flower_cols {
            let cx = cfg.width as f64 * (col as f64 + 0.5) / cfg.flower_cols as f64;
            let color = FLOWER_COLORS[(row * cfg.flower_cols + col) % 2];
            flowers.push(Flower {
                flower_id: flowers.len() as u32,
                center_well: Point2::new(cx, cy),
                well_radius: cfg.well_fraction * side,
                square_side: side,
                color_tag: format!("#{:02x}{:02x}{:02x}", color[0], color[1], color[2]),
            });
        }
    }
    for f in &flowers {
        let h = side / 2.0;
        let (x, y) = (f.center_well.x, f.center_well.y);
        if x - h < 0.0 || y - h < 0.0 || x + h > cfg.width as f64 || y + h > cfg.height as f64 {
            return Err(Error::World(format!("flower {} does not fit in the frame", f.flower_id)));
        }
    }
    let col_gap = cfg.width as f64 / cfg.flower_cols as f64;
    if cfg.flower_cols > 1 && col_gap < side {
        return Err(Error::World("flowers overlap horizontally".into()));
    }
    if cfg.flower_rows == 2 && cfg.height as f64 * 0.4 < side {
        return Err(Error::World("flowers overlap vertically".into()));
    }
    if cfg.flower_cols > 1 && col_gap < 1.2 * cfg.max_bee_length() + 2.0 * cfg.max_bee_length() * cfg.heading_jitter_deg.to_radians().sin() {
        return Err(Error::World(format!(
            "lanes {col_gap:.0} px apart cannot keep bees of length {:.0} from overlapping",
            cfg.max_bee_length()
        )));
    }
    Ok(flowers)
}

fn make_bees(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<SyntheticBee>> {
    let mut codes = paint_codes();
    if cfg.bees > codes.len() {
        return Err(Error::World(format!("{} bees requested but only {} paint codes exist", cfg.bees, codes.len())));
    }
    codes.shuffle(rng);
    Ok(codes
        .into_iter()
        .take(cfg.bees)
        .enumerate()
        .map(|(i, code)| {
            let lateral: &[f64] = if code.len() == 1 { &[0.0] } else { &[-0.06, 0.06] };
            SyntheticBee {
                id_label: format!("bee{i:02}"),
                paint: code.iter().zip(lateral).map(|(&c, &l)| PaintDot { color: PALETTE[c], along: 0.255, lateral: l }).collect(),
                stripe_period: rng.random_range(0.105..0.115),
                stripe_phase: rng.random_range(0.0..0.2),
                stripe_contrast: rng.random_range(0.65..0.75),
                body_length: cfg.bee_length * (1.0 + cfg.bee_length_spread * rng.random_range(-1.0..=1.0)),
            }
        })
        .collect())
}

/// Base heading per flower: top row heads down, bottom row heads up.
fn lane_heading(cfg: &WorldConfig, flower: usize) -> f64 {
    if cfg.flower_rows == 2 && flower >= cfg.flower_cols { -FRAC_PI_2 } else { FRAC_PI_2 }
}

fn build_pass(
    cfg: &WorldConfig,
    flowers: &[Flower],
    bees: &[SyntheticBee],
    bee: usize,
    flower: usize,
    start_frame: u64,
    dwell1: u64,
    drink_twice: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Pass> {
    let f = &flowers[flower];
    let jitter = cfg.heading_jitter_deg.to_radians();
    let heading = lane_heading(cfg, flower) + if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
    let l = bees[bee].body_length;
    let u = Point2::new(heading.cos(), heading.sin());
    let dwell = Point2::new(f.center_well.x - HEAD_ALONG * l * u.x, f.center_well.y - HEAD_ALONG * l * u.y);
    // Back away from the well until the body would leave the frame margin.
    let margin = 0.55 * l;
    let limit = |p: f64, d: f64, hi: f64| -> f64 {
        if d < -1e-12 { (p - margin) / -d } else if d > 1e-12 { (hi - margin - p) / d } else { f64::INFINITY }
    };
    let s = limit(dwell.x, -u.x, cfg.width as f64).min(limit(dwell.y, -u.y, cfg.height as f64)).max(0.0);
    let origin = Point2::new(dwell.x - s * u.x, dwell.y - s * u.y);
    let r_visit = cfg.r_visit_multiple * f.well_radius;
    let step_back = 3.0 * r_visit;
    if drink_twice && step_back > s {
        return Err(Error::World(format!("flower {flower} has no room for a drink-twice step back")));
    }
    let dwell2 = if drink_twice { rng.random_range(cfg.dwell_min..=cfg.dwell_max) } else { 0 };
    Ok(Pass {
        track_id: 0,
        bee,
        flower,
        start_frame,
        heading,
        origin,
        dwell,
        approach: ((s / cfg.speed).ceil() as u64).max(1),
        dwell1,
        drink_twice,
        hold: cfg.drink_twice_hold,
        dwell2,
        turn: cfg.turn_frames,
        step_back,
    })
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let flowers = layout(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bees = make_bees(cfg, &mut rng)?;
    let mut passes = Vec::new();
    if let Some(script) = &cfg.schedule {
        for sp in script {
            let ScriptedPass { bee, flower, start_frame, dwell_frames, drink_twice } = *sp;
            if bee >= bees.len() || flower as usize >= flowers.len() || dwell_frames == 0 {
                return Err(Error::World(format!("scripted pass {sp:?} names an unknown bee/flower or has no dwell")));
            }
            passes.push(build_pass(cfg, &flowers, &bees, bee, flower as usize, start_frame, dwell_frames, drink_twice, &mut rng)?);
        }
        passes.sort_by_key(|p| (p.start_frame, p.flower));
        for (i, a) in passes.iter().enumerate() {
            for b in &passes[i + 1..] {
                if a.flower == b.flower && b.start_frame <= a.end_frame() + cfg.idle_min {
                    return Err(Error::World(format!(
                        "passes to flower {} at frames {} and {} overlap; bees would collide in the lane",
                        a.flower, a.start_frame, b.start_frame
                    )));
                }
            }
        }
    } else if !bees.is_empty() {
        let n_twice = (cfg.drink_twice_frac * cfg.visits as f64).round() as usize;
        let mut twice = vec![false; cfg.visits];
        for i in rand::seq::index::sample(&mut rng, cfg.visits, n_twice.min(cfg.visits)).iter() {
            twice[i] = true;
        }
        // Balanced identity assignment: every bee gets floor or ceil of the share.
        let mut bee_order: Vec<usize> = Vec::with_capacity(cfg.visits);
        while bee_order.len() < cfg.visits {
            let mut round: Vec<usize> = (0..bees.len()).collect();
            round.shuffle(&mut rng);
            bee_order.extend(round);
        }
        let mut lane_free: Vec<u64> = (0..flowers.len()).map(|_| rng.random_range(0..=cfg.idle_max)).collect();
        for v in 0..cfg.visits {
            let flower = (0..flowers.len()).min_by_key(|&i| (lane_free[i], i)).expect("at least one flower");
            let dwell = rng.random_range(cfg.dwell_min..=cfg.dwell_max);
            let pass = build_pass(cfg, &flowers, &bees, bee_order[v], flower, lane_free[flower], dwell, twice[v], &mut rng)?;
            lane_free[flower] = pass.end_frame() + 1 + rng.random_range(cfg.idle_min..=cfg.idle_max);
            passes.push(pass);
        }
    }
    if let Some(limit) = cfg.frames {
        passes.retain(|p| p.end_frame() < limit);
    }
    passes.sort_by_key(|p| (p.start_frame, p.flower));
    for (i, p) in passes.iter_mut().enumerate() {
        p.track_id = i as u64;
    }
    let n_frames = cfg.frames.unwrap_or_else(|| passes.iter().map(|p| p.end_frame() + 1).max().unwrap_or(0));
    Ok(World { config: cfg.clone(), flowers, bees, passes, n_frames })
}

impl World {
    pub fn states(&self, frame: u64) -> Vec<BeeState> {
        self.passes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                p.state(frame).map(|(waist, heading)| BeeState {
                    pass: i,
                    bee: p.bee,
                    waist,
                    heading,
                    body_length: self.bees[p.bee].body_length,
                })
            })
            .collect()
    }

    /// Emitted detections: true keypoints plus Gaussian jitter, in pass order.
    pub fn observed(&self, frame: u64) -> Vec<(BeeState, Pose)> {
        let states = self.states(frame);
        let mut rng = frame_rng(self.config.seed, frame, STREAM_POSES);
        let normal = Normal::new(0.0, self.config.jitter_px.max(0.0)).expect("finite sigma");
        states
            .into_iter()
            .map(|s| {
                let mut p = s.true_pose();
                let score = rng.random_range(0.8..1.0);
                for kp in [&mut p.head, &mut p.neck, &mut p.waist, &mut p.abdomen].into_iter().flatten() {
                    kp.x += normal.sample(&mut rng);
                    kp.y += normal.sample(&mut rng);
                }
                p.score = score;
                (s, p)
            })
            .collect()
    }

    pub fn detections(&self, frame: u64) -> FrameDetections {
        FrameDetections { frame_index: frame, poses: self.observed(frame).into_iter().map(|(_, p)| p).collect() }
    }

    pub fn pose_stream(&self) -> Vec<FrameDetections> {
        (0..self.n_frames).map(|f| self.detections(f)).collect()
    }

    /// Emitted poses grouped by the pass that produced them.
    pub fn ground_truth_tracks(&self) -> Vec<Track> {
        let mut tracks: Vec<Track> = self.passes.iter().map(|p| Track { track_id: p.track_id, entries: Vec::new() }).collect();
        for f in 0..self.n_frames {
            for (s, pose) in self.observed(f) {
                tracks[s.pass].entries.push((f, pose));
            }
        }
        tracks
    }

    pub fn ground_truth_visits(&self) -> Vec<VisitEvent> {
        let mut v: Vec<VisitEvent> = self.passes.iter().map(Pass::visit).collect();
        crate::formats::sort_events(&mut v);
        v
    }
}
