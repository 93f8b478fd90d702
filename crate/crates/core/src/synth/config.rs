use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One explicitly scripted pass of a bee to a flower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPass {
    pub bee: usize,
    pub flower: u32,
    pub start_frame: u64,
    pub dwell_frames: u64,
    #[serde(default)]
    pub drink_twice: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub background: u8,
    pub flower_cols: usize,
    /// 1 or 2. Top-row flowers are approached from the top edge, bottom-row
    /// flowers from the bottom edge.
    pub flower_rows: usize,
    pub flower_side: f64,
    pub bees: usize,
    pub bee_length: f64,
    /// Per-bee body length varies by up to this fraction.
    pub bee_length_spread: f64,
    /// Number of passes (each one visit and one ground-truth track).
    pub visits: usize,
    /// Fixed stream length; passes that do not fit are dropped.
    pub frames: Option<u64>,
    pub speed: f64,
    pub dwell_min: u64,
    pub dwell_max: u64,
    pub turn_frames: u64,
    pub idle_min: u64,
    pub idle_max: u64,
    pub heading_jitter_deg: f64,
    /// Fraction of visits where the bee backs off the well and returns.
    pub drink_twice_frac: f64,
    pub drink_twice_hold: u64,
    pub r_visit_multiple: f64,
    pub well_fraction: f64,
    pub jitter_px: f64,
    pub gain_range: f64,
    pub pixel_noise: f64,
    pub crops_per_track: usize,
    /// Tracks (chosen at random) that get one crop more.
    pub extra_crop_tracks: usize,
    pub schedule: Option<Vec<ScriptedPass>>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            width: 800,
            height: 600,
            background: 110,
            flower_cols: 3,
            flower_rows: 2,
            flower_side: 120.0,
            bees: 6,
            bee_length: 60.0,
            bee_length_spread: 0.08,
            visits: 20,
            frames: None,
            speed: 6.0,
            dwell_min: 10,
            dwell_max: 20,
            turn_frames: 12,
            idle_min: 20,
            idle_max: 40,
            heading_jitter_deg: 20.0,
            drink_twice_frac: 0.0,
            drink_twice_hold: 9,
            r_visit_multiple: 2.0,
            well_fraction: crate::flowers::DEFAULT_WELL_FRACTION,
            jitter_px: 0.5,
            gain_range: 0.1,
            pixel_noise: 2.0,
            crops_per_track: 5,
            extra_crop_tracks: 0,
            schedule: None,
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// Large bees on large flowers, sized for 150x200 body crops.
    pub fn reid(ids: usize, tracks: usize, crops_per_track: usize) -> Self {
        Self {
            width: 1000,
            height: 800,
            flower_cols: 2,
            flower_rows: 2,
            flower_side: 300.0,
            bees: ids,
            bee_length: 140.0,
            bee_length_spread: 0.08,
            visits: tracks,
            dwell_min: (crops_per_track as u64 + 2).max(10),
            dwell_max: (crops_per_track as u64 + 2).max(10) + 10,
            crops_per_track,
            ..Default::default()
        }
    }

    /// 27 identities, 787 tracks, 4392 crops.
    pub fn paper_scale() -> Self {
        Self { extra_crop_tracks: 457, ..Self::reid(27, 787, 5) }
    }

    pub fn max_bee_length(&self) -> f64 {
        self.bee_length * (1.0 + self.bee_length_spread)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be positive".into());
        }
        if self.flower_cols == 0 || !(1..=2).contains(&self.flower_rows) {
            return bad("need at least one flower column and 1 or 2 rows".into());
        }
        for (name, v) in [
            ("flower_side", self.flower_side),
            ("bee_length", self.bee_length),
            ("speed", self.speed),
            ("r_visit_multiple", self.r_visit_multiple),
            ("well_fraction", self.well_fraction),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("jitter_px", self.jitter_px),
            ("pixel_noise", self.pixel_noise),
            ("heading_jitter_deg", self.heading_jitter_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.bee_length_spread) || !(0.0..1.0).contains(&self.gain_range) {
            return bad("bee_length_spread and gain_range must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.drink_twice_frac) {
            return bad("drink_twice_frac must lie in [0, 1]".into());
        }
        if self.dwell_min == 0 || self.dwell_max < self.dwell_min || self.idle_max < self.idle_min || self.turn_frames == 0 {
            return bad("dwell, idle and turn frame ranges must be positive and ordered".into());
        }
        if self.heading_jitter_deg >= 60.0 {
            return bad("heading_jitter_deg must be below 60".into());
        }
        Ok(())
    }
}
