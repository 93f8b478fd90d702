use rand::Rng;

use super::world::{frame_rng, mix, BeeState, SyntheticBee, World, FLOWER_COLORS, STREAM_GAIN};
use crate::model::ImageBuffer;

const HEAD_COLOR: [f64; 3] = [35.0, 30.0, 28.0];
const THORAX_COLOR: [f64; 3] = [75.0, 58.0, 38.0];
const STRIPE_DARK: [f64; 3] = [40.0, 32.0, 24.0];
const STRIPE_LIGHT: [f64; 3] = [190.0, 140.0, 50.0];

/// Body parts as (center along, semi-axis along, semi-axis lateral), in
/// body lengths. They do not overlap.
pub const HEAD_SHAPE: (f64, f64, f64) = (0.42, 0.075, 0.075);
pub const THORAX_SHAPE: (f64, f64, f64) = (0.18, 0.15, 0.115);
pub const ABDOMEN_SHAPE: (f64, f64, f64) = (-0.27, 0.25, 0.14);

pub fn dot_radius(body_length: f64) -> f64 {
    (0.03 * body_length).clamp(3.0, 5.0)
}

fn inside(shape: (f64, f64, f64), a: f64, b: f64, l: f64) -> bool {
    let (c, sa, sb) = shape;
    let da = (a - c * l) / (sa * l);
    let db = b / (sb * l);
    da * da + db * db <= 1.0
}

/// Color of a bee at body coordinates `(along, lateral)` in pixels.
fn bee_color(bee: &SyntheticBee, a: f64, b: f64) -> Option<[f64; 3]> {
    let l = bee.body_length;
    if inside(HEAD_SHAPE, a, b, l) {
        return Some(HEAD_COLOR);
    }
    if inside(THORAX_SHAPE, a, b, l) {
        let r = dot_radius(l);
        for d in &bee.paint {
            let (da, db) = (a - d.along * l, b - d.lateral * l);
            if da * da + db * db <= r * r {
                return Some(d.color.map(f64::from));
            }
        }
        return Some(THORAX_COLOR);
    }
    if inside(ABDOMEN_SHAPE, a, b, l) {
        let t = (-a / l) / bee.stripe_period + bee.stripe_phase;
        if t.rem_euclid(1.0) < 0.5 {
            return Some(STRIPE_DARK);
        }
        let k = bee.stripe_contrast;
        return Some([0, 1, 2].map(|c| STRIPE_DARK[c] + k * (STRIPE_LIGHT[c] - STRIPE_DARK[c])));
    }
    None
}

/// Deterministic unit-variance triangular noise for the three channels of
/// one pixel.
fn pixel_noise(frame_key: u64, x: usize, y: usize) -> [f64; 3] {
    let h1 = mix(frame_key ^ (((y as u64) << 32) | x as u64));
    let h2 = mix(h1);
    let bits = [h1 & 0x1f_ffff, (h1 >> 21) & 0x1f_ffff, (h1 >> 42) & 0x1f_ffff, h2 & 0x1f_ffff, (h2 >> 21) & 0x1f_ffff, (h2 >> 42) & 0x1f_ffff];
    let u = |i: usize| bits[i] as f64 / 2_097_151.0;
    [0, 1, 2].map(|c| (u(2 * c) + u(2 * c + 1) - 1.0) * 6f64.sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub bees: bool,
    pub lighting: bool,
    pub noise: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { bees: true, lighting: true, noise: true }
    }
}

impl World {
    /// Background and flowers with their wells, no bees, no noise.
    pub fn reference_frame(&self) -> ImageBuffer {
        self.render_region(0, 0, 0, self.config.width, self.config.height, RenderOptions { bees: false, lighting: false, noise: false })
    }

    pub fn render_frame(&self, frame: u64) -> ImageBuffer {
        self.render_region(frame, 0, 0, self.config.width, self.config.height, RenderOptions::default())
    }

    pub fn render_states(&self, frame: u64, states: &[BeeState], x0: i64, y0: i64, w: usize, h: usize, opts: RenderOptions) -> ImageBuffer {
        let cfg = &self.config;
        let mut acc = vec![0.0f64; w * h * 3];
        let bg = cfg.background as f64;
        acc.iter_mut().for_each(|v| *v = bg);
        let mut paint_rect = |xa: f64, ya: f64, xb: f64, yb: f64, f: &mut dyn FnMut(f64, f64) -> Option<[f64; 3]>| {
            let (ua, ub) = (((xa - x0 as f64).floor().max(0.0)) as usize, ((xb - x0 as f64).ceil().max(0.0) as usize).min(w));
            let (va, vb) = (((ya - y0 as f64).floor().max(0.0)) as usize, ((yb - y0 as f64).ceil().max(0.0) as usize).min(h));
            for v in va..vb {
                for u in ua..ub {
                    let (px, py) = ((u as i64 + x0) as f64, (v as i64 + y0) as f64);
                    if let Some(c) = f(px, py) {
                        acc[(v * w + u) * 3..(v * w + u) * 3 + 3].copy_from_slice(&c);
                    }
                }
            }
        };
        for f in &self.flowers {
            let color = FLOWER_COLORS[f.flower_id as usize % 2].map(f64::from);
            let well = color.map(|c| c * 0.88);
            let (cx, cy, half) = (f.center_well.x, f.center_well.y, f.square_side / 2.0);
            let r2 = f.well_radius * f.well_radius;
            paint_rect(cx - half, cy - half, cx + half, cy + half, &mut |px, py| {
                if px < cx - half || px >= cx + half || py < cy - half || py >= cy + half {
                    return None;
                }
                let (dx, dy) = (px - cx, py - cy);
                Some(if dx * dx + dy * dy <= r2 { well } else { color })
            });
        }
        if opts.bees {
            for s in states {
                let bee = &self.bees[s.bee];
                let (u, n) = s.axis();
                let reach = 0.55 * s.body_length;
                paint_rect(s.waist.x - reach, s.waist.y - reach, s.waist.x + reach + 1.0, s.waist.y + reach + 1.0, &mut |px, py| {
                    let (dx, dy) = (px - s.waist.x, py - s.waist.y);
                    bee_color(bee, dx * u.x + dy * u.y, dx * n.x + dy * n.y)
                });
            }
        }
        let gain = if opts.lighting && cfg.gain_range > 0.0 {
            frame_rng(cfg.seed, frame, STREAM_GAIN).random_range(1.0 - cfg.gain_range..=1.0 + cfg.gain_range)
        } else {
            1.0
        };
        let sigma = if opts.noise { cfg.pixel_noise } else { 0.0 };
        let frame_key = mix(mix(cfg.seed) ^ frame);
        let mut data = vec![0u8; w * h * 3];
        for v in 0..h {
            let gy = v as i64 + y0;
            for u in 0..w {
                let gx = u as i64 + x0;
                // Outside the camera frame stays black.
                if gx < 0 || gy < 0 || gx >= cfg.width as i64 || gy >= cfg.height as i64 {
                    continue;
                }
                let noise = if sigma > 0.0 { pixel_noise(frame_key, gx as usize, gy as usize) } else { [0.0; 3] };
                for c in 0..3 {
                    let i = (v * w + u) * 3 + c;
                    data[i] = (acc[i] * gain + sigma * noise[c]).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        ImageBuffer::from_raw(w, h, 3, data).expect("buffer sized to region")
    }

    /// Renders a window of a frame. Any window of a frame matches the same
    /// pixels of the full frame exactly.
    pub fn render_region(&self, frame: u64, x0: i64, y0: i64, w: usize, h: usize, opts: RenderOptions) -> ImageBuffer {
        let states = if opts.bees { self.states(frame) } else { Vec::new() };
        self.render_states(frame, &states, x0, y0, w, h, opts)
    }
}
