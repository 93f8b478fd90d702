//! Body crops: a rigid transform puts the waist on a fixed anchor with the
//! neck straight above it, then the crop window is resampled bilinearly.
//! Thorax and abdomen crops are the top and bottom parts of the full window.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageBuffer, Point2, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropRegion {
    Full,
    Abdomen,
    Thorax,
    Unaligned,
}

impl CropRegion {
    pub const ALL: [CropRegion; 4] = [CropRegion::Full, CropRegion::Abdomen, CropRegion::Thorax, CropRegion::Unaligned];

    pub fn name(self) -> &'static str {
        match self {
            CropRegion::Full => "full",
            CropRegion::Abdomen => "abdomen",
            CropRegion::Thorax => "thorax",
            CropRegion::Unaligned => "unaligned",
        }
    }
}

impl std::str::FromStr for CropRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CropRegion::Full),
            "abdomen" => Ok(CropRegion::Abdomen),
            "thorax" => Ok(CropRegion::Thorax),
            "unaligned" => Ok(CropRegion::Unaligned),
            other => Err(Error::invalid(format!("unknown crop region '{other}'"))),
        }
    }
}

/// Crop window layout. The full aligned window is `full_w x full_h` with the
/// waist at `(anchor_x, anchor_y)`; rows above `split_row` form the thorax
/// crop, rows from `split_row` down the abdomen crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    pub full_w: usize,
    pub full_h: usize,
    pub anchor_x: f64,
    pub anchor_y: f64,
    pub split_row: usize,
    pub unaligned_side: usize,
}

impl Default for CropGeometry {
    fn default() -> Self {
        Self { full_w: 150, full_h: 200, anchor_x: 75.0, anchor_y: 120.0, split_row: 100, unaligned_side: 200 }
    }
}

impl CropGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.full_w == 0 || self.full_h == 0 || self.unaligned_side == 0 {
            return Err(Error::Config("crop sizes must be positive".into()));
        }
        if self.split_row == 0 || self.split_row >= self.full_h {
            return Err(Error::Config(format!("crop.split_row must lie in 1..{}", self.full_h)));
        }
        Ok(())
    }

    pub fn spec(&self, region: CropRegion) -> CropSpec {
        let (width, height) = match region {
            CropRegion::Full => (self.full_w, self.full_h),
            CropRegion::Thorax => (self.full_w, self.split_row),
            CropRegion::Abdomen => (self.full_w, self.full_h - self.split_row),
            CropRegion::Unaligned => (self.unaligned_side, self.unaligned_side),
        };
        CropSpec { region, width, height }
    }

    /// First window row covered by a region's output.
    fn row_offset(&self, region: CropRegion) -> usize {
        match region {
            CropRegion::Abdomen => self.split_row,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub region: CropRegion,
    pub width: usize,
    pub height: usize,
}

/// `crop = R(rotation) * src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub translation: (f64, f64),
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: 0.0, translation: (0.0, 0.0) }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        Point2::new(c * p.x - s * p.y + self.translation.0, s * p.x + c * p.y + self.translation.1)
    }

    pub fn apply_inverse(&self, p: Point2) -> Point2 {
        let (s, c) = self.rotation.sin_cos();
        let (x, y) = (p.x - self.translation.0, p.y - self.translation.1);
        Point2::new(c * x + s * y, -s * x + c * y)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Rotation that turns the neck-to-waist direction straight down (+y) and
/// translation that lands the waist on the anchor.
pub fn alignment_transform(pose: &Pose, geom: &CropGeometry) -> Result<RigidTransform> {
    let (neck, waist) = match (pose.neck, pose.waist) {
        (Some(n), Some(w)) => (n, w),
        _ => return Err(Error::Alignment("neck and waist keypoints are required".into())),
    };
    let (vx, vy) = (waist.x - neck.x, waist.y - neck.y);
    if vx.hypot(vy) < 1e-9 {
        return Err(Error::Alignment("neck and waist coincide".into()));
    }
    let rotation = wrap_angle(FRAC_PI_2 - vy.atan2(vx));
    let (s, c) = rotation.sin_cos();
    let translation = (geom.anchor_x - (c * waist.x - s * waist.y), geom.anchor_y - (s * waist.x + c * waist.y));
    Ok(RigidTransform { rotation, translation })
}

/// Bilinear sample with zero padding outside the image.
pub fn sample_bilinear(img: &ImageBuffer, x: f64, y: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let ch = img.channels();
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let p = img.pixel(px as usize, py as usize);
            for c in 0..ch {
                out[c] += weight * p[c] as f64;
            }
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn resample(img: &ImageBuffer, width: usize, height: usize, map: impl Fn(f64, f64) -> Point2) -> ImageBuffer {
    let ch = img.channels();
    let mut out = ImageBuffer::new(width, height, ch).expect("valid channel count");
    let mut acc = vec![0.0; ch];
    for v in 0..height {
        for u in 0..width {
            let src = map(u as f64, v as f64);
            sample_bilinear(img, src.x, src.y, &mut acc);
            let px = out.pixel_mut(u, v);
            for c in 0..ch {
                px[c] = to_u8(acc[c]);
            }
        }
    }
    out
}

/// Extracts an aligned crop. Thorax and abdomen crops sample exactly the
/// rows of the full window they cover.
pub fn extract_crop(img: &ImageBuffer, t: &RigidTransform, geom: &CropGeometry, region: CropRegion) -> Result<ImageBuffer> {
    if region == CropRegion::Unaligned {
        return Err(Error::invalid("unaligned crops are taken with extract_unaligned"));
    }
    let spec = geom.spec(region);
    let offset = geom.row_offset(region) as f64;
    Ok(resample(img, spec.width, spec.height, |u, v| t.apply_inverse(Point2::new(u, v + offset))))
}

/// Axis-aligned `side x side` window around the rounded waist position,
/// zero padded.
pub fn extract_unaligned(img: &ImageBuffer, waist: Point2, side: usize) -> ImageBuffer {
    let ch = img.channels();
    let mut out = ImageBuffer::new(side, side, ch).expect("valid channel count");
    let x0 = waist.x.round() as i64 - (side / 2) as i64;
    let y0 = waist.y.round() as i64 - (side / 2) as i64;
    for v in 0..side {
        let sy = y0 + v as i64;
        if sy < 0 || sy >= img.height() as i64 {
            continue;
        }
        for u in 0..side {
            let sx = x0 + u as i64;
            if sx < 0 || sx >= img.width() as i64 {
                continue;
            }
            out.pixel_mut(u, v).copy_from_slice(img.pixel(sx as usize, sy as usize));
        }
    }
    out
}

/// Rotates a square image about its center (bilinear, zero padding).
pub fn augment_rotation(img: &ImageBuffer, angle: f64) -> Result<ImageBuffer> {
    if img.width() != img.height() {
        return Err(Error::invalid("rotation augmentation needs a square image"));
    }
    let c = (img.width() as f64 - 1.0) / 2.0;
    let (s, co) = angle.sin_cos();
    Ok(resample(img, img.width(), img.height(), |u, v| {
        let (x, y) = (u - c, v - c);
        Point2::new(co * x + s * y + c, -s * x + co * y + c)
    }))
}

/// Extracts the crop for any region from a pose.
pub fn crop_for_pose(img: &ImageBuffer, pose: &Pose, geom: &CropGeometry, region: CropRegion) -> Result<ImageBuffer> {
    match region {
        CropRegion::Unaligned => {
            let waist = pose.waist.ok_or_else(|| Error::Alignment("waist keypoint is required".into()))?;
            Ok(extract_unaligned(img, waist, geom.unaligned_side))
        }
        _ => extract_crop(img, &alignment_transform(pose, geom)?, geom, region),
    }
}
