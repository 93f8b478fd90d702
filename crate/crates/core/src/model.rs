//! Shared domain types: keypoints, poses, tracks, flowers, visit events,
//! embeddings and raster images.
//!
//! Pixel coordinates use the raster convention: origin at the top-left,
//! x to the right, y downward. Pixel `(i, j)` sits at coordinate `(i, j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding width produced by the trained embedder.
pub const EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Planar Euclidean distance.
pub fn point_distance(p: Point2, q: Point2) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Keypoint {
    Head,
    Neck,
    Waist,
    Abdomen,
}

impl Keypoint {
    pub const ALL: [Keypoint; 4] = [Keypoint::Head, Keypoint::Neck, Keypoint::Waist, Keypoint::Abdomen];

    pub fn name(self) -> &'static str {
        match self {
            Keypoint::Head => "head",
            Keypoint::Neck => "neck",
            Keypoint::Waist => "waist",
            Keypoint::Abdomen => "abdomen",
        }
    }
}

/// One detected bee skeleton. Any keypoint may be missing; consumers
/// declare which ones they need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub head: Option<Point2>,
    pub neck: Option<Point2>,
    pub waist: Option<Point2>,
    pub abdomen: Option<Point2>,
    pub score: f64,
}

impl Pose {
    /// Builds a pose, checking that at least one finite keypoint is present
    /// and the score lies in `[0, 1]`.
    pub fn new(
        head: Option<Point2>,
        neck: Option<Point2>,
        waist: Option<Point2>,
        abdomen: Option<Point2>,
        score: f64,
    ) -> Result<Self> {
        let pose = Pose { head, neck, waist, abdomen, score };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!("pose score {} outside [0,1]", self.score)));
        }
        let mut any = false;
        for kp in Keypoint::ALL {
            if let Some(p) = self.get(kp) {
                if !p.is_finite() {
                    return Err(Error::invalid(format!("non-finite {} keypoint", kp.name())));
                }
                any = true;
            }
        }
        if !any {
            return Err(Error::invalid("pose has no keypoints"));
        }
        Ok(())
    }

    pub fn get(&self, kp: Keypoint) -> Option<Point2> {
        match kp {
            Keypoint::Head => self.head,
            Keypoint::Neck => self.neck,
            Keypoint::Waist => self.waist,
            Keypoint::Abdomen => self.abdomen,
        }
    }

    /// Association anchor: the waist when present, otherwise the centroid of
    /// the available keypoints.
    pub fn anchor(&self) -> Point2 {
        if let Some(w) = self.waist {
            return w;
        }
        let pts: Vec<Point2> = Keypoint::ALL.iter().filter_map(|&k| self.get(k)).collect();
        let n = pts.len().max(1) as f64;
        Point2::new(
            pts.iter().map(|p| p.x).sum::<f64>() / n,
            pts.iter().map(|p| p.y).sum::<f64>() / n,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub entries: Vec<(u64, Pose)>,
}

impl Track {
    pub fn first_frame(&self) -> Option<u64> {
        self.entries.first().map(|e| e.0)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.entries.last().map(|e| e.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flower {
    pub flower_id: u32,
    pub center_well: Point2,
    pub well_radius: f64,
    pub square_side: f64,
    pub color_tag: String,
}

impl Flower {
    pub fn validate(&self) -> Result<()> {
        if !(self.well_radius > 0.0) || !(self.square_side > 0.0) {
            return Err(Error::invalid(format!(
                "flower {} needs positive well radius and side",
                self.flower_id
            )));
        }
        if !self.center_well.is_finite() {
            return Err(Error::invalid(format!("flower {} center is not finite", self.flower_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VisitEvent {
    pub flower_id: u32,
    pub track_id: u64,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl VisitEvent {
    pub fn n_frames(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    /// Total order used for every event listing: start frame, then flower,
    /// then track, then end frame.
    pub fn sort_key(&self) -> (u64, u32, u64, u64) {
        (self.start_frame, self.flower_id, self.track_id, self.end_frame)
    }
}

/// Identity feature vector. Trained-embedder outputs are unit norm
/// (`normalized == true`); PCA baseline projections are not.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, normalized: bool) -> Self {
        Self { values, normalized }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    slice_distance(&a.values, &b.values)
}

pub(crate) fn slice_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_raw(width, height, channels, vec![0; width * height * channels])
    }

    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Result<Self> {
        let channels = pixel.len();
        let mut img = Self::new(width, height, channels)?;
        for px in img.data.chunks_exact_mut(channels) {
            px.copy_from_slice(pixel);
        }
        Ok(img)
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension { expected: width * height * channels, got: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Luma conversion 0.299R + 0.587G + 0.114B, rounded half-up.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                (y + 0.5).floor().min(255.0) as u8
            })
            .collect();
        ImageBuffer { width: self.width, height: self.height, channels: 1, data }
    }

    /// Stacks `other` below `self`; both must share width and channels.
    pub fn vstack(&self, other: &ImageBuffer) -> Result<ImageBuffer> {
        if self.width != other.width || self.channels != other.channels {
            return Err(Error::invalid("vstack needs equal width and channels"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        ImageBuffer::from_raw(self.width, self.height + other.height, self.channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(i: usize, sign: f64) -> EmbeddingVector {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i] = sign;
        EmbeddingVector::new(v, true)
    }

    #[test]
    fn distance_identity_and_antipodal() {
        let a = unit(0, 1.0);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&a, &unit(0, -1.0)).unwrap(), 2.0);
    }

    #[test]
    fn distance_matches_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut acc = 0.0;
        for i in 0..EMBEDDING_DIM {
            let d = a[i] - b[i];
            acc += d * d;
        }
        let got = euclidean_distance(&EmbeddingVector::new(a, false), &EmbeddingVector::new(b, false)).unwrap();
        assert!((got - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_dimension_error() {
        let a = EmbeddingVector::new(vec![0.0; 128], true);
        let b = EmbeddingVector::new(vec![0.0; 127], true);
        assert!(matches!(euclidean_distance(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn point_distances() {
        assert_eq!(point_distance(Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)), 5.0);
        assert_eq!(point_distance(Point2::new(2.0, 2.0), Point2::new(2.0, 2.0)), 0.0);
        assert!((point_distance(Point2::new(1.5, 2.5), Point2::new(4.5, 6.5)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pose_requires_a_keypoint() {
        assert!(Pose::new(None, None, None, None, 0.5).is_err());
        assert!(Pose::new(Some(Point2::new(1.0, 1.0)), None, None, None, 1.5).is_err());
        let p = Pose::new(Some(Point2::new(0.0, 0.0)), None, None, Some(Point2::new(2.0, 4.0)), 0.9).unwrap();
        assert_eq!(p.anchor(), Point2::new(1.0, 2.0));
    }

    #[test]
    fn luma_rounds_half_up() {
        let img = ImageBuffer::from_raw(1, 1, 3, vec![255, 0, 0]).unwrap();
        // 0.299 * 255 = 76.245
        assert_eq!(img.to_gray().data(), &[76]);
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in prop::collection::vec(-5.0f64..5.0, 8),
                               b in prop::collection::vec(-5.0f64..5.0, 8),
                               c in prop::collection::vec(-5.0f64..5.0, 8)) {
            let (a, b, c) = (EmbeddingVector::new(a, false), EmbeddingVector::new(b, false), EmbeddingVector::new(c, false));
            let ab = euclidean_distance(&a, &b).unwrap();
            let bc = euclidean_distance(&b, &c).unwrap();
            let ac = euclidean_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(ab, euclidean_distance(&b, &a).unwrap());
        }

        #[test]
        fn point_triangle(px in -100.0f64..100.0, py in -100.0f64..100.0,
                          qx in -100.0f64..100.0, qy in -100.0f64..100.0,
                          rx in -100.0f64..100.0, ry in -100.0f64..100.0) {
            let (p, q, r) = (Point2::new(px, py), Point2::new(qx, qy), Point2::new(rx, ry));
            prop_assert!(point_distance(p, r) <= point_distance(p, q) + point_distance(q, r) + 1e-9);
        }
    }
}
