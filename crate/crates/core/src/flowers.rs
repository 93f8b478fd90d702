//! Flower localisation: threshold a reference frame, label bright
//! 4-connected blobs and keep the ones shaped like filled squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Flower, ImageBuffer, Point2};

pub const DEFAULT_WELL_FRACTION: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    Fixed(u8),
    Otsu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowerParams {
    pub threshold: ThresholdMethod,
    pub min_area: usize,
    pub aspect_tol: f64,
    pub fill_min: f64,
    pub well_fraction: f64,
    /// Offset of the center well from the square centroid.
    pub well_offset: (f64, f64),
}

impl Default for FlowerParams {
    fn default() -> Self {
        Self {
            threshold: ThresholdMethod::Otsu,
            min_area: 400,
            aspect_tol: 0.2,
            fill_min: 0.8,
            well_fraction: DEFAULT_WELL_FRACTION,
            well_offset: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareRegion {
    pub centroid: Point2,
    /// (x, y, w, h) in pixels.
    pub bbox: (usize, usize, usize, usize),
    pub area: usize,
    pub fill_ratio: f64,
}

pub fn histogram(img: &ImageBuffer) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in img.data() {
        h[v as usize] += 1;
    }
    h
}

/// Otsu's threshold over a 256-bin histogram. Pixels `>= t` are foreground.
/// Returns the smallest `t` maximising the between-class variance, or 256
/// (empty foreground) when no split separates two non-empty classes.
pub fn otsu_threshold(hist: &[u64; 256]) -> u16 {
    let total: u64 = hist.iter().sum();
    let total_sum: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    let mut best = (256u16, 0.0f64);
    let (mut w0, mut s0) = (0u64, 0u128);
    for t in 1..=255u16 {
        w0 += hist[t as usize - 1];
        s0 += (t as u128 - 1) * hist[t as usize - 1] as u128;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        // w0*w1*(mu0-mu1)^2 = (s0*w1 - s1*w0)^2 / (w0*w1)
        let a = s0 * w1 as u128;
        let b = s1 * w0 as u128;
        let diff = a.abs_diff(b) as f64;
        let var = diff * diff / (w0 as f64 * w1 as f64);
        if var > best.1 {
            best = (t, var);
        }
    }
    best.0
}

pub fn threshold_image(img: &ImageBuffer, method: ThresholdMethod) -> Result<BinaryMask> {
    if img.channels() != 1 {
        return Err(Error::invalid("thresholding needs a grayscale image"));
    }
    let t = match method {
        ThresholdMethod::Fixed(t) => t as u16,
        ThresholdMethod::Otsu => otsu_threshold(&histogram(img)),
    };
    Ok(BinaryMask {
        width: img.width(),
        height: img.height(),
        data: img.data().iter().map(|&v| v as u16 >= t).collect(),
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Two-pass union-find labelling with 4-connectivity. Regions come out in
/// raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Vec<SquareRegion> {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut parent: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.data[i] {
                continue;
            }
            let left = (x > 0 && mask.data[i - 1]).then(|| labels[i - 1]);
            let up = (y > 0 && mask.data[i - w]).then(|| labels[i - w]);
            labels[i] = match (left, up) {
                (None, None) => {
                    parent.push(parent.len());
                    parent.len() - 1
                }
                (Some(l), None) | (None, Some(l)) => l,
                (Some(l), Some(u)) => {
                    let (rl, ru) = (find(&mut parent, l), find(&mut parent, u));
                    if rl != ru {
                        let (lo, hi) = (rl.min(ru), rl.max(ru));
                        parent[hi] = lo;
                    }
                    l
                }
            };
        }
    }

    struct Acc {
        area: usize,
        sx: f64,
        sy: f64,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        first: usize,
    }
    let mut accs: Vec<Option<Acc>> = (0..parent.len()).map(|_| None).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if labels[i] == usize::MAX {
                continue;
            }
            let root = find(&mut parent, labels[i]);
            let acc = accs[root].get_or_insert(Acc { area: 0, sx: 0.0, sy: 0.0, x0: x, y0: y, x1: x, y1: y, first: i });
            acc.area += 1;
            acc.sx += x as f64;
            acc.sy += y as f64;
            acc.x0 = acc.x0.min(x);
            acc.x1 = acc.x1.max(x);
            acc.y0 = acc.y0.min(y);
            acc.y1 = acc.y1.max(y);
        }
    }
    let mut found: Vec<Acc> = accs.into_iter().flatten().filter(|a| a.area >= min_area).collect();
    found.sort_by_key(|a| a.first);
    found
        .into_iter()
        .map(|a| {
            let (bw, bh) = (a.x1 - a.x0 + 1, a.y1 - a.y0 + 1);
            SquareRegion {
                centroid: Point2::new(a.sx / a.area as f64, a.sy / a.area as f64),
                bbox: (a.x0, a.y0, bw, bh),
                area: a.area,
                fill_ratio: a.area as f64 / (bw * bh) as f64,
            }
        })
        .collect()
}

fn mean_color_tag(img: &ImageBuffer, mask: &BinaryMask, r: &SquareRegion) -> String {
    let (x0, y0, w, h) = r.bbox;
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            if mask.get(x, y) {
                let px = img.pixel(x, y);
                for c in 0..3 {
                    sum[c] += px[c.min(px.len() - 1)] as u64;
                }
                n += 1;
            }
        }
    }
    let n = n.max(1);
    format!("#{:02x}{:02x}{:02x}", sum[0] / n, sum[1] / n, sum[2] / n)
}

/// Finds square flowers in a reference frame. Flowers are numbered by
/// centroid `(y, x)` order.
pub fn detect_flowers(img: &ImageBuffer, params: &FlowerParams) -> Result<Vec<Flower>> {
    let gray = img.to_gray();
    let mask = threshold_image(&gray, params.threshold)?;
    let mut squares: Vec<SquareRegion> = connected_components(&mask, params.min_area)
        .into_iter()
        .filter(|r| {
            let aspect = r.bbox.2 as f64 / r.bbox.3 as f64;
            (1.0 - params.aspect_tol..=1.0 + params.aspect_tol).contains(&aspect) && r.fill_ratio >= params.fill_min
        })
        .collect();
    if squares.is_empty() {
        return Err(Error::NoFlowers);
    }
    squares.sort_by(|a, b| {
        (a.centroid.y, a.centroid.x)
            .partial_cmp(&(b.centroid.y, b.centroid.x))
            .expect("centroids are finite")
    });
    Ok(squares
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let side = (r.bbox.2 + r.bbox.3) as f64 / 2.0;
            Flower {
                flower_id: i as u32,
                center_well: Point2::new(r.centroid.x + params.well_offset.0, r.centroid.y + params.well_offset.1),
                well_radius: params.well_fraction * side,
                square_side: side,
                color_tag: mean_color_tag(img, &mask, r),
            }
        })
        .collect())
}

/// Manually specified flower, the schema of `flower.manual` entries and of
/// flower files written by `detect-flowers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualFlower {
    pub id: u32,
    pub cx: f64,
    pub cy: f64,
    pub well_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl From<&Flower> for ManualFlower {
    fn from(f: &Flower) -> Self {
        ManualFlower {
            id: f.flower_id,
            cx: f.center_well.x,
            cy: f.center_well.y,
            well_radius: f.well_radius,
            side: Some(f.square_side),
            tag: Some(f.color_tag.clone()),
        }
    }
}

pub fn flowers_from_config(manual: &[ManualFlower]) -> Result<Vec<Flower>> {
    let mut out: Vec<Flower> = Vec::with_capacity(manual.len());
    for m in manual {
        if out.iter().any(|f| f.flower_id == m.id) {
            return Err(Error::Config(format!("duplicate flower id {}", m.id)));
        }
        let flower = Flower {
            flower_id: m.id,
            center_well: Point2::new(m.cx, m.cy),
            well_radius: m.well_radius,
            square_side: m.side.unwrap_or(m.well_radius / DEFAULT_WELL_FRACTION),
            color_tag: m.tag.clone().unwrap_or_default(),
        };
        flower.validate().map_err(|e| Error::Config(e.to_string()))?;
        out.push(flower);
    }
    Ok(out)
}

pub fn write_flowers(flowers: &[Flower]) -> String {
    let manual: Vec<ManualFlower> = flowers.iter().map(ManualFlower::from).collect();
    serde_json::to_string_pretty(&manual).expect("flower serialization is infallible") + "\n"
}

pub fn parse_flowers(text: &str) -> Result<Vec<Flower>> {
    let manual: Vec<ManualFlower> = serde_json::from_str(text)?;
    flowers_from_config(&manual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> ImageBuffer {
        let data = (0..w * h).map(|i| f(i % w, i / w)).collect();
        ImageBuffer::from_raw(w, h, 1, data).unwrap()
    }

    fn rect(x0: usize, y0: usize, w: usize, h: usize) -> impl Fn(usize, usize) -> bool {
        move |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
    }

    #[test]
    fn zero_image_fixed_threshold() {
        let img = gray(8, 8, |_, _| 0);
        assert_eq!(threshold_image(&img, ThresholdMethod::Fixed(1)).unwrap().count(), 0);
    }

    #[test]
    fn bimodal_otsu() {
        let img = gray(20, 10, |x, _| if x < 7 { 10 } else { 240 });
        let t = otsu_threshold(&histogram(&img));
        assert!(t > 10 && t < 240);
        let mask = threshold_image(&img, ThresholdMethod::Otsu).unwrap();
        assert_eq!(mask.count(), 13 * 10);
        assert!(mask.get(7, 0) && !mask.get(6, 0));
    }

    #[test]
    fn rejects_rgb_threshold() {
        let img = ImageBuffer::new(2, 2, 3).unwrap();
        assert!(threshold_image(&img, ThresholdMethod::Otsu).is_err());
    }

    /// Textbook Otsu: scan every threshold, compute class weights and
    /// means from scratch, keep the first maximum.
    fn otsu_oracle(img: &ImageBuffer) -> u16 {
        let px: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
        let n = px.len() as f64;
        let mut best = (256u16, 0.0);
        for t in 0..=255u16 {
            let lo: Vec<f64> = px.iter().copied().filter(|&v| v < t as f64).collect();
            let hi: Vec<f64> = px.iter().copied().filter(|&v| v >= t as f64).collect();
            if lo.is_empty() || hi.is_empty() {
                continue;
            }
            let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let var = w0 * w1 * (m0 - m1).powi(2);
            if var > best.1 * (1.0 + 1e-12) {
                best = (t, var);
            }
        }
        best.0
    }

    #[test]
    fn otsu_matches_exhaustive_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let img = gray(24, 24, |_, _| 0);
            let data: Vec<u8> = img.data().iter().map(|_| rng.random::<u8>()).collect();
            let img = ImageBuffer::from_raw(24, 24, 1, data).unwrap();
            assert_eq!(otsu_threshold(&histogram(&img)), otsu_oracle(&img));
        }
    }

    #[test]
    fn single_block_region() {
        let inside = rect(5, 7, 10, 10);
        let mask = BinaryMask { width: 30, height: 30, data: (0..900).map(|i| inside(i % 30, i / 30)).collect() };
        let regions = connected_components(&mask, 1);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].fill_ratio, 1.0);
        assert_eq!(regions[0].area, 100);
        assert_eq!(regions[0].centroid, Point2::new(9.5, 11.5));
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let mask = BinaryMask { width: 2, height: 2, data: vec![true, false, false, true] };
        assert_eq!(connected_components(&mask, 1).len(), 2);
    }

    fn flood_fill_count(mask: &BinaryMask) -> usize {
        let mut seen = vec![false; mask.data.len()];
        let mut count = 0;
        for start in 0..mask.data.len() {
            if !mask.data[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % mask.width) as i64, (i / mask.width) as i64);
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= mask.width as i64 || ny >= mask.height as i64 {
                        continue;
                    }
                    let j = ny as usize * mask.width + nx as usize;
                    if mask.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn component_count_matches_flood_fill() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for density in [0.2, 0.45, 0.6] {
            let mask = BinaryMask { width: 40, height: 33, data: (0..40 * 33).map(|_| rng.random_bool(density)).collect() };
            assert_eq!(connected_components(&mask, 1).len(), flood_fill_count(&mask));
        }
    }

    #[test]
    fn aspect_filter_keeps_square_only() {
        let sq = rect(10, 10, 40, 40);
        let bar = rect(70, 20, 90, 30);
        let img = gray(200, 80, |x, y| if sq(x, y) || bar(x, y) { 230 } else { 60 });
        let flowers = detect_flowers(&img, &FlowerParams::default()).unwrap();
        assert_eq!(flowers.len(), 1);
        assert_eq!(flowers[0].center_well, Point2::new(29.5, 29.5));
        assert_eq!(flowers[0].square_side, 40.0);
        assert!((flowers[0].well_radius - 3.2).abs() < 1e-12);
    }

    #[test]
    fn blue_and_white_flowers_are_distinct() {
        let blue = rect(20, 30, 60, 60);
        let white = rect(120, 30, 60, 60);
        let data: Vec<u8> = (0..200 * 120)
            .flat_map(|i| {
                let (x, y) = (i % 200, i / 200);
                if blue(x, y) {
                    [170, 200, 255]
                } else if white(x, y) {
                    [245, 245, 245]
                } else {
                    [110, 110, 110]
                }
            })
            .collect();
        let img = ImageBuffer::from_raw(200, 120, 3, data).unwrap();
        let flowers = detect_flowers(&img, &FlowerParams::default()).unwrap();
        assert_eq!(flowers.len(), 2);
        assert_eq!((flowers[0].flower_id, flowers[1].flower_id), (0, 1));
        assert!(flowers[0].center_well.x < flowers[1].center_well.x);
        assert_ne!(flowers[0].color_tag, flowers[1].color_tag);
    }

    #[test]
    fn no_flowers_is_an_error() {
        let img = gray(50, 50, |_, _| 100);
        assert!(matches!(detect_flowers(&img, &FlowerParams::default()), Err(Error::NoFlowers)));
    }

    #[test]
    fn translation_equivariance() {
        let scene = |dx: usize, dy: usize| {
            let a = rect(20 + dx, 15 + dy, 30, 30);
            let b = rect(90 + dx, 50 + dy, 36, 34);
            gray(180, 140, move |x, y| if a(x, y) || b(x, y) { 220 } else { 70 })
        };
        let base = detect_flowers(&scene(0, 0), &FlowerParams::default()).unwrap();
        let moved = detect_flowers(&scene(7, 11), &FlowerParams::default()).unwrap();
        assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            assert_eq!(b.center_well.x - a.center_well.x, 7.0);
            assert_eq!(b.center_well.y - a.center_well.y, 11.0);
        }
    }

    #[test]
    fn manual_flowers() {
        assert!(flowers_from_config(&[]).unwrap().is_empty());
        let m = vec![
            ManualFlower { id: 0, cx: 10.0, cy: 20.0, well_radius: 4.0, side: None, tag: None },
            ManualFlower { id: 1, cx: 50.0, cy: 20.0, well_radius: 4.0, side: Some(50.0), tag: Some("white".into()) },
        ];
        let flowers = flowers_from_config(&m).unwrap();
        assert_eq!(flowers.len(), 2);
        assert_eq!(flowers[0].square_side, 50.0);
        let dup = vec![m[0].clone(), m[0].clone()];
        assert!(flowers_from_config(&dup).is_err());
    }

    #[test]
    fn detect_write_read_cycle() {
        let a = rect(20, 15, 30, 30);
        let img = gray(100, 80, |x, y| if a(x, y) { 220 } else { 70 });
        let detected = detect_flowers(&img, &FlowerParams::default()).unwrap();
        assert_eq!(parse_flowers(&write_flowers(&detected)).unwrap(), detected);
    }
}
