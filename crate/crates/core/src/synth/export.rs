use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::render::RenderOptions;
use super::world::{mix, World};
use crate::crop::{crop_for_pose, CropGeometry, CropRegion};
use crate::error::{Error, Result};
use crate::formats::DatasetRecord;
use crate::model::{ImageBuffer, Point2, Pose};

/// One planned crop: which pass and frame it comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct CropPlan {
    pub record: DatasetRecord,
    pub pass: usize,
    pub frame: u64,
}

#[derive(Debug, Clone)]
pub struct CropExport {
    pub records: Vec<DatasetRecord>,
    /// `images[v][i]` is the crop of `records[i]` for `variants[v]`.
    pub images: Vec<Vec<ImageBuffer>>,
    pub variants: Vec<CropRegion>,
    pub failures: usize,
}

pub fn crop_name(track: u64, frame: u64) -> String {
    format!("t{track:05}_f{frame:06}.ppm")
}

impl World {
    /// Crop frames per track, evenly spread over the dwell frames.
    pub fn crop_plan(&self) -> Vec<CropPlan> {
        let cfg = &self.config;
        let mut extra = vec![false; self.passes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0xC0FF_EE00));
        for i in rand::seq::index::sample(&mut rng, self.passes.len(), cfg.extra_crop_tracks.min(self.passes.len())).iter() {
            extra[i] = true;
        }
        let mut out = Vec::new();
        for (i, p) in self.passes.iter().enumerate() {
            let dwell = p.dwell_frames();
            let k = (cfg.crops_per_track + extra[i] as usize).min(dwell.len());
            for j in 0..k {
                let idx = if k == 1 { 0 } else { (j * (dwell.len() - 1) + (k - 1) / 2) / (k - 1) };
                let frame = dwell[idx];
                out.push(CropPlan {
                    record: DatasetRecord {
                        image_ref: crop_name(p.track_id, frame),
                        id_label: self.bees[p.bee].id_label.clone(),
                        track_id: p.track_id,
                        time_key: frame,
                    },
                    pass: i,
                    frame,
                });
            }
        }
        out
    }

    pub fn dataset_index(&self) -> Vec<DatasetRecord> {
        self.crop_plan().into_iter().map(|c| c.record).collect()
    }

    /// Observed pose of one pass at one frame.
    pub fn observed_pose(&self, pass: usize, frame: u64) -> Option<Pose> {
        self.observed(frame).into_iter().find(|(s, _)| s.pass == pass).map(|(_, p)| p)
    }

    /// Renders the window a crop needs and cuts the crop from it.
    pub fn render_crop(&self, plan: &CropPlan, region: CropRegion, geom: &CropGeometry) -> Result<ImageBuffer> {
        let pose = self
            .observed_pose(plan.pass, plan.frame)
            .ok_or_else(|| Error::World(format!("pass {} is not visible at frame {}", plan.pass, plan.frame)))?;
        let waist = pose.waist.ok_or_else(|| Error::Alignment("waist keypoint is required".into()))?;
        let reach = match region {
            CropRegion::Unaligned => geom.unaligned_side as i64 / 2 + 2,
            _ => {
                let dx = geom.anchor_x.max(geom.full_w as f64 - geom.anchor_x);
                let dy = geom.anchor_y.max(geom.full_h as f64 - geom.anchor_y);
                dx.hypot(dy).ceil() as i64 + 3
            }
        };
        let (x0, y0) = (waist.x.round() as i64 - reach, waist.y.round() as i64 - reach);
        let side = (2 * reach + 1) as usize;
        let img = self.render_region(plan.frame, x0, y0, side, side, RenderOptions::default());
        let shift = |p: Option<Point2>| p.map(|p| Point2::new(p.x - x0 as f64, p.y - y0 as f64));
        let local = Pose { head: shift(pose.head), neck: shift(pose.neck), waist: shift(pose.waist), abdomen: shift(pose.abdomen), score: pose.score };
        crop_for_pose(&img, &local, geom, region)
    }

    /// Renders every planned crop for each variant, in parallel. Alignment
    /// failures are counted and the affected records dropped.
    pub fn export_crops(&self, variants: &[CropRegion], geom: &CropGeometry) -> Result<CropExport> {
        geom.validate()?;
        let plan = self.crop_plan();
        let rendered: Vec<Result<Vec<ImageBuffer>>> = plan
            .par_iter()
            .map(|p| variants.iter().map(|&v| self.render_crop(p, v, geom)).collect())
            .collect();
        let mut records = Vec::new();
        let mut images: Vec<Vec<ImageBuffer>> = vec![Vec::new(); variants.len()];
        let mut failures = 0;
        for (p, r) in plan.into_iter().zip(rendered) {
            match r {
                Ok(imgs) => {
                    records.push(p.record);
                    for (slot, img) in images.iter_mut().zip(imgs) {
                        slot.push(img);
                    }
                }
                Err(Error::Alignment(msg)) => {
                    log::warn!("crop {} skipped: {msg}", p.record.image_ref);
                    failures += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(CropExport { records, images, variants: variants.to_vec(), failures })
    }
}
