//! Flat dotted-key JSON configuration shared by every subcommand.
//!
//! Layering is defaults, then the config file, then command-line flags.

use serde_json::{json, Map, Value};

use crate::crop::CropGeometry;
use crate::embedding::FitOptions;
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_GALLERIES, DEFAULT_NEGATIVES};
use crate::flowers::{FlowerParams, ManualFlower, ThresholdMethod};
use crate::splits::{CLOSED_TRAIN_FRAC, OPEN_ID_FRAC, OPEN_REF_FRAC};
use crate::tracking::TrackerParams;
use crate::visits::{VisitParams, VisitRadius};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub train_frac: f64,
    pub id_frac: f64,
    pub ref_frac: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self { train_frac: CLOSED_TRAIN_FRAC, id_frac: OPEN_ID_FRAC, ref_frac: OPEN_REF_FRAC }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub galleries: usize,
    pub negatives: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { galleries: DEFAULT_GALLERIES, negatives: DEFAULT_NEGATIVES }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssayConfig {
    pub flower: FlowerParams,
    /// Explicit flowers; when set, detection is bypassed.
    pub manual_flowers: Option<Vec<ManualFlower>>,
    pub track: TrackerParams,
    pub visit: VisitParams,
    pub crop: CropGeometry,
    pub fit: FitOptions,
    pub split: SplitParams,
    pub eval: EvalParams,
    pub seed: u64,
}

pub const KEYS: &[&str] = &[
    "seed",
    "flower.threshold",
    "flower.min_area_px2",
    "flower.aspect_tol",
    "flower.fill_min",
    "flower.well_fraction",
    "flower.well_offset_x",
    "flower.well_offset_y",
    "flower.manual",
    "track.gate_px",
    "track.max_gap_frames",
    "visit.r_visit_px",
    "visit.r_visit_well_multiple",
    "visit.gap_max_frames",
    "visit.min_len_frames",
    "visit.overlap_min_frames",
    "crop.full_w",
    "crop.full_h",
    "crop.anchor_x",
    "crop.anchor_y",
    "crop.split_row",
    "crop.unaligned_side",
    "feature.pool",
    "train.out_dim",
    "train.margin",
    "train.learning_rate",
    "train.max_epochs",
    "train.patience",
    "train.dropout_in",
    "train.dropout_out",
    "train.batch_ids",
    "train.images_per_id",
    "train.val_frac",
    "train.input",
    "train.input_variance",
    "train.pca_variance",
    "train.augment_copies",
    "split.train_frac",
    "split.id_frac",
    "split.ref_frac",
    "eval.galleries",
    "eval.negatives",
];

fn real(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| Error::Config(format!("{key}: expected a number, got {v}")))
}

fn count(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| Error::Config(format!("{key}: expected a non-negative integer, got {v}")))
}

fn range(key: &str, x: f64, lo: f64, hi: f64, lo_open: bool, hi_open: bool) -> Result<f64> {
    let ok_lo = if lo_open { x > lo } else { x >= lo };
    let ok_hi = if hi_open { x < hi } else { x <= hi };
    if ok_lo && ok_hi {
        Ok(x)
    } else {
        let (a, b) = (if lo_open { "(" } else { "[" }, if hi_open { ")" } else { "]" });
        Err(Error::Config(format!("{key}: {x} is outside {a}{lo}, {hi}{b}")))
    }
}

fn positive(key: &str, v: &Value) -> Result<f64> {
    range(key, real(key, v)?, 0.0, f64::INFINITY, true, true)
}

fn positive_count(key: &str, v: &Value) -> Result<u64> {
    let n = count(key, v)?;
    if n == 0 {
        return Err(Error::Config(format!("{key}: must be at least 1")));
    }
    Ok(n)
}

impl AssayConfig {
    /// Sets one dotted key, checking its type and range.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "seed" => self.seed = count(key, v)?,
            "flower.threshold" => {
                self.flower.threshold = match v {
                    Value::String(s) if s == "otsu" => ThresholdMethod::Otsu,
                    Value::Number(_) => {
                        let t = count(key, v)?;
                        if t > 255 {
                            return Err(Error::Config(format!("{key}: {t} is outside [0, 255]")));
                        }
                        ThresholdMethod::Fixed(t as u8)
                    }
                    _ => return Err(Error::Config(format!("{key}: expected \"otsu\" or an integer, got {v}"))),
                }
            }
            "flower.min_area_px2" => self.flower.min_area = positive_count(key, v)? as usize,
            "flower.aspect_tol" => self.flower.aspect_tol = range(key, real(key, v)?, 0.0, 1.0, false, true)?,
            "flower.fill_min" => self.flower.fill_min = range(key, real(key, v)?, 0.0, 1.0, true, false)?,
            "flower.well_fraction" => self.flower.well_fraction = range(key, real(key, v)?, 0.0, 0.5, true, false)?,
            "flower.well_offset_x" => self.flower.well_offset.0 = real(key, v)?,
            "flower.well_offset_y" => self.flower.well_offset.1 = real(key, v)?,
            "flower.manual" => {
                let list: Vec<ManualFlower> =
                    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{key}: {e}")))?;
                crate::flowers::flowers_from_config(&list)?;
                self.manual_flowers = Some(list);
            }
            "track.gate_px" => self.track.gate_px = positive(key, v)?,
            "track.max_gap_frames" => self.track.max_gap = count(key, v)?,
            "visit.r_visit_px" => self.visit.radius = VisitRadius::Pixels(positive(key, v)?),
            "visit.r_visit_well_multiple" => self.visit.radius = VisitRadius::WellMultiple(positive(key, v)?),
            "visit.gap_max_frames" => self.visit.gap_max = count(key, v)?,
            "visit.min_len_frames" => self.visit.min_len = positive_count(key, v)?,
            "visit.overlap_min_frames" => self.visit.overlap_min = positive_count(key, v)?,
            "crop.full_w" => self.crop.full_w = positive_count(key, v)? as usize,
            "crop.full_h" => self.crop.full_h = positive_count(key, v)? as usize,
            "crop.anchor_x" => self.crop.anchor_x = real(key, v)?,
            "crop.anchor_y" => self.crop.anchor_y = real(key, v)?,
            "crop.split_row" => self.crop.split_row = positive_count(key, v)? as usize,
            "crop.unaligned_side" => self.crop.unaligned_side = positive_count(key, v)? as usize,
            "feature.pool" => self.fit.pool = positive_count(key, v)? as usize,
            "train.out_dim" => self.fit.train.out_dim = positive_count(key, v)? as usize,
            "train.margin" => self.fit.train.margin = positive(key, v)?,
            "train.learning_rate" => self.fit.train.learning_rate = positive(key, v)?,
            "train.max_epochs" => self.fit.train.max_epochs = positive_count(key, v)? as usize,
            "train.patience" => self.fit.train.patience = positive_count(key, v)? as usize,
            "train.dropout_in" => self.fit.train.dropout_in = range(key, real(key, v)?, 0.0, 1.0, false, true)?,
            "train.dropout_out" => self.fit.train.dropout_out = range(key, real(key, v)?, 0.0, 1.0, false, true)?,
            "train.batch_ids" => self.fit.train.batch_ids = range(key, count(key, v)? as f64, 2.0, f64::INFINITY, false, true)? as usize,
            "train.images_per_id" => self.fit.train.images_per_id = range(key, count(key, v)? as f64, 2.0, f64::INFINITY, false, true)? as usize,
            "train.val_frac" => self.fit.train.val_frac = range(key, real(key, v)?, 0.0, 1.0, false, true)?,
            "train.input" => {
                let s = v.as_str().ok_or_else(|| Error::Config(format!("{key}: expected a string, got {v}")))?;
                self.fit.input = s.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?;
            }
            "train.input_variance" => self.fit.input_variance = range(key, real(key, v)?, 0.0, 1.0, true, false)?,
            "train.pca_variance" => self.fit.pca_variance = range(key, real(key, v)?, 0.0, 1.0, true, false)?,
            "train.augment_copies" => self.fit.augment_copies = count(key, v)? as usize,
            "split.train_frac" => self.split.train_frac = range(key, real(key, v)?, 0.0, 1.0, true, true)?,
            "split.id_frac" => self.split.id_frac = range(key, real(key, v)?, 0.0, 1.0, true, true)?,
            "split.ref_frac" => self.split.ref_frac = range(key, real(key, v)?, 0.0, 1.0, true, true)?,
            "eval.galleries" => self.eval.galleries = positive_count(key, v)? as usize,
            "eval.negatives" => self.eval.negatives = positive_count(key, v)? as usize,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Overlays a JSON object of dotted keys onto this configuration.
    pub fn apply(&mut self, obj: &Map<String, Value>) -> Result<()> {
        if obj.contains_key("visit.r_visit_px") && obj.contains_key("visit.r_visit_well_multiple") {
            return Err(Error::Config("set only one of visit.r_visit_px and visit.r_visit_well_multiple".into()));
        }
        for (k, v) in obj {
            self.set(k, v)?;
        }
        self.validate()
    }

    /// Checks constraints that span several keys.
    pub fn validate(&self) -> Result<()> {
        self.crop.validate()?;
        self.fit.train.validate()?;
        if self.eval.negatives < 1 {
            return Err(Error::Config("eval.negatives must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("seed", json!(self.seed));
        put(
            "flower.threshold",
            match self.flower.threshold {
                ThresholdMethod::Otsu => json!("otsu"),
                ThresholdMethod::Fixed(t) => json!(t),
            },
        );
        put("flower.min_area_px2", json!(self.flower.min_area));
        put("flower.aspect_tol", json!(self.flower.aspect_tol));
        put("flower.fill_min", json!(self.flower.fill_min));
        put("flower.well_fraction", json!(self.flower.well_fraction));
        put("flower.well_offset_x", json!(self.flower.well_offset.0));
        put("flower.well_offset_y", json!(self.flower.well_offset.1));
        if let Some(manual) = &self.manual_flowers {
            put("flower.manual", serde_json::to_value(manual).expect("flowers serialise"));
        }
        put("track.gate_px", json!(self.track.gate_px));
        put("track.max_gap_frames", json!(self.track.max_gap));
        match self.visit.radius {
            VisitRadius::Pixels(r) => put("visit.r_visit_px", json!(r)),
            VisitRadius::WellMultiple(r) => put("visit.r_visit_well_multiple", json!(r)),
        }
        put("visit.gap_max_frames", json!(self.visit.gap_max));
        put("visit.min_len_frames", json!(self.visit.min_len));
        put("visit.overlap_min_frames", json!(self.visit.overlap_min));
        put("crop.full_w", json!(self.crop.full_w));
        put("crop.full_h", json!(self.crop.full_h));
        put("crop.anchor_x", json!(self.crop.anchor_x));
        put("crop.anchor_y", json!(self.crop.anchor_y));
        put("crop.split_row", json!(self.crop.split_row));
        put("crop.unaligned_side", json!(self.crop.unaligned_side));
        put("feature.pool", json!(self.fit.pool));
        let t = &self.fit.train;
        put("train.out_dim", json!(t.out_dim));
        put("train.margin", json!(t.margin));
        put("train.learning_rate", json!(t.learning_rate));
        put("train.max_epochs", json!(t.max_epochs));
        put("train.patience", json!(t.patience));
        put("train.dropout_in", json!(t.dropout_in));
        put("train.dropout_out", json!(t.dropout_out));
        put("train.batch_ids", json!(t.batch_ids));
        put("train.images_per_id", json!(t.images_per_id));
        put("train.val_frac", json!(t.val_frac));
        put("train.input", json!(self.fit.input.name()));
        put("train.input_variance", json!(self.fit.input_variance));
        put("train.pca_variance", json!(self.fit.pca_variance));
        put("train.augment_copies", json!(self.fit.augment_copies));
        put("split.train_frac", json!(self.split.train_frac));
        put("split.id_frac", json!(self.split.id_frac));
        put("split.ref_frac", json!(self.split.ref_frac));
        put("eval.galleries", json!(self.eval.galleries));
        put("eval.negatives", json!(self.eval.negatives));
        Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serialises") + "\n"
    }
}

pub fn parse_config(text: &str) -> Result<AssayConfig> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    let mut cfg = AssayConfig::default();
    cfg.apply(obj)?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<std::path::Path>) -> Result<AssayConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
