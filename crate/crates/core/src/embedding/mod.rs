//! Appearance features: flattened pixels, PCA projections and learned
//! triplet embeddings.

mod features;
mod linear;
mod pca;
mod triplet;

pub use features::{image_to_feature, pooled_feature, FeatureExtractor};
pub use linear::{train_embedder, EpochLog, LinearEmbedder, Masks, TrainConfig, TrainLog, TrainSample};
pub use pca::{fit_pca, PcaModel};
pub use triplet::{pairwise_distances, select_triplets, triplet_loss, triplet_loss_grad, Triplet, TripletStats};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crop::{augment_rotation, CropRegion};
use crate::error::{Error, Result};
use crate::formats::{DatasetRecord, EmbeddingTable};
use crate::model::{EmbeddingVector, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pca,
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderInput {
    Pixels,
    Pca,
}

impl EmbedderInput {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pixels => "pixels",
            Self::Pca => "pca",
        }
    }
}

impl std::str::FromStr for EmbedderInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixels" => Ok(Self::Pixels),
            "pca" => Ok(Self::Pca),
            other => Err(Error::Config(format!("unknown embedder input '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub pool: usize,
    pub pca_variance: f64,
    pub input: EmbedderInput,
    /// Variance kept by the projection feeding the embedder.
    pub input_variance: f64,
    /// Rotated copies added per training image (unaligned crops only).
    pub augment_copies: usize,
    pub train: TrainConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { pool: 5, pca_variance: 0.95, input: EmbedderInput::Pca, input_variance: 0.99, augment_copies: 4, train: TrainConfig::default() }
    }
}

/// A fitted feature pipeline, serialisable as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub variant: CropRegion,
    pub features: FeatureExtractor,
    pub pca: Option<PcaModel>,
    pub embedder: Option<LinearEmbedder>,
    pub train_log: Option<TrainLog>,
}

impl ModelBundle {
    pub fn output_dim(&self) -> usize {
        match (&self.embedder, &self.pca) {
            (Some(e), _) => e.out_dim,
            (None, Some(p)) => p.n_components(),
            (None, None) => self.features.dim(),
        }
    }

    pub fn embed(&self, img: &ImageBuffer) -> Result<EmbeddingVector> {
        let mut v = self.features.extract(img)?;
        if let Some(p) = &self.pca {
            v = p.project(&v)?;
        }
        if let Some(e) = &self.embedder {
            return Ok(EmbeddingVector { values: e.forward(&v)?, normalized: true });
        }
        Ok(EmbeddingVector { values: v, normalized: false })
    }

    pub fn embed_all(&self, images: &[(String, ImageBuffer)]) -> Result<EmbeddingTable> {
        let rows: Vec<Result<(String, EmbeddingVector)>> =
            images.par_iter().map(|(r, img)| self.embed(img).map(|e| (r.clone(), e))).collect();
        rows.into_iter().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Anything that maps an image reference (and optionally its pixels) to a vector.
pub enum Extractor<'a> {
    Model(&'a ModelBundle),
    External(&'a EmbeddingTable),
}

impl Extractor<'_> {
    pub fn embed(&self, image_ref: &str, img: Option<&ImageBuffer>) -> Result<EmbeddingVector> {
        match self {
            Extractor::Model(m) => m.embed(img.ok_or_else(|| Error::MissingEmbedding(image_ref.to_string()))?),
            Extractor::External(t) => t.get(image_ref).cloned().ok_or_else(|| Error::MissingEmbedding(image_ref.to_string())),
        }
    }
}

fn check_images<'a>(images: &[(&'a DatasetRecord, &'a ImageBuffer)]) -> Result<&'a ImageBuffer> {
    images.first().map(|(_, i)| *i).ok_or_else(|| Error::invalid("no training images"))
}

/// Fits the PCA baseline on the training images.
pub fn fit_pca_model(
    images: &[(&DatasetRecord, &ImageBuffer)],
    variant: CropRegion,
    opts: &FitOptions,
) -> Result<ModelBundle> {
    let first = check_images(images)?;
    let features = FeatureExtractor::for_image(first, opts.pool);
    let data = images.par_iter().map(|(_, img)| features.extract(img)).collect::<Result<Vec<_>>>()?;
    let pca = fit_pca(&data, opts.pca_variance)?;
    log::info!("pca: {} components for {:?}", pca.n_components(), variant);
    Ok(ModelBundle { kind: ModelKind::Pca, variant, features, pca: Some(pca), embedder: None, train_log: None })
}

/// Fits the triplet embedder, optionally on top of a PCA projection, with
/// random-rotation copies for unaligned crops.
pub fn fit_triplet_model(
    images: &[(&DatasetRecord, &ImageBuffer)],
    variant: CropRegion,
    opts: &FitOptions,
) -> Result<ModelBundle> {
    let first = check_images(images)?;
    let features = FeatureExtractor::for_image(first, opts.pool);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.train.seed ^ 0x5eed);
    let copies = if variant == CropRegion::Unaligned { opts.augment_copies } else { 0 };
    // Angles are drawn sequentially so the result does not depend on thread count.
    let mut jobs: Vec<(usize, Option<f64>)> = Vec::with_capacity(images.len() * (copies + 1));
    for i in 0..images.len() {
        jobs.push((i, None));
        for _ in 0..copies {
            jobs.push((i, Some(rng.random_range(0.0..std::f64::consts::TAU))));
        }
    }
    let raw = jobs
        .par_iter()
        .map(|&(i, angle)| match angle {
            None => features.extract(images[i].1),
            Some(a) => features.extract(&augment_rotation(images[i].1, a)?),
        })
        .collect::<Result<Vec<_>>>()?;
    let pca = match opts.input {
        EmbedderInput::Pca => Some(fit_pca(&raw, opts.input_variance)?),
        EmbedderInput::Pixels => None,
    };
    let samples: Vec<TrainSample> = jobs
        .iter()
        .zip(raw)
        .map(|(&(i, _), f)| {
            let feature = match &pca {
                Some(p) => p.project(&f),
                None => Ok(f),
            }?;
            let r = images[i].0;
            Ok(TrainSample { feature, label: r.id_label.clone(), track: r.track_id })
        })
        .collect::<Result<_>>()?;
    let (embedder, log) = train_embedder(&samples, &opts.train)?;
    log::info!("triplet {:?}: best epoch {} loss {:.4}", variant, log.best_epoch, log.best_loss);
    Ok(ModelBundle { kind: ModelKind::Triplet, variant, features, pca, embedder: Some(embedder), train_log: Some(log) })
}
