//! Synthetic flower-patch scenes: painted bees with known poses, tracks,
//! visits and identities.

mod config;
mod export;
mod render;
mod world;

pub use config::{ScriptedPass, WorldConfig};
pub use export::{crop_name, CropExport, CropPlan};
pub use render::{dot_radius, RenderOptions, ABDOMEN_SHAPE, HEAD_SHAPE, THORAX_SHAPE};
pub use world::{
    generate_world, paint_codes, BeeState, PaintDot, Pass, SyntheticBee, World, ABDOMEN_ALONG, FLOWER_COLORS, HEAD_ALONG,
    NECK_ALONG, PALETTE,
};
