//! On-disk and stream formats: PPM rasters, NDJSON pose and event streams,
//! CSV dataset indices and embedding tables.

mod dataset;
mod embeddings;
mod events;
mod ppm;
mod poses;
mod tracks;

pub use dataset::{parse_dataset_index, write_dataset_index, DatasetRecord};
pub use embeddings::{read_embeddings, write_embeddings, EmbeddingTable};
pub use events::{event_line, parse_event_stream, sort_events, write_event_stream};
pub use poses::{parse_pose_stream, pose_line, write_pose_stream, PoseStreamReader};
pub use ppm::{parse_ppm, read_ppm, write_ppm, write_ppm_file};
pub use tracks::{parse_tracks, write_tracks};

