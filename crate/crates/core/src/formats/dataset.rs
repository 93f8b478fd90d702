//! Dataset index CSV with header `image,id,track,time`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(rename = "image")]
    pub image_ref: String,
    #[serde(rename = "id")]
    pub id_label: String,
    #[serde(rename = "track")]
    pub track_id: u64,
    #[serde(rename = "time")]
    pub time_key: u64,
}

const HEADER: [&str; 4] = ["image", "id", "track", "time"];

pub fn parse_dataset_index(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header 'image,id,track,time', got '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DatasetRecord>().enumerate() {
        let line = i + 2;
        let rec = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.id_label.is_empty() {
            return Err(Error::Parse { line, message: "empty id label".into() });
        }
        if !seen.insert(rec.image_ref.clone()) {
            return Err(Error::Parse { line, message: format!("duplicate image ref '{}'", rec.image_ref) });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_dataset_index(records: &[DatasetRecord]) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wtr.write_record(HEADER)?;
    for r in records {
        wtr.serialize(r)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
