//! Embedding table CSV: `image,f0,...,f{d-1}`.
//!
//! Reals are written in shortest round-trip form, so a write/read cycle is
//! exact. Norms are not checked here.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::EmbeddingVector;

pub type EmbeddingTable = BTreeMap<String, EmbeddingVector>;

pub fn read_embeddings(text: &str) -> Result<EmbeddingTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.first() != Some(&"image") || cols.len() < 2 {
        return Err(Error::Parse { line: 1, message: "expected header 'image,f0,...'".into() });
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(Error::Parse { line: 1, message: format!("column {} should be 'f{i}', got '{c}'", i + 1) });
        }
    }
    let dim = cols.len() - 1;
    let mut out = EmbeddingTable::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.len() != dim + 1 {
            return Err(Error::Parse { line, message: format!("expected {} columns, got {}", dim + 1, row.len()) });
        }
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad real '{v}': {e}") }))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(row[0].to_string(), EmbeddingVector::new(values, false)).is_some() {
            return Err(Error::Parse { line, message: format!("duplicate image ref '{}'", &row[0]) });
        }
    }
    Ok(out)
}

pub fn write_embeddings(table: &EmbeddingTable) -> Result<String> {
    let dim = table.values().next().map_or(0, EmbeddingVector::dim);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header)?;
    for (name, v) in table {
        if v.dim() != dim {
            return Err(Error::Dimension { expected: dim, got: v.dim() });
        }
        let mut row = vec![name.clone()];
        row.extend(v.values.iter().map(|x| format!("{x:?}")));
        wtr.write_record(&row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EMBEDDING_DIM;

    fn header() -> String {
        let mut h = "image".to_string();
        for i in 0..EMBEDDING_DIM {
            h.push_str(&format!(",f{i}"));
        }
        h
    }

    #[test]
    fn unit_vector_row() {
        let mut text = header() + "\nimg_a";
        for i in 0..EMBEDDING_DIM {
            text.push_str(if i == 0 { ",1" } else { ",0" });
        }
        text.push('\n');
        let t = read_embeddings(&text).unwrap();
        assert_eq!(t["img_a"].dim(), EMBEDDING_DIM);
        assert_eq!(t["img_a"].values[0], 1.0);
    }

    #[test]
    fn empty_table() {
        assert!(read_embeddings(&(header() + "\n")).unwrap().is_empty());
    }

    #[test]
    fn wrong_column_count() {
        let text = "image,f0,f1\na,1\n";
        assert!(matches!(read_embeddings(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip_is_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut t = EmbeddingTable::new();
        for i in 0..5 {
            let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-8..3))).collect();
            t.insert(format!("im{i}"), EmbeddingVector::new(v, false));
        }
        assert_eq!(read_embeddings(&write_embeddings(&t).unwrap()).unwrap(), t);
    }
}
