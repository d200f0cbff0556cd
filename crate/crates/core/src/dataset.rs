//! Query-bundle files: JSONL metadata plus image embeddings in an F4E file.
//!
//! One JSON object per line:
//!
//! ```json
//! {"image_id": "img-0001", "embedding_id": "img-0001",
//!  "dense_pred_text": "...", "sparse_pred_text": "a, b",
//!  "gt_caption_ids": ["c0001"], "gt_item_ids": ["item-a", "item-b"],
//!  "gt_sparse_caption": "a, b"}
//! ```
//!
//! `gt_caption_ids` is the ground truth against a dense index and
//! `gt_item_ids` against a sparse (per-item) index; the latter falls back to
//! the former when absent. `embedding_id` defaults to `image_id`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::encoder::load_embedding_file;
use crate::error::{Error, Result};
use crate::index::CaptionKind;
use crate::retrieval::QueryBundle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_pred_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_pred_text: Option<String>,
    #[serde(default)]
    pub gt_caption_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_item_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_sparse_caption: Option<String>,
}

impl BundleRecord {
    pub fn embedding_key(&self) -> &str {
        self.embedding_id.as_deref().unwrap_or(&self.image_id)
    }

    pub fn ground_truth(&self, kind: CaptionKind) -> &[String] {
        match kind {
            CaptionKind::Sparse if !self.gt_item_ids.is_empty() => &self.gt_item_ids,
            _ => &self.gt_caption_ids,
        }
    }
}

pub fn read_bundle_records(path: &Path) -> Result<Vec<BundleRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BundleRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_bundle_records(records: &[BundleRecord], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Joins bundle records with their image embeddings, picking the ground truth for `kind`.
pub fn resolve_bundles(
    records: &[BundleRecord],
    images: &[(String, EmbeddingVector)],
    kind: CaptionKind,
) -> Result<Vec<QueryBundle>> {
    let by_id: HashMap<&str, &EmbeddingVector> =
        images.iter().map(|(id, v)| (id.as_str(), v)).collect();
    records
        .iter()
        .map(|r| {
            let e_img = by_id
                .get(r.embedding_key())
                .ok_or_else(|| Error::MissingImageEmbedding(r.embedding_key().to_string()))?;
            Ok(QueryBundle {
                image_id: r.image_id.clone(),
                e_img: (*e_img).clone(),
                dense_pred_text: r.dense_pred_text.clone(),
                sparse_pred_text: r.sparse_pred_text.clone(),
                gt_caption_ids: r.ground_truth(kind).to_vec(),
                gt_sparse_caption: r.gt_sparse_caption.clone(),
            })
        })
        .collect()
}

pub fn load_bundles(bundles: &Path, images: &Path, kind: CaptionKind) -> Result<Vec<QueryBundle>> {
    let records = read_bundle_records(bundles)?;
    let images = load_embedding_file(images)?;
    resolve_bundles(&records, &images, kind)
}
