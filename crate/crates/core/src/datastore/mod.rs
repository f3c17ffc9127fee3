//! Dataset manifests, per-user splitting and the run journal.

pub mod journal;
mod split;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use split::{split, SplitOutcome, SplitSpec};

use crate::backend::ImageRef;
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};

/// One image with the emotion a particular user reported for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: String,
    pub image: ImageRef,
    pub user_id: String,
    pub label: EmotionLabel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    sample_id: String,
    image: String,
    user_id: String,
    label: String,
}

/// Parses line-delimited JSON manifest records. Row numbers in errors are
/// 1-based line numbers; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let row_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("manifest row {row_no}, column {}: {e}", e.column()))
        })?;
        let label: EmotionLabel = row.label.parse().map_err(|_| {
            Error::Data(format!(
                "manifest row {row_no}: label {:?} is not one of the target emotions",
                row.label
            ))
        })?;
        if row.sample_id.is_empty() || row.user_id.is_empty() || row.image.is_empty() {
            return Err(Error::Data(format!("manifest row {row_no}: empty field")));
        }
        let key = (row.sample_id.clone(), row.user_id.clone());
        if let Some(first) = seen.insert(key, row_no) {
            return Err(Error::Data(format!(
                "manifest rows {first} and {row_no} share sample_id {:?} for user {:?}",
                row.sample_id, row.user_id
            )));
        }
        out.push(LabeledSample {
            sample_id: row.sample_id,
            image: ImageRef(row.image),
            user_id: row.user_id,
            label,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<LabeledSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_manifest(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s).expect("sample encodes");
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn user_ids(samples: &[LabeledSample]) -> Vec<String> {
    samples
        .iter()
        .map(|s| s.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn samples_for_user(samples: &[LabeledSample], user_id: &str) -> Vec<LabeledSample> {
    samples.iter().filter(|s| s.user_id == user_id).cloned().collect()
}
