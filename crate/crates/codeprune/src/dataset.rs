//! Line-delimited instruction-code datasets with content-derived identities.
//!
//! A dataset is a JSONL file, one record per line. Field names in foreign
//! corpora vary (`problem`/`solution`, `instruction`/`output`, ...), so
//! loading goes through a [`FieldMap`]. Sample ids are hex SHA-256 digests
//! of the (instruction, response) pair: re-ingesting identical content
//! always yields the same id, and byte-identical records collide on purpose
//! so duplicates can be flagged for free.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seeding::{rng_for, Stream};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("id collision across input datasets: {0:?}")]
    IdCollision(Vec<String>),
}

/// One instruction-code pair, the unit of pruning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSample {
    pub id: String,
    pub instruction: String,
    pub response: String,
    pub source: String,
}

impl DataSample {
    /// Builds a sample, deriving the id from content. Returns `None` when
    /// either text is empty after trimming.
    pub fn new(instruction: String, response: String, source: String) -> Option<Self> {
        if instruction.trim().is_empty() || response.trim().is_empty() {
            return None;
        }
        let id = content_id(&instruction, &response);
        Some(DataSample {
            id,
            instruction,
            response,
            source,
        })
    }
}

/// Hex digest of a length-prefixed encoding of (instruction, response).
/// Length prefixes keep ("ab","c") and ("a","bc") distinct.
pub fn content_id(instruction: &str, response: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((instruction.len() as u64).to_le_bytes());
    hasher.update(instruction.as_bytes());
    hasher.update((response.len() as u64).to_le_bytes());
    hasher.update(response.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// A record that failed validation during loading.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub record_count: usize,
    /// source tag -> accepted record count; sums to `record_count`.
    pub source_counts: BTreeMap<String, usize>,
    pub created_at_unix: u64,
    pub rejected_count: usize,
    pub rejected: Vec<RejectedRecord>,
    /// ids shared by more than one record, with their multiplicities.
    pub duplicate_ids: BTreeMap<String, usize>,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

impl DatasetManifest {
    fn from_samples(samples: &[DataSample], rejected: Vec<RejectedRecord>) -> Self {
        let mut source_counts = BTreeMap::new();
        let mut id_counts: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            *source_counts.entry(s.source.clone()).or_insert(0) += 1;
            *id_counts.entry(&s.id).or_insert(0) += 1;
        }
        let duplicate_ids = id_counts
            .into_iter()
            .filter(|(_, n)| *n > 1)
            .map(|(id, n)| (id.to_string(), n))
            .collect();
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            record_count: samples.len(),
            source_counts,
            created_at_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            rejected_count: rejected.len(),
            rejected,
            duplicate_ids,
        }
    }

    /// Conventional manifest path for a dataset file.
    pub fn path_for(dataset: &Path) -> PathBuf {
        let mut os = dataset.as_os_str().to_owned();
        os.push(".manifest.json");
        PathBuf::from(os)
    }
}

/// Maps record field names in the input file onto (instruction, response,
/// source). `source` is optional; records without it get `fallback_source`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMap {
    pub instruction: String,
    pub response: String,
    pub source: Option<String>,
    pub fallback_source: Option<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            instruction: "instruction".into(),
            response: "response".into(),
            source: Some("source".into()),
            fallback_source: None,
        }
    }
}

impl FieldMap {
    pub fn new(instruction: &str, response: &str) -> Self {
        FieldMap {
            instruction: instruction.into(),
            response: response.into(),
            source: None,
            fallback_source: None,
        }
    }
}

/// Loads a JSONL dataset. Malformed JSON is a hard error naming the line;
/// records whose mapped fields are missing or empty are rejected and
/// reported through the manifest, never dropped silently.
pub fn load_dataset(
    path: &Path,
    map: &FieldMap,
) -> Result<(Vec<DataSample>, DatasetManifest), DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        lines.push((idx + 1, line));
    }

    let fallback = map.fallback_source.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".to_string())
    });

    // Parse in parallel, keep file order.
    let parsed: Vec<Result<Result<DataSample, RejectedRecord>, DatasetError>> = lines
        .par_iter()
        .map(|(line_no, line)| parse_line(path, *line_no, line, map, &fallback))
        .collect();

    let mut samples = Vec::with_capacity(parsed.len());
    let mut rejected = Vec::new();
    for item in parsed {
        match item? {
            Ok(sample) => samples.push(sample),
            Err(rej) => rejected.push(rej),
        }
    }
    let manifest = DatasetManifest::from_samples(&samples, rejected);
    Ok((samples, manifest))
}

fn parse_line(
    path: &Path,
    line_no: usize,
    line: &str,
    map: &FieldMap,
    fallback_source: &str,
) -> Result<Result<DataSample, RejectedRecord>, DatasetError> {
    if line.trim().is_empty() {
        return Ok(Err(RejectedRecord {
            line: line_no,
            reason: "blank line".into(),
        }));
    }
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| DatasetError::MalformedLine {
            path: path.to_path_buf(),
            line: line_no,
            reason: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| DatasetError::MalformedLine {
        path: path.to_path_buf(),
        line: line_no,
        reason: "record is not a JSON object".into(),
    })?;

    let get_text = |field: &str| -> Option<String> {
        obj.get(field).and_then(|v| v.as_str()).map(str::to_owned)
    };
    let instruction = match get_text(&map.instruction) {
        Some(t) => t,
        None => {
            return Ok(Err(RejectedRecord {
                line: line_no,
                reason: format!("missing or non-string field `{}`", map.instruction),
            }))
        }
    };
    let response = match get_text(&map.response) {
        Some(t) => t,
        None => {
            return Ok(Err(RejectedRecord {
                line: line_no,
                reason: format!("missing or non-string field `{}`", map.response),
            }))
        }
    };
    let source = map
        .source
        .as_deref()
        .and_then(get_text)
        .unwrap_or_else(|| fallback_source.to_string());

    match DataSample::new(instruction, response, source) {
        Some(s) => Ok(Ok(s)),
        None => Ok(Err(RejectedRecord {
            line: line_no,
            reason: "empty instruction or response after trimming".into(),
        })),
    }
}

/// Concatenates datasets and applies a seeded Fisher-Yates shuffle.
/// Ids must be unique across inputs; collisions abort with the full list.
pub fn merge_shuffle(
    datasets: Vec<Vec<DataSample>>,
    seed: u64,
) -> Result<Vec<DataSample>, DatasetError> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut collisions = Vec::new();
    for ds in &datasets {
        for s in ds {
            if !seen.insert(&s.id) {
                collisions.push(s.id.clone());
            }
        }
    }
    if !collisions.is_empty() {
        collisions.sort();
        collisions.dedup();
        return Err(DatasetError::IdCollision(collisions));
    }

    let mut merged: Vec<DataSample> = datasets.into_iter().flatten().collect();
    let mut rng = rng_for(seed, Stream::Shuffle);
    for i in (1..merged.len()).rev() {
        let j = rng.gen_range(0..=i);
        merged.swap(i, j);
    }
    Ok(merged)
}

/// Writes samples as JSONL plus a manifest file next to it. The dataset is
/// written to a temporary file and renamed, so a failed write never leaves a
/// truncated file that still looks valid.
pub fn write_dataset(
    samples: &[DataSample],
    path: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let manifest = DatasetManifest::from_samples(samples, Vec::new());
    write_atomic(path, |w| {
        for s in samples {
            let line = serde_json::to_string(s).expect("sample serializes");
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
    .map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let manifest_path = DatasetManifest::path_for(path);
    write_atomic(&manifest_path, |w| {
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
    .map_err(|source| DatasetError::Io {
        path: manifest_path,
        source,
    })?;
    Ok(manifest)
}

/// Temp-file-plus-rename writer used for every artifact the pipeline emits.
pub(crate) fn write_atomic<F>(path: &Path, fill: F) -> Result<(), std::io::Error>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), std::io::Error>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp_name = format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    );
    let tmp_path = match dir {
        Some(d) => d.join(&tmp_name),
        None => PathBuf::from(&tmp_name),
    };
    let result = (|| {
        let file = File::create(&tmp_path)?;
        let mut writer = BufWriter::new(file);
        fill(&mut writer)?;
        writer.flush()?;
        writer.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp_path, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp_path);
    }
    result
}

/// Loads a dataset previously produced by [`write_dataset`] (canonical
/// field names). Ids are recomputed from content, so the round trip
/// reproduces them exactly.
pub fn load_canonical(path: &Path) -> Result<(Vec<DataSample>, DatasetManifest), DatasetError> {
    load_dataset(path, &FieldMap::default())
}
