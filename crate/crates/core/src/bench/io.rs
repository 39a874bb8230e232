//! File formats: JSON Lines datasets, partitions and traces, and
//! single-document model files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::domain::{Album, FaceItem, Label, Partition};
use crate::engine::{EpisodeTrace, Policy, QModel, TraceStep};
use crate::error::{Error, Result};
use crate::learn::SvmModel;

pub const MODEL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub album_id: String,
    pub item_id: String,
    pub embedding: Vec<f64>,
    pub quality: f64,
    pub label: Label,
}

/// Parses a dataset. Records are grouped into albums in order of first
/// appearance; errors carry the 1-based record number.
pub fn parse_dataset(reader: impl BufRead, normalize: bool) -> Result<Vec<Album>> {
    let mut albums: Vec<(String, Vec<FaceItem>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut first_record: Vec<usize> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let record = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { record, message: e.to_string() })?;
        let item = FaceItem::new(r.item_id, r.embedding, r.quality, r.label, normalize)
            .map_err(|e| Error::Parse { record, message: e.to_string() })?;
        let slot = *index.entry(r.album_id.clone()).or_insert_with(|| {
            albums.push((r.album_id, Vec::new()));
            first_record.push(record);
            albums.len() - 1
        });
        if let Some(first) = albums[slot].1.first() {
            if first.embedding.len() != item.embedding.len() {
                return Err(Error::Parse {
                    record,
                    message: format!(
                        "embedding has {} dimensions, album {} uses {}",
                        item.embedding.len(),
                        albums[slot].0,
                        first.embedding.len()
                    ),
                });
            }
        }
        albums[slot].1.push(item);
    }
    albums
        .into_iter()
        .zip(first_record)
        .map(|((id, items), record)| {
            Album::new(id, items).map_err(|e| Error::Parse { record, message: e.to_string() })
        })
        .collect()
}

pub fn read_dataset(path: &Path, normalize: bool) -> Result<Vec<Album>> {
    parse_dataset(BufReader::new(File::open(path)?), normalize)
}

pub fn write_dataset_to(mut w: impl Write, albums: &[Album]) -> Result<()> {
    for album in albums {
        for item in &album.items {
            let r = DatasetRecord {
                album_id: album.album_id.clone(),
                item_id: item.item_id.clone(),
                embedding: item.embedding.clone(),
                quality: item.quality,
                label: item.label.clone(),
            };
            serde_json::to_writer(&mut w, &r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, albums: &[Album]) -> Result<()> {
    write_dataset_to(BufWriter::new(File::create(path)?), albums)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Svm,
    Forest,
}

/// A trained model plus the configuration it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema: u32,
    pub kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub svm: Option<SvmModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub forest: Option<QModel>,
    pub config: Config,
}

impl ModelFile {
    pub fn svm(model: SvmModel, config: Config) -> Self {
        ModelFile { schema: MODEL_SCHEMA, kind: ModelKind::Svm, svm: Some(model), forest: None, config }
    }

    pub fn forest(model: QModel, config: Config) -> Self {
        ModelFile { schema: MODEL_SCHEMA, kind: ModelKind::Forest, svm: None, forest: Some(model), config }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Schema(format!(
                "model schema {} is not supported (expected {MODEL_SCHEMA})",
                self.schema
            )));
        }
        let expected = self.config.policy.features.dim();
        let (dim, consistent) = match self.kind {
            ModelKind::Svm => (self.svm.as_ref().map(|m| m.dim), self.forest.is_none()),
            ModelKind::Forest => (self.forest.as_ref().map(|m| m.feature_dim), self.svm.is_none()),
        };
        match dim {
            Some(d) if consistent && d == expected => self.config.validate(),
            Some(d) if consistent => Err(Error::DimensionMismatch { expected, actual: d }),
            _ => Err(Error::Schema(format!("model body does not match kind {:?}", self.kind))),
        }
    }

    pub fn policy(&self) -> Policy {
        match (&self.svm, &self.forest) {
            (Some(m), _) => Policy::Myopic(m.clone()),
            (_, Some(q)) => Policy::Q(q.clone()),
            _ => unreachable!("validated model files carry a body"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<ModelFile> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| Error::Schema(format!("model file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        ModelFile::from_json(&text)
    }
}

/// One predicted partition, as lists of item ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionRecord {
    pub album_id: String,
    pub groups: Vec<Vec<String>>,
}

impl PartitionRecord {
    pub fn from_partition(album: &Album, p: &Partition) -> Self {
        let groups = p
            .canonical()
            .into_iter()
            .map(|g| g.into_iter().map(|i| album.items[i].item_id.clone()).collect())
            .collect();
        PartitionRecord { album_id: album.album_id.clone(), groups }
    }

    /// Resolves item ids against `album`; the groups must cover it exactly.
    pub fn to_partition(&self, album: &Album) -> Result<Partition> {
        let index: HashMap<&str, usize> =
            album.items.iter().enumerate().map(|(i, it)| (it.item_id.as_str(), i)).collect();
        let groups = self
            .groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|id| {
                        index.get(id.as_str()).copied().ok_or_else(|| {
                            Error::invalid(format!("album {}: unknown item {id}", self.album_id))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::from_groups(album.len(), groups)
            .map_err(|e| Error::invalid(format!("album {}: {e}", self.album_id)))
    }
}

pub fn write_partitions(path: &Path, records: &[PartitionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_partitions(path: &Path) -> Result<Vec<PartitionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { record: n + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Matches partition records to albums by id.
pub fn partitions_for(albums: &[Album], records: &[PartitionRecord]) -> Result<Vec<Partition>> {
    let by_id: HashMap<&str, &PartitionRecord> = records.iter().map(|r| (r.album_id.as_str(), r)).collect();
    albums
        .iter()
        .map(|a| {
            by_id
                .get(a.album_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no partition for album {}", a.album_id)))?
                .to_partition(a)
        })
        .collect()
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    album_id: &'a str,
    #[serde(flatten)]
    step: &'a TraceStep,
}

/// One JSON line per decision step.
pub fn write_trace(path: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in traces {
        for step in &t.steps {
            serde_json::to_writer(&mut w, &TraceRecord { album_id: &t.album_id, step })
                .map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json_pretty(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
