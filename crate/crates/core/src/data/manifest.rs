use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::LabelVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_path: String,
    pub split: Split,
    pub labels: BTreeSet<String>,
    /// Optional recycling/compost stream tag; carried but unused by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
}

/// Splits a `;`-separated label cell. Empty cells and empty pieces yield nothing.
pub fn parse_labels(cell: &str) -> Vec<String> {
    cell.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub frequency: u64,
}

/// Ordered label names; position `i` is the index of `y_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.name.is_empty() {
                return Err(Error::Validation("empty label name in vocabulary".into()));
            }
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate label name {:?}", e.name)));
            }
        }
        Ok(LabelVocabulary { entries, index })
    }

    /// Vocabulary with the given names in order and zero frequencies.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::from_entries(
            names
                .iter()
                .map(|n| VocabEntry { name: n.as_ref().to_owned(), frequency: 0 })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn frequency(&self, name: &str) -> Option<u64> {
        self.index_of(name).map(|i| self.entries[i].frequency)
    }

    /// Entries sorted by descending frequency, ties by name.
    pub fn by_frequency(&self) -> Vec<&VocabEntry> {
        let mut v: Vec<&VocabEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.name.cmp(&b.name)));
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_entries(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 over the ordered names; frequencies do not participate.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in self.names() {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        format!("{:x}", h.finalize())
    }
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    /// Every label seen in any split, in first-appearance order, with train-split counts.
    pub vocabulary: LabelVocabulary,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Vec<ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path)?;
    let (records, vocabulary) = parse_manifest(file, path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest { records, vocabulary, root })
}

/// Parses `image_path,split,labels[,stream]` CSV with a header row.
pub fn parse_manifest<R: Read>(
    reader: R,
    source: &Path,
) -> Result<(Vec<ManifestRecord>, LabelVocabulary)> {
    let ingest = |line: u64, message: String| Error::Ingestion {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ci), Some(cs), Some(cl)) = (col("image_path"), col("split"), col("labels")) else {
        return Err(ingest(
            1,
            format!("header must contain image_path,split,labels; got {:?}", headers.iter().collect::<Vec<_>>()),
        ));
    };
    let cstream = col("stream");

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, u64> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(ingest(
                line,
                format!("expected {} fields, found {}", headers.len(), row.len()),
            ));
        }
        let image_path = row[ci].trim().to_owned();
        if image_path.is_empty() {
            return Err(ingest(line, "empty image_path".into()));
        }
        let split = Split::parse(row[cs].trim())
            .ok_or_else(|| ingest(line, format!("unknown split {:?}", &row[cs])))?;
        if !seen.insert(image_path.clone()) {
            return Err(ingest(line, format!("duplicate image_path {image_path:?}")));
        }
        let labels: BTreeSet<String> = parse_labels(&row[cl]).into_iter().collect();
        for l in parse_labels(&row[cl]) {
            if !counts.contains_key(&l) {
                counts.insert(l.clone(), 0);
                order.push(l.clone());
            }
        }
        if split == Split::Train {
            for l in &labels {
                *counts.get_mut(l).expect("registered") += 1;
            }
        }
        let stream = cstream
            .map(|c| row[c].trim().to_owned())
            .filter(|s| !s.is_empty());
        records.push(ManifestRecord { image_path, split, labels, stream });
    }
    let vocab = LabelVocabulary::from_entries(
        order
            .into_iter()
            .map(|name| {
                let frequency = counts[&name];
                VocabEntry { name, frequency }
            })
            .collect(),
    )?;
    Ok((records, vocab))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub min_count: u64,
    pub total_labels: usize,
    pub kept_labels: usize,
    /// Of the training images carrying at least one label, the fraction that
    /// still carries at least one kept label.
    pub retained_image_fraction: f64,
    /// Fraction of training label occurrences whose label is kept.
    pub retained_occurrence_fraction: f64,
}

/// Keeps labels with `frequency >= min_count`, preserving order.
pub fn apply_label_threshold(
    vocab: &LabelVocabulary,
    train_records: &[ManifestRecord],
    min_count: u64,
) -> Result<(LabelVocabulary, ThresholdReport)> {
    let kept: Vec<VocabEntry> = vocab
        .entries()
        .iter()
        .filter(|e| e.frequency >= min_count)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::Validation(format!(
            "threshold {min_count} removes all {} labels",
            vocab.len()
        )));
    }
    let filtered = LabelVocabulary::from_entries(kept)?;

    let (mut labelled, mut retained, mut occ, mut occ_kept) = (0u64, 0u64, 0u64, 0u64);
    for r in train_records.iter().filter(|r| r.split == Split::Train) {
        let known: Vec<&String> = r.labels.iter().filter(|l| vocab.contains(l)).collect();
        if known.is_empty() {
            continue;
        }
        labelled += 1;
        let k = known.iter().filter(|l| filtered.contains(l)).count() as u64;
        if k > 0 {
            retained += 1;
        }
        occ += known.len() as u64;
        occ_kept += k;
    }
    let frac = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let report = ThresholdReport {
        min_count,
        total_labels: vocab.len(),
        kept_labels: filtered.len(),
        retained_image_fraction: frac(retained, labelled),
        retained_occurrence_fraction: frac(occ_kept, occ),
    };
    Ok((filtered, report))
}

/// `y_i = 1` iff label `i` of `vocab` is on the record; labels outside `vocab` are dropped.
pub fn encode_labels(record: &ManifestRecord, vocab: &LabelVocabulary) -> LabelVector {
    encode_names(record.labels.iter().map(String::as_str), vocab)
}

pub(crate) fn encode_names<'a>(names: impl Iterator<Item = &'a str>, vocab: &LabelVocabulary) -> LabelVector {
    let mut y = vec![0u8; vocab.len()];
    for n in names {
        if let Some(i) = vocab.index_of(n) {
            y[i] = 1;
        }
    }
    LabelVector::new(y).expect("binary")
}

/// Names of the positive entries, in vocabulary order.
pub fn decode_labels(y: &LabelVector, vocab: &LabelVocabulary) -> Vec<String> {
    y.positives().map(|i| vocab.entries()[i].name.clone()).collect()
}
