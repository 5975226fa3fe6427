use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use super::manifest::{encode_names, parse_labels, LabelVocabulary};
use crate::error::{Error, Result};
use crate::evaluation::RaterMatrix;

/// Ratings plus the image order their rows follow.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RaterTable {
    pub images: Vec<String>,
    pub matrix: RaterMatrix,
}

pub fn load_raters(path: &Path, vocab: &LabelVocabulary, image_order: Option<&[String]>) -> Result<RaterTable> {
    parse_raters(fs::File::open(path)?, path, vocab, image_order)
}

/// Parses `image_path,rater_id,labels` CSV. Rater ids run `1..=R` and every
/// image needs exactly one row per rater. Labels outside `vocab` are dropped.
///
/// With `image_order`, rows follow that order and the image sets must match.
pub fn parse_raters<R: Read>(
    reader: R,
    source: &Path,
    vocab: &LabelVocabulary,
    image_order: Option<&[String]>,
) -> Result<RaterTable> {
    let ingest = |line: u64, message: String| Error::Ingestion {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ingest(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ci), Some(cr), Some(cl)) = (col("image_path"), col("rater_id"), col("labels")) else {
        return Err(ingest(1, "header must contain image_path,rater_id,labels".into()));
    };

    let mut first_seen: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, usize), Vec<String>> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut max_rater = 0usize;
    for row in rdr.records() {
        let row = row.map_err(|e| ingest(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(ingest(line, format!("expected {} fields, found {}", headers.len(), row.len())));
        }
        let image = row[ci].trim().to_owned();
        if image.is_empty() {
            return Err(ingest(line, "empty image_path".into()));
        }
        let rater: usize = row[cr]
            .trim()
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| ingest(line, format!("rater_id must be a positive integer, got {:?}", &row[cr])))?;
        max_rater = max_rater.max(rater);
        if seen.insert(image.clone()) {
            first_seen.push(image.clone());
        }
        if cells.insert((image.clone(), rater), parse_labels(&row[cl])).is_some() {
            return Err(ingest(line, format!("duplicate rating by rater {rater} for {image:?}")));
        }
    }
    if first_seen.is_empty() {
        return Err(ingest(1, "rater file has no rows".into()));
    }

    let images: Vec<String> = match image_order {
        Some(order) => {
            let want: BTreeSet<&str> = order.iter().map(String::as_str).collect();
            let have: BTreeSet<&str> = first_seen.iter().map(String::as_str).collect();
            if want != have {
                let missing: Vec<&str> = want.difference(&have).copied().collect();
                let extra: Vec<&str> = have.difference(&want).copied().collect();
                return Err(Error::Alignment(format!(
                    "test images without ratings: {missing:?}; rated images not in the test split: {extra:?}"
                )));
            }
            order.to_vec()
        }
        None => first_seen,
    };

    let (n, k) = (images.len(), vocab.len());
    let mut data = vec![0u8; max_rater * n * k];
    for rater in 1..=max_rater {
        for (i, img) in images.iter().enumerate() {
            let labels = cells.get(&(img.clone(), rater)).ok_or_else(|| {
                Error::Alignment(format!("rater {rater} has no row for {img:?}"))
            })?;
            let y = encode_names(labels.iter().map(String::as_str), vocab);
            let off = ((rater - 1) * n + i) * k;
            data[off..off + k].copy_from_slice(y.entries());
        }
    }
    Ok(RaterTable { images, matrix: RaterMatrix::new(max_rater, n, k, data)? })
}
