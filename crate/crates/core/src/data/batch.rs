use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::image::{decode_image, preprocess_eval, preprocess_train, AugmentPolicy, Pixels};
use super::manifest::{encode_labels, LabelVocabulary, ManifestRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{LabelVector, Tensor};

/// Where decoded pixels for a record come from.
pub trait ImageSource: Sync {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<Pixels>>;
}

/// Images on disk, resolved against `root` and cached after first decode.
pub struct DiskImages {
    root: PathBuf,
    cache: RwLock<HashMap<String, Arc<Pixels>>>,
}

impl DiskImages {
    pub fn new(root: impl AsRef<Path>) -> Self {
        DiskImages {
            root: root.as_ref().to_path_buf(),
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl ImageSource for DiskImages {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<Pixels>> {
        if let Some(p) = self.cache.read().expect("cache lock").get(&record.image_path) {
            return Ok(Arc::clone(p));
        }
        let px = Arc::new(decode_image(&self.root.join(&record.image_path))?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(record.image_path.clone(), Arc::clone(&px));
        Ok(px)
    }
}

/// In-memory images keyed by `image_path`.
#[derive(Default)]
pub struct MemoryImages(HashMap<String, Arc<Pixels>>);

impl MemoryImages {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, px: Pixels) {
        self.0.insert(path.into(), Arc::new(px));
    }
}

impl ImageSource for MemoryImages {
    fn load(&self, record: &ManifestRecord) -> Result<Arc<Pixels>> {
        self.0
            .get(&record.image_path)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no image for {:?}", record.image_path)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Random augmentation from the per-record substream.
    Train,
    /// Deterministic center crop.
    Eval,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Positions in the input record slice.
    pub indices: Vec<usize>,
    pub images: Vec<Tensor>,
    pub targets: Vec<LabelVector>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Epoch permutation of `0..n` drawn from the `(seed, epoch)` stream.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, epoch, u64::MAX));
    order
}

pub struct BatchIter<'a> {
    records: &'a [ManifestRecord],
    vocab: &'a LabelVocabulary,
    policy: &'a AugmentPolicy,
    source: &'a dyn ImageSource,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    seed: u64,
    epoch: u64,
    mode: Mode,
    skip_unreadable: bool,
}

/// Shuffled mini-batches for one epoch. The final short batch is emitted.
///
/// Each record is preprocessed from its own `(seed, epoch, index)` substream,
/// so batches are identical however the work is scheduled.
#[allow(clippy::too_many_arguments)]
pub fn batch_iter<'a>(
    records: &'a [ManifestRecord],
    vocab: &'a LabelVocabulary,
    policy: &'a AugmentPolicy,
    source: &'a dyn ImageSource,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    mode: Mode,
) -> Result<BatchIter<'a>> {
    if records.is_empty() {
        return Err(Error::Validation("cannot batch an empty record list".into()));
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    policy.validate()?;
    let order = match mode {
        Mode::Train => epoch_order(records.len(), seed, epoch),
        Mode::Eval => (0..records.len()).collect(),
    };
    Ok(BatchIter {
        records,
        vocab,
        policy,
        source,
        order,
        batch_size,
        pos: 0,
        seed,
        epoch,
        mode,
        skip_unreadable: false,
    })
}

impl BatchIter<'_> {
    /// Drop records whose image fails to decode (logged) instead of failing.
    pub fn skip_unreadable(mut self, skip: bool) -> Self {
        self.skip_unreadable = skip;
        self
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn prepare(&self, idx: usize) -> Result<(Tensor, LabelVector)> {
        let rec = &self.records[idx];
        let px = self.source.load(rec)?;
        let img = match self.mode {
            Mode::Train => {
                let mut r = rng::substream(self.seed, self.epoch, idx as u64);
                preprocess_train(&px, self.policy, &mut r)?
            }
            Mode::Eval => preprocess_eval(&px, self.policy)?,
        };
        Ok((img, encode_labels(rec, self.vocab)))
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.pos >= self.order.len() {
                return None;
            }
            let end = (self.pos + self.batch_size).min(self.order.len());
            let chunk = self.order[self.pos..end].to_vec();
            self.pos = end;
            let prepared: Vec<Result<(Tensor, LabelVector)>> =
                chunk.par_iter().map(|&i| self.prepare(i)).collect();
            let mut batch = Batch { indices: Vec::new(), images: Vec::new(), targets: Vec::new() };
            for (i, r) in chunk.into_iter().zip(prepared) {
                match r {
                    Ok((img, y)) => {
                        batch.indices.push(i);
                        batch.images.push(img);
                        batch.targets.push(y);
                    }
                    Err(e @ Error::Image { .. }) if self.skip_unreadable => {
                        log::warn!("skipping {}: {e}", self.records[i].image_path);
                    }
                    Err(e) => return Some(Err(e)),
                }
            }
            if !batch.is_empty() {
                return Some(Ok(batch));
            }
        }
    }
}
