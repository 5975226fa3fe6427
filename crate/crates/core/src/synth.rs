//! Seeded synthetic shape dataset: each label marks one planted shape.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ManifestRecord, MemoryImages, Pixels, Split};
use crate::error::{Error, Result};
use crate::evaluation::{BinaryMatrix, RaterMatrix};
use crate::rng;

pub const SHAPES: [&str; 4] = ["disk", "square", "triangle", "cross"];
const COLORS: [[u8; 3]; 4] = [[210, 50, 40], [40, 190, 60], [50, 70, 220], [230, 210, 40]];
const IMAGE_STREAM: u64 = 0x5EED_0001;
const RATER_STREAM: u64 = 0x5EED_0002;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub width: usize,
    pub height: usize,
    /// Independent presence probability of each shape.
    pub presence: f64,
    pub raters: usize,
    /// Per-entry bit-flip probability of each simulated rater.
    pub flip_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            train: 2000,
            valid: 400,
            test: 200,
            width: 53,
            height: 40,
            presence: 0.5,
            raters: 4,
            flip_prob: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::config("every split needs at least one image"));
        }
        if self.width < 24 || self.height < 24 {
            return Err(Error::config("synthetic images must be at least 24x24"));
        }
        if !(0.0..=1.0).contains(&self.presence) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("presence and flip_prob must be probabilities"));
        }
        if self.raters == 0 {
            return Err(Error::config("need at least one simulated rater"));
        }
        Ok(())
    }
}

/// Generated images with their manifest rows and simulated rater labels for the test split.
pub struct SynthDataset {
    pub records: Vec<ManifestRecord>,
    pub images: Vec<Pixels>,
    pub test_truth: BinaryMatrix,
    pub raters: RaterMatrix,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> Vec<ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    pub fn source(&self) -> MemoryImages {
        let mut src = MemoryImages::new();
        for (r, px) in self.records.iter().zip(&self.images) {
            src.insert(r.image_path.clone(), px.clone());
        }
        src
    }

    /// Writes `images/*.png`, `manifest.csv` and `raters.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        self.records
            .par_iter()
            .zip(&self.images)
            .try_for_each(|(r, px)| px.save_png(&dir.join(&r.image_path)))?;

        let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
        w.write_record(["image_path", "split", "labels"])?;
        for r in &self.records {
            let labels: Vec<&str> = r.labels.iter().map(String::as_str).collect();
            w.write_record([r.image_path.as_str(), r.split.as_str(), &labels.join(";")])?;
        }
        w.flush()?;

        let test = self.split(Split::Test);
        let mut w = csv::Writer::from_path(dir.join("raters.csv"))?;
        w.write_record(["image_path", "rater_id", "labels"])?;
        for e in 0..self.raters.raters() {
            let m = self.raters.rater(e);
            for (i, r) in test.iter().enumerate() {
                let labels: Vec<&str> = (0..SHAPES.len()).filter(|&k| m.get(i, k) == 1).map(|k| SHAPES[k]).collect();
                w.write_record([r.image_path.as_str(), &(e + 1).to_string(), &labels.join(";")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let splits = [(Split::Train, cfg.train), (Split::Valid, cfg.valid), (Split::Test, cfg.test)];
    let plan: Vec<(Split, usize)> = splits
        .iter()
        .flat_map(|&(s, n)| (0..n).map(move |i| (s, i)))
        .collect();
    let drawn: Vec<(ManifestRecord, Pixels, [bool; 4])> = plan
        .par_iter()
        .enumerate()
        .map(|(global, &(split, i))| {
            let mut r = rng::substream(cfg.seed, IMAGE_STREAM, global as u64);
            let (px, present) = draw_image(cfg, &mut r);
            let labels = (0..4).filter(|&k| present[k]).map(|k| SHAPES[k].to_string()).collect();
            let rec = ManifestRecord {
                image_path: format!("images/{}_{i:05}.png", split.as_str()),
                split,
                labels,
                stream: None,
            };
            (rec, px, present)
        })
        .collect();

    let truth_rows: Vec<Vec<u8>> = drawn
        .iter()
        .filter(|d| d.0.split == Split::Test)
        .map(|d| d.2.iter().map(|&b| b as u8).collect())
        .collect();
    let test_truth = BinaryMatrix::from_rows(&truth_rows)?;
    let raters = bitflip_raters(&test_truth, cfg.raters, cfg.flip_prob, cfg.seed)?;
    let (mut records, mut images) = (Vec::with_capacity(drawn.len()), Vec::with_capacity(drawn.len()));
    for (rec, px, _) in drawn {
        records.push(rec);
        images.push(px);
    }
    Ok(SynthDataset { records, images, test_truth, raters })
}

/// `raters` noisy copies of `truth`, each entry flipped independently with probability `p`.
pub fn bitflip_raters(truth: &BinaryMatrix, raters: usize, p: f64, seed: u64) -> Result<RaterMatrix> {
    let copies: Vec<BinaryMatrix> = (0..raters)
        .map(|e| {
            let mut r = rng::substream(seed, RATER_STREAM, e as u64);
            let rows: Vec<Vec<u8>> = (0..truth.rows())
                .map(|i| truth.row(i).iter().map(|&y| y ^ r.gen_bool(p) as u8).collect())
                .collect();
            BinaryMatrix::from_rows(&rows)
        })
        .collect::<Result<_>>()?;
    RaterMatrix::from_raters(&copies)
}

/// Scores with population AUC `1 - (1 - shift)² / 2` for `shift` in `[0, 1]`:
/// negatives draw from `U(0, 1)`, positives from `U(shift, 1 + shift)`, then
/// everything is scaled into `[0, 1]`. Every other row is positive.
pub fn planted_auc_scores(n: usize, shift: f64, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut r = rng::seeded(seed);
    let truth: Vec<u8> = (0..n).map(|i| (i % 2 == 0) as u8).collect();
    let scores = truth
        .iter()
        .map(|&y| (r.gen::<f64>() + shift * y as f64) / (1.0 + shift))
        .collect();
    (scores, truth)
}

fn draw_image(cfg: &SynthConfig, r: &mut impl Rng) -> (Pixels, [bool; 4]) {
    let (w, h) = (cfg.width, cfg.height);
    let present: [bool; 4] = std::array::from_fn(|_| r.gen_bool(cfg.presence));
    let mut cells = [0usize, 1, 2, 3];
    rand::seq::SliceRandom::shuffle(&mut cells[..], r);
    let base: i32 = r.gen_range(80..=140);
    let mut data: Vec<u8> = (0..w * h * 3)
        .map(|_| (base + r.gen_range(-25..=25)).clamp(0, 255) as u8)
        .collect();
    let (cw, ch) = (w as f64 / 2.0, h as f64 / 2.0);
    let radius_max = cw.min(ch) * 0.36;
    for k in (0..4).filter(|&k| present[k]) {
        let cell = cells[k];
        let cx = cw * ((cell % 2) as f64 + 0.5) + r.gen_range(-2.0..=2.0);
        let cy = ch * ((cell / 2) as f64 + 0.5) + r.gen_range(-2.0..=2.0);
        let rad = r.gen_range(radius_max * 0.75..=radius_max);
        let color = COLORS[k].map(|c| (c as i32 + r.gen_range(-30..=30)).clamp(0, 255) as u8);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if inside(k, dx, dy, rad) {
                    data[(y * w + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    (Pixels::new(w, h, data).expect("sized buffer"), present)
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.8 * r && dy.abs() <= 0.8 * r,
        2 => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        _ => (dx.abs() <= r && dy.abs() <= r / 3.0) || (dy.abs() <= r && dx.abs() <= r / 3.0),
    }
}
