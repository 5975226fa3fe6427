//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;

/// `(wins + ties / 2) / (n₊ n₋)` by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (sp, _) in scores.iter().zip(truth).filter(|(_, &t)| t == 1) {
        for (sn, _) in scores.iter().zip(truth).filter(|(_, &t)| t == 0) {
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Random scores on a coarse grid (so ties are common) with both classes present.
pub fn tied_instance(r: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let levels = r.gen_range(2..=8);
    let scores = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
    let mut truth: Vec<u8> = (0..n).map(|_| r.gen_range(0..=1)).collect();
    truth[0] = 1;
    truth[n - 1] = 0;
    (scores, truth)
}

/// Macro AUC over columns with both classes, by pair enumeration.
pub fn macro_pairwise(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Option<f64> {
    let k = truth[0].len();
    let per_label: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
            let t: Vec<u8> = truth.iter().map(|row| row[c]).collect();
            pairwise_auc(&s, &t)
        })
        .collect();
    (!per_label.is_empty()).then(|| per_label.iter().sum::<f64>() / per_label.len() as f64)
}

/// One-vs-rest agreement written out directly: `ratings[e][i][k]`.
pub fn consensus_oracle(ratings: &[Vec<Vec<u8>>]) -> Vec<f64> {
    let r = ratings.len();
    (0..r)
        .map(|e| {
            let scores: Vec<Vec<f64>> = (0..ratings[e].len())
                .map(|i| {
                    (0..ratings[e][i].len())
                        .map(|k| {
                            let votes: u32 = (0..r).filter(|&o| o != e).map(|o| ratings[o][i][k] as u32).sum();
                            votes as f64 / (r - 1) as f64
                        })
                        .collect()
                })
                .collect();
            macro_pairwise(&scores, &ratings[e]).expect("computable labels")
        })
        .collect()
}

/// Coordinate-at-a-time Adam with bias correction.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn new() -> Self {
        ScalarAdam { m: 0.0, v: 0.0, t: 0 }
    }

    pub fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - f64::powi(b1, self.t));
        let v_hat = self.v / (1.0 - f64::powi(b2, self.t));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// Manifest CSV in which label `name` appears on exactly `count` training rows.
pub fn planted_manifest(counts: &[(&str, u64)]) -> String {
    let rows = counts.iter().map(|c| c.1).max().unwrap_or(0) as usize;
    let mut csv = String::from("image_path,split,labels\n");
    for i in 0..rows.max(1) {
        let tags: Vec<&str> = counts.iter().filter(|c| (i as u64) < c.1).map(|c| c.0).collect();
        csv.push_str(&format!("img{i:06}.jpg,train,{}\n", tags.join(";")));
    }
    csv
}
