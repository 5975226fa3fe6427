mod common;

use binsight::evaluation::{
    bootstrap_ci, evaluate, expert_consensus_auc, macro_auc, micro_auc_rows, model_vs_experts_auc, roc_auc, AucMode,
    BinaryMatrix, BootstrapOptions, EvalOptions, RaterMatrix, ScoreMatrix,
};
use binsight::synth::{bitflip_raters, planted_auc_scores};
use binsight::{rng, Error};
use common::{consensus_oracle, macro_pairwise, pairwise_auc, tied_instance};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn worked_examples() {
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
}

#[test]
fn macro_auc_matches_per_label_pairwise_mean() {
    let mut r = rng::seeded(31);
    for _ in 0..20 {
        let scores: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| r.gen_range(0..10) as f64 / 10.0).collect()).collect();
        let mut truth: Vec<Vec<u8>> = (0..50).map(|_| (0..6).map(|_| r.gen_range(0..=1)).collect()).collect();
        for row in truth.iter_mut() {
            row[5] = 1;
        }
        let got = macro_auc(&ScoreMatrix::from_rows(&scores).unwrap(), &BinaryMatrix::from_rows(&truth).unwrap()).unwrap();
        assert_eq!(got.per_label[5], None);
        assert_eq!(got.skipped, vec![5]);
        assert!((got.mean - macro_pairwise(&scores, &truth).unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn micro_pools_all_cells() {
    let mut r = rng::seeded(32);
    let scores: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| r.gen_range(0..5) as f64 / 5.0).collect()).collect();
    let truth: Vec<Vec<u8>> = (0..30).map(|_| (0..3).map(|_| r.gen_range(0..=1)).collect()).collect();
    let rows: Vec<usize> = (0..30).collect();
    let got = micro_auc_rows(&ScoreMatrix::from_rows(&scores).unwrap(), &BinaryMatrix::from_rows(&truth).unwrap(), &rows).unwrap();
    let want = pairwise_auc(&scores.concat(), &truth.concat()).unwrap();
    assert!((got - want).abs() <= 1e-12);
}

proptest! {
    #[test]
    fn auc_equals_pairwise_oracle(seed in any::<u64>(), n in 2usize..64) {
        let (s, t) = tied_instance(&mut rng::seeded(seed), n);
        prop_assert!((roc_auc(&s, &t).unwrap() - pairwise_auc(&s, &t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn complement_sums_to_one(seed in any::<u64>(), n in 2usize..64) {
        let (s, t) = tied_instance(&mut rng::seeded(seed), n);
        let flipped: Vec<u8> = t.iter().map(|y| 1 - y).collect();
        prop_assert_eq!(roc_auc(&s, &t).unwrap() + roc_auc(&s, &flipped).unwrap(), 1.0);
    }

    #[test]
    fn invariant_under_monotone_transforms(seed in any::<u64>(), n in 2usize..64) {
        let (s, t) = tied_instance(&mut rng::seeded(seed), n);
        let squashed: Vec<f64> = s.iter().map(|x| (3.0 * x - 1.0).exp() / (1.0 + x)).collect();
        prop_assert_eq!(roc_auc(&s, &t).unwrap(), roc_auc(&squashed, &t).unwrap());
    }

    #[test]
    fn auc_lies_in_unit_interval_and_ignores_order(seed in any::<u64>(), n in 2usize..64) {
        let mut r = rng::seeded(seed);
        let (s, t) = tied_instance(&mut r, n);
        let a = roc_auc(&s, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut r);
        let ps: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let pt: Vec<u8> = idx.iter().map(|&i| t[i]).collect();
        prop_assert_eq!(roc_auc(&ps, &pt).unwrap(), a);
    }

    #[test]
    fn rater_permutation_permutes_agreement(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let truth = BinaryMatrix::new(40, 4, (0..160).map(|_| r.gen_range(0..=1)).collect()).unwrap();
        let raters = bitflip_raters(&truth, 4, 0.2, seed).unwrap();
        let mut perm = vec![0, 1, 2, 3];
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
        let base = expert_consensus_auc(&raters, AucMode::Macro).unwrap();
        let moved = expert_consensus_auc(&raters.permute_raters(&perm).unwrap(), AucMode::Macro).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            prop_assert_eq!(moved.per_expert[j], base.per_expert[p]);
        }
    }
}

fn ratings(m: &RaterMatrix) -> Vec<Vec<Vec<u8>>> {
    (0..m.raters())
        .map(|e| (0..m.images()).map(|i| m.rater(e).row(i).to_vec()).collect())
        .collect()
}

#[test]
fn consensus_protocol_matches_reimplementation() {
    for seed in 0..10 {
        let mut r = rng::seeded(seed);
        let truth = BinaryMatrix::new(60, 5, (0..300).map(|_| r.gen_range(0..=1)).collect()).unwrap();
        let raters = bitflip_raters(&truth, 4, 0.1, seed).unwrap();
        let got = expert_consensus_auc(&raters, AucMode::Macro).unwrap();
        let want = consensus_oracle(&ratings(&raters));
        for (g, w) in got.per_expert.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn model_equal_to_an_expert_scores_one_against_them() {
    let mut r = rng::seeded(8);
    let truth = BinaryMatrix::new(30, 3, (0..90).map(|_| r.gen_range(0..=1)).collect()).unwrap();
    let raters = bitflip_raters(&truth, 3, 0.2, 8).unwrap();
    let scores = raters.rater(1).to_scores();
    let agree = model_vs_experts_auc(&scores, &raters, AucMode::Macro).unwrap();
    assert_eq!(agree.per_expert[1], 1.0);
    let constant = ScoreMatrix::new(30, 3, vec![0.3; 90]).unwrap();
    let flat = model_vs_experts_auc(&constant, &raters, AucMode::Macro).unwrap();
    assert!(flat.per_expert.iter().all(|&a| a == 0.5));
}

fn planted_ci(n: usize, seed: u64) -> binsight::evaluation::BootstrapCi {
    let (s, t) = planted_auc_scores(n, 0.4, n as u64);
    let opts = BootstrapOptions { resamples: 2000, seed, ..Default::default() };
    bootstrap_ci(
        n,
        |rows| {
            let ss: Vec<f64> = rows.iter().map(|&i| s[i]).collect();
            let tt: Vec<u8> = rows.iter().map(|&i| t[i]).collect();
            roc_auc(&ss, &tt)
        },
        &opts,
    )
    .unwrap()
}

#[test]
fn bootstrap_contains_point_and_narrows() {
    let widths: Vec<f64> = [50, 200, 800]
        .iter()
        .map(|&n| {
            let ci = planted_ci(n, 1);
            assert!(ci.lower <= ci.point && ci.point <= ci.upper, "{ci:?}");
            ci.width()
        })
        .collect();
    assert!(widths[0] > widths[1] && widths[1] > widths[2], "{widths:?}");
    // Roughly 1/sqrt(N): quadrupling N about halves the width.
    for w in widths.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..2.7).contains(&ratio), "{ratio}");
    }
}

#[test]
fn bootstrap_is_bitwise_reproducible() {
    assert_eq!(planted_ci(200, 9), planted_ci(200, 9));
    assert_ne!(planted_ci(200, 9), planted_ci(200, 10));
}

#[test]
fn eval_report_rows_and_intervals() {
    let mut r = rng::seeded(12);
    let truth = BinaryMatrix::new(40, 3, (0..120).map(|_| r.gen_range(0..=1)).collect()).unwrap();
    let raters = bitflip_raters(&truth, 4, 0.1, 12).unwrap();
    let scores = ScoreMatrix::new(40, 3, (0..120).map(|i| 0.2 + 0.6 * truth.get(i / 3, i % 3) as f64 * r.gen::<f64>()).collect()).unwrap();
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let opts = EvalOptions { bootstrap: BootstrapOptions { resamples: 500, ..Default::default() }, ..Default::default() };
    let rep = evaluate(&scores, &raters, &names, &opts).unwrap();
    assert_eq!(rep.rows.len(), 4 + 2);
    let direct = expert_consensus_auc(&raters, AucMode::Macro).unwrap();
    for e in 0..4 {
        assert_eq!(rep.rows[e].auc, direct.per_expert[e]);
    }
    assert_eq!(rep.row("Expert Mean").unwrap().auc, direct.mean);
    let model = model_vs_experts_auc(&scores, &raters, AucMode::Macro).unwrap();
    assert_eq!(rep.row("Model").unwrap().auc, model.mean);
    for row in rep.rows.iter().chain(&rep.model_vs_expert) {
        assert!(row.ci_lower <= row.ci_upper && (0.0..=1.0).contains(&row.auc));
    }
    let back: binsight::evaluation::EvalReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(back, rep);
    let text = rep.to_csv();
    let mut csv = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(csv.records().count(), 6 + 4);
}
