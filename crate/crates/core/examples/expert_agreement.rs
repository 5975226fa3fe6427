//! One-vs-rest rater agreement: the four-rater fixture for a single photo,
//! then a noisy synthetic panel scored against a model.
//!
//! `cargo run --example expert_agreement`

use binsight::data::{parse_raters, LabelVocabulary};
use binsight::evaluation::{evaluate, expert_consensus_auc, AucMode, BootstrapOptions, EvalOptions, ScoreMatrix};
use binsight::rng;
use binsight::synth::bitflip_raters;
use rand::Rng;

const FIXTURE: &str = include_str!("../tests/fixtures/sample_raters.csv");
const FIXTURE_VOCAB: &str = include_str!("../tests/fixtures/sample_vocab.json");

fn main() -> binsight::Result<()> {
    let vocab = LabelVocabulary::from_json(FIXTURE_VOCAB)?;
    let table = parse_raters(FIXTURE.as_bytes(), "sample_raters.csv".as_ref(), &vocab, None)?;
    println!("{:<26} E1 E2 E3 E4", "label");
    for (k, name) in vocab.names().enumerate() {
        let marks: Vec<String> = (0..4).map(|e| table.matrix.get(e, 0, k).to_string()).collect();
        println!("{name:<26} {}", marks.join("  "));
    }

    // 60 images x 5 labels of latent truth, four raters flipping 10% of entries.
    let mut r = rng::seeded(5);
    let truth = binsight::evaluation::BinaryMatrix::new(60, 5, (0..300).map(|_| r.gen_range(0..=1)).collect())?;
    let raters = bitflip_raters(&truth, 4, 0.1, 5)?;
    let agreement = expert_consensus_auc(&raters, AucMode::Macro)?;
    for (e, auc) in agreement.per_expert.iter().enumerate() {
        println!("expert {} vs consensus of the rest: {auc:.4}", e + 1);
    }

    // A model that sees the truth through Gaussian-ish noise.
    let scores: Vec<f64> = (0..300)
        .map(|i| (0.3 + 0.4 * truth.get(i / 5, i % 5) as f64 + r.gen_range(-0.3..0.3)).clamp(0.0, 1.0))
        .collect();
    let scores = ScoreMatrix::new(60, 5, scores)?;
    let names: Vec<String> = (0..5).map(|k| format!("label_{k}")).collect();
    let opts = EvalOptions { bootstrap: BootstrapOptions { resamples: 2000, ..Default::default() }, ..Default::default() };
    print!("{}", evaluate(&scores, &raters, &names, &opts)?.table());
    Ok(())
}
