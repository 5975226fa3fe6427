//! Trains the desk CNN on the synthetic shape task and reports test AUC with
//! five-view test-time augmentation.
//!
//! `cargo run --release --example train_synthetic`

use std::time::Instant;

use binsight::data::{AugmentPolicy, Split};
use binsight::evaluation::{macro_auc, ScoreMatrix};
use binsight::model::{Model, ModelConfig};
use binsight::synth::{self, SynthConfig};
use binsight::train::{fit, predict_records, TrainConfig};
use binsight::{data::LabelVocabulary, rng};

fn main() -> binsight::Result<()> {
    let started = Instant::now();
    let data = synth::generate(&SynthConfig::default())?;
    let source = data.source();
    let vocab = LabelVocabulary::from_names(&synth::SHAPES)?;
    let (train, valid, test) = (data.split(Split::Train), data.split(Split::Valid), data.split(Split::Test));
    let policy = AugmentPolicy::desk();

    let mut model = Model::build(ModelConfig::desk(vocab.len()), &mut rng::seeded(0))?;
    let report = fit(&mut model, &train, &valid, &vocab, &policy, &source, &TrainConfig::default())?;
    for (e, (t, v)) in report.train_loss.iter().zip(&report.valid_loss).enumerate() {
        println!("epoch {:>2}  train {t:.4}  valid {v:.4}", e + 1);
    }

    let scores: ScoreMatrix = predict_records(&model, &test, &source, &policy, 5, 0)?;
    let auc = macro_auc(&scores, &data.test_truth)?;
    for (name, a) in vocab.names().zip(&auc.per_label) {
        println!("{name:<10} AUC {:.4}", a.unwrap_or(f64::NAN));
    }
    println!("macro test AUC {:.4} ({:.1}s)", auc.mean, started.elapsed().as_secs_f64());
    Ok(())
}
