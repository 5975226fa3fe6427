//! Percentile bootstrap intervals narrowing as the test set grows.
//!
//! `cargo run --release --example bootstrap_intervals`

use binsight::evaluation::{bootstrap_ci, roc_auc, BootstrapOptions};
use binsight::synth::planted_auc_scores;

fn main() -> binsight::Result<()> {
    let shift = 0.4;
    println!("planted AUC {:.4}", 1.0 - (1.0 - shift) * (1.0 - shift) / 2.0);
    let opts = BootstrapOptions { resamples: 10_000, level: 0.95, seed: 7 };
    for n in [50, 200, 800] {
        let (scores, truth) = planted_auc_scores(n, shift, n as u64);
        let ci = bootstrap_ci(
            n,
            |rows| {
                let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
                let t: Vec<u8> = rows.iter().map(|&i| truth[i]).collect();
                roc_auc(&s, &t)
            },
            &opts,
        )?;
        println!(
            "N={n:>4}: AUC {:.4}  95% CI [{:.4}, {:.4}]  width {:.4}  redraws {}",
            ci.point,
            ci.lower,
            ci.upper,
            ci.width(),
            ci.redraws
        );
    }
    Ok(())
}
