//! Vocabulary size and retained observations as the label-frequency threshold rises.
//!
//! `cargo run --example label_thresholds`

use binsight::cli::labels_report;
use binsight::data::parse_manifest;
use binsight::rng;
use rand::Rng;

/// Long-tailed label counts: label `i` appears with probability `0.6 / (1 + i/3)`.
fn synthetic_manifest(rows: usize, labels: usize) -> String {
    let mut r = rng::seeded(11);
    let mut csv = String::from("image_path,split,labels\n");
    for i in 0..rows {
        let tags: Vec<String> = (0..labels)
            .filter(|&k| r.gen_bool(0.6 / (1.0 + k as f64 / 3.0)))
            .map(|k| format!("item_{k:02}"))
            .collect();
        csv.push_str(&format!("img{i}.jpg,train,{}\n", tags.join(";")));
    }
    csv
}

fn main() -> binsight::Result<()> {
    let text = synthetic_manifest(5000, 40);
    let (records, vocabulary) = parse_manifest(text.as_bytes(), "synthetic.csv".as_ref())?;
    let manifest = binsight::data::Manifest { records, vocabulary, root: Default::default() };
    let rep = labels_report(&manifest, &[0, 300, 500, 1000, 2000])?;
    print!("{}", rep.table());
    Ok(())
}
