//! Prints the one-cycle learning-rate curve and writes it as CSV and SVG.
//!
//! `cargo run --example schedule_curve -- [out-dir]`

use std::path::PathBuf;

use binsight::schedule::{trace_csv, trace_svg, ScheduleConfig};

fn main() -> binsight::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let cfg = ScheduleConfig { max_lr: 0.1, iters: 1000, ..Default::default() };
    let literal = ScheduleConfig { literal_decay_len: true, ..cfg.clone() };

    for (name, c) in [("standard", &cfg), ("literal", &literal)] {
        let trace = c.trace()?;
        println!("{name}: warm-up {} steps, decay {} steps", c.warm_steps(), c.decay_steps());
        for i in [0, 150, 300, 600, 999] {
            println!("  lr({i:>3}) = {}", trace[i]);
        }
        std::fs::write(out.join(format!("lr_{name}.csv")), trace_csv(&trace))?;
        std::fs::write(out.join(format!("lr_{name}.svg")), trace_svg(&trace, name))?;
    }
    println!("wrote lr_standard.{{csv,svg}} and lr_literal.{{csv,svg}} to {}", out.display());
    Ok(())
}
