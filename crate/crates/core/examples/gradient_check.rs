//! Central finite differences against the analytic gradients of the desk CNN.
//!
//! `cargo run --release --example gradient_check -- [seeds] [coords-per-tensor]`

use binsight::gradcheck::{finite_diff_gradcheck_piecewise, GradCheckOptions};
use binsight::model::{Model, ModelConfig};
use binsight::{rng, LabelVector, Tensor};
use rand::Rng;

fn random_batch(seed: u64, shape: [usize; 3], k: usize, n: usize) -> (Vec<Tensor>, Vec<LabelVector>) {
    let mut r = rng::seeded(seed);
    let len = shape.iter().product();
    let images = (0..n)
        .map(|_| Tensor::new(shape.to_vec(), (0..len).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap())
        .collect();
    let targets = (0..n)
        .map(|_| LabelVector::new((0..k).map(|_| r.gen_range(0..=1)).collect()).unwrap())
        .collect();
    (images, targets)
}

fn main() -> binsight::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let coords: Option<usize> = args.next().map(|s| s.parse().expect("coordinate count"));

    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let model = Model::build(ModelConfig::desk(4), &mut rng::seeded(seed))?;
        let (images, targets) = random_batch(seed + 1000, model.config().input_shape, 4, 2);
        let (_, grads) = model.loss_and_grad(&images, &targets)?;
        let opts = GradCheckOptions { max_coords_per_tensor: coords, seed, ..Default::default() };
        // Two probes because both closures need their own mutable copy.
        let (mut probe, mut regions) = (model.clone(), model.clone());
        let rep = finite_diff_gradcheck_piecewise(
            |params| {
                probe.set_param_values(params.to_vec())?;
                probe.loss(&images, &targets)
            },
            |params| {
                regions.set_param_values(params.to_vec())?;
                images.iter().map(|x| regions.activation_region(x)).collect::<binsight::Result<Vec<_>>>()
            },
            &model.param_values(),
            &grads,
            &opts,
        )?;
        let at = rep.worst.map(|(t, c)| format!("{}[{c}]", model.params()[t].name)).unwrap_or_default();
        println!(
            "seed {seed:>2}: {} coordinates ({} at kinks skipped), max relative error {:.3e} at {at}",
            rep.checked, rep.skipped, rep.max_rel_error
        );
        worst = worst.max(rep.max_rel_error);
    }
    println!("worst over {seeds} seeds: {worst:.3e}");
    Ok(())
}
