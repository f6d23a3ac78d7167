//! Activation scales along the interpolation path, with and without
//! matching, and the retraining probe on both midpoints.
//!
//! cargo run --release --example probe

use rebasin::data::synth_blobs;
use rebasin::diag::{channel_probe, l2_distance, retrain_probe, RetrainOptions};
use rebasin::matching::{apply_perm, weight_match};
use rebasin::nn::ArchDescriptor;
use rebasin::renorm::interpolate;
use rebasin::train::{init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    let data = synth_blobs(4, 8192, 32, 10, 1.0)?;
    let arch = ArchDescriptor::mlp(&[32], &[96; 4], 10);
    let cfg = TrainConfig::new(LrSchedule::constant(0.05), 3, 0);
    let fit = |seed| train(init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, seed), &data, &cfg).map(|r| r.0);
    let (a, b) = (fit(1)?, fit(2)?);
    let matched = apply_perm(&b, &weight_match(&a, &b)?.0)?;
    println!("L2 distance: {:.3} naive, {:.3} matched", l2_distance(&a, &b, false)?, l2_distance(&a, &matched, false)?);

    println!("pre-activation mean |x| per boundary");
    let row = |name: &str, m: &ModelGraph| -> rebasin::Result<()> {
        let p = channel_probe(m, &data, 512)?;
        let cells: Vec<String> = p.boundaries.iter().map(|b| format!("{:.3}", b.pre_scale)).collect();
        println!("  {name:<10}{}", cells.join("  "));
        Ok(())
    };
    row("end A", &a)?;
    row("naive", &interpolate(&a, &b, 0.5)?)?;
    row("matched", &interpolate(&a, &matched, 0.5)?)?;

    let opts = RetrainOptions { cap_epochs: 3, ..Default::default() };
    for (name, other) in [("naive", &b), ("matched", &matched)] {
        let r = retrain_probe(&interpolate(&a, other, 0.5)?, &data, None, &opts)?;
        println!("{name}: {} mini-batches to 90% train accuracy (reached: {})", r.steps, r.reached);
    }
    Ok(())
}
