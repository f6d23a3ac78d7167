//! Plants a random permutation in a trained MLP and recovers it with weight
//! and activation matching.
//!
//! cargo run --release --example planted_recovery

use rebasin::data::synth_blobs;
use rebasin::matching::{activation_match, apply_perm, weight_match, PermSpec};
use rebasin::nn::ArchDescriptor;
use rebasin::train::{init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    let data = synth_blobs(0, 4096, 32, 10, 0.8)?;
    let arch = ArchDescriptor::mlp(&[32], &[64, 48], 10);
    let (a, _) = train(
        init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, 0),
        &data,
        &TrainConfig::new(LrSchedule::constant(0.05), 2, 0),
    )?;
    for seed in 0..5 {
        let planted = PermSpec::random(&a, seed);
        let b = apply_perm(&a, &planted)?;
        let (wm, report) = weight_match(&a, &b)?;
        let (am, _) = activation_match(&a, &b, &data)?;
        println!(
            "seed {seed}: {} units moved; weight matching exact: {} ({} sweeps), activation matching exact: {}",
            planted.moved_units(),
            wm == planted.invert(),
            report.sweeps,
            am == planted.invert()
        );
    }
    Ok(())
}
