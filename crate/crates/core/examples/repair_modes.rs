//! Compares REPAIR, RESCALE, RESCALE (average std) and RESHIFT on the
//! midpoint of two plain deep MLPs.
//!
//! cargo run --release --example repair_modes -- [data/mnist]

use rebasin::data::{load_mnist, Split, Standardize};
use rebasin::matching::{apply_perm, weight_match};
use rebasin::nn::ArchDescriptor;
use rebasin::renorm::{goal_stats, interpolate, repair, RenormConfig, RenormMode};
use rebasin::train::{evaluate, init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    env_logger::init();
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let mut train_set = load_mnist(&dir, Split::Train)?;
    let consts = train_set.standardize(&Standardize::PerSplit)?.expect("constants");
    let mut test_set = load_mnist(&dir, Split::Test)?;
    test_set.standardize(&Standardize::Fixed(consts))?;

    let arch = ArchDescriptor::mlp(&[1, 28, 28], &[128; 6], 10);
    let cfg = TrainConfig::new(LrSchedule::constant(0.02), 2, 0);
    let fit = |seed| train(init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, seed), &train_set, &cfg).map(|r| r.0);
    let (a, b) = (fit(0)?, fit(1)?);
    let b = apply_perm(&b, &weight_match(&a, &b)?.0)?;
    let mid = interpolate(&a, &b, 0.5)?;
    let stats = train_set.take(10_000);

    println!("end models: {:.4} {:.4}", evaluate(&a, &test_set, 1000)?.accuracy, evaluate(&b, &test_set, 1000)?.accuracy);
    println!("midpoint:   {:.4}", evaluate(&mid, &test_set, 1000)?.accuracy);
    for mode in [RenormMode::Repair, RenormMode::Rescale, RenormMode::RescaleAvg, RenormMode::Reshift] {
        let rc = RenormConfig::new(mode);
        let fixed = repair(&mid, &goal_stats(&a, &b, 0.5, &stats, &rc)?, &stats, &rc)?;
        println!("{:<12}{:.4}", mode.name(), evaluate(&fixed, &test_set, 1000)?.accuracy);
    }
    Ok(())
}
