//! Interpolates between two independently trained MLPs before and after
//! weight matching and prints both curves.
//!
//! cargo run --release --example barrier_curve -- [out_dir]

use rebasin::data::{synth_blobs, BlobSpec, Split};
use rebasin::matching::{apply_perm, weight_match};
use rebasin::nn::ArchDescriptor;
use rebasin::renorm::{eval_curve, lambda_grid, RenormConfig};
use rebasin::train::{init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    let out = std::env::args().nth(1);
    let train_set = synth_blobs(1, 8192, 32, 10, 1.2)?;
    let test_set = BlobSpec { seed: 1, dims: 32, classes: 10, spread: 1.2 }.generate(2048, Split::Test)?;
    let arch = ArchDescriptor::mlp(&[32], &[128, 128], 10);
    let cfg = TrainConfig::new(LrSchedule::constant(0.05), 3, 0);
    let fit = |seed| train(init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, seed), &train_set, &cfg).map(|r| r.0);
    let (a, b) = (fit(1)?, fit(2)?);
    let (perm, _) = weight_match(&a, &b)?;
    let matched = apply_perm(&b, &perm)?;
    let grid = lambda_grid(11)?;
    for (name, other) in [("naive", &b), ("matched", &matched)] {
        let curve = eval_curve(&a, other, &grid, &train_set, &test_set, &RenormConfig::default())?;
        println!("{name}:");
        for p in &curve.points {
            println!("  λ={:.1}  test acc {:.4}  test loss {:.4}", p.lambda, p.test_acc, p.test_loss);
        }
        println!("  barrier: test loss {:.4}, test acc {:.4}", curve.barrier.test_loss, curve.barrier.test_acc);
        if let Some(dir) = &out {
            let dir = std::path::Path::new(dir).join(name);
            std::fs::create_dir_all(&dir)?;
            curve.save(&dir)?;
        }
    }
    Ok(())
}
