//! Prunes a batchnorm CNN by global magnitude and restores it with RESET
//! on the full training subset and on a single batch.
//!
//! cargo run --release --example prune_repair -- [data/mnist]

use rebasin::data::{load_mnist, Split, Standardize};
use rebasin::nn::{ArchDescriptor, Norm};
use rebasin::prune::{apply_mask, mask_from_scores, score, Granularity, ScoreMethod, ScoreOptions};
use rebasin::renorm::reset_bn;
use rebasin::train::{evaluate, init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let mut train_set = load_mnist(&dir, Split::Train)?.take(20_000);
    let consts = train_set.standardize(&Standardize::PerSplit)?.expect("constants");
    let mut test_set = load_mnist(&dir, Split::Test)?;
    test_set.standardize(&Standardize::Fixed(consts))?;

    let arch = ArchDescriptor::vgg([1, 28, 28], &[Some(16), Some(16), None, Some(32), Some(32), None], 10, Norm::Batch);
    let cfg = TrainConfig::new(LrSchedule::constant(0.05), 2, 0);
    let (model, _) = train(init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, 0), &train_set, &cfg)?;
    let acc = |m: &ModelGraph| evaluate(m, &test_set, 1000).map(|r| r.accuracy);
    println!("dense: {:.4}", acc(&model)?);
    let scores = score(&model, ScoreMethod::Magnitude, None, &ScoreOptions::default())?;
    for s in [0.5, 0.7, 0.8, 0.9, 0.95] {
        let pruned = apply_mask(&model, &mask_from_scores(&scores, s, Granularity::Global)?)?;
        println!(
            "s={s:.2}  pruned {:.4}  reset {:.4}  one-batch reset {:.4}",
            acc(&pruned)?,
            acc(&reset_bn(&pruned, &train_set, 128)?)?,
            acc(&reset_bn(&pruned, &train_set.take(64), 64)?)?
        );
    }
    Ok(())
}
