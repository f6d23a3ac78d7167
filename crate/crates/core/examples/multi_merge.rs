//! Trains several MLPs and merges them with each multi-model strategy.
//!
//! cargo run --release --example multi_merge -- [models] [data/mnist]

use rebasin::data::{load_mnist, Split, Standardize};
use rebasin::matching::{average_models, multi_match, Matcher, Strategy, WeightMatchOptions, ITERATIVE_CAP};
use rebasin::nn::ArchDescriptor;
use rebasin::train::{evaluate, init_params, train, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map_or(4, |s| s.parse().expect("model count"));
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let mut train_set = load_mnist(&dir, Split::Train)?;
    let consts = train_set.standardize(&Standardize::PerSplit)?.expect("constants");
    let mut test_set = load_mnist(&dir, Split::Test)?;
    test_set.standardize(&Standardize::Fixed(consts))?;

    let arch = ArchDescriptor::mlp(&[1, 28, 28], &[256, 256], 10);
    let cfg = TrainConfig::new(LrSchedule::constant(0.05), 2, 0);
    let models: Vec<ModelGraph> = (0..n)
        .map(|s| train(init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, s), &train_set, &cfg).map(|r| r.0))
        .collect::<rebasin::Result<_>>()?;
    let acc = |m: &ModelGraph| evaluate(m, &test_set, 1000).map(|r| r.accuracy);
    for (i, m) in models.iter().enumerate() {
        println!("model {i}: {:.4}", acc(m)?);
    }
    println!("unmatched average: {:.4}", acc(&average_models(&models)?)?);
    let matcher = Matcher::Weight(WeightMatchOptions::default());
    for strategy in [Strategy::Reference, Strategy::Sequential, Strategy::Iterative] {
        let out = multi_match(&models, strategy, &matcher, ITERATIVE_CAP, 0)?;
        println!("{strategy:?}: {:.4} after {} iteration(s)", acc(&out.merged)?, out.iterations);
    }
    Ok(())
}
