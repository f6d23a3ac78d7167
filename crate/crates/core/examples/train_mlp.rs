//! Trains an MLP on MNIST and reports per-epoch accuracy.
//!
//! cargo run --release --example train_mlp -- [data/mnist] [epochs]

use std::time::Instant;

use rebasin::data::{load_mnist, Split, Standardize};
use rebasin::nn::ArchDescriptor;
use rebasin::train::{init_params, train_eval, InitScheme, LrSchedule, TrainConfig};
use rebasin::ModelGraph;

fn main() -> rebasin::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "data/mnist".into());
    let epochs: usize = args.next().map_or(3, |s| s.parse().expect("epochs"));

    let mut train = load_mnist(&dir, Split::Train)?;
    let consts = train.standardize(&Standardize::PerSplit)?.expect("constants");
    let mut test = load_mnist(&dir, Split::Test)?;
    test.standardize(&Standardize::Fixed(consts))?;

    let arch = ArchDescriptor::mlp(&[1, 28, 28], &[512, 512], 10);
    let model = init_params(&ModelGraph::build(&arch)?, InitScheme::KaimingUniform, 0);
    let cfg = TrainConfig::new(LrSchedule::constant(0.05), epochs, 0);

    let start = Instant::now();
    let (_, log) = train_eval(model, &train, Some(&test), &cfg)?;
    for e in &log.epochs {
        println!(
            "epoch {}  train loss {:.4}  train acc {:.2}%  test acc {:.2}%",
            e.epoch,
            e.train_loss,
            e.train_acc * 100.0,
            e.test_acc.unwrap_or(f64::NAN) * 100.0
        );
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
