//! Trains the default toy network on the bundled digits and prints test
//! accuracy after training.

use std::time::Instant;

use redcane::capsnet::{build_network, evaluate, train, NetworkSpec, Optimizer, TrainConfig};
use redcane::data::{bundled_digits, digits_split, DIGITS_SPLIT_SEED};
use redcane::noise::Injector;

fn main() -> redcane::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let optimizer = match args.get(3).map(String::as_str) {
        Some("sgd") => Optimizer::Sgd,
        _ => Optimizer::Adam,
    };
    let (train_set, test_set) = digits_split(&bundled_digits(), DIGITS_SPLIT_SEED);
    let cfg = TrainConfig { epochs, learning_rate: lr, optimizer, ..TrainConfig::default() };
    let start = Instant::now();
    let out = train(build_network(&NetworkSpec::toy(), cfg.seed)?, &train_set, &cfg)?;
    let acc = evaluate(&out.model, &test_set, &Injector::null())?;
    println!("losses {:?}", out.epoch_losses);
    println!("test accuracy {:.4} in {:.1?}", acc, start.elapsed());
    Ok(())
}
