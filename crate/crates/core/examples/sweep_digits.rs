//! Trains the toy network, then prints group-wise and layer-wise accuracy
//! curves on the digits test split.

use redcane::capsnet::{build_network, train, NetworkSpec, TrainConfig};
use redcane::data::{bundled_digits, digits_split, DIGITS_SPLIT_SEED};
use redcane::resilience::{group_sweep, layer_sweep, SweepConfig, TargetKind};
use redcane::site::GroupId;

fn main() -> redcane::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (train_set, test_set) = digits_split(&bundled_digits(), DIGITS_SPLIT_SEED);
    let cfg = TrainConfig::default();
    let model = train(build_network(&NetworkSpec::toy(), cfg.seed)?, &train_set, &cfg)?.model;
    let sweep = SweepConfig { seed, ..SweepConfig::default() };
    let mut report = group_sweep(&model, &test_set, &sweep)?;
    println!("baseline {:.4}", report.baseline);
    for g in GroupId::ALL {
        let curve = report.curve(TargetKind::Group, g.as_str());
        println!("{g:>14}: {}", fmt(&curve));
    }
    report.rows.extend(layer_sweep(&model, &test_set, GroupId::MacOutputs, &sweep)?);
    report.rows.extend(layer_sweep(&model, &test_set, GroupId::Activations, &sweep)?);
    for s in model.sites() {
        let curve = report.curve(TargetKind::Layer, &s.layer);
        if !curve.is_empty() {
            println!("{:>18}: {}", s.layer, fmt(&curve));
        }
    }
    Ok(())
}

fn fmt(curve: &[(f64, f64)]) -> String {
    curve.iter().map(|(nm, a)| format!("{nm}:{a:.3}")).collect::<Vec<_>>().join(" ")
}
