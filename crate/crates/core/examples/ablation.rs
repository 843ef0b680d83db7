//! Trains and evaluates every mode on the synthetic benchmark for a few seeds.
//!
//! Usage: `cargo run --release --example ablation -- [seeds] [learning_rate] [key=value ...]`

use akbml::harness::{
    evaluate_on, prepare_data, stream, train_on, ModelParams, RunConfig, Stream, BENCHMARK_LEARNING_RATE,
};
use akbml::prior::Mode;

fn main() -> akbml::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(5, |s| s.parse().expect("seed count"));
    let lr: f64 = args
        .get(1)
        .map_or(BENCHMARK_LEARNING_RATE, |s| s.parse().expect("learning rate"));
    let overrides = args.iter().skip(2).cloned().collect::<Vec<_>>().join("\n");
    let base = RunConfig::from_toml(&overrides)?;
    for seed in 0..seeds {
        let mut line = format!("seed {seed}:");
        for mode in [Mode::Ake, Mode::Kb, Mode::Ta, Mode::Proto] {
            let config = RunConfig {
                mode,
                seed,
                learning_rate: lr,
                ..base.clone()
            };
            let data = prepare_data(&config)?;
            let init = ModelParams::init(&config, &mut stream(&config, Stream::Init));
            let trained = train_on(&config, &data.train, init)?;
            let report = evaluate_on(&config, &trained.params, &data.test)?;
            let first = trained.log.mean_loss(0..50).unwrap_or(f64::NAN);
            let n = trained.log.losses.len();
            let last = trained.log.mean_loss(n.saturating_sub(50)..n).unwrap_or(f64::NAN);
            line += &format!(" {mode}={:.3} (loss {first:.3}->{last:.3})", report.accuracy);
            if let (Some(e), Some(s)) = (
                report.mean_lambda.get("exact"),
                report.mean_lambda.get("super_ordinate"),
            ) {
                line += &format!(" [lambda exact {e:.3} super {s:.3}]");
            }
        }
        println!("{line}");
    }
    Ok(())
}
