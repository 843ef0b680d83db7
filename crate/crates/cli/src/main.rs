//! Command-line front end: data generation, training, evaluation and checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use akbml::episodes::{generate_synthetic, sample_episode_grouped, save_dataset, DatasetPaths};
use akbml::harness::{
    episode_posterior, evaluate_on, gradcheck, load_params, param_file_config, prepare_data, save_params, stream,
    train_on, MetricsReport, ModelParams, RunConfig, Stream,
};
use akbml::prior::Mode;
use akbml::{Error, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "akbml",
    version,
    about = "Few-shot event detection with knowledge-informed prototype posteriors"
)]
struct Cli {
    /// Flat TOML config file with RunConfig keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ake, kb, ta or proto.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra config override as `key=value` (TOML value syntax), repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic benchmark (corpus, frames, embeddings, truth) to a directory.
    GenSynthetic,
    /// Train on the training split; writes params.json and training_log.csv.
    Train,
    /// Evaluate a parameter file on the test split.
    Eval {
        #[arg(long)]
        params: PathBuf,
    },
    /// Compare analytic and reverse-mode gradients with finite differences.
    Gradcheck,
    /// Dump the prototype samples for one test episode.
    SamplePosterior {
        /// Parameter file; freshly initialized parameters when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Evaluation episode index.
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
    /// Render a saved metrics report.
    Report { path: PathBuf },
}

/// Exit status per error category; 1 is a failed check, 2 a usage error.
fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "input" => 4,
        "format" => 5,
        "io" => 6,
        "numeric" => 7,
        "contract" => 8,
        "oracle" => 9,
        "metrics" => 10,
        _ => 1,
    }
}

impl Cli {
    /// File config (or `base`), then `--set` overrides, then the named flags.
    fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut config = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(base)) => base,
            (None, None) => RunConfig::default(),
        };
        if !self.overrides.is_empty() {
            let mut table: toml::Table = config
                .to_toml()?
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            for item in &self.overrides {
                let (key, value) = item
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
                let parsed: toml::Table = format!("v = {value}")
                    .parse()
                    .or_else(|_| format!("v = {:?}", value).parse())
                    .map_err(|e: toml::de::Error| Error::Config(format!("override {key}: {e}")))?;
                table.insert(key.trim().to_string(), parsed["v"].clone());
            }
            config = RunConfig::from_toml(&toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        config.validate()?;
        Ok(config)
    }

    fn out_dir(&self, config: &RunConfig, fallback: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(fallback))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Serialize)]
struct PosteriorDump<'a> {
    mode: String,
    seed: u64,
    episode: usize,
    types: Vec<&'a str>,
    support_means: Vec<&'a [f64]>,
    prior_means: Vec<Option<&'a [f64]>>,
    gates: Vec<Option<&'a [f64]>>,
    chains: &'a akbml::posterior::PrototypeChains,
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenSynthetic => {
            let config = cli.resolve(None)?;
            let dir = cli.out_dir(&config, "synthetic");
            let syn = generate_synthetic(&config.synthetic)?;
            std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            save_dataset(&syn.dataset, &DatasetPaths::in_dir(&dir))?;
            write(&dir.join("truth.json"), &to_json(&syn.truth)?)?;
            println!(
                "wrote {} types, {} samples to {}",
                syn.dataset.type_registry.len(),
                syn.dataset.samples.len(),
                dir.display()
            );
        }
        Command::Train => {
            let config = cli.resolve(None)?;
            let dir = cli.out_dir(&config, "run");
            let data = prepare_data(&config)?;
            let init = ModelParams::init(&config, &mut stream(&config, Stream::Init));
            let outcome = train_on(&config, &data.train, init)?;
            save_params(&dir.join("params.json"), &outcome.params, &config)?;
            write(&dir.join("training_log.csv"), &outcome.log.to_csv())?;
            write(&dir.join("config.toml"), &config.to_toml()?)?;
            let n = outcome.log.losses.len();
            if let (Some(first), Some(last)) = (
                outcome.log.mean_loss(0..50),
                outcome.log.mean_loss(n.saturating_sub(50)..n),
            ) {
                println!("trained {n} episodes: mean loss {first:.4} (first 50) -> {last:.4} (last 50)");
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval { params } => {
            let config = cli.resolve(Some(param_file_config(params)?))?;
            let (params, _) = load_params(params, &config)?;
            let data = prepare_data(&config)?;
            let report = evaluate_on(&config, &params, &data.test)?;
            match &cli.out {
                Some(path) => {
                    report.save(path)?;
                    print!("{}", report.render());
                }
                None => print!("{}", report.to_json()?),
            }
        }
        Command::Gradcheck => {
            let config = cli.resolve(None)?;
            let report = gradcheck(&config)?;
            print!("{}", report.render());
            if let Some(path) = &cli.out {
                write(path, &to_json(&report)?)?;
            }
            return Ok(report.passed);
        }
        Command::SamplePosterior { params, episode } => {
            let config = match params {
                Some(path) => cli.resolve(Some(param_file_config(path)?))?,
                None => cli.resolve(None)?,
            };
            let model = match params {
                Some(path) => load_params(path, &config)?.0,
                None => ModelParams::init(&config, &mut stream(&config, Stream::Init)),
            };
            let data = prepare_data(&config)?;
            let by_type = data.test.samples_by_type()?;
            let mut rng = stream(&config, Stream::Posterior).child(*episode as u64);
            let ep = sample_episode_grouped(
                &data.test,
                &by_type,
                config.n_way,
                config.m_shot,
                config.q_per_type,
                &mut rng,
            )?;
            let post = episode_posterior(&config, &model, &data.test, &ep, &mut rng)?;
            let dump = PosteriorDump {
                mode: config.mode.to_string(),
                seed: config.seed,
                episode: *episode,
                types: ep.types.iter().map(|&t| data.test.type_registry[t].as_str()).collect(),
                support_means: post.spec.types.iter().map(|t| t.support_mean.as_slice()).collect(),
                prior_means: post.spec.types.iter().map(|t| t.prior_mean.as_deref()).collect(),
                gates: post.spec.types.iter().map(|t| t.gate.as_deref()).collect(),
                chains: &post.chains,
            };
            let text = to_json(&dump)?;
            match &cli.out {
                Some(path) => write(path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Report { path } => {
            print!("{}", MetricsReport::load(path)?.render());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error [check]: gradient checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
