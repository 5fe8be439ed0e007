use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use ca_attack::attack::apply_flips;
use ca_attack::error::Error;
use ca_attack::io::{
    attack_stage, load_dataset, read_flips, report_for, resolve_output, run_experiment, run_scatter, write_json,
    write_text_dataset, AttackKind, DatasetFormat, ExperimentConfig, Stage, StageError, StageExt,
};
use ca_attack::loss::LossKind;
use ca_attack::synth::{sbm, SbmSpec};

#[derive(Parser)]
#[command(name = "ca-attack", version, about = "Cost-aware graph structure poisoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack, retrain victims over all seeds, and write the JSON report.
    Run(ConfigArgs),
    /// Run only the attack and write the flip list.
    Attack(ConfigArgs),
    /// Evaluate the clean graph, or a graph with a saved flip list applied.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Flip list written by `attack` or `run`.
        #[arg(long)]
        flips: Option<PathBuf>,
    },
    /// Write node_id,margin,grad_l2 for every unlabeled node.
    Scatter(ConfigArgs),
    /// Write a synthetic block-model dataset in the text format.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file with any subset of the configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Serialize, Default)]
struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    format: Option<DatasetFormat>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset_name: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    attack: Option<AttackKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<LossKind>,
    /// Enable margin-dependent weighting of the attack loss.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    ca_enabled: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cw_kappa: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    budget_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    retrain_every: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    forbid_singletons: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    degree_test: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    degree_test_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dice_delete_prob: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    attack_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate_weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    victim_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    victim_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    victim_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    victim_weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    victim_dropout: Option<f64>,
    /// Comma-separated victim seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    /// Output file; its directory is replaced by $CA_ATTACK_OUTPUT_DIR if set.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated block sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 50])]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    /// Feature width; 0 writes no feature file (identity features).
    #[arg(long, default_value_t = 0)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    feature_p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    feature_p_out: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn config_error(msg: String) -> StageError {
    StageError {
        stage: Stage::Config,
        source: Error::InvalidParameter(msg),
    }
}

/// Defaults, then the config file, then flags.
fn build_config(args: &ConfigArgs, default_output: &str) -> Result<ExperimentConfig, StageError> {
    let mut merged = match serde_json::to_value(ExperimentConfig {
        output: default_output.into(),
        ..Default::default()
    })
    .expect("serializable config")
    {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    if let Some(path) = &args.config {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_error(format!("reading {}: {e}", path.display())))?;
        let Value::Object(file) =
            serde_json::from_str::<Value>(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
        else {
            return Err(config_error(format!("{}: expected a JSON object", path.display())));
        };
        merge(&mut merged, file);
    }
    if let Value::Object(flags) = serde_json::to_value(&args.overrides).expect("serializable flags") {
        merge(&mut merged, flags);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| config_error(e.to_string()))
}

fn merge(into: &mut Map<String, Value>, from: Map<String, Value>) {
    for (k, v) in from {
        into.insert(k, v);
    }
}

fn run(command: Command) -> Result<(), StageError> {
    match command {
        Command::Run(args) => {
            let cfg = build_config(&args, "report.json")?;
            let report = run_experiment(&cfg)?;
            println!(
                "{} {} {}: accuracy {:.4} ± {:.4} over {} seeds, {} flips",
                report.dataset,
                report.attack,
                report.loss,
                report.mean,
                report.ci95,
                report.per_seed_accuracy.len(),
                report.flips.len()
            );
        }
        Command::Attack(args) => {
            let cfg = build_config(&args, "flips.json")?;
            let attacked = attack_stage(&cfg)?;
            let out = resolve_output(&cfg.output);
            write_json(&out, &attacked.flips).stage(Stage::Runtime)?;
            println!(
                "{} flips (budget {}) -> {}",
                attacked.flips.len(),
                attacked.budget,
                out.display()
            );
        }
        Command::Evaluate { args, flips } => {
            let mut cfg = build_config(&args, "report.json")?;
            let started = Instant::now();
            cfg.validate().stage(Stage::Config)?;
            let clean = load_dataset(&cfg.dataset, cfg.format, &cfg.split()).stage(Stage::Data)?;
            let flips = match &flips {
                Some(path) => read_flips(path).stage(Stage::Data)?,
                None => Vec::new(),
            };
            if flips.is_empty() {
                cfg.attack = AttackKind::None;
            }
            let poisoned = apply_flips(&clean, &flips).stage(Stage::Data)?;
            let budget = flips.len();
            let report = report_for(&cfg, &clean, &poisoned, flips, budget, started)?;
            let out = resolve_output(&cfg.output);
            write_json(&out, &report).stage(Stage::Runtime)?;
            println!("accuracy {:.4} ± {:.4} -> {}", report.mean, report.ci95, out.display());
        }
        Command::Scatter(args) => {
            let cfg = build_config(&args, "scatter.csv")?;
            let points = run_scatter(&cfg)?;
            println!("{} points -> {}", points.len(), resolve_output(&cfg.output).display());
        }
        Command::Generate(a) => {
            let spec = SbmSpec::new(a.blocks, a.p_in, a.p_out, a.seed).with_features(
                a.feature_dim,
                a.feature_p_in,
                a.feature_p_out,
            );
            let g = sbm(&spec).stage(Stage::Config)?;
            write_text_dataset(&g, &a.out_dir, a.feature_dim > 0).stage(Stage::Runtime)?;
            println!(
                "{} nodes, {} edges -> {}",
                g.n_nodes(),
                g.n_edges(),
                a.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
