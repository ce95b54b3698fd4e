//! Command-line front end: dataset generation, federation runs,
//! standalone prototype alignment, and report recomputation.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use protonorm::align::align;
use protonorm::config::{aligner_overrides, load_config};
use protonorm::data::{generate_spiral, save_dataset};
use protonorm::error::{Error, Result};
use protonorm::report::{
    emit_reports, load_prototype_csv, load_prototype_dump, save_prototype_csv,
    write_pa_trace_csv, write_recomputed_reports,
};
use protonorm::sim::run_experiment;

#[derive(Parser)]
#[command(name = "protonorm", version, about = "Prototype-based federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic spiral dataset as a text file.
    GenerateData(GenerateDataArgs),
    /// Run a federation experiment and write its artifacts.
    Run(RunArgs),
    /// Align a prototype CSV on the unit sphere.
    Align(AlignArgs),
    /// Recompute margin and distance summaries from a prototype dump.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateDataArgs {
    /// Points generated per class.
    #[arg(long, default_value_t = 5000)]
    points_per_class: usize,
    /// Number of spiral classes.
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output file path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Optional key=value config file (see README for keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm mode: protonorm | fedproto.
    #[arg(long)]
    mode: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Prototype upscaling factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Prototype-distance loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Communication rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Number of clients.
    #[arg(long)]
    clients: Option<usize>,
    /// Dirichlet concentration for the partition.
    #[arg(long)]
    alpha: Option<f64>,
    /// Keep per-round global prototype dumps.
    #[arg(long)]
    dump_prototypes: bool,
    /// Extra key=value overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Input prototype CSV (class_id,v0,v1,...).
    #[arg(long)]
    input: PathBuf,
    /// Output CSV for the aligned prototypes.
    #[arg(long)]
    output: PathBuf,
    /// Output CSV for the per-iteration trace.
    #[arg(long)]
    trace: PathBuf,
    /// Seed for aligner-internal randomness.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// aligner.* key=value overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Prototype dump file (round,class_id,v0,v1,...).
    #[arg(long)]
    prototypes: PathBuf,
    /// Output directory for margins.csv and distances.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_set_pairs(pairs: &[String]) -> Result<Vec<(String, String)>> {
    pairs
        .iter()
        .map(|raw| {
            raw.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{raw}`")))
        })
        .collect()
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn cmd_generate_data(args: GenerateDataArgs) -> Result<()> {
    let dataset = generate_spiral(args.points_per_class, args.classes, args.seed)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    save_dataset(&dataset, &mut out)?;
    println!(
        "wrote {} samples ({} classes, dim {}) to {}",
        dataset.len(),
        dataset.num_classes,
        dataset.dim,
        args.out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut overrides = parse_set_pairs(&args.set)?;
    let mut push = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key.to_string(), v));
        }
    };
    push("mode", args.mode);
    push("master_seed", args.seed.map(|s| s.to_string()));
    push("gamma", args.gamma.map(|g| g.to_string()));
    push("lambda", args.lambda.map(|l| l.to_string()));
    push("rounds", args.rounds.map(|r| r.to_string()));
    push("clients", args.clients.map(|c| c.to_string()));
    push("partition.alpha", args.alpha.map(|a| a.to_string()));
    if args.dump_prototypes {
        overrides.push(("dump_prototypes".to_string(), "true".to_string()));
    }

    let (config, mut manifest) = load_config(args.config.as_deref(), &overrides)?;
    manifest.started_unix = Some(unix_now());
    let result = run_experiment(&config)?;
    manifest.finished_unix = Some(unix_now());

    for warning in &result.split_warnings {
        log::warn!(
            "client {} class {}: single sample kept in train",
            warning.client,
            warning.class_id
        );
    }
    let written = emit_reports(&result, &manifest, &args.out_dir)?;
    println!(
        "mode={} rounds={} clients={} final_mean_best_acc={:.4}",
        config.mode.as_str(),
        config.rounds,
        config.num_clients,
        result.final_mean_best_accuracy
    );
    println!("wrote {} files to {}", written.len(), args.out_dir.display());
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let overrides = parse_set_pairs(&args.set)?;
    let aligner = aligner_overrides(&overrides)?;
    let protos = load_prototype_csv(&args.input)?;
    let (aligned, trace) = align(&protos, &aligner, args.seed);
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.output)?);
    save_prototype_csv(&aligned, &mut out)?;
    let mut trace_out = std::io::BufWriter::new(std::fs::File::create(&args.trace)?);
    write_pa_trace_csv(&trace, &mut trace_out)?;
    println!(
        "aligned {} prototypes in {} iterations ({:?})",
        aligned.len(),
        trace.iterations_run(),
        trace.terminated_by
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let dump = load_prototype_dump(&args.prototypes)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut margins_out =
        std::io::BufWriter::new(std::fs::File::create(args.out_dir.join("margins.csv"))?);
    let mut distances_out =
        std::io::BufWriter::new(std::fs::File::create(args.out_dir.join("distances.csv"))?);
    write_recomputed_reports(&dump, &mut margins_out, &mut distances_out)?;
    println!(
        "recomputed margins and distances for {} rounds into {}",
        dump.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenerateData(args) => cmd_generate_data(args),
        Command::Run(args) => cmd_run(args),
        Command::Align(args) => cmd_align(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
