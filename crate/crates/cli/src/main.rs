mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perforated::autograd::Activation;
use perforated::deploy::{
    bench_throughput, cost_per_billion, format_usd, reference_rows, render_csv, render_table, required_replicas,
    speedup,
};
use perforated::experiment::{run_sweep, train_eval};
use perforated::network::{save_weights, ModelGraph, NetworkSpec};
use perforated::{verify, Error, Result, Tensor};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "perforated",
    version,
    about = "Dendritic growth training, compression sweeps and cost tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write report.csv and model.pbw.
    Train(TrainArgs),
    /// Train a width x dendrite-cycle grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Cost per billion units, speedups and replica counts.
    Cost(CostArgs),
    /// Measure forward-pass throughput and write bench.csv.
    Bench(BenchArgs),
    /// Write the configured dataset as data.csv.
    GenData(CommonArgs),
    /// Run the built-in invariant checks.
    Verify,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON run configuration [default: built-in defaults]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed [default: config value, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for artifacts [default: config value, else ./out]
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dendrite cycles; 0 trains a plain baseline [default: config value, else 3]
    #[arg(long)]
    cycles: Option<usize>,
    /// Hidden width multiplier in (0, 1] [default: config value, else 1.0]
    #[arg(long)]
    width_multiplier: Option<f64>,
    /// Fill the wall_time_s column [default: config value, else off]
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated multipliers [default: config value, else 1,0.5,0.25,0.125]
    #[arg(long, value_delimiter = ',')]
    width_multipliers: Option<Vec<f64>>,
    /// Comma-separated cycle counts [default: config value, else 0,1,2,3]
    #[arg(long, value_delimiter = ',')]
    cycles: Option<Vec<usize>>,
    /// Comma-separated seeds [default: config value, else the top-level seed]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Train cells one at a time [default: config value, else parallel]
    #[arg(long)]
    sequential: bool,
    /// Fill the wall_time_s column [default: config value, else off]
    #[arg(long)]
    record_timing: bool,
}

#[derive(Args, Debug)]
struct CostArgs {
    /// Instance price in USD per hour [default: none]
    #[arg(long, requires = "tps", allow_negative_numbers = true)]
    hourly: Option<f64>,
    /// Sustained throughput in units per second [default: none]
    #[arg(long, allow_negative_numbers = true)]
    tps: Option<f64>,
    /// Throughput to compare against; prints the speedup [default: none]
    #[arg(long, requires = "tps", allow_negative_numbers = true)]
    baseline_tps: Option<f64>,
    /// Required aggregate throughput; prints the replica count [default: none]
    #[arg(long, requires = "tps", allow_negative_numbers = true)]
    target_tps: Option<f64>,
    /// Print the reference deployment table [default: when no --tps is given]
    #[arg(long)]
    table: bool,
    /// Also write cost.txt (and cost.csv for the table) into this directory [default: none]
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated, strictly increasing batch sizes
    #[arg(long, value_delimiter = ',', default_value = "1,8,64,512")]
    batch_sizes: Vec<usize>,
    /// Minimum timed seconds per batch size (at least 0.5)
    #[arg(long, default_value_t = 0.5)]
    min_duration: f64,
    /// Hidden width multiplier [default: config value, else 1.0]
    #[arg(long)]
    width_multiplier: Option<f64>,
    /// Dendrite cycles to attach to every hidden layer before timing
    #[arg(long, default_value_t = 0)]
    cycles: usize,
    /// Split each batch across threads [default: off]
    #[arg(long)]
    parallel: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Domain(_) => 1,
        Error::Data(_) | Error::Format(_) => 2,
        Error::Dimension(_) | Error::NonFinite(_) | Error::Io(_) => 3,
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(c) = args.cycles {
        cfg.pb.max_cycles = c;
    }
    if let Some(m) = args.width_multiplier {
        cfg.network.width_multiplier = m;
    }
    cfg.record_timing |= args.record_timing;
    let dataset = cfg.dataset()?;
    let spec = cfg.network_spec(&dataset)?;
    let outcome = train_eval(&spec, &dataset, &cfg.pb, cfg.seed)?;
    let dir = cfg.output_dir();
    let report = write(&dir, "report.csv", outcome.report.to_csv(cfg.record_timing))?;
    fs::create_dir_all(&dir)?;
    save_weights(&outcome.model, &dir.join("model.pbw"))?;
    let r = &outcome.record;
    println!(
        "{}: params {} cycles {} train {:.4} val {:.4} test {:.4}",
        r.run_id, r.params, r.dendrite_cycles, r.train_acc, r.val_acc, r.test_acc
    );
    println!("wrote {}", report.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(m) = args.width_multipliers {
        cfg.sweep.width_multipliers = m;
    }
    if let Some(c) = args.cycles {
        cfg.sweep.cycles = c;
    }
    if let Some(s) = args.seeds {
        cfg.sweep.seeds = Some(s);
    }
    cfg.sweep.parallel &= !args.sequential;
    cfg.record_timing |= args.record_timing;
    let dataset = cfg.dataset()?;
    let sweep = cfg.sweep_config(cfg.network_spec(&dataset)?);
    let result = run_sweep(&sweep, &dataset)?;
    let dir = cfg.output_dir();
    let path = write(&dir, "sweep.csv", result.to_csv(cfg.record_timing))?;
    if !result.failures.is_empty() {
        write(&dir, "failures.csv", result.failures_csv())?;
        for f in &result.failures {
            eprintln!("cell {} failed: {}", f.run_id, f.message);
        }
    }
    for f in &result.frontier {
        match &f.run_id {
            Some(id) => println!(
                "width {}: smallest run matching the full-width baseline is {id}",
                f.width_multiplier
            ),
            None => println!("width {}: no run matches the full-width baseline", f.width_multiplier),
        }
    }
    println!("wrote {} ({} rows)", path.display(), result.points.len());
    Ok(())
}

fn cost(args: CostArgs) -> Result<()> {
    let mut text = String::new();
    if let Some(tps) = args.tps {
        if let Some(hourly) = args.hourly {
            text.push_str(&format!(
                "cost_per_billion_usd {}\n",
                format_usd(cost_per_billion(hourly, tps)?)
            ));
        }
        if let Some(base) = args.baseline_tps {
            text.push_str(&format!("speedup {:.2}\n", speedup(tps, base)?));
        }
        if let Some(target) = args.target_tps {
            text.push_str(&format!("replicas {}\n", required_replicas(target, tps)?));
        }
        if text.is_empty() {
            return Err(Error::Usage(
                "--tps needs --hourly, --baseline-tps or --target-tps".into(),
            ));
        }
    }
    let show_table = args.table || args.tps.is_none();
    let rows = reference_rows();
    if show_table {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_table(&rows)?);
    }
    print!("{text}");
    if let Some(dir) = &args.output_dir {
        write(dir, "cost.txt", &text)?;
        if show_table {
            write(dir, "cost.csv", render_csv(&rows)?)?;
        }
    }
    Ok(())
}

fn attach_dendrites(model: &mut ModelGraph, cycles: usize) -> Result<()> {
    for _ in 0..cycles {
        for layer in model.hidden_layers() {
            let (n, d) = model.host_dims(layer)?;
            let prior = model.dendrite_block(layer).map_or(0, |b| b.cycle_count());
            let activation = model.activation_after(layer).unwrap_or(Activation::Tanh);
            let w = Tensor::full(vec![n, d + prior], 0.01);
            model.install_dendrite_cycle(layer, activation, true, w, Tensor::zeros(vec![n]))?;
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(m) = args.width_multiplier {
        cfg.network.width_multiplier = m;
    }
    let dataset = cfg.dataset()?;
    let spec: NetworkSpec = cfg.network_spec(&dataset)?;
    let mut model = ModelGraph::build(&spec.with_seed(cfg.seed))?;
    attach_dendrites(&mut model, args.cycles)?;
    let result = bench_throughput(&model, &args.batch_sizes, args.min_duration, args.parallel)?;
    for r in &result.rows {
        if let Some(e) = &r.error {
            eprintln!("batch {} failed: {e}", r.batch_size);
        }
    }
    let path = write(&cfg.output_dir(), "bench.csv", result.to_csv())?;
    println!(
        "params {} best {:.0} units/s at batch {}",
        model.count_params(true),
        result.best_units_per_s(),
        result.optimal_batch.map_or("-".into(), |b| b.to_string())
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn gen_data(args: CommonArgs) -> Result<()> {
    let cfg = load(&args)?;
    let dataset = cfg.dataset()?;
    let path = write(&cfg.output_dir(), "data.csv", dataset.to_csv())?;
    println!("wrote {} ({} samples)", path.display(), dataset.len());
    Ok(())
}

/// Prints every check; true when all pass.
fn run_verify() -> bool {
    let checks = verify::run_checks();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Cost(a) => cost(a),
        Command::Bench(a) => bench(a),
        Command::GenData(a) => gen_data(a),
        Command::Verify => {
            return if run_verify() {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: invariant checks failed");
                ExitCode::from(3)
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
