use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mds_core::campaign::{self, derive_seeds, MetricsReport};
use mds_core::config::{Config, RawConfig};
use mds_core::features::prepare_training_set;
use mds_core::ingest::{
    merge_and_label, parse_ground_truth, parse_log_stream, read_canonical, receiver_from_filename,
    write_canonical, CanonicalRecord,
};
use mds_core::lstm::{self, load_model, save_model};
use mds_core::misbehavior::MisbehaviorSpec;
use mds_core::sim::{simulate, write_trace, ForcedTrigger, Scenario};
use mds_core::{Error, LabelId, MisbehaviorKind, Result};

#[derive(Parser)]
#[command(
    name = "platoon-mds",
    version,
    about = "Platoon misbehavior detection and defense simulator"
)]
struct Cli {
    /// Flat key = value configuration file; missing keys take the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set repetitions=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert VeReMi logs plus ground truth into a canonical table.
    Ingest(IngestArgs),
    /// Simulate defense-off scenarios and write a labeled training table.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the detector on one or more canonical tables.
    Train(TrainArgs),
    /// Run one scenario.
    Simulate(SimulateArgs),
    /// Run the experiment matrix into a results directory.
    Campaign {
        #[arg(long)]
        out: PathBuf,
        /// Detector model; defaults to the configured path.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Aggregate a results directory into text and delimited tables.
    Report {
        /// Directory written by `campaign`.
        #[arg(long)]
        runs: PathBuf,
        /// Where to write the tables; defaults to the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Receiver log files, `traceJSON-<rx>-...json`.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    /// Label assigned to falsified messages of this scenario.
    #[arg(long, default_value_t = 0)]
    label: u8,
    #[arg(long)]
    out: PathBuf,
    /// Skip and conflict report; defaults to `<out>.skipped.txt`.
    #[arg(long)]
    skips: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Model file; defaults to the configured path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch loss and accuracy table.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 4)]
    size: usize,
    /// Misbehavior kind; omit for a regular run.
    #[arg(long)]
    kind: Option<MisbehaviorKind>,
    #[arg(long, default_value_t = 1)]
    attacker: usize,
    /// Activation second; drawn from the seed when omitted.
    #[arg(long)]
    activation: Option<u32>,
    /// Run seed; defaults to the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    defense: bool,
    /// Detector model; defaults to the configured path when the defense is on.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Force `VEHICLE:SECONDS` into gap control.
    #[arg(long, value_name = "VEHICLE:SECONDS")]
    force: Option<String>,
    /// Result summary as JSON.
    #[arg(long)]
    out: PathBuf,
    /// Per-vehicle kinematic trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Physics steps between trace rows.
    #[arg(long, default_value_t = 10)]
    trace_stride: u32,
}

fn load_config(cli: &Cli) -> Result<RawConfig> {
    let mut raw = match &cli.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        raw.set(k.trim(), v.trim())?;
    }
    Ok(raw)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let label = LabelId::new(args.label)?;
    let (truth, skipped) = parse_ground_truth(BufReader::new(File::open(&args.truth)?))?;
    let mut report = vec![(args.truth.display().to_string(), skipped)];
    let mut records: Vec<CanonicalRecord> = Vec::new();
    for (i, path) in args.logs.iter().enumerate() {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let rx = receiver_from_filename(&name).unwrap_or(i as i64);
        let (msgs, mut skips) = parse_log_stream(BufReader::new(File::open(path)?), rx)?;
        let (recs, merge_skips) = merge_and_label(&msgs, &truth, label);
        skips.extend(merge_skips);
        records.extend(recs);
        report.push((path.display().to_string(), skips));
    }
    write_canonical(&records, create(&args.out)?)?;
    let skip_path = args
        .skips
        .clone()
        .unwrap_or_else(|| args.out.with_extension("skipped.txt"));
    let mut w = create(&skip_path)?;
    let mut total = 0;
    for (source, skips) in &report {
        total += skips.len();
        skips.write_to(source, &mut w)?;
    }
    w.flush()?;
    let labeled = records.iter().filter(|r| !r.lab.is_regular()).count();
    println!(
        "{} records ({labeled} labeled {label}), {total} skipped -> {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let t = Instant::now();
    let records = campaign::build_training_corpus(&cfg.corpus)?;
    write_canonical(&records, create(out)?)?;
    let labeled = records.iter().filter(|r| !r.lab.is_regular()).count();
    println!(
        "{} records ({labeled} misbehaving) in {:.1?} -> {}",
        records.len(),
        t.elapsed(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &Config, args: &TrainArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &args.data {
        records.extend(read_canonical(BufReader::new(File::open(p)?))?);
    }
    let prep = prepare_training_set(&records, cfg.train.seed)?;
    println!("windows per label before balancing: {:?}", prep.raw_counts);
    if !prep.rejected.is_empty() {
        println!(
            "{} windows rejected for non-monotone timestamps",
            prep.rejected.len()
        );
    }
    println!(
        "train {} / validation {} windows",
        prep.split.train.len(),
        prep.split.val.len()
    );
    let t = Instant::now();
    let outcome = lstm::train(&prep.split, prep.scaler, &cfg.train)?;
    let best = &outcome.history[outcome.best_epoch];
    println!(
        "{} epochs in {:.1?}, best epoch {} validation accuracy {:.4}{}",
        outcome.history.len(),
        t.elapsed(),
        best.epoch,
        best.val_acc,
        if outcome.stopped_early {
            " (early stop)"
        } else {
            ""
        }
    );
    let out = args.out.clone().unwrap_or_else(|| cfg.model.clone());
    save_model(&outcome.model, &out)?;
    if let Some(h) = &args.history {
        lstm::train::write_history(&outcome.history, create(h)?)?;
    }
    println!("model -> {}", out.display());
    Ok(())
}

fn parse_force(s: &str) -> Result<ForcedTrigger> {
    let bad = || Error::Config(format!("--force expects VEHICLE:SECONDS, got {s:?}"));
    let (v, t) = s.split_once(':').ok_or_else(bad)?;
    Ok(ForcedTrigger {
        vehicle: v.parse().map_err(|_| bad())?,
        time: t.parse().map_err(|_| bad())?,
    })
}

fn simulate_cmd(cfg: &Config, args: &SimulateArgs) -> Result<()> {
    let base = args.seed.unwrap_or(cfg.campaign.base_seed);
    let (drawn, seed, injector_seed) = derive_seeds(base, 0);
    let mut sc = Scenario::new(args.size, seed);
    sc.params = cfg.sim;
    sc.defense = args.defense;
    sc.trace_stride = args.trace.is_some().then_some(args.trace_stride.max(1));
    sc.forced_trigger = args.force.as_deref().map(parse_force).transpose()?;
    sc.misbehavior = args.kind.map(|kind| MisbehaviorSpec {
        kind,
        vehicle: args.attacker,
        activation_time: args.activation.unwrap_or(drawn),
        seed: injector_seed,
        offset_redraw: cfg.offset_redraw,
    });
    let model = if args.defense {
        let path = args.model.clone().unwrap_or_else(|| cfg.model.clone());
        Some(load_model(&path)?)
    } else {
        None
    };
    let out = simulate(&sc, model.as_ref())?;
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(p) = &args.trace {
        write_trace(&out.trace, create(p)?)?;
    }
    println!(
        "collisions {}, transitions {}, predictions {} -> {}",
        out.collisions.len(),
        out.transitions.len(),
        out.predictions.len(),
        args.out.display()
    );
    Ok(())
}

fn campaign_cmd(cfg: &Config, raw: &RawConfig, out: &Path, model: Option<&PathBuf>) -> Result<()> {
    let model = if cfg.campaign.needs_model() {
        let path = model.unwrap_or(&cfg.model);
        if !path.exists() {
            return Err(Error::Config(format!(
                "defense enabled but model {} does not exist",
                path.display()
            )));
        }
        Some(load_model(path)?)
    } else {
        None
    };
    let t = Instant::now();
    let results = campaign::run_campaign(&cfg.campaign, model.as_ref())?;
    campaign::save_results(out, &results)?;
    fs::write(out.join("config.txt"), raw.dump())?;
    println!(
        "{} runs in {:.1?} -> {}",
        results.len(),
        t.elapsed(),
        out.display()
    );
    Ok(())
}

fn report_cmd(runs: &Path, out: Option<&PathBuf>) -> Result<()> {
    let results = campaign::load_results(runs)?;
    let report = MetricsReport::build(&results);
    report.write_dir(out.map_or(runs, |p| p.as_path()))?;
    print!("{}", report.to_text());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let raw = load_config(&cli)?;
    let cfg = Config::from_raw(&raw)?;
    if cli.dump_config {
        print!("{}", raw.dump());
        return Ok(());
    }
    match &cli.command {
        None => Err(Error::Config("no subcommand given; see --help".into())),
        Some(Command::Ingest(a)) => ingest(a),
        Some(Command::GenData { out }) => gen_data(&cfg, out),
        Some(Command::Train(a)) => train(&cfg, a),
        Some(Command::Simulate(a)) => simulate_cmd(&cfg, a),
        Some(Command::Campaign { out, model }) => campaign_cmd(&cfg, &raw, out, model.as_ref()),
        Some(Command::Report { runs, out }) => report_cmd(runs, out.as_ref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
