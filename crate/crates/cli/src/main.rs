//! `conjugacy`: data generation, training, evaluation, the reference error
//! table, uncertainty bands and the sliding-window orbit experiment.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use conjugacy_core::data::{make_dataset, Dataset, Partition};
use conjugacy_core::maps::{MapKind, MapSpec};
use conjugacy_core::models::{ModelCheckpoint, Variant};
use conjugacy_core::nn::{Activation, OptimizerKind};
use conjugacy_core::pool::{default_workers, parallel_map};
use conjugacy_core::report::{band_svg, render_table, run_cell, runs_csv, table_csv, trace_svg, ExperimentPlan};
use conjugacy_core::train::{evaluate, train, window_experiment, TrainConfig, TrainStatus};
use conjugacy_core::uq::{ensemble_summary, mc_dropout_summary, PredictionSummary, UqConfig};
use conjugacy_core::{Dataset64, MapSpec64, ModelState64};

const OUT_ENV: &str = "CONJUGACY_OUT_DIR";

#[derive(Parser)]
#[command(name = "conjugacy", version, about = "Learn chaotic maps with conjugacy autoencoders")]
struct Cli {
    /// Default output directory for commands without an explicit --out.
    #[arg(long, global = true, env = OUT_ENV, default_value = "out")]
    out_dir: PathBuf,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample (x, U(x)) pairs from a map and write them as CSV.
    GenData(GenDataArgs),
    /// Train one model on one map.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the full map x model error table.
    Table1(Table1Args),
    /// MC-dropout and ensemble confidence bands for trained checkpoints.
    Uq(UqArgs),
    /// Sliding-window forecasting on an orbit.
    Orbit(OrbitArgs),
}

#[derive(Args, Clone)]
struct MapArgs {
    /// logistic, tent, custom, katsura-fukuda (kf), doubling, pomeau-manneville (pm).
    #[arg(long)]
    map: Option<MapKind>,
    /// Map parameter: r, mu, KF r or PM z.
    #[arg(long)]
    param: Option<f64>,
    /// Pomeau-Manneville coefficient a.
    #[arg(long)]
    coeff: Option<f64>,
}

impl MapArgs {
    fn spec(&self) -> anyhow::Result<Option<MapSpec64>> {
        let Some(kind) = self.map else {
            if self.param.is_some() || self.coeff.is_some() {
                bail!("--param/--coeff need --map");
            }
            return Ok(None);
        };
        Ok(Some(MapSpec::from_param(kind, self.param, self.coeff)?))
    }

    fn require(&self) -> anyhow::Result<MapSpec64> {
        self.spec()?.ok_or_else(|| anyhow!("--map is required"))
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Omit to draw a seed from entropy; it is recorded in the metadata.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Model: 1-4 or conjugacy-ae, logistic-ae, fnn, pinn.
    #[arg(long)]
    model: Variant,
    #[arg(long)]
    seed: Option<u64>,
    /// Training data CSV (`x,ux`); generated from the map when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// TOML file with hyperparameter overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Model 2 starting coefficients.
    #[arg(long, allow_negative_numbers = true)]
    c1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    c2: Option<f64>,
    /// Output directory for checkpoint, report and loss curve.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperArgs {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    layer_width: Option<usize>,
    #[arg(long)]
    layers_in: Option<usize>,
    #[arg(long)]
    layers_out: Option<usize>,
    #[arg(long)]
    #[serde(default, deserialize_with = "parse_opt")]
    activation: Option<Activation>,
    #[arg(long)]
    #[serde(default, deserialize_with = "parse_opt")]
    optimizer: Option<OptimizerKind>,
    /// Drop probability while training.
    #[arg(long)]
    dropout: Option<f64>,
}

fn parse_opt<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

impl HyperArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(batch_size, epochs, learning_rate, layer_width, layers_in, layers_out, activation, optimizer, dropout);
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV; generated from the map and seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to the map recorded in the checkpoint.
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Table1Args {
    /// First seed; replicate r uses seed-base + r for data and weights.
    #[arg(long)]
    seed_base: Option<u64>,
    #[arg(long, default_value_t = 5)]
    replicates: usize,
    /// Print the plan and exit without training or writing files.
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UqArgs {
    /// Checkpoint to analyse; repeat for several models.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Defaults to the map recorded in the first checkpoint.
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Seed for the dataset, dropout masks and ensemble members.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    passes: usize,
    /// Drop probability for the MC-dropout passes.
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 5)]
    members: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OrbitArgs {
    /// Defaults to the logistic map with r = 4.
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, default_value_t = 0.4)]
    x0: f64,
    #[arg(long, default_value_t = 300)]
    length: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,5,7")]
    windows: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    models: Vec<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Outcome classes mapped onto the exit-code contract.
enum Failure {
    /// Bad flags, configuration or missing inputs: exit 1.
    Usage(anyhow::Error),
    /// Training stopped on a vanishing gradient or NaN: exit 2.
    Flagged(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<conjugacy_core::Error> for Failure {
    fn from(e: conjugacy_core::Error) -> Self {
        Failure::Usage(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.cmd {
        Command::GenData(a) => gen_data(&cli, a),
        Command::Train(a) => train_cmd(&cli, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Table1(a) => table1(&cli, a),
        Command::Uq(a) => uq(&cli, a),
        Command::Orbit(a) => orbit_cmd(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Flagged(msg)) => {
            eprintln!("flagged: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Explicit seed, or one drawn from entropy; the second value names the source.
fn resolve_seed(seed: Option<u64>) -> (u64, &'static str) {
    match seed {
        Some(s) => (s, "flag"),
        None => (rand::random(), "entropy"),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &serde_json::Value) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(v)? + "\n")
}

fn file_tag(spec: &MapSpec64) -> String {
    match spec.param() {
        Some(p) => format!("{}_{p}", spec.kind.name()),
        None => spec.kind.name().to_string(),
    }
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CmdResult {
    let spec = a.map.require()?;
    let (seed, source) = resolve_seed(a.seed);
    let data = make_dataset(&spec, a.n, seed)?;
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("data_{}.csv", file_tag(&spec))));
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write(&path, buf)?;
    write_json(
        &path.with_extension("meta.json"),
        &json!({ "map": spec, "n": a.n, "seed": seed, "seed_source": source }),
    )?;
    println!("wrote {} ({} rows, seed {seed})", path.display(), a.n);
    Ok(())
}

fn load_dataset(path: &Path, spec: MapSpec64, seed: u64) -> anyhow::Result<Dataset64> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Dataset::read_csv(f, spec, seed)?)
}

fn train_config(spec: &MapSpec64, config: Option<&Path>, hyper: &HyperArgs, seed: u64) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::preset(spec.kind).with_seed(seed);
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: HyperArgs = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        file.apply(&mut cfg);
    }
    hyper.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let spec = a.map.require()?;
    let (seed, source) = resolve_seed(a.seed);
    let cfg = train_config(&spec, a.config.as_deref(), &a.hyper, seed)?;
    let data = match &a.data {
        Some(p) => load_dataset(p, spec, seed)?,
        None => make_dataset(&spec, a.n, seed)?,
    };
    let mut model = cfg.model_config(a.model, 1, &spec);
    if a.c1.is_some() || a.c2.is_some() {
        if a.model != Variant::LogisticAe {
            return Err(anyhow!("--c1/--c2 only apply to model 2").into());
        }
        let c1 = a.c1.unwrap_or(model.c1_init);
        model = model.with_latent_coeffs(c1, a.c2.unwrap_or(-c1));
    }
    let (state, report) = train(&model, &data, &cfg)?;

    let dir = a.out.clone().unwrap_or_else(|| {
        cli.out_dir
            .join(format!("train_{}_model{}_seed{seed}", file_tag(&spec), a.model.number()))
    });
    let mut ckpt = ModelCheckpoint::capture(&state);
    ckpt.target_spec = Some(spec);
    ckpt.train_config = Some(cfg.clone());
    write(&dir.join("checkpoint.json"), ckpt.to_json()? + "\n")?;
    write(&dir.join("loss_curve.csv"), report.loss_curve_csv())?;
    write_json(
        &dir.join("report.json"),
        &json!({
            "map": spec,
            "model": a.model.number(),
            "seed": seed,
            "seed_source": source,
            "train_config": cfg,
            "status": report.status,
            "message": report.message,
            "train_mse": report.train_mse,
            "test_mse": report.test_mse,
            "epochs_run": report.history.len(),
            "wall_time_s": report.wall_time_s,
        }),
    )?;
    println!(
        "{} on {spec}: {} after {} epochs, train mse {:e}, test mse {:e} -> {}",
        a.model,
        report.status.name(),
        report.history.len(),
        report.train_mse,
        report.test_mse,
        dir.display()
    );
    match report.status {
        TrainStatus::Completed => Ok(()),
        s => Err(Failure::Flagged(format!(
            "{}: {}",
            s.name(),
            report.message.unwrap_or_default()
        ))),
    }
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(ModelCheckpoint, ModelState64)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ckpt = ModelCheckpoint::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    let state = ckpt.restore::<f64>()?;
    Ok((ckpt, state))
}

fn checkpoint_map(map: &MapArgs, ckpt: &ModelCheckpoint) -> anyhow::Result<MapSpec64> {
    match map.spec()? {
        Some(s) => Ok(s),
        None => ckpt
            .target_spec
            .ok_or_else(|| anyhow!("checkpoint records no map; pass --map")),
    }
}

fn eval_cmd(a: &EvalArgs) -> CmdResult {
    let (ckpt, state) = load_checkpoint(&a.checkpoint)?;
    let spec = checkpoint_map(&a.map, &ckpt)?;
    let (seed, source) = resolve_seed(a.seed);
    let data = match &a.data {
        Some(p) => load_dataset(p, spec, seed)?,
        None => make_dataset(&spec, a.n, seed)?,
    };
    let out = json!({
        "checkpoint": a.checkpoint,
        "map": spec,
        "model": ckpt.variant.number(),
        "seed": seed,
        "seed_source": source,
        "train_mse": evaluate(&state, &data, Partition::Train)?,
        "test_mse": evaluate(&state, &data, Partition::Test)?,
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

fn table1(cli: &Cli, a: &Table1Args) -> CmdResult {
    let (seed_base, source) = match a.seed_base {
        Some(s) => (s, "flag"),
        None if a.dry_run => (0, "unset"),
        None => resolve_seed(None),
    };
    let plan = ExperimentPlan::table1(seed_base, a.replicates)?;
    if a.dry_run {
        print!("{}", plan.describe());
        return Ok(());
    }
    let dir = a.out.clone().unwrap_or_else(|| cli.out_dir.join("table1"));
    let workers = a.workers.unwrap_or_else(default_workers).max(1);
    let start = std::time::Instant::now();
    let results = parallel_map(&plan.cells, workers, |cell| run_cell(cell, plan.samples))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    write(&dir.join("table1.csv"), table_csv(&plan, &results))?;
    write(&dir.join("table1_runs.csv"), runs_csv(&plan, &results))?;
    let text = render_table(&plan, &results);
    write(&dir.join("table1.txt"), &text)?;
    write_json(
        &dir.join("table1_meta.json"),
        &json!({
            "seed_base": seed_base,
            "seed_source": source,
            "replicates": a.replicates,
            "workers": workers,
            "wall_time_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    print!("{text}");
    Ok(())
}

fn write_summary(dir: &Path, stem: &str, s: &PredictionSummary, cfg: &UqConfig, extra: serde_json::Value) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    s.write_csv(&mut buf)?;
    write(&dir.join(format!("{stem}.csv")), buf)?;
    write_json(&dir.join(format!("{stem}.json")), &s.sidecar(cfg, extra))
}

fn uq(cli: &Cli, a: &UqArgs) -> CmdResult {
    let mut loaded = Vec::new();
    for p in &a.checkpoints {
        loaded.push(load_checkpoint(p)?);
    }
    let spec = checkpoint_map(&a.map, &loaded[0].0)?;
    let (seed, source) = resolve_seed(a.seed);
    let data = make_dataset(&spec, a.n, seed)?;
    let dir = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("uq_{}", file_tag(&spec))));
    let workers = a.workers.unwrap_or_else(default_workers).max(1);
    let mc_cfg = UqConfig::mc_dropout(a.passes, a.dropout).with_seed(seed);
    let ens_cfg = UqConfig::ensemble(a.members).with_seed(seed);
    mc_cfg.validate()?;
    ens_cfg.validate()?;

    let mut bands = Vec::new();
    let mut flagged = Vec::new();
    for (i, (ckpt, state)) in loaded.iter().enumerate() {
        let label = if loaded.iter().filter(|(c, _)| c.variant == ckpt.variant).count() > 1 {
            format!("model{}_{i}", ckpt.variant.number())
        } else {
            format!("model{}", ckpt.variant.number())
        };
        let mc = mc_dropout_summary(state, &data, &mc_cfg)?;
        let extra = json!({ "checkpoint": a.checkpoints[i], "data_seed": seed, "seed_source": source });
        write_summary(&dir, &format!("{label}_mc-dropout"), &mc, &mc_cfg, extra.clone())?;

        // members differ only by initialization, so they train without dropout
        let mut tc = ckpt
            .train_config
            .clone()
            .unwrap_or_else(|| TrainConfig::preset(spec.kind));
        tc.dropout = 0.0;
        let model = ckpt.config.clone();
        let seeds: Vec<u64> = (0..a.members as u64).map(|k| seed.wrapping_add(k)).collect();
        let ens = ensemble_summary(&seeds, &model, &data, &tc, &ens_cfg, workers)?;
        if !ens.excluded.is_empty() {
            flagged.push(format!("{label}: ensemble members {:?} excluded", ens.excluded));
        }
        let extra = json!({
            "checkpoint": a.checkpoints[i],
            "data_seed": seed,
            "seed_source": source,
            "member_seeds": seeds,
            "excluded": ens.excluded,
        });
        write_summary(&dir, &format!("{label}_ensemble"), &ens.summary, &ens_cfg, extra)?;
        println!(
            "{label}: mean 95% width mc-dropout {:e}, ensemble {:e}",
            mc.mean_width, ens.summary.mean_width
        );
        bands.push((format!("{label} mc-dropout"), mc));
        bands.push((format!("{label} ensemble"), ens.summary));
    }
    let refs: Vec<(String, &PredictionSummary)> = bands.iter().map(|(l, s)| (l.clone(), s)).collect();
    write(
        &dir.join(format!("uq_{}.svg", file_tag(&spec))),
        band_svg(&format!("95% intervals, {spec}"), &refs),
    )?;
    for f in &flagged {
        log::warn!("{f}");
    }
    Ok(())
}

fn orbit_cmd(cli: &Cli, a: &OrbitArgs) -> CmdResult {
    let spec = a.map.spec()?.unwrap_or_else(|| MapSpec::logistic(4.0));
    let (seed, source) = resolve_seed(a.seed);
    let cfg = train_config(&spec, None, &a.hyper, seed)?;
    let dir = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("orbit_{}", file_tag(&spec))));
    let mut summary = Vec::new();
    let mut flagged = Vec::new();
    for &w in &a.windows {
        let report = window_experiment(&spec, a.x0, w, a.length, &a.models, &cfg)?;
        write(&dir.join(format!("trace_w{w}.csv")), report.trace_csv())?;
        write(
            &dir.join(format!("trace_w{w}.svg")),
            trace_svg(&format!("{spec}, x0 = {}, window {w}", a.x0), &report),
        )?;
        for r in &report.runs {
            println!(
                "window {w} model {}: {} test mse {:e}",
                r.variant.number(),
                r.status.name(),
                r.test_mse
            );
            if !r.status.is_completed() {
                flagged.push(format!("window {w} model {}: {}", r.variant.number(), r.status.name()));
            }
            summary.push(json!({
                "window": w,
                "model": r.variant.number(),
                "status": r.status,
                "train_mse": r.train_mse,
                "test_mse": r.test_mse,
            }));
        }
        if report.degenerate {
            log::warn!("window {w}: orbit is degenerate");
        }
    }
    write_json(
        &dir.join("orbit_summary.json"),
        &json!({
            "map": spec,
            "x0": a.x0,
            "length": a.length,
            "seed": seed,
            "seed_source": source,
            "train_config": cfg,
            "runs": summary,
        }),
    )?;
    if flagged.is_empty() {
        Ok(())
    } else {
        Err(Failure::Flagged(flagged.join("; ")))
    }
}
