//! Command-line front end. Each subcommand reads and writes files in the
//! output directory; see [`run`] for exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::checkpoint::{load_policy, load_ssm, save_policy, save_ssm};
use super::config::RunConfig;
use super::pipeline::{build_plant, evaluate, generate_datasets, identify, learn_policy};
use super::report::{render_summary, summarize, EvalReport};
use super::simulate::{trajectory_header, trajectory_rows, PlantKind};
use crate::error::{Error, Result};
use crate::plant::io::{
    read_ctrl_csv, read_sysid_csv, write_ctrl_csv, write_sysid_csv, write_table,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DPC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "dpc",
    version,
    about = "Differentiable predictive control for multi-zone buildings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the emulator and write the identification and control datasets.
    GenerateData(Common),
    /// Identify the neural state-space model from `sysid.csv`.
    TrainSsm(Common),
    /// Train the control law through the frozen model on `ctrl.csv`.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint; defaults to `<out>/ssm.json`.
        #[arg(long)]
        ssm: Option<PathBuf>,
    },
    /// Receding-horizon closed-loop evaluation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ssm: Option<PathBuf>,
        /// Control law checkpoint; defaults to `<out>/policy.json`.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nominal")]
        plant: PlantKind,
    },
    /// Aggregate `report_*.json` files (searched recursively in directories).
    EvalReport {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report files or directories; defaults to the output directory.
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $DPC_OUT_DIR, then `./out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        let out = out_dir(&self.out);
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok((cfg, out))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Sidecar with file hashes and wall-clock timings. The only artifact that
/// differs between identical runs.
#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    config_hash: String,
    seed: u64,
    files: BTreeMap<String, String>,
    timings_s: BTreeMap<String, f64>,
    created_unix_s: u64,
}

fn write_manifest(
    out: &Path,
    name: &str,
    command: &'static str,
    cfg: &RunConfig,
    files: &[&str],
    timings_s: BTreeMap<String, f64>,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        hashes.insert(f.to_string(), file_hash(&out.join(f))?);
    }
    let created_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &out.join(name),
        &Manifest {
            command,
            config_hash: cfg.hash(),
            seed: cfg.run.seed,
            files: hashes,
            timings_s,
            created_unix_s,
        },
    )
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("run `{produced_by}` first"),
            ),
        ))
    }
}

fn generate_data(common: &Common) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let start = Instant::now();
    let plant = build_plant(&cfg)?;
    let (sysid, ctrl) = generate_datasets(&cfg, &plant)?;
    write_sysid_csv(&out.join("sysid.csv"), &sysid)?;
    write_ctrl_csv(&out.join("ctrl.csv"), &ctrl)?;
    let timings = BTreeMap::from([("generate".to_string(), start.elapsed().as_secs_f64())]);
    write_manifest(
        &out,
        "data.manifest.json",
        "generate-data",
        &cfg,
        &["sysid.csv", "ctrl.csv"],
        timings,
    )?;
    println!(
        "wrote {} identification and {} control samples to {}",
        sysid.len(),
        ctrl.y.len(),
        out.display()
    );
    Ok(())
}

fn train_ssm(common: &Common) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let data = out.join("sysid.csv");
    require(&data, "generate-data")?;
    let ds = read_sysid_csv(&data)?;
    let plant = build_plant(&cfg)?;
    let start = Instant::now();
    let (model, summary) = identify(&cfg, &plant, &ds)?;
    let elapsed = start.elapsed().as_secs_f64();
    save_ssm(&out.join("ssm.json"), &model, &cfg.hash())?;
    write_json(&out.join("ssm_history.json"), &summary)?;
    let timings = BTreeMap::from([("train_ssm".to_string(), elapsed)]);
    write_manifest(
        &out,
        "ssm.manifest.json",
        "train-ssm",
        &cfg,
        &["ssm.json", "ssm_history.json"],
        timings,
    )?;
    println!(
        "model: {} parameters, {} epochs, dev nMSE {:.5}, test nMSE {:.5}, {:.1} s",
        summary.param_count,
        summary.history.epochs.len(),
        summary.dev_nmse.mean,
        summary.test_nmse.mean,
        elapsed
    );
    Ok(())
}

/// Load a model checkpoint and check it against the configured architecture.
fn load_model(cfg: &RunConfig, path: &Path) -> Result<crate::dynamics::NeuralSsm> {
    require(path, "train-ssm")?;
    let (model, _) = load_ssm(path)?;
    let expected = cfg.ssm.architecture(model.n_y(), model.n_u(), model.n_d());
    if model.architecture() != expected {
        return Err(Error::Dimension(format!(
            "model checkpoint {} does not match the `ssm` configuration",
            path.display()
        )));
    }
    let zones = cfg.plant.building.zones;
    if model.n_y() != zones || model.n_u() != zones + 1 {
        return Err(Error::Dimension(format!(
            "model checkpoint has {} outputs and {} controls, plant config has {zones} zones",
            model.n_y(),
            model.n_u()
        )));
    }
    Ok(model)
}

fn train_policy(common: &Common, ssm: &Option<PathBuf>) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let model = load_model(&cfg, &ssm.clone().unwrap_or_else(|| out.join("ssm.json")))?;
    let data = out.join("ctrl.csv");
    require(&data, "generate-data")?;
    let ds = read_ctrl_csv(&data)?;
    let plant = build_plant(&cfg)?;
    let start = Instant::now();
    let (policy, summary) = learn_policy(&cfg, &plant, &model, &ds)?;
    let elapsed = start.elapsed().as_secs_f64();
    save_policy(&out.join("policy.json"), &policy, &cfg.hash())?;
    write_json(&out.join("policy_history.json"), &summary)?;
    let timings = BTreeMap::from([("train_policy".to_string(), elapsed)]);
    write_manifest(
        &out,
        "policy.manifest.json",
        "train-policy",
        &cfg,
        &["policy.json", "policy_history.json"],
        timings,
    )?;
    println!(
        "control law: {} parameters, {} updates, dev loss {:.5} -> {:.5} (ratio {:.4}), {:.1} s",
        summary.param_count,
        summary.history.updates,
        summary.history.initial_dev_loss,
        summary.history.best_dev_loss,
        summary.dev_loss_ratio,
        elapsed
    );
    Ok(())
}

fn simulate(
    common: &Common,
    ssm: &Option<PathBuf>,
    policy: &Option<PathBuf>,
    kind: PlantKind,
) -> Result<()> {
    let (cfg, out) = common.resolve()?;
    let model = load_model(&cfg, &ssm.clone().unwrap_or_else(|| out.join("ssm.json")))?;
    let policy_path = policy.clone().unwrap_or_else(|| out.join("policy.json"));
    require(&policy_path, "train-policy")?;
    let (law, _) = load_policy(&policy_path)?;
    if law.layout != cfg.policy.layout(model.n_y(), model.n_d(), model.past()) {
        return Err(Error::Dimension(format!(
            "control law {} does not match the model window or the `policy` configuration",
            policy_path.display()
        )));
    }
    let plant = build_plant(&cfg)?;
    let start = Instant::now();
    let (report, sim) = evaluate(&cfg, &plant, &model, &law, kind)?;
    let elapsed = start.elapsed().as_secs_f64();

    let report_name = format!("report_{}.json", kind.as_str());
    let traj_name = format!("trajectory_{}.csv", kind.as_str());
    write_json(&out.join(&report_name), &report)?;
    write_table(
        &out.join(&traj_name),
        &trajectory_header(plant.zones()),
        &trajectory_rows(&sim.records, plant.params().ts),
    )?;
    let mut timings = BTreeMap::from([("simulate".to_string(), elapsed)]);
    // training wall-clock from the earlier stages, when available
    for (stage, manifest) in [
        ("train_ssm", "ssm.manifest.json"),
        ("train_policy", "policy.manifest.json"),
    ] {
        if let Some(t) = read_timing(&out.join(manifest), stage) {
            timings.insert(stage.to_string(), t);
        }
    }
    write_manifest(
        &out,
        &format!("report_{}.manifest.json", kind.as_str()),
        "simulate",
        &cfg,
        &[&report_name, &traj_name],
        timings.clone(),
    )?;
    print!("{}", report.render());
    for (stage, t) in &timings {
        println!("wall-clock {stage}: {t:.1} s");
    }
    Ok(())
}

fn read_timing(path: &Path, stage: &str) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("timings_s")?.get(stage)?.as_f64()
}

fn collect_reports(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if p.is_dir() {
                collect_reports(&p, found)?;
            } else if name.starts_with("report_")
                && name.ends_with(".json")
                && !name.ends_with(".manifest.json")
            {
                found.push(p);
            }
        }
        Ok(())
    } else if path.exists() {
        found.push(path.to_path_buf());
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such report"),
        ))
    }
}

fn eval_report(out: &Option<PathBuf>, inputs: &[PathBuf]) -> Result<()> {
    let out = out_dir(out);
    let sources = if inputs.is_empty() {
        vec![out.clone()]
    } else {
        inputs.to_vec()
    };
    let mut files = Vec::new();
    for s in &sources {
        collect_reports(s, &mut files)?;
    }
    if files.is_empty() {
        return Err(Error::config("reports", "no report_*.json files found"));
    }
    let mut reports = Vec::with_capacity(files.len());
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::format(f, e.to_string()))?;
        reports.push(r);
    }
    let rows = summarize(&reports);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::plant::io::csv_err(&path, e))?;
    let write = |w: &mut csv::Writer<std::fs::File>, rec: &[String]| {
        w.write_record(rec)
            .map_err(|e| crate::plant::io::csv_err(&path, e))
    };
    write(
        &mut w,
        &["plant", "metric", "runs", "mean", "std"].map(String::from),
    )?;
    for r in &rows {
        write(
            &mut w,
            &[
                r.plant.as_str().to_string(),
                r.metric.to_string(),
                r.spread.runs.to_string(),
                r.spread.mean.to_string(),
                r.spread.std.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("{} report(s)", reports.len());
    print!("{}", render_summary(&rows));
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateData(c) => generate_data(c),
        Command::TrainSsm(c) => train_ssm(c),
        Command::TrainPolicy { common, ssm } => train_policy(common, ssm),
        Command::Simulate {
            common,
            ssm,
            policy,
            plant,
        } => simulate(common, ssm, policy, *plant),
        Command::EvalReport { out, reports } => eval_report(out, reports),
    }
}

/// Parse arguments, run, and map the outcome to an exit code: 0 on success,
/// 2 on invalid input (configuration, dimensions, usage), 1 otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
