use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rubikpp::loss;
use rubikpp::net::load_checkpoint;
use rubikpp::pipeline::{
    self, compare_runs, evaluate_restoration, load_pretext_dataset, ExperimentConfig, MetricsReport, Restorer,
};
use rubikpp::rubik::{self, Axis, DisarrangeParams, DisarrangeRecord};
use rubikpp::volume::{load_volume, save_volume, Volume};

use crate::config;
use crate::{Command, ExpArgs, UsageError};

#[derive(Args, Debug)]
pub struct DisarrangeArgs {
    /// Input volume (`.nii`, or raw `.f32` with a JSON header).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output raw volume (`.f32`); the header and `<stem>.record.json` go next to it.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Subcube side, one value or three (x,y,z).
    #[arg(long, value_delimiter = ',', default_value = "4")]
    side: Vec<usize>,
    /// Layers rotated per axis.
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Record written by `disarrange`.
    #[arg(long, value_name = "PATH")]
    record: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Original volume; the restoration MSE against it is printed.
    #[arg(long, value_name = "PATH")]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Reconstruction loss arm.
    #[arg(long, value_parser = ["l1", "l2"])]
    loss: Option<String>,
    /// Train with the discriminator (`true`) or reconstruction only (`false`).
    #[arg(long, value_name = "BOOL")]
    adversarial: Option<bool>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Pretrained checkpoint, or `none` for random initialization.
    #[arg(long, value_name = "none|PATH", default_value = "none")]
    from: String,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Subcube sides to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Layer counts to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Pretext dataset directory from `gen-dataset`; held-out pairs are
    /// generated from the config when omitted.
    #[arg(long, value_name = "DIR")]
    pairs: Option<PathBuf>,
    /// Restorer: a checkpoint path, `oracle` or `identity`.
    #[arg(long, value_name = "PATH|oracle|identity")]
    restorer: String,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Baseline scores.
    a: PathBuf,
    /// Candidate scores.
    b: PathBuf,
    /// Read this column of a CSV with a header row instead of a plain list
    /// of numbers.
    #[arg(long)]
    column: Option<String>,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[command(flatten)]
    exp: ExpArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Volume or record JSON.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Print the valid rotation angles per axis for this subcube side.
    #[arg(long, value_delimiter = ',')]
    side: Option<Vec<usize>>,
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Disarrange(a) => disarrange(a),
        Command::Restore(a) => restore(a),
        Command::GenDataset(e) => {
            let cfg = effective(&e, &[])?;
            let dir = pipeline::gen_pretext_dataset(&cfg)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Sweep(a) => {
            let cfg = effective(&a.exp, &[])?;
            let (report, path) = pipeline::run_sweep(&cfg, &a.n, &a.m)?;
            for row in &report.rows {
                log::info!("n={} m={} final_mse={} mean_dice={}", row[0], row[1], row[2], row[4]);
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Transfer(a) => transfer(a),
        Command::Inspect(a) => inspect(a),
        Command::PrintConfig(e) => {
            print!("{}", config::render(&effective(&e, &[])?));
            Ok(())
        }
    }
}

fn effective(e: &ExpArgs, extra: &[String]) -> Result<ExperimentConfig> {
    let mut overrides = e.overrides.clone();
    if let Some(dir) = &e.output_dir {
        overrides.push(format!("output_dir={}", toml_string(&dir.display().to_string())));
    }
    overrides.extend_from_slice(extra);
    config::load(e.config.as_deref(), &overrides, e.seed)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn side3(side: &[usize]) -> Result<[usize; 3]> {
    match *side {
        [s] => Ok([s; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(UsageError(format!("--side takes 1 or 3 values, got {}", side.len())).into()),
    }
}

fn record_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.record.json"))
}

fn read_record(path: &Path) -> Result<DisarrangeRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading record {}", path.display()))?;
    Ok(DisarrangeRecord::from_json(&text)?)
}

fn dims_str(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

fn disarrange(a: DisarrangeArgs) -> Result<()> {
    let side = side3(&a.side)?;
    let volume = load_volume(&a.input)?;
    let (out, record) = rubik::disarrange(&volume, &DisarrangeParams::new(side, a.m, a.seed))?;
    let (hdr, data) = save_volume(&out, &a.out)?;
    let rec = record_path(&a.out);
    fs::write(&rec, record.to_json() + "\n").with_context(|| format!("writing {}", rec.display()))?;
    println!(
        "grid {} (side {}, covered {} of {}), {} rotations",
        dims_str(record.grid.counts()),
        dims_str(side),
        dims_str(record.grid.covered()),
        dims_str(record.grid.dims()),
        record.sequence.len()
    );
    for p in [hdr, data, rec] {
        println!("{}", p.display());
    }
    Ok(())
}

fn restore(a: RestoreArgs) -> Result<()> {
    let volume = load_volume(&a.input)?;
    let record = read_record(&a.record)?;
    let restored = rubik::restore(&volume, &record)?;
    let (hdr, data) = save_volume(&restored, &a.out)?;
    println!("{}", hdr.display());
    println!("{}", data.display());
    if let Some(r) = &a.reference {
        let reference = load_volume(r)?;
        println!("mse {}", loss::l2_loss(&reference, &restored)?);
    }
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(l) = &a.loss {
        extra.push(format!("loss.recon={}", toml_string(l)));
    }
    if let Some(adv) = a.adversarial {
        extra.push(format!("loss.adversarial={adv}"));
    }
    let cfg = effective(&a.exp, &extra)?;
    let (outcome, paths) = pipeline::pretrain(&cfg)?;
    let r = &outcome.report;
    log::info!(
        "recon {:?} adversarial {}: final mse {:?}, identity mse {:?}",
        cfg.loss.recon,
        cfg.loss.adversarial,
        r.final_mse,
        r.identity_mse
    );
    println!("{}", paths.report.display());
    if let Some(ck) = paths.checkpoint {
        println!("{}", ck.display());
    }
    Ok(())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = effective(&a.exp, &[])?;
    let ck = match a.from.as_str() {
        "none" => None,
        p => Some(load_checkpoint(Path::new(p))?),
    };
    let (report, paths) = pipeline::finetune(&cfg, ck.as_ref())?;
    log::info!("mean dice {:?}", report.mean_dice);
    println!("{}", paths.report.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = effective(&a.exp, &[])?;
    let pairs = match &a.pairs {
        Some(dir) => load_pretext_dataset(dir)?,
        None => pipeline::eval_pairs(&cfg)?,
    };
    let model;
    let restorer = match a.restorer.as_str() {
        "oracle" => Restorer::Oracle,
        "identity" => Restorer::Identity,
        p => {
            model = load_checkpoint(Path::new(p))?.generator;
            Restorer::Model(&model)
        }
    };
    let scores = evaluate_restoration(&restorer, &pairs)?;
    let identity = evaluate_restoration(&Restorer::Identity, &pairs)?;
    let mut report = MetricsReport::new("eval", &cfg, &["sample", "mse"]);
    report.rows = scores.per_sample.iter().enumerate().map(|(i, (_, v))| vec![i as f64, *v]).collect();
    report.final_mse = Some(scores.mse);
    report.identity_mse = Some(identity.mse);
    let path = pipeline::emit(&report, &cfg, &cfg.output_dir, &[])?;
    log::info!("mse {} (identity {})", scores.mse, identity.mse);
    println!("{}", path.display());
    Ok(())
}

fn read_scores(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bad = |tok: &str| UsageError(format!("{}: {tok:?} is not a number", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(name) = column else {
        return text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| bad(t).into()))
            .collect();
    };
    let header = lines.next().unwrap_or_default();
    let i = header
        .split(',')
        .position(|h| h.trim() == name)
        .ok_or_else(|| UsageError(format!("{}: no column {name:?}", path.display())))?;
    lines
        .map(|l| {
            let t = l.split(',').nth(i).unwrap_or("").trim();
            t.parse().map_err(|_| bad(t).into())
        })
        .collect()
}

fn compare(a: CompareArgs) -> Result<()> {
    let x = read_scores(&a.a, a.column.as_deref())?;
    let y = read_scores(&a.b, a.column.as_deref())?;
    let c = compare_runs(&x, &y)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    Ok(())
}

fn transfer(a: TransferArgs) -> Result<()> {
    let cfg = effective(&a.exp, &[])?;
    let report = pipeline::transfer_study(&cfg, &a.seeds)?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let path = cfg.output_dir.join("transfer.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("transfer: {}", report.comparison.verdict);
    println!("{}", path.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let is_record = a.input.to_string_lossy().ends_with(".record.json");
    if is_record {
        let r = read_record(&a.input)?;
        let p = r.params;
        println!(
            "record: seed {}, side {}, m {}, grid {} on {}",
            p.seed,
            dims_str(p.side),
            p.m,
            dims_str(r.grid.counts()),
            dims_str(r.grid.dims())
        );
        println!("{} rotations:", r.sequence.len());
        for (i, rot) in r.sequence.iter().enumerate() {
            println!("  {:>3}  {rot}", i + 1);
        }
        return Ok(());
    }
    let v = load_volume(&a.input)?;
    print_volume(&v);
    if let Some(side) = a.side {
        let grid = rubik::make_grid(v.dims(), side3(&side)?)?;
        println!("grid {} (covered {})", dims_str(grid.counts()), dims_str(grid.covered()));
        println!("{:<9} {:>6}  angles", "axis", "layers");
        for axis in Axis::ALL {
            let angles: Vec<String> = rubik::valid_angles(&grid, axis)
                .iter()
                .map(|a| a.degrees().to_string())
                .collect();
            println!("{:<9} {:>6}  {{{}}}", axis.to_string(), grid.counts()[axis.index()], angles.join(","));
        }
    }
    Ok(())
}

fn print_volume(v: &Volume) {
    let (lo, hi) = v.value_range();
    println!("dims {}", dims_str(v.dims()));
    println!("channels {}", v.channels());
    println!("range [{lo}, {hi}]");
}
