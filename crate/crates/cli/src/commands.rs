use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use scan_core::checkpoint::save_params;
use scan_core::coreset::{read_ids, write_coreset};
use scan_core::scheduler::phase_table;
use scan_core::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{require_file, CliResult, Failure, Kind};

pub const SEED_ENV: &str = "SCAN_SEED";

/// Prints with 6 significant digits; files keep full precision.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn seed_from_env() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::config(format!("{SEED_ENV}={v:?} is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Number of pairs
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Fraction of pairs whose second view comes from another class
    #[arg(long, default_value_t = 0.1)]
    pub mismatch: f64,
    /// Fraction of pairs that are low-noise near-copies of earlier pairs
    #[arg(long, default_value_t = 0.1)]
    pub duplicate: f64,
    /// Per-coordinate noise scale
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Generator seed (falls back to SCAN_SEED, then 0)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(0),
    };
    let spec = GenSpec {
        n: args.n,
        dim: args.dim,
        num_classes: args.classes,
        mismatch_frac: args.mismatch,
        duplicate_frac: args.duplicate,
        noise_sigma: args.sigma,
        seed,
    };
    let ds = generate_paired_dataset(&spec)?;
    save_dataset(&ds, &args.out)?;
    let (m, d) = spec.counts();
    println!("wrote {} pairs ({m} mismatched, {d} duplicate) to {}", ds.len(), args.out.display());
    Ok(())
}

/// Training hyperparameters shared by `train` and `compare`.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Extra `key=value` override (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau_cos: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub t_td: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Training seed (falls back to SCAN_SEED when neither the flag nor the config sets it)
    #[arg(long)]
    pub seed: Option<u64>,
    /// paired | view_pair
    #[arg(long)]
    pub mode: Option<String>,
    /// linear | mlp
    #[arg(long)]
    pub tower: Option<String>,
}

impl ConfigArgs {
    /// Defaults, then SCAN_SEED, then the config file, then `--set`, then flags.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(seed) = seed_from_env()? {
            cfg.seed = seed;
        }
        if let Some(path) = &self.config {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            cfg.apply_kv(&text)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags: [(&str, Option<String>); 11] = [
            ("rho", self.rho.map(|v| v.to_string())),
            ("tau_cos", self.tau_cos.map(|v| v.to_string())),
            ("tau_stop", self.epochs.map(|v| v.to_string())),
            ("t_td", self.t_td.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("out_dim", self.out_dim.map(|v| v.to_string())),
            ("hidden_dim", self.hidden_dim.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("tower", self.tower.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scan,
    Full,
    Random,
    Static,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Scan => "scan",
            Method::Full => "full",
            Method::Random => "random",
            Method::Static => "static",
        }
    }
}

fn run_method(method: Method, ds: &PairedDataset, cfg: &TrainConfig, coreset: Option<&[u32]>) -> CliResult<RunOutput> {
    Ok(match method {
        Method::Scan => train_scan(ds, cfg)?,
        Method::Full => train_full(ds, cfg)?,
        Method::Random => train_random_baseline(ds, cfg)?,
        Method::Static => {
            let ids = coreset.ok_or_else(|| Failure::config("static training needs --coreset"))?;
            train_static_coreset(ds, ids, cfg)?
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a training run, plus the files it produced.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub method: Method,
    pub config: TrainConfig,
    pub dataset: FileRef,
    pub coreset: Option<FileRef>,
    pub n: usize,
    pub out_dir: PathBuf,
    /// Paths relative to `out_dir`, sorted.
    pub artifacts: Vec<String>,
}

fn run_id(method: Method, cfg: &TrainConfig, dataset_sha: &str, coreset_sha: Option<&str>) -> String {
    let mut h = Sha256::new();
    h.update(method.name());
    h.update(cfg.to_kv());
    h.update(dataset_sha);
    h.update(coreset_sha.unwrap_or(""));
    hex::encode(h.finalize())[..12].to_string()
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset file written by gen-data
    #[arg(long, value_name = "PATH", required_unless_present = "replay")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Scan)]
    pub method: Method,
    /// Coreset id file for --method static
    #[arg(long, value_name = "PATH")]
    pub coreset: Option<PathBuf>,
    /// Rerun the run described by a manifest
    #[arg(long, value_name = "MANIFEST", conflicts_with_all = ["data", "coreset", "config", "overrides"])]
    pub replay: Option<PathBuf>,
    /// Run directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let (method, cfg, data, coreset_path) = match &args.replay {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let sha = sha256_file(&m.dataset.path)?;
            if sha != m.dataset.sha256 {
                return Err(Failure::config(format!("{} changed since the run (sha256 {sha})", m.dataset.path.display())));
            }
            (m.method, m.config, m.dataset.path, m.coreset.map(|c| c.path))
        }
        None => {
            let data = args.data.clone().expect("clap requires --data without --replay");
            (args.method, args.config.resolve()?, data, args.coreset.clone())
        }
    };
    if method == Method::Scan {
        cfg.validate_for_scan()?;
    }
    require_file(&data)?;
    let ds = load_dataset(&data)?;
    let dataset = FileRef { path: absolute(&data), sha256: sha256_file(&data)? };
    let (coreset, coreset_ref) = match &coreset_path {
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
            (Some(read_ids(&text)?), Some(FileRef { path: absolute(p), sha256: sha256_file(p)? }))
        }
        None => (None, None),
    };

    let out = run_method(method, &ds, &cfg, coreset.as_deref())?;

    let dir = &args.out;
    fs::create_dir_all(dir.join("excluded")).map_err(|e| Failure::io(dir, e))?;
    let mut artifacts = Vec::new();
    let mut write = |name: String, f: &dyn Fn(&mut dyn Write) -> io::Result<()>| -> CliResult<()> {
        let path = dir.join(&name);
        let mut w = create(&path)?;
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::io(&path, e))?;
        artifacts.push(name);
        Ok(())
    };
    write("metrics.jsonl".into(), &|w| out.write_metrics(w))?;
    write("timing.jsonl".into(), &|w| out.write_timing(w))?;
    for (rec, view) in out.log.iter().zip(&out.excluded) {
        if !view.excluded.is_empty() {
            write(format!("excluded/epoch-{:04}.txt", rec.epoch), &|w| view.write_dump(w, rec.rho_cur))?;
        }
    }
    if let Some(c) = out.final_candidates() {
        write("candidates.tsv".into(), &|w| c.write_tsv(w))?;
    }
    let ckpt = dir.join("checkpoint.bin");
    save_params(&out.params, &ckpt)?;
    artifacts.push("checkpoint.bin".into());
    artifacts.push("manifest.json".into());
    artifacts.sort();

    let manifest = RunManifest {
        run_id: run_id(method, &cfg, &dataset.sha256, coreset_ref.as_ref().map(|c| c.sha256.as_str())),
        method,
        config: cfg,
        dataset,
        coreset: coreset_ref,
        n: ds.len(),
        out_dir: absolute(dir),
        artifacts,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Failure::io(&path, e))?;

    let last = out.log.last().expect("at least one epoch");
    println!(
        "run {} ({}): {} epochs, mean samples per epoch {}, final loss {}, wrote {}",
        manifest.run_id,
        method.name(),
        out.log.len(),
        sig6(out.mean_epoch_samples()),
        sig6((last.mean_loss_fg + last.mean_loss_gf) / 2.0),
        dir.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 3)]
    pub tau_cos: usize,
    #[arg(long, default_value_t = 32)]
    pub epochs: usize,
    /// Warm-up epochs before the first round
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
}

pub fn schedule(args: &ScheduleArgs) -> CliResult<()> {
    if args.tau_cos == 0 {
        return Err(Failure::config("tau_cos must be >= 1"));
    }
    let stdout = io::stdout();
    let mut w = stdout.lock();
    let emit = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "epoch,phase,rho_cur")?;
        for (epoch, phase) in phase_table(args.tau_cos, args.epochs, args.warmup).iter().enumerate() {
            writeln!(w, "{epoch},{},{}", phase.name(), sig6(phase.rho_cur()))?;
        }
        Ok(())
    };
    emit(&mut w).map_err(|e| Failure::new(Kind::Failed, e.to_string()))
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// First SCAN run directory
    #[arg(long, value_name = "DIR")]
    pub run_a: PathBuf,
    /// Second SCAN run directory
    #[arg(long, value_name = "DIR")]
    pub run_b: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn load_summary(dir: &Path) -> CliResult<(RunManifest, PrunedSummary)> {
    let mpath = dir.join("manifest.json");
    require_file(&mpath)?;
    let text = fs::read_to_string(&mpath).map_err(|e| Failure::io(&mpath, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", mpath.display())))?;
    let cpath = dir.join("candidates.tsv");
    require_file(&cpath)?;
    let file = File::open(&cpath).map_err(|e| Failure::io(&cpath, e))?;
    let cands = CandidateSet::read_tsv(BufReader::new(file))?;
    let summary = PrunedSummary::from_candidates(m.run_id.clone(), &cands, m.n)?;
    Ok((m, summary))
}

pub fn export(args: &ExportArgs) -> CliResult<()> {
    let (_, a) = load_summary(&args.run_a)?;
    let (_, b) = load_summary(&args.run_b)?;
    let ids = export_coreset(&a, &b, args.rho)?;
    let mut w = create(&args.out)?;
    write_coreset(&mut w, &ids, a.n, args.rho, (&a.run_id, &b.run_id)).and_then(|_| w.flush()).map_err(|e| Failure::io(&args.out, e))?;
    let overlap = overlap_ratio(&[a.ids(), b.ids()]).map(sig6).unwrap_or_else(|_| "n/a".into());
    println!("coreset of {} ids (pruned-set overlap {overlap}) written to {}", ids.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Methods to run, comma separated
    #[arg(long, value_enum, value_delimiter = ',', default_value = "full,scan,random,static")]
    pub runs: Vec<Method>,
    /// Coreset for the static row; by default it is exported from two SCAN runs (seed and seed + 1)
    #[arg(long, value_name = "PATH")]
    pub coreset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

struct Row {
    method: Method,
    accuracy: f64,
    samples: f64,
    wall_ms: f64,
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    require_file(&args.data)?;
    let cfg = args.config.resolve()?;
    let ds = load_dataset(&args.data)?;
    let mut scan_run: Option<RunOutput> = None;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for &method in &args.runs {
        if !seen.insert(method.name()) {
            continue;
        }
        let coreset = if method == Method::Static { Some(static_coreset(args, &ds, &cfg, &mut scan_run)?) } else { None };
        let started = Instant::now();
        let out = run_method(method, &ds, &cfg, coreset.as_deref())?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        rows.push(Row { method, accuracy: linear_probe(&out.params, &ds, args.probe_seed)?, samples: out.mean_epoch_samples(), wall_ms });
        if method == Method::Scan {
            scan_run = Some(out);
        }
    }
    println!("{:<8} {:>12} {:>14} {:>12}", "method", "probe_acc", "mean_samples", "wall_ms");
    for r in &rows {
        println!("{:<8} {:>12} {:>14} {:>12}", r.method.name(), sig6(r.accuracy), sig6(r.samples), sig6(r.wall_ms));
    }
    Ok(())
}

fn static_coreset(args: &CompareArgs, ds: &PairedDataset, cfg: &TrainConfig, scan_run: &mut Option<RunOutput>) -> CliResult<Vec<u32>> {
    if let Some(p) = &args.coreset {
        require_file(p)?;
        let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
        return Ok(read_ids(&text)?);
    }
    cfg.validate_for_scan()?;
    let first = match scan_run.take() {
        Some(r) => r,
        None => train_scan(ds, cfg)?,
    };
    let second = train_scan(ds, &TrainConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() })?;
    let n = ds.len();
    let missing = || Failure::new(Kind::Failed, "SCAN run built no candidate set; raise --epochs");
    let a = PrunedSummary::from_candidates("a", first.final_candidates().ok_or_else(missing)?, n)?;
    let b = PrunedSummary::from_candidates("b", second.final_candidates().ok_or_else(missing)?, n)?;
    *scan_run = Some(first);
    Ok(export_coreset(&a, &b, cfg.rho)?)
}
