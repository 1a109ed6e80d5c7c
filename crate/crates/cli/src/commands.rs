use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use morphnas_core::arch::{load_checkpoint, save_checkpoint, ArchitectureDescriptor, Network};
use morphnas_core::data::{build_load_features, build_wind_features, load_csv, prepare, synth_generate, write_csv, DataKind, PreparedData, Schema, SeriesTable, WindowSpec};
use morphnas_core::morph::{apply, verify_preservation, InputRange};
use morphnas_core::pool::{performance, NetPool};
use morphnas_core::rng::stream;
use morphnas_core::search::{run_search_with, train_epochs, RunDir, SeedRecord};
use morphnas_core::tensor::AdamConfig;

use crate::action::parse_action;
use crate::config::{DataConfig, RunConfig};
use crate::{CliError, Command};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(out: &Path, command: Command) -> Result<()> {
    match command {
        Command::Search {
            config,
            name,
            force,
            search,
            data,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            search.apply(&mut cfg.search);
            data.apply(&mut cfg.data);
            cmd_search(out, cfg, name, force)
        }
        Command::Morph {
            checkpoint,
            action,
            verify,
            samples,
            tolerance,
            seed,
            output,
        } => cmd_morph(&checkpoint, &action, verify.then_some((samples, tolerance)), seed, output.unwrap_or_else(|| out.join("morphed.json"))),
        Command::Train {
            arch,
            init,
            epochs,
            batch_size,
            learning_rate,
            seed,
            output,
            data,
        } => {
            let mut d = DataConfig::default();
            data.apply(&mut d);
            let start = match (arch, init) {
                (_, Some(p)) => Start::Checkpoint(p),
                (Some(tokens), None) => Start::Tokens(tokens),
                (None, None) => return Err(CliError::Usage("train needs --arch or --init".into())),
            };
            let adam = AdamConfig::with_lr(learning_rate);
            cmd_train(&d, start, epochs, batch_size, adam, seed, output.unwrap_or_else(|| out.join("model.json")))
        }
        Command::Eval { checkpoint, split, data } => {
            let mut d = DataConfig::default();
            data.apply(&mut d);
            cmd_eval(&checkpoint, &split, d)
        }
        Command::Datagen { kind, seed, length, output } => {
            let path = output.unwrap_or_else(|| out.join(format!("{kind}-seed{seed}.csv")));
            cmd_datagen(kind, seed, length, &path)
        }
        Command::Pool { dir, json } => cmd_pool(&dir, json),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Core(morphnas_core::Error::Io { path: parent.into(), source: e }))?;
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Core(morphnas_core::Error::Io { path: path.into(), source: e }))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn raw_table(d: &DataConfig) -> Result<SeriesTable> {
    Ok(match &d.path {
        Some(p) => load_csv(p, &Schema::for_kind(d.kind))?,
        None => synth_generate(d.kind, d.synth_length, d.synth_seed)?,
    })
}

fn window_spec(d: &DataConfig) -> WindowSpec {
    let mut spec = WindowSpec::for_kind(d.kind);
    if let Some(w) = d.window {
        spec.window = w;
    }
    if let Some(h) = d.horizon {
        spec.horizon = h;
    }
    spec
}

fn prepare_table(raw: &SeriesTable, d: &DataConfig) -> Result<PreparedData> {
    let features = match d.kind {
        DataKind::Load => build_load_features(raw)?,
        DataKind::Wind => build_wind_features(raw)?,
    };
    Ok(prepare(&features, &window_spec(d), d.kind)?)
}

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
    rows: usize,
    /// Set when the series was generated for this run.
    synthetic: bool,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    artifact: &'static str,
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    inputs: Vec<InputDigest>,
    outputs: BTreeMap<&'static str, PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    best_tokens: String,
    best_params: usize,
    validation_rmse: f64,
    validation_mae: f64,
    test_rmse: f64,
    test_mae: f64,
    episodes: usize,
    failed_episodes: usize,
    seeds: &'a [SeedRecord],
}

fn cmd_search(out: &Path, cfg: RunConfig, name: Option<String>, force: bool) -> Result<()> {
    cfg.search.validate()?;
    let name = name.unwrap_or_else(|| format!("{}-seed{}", cfg.search.variant, cfg.search.seed));
    let root = out.join(name);
    if root.join("manifest.json").exists() && !force {
        return Err(CliError::Usage(format!("{} already holds a run; pass --force to overwrite it", root.display())));
    }
    let dir = RunDir::create(&root)?;

    let raw = raw_table(&cfg.data)?;
    let input = match &cfg.data.path {
        Some(p) => InputDigest {
            path: p.clone(),
            sha256: sha256_file(p)?,
            rows: raw.len(),
            synthetic: false,
        },
        None => {
            let p = dir.path("data.csv");
            write_csv(&raw, &p)?;
            InputDigest {
                sha256: sha256_file(&p)?,
                path: p,
                rows: raw.len(),
                synthetic: true,
            }
        }
    };
    let outputs = ["config.json", "episodes.jsonl", "metrics.csv", "timings.csv", "best.json", "policy.json", "pool", "summary.json"]
        .into_iter()
        .map(|n| (n, dir.path(n)))
        .collect();
    dir.write_json(
        "manifest.json",
        &RunManifest {
            artifact: "morphnas",
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.search.seed,
            config: &cfg,
            inputs: vec![input],
            outputs,
        },
    )?;
    dir.write_json("config.json", &cfg)?;

    let data = prepare_table(&raw, &cfg.data)?;
    let total = cfg.search.episodes;
    let outcome = run_search_with(cfg.search.clone(), &data, |search, record| {
        dir.record_episode(record)?;
        let (best, m) = search.best();
        info!(
            "episode {}/{}: {} -> {} rmse {} (best {} rmse {:.4})",
            record.episode + 1,
            total,
            record.tokens_before,
            record.tokens_after,
            record.val_rmse.map_or("failed".into(), |r| format!("{r:.4}")),
            best.tokens(),
            m.rmse
        );
        Ok(())
    })?;
    dir.write_pool(&outcome.pool)?;
    dir.write_best(&outcome.best)?;
    dir.write_policy(&outcome.controller)?;
    let summary = Summary {
        best_tokens: outcome.best.tokens(),
        best_params: outcome.best.param_count(),
        validation_rmse: outcome.best_validation.rmse as f64,
        validation_mae: outcome.best_validation.mae as f64,
        test_rmse: outcome.test.rmse as f64,
        test_mae: outcome.test.mae as f64,
        episodes: outcome.history.len(),
        failed_episodes: outcome.history.iter().filter(|r| !r.succeeded()).count(),
        seeds: &outcome.seeds,
    };
    dir.write_json("summary.json", &summary)?;
    println!(
        "best={} params={} val_rmse={} test_rmse={} test_mae={} run={}",
        summary.best_tokens,
        summary.best_params,
        summary.validation_rmse,
        summary.test_rmse,
        summary.test_mae,
        root.display()
    );
    Ok(())
}

fn cmd_morph(checkpoint: &Path, action: &str, verify: Option<(usize, morphnas_core::tensor::Real)>, seed: u64, output: PathBuf) -> Result<()> {
    let action = parse_action(action).map_err(CliError::Usage)?;
    let teacher = load_checkpoint(checkpoint)?;
    let student = apply(&teacher, action, &mut stream(seed, "cli-morph", 0))?.network;
    println!("{} -> {}", teacher.tokens(), student.tokens());
    if let Some((samples, tol)) = verify {
        let dev = verify_preservation(&teacher, &student, samples, InputRange::default(), &mut stream(seed, "cli-verify", 0))?;
        println!("max_deviation={dev:e}");
        if !(dev <= tol) {
            return Err(CliError::Verify(format!("morph changed the network's outputs by {dev:e}, above tolerance {tol:e}")));
        }
    }
    ensure_parent(&output)?;
    save_checkpoint(&student, &output, true)?;
    println!("wrote {}", output.display());
    Ok(())
}

enum Start {
    Tokens(String),
    Checkpoint(PathBuf),
}

fn cmd_train(d: &DataConfig, start: Start, epochs: usize, batch: usize, adam: AdamConfig, seed: u64, output: PathBuf) -> Result<()> {
    if epochs == 0 || batch == 0 {
        return Err(CliError::Usage("epochs and batch size must be at least 1".into()));
    }
    adam.validate()?;
    let data = prepare_table(&raw_table(d)?, d)?;
    let mut net = match start {
        Start::Tokens(tokens) => {
            let desc = ArchitectureDescriptor::from_tokens(data.input_shape(), &tokens)?;
            Network::random(desc, &mut stream(seed, "cli-init", 0))?
        }
        Start::Checkpoint(p) => load_checkpoint(&p)?,
    };
    if net.input_shape() != data.input_shape() {
        return Err(morphnas_core::Error::Dataset(format!(
            "network expects input {:?} but the data gives {:?}",
            net.input_shape(),
            data.input_shape()
        ))
        .into());
    }
    let losses = train_epochs(&mut net, &data.train, epochs, batch, adam, &mut stream(seed, "cli-train", 0))?;
    for (i, l) in losses.iter().enumerate() {
        info!("epoch {}: loss {l:.6}", i + 1);
    }
    let m = performance(&net, &data.validation, &data.stats)?;
    ensure_parent(&output)?;
    save_checkpoint(&net, &output, true)?;
    println!(
        "arch={} params={} epochs={} final_loss={} val_rmse={} val_mae={} wrote={}",
        net.tokens(),
        net.param_count(),
        net.epochs_trained,
        losses.last().copied().unwrap_or(morphnas_core::tensor::Real::NAN),
        m.rmse,
        m.mae,
        output.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, split: &str, mut d: DataConfig) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    if d.window.is_none() {
        d.window = Some(net.input_shape().time);
    }
    let data = prepare_table(&raw_table(&d)?, &d)?;
    let set = match split {
        "train" => &data.train,
        "validation" => &data.validation,
        _ => &data.test,
    };
    let m = performance(&net, set, &data.stats)?;
    println!("rmse={} mae={}", m.rmse, m.mae);
    Ok(())
}

fn cmd_datagen(kind: DataKind, seed: u64, length: usize, path: &Path) -> Result<()> {
    let table = synth_generate(kind, length, seed)?;
    ensure_parent(path)?;
    write_csv(&table, path)?;
    println!("wrote {} rows to {}", table.len(), path.display());
    Ok(())
}

fn cmd_pool(dir: &Path, json: bool) -> Result<()> {
    let pool = NetPool::load_snapshot(dir)?;
    if json {
        for (rank, e) in pool.entries().iter().enumerate() {
            let line = serde_json::json!({
                "rank": rank,
                "tokens": e.network.tokens(),
                "score": e.score,
                "params": e.network.param_count(),
                "origin": e.origin,
            });
            println!("{line}");
        }
        return Ok(());
    }
    println!("{:>4}  {:>12}  {:>8}  {:>7}  tokens", "rank", "rmse", "params", "origin");
    for (rank, e) in pool.entries().iter().enumerate() {
        let origin = e.origin.map_or("seed".to_string(), |o| o.to_string());
        println!("{rank:>4}  {:>12.4}  {:>8}  {origin:>7}  {}", e.score, e.network.param_count(), e.network.tokens());
    }
    Ok(())
}
