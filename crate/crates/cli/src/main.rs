//! Command-line driver: synthetic corpus generation, splitting, training,
//! reconstruction, evaluation, sweeps, ablations and report rendering.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use usrecon_core::backends::{
    train, write_train_log, BackendRegistry, BackendSpec, Checkpoint, Model, ModelPredictor,
    TrainConfig,
};
use usrecon_core::dataio::{
    list_scan_dirs, load_scan, load_scans_by_id, make_split, Scan, SplitManifest, SPLIT_FILE,
};
use usrecon_core::harness::{
    emit_ablation_report, emit_report, run_ablation, run_sweep, AblationConfig, AblationSpec,
    GridRow, ReportFormat, SweepResult,
};
use usrecon_core::reconstruct::{chain, evaluate_scans, EvalOptions};
use usrecon_core::sampling::{sample_tasks_seeded, TaskPair, TaskSet};
use usrecon_core::synthdata::{generate_corpus, CorpusSpec};

#[derive(Parser)]
#[command(name = "usrecon", about = "Trackerless freehand ultrasound reconstruction toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tracked-scan corpus.
    Synth {
        /// Corpus spec JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Create or refresh split.json for a dataset directory.
    Split {
        #[arg(long)]
        data_root: PathBuf,
        /// Ratio as train,val,test.
        #[arg(long, default_value = "3,1,1")]
        ratio: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a prediction backend.
    Train {
        /// Training run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's data root.
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Reconstruct one scan's trajectory with a trained model.
    Reconstruct {
        #[arg(long)]
        scan: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        model: PathBuf,
        /// Sequence length; must match the checkpoint.
        #[arg(long = "M")]
        m: u32,
        #[arg(long)]
        istar: u32,
        #[arg(long)]
        jstar: u32,
        /// Output trajectory CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model over a dataset split, emitting metric reports.
    Eval {
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Which split to evaluate: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Main task override; defaults to the checkpoint's main task.
        #[arg(long)]
        istar: Option<u32>,
        #[arg(long)]
        jstar: Option<u32>,
        /// Pixel stride for the accumulated error metric.
        #[arg(long, default_value_t = 1)]
        stride: u32,
        #[arg(long, default_value_t = 1.0)]
        voxel_mm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a grid of (M, i*, j*) rows across trained models.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run variance-reduction ablation arms.
    Ablate {
        /// Ablation spec JSON.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Render tables and plots from a persisted sweep or ablation result.
    Report {
        /// Directory containing sweep_result.json and/or ablation_result.json.
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated: csv,png,svg.
        #[arg(long, default_value = "csv,png")]
        format: String,
    },
}

#[derive(Serialize, Deserialize)]
struct TrainRunConfig {
    data_root: PathBuf,
    backend: BackendSpec,
    /// Main task (i*, j*).
    main: [u32; 2],
    /// Seed for the task-subset draw.
    #[serde(default)]
    task_seed: u64,
    train: TrainConfig,
    out_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct SweepRunConfig {
    data_root: PathBuf,
    /// Checkpoint paths.
    models: Vec<PathBuf>,
    /// Explicit rows [M, i*, j*]; omit to sweep every task of every model.
    grid: Option<Vec<[u32; 3]>>,
    #[serde(default = "default_split_name")]
    split: String,
    #[serde(default = "default_stride")]
    stride: u32,
    #[serde(default = "default_voxel")]
    voxel_mm: f64,
    out_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct AblateRunConfig {
    data_root: PathBuf,
    backend: BackendSpec,
    main: [u32; 2],
    #[serde(default)]
    task_seed: u64,
    train: TrainConfig,
    grid: Option<Vec<[u32; 3]>>,
    arms: Vec<AblationSpec>,
    #[serde(default = "default_stride")]
    stride: u32,
    #[serde(default = "default_voxel")]
    voxel_mm: f64,
    out_dir: PathBuf,
}

fn default_split_name() -> String {
    "test".into()
}

fn default_stride() -> u32 {
    1
}

fn default_voxel() -> f64 {
    1.0
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

fn load_split(data_root: &Path) -> Result<SplitManifest> {
    SplitManifest::load(&data_root.join(SPLIT_FILE))
        .with_context(|| format!("loading split.json under {}", data_root.display()))
}

fn split_ids<'a>(split: &'a SplitManifest, name: &str) -> Result<&'a [String]> {
    match name {
        "train" => Ok(&split.train),
        "val" => Ok(&split.val),
        "test" => Ok(&split.test),
        other => bail!("unknown split {other:?}; expected train, val or test"),
    }
}

fn sample_tasks_for(spec: &BackendSpec, main: [u32; 2], task_seed: u64) -> Result<TaskSet> {
    Ok(sample_tasks_seeded(
        spec.m,
        spec.tau_plus_1 as usize,
        TaskPair::new(main[0], main[1]),
        task_seed,
    )?)
}

fn load_models(paths: &[PathBuf], registry: &BackendRegistry) -> Result<Vec<Box<dyn Model>>> {
    paths
        .iter()
        .map(|p| {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(ckpt.into_model(registry)?)
        })
        .collect()
}

fn grid_rows(explicit: &Option<Vec<[u32; 3]>>, models: &[Box<dyn Model>]) -> Vec<GridRow> {
    match explicit {
        Some(rows) => rows
            .iter()
            .map(|r| GridRow { m: r[0], istar: r[1], jstar: r[2] })
            .collect(),
        None => {
            let mut rows = Vec::new();
            for model in models {
                for pair in &model.tasks().pairs {
                    rows.push(GridRow { m: model.spec().m, istar: pair.i, jstar: pair.j });
                }
            }
            rows
        }
    }
}

fn cmd_synth(config: &Path, out: &Path) -> Result<()> {
    let spec: CorpusSpec = read_json(config)?;
    let summary = generate_corpus(&spec, out)?;
    println!(
        "generated {} scans under {} (train/val/test = {}/{}/{})",
        summary.scan_ids.len(),
        out.display(),
        summary.split.train.len(),
        summary.split.val.len(),
        summary.split.test.len()
    );
    Ok(())
}

fn cmd_split(data_root: &Path, ratio: &str, seed: u64) -> Result<()> {
    let parts: Vec<u32> = ratio
        .split(',')
        .map(|t| t.trim().parse().context("ratio must be three integers"))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        bail!("ratio must have exactly three parts, got {ratio:?}");
    }
    let ids: Vec<String> = list_scan_dirs(data_root)?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let split = make_split(&ids, [parts[0], parts[1], parts[2]], seed)?;
    split.save(&data_root.join(SPLIT_FILE))?;
    println!(
        "split {} scans into {}/{}/{}",
        ids.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_train(config_path: &Path, data_root_override: Option<PathBuf>) -> Result<()> {
    let mut cfg: TrainRunConfig = read_json(config_path)?;
    if let Some(root) = data_root_override {
        cfg.data_root = root;
    }
    let split = load_split(&cfg.data_root)?;
    let train_scans = load_scans_by_id(&cfg.data_root, &split.train)?;
    let val_scans = load_scans_by_id(&cfg.data_root, &split.val)?;
    let tasks = sample_tasks_for(&cfg.backend, cfg.main, cfg.task_seed)?;

    let registry = BackendRegistry::builtin();
    let outcome = train(&cfg.backend, &tasks, &train_scans, &val_scans, &cfg.train, &registry)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    outcome.best.save(&cfg.out_dir.join("checkpoint.json"))?;
    outcome.last.save(&cfg.out_dir.join("last.json"))?;
    write_train_log(
        &cfg.out_dir.join("training_log.csv"),
        &outcome,
        &cfg.backend,
        &tasks,
        &cfg.train,
    )?;
    std::fs::write(
        cfg.out_dir.join("run.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config": &cfg,
            "tasks": &tasks,
            "best_epoch": outcome.best_epoch,
            "best_val_eacc": outcome.best_val_eacc,
            "last_val_eacc": outcome.last_val_eacc,
            "excluded_scans": outcome.excluded_scans,
        }))?,
    )?;
    println!(
        "trained {} (M = {}): best val eps_acc {:.4} mm at epoch {} -> {}",
        cfg.backend.kind,
        cfg.backend.m,
        outcome.best_val_eacc,
        outcome.best_epoch,
        cfg.out_dir.join("checkpoint.json").display()
    );
    Ok(())
}

fn cmd_reconstruct(
    scan_dir: &Path,
    model_path: &Path,
    m: u32,
    istar: u32,
    jstar: u32,
    out: &Path,
) -> Result<()> {
    let registry = BackendRegistry::builtin();
    let ckpt = Checkpoint::load(model_path)?;
    if ckpt.spec.m != m {
        bail!("checkpoint was trained with M = {}, asked for M = {}", ckpt.spec.m, m);
    }
    let model = ckpt.into_model(&registry)?;
    let scan: Scan = load_scan(scan_dir)?;
    let predictor = ModelPredictor(model.as_ref());
    let traj = chain(&scan, &predictor, TaskPair::new(istar, jstar))?;
    traj.save_csv(out)?;
    println!(
        "reconstructed {} frames ({} interpolated) -> {}",
        traj.len(),
        traj.interpolated_count(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    data_root: &Path,
    model_path: &Path,
    split_name: &str,
    istar: Option<u32>,
    jstar: Option<u32>,
    stride: u32,
    voxel_mm: f64,
    out: &Path,
) -> Result<()> {
    let registry = BackendRegistry::builtin();
    let model = Checkpoint::load(model_path)?.into_model(&registry)?;
    let split = load_split(data_root)?;
    let scans = load_scans_by_id(data_root, split_ids(&split, split_name)?)?;
    let main = match (istar, jstar) {
        (Some(i), Some(j)) => TaskPair::new(i, j),
        (None, None) => model.tasks().main,
        _ => bail!("--istar and --jstar must be given together"),
    };
    let opts = EvalOptions { acc_stride: stride, voxel_mm };
    let predictor = ModelPredictor(model.as_ref());
    let report = evaluate_scans(&scans, &predictor, main, &opts)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    let mut csv = String::from(
        "scan_id,eps_frame,eps_acc,eps_dice,eps_drift,windows,interpolated_frames\n",
    );
    for s in &report.per_scan {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.scan_id, s.eps_frame, s.eps_acc, s.eps_dice, s.eps_drift, s.windows,
            s.interpolated_frames
        ));
    }
    std::fs::write(out.join("metrics.csv"), csv)?;
    println!(
        "{} scans: eps_frame {:.4} | eps_acc {:.4} | eps_dice {:.4} | eps_drift {:.4} -> {}",
        report.per_scan.len(),
        report.eps_frame,
        report.eps_acc,
        report.eps_dice,
        report.eps_drift,
        out.display()
    );
    Ok(())
}

fn cmd_sweep(config_path: &Path) -> Result<()> {
    let cfg: SweepRunConfig = read_json(config_path)?;
    let registry = BackendRegistry::builtin();
    let models = load_models(&cfg.models, &registry)?;
    let split = load_split(&cfg.data_root)?;
    let scans = load_scans_by_id(&cfg.data_root, split_ids(&split, &cfg.split)?)?;
    let grid = grid_rows(&cfg.grid, &models);
    let opts = EvalOptions { acc_stride: cfg.stride, voxel_mm: cfg.voxel_mm };
    let refs: Vec<&dyn Model> = models.iter().map(|m| m.as_ref()).collect();
    let result = run_sweep(&refs, &scans, &grid, &opts)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(
        cfg.out_dir.join("sweep_result.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    println!(
        "swept {} rows ({} skipped) -> {}",
        result.rows.len(),
        result.skipped.len(),
        cfg.out_dir.join("sweep_result.json").display()
    );
    Ok(())
}

fn cmd_ablate(spec_path: &Path) -> Result<()> {
    let cfg: AblateRunConfig = read_json(spec_path)?;
    let registry = BackendRegistry::builtin();
    let split = load_split(&cfg.data_root)?;
    let train_scans = load_scans_by_id(&cfg.data_root, &split.train)?;
    let val_scans = load_scans_by_id(&cfg.data_root, &split.val)?;
    let test_scans = load_scans_by_id(&cfg.data_root, &split.test)?;
    let tasks = sample_tasks_for(&cfg.backend, cfg.main, cfg.task_seed)?;
    let grid = match &cfg.grid {
        Some(rows) => rows
            .iter()
            .map(|r| GridRow { m: r[0], istar: r[1], jstar: r[2] })
            .collect(),
        None => tasks
            .pairs
            .iter()
            .map(|p| GridRow { m: cfg.backend.m, istar: p.i, jstar: p.j })
            .collect(),
    };
    let ablation_cfg = AblationConfig {
        backend: cfg.backend.clone(),
        tasks,
        train: cfg.train.clone(),
        grid,
        opts: EvalOptions { acc_stride: cfg.stride, voxel_mm: cfg.voxel_mm },
    };
    let arms = run_ablation(
        &cfg.arms,
        &ablation_cfg,
        &train_scans,
        &val_scans,
        &test_scans,
        &registry,
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(
        cfg.out_dir.join("ablation_result.json"),
        serde_json::to_string_pretty(&arms)?,
    )?;
    for arm in &arms {
        println!(
            "arm {}: {} train scans, best val eps_acc {:.4} mm",
            arm.spec.name, arm.reduction.scans_after, arm.best_val_eacc
        );
    }
    println!("-> {}", cfg.out_dir.join("ablation_result.json").display());
    Ok(())
}

fn cmd_report(input: &Path, format: &str) -> Result<()> {
    let formats = ReportFormat::parse_list(format)?;
    let mut wrote_any = false;
    let sweep_path = input.join("sweep_result.json");
    if sweep_path.is_file() {
        let result: SweepResult = read_json(&sweep_path)?;
        let written = emit_report(&result, input, &formats)?;
        for p in written {
            println!("wrote {}", p.display());
        }
        wrote_any = true;
    }
    let ablation_path = input.join("ablation_result.json");
    if ablation_path.is_file() {
        let arms: Vec<usrecon_core::harness::AblationArmResult> = read_json(&ablation_path)?;
        let written = emit_ablation_report(&arms, input, &formats)?;
        for p in written {
            println!("wrote {}", p.display());
        }
        wrote_any = true;
    }
    if !wrote_any {
        bail!(
            "nothing to report: no sweep_result.json or ablation_result.json under {}",
            input.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, out } => cmd_synth(&config, &out),
        Command::Split { data_root, ratio, seed } => cmd_split(&data_root, &ratio, seed),
        Command::Train { config, data_root } => cmd_train(&config, data_root),
        Command::Reconstruct { scan, model, m, istar, jstar, out } => {
            cmd_reconstruct(&scan, &model, m, istar, jstar, &out)
        }
        Command::Eval { data_root, model, split, istar, jstar, stride, voxel_mm, out } => {
            cmd_eval(&data_root, &model, &split, istar, jstar, stride, voxel_mm, &out)
        }
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Ablate { spec } => cmd_ablate(&spec),
        Command::Report { input, format } => cmd_report(&input, &format),
    }
}
