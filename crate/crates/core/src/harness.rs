//! Experiment driver: dependency sweeps over `(M, i*, j*)`, variance-reduction
//! ablations, a two-sample test utility, and table/plot emission.
//!
//! Sweep rows are evaluated per test scan and aggregated two ways, per `M`:
//! best-over-tasks (each metric independently takes its best row) and
//! mean-over-tasks. Reports carry enough provenance (seeds, realised task
//! lists, normalisation and pooling rules) that every row can be recomputed
//! from the persisted checkpoint, scans and grid row alone.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::backends::{
    train, BackendError, BackendRegistry, BackendSpec, Model, ModelPredictor, TrainConfig,
    TrainOutcome,
};
use crate::dataio::{DataError, Protocol, Scan};
use crate::plot::{LinePlot, Series};
use crate::reconstruct::{evaluate_scans, EvalOptions, ReconstructError};
use crate::sampling::{dependency_of, SamplingError, TaskPair, TaskSet};

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("grid: {0}")]
    BadGrid(String),
    #[error("no model provides M = {m} with task ({i},{j})", m = row.m, i = row.istar, j = row.jstar)]
    RowUnmatched { row: GridRow },
    #[error("samples must each have at least 2 entries")]
    SampleTooSmall,
    #[error("both samples have zero variance; the t statistic is undefined")]
    DegenerateSamples,
    #[error("ablation arm {arm}: {message}")]
    BadAblation { arm: String, message: String },
    #[error("empty result set")]
    EmptyResults,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One sweep point: model sequence length and main-task indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRow {
    pub m: u32,
    pub istar: u32,
    pub jstar: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Per-row sweep outcome: the dependency decomposition plus metric stats
/// over the test scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRowResult {
    pub m: u32,
    pub istar: u32,
    pub jstar: u32,
    pub past: u32,
    pub future: u32,
    pub interval: u32,
    pub eps_frame: MetricStats,
    pub eps_acc: MetricStats,
    pub eps_dice: MetricStats,
    pub eps_drift: MetricStats,
    pub n_scans: usize,
}

/// Per-`M` aggregate across that model's evaluated rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggRow {
    pub m: u32,
    pub eps_frame: MetricStats,
    pub eps_acc: MetricStats,
    pub eps_dice: MetricStats,
    pub eps_drift: MetricStats,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedRow {
    pub row: GridRow,
    pub reason: String,
}

/// Everything needed to reproduce the numbers: seeds and realised task
/// lists per model, metric options, and the plot pooling rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub model_names: Vec<String>,
    pub model_seeds: Vec<u64>,
    pub task_lists: BTreeMap<String, Vec<TaskPair>>,
    pub loss_normalisation: String,
    pub acc_stride: u32,
    pub voxel_mm: f64,
    pub pooling: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRowResult>,
    pub best_by_m: Vec<AggRow>,
    pub mean_by_m: Vec<AggRow>,
    pub skipped: Vec<SkippedRow>,
    pub run: RunInfo,
}

/// Published reference results from a full-scale training run on real
/// tracked scans (19 subjects, multi-day budgets): `(M, eps_frame, eps_acc,
/// eps_dice, eps_drift)` as `(mean, std)`. Desk-scale synthetic runs are not
/// expected to reach these magnitudes; reports carry them as annotation
/// only.
pub const FULL_SCALE_REFERENCE: [(u32, (f64, f64), (f64, f64), (f64, f64), (f64, f64)); 9] = [
    (2, (0.53, 0.46), (22.75, 17.51), (0.50, 0.29), (29.59, 19.53)),
    (10, (0.46, 0.56), (19.28, 13.25), (0.54, 0.30), (26.55, 13.29)),
    (20, (0.39, 0.36), (16.59, 11.45), (0.58, 0.27), (22.92, 11.56)),
    (30, (0.38, 0.35), (19.37, 12.86), (0.60, 0.25), (27.70, 15.70)),
    (40, (0.33, 0.35), (16.50, 9.21), (0.63, 0.26), (23.83, 14.95)),
    (49, (0.32, 0.22), (18.69, 10.44), (0.56, 0.27), (28.62, 17.62)),
    (60, (0.25, 0.10), (14.08, 8.37), (0.64, 0.26), (22.78, 16.73)),
    (75, (0.24, 0.09), (11.12, 6.60), (0.75, 0.23), (18.20, 14.17)),
    (100, (0.19, 0.08), (4.01, 4.01), (0.77, 0.17), (7.24, 8.33)),
];

/// Evaluate every grid row against the first model that carries it.
///
/// A row needs a model with the same `M` whose task set contains
/// `(i*, j*)`; rows with no such model are skipped and reported, not failed.
pub fn run_sweep(
    models: &[&dyn Model],
    test_scans: &[Scan],
    grid: &[GridRow],
    opts: &EvalOptions,
) -> Result<SweepResult, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::BadGrid("empty grid".into()));
    }
    if models.is_empty() {
        return Err(HarnessError::BadGrid("no models".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for row in grid {
        let pair = TaskPair::new(row.istar, row.jstar);
        let model = models
            .iter()
            .find(|m| m.spec().m == row.m && m.tasks().contains(pair));
        let Some(model) = model else {
            skipped.push(SkippedRow {
                row: *row,
                reason: format!(
                    "no model with M = {} holding task ({},{})",
                    row.m, row.istar, row.jstar
                ),
            });
            continue;
        };
        let dep = dependency_of(row.m, row.istar, row.jstar)?;
        let predictor = ModelPredictor(*model);
        let report = evaluate_scans(test_scans, &predictor, pair, opts)?;
        let stats = |f: fn(&crate::reconstruct::ScanMetrics) -> f64| {
            MetricStats::from_values(&report.per_scan.iter().map(f).collect::<Vec<_>>())
        };
        rows.push(SweepRowResult {
            m: row.m,
            istar: row.istar,
            jstar: row.jstar,
            past: dep.past,
            future: dep.future,
            interval: dep.interval,
            eps_frame: stats(|s| s.eps_frame),
            eps_acc: stats(|s| s.eps_acc),
            eps_dice: stats(|s| s.eps_dice),
            eps_drift: stats(|s| s.eps_drift),
            n_scans: report.per_scan.len(),
        });
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }

    let mut by_m: BTreeMap<u32, Vec<&SweepRowResult>> = BTreeMap::new();
    for r in &rows {
        by_m.entry(r.m).or_default().push(r);
    }
    // Best: each metric independently takes its best row (min for errors,
    // max for dice). Mean: average of row means, average of row stds.
    let mut best_by_m = Vec::new();
    let mut mean_by_m = Vec::new();
    for (&m, group) in &by_m {
        let pick = |f: fn(&SweepRowResult) -> MetricStats, maximise: bool| -> MetricStats {
            let mut best = f(group[0]);
            for r in group.iter().skip(1) {
                let cand = f(r);
                let better = if maximise { cand.mean > best.mean } else { cand.mean < best.mean };
                if better {
                    best = cand;
                }
            }
            best
        };
        best_by_m.push(AggRow {
            m,
            eps_frame: pick(|r| r.eps_frame, false),
            eps_acc: pick(|r| r.eps_acc, false),
            eps_dice: pick(|r| r.eps_dice, true),
            eps_drift: pick(|r| r.eps_drift, false),
            rows: group.len(),
        });
        let avg = |f: fn(&SweepRowResult) -> MetricStats| -> MetricStats {
            let n = group.len() as f64;
            MetricStats {
                mean: group.iter().map(|r| f(r).mean).sum::<f64>() / n,
                std: group.iter().map(|r| f(r).std).sum::<f64>() / n,
            }
        };
        mean_by_m.push(AggRow {
            m,
            eps_frame: avg(|r| r.eps_frame),
            eps_acc: avg(|r| r.eps_acc),
            eps_dice: avg(|r| r.eps_dice),
            eps_drift: avg(|r| r.eps_drift),
            rows: group.len(),
        });
    }

    let mut task_lists = BTreeMap::new();
    let mut model_names = Vec::new();
    for m in models {
        let name = format!("{}_M{}", m.spec().kind, m.spec().m);
        task_lists.insert(name.clone(), m.tasks().pairs.clone());
        model_names.push(name);
    }
    Ok(SweepResult {
        rows,
        best_by_m,
        mean_by_m,
        skipped,
        run: RunInfo {
            model_names,
            model_seeds: Vec::new(),
            task_lists,
            loss_normalisation: "realised_count".into(),
            acc_stride: opts.acc_stride,
            voxel_mm: opts.voxel_mm,
            pooling: "plot points pool all (model, task) rows sharing the past/future count"
                .into(),
        },
    })
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

/// One variance-reduction arm. Exactly one factor may differ from the
/// identity arm (no subject removal, all protocols, full length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    /// Percentage of training subjects removed (subject level).
    pub anatomy_removal_pct: u32,
    /// Protocols retained in training.
    pub protocols: Vec<Protocol>,
    /// Percentage of each training scan's length retained.
    pub length_crop_pct: u32,
    pub seed: u64,
}

impl AblationSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            name: "baseline".into(),
            anatomy_removal_pct: 0,
            protocols: Protocol::ALL.to_vec(),
            length_crop_pct: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |message: String| HarnessError::BadAblation { arm: self.name.clone(), message };
        if ![0, 25, 50, 75].contains(&self.anatomy_removal_pct) {
            return Err(bad(format!(
                "anatomy_removal_pct must be one of 0/25/50/75, got {}",
                self.anatomy_removal_pct
            )));
        }
        if ![50, 75, 100].contains(&self.length_crop_pct) {
            return Err(bad(format!(
                "length_crop_pct must be one of 50/75/100, got {}",
                self.length_crop_pct
            )));
        }
        if self.protocols.is_empty() {
            return Err(bad("protocol subset is empty".into()));
        }
        let varied = [
            self.anatomy_removal_pct != 0,
            self.protocols.len() != Protocol::ALL.len(),
            self.length_crop_pct != 100,
        ]
        .iter()
        .filter(|&&v| v)
        .count();
        if varied > 1 {
            return Err(bad("exactly one factor may vary per arm".into()));
        }
        Ok(())
    }
}

/// What a reduction did to the training set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub scans_before: usize,
    pub scans_after: usize,
    pub subjects_removed: Vec<String>,
    pub frames_before: u64,
    pub frames_after: u64,
}

/// Apply one arm's reduction to the training scans. Validation and test
/// sets are never touched.
pub fn reduce_training_set(
    scans: &[Scan],
    spec: &AblationSpec,
) -> Result<(Vec<Scan>, ReductionReport), HarnessError> {
    spec.validate()?;
    let frames_before: u64 = scans.iter().map(|s| s.len() as u64).sum();
    let mut subjects: Vec<String> = scans
        .iter()
        .map(|s| s.meta.subject_id.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut removed = Vec::new();
    if spec.anatomy_removal_pct > 0 {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(spec.seed);
        subjects.shuffle(&mut rng);
        let n_remove = subjects.len() * spec.anatomy_removal_pct as usize / 100;
        removed = subjects[..n_remove].to_vec();
        removed.sort();
    }

    let mut out = Vec::new();
    for scan in scans {
        if removed.contains(&scan.meta.subject_id) {
            continue;
        }
        if !spec.protocols.contains(&scan.meta.protocol) {
            continue;
        }
        let mut scan = scan.clone();
        if spec.length_crop_pct < 100 {
            let keep = ((scan.len() as u64 * spec.length_crop_pct as u64) / 100).max(2) as usize;
            scan.frames.truncate(keep);
            scan.world_poses.truncate(keep);
        }
        out.push(scan);
    }
    if out.is_empty() {
        return Err(HarnessError::BadAblation {
            arm: spec.name.clone(),
            message: "reduction left no training scans".into(),
        });
    }
    let frames_after: u64 = out.iter().map(|s| s.len() as u64).sum();
    let report = ReductionReport {
        scans_before: scans.len(),
        scans_after: out.len(),
        subjects_removed: removed,
        frames_before,
        frames_after,
    };
    Ok((out, report))
}

/// Shared configuration for every ablation arm: identical architecture,
/// tasks, budget and seeds, so arms differ in data only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub backend: BackendSpec,
    pub tasks: TaskSet,
    pub train: TrainConfig,
    pub grid: Vec<GridRow>,
    pub opts: EvalOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArmResult {
    pub spec: AblationSpec,
    pub reduction: ReductionReport,
    pub sweep: SweepResult,
    pub best_epoch: usize,
    pub best_val_eacc: f64,
}

/// Train and evaluate one arm per spec. Directional comparisons between
/// arms belong in the report annotations, never in assertions: they are
/// findings about one dataset.
pub fn run_ablation(
    arm_specs: &[AblationSpec],
    cfg: &AblationConfig,
    train_scans: &[Scan],
    val_scans: &[Scan],
    test_scans: &[Scan],
    registry: &BackendRegistry,
) -> Result<Vec<AblationArmResult>, HarnessError> {
    let mut out = Vec::new();
    for spec in arm_specs {
        let (reduced, reduction) = reduce_training_set(train_scans, spec)?;
        let outcome: TrainOutcome =
            train(&cfg.backend, &cfg.tasks, &reduced, val_scans, &cfg.train, registry)?;
        let model = outcome.best.into_model(registry)?;
        let mut sweep = run_sweep(&[model.as_ref()], test_scans, &cfg.grid, &cfg.opts)?;
        sweep.run.model_seeds = vec![cfg.train.seed];
        out.push(AblationArmResult {
            spec: spec.clone(),
            reduction,
            sweep,
            best_epoch: outcome.best_epoch,
            best_val_eacc: outcome.best_val_eacc,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Two-sample unequal-variance (Welch) t-test, two-sided p-value.
pub fn welch_ttest(sample_a: &[f64], sample_b: &[f64]) -> Result<f64, HarnessError> {
    if sample_a.len() < 2 || sample_b.len() < 2 {
        return Err(HarnessError::SampleTooSmall);
    }
    let n_a = sample_a.len() as f64;
    let n_b = sample_b.len() as f64;
    let mean_a = sample_a.iter().sum::<f64>() / n_a;
    let mean_b = sample_b.iter().sum::<f64>() / n_b;
    let var_a = sample_a.iter().map(|v| (v - mean_a).powi(2)).sum::<f64>() / (n_a - 1.0);
    let var_b = sample_b.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / (n_b - 1.0);
    let se2 = var_a / n_a + var_b / n_b;
    if se2 == 0.0 {
        if mean_a == mean_b {
            return Ok(1.0);
        }
        return Err(HarnessError::DegenerateSamples);
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2
        / ((var_a / n_a).powi(2) / (n_a - 1.0) + (var_b / n_b).powi(2) / (n_b - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    Ok(2.0 * dist.cdf(-t.abs()))
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Png,
    Svg,
}

impl ReportFormat {
    pub fn parse_list(s: &str) -> Result<Vec<ReportFormat>, HarnessError> {
        s.split(',')
            .map(|tok| match tok.trim() {
                "csv" => Ok(ReportFormat::Csv),
                "png" => Ok(ReportFormat::Png),
                "svg" => Ok(ReportFormat::Svg),
                other => Err(HarnessError::BadGrid(format!("unknown report format {other:?}"))),
            })
            .collect()
    }
}

const METRICS: [(&str, fn(&SweepRowResult) -> MetricStats, fn(&AggRow) -> MetricStats); 4] = [
    ("eps_frame", |r| r.eps_frame, |a| a.eps_frame),
    ("eps_acc", |r| r.eps_acc, |a| a.eps_acc),
    ("eps_dice", |r| r.eps_dice, |a| a.eps_dice),
    ("eps_drift", |r| r.eps_drift, |a| a.eps_drift),
];

fn write_agg_table(path: &Path, rows: &[AggRow]) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "M,eps_frame,eps_acc,eps_dice,eps_drift")?;
    for r in rows {
        writeln!(
            f,
            "{},{}±{},{}±{},{}±{},{}±{}",
            r.m,
            r.eps_frame.mean,
            r.eps_frame.std,
            r.eps_acc.mean,
            r.eps_acc.std,
            r.eps_dice.mean,
            r.eps_dice.std,
            r.eps_drift.mean,
            r.eps_drift.std
        )?;
    }
    Ok(())
}

/// Parse a table written by [`write_agg_table`]; the round trip is lossless
/// because floats are printed in shortest-round-trip form.
pub fn load_agg_table(path: &Path) -> Result<Vec<AggRow>, HarnessError> {
    let raw = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in raw.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(HarnessError::BadGrid(format!(
                "table line {} has {} fields, expected 5",
                ln + 1,
                fields.len()
            )));
        }
        let m: u32 = fields[0]
            .parse()
            .map_err(|e| HarnessError::BadGrid(format!("line {}: M: {e}", ln + 1)))?;
        let parse_pair = |s: &str| -> Result<MetricStats, HarnessError> {
            let (mean, std) = s
                .split_once('±')
                .ok_or_else(|| HarnessError::BadGrid(format!("no ± in {s:?}")))?;
            Ok(MetricStats {
                mean: mean
                    .parse()
                    .map_err(|e| HarnessError::BadGrid(format!("mean in {s:?}: {e}")))?,
                std: std
                    .parse()
                    .map_err(|e| HarnessError::BadGrid(format!("std in {s:?}: {e}")))?,
            })
        };
        out.push(AggRow {
            m,
            eps_frame: parse_pair(fields[1])?,
            eps_acc: parse_pair(fields[2])?,
            eps_dice: parse_pair(fields[3])?,
            eps_drift: parse_pair(fields[4])?,
            rows: 0,
        });
    }
    Ok(out)
}

fn plot_metric_vs(
    result: &SweepResult,
    metric: (&str, fn(&SweepRowResult) -> MetricStats),
    x_of: fn(&SweepRowResult) -> u32,
    x_name: &str,
) -> LinePlot {
    // Pool rows sharing (M, x); one series per M.
    let mut by_m: BTreeMap<u32, BTreeMap<u32, Vec<MetricStats>>> = BTreeMap::new();
    for r in &result.rows {
        by_m
            .entry(r.m)
            .or_default()
            .entry(x_of(r))
            .or_default()
            .push(metric.1(r));
    }
    let series = by_m
        .into_iter()
        .map(|(m, pts)| {
            let mut points = Vec::new();
            let mut errs = Vec::new();
            for (x, stats) in pts {
                let n = stats.len() as f64;
                points.push((x as f64, stats.iter().map(|s| s.mean).sum::<f64>() / n));
                errs.push(stats.iter().map(|s| s.std).sum::<f64>() / n);
            }
            Series { label: format!("M = {m}"), points, err: Some(errs) }
        })
        .collect();
    LinePlot {
        title: format!("{} vs {x_name}", metric.0),
        x_label: x_name.to_string(),
        y_label: if metric.0 == "eps_dice" {
            format!("{} (fraction)", metric.0)
        } else {
            format!("{} (mm)", metric.0)
        },
        series,
    }
}

/// Emit tables, plots and provenance for a sweep into `out_dir`.
/// Returns the paths written.
pub fn emit_report(
    result: &SweepResult,
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    if result.rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    if formats.contains(&ReportFormat::Csv) {
        let best = out_dir.join("table_best.csv");
        write_agg_table(&best, &result.best_by_m)?;
        written.push(best);
        let mean = out_dir.join("table_mean.csv");
        write_agg_table(&mean, &result.mean_by_m)?;
        written.push(mean);

        let rows_path = out_dir.join("sweep_rows.csv");
        let mut f = std::fs::File::create(&rows_path)?;
        writeln!(
            f,
            "M,istar,jstar,past,future,interval,n_scans,eps_frame_mean,eps_frame_std,eps_acc_mean,eps_acc_std,eps_dice_mean,eps_dice_std,eps_drift_mean,eps_drift_std"
        )?;
        for r in &result.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.m,
                r.istar,
                r.jstar,
                r.past,
                r.future,
                r.interval,
                r.n_scans,
                r.eps_frame.mean,
                r.eps_frame.std,
                r.eps_acc.mean,
                r.eps_acc.std,
                r.eps_dice.mean,
                r.eps_dice.std,
                r.eps_drift.mean,
                r.eps_drift.std
            )?;
        }
        written.push(rows_path);

        let ref_path = out_dir.join("full_scale_reference.csv");
        let mut f = std::fs::File::create(&ref_path)?;
        writeln!(f, "M,eps_frame,eps_acc,eps_dice,eps_drift")?;
        for (m, fr, acc, dice, drift) in FULL_SCALE_REFERENCE {
            writeln!(
                f,
                "{m},{}±{},{}±{},{}±{},{}±{}",
                fr.0, fr.1, acc.0, acc.1, dice.0, dice.1, drift.0, drift.1
            )?;
        }
        written.push(ref_path);
    }

    for (name, row_fn, _) in METRICS {
        for (x_name, x_of) in [
            ("past frames", (|r: &SweepRowResult| r.past) as fn(&SweepRowResult) -> u32),
            ("future frames", |r: &SweepRowResult| r.future),
        ] {
            let plot = plot_metric_vs(result, (name, row_fn), x_of, x_name);
            let stem = format!("{name}_vs_{}", x_name.replace(' ', "_"));
            if formats.contains(&ReportFormat::Svg) {
                let p = out_dir.join(format!("{stem}.svg"));
                plot.save_svg(&p)?;
                written.push(p);
            }
            if formats.contains(&ReportFormat::Png) {
                let p = out_dir.join(format!("{stem}.png"));
                plot.save_png(&p)
                    .map_err(|e| HarnessError::BadGrid(format!("png: {e}")))?;
                written.push(p);
            }
        }
    }

    let run_path = out_dir.join("run.json");
    std::fs::write(&run_path, serde_json::to_string_pretty(&result.run)?)?;
    written.push(run_path);
    Ok(written)
}

/// Comparative ablation report: per-arm curves against past frames plus an
/// annotated pairwise comparison table (Welch p-values against the first
/// arm). Annotations, not assertions.
pub fn emit_ablation_report(
    arms: &[AblationArmResult],
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>, HarnessError> {
    if arms.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for (name, row_fn, _) in METRICS.iter().take(2) {
        // eps_frame and eps_acc carry the ablation story, as in the source
        // analysis; the full per-arm tables hold the rest.
        let series = arms
            .iter()
            .map(|arm| {
                let mut by_past: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                for r in &arm.sweep.rows {
                    by_past.entry(r.past).or_default().push(row_fn(r).mean);
                }
                Series {
                    label: arm.spec.name.clone(),
                    points: by_past
                        .into_iter()
                        .map(|(p, v)| (p as f64, v.iter().sum::<f64>() / v.len() as f64))
                        .collect(),
                    err: None,
                }
            })
            .collect();
        let plot = LinePlot {
            title: format!("{name} vs past frames (variance-reduced training)"),
            x_label: "past frames".into(),
            y_label: format!("{name} (mm)"),
            series,
        };
        if formats.contains(&ReportFormat::Svg) {
            let p = out_dir.join(format!("ablation_{name}_vs_past.svg"));
            plot.save_svg(&p)?;
            written.push(p);
        }
        if formats.contains(&ReportFormat::Png) {
            let p = out_dir.join(format!("ablation_{name}_vs_past.png"));
            plot.save_png(&p)
                .map_err(|e| HarnessError::BadGrid(format!("png: {e}")))?;
            written.push(p);
        }
    }

    if formats.contains(&ReportFormat::Csv) {
        let path = out_dir.join("ablation_arms.csv");
        let mut f = std::fs::File::create(&path)?;
        writeln!(
            f,
            "arm,train_scans,train_frames,eps_acc_mean,eps_acc_std,eps_frame_mean,eps_frame_std,p_vs_first_arm"
        )?;
        let first_accs: Vec<f64> = arms[0].sweep.rows.iter().map(|r| r.eps_acc.mean).collect();
        for (k, arm) in arms.iter().enumerate() {
            let accs: Vec<f64> = arm.sweep.rows.iter().map(|r| r.eps_acc.mean).collect();
            let acc = MetricStats::from_values(&accs);
            let frames: Vec<f64> = arm.sweep.rows.iter().map(|r| r.eps_frame.mean).collect();
            let frame = MetricStats::from_values(&frames);
            let p = if k == 0 {
                String::new()
            } else {
                match welch_ttest(&first_accs, &accs) {
                    Ok(p) => p.to_string(),
                    Err(_) => "n/a".to_string(),
                }
            };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                arm.spec.name,
                arm.reduction.scans_after,
                arm.reduction.frames_after,
                acc.mean,
                acc.std,
                frame.mean,
                frame.std,
                p
            )?;
        }
        written.push(path);
    }

    let summary = out_dir.join("ablation_summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(arms)?)?;
    written.push(summary);
    Ok(written)
}
