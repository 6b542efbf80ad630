//! Desk-scale trend check driver: train a context model and the adjacent-
//! frame baseline on one synthetic corpus and compare test accumulated
//! error. Used to pick training budgets; the acceptance suite runs the same
//! recipe with pinned settings.

use std::time::Instant;

use usrecon_core::backends::{train, BackendRegistry, BackendSpec, TrainConfig};
use usrecon_core::dataio::{load_scans_by_id, ImageGeom};
use usrecon_core::harness::{run_sweep, GridRow};
use usrecon_core::reconstruct::EvalOptions;
use usrecon_core::sampling::{sample_tasks_seeded, TaskPair};
use usrecon_core::synthdata::{generate_corpus, CorpusSpec, SpeedPolicy};

fn env_or<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let hw: u32 = env_or("HW", 32);
    let n_subjects: u32 = env_or("SUBJECTS", 10);
    let frames: u32 = env_or("FRAMES", 100);
    let epochs: usize = env_or("EPOCHS", 40);
    let batches: usize = env_or("BATCHES", 8);
    let lr: f64 = env_or("LR", 1e-3);
    let m: u32 = env_or("M", 16);
    let tau: u32 = env_or("TAU", 40);
    let istar: u32 = env_or("ISTAR", 9);
    let jstar: u32 = env_or("JSTAR", 10);
    let speckle: f64 = env_or("SPECKLE", 0.08);
    let seed: u64 = env_or("SEED", 1);
    let enc_width: usize = env_or("ENC", 64);

    let dir = std::env::temp_dir().join(format!("trend_lab_{hw}_{n_subjects}_{speckle}_{seed}"));
    let corpus = CorpusSpec {
        n_subjects,
        arms: 1,
        image: ImageGeom { width: hw, height: hw, spacing_mm: 48.0 / hw as f64 },
        frames_range: (frames, frames),
        length_range_mm: (100.0, 200.0),
        fps: 20.0,
        speed: SpeedPolicy::RandomRamp { lo: 0.6, hi: 1.5 },
        turn_deg_c: 75.0,
        turn_deg_s: 60.0,
        speckle,
        split_ratio: [3, 1, 1],
        seed: 4000,
    };
    let summary = if dir.join("split.json").is_file() {
        println!("reusing corpus at {}", dir.display());
        let split = usrecon_core::dataio::SplitManifest::load(&dir.join("split.json")).unwrap();
        usrecon_core::synthdata::CorpusSummary { scan_ids: vec![], split }
    } else {
        let s = generate_corpus(&corpus, &dir).unwrap();
        println!("corpus: {} scans in {:.1?}", s.scan_ids.len(), t0.elapsed());
        s
    };
    let split = summary.split;
    let train_scans = load_scans_by_id(&dir, &split.train).unwrap();
    let val_scans = load_scans_by_id(&dir, &split.val).unwrap();
    let test_scans = load_scans_by_id(&dir, &split.test).unwrap();
    println!(
        "split: {}/{}/{} scans",
        train_scans.len(),
        val_scans.len(),
        test_scans.len()
    );

    let registry = BackendRegistry::builtin();
    let cfg = TrainConfig {
        minibatch: 32,
        step_size: lr,
        max_epochs: epochs,
        batches_per_epoch: batches,
        seed,
        val_stride: 4,
        val_every: env_or("VAL_EVERY", 4),
        val_windows: 2,
    };

    let run = |kind: &str, m: u32, tau: u32, main: TaskPair| {
        let t = Instant::now();
        let spec = BackendSpec {
            kind: kind.into(),
            m,
            tau_plus_1: tau,
            encoder: "conv3".into(),
            encoder_width: enc_width,
            hidden_width: 128,
            image_height: hw,
            image_width: hw,
        };
        let tasks = sample_tasks_seeded(m, tau as usize, main, 42).unwrap();
        let outcome = train(&spec, &tasks, &train_scans, &val_scans, &cfg, &registry).unwrap();
        println!(
            "{kind} M={m}: {} epochs in {:.1?}; best val eacc {:.3} @ epoch {}; last {:.3}",
            cfg.max_epochs,
            t.elapsed(),
            outcome.best_val_eacc,
            outcome.best_epoch,
            outcome.last_val_eacc
        );
        for row in outcome.log.iter().step_by((epochs / 10).max(1)) {
            println!(
                "  epoch {:3}: train {:.4} val {:?} eacc {:?}",
                row.epoch, row.train_loss, row.val_loss, row.val_eacc_main
            );
        }
        let model = outcome.best.into_model(&registry).unwrap();
        let grid = [GridRow { m, istar: main.i, jstar: main.j }];
        let sweep = run_sweep(
            &[model.as_ref()],
            &test_scans,
            &grid,
            &EvalOptions { acc_stride: 1, voxel_mm: 1.0 },
        )
        .unwrap();
        let r = &sweep.rows[0];
        println!(
            "{kind} M={m} test: eps_frame {:.3}±{:.3} eps_acc {:.3}±{:.3} dice {:.3} drift {:.3}",
            r.eps_frame.mean,
            r.eps_frame.std,
            r.eps_acc.mean,
            r.eps_acc.std,
            r.eps_dice.mean,
            r.eps_drift.mean
        );
        if std::env::var("PER_SCAN").is_ok() {
            let predictor = usrecon_core::backends::ModelPredictor(model.as_ref());
            let rep = usrecon_core::reconstruct::evaluate_scans(
                &test_scans,
                &predictor,
                main,
                &EvalOptions { acc_stride: 2, voxel_mm: 1.0 },
            )
            .unwrap();
            for s in &rep.per_scan {
                println!(
                    "    {:40} eps_frame {:.3} eps_acc {:7.3} drift {:7.3}",
                    s.scan_id, s.eps_frame, s.eps_acc, s.eps_drift
                );
            }
        }
        r.eps_acc.mean
    };

    let ctx = run("feed_forward", m, tau, TaskPair::new(istar, jstar));
    let base = run("baseline_adjacent", 2, 1, TaskPair::new(1, 2));
    println!(
        "context/baseline eps_acc: {ctx:.3}/{base:.3} = {:.3} (need <= 0.8)",
        ctx / base
    );
    println!("total {:.1?}", t0.elapsed());
}
