//! Fixed-length sub-sequence sampling and transformation-task selection.
//!
//! A model with sequence length `M` is trained on `tau_plus_1` frame-pair
//! transformation tasks out of the `M(M-1)/2` possible ordered pairs
//! `(i, j), 1 <= i < j <= M`. One pair is the main task `(i*, j*)` used for
//! scan reconstruction; the rest are auxiliary tasks. The split of `M - 1`
//! surrounding frames into past (`i* - 1`), interval (`j* - i*`) and future
//! (`M - j*`) is the dependency profile the experiment harness sweeps over.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ImageGeom, Scan};
use crate::geometry::{relative_gt, RigidTransform};

#[derive(Error, Debug)]
pub enum SamplingError {
    #[error("scan {scan_id} has {len} frames, shorter than M = {m}; excluded for this M")]
    ScanTooShort { scan_id: String, len: u32, m: u32 },
    #[error("sequence length M must be at least 2, got {0}")]
    BadSequenceLength(u32),
    #[error("task pair ({i},{j}) out of bounds for M = {m}")]
    PairOutOfBounds { i: u32, j: u32, m: u32 },
    #[error("task budget {requested} outside the valid range [{min},{max}] for M = {m}")]
    BadTaskBudget { requested: usize, min: usize, max: usize, m: u32 },
    #[error("start index {start} invalid for scan of length {len} with M = {m}")]
    BadStart { start: u32, len: u32, m: u32 },
}

/// An ordered frame pair `(i, j)` with `1 <= i < j <= M`, in window
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskPair {
    pub i: u32,
    pub j: u32,
}

impl TaskPair {
    pub fn new(i: u32, j: u32) -> Self {
        Self { i, j }
    }

    pub fn interval(&self) -> u32 {
        self.j - self.i
    }
}

/// Past/interval/future decomposition of a main task inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyProfile {
    pub past: u32,
    pub future: u32,
    pub interval: u32,
}

/// Dependency profile of the pair `(i*, j*)` in a window of length `m`.
pub fn dependency_of(m: u32, istar: u32, jstar: u32) -> Result<DependencyProfile, SamplingError> {
    if istar < 1 || istar >= jstar || jstar > m {
        return Err(SamplingError::PairOutOfBounds { i: istar, j: jstar, m });
    }
    Ok(DependencyProfile {
        past: istar - 1,
        future: m - jstar,
        interval: jstar - istar,
    })
}

/// The sampled set of transformation tasks for one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub m: u32,
    /// Unique pairs in canonical (i, j) lexicographic order.
    pub pairs: Vec<TaskPair>,
    pub main: TaskPair,
}

impl TaskSet {
    /// Number of tasks (main + auxiliaries).
    pub fn tau_plus_1(&self) -> usize {
        self.pairs.len()
    }

    pub fn contains(&self, pair: TaskPair) -> bool {
        self.pairs.binary_search(&pair).is_ok()
    }

    /// Position of `pair` in the canonical order; prediction slot `k` of the
    /// network head corresponds to `pairs[k]`.
    pub fn index_of(&self, pair: TaskPair) -> Option<usize> {
        self.pairs.binary_search(&pair).ok()
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.m < 2 {
            return Err(SamplingError::BadSequenceLength(self.m));
        }
        let universe = universe_size(self.m);
        if self.pairs.is_empty() || self.pairs.len() > universe {
            return Err(SamplingError::BadTaskBudget {
                requested: self.pairs.len(),
                min: 1,
                max: universe,
                m: self.m,
            });
        }
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            if p.i < 1 || p.i >= p.j || p.j > self.m {
                return Err(SamplingError::PairOutOfBounds { i: p.i, j: p.j, m: self.m });
            }
            if !seen.insert(*p) {
                return Err(SamplingError::PairOutOfBounds { i: p.i, j: p.j, m: self.m });
            }
        }
        if !self.contains(self.main) {
            return Err(SamplingError::PairOutOfBounds {
                i: self.main.i,
                j: self.main.j,
                m: self.m,
            });
        }
        Ok(())
    }

    /// Every possible pair: the full `M(M-1)/2` task universe.
    pub fn full(m: u32, main: TaskPair) -> Result<Self, SamplingError> {
        if m < 2 {
            return Err(SamplingError::BadSequenceLength(m));
        }
        let mut pairs = Vec::with_capacity(universe_size(m));
        for i in 1..m {
            for j in (i + 1)..=m {
                pairs.push(TaskPair::new(i, j));
            }
        }
        pairs.sort();
        let set = Self { m, pairs, main };
        set.validate()?;
        Ok(set)
    }
}

pub fn universe_size(m: u32) -> usize {
    (m as usize * (m as usize - 1)) / 2
}

/// Sample a task set of `tau_plus_1` unique pairs.
///
/// Selection is stratified by transformation interval so every part of the
/// dependency grid keeps trained heads: the main pair is always included,
/// then all adjacent (interval-1) pairs up to budget, then one random
/// remaining pair per interval bin, round-robin over intervals `2..M-1`,
/// until the budget is filled.
pub fn sample_tasks<R: Rng>(
    m: u32,
    tau_plus_1: usize,
    main: TaskPair,
    rng: &mut R,
) -> Result<TaskSet, SamplingError> {
    if m < 2 {
        return Err(SamplingError::BadSequenceLength(m));
    }
    if main.i < 1 || main.i >= main.j || main.j > m {
        return Err(SamplingError::PairOutOfBounds { i: main.i, j: main.j, m });
    }
    let universe = universe_size(m);
    let (min_budget, max_budget) = if m == 2 { (1, 1) } else { (2, universe) };
    if tau_plus_1 < min_budget || tau_plus_1 > max_budget {
        return Err(SamplingError::BadTaskBudget {
            requested: tau_plus_1,
            min: min_budget,
            max: max_budget,
            m,
        });
    }

    let mut chosen: BTreeSet<TaskPair> = BTreeSet::new();
    chosen.insert(main);

    // All adjacent pairs, in order, up to budget.
    for i in 1..m {
        if chosen.len() >= tau_plus_1 {
            break;
        }
        chosen.insert(TaskPair::new(i, i + 1));
    }

    // Remaining pairs per interval, shuffled once per bin, drawn round-robin.
    let mut bins: Vec<Vec<TaskPair>> = Vec::new();
    for d in 2..m {
        let mut bin = Vec::new();
        for i in 1..=(m - d) {
            let p = TaskPair::new(i, i + d);
            if !chosen.contains(&p) {
                bin.push(p);
            }
        }
        // Fisher-Yates with the caller's rng; bins are visited in a fixed
        // order so the draw sequence is reproducible under a fixed seed.
        for k in (1..bin.len()).rev() {
            let swap = rng.gen_range(0..=k);
            bin.swap(k, swap);
        }
        bins.push(bin);
    }
    'outer: loop {
        let mut progressed = false;
        for bin in bins.iter_mut() {
            if chosen.len() >= tau_plus_1 {
                break 'outer;
            }
            if let Some(p) = bin.pop() {
                chosen.insert(p);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let set = TaskSet { m, pairs: chosen.into_iter().collect(), main };
    debug_assert_eq!(set.tau_plus_1(), tau_plus_1);
    set.validate()?;
    Ok(set)
}

/// [`sample_tasks`] with a self-contained seeded rng.
pub fn sample_tasks_seeded(
    m: u32,
    tau_plus_1: usize,
    main: TaskPair,
    seed: u64,
) -> Result<TaskSet, SamplingError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    sample_tasks(m, tau_plus_1, main, &mut rng)
}

/// A window of `M` consecutive frames with ground-truth transforms for each
/// sampled task pair.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    pub scan_id: String,
    /// 1-based index of the window's first frame in the scan.
    pub start: u32,
    pub m: u32,
    /// Frames in window order, pixels normalised to [0, 1], shape (H, W).
    pub frames: Vec<Array2<f64>>,
    /// Ground truth per task, keys in window coordinates.
    pub gt_pairs: BTreeMap<TaskPair, RigidTransform>,
    pub geom: ImageGeom,
}

/// Deterministic window extraction at a given 1-based start index.
pub fn sequence_at(
    scan: &Scan,
    tasks: &TaskSet,
    start: u32,
) -> Result<SequenceSample, SamplingError> {
    let m = tasks.m;
    let len = scan.len();
    if len < m {
        return Err(SamplingError::ScanTooShort { scan_id: scan.id.clone(), len, m });
    }
    if start < 1 || start + m - 1 > len {
        return Err(SamplingError::BadStart { start, len, m });
    }
    let frames = (start..start + m)
        .map(|idx| scan.frames[(idx - 1) as usize].to_normalized())
        .collect();
    let mut gt_pairs = BTreeMap::new();
    for &pair in &tasks.pairs {
        let world_i = &scan.world_poses[(start + pair.i - 2) as usize];
        let world_j = &scan.world_poses[(start + pair.j - 2) as usize];
        gt_pairs.insert(pair, relative_gt(world_i, world_j, &scan.calib));
    }
    Ok(SequenceSample {
        scan_id: scan.id.clone(),
        start,
        m,
        frames,
        gt_pairs,
        geom: scan.geom(),
    })
}

/// Sample a window uniformly over the valid start range and fill ground
/// truth for every pair in `tasks`.
pub fn sample_sequence<R: Rng>(
    scan: &Scan,
    tasks: &TaskSet,
    rng: &mut R,
) -> Result<SequenceSample, SamplingError> {
    let m = tasks.m;
    let len = scan.len();
    if len < m {
        return Err(SamplingError::ScanTooShort { scan_id: scan.id.clone(), len, m });
    }
    let start = rng.gen_range(1..=(len - m + 1));
    sequence_at(scan, tasks, start)
}
