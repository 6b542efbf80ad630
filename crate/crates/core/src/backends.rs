//! Prediction backends: interchangeable sequence models behind one trait.
//!
//! Three strategies ship by default, registered by name:
//!
//! * `feed_forward` — the whole window stacked along the channel axis into
//!   one convolutional encoder, then a fully connected head.
//! * `recurrent` — a shared per-frame encoder feeding an LSTM, consuming
//!   frames in order and emitting only at the final step (many-to-one); full
//!   BPTT, no truncation.
//! * `baseline_adjacent` — the feed-forward model pinned to `M = 2` with the
//!   single adjacent-pair task; the reference point every sweep compares
//!   against.
//!
//! The head always has exactly `(tau + 1) * 6` outputs; prediction slot `k`
//! occupies columns `[6k, 6k + 6)` and corresponds to `TaskSet::pairs[k]`.
//! Downstream code never branches on the backend kind: everything happens
//! through [`Model`] and [`crate::reconstruct::ScanPredictor`].
//!
//! Image encoders are pluggable through their own registry (`conv3`, the
//! default three-stage convolutional encoder, and `mlp` for tiny inputs).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array2, Array3, Array4, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Scan;
use crate::geometry::{corner_points, TransformParams};
use crate::nn::{
    export_params, import_params, zero_grads, Adam, Conv2d, HasParams, Linear, Lstm, NnError,
    Param, Relu2, Relu4,
};
use crate::objective::{
    multi_task_loss, multi_task_loss_and_grad, universe_normalised, ObjectiveError, TaskPrediction,
};
use crate::reconstruct::{
    accumulated_error, chain, ReconstructError, ScanPredictor, Trajectory,
};
use crate::sampling::{
    sample_sequence, sequence_at, universe_size, SamplingError, SequenceSample, TaskSet,
};

pub const KIND_FEED_FORWARD: &str = "feed_forward";
pub const KIND_RECURRENT: &str = "recurrent";
pub const KIND_BASELINE: &str = "baseline_adjacent";

/// Accepted optimiser step sizes.
pub const ACCEPTED_STEP_SIZES: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Error, Debug)]
pub enum BackendError {
    #[error("invalid backend spec: {0}")]
    SpecInvalid(String),
    #[error("unknown backend kind {0:?}")]
    UnknownBackend(String),
    #[error("unknown encoder {0:?}")]
    UnknownEncoder(String),
    #[error("expected {expected} frames, got {found}")]
    WrongFrameCount { expected: u32, found: usize },
    #[error("frame resolution {found_h}x{found_w} does not match the trained {expected_h}x{expected_w}")]
    WrongResolution { expected_h: u32, expected_w: u32, found_h: usize, found_w: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("no usable training data: {0}")]
    NoTrainData(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
}

fn default_encoder() -> String {
    "conv3".to_string()
}

fn default_encoder_width() -> usize {
    64
}

fn default_hidden_width() -> usize {
    1024
}

/// Architecture description; everything a registry needs to build an
/// untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub kind: String,
    pub m: u32,
    pub tau_plus_1: u32,
    #[serde(default = "default_encoder")]
    pub encoder: String,
    #[serde(default = "default_encoder_width")]
    pub encoder_width: usize,
    /// Recurrent hidden state width; unused by feed-forward kinds.
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    pub image_height: u32,
    pub image_width: u32,
}

impl BackendSpec {
    /// Output width of the prediction head.
    pub fn head_width(&self) -> usize {
        self.tau_plus_1 as usize * 6
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.m < 2 {
            return Err(BackendError::SpecInvalid(format!("M must be >= 2, got {}", self.m)));
        }
        if self.kind == KIND_BASELINE && (self.m != 2 || self.tau_plus_1 != 1) {
            return Err(BackendError::SpecInvalid(format!(
                "baseline_adjacent requires M = 2 and tau_plus_1 = 1, got M = {}, tau_plus_1 = {}",
                self.m, self.tau_plus_1
            )));
        }
        if self.tau_plus_1 as usize > universe_size(self.m) || self.tau_plus_1 == 0 {
            return Err(BackendError::SpecInvalid(format!(
                "tau_plus_1 = {} outside [1, {}] for M = {}",
                self.tau_plus_1,
                universe_size(self.m),
                self.m
            )));
        }
        if self.encoder_width == 0 || self.hidden_width == 0 {
            return Err(BackendError::SpecInvalid("zero encoder/hidden width".into()));
        }
        if self.image_height < 2 || self.image_width < 2 {
            return Err(BackendError::SpecInvalid(format!(
                "image size {}x{} too small",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }
}

/// A trained (or trainable) prediction backend.
///
/// `predict` is the inference surface: deterministic, shareable across
/// threads. The `forward_train` / `backward_train` pair is the training
/// surface driven by [`train`].
pub trait Model: HasParams + Send + Sync {
    fn spec(&self) -> &BackendSpec;
    fn tasks(&self) -> &TaskSet;

    /// Predictions for one window of `M` frames (pixels in [0, 1], shape
    /// (H, W)), in the task set's pair order.
    fn predict(&self, frames: &[Array2<f64>]) -> Result<Vec<TaskPrediction>, BackendError>;

    /// Training forward pass over a minibatch; output shape (B, tau+1, 6).
    fn forward_train(&mut self, batch: &[SequenceSample]) -> Result<Array3<f64>, BackendError>;

    /// Backprop of the loss gradient with respect to the forward output.
    fn backward_train(&mut self, dout: &Array3<f64>);
}

fn check_window(spec: &BackendSpec, frames: &[Array2<f64>]) -> Result<(), BackendError> {
    if frames.len() != spec.m as usize {
        return Err(BackendError::WrongFrameCount { expected: spec.m, found: frames.len() });
    }
    for f in frames {
        let (h, w) = f.dim();
        if h != spec.image_height as usize || w != spec.image_width as usize {
            return Err(BackendError::WrongResolution {
                expected_h: spec.image_height,
                expected_w: spec.image_width,
                found_h: h,
                found_w: w,
            });
        }
    }
    Ok(())
}

/// Unpack a flat head output row into per-task predictions.
pub fn predictions_from_vector(tasks: &TaskSet, row: ArrayView1<f64>) -> Vec<TaskPrediction> {
    tasks
        .pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| TaskPrediction {
            pair: *pair,
            params: TransformParams::from_array([
                row[6 * k],
                row[6 * k + 1],
                row[6 * k + 2],
                row[6 * k + 3],
                row[6 * k + 4],
                row[6 * k + 5],
            ]),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Image encoders
// ---------------------------------------------------------------------------

/// Maps a batch of image stacks (B, C, H, W) to feature vectors (B, F).
pub trait ImageEncoder: HasParams + Send + Sync {
    fn output_width(&self) -> usize;
    fn forward_eval(&self, x: &Array4<f64>) -> Array2<f64>;
    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64>;
    fn backward(&mut self, dy: &Array2<f64>) -> Array4<f64>;
}

/// Three stride-2 convolutions, flatten, project. The workhorse encoder.
pub struct Conv3Encoder {
    conv1: Conv2d,
    relu1: Relu4,
    conv2: Conv2d,
    relu2: Relu4,
    conv3: Conv2d,
    relu3: Relu4,
    proj: Linear,
    relu4: Relu2,
    flat_dim: usize,
    conv_out: (usize, usize, usize), // (channels, h, w) after conv3
    width: usize,
}

impl Conv3Encoder {
    /// Channel widths grow with the feature width so one knob scales
    /// capacity: width 64 gives the (8, 16, 32) stack.
    fn channels(width: usize) -> [usize; 3] {
        [(width / 8).max(8), (width / 4).max(16), (width / 2).max(32)]
    }

    pub fn new(in_ch: usize, h: usize, w: usize, width: usize, rng: &mut ChaCha12Rng) -> Self {
        let ch = Self::channels(width);
        let conv1 = Conv2d::new(in_ch, ch[0], 2, rng);
        let (h1, w1) = conv1.out_hw(h, w);
        let conv2 = Conv2d::new(ch[0], ch[1], 2, rng);
        let (h2, w2) = conv2.out_hw(h1, w1);
        let conv3 = Conv2d::new(ch[1], ch[2], 2, rng);
        let (h3, w3) = conv3.out_hw(h2, w2);
        let flat_dim = ch[2] * h3 * w3;
        let proj = Linear::new(flat_dim, width, rng);
        Self {
            conv1,
            relu1: Relu4::default(),
            conv2,
            relu2: Relu4::default(),
            conv3,
            relu3: Relu4::default(),
            proj,
            relu4: Relu2::default(),
            flat_dim,
            conv_out: (ch[2], h3, w3),
            width,
        }
    }

    fn flatten(&self, x: &Array4<f64>) -> Array2<f64> {
        let b = x.dim().0;
        x.to_shape((b, self.flat_dim)).expect("contiguous").to_owned()
    }

    fn unflatten(&self, x: &Array2<f64>) -> Array4<f64> {
        let b = x.dim().0;
        let (c, h, w) = self.conv_out;
        x.to_shape((b, c, h, w)).expect("contiguous").to_owned()
    }
}

impl ImageEncoder for Conv3Encoder {
    fn output_width(&self) -> usize {
        self.width
    }

    fn forward_eval(&self, x: &Array4<f64>) -> Array2<f64> {
        let y = self.conv1.forward_eval(x).mapv(|v| v.max(0.0));
        let y = self.conv2.forward_eval(&y).mapv(|v| v.max(0.0));
        let y = self.conv3.forward_eval(&y).mapv(|v| v.max(0.0));
        self.proj.forward_eval(&self.flatten(&y)).mapv(|v| v.max(0.0))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let y = self.conv1.forward(x, true);
        let y = self.relu1.forward(&y, true);
        let y = self.conv2.forward(&y, true);
        let y = self.relu2.forward(&y, true);
        let y = self.conv3.forward(&y, true);
        let y = self.relu3.forward(&y, true);
        let y = self.proj.forward(&self.flatten(&y), true);
        self.relu4.forward(&y, true)
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array4<f64> {
        let dy = self.relu4.backward(dy);
        let dy = self.proj.backward(&dy);
        let dy = self.unflatten(&dy);
        let dy = self.relu3.backward(&dy);
        let dy = self.conv3.backward(&dy);
        let dy = self.relu2.backward(&dy);
        let dy = self.conv2.backward(&dy);
        let dy = self.relu1.backward(&dy);
        self.conv1.backward(&dy)
    }
}

impl HasParams for Conv3Encoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        self.conv3.visit_params(&format!("{prefix}.conv3"), f);
        self.proj.visit_params(&format!("{prefix}.proj"), f);
    }
}

/// Flatten + two dense layers. Cheap enough for unit tests and tiny images.
pub struct MlpEncoder {
    fc1: Linear,
    relu1: Relu2,
    fc2: Linear,
    relu2: Relu2,
    in_dim: usize,
    width: usize,
}

impl MlpEncoder {
    pub fn new(in_ch: usize, h: usize, w: usize, width: usize, rng: &mut ChaCha12Rng) -> Self {
        let in_dim = in_ch * h * w;
        let hidden = width.max(16);
        Self {
            fc1: Linear::new(in_dim, hidden, rng),
            relu1: Relu2::default(),
            fc2: Linear::new(hidden, width, rng),
            relu2: Relu2::default(),
            in_dim,
            width,
        }
    }

    fn flatten(&self, x: &Array4<f64>) -> Array2<f64> {
        let b = x.dim().0;
        x.to_shape((b, self.in_dim)).expect("contiguous").to_owned()
    }
}

impl ImageEncoder for MlpEncoder {
    fn output_width(&self) -> usize {
        self.width
    }

    fn forward_eval(&self, x: &Array4<f64>) -> Array2<f64> {
        let y = self.fc1.forward_eval(&self.flatten(x)).mapv(|v| v.max(0.0));
        self.fc2.forward_eval(&y).mapv(|v| v.max(0.0))
    }

    fn forward_train(&mut self, x: &Array4<f64>) -> Array2<f64> {
        let y = self.fc1.forward(&self.flatten(x), true);
        let y = self.relu1.forward(&y, true);
        let y = self.fc2.forward(&y, true);
        self.relu2.forward(&y, true)
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array4<f64> {
        let dy = self.relu2.backward(dy);
        let dy = self.fc2.backward(&dy);
        let dy = self.relu1.backward(&dy);
        let dx = self.fc1.backward(&dy);
        // Callers of MLP encoders never need the image-shaped gradient, but
        // the contract asks for one.
        let b = dx.dim().0;
        let per = self.in_dim;
        Array4::from_shape_vec((b, per, 1, 1), dx.into_iter().collect()).expect("shape")
    }
}

impl HasParams for MlpEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
    }
}

pub type EncoderBuilder =
    fn(in_ch: usize, h: usize, w: usize, width: usize, rng: &mut ChaCha12Rng) -> Box<dyn ImageEncoder>;

/// Named registry of image encoders.
pub struct EncoderRegistry {
    builders: BTreeMap<String, EncoderBuilder>,
}

impl EncoderRegistry {
    pub fn builtin() -> Self {
        let mut reg = Self { builders: BTreeMap::new() };
        reg.register("conv3", |c, h, w, width, rng| {
            Box::new(Conv3Encoder::new(c, h, w, width, rng))
        });
        reg.register("mlp", |c, h, w, width, rng| {
            Box::new(MlpEncoder::new(c, h, w, width, rng))
        });
        reg
    }

    pub fn register(&mut self, name: &str, builder: EncoderBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<String> {
        self.builders.keys().cloned().collect()
    }

    pub fn build(
        &self,
        name: &str,
        in_ch: usize,
        h: usize,
        w: usize,
        width: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Box<dyn ImageEncoder>, BackendError> {
        let builder = self
            .builders
            .get(name)
            .ok_or_else(|| BackendError::UnknownEncoder(name.to_string()))?;
        Ok(builder(in_ch, h, w, width, rng))
    }
}

// ---------------------------------------------------------------------------
// Feed-forward backend (also serves as the M = 2 baseline)
// ---------------------------------------------------------------------------

/// Whole-window model: M frames stacked along the channel axis.
pub struct FeedForwardModel {
    spec: BackendSpec,
    tasks: TaskSet,
    encoder: Box<dyn ImageEncoder>,
    head: Linear,
}

impl FeedForwardModel {
    pub fn build(
        spec: &BackendSpec,
        tasks: &TaskSet,
        encoders: &EncoderRegistry,
        seed: u64,
    ) -> Result<Self, BackendError> {
        spec.validate()?;
        if tasks.m != spec.m || tasks.tau_plus_1() != spec.tau_plus_1 as usize {
            return Err(BackendError::SpecInvalid(format!(
                "task set (M = {}, tau+1 = {}) does not match spec (M = {}, tau+1 = {})",
                tasks.m,
                tasks.tau_plus_1(),
                spec.m,
                spec.tau_plus_1
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder = encoders.build(
            &spec.encoder,
            spec.m as usize,
            spec.image_height as usize,
            spec.image_width as usize,
            spec.encoder_width,
            &mut rng,
        )?;
        let head = Linear::new(spec.encoder_width, spec.head_width(), &mut rng);
        Ok(Self { spec: spec.clone(), tasks: tasks.clone(), encoder, head })
    }

    fn stack_window(&self, frames: &[Array2<f64>]) -> Array4<f64> {
        let m = frames.len();
        let (h, w) = frames[0].dim();
        let mut x = Array4::zeros((1, m, h, w));
        for (t, f) in frames.iter().enumerate() {
            x.index_axis_mut(Axis(0), 0)
                .index_axis_mut(Axis(0), t)
                .assign(f);
        }
        x
    }

    fn stack_batch(&self, batch: &[SequenceSample]) -> Array4<f64> {
        let b = batch.len();
        let m = self.spec.m as usize;
        let (h, w) = batch[0].frames[0].dim();
        let mut x = Array4::zeros((b, m, h, w));
        for (s, sample) in batch.iter().enumerate() {
            for (t, f) in sample.frames.iter().enumerate() {
                x.index_axis_mut(Axis(0), s)
                    .index_axis_mut(Axis(0), t)
                    .assign(f);
            }
        }
        x
    }
}

impl Model for FeedForwardModel {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn tasks(&self) -> &TaskSet {
        &self.tasks
    }

    fn predict(&self, frames: &[Array2<f64>]) -> Result<Vec<TaskPrediction>, BackendError> {
        check_window(&self.spec, frames)?;
        let x = self.stack_window(frames);
        let feat = self.encoder.forward_eval(&x);
        let out = self.head.forward_eval(&feat);
        Ok(predictions_from_vector(&self.tasks, out.row(0)))
    }

    fn forward_train(&mut self, batch: &[SequenceSample]) -> Result<Array3<f64>, BackendError> {
        for s in batch {
            check_window(&self.spec, &s.frames)?;
        }
        let x = self.stack_batch(batch);
        let feat = self.encoder.forward_train(&x);
        let out = self.head.forward(&feat, true);
        let b = batch.len();
        Ok(out
            .to_shape((b, self.spec.tau_plus_1 as usize, 6))
            .expect("head width")
            .to_owned())
    }

    fn backward_train(&mut self, dout: &Array3<f64>) {
        let b = dout.dim().0;
        let flat = dout
            .to_shape((b, self.spec.head_width()))
            .expect("contiguous")
            .to_owned();
        let dfeat = self.head.backward(&flat);
        let _ = self.encoder.backward(&dfeat);
    }
}

impl HasParams for FeedForwardModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params(&format!("{prefix}enc"), f);
        self.head.visit_params(&format!("{prefix}head"), f);
    }
}

// ---------------------------------------------------------------------------
// Recurrent backend
// ---------------------------------------------------------------------------

/// Per-frame encoder + LSTM, output at the last step only.
pub struct RecurrentModel {
    spec: BackendSpec,
    tasks: TaskSet,
    encoder: Box<dyn ImageEncoder>,
    lstm: Lstm,
    head: Linear,
    train_batch: usize,
}

impl RecurrentModel {
    pub fn build(
        spec: &BackendSpec,
        tasks: &TaskSet,
        encoders: &EncoderRegistry,
        seed: u64,
    ) -> Result<Self, BackendError> {
        spec.validate()?;
        if tasks.m != spec.m || tasks.tau_plus_1() != spec.tau_plus_1 as usize {
            return Err(BackendError::SpecInvalid(format!(
                "task set (M = {}, tau+1 = {}) does not match spec (M = {}, tau+1 = {})",
                tasks.m,
                tasks.tau_plus_1(),
                spec.m,
                spec.tau_plus_1
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let encoder = encoders.build(
            &spec.encoder,
            1,
            spec.image_height as usize,
            spec.image_width as usize,
            spec.encoder_width,
            &mut rng,
        )?;
        let lstm = Lstm::new(spec.encoder_width, spec.hidden_width, &mut rng);
        let head = Linear::new(spec.hidden_width, spec.head_width(), &mut rng);
        Ok(Self { spec: spec.clone(), tasks: tasks.clone(), encoder, lstm, head, train_batch: 0 })
    }

    /// Frames of the whole batch as one (B * M, 1, H, W) tensor, step-major:
    /// row `t * B + s` holds frame `t` of sample `s`, so one encoder pass
    /// covers every step and slicing per step is contiguous.
    fn stack_frames(&self, batch: &[SequenceSample]) -> Array4<f64> {
        let b = batch.len();
        let m = self.spec.m as usize;
        let (h, w) = batch[0].frames[0].dim();
        let mut x = Array4::zeros((b * m, 1, h, w));
        for (s, sample) in batch.iter().enumerate() {
            for (t, frame) in sample.frames.iter().enumerate() {
                x.index_axis_mut(Axis(0), t * b + s)
                    .index_axis_mut(Axis(0), 0)
                    .assign(frame);
            }
        }
        x
    }

    fn split_steps(&self, feats: &Array2<f64>, b: usize) -> Vec<Array2<f64>> {
        let m = self.spec.m as usize;
        (0..m)
            .map(|t| feats.slice(ndarray::s![t * b..(t + 1) * b, ..]).to_owned())
            .collect()
    }
}

impl Model for RecurrentModel {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn tasks(&self) -> &TaskSet {
        &self.tasks
    }

    fn predict(&self, frames: &[Array2<f64>]) -> Result<Vec<TaskPrediction>, BackendError> {
        check_window(&self.spec, frames)?;
        let (h, w) = frames[0].dim();
        let m = frames.len();
        let mut x = Array4::zeros((m, 1, h, w));
        for (t, f) in frames.iter().enumerate() {
            x.index_axis_mut(Axis(0), t)
                .index_axis_mut(Axis(0), 0)
                .assign(f);
        }
        let feats = self.encoder.forward_eval(&x); // (M, F)
        let xs: Vec<Array2<f64>> = (0..m)
            .map(|t| feats.slice(ndarray::s![t..t + 1, ..]).to_owned())
            .collect();
        let h_last = self.lstm.forward_eval(&xs);
        let out = self.head.forward_eval(&h_last);
        Ok(predictions_from_vector(&self.tasks, out.row(0)))
    }

    fn forward_train(&mut self, batch: &[SequenceSample]) -> Result<Array3<f64>, BackendError> {
        for s in batch {
            check_window(&self.spec, &s.frames)?;
        }
        let b = batch.len();
        self.train_batch = b;
        let x = self.stack_frames(batch);
        let feats = self.encoder.forward_train(&x); // (B * M, F)
        let xs = self.split_steps(&feats, b);
        let h_last = self.lstm.forward_sequence(&xs, true);
        let out = self.head.forward(&h_last, true);
        Ok(out
            .to_shape((b, self.spec.tau_plus_1 as usize, 6))
            .expect("head width")
            .to_owned())
    }

    fn backward_train(&mut self, dout: &Array3<f64>) {
        let b = dout.dim().0;
        debug_assert_eq!(b, self.train_batch);
        let m = self.spec.m as usize;
        let flat = dout
            .to_shape((b, self.spec.head_width()))
            .expect("contiguous")
            .to_owned();
        let dh = self.head.backward(&flat);
        let dxs = self.lstm.backward_sequence(&dh);
        let f_dim = self.spec.encoder_width;
        let mut dfeats = Array2::zeros((b * m, f_dim));
        for (t, dx) in dxs.iter().enumerate() {
            dfeats.slice_mut(ndarray::s![t * b..(t + 1) * b, ..]).assign(dx);
        }
        let _ = self.encoder.backward(&dfeats);
    }
}

impl HasParams for RecurrentModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params(&format!("{prefix}enc"), f);
        self.lstm.visit_params(&format!("{prefix}lstm"), f);
        self.head.visit_params(&format!("{prefix}head"), f);
    }
}

// ---------------------------------------------------------------------------
// Backend registry
// ---------------------------------------------------------------------------

pub type BackendBuilder = fn(
    &EncoderRegistry,
    &BackendSpec,
    &TaskSet,
    u64,
) -> Result<Box<dyn Model>, BackendError>;

/// Named registry of prediction backends. `builtin()` registers the three
/// standard strategies; adding another is one `register` call.
pub struct BackendRegistry {
    builders: BTreeMap<String, BackendBuilder>,
    encoders: EncoderRegistry,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl BackendRegistry {
    pub fn builtin() -> Self {
        let mut reg = Self { builders: BTreeMap::new(), encoders: EncoderRegistry::builtin() };
        reg.register(KIND_FEED_FORWARD, |enc, spec, tasks, seed| {
            Ok(Box::new(FeedForwardModel::build(spec, tasks, enc, seed)?))
        });
        reg.register(KIND_BASELINE, |enc, spec, tasks, seed| {
            Ok(Box::new(FeedForwardModel::build(spec, tasks, enc, seed)?))
        });
        reg.register(KIND_RECURRENT, |enc, spec, tasks, seed| {
            Ok(Box::new(RecurrentModel::build(spec, tasks, enc, seed)?))
        });
        reg
    }

    pub fn register(&mut self, kind: &str, builder: BackendBuilder) {
        self.builders.insert(kind.to_string(), builder);
    }

    pub fn names(&self) -> Vec<String> {
        self.builders.keys().cloned().collect()
    }

    pub fn encoders(&self) -> &EncoderRegistry {
        &self.encoders
    }

    pub fn encoders_mut(&mut self) -> &mut EncoderRegistry {
        &mut self.encoders
    }

    /// Build an untrained model with seeded initial weights.
    pub fn build(
        &self,
        spec: &BackendSpec,
        tasks: &TaskSet,
        seed: u64,
    ) -> Result<Box<dyn Model>, BackendError> {
        let builder = self
            .builders
            .get(&spec.kind)
            .ok_or_else(|| BackendError::UnknownBackend(spec.kind.clone()))?;
        builder(&self.encoders, spec, tasks, seed)
    }
}

/// Adapter exposing a [`Model`] through the reconstruction predictor trait.
pub struct ModelPredictor<'a>(pub &'a dyn Model);

impl ScanPredictor for ModelPredictor<'_> {
    fn tasks(&self) -> &TaskSet {
        self.0.tasks()
    }

    fn predict_window(
        &self,
        scan: &Scan,
        start: u32,
    ) -> Result<Vec<TaskPrediction>, ReconstructError> {
        let m = self.0.spec().m;
        let frames: Vec<Array2<f64>> = (start..start + m)
            .map(|idx| scan.frames[(idx - 1) as usize].to_normalized())
            .collect();
        self.0
            .predict(&frames)
            .map_err(|e| ReconstructError::Predictor(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    shape: Vec<usize>,
    /// Little-endian f64 bytes, base64; bit-exact round trip.
    data: String,
}

/// Versioned checkpoint container: spec + task set + parameters.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: BackendSpec,
    pub tasks: TaskSet,
    pub epoch: usize,
    pub val_eacc_main: Option<f64>,
    pub seed: u64,
    tensors: Vec<TensorBlob>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_model(
        model: &mut dyn Model,
        epoch: usize,
        val_eacc_main: Option<f64>,
        seed: u64,
    ) -> Self {
        let tensors = export_params(model)
            .into_iter()
            .map(|(name, shape, data)| {
                let mut bytes = Vec::with_capacity(data.len() * 8);
                for v in &data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                TensorBlob { name, shape, data: B64.encode(bytes) }
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            spec: model.spec().clone(),
            tasks: model.tasks().clone(),
            epoch,
            val_eacc_main,
            seed,
            tensors,
        }
    }

    /// Rebuild the model through the registry and load the stored weights.
    pub fn into_model(&self, registry: &BackendRegistry) -> Result<Box<dyn Model>, BackendError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(BackendError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut model = registry.build(&self.spec, &self.tasks, self.seed)?;
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .tensors
            .iter()
            .map(|t| {
                let bytes = B64
                    .decode(&t.data)
                    .map_err(|e| BackendError::Checkpoint(format!("tensor {}: {e}", t.name)))?;
                if bytes.len() % 8 != 0 {
                    return Err(BackendError::Checkpoint(format!(
                        "tensor {}: byte length {} not a multiple of 8",
                        t.name,
                        bytes.len()
                    )));
                }
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok((t.name.clone(), t.shape.clone(), data))
            })
            .collect::<Result<_, BackendError>>()?;
        import_params(model.as_mut(), &tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        let json = serde_json::to_string(self)
            .map_err(|e| BackendError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| BackendError::Checkpoint(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

fn default_minibatch() -> usize {
    32
}

fn default_step_size() -> f64 {
    1e-4
}

fn default_batches_per_epoch() -> usize {
    8
}

fn default_val_stride() -> u32 {
    4
}

fn default_val_every() -> usize {
    1
}

fn default_val_windows() -> usize {
    4
}

/// Optimisation settings. One "epoch" is `batches_per_epoch` freshly sampled
/// minibatches, not a full pass over the data; the training log header
/// records this definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    pub max_epochs: usize,
    #[serde(default = "default_batches_per_epoch")]
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// Pixel stride for the validation accumulated-error metric.
    #[serde(default = "default_val_stride")]
    pub val_stride: u32,
    /// Validate every this many epochs (the last epoch always validates).
    #[serde(default = "default_val_every")]
    pub val_every: usize,
    /// Deterministic windows per validation scan for the validation loss.
    #[serde(default = "default_val_windows")]
    pub val_windows: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !ACCEPTED_STEP_SIZES.iter().any(|&s| s == self.step_size) {
            return Err(BackendError::SpecInvalid(format!(
                "step_size {} not in the accepted set {ACCEPTED_STEP_SIZES:?}",
                self.step_size
            )));
        }
        if self.minibatch == 0 || self.max_epochs == 0 || self.batches_per_epoch == 0 {
            return Err(BackendError::SpecInvalid(
                "minibatch, max_epochs and batches_per_epoch must be positive".into(),
            ));
        }
        if self.val_every == 0 {
            return Err(BackendError::SpecInvalid("val_every must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Same loss rescaled to the full task-universe normalisation.
    pub train_loss_universe: f64,
    pub val_loss: Option<f64>,
    pub val_eacc_main: Option<f64>,
}

/// Result of a training run: the validation-selected checkpoint plus the
/// final-epoch checkpoint and the full log.
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_eacc: f64,
    pub last: Checkpoint,
    pub last_val_eacc: f64,
    pub log: Vec<TrainLogRow>,
    pub excluded_scans: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Validation loss windows: deterministic, evenly spaced starts.
fn val_starts(len: u32, m: u32, count: usize) -> Vec<u32> {
    let last = len - m + 1;
    if last == 1 || count <= 1 {
        return vec![1];
    }
    let n = count.min(last as usize);
    let mut starts: Vec<u32> = (0..n)
        .map(|k| 1 + ((last - 1) as f64 * k as f64 / (n - 1) as f64).round() as u32)
        .collect();
    starts.dedup();
    starts
}

/// Train a backend on the given scans and return the checkpoint with the
/// best validation main-task accumulated error.
pub fn train(
    spec: &BackendSpec,
    tasks: &TaskSet,
    train_scans: &[Scan],
    val_scans: &[Scan],
    cfg: &TrainConfig,
    registry: &BackendRegistry,
) -> Result<TrainOutcome, BackendError> {
    cfg.validate()?;
    spec.validate()?;

    let mut excluded = Vec::new();
    let usable: Vec<&Scan> = train_scans
        .iter()
        .filter(|s| {
            if s.len() >= spec.m {
                true
            } else {
                excluded.push(s.id.clone());
                false
            }
        })
        .collect();
    let usable_val: Vec<&Scan> = val_scans.iter().filter(|s| s.len() >= spec.m).collect();
    if usable.is_empty() {
        return Err(BackendError::NoTrainData(format!(
            "no training scan has at least M = {} frames",
            spec.m
        )));
    }
    if usable_val.is_empty() {
        return Err(BackendError::NoTrainData(format!(
            "no validation scan has at least M = {} frames",
            spec.m
        )));
    }
    for id in &excluded {
        log::info!("excluding scan {id}: shorter than M = {}", spec.m);
    }

    let mut model = registry.build(spec, tasks, cfg.seed)?;
    let mut adam = Adam::new(cfg.step_size);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let mut log_rows = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    let mut last_val = f64::INFINITY;

    for epoch in 1..=cfg.max_epochs {
        let mut batch_losses = Vec::with_capacity(cfg.batches_per_epoch);
        for batch_idx in 0..cfg.batches_per_epoch {
            let mut batch = Vec::with_capacity(cfg.minibatch);
            for _ in 0..cfg.minibatch {
                let scan = usable[rng.gen_range(0..usable.len())];
                batch.push(sample_sequence(scan, tasks, &mut rng)?);
            }
            let out = model.forward_train(&batch)?;
            let b = batch.len();
            let mut dout = Array3::zeros(out.raw_dim());
            let mut loss_sum = 0.0;
            for (s, sample) in batch.iter().enumerate() {
                let corners =
                    corner_points(sample.geom.width, sample.geom.height, sample.geom.spacing_mm)?;
                let preds = predictions_from_vector(
                    tasks,
                    out.index_axis(Axis(0), s)
                        .to_shape(spec.head_width())
                        .expect("contiguous")
                        .view(),
                );
                let (loss, grads) = multi_task_loss_and_grad(&preds, sample, &corners)?;
                loss_sum += loss;
                for (k, g) in grads.iter().enumerate() {
                    for c in 0..6 {
                        dout[[s, k, c]] = g[c] / b as f64;
                    }
                }
            }
            let batch_loss = loss_sum / b as f64;
            if !batch_loss.is_finite() {
                return Err(BackendError::Diverged { epoch, batch: batch_idx });
            }
            zero_grads(model.as_mut());
            model.backward_train(&dout);
            adam.step(model.as_mut());
            batch_losses.push(batch_loss);
        }
        let train_loss = mean(&batch_losses);

        let validate_now = epoch % cfg.val_every == 0 || epoch == cfg.max_epochs;
        let (mut val_loss, mut val_eacc) = (None, None);
        if validate_now {
            let vl = validation_loss(model.as_ref(), tasks, &usable_val, cfg.val_windows)?;
            let ve = validation_eacc(model.as_ref(), &usable_val, cfg.val_stride)?;
            val_loss = Some(vl);
            val_eacc = Some(ve);
            last_val = ve;
            if best.as_ref().map_or(true, |(_, b, _)| ve < *b) {
                let ckpt = Checkpoint::from_model(model.as_mut(), epoch, Some(ve), cfg.seed);
                best = Some((epoch, ve, ckpt));
            }
        }
        log_rows.push(TrainLogRow {
            epoch,
            train_loss,
            train_loss_universe: universe_normalised(train_loss, tasks.tau_plus_1(), spec.m),
            val_loss,
            val_eacc_main: val_eacc,
        });
    }

    let last = Checkpoint::from_model(model.as_mut(), cfg.max_epochs, Some(last_val), cfg.seed);
    let (best_epoch, best_val_eacc, best) = best.expect("final epoch always validates");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_eacc,
        last,
        last_val_eacc: last_val,
        log: log_rows,
        excluded_scans: excluded,
    })
}

fn validation_loss(
    model: &dyn Model,
    tasks: &TaskSet,
    val_scans: &[&Scan],
    windows_per_scan: usize,
) -> Result<f64, BackendError> {
    let mut losses = Vec::new();
    for scan in val_scans {
        let corners = {
            let g = scan.geom();
            corner_points(g.width, g.height, g.spacing_mm)?
        };
        for start in val_starts(scan.len(), tasks.m, windows_per_scan) {
            let sample = sequence_at(scan, tasks, start)?;
            let preds = model.predict(&sample.frames)?;
            losses.push(multi_task_loss(&preds, &sample, &corners)?);
        }
    }
    Ok(mean(&losses))
}

fn validation_eacc(
    model: &dyn Model,
    val_scans: &[&Scan],
    stride: u32,
) -> Result<f64, BackendError> {
    let main = model.tasks().main;
    let predictor = ModelPredictor(model);
    let mut errs = Vec::new();
    for scan in val_scans {
        let pred_traj = chain(scan, &predictor, main)?;
        let gt_traj = Trajectory::ground_truth(scan);
        errs.push(accumulated_error(&gt_traj, &pred_traj, &scan.geom(), stride)?);
    }
    Ok(mean(&errs))
}

/// Write the training log as CSV with a provenance header.
pub fn write_train_log(
    path: &Path,
    outcome: &TrainOutcome,
    spec: &BackendSpec,
    tasks: &TaskSet,
    cfg: &TrainConfig,
) -> Result<(), BackendError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "# epoch = {} minibatches of {} randomly sampled sequences",
        cfg.batches_per_epoch, cfg.minibatch
    )?;
    writeln!(f, "# backend = {}, M = {}, tau_plus_1 = {}", spec.kind, spec.m, spec.tau_plus_1)?;
    writeln!(f, "# seed = {}, step_size = {}", cfg.seed, cfg.step_size)?;
    writeln!(f, "# main_task = ({},{})", tasks.main.i, tasks.main.j)?;
    let pair_list: Vec<String> = tasks.pairs.iter().map(|p| format!("({},{})", p.i, p.j)).collect();
    writeln!(f, "# tasks = {}", pair_list.join(" "))?;
    writeln!(
        f,
        "# loss_normalisation = realised_count ({}); train_loss_universe uses M(M-1)/2 ({})",
        tasks.tau_plus_1(),
        universe_size(spec.m)
    )?;
    writeln!(f, "# val_stride = {}", cfg.val_stride)?;
    writeln!(f, "epoch,train_loss,train_loss_universe,val_loss,val_eacc_main")?;
    for row in &outcome.log {
        let vl = row.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let ve = row.val_eacc_main.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{}",
            row.epoch, row.train_loss, row.train_loss_universe, vl, ve
        )?;
    }
    Ok(())
}

use rand::Rng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Arm, Frame, ImageGeom, Orientation, Protocol, Scan, ScanMeta};
    use crate::geometry::{compose, RigidTransform};
    use crate::sampling::{sample_tasks, TaskPair};
    use image::GrayImage;

    fn tiny_scan(id: &str, n: u32, hw: u32) -> Scan {
        let frames = (1..=n)
            .map(|index| Frame {
                index,
                image: GrayImage::from_fn(hw, hw, |x, y| {
                    image::Luma([((x * 31 + y * 17 + index * 53) % 256) as u8])
                }),
                timestamp_s: None,
            })
            .collect();
        let poses = (0..n)
            .map(|k| {
                compose(
                    &RigidTransform::translation(0.8 * k as f64, 0.0, 0.1 * k as f64),
                    &RigidTransform::rot_z(0.002 * k as f64),
                )
            })
            .collect();
        Scan::new(
            id.into(),
            frames,
            poses,
            RigidTransform::translation(0.5, -0.5, 1.0),
            ScanMeta {
                subject_id: "s".into(),
                arm: Arm::Left,
                protocol: Protocol::Straight,
                orientation: Orientation::Perpendicular,
                fps: 20.0,
                pixel_spacing: 0.5,
            },
        )
        .unwrap()
    }

    fn tiny_spec(kind: &str, m: u32, tau: u32) -> BackendSpec {
        BackendSpec {
            kind: kind.into(),
            m,
            tau_plus_1: tau,
            encoder: "conv3".into(),
            encoder_width: 16,
            hidden_width: 24,
            image_height: 16,
            image_width: 16,
        }
    }

    #[test]
    fn predict_output_count_and_layout() {
        let registry = BackendRegistry::builtin();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tasks = sample_tasks(4, 5, TaskPair::new(2, 3), &mut rng).unwrap();
        let spec = tiny_spec(KIND_FEED_FORWARD, 4, 5);
        let model = registry.build(&spec, &tasks, 9).unwrap();
        let scan = tiny_scan("a", 4, 16);
        let frames: Vec<_> = scan.frames.iter().map(|f| f.to_normalized()).collect();
        let preds = model.predict(&frames).unwrap();
        assert_eq!(preds.len(), 5);
        for (k, p) in preds.iter().enumerate() {
            assert_eq!(p.pair, tasks.pairs[k]);
        }
    }

    #[test]
    fn predict_is_deterministic() {
        let registry = BackendRegistry::builtin();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tasks = sample_tasks(3, 3, TaskPair::new(1, 2), &mut rng).unwrap();
        let spec = tiny_spec(KIND_RECURRENT, 3, 3);
        let model = registry.build(&spec, &tasks, 1).unwrap();
        let scan = tiny_scan("a", 3, 16);
        let frames: Vec<_> = scan.frames.iter().map(|f| f.to_normalized()).collect();
        let a = model.predict(&frames).unwrap();
        let b = model.predict(&frames).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.params.to_array(), pb.params.to_array());
        }
    }

    #[test]
    fn predict_rejects_wrong_resolution() {
        let registry = BackendRegistry::builtin();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tasks = sample_tasks(2, 1, TaskPair::new(1, 2), &mut rng).unwrap();
        let mut spec = tiny_spec(KIND_FEED_FORWARD, 2, 1);
        spec.image_height = 32;
        spec.image_width = 32;
        let model = registry.build(&spec, &tasks, 9).unwrap();
        let scan = tiny_scan("a", 2, 16);
        let frames: Vec<_> = scan.frames.iter().map(|f| f.to_normalized()).collect();
        assert!(matches!(
            model.predict(&frames),
            Err(BackendError::WrongResolution { .. })
        ));
    }

    #[test]
    fn baseline_requires_m2() {
        let spec = tiny_spec(KIND_BASELINE, 4, 5);
        assert!(spec.validate().is_err());
        let spec = tiny_spec(KIND_BASELINE, 2, 1);
        spec.validate().unwrap();
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let registry = BackendRegistry::builtin();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tasks = sample_tasks(3, 3, TaskPair::new(2, 3), &mut rng).unwrap();
        let spec = tiny_spec(KIND_RECURRENT, 3, 3);
        let mut model = registry.build(&spec, &tasks, 77).unwrap();
        let scan = tiny_scan("a", 3, 16);
        let frames: Vec<_> = scan.frames.iter().map(|f| f.to_normalized()).collect();
        let before = model.predict(&frames).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_model(model.as_mut(), 0, None, 77).save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().into_model(&registry).unwrap();
        let after = restored.predict(&frames).unwrap();
        for (a, b) in before.iter().zip(&after) {
            let (aa, bb) = (a.params.to_array(), b.params.to_array());
            for c in 0..6 {
                assert_eq!(aa[c].to_bits(), bb[c].to_bits(), "slot differs");
            }
        }
    }

    #[test]
    fn train_config_rejects_odd_step_size() {
        let cfg = TrainConfig {
            minibatch: 4,
            step_size: 5e-4,
            max_epochs: 1,
            batches_per_epoch: 1,
            seed: 0,
            val_stride: 4,
            val_every: 1,
            val_windows: 2,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_gradient_flows_into_encoder() {
        // A single Adam step on a fixed batch must change the prediction.
        let registry = BackendRegistry::builtin();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tasks = sample_tasks(2, 1, TaskPair::new(1, 2), &mut rng).unwrap();
        let spec = tiny_spec(KIND_FEED_FORWARD, 2, 1);
        let mut model = registry.build(&spec, &tasks, 9).unwrap();
        let scan = tiny_scan("a", 2, 16);
        let sample = sequence_at(&scan, &tasks, 1).unwrap();
        let before = model.predict(&sample.frames).unwrap()[0].params.to_array();

        let out = model.forward_train(std::slice::from_ref(&sample)).unwrap();
        let corners = corner_points(16, 16, 0.5).unwrap();
        let preds = predictions_from_vector(&tasks, out.index_axis(Axis(0), 0).to_shape(6).unwrap().view());
        let (_, grads) = multi_task_loss_and_grad(&preds, &sample, &corners).unwrap();
        let mut dout = Array3::zeros((1, 1, 6));
        for c in 0..6 {
            dout[[0, 0, c]] = grads[0][c];
        }
        zero_grads(model.as_mut());
        model.backward_train(&dout);
        let mut adam = Adam::new(1e-3);
        adam.step(model.as_mut());
        let after = model.predict(&sample.frames).unwrap()[0].params.to_array();
        assert_ne!(before, after);
        let _ = ImageGeom { width: 16, height: 16, spacing_mm: 0.5 };
    }
}
