//! Training: patch sampling, dihedral augmentation, Adam with the halving
//! schedule, and the epoch loop with CSV logging and checkpoint/resume.
//!
//! Reproducibility contract: given the same master seed, corpus and config,
//! two runs produce bit-identical loss sequences. Every epoch draws its
//! sampling stream from `(seed, epoch)` alone and the optimizer state is
//! checkpointed in full, so a run resumed at an epoch boundary continues
//! exactly where the uninterrupted run would have been.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data;
use crate::degrade::{degrade, DegradationSpec};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::pipeline::{Checkpoint, IsrnModel};
use crate::tensor::{l1_loss, Dihedral, Parameter, Shape, Tape, Tensor, Var};

/// Hyper-parameters of a run. `Default` is the full-scale recipe; tests and
/// demos shrink it via [`TrainConfig::toy`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    /// Halve the learning rate every this many epochs.
    pub halve_every: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 = one pass worth of batches
    /// (`ceil(images / batch_size)`).
    pub steps_per_epoch: usize,
    /// Low-resolution patch side; the high-resolution patch is `scale` times
    /// larger.
    pub lr_patch: usize,
    pub batch_size: usize,
    /// Random flips and quarter rotations on every sampled pair.
    pub augment: bool,
    pub degradation: DegradationSpec,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            halve_every: 200,
            epochs: 1000,
            steps_per_epoch: 0,
            lr_patch: 48,
            batch_size: 16,
            augment: true,
            degradation: DegradationSpec::bicubic(4),
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Desk-scale recipe: strong learning rate, small patches, a couple of
    /// hundred steps.
    pub fn toy(scale: usize) -> Self {
        TrainConfig {
            lr0: 3e-3,
            halve_every: 1000,
            epochs: 8,
            steps_per_epoch: 25,
            lr_patch: 12,
            batch_size: 8,
            degradation: DegradationSpec::bicubic(scale),
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("halve_every", self.halve_every),
            ("lr_patch", self.lr_patch),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        self.degradation.validate()
    }
}

/// Learning rate at a given epoch: `lr0 · 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.halve_every) as i32)
}

/// Crop an aligned patch pair: `p x p` from the low-resolution image at a
/// uniform random offset, `s·p x s·p` from the high-resolution image at
/// exactly `s` times that offset.
pub fn sample_patch(
    hr: &Tensor<f32>,
    lr: &Tensor<f32>,
    s: usize,
    p: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let ls = lr.shape();
    if ls.h < p || ls.w < p {
        return Err(Error::Data(format!(
            "image {}x{} smaller than the {p}x{p} training patch",
            ls.h, ls.w
        )));
    }
    let y0 = rng.random_range(0..=ls.h - p);
    let x0 = rng.random_range(0..=ls.w - p);
    Ok((hr.crop(s * y0, s * x0, s * p, s * p)?, lr.crop(y0, x0, p, p)?))
}

/// Apply one random dihedral element (flip x quarter rotations) to both
/// halves of a pair, keeping them geometrically aligned.
pub fn augment(
    hr: Tensor<f32>,
    lr: Tensor<f32>,
    rng: &mut impl Rng,
) -> (Tensor<f32>, Tensor<f32>) {
    let d = Dihedral::all()[rng.random_range(0..8)];
    (hr.dihedral(d), lr.dihedral(d))
}

/// Bias-corrected Adam over a fixed parameter list. Moments are stored in
/// the parameter order handed in, keyed by parameter path for checkpoints.
pub struct Adam {
    params: Vec<Arc<Parameter<f32>>>,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: Vec<Arc<Parameter<f32>>>) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            params,
            m,
            v,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently held by the parameters.
    /// Gradients are left untouched; the caller zeroes them.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in self.params.iter().enumerate() {
            let g = p.grad();
            let value = p.value();
            let n = value.numel();
            let mut new_m = Vec::with_capacity(n);
            let mut new_v = Vec::with_capacity(n);
            let mut new_w = Vec::with_capacity(n);
            for j in 0..n {
                let gj = g.data()[j] as f64;
                let mj = self.beta1 * self.m[i].data()[j] as f64 + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * self.v[i].data()[j] as f64 + (1.0 - self.beta2) * gj * gj;
                let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                new_m.push(mj as f32);
                new_v.push(vj as f32);
                new_w.push(value.data()[j] - update as f32);
            }
            self.m[i] = Tensor::new(value.shape(), new_m)?;
            self.v[i] = Tensor::new(value.shape(), new_v)?;
            p.set_value(Tensor::new(value.shape(), new_w)?)?;
        }
        Ok(())
    }

    /// Moment tensors under checkpoint keys (`optim.m.<path>` /
    /// `optim.v.<path>`).
    pub fn state_entries(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        for (i, p) in self.params.iter().enumerate() {
            out.insert(format!("optim.m.{}", p.path()), self.m[i].clone());
            out.insert(format!("optim.v.{}", p.path()), self.v[i].clone());
        }
        out
    }

    /// Restore moments and step counter from a checkpoint that carries them.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            for (prefix, slot) in [("optim.m.", &mut self.m[i]), ("optim.v.", &mut self.v[i])] {
                let key = format!("{prefix}{}", p.path());
                let t = ckpt.tensors.get(&key).ok_or_else(|| {
                    Error::CheckpointIntegrity(format!("missing optimizer entry '{key}'"))
                })?;
                if t.shape() != p.shape() {
                    return Err(Error::CheckpointIntegrity(format!(
                        "optimizer entry '{key}' is {}, parameter is {}",
                        t.shape(),
                        p.shape()
                    )));
                }
                *slot = t.clone();
            }
        }
        self.step = ckpt.adam_step;
        Ok(())
    }
}

/// One log line. `val_psnr` is present on epoch-final rows when a
/// validation set was given.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

impl LogRow {
    fn csv(&self) -> String {
        let val = self
            .val_psnr
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!(
            "{},{},{:e},{:.8},{val}\n",
            self.epoch, self.step, self.lr, self.loss
        )
    }
}

/// An image pair: ground truth and its degraded observation.
struct PairedImage {
    hr: Tensor<f32>,
    lr: Tensor<f32>,
}

fn load_pairs(dir: &Path, spec: &DegradationSpec) -> Result<Vec<PairedImage>> {
    data::load_dir(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, named)| {
            let hr = data::crop_to_multiple(&named.image, spec.scale)?;
            let lr = degrade(&hr, &spec.for_image(i as u64))?;
            Ok(PairedImage { hr, lr })
        })
        .collect()
}

/// Concatenate single-image tensors along the batch axis.
fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let s = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * s.numel());
    for t in items {
        if t.shape() != s {
            return Err(Error::ShapeMismatch(format!(
                "batch items {} vs {s}",
                t.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(Shape::new(items.len() * s.n, s.c, s.h, s.w), data)
}

/// Mean Y-channel PSNR of the model over a validation set (outputs clipped
/// to the image range, borders shaved by the scale).
pub fn validation_psnr(model: &IsrnModel<f32>, pairs_dir: &Path, spec: &DegradationSpec) -> Result<f64> {
    let pairs = load_pairs(pairs_dir, spec)?;
    let mut total = 0.0;
    for pair in &pairs {
        let (sr, _) = model.forward_infer(&pair.lr)?;
        total += psnr(&sr.clamp(0.0, 1.0), &pair.hr, spec.scale)?;
    }
    Ok(total / pairs.len() as f64)
}

/// The per-epoch sampling stream: a fixed mix of the master seed and the
/// epoch index, so any epoch can be replayed without the preceding ones.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Run (or resume) training. Ground truth is read from `data_dir`,
/// observations are synthesized by the configured degradation, and the loss
/// is the mean absolute error against the fused output only. Appends one
/// CSV row per step to `<out_dir>/train_log.csv`, checkpoints into
/// `out_dir`, and returns all rows of this invocation.
pub fn train_loop(
    model: &IsrnModel<f32>,
    data_dir: &Path,
    val_dir: Option<&Path>,
    out_dir: &Path,
    cfg: &TrainConfig,
    resume: Option<&Checkpoint>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    let scale = model.config().scale;
    if cfg.degradation.scale != scale {
        return Err(Error::Config(format!(
            "degradation scale {} does not match model scale {scale}",
            cfg.degradation.scale
        )));
    }

    let params = model.params();
    let mut adam = Adam::new(params.clone());
    let mut start_epoch = 0usize;
    let mut seed = cfg.seed;
    if let Some(ckpt) = resume {
        model.apply_checkpoint(ckpt)?;
        adam.restore(ckpt)?;
        start_epoch = ckpt.epoch as usize;
        seed = ckpt.seed;
    }
    // Catch poisoned checkpoints or a broken initialization up front: a
    // non-finite parameter can only ever produce a non-finite model.
    for p in &params {
        p.value()
            .check_finite(&format!("parameter {}", p.path()))?;
    }

    let pairs = load_pairs(data_dir, &cfg.degradation)?;
    for pair in &pairs {
        let s = pair.lr.shape();
        let p = cfg.lr_patch;
        if s.h < p || s.w < p {
            return Err(Error::Data(format!(
                "degraded image {}x{} smaller than the {p}x{p} patch; \
                 shrink lr_patch or use larger images",
                s.h, s.w,
            )));
        }
    }
    let steps_per_epoch = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        pairs.len().div_ceil(cfg.batch_size)
    };

    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let log_path = out_dir.join("train_log.csv");
    let write_header = !log_path.exists();
    let mut log = OpenOptions::new()
        .append(true)
        .create(true)
        .open(&log_path)
        .map_err(Error::io(&log_path))?;
    if write_header {
        log.write_all(b"epoch,step,lr,loss,val_psnr\n")
            .map_err(Error::io(&log_path))?;
    }

    let save = |epoch_done: usize, adam: &Adam| -> Result<PathBuf> {
        let ckpt = model.to_checkpoint(
            epoch_done as u64,
            seed,
            adam.step_count(),
            adam.state_entries(),
        );
        let path = out_dir.join("last.ckpt");
        ckpt.save(&path)?;
        Ok(path)
    };

    let mut rows = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(seed, epoch);
        let lr_now = lr_at(epoch, cfg);
        for step in 0..steps_per_epoch {
            let mut lr_patches = Vec::with_capacity(cfg.batch_size);
            let mut hr_patches = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let pair = &pairs[rng.random_range(0..pairs.len())];
                let (mut hp, mut lp) =
                    sample_patch(&pair.hr, &pair.lr, scale, cfg.lr_patch, &mut rng)?;
                if cfg.augment {
                    (hp, lp) = augment(hp, lp, &mut rng);
                }
                hr_patches.push(hp);
                lr_patches.push(lp);
            }
            let input = stack_batch(&lr_patches)?;
            let target = stack_batch(&hr_patches)?;

            for p in &params {
                p.zero_grad();
            }
            let tape = Tape::new();
            let (sr, _) = model.forward(Some(&tape), &Var::constant(input))?;
            let loss = l1_loss(Some(&tape), &sr, &Var::constant(target))?;
            let loss_value = loss.value().scalar()? as f64;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss diverged at epoch {epoch} step {step}"
                )));
            }
            tape.backward(&loss)?;
            adam.step(lr_now)?;

            let mut row = LogRow {
                epoch,
                step,
                lr: lr_now,
                loss: loss_value,
                val_psnr: None,
            };
            if step + 1 == steps_per_epoch {
                if let Some(vd) = val_dir {
                    row.val_psnr = Some(validation_psnr(model, vd, &cfg.degradation)?);
                }
            }
            log.write_all(row.csv().as_bytes()).map_err(Error::io(&log_path))?;
            rows.push(row);
        }
        for p in &params {
            p.value()
                .check_finite(&format!("parameter {} after epoch {epoch}", p.path()))?;
        }
        let done = epoch + 1;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.epochs {
            save(done, &adam)?;
        }
    }
    Ok(rows)
}
