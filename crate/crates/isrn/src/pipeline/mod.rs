//! The full iterative model: K unrolled refinement rounds with a shared
//! upscaling solver, per-round down-projection/correction pairs, and a
//! fusion head over all intermediate estimates.
//!
//! One round k (counting from 1) computes `I_k = SolverSR(u_{k-1})` from the
//! running low-resolution state, starting at `u_0 = I_LR`. Every round but
//! the last then re-projects its estimate to the observation grid and
//! corrects the state: `u_k = SolverLR_k([DownSampler_k(I_k), I_LR])`. The
//! final output fuses all K estimates. The upscaling solver is one shared
//! instance — its parameters receive gradient from every round — while each
//! round owns its projection pair unless `share_lr_solvers` is set.

mod checkpoint;
mod ensemble;

pub use checkpoint::Checkpoint;
pub use ensemble::{ensemble_with, self_ensemble_forward};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::to_y_channel;
use crate::solvers::{DownSampler, SolverLr, SolverMle, SolverSr};
use crate::tensor::{Element, Parameter, Tape, Tensor, Var};

/// Everything that determines the network's architecture. Stored in every
/// checkpoint; two models interoperate exactly when their configs are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Upscaling factor s ∈ {2, 3, 4}.
    pub scale: usize,
    /// Refinement rounds K.
    pub iterations: usize,
    /// Feature width M of the upscaling solver.
    pub filters: usize,
    /// Feature width M0 of the down-sampler.
    pub down_filters: usize,
    /// Residual blocks per group, N.
    pub blocks_per_group: usize,
    /// Groups in the upscaling solver, G.
    pub groups: usize,
    /// Reuse one down-sampler/corrector pair for every round.
    pub share_lr_solvers: bool,
    /// Feature-normalization layers inside the residual blocks.
    pub enable_fn: bool,
    /// Trailing padding unit in each group.
    pub enable_padding_unit: bool,
    /// Fusion head over the K estimates; without it the output is the first
    /// estimate, so `iterations` must be 1.
    pub enable_mle: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            iterations: 5,
            filters: 64,
            down_filters: 32,
            blocks_per_group: 6,
            groups: 6,
            share_lr_solvers: false,
            enable_fn: true,
            enable_padding_unit: true,
            enable_mle: true,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and demos: same topology, a fraction
    /// of the width.
    pub fn toy(scale: usize, iterations: usize) -> Self {
        ModelConfig {
            scale,
            iterations,
            filters: 16,
            down_filters: 8,
            blocks_per_group: 2,
            groups: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!(
                "scale {} unsupported (expected 2, 3 or 4)",
                self.scale
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        for (name, v) in [
            ("filters", self.filters),
            ("down_filters", self.down_filters),
            ("blocks_per_group", self.blocks_per_group),
            ("groups", self.groups),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.enable_mle && self.iterations != 1 {
            return Err(Error::Config(format!(
                "without the fusion head the output is the first estimate; \
                 iterations must be 1, got {}",
                self.iterations
            )));
        }
        Ok(())
    }

    /// Down-sampler/corrector pairs the model instantiates: rounds 1..K-1
    /// each need one (round K's estimate is never re-projected), collapsed
    /// to a single shared pair when requested.
    fn lr_solver_pairs(&self) -> usize {
        match (self.iterations, self.share_lr_solvers) {
            (1, _) => 0,
            (_, true) => 1,
            (k, false) => k - 1,
        }
    }
}

/// The assembled model. See the module docs for the data flow.
pub struct IsrnModel<E: Element> {
    config: ModelConfig,
    solver_sr: SolverSr<E>,
    down_samplers: Vec<DownSampler<E>>,
    lr_solvers: Vec<SolverLr<E>>,
    fusion: Option<SolverMle<E>>,
}

impl<E: Element> IsrnModel<E> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let solver_sr = SolverSr::new(
            "solver_sr",
            config.scale,
            config.filters,
            config.blocks_per_group,
            config.groups,
            config.enable_fn,
            config.enable_padding_unit,
            rng,
        )?;
        let pairs = config.lr_solver_pairs();
        let mut down_samplers = Vec::with_capacity(pairs);
        let mut lr_solvers = Vec::with_capacity(pairs);
        for i in 0..pairs {
            down_samplers.push(DownSampler::new(
                &format!("down.{i}"),
                config.scale,
                config.down_filters,
                rng,
            )?);
            lr_solvers.push(SolverLr::new(&format!("lr.{i}"), config.filters, rng)?);
        }
        let fusion = if config.enable_mle {
            Some(SolverMle::new("mle", config.iterations, config.filters, rng)?)
        } else {
            None
        };
        Ok(IsrnModel {
            config,
            solver_sr,
            down_samplers,
            lr_solvers,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// The pair used in refinement round `k` (0-based): round-private
    /// storage, or the single shared pair.
    fn pair(&self, k: usize) -> (&DownSampler<E>, &SolverLr<E>) {
        let i = if self.config.share_lr_solvers { 0 } else { k };
        (&self.down_samplers[i], &self.lr_solvers[i])
    }

    /// Run the K rounds. Returns the fused output and every intermediate
    /// estimate `I_1..I_K` (each at full output resolution). Pass a tape to
    /// record gradients; `None` runs inference without graph bookkeeping.
    pub fn forward(&self, tape: Option<&Tape<E>>, lr_img: &Var<E>) -> Result<(Var<E>, Vec<Var<E>>)> {
        let shape = lr_img.value().shape();
        if shape.c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "model input must have 3 channels, got {shape}"
            )));
        }
        let mut estimates = Vec::with_capacity(self.config.iterations);
        let mut u = lr_img.clone();
        for k in 0..self.config.iterations {
            let estimate = self.solver_sr.forward(tape, &u)?;
            if k + 1 < self.config.iterations {
                let (down, corrector) = self.pair(k);
                let projected = down.forward(tape, &estimate)?;
                u = corrector.forward(tape, &projected, lr_img)?;
            }
            estimates.push(estimate);
        }
        let sr = match &self.fusion {
            Some(fusion) => fusion.forward(tape, &estimates)?,
            None => estimates[0].clone(),
        };
        Ok((sr, estimates))
    }

    /// Inference entry point on plain tensors: no gradient recording.
    pub fn forward_infer(&self, lr_img: &Tensor<E>) -> Result<(Tensor<E>, Vec<Tensor<E>>)> {
        let (sr, iters) = self.forward(None, &Var::constant(lr_img.clone()))?;
        Ok((
            sr.into_value(),
            iters.into_iter().map(Var::into_value).collect(),
        ))
    }

    /// Every parameter, in a stable construction order.
    pub fn params(&self) -> Vec<Arc<Parameter<E>>> {
        let mut out = Vec::new();
        self.solver_sr.collect_params(&mut out);
        for d in &self.down_samplers {
            d.collect_params(&mut out);
        }
        for l in &self.lr_solvers {
            l.collect_params(&mut out);
        }
        if let Some(f) = &self.fusion {
            f.collect_params(&mut out);
        }
        out
    }

    /// Exact number of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.complexity(self.config.scale, self.config.scale)
            .iter()
            .map(|r| r.params)
            .sum()
    }

    /// Exact multiply-accumulate count of one forward pass producing an
    /// `out_h x out_w` output (biases and activations excluded, the usual
    /// complexity-table convention).
    pub fn count_macs(&self, out_h: usize, out_w: usize) -> Result<u64> {
        if !out_h.is_multiple_of(self.config.scale) || !out_w.is_multiple_of(self.config.scale) {
            return Err(Error::InvalidArgument(format!(
                "output {out_h}x{out_w} not divisible by scale {}",
                self.config.scale
            )));
        }
        Ok(self.complexity(out_h, out_w).iter().map(|r| r.macs).sum())
    }

    /// Per-component accounting for an `out_h x out_w` output. Parameters
    /// are storage (each component once); MACs cover the whole K-round
    /// forward, so a shared component's row carries all of its passes.
    pub fn complexity(&self, out_h: usize, out_w: usize) -> Vec<ComplexityRow> {
        let k = self.config.iterations as u64;
        let (h, w) = (out_h / self.config.scale, out_w / self.config.scale);
        let mut rows = vec![ComplexityRow {
            component: format!("solver_sr (x{k})"),
            params: self.solver_sr.param_count(),
            macs: k * self.solver_sr.macs(h, w),
        }];
        // Rounds 1..K-1 run one pair each; with sharing they all hit pair 0.
        let runs_per_pair = if self.config.share_lr_solvers { k - 1 } else { 1 };
        for (i, (d, l)) in self.down_samplers.iter().zip(&self.lr_solvers).enumerate() {
            rows.push(ComplexityRow {
                component: format!("down.{i} (x{runs_per_pair})"),
                params: d.param_count(),
                macs: runs_per_pair * d.macs(out_h, out_w),
            });
            rows.push(ComplexityRow {
                component: format!("lr.{i} (x{runs_per_pair})"),
                params: l.param_count(),
                macs: runs_per_pair * l.macs(h, w),
            });
        }
        if let Some(f) = &self.fusion {
            rows.push(ComplexityRow {
                component: "mle".into(),
                params: f.param_count(),
                macs: f.macs(out_h, out_w),
            });
        }
        rows
    }
}

/// One line of the complexity table: a component, its parameter storage and
/// its total forward MACs.
#[derive(Debug, Clone)]
pub struct ComplexityRow {
    pub component: String,
    pub params: usize,
    pub macs: u64,
}

/// Render complexity rows plus totals as an aligned text table.
pub fn complexity_table(rows: &[ComplexityRow]) -> String {
    let mut out = format!("{:<20} {:>12} {:>18}\n", "component", "params", "MACs");
    for r in rows {
        out.push_str(&format!("{:<20} {:>12} {:>18}\n", r.component, r.params, r.macs));
    }
    let params: usize = rows.iter().map(|r| r.params).sum();
    let macs: u64 = rows.iter().map(|r| r.macs).sum();
    out.push_str(&format!("{:<20} {:>12} {:>18}\n", "total", params, macs));
    out.push_str(&format!(
        "{:<20} {:>11.2}M {:>17.1}G\n",
        "",
        params as f64 / 1e6,
        macs as f64 / 1e9
    ));
    out
}

/// Write the per-round estimates and the final output as grayscale PNGs
/// (`iteration_01.png`, ..., `output.png`). All files share one luma
/// min/max range so brightness is comparable across rounds. Returns the
/// written paths.
pub fn dump_iteration_maps<E: Element>(
    per_iter: &[Tensor<E>],
    sr: &Tensor<E>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if per_iter.is_empty() {
        return Err(Error::InvalidArgument("no iteration maps to dump".into()));
    }
    let mut lumas: Vec<Tensor<E>> = per_iter
        .iter()
        .chain(std::iter::once(sr))
        .map(to_y_channel)
        .collect::<Result<_>>()?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in &lumas {
        let (a, b) = l.min_max();
        lo = lo.min(a.into_f64());
        hi = hi.max(b.into_f64());
    }
    // A constant stack maps to mid-gray rather than dividing by zero.
    let span = if hi > lo { hi - lo } else { 1.0 };
    let offset = if hi > lo { lo } else { lo - 0.5 };
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut paths = Vec::with_capacity(lumas.len());
    let last = lumas.len() - 1;
    for (i, luma) in lumas.drain(..).enumerate() {
        let normalized = luma.map(|v| E::from_f64((v.into_f64() - offset) / span));
        let path = if i == last {
            dir.join("output.png")
        } else {
            dir.join(format!("iteration_{:02}.png", i + 1))
        };
        crate::data::save_image(&path, &normalized)?;
        paths.push(path);
    }
    Ok(paths)
}
