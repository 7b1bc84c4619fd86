//! Run configuration: a flat `key = value` file format with `[section]`
//! headers and `#` comment lines, merged over built-in defaults and then
//! overridden by command-line flags.
//!
//! The format is deliberately strict: every key must belong to a known
//! section and every value must parse, otherwise loading fails with a
//! message naming the offending line. Comments occupy whole lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::degrade::{DegradationKind, DegradationSpec};
use crate::error::{Error, Result};
use crate::pipeline::ModelConfig;
use crate::train::TrainConfig;

/// Everything a run needs: the model shape, the degradation, the training
/// recipe and where to read and write.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_dir: None,
            val_dir: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "{section}.{key}: cannot parse '{value}' as {}",
            std::any::type_name::<T>()
        ))
    })
}

impl RunConfig {
    /// Apply one `section.key = value` assignment. Unknown sections or keys
    /// are errors, as are malformed values.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut t.degradation;
        match (section, key) {
            ("model", "scale") => m.scale = parse(section, key, value)?,
            ("model", "iterations") => m.iterations = parse(section, key, value)?,
            ("model", "filters") => m.filters = parse(section, key, value)?,
            ("model", "down_filters") => m.down_filters = parse(section, key, value)?,
            ("model", "blocks_per_group") => m.blocks_per_group = parse(section, key, value)?,
            ("model", "groups") => m.groups = parse(section, key, value)?,
            ("model", "share_lr_solvers") => m.share_lr_solvers = parse(section, key, value)?,
            ("model", "enable_fn") => m.enable_fn = parse(section, key, value)?,
            ("model", "enable_padding_unit") => m.enable_padding_unit = parse(section, key, value)?,
            ("model", "enable_mle") => m.enable_mle = parse(section, key, value)?,
            ("degrade", "kind") => d.kind = parse(section, key, value)?,
            ("degrade", "blur_ksize") => d.blur_ksize = parse(section, key, value)?,
            ("degrade", "blur_sigma") => d.blur_sigma = parse(section, key, value)?,
            ("degrade", "noise_sigma") => d.noise_sigma = parse(section, key, value)?,
            ("degrade", "seed") => d.seed = parse(section, key, value)?,
            ("train", "lr0") => t.lr0 = parse(section, key, value)?,
            ("train", "halve_every") => t.halve_every = parse(section, key, value)?,
            ("train", "epochs") => t.epochs = parse(section, key, value)?,
            ("train", "steps_per_epoch") => t.steps_per_epoch = parse(section, key, value)?,
            ("train", "lr_patch") => t.lr_patch = parse(section, key, value)?,
            ("train", "batch_size") => t.batch_size = parse(section, key, value)?,
            ("train", "augment") => t.augment = parse(section, key, value)?,
            ("train", "seed") => t.seed = parse(section, key, value)?,
            ("train", "checkpoint_every") => t.checkpoint_every = parse(section, key, value)?,
            ("paths", "train_dir") => self.train_dir = Some(PathBuf::from(value)),
            ("paths", "val_dir") => self.val_dir = Some(PathBuf::from(value)),
            ("paths", "out_dir") => self.out_dir = PathBuf::from(value),
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{section}.{key}'"
                )))
            }
        }
        Ok(())
    }

    /// Apply a `section.key=value` override (the CLI's `--set` form).
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' is not of the form section.key=value"))
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| {
            Error::Config(format!("override key '{path}' is not of the form section.key"))
        })?;
        self.set(section.trim(), key.trim(), value.trim())
    }

    /// Merge a configuration file over `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let describe = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| describe(format!("unterminated section header '{raw}'")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| describe(format!("expected 'key = value', got '{raw}'")))?;
            if section.is_empty() {
                return Err(describe(format!(
                    "key '{}' appears before any [section] header",
                    key.trim()
                )));
            }
            self.set(&section, key.trim(), value.trim())
                .map_err(|e| describe(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = RunConfig::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    /// Check cross-field consistency and pin the degradation scale to the
    /// model scale (the single source of truth for the factor).
    pub fn finalize(&mut self) -> Result<()> {
        self.train.degradation.scale = self.model.scale;
        self.model.validate()?;
        self.train.validate()
    }

    /// Render as a parseable configuration file.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &t.degradation;
        let mut s = String::new();
        let _ = write!(
            s,
            "[model]\n\
             scale = {}\niterations = {}\nfilters = {}\ndown_filters = {}\n\
             blocks_per_group = {}\ngroups = {}\nshare_lr_solvers = {}\n\
             enable_fn = {}\nenable_padding_unit = {}\nenable_mle = {}\n\n\
             [degrade]\n\
             kind = {}\nblur_ksize = {}\nblur_sigma = {}\nnoise_sigma = {}\nseed = {}\n\n\
             [train]\n\
             lr0 = {}\nhalve_every = {}\nepochs = {}\nsteps_per_epoch = {}\n\
             lr_patch = {}\nbatch_size = {}\naugment = {}\nseed = {}\ncheckpoint_every = {}\n",
            m.scale,
            m.iterations,
            m.filters,
            m.down_filters,
            m.blocks_per_group,
            m.groups,
            m.share_lr_solvers,
            m.enable_fn,
            m.enable_padding_unit,
            m.enable_mle,
            d.kind,
            d.blur_ksize,
            d.blur_sigma,
            d.noise_sigma,
            d.seed,
            t.lr0,
            t.halve_every,
            t.epochs,
            t.steps_per_epoch,
            t.lr_patch,
            t.batch_size,
            t.augment,
            t.seed,
            t.checkpoint_every,
        );
        let _ = write!(s, "\n[paths]\n");
        if let Some(p) = &self.train_dir {
            let _ = writeln!(s, "train_dir = {}", p.display());
        }
        if let Some(p) = &self.val_dir {
            let _ = writeln!(s, "val_dir = {}", p.display());
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}

/// Degradation presets by name, with the scale attached afterwards.
pub fn degradation_preset(kind: DegradationKind, scale: usize) -> DegradationSpec {
    let mut spec = match kind {
        DegradationKind::Bicubic => DegradationSpec::bicubic(scale),
        DegradationKind::BlurDown => DegradationSpec::blur_down(),
        DegradationKind::DownNoise => DegradationSpec::down_noise(),
    };
    spec.scale = scale;
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_text_round_trip() {
        let cfg = RunConfig {
            train_dir: Some(PathBuf::from("data/train")),
            ..RunConfig::default()
        };
        let text = cfg.to_text();
        let mut back = RunConfig::default();
        back.merge_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn a_partial_file_only_touches_named_keys() {
        let mut cfg = RunConfig::default();
        cfg.merge_text(
            "# comment line\n\
             [model]\n\
             scale = 2\n\
             iterations = 3\n\
             \n\
             [degrade]\n\
             kind = dn\n",
        )
        .unwrap();
        assert_eq!(cfg.model.scale, 2);
        assert_eq!(cfg.model.iterations, 3);
        assert_eq!(cfg.model.filters, 64, "untouched key must keep its default");
        assert_eq!(cfg.train.degradation.kind, DegradationKind::DownNoise);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_with_line_numbers() {
        let mut cfg = RunConfig::default();
        let err = cfg.merge_text("[model]\nscail = 4\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("model.scail"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let err = cfg.merge_text("[model]\nscale = four\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = cfg.merge_text("scale = 4\n").unwrap_err();
        assert!(err.to_string().contains("before any [section]"), "{err}");

        let err = cfg.merge_text("[model\nscale = 4\n").unwrap_err();
        assert!(err.to_string().contains("unterminated"), "{err}");

        let err = cfg.merge_text("[model]\njust words\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn dotted_overrides_take_precedence_over_the_file() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("[train]\nbatch_size = 16\n").unwrap();
        cfg.set_dotted("train.batch_size = 4").unwrap();
        cfg.set_dotted("model.enable_fn=false").unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert!(!cfg.model.enable_fn);
        assert!(cfg.set_dotted("no_dot_here").is_err());
        assert!(cfg.set_dotted("train.nope = 1").is_err());
    }

    #[test]
    fn finalize_pins_the_degradation_scale_and_validates() {
        let mut cfg = RunConfig::default();
        cfg.set("model", "scale", "3").unwrap();
        cfg.finalize().unwrap();
        assert_eq!(cfg.train.degradation.scale, 3);

        cfg.set("model", "scale", "5").unwrap();
        let err = cfg.finalize().unwrap_err();
        assert_eq!(err.exit_code(), 2, "unsupported scale must exit with 2: {err}");
    }
}
