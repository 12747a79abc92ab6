//! Run configuration: a nested key-value TOML file.
//!
//! Every field is optional in the input; parsing resolves defaults (the
//! standard recipe values), applies the ablation preset, and validates
//! ranges with the offending key path in the message. The resolved config
//! serializes back to TOML with every value explicit, and re-parsing that
//! echo yields an identical `RunConfig`.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Hyperparams;
use crate::synthgen::GenConfig;

/// The experiment arms of the dissimilarity ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationPreset {
    /// Hard labels throughout: lambda = 1, k = 0.
    Baseline,
    /// Softened labels, global distance only: lambda_p = 0, lambda_c = 0.
    NoPartNoCce,
    /// Softened labels with CCE but no part distance: lambda_p = 0.
    NoPart,
    /// The complete method.
    Full,
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(AblationPreset::Baseline),
            "no-part-no-cce" => Ok(AblationPreset::NoPartNoCce),
            "no-part" => Ok(AblationPreset::NoPart),
            "full" => Ok(AblationPreset::Full),
            other => Err(Error::InvalidConfig(format!(
                "ablation: unknown preset '{}' (expected baseline | no-part-no-cce | no-part | full)",
                other
            ))),
        }
    }
}

impl std::fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AblationPreset::Baseline => "baseline",
            AblationPreset::NoPartNoCce => "no-part-no-cce",
            AblationPreset::NoPart => "no-part",
            AblationPreset::Full => "full",
        };
        f.write_str(s)
    }
}

impl AblationPreset {
    /// Overrides the hyperparameters this arm pins.
    pub fn apply(&self, hp: &mut Hyperparams) {
        match self {
            AblationPreset::Baseline => {
                hp.lambda = 1.0;
                hp.k = 0;
            }
            AblationPreset::NoPartNoCce => {
                hp.lambda_p = 0.0;
                hp.lambda_c = 0.0;
            }
            AblationPreset::NoPart => {
                hp.lambda_p = 0.0;
            }
            AblationPreset::Full => {}
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub ablation: AblationPreset,
    pub video: bool,
    pub generation: GenConfig,
    pub hyper: Hyperparams,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    ablation: Option<String>,
    video: Option<bool>,
    generation: Option<RawGen>,
    hyper: Option<RawHyper>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGen {
    num_identities: Option<usize>,
    images_per_identity: Option<usize>,
    num_cameras: Option<usize>,
    height: Option<usize>,
    channels: Option<usize>,
    raw_parts: Option<usize>,
    noise_sigma: Option<f64>,
    camera_shift_scale: Option<f64>,
    tracklet_len: Option<usize>,
    seed: Option<u64>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    tau: Option<f64>,
    lambda: Option<f64>,
    lambda_p: Option<f64>,
    lambda_c: Option<f64>,
    k: Option<usize>,
    parts: Option<usize>,
    hidden_dim: Option<usize>,
    embed_dim: Option<usize>,
    baseline_epochs: Option<usize>,
    finetune_epochs: Option<usize>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    lr_initial: Option<f64>,
    lr_final: Option<f64>,
    lr_switch_epoch: Option<usize>,
    sgd_momentum: Option<f64>,
    dropout: Option<f64>,
    memory_momentum: Option<f64>,
    seed: Option<u64>,
    dropout_in_finetune: Option<bool>,
    update_memory_in_baseline: Option<bool>,
    update_memory_in_finetune: Option<bool>,
    reextract_memory: Option<bool>,
    reinit_encoder: Option<bool>,
    normalized_parts: Option<bool>,
}

/// Baseline epochs depend on the mode when left unset: 25 image / 30 video.
const BASELINE_EPOCHS_VIDEO: usize = 30;

/// Command-line overrides applied before resolution, so that defaults that
/// depend on them (video-mode baseline epochs) resolve correctly.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverrides {
    pub video: Option<bool>,
    pub ablation: Option<String>,
    /// Sets both the generation and the training seed.
    pub seed: Option<u64>,
}

/// Parses and resolves a config from TOML text. An empty string yields the
/// full default configuration.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    parse_config_str_with(text, &ConfigOverrides::default())
}

pub fn parse_config_str_with(text: &str, overrides: &ConfigOverrides) -> Result<RunConfig> {
    let mut raw: RawConfig = toml::from_str(text)
        .map_err(|e| Error::InvalidConfig(format!("config parse error: {}", e)))?;
    if let Some(video) = overrides.video {
        raw.video = Some(video);
    }
    if let Some(ablation) = &overrides.ablation {
        raw.ablation = Some(ablation.clone());
    }
    if let Some(seed) = overrides.seed {
        raw.generation.get_or_insert_with(Default::default).seed = Some(seed);
        raw.hyper.get_or_insert_with(Default::default).seed = Some(seed);
    }
    resolve(raw)
}

/// Reads, parses, and resolves a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_file_with(Some(path), &ConfigOverrides::default())
}

/// `path = None` starts from the default (empty) configuration.
pub fn parse_config_file_with(
    path: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config '{}': {}", p.display(), e))
        })?,
        None => String::new(),
    };
    parse_config_str_with(&text, overrides)
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let video = raw.video.unwrap_or(false);
    let ablation = match raw.ablation {
        Some(s) => s.parse::<AblationPreset>()?,
        None => AblationPreset::Full,
    };

    let g = raw.generation.unwrap_or_default();
    let defaults = GenConfig::default();
    let generation = GenConfig {
        num_identities: g.num_identities.unwrap_or(defaults.num_identities),
        images_per_identity: g
            .images_per_identity
            .unwrap_or(defaults.images_per_identity),
        num_cameras: g.num_cameras.unwrap_or(defaults.num_cameras),
        height: g.height.unwrap_or(defaults.height),
        channels: g.channels.unwrap_or(defaults.channels),
        raw_parts: g.raw_parts.unwrap_or(defaults.raw_parts),
        noise_sigma: g.noise_sigma.unwrap_or(defaults.noise_sigma),
        camera_shift_scale: g.camera_shift_scale.unwrap_or(defaults.camera_shift_scale),
        video_mode: video,
        tracklet_len: g.tracklet_len.unwrap_or(defaults.tracklet_len),
        seed: g.seed.unwrap_or(defaults.seed),
    };

    let h = raw.hyper.unwrap_or_default();
    let hd = Hyperparams::default();
    let mut hyper = Hyperparams {
        tau: h.tau.unwrap_or(hd.tau),
        lambda: h.lambda.unwrap_or(hd.lambda),
        lambda_p: h.lambda_p.unwrap_or(hd.lambda_p),
        lambda_c: h.lambda_c.unwrap_or(hd.lambda_c),
        k: h.k.unwrap_or(hd.k),
        parts: h.parts.unwrap_or(hd.parts),
        hidden_dim: h.hidden_dim.unwrap_or(hd.hidden_dim),
        embed_dim: h.embed_dim.unwrap_or(hd.embed_dim),
        baseline_epochs: h.baseline_epochs.unwrap_or(if video {
            BASELINE_EPOCHS_VIDEO
        } else {
            hd.baseline_epochs
        }),
        finetune_epochs: h.finetune_epochs.unwrap_or(hd.finetune_epochs),
        iterations: h.iterations.unwrap_or(hd.iterations),
        batch_size: h.batch_size.unwrap_or(hd.batch_size),
        lr_initial: h.lr_initial.unwrap_or(hd.lr_initial),
        lr_final: h.lr_final.unwrap_or(hd.lr_final),
        lr_switch_epoch: h.lr_switch_epoch.unwrap_or(hd.lr_switch_epoch),
        sgd_momentum: h.sgd_momentum.unwrap_or(hd.sgd_momentum),
        dropout: h.dropout.unwrap_or(hd.dropout),
        memory_momentum: h.memory_momentum.unwrap_or(hd.memory_momentum),
        seed: h.seed.unwrap_or(hd.seed),
        dropout_in_finetune: h.dropout_in_finetune.unwrap_or(hd.dropout_in_finetune),
        update_memory_in_baseline: h
            .update_memory_in_baseline
            .unwrap_or(hd.update_memory_in_baseline),
        update_memory_in_finetune: h
            .update_memory_in_finetune
            .unwrap_or(hd.update_memory_in_finetune),
        reextract_memory: h.reextract_memory.unwrap_or(hd.reextract_memory),
        reinit_encoder: h.reinit_encoder.unwrap_or(hd.reinit_encoder),
        normalized_parts: h.normalized_parts.unwrap_or(hd.normalized_parts),
    };
    ablation.apply(&mut hyper);

    let cfg = RunConfig {
        ablation,
        video,
        generation,
        hyper,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.generation.validate()?;
    cfg.hyper.validate()?;
    if cfg.generation.height % cfg.hyper.parts != 0 {
        return Err(Error::InvalidConfig(format!(
            "hyper.parts: {} does not divide generation.height {}",
            cfg.hyper.parts, cfg.generation.height
        )));
    }
    Ok(())
}

/// The resolved config as TOML, every field explicit.
pub fn resolved_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Format(format!("cannot serialize config: {}", e)))
}
