//! Deterministic synthetic multi-camera identity data.
//!
//! Images are H x m numeric grids: each identity owns one latent appearance
//! vector per vertical body segment, repeated over the segment's rows. A
//! camera applies a per-channel affine shift (multiplicative gain plus bias)
//! and Gaussian pixel noise. Identities are drawn around shared per-segment
//! base vectors, so different people look alike under one camera while the
//! same person drifts apart across cameras — the regime where cross-camera
//! encouragement and part distances have observable effect.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{l2_distance, Mat};
use crate::rng::stream;

/// Spread of identity signatures around the shared per-segment base vector.
/// Small relative to the base norm: same-camera lookalikes stay plausible.
const IDENTITY_SPREAD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of training identities. An equal number of held-out identities
    /// is generated for the query/gallery split.
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub num_cameras: usize,
    /// Grid height H; must be a positive multiple of `raw_parts`.
    pub height: usize,
    /// Channels per row (m).
    pub channels: usize,
    /// Latent vertical segments per identity (P_raw).
    pub raw_parts: usize,
    pub noise_sigma: f64,
    /// Strength of the per-camera affine shift; 0 disables camera effects.
    pub camera_shift_scale: f64,
    /// Set from the run-level `video` flag, not a config key of its own.
    #[serde(skip)]
    pub video_mode: bool,
    /// Frames per tracklet in video mode.
    pub tracklet_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_identities: 50,
            images_per_identity: 5,
            num_cameras: 6,
            height: 32,
            channels: 8,
            raw_parts: 4,
            noise_sigma: 0.02,
            camera_shift_scale: 0.25,
            video_mode: false,
            tracklet_len: 4,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 1 {
            return Err(Error::InvalidConfig(
                "generation.num_identities: must be >= 1".into(),
            ));
        }
        if self.images_per_identity < 2 {
            return Err(Error::InvalidConfig(
                "generation.images_per_identity: must be >= 2 so each identity spans two cameras"
                    .into(),
            ));
        }
        if self.num_cameras < 2 {
            return Err(Error::InvalidConfig(
                "generation.num_cameras: must be >= 2".into(),
            ));
        }
        if self.height < 1 || self.raw_parts < 1 || self.height % self.raw_parts != 0 {
            return Err(Error::InvalidConfig(format!(
                "generation.height: {} must be a positive multiple of raw_parts {}",
                self.height, self.raw_parts
            )));
        }
        if self.channels < 1 {
            return Err(Error::InvalidConfig(
                "generation.channels: must be >= 1".into(),
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(
                "generation.noise_sigma: must be finite and >= 0".into(),
            ));
        }
        if self.camera_shift_scale < 0.0 || !self.camera_shift_scale.is_finite() {
            return Err(Error::InvalidConfig(
                "generation.camera_shift_scale: must be finite and >= 0".into(),
            ));
        }
        if self.video_mode && self.tracklet_len < 1 {
            return Err(Error::InvalidConfig(
                "generation.tracklet_len: must be >= 1 in video mode".into(),
            ));
        }
        Ok(())
    }
}

/// One latent person: a per-segment appearance vector.
#[derive(Clone, Debug)]
pub struct IdentitySpec {
    pub id: u32,
    /// `raw_parts` vectors of dimension `channels`.
    pub part_signatures: Vec<Vec<f64>>,
}

/// Per-camera affine channel shift plus noise level.
#[derive(Clone, Debug)]
pub struct CameraModel {
    pub camera_id: u32,
    pub channel_gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticImage {
    /// H x m grid.
    pub pixels: Mat,
    /// Ground-truth identity; consumed only by evaluation.
    pub identity: u32,
    pub camera: u32,
    pub tracklet: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<SyntheticImage>,
    pub query: Vec<SyntheticImage>,
    pub gallery: Vec<SyntheticImage>,
    pub config: GenConfig,
}

impl Dataset {
    pub fn num_cameras(&self) -> usize {
        self.config.num_cameras
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

/// Renders one image: each segment signature is repeated over its rows, then
/// gain, bias, and Gaussian noise are applied per channel.
pub fn render_image(
    identity: &IdentitySpec,
    camera: &CameraModel,
    height: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticImage> {
    let raw_parts = identity.part_signatures.len();
    if raw_parts == 0 || height % raw_parts != 0 {
        return Err(Error::DimensionMismatch(format!(
            "height {} is not a multiple of the {} part signatures",
            height, raw_parts
        )));
    }
    let channels = identity.part_signatures[0].len();
    if camera.channel_gain.len() != channels || camera.bias.len() != channels {
        return Err(Error::DimensionMismatch(format!(
            "camera has {} channels, identity has {}",
            camera.channel_gain.len(),
            channels
        )));
    }
    let rows_per_part = height / raw_parts;
    let mut pixels = Mat::zeros(height, channels);
    for r in 0..height {
        let sig = &identity.part_signatures[r / rows_per_part];
        let row = pixels.row_mut(r);
        for j in 0..channels {
            let noise: f64 = if camera.noise_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                camera.noise_sigma * n
            } else {
                0.0
            };
            row[j] = sig[j] * camera.channel_gain[j] + camera.bias[j] + noise;
        }
    }
    Ok(SyntheticImage {
        pixels,
        identity: identity.id,
        camera: camera.camera_id,
        tracklet: None,
    })
}

fn sample_identity(id: u32, bases: &[Vec<f64>], rng: &mut ChaCha8Rng) -> IdentitySpec {
    let part_signatures = bases
        .iter()
        .map(|base| {
            base.iter()
                .map(|&b| {
                    let e: f64 = rng.sample(StandardNormal);
                    b + IDENTITY_SPREAD * e
                })
                .collect()
        })
        .collect();
    IdentitySpec {
        id,
        part_signatures,
    }
}

fn sample_camera(camera_id: u32, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> CameraModel {
    let shift = cfg.camera_shift_scale;
    let channel_gain = (0..cfg.channels)
        .map(|_| (shift * rng.random_range(-1.0..1.0)).exp())
        .collect();
    let bias = (0..cfg.channels)
        .map(|_| shift * rng.random_range(-1.0..1.0))
        .collect();
    CameraModel {
        camera_id,
        channel_gain,
        bias,
        noise_sigma: cfg.noise_sigma,
    }
}

/// Cameras an identity appears under: 2..=4 distinct ones, capped by the
/// camera count and the image count, assigned round-robin.
fn choose_cameras(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let cap = cfg.num_cameras.min(cfg.images_per_identity).min(4);
    let n_cams = if cap <= 2 { cap } else { rng.random_range(2..=cap) };
    let mut order: Vec<usize> = (0..cfg.num_cameras).collect();
    order.shuffle(rng);
    order.truncate(n_cams);
    order
}

/// Generates the full train/query/gallery dataset. Deterministic in the seed.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, "synthgen", 0, 0);

    // Shared per-segment bases; identities are local perturbations of these.
    let bases: Vec<Vec<f64>> = (0..cfg.raw_parts)
        .map(|_| {
            (0..cfg.channels)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let cameras: Vec<CameraModel> = (0..cfg.num_cameras)
        .map(|c| sample_camera(c as u32, cfg, &mut rng))
        .collect();

    let total_identities = 2 * cfg.num_identities;
    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    let mut next_tracklet: u32 = 0;

    for id in 0..total_identities {
        let spec = sample_identity(id as u32, &bases, &mut rng);
        let cams = choose_cameras(cfg, &mut rng);
        let is_train = id < cfg.num_identities;
        for slot in 0..cfg.images_per_identity {
            let camera = &cameras[cams[slot % cams.len()]];
            if cfg.video_mode {
                let tid = next_tracklet;
                next_tracklet += 1;
                for _ in 0..cfg.tracklet_len {
                    let mut img = render_image(&spec, camera, cfg.height, &mut rng)?;
                    img.tracklet = Some(tid);
                    push_split(&mut train, &mut query, &mut gallery, img, is_train, slot);
                }
            } else {
                let img = render_image(&spec, camera, cfg.height, &mut rng)?;
                push_split(&mut train, &mut query, &mut gallery, img, is_train, slot);
            }
        }
    }

    Ok(Dataset {
        train,
        query,
        gallery,
        config: cfg.clone(),
    })
}

fn push_split(
    train: &mut Vec<SyntheticImage>,
    query: &mut Vec<SyntheticImage>,
    gallery: &mut Vec<SyntheticImage>,
    img: SyntheticImage,
    is_train: bool,
    slot: usize,
) {
    if is_train {
        train.push(img);
    } else if slot == 0 {
        query.push(img);
    } else {
        gallery.push(img);
    }
}

/// Euclidean distance between two pixel grids.
pub fn grid_distance(a: &SyntheticImage, b: &SyntheticImage) -> f64 {
    l2_distance(a.pixels.data(), b.pixels.data())
}
