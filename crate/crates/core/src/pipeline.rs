//! The iterative training pipeline.
//!
//! One run is: hard-label baseline training, then repeated cycles of
//! (extract features -> mine reliable sets -> fine-tune with softened
//! labels). Reliable sets are frozen within a cycle and recomputed at the
//! next boundary. All shuffles and dropout masks come from seed-derived
//! streams keyed by (phase, epoch), so a run restarted from any iteration
//! checkpoint replays the uninterrupted run bit for bit.

use rand::seq::SliceRandom;

use crate::encoder::{
    backward, forward, sgd_step, Embedding, EncoderParams, ForwardMode, Gradients,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, tracklet_feature, ItemMeta, RankingResult};
use crate::memory::LookupTable;
use crate::rng::stream;
use crate::similarity::{all_reliable_sets, DissimilarityConfig, ImageFeatures};
use crate::softloss::{build_target, loss_grad_embedding, soft_cross_entropy, TargetDistribution};
use crate::synthgen::{Dataset, SyntheticImage};

/// Every knob of the training procedure. Defaults follow the image-mode
/// recipe; video runs bump `baseline_epochs` to 30.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Hyperparams {
    pub tau: f64,
    pub lambda: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub k: usize,
    pub parts: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub baseline_epochs: usize,
    pub finetune_epochs: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_switch_epoch: usize,
    pub sgd_momentum: f64,
    pub dropout: f64,
    pub memory_momentum: f64,
    pub seed: u64,
    /// Keep dropout on during fine-tuning cycles.
    pub dropout_in_finetune: bool,
    pub update_memory_in_baseline: bool,
    pub update_memory_in_finetune: bool,
    /// Rebuild the lookup table from fresh features at each cycle boundary.
    pub reextract_memory: bool,
    /// Re-initialize the encoder at each cycle instead of continuing.
    pub reinit_encoder: bool,
    /// Compute part distances on unit-normalized stripe features.
    pub normalized_parts: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            tau: 0.1,
            lambda: 0.6,
            lambda_p: 0.5,
            lambda_c: 0.02,
            k: 4,
            parts: 8,
            hidden_dim: 32,
            embed_dim: 16,
            baseline_epochs: 25,
            finetune_epochs: 2,
            iterations: 15,
            batch_size: 16,
            lr_initial: 0.1,
            lr_final: 0.01,
            lr_switch_epoch: 15,
            sgd_momentum: 0.9,
            dropout: 0.5,
            memory_momentum: 0.5,
            seed: 7,
            dropout_in_finetune: true,
            update_memory_in_baseline: true,
            update_memory_in_finetune: true,
            reextract_memory: true,
            reinit_encoder: false,
            normalized_parts: true,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.into()))
            }
        };
        check(self.tau > 0.0 && self.tau.is_finite(), "hyper.tau: must be > 0")?;
        check(
            self.lambda > 0.0 && self.lambda <= 1.0,
            "hyper.lambda: must be in (0,1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.lambda_p),
            "hyper.lambda_p: must be in [0,1]",
        )?;
        check(
            self.lambda_c >= 0.0 && self.lambda_c.is_finite(),
            "hyper.lambda_c: must be finite and >= 0",
        )?;
        check(self.parts >= 1, "hyper.parts: must be >= 1")?;
        check(self.hidden_dim >= 1, "hyper.hidden_dim: must be >= 1")?;
        check(self.embed_dim >= 1, "hyper.embed_dim: must be >= 1")?;
        check(self.batch_size >= 1, "hyper.batch_size: must be >= 1")?;
        check(
            self.lr_initial > 0.0 && self.lr_initial.is_finite(),
            "hyper.lr_initial: must be > 0",
        )?;
        check(
            self.lr_final > 0.0 && self.lr_final.is_finite(),
            "hyper.lr_final: must be > 0",
        )?;
        check(
            (0.0..1.0).contains(&self.sgd_momentum),
            "hyper.sgd_momentum: must be in [0,1)",
        )?;
        check(
            (0.0..1.0).contains(&self.dropout),
            "hyper.dropout: must be in [0,1)",
        )?;
        check(
            (0.0..=1.0).contains(&self.memory_momentum),
            "hyper.memory_momentum: must be in [0,1]",
        )?;
        Ok(())
    }

    fn dissimilarity(&self) -> DissimilarityConfig {
        DissimilarityConfig {
            lambda_p: self.lambda_p,
            lambda_c: self.lambda_c,
            k: self.k,
        }
    }

    fn baseline_lr(&self, epoch: usize) -> f64 {
        if epoch < self.lr_switch_epoch {
            self.lr_initial
        } else {
            self.lr_final
        }
    }
}

/// Metrics after one pipeline stage; iteration 0 is the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub table: LookupTable,
    /// Completed fine-tuning cycles; 0 right after baseline training.
    pub iteration: usize,
    pub history: Vec<IterationMetrics>,
}

/// Training classes: one per image, or one per tracklet in video mode.
/// Returns (class of each train image, class count).
pub fn class_assignment(dataset: &Dataset) -> (Vec<usize>, usize) {
    if dataset.config.video_mode {
        let mut map = std::collections::BTreeMap::new();
        let mut classes = Vec::with_capacity(dataset.train.len());
        for img in &dataset.train {
            let tid = img.tracklet.expect("video dataset without tracklet ids");
            let next = map.len();
            let class = *map.entry(tid).or_insert(next);
            classes.push(class);
        }
        let n = map.len();
        (classes, n)
    } else {
        let n = dataset.train.len();
        ((0..n).collect(), n)
    }
}

/// Deterministic processing order of one epoch.
pub fn epoch_order(seed: u64, phase: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, "shuffle", phase, epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Eval-mode embedding of every training class: per-image features in image
/// mode, renormalized tracklet means in video mode. Part vectors follow
/// `hp.normalized_parts`.
pub fn extract_features(
    params: &EncoderParams,
    dataset: &Dataset,
    hp: &Hyperparams,
) -> Result<Vec<ImageFeatures>> {
    let (classes, n_classes) = class_assignment(dataset);
    let mut global_acc: Vec<Vec<f64>> = vec![Vec::new(); n_classes];
    let mut part_acc: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_classes];
    let mut cameras = vec![0u32; n_classes];
    let mut counts = vec![0usize; n_classes];

    for (img, &class) in dataset.train.iter().zip(&classes) {
        let (global, parts, cache) = forward(params, img, hp.parts, ForwardMode::Eval)?;
        let part_vectors = if hp.normalized_parts {
            parts.to_vectors()
        } else {
            cache.raw_parts().to_vec()
        };
        if counts[class] == 0 {
            global_acc[class] = global.as_slice().to_vec();
            part_acc[class] = part_vectors;
        } else {
            for (acc, x) in global_acc[class].iter_mut().zip(global.as_slice()) {
                *acc += x;
            }
            for (acc_p, p) in part_acc[class].iter_mut().zip(&part_vectors) {
                for (acc, x) in acc_p.iter_mut().zip(p) {
                    *acc += x;
                }
            }
        }
        cameras[class] = img.camera;
        counts[class] += 1;
    }

    let mut features = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let count = counts[class].max(1) as f64;
        let mean: Vec<f64> = global_acc[class].iter().map(|x| x / count).collect();
        let global = if counts[class] == 1 {
            mean
        } else {
            Embedding::normalize(&mean)?.into_vec()
        };
        let parts = part_acc[class]
            .iter()
            .map(|p| {
                let mean: Vec<f64> = p.iter().map(|x| x / count).collect();
                if counts[class] == 1 {
                    Ok(mean)
                } else if hp.normalized_parts {
                    Ok(Embedding::normalize(&mean)?.into_vec())
                } else {
                    Ok(mean)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        features.push(ImageFeatures {
            global,
            parts,
            camera: cameras[class],
        });
    }
    Ok(features)
}

fn table_from_features(features: &[ImageFeatures], hp: &Hyperparams) -> Result<LookupTable> {
    let embeddings = features
        .iter()
        .map(|f| Embedding::new(f.global.clone()))
        .collect::<Result<Vec<_>>>()?;
    LookupTable::init_from_features(&embeddings, hp.tau, hp.memory_momentum)
}

/// One-hot targets for the hard-label baseline phase.
fn baseline_targets(n_classes: usize) -> Result<Vec<TargetDistribution>> {
    (0..n_classes)
        .map(|i| build_target(i, &[], 1.0, n_classes))
        .collect()
}

/// Runs `epochs` epochs of batched SGD against fixed targets, updating the
/// memory after each optimizer step. Returns the mean loss of the last epoch.
///
/// Per batch: per-image gradients are accumulated in batch order, scaled by
/// 1/batch_len, applied with one SGD step, and then the memory rows of the
/// batch are refreshed with the embeddings from the forward passes, again in
/// batch order.
#[allow(clippy::too_many_arguments)]
fn train_epochs(
    params: &mut EncoderParams,
    table: &mut LookupTable,
    dataset: &Dataset,
    hp: &Hyperparams,
    targets: &[TargetDistribution],
    classes: &[usize],
    phase: u64,
    epochs: usize,
    lr_of_epoch: impl Fn(usize) -> f64,
    update_memory: bool,
    dropout_active: bool,
) -> Result<f64> {
    let n_images = dataset.train.len();
    let mut last_epoch_loss = 0.0;
    for epoch in 0..epochs {
        let order = epoch_order(hp.seed, phase, epoch, n_images);
        let mut dropout_rng = stream(hp.seed, "dropout", phase, epoch as u64);
        let lr = lr_of_epoch(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let mut batch_grads =
                Gradients::zeros(params.input_dim(), params.hidden_dim(), params.embed_dim());
            let mut batch_embeddings: Vec<(usize, Embedding)> = Vec::with_capacity(batch.len());
            for &img_idx in batch {
                let img = &dataset.train[img_idx];
                let mode = if dropout_active && params.dropout_rate > 0.0 {
                    ForwardMode::Train {
                        rng: &mut dropout_rng,
                    }
                } else {
                    ForwardMode::Eval
                };
                let (v, _parts, cache) = forward(params, img, hp.parts, mode)?;
                let class = classes[img_idx];
                let target = &targets[class];
                let probs = table.class_probabilities(&v);
                epoch_loss += soft_cross_entropy(&probs, target)?;
                let grad_v = loss_grad_embedding(table, &v, target);
                let grads = backward(params, &cache, &grad_v)?;
                batch_grads.add_scaled(&grads, 1.0);
                batch_embeddings.push((class, v));
            }
            batch_grads.scale(1.0 / batch.len() as f64);
            sgd_step(params, &batch_grads, lr, hp.sgd_momentum)?;
            if update_memory {
                for (class, v) in &batch_embeddings {
                    table.update_entry(*class, v)?;
                }
            }
        }
        last_epoch_loss = epoch_loss / n_images as f64;
        if std::env::var_os("SOFTSIM_TRACE").is_some() {
            eprintln!(
                "trace: phase {} epoch {} lr {} loss {:.4}",
                phase, epoch, lr, last_epoch_loss
            );
        }
    }
    Ok(last_epoch_loss)
}

/// Baseline phase: every class is its own one-hot target.
pub fn train_baseline(dataset: &Dataset, hp: &Hyperparams) -> Result<TrainState> {
    hp.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let (classes, n_classes) = class_assignment(dataset);
    let mut init_rng = stream(hp.seed, "encoder-init", 0, 0);
    let mut params = EncoderParams::init(
        dataset.config.channels,
        hp.hidden_dim,
        hp.embed_dim,
        hp.dropout,
        &mut init_rng,
    );
    let features = extract_features(&params, dataset, hp)?;
    let mut table = table_from_features(&features, hp)?;
    let targets = baseline_targets(n_classes)?;
    train_epochs(
        &mut params,
        &mut table,
        dataset,
        hp,
        &targets,
        &classes,
        0,
        hp.baseline_epochs,
        |e| hp.baseline_lr(e),
        hp.update_memory_in_baseline,
        true,
    )?;
    Ok(TrainState {
        params,
        table,
        iteration: 0,
        history: Vec::new(),
    })
}

/// The reliable sets and targets mined at one cycle boundary; exposed so
/// inspection tooling can dump exactly what training consumed.
pub struct MiningOutcome {
    pub features: Vec<ImageFeatures>,
    pub sets: Vec<crate::similarity::ReliableSet>,
    pub targets: Vec<TargetDistribution>,
}

/// Extracts features and mines reliable sets with the current encoder.
pub fn mine(state: &TrainState, dataset: &Dataset, hp: &Hyperparams) -> Result<MiningOutcome> {
    let features = extract_features(&state.params, dataset, hp)?;
    let sets = all_reliable_sets(&features, &hp.dissimilarity())?;
    let n = features.len();
    let targets = sets
        .iter()
        .map(|s| build_target(s.anchor, &s.neighbor_indices(), hp.lambda, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(MiningOutcome {
        features,
        sets,
        targets,
    })
}

/// One cycle: extract, mine, re-train with softened labels.
pub fn run_iteration(state: &mut TrainState, dataset: &Dataset, hp: &Hyperparams) -> Result<()> {
    let t = state.iteration + 1;
    if hp.reinit_encoder {
        let mut rng = stream(hp.seed, "encoder-init", t as u64, 0);
        state.params = EncoderParams::init(
            dataset.config.channels,
            hp.hidden_dim,
            hp.embed_dim,
            hp.dropout,
            &mut rng,
        );
    }
    let outcome = mine(state, dataset, hp)?;
    if hp.reextract_memory {
        state.table = table_from_features(&outcome.features, hp)?;
    }
    let (classes, _) = class_assignment(dataset);
    train_epochs(
        &mut state.params,
        &mut state.table,
        dataset,
        hp,
        &outcome.targets,
        &classes,
        t as u64,
        hp.finetune_epochs,
        |_| hp.lr_final,
        hp.update_memory_in_finetune,
        hp.dropout_in_finetune,
    )?;
    state.iteration = t;
    Ok(())
}

/// Evaluates the current encoder on the query/gallery split.
pub fn evaluate(params: &EncoderParams, dataset: &Dataset) -> Result<RankingResult> {
    let (q_embs, q_meta) = split_features(params, &dataset.query, dataset.config.video_mode)?;
    let (g_embs, g_meta) = split_features(params, &dataset.gallery, dataset.config.video_mode)?;
    compute_metrics(&q_embs, &q_meta, &g_embs, &g_meta)
}

/// Embeds one evaluation split; video mode averages frames per tracklet.
fn split_features(
    params: &EncoderParams,
    images: &[SyntheticImage],
    video_mode: bool,
) -> Result<(Vec<Vec<f64>>, Vec<ItemMeta>)> {
    if video_mode {
        let mut groups: std::collections::BTreeMap<u32, (Vec<Embedding>, ItemMeta)> =
            Default::default();
        for img in images {
            let tid = img
                .tracklet
                .ok_or_else(|| Error::Eval("video split without tracklet ids".into()))?;
            let (v, _, _) = forward(params, img, 1, ForwardMode::Eval)?;
            groups
                .entry(tid)
                .or_insert_with(|| {
                    (
                        Vec::new(),
                        ItemMeta {
                            identity: img.identity,
                            camera: img.camera,
                        },
                    )
                })
                .0
                .push(v);
        }
        let mut embs = Vec::with_capacity(groups.len());
        let mut meta = Vec::with_capacity(groups.len());
        for (_tid, (frames, m)) in groups {
            embs.push(tracklet_feature(&frames)?.into_vec());
            meta.push(m);
        }
        Ok((embs, meta))
    } else {
        let mut embs = Vec::with_capacity(images.len());
        let mut meta = Vec::with_capacity(images.len());
        for img in images {
            let (v, _, _) = forward(params, img, 1, ForwardMode::Eval)?;
            embs.push(v.into_vec());
            meta.push(ItemMeta {
                identity: img.identity,
                camera: img.camera,
            });
        }
        Ok((embs, meta))
    }
}

fn metrics_entry(iteration: usize, r: &RankingResult) -> IterationMetrics {
    IterationMetrics {
        iteration,
        rank1: r.rank1,
        rank5: r.rank5,
        rank10: r.rank10,
        map: r.map,
    }
}

/// Full run: baseline, then `hp.iterations` cycles, evaluating after each
/// stage. `on_stage` fires after every history append (checkpoint hook).
pub fn run_with_hook(
    dataset: &Dataset,
    hp: &Hyperparams,
    mut on_stage: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    let mut state = train_baseline(dataset, hp)?;
    let metrics = metrics_entry(0, &evaluate(&state.params, dataset)?);
    state.history.push(metrics);
    on_stage(&state)?;
    continue_run_with_hook(dataset, hp, state, on_stage)
}

/// Continues a run from a loaded state until `hp.iterations` cycles done.
pub fn continue_run_with_hook(
    dataset: &Dataset,
    hp: &Hyperparams,
    mut state: TrainState,
    mut on_stage: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    while state.iteration < hp.iterations {
        run_iteration(&mut state, dataset, hp)?;
        let metrics = metrics_entry(state.iteration, &evaluate(&state.params, dataset)?);
        state.history.push(metrics);
        on_stage(&state)?;
    }
    Ok(state)
}

/// Full run without a checkpoint hook.
pub fn run(dataset: &Dataset, hp: &Hyperparams) -> Result<TrainState> {
    run_with_hook(dataset, hp, |_| Ok(()))
}
