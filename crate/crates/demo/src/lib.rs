//! Browser demo: a small softened-similarity run you can poke at.
//!
//! Three interactive operations, all JSON-in/JSON-out so the page stays
//! plain JavaScript:
//!   1. dataset generation and rendering (`dataset_json`),
//!   2. reliable-neighbor mining with adjustable lambda_p / lambda_c / k
//!      (`mine_neighbors`),
//!   3. stepwise training with a metrics curve (`train_baseline`,
//!      `run_iteration`).
//!
//! The same struct works natively, which is how the tests drive it.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use softsim_core::pipeline::{
    evaluate, extract_features, run_iteration, train_baseline, Hyperparams, TrainState,
};
use softsim_core::similarity::{all_reliable_sets, cross_camera_fraction, DissimilarityConfig};
use softsim_core::synthgen::{generate_dataset, Dataset, GenConfig};

/// Demo-sized defaults: small enough for sub-second browser steps.
fn demo_gen(seed: u64, num_identities: usize, camera_shift: f64, noise: f64) -> GenConfig {
    GenConfig {
        num_identities,
        images_per_identity: 5,
        num_cameras: 4,
        noise_sigma: noise,
        camera_shift_scale: camera_shift,
        seed,
        ..GenConfig::default()
    }
}

fn demo_hyper(seed: u64) -> Hyperparams {
    Hyperparams {
        seed,
        iterations: 30,
        ..Hyperparams::default()
    }
}

#[derive(Serialize)]
struct ImageJson {
    index: usize,
    identity: u32,
    camera: u32,
    split: &'static str,
    /// Row-major H x m grid.
    pixels: Vec<f64>,
    height: usize,
    channels: usize,
}

#[derive(Serialize)]
struct DatasetJson {
    images: Vec<ImageJson>,
    num_identities: usize,
    num_cameras: usize,
    pixel_min: f64,
    pixel_max: f64,
}

#[derive(Serialize)]
struct NeighborJson {
    index: usize,
    identity: u32,
    camera: u32,
    d_global: f64,
    d_part: f64,
    cce: f64,
    d_overall: f64,
    same_identity: bool,
    cross_camera: bool,
}

#[derive(Serialize)]
struct MiningJson {
    anchor: usize,
    anchor_identity: u32,
    anchor_camera: u32,
    neighbors: Vec<NeighborJson>,
    precision: f64,
    cross_camera_fraction: f64,
}

#[derive(Serialize)]
struct MetricsJson {
    iteration: usize,
    rank1: f64,
    rank5: f64,
    rank10: f64,
    map: f64,
}

#[wasm_bindgen]
pub struct Demo {
    dataset: Dataset,
    hyper: Hyperparams,
    state: Option<TrainState>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a fresh demo dataset. Training state resets.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, num_identities: usize, camera_shift: f64, noise: f64) -> Result<Demo, JsError> {
        let gen = demo_gen(seed, num_identities.clamp(4, 40), camera_shift, noise);
        let dataset = generate_dataset(&gen).map_err(to_js)?;
        Ok(Demo {
            dataset,
            hyper: demo_hyper(seed),
            state: None,
        })
    }

    /// All training images plus the query/gallery split, for canvas heatmaps.
    pub fn dataset_json(&self) -> String {
        let mut images = Vec::new();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut push = |imgs: &[softsim_core::synthgen::SyntheticImage], split: &'static str,
                        images: &mut Vec<ImageJson>| {
            for (i, img) in imgs.iter().enumerate() {
                images.push(ImageJson {
                    index: i,
                    identity: img.identity,
                    camera: img.camera,
                    split,
                    pixels: img.pixels.data().to_vec(),
                    height: img.pixels.rows(),
                    channels: img.pixels.cols(),
                });
            }
        };
        push(&self.dataset.train, "train", &mut images);
        push(&self.dataset.query, "query", &mut images);
        push(&self.dataset.gallery, "gallery", &mut images);
        for img in &images {
            for &p in &img.pixels {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        let payload = DatasetJson {
            images,
            num_identities: self.dataset.config.num_identities,
            num_cameras: self.dataset.config.num_cameras,
            pixel_min: lo,
            pixel_max: hi,
        };
        serde_json::to_string(&payload).expect("serializable payload")
    }

    /// Trains the hard-label baseline and returns its metrics entry.
    pub fn train_baseline(&mut self) -> Result<String, JsError> {
        let mut state = train_baseline(&self.dataset, &self.hyper).map_err(to_js)?;
        let m = evaluate(&state.params, &self.dataset).map_err(to_js)?;
        state.history.push(softsim_core::pipeline::IterationMetrics {
            iteration: 0,
            rank1: m.rank1,
            rank5: m.rank5,
            rank10: m.rank10,
            map: m.map,
        });
        let json = metrics_json(state.history.last().unwrap());
        self.state = Some(state);
        Ok(json)
    }

    /// One mine-and-retrain cycle; returns the new metrics entry.
    pub fn run_iteration(&mut self) -> Result<String, JsError> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| JsError::new("train the baseline first"))?;
        run_iteration(state, &self.dataset, &self.hyper).map_err(to_js)?;
        let m = evaluate(&state.params, &self.dataset).map_err(to_js)?;
        let entry = softsim_core::pipeline::IterationMetrics {
            iteration: state.iteration,
            rank1: m.rank1,
            rank5: m.rank5,
            rank10: m.rank10,
            map: m.map,
        };
        state.history.push(entry);
        Ok(metrics_json(&entry))
    }

    /// Full metrics history so far.
    pub fn history_json(&self) -> String {
        let entries: Vec<MetricsJson> = self
            .state
            .as_ref()
            .map(|s| s.history.iter().map(|m| metrics_entry(m)).collect())
            .unwrap_or_default();
        serde_json::to_string(&entries).expect("serializable payload")
    }

    /// Reliable neighbors of one training image under the given dissimilarity
    /// settings, with ground-truth annotations for coloring.
    pub fn mine_neighbors(
        &self,
        anchor: usize,
        k: usize,
        lambda_p: f64,
        lambda_c: f64,
    ) -> Result<String, JsError> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| JsError::new("train the baseline first"))?;
        let features = extract_features(&state.params, &self.dataset, &self.hyper).map_err(to_js)?;
        if anchor >= features.len() {
            return Err(JsError::new("anchor out of range"));
        }
        let cfg = DissimilarityConfig {
            lambda_p,
            lambda_c,
            k,
        };
        let sets = all_reliable_sets(&features, &cfg).map_err(to_js)?;
        let anchor_img = &self.dataset.train[anchor];
        let mut correct = 0usize;
        let set = &sets[anchor];
        let neighbors: Vec<NeighborJson> = set
            .neighbors
            .iter()
            .map(|nb| {
                let img = &self.dataset.train[nb.index];
                if img.identity == anchor_img.identity {
                    correct += 1;
                }
                NeighborJson {
                    index: nb.index,
                    identity: img.identity,
                    camera: img.camera,
                    d_global: nb.global_distance,
                    d_part: nb.part_distance,
                    cce: nb.cce,
                    d_overall: nb.dissimilarity,
                    same_identity: img.identity == anchor_img.identity,
                    cross_camera: img.camera != anchor_img.camera,
                }
            })
            .collect();
        let payload = MiningJson {
            anchor,
            anchor_identity: anchor_img.identity,
            anchor_camera: anchor_img.camera,
            precision: if neighbors.is_empty() {
                0.0
            } else {
                correct as f64 / neighbors.len() as f64
            },
            cross_camera_fraction: cross_camera_fraction(&sets, &features),
            neighbors,
        };
        serde_json::to_string(&payload).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn train_size(&self) -> usize {
        self.dataset.train.len()
    }

    pub fn iterations_done(&self) -> usize {
        self.state.as_ref().map(|s| s.iteration).unwrap_or(0)
    }
}

fn metrics_entry(m: &softsim_core::pipeline::IterationMetrics) -> MetricsJson {
    MetricsJson {
        iteration: m.iteration,
        rank1: m.rank1,
        rank5: m.rank5,
        rank10: m.rank10,
        map: m.map,
    }
}

fn metrics_json(m: &softsim_core::pipeline::IterationMetrics) -> String {
    serde_json::to_string(&metrics_entry(m)).expect("serializable payload")
}

fn to_js(e: softsim_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_flow_works_natively() {
        let mut demo = Demo::new(7, 8, 0.25, 0.02).unwrap();
        assert_eq!(demo.train_size(), 40);
        let ds: serde_json::Value = serde_json::from_str(&demo.dataset_json()).unwrap();
        assert_eq!(ds["images"].as_array().unwrap().len(), 40 + 8 + 32);
        assert!(ds["pixel_max"].as_f64().unwrap() > ds["pixel_min"].as_f64().unwrap());

        let baseline: serde_json::Value =
            serde_json::from_str(&demo.train_baseline().unwrap()).unwrap();
        assert_eq!(baseline["iteration"], 0);
        let r1_baseline = baseline["rank1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r1_baseline));

        let it: serde_json::Value = serde_json::from_str(&demo.run_iteration().unwrap()).unwrap();
        assert_eq!(it["iteration"], 1);
        let history: serde_json::Value = serde_json::from_str(&demo.history_json()).unwrap();
        assert_eq!(history.as_array().unwrap().len(), 2);
    }

    #[test]
    fn mining_payload_reacts_to_lambda_c() {
        let mut demo = Demo::new(7, 8, 0.25, 0.02).unwrap();
        demo.train_baseline().unwrap();
        let with: serde_json::Value =
            serde_json::from_str(&demo.mine_neighbors(0, 4, 0.5, 0.02).unwrap()).unwrap();
        let without: serde_json::Value =
            serde_json::from_str(&demo.mine_neighbors(0, 4, 0.5, 0.0).unwrap()).unwrap();
        assert_eq!(with["neighbors"].as_array().unwrap().len(), 4);
        let f_with = with["cross_camera_fraction"].as_f64().unwrap();
        let f_without = without["cross_camera_fraction"].as_f64().unwrap();
        assert!(f_with >= f_without);
        // same-camera pairs carry the cce surcharge
        for nb in with["neighbors"].as_array().unwrap() {
            let cce = nb["cce"].as_f64().unwrap();
            if nb["cross_camera"].as_bool().unwrap() {
                assert_eq!(cce, 0.0);
            } else {
                assert_eq!(cce, 0.02);
            }
        }
    }

    #[test]
    fn mining_before_training_is_an_error() {
        let demo = Demo::new(7, 6, 0.25, 0.02).unwrap();
        assert!(demo.mine_neighbors(0, 4, 0.5, 0.02).is_err());
    }
}
