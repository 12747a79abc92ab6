//! Dev probe: prints per-iteration metrics and mining quality for a config.
//! Usage: probe [key=value ...], e.g.
//!   probe seed=7 sigma=0.02 shift=0.45 ipi=5 dropout=0.5 iters=15

use softsim_core::mat::l2_distance;
use softsim_core::pipeline::{
    evaluate, extract_features, mine, run_iteration, train_baseline, Hyperparams,
};
use softsim_core::similarity::cross_camera_fraction;
use softsim_core::synthgen::{generate_dataset, GenConfig};

fn arg(key: &str, default: f64) -> f64 {
    std::env::args()
        .find_map(|a| {
            a.strip_prefix(&format!("{}=", key))
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(default)
}

fn main() {
    let seed = arg("seed", 7.0) as u64;
    let gen = GenConfig {
        seed,
        images_per_identity: arg("ipi", GenConfig::default().images_per_identity as f64) as usize,
        noise_sigma: arg("sigma", GenConfig::default().noise_sigma),
        camera_shift_scale: arg("shift", GenConfig::default().camera_shift_scale),
        ..GenConfig::default()
    };
    let hp = Hyperparams {
        seed,
        dropout: arg("dropout", Hyperparams::default().dropout),
        memory_momentum: arg("mu", Hyperparams::default().memory_momentum),
        k: arg("k", Hyperparams::default().k as f64) as usize,
        lambda: arg("lambda", Hyperparams::default().lambda),
        lambda_c: arg("lambda_c", Hyperparams::default().lambda_c),
        lambda_p: arg("lambda_p", Hyperparams::default().lambda_p),
        iterations: arg("iters", Hyperparams::default().iterations as f64) as usize,
        finetune_epochs: arg("fte", Hyperparams::default().finetune_epochs as f64) as usize,
        hidden_dim: arg("hidden", Hyperparams::default().hidden_dim as f64) as usize,
        embed_dim: arg("embed", Hyperparams::default().embed_dim as f64) as usize,
        ..Hyperparams::default()
    };
    let t0 = std::time::Instant::now();
    let ds = generate_dataset(&gen).unwrap();
    println!(
        "dataset: {} train / {} query / {} gallery  (sigma={} shift={} ipi={})",
        ds.train.len(),
        ds.query.len(),
        ds.gallery.len(),
        gen.noise_sigma,
        gen.camera_shift_scale,
        gen.images_per_identity
    );
    raw_pixel_eval(&ds);
    init_encoder_eval(&ds, &hp);
    let mut state = train_baseline(&ds, &hp).unwrap();
    let m = evaluate(&state.params, &ds).unwrap();
    println!(
        "baseline: rank1={:.3} rank5={:.3} map={:.3}  ({:?})",
        m.rank1,
        m.rank5,
        m.map,
        t0.elapsed()
    );
    report_mining(&state, &ds, &hp);
    for t in 1..=hp.iterations {
        run_iteration(&mut state, &ds, &hp).unwrap();
        let m = evaluate(&state.params, &ds).unwrap();
        let outcome = mine(&state, &ds, &hp).unwrap();
        let (precision, cross) = mining_stats(&outcome, &ds);
        println!(
            "iter {:2}: rank1={:.3} rank5={:.3} map={:.3}  wid={:.4} prec={:.3} cross={:.3} ({:?})",
            t,
            m.rank1,
            m.rank5,
            m.map,
            within_identity(&state, &ds, &hp),
            precision,
            cross,
            t0.elapsed()
        );
    }
}

fn mining_stats(
    outcome: &softsim_core::pipeline::MiningOutcome,
    ds: &softsim_core::synthgen::Dataset,
) -> (f64, f64) {
    let mut correct = 0usize;
    let mut total = 0usize;
    for set in &outcome.sets {
        for nb in &set.neighbors {
            total += 1;
            if ds.train[nb.index].identity == ds.train[set.anchor].identity {
                correct += 1;
            }
        }
    }
    (
        correct as f64 / total.max(1) as f64,
        cross_camera_fraction(&outcome.sets, &outcome.features),
    )
}

fn report_mining(
    state: &softsim_core::pipeline::TrainState,
    ds: &softsim_core::synthgen::Dataset,
    hp: &Hyperparams,
) {
    let outcome = mine(state, ds, hp).unwrap();
    let (precision, cross) = mining_stats(&outcome, ds);
    println!(
        "mining: precision={:.3} cross_camera_fraction={:.3} wid={:.4}",
        precision,
        cross,
        within_identity(state, ds, hp)
    );
}

fn raw_pixel_eval(ds: &softsim_core::synthgen::Dataset) {
    use softsim_core::eval::{compute_metrics, ItemMeta};
    // full grid, unnormalized: the ceiling of pixel-metric matching
    let flat = |img: &softsim_core::synthgen::SyntheticImage| -> Vec<f64> {
        img.pixels.data().to_vec()
    };
    let q: Vec<Vec<f64>> = ds.query.iter().map(&flat).collect();
    let qm: Vec<ItemMeta> = ds
        .query
        .iter()
        .map(|i| ItemMeta {
            identity: i.identity,
            camera: i.camera,
        })
        .collect();
    let g: Vec<Vec<f64>> = ds.gallery.iter().map(&flat).collect();
    let gm: Vec<ItemMeta> = ds
        .gallery
        .iter()
        .map(|i| ItemMeta {
            identity: i.identity,
            camera: i.camera,
        })
        .collect();
    let res = compute_metrics(&q, &qm, &g, &gm).unwrap();
    println!(
        "raw-grid pixels: rank1={:.3} rank5={:.3} map={:.3}",
        res.rank1, res.rank5, res.map
    );
    let embed = |img: &softsim_core::synthgen::SyntheticImage| -> Vec<f64> {
        let m = img.pixels.cols();
        let mut mean = vec![0.0; m];
        for r in 0..img.pixels.rows() {
            for (acc, x) in mean.iter_mut().zip(img.pixels.row(r)) {
                *acc += x;
            }
        }
        let n = softsim_core::mat::l2_norm(&mean);
        mean.iter().map(|x| x / n).collect()
    };
    let q: Vec<Vec<f64>> = ds.query.iter().map(&embed).collect();
    let qm: Vec<ItemMeta> = ds
        .query
        .iter()
        .map(|i| ItemMeta {
            identity: i.identity,
            camera: i.camera,
        })
        .collect();
    let g: Vec<Vec<f64>> = ds.gallery.iter().map(&embed).collect();
    let gm: Vec<ItemMeta> = ds
        .gallery
        .iter()
        .map(|i| ItemMeta {
            identity: i.identity,
            camera: i.camera,
        })
        .collect();
    let res = compute_metrics(&q, &qm, &g, &gm).unwrap();
    println!(
        "raw-pixel mean: rank1={:.3} rank5={:.3} map={:.3}",
        res.rank1, res.rank5, res.map
    );
}

fn init_encoder_eval(ds: &softsim_core::synthgen::Dataset, hp: &Hyperparams) {
    use softsim_core::encoder::EncoderParams;
    use softsim_core::rng::stream;
    let mut rng = stream(hp.seed, "encoder-init", 0, 0);
    let params = EncoderParams::init(
        ds.config.channels,
        hp.hidden_dim,
        hp.embed_dim,
        hp.dropout,
        &mut rng,
    );
    let m = evaluate(&params, ds).unwrap();
    println!(
        "init encoder: rank1={:.3} rank5={:.3} map={:.3}",
        m.rank1, m.rank5, m.map
    );
}

fn within_identity(
    state: &softsim_core::pipeline::TrainState,
    ds: &softsim_core::synthgen::Dataset,
    hp: &Hyperparams,
) -> f64 {
    let feats = extract_features(&state.params, ds, hp).unwrap();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, a) in ds.train.iter().enumerate() {
        for (j, b) in ds.train.iter().enumerate().skip(i + 1) {
            if a.identity == b.identity {
                sum += l2_distance(&feats[i].global, &feats[j].global);
                count += 1;
            }
        }
    }
    sum / count as f64
}
