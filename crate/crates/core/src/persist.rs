//! Dataset and checkpoint files.
//!
//! Both formats are line-oriented text with a leading magic string. Floats
//! are written with Rust's shortest round-trip formatting, so a write/read
//! cycle reproduces every f64 bit for bit. Keys appear in a fixed order and
//! readers consume them in that order; any mismatch is a format error.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::{EncoderParams, Gradients};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::memory::LookupTable;
use crate::pipeline::{Hyperparams, IterationMetrics, TrainState};
use crate::synthgen::{Dataset, GenConfig, SyntheticImage};

pub const DATASET_MAGIC: &str = "SOFTSIM-DS-1";
pub const CHECKPOINT_MAGIC: &str = "SOFTSIM-CKPT-1";

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines(),
            line_no: 0,
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Format(format!("unexpected end of file at line {}", self.line_no)))
    }

    fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected key=value", self.line_no)))?;
        if k != key {
            return Err(Error::Format(format!(
                "line {}: expected key '{}', found '{}'",
                self.line_no, key, k
            )));
        }
        Ok(v)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.expect_key(key)?;
        v.parse::<T>()
            .map_err(|_| Error::Format(format!("line {}: cannot parse value for '{}'", self.line_no, key)))
    }

    fn floats(&mut self, key: &str, expect_len: usize) -> Result<Vec<f64>> {
        let v = self.expect_key(key)?;
        let out = parse_float_row(v, self.line_no)?;
        if out.len() != expect_len {
            return Err(Error::Format(format!(
                "line {}: '{}' has {} values, expected {}",
                self.line_no,
                key,
                out.len(),
                expect_len
            )));
        }
        Ok(out)
    }
}

fn parse_float_row(s: &str, line_no: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad float '{}'", line_no, tok)))
        })
        .collect()
}

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}", v);
    }
    out.push('\n');
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

pub fn dataset_to_string(ds: &Dataset) -> String {
    let cfg = &ds.config;
    let mut out = String::new();
    let _ = writeln!(out, "{}", DATASET_MAGIC);
    let _ = writeln!(out, "num_identities={}", cfg.num_identities);
    let _ = writeln!(out, "images_per_identity={}", cfg.images_per_identity);
    let _ = writeln!(out, "num_cameras={}", cfg.num_cameras);
    let _ = writeln!(out, "height={}", cfg.height);
    let _ = writeln!(out, "channels={}", cfg.channels);
    let _ = writeln!(out, "raw_parts={}", cfg.raw_parts);
    let _ = writeln!(out, "noise_sigma={}", cfg.noise_sigma);
    let _ = writeln!(out, "camera_shift_scale={}", cfg.camera_shift_scale);
    let _ = writeln!(out, "video_mode={}", cfg.video_mode);
    let _ = writeln!(out, "tracklet_len={}", cfg.tracklet_len);
    let _ = writeln!(out, "seed={}", cfg.seed);
    let _ = writeln!(out, "train={}", ds.train.len());
    let _ = writeln!(out, "query={}", ds.query.len());
    let _ = writeln!(out, "gallery={}", ds.gallery.len());
    for img in ds.train.iter().chain(&ds.query).chain(&ds.gallery) {
        let tracklet = img.tracklet.map(|t| t as i64).unwrap_or(-1);
        let _ = writeln!(out, "{} {} {}", img.identity, img.camera, tracklet);
        for r in 0..img.pixels.rows() {
            push_floats(&mut out, img.pixels.row(r));
        }
    }
    out
}

pub fn dataset_from_string(text: &str) -> Result<Dataset> {
    let mut r = LineReader::new(text);
    let magic = r.next_line()?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic '{}', expected '{}'",
            magic, DATASET_MAGIC
        )));
    }
    let cfg = GenConfig {
        num_identities: r.parse("num_identities")?,
        images_per_identity: r.parse("images_per_identity")?,
        num_cameras: r.parse("num_cameras")?,
        height: r.parse("height")?,
        channels: r.parse("channels")?,
        raw_parts: r.parse("raw_parts")?,
        noise_sigma: r.parse("noise_sigma")?,
        camera_shift_scale: r.parse("camera_shift_scale")?,
        video_mode: r.parse("video_mode")?,
        tracklet_len: r.parse("tracklet_len")?,
        seed: r.parse("seed")?,
    };
    let n_train: usize = r.parse("train")?;
    let n_query: usize = r.parse("query")?;
    let n_gallery: usize = r.parse("gallery")?;
    let read_images = |count: usize, r: &mut LineReader| -> Result<Vec<SyntheticImage>> {
        let mut images = Vec::with_capacity(count);
        for _ in 0..count {
            let head = r.next_line()?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "line {}: expected 'identity camera tracklet'",
                    r.line_no
                )));
            }
            let identity: u32 = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad identity", r.line_no)))?;
            let camera: u32 = fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad camera", r.line_no)))?;
            let tracklet_raw: i64 = fields[2]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad tracklet", r.line_no)))?;
            let tracklet = if tracklet_raw < 0 {
                None
            } else {
                Some(tracklet_raw as u32)
            };
            let mut data = Vec::with_capacity(cfg.height * cfg.channels);
            for _ in 0..cfg.height {
                let line = r.next_line()?;
                let row = parse_float_row(line, r.line_no)?;
                if row.len() != cfg.channels {
                    return Err(Error::Format(format!(
                        "line {}: row has {} channels, expected {}",
                        r.line_no,
                        row.len(),
                        cfg.channels
                    )));
                }
                data.extend_from_slice(&row);
            }
            images.push(SyntheticImage {
                pixels: Mat::from_data(cfg.height, cfg.channels, data)?,
                identity,
                camera,
                tracklet,
            });
        }
        Ok(images)
    };
    let train = read_images(n_train, &mut r)?;
    let query = read_images(n_query, &mut r)?;
    let gallery = read_images(n_gallery, &mut r)?;
    Ok(Dataset {
        train,
        query,
        gallery,
        config: cfg,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    dataset_from_string(&text)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

fn push_hyperparams(out: &mut String, hp: &Hyperparams) {
    let _ = writeln!(out, "tau={}", hp.tau);
    let _ = writeln!(out, "lambda={}", hp.lambda);
    let _ = writeln!(out, "lambda_p={}", hp.lambda_p);
    let _ = writeln!(out, "lambda_c={}", hp.lambda_c);
    let _ = writeln!(out, "k={}", hp.k);
    let _ = writeln!(out, "parts={}", hp.parts);
    let _ = writeln!(out, "hidden_dim={}", hp.hidden_dim);
    let _ = writeln!(out, "embed_dim={}", hp.embed_dim);
    let _ = writeln!(out, "baseline_epochs={}", hp.baseline_epochs);
    let _ = writeln!(out, "finetune_epochs={}", hp.finetune_epochs);
    let _ = writeln!(out, "iterations={}", hp.iterations);
    let _ = writeln!(out, "batch_size={}", hp.batch_size);
    let _ = writeln!(out, "lr_initial={}", hp.lr_initial);
    let _ = writeln!(out, "lr_final={}", hp.lr_final);
    let _ = writeln!(out, "lr_switch_epoch={}", hp.lr_switch_epoch);
    let _ = writeln!(out, "sgd_momentum={}", hp.sgd_momentum);
    let _ = writeln!(out, "dropout={}", hp.dropout);
    let _ = writeln!(out, "memory_momentum={}", hp.memory_momentum);
    let _ = writeln!(out, "seed={}", hp.seed);
    let _ = writeln!(out, "dropout_in_finetune={}", hp.dropout_in_finetune);
    let _ = writeln!(out, "update_memory_in_baseline={}", hp.update_memory_in_baseline);
    let _ = writeln!(out, "update_memory_in_finetune={}", hp.update_memory_in_finetune);
    let _ = writeln!(out, "reextract_memory={}", hp.reextract_memory);
    let _ = writeln!(out, "reinit_encoder={}", hp.reinit_encoder);
    let _ = writeln!(out, "normalized_parts={}", hp.normalized_parts);
}

fn read_hyperparams(r: &mut LineReader) -> Result<Hyperparams> {
    Ok(Hyperparams {
        tau: r.parse("tau")?,
        lambda: r.parse("lambda")?,
        lambda_p: r.parse("lambda_p")?,
        lambda_c: r.parse("lambda_c")?,
        k: r.parse("k")?,
        parts: r.parse("parts")?,
        hidden_dim: r.parse("hidden_dim")?,
        embed_dim: r.parse("embed_dim")?,
        baseline_epochs: r.parse("baseline_epochs")?,
        finetune_epochs: r.parse("finetune_epochs")?,
        iterations: r.parse("iterations")?,
        batch_size: r.parse("batch_size")?,
        lr_initial: r.parse("lr_initial")?,
        lr_final: r.parse("lr_final")?,
        lr_switch_epoch: r.parse("lr_switch_epoch")?,
        sgd_momentum: r.parse("sgd_momentum")?,
        dropout: r.parse("dropout")?,
        memory_momentum: r.parse("memory_momentum")?,
        seed: r.parse("seed")?,
        dropout_in_finetune: r.parse("dropout_in_finetune")?,
        update_memory_in_baseline: r.parse("update_memory_in_baseline")?,
        update_memory_in_finetune: r.parse("update_memory_in_finetune")?,
        reextract_memory: r.parse("reextract_memory")?,
        reinit_encoder: r.parse("reinit_encoder")?,
        normalized_parts: r.parse("normalized_parts")?,
    })
}

pub fn checkpoint_to_string(hp: &Hyperparams, state: &TrainState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", CHECKPOINT_MAGIC);
    push_hyperparams(&mut out, hp);
    let _ = writeln!(out, "iteration={}", state.iteration);
    let p = &state.params;
    let _ = writeln!(out, "input_dim={}", p.input_dim());
    let _ = writeln!(out, "enc_hidden_dim={}", p.hidden_dim());
    let _ = writeln!(out, "enc_embed_dim={}", p.embed_dim());
    let _ = writeln!(out, "enc_dropout={}", p.dropout_rate);
    for (key, values) in [
        ("w1", p.w1.data()),
        ("b1", p.b1.as_slice()),
        ("w2", p.w2.data()),
        ("b2", p.b2.as_slice()),
        ("mw1", p.momentum.w1.data()),
        ("mb1", p.momentum.b1.as_slice()),
        ("mw2", p.momentum.w2.data()),
        ("mb2", p.momentum.b2.as_slice()),
    ] {
        let _ = write!(out, "{}=", key);
        push_floats(&mut out, values);
    }
    let t = &state.table;
    let _ = writeln!(out, "table_rows={}", t.len());
    let _ = writeln!(out, "table_dim={}", t.dim());
    let _ = writeln!(out, "table_tau={}", t.tau());
    let _ = writeln!(out, "table_mu={}", t.momentum());
    for i in 0..t.len() {
        let _ = write!(out, "row=");
        push_floats(&mut out, t.row(i));
    }
    let _ = writeln!(out, "history_len={}", state.history.len());
    for m in &state.history {
        let _ = writeln!(
            out,
            "hist={} {} {} {} {}",
            m.iteration, m.rank1, m.rank5, m.rank10, m.map
        );
    }
    out
}

pub fn checkpoint_from_string(text: &str) -> Result<(Hyperparams, TrainState)> {
    let mut r = LineReader::new(text);
    let magic = r.next_line()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic '{}', expected '{}'",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let hp = read_hyperparams(&mut r)?;
    let iteration: usize = r.parse("iteration")?;
    let input_dim: usize = r.parse("input_dim")?;
    let hidden_dim: usize = r.parse("enc_hidden_dim")?;
    let embed_dim: usize = r.parse("enc_embed_dim")?;
    let dropout_rate: f64 = r.parse("enc_dropout")?;
    let w1 = r.floats("w1", input_dim * hidden_dim)?;
    let b1 = r.floats("b1", hidden_dim)?;
    let w2 = r.floats("w2", hidden_dim * embed_dim)?;
    let b2 = r.floats("b2", embed_dim)?;
    let mw1 = r.floats("mw1", input_dim * hidden_dim)?;
    let mb1 = r.floats("mb1", hidden_dim)?;
    let mw2 = r.floats("mw2", hidden_dim * embed_dim)?;
    let mb2 = r.floats("mb2", embed_dim)?;
    let params = EncoderParams {
        w1: Mat::from_data(input_dim, hidden_dim, w1)?,
        b1,
        w2: Mat::from_data(hidden_dim, embed_dim, w2)?,
        b2,
        dropout_rate,
        momentum: Gradients {
            w1: Mat::from_data(input_dim, hidden_dim, mw1)?,
            b1: mb1,
            w2: Mat::from_data(hidden_dim, embed_dim, mw2)?,
            b2: mb2,
        },
    };
    let rows: usize = r.parse("table_rows")?;
    let dim: usize = r.parse("table_dim")?;
    let tau: f64 = r.parse("table_tau")?;
    let mu: f64 = r.parse("table_mu")?;
    let mut embeddings = Vec::with_capacity(rows);
    for _ in 0..rows {
        let row = r.floats("row", dim)?;
        embeddings.push(crate::encoder::Embedding::new(row)?);
    }
    let table = LookupTable::init_from_features(&embeddings, tau, mu)?;
    let history_len: usize = r.parse("history_len")?;
    let mut history = Vec::with_capacity(history_len);
    for _ in 0..history_len {
        let v = r.expect_key("hist")?;
        let fields: Vec<&str> = v.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!(
                "line {}: history entry needs 5 fields",
                r.line_no
            )));
        }
        let iteration: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad history iteration", r.line_no)))?;
        let nums = parse_float_row(&fields[1..].join(" "), r.line_no)?;
        history.push(IterationMetrics {
            iteration,
            rank1: nums[0],
            rank5: nums[1],
            rank10: nums[2],
            map: nums[3],
        });
    }
    Ok((
        hp,
        TrainState {
            params,
            table,
            iteration,
            history,
        },
    ))
}

pub fn save_checkpoint(hp: &Hyperparams, state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(hp, state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Hyperparams, TrainState)> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_string(&text)
}
