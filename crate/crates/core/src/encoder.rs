//! The learnable embedding function: a two-layer row-wise perceptron.
//!
//! Every grid row passes through `relu(x W1 + b1)` (dropout in train mode),
//! then the affine map `W2, b2`. The global feature is the average over all
//! rows, each part feature the average over its stripe of rows; both are
//! L2-normalized. Because the second layer is affine and pooling is linear,
//! pooling after the second layer equals applying it to pooled hiddens, so
//! parts and the global feature share one per-row computation.
//!
//! Gradients are derived by hand (the backbone is small enough to verify
//! against central finite differences), including the normalization Jacobian
//! `(I - v v^T) / ||u||`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::{axpy, dot, l2_norm, Mat};
use crate::synthgen::SyntheticImage;

/// Norm tolerance for unit vectors.
pub const UNIT_TOL: f64 = 1e-9;

/// A unit-norm global feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps a vector that is already unit norm within `UNIT_TOL`.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        let n = l2_norm(&v);
        if !n.is_finite() {
            return Err(Error::NonFinite("embedding norm".into()));
        }
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::DegenerateFeature(format!(
                "expected unit norm, got {}",
                n
            )));
        }
        Ok(Embedding(v))
    }

    /// Normalizes an arbitrary vector; errors on (near-)zero norm.
    pub fn normalize(u: &[f64]) -> Result<Self> {
        let n = l2_norm(u);
        if !n.is_finite() {
            return Err(Error::NonFinite("feature vector".into()));
        }
        if n < 1e-300 {
            return Err(Error::DegenerateFeature(
                "cannot normalize an all-zero feature".into(),
            ));
        }
        Ok(Embedding(u.iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// The per-stripe feature vectors, each unit norm.
#[derive(Clone, Debug, PartialEq)]
pub struct PartEmbeddings {
    parts: Vec<Embedding>,
}

impl PartEmbeddings {
    pub fn new(parts: Vec<Embedding>) -> Self {
        PartEmbeddings { parts }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn part(&self, i: usize) -> &Embedding {
        &self.parts[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Embedding> {
        self.parts.iter()
    }

    /// Plain vectors, for distance computations.
    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        self.parts.iter().map(|e| e.0.clone()).collect()
    }
}

/// Learnable parameters plus the SGD momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub w1: Mat, // input_dim x hidden_dim
    pub b1: Vec<f64>,
    pub w2: Mat, // hidden_dim x embed_dim
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
    pub momentum: Gradients,
}

/// Parameter-shaped gradient (or momentum) buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn zeros(input_dim: usize, hidden_dim: usize, embed_dim: usize) -> Self {
        Gradients {
            w1: Mat::zeros(input_dim, hidden_dim),
            b1: vec![0.0; hidden_dim],
            w2: Mat::zeros(hidden_dim, embed_dim),
            b2: vec![0.0; embed_dim],
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        self.w1.add_scaled(&other.w1, s);
        axpy(&mut self.b1, &other.b1, s);
        self.w2.add_scaled(&other.w2, s);
        axpy(&mut self.b2, &other.b2, s);
    }

    pub fn scale(&mut self, s: f64) {
        self.w1.scale(s);
        self.b1.iter_mut().for_each(|x| *x *= s);
        self.w2.scale(s);
        self.b2.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().all(|x| x.is_finite())
            && self.b2.iter().all(|x| x.is_finite())
    }
}

impl EncoderParams {
    /// Uniform init in +-1/sqrt(fan_in), zero biases and momentum.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut w1 = Mat::zeros(input_dim, hidden_dim);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        for v in w1.data_mut() {
            *v = rng.random_range(-s1..s1);
        }
        let mut w2 = Mat::zeros(hidden_dim, embed_dim);
        let s2 = 3.0 / (hidden_dim as f64).sqrt();
        for v in w2.data_mut() {
            *v = rng.random_range(-s2..s2);
        }
        EncoderParams {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; embed_dim],
            dropout_rate,
            momentum: Gradients::zeros(input_dim, hidden_dim, embed_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.cols()
    }
}

/// Whether dropout is sampled during the forward pass.
pub enum ForwardMode<'r> {
    Eval,
    Train { rng: &'r mut ChaCha8Rng },
}

/// Everything backward needs to replay the forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input rows (H x m).
    input: Mat,
    /// Pre-activations per row (H x h).
    pre_act: Mat,
    /// Hidden features after relu and dropout scaling (H x h).
    hidden: Mat,
    /// Combined dropout keep/scale factor per hidden unit (H x h); all ones in
    /// eval mode or at rate 0.
    drop_scale: Mat,
    /// Pre-normalization global feature u and its norm.
    pooled: Vec<f64>,
    pooled_norm: f64,
    /// Normalized global embedding v.
    normalized: Vec<f64>,
    /// Raw (pre-normalization) per-part pooled features.
    part_pooled: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Raw pooled part features, before normalization.
    pub fn raw_parts(&self) -> &[Vec<f64>] {
        &self.part_pooled
    }

    /// Pre-normalization global feature.
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }
}

/// Runs the encoder on one image, returning the global embedding, `p` part
/// embeddings, and the cache for backward.
pub fn forward(
    params: &EncoderParams,
    image: &SyntheticImage,
    p: usize,
    mode: ForwardMode,
) -> Result<(Embedding, PartEmbeddings, ForwardCache)> {
    let height = image.pixels.rows();
    let channels = image.pixels.cols();
    if channels != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} channels, encoder expects {}",
            channels,
            params.input_dim()
        )));
    }
    if p == 0 || height % p != 0 {
        return Err(Error::DimensionMismatch(format!(
            "grid height {} is not divisible into {} stripes",
            height, p
        )));
    }
    let h_dim = params.hidden_dim();
    let d = params.embed_dim();
    let mut pre_act = Mat::zeros(height, h_dim);
    let mut hidden = Mat::zeros(height, h_dim);
    let mut drop_scale = Mat::zeros(height, h_dim);

    let rate = params.dropout_rate;
    let mut train_rng = match mode {
        ForwardMode::Eval => None,
        ForwardMode::Train { rng } => Some(rng),
    };

    for r in 0..height {
        let x = image.pixels.row(r);
        let mut z = params.w1.left_mul(x);
        axpy(&mut z, &params.b1, 1.0);
        for j in 0..h_dim {
            // relu with subgradient 0 at 0
            let a = if z[j] > 0.0 { z[j] } else { 0.0 };
            let scale = match (&mut train_rng, rate > 0.0) {
                (Some(rng), true) => {
                    // inverted dropout: keep with prob 1-rate, scale kept units
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        1.0 / (1.0 - rate)
                    }
                }
                _ => 1.0,
            };
            pre_act.set(r, j, z[j]);
            drop_scale.set(r, j, scale);
            hidden.set(r, j, a * scale);
        }
    }

    // Per-row second layer, pooled globally and per stripe.
    let mut pooled = vec![0.0; d];
    let rows_per_part = height / p;
    let mut part_pooled = vec![vec![0.0; d]; p];
    for r in 0..height {
        let mut u_r = params.w2.left_mul(hidden.row(r));
        axpy(&mut u_r, &params.b2, 1.0);
        axpy(&mut pooled, &u_r, 1.0);
        axpy(&mut part_pooled[r / rows_per_part], &u_r, 1.0);
    }
    // Dividing sums at the end keeps p=1 bit-identical to the global pool.
    for v in &mut pooled {
        *v /= height as f64;
    }
    for part in &mut part_pooled {
        for v in part {
            *v /= rows_per_part as f64;
        }
    }

    let pooled_norm = l2_norm(&pooled);
    let global = Embedding::normalize(&pooled)?;
    let parts = part_pooled
        .iter()
        .map(|u| Embedding::normalize(u))
        .collect::<Result<Vec<_>>>()?;

    let cache = ForwardCache {
        input: image.pixels.clone(),
        pre_act,
        hidden,
        drop_scale,
        pooled,
        pooled_norm,
        normalized: global.as_slice().to_vec(),
        part_pooled,
    };
    Ok((global, PartEmbeddings::new(parts), cache))
}

/// Backpropagates a gradient with respect to the normalized global embedding
/// into parameter gradients. Applies the normalization Jacobian
/// `(I - v v^T)/||u||`, splits the pooled gradient evenly over rows, and runs
/// the usual affine/relu chain in reverse.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, grad_v: &[f64]) -> Result<Gradients> {
    let d = params.embed_dim();
    if grad_v.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "grad_v has dim {}, embedding dim is {}",
            grad_v.len(),
            d
        )));
    }
    let height = cache.input.rows();
    let h_dim = params.hidden_dim();

    // d v / d u = (I - v v^T) / ||u||
    let v = &cache.normalized;
    let radial = dot(v, grad_v);
    let grad_u: Vec<f64> = grad_v
        .iter()
        .zip(v)
        .map(|(&g, &vi)| (g - radial * vi) / cache.pooled_norm)
        .collect();

    let mut grads = Gradients::zeros(params.input_dim(), h_dim, d);
    // u = (1/H) sum_r u_r
    let per_row_scale = 1.0 / height as f64;
    let grad_u_row: Vec<f64> = grad_u.iter().map(|g| g * per_row_scale).collect();

    for r in 0..height {
        // u_r = hidden_r W2 + b2
        grads.w2.add_outer(cache.hidden.row(r), &grad_u_row, 1.0);
        axpy(&mut grads.b2, &grad_u_row, 1.0);
        let grad_hidden = params.w2.right_mul(&grad_u_row);
        // hidden = relu(z) * drop_scale
        let mut grad_z = vec![0.0; h_dim];
        for j in 0..h_dim {
            let active = if cache.pre_act.get(r, j) > 0.0 { 1.0 } else { 0.0 };
            grad_z[j] = grad_hidden[j] * cache.drop_scale.get(r, j) * active;
        }
        grads.w1.add_outer(cache.input.row(r), &grad_z, 1.0);
        axpy(&mut grads.b1, &grad_z, 1.0);
    }
    Ok(grads)
}

/// One SGD-with-momentum update:
/// `momentum_state <- momentum * momentum_state + grads`,
/// `params <- params - lr * momentum_state`.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", lr)));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidConfig(format!(
            "sgd momentum must be in [0,1), got {}",
            momentum
        )));
    }
    params.momentum.scale(momentum);
    params.momentum.add_scaled(grads, 1.0);
    params.w1.add_scaled(&params.momentum.w1, -lr);
    axpy(&mut params.b1, &params.momentum.b1, -lr);
    params.w2.add_scaled(&params.momentum.w2, -lr);
    axpy(&mut params.b2, &params.momentum.b2, -lr);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthgen::{generate_dataset, GenConfig};

    fn tiny_image(height: usize, channels: usize, seed: u64) -> SyntheticImage {
        let mut rng = stream(seed, "img", 0, 0);
        let mut pixels = Mat::zeros(height, channels);
        for v in pixels.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        SyntheticImage {
            pixels,
            identity: 0,
            camera: 0,
            tracklet: None,
        }
    }

    fn tiny_params(m: usize, h: usize, d: usize, seed: u64) -> EncoderParams {
        let mut rng = stream(seed, "params", 0, 0);
        EncoderParams::init(m, h, d, 0.0, &mut rng)
    }

    #[test]
    fn outputs_are_unit_norm() {
        let params = tiny_params(3, 5, 4, 1);
        let img = tiny_image(8, 3, 2);
        let (v, parts, _) = forward(&params, &img, 4, ForwardMode::Eval).unwrap();
        assert!((l2_norm(v.as_slice()) - 1.0).abs() < UNIT_TOL);
        for part in parts.iter() {
            assert!((l2_norm(part.as_slice()) - 1.0).abs() < UNIT_TOL);
        }
    }

    #[test]
    fn single_part_equals_global_exactly() {
        let params = tiny_params(3, 6, 4, 3);
        let img = tiny_image(6, 3, 4);
        let (v, parts, _) = forward(&params, &img, 1, ForwardMode::Eval).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts.part(0).as_slice(), v.as_slice());
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut params = tiny_params(3, 5, 4, 5);
        params.dropout_rate = 0.5;
        let img = tiny_image(8, 3, 6);
        let (a, pa, _) = forward(&params, &img, 2, ForwardMode::Eval).unwrap();
        let (b, pb, _) = forward(&params, &img, 2, ForwardMode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn zero_network_raises_degenerate_feature() {
        let mut params = tiny_params(3, 5, 4, 7);
        params.w1 = Mat::zeros(3, 5);
        params.b1 = vec![0.0; 5];
        params.w2 = Mat::zeros(5, 4);
        params.b2 = vec![0.0; 4];
        let img = tiny_image(4, 3, 8);
        assert!(matches!(
            forward(&params, &img, 2, ForwardMode::Eval),
            Err(Error::DegenerateFeature(_))
        ));
    }

    #[test]
    fn stripe_divisibility_is_enforced() {
        let params = tiny_params(3, 5, 4, 9);
        let img = tiny_image(8, 3, 10);
        assert!(matches!(
            forward(&params, &img, 3, ForwardMode::Eval),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn dropout_expectation_matches_eval() {
        // dropout is applied after relu and layer 2 is affine, so the mean
        // train-mode pooled feature over masks equals the eval-mode one
        let mut params = tiny_params(3, 8, 4, 11);
        params.dropout_rate = 0.5;
        let img = tiny_image(4, 3, 12);
        let (_, _, eval_cache) = forward(&params, &img, 1, ForwardMode::Eval).unwrap();
        let mut rng = stream(13, "drop", 0, 0);
        let trials = 20000;
        let mut mean = vec![0.0; 4];
        for _ in 0..trials {
            let (_, _, c) = forward(&params, &img, 1, ForwardMode::Train { rng: &mut rng }).unwrap();
            axpy(&mut mean, c.pooled(), 1.0 / trials as f64);
        }
        for (m, e) in mean.iter().zip(eval_cache.pooled()) {
            assert!((m - e).abs() < 0.02, "mean {} vs eval {}", m, e);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let params = tiny_params(3, 5, 4, 14);
        let img = tiny_image(8, 3, 15);
        let (_, _, cache) = forward(&params, &img, 2, ForwardMode::Eval).unwrap();
        let grads = backward(&params, &cache, &[0.0; 4]).unwrap();
        assert!(grads.w1.data().iter().all(|&x| x == 0.0));
        assert!(grads.w2.data().iter().all(|&x| x == 0.0));
        assert!(grads.b1.iter().all(|&x| x == 0.0));
        assert!(grads.b2.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn radial_gradient_is_annihilated() {
        let params = tiny_params(3, 5, 4, 16);
        let img = tiny_image(8, 3, 17);
        let (v, _, cache) = forward(&params, &img, 2, ForwardMode::Eval).unwrap();
        let grad_v: Vec<f64> = v.as_slice().iter().map(|x| 2.5 * x).collect();
        let grads = backward(&params, &cache, &grad_v).unwrap();
        let max = grads
            .w1
            .data()
            .iter()
            .chain(grads.w2.data())
            .chain(&grads.b1)
            .chain(&grads.b2)
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(max < 1e-10, "radial direction leaked gradient {}", max);
    }

    /// Central finite differences of `f(params) = <v(params), probe>` for a
    /// fixed probe vector; checks every parameter coordinate.
    fn finite_difference_check(m: usize, h: usize, d: usize, height: usize, p: usize, seed: u64) {
        let params = tiny_params(m, h, d, seed);
        let img = tiny_image(height, m, seed + 1000);
        let mut probe_rng = stream(seed + 2000, "probe", 0, 0);
        let probe: Vec<f64> = (0..d).map(|_| probe_rng.random_range(-1.0..1.0)).collect();

        let (_, _, cache) = forward(&params, &img, p, ForwardMode::Eval).unwrap();
        let analytic = backward(&params, &cache, &probe).unwrap();

        let eps = 1e-5;
        let eval_loss = |params: &EncoderParams| -> f64 {
            let (v, _, _) = forward(params, &img, p, ForwardMode::Eval).unwrap();
            dot(v.as_slice(), &probe)
        };
        let check = |set: &mut dyn FnMut(&mut EncoderParams, f64), analytic: f64| {
            let mut plus = params.clone();
            set(&mut plus, eps);
            let mut minus = params.clone();
            set(&mut minus, -eps);
            let numeric = (eval_loss(&plus) - eval_loss(&minus)) / (2.0 * eps);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "fd mismatch: numeric {} analytic {}",
                numeric,
                analytic
            );
        };
        for i in 0..m {
            for j in 0..h {
                check(
                    &mut |prm, e| {
                        let v = prm.w1.get(i, j);
                        prm.w1.set(i, j, v + e);
                    },
                    analytic.w1.get(i, j),
                );
            }
        }
        for j in 0..h {
            check(&mut |prm, e| prm.b1[j] += e, analytic.b1[j]);
        }
        for i in 0..h {
            for j in 0..d {
                check(
                    &mut |prm, e| {
                        let v = prm.w2.get(i, j);
                        prm.w2.set(i, j, v + e);
                    },
                    analytic.w2.get(i, j),
                );
            }
        }
        for j in 0..d {
            check(&mut |prm, e| prm.b2[j] += e, analytic.b2[j]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(3, 4, 2, 6, 2, 21);
        finite_difference_check(4, 6, 3, 8, 4, 22);
    }

    #[test]
    fn gradients_match_on_generated_images() {
        let ds = generate_dataset(&GenConfig {
            num_identities: 2,
            images_per_identity: 2,
            height: 8,
            channels: 3,
            raw_parts: 2,
            ..GenConfig::default()
        })
        .unwrap();
        let params = tiny_params(3, 4, 2, 23);
        let probe = vec![0.3, -0.7];
        let (_, _, cache) = forward(&params, &ds.train[0], 2, ForwardMode::Eval).unwrap();
        let analytic = backward(&params, &cache, &probe).unwrap();
        // spot-check one weight with finite differences
        let eps = 1e-5;
        let mut plus = params.clone();
        plus.w1.set(1, 2, plus.w1.get(1, 2) + eps);
        let mut minus = params.clone();
        minus.w1.set(1, 2, minus.w1.get(1, 2) - eps);
        let f = |prm: &EncoderParams| {
            let (v, _, _) = forward(prm, &ds.train[0], 2, ForwardMode::Eval).unwrap();
            dot(v.as_slice(), &probe)
        };
        let numeric = (f(&plus) - f(&minus)) / (2.0 * eps);
        let analytic_v = analytic.w1.get(1, 2);
        assert!((numeric - analytic_v).abs() / numeric.abs().max(1e-8) < 1e-4);
    }

    #[test]
    fn sgd_plain_step() {
        let mut params = tiny_params(2, 3, 2, 30);
        let before = params.clone();
        let mut grads = Gradients::zeros(2, 3, 2);
        grads.w1.set(0, 0, 2.0);
        grads.b2[1] = -1.0;
        sgd_step(&mut params, &grads, 0.1, 0.0).unwrap();
        assert!((params.w1.get(0, 0) - (before.w1.get(0, 0) - 0.2)).abs() < 1e-15);
        assert!((params.b2[1] - (before.b2[1] + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut params = tiny_params(2, 3, 2, 31);
        let before = params.clone();
        let grads = Gradients::zeros(2, 3, 2);
        sgd_step(&mut params, &grads, 0.1, 0.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_momentum_two_steps_closed_form() {
        let mut params = tiny_params(2, 3, 2, 32);
        let before = params.clone();
        let mut grads = Gradients::zeros(2, 3, 2);
        grads.w1.set(1, 1, 1.0);
        let lr = 0.01;
        sgd_step(&mut params, &grads, lr, 0.9).unwrap();
        sgd_step(&mut params, &grads, lr, 0.9).unwrap();
        // displacement = -lr*(g + (0.9 g + g)) = -lr * 2.9 g
        let expect = before.w1.get(1, 1) - lr * 2.9;
        assert!((params.w1.get(1, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut params = tiny_params(2, 3, 2, 33);
        let mut grads = Gradients::zeros(2, 3, 2);
        grads.b1[0] = f64::NAN;
        assert!(matches!(
            sgd_step(&mut params, &grads, 0.1, 0.9),
            Err(Error::NonFinite(_))
        ));
    }
}
