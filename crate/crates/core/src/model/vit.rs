//! Vision Transformer encoder, masked-autoencoder decoder and classifier head.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, Pooling};
use super::mask::MaskPlan;
use super::posembed::sincos_2d;
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Real> Param<T> {
    fn new(name: String, value: Tensor<T>) -> Self {
        Self {
            name,
            value: value.with_grad(),
        }
    }

    fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.param(&self.name, &self.value)
    }
}

/// Draws `N(0, std²)` truncated to `±2·std` by rejection.
fn trunc_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            data.push(T::lit(z * INIT_STD));
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Initial values for a freshly created parameter set.
enum Init<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    Zeros,
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn weight<T: Real>(&mut self, shape: &[usize]) -> Tensor<T> {
        match self {
            Init::Random(rng) => trunc_normal(*rng, shape),
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Real = f32> {
    /// `[in, out]`; applied as `x · W + b`.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    fn init<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, init: &mut Init<'_, R>) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), init.weight(&[d_in, d_out])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[d_out])),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = self.weight.bind(tape);
        let b = self.bias.bind(tape);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T: Real = f32> {
    pub gain: Param<T>,
    pub bias: Param<T>,
    eps: f64,
}

impl<T: Real> LayerNorm<T> {
    fn init(name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gain: Param::new(format!("{name}.gain"), Tensor::ones(&[dim])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[dim])),
            eps,
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = self.gain.bind(tape);
        let b = self.bias.bind(tape);
        tape.layernorm(x, g, b, T::lit(self.eps))
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T: Real = f32> {
    pub norm1: LayerNorm<T>,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    heads: usize,
}

impl<T: Real> Block<T> {
    fn init<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, mlp_ratio: usize, eps: f64, init: &mut Init<'_, R>) -> Self {
        let hidden = dim * mlp_ratio;
        Self {
            norm1: LayerNorm::init(&format!("{name}.norm1"), dim, eps),
            qkv: Linear::init(&format!("{name}.attn.qkv"), dim, 3 * dim, init),
            proj: Linear::init(&format!("{name}.attn.proj"), dim, dim, init),
            norm2: LayerNorm::init(&format!("{name}.norm2"), dim, eps),
            fc1: Linear::init(&format!("{name}.mlp.fc1"), dim, hidden, init),
            fc2: Linear::init(&format!("{name}.mlp.fc2"), hidden, dim, init),
            heads,
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, seq_len: usize) -> Result<Var> {
        let h = self.norm1.forward(tape, x)?;
        let qkv = self.qkv.forward(tape, h)?;
        let a = tape.attention(qkv, seq_len, self.heads)?;
        let a = self.proj.forward(tape, a)?;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.fc2.forward(tape, h)?;
        tape.add(x, h)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.norm1.gain, &self.norm1.bias];
        v.extend(self.qkv.params());
        v.extend(self.proj.params());
        v.extend([&self.norm2.gain, &self.norm2.bias]);
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.norm1.gain, &mut self.norm1.bias];
        v.extend(self.qkv.params_mut());
        v.extend(self.proj.params_mut());
        v.extend([&mut self.norm2.gain, &mut self.norm2.bias]);
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T: Real = f32> {
    pub patch_embed: Linear<T>,
    pub cls_token: Param<T>,
    pub blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
    pos_embed: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T: Real = f32> {
    pub embed: Linear<T>,
    pub mask_token: Param<T>,
    pub blocks: Vec<Block<T>>,
    pub pred: Linear<T>,
    pos_embed: Tensor<T>,
}

/// MLP head: `fc2(gelu(fc1(features)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassHead<T: Real = f32> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// The full model. The decoder exists only for pretraining; the head only
/// for classification.
#[derive(Clone, Debug, PartialEq)]
pub struct VitMae<T: Real = f32> {
    config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Option<Decoder<T>>,
    pub head: Option<ClassHead<T>>,
}

impl<T: Real> Encoder<T> {
    fn init<R: Rng + ?Sized>(c: &ModelConfig, init: &mut Init<'_, R>) -> Self {
        let e = c.encoder_dim;
        Self {
            patch_embed: Linear::init("encoder.patch_embed", c.patch_dim(), e, init),
            cls_token: Param::new("encoder.cls_token".into(), init.weight(&[1, e])),
            blocks: (0..c.encoder_depth)
                .map(|i| Block::init(&format!("encoder.blocks.{i}"), e, c.encoder_heads, c.mlp_ratio, c.layer_norm_eps, init))
                .collect(),
            norm: LayerNorm::init("encoder.norm", e, c.layer_norm_eps),
            pos_embed: sincos_2d(e, c.grid_side()),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.patch_embed.params().into();
        v.push(&self.cls_token);
        v.extend(self.blocks.iter().flat_map(Block::params));
        v.extend([&self.norm.gain, &self.norm.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.patch_embed.params_mut().into();
        v.push(&mut self.cls_token);
        v.extend(self.blocks.iter_mut().flat_map(Block::params_mut));
        v.extend([&mut self.norm.gain, &mut self.norm.bias]);
        v
    }
}

impl<T: Real> Decoder<T> {
    fn init<R: Rng + ?Sized>(c: &ModelConfig, init: &mut Init<'_, R>) -> Self {
        let d = c.decoder_dim;
        Self {
            embed: Linear::init("decoder.embed", c.encoder_dim, d, init),
            mask_token: Param::new("decoder.mask_token".into(), init.weight(&[1, d])),
            blocks: (0..c.decoder_depth)
                .map(|i| Block::init(&format!("decoder.blocks.{i}"), d, c.decoder_heads, c.mlp_ratio, c.layer_norm_eps, init))
                .collect(),
            pred: Linear::init("decoder.pred", d, c.patch_dim(), init),
            pos_embed: sincos_2d(d, c.grid_side()),
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.embed.params().into();
        v.push(&self.mask_token);
        v.extend(self.blocks.iter().flat_map(Block::params));
        v.extend(self.pred.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.embed.params_mut().into();
        v.push(&mut self.mask_token);
        v.extend(self.blocks.iter_mut().flat_map(Block::params_mut));
        v.extend(self.pred.params_mut());
        v
    }
}

impl<T: Real> ClassHead<T> {
    fn init<R: Rng + ?Sized>(c: &ModelConfig, init: &mut Init<'_, R>) -> Self {
        Self {
            fc1: Linear::init("head.fc1", c.encoder_dim, c.head_hidden, init),
            fc2: Linear::init("head.fc2", c.head_hidden, c.num_classes, init),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, features)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, h)
    }
}

/// Initializes every component: truncated-normal (σ = 0.02) projections and
/// tokens, zero biases, unit layernorm gains, fixed sin-cos positions.
pub fn init_parameters<T: Real, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<VitMae<T>> {
    config.validate()?;
    let mut init = Init::Random(rng);
    Ok(VitMae {
        config: config.clone(),
        encoder: Encoder::init(config, &mut init),
        decoder: Some(Decoder::init(config, &mut init)),
        head: Some(ClassHead::init(config, &mut init)),
    })
}

impl<T: Real> VitMae<T> {
    /// All-zero skeleton with the requested components, used when loading.
    pub fn zeros(config: &ModelConfig, with_decoder: bool, with_head: bool) -> Result<Self> {
        config.validate()?;
        let mut init: Init<'_, rand_chacha::ChaCha8Rng> = Init::Zeros;
        Ok(Self {
            config: config.clone(),
            encoder: Encoder::init(config, &mut init),
            decoder: with_decoder.then(|| Decoder::init(config, &mut init)),
            head: with_head.then(|| ClassHead::init(config, &mut init)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Discards the reconstruction decoder.
    pub fn drop_decoder(&mut self) {
        self.decoder = None;
    }

    /// Replaces the classification head with a freshly initialized one.
    pub fn reset_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.head = Some(ClassHead::init(&self.config, &mut Init::Random(rng)));
    }

    pub fn set_pooling(&mut self, pooling: Pooling) {
        self.config.pooling = pooling;
    }

    /// Changes the class count, e.g. before attaching a new head.
    pub fn set_num_classes(&mut self, n: usize) {
        self.config.num_classes = n;
    }

    /// Every parameter in a fixed order: encoder, decoder, head.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        if let Some(d) = &self.decoder {
            v.extend(d.params());
        }
        if let Some(h) = &self.head {
            v.extend([&h.fc1.weight, &h.fc1.bias, &h.fc2.weight, &h.fc2.bias]);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        if let Some(d) = &mut self.decoder {
            v.extend(d.params_mut());
        }
        if let Some(h) = &mut self.head {
            v.extend(h.fc1.params_mut());
            v.extend(h.fc2.params_mut());
        }
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.value.zero_grad();
        }
    }

    /// Adds `scale ×` the tape's parameter gradients into each parameter.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, grads: &Gradients<T>, scale: T) {
        for p in self.params_mut() {
            if let Some(g) = tape.param_var(&p.name).and_then(|v| grads.get(v)) {
                p.value.accumulate_grad(g, scale);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.all_finite())
    }

    fn check_patches(&self, patches: &Tensor<T>) -> Result<()> {
        let want = [self.config.num_patches(), self.config.patch_dim()];
        if patches.shape() != want {
            return Err(Error::Shape {
                op: "patches",
                lhs: patches.shape().to_vec(),
                rhs: want.to_vec(),
            });
        }
        Ok(())
    }

    /// Checks a batch of plans and returns the shared `(visible, masked)` counts.
    fn check_plans(&self, plans: &[MaskPlan]) -> Result<(usize, usize)> {
        let first = plans.first().ok_or_else(|| Error::validation("empty batch"))?;
        let counts = (first.visible().len(), first.masked().len());
        for plan in plans {
            if plan.num_patches() != self.config.num_patches() {
                return Err(Error::validation(format!(
                    "mask plan covers {} patches, model expects {}",
                    plan.num_patches(),
                    self.config.num_patches()
                )));
            }
            if (plan.visible().len(), plan.masked().len()) != counts {
                return Err(Error::validation("mask plans in a batch must hide the same number of patches"));
            }
        }
        Ok(counts)
    }

    /// Embeds the visible patches, adds positions by original patch index,
    /// prepends the class token and runs the encoder. Output is
    /// `[1 + |visible|, encoder_dim]` with the class token first.
    pub fn encode(&self, tape: &mut Tape<T>, patches: &Tensor<T>, plan: &MaskPlan) -> Result<Var> {
        self.encode_batch(tape, &[patches], std::slice::from_ref(plan))
    }

    /// [`encode`](Self::encode) for a batch. Sequences are stacked row-wise,
    /// giving `[batch · (1 + |visible|), encoder_dim]`.
    pub fn encode_batch(&self, tape: &mut Tape<T>, patches: &[&Tensor<T>], plans: &[MaskPlan]) -> Result<Var> {
        if patches.len() != plans.len() {
            return Err(Error::validation("one mask plan per image is required"));
        }
        let (n_vis, _) = self.check_plans(plans)?;
        let enc = &self.encoder;
        let batch = patches.len();
        let width = self.config.patch_dim();
        let mut tokens = Vec::with_capacity(batch * n_vis * width);
        let mut pos_rows = Vec::with_capacity(batch * n_vis);
        for (p, plan) in patches.iter().zip(plans) {
            self.check_patches(p)?;
            for &i in plan.visible() {
                tokens.extend_from_slice(&p.data()[i * width..(i + 1) * width]);
                pos_rows.push(i + 1);
            }
        }
        let tokens = tape.constant(Tensor::new(vec![batch * n_vis, width], tokens)?);
        let x = enc.patch_embed.forward(tape, tokens)?;
        let pos = tape.constant(enc.pos_embed.index_select(&pos_rows)?);
        let x = tape.add(x, pos)?;

        let cls = enc.cls_token.bind(tape);
        let cls_pos = tape.constant(enc.pos_embed.index_select(&[0])?);
        let cls = tape.add(cls, cls_pos)?;
        let stacked = tape.concat(&[cls, x], 0)?;
        let mut x = if batch == 1 {
            stacked
        } else {
            let order: Vec<usize> = (0..batch)
                .flat_map(|b| std::iter::once(0).chain((0..n_vis).map(move |j| 1 + b * n_vis + j)))
                .collect();
            tape.index_select(stacked, &order)?
        };
        for block in &enc.blocks {
            x = block.forward(tape, x, n_vis + 1)?;
        }
        enc.norm.forward(tape, x)
    }

    /// Predicts pixels for every patch position from an [`encode`](Self::encode)
    /// output. Masked positions are filled with the mask token before decoding.
    pub fn decode_reconstruct(&self, tape: &mut Tape<T>, encoded: Var, plan: &MaskPlan) -> Result<Var> {
        self.decode_batch(tape, encoded, std::slice::from_ref(plan))
    }

    /// [`decode_reconstruct`](Self::decode_reconstruct) for a batch; output is
    /// `[batch · num_patches, patch_dim]`.
    pub fn decode_batch(&self, tape: &mut Tape<T>, encoded: Var, plans: &[MaskPlan]) -> Result<Var> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::validation("model has no decoder"))?;
        let (n_vis, n_mask) = self.check_plans(plans)?;
        let n = self.config.num_patches();
        let batch = plans.len();
        let seq = n_vis + 1;
        if tape.shape(encoded) != [batch * seq, self.config.encoder_dim] {
            return Err(Error::validation(format!(
                "encoded shape {:?} does not match {batch} mask plans with {n_vis} visible patches",
                tape.shape(encoded)
            )));
        }
        let y = dec.embed.forward(tape, encoded)?;
        let stacked = if n_mask > 0 {
            let token = dec.mask_token.bind(tape);
            let fill = tape.index_select(token, &vec![0; batch * n_mask])?;
            tape.concat(&[y, fill], 0)?
        } else {
            y
        };
        // row of `stacked` that holds each (image, grid position)
        let mut order = Vec::with_capacity(batch * (n + 1));
        let mut slot = vec![0usize; n];
        for (b, plan) in plans.iter().enumerate() {
            for (j, &p) in plan.visible().iter().enumerate() {
                slot[p] = b * seq + 1 + j;
            }
            for (k, &p) in plan.masked().iter().enumerate() {
                slot[p] = batch * seq + b * n_mask + k;
            }
            order.push(b * seq);
            order.extend_from_slice(&slot);
        }
        let x = tape.index_select(stacked, &order)?;
        let pos = tape.constant(dec.pos_embed.index_select(&(0..batch).flat_map(|_| 0..=n).collect::<Vec<_>>())?);
        let mut x = tape.add(x, pos)?;
        for block in &dec.blocks {
            x = block.forward(tape, x, n + 1)?;
        }
        let patch_rows: Vec<usize> = (0..batch)
            .flat_map(|b| (1..=n).map(move |p| b * (n + 1) + p))
            .collect();
        let patches = tape.index_select(x, &patch_rows)?;
        dec.pred.forward(tape, patches)
    }

    /// Logits `[num_classes]` for a full, unmasked patch sequence.
    pub fn classify(&self, tape: &mut Tape<T>, patches: &Tensor<T>) -> Result<Var> {
        let logits = self.classify_batch(tape, &[patches])?;
        tape.reshape(logits, &[self.config.num_classes])
    }

    /// Logits `[batch, num_classes]`, ready for cross-entropy.
    pub fn classify_batch(&self, tape: &mut Tape<T>, patches: &[&Tensor<T>]) -> Result<Var> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::validation("model has no classification head"))?;
        let n = self.config.num_patches();
        let plans = vec![MaskPlan::full(n); patches.len()];
        let encoded = self.encode_batch(tape, patches, &plans)?;
        let batch = patches.len();
        let features = match self.config.pooling {
            Pooling::ClassToken => {
                let rows: Vec<usize> = (0..batch).map(|b| b * (n + 1)).collect();
                tape.index_select(encoded, &rows)?
            }
            Pooling::Mean => {
                let mut avg = vec![T::zero(); batch * batch * (n + 1)];
                let w = T::lit(1.0 / n as f64);
                for b in 0..batch {
                    let row = &mut avg[b * batch * (n + 1)..][..batch * (n + 1)];
                    row[b * (n + 1) + 1..(b + 1) * (n + 1)].fill(w);
                }
                let avg = tape.constant(Tensor::new(vec![batch, batch * (n + 1)], avg)?);
                tape.matmul(avg, encoded)?
            }
        };
        head.forward(tape, features)
    }

    /// Inference-only logits for a patchified image.
    pub fn logits(&self, patches: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::inference();
        let out = self.classify(&mut tape, patches)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Mean squared error over the pixels of masked patches only.
pub fn mae_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>, plan: &MaskPlan) -> Result<Var> {
    mae_loss_batch(tape, pred, &[target], std::slice::from_ref(plan))
}

/// [`mae_loss`] over a batch: the mean over every masked pixel of every image.
/// With equal mask sizes this is the batch mean of per-image losses.
pub fn mae_loss_batch<T: Real>(tape: &mut Tape<T>, pred: Var, targets: &[&Tensor<T>], plans: &[MaskPlan]) -> Result<Var> {
    let first = targets.first().ok_or_else(|| Error::validation("empty batch"))?;
    let &[n, width] = first.shape() else {
        return Err(Error::validation("targets must be [num_patches, patch_dim]"));
    };
    let want = [targets.len() * n, width];
    if tape.shape(pred) != want || targets.len() != plans.len() {
        return Err(Error::Shape {
            op: "mae_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: want.to_vec(),
        });
    }
    let mut rows = Vec::new();
    let mut picked = Vec::new();
    for (b, (target, plan)) in targets.iter().zip(plans).enumerate() {
        if target.shape() != [n, width] || plan.num_patches() != n {
            return Err(Error::validation("targets and mask plans disagree in size"));
        }
        for &m in plan.masked() {
            rows.push(b * n + m);
            picked.extend_from_slice(&target.data()[m * width..(m + 1) * width]);
        }
    }
    if rows.is_empty() {
        return Err(Error::validation("reconstruction loss needs at least one masked patch"));
    }
    let p = tape.index_select(pred, &rows)?;
    let t = tape.constant(Tensor::new(vec![rows.len(), width], picked)?);
    let d = tape.sub(p, t)?;
    let sq = tape.mul(d, d)?;
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{patchify, sample_mask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro() -> ModelConfig {
        let mut c = ModelConfig::with_encoder(8, 1, 2);
        c.image_size = 8;
        c.patch_size = 4;
        c.decoder_depth = 1;
        c.in_channels = 1;
        c
    }

    fn random_patches(c: &ModelConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<f64> = (0..c.in_channels * c.image_size * c.image_size)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let img = Tensor::new(vec![c.in_channels, c.image_size, c.image_size], img).unwrap();
        patchify(&img, c.patch_size).unwrap()
    }

    fn block_count(e: usize, r: usize) -> usize {
        4 * e + (e * 3 * e + 3 * e) + (e * e + e) + (e * r * e + r * e) + (r * e * e + e)
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let c = ModelConfig::tiny();
        let m: VitMae<f32> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (e, d, p, r, h) = (c.encoder_dim, c.decoder_dim, c.patch_dim(), c.mlp_ratio, c.head_hidden);
        let enc = p * e + e + e + c.encoder_depth * block_count(e, r) + 2 * e;
        let dec = e * d + d + d + c.decoder_depth * block_count(d, r) + d * p + p;
        let head = e * h + h + h * c.num_classes + c.num_classes;
        assert_eq!(m.parameter_count(), enc + dec + head);
    }

    #[test]
    fn init_is_deterministic_with_unit_norms() {
        let c = ModelConfig::tiny();
        let a: VitMae<f32> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b: VitMae<f32> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        for p in a.params() {
            if p.name.ends_with(".gain") {
                assert!(p.value.data().iter().all(|&v| v == 1.0), "{}", p.name);
            }
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
            if p.name.ends_with(".weight") {
                assert!(p.value.data().iter().all(|&v| v.abs() <= 0.04), "{}", p.name);
            }
        }
    }

    #[test]
    fn param_names_are_unique() {
        let m: VitMae<f32> = init_parameters(&ModelConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut names: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn encode_shapes() {
        let c = micro();
        let m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let patches = random_patches(&c, 2);
        let mut tape = Tape::new();
        let full = m.encode(&mut tape, &patches, &MaskPlan::full(4)).unwrap();
        assert_eq!(tape.shape(full), &[5, 8]);
        let plan = MaskPlan::new(4, vec![0, 2, 3], vec![1]).unwrap();
        let part = m.encode(&mut tape, &patches, &plan).unwrap();
        assert_eq!(tape.shape(part), &[4, 8]);
        let rec = m.decode_reconstruct(&mut tape, part, &plan).unwrap();
        assert_eq!(tape.shape(rec), &[4, 16]);
    }

    #[test]
    fn permuting_visible_order_permutes_outputs() {
        let c = micro();
        let m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let patches = random_patches(&c, 4);
        let mut tape = Tape::new();
        let a = MaskPlan::new(4, vec![0, 2, 3], vec![1]).unwrap();
        let b = MaskPlan::new(4, vec![3, 0, 2], vec![1]).unwrap();
        let ea = m.encode(&mut tape, &patches, &a).unwrap();
        let eb = m.encode(&mut tape, &patches, &b).unwrap();
        let (va, vb) = (tape.value(ea).to_vec(), tape.value(eb).to_vec());
        let row = |v: &[f64], i: usize| v[i * 8..(i + 1) * 8].to_vec();
        // token slots: a = [cls, 0, 2, 3], b = [cls, 3, 0, 2]
        for (sa, sb) in [(0, 0), (1, 2), (2, 3), (3, 1)] {
            let (x, y) = (row(&va, sa), row(&vb, sb));
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        // decoder output is indexed by grid position, so it must agree exactly
        let ra = m.decode_reconstruct(&mut tape, ea, &a).unwrap();
        let rb = m.decode_reconstruct(&mut tape, eb, &b).unwrap();
        for (p, q) in tape.value(ra).iter().zip(tape.value(rb)) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn visible_content_reaches_masked_predictions() {
        let c = micro();
        let m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let plan = MaskPlan::new(4, vec![0, 1, 2], vec![3]).unwrap();
        let patches = random_patches(&c, 7);
        let mut perturbed = patches.clone();
        for v in &mut perturbed.data_mut()[..16] {
            *v += 0.5;
        }
        let predict = |p: &Tensor<f64>| {
            let mut tape = Tape::new();
            let e = m.encode(&mut tape, p, &plan).unwrap();
            let r = m.decode_reconstruct(&mut tape, e, &plan).unwrap();
            tape.value(r)[3 * 16..].to_vec()
        };
        assert_ne!(predict(&patches), predict(&perturbed));
    }

    #[test]
    fn zero_depth_decoder_is_affine() {
        let mut c = micro();
        c.decoder_depth = 0;
        let m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let plan = MaskPlan::new(4, vec![0, 1, 3], vec![2]).unwrap();
        let mut tape = Tape::<f64>::new();
        let run = |tape: &mut Tape<f64>, data: Vec<f64>| {
            let x = tape.constant(Tensor::new(vec![4, 8], data).unwrap());
            let r = m.decode_reconstruct(tape, x, &plan).unwrap();
            tape.value(r).to_vec()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let (fx, fy, fm) = (run(&mut tape, x), run(&mut tape, y), run(&mut tape, mid));
        for i in 0..fx.len() {
            assert!((fm[i] - 0.5 * (fx[i] + fy[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_forward_matches_per_image() {
        let mut c = micro();
        c.pooling = Pooling::Mean;
        let m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let (a, b) = (random_patches(&c, 1), random_patches(&c, 2));
        let plans = [
            MaskPlan::new(4, vec![0, 2, 3], vec![1]).unwrap(),
            MaskPlan::new(4, vec![1, 2, 3], vec![0]).unwrap(),
        ];
        let mut tape = Tape::new();
        let e = m.encode_batch(&mut tape, &[&a, &b], &plans).unwrap();
        let r = m.decode_batch(&mut tape, e, &plans).unwrap();
        let loss = mae_loss_batch(&mut tape, r, &[&a, &b], &plans).unwrap();
        let logits = m.classify_batch(&mut tape, &[&a, &b]).unwrap();
        let (batched, batched_loss) = (tape.value(r).to_vec(), tape.scalar(loss));
        let batched_logits = tape.value(logits).to_vec();

        let mut single = Vec::new();
        let mut losses = 0.0;
        let mut single_logits = Vec::new();
        for (p, plan) in [&a, &b].into_iter().zip(&plans) {
            let mut tape = Tape::new();
            let e = m.encode(&mut tape, p, plan).unwrap();
            let r = m.decode_reconstruct(&mut tape, e, plan).unwrap();
            let l = mae_loss(&mut tape, r, p, plan).unwrap();
            single.extend_from_slice(tape.value(r));
            losses += tape.scalar(l) / 2.0;
            single_logits.extend(m.logits(p).unwrap());
        }
        for (x, y) in batched.iter().zip(&single) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((batched_loss - losses).abs() < 1e-12);
        for (x, y) in batched_logits.iter().zip(&single_logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mae_loss_definitional_cases() {
        let plan = MaskPlan::new(3, vec![0, 2], vec![1]).unwrap();
        let target = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        // exact on the masked patch, garbage elsewhere
        let pred = tape.constant(Tensor::new(vec![3, 2], vec![9.0, -9.0, 3.0, 4.0, 1e6, 0.0]).unwrap());
        let l = mae_loss(&mut tape, pred, &target, &plan).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let pred = tape.constant(Tensor::new(vec![3, 2], vec![0.0, 0.0, 4.0, 5.0, 0.0, 0.0]).unwrap());
        let l = mae_loss(&mut tape, pred, &target, &plan).unwrap();
        assert_eq!(tape.scalar(l), 1.0);
        let none = MaskPlan::full(3);
        assert!(mae_loss(&mut tape, pred, &target, &none).is_err());
    }

    #[test]
    fn classify_is_deterministic_and_sized() {
        let c = ModelConfig::tiny();
        let m: VitMae<f32> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let img = Tensor::full(&[3, 224, 224], 0.3f32);
        let patches = patchify(&img, 16).unwrap();
        let a = m.logits(&patches).unwrap();
        let b = m.logits(&patches).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_masking_encodes_148_tokens() {
        let c = ModelConfig::tiny();
        let m: VitMae<f32> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let patches = patchify(&Tensor::full(&[3, 224, 224], 0.1f32), 16).unwrap();
        let plan = sample_mask(196, c.mask_ratio, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let e = m.encode(&mut tape, &patches, &plan).unwrap();
        assert_eq!(tape.shape(e), &[148, 64]);
        let r = m.decode_reconstruct(&mut tape, e, &plan).unwrap();
        assert_eq!(tape.shape(r), &[196, 768]);
    }

    #[test]
    fn mae_gradients_reach_encoder_and_decoder_but_not_head() {
        let c = micro();
        let mut m: VitMae<f64> = init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let patches = random_patches(&c, 10);
        let plan = MaskPlan::new(4, vec![0, 1, 3], vec![2]).unwrap();
        let mut tape = Tape::new();
        let e = m.encode(&mut tape, &patches, &plan).unwrap();
        let r = m.decode_reconstruct(&mut tape, e, &plan).unwrap();
        let l = mae_loss(&mut tape, r, &patches, &plan).unwrap();
        let grads = tape.backward(l);
        m.accumulate_grads(&tape, &grads, 1.0);
        for p in m.params() {
            let is_head = p.name.starts_with("head.");
            assert_eq!(p.value.grad().is_some(), !is_head, "{}", p.name);
            if let Some(g) = p.value.grad() {
                assert!(g.iter().all(|v| v.is_finite()));
            }
        }
    }
}
