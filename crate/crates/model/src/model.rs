use std::rc::Rc;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use usersod_core::{BinaryMask, ImageTensor, Need, SaliencyMap};
use usersod_tensor::{Graph, ParamStore, Real, Tensor, Var};

use crate::config::{Mode, ModelConfig, TsnVariant};
use crate::error::{ModelError, Result};
use crate::vocab::Vocabulary;

/// Parameter name prefixes of the frozen saliency network and its encoder copy.
pub const ESM_PREFIX: &str = "esm.";
pub const SME_PREFIX: &str = "sme.";

/// Per-level command prompts, or the all-zero stack used for conventional saliency.
pub enum PromptStack {
    Zero,
    /// One `[C_n]` vector per level; `None` on levels without prompts.
    Levels(Vec<Option<Var>>),
}

/// Variables produced by one forward pass.
pub struct Forward {
    /// `[1, H, W]` saliency in `[0, 1]`.
    pub saliency: Var,
    /// Encoder features `F_n` after prompt injection.
    pub encoder: Vec<Var>,
    /// Features `F'_n` handed to the decoder.
    pub features: Vec<Var>,
    /// Similarity maps `S_n` on levels with the similarity path.
    pub similarities: Vec<Option<Var>>,
    /// Similarity-gated image features `IF'_n`.
    pub gated: Vec<Option<Var>>,
}

/// The need-conditioned saliency network, in all three modes.
pub struct UserSal<T: Real> {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore<T>,
}

struct Init {
    rng: rand_chacha::ChaCha8Rng,
}

impl Init {
    fn normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_vec(shape, (0..n).map(|_| T::of(dist.sample(&mut self.rng))).collect())
    }

    fn conv<T: Real>(&mut self, co: usize, ci: usize, k: usize) -> Tensor<T> {
        self.normal(&[co, ci, k, k], (2.0 / (ci * k * k) as f64).sqrt())
    }
}

/// `[C, C, k, k]` kernel that copies its input.
fn identity_kernel<T: Real>(c: usize, k: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[c, c, k, k]);
    let centre = k / 2;
    for i in 0..c {
        t.data_mut()[((i * c + i) * k + centre) * k + centre] = T::one();
    }
    t
}

/// Subtracted from every pixel so network inputs are centred.
pub const INPUT_OFFSET: f64 = 0.5;

/// Initial bias of the saliency head: the logit of a 5% foreground prior.
pub const HEAD_BIAS_INIT: f64 = -2.944;

pub fn image_tensor<T: Real>(image: &ImageTensor) -> Tensor<T> {
    Tensor::from_vec(
        &[3, image.height(), image.width()],
        image.data().iter().map(|&v| T::of(v as f64 - INPUT_OFFSET)).collect(),
    )
}

pub fn mask_tensor<T: Real>(mask: &BinaryMask) -> Tensor<T> {
    Tensor::from_vec(
        &[1, mask.height(), mask.width()],
        mask.data().iter().map(|&v| T::of(v as f64)).collect(),
    )
}

/// Token order of a (possibly shifted) window partition and its inverse.
///
/// `order[p]` is the flat spatial position read by token `p`; tokens are
/// grouped window by window.
fn window_order(h: usize, w: usize, win: usize, shift: usize) -> (Vec<usize>, Vec<usize>, usize) {
    let (wh, ww) = if h <= win && w <= win { (h, w) } else { (win, win) };
    let mut order = Vec::with_capacity(h * w);
    for by in 0..h / wh {
        for bx in 0..w / ww {
            for ty in 0..wh {
                for tx in 0..ww {
                    let y = (by * wh + ty + shift) % h;
                    let x = (bx * ww + tx + shift) % w;
                    order.push(y * w + x);
                }
            }
        }
    }
    let mut inverse = vec![0; h * w];
    for (p, &q) in order.iter().enumerate() {
        inverse[q] = p;
    }
    (order, inverse, wh * ww)
}

impl<T: Real> UserSal<T> {
    /// Fresh network with seeded random weights and identity-initialised adapters.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(ModelError::Config("empty vocabulary".into()));
        }
        let mut init = Init {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        };
        let mut p = ParamStore::new();
        let widths = config.channel_widths.clone();
        let n_levels = config.levels;

        let mut cin = 3;
        for (l, &c) in widths.iter().enumerate() {
            let n = l + 1;
            p.add(format!("esm.stage{n}.conv_a.w"), init.conv(c, cin, 3), true);
            p.add(format!("esm.stage{n}.conv_a.b"), Tensor::zeros(&[c]), true);
            p.add(format!("esm.stage{n}.conv_b.w"), init.conv(c, c, 3), true);
            p.add(format!("esm.stage{n}.conv_b.b"), Tensor::zeros(&[c]), true);
            cin = c;
        }
        for l in (0..n_levels).rev() {
            let n = l + 1;
            let c = widths[l];
            let ci = if l + 1 == n_levels { c } else { c + widths[l + 1] };
            p.add(format!("esm.decoder.stage{n}.w"), init.conv(c, ci, 3), true);
            p.add(format!("esm.decoder.stage{n}.b"), Tensor::zeros(&[c]), true);
        }
        p.add("esm.decoder.head.w", init.normal(&[1, widths[0], 1, 1], (1.0 / widths[0] as f64).sqrt()), true);
        p.add("esm.decoder.head.b", Tensor::from_vec(&[1], vec![T::of(HEAD_BIAS_INIT)]), true);

        for (l, &c) in widths.iter().enumerate() {
            let n = l + 1;
            for conv in ["conv_a", "conv_b"] {
                for part in ["w", "b"] {
                    let src = p.value(p.id(&format!("esm.stage{n}.{conv}.{part}")).expect("registered")).clone();
                    p.add(format!("sme.stage{n}.{conv}.{part}"), src, false);
                }
            }
            // Feature block copies the input, prompt block starts silent.
            let mut inject = Tensor::zeros(&[c, 2 * c, 1, 1]);
            for i in 0..c {
                inject.data_mut()[i * 2 * c + i] = T::one();
            }
            p.add(format!("mpl.inject{n}.w"), inject, true);
            p.add(format!("mpl.inject{n}.b"), Tensor::zeros(&[c]), true);
        }

        let d = config.embed_dim;
        p.add("mpl.text.embed", init.normal(&[vocab.len(), d], 1.0), true);
        for (l, &c) in widths.iter().enumerate() {
            let n = l + 1;
            p.add(format!("mpl.text.proj{n}.w"), init.normal(&[d, c], (1.0 / d as f64).sqrt()), true);
            p.add(format!("mpl.text.proj{n}.b"), Tensor::zeros(&[c]), true);
        }

        let tsn_keys: Vec<(String, usize)> = if config.tsn_shared {
            vec![("asa.tsn".to_string(), widths[0])]
        } else {
            widths.iter().enumerate().map(|(l, &c)| (format!("asa.tsn{}", l + 1), c)).collect()
        };
        for (key, c) in tsn_keys {
            match config.tsn_variant {
                TsnVariant::Linear => {
                    p.add(format!("{key}.w"), identity_kernel(c, 1), true);
                    p.add(format!("{key}.b"), Tensor::zeros(&[c]), true);
                }
                TsnVariant::Conv => {
                    p.add(format!("{key}.w"), identity_kernel(c, 3), true);
                    p.add(format!("{key}.b"), Tensor::zeros(&[c]), true);
                }
                TsnVariant::VitAttention | TsnVariant::SwinAttention => {
                    add_attention(&mut p, &mut init, &key, c, config.attn_dim);
                }
            }
        }
        for (l, &c) in widths.iter().enumerate() {
            let n = l + 1;
            add_attention(&mut p, &mut init, &format!("asa.aia{n}"), c, config.attn_dim);
            p.add(format!("adapter{n}.w"), Tensor::zeros(&[c, c, 1, 1]), true);
            p.add(format!("adapter{n}.b"), Tensor::zeros(&[c]), true);
        }

        let mut model = UserSal {
            config,
            vocab,
            params: p,
        };
        model.apply_trainability();
        Ok(model)
    }

    /// Rebuild a network around stored parameters; names and shapes must match the configuration.
    pub fn from_params(config: ModelConfig, vocab: Vocabulary, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, vocab, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Shape(format!(
                "{} stored parameters, configuration expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for (_, stored) in params.iter() {
            let id = model
                .params
                .id(&stored.name)
                .ok_or_else(|| ModelError::Shape(format!("unexpected parameter {}", stored.name)))?;
            let slot = &mut model.params.get_mut(id).value;
            if slot.shape() != stored.value.shape() {
                return Err(ModelError::Shape(format!(
                    "{}: stored {:?}, expected {:?}",
                    stored.name,
                    stored.value.shape(),
                    slot.shape()
                )));
            }
            *slot = stored.value.clone();
        }
        Ok(model)
    }

    /// Trainable flags follow the mode: the saliency network only trains when unfrozen.
    fn apply_trainability(&mut self) {
        let cfg = &self.config;
        let flags: Vec<bool> = self
            .params
            .iter()
            .map(|(_, p)| {
                let name = p.name.as_str();
                if name.starts_with(ESM_PREFIX) {
                    !cfg.freeze_esm
                } else if name.starts_with(SME_PREFIX) {
                    false
                } else if name.starts_with("mpl.") {
                    cfg.uses_prompts()
                } else if name.starts_with("asa.") {
                    cfg.uses_asa()
                } else if name.starts_with("adapter") {
                    cfg.freeze_esm
                } else {
                    true
                }
            })
            .collect();
        for (i, f) in flags.into_iter().enumerate() {
            self.params.set_trainable(usersod_tensor::ParamId(i), f);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Mutable parameter access for optimisers; trainable flags are left to the model.
    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Copy the saliency network's weights from `source` and refresh the encoder copy.
    pub fn load_esm(&mut self, source: &UserSal<T>) -> Result<()> {
        if source.config.channel_widths != self.config.channel_widths {
            return Err(ModelError::Config(format!(
                "saliency network widths {:?} differ from {:?}",
                source.config.channel_widths, self.config.channel_widths
            )));
        }
        for (_, p) in source.params.iter().filter(|(_, p)| p.name.starts_with(ESM_PREFIX)) {
            let id = self.params.id(&p.name).expect("same architecture");
            self.params.get_mut(id).value = p.value.clone();
        }
        self.sync_sme();
        Ok(())
    }

    /// Make the image encoder copy bitwise equal to the saliency encoder.
    pub fn sync_sme(&mut self) {
        let pairs: Vec<(usersod_tensor::ParamId, usersod_tensor::ParamId)> = self
            .params
            .iter()
            .filter(|(_, p)| p.name.starts_with(SME_PREFIX))
            .map(|(id, p)| {
                let src = format!("{ESM_PREFIX}{}", &p.name[SME_PREFIX.len()..]);
                (self.params.id(&src).expect("matching encoder parameter"), id)
            })
            .collect();
        for (src, dst) in pairs {
            let v = self.params.value(src).clone();
            self.params.get_mut(dst).value = v;
        }
    }

    /// SHA-256 over the names and values of every parameter whose name starts with `prefix`.
    pub fn param_hash(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (_, p) in self.params.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for &v in p.value.data() {
                h.update(v.f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Add Gaussian noise to every parameter accepted by `select`.
    ///
    /// Used to move zero-initialised projections away from their identity start.
    pub fn perturb(&mut self, seed: u64, std: f64, select: impl Fn(&str) -> bool) {
        let mut init = Init {
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        };
        let ids: Vec<_> = self
            .params
            .iter()
            .filter(|(_, p)| select(&p.name))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let shape = self.params.value(id).shape().to_vec();
            let noise: Tensor<T> = init.normal(&shape, std);
            self.params.get_mut(id).value.add_assign(&noise);
        }
    }

    fn param(&self, g: &mut Graph<T>, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        g.param(&self.params, id)
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, key: &str, stride: usize, pad: usize) -> Var {
        let w = self.param(g, &format!("{key}.w"));
        let b = self.param(g, &format!("{key}.b"));
        g.conv2d(x, w, Some(b), stride, pad)
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let r = self.config.resolution;
        if image.height() != r || image.width() != r {
            return Err(ModelError::Shape(format!(
                "image is {}x{}, model expects {r}x{r}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Encode a command into per-level prompts; the zero need gives the zero stack.
    pub fn encode_command(&self, g: &mut Graph<T>, need: &Need) -> PromptStack {
        let Need::Command(cmd) = need else {
            return PromptStack::Zero;
        };
        let d = self.config.embed_dim;
        let ids = self.vocab.encode(&cmd.text);
        let index: Vec<usize> = ids.iter().flat_map(|&i| (0..d).map(move |j| i * d + j)).collect();
        let table = self.param(g, "mpl.text.embed");
        let rows = g.gather(table, Rc::new(index), &[ids.len(), d]);
        let pooled = g.mean_dim0(rows);
        let pooled = g.reshape(pooled, &[1, d]);
        let active = self.config.active_levels();
        let levels = (0..self.config.levels)
            .map(|l| {
                if !active.contains(&l) {
                    return None;
                }
                let n = l + 1;
                let w = self.param(g, &format!("mpl.text.proj{n}.w"));
                let b = self.param(g, &format!("mpl.text.proj{n}.b"));
                let v = g.matmul(pooled, w, false, false);
                let v = g.add_bias(v, b);
                Some(g.reshape(v, &[self.config.channel_widths[l]]))
            })
            .collect();
        PromptStack::Levels(levels)
    }

    /// The zero stack written out as explicit zero vectors.
    pub fn zero_prompts(&self, g: &mut Graph<T>) -> Vec<Option<Var>> {
        let active = self.config.active_levels();
        (0..self.config.levels)
            .map(|l| {
                active
                    .contains(&l)
                    .then(|| g.constant(Tensor::zeros(&[self.config.channel_widths[l]])))
            })
            .collect()
    }

    /// Run the encoder whose parameters start with `prefix`, injecting prompts after each stage.
    fn encode(&self, g: &mut Graph<T>, image: Var, prefix: &str, prompts: Option<&[Option<Var>]>) -> Vec<Var> {
        let mut h = image;
        let mut out = Vec::with_capacity(self.config.levels);
        for l in 0..self.config.levels {
            let n = l + 1;
            h = self.conv(g, h, &format!("{prefix}stage{n}.conv_a"), 2, 1);
            h = g.relu(h);
            h = self.conv(g, h, &format!("{prefix}stage{n}.conv_b"), 1, 1);
            h = g.relu(h);
            if let Some(Some(p)) = prompts.map(|ps| ps[l]) {
                let side = self.config.level_side(l);
                let pb = g.broadcast_spatial(p, side, side);
                let cat = g.concat(&[h, pb]);
                h = self.conv(g, cat, &format!("mpl.inject{n}"), 1, 0);
            }
            out.push(h);
        }
        out
    }

    /// Encoder features `F_n` of the prompted saliency encoder.
    pub fn esm_encode(&self, g: &mut Graph<T>, image: Var, prompts: &PromptStack) -> Vec<Var> {
        if !self.config.uses_prompts() {
            return self.encode(g, image, ESM_PREFIX, None);
        }
        let levels = match prompts {
            PromptStack::Zero => self.zero_prompts(g),
            PromptStack::Levels(v) => v.clone(),
        };
        self.encode(g, image, ESM_PREFIX, Some(&levels))
    }

    /// Image features `IF_n` from the frozen encoder copy.
    pub fn sme_encode(&self, g: &mut Graph<T>, image: Var) -> Vec<Var> {
        self.encode(g, image, SME_PREFIX, None)
    }

    /// Attention of `query` tokens over `source` tokens, projected back to `[C, H, W]`.
    fn attention(&self, g: &mut Graph<T>, query: Var, source: Var, key: &str, win: usize, shift: usize) -> Var {
        let s = g.shape(query).to_vec();
        let (c, h, w) = (s[0], s[1], s[2]);
        let hw = h * w;
        let d = self.config.attn_dim;
        let (order, inverse, t) = window_order(h, w, win, shift);
        let tok_index: Rc<Vec<usize>> =
            Rc::new(order.iter().flat_map(|&q| (0..c).map(move |ch| ch * hw + q)).collect());
        let tokens = |g: &mut Graph<T>, x: Var| g.gather(x, Rc::clone(&tok_index), &[hw, c]);
        let qt = tokens(g, query);
        let st = if source == query { qt } else { tokens(g, source) };
        let project = |g: &mut Graph<T>, x: Var, name: &str| {
            let wt = self.param(g, &format!("{key}.w{name}"));
            let b = self.param(g, &format!("{key}.b{name}"));
            let y = g.matmul(x, wt, false, false);
            let y = g.add_bias(y, b);
            g.reshape(y, &[hw / t, t, d])
        };
        let q = project(g, qt, "q");
        let k = project(g, st, "k");
        let v = project(g, st, "v");
        let scores = g.matmul(q, k, false, true);
        let scores = g.scale(scores, T::of(1.0 / (d as f64).sqrt()));
        let attn = g.softmax(scores);
        let o = g.matmul(attn, v, false, false);
        let o = g.reshape(o, &[hw, d]);
        let wo = self.param(g, &format!("{key}.wo"));
        let o = g.matmul(o, wo, false, false);
        let back: Vec<usize> = (0..c)
            .flat_map(|ch| inverse.iter().map(move |&p| p * c + ch))
            .collect();
        g.gather(o, Rc::new(back), &[c, h, w])
    }

    fn tsn(&self, g: &mut Graph<T>, x: Var, l: usize) -> Var {
        let key = if self.config.tsn_shared {
            "asa.tsn".to_string()
        } else {
            format!("asa.tsn{}", l + 1)
        };
        let side = self.config.level_side(l);
        match self.config.tsn_variant {
            TsnVariant::Linear => self.conv(g, x, &key, 1, 0),
            TsnVariant::Conv => self.conv(g, x, &key, 1, 1),
            TsnVariant::VitAttention => {
                let a = self.attention(g, x, x, &key, self.config.window, 0);
                g.add(x, a)
            }
            TsnVariant::SwinAttention => {
                let win = self.config.swin_window;
                let shift = if side > win { win / 2 } else { 0 };
                let a = self.attention(g, x, x, &key, win, shift);
                g.add(x, a)
            }
        }
    }

    /// Similarity-gated cross-attention at level `l`: returns `(F', S, IF')`.
    pub fn asa_level(&self, g: &mut Graph<T>, f: Var, image_feat: Var, l: usize) -> (Var, Var, Var) {
        let tf = self.tsn(g, f, l);
        let ti = self.tsn(g, image_feat, l);
        let s = g.cosine_channels(tf, ti);
        let gated = g.mul_spatial(image_feat, s);
        let key = format!("asa.aia{}", l + 1);
        let a = self.attention(g, f, gated, &key, self.config.window, 0);
        (g.add(f, a), s, gated)
    }

    fn adapter(&self, g: &mut Graph<T>, x: Var, l: usize) -> Var {
        let a = self.conv(g, x, &format!("adapter{}", l + 1), 1, 0);
        g.add(x, a)
    }

    /// Top-down decoder from `F'` to a `[1, H, W]` saliency map.
    pub fn decode(&self, g: &mut Graph<T>, features: &[Var]) -> Var {
        let last = self.config.levels - 1;
        let mut d = self.conv(g, features[last], &format!("esm.decoder.stage{}", last + 1), 1, 1);
        d = g.relu(d);
        d = self.adapter(g, d, last);
        for l in (0..last).rev() {
            let up = g.upsample2x(d);
            let cat = g.concat(&[features[l], up]);
            d = self.conv(g, cat, &format!("esm.decoder.stage{}", l + 1), 1, 1);
            d = g.relu(d);
            d = self.adapter(g, d, l);
        }
        let logit = self.conv(g, d, "esm.decoder.head", 1, 0);
        let s = g.sigmoid(logit);
        g.upsample2x(s)
    }

    /// Full forward pass; the command is ignored in base mode.
    pub fn forward(&self, g: &mut Graph<T>, image: &ImageTensor, need: &Need) -> Result<Forward> {
        let prompts = if self.config.uses_prompts() {
            self.encode_command(g, need)
        } else {
            PromptStack::Zero
        };
        self.forward_with_prompts(g, image, &prompts)
    }

    /// Forward pass with prompts supplied by the caller.
    pub fn forward_with_prompts(&self, g: &mut Graph<T>, image: &ImageTensor, prompts: &PromptStack) -> Result<Forward> {
        self.check_image(image)?;
        if let PromptStack::Levels(v) = prompts {
            if v.len() != self.config.levels {
                return Err(ModelError::Config(format!(
                    "{} prompt levels for a {}-level model",
                    v.len(),
                    self.config.levels
                )));
            }
            for (l, p) in v.iter().enumerate() {
                if let Some(p) = p {
                    if g.shape(*p) != [self.config.channel_widths[l]] {
                        return Err(ModelError::Config(format!(
                            "prompt at level {} has shape {:?}, expected [{}]",
                            l + 1,
                            g.shape(*p),
                            self.config.channel_widths[l]
                        )));
                    }
                }
            }
        }
        let x = g.constant(image_tensor(image));
        let encoder = self.esm_encode(g, x, prompts);
        let mut features = encoder.clone();
        let mut similarities = vec![None; self.config.levels];
        let mut gated = vec![None; self.config.levels];
        if self.config.uses_asa() {
            let image_feats = self.sme_encode(g, x);
            for l in self.config.active_levels() {
                let (fp, s, ig) = self.asa_level(g, encoder[l], image_feats[l], l);
                features[l] = fp;
                similarities[l] = Some(s);
                gated[l] = Some(ig);
            }
        }
        let saliency = self.decode(g, &features);
        Ok(Forward {
            saliency,
            encoder,
            features,
            similarities,
            gated,
        })
    }

    /// Conventional saliency: the text input is replaced by explicit zeros.
    pub fn forward_conventional(&self, g: &mut Graph<T>, image: &ImageTensor) -> Result<Forward> {
        let prompts = if self.config.uses_prompts() {
            PromptStack::Levels(self.zero_prompts(g))
        } else {
            PromptStack::Zero
        };
        self.forward_with_prompts(g, image, &prompts)
    }

    pub fn predict(&self, image: &ImageTensor, need: &Need) -> Result<SaliencyMap> {
        let mut g = Graph::inference();
        let out = self.forward(&mut g, image, need)?;
        let data: Vec<f32> = g.value(out.saliency).data().iter().map(|v| v.f64() as f32).collect();
        SaliencyMap::new(image.height(), image.width(), data).map_err(|e| ModelError::Shape(e.to_string()))
    }

    /// Frozen encoding of the target appearance `image ⊙ gt`, one tensor per level.
    pub fn appearance_target(&self, image: &ImageTensor, gt: &BinaryMask) -> Result<Vec<Tensor<T>>> {
        self.check_image(image)?;
        let masked = image.masked(gt).map_err(|e| ModelError::Shape(e.to_string()))?;
        let mut g = Graph::inference();
        let x = g.constant(image_tensor(&masked));
        let feats = self.sme_encode(&mut g, x);
        Ok(feats.into_iter().map(|v| g.value(v).clone()).collect())
    }
}

fn add_attention<T: Real>(p: &mut ParamStore<T>, init: &mut Init, key: &str, c: usize, d: usize) {
    let std = (1.0 / c as f64).sqrt();
    for name in ["q", "k", "v"] {
        p.add(format!("{key}.w{name}"), init.normal(&[c, d], std), true);
        p.add(format!("{key}.b{name}"), Tensor::zeros(&[d]), true);
    }
    // Zero output projection: the attention branch starts as a no-op.
    p.add(format!("{key}.wo"), Tensor::zeros(&[d, c]), true);
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Base => "base",
            Mode::Usersal => "usersal",
            Mode::UsersalPlus => "usersal_plus",
        }
    }
}
