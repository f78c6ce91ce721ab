//! The desk-scale causal transformer.
//!
//! Byte-token and learned absolute position embeddings, `n_layers` pre-norm
//! blocks of multi-head causal attention (`q/k/v/o_proj`) and a SiLU-gated
//! feed-forward (`gate/up/down_proj`), a final RMS norm and `lm_head`. Every
//! linear map is an [`AdaptedLinear`]. Classification is generative: class
//! scores are the `lm_head` logits of the label verbalizer tokens at the
//! last prompt position.
//!
//! An attached [`AdapterSet`] owns the LoRA factors and, optionally, its own
//! copies of `embed_tokens` and `lm_head` (the fully trained modules). The
//! model's own embedding and head are never written, so detaching restores
//! the base model bit for bit.

mod checkpoint;

pub use checkpoint::ModelCheckpoint;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::tokenizer::{label_token, MIN_VOCAB};
use crate::error::{Error, Result};
use crate::hierarchy::Level;
use crate::lora::{
    self, init_lora_with, AdaptedLinear, ArchEntry, BoundFactors, LoraConfig, LoraFactors, TargetModule,
};
use crate::numerics::{Graph, Tensor, Var};

pub const EMBED_TOKENS: &str = "embed_tokens";
pub const LM_HEAD: &str = "lm_head";
/// Modules trained in full alongside the adapters.
pub const MODULES_TO_SAVE: [&str; 2] = [LM_HEAD, EMBED_TOKENS];

const BLOCK_TARGETS: [TargetModule; 7] = [
    TargetModule::QProj,
    TargetModule::KProj,
    TargetModule::VProj,
    TargetModule::OProj,
    TargetModule::GateProj,
    TargetModule::UpProj,
    TargetModule::DownProj,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    /// Store frozen block weights 4-bit quantized.
    pub quantize_base: bool,
    pub quant_block_size: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 288,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_seq: 128,
            quantize_base: true,
            quant_block_size: lora::DEFAULT_BLOCK_SIZE,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
            ("quant_block_size", self.quant_block_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the {MIN_VOCAB} reserved tokens",
                self.vocab_size
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Every weight matrix of the base model, in checkpoint order.
    pub fn arch_listing(&self) -> Vec<ArchEntry> {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let mut out = vec![
            ArchEntry::new(EMBED_TOKENS, EMBED_TOKENS, v, d, false),
            ArchEntry::new("embed_positions", "embed_positions", self.max_seq, d, false),
        ];
        for l in 0..self.n_layers {
            out.push(ArchEntry::new(format!("layers.{l}.attn_norm"), "norm", 1, d, false));
            for t in BLOCK_TARGETS {
                let (o, i) = match t {
                    TargetModule::GateProj | TargetModule::UpProj => (f, d),
                    TargetModule::DownProj => (d, f),
                    _ => (d, d),
                };
                out.push(ArchEntry::new(format!("layers.{l}.{t}"), t.as_str(), o, i, true));
            }
            out.push(ArchEntry::new(format!("layers.{l}.ffn_norm"), "norm", 1, d, false));
        }
        out.push(ArchEntry::new("final_norm", "norm", 1, d, false));
        out.push(ArchEntry::new(LM_HEAD, LM_HEAD, v, d, true));
        out
    }

    pub fn n_params(&self) -> usize {
        self.arch_listing().iter().map(ArchEntry::size).sum()
    }
}

/// Per-adapter copies of the fully trained modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModules {
    pub embed_tokens: Tensor,
    pub lm_head: Tensor,
}

/// A named set of LoRA factors keyed by layer name (`layers.0.q_proj`, ...,
/// `lm_head`) plus optional saved-module copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub name: String,
    pub config: LoraConfig,
    pub factors: BTreeMap<String, LoraFactors>,
    pub saved: Option<SavedModules>,
}

impl AdapterSet {
    pub fn n_params(&self) -> usize {
        let lora: usize = self.factors.values().map(LoraFactors::n_params).sum();
        let saved = self
            .saved
            .as_ref()
            .map_or(0, |s| s.embed_tokens.len() + s.lm_head.len());
        lora + saved
    }

    /// Standalone checkpoint of this set against the given base.
    pub fn checkpoint(&self, base_hash: &str) -> lora::AdapterCheckpoint {
        let mut saved = BTreeMap::new();
        if let Some(s) = &self.saved {
            saved.insert(EMBED_TOKENS.to_string(), s.embed_tokens.clone());
            saved.insert(LM_HEAD.to_string(), s.lm_head.clone());
        }
        lora::AdapterCheckpoint {
            version: lora::CHECKPOINT_VERSION,
            base_hash: base_hash.to_string(),
            config: self.config.clone(),
            factors: self.factors.clone(),
            saved,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Adapter dropout active.
    Train,
}

#[derive(Clone, Debug)]
struct Block {
    attn_norm: Tensor,
    ffn_norm: Tensor,
    /// q, k, v, o, gate, up, down
    linears: Vec<AdaptedLinear>,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    seed: u64,
    embed: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    final_norm: Tensor,
    lm_head: AdaptedLinear,
    active: Option<ActiveSet>,
}

#[derive(Clone, Debug)]
struct ActiveSet {
    name: String,
    config: LoraConfig,
    saved: Option<SavedModules>,
}

/// Leaves of one forward pass.
pub struct Bound {
    /// Indexed like [`Model::layer_names`].
    factors: Vec<Option<BoundFactors>>,
    embed: Var,
    lm_head: Var,
    /// Trainable leaves in [`Model::trainable_names`] order.
    pub params: Vec<Var>,
}

impl Model {
    /// Deterministic construction from `seed`; no adapter attached.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let embed = Tensor::randn(&[v, d], 0.02, &mut rng);
        let pos = Tensor::randn(&[cfg.max_seq, d], 0.01, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let mut linears = Vec::with_capacity(7);
            for t in BLOCK_TARGETS {
                let (o, i) = match t {
                    TargetModule::GateProj | TargetModule::UpProj => (f, d),
                    TargetModule::DownProj => (d, f),
                    _ => (d, d),
                };
                let w = Tensor::randn(&[o, i], 1.0 / (i as f64).sqrt(), &mut rng);
                linears.push(if cfg.quantize_base {
                    AdaptedLinear::quantized(t, &w, cfg.quant_block_size)?
                } else {
                    AdaptedLinear::plain(t, w)?
                });
            }
            blocks.push(Block {
                attn_norm: Tensor::filled(&[d], 1.0),
                ffn_norm: Tensor::filled(&[d], 1.0),
                linears,
            });
        }
        let mut head = Tensor::randn(&[v, d], 1.0 / (d as f64).sqrt(), &mut rng);
        // Label rows start at zero so every class score is equal before training.
        for level in Level::ALL {
            for &l in level.labels() {
                let t = label_token(l);
                head.data_mut()[t * d..(t + 1) * d].fill(0.0);
            }
        }
        Ok(Model {
            cfg: cfg.clone(),
            seed,
            embed,
            pos,
            blocks,
            final_norm: Tensor::filled(&[d], 1.0),
            lm_head: AdaptedLinear::plain(TargetModule::LmHead, head)?,
            active: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Adapted layers, blocks first then `lm_head`.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.blocks.len())
            .flat_map(|l| BLOCK_TARGETS.iter().map(move |t| format!("layers.{l}.{t}")))
            .collect();
        names.push(LM_HEAD.to_string());
        names
    }

    fn layers(&self) -> impl Iterator<Item = &AdaptedLinear> {
        self.blocks
            .iter()
            .flat_map(|b| b.linears.iter())
            .chain(std::iter::once(&self.lm_head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut AdaptedLinear> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.linears.iter_mut())
            .chain(std::iter::once(&mut self.lm_head))
    }

    pub fn layer(&self, name: &str) -> Option<&AdaptedLinear> {
        let idx = self.layer_names().iter().position(|n| n == name)?;
        self.layers().nth(idx)
    }

    /// Fresh factors for every adapted layer, plus saved-module copies when
    /// `with_saved` is set.
    pub fn new_adapter_set(&self, name: &str, cfg: &LoraConfig, with_saved: bool) -> Result<AdapterSet> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut factors = BTreeMap::new();
        for (n, layer) in self.layer_names().into_iter().zip(self.layers()) {
            factors.insert(n, init_lora_with(layer.d_out(), layer.d_in(), cfg, &mut rng)?);
        }
        Ok(AdapterSet {
            name: name.to_string(),
            config: cfg.clone(),
            factors,
            saved: with_saved.then(|| SavedModules {
                embed_tokens: self.embed.clone(),
                lm_head: self.lm_head.weight().clone(),
            }),
        })
    }

    /// Makes `set` the single active adapter set, returning the previous one.
    pub fn attach(&mut self, set: AdapterSet) -> Result<Option<AdapterSet>> {
        let names = self.layer_names();
        for (key, f) in &set.factors {
            let idx = names
                .iter()
                .position(|n| n == key)
                .ok_or_else(|| Error::Config(format!("adapter names unknown layer {key:?}")))?;
            let layer = self.layers().nth(idx).expect("index from names");
            if f.d_in() != layer.d_in() || f.d_out() != layer.d_out() {
                return Err(Error::Config(format!(
                    "{key}: adapter {}×{} does not fit layer {}×{}",
                    f.d_out(),
                    f.d_in(),
                    layer.d_out(),
                    layer.d_in()
                )));
            }
        }
        if let Some(s) = &set.saved {
            let want = [self.cfg.vocab_size, self.cfg.d_model];
            if s.embed_tokens.shape() != want || s.lm_head.shape() != want {
                return Err(Error::Config("saved modules do not match the model dims".into()));
            }
        }
        let previous = self.detach();
        let AdapterSet {
            name,
            config,
            mut factors,
            saved,
        } = set;
        for (n, layer) in names.iter().zip(self.layers_mut()) {
            if let Some(f) = factors.remove(n) {
                layer.attach(f)?;
            }
        }
        self.active = Some(ActiveSet { name, config, saved });
        Ok(previous)
    }

    pub fn detach(&mut self) -> Option<AdapterSet> {
        let active = self.active.take()?;
        let names = self.layer_names();
        let mut factors = BTreeMap::new();
        for (n, layer) in names.into_iter().zip(self.layers_mut()) {
            if let Some(f) = layer.detach() {
                factors.insert(n, f);
            }
        }
        Some(AdapterSet {
            name: active.name,
            config: active.config,
            factors,
            saved: active.saved,
        })
    }

    pub fn active_name(&self) -> Option<&str> {
        self.active.as_ref().map(|a| a.name.as_str())
    }

    pub fn active_saved(&self) -> Option<&SavedModules> {
        self.active.as_ref().and_then(|a| a.saved.as_ref())
    }

    /// Names of trainable tensors in binding order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (n, layer) in self.layer_names().into_iter().zip(self.layers()) {
            if layer.active().is_some() {
                out.push(format!("{n}.lora_a"));
                out.push(format!("{n}.lora_b"));
            }
        }
        if self.active_saved().is_some() {
            out.push(EMBED_TOKENS.to_string());
            out.push(format!("{LM_HEAD}.weight"));
        }
        out
    }

    pub fn trainable_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in self.layers() {
            if let Some(f) = layer.active() {
                out.push(&f.a);
                out.push(&f.b);
            }
        }
        if let Some(s) = self.active_saved() {
            out.push(&s.embed_tokens);
            out.push(&s.lm_head);
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let saved = self.active.as_mut().and_then(|a| a.saved.as_mut());
        for layer in self
            .blocks
            .iter_mut()
            .flat_map(|b| b.linears.iter_mut())
            .chain(std::iter::once(&mut self.lm_head))
        {
            if let Some(f) = layer.active_mut() {
                out.push(&mut f.a);
                out.push(&mut f.b);
            }
        }
        if let Some(s) = saved {
            out.push(&mut s.embed_tokens);
            out.push(&mut s.lm_head);
        }
        out
    }

    /// Records every weight on `g`; trainable tensors become gradient leaves
    /// when `trainable` is set.
    pub fn bind<'w>(&'w self, g: &mut Graph<'w>, trainable: bool) -> Bound {
        let vars: Vec<Var> = self
            .trainable_tensors()
            .into_iter()
            .map(|t| g.leaf_ref(t, trainable))
            .collect();
        self.bind_params(g, &vars).expect("vars built from trainable_tensors")
    }

    /// Like [`bind`](Self::bind) but with caller-provided leaves for the
    /// trainable tensors (in [`trainable_names`](Self::trainable_names) order).
    pub fn bind_params<'w>(&'w self, g: &mut Graph<'w>, params: &[Var]) -> Result<Bound> {
        let expected = self.trainable_tensors().len();
        if params.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} trainable leaves, got {}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut factors = Vec::new();
        for layer in self.layers() {
            factors.push(layer.active().map(|f| BoundFactors {
                a: it.next().expect("counted"),
                b: it.next().expect("counted"),
                scaling: f.scaling,
            }));
        }
        let (embed, lm_head) = if self.active_saved().is_some() {
            (it.next().expect("counted"), it.next().expect("counted"))
        } else {
            (g.leaf_ref(&self.embed, false), g.leaf_ref(self.lm_head.weight(), false))
        };
        Ok(Bound {
            factors,
            embed,
            lm_head,
            params: params.to_vec(),
        })
    }

    fn dropout(&self, mode: Mode) -> f64 {
        match (mode, &self.active) {
            (Mode::Train, Some(a)) => a.config.dropout,
            _ => 0.0,
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        if tokens.len() > self.cfg.max_seq {
            return Err(Error::Data(format!(
                "sequence of {} tokens exceeds max_seq {}",
                tokens.len(),
                self.cfg.max_seq
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Data(format!(
                "token id {t} >= vocab_size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Final-normed hidden states `[seq × d_model]`.
    pub fn hidden<'w, R: Rng + ?Sized>(
        &'w self,
        g: &mut Graph<'w>,
        bound: &Bound,
        tokens: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let d = self.cfg.d_model;
        let dh = d / self.cfg.n_heads;
        let p = self.dropout(mode);
        let positions: Vec<usize> = (0..t).collect();

        let tok = g.gather_rows(bound.embed, tokens)?;
        let pos_table = g.leaf_ref(&self.pos, false);
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut x = g.add(tok, pos)?;

        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for (bi, block) in self.blocks.iter().enumerate() {
            let f = &bound.factors[bi * 7..bi * 7 + 7];
            let lin = |g: &mut Graph<'w>, x: Var, j: usize, rng: &mut R| -> Result<Var> {
                let w = g.leaf_ref(block.linears[j].weight(), false);
                lora::linear(g, x, w, f[j], p, rng)
            };

            let gain = g.leaf_ref(&block.attn_norm, false);
            let h = g.rms_norm(x, gain, self.cfg.norm_eps)?;
            let q = lin(g, h, 0, rng)?;
            let k = lin(g, h, 1, rng)?;
            let v = lin(g, h, 2, rng)?;
            let mut heads = Vec::with_capacity(self.cfg.n_heads);
            for hi in 0..self.cfg.n_heads {
                let qh = g.slice_cols(q, hi * dh, dh)?;
                let kh = g.slice_cols(k, hi * dh, dh)?;
                let vh = g.slice_cols(v, hi * dh, dh)?;
                let scores = g.matmul_bt(qh, kh)?;
                let scores = g.scale(scores, inv_sqrt);
                let attn = g.causal_softmax(scores)?;
                heads.push(g.matmul(attn, vh)?);
            }
            let merged = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            };
            let a = lin(g, merged, 3, rng)?;
            x = g.add(x, a)?;

            let gain = g.leaf_ref(&block.ffn_norm, false);
            let h = g.rms_norm(x, gain, self.cfg.norm_eps)?;
            let gate = lin(g, h, 4, rng)?;
            let up = lin(g, h, 5, rng)?;
            let act = g.silu(gate);
            let m = g.mul(act, up)?;
            let down = lin(g, m, 6, rng)?;
            x = g.add(x, down)?;
        }
        let gain = g.leaf_ref(&self.final_norm, false);
        g.rms_norm(x, gain, self.cfg.norm_eps)
    }

    /// `lm_head` applied to hidden rows.
    pub fn head<'w, R: Rng + ?Sized>(
        &'w self,
        g: &mut Graph<'w>,
        bound: &Bound,
        hidden: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let f = *bound.factors.last().expect("lm_head slot");
        lora::linear(g, hidden, bound.lm_head, f, self.dropout(mode), rng)
    }

    /// Verbalizer scores `[1 × n_classes]` read at the last position.
    pub fn class_scores<'w, R: Rng + ?Sized>(
        &'w self,
        g: &mut Graph<'w>,
        bound: &Bound,
        tokens: &[usize],
        level: Level,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.hidden(g, bound, tokens, mode, rng)?;
        let last = g.gather_rows(h, &[tokens.len() - 1])?;
        let logits = self.head(g, bound, last, mode, rng)?;
        g.gather_cols(logits, &verbalizer_ids(level))
    }

    /// Logits `[seq × vocab]` at every position.
    pub fn forward(&self, tokens: &[usize], mode: Mode, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let h = self.hidden(&mut g, &bound, tokens, mode, &mut rng)?;
        let logits = self.head(&mut g, &bound, h, mode, &mut rng)?;
        g.check_finite(logits, "logits")?;
        Ok(g.value(logits).clone())
    }

    /// Eval-mode verbalizer scores for `level`.
    pub fn class_logits(&self, tokens: &[usize], level: u8) -> Result<Vec<f64>> {
        let level = Level::new(level)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let s = self.class_scores(&mut g, &bound, tokens, level, Mode::Eval, &mut rng)?;
        g.check_finite(s, "class scores")?;
        Ok(g.value(s).data().to_vec())
    }

    /// A plain-storage model with the active adapter folded into its
    /// weights and the saved modules promoted to the base.
    pub fn merged(&self) -> Result<Model> {
        let mut out = self.clone();
        out.active = None;
        out.cfg.quantize_base = false;
        for (dst, src) in out.layers_mut().zip(self.layers()) {
            let w = match src.active() {
                Some(_) => lora::merge(src)?,
                None => src.weight().clone(),
            };
            *dst = AdaptedLinear::plain(src.name(), w)?;
        }
        if let Some(s) = self.active_saved() {
            out.embed = s.embed_tokens.clone();
            let w = match self.lm_head.active() {
                Some(f) => s.lm_head.add_scaled(&f.delta(), 1.0)?,
                None => s.lm_head.clone(),
            };
            out.lm_head = AdaptedLinear::plain(TargetModule::LmHead, w)?;
        }
        Ok(out)
    }

    /// SHA-256 over the config and every base tensor; adapters excluded.
    pub fn base_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.cfg).expect("config serializes"));
        h.update(self.embed.to_le_bytes());
        h.update(self.pos.to_le_bytes());
        for b in &self.blocks {
            h.update(b.attn_norm.to_le_bytes());
            h.update(b.ffn_norm.to_le_bytes());
            for l in &b.linears {
                h.update(l.base_bytes());
            }
        }
        h.update(self.final_norm.to_le_bytes());
        h.update(self.lm_head.base_bytes());
        hex::encode(h.finalize())
    }

    /// Frozen base weights (everything except the active adapter set).
    pub fn base_weights(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (EMBED_TOKENS.to_string(), &self.embed),
            ("embed_positions".to_string(), &self.pos),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("layers.{l}.attn_norm"), &b.attn_norm));
            out.push((format!("layers.{l}.ffn_norm"), &b.ffn_norm));
            for lin in &b.linears {
                out.push((format!("layers.{l}.{}", lin.name()), lin.weight()));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push((LM_HEAD.to_string(), self.lm_head.weight()));
        out
    }
}

/// Vocabulary ids of the verbalizer tokens of `level`, in class order.
pub fn verbalizer_ids(level: Level) -> Vec<usize> {
    level.labels().iter().map(|&l| label_token(l)).collect()
}
