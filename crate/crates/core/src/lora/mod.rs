//! Low-rank adapters on frozen linear maps.
//!
//! An [`AdaptedLinear`] computes `x·W₀ᵀ + (α/r)·(dropout(x)·Aᵀ)·Bᵀ`. The base
//! `W₀` is frozen and may be stored 4-bit quantized; the factors start with
//! `A = 0` and `B ~ N(0, σ²)` so the adapter is an exact no-op at creation.

mod checkpoint;
mod count;
mod quant;

pub use checkpoint::{AdapterCheckpoint, CHECKPOINT_VERSION};
pub use count::{count_trainable, ArchEntry, TrainableCount};
pub use quant::{dequantize, quantize, QuantizedMatrix, DEFAULT_BLOCK_SIZE};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 16,
            alpha: 16.0,
            dropout: 0.1,
            init_sigma: 0.02,
            seed: 0,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "LoRA alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("LoRA dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::Config(format!(
                "init_sigma must be positive, got {}",
                self.init_sigma
            )));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// The eight linear-layer tags that carry adapters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetModule {
    QProj,
    KProj,
    VProj,
    OProj,
    GateProj,
    UpProj,
    DownProj,
    LmHead,
}

impl TargetModule {
    pub const ALL: [TargetModule; 8] = [
        TargetModule::QProj,
        TargetModule::KProj,
        TargetModule::VProj,
        TargetModule::OProj,
        TargetModule::GateProj,
        TargetModule::UpProj,
        TargetModule::DownProj,
        TargetModule::LmHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetModule::QProj => "q_proj",
            TargetModule::KProj => "k_proj",
            TargetModule::VProj => "v_proj",
            TargetModule::OProj => "o_proj",
            TargetModule::GateProj => "gate_proj",
            TargetModule::UpProj => "up_proj",
            TargetModule::DownProj => "down_proj",
            TargetModule::LmHead => "lm_head",
        }
    }
}

impl fmt::Display for TargetModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetModule::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown target module {s:?}")))
    }
}

/// One `(B, A)` pair with its scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraFactors {
    /// `d_out × r`
    pub b: Tensor,
    /// `r × d_in`
    pub a: Tensor,
    pub scaling: f64,
}

impl LoraFactors {
    pub fn d_out(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `scaling · B · A`
    pub fn delta(&self) -> Tensor {
        let mut ba = self.b.matmul(&self.a).expect("factor shapes agree");
        for v in ba.data_mut() {
            *v *= self.scaling;
        }
        ba
    }
}

/// Fresh factors seeded from `cfg.seed`.
pub fn init_lora(d_out: usize, d_in: usize, cfg: &LoraConfig) -> Result<LoraFactors> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_lora_with(d_out, d_in, cfg, &mut rng)
}

pub fn init_lora_with<R: Rng + ?Sized>(
    d_out: usize,
    d_in: usize,
    cfg: &LoraConfig,
    rng: &mut R,
) -> Result<LoraFactors> {
    cfg.validate()?;
    if d_out == 0 || d_in == 0 {
        return Err(Error::Config(format!(
            "layer dims must be positive, got {d_out}×{d_in}"
        )));
    }
    Ok(LoraFactors {
        b: Tensor::randn(&[d_out, cfg.rank], cfg.init_sigma, rng),
        a: Tensor::zeros(&[cfg.rank, d_in]),
        scaling: cfg.scaling(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseStorage {
    Plain,
    Quantized(QuantizedMatrix),
}

/// A frozen linear map `d_in → d_out` with an optional active adapter.
#[derive(Clone, Debug)]
pub struct AdaptedLinear {
    name: TargetModule,
    storage: BaseStorage,
    /// Dense `W₀` used for compute (the dequantized payload when quantized).
    weight: Tensor,
    active: Option<LoraFactors>,
}

impl AdaptedLinear {
    pub fn plain(name: TargetModule, weight: Tensor) -> Result<Self> {
        weight.require_2d("AdaptedLinear")?;
        Ok(AdaptedLinear {
            name,
            storage: BaseStorage::Plain,
            weight,
            active: None,
        })
    }

    pub fn quantized(name: TargetModule, weight: &Tensor, block_size: usize) -> Result<Self> {
        weight.require_2d("AdaptedLinear")?;
        let q = quantize(weight, block_size)?;
        Ok(Self::from_quantized(name, q))
    }

    pub fn from_quantized(name: TargetModule, q: QuantizedMatrix) -> Self {
        AdaptedLinear {
            name,
            weight: dequantize(&q),
            storage: BaseStorage::Quantized(q),
            active: None,
        }
    }

    pub fn name(&self) -> TargetModule {
        self.name
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.storage, BaseStorage::Quantized(_))
    }

    pub fn storage(&self) -> &BaseStorage {
        &self.storage
    }

    /// Dense frozen weight, `d_out × d_in`.
    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn active(&self) -> Option<&LoraFactors> {
        self.active.as_ref()
    }

    pub fn active_mut(&mut self) -> Option<&mut LoraFactors> {
        self.active.as_mut()
    }

    /// Installs `factors`, returning whatever was active before.
    pub fn attach(&mut self, factors: LoraFactors) -> Result<Option<LoraFactors>> {
        if factors.d_in() != self.d_in() || factors.d_out() != self.d_out() || factors.b.shape()[1] != factors.rank() {
            return Err(Error::Config(format!(
                "{}: adapter {}×{} (rank {}) does not fit a {}×{} layer",
                self.name,
                factors.d_out(),
                factors.d_in(),
                factors.rank(),
                self.d_out(),
                self.d_in()
            )));
        }
        Ok(self.active.replace(factors))
    }

    pub fn detach(&mut self) -> Option<LoraFactors> {
        self.active.take()
    }

    /// Bytes that define the frozen base, for content hashing.
    pub fn base_bytes(&self) -> Vec<u8> {
        let mut out = self.name.as_str().as_bytes().to_vec();
        match &self.storage {
            BaseStorage::Plain => out.extend(self.weight.to_le_bytes()),
            BaseStorage::Quantized(q) => out.extend(q.to_le_bytes()),
        }
        out
    }

    /// Records this layer on `g`, binding the active factors as trainable
    /// leaves when `trainable` is set.
    pub fn forward_graph<'w, R: Rng + ?Sized>(
        &'w self,
        g: &mut Graph<'w>,
        x: Var,
        trainable: bool,
        train_mode: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let w = g.leaf_ref(&self.weight, false);
        let bound = self.active.as_ref().map(|f| BoundFactors::bind(g, f, trainable));
        let p = if train_mode { dropout } else { 0.0 };
        linear(g, x, w, bound, p, rng)
    }
}

/// Factors already recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundFactors {
    pub a: Var,
    pub b: Var,
    pub scaling: f64,
}

impl BoundFactors {
    pub fn bind<'w>(g: &mut Graph<'w>, f: &'w LoraFactors, trainable: bool) -> Self {
        BoundFactors {
            a: g.leaf_ref(&f.a, trainable),
            b: g.leaf_ref(&f.b, trainable),
            scaling: f.scaling,
        }
    }
}

/// `x·Wᵀ + scaling·(dropout(x)·Aᵀ)·Bᵀ`; dropout only touches the adapter path.
pub fn linear<R: Rng + ?Sized>(
    g: &mut Graph<'_>,
    x: Var,
    weight: Var,
    lora: Option<BoundFactors>,
    dropout: f64,
    rng: &mut R,
) -> Result<Var> {
    let base = g.matmul_bt(x, weight)?;
    let Some(f) = lora else { return Ok(base) };
    let xd = g.dropout(x, dropout, rng)?;
    let down = g.matmul_bt(xd, f.a)?;
    let up = g.matmul_bt(down, f.b)?;
    let up = if f.scaling == 1.0 { up } else { g.scale(up, f.scaling) };
    g.add(base, up)
}

/// Untracked adapted forward of `x: [n×d_in]`.
pub fn forward_adapted<R: Rng + ?Sized>(
    x: &Tensor,
    layer: &AdaptedLinear,
    train_mode: bool,
    dropout: f64,
    rng: &mut R,
) -> Result<Tensor> {
    x.require_2d("forward_adapted")?;
    if x.cols() != layer.d_in() {
        return Err(Error::dim("forward_adapted", x.shape(), layer.weight.shape()));
    }
    let mut g = Graph::new();
    let xv = g.leaf_ref(x, false);
    let y = layer.forward_graph(&mut g, xv, false, train_mode, dropout, rng)?;
    Ok(g.value(y).clone())
}

/// Base-only forward `x·W₀ᵀ`.
pub fn forward_base(x: &Tensor, layer: &AdaptedLinear) -> Result<Tensor> {
    x.matmul(&layer.weight.transpose()?)
}

/// `dequantize(W₀) + scaling·B·A`.
pub fn merge(layer: &AdaptedLinear) -> Result<Tensor> {
    let f = layer
        .active
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("{}: merge needs active factors", layer.name)))?;
    layer.weight.add_scaled(&f.delta(), 1.0)
}
