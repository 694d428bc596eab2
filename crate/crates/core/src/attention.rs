//! Spatial, temporal and coupled multi-head self-attention and the
//! spatial-temporal encoder built from them.
//!
//! Feature tensors are `(B, T, N, d)`: clips, frames, patches (class token
//! first) and channels. The three attention modes share one implementation and
//! differ only in how the token axes are regrouped before attending:
//!
//! | mode     | groups   | sequence | map shape per clip |
//! |----------|----------|----------|--------------------|
//! | spatial  | B·T      | N        | `(T, H, N, N)`     |
//! | temporal | B·N      | T        | `(N, H, T, T)`     |
//! | coupled  | B        | T·N      | `(H, TN, TN)`      |

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::nn::{join, normal, LayerNorm, Linear, Mlp, Module};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Spatial,
    Temporal,
    Coupled,
}

impl AttentionMode {
    pub fn name(self) -> &'static str {
        match self {
            AttentionMode::Spatial => "spatial",
            AttentionMode::Temporal => "temporal",
            AttentionMode::Coupled => "coupled",
        }
    }
}

/// Multi-head self-attention with separate query/key/value/output maps.
#[derive(Debug, Clone)]
pub struct MsaLayer {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MsaLayer {
    pub fn new(rng: &mut impl Rng, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::IndivisibleWidth { width: d, heads });
        }
        Ok(MsaLayer {
            heads,
            query: Linear::xavier(rng, d, d)?,
            key: Linear::xavier(rng, d, d)?,
            value: Linear::xavier(rng, d, d)?,
            output: Linear::xavier(rng, d, d)?,
        })
    }

    pub fn width(&self) -> usize {
        self.query.in_features()
    }

    /// Scaled dot-product attention within each group of `x: (G, L, d)`.
    /// Returns the projected output `(G, L, d)` and the weights `(G, H, L, L)`.
    fn attend(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (g, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if d != self.width() || d % self.heads != 0 {
            return Err(Error::IndivisibleWidth {
                width: d,
                heads: self.heads,
            });
        }
        let h = self.heads;
        let dh = d / h;
        let split = |t: Tensor| t.reshape(&[g, l, h, dh]);
        let q = split(self.query.forward(x)?)?.transpose(&[0, 2, 1, 3])?;
        let k_t = split(self.key.forward(x)?)?.transpose(&[0, 2, 3, 1])?;
        let v = split(self.value.forward(x)?)?.transpose(&[0, 2, 1, 3])?;
        let scores = q.matmul(&k_t)?.scale(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax(3)?;
        let mixed = weights.matmul(&v)?.transpose(&[0, 2, 1, 3])?.reshape(&[g, l, d])?;
        Ok((self.output.forward(&mixed)?, weights))
    }

    /// Attends over `x: (T, N, d)` or `(B, T, N, d)` in the given mode.
    ///
    /// The output has the input's shape; the maps are `(T, H, N, N)`,
    /// `(N, H, T, T)` or `(H, TN, TN)`, with a leading `B` for batched input.
    pub fn forward(&self, x: &Tensor, mode: AttentionMode) -> Result<(Tensor, Tensor)> {
        let batched = match x.rank() {
            3 => false,
            4 => true,
            _ => {
                return Err(crate::tensor::TensorError::ShapeMismatch {
                    op: "msa",
                    lhs: x.shape().to_vec(),
                    rhs: vec![self.width()],
                }
                .into())
            }
        };
        let x4 = if batched {
            x.clone()
        } else {
            x.reshape(&[1, x.shape()[0], x.shape()[1], x.shape()[2]])?
        };
        let (b, t, n, d) = (x4.shape()[0], x4.shape()[1], x4.shape()[2], x4.shape()[3]);
        let h = self.heads;
        let (y, maps, map_shape) = match mode {
            AttentionMode::Spatial => {
                let (y, w) = self.attend(&x4.reshape(&[b * t, n, d])?)?;
                (y.reshape(&[b, t, n, d])?, w, vec![b, t, h, n, n])
            }
            AttentionMode::Temporal => {
                let grouped = x4.transpose(&[0, 2, 1, 3])?.reshape(&[b * n, t, d])?;
                let (y, w) = self.attend(&grouped)?;
                let y = y.reshape(&[b, n, t, d])?.transpose(&[0, 2, 1, 3])?;
                (y, w, vec![b, n, h, t, t])
            }
            AttentionMode::Coupled => {
                let (y, w) = self.attend(&x4.reshape(&[b, t * n, d])?)?;
                (y.reshape(&[b, t, n, d])?, w, vec![b, h, t * n, t * n])
            }
        };
        let map_shape = if batched { map_shape } else { map_shape[1..].to_vec() };
        let maps = maps.detach().reshape(&map_shape)?;
        let y = if batched { y } else { y.reshape(x.shape())? };
        Ok((y, maps))
    }
}

impl Module for MsaLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// How a block combines spatial and temporal attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    SpatialOnly,
    TemporalOnly,
    Series,
    ParallelV1,
    ParallelV2,
    Coupling,
}

impl Topology {
    pub const ALL: [Topology; 6] = [
        Topology::SpatialOnly,
        Topology::TemporalOnly,
        Topology::Series,
        Topology::ParallelV1,
        Topology::ParallelV2,
        Topology::Coupling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Topology::SpatialOnly => "spatial-only",
            Topology::TemporalOnly => "temporal-only",
            Topology::Series => "series",
            Topology::ParallelV1 => "parallel-v1",
            Topology::ParallelV2 => "parallel-v2",
            Topology::Coupling => "coupling",
        }
    }

    fn uses_spatial(self) -> bool {
        matches!(
            self,
            Topology::SpatialOnly | Topology::Series | Topology::ParallelV1 | Topology::ParallelV2
        )
    }

    fn uses_temporal(self) -> bool {
        matches!(
            self,
            Topology::TemporalOnly | Topology::Series | Topology::ParallelV1 | Topology::ParallelV2
        )
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder topology {s:?}")))
    }
}

/// One encoder block: `u = x + Mix(norm(x))`, `y = u + MLP(norm(u))`.
#[derive(Debug, Clone)]
pub struct SteBlock {
    pub topology: Topology,
    pub norm1: LayerNorm,
    pub msa_s: Option<MsaLayer>,
    pub msa_t: Option<MsaLayer>,
    pub msa_c: Option<MsaLayer>,
    /// Second pre-norm of a series block, in front of the temporal attention.
    pub norm_t: Option<LayerNorm>,
    /// Shared map from a branch's class-token feature to per-channel logits.
    pub gate: Option<Linear>,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    /// Skip temporal attention on single-frame input.
    pub temporal_bypass: bool,
    /// Replaces the learned temporal weight of a parallel-v2 block by a constant.
    pub forced_temporal_weight: Option<f64>,
}

/// Attention weights recorded by one branch of one block.
#[derive(Debug, Clone)]
pub struct MapEntry {
    pub block: usize,
    pub mode: AttentionMode,
    pub maps: Tensor,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub y: Tensor,
    pub maps: Vec<(AttentionMode, Tensor)>,
    /// `(alpha_s, alpha_t)`, each `(B, T, 1, d)`, for parallel-v2 blocks that mixed both branches.
    pub gate: Option<(Tensor, Tensor)>,
}

impl SteBlock {
    pub fn new(rng: &mut impl Rng, topology: Topology, d: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        let msa_s = topology
            .uses_spatial()
            .then(|| MsaLayer::new(rng, d, heads))
            .transpose()?;
        let msa_t = topology
            .uses_temporal()
            .then(|| MsaLayer::new(rng, d, heads))
            .transpose()?;
        let msa_c = (topology == Topology::Coupling)
            .then(|| MsaLayer::new(rng, d, heads))
            .transpose()?;
        let norm_t = (topology == Topology::Series).then(|| LayerNorm::new(d)).transpose()?;
        let gate = (topology == Topology::ParallelV2)
            .then(|| Linear::xavier(rng, d, d))
            .transpose()?;
        Ok(SteBlock {
            topology,
            norm1: LayerNorm::new(d)?,
            msa_s,
            msa_t,
            msa_c,
            norm_t,
            gate,
            norm2: LayerNorm::new(d)?,
            mlp: Mlp::new(rng, d, mlp_ratio * d)?,
            temporal_bypass: true,
            forced_temporal_weight: None,
        })
    }

    fn layer<'a, T>(&self, l: &'a Option<T>, name: &'static str) -> Result<&'a T> {
        l.as_ref().ok_or_else(|| Error::TopologyMismatch {
            topology: self.topology.to_string(),
            layer: name,
        })
    }

    /// `x: (B, T, N, d)`.
    pub fn forward(&self, x: &Tensor) -> Result<BlockOutput> {
        if x.rank() != 4 {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "ste_block",
                lhs: x.shape().to_vec(),
                rhs: vec![0, 0, 0, 0],
            }
            .into());
        }
        let (b, t, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let bypass = self.temporal_bypass && t == 1;
        let mut maps = Vec::new();
        let mut gate_out = None;
        let h = self.norm1.forward(x)?;
        let u = match self.topology {
            Topology::SpatialOnly => {
                let (s, m) = self.layer(&self.msa_s, "msa_s")?.forward(&h, AttentionMode::Spatial)?;
                maps.push((AttentionMode::Spatial, m));
                x.add(&s)?
            }
            Topology::TemporalOnly => {
                let msa_t = self.layer(&self.msa_t, "msa_t")?;
                if bypass {
                    x.clone()
                } else {
                    let (tm, m) = msa_t.forward(&h, AttentionMode::Temporal)?;
                    maps.push((AttentionMode::Temporal, m));
                    x.add(&tm)?
                }
            }
            Topology::Series => {
                let (s, m) = self.layer(&self.msa_s, "msa_s")?.forward(&h, AttentionMode::Spatial)?;
                maps.push((AttentionMode::Spatial, m));
                let u1 = x.add(&s)?;
                let msa_t = self.layer(&self.msa_t, "msa_t")?;
                let norm_t = self.layer(&self.norm_t, "norm_t")?;
                if bypass {
                    u1
                } else {
                    let (tm, m) = msa_t.forward(&norm_t.forward(&u1)?, AttentionMode::Temporal)?;
                    maps.push((AttentionMode::Temporal, m));
                    u1.add(&tm)?
                }
            }
            Topology::ParallelV1 | Topology::ParallelV2 => {
                let (s, m) = self.layer(&self.msa_s, "msa_s")?.forward(&h, AttentionMode::Spatial)?;
                maps.push((AttentionMode::Spatial, m));
                let msa_t = self.layer(&self.msa_t, "msa_t")?;
                if bypass {
                    x.add(&s)?
                } else {
                    let (tm, m) = msa_t.forward(&h, AttentionMode::Temporal)?;
                    maps.push((AttentionMode::Temporal, m));
                    let mix = if self.topology == Topology::ParallelV1 {
                        s.add(&tm)?.scale(0.5)
                    } else {
                        let (alpha_s, alpha_t) = self.gate_weights(&s, &tm, [b, t, n, d])?;
                        let full = [b, t, n, d];
                        let mix = alpha_s.expand(&full)?.mul(&s)?.add(&alpha_t.expand(&full)?.mul(&tm)?)?;
                        gate_out = Some((alpha_s, alpha_t));
                        mix
                    };
                    x.add(&mix)?
                }
            }
            Topology::Coupling => {
                let (c, m) = self.layer(&self.msa_c, "msa_c")?.forward(&h, AttentionMode::Coupled)?;
                maps.push((AttentionMode::Coupled, m));
                x.add(&c)?
            }
        };
        let y = u.add(&self.mlp.forward(&self.norm2.forward(&u)?)?)?;
        Ok(BlockOutput {
            y,
            maps,
            gate: gate_out,
        })
    }

    /// Per-frame, per-channel branch weights from the class-token features,
    /// softmaxed across the two branches. Each result is `(B, T, 1, d)`.
    fn gate_weights(&self, s: &Tensor, tm: &Tensor, [b, t, _, d]: [usize; 4]) -> Result<(Tensor, Tensor)> {
        if let Some(w) = self.forced_temporal_weight {
            let alpha_t = Tensor::full(&[b, t, 1, d], w)?;
            let alpha_s = Tensor::full(&[b, t, 1, d], 1.0 - w)?;
            return Ok((alpha_s, alpha_t));
        }
        let gate = self.layer(&self.gate, "gate")?;
        let logits_s = gate.forward(&s.slice(2, 0..1)?)?;
        let logits_t = gate.forward(&tm.slice(2, 0..1)?)?;
        let weights = Tensor::concat(&[logits_s, logits_t], 2)?.softmax(2)?;
        Ok((weights.slice(2, 0..1)?, weights.slice(2, 1..2)?))
    }
}

impl Module for SteBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        if let Some(l) = &self.msa_s {
            l.visit(&join(prefix, "msa_s"), f);
        }
        if let Some(l) = &self.msa_t {
            l.visit(&join(prefix, "msa_t"), f);
        }
        if let Some(l) = &self.msa_c {
            l.visit(&join(prefix, "msa_c"), f);
        }
        if let Some(l) = &self.norm_t {
            l.visit(&join(prefix, "norm_t"), f);
        }
        if let Some(l) = &self.gate {
            l.visit(&join(prefix, "gate"), f);
        }
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        if let Some(l) = &mut self.msa_s {
            l.visit_mut(&join(prefix, "msa_s"), f);
        }
        if let Some(l) = &mut self.msa_t {
            l.visit_mut(&join(prefix, "msa_t"), f);
        }
        if let Some(l) = &mut self.msa_c {
            l.visit_mut(&join(prefix, "msa_c"), f);
        }
        if let Some(l) = &mut self.norm_t {
            l.visit_mut(&join(prefix, "norm_t"), f);
        }
        if let Some(l) = &mut self.gate {
            l.visit_mut(&join(prefix, "gate"), f);
        }
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub topology: Topology,
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Channels of the incoming patch features.
    pub input_width: usize,
    /// Patches per frame before the class token is prepended.
    pub patches: usize,
    pub max_frames: usize,
    pub temporal_bypass: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            topology: Topology::ParallelV2,
            blocks: 2,
            width: 64,
            heads: 4,
            mlp_ratio: 4,
            input_width: 24,
            patches: 16,
            max_frames: 8,
            temporal_bypass: true,
        }
    }
}

/// Patch embedding, class token, positional encodings and stacked blocks.
#[derive(Debug, Clone)]
pub struct SteEncoder {
    pub config: EncoderConfig,
    pub patch_embed: Linear,
    /// `(1, 1, d)`
    pub class_token: Tensor,
    /// `(1, N, d)` with `N = patches + 1`
    pub pos_spatial: Tensor,
    /// `(T_max, 1, d)`
    pub pos_temporal: Tensor,
    pub blocks: Vec<SteBlock>,
}

pub type AttentionMaps = Vec<MapEntry>;

const POS_STD: f64 = 0.02;

impl SteEncoder {
    pub fn new(rng: &mut impl Rng, config: EncoderConfig) -> Result<Self> {
        let d = config.width;
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::IndivisibleWidth {
                width: d,
                heads: config.heads,
            });
        }
        let n = config.patches + 1;
        let patch_embed = Linear::xavier(rng, config.input_width, d)?;
        let class_token = Tensor::param(&[1, 1, d], normal(rng, d, POS_STD))?;
        let pos_spatial = Tensor::param(&[1, n, d], normal(rng, n * d, POS_STD))?;
        let pos_temporal = Tensor::param(&[config.max_frames, 1, d], normal(rng, config.max_frames * d, POS_STD))?;
        let blocks = (0..config.blocks)
            .map(|_| {
                let mut b = SteBlock::new(rng, config.topology, d, config.heads, config.mlp_ratio)?;
                b.temporal_bypass = config.temporal_bypass;
                Ok(b)
            })
            .collect::<Result<_>>()?;
        Ok(SteEncoder {
            config,
            patch_embed,
            class_token,
            pos_spatial,
            pos_temporal,
            blocks,
        })
    }

    /// Encodes `(T, hw, d_in)` or `(B, T, hw, d_in)` patch features into one
    /// feature per frame, `(T, d)` or `(B, T, d)`.
    pub fn encode(&self, obs: &Tensor) -> Result<(Tensor, AttentionMaps)> {
        let batched = obs.rank() == 4;
        let obs4 = match obs.rank() {
            4 => obs.clone(),
            3 => obs.reshape(&[1, obs.shape()[0], obs.shape()[1], obs.shape()[2]])?,
            _ => {
                return Err(crate::tensor::TensorError::ShapeMismatch {
                    op: "encode",
                    lhs: obs.shape().to_vec(),
                    rhs: vec![self.config.patches, self.config.input_width],
                }
                .into())
            }
        };
        let (b, t, hw) = (obs4.shape()[0], obs4.shape()[1], obs4.shape()[2]);
        let d = self.config.width;
        if t > self.config.max_frames {
            return Err(Error::ClipTooLong {
                frames: t,
                max: self.config.max_frames,
            });
        }
        if hw != self.config.patches {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "encode",
                lhs: obs4.shape().to_vec(),
                rhs: vec![b, t, self.config.patches, self.config.input_width],
            }
            .into());
        }
        let n = hw + 1;
        let patches = self.patch_embed.forward(&obs4)?;
        let cls = self.class_token.reshape(&[1, 1, 1, d])?.expand(&[b, t, 1, d])?;
        let mut x = Tensor::concat(&[cls, patches], 2)?;
        x = x.add(&self.pos_spatial.reshape(&[n, d])?)?;
        x = x.add(&self.pos_temporal.slice(0, 0..t)?.expand(&[t, n, d])?)?;
        let mut maps = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let out = block.forward(&x)?;
            maps.extend(out.maps.into_iter().map(|(mode, m)| MapEntry {
                block: i,
                mode,
                maps: if batched {
                    m
                } else {
                    m.reshape(&m.shape()[1..]).expect("leading batch of one")
                },
            }));
            x = out.y;
        }
        let frames = x.slice(2, 0..1)?;
        let frames = if batched {
            frames.reshape(&[b, t, d])?
        } else {
            frames.reshape(&[t, d])?
        };
        Ok((frames, maps))
    }
}

impl Module for SteEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "class_token"), &self.class_token);
        f(&join(prefix, "pos_spatial"), &self.pos_spatial);
        f(&join(prefix, "pos_temporal"), &self.pos_temporal);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        f(&join(prefix, "class_token"), &mut self.class_token);
        f(&join(prefix, "pos_spatial"), &mut self.pos_spatial);
        f(&join(prefix, "pos_temporal"), &mut self.pos_temporal);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}
