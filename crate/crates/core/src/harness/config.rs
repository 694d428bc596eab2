//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{EncoderConfig, Topology};
use crate::decoders::DecoderKind;
use crate::kinematics::{KinematicTree, NUM_JOINTS};
use crate::metrics::LossWeights;
use crate::tensor::AdamConfig;
use crate::{Error, Result};

/// Hierarchy the decoder regresses along. The body model always uses the SMPL tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeChoice {
    Smpl,
    Random,
    Reverse,
    File(PathBuf),
}

impl std::fmt::Display for TreeChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeChoice::Smpl => f.write_str("smpl"),
            TreeChoice::Random => f.write_str("random"),
            TreeChoice::Reverse => f.write_str("reverse"),
            TreeChoice::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for TreeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smpl" => TreeChoice::Smpl,
            "random" => TreeChoice::Random,
            "reverse" => TreeChoice::Reverse,
            "" => return Err(Error::Config("empty tree value".into())),
            path => TreeChoice::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            _ => Err(Error::Config(format!("unknown dtype {s:?}"))),
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub encoder: Topology,
    pub blocks: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub temporal_bypass: bool,

    pub decoder: DecoderKind,
    pub tree: TreeChoice,
    pub tree_seed: u64,
    pub iterations: usize,

    /// Observation grid side; a frame has `grid * grid` patches.
    pub grid: usize,
    /// Frames per clip, also the longest clip the encoder accepts.
    pub frames: usize,
    pub clips: usize,
    pub amplitude: f64,
    pub noise: f64,
    /// Fraction of clips that carry only 2D supervision.
    pub two_d_only: f64,

    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub image_steps: usize,
    pub video_steps: usize,
    /// Share of stage-two steps that use whole clips instead of single frames.
    pub video_ratio: f64,
    pub image_batch: usize,
    pub video_batch: usize,
    pub log_interval: usize,

    /// Seed of the evaluation clips; the training clips when absent.
    pub eval_seed: Option<u64>,
    pub eval_clips: usize,
    pub checkpoint_dtype: Dtype,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            encoder: Topology::ParallelV2,
            blocks: 2,
            width: 64,
            heads: 4,
            mlp_ratio: 4,
            temporal_bypass: true,
            decoder: DecoderKind::Ktd,
            tree: TreeChoice::Smpl,
            tree_seed: 0,
            iterations: crate::decoders::DEFAULT_ITERATIONS,
            grid: 4,
            frames: 8,
            clips: 8,
            amplitude: 0.6,
            noise: 0.01,
            two_d_only: 0.0,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            image_steps: 100,
            video_steps: 400,
            video_ratio: 0.5,
            image_batch: 32,
            video_batch: 8,
            log_interval: 10,
            eval_seed: None,
            eval_clips: 8,
            checkpoint_dtype: Dtype::F64,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Eight clips, two parallel-v2 blocks, `d = 64`, four heads, eight frames, 500 steps.
    pub fn overfit() -> Self {
        RunConfig {
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "encoder" => self.encoder = value.parse()?,
            "blocks" => self.blocks = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "temporal_bypass" => self.temporal_bypass = parse(key, value)?,
            "decoder" => self.decoder = value.parse()?,
            "tree" => self.tree = value.parse()?,
            "tree_seed" => self.tree_seed = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "grid" => self.grid = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "clips" => self.clips = parse(key, value)?,
            "amplitude" => self.amplitude = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "two_d_only" => self.two_d_only = parse(key, value)?,
            "w_2d" => self.loss.j2d = parse(key, value)?,
            "w_3d" => self.loss.j3d = parse(key, value)?,
            "w_smpl_pose" => self.loss.smpl_pose = parse(key, value)?,
            "w_smpl_shape" => self.loss.smpl_shape = parse(key, value)?,
            "w_norm" => self.loss.norm = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "image_steps" => self.image_steps = parse(key, value)?,
            "video_steps" => self.video_steps = parse(key, value)?,
            "video_ratio" => self.video_ratio = parse(key, value)?,
            "image_batch" => self.image_batch = parse(key, value)?,
            "video_batch" => self.video_batch = parse(key, value)?,
            "log_interval" => self.log_interval = parse(key, value)?,
            "eval_seed" => self.eval_seed = Some(parse(key, value)?),
            "eval_clips" => self.eval_clips = parse(key, value)?,
            "checkpoint_dtype" => self.checkpoint_dtype = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("blocks", self.blocks),
            ("width", self.width),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("iterations", self.iterations),
            ("grid", self.grid),
            ("frames", self.frames),
            ("clips", self.clips),
            ("image_batch", self.image_batch),
            ("video_batch", self.video_batch),
            ("log_interval", self.log_interval),
            ("eval_clips", self.eval_clips),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::IndivisibleWidth {
                width: self.width,
                heads: self.heads,
            });
        }
        for (name, v) in [("video_ratio", self.video_ratio), ("two_d_only", self.two_d_only)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("noise", self.noise),
            ("lr", self.adam.lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        self.loss.validate()
    }

    /// Every key, one per line, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").expect("writing to a String");
        kv("seed", &self.seed);
        kv("encoder", &self.encoder);
        kv("blocks", &self.blocks);
        kv("width", &self.width);
        kv("heads", &self.heads);
        kv("mlp_ratio", &self.mlp_ratio);
        kv("temporal_bypass", &self.temporal_bypass);
        kv("decoder", &self.decoder);
        kv("tree", &self.tree);
        kv("tree_seed", &self.tree_seed);
        kv("iterations", &self.iterations);
        kv("grid", &self.grid);
        kv("frames", &self.frames);
        kv("clips", &self.clips);
        kv("amplitude", &self.amplitude);
        kv("noise", &self.noise);
        kv("two_d_only", &self.two_d_only);
        kv("w_2d", &self.loss.j2d);
        kv("w_3d", &self.loss.j3d);
        kv("w_smpl_pose", &self.loss.smpl_pose);
        kv("w_smpl_shape", &self.loss.smpl_shape);
        kv("w_norm", &self.loss.norm);
        kv("lr", &self.adam.lr);
        kv("adam_beta1", &self.adam.beta1);
        kv("adam_beta2", &self.adam.beta2);
        kv("adam_eps", &self.adam.eps);
        kv("image_steps", &self.image_steps);
        kv("video_steps", &self.video_steps);
        kv("video_ratio", &self.video_ratio);
        kv("image_batch", &self.image_batch);
        kv("video_batch", &self.video_batch);
        kv("log_interval", &self.log_interval);
        if let Some(e) = self.eval_seed {
            kv("eval_seed", &e);
        }
        kv("eval_clips", &self.eval_clips);
        kv("checkpoint_dtype", &self.checkpoint_dtype);
        s
    }

    pub fn patches(&self) -> usize {
        self.grid * self.grid
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            topology: self.encoder,
            blocks: self.blocks,
            width: self.width,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            input_width: NUM_JOINTS,
            patches: self.patches(),
            max_frames: self.frames,
            temporal_bypass: self.temporal_bypass,
        }
    }

    pub fn decoder_tree(&self) -> Result<KinematicTree> {
        Ok(match &self.tree {
            TreeChoice::Smpl => KinematicTree::smpl(),
            TreeChoice::Random => KinematicTree::random(self.tree_seed),
            TreeChoice::Reverse => KinematicTree::smpl().reversed(),
            TreeChoice::File(p) => KinematicTree::load(p)?,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.image_steps + self.video_steps
    }

    /// Step-wise decay: `x0.1` from 60% and again from 90% of the run.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let total = self.total_steps() as f64;
        let s = step as f64;
        if s >= 0.9 * total {
            self.adam.lr * 0.01
        } else if s >= 0.6 * total {
            self.adam.lr * 0.1
        } else {
            self.adam.lr
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.encoder = Topology::Coupling;
        cfg.tree = TreeChoice::Random;
        cfg.eval_seed = Some(9);
        cfg.adam.lr = 3e-4;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# header\n\nseed = 5  # trailing\n  width=32\n").unwrap();
        assert_eq!((cfg.seed, cfg.width), (5, 32));
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::parse("seed = 1\nbatchsize = 4\n").unwrap_err();
        assert!(
            err.to_string().contains("line 2") && err.to_string().contains("batchsize"),
            "{err}"
        );
    }

    #[test]
    fn bad_values_are_errors() {
        assert!(RunConfig::parse("width = -3").is_err());
        assert!(RunConfig::parse("encoder = transformer").is_err());
        assert!(RunConfig::parse("width = 30\nheads = 4").is_err());
        assert!(RunConfig::parse("video_ratio = 1.5").is_err());
        assert!(RunConfig::parse("seed 4").is_err());
    }

    #[test]
    fn schedule_drops_at_sixty_and_ninety_percent() {
        let cfg = RunConfig {
            image_steps: 0,
            video_steps: 100,
            ..Default::default()
        };
        let lr = cfg.adam.lr;
        assert_eq!(cfg.learning_rate(59), lr);
        assert_eq!(cfg.learning_rate(60), lr * 0.1);
        assert_eq!(cfg.learning_rate(90), lr * 0.01);
    }

    #[test]
    fn ktd_variants_differ_only_in_tree() {
        let base = RunConfig::default();
        let random = RunConfig {
            tree: TreeChoice::Random,
            ..base.clone()
        };
        let a = base.to_text();
        let b = random.to_text();
        let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, [("tree = smpl", "tree = random")]);
    }
}
