//! Encoder plus decoder plus body model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RunConfig;
use crate::attention::{AttentionMaps, SteEncoder};
use crate::decoders::{smpl_forward, Decoder, DecoderKind, IterativeDecoder, KtdDecoder, SmplBatch, SmplOutput};
use crate::kinematics::KinematicTree;
use crate::nn::{join, named_params, Module};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: SteEncoder,
    pub decoder: Decoder,
    /// Tree used for forward kinematics; fixed to the SMPL hierarchy.
    pub body: KinematicTree,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub params: SmplBatch,
    pub output: SmplOutput,
    pub maps: AttentionMaps,
}

impl Model {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = SteEncoder::new(&mut rng, cfg.encoder_config())?;
        let decoder = match cfg.decoder {
            DecoderKind::Ktd => Decoder::Ktd(KtdDecoder::new(cfg.width, cfg.decoder_tree()?)?),
            DecoderKind::Iterative => Decoder::Iterative(IterativeDecoder::new(cfg.width, cfg.iterations)?),
        };
        Ok(Model {
            encoder,
            decoder,
            body: KinematicTree::smpl(),
        })
    }

    /// `obs: (B, T, grid², 24)`; outputs are flattened over the `B * T` frames.
    pub fn forward(&self, obs: &Tensor) -> Result<Prediction> {
        let (b, t) = (obs.shape()[0], obs.shape()[1]);
        let (x, maps) = self.encoder.encode(obs)?;
        let x = x.reshape(&[b * t, self.encoder.config.width])?;
        let params = self.decoder.decode(&x)?;
        let output = smpl_forward(&params, &self.body)?;
        Ok(Prediction { params, output, maps })
    }

    pub fn params(&self) -> Vec<Tensor> {
        named_params(self).into_iter().map(|(_, t)| t).collect()
    }

    /// Replaces every parameter, in visit order.
    pub fn set_params(&mut self, new: Vec<Tensor>) {
        let mut it = new.into_iter();
        self.visit_mut("", &mut |_, t| *t = it.next().expect("one tensor per parameter"));
    }

    /// Adds seeded `N(0, std)` noise to every parameter. Used by gradient
    /// checks so that no path through a zero-initialized head is inactive.
    pub fn jitter(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).expect("finite std");
        self.visit_mut("", &mut |_, t| {
            let data = t.data().iter().map(|v| v + dist.sample(&mut rng)).collect();
            *t = Tensor::param(t.shape(), data).expect("shape unchanged");
        });
    }
}

impl Module for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
