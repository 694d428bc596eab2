//! Finite-difference check of the whole encode, decode, body model and loss chain.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::synth::{generate, ClipBatch, SynthConfig};
use super::RunConfig;
use crate::metrics::total_loss;
use crate::nn::named_params;
use crate::tensor::gradcheck::relative_error;
use crate::tensor::{no_grad, Tensor};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub total_params: usize,
    pub relative_error: f64,
    /// Worst single-coordinate discrepancy, for diagnostics.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// The small configuration the end-to-end check runs on: `d = 16`, `T = 2`, four patches.
pub fn desk_config(base: &RunConfig) -> RunConfig {
    RunConfig {
        width: 16,
        heads: 2,
        frames: 2,
        grid: 2,
        clips: 2,
        ..base.clone()
    }
}

/// Compares the backward pass against central differences on a seeded sample
/// of `fraction` of all parameter coordinates (at least one per tensor).
pub fn check_model(cfg: &RunConfig, fraction: f64, h: f64) -> Result<GradcheckReport> {
    let mut model = Model::new(cfg)?;
    // heads start at zero weights; move off that point so every path carries gradient
    model.jitter(cfg.seed ^ 0x6A4D, 0.05);
    let clips = generate(&SynthConfig::from_run(cfg, cfg.seed, cfg.clips))?;
    let ids: Vec<usize> = (0..clips.len()).collect();
    let batch = ClipBatch::video(&clips, &ids)?;
    let loss_of = |m: &Model| -> Result<Tensor> {
        let p = m.forward(&batch.obs)?;
        Ok(total_loss(&p.params, &p.output, &batch.targets, &cfg.loss)?.total)
    };
    loss_of(&model)?.backward()?;

    let params = named_params(&model);
    let total_params: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5A3F);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut worst: Option<(String, usize, f64, f64)> = None;
    for (p_idx, (name, t)) in params.iter().enumerate() {
        let n = t.numel();
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let grad = t.grad().unwrap_or_else(|| vec![0.0; n]);
        let mut coords = sample(&mut rng, n, take).into_vec();
        coords.sort_unstable();
        for i in coords {
            let probe = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                let mut seen = 0;
                m.visit_mut_params(|t| {
                    if seen == p_idx {
                        let mut d = t.to_vec();
                        d[i] += delta;
                        *t = Tensor::param(t.shape(), d).expect("shape unchanged");
                    }
                    seen += 1;
                });
                Ok(no_grad(|| loss_of(&m))?.item())
            };
            let fd = (probe(h)? - probe(-h)?) / (2.0 * h);
            let gap = (grad[i] - fd).abs();
            if worst.as_ref().is_none_or(|w| gap > (w.2 - w.3).abs()) {
                worst = Some((name.clone(), i, grad[i], fd));
            }
            analytic.push(grad[i]);
            numeric.push(fd);
        }
    }
    Ok(GradcheckReport {
        checked: analytic.len(),
        total_params,
        relative_error: relative_error(&analytic, &numeric),
        worst,
    })
}

impl Model {
    fn visit_mut_params(&mut self, mut f: impl FnMut(&mut Tensor)) {
        use crate::nn::Module;
        self.visit_mut("", &mut |_, t| f(t));
    }
}
