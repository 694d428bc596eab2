//! Two-stage training: single frames first, then a mix of frames and clips.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use super::synth::{Clip, ClipBatch};
use super::RunConfig;
use crate::metrics::total_loss;
use crate::tensor::{no_grad, AdamState};
use crate::Result;

/// Offset between the model-init seed and the batch-sampling seed.
const SAMPLER_SEED_OFFSET: u64 = 0x0BA7_C4E5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    Image,
    Video,
}

impl BatchKind {
    pub fn name(self) -> &'static str {
        match self {
            BatchKind::Image => "image",
            BatchKind::Video => "video",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub stage: u8,
    pub kind: BatchKind,
    pub lr: f64,
    pub total: f64,
    pub l3d: f64,
    pub l2d: f64,
    pub smpl_pose: f64,
    pub smpl_shape: f64,
    pub norm: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,stage,batch,lr,total,l3d,l2d,smpl_pose,smpl_shape,norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{},{},{},{},{},{}",
            self.step,
            self.stage,
            self.kind.name(),
            self.lr,
            self.total,
            self.l3d,
            self.l2d,
            self.smpl_pose,
            self.smpl_shape,
            self.norm
        )
    }
}

/// Picks the batch for each step.
struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn kind(cfg: &RunConfig, step: usize) -> (u8, BatchKind) {
        if step < cfg.image_steps {
            return (1, BatchKind::Image);
        }
        let i = (step - cfg.image_steps) as f64;
        let r = cfg.video_ratio;
        // spread video steps evenly: step i is video when i * r crosses an integer
        if ((i + 1.0) * r).floor() > (i * r).floor() {
            (2, BatchKind::Video)
        } else {
            (2, BatchKind::Image)
        }
    }

    fn batch(&mut self, cfg: &RunConfig, clips: &[Clip], kind: BatchKind) -> Result<ClipBatch> {
        match kind {
            BatchKind::Image => {
                let picks: Vec<(usize, usize)> = (0..cfg.image_batch)
                    .map(|_| {
                        let c = self.rng.random_range(0..clips.len());
                        (c, self.rng.random_range(0..clips[c].frames()))
                    })
                    .collect();
                ClipBatch::images(clips, &picks)
            }
            BatchKind::Video => {
                let n = cfg.video_batch.min(clips.len());
                let mut ids = sample(&mut self.rng, clips.len(), n).into_vec();
                ids.sort_unstable();
                ClipBatch::video(clips, &ids)
            }
        }
    }
}

/// Trains `model` in place and returns the loss of every step.
///
/// `on_record` sees every record; the harness uses it for periodic logging.
pub fn train_model(
    cfg: &RunConfig,
    model: &mut Model,
    clips: &[Clip],
    mut on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let mut adam = AdamState::new(cfg.adam);
    let mut sampler = Sampler {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SAMPLER_SEED_OFFSET)),
    };
    let mut log = Vec::with_capacity(cfg.total_steps());
    for step in 0..cfg.total_steps() {
        let (stage, kind) = Sampler::kind(cfg, step);
        let batch = sampler.batch(cfg, clips, kind)?;
        let pred = model.forward(&batch.obs)?;
        let report = total_loss(&pred.params, &pred.output, &batch.targets, &cfg.loss)?;
        report.check_finite(step)?;
        report.total.backward()?;
        let params = model.params();
        let grads: Vec<_> = params.iter().map(|p| p.grad()).collect();
        let lr = cfg.learning_rate(step);
        let updated = adam.step(&params, &grads, lr)?;
        model.set_params(updated);
        let record = LossRecord {
            step,
            stage,
            kind,
            lr,
            total: report.total.item(),
            l3d: report.l3d,
            l2d: report.l2d,
            smpl_pose: report.smpl_pose,
            smpl_shape: report.smpl_shape,
            norm: report.norm,
        };
        on_record(&record);
        log.push(record);
    }
    Ok(log)
}

/// Total loss over every frame of every clip, without recording a graph.
pub fn full_loss(cfg: &RunConfig, model: &Model, clips: &[Clip]) -> Result<f64> {
    let ids: Vec<usize> = (0..clips.len()).collect();
    let batch = ClipBatch::video(clips, &ids)?;
    no_grad(|| {
        let pred = model.forward(&batch.obs)?;
        Ok(total_loss(&pred.params, &pred.output, &batch.targets, &cfg.loss)?
            .total
            .item())
    })
}

/// Builds the model from `cfg` and trains it.
pub fn train(cfg: &RunConfig, clips: &[Clip]) -> Result<(Model, Vec<LossRecord>)> {
    let mut model = Model::new(cfg)?;
    let log = train_model(cfg, &mut model, clips, |_| {})?;
    Ok((model, log))
}
