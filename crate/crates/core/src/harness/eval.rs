//! Per-clip evaluation and the metrics CSV.

use std::fmt::Write as _;

use super::model::Model;
use super::synth::{to_frames, Clip};
use crate::decoders::{smpl_forward, SmplBatch};
use crate::metrics::{accel_error, mpjpe, pa_mpjpe};
use crate::tensor::no_grad;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipMetrics {
    pub clip_id: usize,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub clips: Vec<ClipMetrics>,
}

impl EvalReport {
    /// Means of the three metrics over clips.
    pub fn mean(&self) -> (f64, f64, f64) {
        let n = self.clips.len().max(1) as f64;
        let sum = self
            .clips
            .iter()
            .fold((0.0, 0.0, 0.0), |a, c| (a.0 + c.mpjpe, a.1 + c.pa_mpjpe, a.2 + c.accel));
        (sum.0 / n, sum.1 / n, sum.2 / n)
    }

    /// One row per clip and a final `mean` row. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("clip_id,mpjpe,pa_mpjpe,accel\n");
        for c in &self.clips {
            writeln!(s, "{},{},{},{}", c.clip_id, c.mpjpe, c.pa_mpjpe, c.accel).expect("writing to a String");
        }
        let (m, p, a) = self.mean();
        writeln!(s, "mean,{m},{p},{a}").expect("writing to a String");
        s
    }
}

/// Evaluates any per-clip parameter predictor against the clips' ground truth.
pub fn evaluate_with(clips: &[Clip], mut predict: impl FnMut(&Clip) -> Result<SmplBatch>) -> Result<EvalReport> {
    let body = crate::kinematics::KinematicTree::smpl();
    let mut rows = Vec::with_capacity(clips.len());
    for clip in clips {
        let params = predict(clip)?;
        let out = no_grad(|| smpl_forward(&params, &body))?;
        let pred = to_frames(&out.joints3d);
        let gt = clip.joint_frames();
        rows.push(ClipMetrics {
            clip_id: clip.id,
            mpjpe: mpjpe(&pred, &gt)?,
            pa_mpjpe: pa_mpjpe(&pred, &gt)?,
            accel: accel_error(&pred, &gt)?,
        });
    }
    Ok(EvalReport { clips: rows })
}

pub fn evaluate(model: &Model, clips: &[Clip]) -> Result<EvalReport> {
    evaluate_with(clips, |clip| {
        let obs = clip
            .obs
            .reshape(&[1, clip.obs.shape()[0], clip.obs.shape()[1], clip.obs.shape()[2]])?;
        Ok(no_grad(|| model.forward(&obs))?.params)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate, SynthConfig};
    use crate::harness::RunConfig;

    fn clips() -> Vec<Clip> {
        generate(&SynthConfig {
            seed: 2,
            clips: 3,
            frames: 4,
            grid: 2,
            amplitude: 0.6,
            noise: 0.01,
            two_d_only: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn oracle_decoder_scores_zero() {
        let clips = clips();
        let report = evaluate_with(&clips, |c| Ok(c.params.clone())).unwrap();
        for row in &report.clips {
            assert_eq!(row.mpjpe, 0.0);
            assert!(row.pa_mpjpe < 1e-6);
            assert_eq!(row.accel, 0.0);
        }
    }

    #[test]
    fn repeated_evaluation_is_identical_and_mean_recomputes() {
        let cfg = RunConfig {
            width: 16,
            heads: 2,
            frames: 4,
            grid: 2,
            ..Default::default()
        };
        let mut model = Model::new(&cfg).unwrap();
        model.jitter(3, 0.05);
        let clips = clips();
        let a = evaluate(&model, &clips).unwrap();
        let b = evaluate(&model, &clips).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());

        let csv = a.to_csv();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        let (body, mean) = rows.split_at(rows.len() - 1);
        assert_eq!(mean[0][0], "mean");
        for col in 1..4 {
            let values: Vec<f64> = body.iter().map(|r| r[col].parse().unwrap()).collect();
            let expect = values.iter().sum::<f64>() / values.len() as f64;
            let got: f64 = mean[0][col].parse().unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }
}
