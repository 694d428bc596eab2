//! Synthetic motion clips rendered as per-joint heatmaps.
//!
//! Each clip has a fixed body shape and camera and smooth per-joint rotation
//! trajectories. Ground-truth joints come from the same body model the network
//! decodes into, so a perfect decoder reaches zero error.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decoders::{smpl_forward, SmplBatch};
use crate::geometry::{axis_angle_to_matrix, AxisAngle, Vec3};
use crate::kinematics::{KinematicTree, NUM_BETAS, NUM_JOINTS};
use crate::metrics::{Frame, LossTargets};
use crate::tensor::{no_grad, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames: usize,
    pub grid: usize,
    /// Upper bound on the rotation angle of any joint at any frame, in radians.
    pub amplitude: f64,
    pub noise: f64,
    pub two_d_only: f64,
}

impl SynthConfig {
    pub fn from_run(cfg: &super::RunConfig, seed: u64, clips: usize) -> Self {
        SynthConfig {
            seed,
            clips,
            frames: cfg.frames,
            grid: cfg.grid,
            amplitude: cfg.amplitude,
            noise: cfg.noise,
            two_d_only: cfg.two_d_only,
        }
    }
}

const MAX_SINUSOIDS: usize = 3;
const BETA_STD: f64 = 0.5;
const HEATMAP_SIGMA_CELLS: f64 = 0.6;

/// One clip with its observations and ground truth.
#[derive(Debug, Clone)]
pub struct Clip {
    pub id: usize,
    /// `(T, grid², 24)`
    pub obs: Tensor,
    pub params: SmplBatch,
    /// `(T, 72)`
    pub pose_aa: Tensor,
    /// `(T, 24, 3)`
    pub joints3d: Tensor,
    /// `(T, 24, 2)`
    pub joints2d: Tensor,
    pub has_3d: bool,
}

impl Clip {
    pub fn frames(&self) -> usize {
        self.pose_aa.shape()[0]
    }

    pub fn joint_frames(&self) -> Vec<Frame> {
        to_frames(&self.joints3d)
    }
}

/// `(F, J, 3)` tensor to per-frame joint lists.
pub fn to_frames(joints: &Tensor) -> Vec<Frame> {
    let j = joints.shape()[1];
    joints
        .data()
        .chunks(j * 3)
        .map(|f| f.chunks(3).map(|p| [p[0], p[1], p[2]]).collect())
        .collect()
}

/// Cell centers of a `grid x grid` raster over `[-1, 1]²`, row-major with row 0 at `y = -1`.
pub fn cell_center(grid: usize, cell: usize) -> [f64; 2] {
    let size = 2.0 / grid as f64;
    let (r, c) = (cell / grid, cell % grid);
    [-1.0 + (c as f64 + 0.5) * size, -1.0 + (r as f64 + 0.5) * size]
}

/// Index of the cell containing `p`, clamped to the grid.
pub fn cell_of(grid: usize, p: [f64; 2]) -> usize {
    let size = 2.0 / grid as f64;
    let idx = |v: f64| (((v + 1.0) / size).floor().max(0.0) as usize).min(grid - 1);
    idx(p[1]) * grid + idx(p[0])
}

/// Gaussian heatmaps, one channel per joint: `(T, grid², J)` from `(T, J, 2)` points.
pub fn rasterize(joints2d: &Tensor, grid: usize, noise: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let (t, j) = (joints2d.shape()[0], joints2d.shape()[1]);
    let hw = grid * grid;
    let sigma = HEATMAP_SIGMA_CELLS * 2.0 / grid as f64;
    let centers: Vec<[f64; 2]> = (0..hw).map(|c| cell_center(grid, c)).collect();
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite noise"));
    let pts = joints2d.data();
    let mut out = vec![0.0; t * hw * j];
    for f in 0..t {
        for (cell, c) in centers.iter().enumerate() {
            for k in 0..j {
                let p = &pts[(f * j + k) * 2..(f * j + k) * 2 + 2];
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                out[(f * hw + cell) * j + k] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    if let Some(n) = normal {
        for v in &mut out {
            *v += n.sample(rng);
        }
    }
    Ok(Tensor::new(&[t, hw, j], out)?)
}

/// Per-joint rotation-vector trajectory: up to three sinusoids per component,
/// scaled so the rotation angle never exceeds `amplitude`.
fn trajectory(rng: &mut impl Rng, frames: usize, amplitude: f64) -> Vec<Vec3> {
    let per_axis = amplitude / 3f64.sqrt();
    let comps: Vec<Vec<(f64, f64, f64)>> = (0..3)
        .map(|_| {
            let m = rng.random_range(1..=MAX_SINUSOIDS);
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-12);
            raw.iter()
                .map(|a| {
                    let amp = per_axis * a / total;
                    (amp, rng.random_range(0.05..0.6), rng.random_range(0.0..2.0 * PI))
                })
                .collect()
        })
        .collect();
    (0..frames)
        .map(|t| std::array::from_fn(|c| comps[c].iter().map(|(a, w, phi)| a * (w * t as f64 + phi).sin()).sum()))
        .collect()
}

/// Generates `cfg.clips` clips. The same config always yields identical clips.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Clip>> {
    let body = KinematicTree::smpl();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta_dist = Normal::new(0.0, BETA_STD).expect("finite std");
    let n_2d_only = (cfg.two_d_only * cfg.clips as f64).round() as usize;
    (0..cfg.clips)
        .map(|id| {
            let t = cfg.frames;
            let trajectories: Vec<Vec<Vec3>> = (0..NUM_JOINTS)
                .map(|_| trajectory(&mut rng, t, cfg.amplitude))
                .collect();
            let beta: Vec<f64> = (0..NUM_BETAS).map(|_| beta_dist.sample(&mut rng)).collect();
            let cam = [
                rng.random_range(0.85..0.95),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            ];
            let mut aa = Vec::with_capacity(t * NUM_JOINTS * 3);
            let mut six = Vec::with_capacity(t * NUM_JOINTS * 6);
            for f in 0..t {
                for traj in &trajectories {
                    aa.extend_from_slice(&traj[f]);
                    six.extend_from_slice(&axis_angle_to_matrix(&AxisAngle(traj[f])).to_6d().0);
                }
            }
            let params = SmplBatch {
                pose6d: Tensor::new(&[t, NUM_JOINTS, 6], six)?,
                betas: Tensor::new(&[t, NUM_BETAS], beta.repeat(t))?,
                cam: Tensor::new(&[t, 3], cam.repeat(t))?,
            };
            let out = no_grad(|| smpl_forward(&params, &body))?;
            let obs = rasterize(&out.joints2d, cfg.grid, cfg.noise, &mut rng)?;
            Ok(Clip {
                id,
                obs,
                params,
                pose_aa: Tensor::new(&[t, NUM_JOINTS * 3], aa)?,
                joints3d: out.joints3d.detach(),
                joints2d: out.joints2d.detach(),
                has_3d: id >= n_2d_only,
            })
        })
        .collect()
}

/// A training batch of equal-length windows.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    /// `(B, T, grid², 24)`
    pub obs: Tensor,
    /// Flattened over `B * T` frames.
    pub targets: LossTargets,
    pub clips: usize,
    pub frames: usize,
}

impl ClipBatch {
    /// Stacks the given `(clip, frame range)` windows; all ranges must have the same length.
    pub fn gather(clips: &[Clip], windows: &[(usize, Range<usize>)]) -> Result<Self> {
        let frames = windows.first().map_or(0, |w| w.1.len());
        let mut obs = Vec::new();
        let mut j3 = Vec::new();
        let mut j2 = Vec::new();
        let mut aa = Vec::new();
        let mut betas = Vec::new();
        let mut has_3d = Vec::new();
        for (c, range) in windows {
            if range.len() != frames {
                return Err(crate::tensor::TensorError::Invalid(format!(
                    "window lengths differ: {} vs {frames}",
                    range.len()
                ))
                .into());
            }
            let clip = &clips[*c];
            obs.push(clip.obs.slice(0, range.clone())?);
            j3.push(clip.joints3d.slice(0, range.clone())?);
            j2.push(clip.joints2d.slice(0, range.clone())?);
            aa.push(clip.pose_aa.slice(0, range.clone())?);
            betas.push(clip.params.betas.slice(0, range.clone())?);
            has_3d.extend(std::iter::repeat_n(clip.has_3d, frames));
        }
        Ok(ClipBatch {
            obs: Tensor::stack(&obs, 0)?,
            targets: LossTargets {
                joints3d: Tensor::concat(&j3, 0)?,
                joints2d: Tensor::concat(&j2, 0)?,
                pose_aa: Tensor::concat(&aa, 0)?,
                betas: Tensor::concat(&betas, 0)?,
                has_3d,
            },
            clips: windows.len(),
            frames,
        })
    }

    /// Whole clips.
    pub fn video(clips: &[Clip], ids: &[usize]) -> Result<Self> {
        let windows: Vec<_> = ids.iter().map(|&c| (c, 0..clips[c].frames())).collect();
        Self::gather(clips, &windows)
    }

    /// Single frames, each as a clip of length one.
    pub fn images(clips: &[Clip], picks: &[(usize, usize)]) -> Result<Self> {
        let windows: Vec<_> = picks.iter().map(|&(c, f)| (c, f..f + 1)).collect();
        Self::gather(clips, &windows)
    }
}
