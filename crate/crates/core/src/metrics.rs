//! Training losses and evaluation metrics.
//!
//! Losses run on tensors and are differentiable. Metrics run on plain joint
//! arrays in meters and report millimeters.

use nalgebra::{Matrix3, Vector3};

use crate::decoders::{SmplBatch, SmplOutput};
use crate::geometry::{matrix_to_axis_angle_t, Vec3};
use crate::kinematics::NUM_JOINTS;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub j2d: f64,
    pub j3d: f64,
    pub smpl_pose: f64,
    pub smpl_shape: f64,
    pub norm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            j2d: 300.0,
            j3d: 300.0,
            smpl_pose: 60.0,
            smpl_shape: 0.06,
            norm: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("j2d", self.j2d),
            ("j3d", self.j3d),
            ("smpl_pose", self.smpl_pose),
            ("smpl_shape", self.smpl_shape),
            ("norm", self.norm),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth for one batch of frames.
#[derive(Debug, Clone)]
pub struct LossTargets {
    /// `(F, 24, 3)`
    pub joints3d: Tensor,
    /// `(F, 24, 2)`
    pub joints2d: Tensor,
    /// `(F, 72)` axis-angle pose.
    pub pose_aa: Tensor,
    /// `(F, 10)`
    pub betas: Tensor,
    /// Frames without 3D supervision skip the 3D and parameter terms.
    pub has_3d: Vec<bool>,
}

/// Unweighted components, each a per-frame mean, and the weighted total.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: Tensor,
    pub l3d: f64,
    pub l2d: f64,
    pub smpl_pose: f64,
    pub smpl_shape: f64,
    pub norm: f64,
}

impl LossReport {
    pub fn l_smpl(&self, w: &LossWeights) -> f64 {
        w.smpl_pose * self.smpl_pose + w.smpl_shape * self.smpl_shape
    }

    /// Fails on the first non-finite term.
    pub fn check_finite(&self, step: usize) -> Result<()> {
        for (term, v) in [
            ("l3d", self.l3d),
            ("l2d", self.l2d),
            ("smpl_pose", self.smpl_pose),
            ("smpl_shape", self.smpl_shape),
            ("norm", self.norm),
            ("total", self.total.item()),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, step });
            }
        }
        Ok(())
    }
}

fn check_joints(what: &'static str, t: &Tensor, f: usize, c: usize) -> Result<()> {
    if t.shape() != [f, NUM_JOINTS, c] {
        let actual = if t.rank() == 3 { t.shape()[1] } else { 0 };
        return Err(Error::JointCount {
            what,
            expected: NUM_JOINTS,
            actual,
        });
    }
    Ok(())
}

/// Weighted sum of keypoint, parameter and norm terms; see [`LossReport`].
pub fn total_loss(params: &SmplBatch, pred: &SmplOutput, gt: &LossTargets, w: &LossWeights) -> Result<LossReport> {
    let f = params.frames();
    check_joints("predicted 3d joints", &pred.joints3d, f, 3)?;
    check_joints("target 3d joints", &gt.joints3d, f, 3)?;
    check_joints("predicted 2d joints", &pred.joints2d, f, 2)?;
    check_joints("target 2d joints", &gt.joints2d, f, 2)?;
    if gt.has_3d.len() != f {
        return Err(Error::JointCount {
            what: "3d supervision flags",
            expected: f,
            actual: gt.has_3d.len(),
        });
    }
    let supervised = gt.has_3d.iter().filter(|&&b| b).count();
    let mask = Tensor::new(&[f], gt.has_3d.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
    let masked_mean =
        |per_frame: Tensor| -> Result<Tensor> { Ok(per_frame.mul(&mask)?.sum().scale(1.0 / supervised.max(1) as f64)) };

    let l3d = masked_mean(pred.joints3d.sub(&gt.joints3d)?.norm_last()?.sum_axis(1)?)?;
    let l2d = pred.joints2d.sub(&gt.joints2d)?.norm_last()?.sum_axis(1)?.mean();
    let pose_aa = matrix_to_axis_angle_t(&pred.rotations)?.reshape(&[f, NUM_JOINTS * 3])?;
    let smpl_pose = masked_mean(pose_aa.sub(&gt.pose_aa)?.norm_last()?)?;
    let smpl_shape = masked_mean(params.betas.sub(&gt.betas)?.norm_last()?)?;
    let norm = params.betas.norm_last()?.add(&pose_aa.norm_last()?)?.mean();

    let total = l3d
        .scale(w.j3d)
        .add(&l2d.scale(w.j2d))?
        .add(&smpl_pose.scale(w.smpl_pose))?
        .add(&smpl_shape.scale(w.smpl_shape))?
        .add(&norm.scale(w.norm))?;
    Ok(LossReport {
        l3d: l3d.item(),
        l2d: l2d.item(),
        smpl_pose: smpl_pose.item(),
        smpl_shape: smpl_shape.item(),
        norm: norm.item(),
        total,
    })
}

/// Joint positions for one frame.
pub type Frame = Vec<Vec3>;

const MM: f64 = 1000.0;

fn check_pair(pred: &[Frame], gt: &[Frame]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::JointCount {
            what: "frames",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::JointCount {
                what: "joints",
                expected: g.len(),
                actual: p.len(),
            });
        }
    }
    Ok(())
}

fn dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn frame_error(p: &[Vec3], g: &[Vec3]) -> f64 {
    p.iter().zip(g).map(|(a, b)| dist(a, b)).sum::<f64>() / p.len() as f64
}

/// Mean joint distance in millimeters, without root alignment.
pub fn mpjpe(pred: &[Frame], gt: &[Frame]) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(MM * pred.iter().zip(gt).map(|(p, g)| frame_error(p, g)).sum::<f64>() / pred.len() as f64)
}

/// Ratio of the second to the first singular value below which a point set
/// counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

fn centered(points: &[Vec3]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    (mean, points.iter().map(|p| Vector3::from(*p) - mean).collect())
}

fn check_spread(what: &str, pts: &[Vector3<f64>]) -> Result<()> {
    let scatter: Matrix3<f64> = pts.iter().map(|p| p * p.transpose()).sum();
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if pts.len() < 3 || sv[0] <= 0.0 || sv[1] <= COLLINEAR_TOL * sv[0] {
        return Err(Error::DegeneratePoints(format!(
            "{what} joints are collinear or coincident"
        )));
    }
    Ok(())
}

/// Similarity transform `s R p + t` of `pred` minimizing the squared distance to `gt`.
pub fn similarity_align(pred: &[Vec3], gt: &[Vec3]) -> Result<Frame> {
    if pred.len() != gt.len() {
        return Err(Error::JointCount {
            what: "joints",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let (mu_p, xp) = centered(pred);
    let (mu_g, yg) = centered(gt);
    check_spread("predicted", &xp)?;
    check_spread("ground-truth", &yg)?;
    let cov: Matrix3<f64> = xp.iter().zip(&yg).map(|(x, y)| y * x.transpose()).sum();
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let var_p: f64 = xp.iter().map(|x| x.norm_squared()).sum();
    let s = (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_p;
    let t = mu_g - s * r * mu_p;
    Ok(pred
        .iter()
        .map(|p| {
            let q = s * r * Vector3::from(*p) + t;
            [q.x, q.y, q.z]
        })
        .collect())
}

/// Mean joint distance after per-frame similarity alignment, in millimeters.
pub fn pa_mpjpe(pred: &[Frame], gt: &[Frame]) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += frame_error(&similarity_align(p, g)?, g);
    }
    Ok(MM * total / pred.len() as f64)
}

/// Mean distance between predicted and true second differences, in
/// millimeters per frame squared.
pub fn accel_error(pred: &[Frame], gt: &[Frame]) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::TooFewFrames(pred.len()));
    }
    let accel = |f: &[Frame], t: usize, j: usize| -> Vec3 {
        std::array::from_fn(|c| f[t + 1][j][c] - 2.0 * f[t][j][c] + f[t - 1][j][c])
    };
    let joints = pred[0].len();
    let mut total = 0.0;
    for t in 1..pred.len() - 1 {
        for j in 0..joints {
            total += dist(&accel(pred, t, j), &accel(gt, t, j));
        }
    }
    Ok(MM * total / ((pred.len() - 2) * joints) as f64)
}
