//! Parameter decoders from per-frame features to body-model parameters, and
//! the body-model glue turning those parameters into 3D and 2D joints.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::geometry::{project_t, rot6d_to_matrix_t, IDENTITY_6D};
use crate::kinematics::{forward_kinematics_t, KinematicTree, NUM_BETAS, NUM_JOINTS};
use crate::nn::{join, Linear, Module};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const POSE_DIM: usize = NUM_JOINTS * 6;
pub const CAM_DIM: usize = 3;
/// Pose, shape and camera packed as one vector.
pub const PARAM_DIM: usize = POSE_DIM + NUM_BETAS + CAM_DIM;
pub const DEFAULT_ITERATIONS: usize = 3;

const CAM_INIT: [f64; CAM_DIM] = [1.0, 0.0, 0.0];

/// Per-frame body-model parameters.
#[derive(Debug, Clone)]
pub struct SmplBatch {
    /// `(F, 24, 6)`
    pub pose6d: Tensor,
    /// `(F, 10)`
    pub betas: Tensor,
    /// `(F, 3)` as `(s, tx, ty)`
    pub cam: Tensor,
}

impl SmplBatch {
    pub fn frames(&self) -> usize {
        self.betas.shape()[0]
    }

    /// Identity pose, zero shape, unit camera.
    pub fn rest(frames: usize) -> Result<Self> {
        Ok(SmplBatch {
            pose6d: Tensor::new(&[frames, NUM_JOINTS, 6], IDENTITY_6D.repeat(frames * NUM_JOINTS))?,
            betas: Tensor::zeros(&[frames, NUM_BETAS])?,
            cam: Tensor::new(&[frames, CAM_DIM], CAM_INIT.repeat(frames))?,
        })
    }

    /// Splits `(F, 157)` into pose, shape and camera.
    pub fn unpack(theta: &Tensor) -> Result<Self> {
        let f = theta.shape()[0];
        Ok(SmplBatch {
            pose6d: theta.slice(1, 0..POSE_DIM)?.reshape(&[f, NUM_JOINTS, 6])?,
            betas: theta.slice(1, POSE_DIM..POSE_DIM + NUM_BETAS)?,
            cam: theta.slice(1, POSE_DIM + NUM_BETAS..PARAM_DIM)?,
        })
    }

    pub fn pack(&self) -> Result<Tensor> {
        let f = self.frames();
        Ok(Tensor::concat(
            &[
                self.pose6d.reshape(&[f, POSE_DIM])?,
                self.betas.clone(),
                self.cam.clone(),
            ],
            1,
        )?)
    }

    pub fn detach(&self) -> Self {
        SmplBatch {
            pose6d: self.pose6d.detach(),
            betas: self.betas.detach(),
            cam: self.cam.detach(),
        }
    }
}

/// Output of [`smpl_forward`].
#[derive(Debug, Clone)]
pub struct SmplOutput {
    /// `(F, 24, 3, 3)` local rotations.
    pub rotations: Tensor,
    /// `(F, 24, 3)`
    pub joints3d: Tensor,
    /// `(F, 24, 2)`
    pub joints2d: Tensor,
}

/// 6D pose to rotations, forward kinematics on `tree`, weak-perspective projection.
pub fn smpl_forward(params: &SmplBatch, tree: &KinematicTree) -> Result<SmplOutput> {
    let rotations = rot6d_to_matrix_t(&params.pose6d)?;
    let posed = forward_kinematics_t(tree, &rotations, &params.betas)?;
    let joints2d = project_t(&posed.joints, &params.cam)?;
    Ok(SmplOutput {
        rotations,
        joints3d: posed.joints,
        joints2d,
    })
}

/// Per-joint regressors evaluated root-first, each seeing the frame feature and
/// its ancestors' predictions.
#[derive(Debug, Clone)]
pub struct KtdDecoder {
    pub tree: KinematicTree,
    /// Indexed by joint; joint `k` maps `d + 6 |A(k)|` inputs to 6.
    pub joints: Vec<Linear>,
    pub shape: Linear,
    pub cam: Linear,
}

impl KtdDecoder {
    /// Zero weights with biases at the identity rotation, zero shape and unit camera.
    pub fn new(d: usize, tree: KinematicTree) -> Result<Self> {
        let joints = (0..tree.len())
            .map(|k| Linear::zeroed(d + 6 * tree.ancestors(k).map(|a| a.len())?, IDENTITY_6D.to_vec()))
            .collect::<Result<_>>()?;
        Ok(KtdDecoder {
            joints,
            shape: Linear::zeroed(d, vec![0.0; NUM_BETAS])?,
            cam: Linear::zeroed(d, CAM_INIT.to_vec())?,
            tree,
        })
    }

    /// Xavier weights throughout; used by structural checks that need every path live.
    pub fn xavier(rng: &mut impl Rng, d: usize, tree: KinematicTree) -> Result<Self> {
        let joints = (0..tree.len())
            .map(|k| Linear::xavier(rng, d + 6 * tree.ancestors(k).map(|a| a.len())?, 6))
            .collect::<Result<_>>()?;
        Ok(KtdDecoder {
            joints,
            shape: Linear::xavier(rng, d, NUM_BETAS)?,
            cam: Linear::xavier(rng, d, CAM_DIM)?,
            tree,
        })
    }

    pub fn width(&self) -> usize {
        self.shape.in_features()
    }

    /// Input width of joint `k`'s regressor.
    pub fn input_width(&self, k: usize) -> usize {
        self.joints[k].in_features()
    }

    /// `x: (F, d)`.
    pub fn decode(&self, x: &Tensor) -> Result<SmplBatch> {
        let f = x.shape()[0];
        let d = x.shape()[1];
        let mut omega: Vec<Option<Tensor>> = vec![None; self.tree.len()];
        for &k in self.tree.order() {
            let ancestors = self.tree.ancestors(k)?;
            let expected = d + 6 * ancestors.len();
            if self.joints[k].in_features() != expected {
                return Err(Error::WidthMismatch {
                    joint: k,
                    expected,
                    actual: self.joints[k].in_features(),
                });
            }
            let mut parts = vec![x.clone()];
            parts.extend(
                ancestors
                    .iter()
                    .map(|&a| omega[a].clone().expect("ancestors precede in BFS order")),
            );
            omega[k] = Some(self.joints[k].forward(&Tensor::concat(&parts, 1)?)?);
        }
        let omega: Vec<Tensor> = omega.into_iter().map(|o| o.expect("every joint visited")).collect();
        Ok(SmplBatch {
            pose6d: Tensor::stack(&omega, 1)?.reshape(&[f, NUM_JOINTS, 6])?,
            betas: self.shape.forward(x)?,
            cam: self.cam.forward(x)?,
        })
    }
}

impl Module for KtdDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, l) in self.joints.iter().enumerate() {
            l.visit(&join(prefix, &format!("joint.{k}")), f);
        }
        self.shape.visit(&join(prefix, "shape"), f);
        self.cam.visit(&join(prefix, "cam"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (k, l) in self.joints.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("joint.{k}")), f);
        }
        self.shape.visit_mut(&join(prefix, "shape"), f);
        self.cam.visit_mut(&join(prefix, "cam"), f);
    }
}

/// Residual refinement `theta += F(concat(x, theta))` from a learned start.
#[derive(Debug, Clone)]
pub struct IterativeDecoder {
    pub step: Linear,
    /// `(157)`
    pub init: Tensor,
    pub iterations: usize,
}

impl IterativeDecoder {
    pub fn new(d: usize, iterations: usize) -> Result<Self> {
        Ok(IterativeDecoder {
            step: Linear::zeroed(d + PARAM_DIM, vec![0.0; PARAM_DIM])?,
            init: SmplBatch::rest(1)?.pack()?.reshape(&[PARAM_DIM])?.detach_param(),
            iterations,
        })
    }

    pub fn xavier(rng: &mut impl Rng, d: usize, iterations: usize) -> Result<Self> {
        let mut dec = Self::new(d, iterations)?;
        dec.step = Linear::xavier(rng, d + PARAM_DIM, PARAM_DIM)?;
        Ok(dec)
    }

    pub fn decode(&self, x: &Tensor) -> Result<SmplBatch> {
        let f = x.shape()[0];
        let mut theta = self.init.reshape(&[1, PARAM_DIM])?.expand(&[f, PARAM_DIM])?;
        for _ in 0..self.iterations {
            let delta = self.step.forward(&Tensor::concat(&[x.clone(), theta.clone()], 1)?)?;
            theta = theta.add(&delta)?;
        }
        SmplBatch::unpack(&theta)
    }
}

impl Module for IterativeDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.step.visit(&join(prefix, "step"), f);
        f(&join(prefix, "init"), &self.init);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.step.visit_mut(&join(prefix, "step"), f);
        f(&join(prefix, "init"), &mut self.init);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    Ktd,
    Iterative,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Ktd => "ktd",
            DecoderKind::Iterative => "iterative",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ktd" => Ok(DecoderKind::Ktd),
            "iterative" => Ok(DecoderKind::Iterative),
            _ => Err(Error::Config(format!("unknown decoder {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Ktd(KtdDecoder),
    Iterative(IterativeDecoder),
}

impl Decoder {
    pub fn decode(&self, x: &Tensor) -> Result<SmplBatch> {
        match self {
            Decoder::Ktd(d) => d.decode(x),
            Decoder::Iterative(d) => d.decode(x),
        }
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Ktd(_) => DecoderKind::Ktd,
            Decoder::Iterative(_) => DecoderKind::Iterative,
        }
    }
}

impl Module for Decoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Decoder::Ktd(d) => d.visit(prefix, f),
            Decoder::Iterative(d) => d.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Decoder::Ktd(d) => d.visit_mut(prefix, f),
            Decoder::Iterative(d) => d.visit_mut(prefix, f),
        }
    }
}
