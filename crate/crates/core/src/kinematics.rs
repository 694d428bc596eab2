//! The 24-joint body skeleton: tree topology, shape-conditioned rest pose and
//! forward kinematics.
//!
//! A joint's world transform is the product of the local transforms
//! `[[R_i, t_i], [0, 1]]` of its ancestors followed by its own, where `t_i` is
//! the rest-pose offset from the parent. The joint's position is the
//! translation part of that product, so its own rotation only moves its
//! descendants.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{mat_mul, mat_vec, Mat3, Rotation, Vec3};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;

/// Parent of each joint in the body model's standard numbering (0 = pelvis).
pub const SMPL_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Stylized T-pose in meters, y up, pelvis at the origin.
const REST_TEMPLATE: [Vec3; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.10, -0.47, 0.0],
    [-0.10, -0.47, 0.0],
    [0.0, 0.25, -0.01],
    [0.09, -0.87, -0.04],
    [-0.09, -0.87, -0.04],
    [0.0, 0.30, 0.02],
    [0.12, -0.93, 0.08],
    [-0.12, -0.93, 0.08],
    [0.0, 0.50, 0.0],
    [0.08, 0.41, 0.0],
    [-0.08, 0.41, 0.0],
    [0.0, 0.58, 0.05],
    [0.18, 0.44, -0.01],
    [-0.18, 0.44, -0.01],
    [0.44, 0.43, -0.03],
    [-0.44, 0.43, -0.03],
    [0.69, 0.44, -0.02],
    [-0.69, 0.44, -0.02],
    [0.77, 0.43, -0.01],
    [-0.77, 0.43, -0.01],
];

const SHAPE_BASIS_SEED: u64 = 0x5EED_B0D1;
/// Row norm of the shape basis: a unit-norm shape vector moves any coordinate by at most this.
const SHAPE_OFFSET_SCALE: f64 = 0.05;

/// Rooted tree over the joints, with rest positions and a linear shape space.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    root: usize,
    order: Vec<usize>,
    rest_template: Vec<Vec3>,
    /// `(joints * 3) x NUM_BETAS`, row `3k + c` maps shape to coordinate `c` of joint `k`.
    shape_basis: Vec<[f64; NUM_BETAS]>,
}

fn default_shape_basis() -> Vec<[f64; NUM_BETAS]> {
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_BASIS_SEED);
    (0..NUM_JOINTS * 3)
        .map(|row| {
            if row < 3 {
                return [0.0; NUM_BETAS];
            }
            let mut r: [f64; NUM_BETAS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v *= SHAPE_OFFSET_SCALE / n);
            r
        })
        .collect()
}

impl KinematicTree {
    /// The body model's skeleton with the built-in template and shape basis.
    pub fn smpl() -> Self {
        Self::from_parts(SMPL_PARENTS.to_vec(), REST_TEMPLATE.to_vec(), default_shape_basis())
            .expect("built-in skeleton is a valid tree")
    }

    /// Validates that `parents` describes a single rooted tree.
    pub fn from_parts(
        parents: Vec<Option<usize>>,
        rest_template: Vec<Vec3>,
        shape_basis: Vec<[f64; NUM_BETAS]>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 || rest_template.len() != n || shape_basis.len() != 3 * n {
            return Err(Error::InvalidTree(format!(
                "{n} parents, {} rest positions, {} shape rows",
                rest_template.len(),
                shape_basis.len()
            )));
        }
        let roots: Vec<usize> = (0..n).filter(|&k| parents[k].is_none()).collect();
        let [root] = roots[..] else {
            return Err(Error::InvalidTree(format!("expected one root, found {roots:?}")));
        };
        if let Some(k) = (0..n).find(|&k| parents[k].is_some_and(|p| p >= n || p == k)) {
            return Err(Error::InvalidTree(format!(
                "joint {k} has invalid parent {:?}",
                parents[k]
            )));
        }
        let mut children = vec![Vec::new(); n];
        for (k, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(k);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        while let Some(k) = queue.pop_front() {
            order.push(k);
            queue.extend(children[k].iter().copied());
        }
        if order.len() != n {
            return Err(Error::InvalidTree(format!(
                "only {} of {n} joints are reachable from root {root} (cycle)",
                order.len()
            )));
        }
        if rest_template.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTree("non-finite rest position".into()));
        }
        Ok(KinematicTree {
            parents,
            root,
            order,
            rest_template,
            shape_basis,
        })
    }

    /// Parses `index parent x y z` lines (parent `-1` for the root; `#` starts a comment).
    /// The shape basis is the built-in one.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Option<(Option<usize>, Vec3)>> = vec![None; NUM_JOINTS];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::InvalidTree(format!("line {}: {msg}: {raw:?}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let index: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
            let parent: i64 = fields[1].parse().map_err(|_| bad("bad parent"))?;
            let mut pos = [0.0; 3];
            for (c, f) in fields[2..].iter().enumerate() {
                pos[c] = f.parse().map_err(|_| bad("bad coordinate"))?;
            }
            if index >= NUM_JOINTS {
                return Err(bad("index out of range"));
            }
            if entries[index].is_some() {
                return Err(bad("duplicate index"));
            }
            let parent = match parent {
                -1 => None,
                p if p >= 0 && (p as usize) < NUM_JOINTS => Some(p as usize),
                _ => return Err(bad("parent out of range")),
            };
            entries[index] = Some((parent, pos));
        }
        let mut parents = Vec::with_capacity(NUM_JOINTS);
        let mut rest = Vec::with_capacity(NUM_JOINTS);
        for (k, e) in entries.into_iter().enumerate() {
            let (p, pos) = e.ok_or_else(|| Error::InvalidTree(format!("joint {k} missing")))?;
            parents.push(p);
            rest.push(pos);
        }
        Self::from_parts(parents, rest, default_shape_basis())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`KinematicTree::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in 0..self.len() {
            let p = self.parents[k].map_or(-1, |p| p as i64);
            let [x, y, z] = self.rest_template[k];
            let _ = writeln!(s, "{k} {p} {x} {y} {z}");
        }
        s
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Joints in breadth-first order from the root; every parent precedes its children.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn rest_template(&self) -> &[Vec3] {
        &self.rest_template
    }

    pub fn shape_basis(&self) -> &[[f64; NUM_BETAS]] {
        &self.shape_basis
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::JointOutOfRange {
                index: k,
                count: self.len(),
            });
        }
        Ok(())
    }

    /// Proper ancestors of `k`, root first.
    pub fn ancestors(&self, k: usize) -> Result<Vec<usize>> {
        self.check_index(k)?;
        let mut out = Vec::new();
        let mut cur = self.parents[k];
        while let Some(p) = cur {
            out.push(p);
            cur = self.parents[p];
        }
        out.reverse();
        Ok(out)
    }

    pub fn depth(&self, k: usize) -> Result<usize> {
        Ok(self.ancestors(k)?.len())
    }

    pub fn children(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.parents[c] == Some(k)).collect()
    }

    /// `k` and every joint below it.
    pub fn subtree(&self, k: usize) -> Result<Vec<usize>> {
        self.check_index(k)?;
        let mut out = vec![k];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.children(out[i]));
            i += 1;
        }
        Ok(out)
    }

    /// Undirected edges as sorted `(low, high)` pairs, sorted.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.map(|p| (k.min(p), k.max(p))))
            .collect();
        e.sort_unstable();
        e
    }

    /// Same joints and rest data, re-rooted at `new_root`: edges on the path
    /// between the old and new root flip direction.
    pub fn rerooted(&self, new_root: usize) -> Result<Self> {
        self.check_index(new_root)?;
        let mut adj = vec![Vec::new(); self.len()];
        for (a, b) in self.undirected_edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parents = vec![None; self.len()];
        let mut seen = vec![false; self.len()];
        seen[new_root] = true;
        let mut queue = VecDeque::from([new_root]);
        while let Some(k) = queue.pop_front() {
            for &c in &adj[k] {
                if !seen[c] {
                    seen[c] = true;
                    parents[c] = Some(k);
                    queue.push_back(c);
                }
            }
        }
        Self::from_parts(parents, self.rest_template.clone(), self.shape_basis.clone())
    }

    /// Re-rooted at the deepest leaf (lowest index on ties), reversing the
    /// parent/child relation along the path from the old root to that leaf.
    pub fn reversed(&self) -> Self {
        let depths: Vec<usize> = (0..self.len()).map(|k| self.depth(k).unwrap_or(0)).collect();
        let max = depths.iter().copied().max().unwrap_or(0);
        let leaf = (0..self.len()).find(|&k| depths[k] == max).unwrap_or(self.root);
        self.rerooted(leaf).expect("re-rooting a valid tree")
    }

    /// Uniformly random labelled spanning tree (Prüfer decoding) rooted at
    /// joint 0, reusing this tree's rest positions and shape basis.
    pub fn random(seed: u64) -> Self {
        let base = Self::smpl();
        let n = base.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &c in &code {
            degree[c] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &c in &code {
            let leaf = (0..n).find(|&k| degree[k] == 1).expect("a leaf always exists");
            edges.push((leaf, c));
            degree[leaf] -= 1;
            degree[c] -= 1;
        }
        let last: Vec<usize> = (0..n).filter(|&k| degree[k] == 1).collect();
        edges.push((last[0], last[1]));

        let mut adj = vec![Vec::new(); n];
        for (a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut parents = vec![None; n];
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0]);
        while let Some(k) = queue.pop_front() {
            for &c in &adj[k] {
                if !seen[c] {
                    seen[c] = true;
                    parents[c] = Some(k);
                    queue.push_back(c);
                }
            }
        }
        Self::from_parts(parents, base.rest_template, base.shape_basis).expect("Prüfer decoding yields a tree")
    }

    /// `template + basis · beta`, per joint.
    pub fn rest_joints(&self, beta: &[f64; NUM_BETAS]) -> Vec<Vec3> {
        (0..self.len())
            .map(|k| {
                std::array::from_fn(|c| {
                    let row = &self.shape_basis[3 * k + c];
                    self.rest_template[k][c] + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
                })
            })
            .collect()
    }

    /// Differentiable rest joints: `(F, 10) -> (F, J, 3)`.
    pub fn rest_joints_t(&self, betas: &Tensor) -> Result<Tensor> {
        let f = betas.shape()[0];
        if betas.shape() != [f, NUM_BETAS] {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "rest_joints",
                lhs: betas.shape().to_vec(),
                rhs: vec![f, NUM_BETAS],
            }
            .into());
        }
        let rows = self.len() * 3;
        // basis transposed to (10, J*3) so that betas · basisᵀ is (F, J*3)
        let mut bt = vec![0.0; NUM_BETAS * rows];
        for (r, row) in self.shape_basis.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                bt[b * rows + r] = *v;
            }
        }
        let basis = Tensor::new(&[NUM_BETAS, rows], bt)?;
        let template = Tensor::new(&[rows], self.rest_template.iter().flatten().copied().collect())?;
        Ok(betas.matmul(&basis)?.add(&template)?.reshape(&[f, self.len(), 3])?)
    }
}

/// Homogeneous 4x4 transform.
pub type Transform = [[f64; 4]; 4];

pub fn transform(r: &Mat3, t: &Vec3) -> Transform {
    let mut g = [[0.0; 4]; 4];
    for i in 0..3 {
        g[i][..3].copy_from_slice(&r[i]);
        g[i][3] = t[i];
    }
    g[3][3] = 1.0;
    g
}

pub fn compose(a: &Transform, b: &Transform) -> Transform {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posed {
    pub joints: Vec<Vec3>,
    pub transforms: Vec<Transform>,
}

/// Local offsets `t_k = rest_k - rest_parent(k)`, with `t_root = rest_root`.
pub fn local_offsets(tree: &KinematicTree, rest: &[Vec3]) -> Vec<Vec3> {
    (0..tree.len())
        .map(|k| match tree.parent(k) {
            None => rest[k],
            Some(p) => std::array::from_fn(|c| rest[k][c] - rest[p][c]),
        })
        .collect()
}

/// World transforms by parent composition: `G_k = G_parent(k) · [[R_k, t_k], [0, 1]]`.
///
/// Positions are accumulated as `rest_k + delta_k` with
/// `delta_k = delta_parent + (R_world_parent - I) t_k`, which equals the
/// translation of `G_k` and reproduces the rest joints exactly at zero pose.
pub fn forward_kinematics(tree: &KinematicTree, rotations: &[Rotation], beta: &[f64; NUM_BETAS]) -> Result<Posed> {
    if rotations.len() != tree.len() {
        return Err(Error::JointCount {
            what: "forward_kinematics rotations",
            expected: tree.len(),
            actual: rotations.len(),
        });
    }
    for r in rotations {
        Rotation::validate(r.0, 1e-6)?;
    }
    let rest = tree.rest_joints(beta);
    let offsets = local_offsets(tree, &rest);
    let mut world: Vec<Mat3> = vec![[[0.0; 3]; 3]; tree.len()];
    let mut delta: Vec<Vec3> = vec![[0.0; 3]; tree.len()];
    for &k in tree.order() {
        match tree.parent(k) {
            None => world[k] = rotations[k].0,
            Some(p) => {
                let mut rel = world[p];
                for (i, row) in rel.iter_mut().enumerate() {
                    row[i] -= 1.0;
                }
                let moved = mat_vec(&rel, &offsets[k]);
                delta[k] = std::array::from_fn(|c| delta[p][c] + moved[c]);
                world[k] = mat_mul(&world[p], &rotations[k].0);
            }
        }
    }
    let joints: Vec<Vec3> = (0..tree.len())
        .map(|k| std::array::from_fn(|c| rest[k][c] + delta[k][c]))
        .collect();
    let transforms = (0..tree.len()).map(|k| transform(&world[k], &joints[k])).collect();
    Ok(Posed { joints, transforms })
}

/// Differentiable forward kinematics on batches.
pub struct PosedTensors {
    /// `(F, J, 3)`
    pub joints: Tensor,
    /// `(F, J, 3, 3)` world rotations.
    pub rotations: Tensor,
}

/// `rotations: (F, J, 3, 3)` local rotations, `betas: (F, 10)`.
pub fn forward_kinematics_t(tree: &KinematicTree, rotations: &Tensor, betas: &Tensor) -> Result<PosedTensors> {
    let f = betas.shape()[0];
    let nj = tree.len();
    if rotations.shape() != [f, nj, 3, 3] {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "forward_kinematics",
            lhs: rotations.shape().to_vec(),
            rhs: vec![f, nj, 3, 3],
        }
        .into());
    }
    let rest = tree.rest_joints_t(betas)?;
    let eye = Tensor::new(&[3, 3], crate::geometry::IDENTITY.into_iter().flatten().collect())?;
    let mut world_rot: Vec<Option<Tensor>> = vec![None; nj];
    let mut delta: Vec<Option<Tensor>> = vec![None; nj];
    let mut pos: Vec<Option<Tensor>> = vec![None; nj];
    for &k in tree.order() {
        let r_k = rotations.select(1, k)?;
        let rest_k = rest.select(1, k)?;
        match tree.parent(k) {
            None => {
                world_rot[k] = Some(r_k);
                pos[k] = Some(rest_k);
            }
            Some(p) => {
                let g_p = world_rot[p].as_ref().expect("parent precedes child");
                let t_k = rest_k.sub(&rest.select(1, p)?)?.reshape(&[f, 3, 1])?;
                let moved = g_p.sub(&eye)?.matmul(&t_k)?.reshape(&[f, 3])?;
                let d = match &delta[p] {
                    Some(dp) => dp.add(&moved)?,
                    None => moved,
                };
                pos[k] = Some(rest_k.add(&d)?);
                delta[k] = Some(d);
                world_rot[k] = Some(g_p.matmul(&r_k)?);
            }
        }
    }
    let pos: Vec<Tensor> = pos.into_iter().map(|t| t.expect("all joints visited")).collect();
    let rots: Vec<Tensor> = world_rot.into_iter().map(|t| t.expect("all joints visited")).collect();
    Ok(PosedTensors {
        joints: Tensor::stack(&pos, 1)?,
        rotations: Tensor::stack(&rots, 1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle_to_matrix, AxisAngle};

    fn random_rotations(rng: &mut ChaCha8Rng, n: usize) -> Vec<Rotation> {
        (0..n)
            .map(|_| {
                let v = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                axis_angle_to_matrix(&AxisAngle(v))
            })
            .collect()
    }

    #[test]
    fn smpl_tree_has_expected_structure() {
        let t = KinematicTree::smpl();
        assert_eq!(t.len(), 24);
        assert_eq!(t.root(), 0);
        assert_eq!(t.undirected_edges().len(), 23);
        assert_eq!(t.ancestors(5).unwrap(), vec![0, 2]);
        assert!(t.ancestors(0).unwrap().is_empty());
        assert!(matches!(t.ancestors(24), Err(Error::JointOutOfRange { .. })));
    }

    #[test]
    fn ancestors_match_parent_walk() {
        let t = KinematicTree::smpl();
        for k in 0..24 {
            let mut path = Vec::new();
            let mut cur = k;
            while let Some(p) = SMPL_PARENTS[cur] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            assert_eq!(t.ancestors(k).unwrap(), path);
        }
    }

    #[test]
    fn zero_shape_gives_template_and_shape_is_linear() {
        let t = KinematicTree::smpl();
        assert_eq!(t.rest_joints(&[0.0; NUM_BETAS]), REST_TEMPLATE.to_vec());
        let beta: [f64; NUM_BETAS] = std::array::from_fn(|i| (i as f64 - 4.5) / 7.0);
        let double = beta.map(|b| 2.0 * b);
        let a = t.rest_joints(&beta);
        let b = t.rest_joints(&double);
        for k in 0..24 {
            for c in 0..3 {
                let da = a[k][c] - REST_TEMPLATE[k][c];
                let db = b[k][c] - REST_TEMPLATE[k][c];
                assert!((db - 2.0 * da).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_offsets_are_bounded_at_unit_norm() {
        let t = KinematicTree::smpl();
        let mut beta = [0.0; NUM_BETAS];
        beta[3] = 1.0;
        for (k, p) in t.rest_joints(&beta).iter().enumerate() {
            for c in 0..3 {
                assert!((p[c] - REST_TEMPLATE[k][c]).abs() <= SHAPE_OFFSET_SCALE + 1e-12);
            }
        }
    }

    #[test]
    fn tensor_rest_joints_match_plain() {
        let t = KinematicTree::smpl();
        let beta: [f64; NUM_BETAS] = std::array::from_fn(|i| (i as f64).sin());
        let bt = Tensor::new(&[1, NUM_BETAS], beta.to_vec()).unwrap();
        let r = t.rest_joints_t(&bt).unwrap();
        for (k, p) in t.rest_joints(&beta).iter().enumerate() {
            for c in 0..3 {
                assert!((r.data()[k * 3 + c] - p[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_pose_reproduces_rest_joints() {
        let t = KinematicTree::smpl();
        let beta: [f64; NUM_BETAS] = std::array::from_fn(|i| 0.3 * i as f64 - 1.0);
        let posed = forward_kinematics(&t, &vec![Rotation::identity(); 24], &beta).unwrap();
        assert_eq!(posed.joints, t.rest_joints(&beta));
    }

    #[test]
    fn global_rotation_rotates_whole_skeleton() {
        let t = KinematicTree::smpl();
        let beta = [0.0; NUM_BETAS];
        let r = axis_angle_to_matrix(&AxisAngle([0.3, -0.8, 0.4]));
        let mut rots = vec![Rotation::identity(); 24];
        rots[0] = r;
        let posed = forward_kinematics(&t, &rots, &beta).unwrap();
        let rest = t.rest_joints(&beta);
        for k in 0..24 {
            let d = std::array::from_fn(|c| rest[k][c] - rest[0][c]);
            let e = mat_vec(&r.0, &d);
            for c in 0..3 {
                assert!((posed.joints[k][c] - (e[c] + rest[0][c])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn own_rotation_moves_only_the_subtree_below() {
        let t = KinematicTree::smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = [0.1; NUM_BETAS];
        let rots = random_rotations(&mut rng, 24);
        let base = forward_kinematics(&t, &rots, &beta).unwrap();
        for k in 0..24 {
            let mut perturbed = rots.clone();
            perturbed[k] = Rotation(mat_mul(
                &rots[k].0,
                &axis_angle_to_matrix(&AxisAngle([0.2, 0.1, -0.3])).0,
            ));
            let moved = forward_kinematics(&t, &perturbed, &beta).unwrap();
            let below = t.subtree(k).unwrap();
            for j in 0..24 {
                if j == k || !below.contains(&j) {
                    assert_eq!(moved.joints[j], base.joints[j], "joint {j} moved when rotating {k}");
                } else {
                    assert_ne!(moved.joints[j], base.joints[j]);
                }
            }
        }
    }

    #[test]
    fn tensor_fk_matches_plain() {
        let t = KinematicTree::smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = 3;
        let mut rot_data = Vec::new();
        let mut beta_data = Vec::new();
        let mut expect = Vec::new();
        for _ in 0..frames {
            let rots = random_rotations(&mut rng, 24);
            let beta: [f64; NUM_BETAS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            rot_data.extend(rots.iter().flat_map(|r| r.0.into_iter().flatten()));
            beta_data.extend(beta);
            expect.push(forward_kinematics(&t, &rots, &beta).unwrap());
        }
        let posed = forward_kinematics_t(
            &t,
            &Tensor::new(&[frames, 24, 3, 3], rot_data).unwrap(),
            &Tensor::new(&[frames, NUM_BETAS], beta_data).unwrap(),
        )
        .unwrap();
        for (fi, e) in expect.iter().enumerate() {
            for k in 0..24 {
                for c in 0..3 {
                    let v = posed.joints.data()[(fi * 24 + k) * 3 + c];
                    assert!((v - e.joints[k][c]).abs() < 1e-12);
                    for j in 0..3 {
                        let g = posed.rotations.data()[((fi * 24 + k) * 3 + c) * 3 + j];
                        assert!((g - e.transforms[k][c][j]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fk_rejects_invalid_rotations() {
        let t = KinematicTree::smpl();
        let mut rots = vec![Rotation::identity(); 24];
        rots[4] = Rotation([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            forward_kinematics(&t, &rots, &[0.0; NUM_BETAS]),
            Err(Error::NotRotation(_))
        ));
    }

    #[test]
    fn random_trees_are_spanning_and_reproducible() {
        for seed in 0..50 {
            let t = KinematicTree::random(seed);
            assert_eq!(t.root(), 0);
            assert_eq!(t.undirected_edges().len(), 23);
            assert_eq!(t.order().len(), 24);
            assert_eq!(t, KinematicTree::random(seed));
        }
        assert_ne!(KinematicTree::random(1), KinematicTree::random(2));
    }

    #[test]
    fn reverse_tree_flips_root_path_and_keeps_edges() {
        let t = KinematicTree::smpl();
        let r = t.reversed();
        assert_eq!(r.root(), 22);
        assert_eq!(r.undirected_edges(), t.undirected_edges());
        // along the old root-to-leaf path, parent and child swap
        let path = t.ancestors(22).unwrap();
        for w in path.windows(2).chain(std::iter::once(&[20, 22][..])) {
            assert_eq!(t.parent(w[1]), Some(w[0]));
            assert_eq!(r.parent(w[0]), Some(w[1]));
        }
        assert_eq!(r.parent(5), Some(2));
        assert_eq!(r.reversed().undirected_edges(), t.undirected_edges());
    }

    #[test]
    fn text_format_round_trips_and_validates() {
        let t = KinematicTree::smpl();
        assert_eq!(KinematicTree::parse(&t.to_text()).unwrap(), t);
        let text = t.to_text();
        let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(KinematicTree::parse(&missing).is_err());
        let edit = |from: &str, to: &str| -> String {
            text.lines()
                .map(|l| match l.strip_prefix(from) {
                    Some(rest) => format!("{to}{rest}\n"),
                    None => format!("{l}\n"),
                })
                .collect()
        };
        assert!(KinematicTree::parse(&edit("1 0 ", "1 -1 ")).is_err());
        assert!(KinematicTree::parse(&edit("1 0 ", "1 4 ")).is_err());
        assert!(KinematicTree::parse(&edit("1 0 ", "1 0 0 ")).is_err());
        assert!(KinematicTree::parse(&edit("1 0 ", "1 0 ")).is_ok());
        assert!(KinematicTree::parse("0 -1 0 0\n").is_err());
        let commented = format!("# skeleton\n\n{text}");
        assert!(KinematicTree::parse(&commented).is_ok());
    }
}
