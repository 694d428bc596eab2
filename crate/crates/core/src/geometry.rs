//! Rotation representations and the weak-perspective camera.
//!
//! Conventions: matrices are row-major `[[f64; 3]; 3]` acting on column
//! vectors. A 6D rotation packs the first two *columns* of the matrix,
//! `(R00, R10, R20, R01, R11, R21)`, and is mapped back to a rotation by
//! Gram-Schmidt orthonormalization.
//!
//! Every conversion exists twice: once on plain arrays (used by the data
//! generator and the oracles) and once as a differentiable [`Tensor`] op
//! working over arbitrary leading batch axes.

use crate::tensor::Tensor;
use crate::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Minimum column norm accepted when orthonormalizing a 6D rotation.
pub const EPS_ROT: f64 = 1e-8;

/// Below this angle Rodrigues-type formulas switch to their series expansions.
const SMALL_ANGLE: f64 = 1e-6;

pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Rotation vector: direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

/// First two columns of a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6d(pub [f64; 6]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub Mat3);

/// Weak-perspective camera `(s, tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Camera {
    pub fn new(scale: f64, tx: f64, ty: f64) -> Result<Self> {
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::NonPositiveScale(scale));
        }
        Ok(Camera { scale, tx, ty })
    }

    pub fn to_array(self) -> Vec3 {
        [self.scale, self.tx, self.ty]
    }

    pub fn project(&self, p: &Vec3) -> [f64; 2] {
        [self.scale * p[0] + self.tx, self.scale * p[1] + self.ty]
    }
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&a[0], v), dot(&a[1], v), dot(&a[2], v)]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn det(a: &Mat3) -> f64 {
    dot(&a[0], &cross(&a[1], &a[2]))
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Rotation {
    pub fn identity() -> Self {
        Rotation(IDENTITY)
    }

    /// Checks orthonormality and unit determinant within `tol`.
    pub fn validate(m: Mat3, tol: f64) -> Result<Self> {
        let rtr = mat_mul(&transpose(&m), &m);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((rtr[i][j] - IDENTITY[i][j]).abs());
            }
        }
        let d = det(&m);
        if !(worst <= tol && (d - 1.0).abs() <= tol) {
            return Err(Error::NotRotation(format!("max |RᵀR - I| = {worst:.3e}, det = {d}")));
        }
        Ok(Rotation(m))
    }

    pub fn to_6d(&self) -> Rot6d {
        let m = &self.0;
        Rot6d([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }
}

/// Gram-Schmidt on the two packed columns.
pub fn rot6d_to_matrix(r: &Rot6d) -> Result<Rotation> {
    let a1 = [r.0[0], r.0[1], r.0[2]];
    let a2 = [r.0[3], r.0[4], r.0[5]];
    let (b1, b2, b3) = gram_schmidt(&a1, &a2)?;
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        m[i] = [b1[i], b2[i], b3[i]];
    }
    Ok(Rotation(m))
}

fn gram_schmidt(a1: &Vec3, a2: &Vec3) -> Result<(Vec3, Vec3, Vec3)> {
    let n1 = norm(a1);
    if n1.is_nan() || n1 <= EPS_ROT {
        return Err(Error::DegenerateRotation(format!("first column norm {n1:e}")));
    }
    let b1 = a1.map(|v| v / n1);
    let proj = dot(&b1, a2);
    let u = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
    let n2 = norm(&u);
    if n2.is_nan() || n2 <= EPS_ROT {
        return Err(Error::DegenerateRotation(format!(
            "second column is parallel to the first (residual norm {n2:e})"
        )));
    }
    let b2 = u.map(|v| v / n2);
    let b3 = cross(&b1, &b2);
    Ok((b1, b2, b3))
}

fn skew(v: &Vec3) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

/// `sin(t)/t` and `(1 - cos t)/t^2`, with series near zero.
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rodrigues formula `R = I + a K + b K^2` with `K = [v]x`.
pub fn axis_angle_to_matrix(v: &AxisAngle) -> Rotation {
    let theta = norm(&v.0);
    let (a, b) = rodrigues_coeffs(theta);
    let k = skew(&v.0);
    let k2 = mat_mul(&k, &k);
    let mut m = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    Rotation(m)
}

/// Inverse of [`axis_angle_to_matrix`], returning an angle in `[0, pi]`.
pub fn matrix_to_axis_angle(r: &Rotation) -> Result<AxisAngle> {
    let m = Rotation::validate(r.0, 1e-6)?.0;
    let w = [
        0.5 * (m[2][1] - m[1][2]),
        0.5 * (m[0][2] - m[2][0]),
        0.5 * (m[1][0] - m[0][1]),
    ];
    let c = ((m[0][0] + m[1][1] + m[2][2] - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = norm(&w);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        let f = 1.0 + s * s / 6.0;
        return Ok(AxisAngle(w.map(|x| x * f)));
    }
    if c > -0.99 {
        let f = theta / s;
        return Ok(AxisAngle(w.map(|x| x * f)));
    }
    // Near a half turn sin(theta) carries no precision; read the axis from the
    // symmetric part (R + Rᵀ)/2 = cos(t) I + (1 - cos t) a aᵀ.
    let mut sym = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sym[i][j] = 0.5 * (m[i][j] + m[j][i]) - if i == j { c } else { 0.0 };
        }
    }
    let i = (0..3).max_by(|&a, &b| sym[a][a].total_cmp(&sym[b][b])).unwrap_or(0);
    let col = [sym[0][i], sym[1][i], sym[2][i]];
    let n = norm(&col);
    let mut axis = col.map(|x| x / n);
    if dot(&axis, &w) < 0.0 {
        axis = axis.map(|x| -x);
    }
    Ok(AxisAngle(axis.map(|x| x * theta)))
}

fn last_axis(t: &Tensor, extent: usize, op: &'static str) -> Result<()> {
    if t.shape().last() != Some(&extent) {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![extent],
        }
        .into());
    }
    Ok(())
}

/// Differentiable 6D-to-matrix over `(..., 6) -> (..., 3, 3)`.
pub fn rot6d_to_matrix_t(x: &Tensor) -> Result<Tensor> {
    last_axis(x, 6, "rot6d_to_matrix")?;
    let rows = x.numel() / 6;
    let mut out = Vec::with_capacity(rows * 9);
    // b1, b2 and the two pre-normalization norms, per row
    let mut saved: Vec<(Vec3, Vec3, f64, f64)> = Vec::with_capacity(rows);
    for r in x.data().chunks_exact(6) {
        let a1 = [r[0], r[1], r[2]];
        let a2 = [r[3], r[4], r[5]];
        let (b1, b2, b3) = gram_schmidt(&a1, &a2)?;
        let n1 = norm(&a1);
        let proj = dot(&b1, &a2);
        let u = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
        saved.push((b1, b2, n1, norm(&u)));
        for i in 0..3 {
            out.extend([b1[i], b2[i], b3[i]]);
        }
    }
    let mut shape = x.shape()[..x.rank() - 1].to_vec();
    shape.extend([3, 3]);
    let input = x.clone();
    Ok(Tensor::from_op(
        "rot6d_to_matrix",
        shape,
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; input.numel()];
            for (row, (b1, b2, n1, n2)) in saved.iter().enumerate() {
                let gm = &g[row * 9..row * 9 + 9];
                let col = |j: usize| [gm[j], gm[3 + j], gm[6 + j]];
                let (mut g1, mut g2, g3) = (col(0), col(1), col(2));
                // b3 = b1 x b2
                let c1 = cross(b2, &g3);
                let c2 = cross(&g3, b1);
                for i in 0..3 {
                    g1[i] += c1[i];
                    g2[i] += c2[i];
                }
                // b2 = u / |u|
                let d2 = dot(b2, &g2);
                let gu: Vec3 = std::array::from_fn(|i| (g2[i] - b2[i] * d2) / n2);
                // u = a2 - (b1·a2) b1
                let a2 = &input.data()[row * 6 + 3..row * 6 + 6];
                let a2 = [a2[0], a2[1], a2[2]];
                let p = dot(b1, &a2);
                let bu = dot(b1, &gu);
                let ga2: Vec3 = std::array::from_fn(|i| gu[i] - b1[i] * bu);
                for i in 0..3 {
                    g1[i] += -p * gu[i] - bu * a2[i];
                }
                // b1 = a1 / |a1|
                let d1 = dot(b1, &g1);
                let ga1: Vec3 = std::array::from_fn(|i| (g1[i] - b1[i] * d1) / n1);
                gx[row * 6..row * 6 + 3].copy_from_slice(&ga1);
                gx[row * 6 + 3..row * 6 + 6].copy_from_slice(&ga2);
            }
            vec![Some(gx)]
        },
    ))
}

/// Differentiable Rodrigues map `(..., 3) -> (..., 3, 3)`.
pub fn axis_angle_to_matrix_t(x: &Tensor) -> Result<Tensor> {
    last_axis(x, 3, "axis_angle_to_matrix")?;
    let mut out = Vec::with_capacity(x.numel() * 3);
    for v in x.data().chunks_exact(3) {
        let m = axis_angle_to_matrix(&AxisAngle([v[0], v[1], v[2]])).0;
        out.extend(m.iter().flatten());
    }
    let mut shape = x.shape().to_vec();
    shape.push(3);
    let input = x.clone();
    Ok(Tensor::from_op(
        "axis_angle_to_matrix",
        shape,
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; input.numel()];
            for (row, v) in input.data().chunks_exact(3).enumerate() {
                let v = [v[0], v[1], v[2]];
                let theta = norm(&v);
                let (a, b) = rodrigues_coeffs(theta);
                // (da/dθ)/θ and (db/dθ)/θ
                let (da, db) = if theta < 1e-4 {
                    let t2 = theta * theta;
                    (-1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0)
                } else {
                    let (s, c) = theta.sin_cos();
                    (
                        (theta * c - s) / theta.powi(3),
                        (theta * s - 2.0 * (1.0 - c)) / theta.powi(4),
                    )
                };
                let k = skew(&v);
                let k2 = mat_mul(&k, &k);
                let gm = &g[row * 9..row * 9 + 9];
                let inner = |m: &Mat3| -> f64 { (0..9).map(|e| gm[e] * m[e / 3][e % 3]).sum() };
                let gk = inner(&k);
                let gk2 = inner(&k2);
                for i in 0..3 {
                    let mut e = [0.0; 3];
                    e[i] = 1.0;
                    let dk = skew(&e);
                    let dk2a = mat_mul(&dk, &k);
                    let dk2b = mat_mul(&k, &dk);
                    let mut sum = (da * gk + db * gk2) * v[i];
                    for p in 0..3 {
                        for q in 0..3 {
                            sum += gm[p * 3 + q] * (a * dk[p][q] + b * (dk2a[p][q] + dk2b[p][q]));
                        }
                    }
                    gx[row * 3 + i] = sum;
                }
            }
            vec![Some(gx)]
        },
    ))
}

/// Below this `sin(theta)` the axis read from the skew part loses precision.
const HALF_TURN_SIN: f64 = 1e-4;

/// Differentiable matrix-to-axis-angle `(..., 3, 3) -> (..., 3)`.
///
/// Inputs are assumed to be rotations (no validation, so gradients can be
/// probed off the manifold). Within `asin(1e-4)` of a half turn the value
/// falls back to the robust conversion and the gradient is dropped.
pub fn matrix_to_axis_angle_t(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    if r < 2 || x.shape()[r - 2..] != [3, 3] {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "matrix_to_axis_angle",
            lhs: x.shape().to_vec(),
            rhs: vec![3, 3],
        }
        .into());
    }
    #[derive(Clone, Copy)]
    enum Branch {
        Small,
        Regular,
        HalfTurn,
    }
    let mut out = Vec::with_capacity(x.numel() / 3);
    let mut branches = Vec::with_capacity(x.numel() / 9);
    for m in x.data().chunks_exact(9) {
        let w = [0.5 * (m[7] - m[5]), 0.5 * (m[2] - m[6]), 0.5 * (m[3] - m[1])];
        let c = 0.5 * (m[0] + m[4] + m[8] - 1.0);
        let s = norm(&w);
        let theta = s.atan2(c);
        if theta < SMALL_ANGLE {
            let f = 1.0 + s * s / 6.0;
            out.extend(w.map(|v| v * f));
            branches.push(Branch::Small);
        } else if c > -0.99 || s > HALF_TURN_SIN {
            let f = theta / s;
            out.extend(w.map(|v| v * f));
            branches.push(Branch::Regular);
        } else {
            let mat = [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]];
            let aa = matrix_to_axis_angle(&Rotation(mat))
                .map_err(|e| Error::NotRotation(format!("half-turn conversion failed: {e}")))?;
            out.extend(aa.0);
            branches.push(Branch::HalfTurn);
        }
    }
    let shape = x.shape()[..r - 1].to_vec();
    let input = x.clone();
    Ok(Tensor::from_op(
        "matrix_to_axis_angle",
        shape,
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; input.numel()];
            for (row, m) in input.data().chunks_exact(9).enumerate() {
                let gv = [g[row * 3], g[row * 3 + 1], g[row * 3 + 2]];
                let w = [0.5 * (m[7] - m[5]), 0.5 * (m[2] - m[6]), 0.5 * (m[3] - m[1])];
                let c = 0.5 * (m[0] + m[4] + m[8] - 1.0);
                let s = norm(&w);
                let (gw, gc): (Vec3, f64) = match branches[row] {
                    Branch::HalfTurn => continue,
                    Branch::Small => {
                        let f = 1.0 + s * s / 6.0;
                        let gdw = dot(&gv, &w);
                        (std::array::from_fn(|i| f * gv[i] + gdw * w[i] / 3.0), 0.0)
                    }
                    Branch::Regular => {
                        let theta = s.atan2(c);
                        let r2 = s * s + c * c;
                        let f = theta / s;
                        let dtheta_ds = c / r2;
                        let dtheta_dc = -s / r2;
                        let df_ds = (dtheta_ds * s - theta) / (s * s);
                        let df_dc = dtheta_dc / s;
                        let gdw = dot(&gv, &w);
                        (std::array::from_fn(|i| f * gv[i] + gdw * df_ds * w[i] / s), gdw * df_dc)
                    }
                };
                let o = row * 9;
                gx[o + 7] += 0.5 * gw[0];
                gx[o + 5] -= 0.5 * gw[0];
                gx[o + 2] += 0.5 * gw[1];
                gx[o + 6] -= 0.5 * gw[1];
                gx[o + 3] += 0.5 * gw[2];
                gx[o + 1] -= 0.5 * gw[2];
                for d in [0, 4, 8] {
                    gx[o + d] += 0.5 * gc;
                }
            }
            vec![Some(gx)]
        },
    ))
}

/// Weak-perspective projection `(..., J, 3)` with cameras `(..., 3)` to `(..., J, 2)`.
pub fn project_t(joints: &Tensor, cam: &Tensor) -> Result<Tensor> {
    let r = joints.rank();
    let mismatch = || -> Error {
        crate::tensor::TensorError::ShapeMismatch {
            op: "project",
            lhs: joints.shape().to_vec(),
            rhs: cam.shape().to_vec(),
        }
        .into()
    };
    if r < 2 || joints.shape()[r - 1] != 3 || cam.shape().last() != Some(&3) {
        return Err(mismatch());
    }
    if joints.shape()[..r - 2] != cam.shape()[..cam.rank() - 1] {
        return Err(mismatch());
    }
    let nj = joints.shape()[r - 2];
    if let Some(s) = cam
        .data()
        .chunks_exact(3)
        .map(|c| c[0])
        .find(|s| s.is_nan() || *s <= 0.0)
    {
        return Err(Error::NonPositiveScale(s));
    }
    let mut out = Vec::with_capacity(joints.numel() / 3 * 2);
    for (pts, c) in joints.data().chunks_exact(nj * 3).zip(cam.data().chunks_exact(3)) {
        for p in pts.chunks_exact(3) {
            out.push(c[0] * p[0] + c[1]);
            out.push(c[0] * p[1] + c[2]);
        }
    }
    let mut shape = joints.shape().to_vec();
    shape[r - 1] = 2;
    let (tj, tc) = (joints.clone(), cam.clone());
    Ok(Tensor::from_op(
        "project",
        shape,
        out,
        vec![joints.clone(), cam.clone()],
        move |g| {
            let mut gj = vec![0.0; tj.numel()];
            let mut gc = vec![0.0; tc.numel()];
            for (l, c) in tc.data().chunks_exact(3).enumerate() {
                for j in 0..nj {
                    let p = &tj.data()[(l * nj + j) * 3..(l * nj + j) * 3 + 3];
                    let gg = &g[(l * nj + j) * 2..(l * nj + j) * 2 + 2];
                    gj[(l * nj + j) * 3] = c[0] * gg[0];
                    gj[(l * nj + j) * 3 + 1] = c[0] * gg[1];
                    gc[l * 3] += gg[0] * p[0] + gg[1] * p[1];
                    gc[l * 3 + 1] += gg[0];
                    gc[l * 3 + 2] += gg[1];
                }
            }
            vec![Some(gj), Some(gc)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_fn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
        let mut d = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((a[i][j] - b[i][j]).abs());
            }
        }
        d
    }

    #[test]
    fn canonical_6d_is_identity() {
        let r = rot6d_to_matrix(&Rot6d(IDENTITY_6D)).unwrap();
        assert_eq!(r.0, IDENTITY);
    }

    #[test]
    fn parallel_columns_are_degenerate() {
        let r = Rot6d([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(rot6d_to_matrix(&r), Err(Error::DegenerateRotation(_))));
        let z = Rot6d([0.0; 6]);
        assert!(matches!(rot6d_to_matrix(&z), Err(Error::DegenerateRotation(_))));
        let t = Tensor::new(&[1, 6], vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert!(rot6d_to_matrix_t(&t).is_err());
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(axis_angle_to_matrix(&AxisAngle([0.0; 3])).0, IDENTITY);
    }

    #[test]
    fn half_turn_about_x() {
        let r = axis_angle_to_matrix(&AxisAngle([std::f64::consts::PI, 0.0, 0.0]));
        let expect = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(max_abs_diff(&r.0, &expect) < 1e-15);
        let back = matrix_to_axis_angle(&r).unwrap();
        assert!((back.0[0].abs() - std::f64::consts::PI).abs() < 1e-9);
        assert!(back.0[1].abs() < 1e-9 && back.0[2].abs() < 1e-9);
    }

    #[test]
    fn inverse_rejects_non_rotations() {
        let scaled = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matrix_to_axis_angle(&Rotation(scaled)).is_err());
        let reflection = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matrix_to_axis_angle(&Rotation(reflection)).is_err());
    }

    #[test]
    fn small_angles_round_trip() {
        for v in [[1e-9, -2e-9, 3e-10], [3e-7, 0.0, -1e-7], [0.0, 0.0, 0.0]] {
            let back = matrix_to_axis_angle(&axis_angle_to_matrix(&AxisAngle(v))).unwrap();
            for i in 0..3 {
                assert!((back.0[i] - v[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_cases() {
        let cam = Camera::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(cam.project(&[0.3, -0.2, 5.0]), [0.3, -0.2]);
        let shifted = Camera::new(1.0, 0.25, -0.5).unwrap();
        assert_eq!(shifted.project(&[0.3, -0.2, 5.0]), [0.55, -0.7]);
        assert!(Camera::new(0.0, 0.0, 0.0).is_err());
        let j = Tensor::new(&[1, 2, 3], vec![0.0; 6]).unwrap();
        let c = Tensor::new(&[1, 3], vec![-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(project_t(&j, &c), Err(Error::NonPositiveScale(_))));
    }

    #[test]
    fn projection_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, nj) = (4, 24);
        let joints: Vec<f64> = (0..f * nj * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cams: Vec<f64> = (0..f)
            .flat_map(|_| {
                [
                    rng.random_range(0.5..1.5),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                ]
            })
            .collect();
        let out = project_t(
            &Tensor::new(&[f, nj, 3], joints.clone()).unwrap(),
            &Tensor::new(&[f, 3], cams.clone()).unwrap(),
        )
        .unwrap();
        for fi in 0..f {
            let cam = Camera::new(cams[fi * 3], cams[fi * 3 + 1], cams[fi * 3 + 2]).unwrap();
            for j in 0..nj {
                let p = &joints[(fi * nj + j) * 3..(fi * nj + j) * 3 + 3];
                let e = cam.project(&[p[0], p[1], p[2]]);
                assert_eq!(out.data()[(fi * nj + j) * 2], e[0]);
                assert_eq!(out.data()[(fi * nj + j) * 2 + 1], e[1]);
            }
        }
    }

    #[test]
    fn tensor_conversions_agree_with_plain_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r6: Vec<f64> = (0..5 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mats = rot6d_to_matrix_t(&Tensor::new(&[5, 6], r6.clone()).unwrap()).unwrap();
        assert_eq!(mats.shape(), &[5, 3, 3]);
        let aa = matrix_to_axis_angle_t(&mats).unwrap();
        let back = axis_angle_to_matrix_t(&aa).unwrap();
        for i in 0..5 {
            let plain = rot6d_to_matrix(&Rot6d(r6[i * 6..i * 6 + 6].try_into().unwrap())).unwrap();
            let v = matrix_to_axis_angle(&plain).unwrap();
            for k in 0..9 {
                assert!((mats.data()[i * 9 + k] - plain.0[k / 3][k % 3]).abs() < 1e-15);
                assert!((back.data()[i * 9 + k] - plain.0[k / 3][k % 3]).abs() < 1e-12);
            }
            for k in 0..3 {
                assert!((aa.data()[i * 3 + k] - v.0[k]).abs() < 1e-12);
            }
        }
    }

    fn weighted(t: &Tensor) -> crate::tensor::Result<Tensor> {
        let w: Vec<f64> = (0..t.numel()).map(|i| ((i * 5 + 1) % 9) as f64 / 4.0 - 1.0).collect();
        Ok(t.mul(&Tensor::new(t.shape(), w)?)?.sum())
    }

    fn tensor_err(e: Error) -> crate::tensor::TensorError {
        crate::tensor::TensorError::Invalid(e.to_string())
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r6 = Tensor::new(&[4, 6], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let err = check_fn(
            |t| weighted(&rot6d_to_matrix_t(&t[0]).map_err(tensor_err)?),
            &[r6],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "rot6d {err}");

        let aa = Tensor::new(&[4, 3], (0..12).map(|_| rng.random_range(-1.2..1.2)).collect()).unwrap();
        let err = check_fn(
            |t| weighted(&axis_angle_to_matrix_t(&t[0]).map_err(tensor_err)?),
            &[aa.clone()],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "axis_angle {err}");

        let mats = axis_angle_to_matrix_t(&aa).unwrap().detach();
        let err = check_fn(
            |t| weighted(&matrix_to_axis_angle_t(&t[0]).map_err(tensor_err)?),
            &[mats],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "matrix_to_axis_angle {err}");

        let j = Tensor::new(&[2, 5, 3], (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let c = Tensor::new(&[2, 3], vec![0.9, 0.1, -0.1, 1.2, 0.0, 0.3]).unwrap();
        let err = check_fn(
            |t| weighted(&project_t(&t[0], &t[1]).map_err(tensor_err)?),
            &[j, c],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "project {err}");
    }

    #[test]
    fn small_angle_gradients_are_finite() {
        let aa = Tensor::param(&[2, 3], vec![0.0, 0.0, 0.0, 1e-8, -2e-8, 0.0]).unwrap();
        let m = axis_angle_to_matrix_t(&aa).unwrap();
        let back = matrix_to_axis_angle_t(&m).unwrap();
        back.square().sum().add(&m.sum()).unwrap().backward().unwrap();
        assert!(aa.grad().unwrap().iter().all(|g| g.is_finite()));
    }
}
