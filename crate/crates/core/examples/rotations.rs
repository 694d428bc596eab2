//! 6D rotation encoding, axis-angle conversions and the weak-perspective camera.

use maed::geometry::{
    axis_angle_to_matrix, det, mat_mul, matrix_to_axis_angle, rot6d_to_matrix, transpose, AxisAngle, Camera, Rot6d,
};

fn main() -> maed::Result<()> {
    // any two non-parallel columns map to a proper rotation
    let r = rot6d_to_matrix(&Rot6d([2.0, 0.3, -0.5, 0.1, 1.4, 0.7]))?;
    let rtr = mat_mul(&transpose(&r.0), &r.0);
    println!("R = {:?}", r.0);
    println!("det R = {:.12}, R^T R = {rtr:?}", det(&r.0));
    println!("6D of R = {:?}", r.to_6d().0);

    for v in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.9], [0.0, 3.0, 0.0]] {
        let m = axis_angle_to_matrix(&AxisAngle(v));
        let back = matrix_to_axis_angle(&m)?;
        println!("axis-angle {v:?} -> matrix -> {:?}", back.0);
    }

    let cam = Camera::new(0.9, 0.05, -0.02)?;
    println!("camera projects (0.1, 0.2, 3.0) to {:?}", cam.project(&[0.1, 0.2, 3.0]));
    Ok(())
}
