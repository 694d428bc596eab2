//! The 24-joint body tree: ancestors, shape-conditioned rest joints and posing.
//!
//! ```text
//! cargo run --example forward_kinematics [tree.txt]
//! ```

use maed::geometry::{axis_angle_to_matrix, AxisAngle, Rotation};
use maed::kinematics::{forward_kinematics, KinematicTree, JOINT_NAMES, NUM_BETAS, NUM_JOINTS};

fn main() -> maed::Result<()> {
    let tree = match std::env::args().nth(1) {
        Some(path) => KinematicTree::load(path.as_ref())?,
        None => KinematicTree::smpl(),
    };
    for k in [0, 5, 20] {
        println!("ancestors of {} ({k}): {:?}", JOINT_NAMES[k], tree.ancestors(k)?);
    }

    let mut beta = [0.0; NUM_BETAS];
    beta[0] = 1.0;
    let rest = tree.rest_joints(&beta);

    // bend the left knee and raise the right shoulder
    let mut pose = vec![Rotation::identity(); NUM_JOINTS];
    pose[4] = axis_angle_to_matrix(&AxisAngle([1.2, 0.0, 0.0]));
    pose[17] = axis_angle_to_matrix(&AxisAngle([0.0, 0.0, 1.0]));
    let posed = forward_kinematics(&tree, &pose, &beta)?;

    println!("{:>16} {:>28} {:>28}", "joint", "rest", "posed");
    for k in 0..NUM_JOINTS {
        let f = |p: [f64; 3]| format!("({:7.3}, {:7.3}, {:7.3})", p[0], p[1], p[2]);
        println!("{:>16} {:>28} {:>28}", JOINT_NAMES[k], f(rest[k]), f(posed.joints[k]));
    }
    Ok(())
}
