//! The kinematic topology decoder: per-joint regressor widths, which weights
//! each joint rotation depends on, and decoding into joints.

use maed::decoders::{smpl_forward, KtdDecoder};
use maed::kinematics::{KinematicTree, JOINT_NAMES, NUM_JOINTS};
use maed::nn::{named_params, param_count, zero_grads};
use maed::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> maed::Result<()> {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tree = KinematicTree::smpl();
    let mut ktd = KtdDecoder::xavier(&mut rng, d, tree.clone())?;
    // random weights everywhere, but a positive camera scale like the trained model
    ktd.cam.bias = ktd.cam.bias.with_data(vec![1.0, 0.0, 0.0])?;
    println!("{} parameters for d = {d}", param_count(&ktd));

    let x = Tensor::new(&[2, d], (0..2 * d).map(|_| rng.random_range(-0.2..0.2)).collect())?;
    for k in 0..NUM_JOINTS {
        zero_grads(&ktd);
        ktd.decode(&x)?.pose6d.select(1, k)?.sum().backward()?;
        let live: Vec<String> = named_params(&ktd)
            .into_iter()
            .filter(|(n, t)| n.ends_with("weight") && t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0)))
            .map(|(n, _)| n.trim_start_matches("joint.").trim_end_matches(".weight").to_string())
            .collect();
        println!(
            "{:>16}: input width {:>3}, rotation depends on regressors [{}]",
            JOINT_NAMES[k],
            ktd.input_width(k),
            live.join(" ")
        );
    }

    let params = ktd.decode(&x)?;
    let out = smpl_forward(&params, &tree)?;
    println!(
        "joints3d {:?}, joints2d {:?}",
        out.joints3d.shape(),
        out.joints2d.shape()
    );
    Ok(())
}
