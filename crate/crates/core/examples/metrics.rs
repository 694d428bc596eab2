//! MPJPE, Procrustes-aligned MPJPE and acceleration error on a synthetic clip
//! and on distorted copies of it.

use maed::geometry::{axis_angle_to_matrix, mat_vec, AxisAngle};
use maed::harness::synth::{generate, SynthConfig};
use maed::harness::RunConfig;
use maed::metrics::{accel_error, mpjpe, pa_mpjpe, Frame};

fn report(name: &str, pred: &[Frame], gt: &[Frame]) -> maed::Result<()> {
    println!(
        "{name:>24}: mpjpe {:8.3} mm  pa-mpjpe {:8.3} mm  accel {:8.3} mm/frame^2",
        mpjpe(pred, gt)?,
        pa_mpjpe(pred, gt)?,
        accel_error(pred, gt)?
    );
    Ok(())
}

fn main() -> maed::Result<()> {
    let clip = &generate(&SynthConfig::from_run(&RunConfig::default(), 5, 1))?[0];
    let gt = clip.joint_frames();

    let r = axis_angle_to_matrix(&AxisAngle([0.2, -0.5, 0.3]));
    let similar: Vec<Frame> = gt
        .iter()
        .map(|f| f.iter().map(|p| mat_vec(&r.0, p).map(|c| 1.3 * c + 0.1)).collect())
        .collect();
    let offset: Vec<Frame> = gt
        .iter()
        .map(|f| f.iter().map(|p| [p[0] + 0.05, p[1], p[2]]).collect())
        .collect();
    let jitter: Vec<Frame> = gt
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let s = if t % 2 == 0 { 0.01 } else { -0.01 };
            f.iter().map(|p| [p[0] + s, p[1], p[2]]).collect()
        })
        .collect();

    report("identical", &gt, &gt)?;
    report("rotated, scaled, moved", &similar, &gt)?;
    report("constant 5 cm offset", &offset, &gt)?;
    report("1 cm frame jitter", &jitter, &gt)?;
    Ok(())
}
