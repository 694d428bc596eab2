//! Overfits eight synthetic clips with both decoders and reports the loss drop
//! and training-set MPJPE.
//!
//! ```text
//! cargo run --release --example overfit_training [lr] [image_steps] [video_steps]
//! ```

use std::time::Instant;

use maed::decoders::DecoderKind;
use maed::harness::eval::evaluate;
use maed::harness::synth::{generate, SynthConfig};
use maed::harness::train::{full_loss, train_model};
use maed::harness::{Model, RunConfig};

fn main() -> maed::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::overfit();
    if let Some(lr) = args.first() {
        cfg.adam.lr = lr.parse().expect("learning rate");
    }
    if let Some(s) = args.get(1) {
        cfg.image_steps = s.parse().expect("image steps");
    }
    if let Some(s) = args.get(2) {
        cfg.video_steps = s.parse().expect("video steps");
    }
    let clips = generate(&SynthConfig::from_run(&cfg, cfg.seed, cfg.clips))?;
    for decoder in [DecoderKind::Ktd, DecoderKind::Iterative] {
        let cfg = RunConfig { decoder, ..cfg.clone() };
        let mut model = Model::new(&cfg)?;
        let initial = full_loss(&cfg, &model, &clips)?;
        let start = Instant::now();
        let log = train_model(&cfg, &mut model, &clips, |r| {
            if r.step % 50 == 0 {
                println!(
                    "{decoder:>9} step {:>4} {:5} loss {:10.3} l3d {:.4} l2d {:.4} pose {:.4}",
                    r.step,
                    r.kind.name(),
                    r.total,
                    r.l3d,
                    r.l2d,
                    r.smpl_pose
                );
            }
        })?;
        let report = evaluate(&model, &clips)?;
        let (mpjpe, pa, accel) = report.mean();
        let first = initial;
        let last = full_loss(&cfg, &model, &clips)?;
        println!("{decoder}: {} steps logged", log.len());
        println!(
            "{decoder}: loss {first:.3} -> {last:.3} ({:.1}%), mpjpe {mpjpe:.2} mm, pa-mpjpe {pa:.2} mm, accel {accel:.2}, {:.1} s",
            100.0 * last / first,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
