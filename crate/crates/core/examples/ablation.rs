//! A short encoder and decoder ablation on a handful of clips.
//!
//! ```text
//! cargo run --release --example ablation [steps]
//! ```

use maed::harness::ablate::{ablate, to_csv};
use maed::harness::synth::{generate, SynthConfig};
use maed::harness::RunConfig;

fn main() -> maed::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(60, |s| s.parse().expect("steps"));
    let cfg = RunConfig {
        width: 32,
        heads: 4,
        clips: 4,
        image_steps: steps / 5,
        video_steps: steps - steps / 5,
        eval_seed: Some(99),
        eval_clips: 4,
        ..RunConfig::overfit()
    };
    let clips = generate(&SynthConfig::from_run(&cfg, cfg.seed, cfg.clips))?;
    let held_out = generate(&SynthConfig::from_run(&cfg, 99, cfg.eval_clips))?;
    let rows = ablate(&cfg, &clips, &held_out, |v, r| {
        println!(
            "{:<28} mpjpe {:8.2}  pa-mpjpe {:8.2}  loss {:10.3}",
            v.label, r.mpjpe, r.pa_mpjpe, r.final_loss
        );
    })?;
    print!("\n{}", to_csv(&rows));
    Ok(())
}
