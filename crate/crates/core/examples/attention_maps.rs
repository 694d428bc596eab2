//! Runs each encoder topology on one synthetic clip, prints the attention map
//! shapes and writes the parallel-v2 maps as CSV and PGM files.
//!
//! ```text
//! cargo run --release --example attention_maps [out_dir]
//! ```

use maed::attention::{SteEncoder, Topology};
use maed::harness::attn_dump::dump;
use maed::harness::synth::{generate, SynthConfig};
use maed::harness::RunConfig;
use maed::tensor::no_grad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> maed::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "attn_maps".into());
    let base = RunConfig {
        clips: 1,
        ..Default::default()
    };
    let clip = &generate(&SynthConfig::from_run(&base, 3, 1))?[0];
    println!("clip observation {:?}", clip.obs.shape());

    for topology in Topology::ALL {
        let cfg = RunConfig {
            encoder: topology,
            ..base.clone()
        };
        let encoder = SteEncoder::new(&mut ChaCha8Rng::seed_from_u64(1), cfg.encoder_config())?;
        let (frames, maps) = no_grad(|| encoder.encode(&clip.obs))?;
        let shapes: Vec<String> = maps
            .iter()
            .filter(|m| m.block == 0)
            .map(|m| format!("{} {:?}", m.mode.name(), m.maps.shape()))
            .collect();
        println!(
            "{topology:>14}: features {:?}, block 0 maps: {}",
            frames.shape(),
            shapes.join(", ")
        );
        if topology == Topology::ParallelV2 {
            let files = dump(&maps, out.as_ref())?;
            println!("{:>14}  wrote {} files to {out}", "", files.len());
        }
    }
    Ok(())
}
