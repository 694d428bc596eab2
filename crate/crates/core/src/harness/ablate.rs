//! Encoder and decoder ablation grid.

use std::fmt::Write as _;

use super::config::TreeChoice;
use super::eval::evaluate;
use super::synth::Clip;
use super::train::train;
use super::RunConfig;
use crate::attention::Topology;
use crate::decoders::DecoderKind;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: RunConfig,
}

fn decoder_label(cfg: &RunConfig) -> String {
    match (cfg.decoder, &cfg.tree) {
        (DecoderKind::Iterative, _) => "iterative".into(),
        (DecoderKind::Ktd, TreeChoice::Smpl) => "ktd".into(),
        (DecoderKind::Ktd, TreeChoice::Random) => "ktd_random".into(),
        (DecoderKind::Ktd, TreeChoice::Reverse) => "ktd_reverse".into(),
        (DecoderKind::Ktd, TreeChoice::File(p)) => format!("ktd_file:{}", p.display()),
    }
}

/// Every encoder with the iterative decoder, then the parallel-v2 encoder with
/// each decoder and tree. Duplicate configurations appear once.
pub fn variants(base: &RunConfig) -> Vec<Variant> {
    let mut configs = Vec::new();
    for enc in Topology::ALL {
        configs.push(RunConfig {
            encoder: enc,
            decoder: DecoderKind::Iterative,
            tree: TreeChoice::Smpl,
            ..base.clone()
        });
    }
    for (decoder, tree) in [
        (DecoderKind::Iterative, TreeChoice::Smpl),
        (DecoderKind::Ktd, TreeChoice::Smpl),
        (DecoderKind::Ktd, TreeChoice::Random),
        (DecoderKind::Ktd, TreeChoice::Reverse),
    ] {
        configs.push(RunConfig {
            encoder: Topology::ParallelV2,
            decoder,
            tree,
            ..base.clone()
        });
    }
    let mut out: Vec<Variant> = Vec::new();
    for config in configs {
        if out.iter().all(|v| v.config != config) {
            out.push(Variant {
                label: format!("{}/{}", config.encoder, decoder_label(&config)),
                config,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub encoder: Topology,
    pub decoder: String,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
    pub final_loss: f64,
}

pub const CSV_NOTE: &str = "# desk-scale synthetic numbers; not comparable to results on real benchmarks";

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{CSV_NOTE}\nencoder,decoder,mpjpe,pa_mpjpe,accel,final_loss\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.encoder, r.decoder, r.mpjpe, r.pa_mpjpe, r.accel, r.final_loss
        )
        .expect("writing to a String");
    }
    s
}

/// Trains one variant and scores it on `eval`.
pub fn run_variant(cfg: &RunConfig, train_clips: &[Clip], eval: &[Clip]) -> Result<AblationRow> {
    let (model, log) = train(cfg, train_clips)?;
    let (mpjpe, pa_mpjpe, accel) = evaluate(&model, eval)?.mean();
    Ok(AblationRow {
        encoder: cfg.encoder,
        decoder: decoder_label(cfg),
        mpjpe,
        pa_mpjpe,
        accel,
        final_loss: log.last().map_or(f64::NAN, |r| r.total),
    })
}

/// Runs every variant with the shared seed and budget, calling `on_row` as rows finish.
pub fn ablate(
    base: &RunConfig,
    train_clips: &[Clip],
    eval: &[Clip],
    mut on_row: impl FnMut(&Variant, &AblationRow),
) -> Result<Vec<AblationRow>> {
    variants(base)
        .iter()
        .map(|v| {
            let row = run_variant(&v.config, train_clips, eval)?;
            on_row(v, &row);
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::{generate, SynthConfig};

    #[test]
    fn grid_has_nine_distinct_rows() {
        let vs = variants(&RunConfig::default());
        let labels: Vec<&str> = vs.iter().map(|v| v.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "spatial-only/iterative",
                "temporal-only/iterative",
                "series/iterative",
                "parallel-v1/iterative",
                "parallel-v2/iterative",
                "coupling/iterative",
                "parallel-v2/ktd",
                "parallel-v2/ktd_random",
                "parallel-v2/ktd_reverse",
            ]
        );
        for (i, a) in vs.iter().enumerate() {
            for b in &vs[i + 1..] {
                assert_ne!(a.config, b.config);
            }
        }
    }

    #[test]
    fn ablation_row_equals_direct_run() {
        let base = RunConfig {
            width: 8,
            heads: 2,
            frames: 3,
            grid: 2,
            clips: 2,
            image_steps: 1,
            video_steps: 2,
            image_batch: 2,
            video_batch: 2,
            ..Default::default()
        };
        let clips = generate(&SynthConfig::from_run(&base, 5, 2)).unwrap();
        let v = variants(&base)
            .into_iter()
            .find(|v| v.label == "parallel-v2/ktd")
            .unwrap();
        let a = run_variant(&v.config, &clips, &clips).unwrap();
        let (model, log) = train(&base, &clips).unwrap();
        let (m, p, acc) = evaluate(&model, &clips).unwrap().mean();
        assert_eq!(
            (a.mpjpe, a.pa_mpjpe, a.accel, a.final_loss),
            (m, p, acc, log.last().unwrap().total)
        );
        assert!(to_csv(&[a]).starts_with(CSV_NOTE));
    }
}
