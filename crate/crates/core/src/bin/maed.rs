use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use maed::harness::ablate::{ablate, to_csv};
use maed::harness::eval::evaluate;
use maed::harness::gradcheck::{check_model, desk_config};
use maed::harness::synth::{generate, Clip, SynthConfig};
use maed::harness::train::{train_model, LossRecord};
use maed::harness::{attn_dump, checkpoint, Model, RunConfig};
use maed::{Error, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "maed",
    about = "Spatial-temporal encoder and kinematic decoder on synthetic motion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, its config and the loss log.
    Train(Common),
    /// Score a checkpoint and write per-clip metrics.
    Eval(Common),
    /// Finite-difference check of the full forward chain on a small model.
    Gradcheck(Common),
    /// Train every encoder/decoder variant and write a comparison table.
    Ablate(Common),
    /// Write the attention maps of one clip as CSV tables and PGM images.
    AttnDump(Common),
    /// Write synthetic clips and the body tree.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Encoder topology, e.g. parallel-v2.
    #[arg(long)]
    encoder: Option<String>,
    /// ktd or iterative.
    #[arg(long)]
    decoder: Option<String>,
    /// smpl, random, reverse or a tree file.
    #[arg(long)]
    tree: Option<String>,
}

impl Common {
    /// Config from `--config`, else from the checkpoint's directory, else defaults;
    /// then command-line overrides.
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.checkpoint) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(ck)) => {
                let beside = ck.parent().unwrap_or(Path::new(".")).join("config.txt");
                if beside.exists() {
                    RunConfig::load(&beside)?
                } else {
                    RunConfig::default()
                }
            }
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for (key, value) in [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("tree", &self.tree),
        ] {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load_model(&self, cfg: &RunConfig) -> Result<Model> {
        let mut model = Model::new(cfg)?;
        if let Some(ck) = &self.checkpoint {
            checkpoint::load_into(ck, &mut model)?;
        }
        Ok(model)
    }
}

fn training_clips(cfg: &RunConfig) -> Result<Vec<Clip>> {
    generate(&SynthConfig::from_run(cfg, cfg.seed, cfg.clips))
}

fn eval_clips(cfg: &RunConfig) -> Result<Vec<Clip>> {
    match cfg.eval_seed {
        Some(seed) => generate(&SynthConfig::from_run(cfg, seed, cfg.eval_clips)),
        None => training_clips(cfg),
    }
}

fn train(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    fs::create_dir_all(&c.out)?;
    let clips = training_clips(&cfg)?;
    let mut model = c.load_model(&cfg)?;
    let log = train_model(&cfg, &mut model, &clips, |r| {
        if r.step % cfg.log_interval == 0 || r.step + 1 == cfg.total_steps() {
            println!(
                "step {:>5} stage {} {:5} lr {:.1e} loss {:.4} (3d {:.4} 2d {:.4} pose {:.4})",
                r.step,
                r.stage,
                r.kind.name(),
                r.lr,
                r.total,
                r.l3d,
                r.l2d,
                r.smpl_pose
            );
        }
    })?;
    let mut csv = format!("{}\n", LossRecord::CSV_HEADER);
    for r in &log {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(c.out.join("loss.csv"), csv)?;
    fs::write(c.out.join("config.txt"), cfg.to_text())?;
    let ck = c.out.join("model.ckpt");
    checkpoint::save(&ck, &model, cfg.checkpoint_dtype)?;
    println!("wrote {}", ck.display());
    Ok(())
}

fn eval(c: &Common) -> Result<()> {
    if c.checkpoint.is_none() {
        return Err(Error::Config("eval needs --checkpoint".into()));
    }
    let cfg = c.config()?;
    let model = c.load_model(&cfg)?;
    let report = evaluate(&model, &eval_clips(&cfg)?)?;
    fs::create_dir_all(&c.out)?;
    let path = c.out.join("metrics.csv");
    fs::write(&path, report.to_csv())?;
    let (m, p, a) = report.mean();
    println!("mpjpe {m:.3} mm  pa-mpjpe {p:.3} mm  accel {a:.3} mm/frame^2");
    println!("wrote {}", path.display());
    Ok(())
}

fn gradcheck(c: &Common) -> Result<()> {
    let cfg = desk_config(&c.config()?);
    let r = check_model(&cfg, 0.01, 1e-6)?;
    println!(
        "checked {} of {} parameters: relative error {:.3e} ({})",
        r.checked,
        r.total_params,
        r.relative_error,
        if r.relative_error < 1e-4 { "pass" } else { "FAIL" }
    );
    if let Some((name, i, a, n)) = r.worst {
        println!("largest gap at {name}[{i}]: analytic {a:.6e}, numeric {n:.6e}");
    }
    if r.relative_error >= 1e-4 {
        return Err(Error::Config("gradient check failed".into()));
    }
    Ok(())
}

fn run_ablation(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    fs::create_dir_all(&c.out)?;
    let clips = training_clips(&cfg)?;
    let eval = eval_clips(&cfg)?;
    let rows = ablate(&cfg, &clips, &eval, |v, r| {
        println!(
            "{:<28} mpjpe {:8.2}  pa-mpjpe {:8.2}  accel {:8.2}",
            v.label, r.mpjpe, r.pa_mpjpe, r.accel
        );
    })?;
    let path = c.out.join("ablation.csv");
    fs::write(&path, to_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn attn(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    let model = c.load_model(&cfg)?;
    let clips = eval_clips(&cfg)?;
    let (_, maps) = maed::tensor::no_grad(|| model.encoder.encode(&clips[0].obs))?;
    let files = attn_dump::dump(&maps, &c.out)?;
    println!("wrote {} files to {}", files.len(), c.out.display());
    Ok(())
}

fn synth(c: &Common) -> Result<()> {
    let cfg = c.config()?;
    fs::create_dir_all(&c.out)?;
    let clips = training_clips(&cfg)?;
    let mut joints = String::from("clip,frame,joint,x,y,z,u,v\n");
    let mut params = String::from("clip,frame,kind,index,value\n");
    for clip in &clips {
        let (j3, j2) = (clip.joints3d.data(), clip.joints2d.data());
        for f in 0..clip.frames() {
            for k in 0..24 {
                let o = f * 24 + k;
                joints.push_str(&format!(
                    "{},{f},{k},{},{},{},{},{}\n",
                    clip.id,
                    j3[3 * o],
                    j3[3 * o + 1],
                    j3[3 * o + 2],
                    j2[2 * o],
                    j2[2 * o + 1]
                ));
            }
            let rows: [(&str, &Tensor, usize); 3] = [
                ("pose_aa", &clip.pose_aa, 72),
                ("beta", &clip.params.betas, 10),
                ("cam", &clip.params.cam, 3),
            ];
            for (kind, t, n) in rows {
                for (i, v) in t.data()[f * n..(f + 1) * n].iter().enumerate() {
                    params.push_str(&format!("{},{f},{kind},{i},{v}\n", clip.id));
                }
            }
        }
    }
    fs::write(c.out.join("joints.csv"), joints)?;
    fs::write(c.out.join("params.csv"), params)?;
    fs::write(
        c.out.join("tree.txt"),
        maed::kinematics::KinematicTree::smpl().to_text(),
    )?;
    fs::write(c.out.join("config.txt"), cfg.to_text())?;
    println!("wrote {} clips to {}", clips.len(), c.out.display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Gradcheck(c) => gradcheck(c),
        Command::Ablate(c) => run_ablation(c),
        Command::AttnDump(c) => attn(c),
        Command::Synth(c) => synth(c),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
