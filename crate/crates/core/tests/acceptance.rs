//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! ```text
//! cargo test --release --test acceptance            # all criteria
//! cargo test --release --test acceptance -- 3 8     # a subset
//! ```

use std::error::Error;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use maed::attention::{AttentionMode, EncoderConfig, MsaLayer, SteEncoder, Topology};
use maed::decoders::{DecoderKind, KtdDecoder};
use maed::geometry::{
    axis_angle_to_matrix, axis_angle_to_matrix_t, det, matrix_to_axis_angle, matrix_to_axis_angle_t, project_t,
    rot6d_to_matrix, rot6d_to_matrix_t, AxisAngle, Mat3, Rot6d, Rotation, Vec3,
};
use maed::harness::config::Dtype;
use maed::harness::eval::{evaluate, EvalReport};
use maed::harness::gradcheck::{check_model, desk_config};
use maed::harness::synth::{generate, Clip, SynthConfig};
use maed::harness::train::{full_loss, train_model, LossRecord};
use maed::harness::{checkpoint, Model, RunConfig};
use maed::kinematics::{forward_kinematics, forward_kinematics_t, KinematicTree, NUM_BETAS, NUM_JOINTS};
use maed::metrics::{accel_error, mpjpe, pa_mpjpe, Frame};
use maed::nn::{named_params, zero_grads, LayerNorm, Linear, Mlp, Module};
use maed::tensor::no_grad;
use maed::Tensor;
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, Box<dyn Error>>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+).into());
        }
    };
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Mat3 {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let r = Rotation3::from_scaled_axis(axis.normalize() * rng.random_range(0.0..max_angle));
    std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
}

// ---------------------------------------------------------------- criterion 1

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error between the backward pass and central differences
/// of `sum(w * f(inputs))`, worst over inputs.
fn fd_check(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> maed::Result<Tensor>) -> maed::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    let y = f(&leaves)?;
    let w = uniform(&mut rng, y.shape(), -1.0, 1.0);
    y.mul(&w)?.sum().backward()?;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let mut numeric = Vec::with_capacity(leaf.numel());
        for j in 0..leaf.numel() {
            let at = |delta: f64| -> maed::Result<f64> {
                let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
                let mut v = inputs[i].to_vec();
                v[j] += delta;
                probe[i] = Tensor::new(inputs[i].shape(), v)?;
                no_grad(|| Ok(f(&probe)?.mul(&w)?.sum().item()))
            };
            numeric.push((at(h)? - at(-h)?) / (2.0 * h));
        }
        let diff = norm(analytic.iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
        worst = worst.max(if scale < 1e-12 { diff } else { diff / scale });
    }
    Ok(worst)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = &mut rng;
    let a = uniform(r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(r, &[3, 4], -1.0, 1.0);
    let pos = uniform(r, &[3, 4], 0.5, 1.5);
    let small = uniform(r, &[3, 4], -1.0, 1.0);
    let row = uniform(r, &[1, 3, 4], -1.0, 1.0);
    let lin = Linear::xavier(r, 4, 5)?;
    let ln = LayerNorm::new(4)?;
    let mlp = Mlp::new(r, 4, 8)?;
    let msa = MsaLayer::new(r, 8, 2)?;
    let tokens = uniform(r, &[3, 4, 8], -1.0, 1.0);
    let rot6d = uniform(r, &[5, 6], -1.0, 1.0);
    let aa = uniform(r, &[5, 3], -1.5, 1.5);
    let mats = Tensor::new(
        &[5, 3, 3],
        (0..5)
            .flat_map(|_| random_rotation(r, 2.5).into_iter().flatten())
            .collect(),
    )?;
    let joints = uniform(r, &[2, 24, 3], -1.0, 1.0);
    let cams = uniform(r, &[2, 3], 0.5, 1.5);
    let betas = uniform(r, &[2, NUM_BETAS], -1.0, 1.0);
    let pose6d = Tensor::new(
        &[2, NUM_JOINTS, 6],
        (0..2 * NUM_JOINTS)
            .flat_map(|_| Rotation(random_rotation(r, 1.0)).to_6d().0)
            .collect(),
    )?;
    let tree = KinematicTree::smpl();

    type Case<'a> = (
        &'a str,
        Vec<Tensor>,
        Box<dyn Fn(&[Tensor]) -> maed::Result<Tensor> + 'a>,
    );
    let cases: Vec<Case> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|t| Ok(t[0].add(&t[1])?))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|t| Ok(t[0].sub(&t[1])?))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|t| Ok(t[0].mul(&t[1])?))),
        ("div", vec![a.clone(), pos.clone()], Box::new(|t| Ok(t[0].div(&t[1])?))),
        ("scale", vec![small.clone()], Box::new(|t| Ok(t[0].scale(-2.5)))),
        (
            "add_scalar",
            vec![small.clone()],
            Box::new(|t| Ok(t[0].add_scalar(0.7))),
        ),
        ("gelu", vec![small.clone()], Box::new(|t| Ok(t[0].gelu()))),
        ("square", vec![small.clone()], Box::new(|t| Ok(t[0].square()))),
        ("sum", vec![a.clone()], Box::new(|t| Ok(t[0].sum()))),
        ("mean", vec![a.clone()], Box::new(|t| Ok(t[0].mean()))),
        ("sum_axis", vec![a.clone()], Box::new(|t| Ok(t[0].sum_axis(1)?))),
        ("mean_axis", vec![a.clone()], Box::new(|t| Ok(t[0].mean_axis(0)?))),
        ("norm_last", vec![a.clone()], Box::new(|t| Ok(t[0].norm_last()?))),
        ("layer_norm", vec![a.clone()], Box::new(|t| Ok(t[0].layer_norm(1e-5)?))),
        ("softmax", vec![a.clone()], Box::new(|t| Ok(t[0].softmax(1)?))),
        ("reshape", vec![a.clone()], Box::new(|t| Ok(t[0].reshape(&[6, 4])?))),
        (
            "transpose",
            vec![a.clone()],
            Box::new(|t| Ok(t[0].transpose(&[2, 0, 1])?)),
        ),
        ("swap_axes", vec![a.clone()], Box::new(|t| Ok(t[0].swap_axes(0, 2)?))),
        ("expand", vec![row.clone()], Box::new(|t| Ok(t[0].expand(&[2, 3, 4])?))),
        (
            "concat",
            vec![a.clone(), a.scale(0.5)],
            Box::new(|t| Ok(Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?)),
        ),
        (
            "stack",
            vec![b.clone(), small.clone()],
            Box::new(|t| Ok(Tensor::stack(&[t[0].clone(), t[1].clone()], 0)?)),
        ),
        ("slice", vec![a.clone()], Box::new(|t| Ok(t[0].slice(1, 1..3)?))),
        ("select", vec![a.clone()], Box::new(|t| Ok(t[0].select(2, 1)?))),
        (
            "matmul",
            vec![b.clone(), b.transpose(&[1, 0])?],
            Box::new(|t| Ok(t[0].matmul(&t[1])?)),
        ),
        (
            "matmul_batched",
            vec![a.clone(), a.transpose(&[0, 2, 1])?],
            Box::new(|t| Ok(t[0].matmul(&t[1])?)),
        ),
        (
            "matmul_shared",
            vec![a.clone(), b.transpose(&[1, 0])?],
            Box::new(|t| Ok(t[0].matmul(&t[1])?)),
        ),
        ("linear", vec![a.clone()], Box::new(|t| lin.forward(&t[0]))),
        ("layer_norm_module", vec![a.clone()], Box::new(|t| ln.forward(&t[0]))),
        ("mlp", vec![a.clone()], Box::new(|t| mlp.forward(&t[0]))),
        (
            "attention_spatial",
            vec![tokens.clone()],
            Box::new(|t| Ok(msa.forward(&t[0], AttentionMode::Spatial)?.0)),
        ),
        (
            "attention_temporal",
            vec![tokens.clone()],
            Box::new(|t| Ok(msa.forward(&t[0], AttentionMode::Temporal)?.0)),
        ),
        (
            "attention_coupled",
            vec![tokens.clone()],
            Box::new(|t| Ok(msa.forward(&t[0], AttentionMode::Coupled)?.0)),
        ),
        (
            "rot6d_to_matrix",
            vec![rot6d.clone()],
            Box::new(|t| rot6d_to_matrix_t(&t[0])),
        ),
        (
            "axis_angle_to_matrix",
            vec![aa.clone()],
            Box::new(|t| axis_angle_to_matrix_t(&t[0])),
        ),
        (
            "matrix_to_axis_angle",
            vec![mats.clone()],
            Box::new(|t| matrix_to_axis_angle_t(&t[0])),
        ),
        (
            "project",
            vec![joints.clone(), cams.clone()],
            Box::new(|t| project_t(&t[0], &t[1])),
        ),
        (
            "rest_joints",
            vec![betas.clone()],
            Box::new(|t| tree.rest_joints_t(&t[0])),
        ),
        (
            "forward_kinematics",
            vec![pose6d.clone(), betas.clone()],
            Box::new(|t| Ok(forward_kinematics_t(&tree, &rot6d_to_matrix_t(&t[0])?, &t[1])?.joints)),
        ),
    ];
    let mut worst_op = ("", 0.0f64);
    for (name, inputs, f) in &cases {
        let err = fd_check(inputs, f.as_ref())?;
        ensure!(err < 1e-5, "op {name}: relative error {err:.3e} >= 1e-5");
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }

    let mut e2e = Vec::new();
    for decoder in [DecoderKind::Ktd, DecoderKind::Iterative] {
        let cfg = desk_config(&RunConfig {
            decoder,
            ..Default::default()
        });
        ensure!(
            cfg.width == 16 && cfg.frames == 2 && cfg.patches() == 4,
            "desk config drifted"
        );
        let report = check_model(&cfg, 0.1, 1e-6)?;
        ensure!(
            report.relative_error < 1e-4,
            "end-to-end {decoder}: relative error {:.3e} >= 1e-4 (worst {:?})",
            report.relative_error,
            report.worst
        );
        e2e.push(format!(
            "{decoder} {:.1e} on {} coords",
            report.relative_error, report.checked
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.0} s, limit 300 s");
    Ok(format!(
        "{} ops, worst {} {:.1e}; end-to-end {}",
        cases.len(),
        worst_op.0,
        worst_op.1,
        e2e.join(", ")
    ))
}

// ---------------------------------------------------------------- criterion 2

fn rows_are_distributions(maps: &Tensor) -> Result<(), String> {
    let n = *maps.shape().last().unwrap();
    for (i, row) in maps.data().chunks(n).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(format!("row {i} sums to {s}"));
        }
    }
    Ok(())
}

fn attention_shapes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (t, n, h, d) = (6, 5, 4, 16);
    let msa = MsaLayer::new(&mut rng, d, h)?;
    let x = uniform(&mut rng, &[t, n, d], -2.0, 2.0);
    let expect: [(AttentionMode, Vec<usize>); 3] = [
        (AttentionMode::Spatial, vec![t, h, n, n]),
        (AttentionMode::Temporal, vec![n, h, t, t]),
        (AttentionMode::Coupled, vec![h, t * n, t * n]),
    ];
    for (mode, shape) in &expect {
        let (y, maps) = msa.forward(&x, *mode)?;
        ensure!(y.shape() == x.shape(), "{mode:?} output {:?}", y.shape());
        ensure!(
            maps.shape() == shape.as_slice(),
            "{mode:?} maps {:?}, expected {shape:?}",
            maps.shape()
        );
        rows_are_distributions(&maps).map_err(|e| format!("{mode:?}: {e}"))?;
    }

    // the same through full encoders on a synthetic clip
    let cfg = RunConfig {
        clips: 1,
        ..Default::default()
    };
    let clip = &generate(&SynthConfig::from_run(&cfg, 3, 1))?[0];
    let (t, n, h) = (cfg.frames, cfg.patches() + 1, cfg.heads);
    let mut checked = 0;
    for topology in Topology::ALL {
        let enc = SteEncoder::new(
            &mut rng,
            RunConfig {
                encoder: topology,
                ..cfg.clone()
            }
            .encoder_config(),
        )?;
        let (_, maps) = no_grad(|| enc.encode(&clip.obs))?;
        for m in &maps {
            let shape = match m.mode {
                AttentionMode::Spatial => vec![t, h, n, n],
                AttentionMode::Temporal => vec![n, h, t, t],
                AttentionMode::Coupled => vec![h, t * n, t * n],
            };
            ensure!(
                m.maps.shape() == shape.as_slice(),
                "{topology} block {} {:?}",
                m.block,
                m.maps.shape()
            );
            rows_are_distributions(&m.maps).map_err(|e| format!("{topology}: {e}"))?;
            checked += 1;
        }
    }
    Ok(format!(
        "spatial ({t},{h},{n},{n}), temporal ({n},{h},{t},{t}), coupled ({h},{},{}); {checked} encoder maps",
        t * n,
        t * n
    ))
}

// ---------------------------------------------------------------- criterion 3

type Affine = [[f64; 4]; 4];

fn affine(r: &Mat3, t: &Vec3) -> Affine {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn affine_mul(a: &Affine, b: &Affine) -> Affine {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Joint positions as the product of local transforms along each root-to-joint chain.
fn ancestor_product(tree: &KinematicTree, rots: &[Mat3], beta: &[f64; NUM_BETAS]) -> Vec<(Vec3, Mat3)> {
    let rest = tree.rest_joints(beta);
    (0..tree.len())
        .map(|k| {
            let mut chain = vec![k];
            while let Some(p) = tree.parent(*chain.last().unwrap()) {
                chain.push(p);
            }
            chain.reverse();
            let mut g = affine(&maed::geometry::IDENTITY, &[0.0; 3]);
            for &j in &chain {
                let t: Vec3 = match tree.parent(j) {
                    None => rest[j],
                    Some(p) => std::array::from_fn(|c| rest[j][c] - rest[p][c]),
                };
                g = affine_mul(&g, &affine(&rots[j], &t));
            }
            (
                [g[0][3], g[1][3], g[2][3]],
                std::array::from_fn(|i| std::array::from_fn(|j| g[i][j])),
            )
        })
        .collect()
}

fn kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tree = KinematicTree::smpl();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rots: Vec<Mat3> = (0..NUM_JOINTS)
            .map(|_| random_rotation(&mut rng, std::f64::consts::PI))
            .collect();
        let beta: [f64; NUM_BETAS] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let posed = forward_kinematics(&tree, &rots.iter().map(|r| Rotation(*r)).collect::<Vec<_>>(), &beta)?;
        for (k, (p, r)) in ancestor_product(&tree, &rots, &beta).iter().enumerate() {
            for i in 0..3 {
                worst = worst.max((posed.joints[k][i] - p[i]).abs());
                for j in 0..3 {
                    worst = worst.max((posed.transforms[k][i][j] - r[i][j]).abs());
                }
            }
        }
    }
    ensure!(worst < 1e-10, "recursive vs ancestor product differ by {worst:.3e}");

    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta: [f64; NUM_BETAS] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let rest = tree.rest_joints(&beta);
        let posed = forward_kinematics(&tree, &vec![Rotation::identity(); NUM_JOINTS], &beta)?;
        let bits = |v: &[Vec3]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure!(
            bits(&posed.joints) == bits(&rest),
            "zero pose moved the rest joints (seed {seed})"
        );

        let betas_t = Tensor::new(&[1, NUM_BETAS], beta.to_vec())?;
        let eye = Tensor::new(
            &[1, NUM_JOINTS, 3, 3],
            (0..NUM_JOINTS)
                .flat_map(|_| maed::geometry::IDENTITY.into_iter().flatten())
                .collect(),
        )?;
        let posed_t = forward_kinematics_t(&tree, &eye, &betas_t)?;
        let rest_t = tree.rest_joints_t(&betas_t)?;
        let tbits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ensure!(
            tbits(&posed_t.joints) == tbits(&rest_t),
            "batched zero pose moved the rest joints"
        );
        ensure!(
            tbits(&rest_t) == bits(&rest),
            "batched rest joints differ from the scalar path"
        );
    }

    let a5 = tree.ancestors(5)?;
    ensure!(a5 == [0, 2], "A(5) = {a5:?}");
    Ok(format!(
        "max gap {worst:.1e} over 1000 poses; zero pose bitwise; A(5) = {{0, 2}}"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn live_params(module: &dyn Module, out: Tensor) -> maed::Result<Vec<String>> {
    zero_grads(module);
    out.backward()?;
    let mut live: Vec<String> = named_params(module)
        .into_iter()
        .filter(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0)))
        .map(|(n, _)| n)
        .collect();
    live.sort();
    Ok(live)
}

fn ktd() -> Outcome {
    let d = 64;
    let tree = KinematicTree::smpl();
    let dec = KtdDecoder::new(d, tree.clone())?;
    for (k, width) in [(0, d), (2, d + 6), (5, d + 12)] {
        let l = &dec.joints[k];
        ensure!(
            l.in_features() == width && l.out_features() == 6,
            "W_{k} maps {} -> {}, expected {width} -> 6",
            l.in_features(),
            l.out_features()
        );
    }
    for k in 0..NUM_JOINTS {
        let expected = d + 6 * tree.ancestors(k)?.len();
        ensure!(
            dec.input_width(k) == expected,
            "joint {k}: width {} vs {expected}",
            dec.input_width(k)
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scanned = 0;
    for tree in [
        KinematicTree::smpl(),
        KinematicTree::random(11),
        KinematicTree::smpl().reversed(),
    ] {
        let dec = KtdDecoder::xavier(&mut rng, 16, tree.clone())?;
        let x = uniform(&mut rng, &[3, 16], -1.0, 1.0);
        for k in 0..NUM_JOINTS {
            let live = live_params(&dec, dec.decode(&x)?.pose6d.select(1, k)?.sum())?;
            let mut expected: Vec<String> = tree
                .ancestors(k)?
                .into_iter()
                .chain([k])
                .flat_map(|j| [format!("joint.{j}.weight"), format!("joint.{j}.bias")])
                .collect();
            expected.sort();
            ensure!(live == expected, "joint {k}: depends on {live:?}");
            scanned += 1;
        }
        let out = dec.decode(&x)?;
        let live = live_params(&dec, out.betas.sum())?;
        ensure!(live == ["shape.bias", "shape.weight"], "shape depends on {live:?}");
        let live = live_params(&dec, dec.decode(&x)?.cam.sum())?;
        ensure!(live == ["cam.bias", "cam.weight"], "camera depends on {live:?}");
    }
    Ok(format!(
        "W_0 {d}->6, W_2 {}->6, W_5 {}->6; {scanned} joint scans over 3 trees exact; shape and camera isolated",
        d + 6,
        d + 12
    ))
}

// ---------------------------------------------------------------- criterion 5

fn random_clip(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Frame> {
    (0..frames)
        .map(|_| {
            (0..NUM_JOINTS)
                .map(|_| std::array::from_fn(|_| rng.random_range(-0.8..0.8)))
                .collect()
        })
        .collect()
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_pa = 0.0f64;
    let mut worst_accel = 0.0f64;
    let mut ordered = 0;
    for trial in 0..300 {
        let gt = random_clip(&mut rng, 6);
        let r = random_rotation(&mut rng, std::f64::consts::PI);
        let s = rng.random_range(0.5..2.0);
        let t: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let moved: Vec<Frame> = gt
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| std::array::from_fn(|i| s * (0..3).map(|j| r[i][j] * p[j]).sum::<f64>() + t[i]))
                    .collect()
            })
            .collect();
        worst_pa = worst_pa.max(pa_mpjpe(&moved, &gt)?);

        let sigma = [0.01, 0.05, 0.2][trial % 3];
        let noisy: Vec<Frame> = moved
            .iter()
            .map(|f| {
                f.iter()
                    .map(|p| p.map(|c| c + sigma * rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        for pred in [&noisy, &random_clip(&mut rng, 6)] {
            let (pa, m) = (pa_mpjpe(pred, &gt)?, mpjpe(pred, &gt)?);
            ensure!(pa <= m + 1e-9, "trial {trial}: pa-mpjpe {pa} > mpjpe {m}");
            ordered += 1;
        }

        let c: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let offset: Vec<Frame> = gt
            .iter()
            .map(|f| f.iter().map(|p| std::array::from_fn(|i| p[i] + c[i])).collect())
            .collect();
        worst_accel = worst_accel.max(accel_error(&offset, &gt)?);
    }
    ensure!(worst_pa < 1e-6, "pa-mpjpe of a similar copy is {worst_pa:.3e} mm");
    ensure!(worst_accel < 1e-9, "accel error of an offset copy is {worst_accel:.3e}");
    Ok(format!(
        "similar copy pa-mpjpe <= {worst_pa:.1e} mm; pa <= mpjpe in {ordered} cases; offset accel <= {worst_accel:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 6

fn rotations() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_orth = 0.0f64;
    let mut worst_det = 0.0f64;
    let inputs: Vec<[f64; 6]> = (0..10_000)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    for x in &inputs {
        let r = rot6d_to_matrix(&Rot6d(*x))?.0;
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                worst_orth = worst_orth.max((rtr - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst_det = worst_det.max((det(&r) - 1.0).abs());
    }
    // the batched path agrees with the scalar one
    let batched = rot6d_to_matrix_t(&Tensor::new(&[10_000, 6], inputs.iter().flatten().copied().collect())?)?;
    for (x, m) in inputs.iter().zip(batched.data().chunks(9)) {
        let r = rot6d_to_matrix(&Rot6d(*x))?.0;
        ensure!(
            r.iter().flatten().zip(m).all(|(a, b)| (a - b).abs() < 1e-12),
            "batched 6D map differs"
        );
    }
    ensure!(
        worst_orth < 1e-9 && worst_det < 1e-9,
        "orthogonality {worst_orth:.3e}, det {worst_det:.3e}"
    );

    let mut worst_rt = 0.0f64;
    for _ in 0..10_000 {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let v = dir.normalize() * rng.random_range(0.0..std::f64::consts::PI);
        let v = [v.x, v.y, v.z];
        let back = matrix_to_axis_angle(&axis_angle_to_matrix(&AxisAngle(v)))?.0;
        worst_rt = worst_rt.max((0..3).map(|i| (back[i] - v[i]).abs()).fold(0.0, f64::max));
    }
    ensure!(worst_rt < 1e-9, "axis-angle round trip error {worst_rt:.3e}");
    Ok(format!(
        "10^4 rotations: |R^T R - I| <= {worst_orth:.1e}, |det - 1| <= {worst_det:.1e}; round trip <= {worst_rt:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 7

fn overfit() -> Outcome {
    let start = Instant::now();
    let base = RunConfig::overfit();
    ensure!(
        base.clips == 8
            && base.blocks == 2
            && base.encoder == Topology::ParallelV2
            && base.width == 64
            && base.heads == 4
            && base.frames == 8
            && base.total_steps() == 500,
        "overfit configuration drifted"
    );
    let clips = generate(&SynthConfig::from_run(&base, base.seed, base.clips))?;
    let mut results = Vec::new();
    for decoder in [DecoderKind::Ktd, DecoderKind::Iterative] {
        let cfg = RunConfig {
            decoder,
            ..base.clone()
        };
        let mut model = Model::new(&cfg)?;
        let initial = full_loss(&cfg, &model, &clips)?;
        train_model(&cfg, &mut model, &clips, |_| {})?;
        let last = full_loss(&cfg, &model, &clips)?;
        let (m, _, _) = evaluate(&model, &clips)?.mean();
        println!(
            "        {decoder}: loss {initial:.1} -> {last:.1} ({:.1}%), mpjpe {m:.2} mm",
            100.0 * last / initial
        );
        ensure!(
            last < 0.1 * initial,
            "{decoder}: loss {last:.3} not below 10% of {initial:.3}"
        );
        ensure!(m < 30.0, "{decoder}: mpjpe {m:.2} mm");
        results.push((decoder, m));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 600.0, "took {secs:.0} s, limit 600 s");
    let ordering = if results[0].1 < results[1].1 {
        "ktd < iterative"
    } else {
        "iterative <= ktd"
    };
    Ok(format!(
        "ktd {:.2} mm, iterative {:.2} mm (ordering {ordering}, not asserted)",
        results[0].1, results[1].1
    ))
}

// ---------------------------------------------------------------- criterion 8

fn encoder_config(topology: Topology, bypass: bool) -> EncoderConfig {
    EncoderConfig {
        topology,
        blocks: 2,
        width: 16,
        heads: 4,
        mlp_ratio: 2,
        input_width: 6,
        patches: 4,
        max_frames: 4,
        temporal_bypass: bypass,
    }
}

/// A spatial-only encoder sharing every parameter it has with `other`.
fn spatial_twin(other: &SteEncoder, coupled: bool) -> maed::Result<SteEncoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut s = SteEncoder::new(
        &mut rng,
        EncoderConfig {
            topology: Topology::SpatialOnly,
            ..other.config
        },
    )?;
    s.patch_embed = other.patch_embed.clone();
    s.class_token = other.class_token.clone();
    s.pos_spatial = other.pos_spatial.clone();
    s.pos_temporal = other.pos_temporal.clone();
    for (b, o) in s.blocks.iter_mut().zip(&other.blocks) {
        b.norm1 = o.norm1.clone();
        b.norm2 = o.norm2.clone();
        b.mlp = o.mlp.clone();
        b.msa_s = if coupled { o.msa_c.clone() } else { o.msa_s.clone() };
    }
    Ok(s)
}

fn max_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn degeneracies() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let msa = MsaLayer::new(&mut rng, 16, 4)?;
    let (_, maps) = msa.forward(&uniform(&mut rng, &[1, 7, 16], -3.0, 3.0), AttentionMode::Temporal)?;
    ensure!(
        maps.data().iter().all(|&v| v == 1.0),
        "single-frame temporal weights are not exactly 1"
    );
    let enc = SteEncoder::new(&mut rng, encoder_config(Topology::TemporalOnly, false))?;
    let (_, maps) = enc.encode(&uniform(&mut rng, &[1, 4, 6], -1.0, 1.0))?;
    ensure!(
        maps.iter().all(|m| m.maps.data().iter().all(|&v| v == 1.0)),
        "single-frame temporal weights inside the encoder are not exactly 1"
    );

    let mut v2 = SteEncoder::new(&mut rng, encoder_config(Topology::ParallelV2, true))?;
    for b in &mut v2.blocks {
        b.forced_temporal_weight = Some(0.0);
    }
    let spatial = spatial_twin(&v2, false)?;
    let mut gap_v2 = 0.0f64;
    for t in [1, 3, 4] {
        let obs = uniform(&mut rng, &[2, t, 4, 6], -1.0, 1.0);
        gap_v2 = gap_v2.max(max_gap(&v2.encode(&obs)?.0, &spatial.encode(&obs)?.0));
    }
    ensure!(
        gap_v2 < 1e-12,
        "parallel-v2 with zero temporal weight differs from spatial-only by {gap_v2:.3e}"
    );

    let coupling = SteEncoder::new(&mut rng, encoder_config(Topology::Coupling, true))?;
    let spatial = spatial_twin(&coupling, true)?;
    let obs = uniform(&mut rng, &[3, 1, 4, 6], -1.0, 1.0);
    let gap_c = max_gap(&coupling.encode(&obs)?.0, &spatial.encode(&obs)?.0);
    ensure!(
        gap_c < 1e-9,
        "single-frame coupling differs from spatial-only by {gap_c:.3e}"
    );
    Ok(format!(
        "T=1 temporal weights exactly 1; v2 gap {gap_v2:.1e}; coupling gap {gap_c:.1e}"
    ))
}

// ---------------------------------------------------------------- criterion 9

fn small_run(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        width: 16,
        heads: 2,
        frames: 4,
        grid: 2,
        clips: 3,
        image_steps: 10,
        video_steps: 20,
        image_batch: 6,
        video_batch: 2,
        ..RunConfig::overfit()
    }
}

fn curve_bits(log: &[LossRecord]) -> Vec<u64> {
    log.iter().map(|r| r.total.to_bits()).collect()
}

fn report_bits(r: &EvalReport) -> Vec<u64> {
    r.clips
        .iter()
        .flat_map(|c| [c.mpjpe, c.pa_mpjpe, c.accel])
        .map(f64::to_bits)
        .collect()
}

fn run(cfg: &RunConfig) -> maed::Result<(Model, Vec<LossRecord>, Vec<Clip>)> {
    let clips = generate(&SynthConfig::from_run(cfg, cfg.seed, cfg.clips))?;
    let mut model = Model::new(cfg)?;
    let log = train_model(cfg, &mut model, &clips, |_| {})?;
    Ok((model, log, clips))
}

fn persistence() -> Outcome {
    let cfg = small_run(21);
    let (model, a, clips) = run(&cfg)?;
    let (_, b, _) = run(&cfg)?;
    ensure!(
        a == b && curve_bits(&a) == curve_bits(&b),
        "same seed gave different loss curves"
    );
    let (_, c, _) = run(&small_run(22))?;
    ensure!(curve_bits(&a) != curve_bits(&c), "different seeds gave the same curve");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &model, Dtype::F64)?;
    let mut restored = Model::new(&RunConfig {
        seed: 999,
        ..cfg.clone()
    })?;
    checkpoint::load_into(&path, &mut restored)?;
    let before = evaluate(&model, &clips)?;
    let after = evaluate(&restored, &clips)?;
    ensure!(
        report_bits(&before) == report_bits(&after),
        "restored model scores differently"
    );
    ensure!(before.to_csv() == after.to_csv(), "metrics CSV differs after restore");
    Ok(format!(
        "{} steps bitwise repeatable; checkpoint round trip reproduces {} clip metrics bitwise",
        a.len(),
        before.clips.len()
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "attention shapes", attention_shapes),
        (3, "kinematics", kinematics),
        (4, "kinematic topology decoder", ktd),
        (5, "metrics", metrics),
        (6, "rotations", rotations),
        (7, "overfit run", overfit),
        (8, "degeneracies", degeneracies),
        (9, "determinism and persistence", persistence),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {id} {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {id} {name} ({secs:.1} s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
