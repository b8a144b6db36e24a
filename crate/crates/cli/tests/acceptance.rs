//! Acceptance suite: one line per criterion with its measured time against
//! the budget. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ampkin::amputation::{apply_mask, binary_decision, AmputationLabel, Limb};
use ampkin::annotations::AnnotationRecord;
use ampkin::body_model::{
    forward, make_toy_template, regress_joints, shape_vertices, smpl_parent, smpl_subtree,
    BodyTemplate, PoseParams, ShapeParams,
};
use ampkin::metrics::{
    confusion_stats, mpjpe, overall_loss, pa_mpjpe, Alignment, ConfusionMatrix, JointSet,
    LossComponents, LossWeights,
};
use ampkin::rotations::{
    axis_angle_to_matrix, matrix_to_6d, rot6d_to_matrix, AxisAngle, Rot6D, RotationMatrix,
};
use ampkin::synth::{passes_quality_gate, ssim, GrayImage, HeatmapStack, SSIM_GATE};
use ampkin::tokenizer::{
    quantize, soft_decode, switch_and_decode, tokenizer_loss, Codebook, CodebookKind,
    LatentTokens, PoseTargets, Reduction, TokenLogits,
};
use ampkin::{NUM_BETAS, NUM_JOINTS};
use ampkin_cli::Config;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> RotationMatrix {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    axis_angle_to_matrix(&AxisAngle(axis * rng.random_range(0.0..max_angle))).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> PoseParams {
    let mut pose = PoseParams::identity();
    for r in pose.rotations.iter_mut() {
        *r = random_rotation(rng, 1.5);
    }
    pose
}

// 1 -------------------------------------------------------------------------

fn collapse_invariant() -> Check {
    let tmpl = make_toy_template(512, 0).map_err(|e| e.to_string())?;
    let label: AmputationLabel = "Rleg:2".parse().unwrap();
    let subtree = smpl_subtree(5);
    ensure(subtree == vec![5, 8, 11], || format!("subtree of 5 is {subtree:?}"))?;
    let members: Vec<usize> = tmpl
        .skin_weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| (subtree.iter().map(|&j| w[j]).sum::<f64>() - 1.0).abs() < 1e-12)
        .map(|(v, _)| v)
        .collect();
    ensure(members.len() >= 2, || "no vertices fully weighted on the subtree".into())?;

    let mut worst_spread = 0.0f64;
    let mut r = rng(100);
    let poses = [PoseParams::identity(), random_pose(&mut r), random_pose(&mut r)];
    for pose in &poses {
        let intact = forward(&tmpl, pose, &ShapeParams::default());
        let masked = forward(&tmpl, &apply_mask(pose, &label), &ShapeParams::default());
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                worst_spread = worst_spread.max((masked.vertices[a] - masked.vertices[b]).norm());
            }
        }
        for j in [8, 11] {
            let before = (intact.joints_posed[j] - intact.joints_posed[5]).norm();
            let after = (masked.joints_posed[j] - masked.joints_posed[5]).norm();
            ensure(after < before, || format!("joint {j}: {after} not closer than {before}"))?;
        }
    }
    ensure(worst_spread <= 1e-9, || format!("collapsed vertices spread {worst_spread:e} m"))?;
    Ok(format!("{} vertices collapse, max spread {worst_spread:.1e} m", members.len()))
}

// 2 -------------------------------------------------------------------------

fn homogeneous(r: &RotationMatrix, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

fn naive_vertices(tmpl: &BodyTemplate, pose: &PoseParams, betas: &ShapeParams) -> Vec<Vector3<f64>> {
    let shaped = shape_vertices(tmpl, betas);
    let rest = regress_joints(tmpl, &shaped).unwrap();
    let mut world: Vec<Matrix4<f64>> = Vec::new();
    for j in 0..NUM_JOINTS {
        let local = match smpl_parent(j) {
            None => homogeneous(&pose.rotations[j], rest[j]),
            Some(p) => world[p] * homogeneous(&pose.rotations[j], rest[j] - rest[p]),
        };
        world.push(local);
    }
    shaped
        .iter()
        .zip(tmpl.skin_weights())
        .map(|(v, w)| {
            let mut acc = Vector4::zeros();
            for j in 0..NUM_JOINTS {
                let back = homogeneous(&RotationMatrix::identity(), -rest[j]);
                acc += w[j] * (world[j] * back * Vector4::new(v.x, v.y, v.z, 1.0));
            }
            Vector3::new(acc.x, acc.y, acc.z)
        })
        .collect()
}

fn forward_kinematics_oracle() -> Check {
    let tmpl = make_toy_template(512, 7).map_err(|e| e.to_string())?;
    let mut r = rng(200);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let betas: [f64; NUM_BETAS] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let betas = ShapeParams::new(betas).unwrap();
        let pose = random_pose(&mut r);
        let mesh = forward(&tmpl, &pose, &betas);
        for (a, b) in mesh.vertices.iter().zip(naive_vertices(&tmpl, &pose, &betas)) {
            worst = worst.max((a - b).amax());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 poses, max deviation {worst:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn decision_and_switching() -> Check {
    for k in 0..4 {
        let mut h = [0.0; 4];
        h[k] = 1.0;
        let want = u8::from(k != 0);
        ensure(binary_decision(&h) == want, || format!("one-hot {k} gave {}", binary_decision(&h)))?;
    }
    ensure(binary_decision(&[1.0, 1.0, 0.0, 0.0]) == 0, || "tie 0/1 not intact".into())?;
    ensure(binary_decision(&[0.0, 2.0, 2.0, 0.0]) == 1, || "tie 1/2 not amputated".into())?;
    ensure(binary_decision(&[0.5; 4]) == 0, || "all-equal tie not intact".into())?;
    for limb in Limb::ALL {
        for level in 0..4u8 {
            let mut levels = [0u8; 4];
            levels[limb.ordinal()] = level;
            let label = AmputationLabel::new(levels).unwrap();
            let bin = label.binary();
            ensure(bin[limb.ordinal()] == u8::from(level > 0), || format!("{limb:?} level {level}"))?;
        }
    }

    let mut r = rng(300);
    let amp = Codebook::random(16, 4, CodebookKind::Amp, 1).unwrap();
    let non = Codebook::random(16, 4, CodebookKind::NonAmp, 2).unwrap();
    let t = TokenLogits::new(DMatrix::from_fn(3, 16, |_, _| r.random_range(-2.0..2.0))).unwrap();
    let amp_out = soft_decode(&t, &amp).unwrap();
    let non_out = soft_decode(&t, &non).unwrap();
    for bits in 0..16u8 {
        let y: [u8; 4] = std::array::from_fn(|i| (bits >> i) & 1);
        let (out, kind) = switch_and_decode(&t, &y, &amp, &non).map_err(|e| e.to_string())?;
        let want = if bits > 0 { (&amp_out, CodebookKind::Amp) } else { (&non_out, CodebookKind::NonAmp) };
        ensure(&out == want.0 && kind == want.1, || format!("y_hat {y:?} used {kind:?}"))?;
    }
    Ok("4 one-hots x 4 limbs, 3 ties, 16 switch vectors".into())
}

// 4 -------------------------------------------------------------------------

fn quantization_oracle() -> Check {
    let mut r = rng(400);
    let mut codes = DMatrix::from_fn(256, 64, |_, _| r.random_range(-1.0..1.0));
    let dup = codes.row(17).into_owned();
    codes.row_mut(140).copy_from(&dup);
    let cb = Codebook::new(codes.clone(), CodebookKind::NonAmp).unwrap();
    let mut z = DMatrix::from_fn(1000, 64, |_, _| r.random_range(-1.0..1.0));
    z.row_mut(0).copy_from(&dup);
    let q = quantize(&LatentTokens::new(z.clone()).unwrap(), &cb).map_err(|e| e.to_string())?;
    for i in 0..z.nrows() {
        let d: Vec<f64> = (0..256).map(|m| (z.row(i) - codes.row(m)).norm_squared()).collect();
        let best = (1..256).fold(0, |b, m| if d[m] < d[b] { m } else { b });
        ensure(q.indices[i] == best, || format!("latent {i}: {} vs oracle {best}", q.indices[i]))?;
    }
    ensure(q.indices[0] == 17, || "tie did not go to the lower index".into())?;

    let mut logits = DMatrix::zeros(1000, 256);
    for (i, &k) in q.indices.iter().enumerate() {
        logits[(i, k)] = 1e6;
    }
    let soft = soft_decode(&TokenLogits::new(logits).unwrap(), &cb).unwrap();
    let gap = (soft.matrix() - &q.z_tilde).amax();
    ensure(gap <= 1e-9, || format!("one-hot soft decode off by {gap:e}"))?;
    Ok(format!("1000 latents exact, one-hot gap {gap:.1e}"))
}

// 5 -------------------------------------------------------------------------

fn ema_convergence() -> Check {
    let gamma = 0.99;
    let d = 8;
    let mut r = rng(500);
    let z = DMatrix::from_fn(6, d, |i, _| if i < 3 { 4.0 } else { -4.0 } + r.random_range(-0.5..0.5));
    let means: Vec<DVector<f64>> = (0..2)
        .map(|k| DVector::from_fn(d, |c, _| z.rows(3 * k, 3).column(c).mean()))
        .collect();
    let codes = DMatrix::from_fn(2, d, |k, _| if k == 0 { 1.0 } else { -1.0 });
    let count = 3.0;
    let usage = DVector::from_element(2, count);
    let cb0 = Codebook::from_parts(codes.clone(), &codes * count, usage, CodebookKind::NonAmp).unwrap();
    let mut cb = cb0.clone();
    let z = LatentTokens::new(z).unwrap();
    let dist = |cb: &Codebook, k: usize| (cb.codes().row(k).transpose() - &means[k]).norm();
    let d0 = [dist(&cb, 0), dist(&cb, 1)];
    let mut halved = [0usize; 2];
    for t in 1..=3000 {
        let q = quantize(&z, &cb).unwrap();
        cb.ema_update(&z, &q.indices, gamma).map_err(|e| e.to_string())?;
        for k in 0..2 {
            let expected = gamma.powi(t as i32) * d0[k];
            let got = dist(&cb, k);
            ensure((got - expected).abs() <= 1e-9 * d0[k] + 1e-12, || format!("step {t}: {got} vs {expected}"))?;
            if halved[k] == 0 && got <= 0.5 * d0[k] {
                halved[k] = t;
            }
        }
    }
    let bound = (2f64.ln() / (1.0 / gamma).ln()).ceil() as usize;
    for h in halved {
        ensure(h.abs_diff(bound) <= 1, || format!("halved at {h}, expected {bound} +- 1"))?;
    }
    let final_gap = dist(&cb, 0).max(dist(&cb, 1));
    ensure(final_gap < 1e-9, || format!("final distance {final_gap:e}"))?;

    let usage = DVector::from_vec(vec![0.5, 1e-5, 2.0, 0.0, 0.05]);
    let base = Codebook::from_parts(
        DMatrix::from_fn(5, d, |i, c| (i * d + c) as f64),
        DMatrix::zeros(5, d),
        usage,
        CodebookKind::NonAmp,
    )
    .unwrap();
    let (mut a, mut b) = (base.clone(), base.clone());
    let ra = a.reset_dead_codes(&z, 0.1, 42).unwrap();
    let rb = b.reset_dead_codes(&z, 0.1, 42).unwrap();
    ensure(ra == vec![1, 3, 4], || format!("replaced {ra:?}"))?;
    ensure(a == b && ra == rb, || "reset is not deterministic".into())?;
    for k in [0, 2] {
        ensure(a.codes().row(k) == base.codes().row(k), || format!("live code {k} changed"))?;
    }
    Ok(format!("halved at steps {halved:?} (bound {bound}), final gap {final_gap:.1e}, reset {ra:?}"))
}

// 6 -------------------------------------------------------------------------

fn loss_arithmetic() -> Check {
    let ones = LossComponents { theta: 1.0, beta: 1.0, kp2d: 1.0, kp3d: 1.0, cls: 1.0 };
    let total = overall_loss(&ones, &LossWeights::default()).map_err(|e| e.to_string())?;
    ensure(total == 0.0715, || format!("overall loss {total}"))?;

    let pose = PoseParams::identity();
    let v = vec![Vector3::new(0.1, 0.2, 0.3); 4];
    let t = PoseTargets { vertices: &v, joints: &v, pose: &pose };
    let z = LatentTokens::new(DMatrix::from_element(16, 64, 0.3)).unwrap();
    let l = tokenizer_loss(&z, z.matrix(), &t, &t, &Config::default().tokenizer.weights, Reduction::Sum)
        .map_err(|e| e.to_string())?;
    ensure(l.total == 0.0, || format!("perfect reconstruction gives {}", l.total))?;

    let text = "[loss]\ntheta = 1e-3\nbeta = 5e-4\nkp3d = 5e-2\nkp2d = 1e-2\ncls = 1e-2\n\
                [tokenizer.weights]\nmix = 100.0\ncodebook = 1.0\ncommitment = 1.0\n";
    let cfg = Config::from_toml(text).map_err(|e| e.to_string())?;
    let w = cfg.loss;
    ensure(
        [w.theta, w.beta, w.kp3d, w.kp2d, w.cls] == [1e-3, 5e-4, 5e-2, 1e-2, 1e-2],
        || format!("loaded loss weights {w:?}"),
    )?;
    let tw = cfg.tokenizer.weights;
    ensure([tw.mix, tw.codebook, tw.commitment] == [100.0, 1.0, 1.0], || format!("{tw:?}"))?;
    ensure(cfg == Config::default(), || "explicit values differ from the defaults".into())?;
    Ok("overall 0.0715, tokenizer 0, config weights match".into())
}

// 7 -------------------------------------------------------------------------

fn points(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::new(r.random_range(-scale..scale), r.random_range(-scale..scale), r.random_range(-scale..scale)))
        .collect()
}

fn planar_objective(p: &[Vector3<f64>], g: &[Vector3<f64>], rot: &Matrix3<f64>) -> (f64, f64) {
    let n = p.len() as f64;
    let mp = p.iter().sum::<Vector3<f64>>() / n;
    let mg = g.iter().sum::<Vector3<f64>>() / n;
    let pc: Vec<_> = p.iter().map(|x| rot * (x - mp)).collect();
    let gc: Vec<_> = g.iter().map(|x| x - mg).collect();
    let s = pc.iter().zip(&gc).map(|(a, b)| a.dot(b)).sum::<f64>() / pc.iter().map(|a| a.norm_squared()).sum::<f64>();
    let sse = pc.iter().zip(&gc).map(|(a, b)| (s * a - b).norm_squared()).sum();
    let mean = pc.iter().zip(&gc).map(|(a, b)| (s * a - b).norm()).sum::<f64>() / n;
    (sse, mean)
}

fn planar_grid(p: &[Vector3<f64>], g: &[Vector3<f64>]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let flips = [Matrix3::identity(), *Rotation3::from_axis_angle(&Vector3::x_axis(), PI).matrix()];
    for flip in flips {
        let rot = |phi: f64| Rotation3::from_axis_angle(&Vector3::z_axis(), phi).matrix() * flip;
        let f = |phi: f64| planar_objective(p, g, &rot(phi)).0;
        let steps = 20_000;
        let h = 2.0 * PI / steps as f64;
        let k = (0..steps).min_by(|&a, &b| f(a as f64 * h).total_cmp(&f(b as f64 * h))).unwrap();
        let (mut lo, mut hi) = ((k as f64 - 1.0) * h, (k as f64 + 1.0) * h);
        let g_ratio = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (a, b) = (hi - g_ratio * (hi - lo), lo + g_ratio * (hi - lo));
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let cand = planar_objective(p, g, &rot(0.5 * (lo + hi)));
        if cand.0 < best.0 {
            best = cand;
        }
    }
    best.1
}

fn procrustes_properties() -> Check {
    let mut r = rng(700);
    let mut worst_sim = 0.0f64;
    for _ in 0..100 {
        let g = points(&mut r, 24, 400.0);
        let q = *random_rotation(&mut r, PI).matrix();
        let s = r.random_range(0.3..3.0);
        let t = Vector3::new(r.random_range(-500.0..500.0), 0.0, r.random_range(-500.0..500.0));
        let p: Vec<_> = g.iter().map(|x| s * (q * x) + t).collect();
        let e = pa_mpjpe(&JointSet::all_valid(p), &JointSet::all_valid(g), Alignment::Similarity)
            .map_err(|e| e.to_string())?;
        worst_sim = worst_sim.max(e);
    }
    ensure(worst_sim <= 1e-8, || format!("similarity copy error {worst_sim:e} mm"))?;

    for i in 0..1000 {
        let g = points(&mut r, 24, 300.0);
        let spread = r.random_range(1.0..150.0);
        let noise = points(&mut r, 24, spread);
        let q = *random_rotation(&mut r, PI).matrix();
        let p: Vec<_> = g.iter().zip(&noise).map(|(x, n)| q * x + n).collect();
        let (pj, gj) = (JointSet::all_valid(p), JointSet::all_valid(g));
        let plain = mpjpe(&pj, &gj).unwrap();
        let pa = pa_mpjpe(&pj, &gj, Alignment::Similarity).unwrap();
        ensure(pa <= plain + 1e-9, || format!("pair {i}: PA {pa} > MPJPE {plain}"))?;
    }

    let mut worst_grid = 0.0f64;
    for _ in 0..10 {
        let g: Vec<_> = (0..4)
            .map(|_| Vector3::new(r.random_range(-300.0..300.0), r.random_range(-300.0..300.0), 0.0))
            .collect();
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), r.random_range(-PI..PI));
        let p: Vec<_> = g
            .iter()
            .map(|x| 0.8 * (rot * x) + Vector3::new(r.random_range(-30.0..30.0), r.random_range(-30.0..30.0), 0.0))
            .collect();
        let got = pa_mpjpe(&JointSet::all_valid(p.clone()), &JointSet::all_valid(g.clone()), Alignment::Similarity)
            .map_err(|e| e.to_string())?;
        worst_grid = worst_grid.max((got - planar_grid(&p, &g)).abs());
    }
    ensure(worst_grid <= 1e-4, || format!("grid oracle gap {worst_grid:e} mm"))?;
    Ok(format!("similarity {worst_sim:.1e} mm, 1000 pairs ok, grid gap {worst_grid:.1e} mm"))
}

// 8 -------------------------------------------------------------------------

fn confusion_statistics() -> Check {
    let cm = ConfusionMatrix::new(vec![vec![0, 89], vec![0, 1912]]).unwrap();
    let s = confusion_stats(&cm).map_err(|e| e.to_string())?;
    let pos = &s.per_class[1];
    ensure((s.accuracy * 1000.0).round() == 956.0, || format!("accuracy {}", s.accuracy))?;
    ensure(pos.recall == 1.0, || format!("recall {}", pos.recall))?;
    ensure((pos.f1 - 0.977).abs() <= 5e-4, || format!("F1 {}", pos.f1))?;

    let mut r = rng(800);
    for _ in 0..100 {
        let counts: Vec<Vec<u64>> = (0..4).map(|_| (0..4).map(|_| r.random_range(0..40)).collect()).collect();
        let cm = ConfusionMatrix::new(counts).unwrap();
        let s = confusion_stats(&cm).unwrap();
        for c in 0..4 {
            let col: u64 = cm.counts.iter().map(|row| row[c]).sum();
            let pct: f64 = s.column_percent.iter().map(|row| row[c]).sum();
            ensure(col == 0 || (pct - 100.0).abs() < 1e-9, || format!("column {c} sums to {pct}"))?;
        }
    }
    Ok(format!("acc {:.5}, recall 1, F1 {:.6}; columns sum to 100%", s.accuracy, pos.f1))
}

// 9 -------------------------------------------------------------------------

fn quaternion_matrix(v: Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let (w, x, y, z) = if theta == 0.0 {
        (1.0, 0.0, 0.0, 0.0)
    } else {
        let a = v / theta;
        let s = (theta / 2.0).sin();
        ((theta / 2.0).cos(), a.x * s, a.y * s, a.z * s)
    };
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    )
}

fn rotation_round_trips() -> Check {
    let mut r = rng(900);
    let mut worst_6d = 0.0f64;
    let mut worst_q = 0.0f64;
    for _ in 0..1000 {
        let rot = random_rotation(&mut r, PI);
        let back = rot6d_to_matrix(&matrix_to_6d(&rot).unwrap()).map_err(|e| e.to_string())?;
        worst_6d = worst_6d.max((back.matrix() - rot.matrix()).amax());

        let v = Vector3::new(r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-4.0..4.0));
        let m = axis_angle_to_matrix(&AxisAngle(v)).unwrap();
        worst_q = worst_q.max((m.matrix() - quaternion_matrix(v)).amax());
    }
    ensure(worst_6d <= 1e-9, || format!("6D round trip {worst_6d:e}"))?;
    ensure(worst_q <= 1e-12, || format!("quaternion oracle {worst_q:e}"))?;
    let degenerate = [
        Rot6D::new(Vector3::zeros(), Vector3::y()),
        Rot6D::new(Vector3::x(), Vector3::zeros()),
        Rot6D::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 4.0, 6.0)),
        Rot6D::new(Vector3::x(), Vector3::new(-3.0, 0.0, 0.0)),
    ];
    for d in &degenerate {
        ensure(rot6d_to_matrix(d).is_err(), || format!("{d:?} was accepted"))?;
    }
    ensure(matrix_to_6d(&RotationMatrix::zero()).is_err(), || "zero sentinel encoded".into())?;
    Ok(format!("6D {worst_6d:.1e}, quaternion {worst_q:.1e}, {} degenerate rejected", degenerate.len()))
}

// 10 ------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_ampkin"))
        .args(args)
        .output()
        .map_err(|e| format!("failed to run ampkin: {e}"))
}

fn pipeline_closure() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("set");
    let out_s = out.to_str().unwrap();
    let synth = run_cli(&["--seed", "2024", "synth", "--count", "100", "--output", out_s])?;
    ensure(synth.status.success(), || String::from_utf8_lossy(&synth.stderr).into_owned())?;

    let records_path = out.join("records.jsonl");
    let text = std::fs::read_to_string(&records_path).map_err(|e| e.to_string())?;
    let records: Vec<AnnotationRecord> = text
        .lines()
        .map(|l| AnnotationRecord::from_json(l, true))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(records.len() == 100, || format!("{} records", records.len()))?;
    let amputees = records.iter().filter(|r| r.amputation.is_amputee()).count();
    ensure(amputees > 0 && amputees < 100, || format!("{amputees} amputees in 100 draws"))?;

    let rec = records_path.to_str().unwrap();
    let validate = run_cli(&["--strict", "validate", "--input", rec])?;
    ensure(validate.status.code() == Some(0), || String::from_utf8_lossy(&validate.stderr).into_owned())?;

    let eval = run_cli(&["eval", "--pred", rec, "--gt", rec])?;
    ensure(eval.status.success(), || String::from_utf8_lossy(&eval.stderr).into_owned())?;
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).map_err(|e| e.to_string())?;
    let samples = report["samples"].as_array().ok_or("report has no samples")?;
    ensure(samples.len() == 100, || "report sample count".into())?;
    let mut worst_pa = 0.0f64;
    for s in samples {
        let mve = s["mve_mm"].as_f64().unwrap();
        let mp = s["mpjpe_mm"].as_f64().unwrap();
        let pa = s["pa_mpjpe_mm"].as_f64().unwrap();
        ensure(mve == 0.0 && mp == 0.0, || format!("self-eval {s}"))?;
        worst_pa = worst_pa.max(pa);
    }
    ensure(worst_pa <= 1e-8, || format!("self PA-MPJPE {worst_pa:e} mm"))?;

    let mut masked_channels = 0;
    for (i, r) in records.iter().enumerate() {
        let bytes = std::fs::read(out.join(format!("heatmaps/{i:05}.hm"))).map_err(|e| e.to_string())?;
        let maps = HeatmapStack::from_bytes(&bytes).map_err(|e| e.to_string())?;
        for j in 0..NUM_JOINTS {
            if r.pose_mask[j] {
                masked_channels += 1;
                ensure(maps.channel(j).iter().all(|&v| v == 0.0), || format!("record {i} joint {j} heatmap not zero"))?;
            }
        }
        ensure(Path::new(&out.join(&r.image_ref)).exists(), || format!("missing {}", r.image_ref))?;
    }

    // a corrupted copy must fail with exit code 1
    let mut bad = records[0].clone();
    bad.joints3d[0][0] += 0.01;
    let bad_path = dir.path().join("bad.jsonl");
    std::fs::write(&bad_path, bad.to_json() + "\n").map_err(|e| e.to_string())?;
    let v = run_cli(&["validate", "--input", bad_path.to_str().unwrap()])?;
    ensure(v.status.code() == Some(1), || format!("corrupted record exit {:?}", v.status.code()))?;

    Ok(format!(
        "100 records ({amputees} amputees) valid, self-eval 0/0/{worst_pa:.1e} mm, {masked_channels} masked channels zero"
    ))
}

// 11 ------------------------------------------------------------------------

fn ssim_gate() -> Check {
    let mut r = rng(1100);
    let base = GrayImage::from_fn(48, 40, |x, y| (0.5 + 0.3 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.3).cos()).clamp(0.0, 1.0));
    let noise: Vec<f64> = (0..48 * 40).map(|_| r.random_range(0.0..1.0)).collect();
    let noise = GrayImage::new(48, 40, noise).unwrap();
    let self_score = ssim(&base, &base, 7).map_err(|e| e.to_string())?;
    ensure(self_score == 1.0, || format!("ssim(a, a) = {self_score}"))?;

    let mix = |t: f64| GrayImage::from_fn(48, 40, |x, y| (1.0 - t) * base.get(x, y) + t * noise.get(x, y));
    let score = |t: f64| ssim(&base, &mix(t), 7).unwrap();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if score(mid) >= SSIM_GATE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (above, below) = (score(lo), score(hi));
    ensure(above >= SSIM_GATE && below < SSIM_GATE, || format!("bisection {above} / {below}"))?;
    ensure(passes_quality_gate(above, SSIM_GATE) && !passes_quality_gate(below, SSIM_GATE), || "gate disagrees on the straddling pair".into())?;
    let sym = (ssim(&mix(0.3), &base, 7).unwrap() - score(0.3)).abs();
    ensure(sym <= 1e-12, || format!("asymmetry {sym:e}"))?;
    ensure(!passes_quality_gate(0.49, SSIM_GATE) && passes_quality_gate(0.51, SSIM_GATE), || "0.49 / 0.51".into())?;
    Ok(format!("straddling pair {above:.12} accepted, {below:.12} rejected"))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 11] = [
        ("collapse invariant", 1, collapse_invariant),
        ("forward kinematics oracle", 5, forward_kinematics_oracle),
        ("limb decision and codebook switching", 1, decision_and_switching),
        ("quantization oracle", 5, quantization_oracle),
        ("EMA convergence and dead-code reset", 5, ema_convergence),
        ("loss arithmetic", 1, loss_arithmetic),
        ("Procrustes properties", 10, procrustes_properties),
        ("confusion statistics", 1, confusion_statistics),
        ("rotation round trips", 5, rotation_round_trips),
        ("pipeline closure", 30, pipeline_closure),
        ("SSIM gate", 5, ssim_gate),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (tag, detail) = match (&result, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("over budget; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!(
            "[{tag}] {:>2}. {name} ({:.3} s / {budget} s): {detail}",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
