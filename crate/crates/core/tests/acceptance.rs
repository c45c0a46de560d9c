//! Acceptance suite: one PASS/FAIL line per criterion, each under its time
//! budget. Runs without any external denoiser.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stereogen::config::PipelineConfig;
use stereogen::depth::DepthSequence;
use stereogen::diffusion::rng::{NoiseKey, Purpose};
use stereogen::diffusion::sampler::{resample_noise, sample_known};
use stereogen::diffusion::{
    boundary_reinject, inpaint_frame_matrix, inpaint_sequence, make_schedule, AvgPoolCodec, CallRecord,
    IdentityCodec, InpaintOptions, LatentCodec, LatentTensor, OracleDenoiser, RecordingDenoiser, ScheduleConfig,
    SequenceOrigin,
};
use stereogen::imaging::io::{
    read_flo, read_mask_png, read_pfm, write_flo, write_mask_png, write_pfm, Endian,
};
use stereogen::imaging::{DepthMap, DisocclusionMask, FlowField, FrameBuffer};
use stereogen::matrix::{build_frame_matrix, build_linear_trajectory, FrameMatrix};
use stereogen::pipeline::{
    cmd_assemble, cmd_inpaint, cmd_matrix, cmd_smooth_depth, AssembleArgs, DepthInput, FramesInput, InpaintArgs,
    MatrixArgs, MatrixSource, SmoothDepthArgs, RUN_MANIFEST,
};
use stereogen::imaging::io::DepthFormat;
use stereogen::warp::{
    fill_cracks, project_frame, remove_isolated, splat_to_planes, CameraOffset, MultiPlaneStack, Plane, WarpParams,
};

use common::{hole_values, rel_err, texture, tree, Layered};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn textured(w: usize, h: usize, seed: u64) -> FrameBuffer {
    let mut f = FrameBuffer::zeros(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            f.pixel_mut(x, y).copy_from_slice(&texture(seed, x as f64, y as f64));
        }
    }
    f
}

// 1 -------------------------------------------------------------------------

fn warp_geometry() -> Outcome {
    let (w, h) = (96, 12);
    let (focal, baseline, z) = (512.0f64, 0.08f64, 2.0f32);
    let src = textured(w, h, 3);
    let depth = DepthMap::constant(w, h, z);
    let cam = CameraOffset::horizontal(baseline, focal);
    let (img, mask) = project_frame(&src, &depth, &cam, &WarpParams::default()).map_err(|e| e.to_string())?;

    let delta = focal * baseline / z as f64;
    ensure((delta - 20.48).abs() < 1e-12, || format!("disparity {delta}"))?;
    // per-pixel projection oracle
    let mut want = FrameBuffer::zeros(w, h, 3);
    let mut want_mask = DisocclusionMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let tx = (x as f64 - delta).round();
            if tx >= 0.0 && (tx as usize) < w {
                want.pixel_mut(tx as usize, y).copy_from_slice(src.pixel(x, y));
                want_mask.set(tx as usize, y, true);
            }
        }
    }
    ensure(img == want && mask == want_mask, || "projection differs from the per-pixel oracle".into())?;
    let shift = delta.round() as usize;
    for y in 0..h {
        for x in 0..w - shift {
            ensure(img.pixel(x, y) == src.pixel(x + shift, y), || format!("pixel ({x},{y}) not shifted by {shift}"))?;
        }
        let strip = (0..w).rev().take_while(|&x| !mask.get(x, y)).count();
        ensure(strip == shift, || format!("row {y}: hole strip {strip} px, expected {shift}"))?;
    }
    ensure(mask.count_unknown() == shift * h, || "holes outside the right strip".into())?;
    Ok(format!("shift {shift} px (delta {delta:.2}), strip {shift} px"))
}

// 2 -------------------------------------------------------------------------

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64, near: f64, far: f64) -> Plane {
    let mut p = Plane::empty(w, h, 3, near, far);
    for y in 0..h {
        for x in 0..w {
            if rng.random_bool(density) {
                p.mask.set(x, y, true);
                let c = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
                p.image.pixel_mut(x, y).copy_from_slice(&c);
                p.zbuf[y * w + x] = rng.random_range(near as f32..far as f32);
            }
        }
    }
    p
}

fn neighbours(mask: &DisocclusionMask, x: usize, y: usize) -> Vec<(usize, usize, u32)> {
    const W: [[u32; 3]; 3] = [[1, 2, 1], [2, 4, 2], [1, 2, 1]];
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for (j, row) in W.iter().enumerate() {
        for (i, &wt) in row.iter().enumerate() {
            let (sx, sy) = (x as i64 + i as i64 - 1, y as i64 + j as i64 - 1);
            if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h && mask.get(sx as usize, sy as usize) {
                out.push((sx as usize, sy as usize, wt));
            }
        }
    }
    out
}

fn morphology() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = WarpParams::default();
    let (mut cleared, mut filled) = (0usize, 0usize);
    for case in 0..50 {
        let (w, h) = (rng.random_range(4..40), rng.random_range(4..40));
        let d0 = rng.random_range(0.2..0.95);
        let d1 = rng.random_range(0.2..0.95);
        let stack = MultiPlaneStack::from_planes(vec![
            random_plane(&mut rng, w, h, d0, 1.0, 2.5),
            random_plane(&mut rng, w, h, d1, 2.5, 10.0),
        ])
        .map_err(|e| e.to_string())?;

        let iso = remove_isolated(&stack, &params);
        let crk = fill_cracks(&stack, &params);
        for (pi, plane) in stack.planes().iter().enumerate() {
            let (pm, pc) = (&iso.planes()[pi], &crk.planes()[pi]);
            for y in 0..h {
                for x in 0..w {
                    let set = plane.mask.get(x, y);
                    let count = neighbours(&plane.mask, x, y).len();
                    // box average below one half: at most 4 of 9 set
                    let keep = set && count * 2 >= 9;
                    ensure(pm.mask.get(x, y) == keep, || format!("case {case} plane {pi} ({x},{y}) isolation"))?;
                    if set && !keep {
                        cleared += 1;
                        ensure(pm.image.pixel(x, y).iter().all(|&v| v == 0.0), || "cleared pixel kept colour".into())?;
                    } else if keep {
                        ensure(pm.image.pixel(x, y) == plane.image.pixel(x, y), || "kept pixel changed".into())?;
                    }

                    let nb = neighbours(&plane.mask, x, y);
                    let weight: u32 = nb.iter().map(|n| n.2).sum();
                    // Gaussian average above 0.2: integer weight sum over 16 > 3.2
                    let fill = !set && weight * 5 > 16;
                    ensure(pc.mask.get(x, y) == (set || fill), || format!("case {case} plane {pi} ({x},{y}) crack"))?;
                    if fill {
                        filled += 1;
                        for ch in 0..3 {
                            let num: f64 =
                                nb.iter().map(|&(sx, sy, wt)| wt as f64 * plane.image.pixel(sx, sy)[ch] as f64).sum();
                            let want = num / weight as f64;
                            let got = pc.image.pixel(x, y)[ch] as f64;
                            ensure((got - want).abs() < 1e-6, || format!("fill colour {got} vs {want}"))?;
                        }
                    } else {
                        ensure(pc.image.pixel(x, y) == plane.image.pixel(x, y), || "untouched pixel changed".into())?;
                    }
                }
            }
        }
    }
    Ok(format!("50 masks, {cleared} isolated pixels cleared, {filled} cracks filled"))
}

// 3 -------------------------------------------------------------------------

fn blending() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = WarpParams::default();
    let mut guarded = 0;
    for case in 0..40 {
        let (w, h) = (rng.random_range(16..48), rng.random_range(8..24));
        let x0 = rng.random_range(2..w / 2);
        let x1 = rng.random_range(x0 + 2..w);
        let y0 = rng.random_range(0..h / 2);
        let y1 = rng.random_range(y0 + 1..=h);
        let mut src = FrameBuffer::zeros(w, h, 3);
        let mut depth = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let fg = (x0..x1).contains(&x) && (y0..y1).contains(&y);
                depth[y * w + x] = if fg { rng.random_range(1.0..1.8) } else { rng.random_range(6.0..10.0) };
                let c = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
                src.pixel_mut(x, y).copy_from_slice(&c);
            }
        }
        let depth = DepthMap::new(w, h, depth).unwrap();
        let cam = CameraOffset::horizontal(rng.random_range(0.02..0.2), rng.random_range(40.0..120.0));
        let (img, mask) = project_frame(&src, &depth, &cam, &params).map_err(|e| e.to_string())?;

        // z-buffer oracle: nearest splat wins; `reverse` lets the farthest win
        let oracle = |reverse: bool| {
            let mut out = FrameBuffer::zeros(w, h, 3);
            let mut zb = vec![if reverse { f32::NEG_INFINITY } else { f32::INFINITY }; w * h];
            let mut m = DisocclusionMask::empty(w, h);
            for y in 0..h {
                for x in 0..w {
                    let z = depth.at(x, y);
                    let tx = (x as f64 - cam.focal_px * cam.baseline_offset / z as f64).round();
                    if tx < 0.0 || tx >= w as f64 {
                        continue;
                    }
                    let k = y * w + tx as usize;
                    if (!reverse && z < zb[k]) || (reverse && z > zb[k]) {
                        zb[k] = z;
                        out.pixel_mut(tx as usize, y).copy_from_slice(src.pixel(x, y));
                        m.set(tx as usize, y, true);
                    }
                }
            }
            (out, m)
        };
        let (want, want_mask) = oracle(false);
        ensure(img == want && mask == want_mask, || format!("case {case}: blend differs from z-buffer oracle"))?;
        let (rev, _) = oracle(true);
        if rev != want {
            ensure(img != rev, || format!("case {case}: farthest-wins splatting also matches"))?;
        }
        // blending the stack near-to-far must fail wherever planes overlap
        let stack = splat_to_planes(&src, &depth, &cam, &params).map_err(|e| e.to_string())?;
        let mut wrong = FrameBuffer::zeros(w, h, 3);
        let mut cover = vec![0u8; w * h];
        for plane in stack.planes() {
            for (k, &m) in plane.mask.data().iter().enumerate() {
                if m == 1 {
                    cover[k] += 1;
                    wrong.data_mut()[k * 3..k * 3 + 3].copy_from_slice(&plane.image.data()[k * 3..k * 3 + 3]);
                }
            }
        }
        if cover.iter().any(|&c| c > 1) {
            guarded += 1;
            ensure(wrong != want, || format!("case {case}: reversed blend order passes"))?;
        }
    }
    ensure(guarded >= 20, || format!("only {guarded} scenes exercised occlusion"))?;
    Ok(format!("40 scenes exact, order guard tripped in {guarded}"))
}

// 4 -------------------------------------------------------------------------

fn oracle_convergence() -> Outcome {
    let (w, h, n) = (64, 64, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<FrameBuffer> = (0..n).map(|s| textured(w, h, 40 + s as u64)).collect();
    let mut warped = truth.clone();
    let mut masks = Vec::new();
    for f in warped.iter_mut() {
        let mut m = DisocclusionMask::full(w, h);
        let (x0, x1) = (rng.random_range(20..40), rng.random_range(44..64));
        let (y0, y1) = (rng.random_range(0..20), rng.random_range(40..64));
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, false);
                f.pixel_mut(x, y).fill(0.0);
            }
        }
        masks.push(m);
    }
    let sched = make_schedule(&ScheduleConfig::default()).map_err(|e| e.to_string())?;
    ensure(sched.stride() == 20 && sched.step_plan().len() == 50, || "schedule is not 50 x 20".into())?;
    let refs: Vec<&FrameBuffer> = truth.iter().collect();
    let oracle = OracleDenoiser::for_sequence(IdentityCodec.encode(&refs).unwrap(), sched.clone());
    let fr: Vec<&FrameBuffer> = warped.iter().collect();
    let mr: Vec<&DisocclusionMask> = masks.iter().collect();
    let opts = InpaintOptions { seed: 4, deterministic: true, reinject: true };
    let (out, _) = inpaint_sequence(&fr, &mr, "", &IdentityCodec, &oracle, &sched, &opts).map_err(|e| e.to_string())?;
    let mut worst = 0f64;
    for s in 0..n {
        let e = rel_err(&hole_values(&out[s], &masks[s]), &hole_values(&truth[s], &masks[s]));
        worst = worst.max(e);
        ensure(out[s].data().len() == truth[s].data().len(), || "frame size changed".into())?;
    }
    ensure(worst <= 1e-3, || format!("worst relative error {worst:.3e}"))?;
    Ok(format!("16 x 64x64, worst relative hole error {worst:.2e}"))
}

// 5 -------------------------------------------------------------------------

/// Expected endpoint call sequence written out from the published schedule:
/// 50 visited steps 1000, 980, ..., 20; the first 25 resample 8 times over
/// columns (odd) and rows (even), the rest 4 times on the right column only.
/// Re-injection calls, one per in-scope column with holes, open each step.
fn reference_trace(n_frames: usize, n_views: usize, holes: &[bool], reinject: bool) -> Vec<CallRecord> {
    let mut log = Vec::new();
    for i in 0..50 {
        let t = 1000 - 20 * i;
        let all_views = i < 25;
        let reps = if all_views { 8 } else { 4 };
        let cols: Vec<usize> = if all_views { (0..n_views).collect() } else { vec![n_views - 1] };
        if reinject {
            for &v in cols.iter().filter(|&&v| holes[v]) {
                log.push(CallRecord { t, origin: SequenceOrigin::Column(v), len: n_frames });
            }
        }
        for n in 1..=reps {
            if !all_views || n % 2 == 1 {
                for &v in &cols {
                    log.push(CallRecord { t, origin: SequenceOrigin::Column(v), len: n_frames });
                }
            } else {
                for s in 0..n_frames {
                    log.push(CallRecord { t, origin: SequenceOrigin::Row(s), len: n_views });
                }
            }
        }
    }
    log
}

fn traversal() -> Outcome {
    let scene = Layered::small(5);
    let traj = build_linear_trajectory(0.08, 3, 100.0).unwrap();
    let depth = DepthSequence::from_normalized(scene.depth(), 1.0, 10.0).unwrap();
    let fm = build_frame_matrix(&scene.frames(), &depth, &traj, &WarpParams::default(), "")
        .map_err(|e| e.to_string())?;
    ensure(fm.n_frames() == 4 && fm.n_views() == 3, || "matrix is not 4 x 3".into())?;
    let truth = scene.truth_matrix(&fm);
    let sched = make_schedule(&ScheduleConfig::default()).unwrap();
    let holes: Vec<bool> = (0..3).map(|v| fm.column_unknown_count(v) > 0).collect();
    ensure(holes == [false, true, true], || format!("unexpected hole pattern {holes:?}"))?;
    let mut detail = String::new();
    for reinject in [false, true] {
        let mut cells = Vec::new();
        for s in 0..4 {
            cells.extend(IdentityCodec.encode(&truth.row(s)).unwrap());
        }
        let rec = RecordingDenoiser::new(OracleDenoiser::for_grid(3, cells, sched.clone()));
        let opts = InpaintOptions { seed: 5, deterministic: false, reinject };
        let (_, report) =
            inpaint_frame_matrix(&fm, &IdentityCodec, &rec, &sched, &opts).map_err(|e| e.to_string())?;
        let want = reference_trace(4, 3, &holes, reinject);
        let got = rec.calls();
        if got != want {
            let at = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
            return Err(format!(
                "reinject={reinject}: logs diverge at call {at} ({:?} vs {:?}), lengths {} / {}",
                got.get(at),
                want.get(at),
                got.len(),
                want.len()
            ));
        }
        ensure(report.repetitions == 300, || format!("{} repetitions", report.repetitions))?;
        detail = format!("{} calls with re-injection, 300 repetitions", got.len());
    }
    Ok(detail)
}

// 6 -------------------------------------------------------------------------

fn noise_statistics() -> Outcome {
    const N: usize = 10_000;
    let sched = make_schedule(&ScheduleConfig::default()).unwrap();
    // alpha_bar from the linear betas, independently of the schedule object
    let beta = |t: usize| 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
    let alpha_bar = |t: usize| (1..=t).map(|i| 1.0 - beta(i)).product::<f64>();
    let z0 = LatentTensor::new(1, 1, 4, vec![0.7, -1.3, 0.2, 2.0]).unwrap();
    let mut checks = 0;
    for (k, &t) in [1000usize, 760, 500, 240, 20].iter().enumerate() {
        let ab = alpha_bar(t);
        ensure((ab - sched.alpha_bar(t)).abs() < 1e-12, || format!("alpha_bar({t})"))?;
        let jump = 1.0 - ab / alpha_bar(t - 20);
        for (label, mean_scale, var) in [("known", ab.sqrt(), 1.0 - ab), ("renoise", (1.0 - jump).sqrt(), jump)] {
            let mut sum = [0f64; 4];
            let mut sq = [0f64; 4];
            for i in 0..N {
                let key = NoiseKey::new(6, Purpose::Known).at(t, k).seq(0, 0, i);
                let z = if label == "known" {
                    sample_known(&z0, ab, &mut key.stream())
                } else {
                    resample_noise(&z0, jump, &mut key.stream())
                };
                for (e, &v) in z.data().iter().enumerate() {
                    sum[e] += v as f64;
                    sq[e] += (v as f64).powi(2);
                }
            }
            for e in 0..4 {
                let mean = sum[e] / N as f64;
                let s2 = (sq[e] - N as f64 * mean * mean) / (N - 1) as f64;
                let mu = mean_scale * z0.data()[e] as f64;
                let mean_tol = 4.0 * (var / N as f64).sqrt();
                let var_tol = 4.0 * var * (2.0 / (N - 1) as f64).sqrt();
                ensure((mean - mu).abs() <= mean_tol, || {
                    format!("{label} t={t} element {e}: mean {mean:.5} vs {mu:.5} (tol {mean_tol:.2e})")
                })?;
                ensure((s2 - var).abs() <= var_tol, || {
                    format!("{label} t={t} element {e}: variance {s2:.3e} vs {var:.3e} (tol {var_tol:.2e})")
                })?;
                checks += 2;
            }
        }
    }
    Ok(format!("{checks} mean/variance checks at 5 timesteps, 10^4 draws each"))
}

// 7 -------------------------------------------------------------------------

fn reinjection_benefit() -> Outcome {
    let (w, h) = (64, 64);
    let codec = AvgPoolCodec::new(8);
    let sched = make_schedule(&ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = 400;
    let ab = sched.alpha_bar(t);
    let scenes = 20;
    let mut wins = 0;
    for scene in 0..scenes {
        let truth = textured(w, h, 700 + scene);
        let mut warped = truth.clone();
        let mut mask = DisocclusionMask::full(w, h);
        let x0 = rng.random_range(4..40);
        let x1 = x0 + rng.random_range(3..20);
        let (y0, y1) = (rng.random_range(0..24), rng.random_range(40..64));
        for y in y0..y1 {
            for x in x0..x1.min(w) {
                mask.set(x, y, false);
                warped.pixel_mut(x, y).fill(0.0);
            }
        }
        let z_true = codec.encode(&[&truth]).unwrap();
        // imperfect clean estimate: the truth plus noise
        let mut target = z_true[0].clone();
        for v in target.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
        let mut z_t = z_true[0].clone();
        for (v, &x) in z_t.data_mut().iter_mut().zip(target.data()) {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            *v = (ab.sqrt() * x as f64 + (1.0 - ab).sqrt() * e) as f32;
        }
        let oracle = OracleDenoiser::for_sequence(vec![target], sched.clone());
        let before = codec.encode(&[&warped]).unwrap();
        let after = boundary_reinject(
            std::slice::from_ref(&z_t),
            &[&warped],
            &[&mask],
            &codec,
            &oracle,
            "",
            t,
            &sched,
            SequenceOrigin::Single,
        )
        .map_err(|e| e.to_string())?;
        // cells straddling the hole edge
        let (lh, lw) = (h / 8, w / 8);
        let mut band = Vec::new();
        for cy in 0..lh {
            for cx in 0..lw {
                let mut known = 0;
                for y in cy * 8..cy * 8 + 8 {
                    for x in cx * 8..cx * 8 + 8 {
                        known += mask.get(x, y) as usize;
                    }
                }
                if known > 0 && known < 64 {
                    band.push(cy * lw + cx);
                }
            }
        }
        let mse = |z: &LatentTensor| {
            let mut acc = 0f64;
            for ch in 0..3 {
                for &c in &band {
                    let i = ch * lh * lw + c;
                    acc += ((z.data()[i] - z_true[0].data()[i]) as f64).powi(2);
                }
            }
            acc / (3 * band.len()) as f64
        };
        if mse(&after[0]) < mse(&before[0]) {
            wins += 1;
        }
    }
    // one-sided sign test
    let binom = |n: u64, k: u64| (0..k).fold(1f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let p: f64 = (wins..=scenes).map(|k| binom(scenes, k)).sum::<f64>() / 2f64.powi(scenes as i32);
    ensure(wins >= 16 && p < 0.05, || format!("re-injection better in {wins}/{scenes} scenes, p = {p:.4}"))?;
    Ok(format!("better in {wins}/{scenes} scenes, sign test p = {p:.2e}"))
}

// 8 -------------------------------------------------------------------------

fn run_pipeline(root: &std::path::Path, scene: &Layered, cfg: &PipelineConfig) -> Result<(), String> {
    let e = |e: stereogen::Error| e.to_string();
    cmd_smooth_depth(
        cfg,
        &SmoothDepthArgs {
            depth: DepthInput {
                dir: root.join("in/depth"),
                pattern: "d###.pfm".into(),
                format: DepthFormat::Pfm,
                inverse: false,
            },
            flows: Some((root.join("in/flow_fwd"), root.join("in/flow_bwd"))),
            flow_pattern: "f###.flo".into(),
            out_dir: root.join("depth"),
        },
    )
    .map_err(e)?;
    cmd_matrix(
        cfg,
        &MatrixArgs {
            source: MatrixSource::Inputs {
                frames: FramesInput { dir: root.join("in/frames"), pattern: "f###.png".into(), srgb_decode: false },
                depth: DepthInput {
                    dir: root.join("depth"),
                    pattern: "d###.pfm".into(),
                    format: DepthFormat::Pfm,
                    inverse: false,
                },
                normalize: false,
                prompt: "a textured wall".into(),
            },
            out_dir: root.join("matrix"),
        },
    )
    .map_err(e)?;
    let (fm, _) = FrameMatrix::load(root.join("matrix")).map_err(e)?;
    scene.truth_matrix(&fm).save(root.join("targets"), None).map_err(e)?;
    cmd_inpaint(
        cfg,
        &InpaintArgs {
            matrix_dir: root.join("matrix"),
            oracle_targets: Some(root.join("targets")),
            out_dir: root.join("inpainted"),
        },
    )
    .map_err(e)?;
    cmd_assemble(cfg, &AssembleArgs { matrix_dir: root.join("inpainted"), out_dir: root.join("out") }).map_err(e)?;
    Ok(())
}

fn determinism() -> Outcome {
    let scene = Layered::small(8);
    let mut cfg = PipelineConfig::default();
    cfg.warp.focal_px = 100.0;
    cfg.diffusion.seed = 42;
    // both runs use the same root, since manifests record input paths
    let root = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(root.path());
        scene.write(&root.path().join("in"));
        run_pipeline(root.path(), &scene, &cfg)?;
        let t: Vec<_> = tree(root.path()).into_iter().filter(|(p, _)| !p.ends_with(RUN_MANIFEST)).collect();
        trees.push(t);
    }
    ensure(trees[0].len() == trees[1].len(), || "output trees differ in file count".into())?;
    for (a, b) in trees[0].iter().zip(&trees[1]) {
        ensure(a == b, || format!("{} differs between runs", a.0))?;
    }
    let right = trees[0].iter().filter(|(p, _)| p.starts_with("out/right/")).count();
    ensure(right == scene.n_frames, || format!("{right} right frames written"))?;
    Ok(format!("{} files bit-identical across two seeded runs", trees[0].len()))
}

// 9 -------------------------------------------------------------------------

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let n = w * h;
        let mut val = || rng.random_range(-1e3f32..1e3);
        let u: Vec<f32> = (0..n).map(|_| val()).collect();
        let v: Vec<f32> = (0..n).map(|_| val()).collect();
        let flow = FlowField::new(w, h, u, v).unwrap();
        let p = dir.path().join(format!("{i}.flo"));
        write_flo(&p, &flow).map_err(|e| e.to_string())?;
        ensure(read_flo(&p).map_err(|e| e.to_string())? == flow, || format!("flo payload {i}"))?;

        let channels = if rng.random_bool(0.5) { 1 } else { 3 };
        let data: Vec<f32> = (0..n * channels).map(|_| rng.random_range(-1e4f32..1e4)).collect();
        let img = FrameBuffer::new(w, h, channels, data).unwrap();
        let endian = if rng.random_bool(0.5) { Endian::Little } else { Endian::Big };
        let p = dir.path().join(format!("{i}.pfm"));
        write_pfm(&p, &img, endian).map_err(|e| e.to_string())?;
        ensure(read_pfm(&p).map_err(|e| e.to_string())? == img, || format!("pfm payload {i} ({endian:?})"))?;

        let bits: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let mask = DisocclusionMask::new(w, h, bits).unwrap();
        let p = dir.path().join(format!("{i}.png"));
        write_mask_png(&p, &mask).map_err(|e| e.to_string())?;
        ensure(read_mask_png(&p).map_err(|e| e.to_string())? == mask, || format!("mask payload {i}"))?;
    }
    Ok("100 payloads each for .flo, PFM and mask PNG".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("warp geometry", Duration::from_secs(1), warp_geometry),
        ("plane morphology", Duration::from_secs(5), morphology),
        ("back-to-front blending", Duration::from_secs(5), blending),
        ("inpainting oracle convergence", Duration::from_secs(30), oracle_convergence),
        ("matrix traversal call log", Duration::from_secs(10), traversal),
        ("noise statistics", Duration::from_secs(10), noise_statistics),
        ("re-injection benefit", Duration::from_secs(60), reinjection_benefit),
        ("pipeline determinism", Duration::from_secs(60), determinism),
        ("format round-trips", Duration::from_secs(5), format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *budget => Err(format!("{detail}; took {took:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}; {took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
