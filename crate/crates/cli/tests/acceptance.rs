//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any check fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use nalgebra::Vector3;
use pedlabel_core::analytics::{
    ade, compute_stats, export_dataset, fde, min_distance_stats, motion_speed_stats, perception_noise,
    read_export, series_from_rows, split_dynamic, DynamicCriterion, DynamicParams, StatsReport, TrackSeries,
};
use pedlabel_core::editops::{self, ActionLog, Applied, EditError, EditOp};
use pedlabel_core::geometry::{
    align_frames, associate_cross_view, calibrate_from_correspondences, calibrate_session, detect_markers,
    lift_pair, lift_session, project, triangulate, AssociationParams, MarkerParams,
};
use pedlabel_core::model::{validate, BBox, CameraId, CameraModel, PixelPoint, Session, TrackletId, WorldPoint};
use pedlabel_core::synth::{self, look_at, Motion, Scene, Walker};
use pedlabel_core::store;
use pedlabel_core::tracking::{track_detections, TrackerParams};
use pedlabel_service::journal::read_entries;
use pedlabel_service::{load_dir, router, Registry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use tower::ServiceExt;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- end to end

struct PipelineError {
    trajectories: usize,
    walkers_covered: usize,
    samples: usize,
    mean: f64,
    max: f64,
}

fn run_pipeline(scene: &Scene, noise_px: f64, seed: u64) -> Result<PipelineError, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = scene.session(12, &mut rng);
    calibrate_session(&mut s).map_err(|(c, e)| format!("calibrate {c}: {e}"))?;
    let signals: BTreeMap<CameraId, Vec<f64>> = (0..scene.cameras.len())
        .map(|i| (scene.cameras[i].camera_id.clone(), scene.luminance(i, &mut rng)))
        .collect();
    let markers = detect_markers(&signals, &MarkerParams::default()).map_err(|(c, e)| format!("sync {c}: {e}"))?;
    s.sync_offsets = align_frames(&s, &markers).map_err(|e| e.to_string())?;
    for cam in 0..scene.cameras.len() {
        let frames = scene.detections(cam, noise_px, &mut rng);
        let tracks = track_detections(&frames, &TrackerParams::default()).map_err(|e| e.to_string())?;
        s.ingest_tracklets(tracks);
    }
    let assoc = associate_cross_view(&s, &AssociationParams::default()).map_err(|e| e.to_string())?;
    let lifted = lift_session(&s, &assoc).map_err(|e| e.to_string())?;
    let f = lifted.label_frequency;
    let mut covered = vec![false; scene.walkers.len()];
    let (mut sum, mut n, mut max) = (0.0, 0usize, 0.0f64);
    for t in lifted.store.trajectories.values() {
        // Each trajectory is scored against the single walker that explains it best.
        let best = scene
            .walkers
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                let errs: Option<Vec<f64>> = t
                    .samples
                    .iter()
                    .map(|p| {
                        let time = p.time(f);
                        w.active(time).then(|| {
                            let [x, y] = w.position(time);
                            (p.x - x).hypot(p.y - y)
                        })
                    })
                    .collect();
                let errs = errs?;
                let mean = errs.iter().sum::<f64>() / errs.len() as f64;
                Some((mean, i, errs))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, walker, errs)) = best else {
            return Err(format!("trajectory {} matches no walker's active span", t.ped_id));
        };
        covered[walker] = true;
        for e in errs {
            sum += e;
            n += 1;
            max = max.max(e);
        }
    }
    Ok(PipelineError {
        trajectories: lifted.store.trajectories.len(),
        walkers_covered: covered.iter().filter(|c| **c).count(),
        samples: n,
        mean: if n == 0 { f64::INFINITY } else { sum / n as f64 },
        max,
    })
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let scene = Scene::ten_walkers();
    let clean = match run_pipeline(&scene, 0.0, 1) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("noiseless pipeline: {e}")),
    };
    let noisy = match run_pipeline(&scene, 1.0, 2) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("noisy pipeline: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let walkers = scene.walkers.len();
    let ok = clean.max < 1e-3
        && clean.walkers_covered == walkers
        && noisy.mean < 0.10
        && noisy.walkers_covered == walkers
        && secs < 30.0;
    verdict(
        ok,
        format!(
            "noiseless: {} trajectories, {}/{walkers} walkers, max error {:.2e} m over {} samples; \
             1 px noise: {} trajectories, {}/{walkers} walkers, mean error {:.4} m; {secs:.1} s",
            clean.trajectories, clean.walkers_covered, clean.max, clean.samples, noisy.trajectories,
            noisy.walkers_covered, noisy.mean
        ),
    )
}

// ------------------------------------------------------------------ geometry

fn random_camera(rng: &mut impl Rng, name: &str) -> CameraModel {
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = rng.gen_range(6.0..20.0);
    let eye = Vector3::new(r * az.cos(), r * az.sin(), rng.gen_range(1.0..10.0));
    let target = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
    let (rot, t) = look_at(eye, target);
    let f = rng.gen_range(500.0..1500.0);
    CameraModel::pinhole(name, f, f * rng.gen_range(0.95..1.05), 960.0, 540.0)
        .with_distortion(rng.gen_range(-0.05..0.05), rng.gen_range(-0.01..0.01))
        .with_pose(rot, t)
}

fn well_imaged(cam: &CameraModel, p: &WorldPoint) -> bool {
    let xc = cam.rotation * p.to_vector() + cam.translation;
    xc.z > 0.5 && (xc.x / xc.z).hypot(xc.y / xc.z) < 0.8
}

fn random_point(rng: &mut impl Rng) -> WorldPoint {
    WorldPoint::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..2.0))
}

fn linear(x: f64, y: f64, vx: f64, vy: f64, start: f64, end: f64) -> Walker {
    Walker {
        motion: Motion::Linear { x, y, vx, vy },
        start,
        end,
    }
}

/// Most admissible pairs, then least total error, by exhaustive search over
/// cam1 x cam2 matchings.
fn brute_force(session: &Session, params: &AssociationParams) -> Vec<(TrackletId, TrackletId)> {
    let left: Vec<_> = session.store.tracklets.values().filter(|t| t.camera_id.as_str() == "cam1").collect();
    let right: Vec<_> = session.store.tracklets.values().filter(|t| t.camera_id.as_str() == "cam2").collect();
    let mut err = BTreeMap::new();
    for a in &left {
        for b in &right {
            if let Ok(l) = lift_pair(session, a, b, params) {
                if l.mean_error <= params.max_error_px {
                    err.insert((a.id, b.id), l.mean_error);
                }
            }
        }
    }
    let l: Vec<TrackletId> = left.iter().map(|t| t.id).collect();
    let r: Vec<TrackletId> = right.iter().map(|t| t.id).collect();
    let mut best: (usize, f64, Vec<(TrackletId, TrackletId)>) = (0, f64::INFINITY, Vec::new());
    // Every injective partial assignment of left to right.
    let mut stack: Vec<(usize, Vec<bool>, Vec<(TrackletId, TrackletId)>, f64)> =
        vec![(0, vec![false; r.len()], Vec::new(), 0.0)];
    while let Some((i, used, cur, cost)) = stack.pop() {
        if i == l.len() {
            if cur.len() > best.0 || (cur.len() == best.0 && cost < best.1 - 1e-12) {
                best = (cur.len(), cost, cur);
            }
            continue;
        }
        stack.push((i + 1, used.clone(), cur.clone(), cost));
        for j in 0..r.len() {
            if let (false, Some(e)) = (used[j], err.get(&(l[i], r[j]))) {
                let mut u = used.clone();
                u[j] = true;
                let mut c = cur.clone();
                c.push((l[i], r[j]));
                stack.push((i + 1, u, c, cost + e));
            }
        }
    }
    let mut out = best.2;
    out.sort();
    out
}

fn association_instance(seed: u64) -> (Session, AssociationParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let walkers: Vec<Walker> = (0..n)
        .map(|_| {
            let start = rng.gen_range(0.0..2.0);
            linear(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                start,
                start + rng.gen_range(2.0..4.0),
            )
        })
        .collect();
    let mut scene = Scene::new(walkers, 6.0);
    let dropped = scene.cameras.pop().expect("three cameras");
    scene.frame_offsets.remove(&dropped.camera_id);
    let noise = Normal::new(0.0, 1.0).expect("finite sigma");
    let mut s = scene.calibrated_session();
    for cam in 0..scene.cameras.len() {
        let mut truth = scene.true_tracklets(cam);
        for t in &mut truth {
            for smp in &mut t.samples {
                let b = smp.bbox;
                smp.bbox = BBox::new(
                    b.u_min + noise.sample(&mut rng),
                    b.v_min + noise.sample(&mut rng),
                    b.u_max + noise.sample(&mut rng),
                    b.v_max + noise.sample(&mut rng),
                );
            }
        }
        s.ingest_tracklets(truth);
    }
    (s, AssociationParams::default())
}

fn geometry_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_tri: f64 = 0.0;
    let mut configs = 0;
    while configs < 10_000 {
        let n_views = rng.gen_range(2..5);
        let cams: Vec<CameraModel> = (0..n_views).map(|i| random_camera(&mut rng, &format!("c{i}"))).collect();
        let p = random_point(&mut rng);
        let (a, b) = (p.to_vector() - cams[0].center(), p.to_vector() - cams[1].center());
        if !cams.iter().all(|c| well_imaged(c, &p)) || a.angle(&b) < 0.05 {
            continue;
        }
        let obs: Vec<(&CameraModel, PixelPoint)> = cams.iter().map(|c| (c, project(c, &p).unwrap())).collect();
        match triangulate(&obs) {
            Ok(t) => worst_tri = worst_tri.max((t.point.to_vector() - p.to_vector()).norm()),
            Err(e) => return Outcome::Fail(format!("triangulation failed: {e}")),
        }
        configs += 1;
    }

    let mut worst_pose: f64 = 0.0;
    for _ in 0..500 {
        let truth = random_camera(&mut rng, "c");
        let mut pts = Vec::new();
        while pts.len() < 12 {
            let p = random_point(&mut rng);
            if well_imaged(&truth, &p) {
                pts.push((p, project(&truth, &p).unwrap()));
            }
        }
        let blank = truth
            .clone()
            .with_pose(nalgebra::Matrix3::identity(), Vector3::zeros());
        match calibrate_from_correspondences(&blank, &pts) {
            Ok(est) => {
                let d = (est.rotation - truth.rotation).norm().max((est.translation - truth.translation).norm());
                worst_pose = worst_pose.max(d);
            }
            Err(e) => return Outcome::Fail(format!("pose recovery failed: {e}")),
        }
    }

    let instances = 300;
    let mut disagreements = Vec::new();
    for seed in 0..instances {
        let (s, params) = association_instance(seed);
        let result = match associate_cross_view(&s, &params) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("association failed: {e}")),
        };
        let mut greedy: Vec<_> = result.matches.iter().map(|m| (m.tracklets[0], m.tracklets[1])).collect();
        greedy.sort();
        if greedy != brute_force(&s, &params) {
            disagreements.push(seed);
        }
    }
    let ok = worst_tri < 1e-6 && worst_pose < 1e-8 && disagreements.is_empty();
    verdict(
        ok,
        format!(
            "round trip max {worst_tri:.2e} m over {configs} configs; pose recovery max {worst_pose:.2e} over 500 cameras; \
             association equals brute force on {}/{instances} instances (<=4 tracklets/camera){}",
            instances as usize - disagreements.len(),
            if disagreements.is_empty() {
                String::new()
            } else {
                format!(", differing seeds {disagreements:?}")
            }
        ),
    )
}

// --------------------------------------------------------------- edit algebra

fn sample_multiset(s: &Session) -> Vec<String> {
    let mut out: Vec<String> = s
        .store
        .tracklets
        .values()
        .flat_map(|t| {
            t.samples.iter().map(|x| {
                let b = x.bbox;
                format!("{}:{}:{:?}", t.camera_id, x.frame, [b.u_min, b.v_min, b.u_max, b.v_max].map(f64::to_bits))
            })
        })
        .chain(s.store.trajectories.values().flat_map(|t| {
            t.samples
                .iter()
                .map(|x| format!("m:{}:{:?}", x.step, [x.x, x.y, x.z].map(f64::to_bits)))
        }))
        .collect();
    out.sort();
    out
}

fn edit_algebra() -> Outcome {
    let sequences = 1000;
    let mut checks = BTreeMap::<&str, usize>::new();
    for seq in 0..sequences {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seq);
        let initial = synth::random_session(&mut rng, 2, 12, 4);
        let mut live = initial.clone();
        let mut applied = 0;
        for _ in 0..60 {
            if applied == 20 {
                break;
            }
            let Some(op) = synth::random_edit(&live, &mut rng) else { continue };
            let conserving = matches!(op, EditOp::Break { .. } | EditOp::Join { .. } | EditOp::Disentangle { .. });
            let before = conserving.then(|| sample_multiset(&live));
            if let Err(e) = editops::apply(&mut live, op.clone()) {
                return Outcome::Fail(format!("sequence {seq}: generated edit {op:?} rejected: {e}"));
            }
            applied += 1;
            if let Some(before) = before {
                if before != sample_multiset(&live) {
                    return Outcome::Fail(format!("sequence {seq}: {:?} changed the sample multiset", op.kind()));
                }
                *checks.entry("conservation").or_default() += 1;
            }
            if let Some(v) = validate(&live).first() {
                return Outcome::Fail(format!("sequence {seq}: invalid store after {:?}: {v}", op.kind()));
            }
        }
        match editops::replay(&initial, &live.action_log) {
            Ok(r) if r.store == live.store => {}
            Ok(_) => return Outcome::Fail(format!("sequence {seq}: replay differs from live store")),
            Err(e) => return Outcome::Fail(format!("sequence {seq}: replay failed: {e}")),
        }
        let mut back = live.clone();
        loop {
            match editops::undo(&mut back) {
                Ok(_) => {}
                Err(EditError::NothingToUndo) => break,
                Err(e) => return Outcome::Fail(format!("sequence {seq}: undo failed: {e}")),
            }
        }
        if back.store != initial.store {
            return Outcome::Fail(format!("sequence {seq}: undo-all did not restore the original"));
        }

        // join after break
        let mut s = initial.clone();
        if let Some(t) = s.store.tracklets.values().find(|t| t.samples.len() >= 2).cloned() {
            let frame = t.samples[rng.gen_range(1..t.samples.len())].frame;
            let layer = editops::Layer::Pixel;
            let r = editops::apply(&mut s, EditOp::Break { layer, id: t.id.0, frame }).unwrap();
            let (a, b) = (r.diff.created[0].id, r.diff.created[1].id);
            let r = editops::apply(&mut s, EditOp::Join { layer, a, b }).unwrap();
            let joined = &s.store.tracklets[&TrackletId(r.diff.created[0].id)];
            if joined.samples != t.samples || joined.camera_id != t.camera_id {
                return Outcome::Fail(format!("sequence {seq}: join after break changed tracklet {}", t.id));
            }
            *checks.entry("join-break").or_default() += 1;
        }

        // disentangle twice
        for _ in 0..50 {
            let Some(op @ EditOp::Disentangle { .. }) = synth::random_edit(&initial, &mut rng) else { continue };
            let mut s = initial.clone();
            if editops::apply(&mut s, op.clone()).is_err() {
                continue;
            }
            editops::apply(&mut s, op).unwrap();
            if s.store != initial.store {
                return Outcome::Fail(format!("sequence {seq}: disentangle twice is not the identity"));
            }
            *checks.entry("disentangle-twice").or_default() += 1;
            break;
        }
    }
    Outcome::Pass(format!(
        "{sequences} sequences of 20 edits: validity, replay == live, undo-all == original; {checks:?}"
    ))
}

// ---------------------------------------------------------------- statistics

fn series(ped: u64, pts: Vec<[f64; 2]>) -> TrackSeries {
    TrackSeries {
        ped_id: ped,
        times: (0..pts.len()).map(|i| i as f64 * 0.1).collect(),
        interpolated: vec![false; pts.len()],
        xy: pts,
    }
}

fn random_dataset(rng: &mut impl Rng) -> Vec<TrackSeries> {
    (0..rng.gen_range(2..7))
        .map(|i| {
            let start = rng.gen_range(0..40);
            let n = rng.gen_range(15..90);
            let (x, y, vx, vy) = (
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let wiggle = rng.gen_range(0.0..0.4);
            TrackSeries {
                ped_id: i + 1,
                times: (start..start + n).map(|k| k as f64 * 0.1).collect(),
                xy: (0..n)
                    .map(|k| {
                        let t = k as f64 * 0.1;
                        [x + vx * t + wiggle * (2.0 * t).sin(), y + vy * t + wiggle * (3.0 * t).cos()]
                    })
                    .collect(),
                interpolated: vec![false; n],
            }
        })
        .collect()
}

fn stats_gap(a: &StatsReport, b: &StatsReport) -> f64 {
    let ms = |x: &Option<pedlabel_core::analytics::MeanStd>, y: &Option<pedlabel_core::analytics::MeanStd>| match (x, y)
    {
        (Some(x), Some(y)) => (x.mean - y.mean).abs().max((x.std - y.std).abs()),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    let noise = match (a.perception_noise_m_s2, b.perception_noise_m_s2) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    ms(&a.tracking_duration_s, &b.tracking_duration_s)
        .max(ms(&a.motion_speed_m_s, &b.motion_speed_m_s))
        .max(ms(&a.min_distance_m, &b.min_distance_m))
        .max(noise)
}

fn statistics_oracles() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let line: Vec<[f64; 2]> = (0..51).map(|i| [0.7 * i as f64 * 0.1, -1.1 * i as f64 * 0.1]).collect();
    check("cv noise", perception_noise(&[series(1, line)], 0.1).unwrap() < 1e-9);
    let circle: Vec<[f64; 2]> = (0..400)
        .map(|i| {
            let a = 0.5 * i as f64 * 0.1;
            [2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    let noise = perception_noise(&[series(1, circle)], 0.1).unwrap();
    check("circle noise", (noise - 0.5).abs() / 0.5 < 0.005);
    let walk: Vec<[f64; 2]> = (0..51).map(|i| [1.2 * i as f64 * 0.1, 0.0]).collect();
    let speed = motion_speed_stats(&[series(1, walk)]).unwrap();
    check("speed", (speed.mean - 1.2).abs() < 1e-9 && speed.std < 1e-9);
    let md = min_distance_stats(&[series(1, vec![[0.0, 0.0]; 20]), series(2, vec![[3.0, 4.0]; 20])]).unwrap();
    check("min distance", (md.mean - 5.0).abs() < 1e-12 && md.std == 0.0);
    let truth = [[0.0, 0.0]; 3];
    let offset = [[0.3, 0.4]; 3];
    check(
        "ade/fde offset",
        (ade(&offset, &truth).unwrap() - 0.5).abs() < 1e-12 && (fde(&offset, &truth).unwrap() - 0.5).abs() < 1e-12,
    );
    let steps = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
    check("ade/fde {0,1,2}", ade(&steps, &truth) == Ok(1.0) && fde(&steps, &truth) == Ok(2.0));

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_invariance: f64 = 0.0;
    for _ in 0..100 {
        let data = random_dataset(&mut rng);
        let base = compute_stats(&data, 0.1);
        let (angle, tx, ty, shift) = (
            rng.gen_range(0.0..6.3),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-50.0..50.0),
        );
        let (c, s) = (f64::cos(angle), f64::sin(angle));
        let moved: Vec<TrackSeries> = data
            .iter()
            .map(|t| TrackSeries {
                xy: t.xy.iter().map(|p| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty]).collect(),
                ..t.clone()
            })
            .collect();
        let shifted: Vec<TrackSeries> = data
            .iter()
            .map(|t| TrackSeries {
                times: t.times.iter().map(|x| x + shift).collect(),
                ..t.clone()
            })
            .collect();
        worst_invariance = worst_invariance
            .max(stats_gap(&base, &compute_stats(&moved, 0.1)))
            .max(stats_gap(&base, &compute_stats(&shifted, 0.1)));
        for criterion in [DynamicCriterion::MaxDisplacement, DynamicCriterion::PathLength, DynamicCriterion::Endpoint] {
            let lo = rng.gen_range(0.0..3.0);
            let hi = lo + rng.gen_range(0.0..3.0);
            let a = split_dynamic(&data, 1.0, &DynamicParams { criterion, threshold_m: lo });
            let b = split_dynamic(&data, 1.0, &DynamicParams { criterion, threshold_m: hi });
            check("dynamic monotone", b.dynamic.iter().all(|p| a.dynamic.contains(p)));
        }
    }
    check("invariance", worst_invariance < 1e-9);
    failures.dedup();
    verdict(
        failures.is_empty(),
        format!(
            "circle noise {noise:.5} m/s^2; invariance max {worst_invariance:.2e} over 100 datasets; \
             monotonicity over 100 datasets x 3 criteria{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {failures:?}")
            }
        ),
    )
}

// ------------------------------------------------------------------- service

async fn call(app: &axum::Router, method: Method, uri: &str, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&body).unwrap()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn strip_timestamps(log: &ActionLog) -> ActionLog {
    let mut log = log.clone();
    for a in log.applied.iter_mut().chain(log.undone.iter_mut()) {
        a.timestamp.clear();
    }
    log
}

fn export_bytes(s: &Session, dir: &Path, name: &str) -> Vec<u8> {
    let p = dir.join(name);
    export_dataset(s, &p, None).unwrap();
    fs::read(p).unwrap()
}

async fn service_differential_async() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut initial = synth::random_session(&mut rng, 3, 40, 12);
    initial.session_id = "acc".into();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().join("acc");
    store::save_session(&initial, &dir).map_err(|e| e.to_string())?;
    let app = router(Arc::new(Registry::open(std::slice::from_ref(&dir)).map_err(|e| e.to_string())?));
    let mut mirror = initial.clone();
    let (mut done, mut undos, mut redos) = (0, 0, 0);
    let mut acked_revision = 0;
    while done < 500 {
        let roll: f64 = rng.gen();
        let client_seq = mirror.action_log.revision;
        let (status, body, direct) = if roll < 0.1 {
            let r = call(&app, Method::POST, "/sessions/acc/undo", json!({ "client_seq": client_seq })).await;
            (r.0, r.1, editops::undo(&mut mirror))
        } else if roll < 0.15 {
            let r = call(&app, Method::POST, "/sessions/acc/redo", json!({ "client_seq": client_seq })).await;
            (r.0, r.1, editops::redo(&mut mirror))
        } else {
            let Some(op) = synth::random_edit(&mirror, &mut rng) else { continue };
            let r = call(
                &app,
                Method::POST,
                "/sessions/acc/edits",
                json!({ "client_seq": client_seq, "op": op }),
            )
            .await;
            (r.0, r.1, editops::apply(&mut mirror, op))
        };
        match direct {
            Ok(expected) => {
                if status != StatusCode::OK {
                    return Err(format!("server refused a valid mutation: {}", String::from_utf8_lossy(&body)));
                }
                let got: Applied = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
                if got != expected {
                    return Err(format!("response diverged at revision {}", expected.revision));
                }
                acked_revision = expected.revision;
                match roll {
                    r if r < 0.1 => undos += 1,
                    r if r < 0.15 => redos += 1,
                    _ => done += 1,
                }
            }
            Err(_) if status.is_client_error() => {}
            Err(e) => return Err(format!("server accepted a mutation the module rejected: {e}")),
        }
    }
    let served = load_dir(&dir).map_err(|e| e.to_string())?;
    if served.store != mirror.store || strip_timestamps(&served.action_log) != strip_timestamps(&mirror.action_log) {
        return Err("server state differs from direct module calls".into());
    }
    let replayed = editops::replay(&initial, &served.action_log).map_err(|e| e.to_string())?;
    if replayed.store != served.store {
        return Err("offline replay differs from server state".into());
    }
    let bytes = [
        export_bytes(&served, tmp.path(), "server.csv"),
        export_bytes(&mirror, tmp.path(), "direct.csv"),
        export_bytes(&replayed, tmp.path(), "replay.csv"),
    ];
    if bytes[0] != bytes[1] || bytes[1] != bytes[2] {
        return Err("exports are not byte-identical".into());
    }

    // Crash: the process dies with nothing checkpointed and a torn write.
    drop(app);
    let journal = dir.join(pedlabel_service::journal::JOURNAL);
    let mut f = fs::OpenOptions::new().append(true).open(&journal).map_err(|e| e.to_string())?;
    std::io::Write::write_all(&mut f, b"{\"revision\":").map_err(|e| e.to_string())?;
    drop(f);
    let entries = read_entries(&dir).map_err(|e| e.to_string())?.0;
    let recovered = load_dir(&dir).map_err(|e| e.to_string())?;
    if recovered != served || recovered.action_log.revision != acked_revision {
        return Err("crash recovery did not reproduce the acknowledged state".into());
    }
    Ok(format!(
        "500 edits + {undos} undos + {redos} redos: server == direct == replay, exports byte-identical \
         ({} bytes); recovery from {} journal entries reproduces revision {acked_revision}",
        bytes[0].len(),
        entries.len()
    ))
}

fn service_differential() -> Outcome {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    match rt.block_on(service_differential_async()) {
        Ok(d) => Outcome::Pass(d),
        Err(e) => Outcome::Fail(e),
    }
}

// ------------------------------------------------------------------- dataset

const DATASET_ENV: &str = "PEDLABEL_TBD_SET2_EXPORT";

fn dataset_statistics() -> Outcome {
    let Ok(path) = std::env::var(DATASET_ENV) else {
        return Outcome::Skip(format!("set {DATASET_ENV} to an exported TBD Set 2 label file to run"));
    };
    let rows = match read_export(Path::new(&path)) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("{path}: {e}")),
    };
    let series = series_from_rows(&rows);
    let report = compute_stats(&series, 0.1);
    let within = |got: f64, want: f64| (got - want).abs() <= 0.15 * want;
    let (Some(d), Some(n), Some(s), Some(m)) = (
        report.tracking_duration_s,
        report.perception_noise_m_s2,
        report.motion_speed_m_s,
        report.min_distance_m,
    ) else {
        return Outcome::Fail(format!("metrics unavailable: {:?}", report.unavailable));
    };
    let ok = within(d.mean, 25.6)
        && within(d.std, 57.1)
        && within(n, 0.55)
        && within(s.mean, 0.88)
        && within(s.std, 0.52)
        && within(m.mean, 1.25)
        && within(m.std, 1.44);
    verdict(
        ok,
        format!(
            "duration {:.2}±{:.2} s, noise {n:.3} m/s^2, speed {:.3}±{:.3} m/s, min distance {:.3}±{:.3} m",
            d.mean, d.std, s.mean, s.std, m.mean, m.std
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("synthetic end-to-end", synthetic_end_to_end),
        ("geometry oracle suite", geometry_oracles),
        ("edit-algebra suite", edit_algebra),
        ("statistics oracles", statistics_oracles),
        ("service differential", service_differential),
        ("dataset statistics (TBD Set 2)", dataset_statistics),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Outcome::Pass(d) => println!("PASS {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
