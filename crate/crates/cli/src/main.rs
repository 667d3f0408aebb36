//! `pedlabel`: command-line front-end. Every subcommand prints one JSON
//! summary on stdout; failures print one JSON line on stderr and exit 1.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pedlabel_core::analytics::{
    compute_stats, constant_velocity_predictions, enumerate_cases, evaluate_predictions, export_dataset,
    read_export, read_predictions, series_from_rows, series_from_session, write_predictions, DynamicCriterion,
    DynamicParams, EvalConfig, TrackSeries,
};
use pedlabel_core::editops::{self, EditError};
use pedlabel_core::geometry::{
    align_frames, associate_cross_view, calibrate_session, detect_markers, lift_session, AssociationParams,
    MarkerParams,
};
use pedlabel_core::model::{CameraId, Session, SessionConfig, Tracklet, TrackletId};
use pedlabel_core::store;
use pedlabel_core::synth::Scene;
use pedlabel_core::tracking::{export_tracklets, import_detections, import_tracklets, track_detections, TrackerParams};
use pedlabel_service::{load_dir, save_dir, Registry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "pedlabel", version, about = "Multi-camera pedestrian trajectory labeling")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Three,
    Ten,
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    MaxDisplacement,
    PathLength,
    Endpoint,
}

impl From<Criterion> for DynamicCriterion {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::MaxDisplacement => DynamicCriterion::MaxDisplacement,
            Criterion::PathLength => DynamicCriterion::PathLength,
            Criterion::Endpoint => DynamicCriterion::Endpoint,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a session directory from a session config (JSON).
    Init {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Surveyed landmarks (JSON).
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Add tracklets from an interchange file under fresh ids.
    Ingest {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        tracklets: PathBuf,
        /// Only accept rows of this camera.
        #[arg(long)]
        camera: Option<String>,
    },
    /// Run the baseline tracker over a detection file.
    Track {
        #[arg(long)]
        detections: PathBuf,
        /// Write the tracklets here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ingest the tracklets into this session.
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(long, default_value_t = 0.6)]
        high_score: f64,
        #[arg(long, default_value_t = 0.1)]
        low_score: f64,
        #[arg(long, default_value_t = 0.3)]
        iou_gate: f64,
        #[arg(long, default_value_t = 30)]
        max_coast: u32,
        #[arg(long, default_value_t = 5)]
        min_length: u32,
    },
    /// Estimate camera poses from landmarks.
    Calibrate {
        #[arg(long)]
        session: PathBuf,
        /// Replace the session landmarks first.
        #[arg(long)]
        landmarks: Option<PathBuf>,
    },
    /// Set frame offsets from marker frames or luminance traces.
    Sync {
        #[arg(long)]
        session: PathBuf,
        /// JSON object: camera id -> marker frame.
        #[arg(long, conflicts_with = "luminance", required_unless_present = "luminance")]
        markers: Option<PathBuf>,
        /// JSON object: camera id -> per-frame mean luminance.
        #[arg(long)]
        luminance: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        baseline_frames: usize,
        #[arg(long, default_value_t = 10.0)]
        mad_multiple: f64,
    },
    /// Associate tracklets across cameras and triangulate trajectories.
    Lift {
        #[arg(long)]
        session: PathBuf,
        /// Maximum mean reprojection error of a match, pixels.
        #[arg(long, default_value_t = 10.0)]
        tau: f64,
        /// Minimum shared frames of a match.
        #[arg(long, default_value_t = 10)]
        min_overlap: usize,
    },
    /// Dataset statistics of a session or an exported dataset.
    Stats {
        #[arg(long, conflicts_with = "export", required_unless_present = "export")]
        session: Option<PathBuf>,
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Score prediction files against a session.
    Eval {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        predictions: Vec<PathBuf>,
        /// Also score the constant-velocity baseline.
        #[arg(long)]
        cv_baseline: bool,
        /// Write the constant-velocity predictions here.
        #[arg(long)]
        write_baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 3.2)]
        t_obs: f64,
        #[arg(long, default_value_t = 4.8)]
        t_pred: f64,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, value_enum, default_value_t = Criterion::MaxDisplacement)]
        criterion: Criterion,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
    },
    /// Write the labeled dataset.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the label frequency.
        #[arg(long)]
        frequency: Option<f64>,
    },
    /// Serve sessions over HTTP until interrupted.
    Serve {
        /// Session directories, or directories containing them.
        #[arg(long, required = true)]
        session: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Check that the action log replays to the stored state.
    Replay {
        #[arg(long)]
        session: PathBuf,
        /// Pre-edit snapshot; by default the log is undone in memory.
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Write a synthetic recording: session, landmarks, detections, luminance.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SceneKind::Three)]
        scene: SceneKind,
        #[arg(long, default_value_t = 0.0)]
        noise_px: f64,
        #[arg(long, default_value_t = 12)]
        landmarks: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| path.display().to_string())
}

/// Tracks each camera separately and numbers the tracklets 1.. across cameras.
fn run_tracker(path: &Path, params: &TrackerParams) -> Result<Vec<Tracklet>> {
    let mut out = Vec::new();
    for frames in import_detections(path)?.values() {
        out.extend(track_detections(frames, params)?);
    }
    for (i, t) in out.iter_mut().enumerate() {
        t.id = TrackletId(i as u64 + 1);
    }
    Ok(out)
}

fn stats_dt(series: &[TrackSeries]) -> Option<f64> {
    series
        .iter()
        .flat_map(|s| s.times.windows(2).map(|w| w[1] - w[0]))
        .filter(|d| *d > 1e-9)
        .min_by(f64::total_cmp)
        .map(|d| {
            let hz = (1.0 / d).round();
            if (1.0 / d - hz).abs() < 1e-6 {
                1.0 / hz
            } else {
                d
            }
        })
}

fn run(cli: Cli) -> Result<Value> {
    Ok(match cli.command {
        Command::Init {
            session,
            config,
            landmarks,
        } => {
            if store::read_manifest(&session).is_ok() {
                bail!("{} already holds a session", session.display());
            }
            let config: SessionConfig = read_json(&config)?;
            let mut s = Session::create(config)?;
            if let Some(p) = landmarks {
                s.landmarks = store::read_landmarks(&p)?;
            }
            store::save_session(&s, &session)?;
            json!({
                "session_id": s.session_id,
                "cameras": s.cameras.len(),
                "landmarks": s.landmarks.len(),
            })
        }
        Command::Ingest {
            session,
            tracklets,
            camera,
        } => {
            let mut s = load_dir(&session)?;
            let incoming = match camera {
                Some(c) => import_tracklets(&tracklets, &CameraId::new(c))?,
                None => {
                    let file = fs::File::open(&tracklets).with_context(|| tracklets.display().to_string())?;
                    pedlabel_core::tracking::read_tracklets(std::io::BufReader::new(file))?
                }
            };
            if let Some(t) = incoming.iter().find(|t| !s.has_camera(&t.camera_id)) {
                bail!("tracklet {} belongs to unknown camera {}", t.id, t.camera_id);
            }
            let ids = s.ingest_tracklets(incoming);
            save_dir(&session, &s)?;
            json!({ "ingested": ids.len(), "tracklets": s.store.tracklets.len() })
        }
        Command::Track {
            detections,
            out,
            session,
            high_score,
            low_score,
            iou_gate,
            max_coast,
            min_length,
        } => {
            let params = TrackerParams {
                high_score_threshold: high_score,
                low_score_threshold: low_score,
                iou_gate,
                max_coast_frames: max_coast,
                min_track_length: min_length,
            };
            let tracklets = run_tracker(&detections, &params)?;
            let mut per_camera: BTreeMap<String, usize> = BTreeMap::new();
            for t in &tracklets {
                *per_camera.entry(t.camera_id.to_string()).or_default() += 1;
            }
            if let Some(p) = &out {
                export_tracklets(p, &tracklets)?;
            }
            if let Some(dir) = &session {
                let mut s = load_dir(dir)?;
                if let Some(t) = tracklets.iter().find(|t| !s.has_camera(&t.camera_id)) {
                    bail!("detections of unknown camera {}", t.camera_id);
                }
                s.ingest_tracklets(tracklets.clone());
                save_dir(dir, &s)?;
            }
            json!({ "tracklets": tracklets.len(), "per_camera": per_camera })
        }
        Command::Calibrate { session, landmarks } => {
            let mut s = load_dir(&session)?;
            if let Some(p) = landmarks {
                s.landmarks = store::read_landmarks(&p)?;
            }
            let poses = calibrate_session(&mut s).map_err(|(cam, e)| anyhow!("camera {cam}: {e}"))?;
            save_dir(&session, &s)?;
            let report: BTreeMap<String, Value> = poses
                .iter()
                .map(|(c, p)| (c.to_string(), json!({ "rms_error_px": p.rms_error, "iterations": p.iterations })))
                .collect();
            json!({ "cameras": report, "landmarks": s.landmarks.len() })
        }
        Command::Sync {
            session,
            markers,
            luminance,
            baseline_frames,
            mad_multiple,
        } => {
            let mut s = load_dir(&session)?;
            let markers: BTreeMap<CameraId, i64> = match (markers, luminance) {
                (Some(p), _) => store::read_markers(&p)?,
                (None, Some(p)) => {
                    let signals: BTreeMap<CameraId, Vec<f64>> = read_json(&p)?;
                    let params = MarkerParams {
                        baseline_frames,
                        mad_multiple,
                    };
                    detect_markers(&signals, &params).map_err(|(cam, e)| anyhow!("camera {cam}: {e}"))?
                }
                (None, None) => bail!("need --markers or --luminance"),
            };
            s.sync_offsets = align_frames(&s, &markers)?;
            save_dir(&session, &s)?;
            json!({ "markers": markers, "offsets": s.sync_offsets, "reference_camera": s.reference_camera })
        }
        Command::Lift {
            session,
            tau,
            min_overlap,
        } => {
            let s = load_dir(&session)?;
            let params = AssociationParams {
                max_error_px: tau,
                min_overlap,
            };
            let assoc = associate_cross_view(&s, &params)?;
            let lifted = lift_session(&s, &assoc)?;
            save_dir(&session, &lifted)?;
            let errors: Vec<f64> = assoc.matches.iter().map(|m| m.error).collect();
            let mean = if errors.is_empty() {
                None
            } else {
                Some(errors.iter().sum::<f64>() / errors.len() as f64)
            };
            json!({
                "trajectories": lifted.store.trajectories.len(),
                "matches": assoc.matches.len(),
                "unmatched_tracklets": assoc.unmatched.len(),
                "mean_reprojection_error_px": mean,
                "max_reprojection_error_px": errors.iter().copied().reduce(f64::max),
            })
        }
        Command::Stats { session, export } => {
            let (series, dt) = match (session, export) {
                (Some(dir), _) => {
                    let s = load_dir(&dir)?;
                    (series_from_session(&s), 1.0 / s.label_frequency)
                }
                (None, Some(p)) => {
                    let series = series_from_rows(&read_export(&p)?);
                    let dt = stats_dt(&series).unwrap_or(f64::NAN);
                    (series, dt)
                }
                (None, None) => bail!("need --session or --export"),
            };
            serde_json::to_value(compute_stats(&series, dt))?
        }
        Command::Eval {
            session,
            predictions,
            cv_baseline,
            write_baseline,
            t_obs,
            t_pred,
            stride,
            criterion,
            threshold,
        } => {
            let s = load_dir(&session)?;
            let config = EvalConfig {
                t_obs,
                t_pred,
                stride,
                dynamic: DynamicParams {
                    criterion: criterion.into(),
                    threshold_m: threshold,
                },
            };
            let cases = enumerate_cases(&series_from_session(&s), s.label_frequency, &config);
            let mut records = Vec::new();
            for p in &predictions {
                records.extend(read_predictions(p)?);
            }
            if cv_baseline || write_baseline.is_some() {
                let baseline = constant_velocity_predictions("constant_velocity", &cases);
                if let Some(p) = &write_baseline {
                    write_predictions(p, &baseline)?;
                }
                if cv_baseline {
                    records.extend(baseline);
                }
            }
            if records.is_empty() {
                bail!("no predictions given");
            }
            serde_json::to_value(evaluate_predictions(&cases, &records, s.label_frequency, &config)?)?
        }
        Command::Export {
            session,
            out,
            frequency,
        } => {
            let s = load_dir(&session)?;
            let rows = export_dataset(&s, &out, frequency)?;
            json!({
                "rows": rows,
                "frequency": frequency.unwrap_or(s.label_frequency),
                "path": out,
            })
        }
        Command::Serve { session, addr } => {
            let registry = Arc::new(Registry::open(&session)?);
            let ids: Vec<String> = registry.sessions.keys().cloned().collect();
            eprintln!("{}", json!({ "serving": ids, "addr": addr.to_string() }));
            tokio::runtime::Runtime::new()?.block_on(pedlabel_service::serve(registry, addr))?;
            json!({ "stopped": true, "sessions": ids })
        }
        Command::Replay { session, initial } => {
            let s = load_dir(&session)?;
            let start = match initial {
                Some(dir) => load_dir(&dir)?,
                None => {
                    let mut back = s.clone();
                    loop {
                        match editops::undo(&mut back) {
                            Ok(_) => {}
                            Err(EditError::NothingToUndo) => break,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    back
                }
            };
            let replayed = editops::replay(&start, &s.action_log)?;
            if replayed.store != s.store {
                bail!("action log does not reproduce the stored tracks");
            }
            json!({
                "consistent": true,
                "actions": s.action_log.applied.len(),
                "undone": s.action_log.undone.len(),
                "revision": s.action_log.revision,
                "tracklets": s.store.tracklets.len(),
                "trajectories": s.store.trajectories.len(),
            })
        }
        Command::Synth {
            out,
            scene,
            noise_px,
            landmarks,
        } => {
            let scene = match scene {
                SceneKind::Three => Scene::three_walkers(),
                SceneKind::Ten => Scene::ten_walkers(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            fs::create_dir_all(&out)?;
            let session = scene.session(landmarks, &mut rng);
            let dir = out.join("session");
            if dir.exists() {
                bail!("{} already exists", dir.display());
            }
            store::save_session(&session, &dir)?;
            store::write_landmarks(&out.join("landmarks.json"), &session.landmarks)?;
            let mut frames = Vec::new();
            let mut luminance = BTreeMap::new();
            for (i, cam) in scene.cameras.iter().enumerate() {
                frames.extend(scene.detections(i, noise_px, &mut rng));
                luminance.insert(cam.camera_id.clone(), scene.luminance(i, &mut rng));
            }
            pedlabel_core::tracking::export_detections(&out.join("detections.csv"), &frames)?;
            write_json(&out.join("luminance.json"), &luminance)?;
            json!({
                "session": dir,
                "cameras": scene.cameras.len(),
                "walkers": scene.walkers.len(),
                "detection_frames": frames.len(),
                "landmarks": session.landmarks.len(),
                "true_offsets": scene.frame_offsets,
            })
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
