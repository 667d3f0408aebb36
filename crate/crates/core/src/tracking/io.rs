//! CSV interchange for detections and tracklets.
//!
//! Detections: `camera_id,frame,u_min,v_min,u_max,v_max,score`.
//! Tracklets: `tracklet_id,camera_id,frame,u_min,v_min,u_max,v_max`.
//! Both are written with a header row; readers accept files with or without it.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Detection, DetectionFrame, TrackingError};
use crate::model::{tracklet_violations, BBox, CameraId, Source, Tracklet, TrackletId, TrackletSample};

const DETECTION_HEADER: [&str; 7] = ["camera_id", "frame", "u_min", "v_min", "u_max", "v_max", "score"];
const TRACKLET_HEADER: [&str; 7] = ["tracklet_id", "camera_id", "frame", "u_min", "v_min", "u_max", "v_max"];

fn records<R: Read>(reader: R, header: &[&str]) -> impl Iterator<Item = Result<(u64, csv::StringRecord), TrackingError>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let mut first = true;
    std::iter::from_fn(move || loop {
        let mut rec = csv::StringRecord::new();
        match rdr.read_record(&mut rec) {
            Ok(false) => return None,
            Ok(true) => {
                let line = rec.position().map_or(0, |p| p.line());
                if std::mem::take(&mut first) && rec.iter().eq(header.iter().map(String::as_str)) {
                    continue;
                }
                if rec.len() != header.len() {
                    return Some(Err(TrackingError::Parse {
                        line,
                        message: format!("expected {} fields, found {}", header.len(), rec.len()),
                    }));
                }
                return Some(Ok((line, rec)));
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Some(Err(TrackingError::Parse {
                    line,
                    message: e.to_string(),
                }));
            }
        }
    })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, TrackingError> {
    let raw = &rec[i];
    raw.parse().map_err(|_| TrackingError::Parse {
        line,
        message: format!("{name}: cannot parse {raw:?}"),
    })
}

fn bbox(rec: &csv::StringRecord, at: usize, line: u64) -> Result<BBox, TrackingError> {
    Ok(BBox::new(
        field(rec, at, "u_min", line)?,
        field(rec, at + 1, "v_min", line)?,
        field(rec, at + 2, "u_max", line)?,
        field(rec, at + 3, "v_max", line)?,
    ))
}

/// Detections grouped by camera, each camera's frames sorted by index.
pub fn read_detections<R: Read>(reader: R) -> Result<BTreeMap<CameraId, Vec<DetectionFrame>>, TrackingError> {
    let mut by_cam: BTreeMap<CameraId, BTreeMap<i64, Vec<Detection>>> = BTreeMap::new();
    for r in records(reader, &DETECTION_HEADER) {
        let (line, rec) = r?;
        let camera_id = CameraId::new(&rec[0]);
        let frame: i64 = field(&rec, 1, "frame", line)?;
        let b = bbox(&rec, 2, line)?;
        let score: f64 = field(&rec, 6, "score", line)?;
        if !b.is_valid() {
            return Err(TrackingError::Parse {
                line,
                message: "invalid bounding box".into(),
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(TrackingError::Parse {
                line,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        by_cam
            .entry(camera_id)
            .or_default()
            .entry(frame)
            .or_default()
            .push(Detection { bbox: b, score });
    }
    Ok(by_cam
        .into_iter()
        .map(|(cam, frames)| {
            let frames = frames
                .into_iter()
                .map(|(frame, detections)| DetectionFrame {
                    camera_id: cam.clone(),
                    frame,
                    detections,
                })
                .collect();
            (cam, frames)
        })
        .collect())
}

pub fn write_detections<W: Write>(writer: W, frames: &[DetectionFrame]) -> Result<(), TrackingError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DETECTION_HEADER).map_err(csv_io)?;
    for f in frames {
        for d in &f.detections {
            let b = d.bbox;
            w.write_record([
                f.camera_id.to_string(),
                f.frame.to_string(),
                b.u_min.to_string(),
                b.v_min.to_string(),
                b.u_max.to_string(),
                b.v_max.to_string(),
                d.score.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> TrackingError {
    TrackingError::Io(std::io::Error::other(e))
}

fn parse_tracklet_id(raw: &str, line: u64) -> Result<TrackletId, TrackingError> {
    raw.strip_prefix('t')
        .unwrap_or(raw)
        .parse()
        .map(TrackletId)
        .map_err(|_| TrackingError::Parse {
            line,
            message: format!("tracklet_id: cannot parse {raw:?}"),
        })
}

/// Tracklets in file order of first appearance, samples sorted by frame.
/// Every tracklet is checked against the model invariants.
pub fn read_tracklets<R: Read>(reader: R) -> Result<Vec<Tracklet>, TrackingError> {
    let mut order = Vec::new();
    let mut by_id: BTreeMap<TrackletId, (CameraId, Vec<TrackletSample>)> = BTreeMap::new();
    for r in records(reader, &TRACKLET_HEADER) {
        let (line, rec) = r?;
        let id = parse_tracklet_id(&rec[0], line)?;
        let camera_id = CameraId::new(&rec[1]);
        let frame: i64 = field(&rec, 2, "frame", line)?;
        let b = bbox(&rec, 3, line)?;
        let entry = by_id.entry(id).or_insert_with(|| {
            order.push(id);
            (camera_id.clone(), Vec::new())
        });
        if entry.0 != camera_id {
            return Err(TrackingError::Parse {
                line,
                message: format!("tracklet {id} switches camera from {} to {camera_id}", entry.0),
            });
        }
        entry.1.push(TrackletSample::new(frame, b));
    }
    order
        .into_iter()
        .map(|id| {
            let (camera_id, mut samples) = by_id.remove(&id).expect("recorded id");
            samples.sort_by_key(|s| s.frame);
            if let Some(w) = samples.windows(2).find(|w| w[0].frame == w[1].frame) {
                return Err(TrackingError::Invalid {
                    id,
                    message: format!("duplicate frame {}", w[0].frame),
                });
            }
            let t = Tracklet {
                id,
                camera_id,
                samples,
                source: Source::Auto,
            };
            match tracklet_violations(&t).into_iter().next() {
                Some(message) => Err(TrackingError::Invalid { id, message }),
                None => Ok(t),
            }
        })
        .collect()
}

pub fn write_tracklets<'a, W: Write>(
    writer: W,
    tracklets: impl IntoIterator<Item = &'a Tracklet>,
) -> Result<(), TrackingError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACKLET_HEADER).map_err(csv_io)?;
    for t in tracklets {
        for s in &t.samples {
            let b = s.bbox;
            w.write_record([
                t.id.0.to_string(),
                t.camera_id.to_string(),
                s.frame.to_string(),
                b.u_min.to_string(),
                b.v_min.to_string(),
                b.u_max.to_string(),
                b.v_max.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a tracklet file for one camera; rows naming another camera are an
/// error.
pub fn import_tracklets(path: &Path, camera_id: &CameraId) -> Result<Vec<Tracklet>, TrackingError> {
    let tracklets = read_tracklets(std::fs::File::open(path)?)?;
    if let Some(t) = tracklets.iter().find(|t| &t.camera_id != camera_id) {
        return Err(TrackingError::Invalid {
            id: t.id,
            message: format!("belongs to camera {}, expected {camera_id}", t.camera_id),
        });
    }
    Ok(tracklets)
}

pub fn export_tracklets(path: &Path, tracklets: &[Tracklet]) -> Result<(), TrackingError> {
    write_tracklets(std::io::BufWriter::new(std::fs::File::create(path)?), tracklets)
}

pub fn import_detections(path: &Path) -> Result<BTreeMap<CameraId, Vec<DetectionFrame>>, TrackingError> {
    read_detections(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn export_detections(path: &Path, frames: &[DetectionFrame]) -> Result<(), TrackingError> {
    write_detections(std::io::BufWriter::new(std::fs::File::create(path)?), frames)
}
