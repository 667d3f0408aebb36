use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{series_from_session, AnalyticsError, TrackSeries};
use crate::model::Session;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub time: f64,
    pub ped_id: u64,
    pub x: f64,
    pub y: f64,
    pub interpolated: bool,
}

/// Ratio of label to export frequency; must be a positive integer.
fn decimation(label: f64, export: f64) -> Result<i64, AnalyticsError> {
    let ratio = label / export;
    let k = ratio.round();
    if !(export > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(AnalyticsError::Frequency { export, label });
    }
    Ok(k as i64)
}

/// Dataset rows at `export_frequency` (default: the label frequency), ordered
/// by time then ped id. Decimation keeps steps divisible by the ratio, so
/// exported instants lie on the session timeline.
pub fn export_rows(session: &Session, export_frequency: Option<f64>) -> Result<Vec<ExportRow>, AnalyticsError> {
    let f = session.label_frequency;
    let k = decimation(f, export_frequency.unwrap_or(f))?;
    let mut rows: BTreeMap<(i64, u64), ExportRow> = BTreeMap::new();
    for s in series_from_session(session) {
        for i in 0..s.len() {
            let step = (s.times[i] * f).round() as i64;
            if step.rem_euclid(k) != 0 {
                continue;
            }
            rows.insert(
                (step, s.ped_id),
                ExportRow {
                    time: step as f64 / f,
                    ped_id: s.ped_id,
                    x: s.xy[i][0],
                    y: s.xy[i][1],
                    interpolated: s.interpolated[i],
                },
            );
        }
    }
    Ok(rows.into_values().collect())
}

pub fn write_export(path: &Path, rows: &[ExportRow]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "ped_id", "x", "y", "interpolated"])?;
    for r in rows {
        w.write_record([
            r.time.to_string(),
            r.ped_id.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            u8::from(r.interpolated).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| AnalyticsError::Io(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn export_dataset(session: &Session, path: &Path, export_frequency: Option<f64>) -> Result<usize, AnalyticsError> {
    let rows = export_rows(session, export_frequency)?;
    write_export(path, &rows)?;
    Ok(rows.len())
}

#[derive(Deserialize)]
struct RawRow {
    time: f64,
    ped_id: u64,
    x: f64,
    y: f64,
    interpolated: u8,
}

pub fn read_export(path: &Path) -> Result<Vec<ExportRow>, AnalyticsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<RawRow>().enumerate() {
        let rec = rec?;
        if rec.interpolated > 1 {
            return Err(AnalyticsError::Parse {
                line: i as u64 + 2,
                message: "interpolated must be 0 or 1".into(),
            });
        }
        out.push(ExportRow {
            time: rec.time,
            ped_id: rec.ped_id,
            x: rec.x,
            y: rec.y,
            interpolated: rec.interpolated == 1,
        });
    }
    Ok(out)
}

/// Regroups exported rows into per-pedestrian series ordered by time.
pub fn series_from_rows(rows: &[ExportRow]) -> Vec<TrackSeries> {
    let mut by_ped: BTreeMap<u64, Vec<&ExportRow>> = BTreeMap::new();
    for r in rows {
        by_ped.entry(r.ped_id).or_default().push(r);
    }
    by_ped
        .into_iter()
        .map(|(ped_id, mut rs)| {
            rs.sort_by(|a, b| a.time.total_cmp(&b.time));
            TrackSeries {
                ped_id,
                times: rs.iter().map(|r| r.time).collect(),
                xy: rs.iter().map(|r| [r.x, r.y]).collect(),
                interpolated: rs.iter().map(|r| r.interpolated).collect(),
            }
        })
        .collect()
}
