use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalyticsError, TrackSeries};

/// Streaming count, mean and sum of squared deviations; partial results over
/// disjoint subsets merge exactly (up to rounding).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn of(x: f64) -> Moments {
        Moments { n: 1, mean: x, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        *self = self.merge(Moments::of(x));
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let (na, nb, nf) = (self.n as f64, other.n as f64, n as f64);
        Moments {
            n,
            mean: self.mean + delta * nb / nf,
            m2: self.m2 + other.m2 + delta * delta * na * nb / nf,
        }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }

    pub fn mean_std(&self) -> MeanStd {
        MeanStd {
            mean: self.mean,
            std: self.variance().sqrt(),
            n: self.n,
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        iter.into_iter().fold(Moments::default(), |m, x| m.merge(Moments::of(x)))
    }
}

/// Mean and population standard deviation over `n` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: u64,
}

fn norm(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn tracking_duration_stats(series: &[TrackSeries]) -> Result<MeanStd, AnalyticsError> {
    if series.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    Ok(series
        .par_iter()
        .map(|s| Moments::of(s.duration()))
        .reduce(Moments::default, Moments::merge)
        .mean_std())
}

const UNIFORM_TOLERANCE: f64 = 1e-6;

/// Mean magnitude of the central-difference acceleration over all interior
/// samples. Trajectories with fewer than three samples contribute nothing.
pub fn perception_noise(series: &[TrackSeries], dt: f64) -> Result<f64, AnalyticsError> {
    if series.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let per: Vec<Moments> = series
        .par_iter()
        .map(|s| {
            if let Some(w) = s.times.windows(2).find(|w| ((w[1] - w[0]) - dt).abs() > UNIFORM_TOLERANCE) {
                return Err(AnalyticsError::NonUniform {
                    ped: s.ped_id,
                    found: w[1] - w[0],
                    expected: dt,
                });
            }
            Ok(s.xy
                .windows(3)
                .map(|w| {
                    let ax = (w[2][0] - 2.0 * w[1][0] + w[0][0]) / (dt * dt);
                    let ay = (w[2][1] - 2.0 * w[1][1] + w[0][1]) / (dt * dt);
                    ax.hypot(ay)
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let total = per.into_iter().fold(Moments::default(), Moments::merge);
    if total.n == 0 {
        return Err(AnalyticsError::TooShort(2.0 * dt));
    }
    Ok(total.mean)
}

/// Speeds over consecutive non-overlapping 1 s intervals starting at each
/// trajectory's first sample.
pub fn motion_speed_stats(series: &[TrackSeries]) -> Result<MeanStd, AnalyticsError> {
    if series.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let total = series
        .par_iter()
        .map(|s| {
            let mut m = Moments::default();
            let Some(&t0) = s.times.first() else { return m };
            let end = s.times[s.len() - 1];
            let mut k = 0.0;
            while t0 + k + 1.0 <= end + 1e-9 {
                if let (Some(a), Some(b)) = (s.position_at(t0 + k), s.position_at(t0 + k + 1.0)) {
                    m.push(norm(a, b));
                }
                k += 1.0;
            }
            m
        })
        .reduce(Moments::default, Moments::merge);
    if total.n == 0 {
        return Err(AnalyticsError::TooShort(1.0));
    }
    Ok(total.mean_std())
}

/// Timeline instant key: time rounded to the microsecond.
fn instant(t: f64) -> i64 {
    (t * 1e6).round() as i64
}

/// Distance to the nearest other pedestrian, minimized per instant and
/// aggregated over instants with two or more pedestrians present.
pub fn min_distance_stats(series: &[TrackSeries]) -> Result<MeanStd, AnalyticsError> {
    let mut by_instant: BTreeMap<i64, Vec<[f64; 2]>> = BTreeMap::new();
    for s in series {
        for (t, p) in s.times.iter().zip(&s.xy) {
            by_instant.entry(instant(*t)).or_default().push(*p);
        }
    }
    let groups: Vec<&Vec<[f64; 2]>> = by_instant.values().filter(|g| g.len() >= 2).collect();
    if groups.is_empty() {
        return Err(AnalyticsError::NeverCoPresent);
    }
    Ok(groups
        .par_iter()
        .map(|g| {
            let mut best = f64::INFINITY;
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    best = best.min(norm(g[i], g[j]));
                }
            }
            Moments::of(best)
        })
        .reduce(Moments::default, Moments::merge)
        .mean_std())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicCriterion {
    /// Farthest distance from the window-start position.
    MaxDisplacement,
    /// Distance walked along the path.
    PathLength,
    /// Distance between window start and end.
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicParams {
    pub criterion: DynamicCriterion,
    pub threshold_m: f64,
}

impl Default for DynamicParams {
    fn default() -> Self {
        DynamicParams {
            criterion: DynamicCriterion::MaxDisplacement,
            threshold_m: 1.0,
        }
    }
}

/// Whether a pedestrian starting at `anchor` and then visiting `window`
/// moves at least the threshold.
pub fn is_dynamic(anchor: [f64; 2], window: &[[f64; 2]], params: &DynamicParams) -> bool {
    let moved = match params.criterion {
        DynamicCriterion::MaxDisplacement => window.iter().map(|p| norm(*p, anchor)).fold(0.0, f64::max),
        DynamicCriterion::PathLength => {
            let mut prev = anchor;
            window
                .iter()
                .map(|p| {
                    let d = norm(*p, prev);
                    prev = *p;
                    d
                })
                .sum()
        }
        DynamicCriterion::Endpoint => window.last().map_or(0.0, |p| norm(*p, anchor)),
    };
    moved >= params.threshold_m
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicSplit {
    pub dynamic: Vec<u64>,
    #[serde(rename = "static")]
    pub static_peds: Vec<u64>,
    /// Trajectories shorter than the window.
    pub excluded: Vec<u64>,
}

/// Classifies each trajectory over the window of `window_s` seconds starting
/// at its first sample.
pub fn split_dynamic(series: &[TrackSeries], window_s: f64, params: &DynamicParams) -> DynamicSplit {
    let mut out = DynamicSplit::default();
    for s in series {
        if s.is_empty() || s.duration() < window_s - 1e-9 {
            out.excluded.push(s.ped_id);
            continue;
        }
        let end = s.times[0] + window_s + 1e-9;
        let n = s.times.partition_point(|&t| t <= end);
        if is_dynamic(s.xy[0], &s.xy[1..n], params) {
            out.dynamic.push(s.ped_id);
        } else {
            out.static_peds.push(s.ped_id);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub trajectories: usize,
    pub frames: usize,
    pub total_minutes: f64,
    pub interpolated_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Methodology {
    pub std: String,
    pub sample_interval_s: f64,
    pub tracking_duration: String,
    pub perception_noise: String,
    pub motion_speed: String,
    pub min_distance: String,
    pub gap_fill: String,
}

/// The four dataset statistics with counts and the conventions behind them.
/// A metric the data cannot support is `null` with the reason in
/// `unavailable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tracking_duration_s: Option<MeanStd>,
    pub perception_noise_m_s2: Option<f64>,
    pub motion_speed_m_s: Option<MeanStd>,
    pub min_distance_m: Option<MeanStd>,
    pub counts: Counts,
    pub methodology: Methodology,
    pub unavailable: BTreeMap<String, String>,
}

fn keep<T>(unavailable: &mut BTreeMap<String, String>, name: &str, r: Result<T, AnalyticsError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            unavailable.insert(name.to_string(), e.to_string());
            None
        }
    }
}

pub fn compute_stats(series: &[TrackSeries], dt: f64) -> StatsReport {
    let mut unavailable = BTreeMap::new();
    let tracking_duration_s = keep(&mut unavailable, "tracking_duration_s", tracking_duration_stats(series));
    let perception_noise_m_s2 = keep(&mut unavailable, "perception_noise_m_s2", perception_noise(series, dt));
    let motion_speed_m_s = keep(&mut unavailable, "motion_speed_m_s", motion_speed_stats(series));
    let min_distance_m = keep(&mut unavailable, "min_distance_m", min_distance_stats(series));
    StatsReport {
        tracking_duration_s,
        perception_noise_m_s2,
        motion_speed_m_s,
        min_distance_m,
        counts: Counts {
            trajectories: series.len(),
            frames: series.iter().map(TrackSeries::len).sum(),
            total_minutes: series.iter().map(TrackSeries::duration).sum::<f64>() / 60.0,
            interpolated_frames: series.iter().flat_map(|s| &s.interpolated).filter(|f| **f).count(),
        },
        methodology: Methodology {
            std: "population".into(),
            sample_interval_s: dt,
            tracking_duration: "last minus first sample time per trajectory".into(),
            perception_noise: "mean magnitude of central-difference acceleration over interior samples".into(),
            motion_speed: "displacement over consecutive non-overlapping 1 s intervals from each trajectory start"
                .into(),
            min_distance: "per timeline instant, minimum pairwise distance among co-present pedestrians; \
                           instants with fewer than two excluded"
                .into(),
            gap_fill: "gaps filled by linear interpolation and included".into(),
        },
        unavailable,
    }
}
