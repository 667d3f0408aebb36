use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{is_dynamic, DynamicParams};
use super::{AnalyticsError, TrackSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub t_obs: f64,
    pub t_pred: f64,
    /// Window slide in label steps.
    pub stride: usize,
    pub dynamic: DynamicParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            t_obs: 3.2,
            t_pred: 4.8,
            stride: 1,
            dynamic: DynamicParams::default(),
        }
    }
}

impl EvalConfig {
    pub fn steps(&self, label_frequency: f64) -> (usize, usize) {
        (
            (self.t_obs * label_frequency).round().max(2.0) as usize,
            (self.t_pred * label_frequency).round().max(1.0) as usize,
        )
    }
}

/// One observation/prediction window of one pedestrian. Steps are absolute
/// label-grid steps; `first_pred_step` is the step of `ground_truth[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCase {
    pub case_id: String,
    pub ped_id: u64,
    pub first_pred_step: i64,
    pub observation: Vec<[f64; 2]>,
    pub ground_truth: Vec<[f64; 2]>,
    pub dynamic: bool,
}

/// Slides an observation plus prediction window over every trajectory.
/// Dynamic cases move at least the threshold during the prediction window,
/// measured from the last observed position.
pub fn enumerate_cases(series: &[TrackSeries], label_frequency: f64, config: &EvalConfig) -> Vec<PredictionCase> {
    let (n_obs, n_pred) = config.steps(label_frequency);
    let stride = config.stride.max(1);
    let mut out = Vec::new();
    for s in series {
        let steps: Vec<i64> = s.times.iter().map(|t| (t * label_frequency).round() as i64).collect();
        let mut start = 0;
        while start + n_obs + n_pred <= s.len() {
            let end = start + n_obs + n_pred;
            if steps[end - 1] - steps[start] != (n_obs + n_pred - 1) as i64 {
                start += stride;
                continue;
            }
            let observation = s.xy[start..start + n_obs].to_vec();
            let ground_truth = s.xy[start + n_obs..end].to_vec();
            let dynamic = is_dynamic(observation[n_obs - 1], &ground_truth, &config.dynamic);
            out.push(PredictionCase {
                case_id: format!("{}:{}", s.ped_id, steps[start]),
                ped_id: s.ped_id,
                first_pred_step: steps[start + n_obs],
                observation,
                ground_truth,
                dynamic,
            });
            start += stride;
        }
    }
    out
}

fn errors(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<Vec<f64>, AnalyticsError> {
    if predicted.len() != truth.len() {
        return Err(AnalyticsError::LengthMismatch {
            predicted: predicted.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .collect())
}

pub fn ade(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, AnalyticsError> {
    let e = errors(predicted, truth)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn fde(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, AnalyticsError> {
    Ok(*errors(predicted, truth)?.last().expect("non-empty"))
}

/// One predicted position: `step` is the absolute label-grid step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub model: String,
    pub case_id: String,
    pub step: i64,
    pub x: f64,
    pub y: f64,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, AnalyticsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(["model", "case_id", "step", "x", "y"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Extrapolates each case from the velocity of its last two observations.
pub fn constant_velocity_predictions(model: &str, cases: &[PredictionCase]) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for c in cases {
        let n = c.observation.len();
        let last = c.observation[n - 1];
        let prev = c.observation[n - 2];
        let v = [last[0] - prev[0], last[1] - prev[1]];
        for k in 0..c.ground_truth.len() {
            let m = (k + 1) as f64;
            out.push(PredictionRecord {
                model: model.to_string(),
                case_id: c.case_id.clone(),
                step: c.first_pred_step + k as i64,
                x: last[0] + m * v[0],
                y: last[1] + m * v[1],
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub ade: f64,
    pub fde: f64,
    pub cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    /// Static and dynamic pedestrians together.
    pub all: Score,
    /// `None` when no case is dynamic.
    pub dynamic: Option<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub obs_steps: usize,
    pub pred_steps: usize,
    pub cases: usize,
    pub dynamic_cases: usize,
    pub models: Vec<ModelScore>,
}

fn mean_score(items: &[(f64, f64)]) -> Option<Score> {
    if items.is_empty() {
        return None;
    }
    let n = items.len() as f64;
    Some(Score {
        ade: items.iter().map(|x| x.0).sum::<f64>() / n,
        fde: items.iter().map(|x| x.1).sum::<f64>() / n,
        cases: items.len(),
    })
}

/// Scores every model in `records` against `cases`. Each model must predict
/// every case at exactly the prediction-window steps.
pub fn evaluate_predictions(
    cases: &[PredictionCase],
    records: &[PredictionRecord],
    label_frequency: f64,
    config: &EvalConfig,
) -> Result<EvalReport, AnalyticsError> {
    let (obs_steps, pred_steps) = config.steps(label_frequency);
    let by_id: BTreeMap<&str, &PredictionCase> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut grouped: BTreeMap<&str, BTreeMap<&str, BTreeMap<i64, [f64; 2]>>> = BTreeMap::new();
    for r in records {
        if !by_id.contains_key(r.case_id.as_str()) {
            return Err(AnalyticsError::UnknownCase {
                model: r.model.clone(),
                case_id: r.case_id.clone(),
            });
        }
        let steps = grouped.entry(&r.model).or_default().entry(&r.case_id).or_default();
        if steps.insert(r.step, [r.x, r.y]).is_some() {
            return Err(AnalyticsError::Misaligned {
                model: r.model.clone(),
                case_id: r.case_id.clone(),
                message: format!("step {} predicted twice", r.step),
            });
        }
    }
    let mut models = Vec::new();
    for (model, per_case) in grouped {
        let misaligned = |case_id: &str, message: String| AnalyticsError::Misaligned {
            model: model.to_string(),
            case_id: case_id.to_string(),
            message,
        };
        let mut all = Vec::with_capacity(cases.len());
        let mut dynamic = Vec::new();
        for c in cases {
            let Some(pred) = per_case.get(c.case_id.as_str()) else {
                return Err(misaligned(&c.case_id, "no prediction".into()));
            };
            let expected: BTreeSet<i64> = (0..c.ground_truth.len() as i64).map(|k| c.first_pred_step + k).collect();
            if !pred.keys().copied().eq(expected.iter().copied()) {
                return Err(misaligned(
                    &c.case_id,
                    format!(
                        "expected steps {}..={}",
                        c.first_pred_step,
                        c.first_pred_step + c.ground_truth.len() as i64 - 1
                    ),
                ));
            }
            let xy: Vec<[f64; 2]> = pred.values().copied().collect();
            let e = (ade(&xy, &c.ground_truth)?, fde(&xy, &c.ground_truth)?);
            all.push(e);
            if c.dynamic {
                dynamic.push(e);
            }
        }
        let Some(all) = mean_score(&all) else {
            return Err(AnalyticsError::Empty);
        };
        models.push(ModelScore {
            model: model.to_string(),
            all,
            dynamic: mean_score(&dynamic),
        });
    }
    Ok(EvalReport {
        config: *config,
        obs_steps,
        pred_steps,
        cases: cases.len(),
        dynamic_cases: cases.iter().filter(|c| c.dynamic).count(),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(ped: u64, n: usize, start: [f64; 2], v: [f64; 2]) -> TrackSeries {
        TrackSeries {
            ped_id: ped,
            times: (0..n).map(|i| i as f64 / 10.0).collect(),
            xy: (0..n)
                .map(|i| [start[0] + v[0] * i as f64 / 10.0, start[1] + v[1] * i as f64 / 10.0])
                .collect(),
            interpolated: vec![false; n],
        }
    }

    fn oracle(model: &str, cases: &[PredictionCase]) -> Vec<PredictionRecord> {
        cases
            .iter()
            .flat_map(|c| {
                c.ground_truth.iter().enumerate().map(|(k, p)| PredictionRecord {
                    model: model.into(),
                    case_id: c.case_id.clone(),
                    step: c.first_pred_step + k as i64,
                    x: p[0],
                    y: p[1],
                })
            })
            .collect()
    }

    #[test]
    fn hand_cases() {
        let t = [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]];
        assert_eq!(ade(&t, &t), Ok(0.0));
        assert_eq!(fde(&t, &t), Ok(0.0));
        let shifted: Vec<_> = t.iter().map(|p| [p[0] + 0.3, p[1] + 0.4]).collect();
        assert!((ade(&shifted, &t).unwrap() - 0.5).abs() < 1e-12);
        assert!((fde(&shifted, &t).unwrap() - 0.5).abs() < 1e-12);
        let truth = [[0.0, 0.0]; 3];
        let pred = [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]];
        assert_eq!(ade(&pred, &truth), Ok(1.0));
        assert_eq!(fde(&pred, &truth), Ok(2.0));
        assert_eq!(
            ade(&pred[..2], &truth),
            Err(AnalyticsError::LengthMismatch { predicted: 2, truth: 3 })
        );
    }

    #[test]
    fn case_enumeration() {
        let cfg = EvalConfig::default();
        let cases = enumerate_cases(&[line(7, 100, [0.0, 0.0], [1.0, 0.0]), line(8, 50, [0.0, 0.0], [0.0, 0.0])], 10.0, &cfg);
        assert_eq!(cases.len(), 100 - 80 + 1);
        assert_eq!(cases[0].case_id, "7:0");
        assert_eq!(cases[0].first_pred_step, 32);
        assert_eq!(cases[0].observation.len(), 32);
        assert_eq!(cases[0].ground_truth.len(), 48);
        assert!(cases.iter().all(|c| c.dynamic));
        let strided = enumerate_cases(&[line(7, 100, [0.0, 0.0], [1.0, 0.0])], 10.0, &EvalConfig { stride: 8, ..cfg });
        assert_eq!(strided.len(), 3);
    }

    #[test]
    fn oracle_and_constant_velocity_score_zero() {
        let series = [
            line(1, 120, [0.0, 0.0], [1.1, 0.3]),
            line(2, 90, [5.0, 5.0], [-0.4, 0.9]),
            line(3, 85, [1.0, -2.0], [0.0, 0.0]),
        ];
        let cfg = EvalConfig::default();
        let cases = enumerate_cases(&series, 10.0, &cfg);
        let mut records = oracle("oracle", &cases);
        records.extend(constant_velocity_predictions("cv", &cases));
        let report = evaluate_predictions(&cases, &records, 10.0, &cfg).unwrap();
        assert_eq!(report.models.len(), 2);
        for m in &report.models {
            assert!(m.all.ade < 1e-9 && m.all.fde < 1e-9, "{m:?}");
            let d = m.dynamic.unwrap();
            assert!(d.ade < 1e-9 && d.fde < 1e-9);
        }
        assert_eq!(report.dynamic_cases, cases.iter().filter(|c| c.ped_id != 3).count());
    }

    #[test]
    fn resolution_errors() {
        let cfg = EvalConfig::default();
        let cases = enumerate_cases(&[line(1, 80, [0.0, 0.0], [1.0, 0.0])], 10.0, &cfg);
        let mut r = oracle("m", &cases);
        r[0].case_id = "9:0".into();
        assert!(matches!(
            evaluate_predictions(&cases, &r, 10.0, &cfg),
            Err(AnalyticsError::UnknownCase { .. })
        ));
        let mut r = oracle("m", &cases);
        r[3].step += 100;
        assert!(matches!(
            evaluate_predictions(&cases, &r, 10.0, &cfg),
            Err(AnalyticsError::Misaligned { .. })
        ));
        let r = oracle("m", &cases);
        assert!(matches!(
            evaluate_predictions(&cases, &r[..r.len() - 1], 10.0, &cfg),
            Err(AnalyticsError::Misaligned { .. })
        ));
    }

    #[test]
    fn prediction_file_round_trip() {
        let cfg = EvalConfig::default();
        let cases = enumerate_cases(&[line(1, 90, [0.1, 0.2], [0.7, -0.1])], 10.0, &cfg);
        let r = constant_velocity_predictions("cv", &cases);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions(&p, &r).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), r);
        write_predictions(&p, &[]).unwrap();
        assert!(read_predictions(&p).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn ade_fde_bounds(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), 1..40)) {
            let p: Vec<[f64; 2]> = pairs.iter().map(|x| [x.0, x.1]).collect();
            let t: Vec<[f64; 2]> = pairs.iter().map(|x| [x.2, x.3]).collect();
            let a = ade(&p, &t).unwrap();
            let f = fde(&p, &t).unwrap();
            let e = errors(&p, &t).unwrap();
            let max = e.iter().copied().fold(0.0, f64::max);
            prop_assert!(a >= 0.0 && f >= 0.0);
            prop_assert!(a <= max + 1e-12);
            prop_assert_eq!(f, *e.last().unwrap());
        }

        // Static pedestrians predicted almost perfectly pull the combined
        // average down; dropping them cannot lower it.
        #[test]
        fn dynamic_only_not_below_combined(
            n_dyn in 1usize..6, n_static in 1usize..6, noise in 0.05..0.5f64, jitter in 0.0..0.01f64,
        ) {
            let mut series = Vec::new();
            for i in 0..n_dyn {
                let a = i as f64;
                series.push(line(i as u64 + 1, 85, [a, -a], [1.0 + 0.1 * a, 0.2 * a]));
            }
            for i in 0..n_static {
                series.push(line(100 + i as u64, 85, [i as f64, 3.0], [0.0, 0.0]));
            }
            let cfg = EvalConfig::default();
            let cases = enumerate_cases(&series, 10.0, &cfg);
            let records: Vec<PredictionRecord> = cases.iter().flat_map(|c| {
                let err = if c.dynamic { noise } else { jitter };
                c.ground_truth.iter().enumerate().map(move |(k, p)| PredictionRecord {
                    model: "m".into(),
                    case_id: c.case_id.clone(),
                    step: c.first_pred_step + k as i64,
                    x: p[0] + err * (k as f64 + 1.0) / 48.0,
                    y: p[1],
                }).collect::<Vec<_>>()
            }).collect();
            let r = evaluate_predictions(&cases, &records, 10.0, &cfg).unwrap();
            let m = &r.models[0];
            let d = m.dynamic.unwrap();
            prop_assert_eq!(d.cases, n_dyn * 6);
            prop_assert!(d.ade >= m.all.ade - 1e-12);
            prop_assert!(d.fde >= m.all.fde - 1e-12);
        }
    }
}
