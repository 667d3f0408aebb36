use std::collections::BTreeMap;

use crate::model::Store;

use super::track::Track;
use super::{AnyTrack, Ctx, Diff, EditError, EditOp, Inverse, Layer, Outcome, SampleList, TrackRef};

fn tref<T: Track>(id: u64) -> TrackRef {
    TrackRef { layer: T::LAYER, id }
}

fn unknown<T: Track>(id: u64) -> EditError {
    EditError::UnknownTrack { layer: T::LAYER, id }
}

fn get<T: Track>(map: &BTreeMap<T::Key, T>, id: u64) -> Result<&T, EditError> {
    map.get(&T::key(id)).ok_or_else(|| unknown::<T>(id))
}

fn insert_fresh<T: Track>(map: &mut BTreeMap<T::Key, T>, track: T) -> Result<(), EditError> {
    let key = track.id();
    if map.contains_key(&key) {
        return Err(EditError::IdInUse(T::raw(key)));
    }
    map.insert(key, track);
    Ok(())
}

fn ensure_free<T: Track>(map: &BTreeMap<T::Key, T>, ids: &[u64]) -> Result<(), EditError> {
    match ids.iter().find(|id| map.contains_key(&T::key(**id))) {
        Some(id) => Err(EditError::IdInUse(*id)),
        None => Ok(()),
    }
}

fn check_samples<T: Track>(samples: &[T::Sample]) -> Result<(), EditError> {
    if let Some(s) = samples.iter().find(|s| !T::sample_valid(s)) {
        return Err(EditError::MalformedSamples(format!(
            "invalid sample at frame {}",
            T::sample_key(s)
        )));
    }
    if let Some(w) = samples
        .windows(2)
        .find(|w| T::sample_key(&w[1]) <= T::sample_key(&w[0]))
    {
        return Err(EditError::MalformedSamples(format!(
            "frames must be strictly increasing ({} then {})",
            T::sample_key(&w[0]),
            T::sample_key(&w[1])
        )));
    }
    Ok(())
}

fn same_group<T: Track>(a: &T, b: &T) -> Result<(), EditError> {
    if a.group() != b.group() {
        return Err(EditError::DifferentCameras {
            a: T::raw(a.id()),
            b: T::raw(b.id()),
        });
    }
    Ok(())
}

/// Index of the first sample at or after `frame`.
fn split_point<T: Track>(samples: &[T::Sample], frame: i64) -> usize {
    samples.partition_point(|s| T::sample_key(s) < frame)
}

pub(crate) fn run<T: Track>(store: &mut Store, ctx: &mut Ctx<'_, '_>, op: &EditOp) -> Result<Outcome, EditError> {
    let map = T::map(store);
    match op {
        EditOp::Break { id, frame, .. } => {
            let original = get(map, *id)?;
            let cut = split_point::<T>(original.samples(), *frame);
            if cut == 0 || cut == original.samples().len() {
                return Err(EditError::EmptySide {
                    id: *id,
                    frame: *frame,
                });
            }
            let original = original.clone();
            let left_id = ctx.mint(T::LAYER)?;
            let right_id = ctx.mint(T::LAYER)?;
            ensure_free(map, &[left_id, right_id])?;
            let mut left = original.clone();
            left.set_id(T::key(left_id));
            left.samples_mut().truncate(cut);
            let mut right = original.clone();
            right.set_id(T::key(right_id));
            right.samples_mut().drain(..cut);
            map.remove(&T::key(*id));
            insert_fresh(map, left)?;
            insert_fresh(map, right)?;
            Ok(Outcome {
                created: vec![left_id, right_id],
                inverse: Inverse::Restore {
                    layer: T::LAYER,
                    remove: vec![left_id, right_id],
                    reinsert: vec![original.into_any()],
                },
                diff: Diff {
                    created: vec![tref::<T>(left_id), tref::<T>(right_id)],
                    retired: vec![tref::<T>(*id)],
                    changed: vec![],
                },
            })
        }
        EditOp::Join { a, b, .. } => {
            if a == b {
                return Err(EditError::SameTrack(*a));
            }
            let ta = get(map, *a)?;
            let tb = get(map, *b)?;
            same_group(ta, tb)?;
            let mut merged = Vec::with_capacity(ta.samples().len() + tb.samples().len());
            let (mut i, mut j) = (0, 0);
            let (sa, sb) = (ta.samples(), tb.samples());
            while i < sa.len() || j < sb.len() {
                let take_a = match (sa.get(i), sb.get(j)) {
                    (Some(x), Some(y)) => {
                        let (kx, ky) = (T::sample_key(x), T::sample_key(y));
                        if kx == ky {
                            return Err(EditError::Overlap {
                                a: *a,
                                b: *b,
                                frame: kx,
                            });
                        }
                        kx < ky
                    }
                    (Some(_), None) => true,
                    _ => false,
                };
                if take_a {
                    merged.push(sa[i]);
                    i += 1;
                } else {
                    merged.push(sb[j]);
                    j += 1;
                }
            }
            let (ta, tb) = (ta.clone(), tb.clone());
            let new_id = ctx.mint(T::LAYER)?;
            ensure_free(map, &[new_id])?;
            let mut joined = ta.clone();
            joined.set_id(T::key(new_id));
            joined.absorb(&tb);
            *joined.samples_mut() = merged;
            map.remove(&T::key(*a));
            map.remove(&T::key(*b));
            insert_fresh(map, joined)?;
            Ok(Outcome {
                created: vec![new_id],
                inverse: Inverse::Restore {
                    layer: T::LAYER,
                    remove: vec![new_id],
                    reinsert: vec![ta.into_any(), tb.into_any()],
                },
                diff: Diff {
                    created: vec![tref::<T>(new_id)],
                    retired: vec![tref::<T>(*a), tref::<T>(*b)],
                    changed: vec![],
                },
            })
        }
        EditOp::Delete { id, .. } => {
            let removed = map.remove(&T::key(*id)).ok_or_else(|| unknown::<T>(*id))?;
            Ok(Outcome {
                created: vec![],
                inverse: Inverse::Restore {
                    layer: T::LAYER,
                    remove: vec![],
                    reinsert: vec![removed.into_any()],
                },
                diff: Diff {
                    retired: vec![tref::<T>(*id)],
                    ..Diff::default()
                },
            })
        }
        EditOp::Disentangle { a, b, frame, .. } => {
            swap_tails::<T>(map, *a, *b, *frame)?;
            Ok(Outcome {
                created: vec![],
                inverse: Inverse::Swap {
                    layer: T::LAYER,
                    a: *a,
                    b: *b,
                    frame: *frame,
                },
                diff: Diff {
                    changed: vec![tref::<T>(*a), tref::<T>(*b)],
                    ..Diff::default()
                },
            })
        }
        EditOp::Relabel {
            id,
            from,
            to,
            samples,
        } => {
            let replacement = T::samples_from(samples).ok_or(EditError::LayerMismatch)?;
            if from > to {
                return Err(EditError::MalformedSamples(format!(
                    "empty frame range {from}..={to}"
                )));
            }
            check_samples::<T>(replacement)?;
            if let Some(s) = replacement
                .iter()
                .find(|s| !(from..=to).contains(&&T::sample_key(s)))
            {
                return Err(EditError::MalformedSamples(format!(
                    "sample at frame {} lies outside {from}..={to}",
                    T::sample_key(s)
                )));
            }
            let track = map.get_mut(&T::key(*id)).ok_or_else(|| unknown::<T>(*id))?;
            let lo = split_point::<T>(track.samples(), *from);
            let hi = track.samples().partition_point(|s| T::sample_key(s) <= *to);
            if lo == 0 && hi == track.samples().len() && replacement.is_empty() {
                return Err(EditError::WouldEmpty(*id));
            }
            let old: Vec<T::Sample> = track
                .samples_mut()
                .splice(lo..hi, replacement.iter().copied())
                .collect();
            let old_source = track.source();
            track.set_source(crate::model::Source::Mixed);
            Ok(Outcome {
                created: vec![],
                inverse: Inverse::Replace {
                    id: *id,
                    from: *from,
                    to: *to,
                    samples: T::to_list(old),
                    source: old_source,
                },
                diff: Diff {
                    changed: vec![tref::<T>(*id)],
                    ..Diff::default()
                },
            })
        }
        EditOp::AddMissing { camera_id, samples } => {
            let samples = T::samples_from(samples).ok_or(EditError::LayerMismatch)?;
            if samples.is_empty() {
                return Err(EditError::EmptySamples);
            }
            check_samples::<T>(samples)?;
            let camera = match T::LAYER {
                Layer::Pixel => {
                    let cam = camera_id.clone().ok_or(EditError::MissingCamera)?;
                    if !ctx.has_camera(&cam) {
                        return Err(EditError::UnknownCamera(cam));
                    }
                    Some(cam)
                }
                Layer::Metric => None,
            };
            let new_id = ctx.mint(T::LAYER)?;
            insert_fresh(map, T::manual(T::key(new_id), camera, samples.to_vec()))?;
            Ok(Outcome {
                created: vec![new_id],
                inverse: Inverse::Restore {
                    layer: T::LAYER,
                    remove: vec![new_id],
                    reinsert: vec![],
                },
                diff: Diff {
                    created: vec![tref::<T>(new_id)],
                    ..Diff::default()
                },
            })
        }
    }
}

fn swap_tails<T: Track>(map: &mut BTreeMap<T::Key, T>, a: u64, b: u64, frame: i64) -> Result<(), EditError> {
    if a == b {
        return Err(EditError::SameTrack(a));
    }
    let ta = get(map, a)?;
    let tb = get(map, b)?;
    same_group(ta, tb)?;
    let cut_a = split_point::<T>(ta.samples(), frame);
    let cut_b = split_point::<T>(tb.samples(), frame);
    if cut_a == ta.samples().len() {
        return Err(EditError::NoTail { id: a, frame });
    }
    if cut_b == tb.samples().len() {
        return Err(EditError::NoTail { id: b, frame });
    }
    let mut ta = map.remove(&T::key(a)).expect("checked above");
    let mut tb = map.remove(&T::key(b)).expect("checked above");
    let tail_a: Vec<T::Sample> = ta.samples_mut().drain(cut_a..).collect();
    let tail_b: Vec<T::Sample> = tb.samples_mut().drain(cut_b..).collect();
    ta.samples_mut().extend(tail_b);
    tb.samples_mut().extend(tail_a);
    map.insert(T::key(a), ta);
    map.insert(T::key(b), tb);
    Ok(())
}

/// Applies a captured inverse payload to the store.
pub(crate) fn revert(store: &mut Store, inverse: &Inverse) -> Result<Diff, EditError> {
    match inverse {
        Inverse::Restore {
            layer: Layer::Pixel,
            remove,
            reinsert,
        } => restore::<crate::model::Tracklet>(store, remove, reinsert),
        Inverse::Restore {
            layer: Layer::Metric,
            remove,
            reinsert,
        } => restore::<crate::model::MetricTrajectory>(store, remove, reinsert),
        Inverse::Swap { layer, a, b, frame } => {
            match layer {
                Layer::Pixel => swap_tails::<crate::model::Tracklet>(&mut store.tracklets, *a, *b, *frame)?,
                Layer::Metric => {
                    swap_tails::<crate::model::MetricTrajectory>(&mut store.trajectories, *a, *b, *frame)?
                }
            }
            Ok(Diff {
                changed: vec![TrackRef { layer: *layer, id: *a }, TrackRef { layer: *layer, id: *b }],
                ..Diff::default()
            })
        }
        Inverse::Replace {
            id,
            from,
            to,
            samples,
            source,
        } => match samples {
            SampleList::Pixel(_) => replace::<crate::model::Tracklet>(store, *id, *from, *to, samples, *source),
            SampleList::Metric(_) => {
                replace::<crate::model::MetricTrajectory>(store, *id, *from, *to, samples, *source)
            }
        },
    }
}

fn restore<T: Track>(store: &mut Store, remove: &[u64], reinsert: &[AnyTrack]) -> Result<Diff, EditError> {
    let map = T::map(store);
    if let Some(id) = remove.iter().find(|id| !map.contains_key(&T::key(**id))) {
        return Err(unknown::<T>(*id));
    }
    let tracks: Vec<T> = reinsert
        .iter()
        .map(|t| T::from_any(t.clone()).ok_or(EditError::LayerMismatch))
        .collect::<Result<_, _>>()?;
    if let Some(t) = tracks.iter().find(|t| map.contains_key(&t.id())) {
        return Err(EditError::IdInUse(T::raw(t.id())));
    }
    for id in remove {
        map.remove(&T::key(*id));
    }
    let mut diff = Diff {
        retired: remove.iter().map(|id| tref::<T>(*id)).collect(),
        ..Diff::default()
    };
    for t in tracks {
        diff.created.push(tref::<T>(T::raw(t.id())));
        map.insert(t.id(), t);
    }
    Ok(diff)
}

fn replace<T: Track>(
    store: &mut Store,
    id: u64,
    from: i64,
    to: i64,
    samples: &SampleList,
    source: crate::model::Source,
) -> Result<Diff, EditError> {
    let old = T::samples_from(samples).ok_or(EditError::LayerMismatch)?;
    let track = T::map(store)
        .get_mut(&T::key(id))
        .ok_or_else(|| unknown::<T>(id))?;
    let lo = split_point::<T>(track.samples(), from);
    let hi = track.samples().partition_point(|s| T::sample_key(s) <= to);
    track.samples_mut().splice(lo..hi, old.iter().copied());
    track.set_source(source);
    Ok(Diff {
        changed: vec![tref::<T>(id)],
        ..Diff::default()
    })
}
