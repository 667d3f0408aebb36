//! Layer-generic view of a track so every edit is written once and applies to
//! both pixel tracklets and metric trajectories.

use std::collections::BTreeMap;
use std::fmt::Debug;

use crate::model::{
    CameraId, MetricTrajectory, PedId, Source, Tracklet, TrackletId, TrackletSample,
    TrajectorySample,
};

use super::{AnyTrack, Layer, SampleList};

pub(crate) trait Track: Clone + PartialEq + Debug {
    type Key: Copy + Ord + Debug;
    type Sample: Copy + PartialEq + Debug;

    const LAYER: Layer;

    fn key(raw: u64) -> Self::Key;
    fn raw(key: Self::Key) -> u64;
    fn sample_key(s: &Self::Sample) -> i64;
    fn sample_valid(s: &Self::Sample) -> bool;

    fn id(&self) -> Self::Key;
    fn set_id(&mut self, id: Self::Key);
    fn samples(&self) -> &[Self::Sample];
    fn samples_mut(&mut self) -> &mut Vec<Self::Sample>;
    /// Tracks may only be joined or disentangled within one group.
    fn group(&self) -> Option<&CameraId>;
    fn source(&self) -> Source;
    fn set_source(&mut self, source: Source);
    /// Carry over metadata of a track being joined into this one.
    fn absorb(&mut self, other: &Self);
    fn manual(id: Self::Key, camera: Option<CameraId>, samples: Vec<Self::Sample>) -> Self;

    fn into_any(self) -> AnyTrack;
    fn from_any(any: AnyTrack) -> Option<Self>;
    fn samples_from(list: &SampleList) -> Option<&[Self::Sample]>;
    fn to_list(samples: Vec<Self::Sample>) -> SampleList;
    fn map(store: &mut crate::model::Store) -> &mut BTreeMap<Self::Key, Self>;
}

impl Track for Tracklet {
    type Key = TrackletId;
    type Sample = TrackletSample;
    const LAYER: Layer = Layer::Pixel;

    fn key(raw: u64) -> TrackletId {
        TrackletId(raw)
    }
    fn raw(key: TrackletId) -> u64 {
        key.0
    }
    fn sample_key(s: &TrackletSample) -> i64 {
        s.frame
    }
    fn sample_valid(s: &TrackletSample) -> bool {
        s.bbox.is_valid()
    }
    fn id(&self) -> TrackletId {
        self.id
    }
    fn set_id(&mut self, id: TrackletId) {
        self.id = id;
    }
    fn samples(&self) -> &[TrackletSample] {
        &self.samples
    }
    fn samples_mut(&mut self) -> &mut Vec<TrackletSample> {
        &mut self.samples
    }
    fn group(&self) -> Option<&CameraId> {
        Some(&self.camera_id)
    }
    fn source(&self) -> Source {
        self.source
    }
    fn set_source(&mut self, source: Source) {
        self.source = source;
    }
    fn absorb(&mut self, other: &Self) {
        self.source = self.source.combine(other.source);
    }
    fn manual(id: TrackletId, camera: Option<CameraId>, samples: Vec<TrackletSample>) -> Self {
        Tracklet {
            id,
            camera_id: camera.expect("pixel tracks carry a camera"),
            samples,
            source: Source::Manual,
        }
    }
    fn into_any(self) -> AnyTrack {
        AnyTrack::Tracklet(self)
    }
    fn from_any(any: AnyTrack) -> Option<Self> {
        match any {
            AnyTrack::Tracklet(t) => Some(t),
            AnyTrack::Trajectory(_) => None,
        }
    }
    fn samples_from(list: &SampleList) -> Option<&[TrackletSample]> {
        match list {
            SampleList::Pixel(s) => Some(s),
            SampleList::Metric(_) => None,
        }
    }
    fn to_list(samples: Vec<TrackletSample>) -> SampleList {
        SampleList::Pixel(samples)
    }
    fn map(store: &mut crate::model::Store) -> &mut BTreeMap<TrackletId, Tracklet> {
        &mut store.tracklets
    }
}

impl Track for MetricTrajectory {
    type Key = PedId;
    type Sample = TrajectorySample;
    const LAYER: Layer = Layer::Metric;

    fn key(raw: u64) -> PedId {
        PedId(raw)
    }
    fn raw(key: PedId) -> u64 {
        key.0
    }
    fn sample_key(s: &TrajectorySample) -> i64 {
        s.step
    }
    fn sample_valid(s: &TrajectorySample) -> bool {
        s.x.is_finite() && s.y.is_finite() && s.z.is_finite()
    }
    fn id(&self) -> PedId {
        self.ped_id
    }
    fn set_id(&mut self, id: PedId) {
        self.ped_id = id;
    }
    fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }
    fn samples_mut(&mut self) -> &mut Vec<TrajectorySample> {
        &mut self.samples
    }
    fn group(&self) -> Option<&CameraId> {
        None
    }
    fn source(&self) -> Source {
        self.source
    }
    fn set_source(&mut self, source: Source) {
        self.source = source;
    }
    fn absorb(&mut self, other: &Self) {
        self.source = self.source.combine(other.source);
        for r in &other.source_tracklets {
            if !self.source_tracklets.contains(r) {
                self.source_tracklets.push(r.clone());
            }
        }
    }
    fn manual(id: PedId, _camera: Option<CameraId>, samples: Vec<TrajectorySample>) -> Self {
        MetricTrajectory {
            ped_id: id,
            samples,
            source_tracklets: Vec::new(),
            source: Source::Manual,
        }
    }
    fn into_any(self) -> AnyTrack {
        AnyTrack::Trajectory(self)
    }
    fn from_any(any: AnyTrack) -> Option<Self> {
        match any {
            AnyTrack::Trajectory(t) => Some(t),
            AnyTrack::Tracklet(_) => None,
        }
    }
    fn samples_from(list: &SampleList) -> Option<&[TrajectorySample]> {
        match list {
            SampleList::Metric(s) => Some(s),
            SampleList::Pixel(_) => None,
        }
    }
    fn to_list(samples: Vec<TrajectorySample>) -> SampleList {
        SampleList::Metric(samples)
    }
    fn map(store: &mut crate::model::Store) -> &mut BTreeMap<PedId, MetricTrajectory> {
        &mut store.trajectories
    }
}
