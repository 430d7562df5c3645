//! The sense → classify → render loop.
//!
//! A [`Pipeline`] turns one tactile frame into one [`TickSnapshot`]. [`run`]
//! paces ticks at 60 Hz against a [`Clock`], samples the newest frame from a
//! [`FrameSource`] each tick (older frames are dropped, never queued) and
//! hands every snapshot to a [`SnapshotSink`].

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;

use crate::cnn::{frames_to_tensor, ModelParams};
use crate::downsample::{bicubic_resize, merge_fingers, row_peak_filter, FusionMode};
use crate::error::{Error, Result};
use crate::kinematics::{grid_to_contacts, ContactCommand, KinematicsConfig};
use crate::masks::{mask_for, render_masked, MaskOrdering};
use crate::sensor::{sample_rng, synth_frame, SimConfig, MAX_GRIP_STEP, SENSOR_RATE_HZ};
use crate::types::{
    pattern_id, AngleClass, ForceGrid10, Grid3, Mask, PatternId, PositionClass, StimulusGrid,
    TactileFrame, STIM_SIZE,
};

pub const TICK_RATE_HZ: f64 = 60.0;
/// Per-tick budget, ms.
pub const TICK_BUDGET_MS: f64 = 1000.0 / TICK_RATE_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    /// Resize and keep each row's peak.
    Direct,
    /// Classify, then gate the resized grid with the predicted pattern's mask.
    Masked(MaskOrdering),
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Direct => "direct",
            PipelineMode::Masked(_) => "masked",
        }
    }

    pub fn masked() -> Self {
        PipelineMode::Masked(MaskOrdering::default())
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(PipelineMode::Direct),
            "masked" => Ok(PipelineMode::masked()),
            "masked-peak-first" => Ok(PipelineMode::Masked(MaskOrdering::PeakFirst)),
            other => Err(Error::Config(format!("unknown mode {other:?} (direct or masked)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub angle: AngleClass,
    pub position: PositionClass,
    pub pattern: PatternId,
}

/// Stage durations in milliseconds. Stages a mode skips are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageLatency {
    pub merge: f64,
    pub resize: f64,
    pub cnn: Option<f64>,
    pub mask: Option<f64>,
    pub ik: f64,
    /// Measured end to end, so it includes the glue between stages.
    pub total: f64,
}

impl StageLatency {
    pub fn stage_sum(&self) -> f64 {
        self.merge + self.resize + self.cnn.unwrap_or(0.0) + self.mask.unwrap_or(0.0) + self.ik
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickSnapshot {
    pub tick: u64,
    pub mode: PipelineMode,
    pub frame: TactileFrame,
    pub merged: ForceGrid10,
    /// Normalized bicubic output, before peak filtering or masking.
    pub downsized: Grid3,
    pub prediction: Option<Prediction>,
    pub mask: Option<Mask>,
    pub stimulus: StimulusGrid,
    pub contacts: [ContactCommand; STIM_SIZE],
    pub latency: StageLatency,
}

impl TickSnapshot {
    /// Equality ignoring timing fields.
    pub fn same_outputs(&self, o: &TickSnapshot) -> bool {
        self.tick == o.tick
            && self.mode == o.mode
            && self.frame == o.frame
            && self.merged == o.merged
            && self.downsized == o.downsized
            && self.prediction == o.prediction
            && self.mask == o.mask
            && self.stimulus == o.stimulus
            && self.contacts == o.contacts
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    model: Option<Arc<ModelParams>>,
    fusion: FusionMode,
    kinematics: KinematicsConfig,
    ticks: u64,
    cnn_invocations: u64,
}

impl Pipeline {
    pub fn new(model: Option<ModelParams>, fusion: FusionMode, kinematics: KinematicsConfig) -> Result<Self> {
        Self::with_shared_model(model.map(Arc::new), fusion, kinematics)
    }

    pub fn with_shared_model(
        model: Option<Arc<ModelParams>>,
        fusion: FusionMode,
        kinematics: KinematicsConfig,
    ) -> Result<Self> {
        kinematics.validate()?;
        Ok(Self { model, fusion, kinematics, ticks: 0, cnn_invocations: 0 })
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    pub fn kinematics(&self) -> &KinematicsConfig {
        &self.kinematics
    }

    /// Ticks processed so far; also the index of the next snapshot.
    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn cnn_invocations(&self) -> u64 {
        self.cnn_invocations
    }

    /// Processes one frame. Deterministic in everything except the latency
    /// fields. Fails only for masked mode without a model.
    pub fn tick(&mut self, frame: &TactileFrame, mode: PipelineMode) -> Result<TickSnapshot> {
        let model = match (mode, &self.model) {
            (PipelineMode::Masked(_), None) => {
                return Err(Error::Config("masked mode needs a trained model".into()))
            }
            (_, m) => m.clone(),
        };
        let start = Instant::now();

        let t = Instant::now();
        let merged = merge_fingers(frame, self.fusion);
        let merge = ms_since(t);

        let t = Instant::now();
        let downsized = bicubic_resize(&merged);
        let resize = ms_since(t);

        let (stimulus, prediction, mask, cnn, mask_ms) = match (mode, model) {
            (PipelineMode::Masked(ordering), Some(model)) => {
                let t = Instant::now();
                let logits = model.forward_eval(&frames_to_tensor(&[frame]))?;
                self.cnn_invocations += 1;
                let angle = AngleClass::from_index(crate::cnn::argmax(logits.angle.row(0)))?;
                let position = PositionClass::from_index(crate::cnn::argmax(logits.position.row(0)))?;
                let pattern = pattern_id(angle, position);
                let cnn = ms_since(t);

                let t = Instant::now();
                let mask = mask_for(pattern);
                let stimulus = render_masked(&downsized, pattern, ordering);
                let mask_ms = ms_since(t);
                if ordering == MaskOrdering::MaskFirst {
                    debug_assert!(mask.contains(&stimulus.support()));
                }
                (stimulus, Some(Prediction { angle, position, pattern }), Some(mask), Some(cnn), Some(mask_ms))
            }
            _ => (row_peak_filter(&downsized), None, None, None, None),
        };

        let t = Instant::now();
        let contacts = grid_to_contacts(&stimulus, &self.kinematics)?;
        let ik = ms_since(t);

        let latency = StageLatency { merge, resize, cnn, mask: mask_ms, ik, total: ms_since(start) };
        let snap = TickSnapshot {
            tick: self.ticks,
            mode,
            frame: frame.clone(),
            merged,
            downsized,
            prediction,
            mask,
            stimulus,
            contacts,
            latency,
        };
        self.ticks += 1;
        Ok(snap)
    }
}

/// Monotonic time in seconds.
pub trait Clock {
    fn now(&self) -> f64;
    fn sleep_until(&mut self, t: f64);
}

#[derive(Debug, Clone)]
pub struct RealClock {
    origin: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_until(&mut self, t: f64) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_secs_f64(t - now));
        }
    }
}

/// Virtual time that jumps straight to each deadline.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    t: f64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&mut self, dt: f64) {
        self.t += dt;
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.t
    }

    fn sleep_until(&mut self, t: f64) {
        self.t = self.t.max(t);
    }
}

/// What a source has to offer at one tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poll {
    /// Newest frame not yet consumed, if any.
    pub frame: Option<TactileFrame>,
    /// Newer-than-last-poll frames that were superseded and skipped.
    pub dropped: u64,
}

pub trait FrameSource {
    fn poll(&mut self, now: f64) -> Result<Poll>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pose {
    pub angle: AngleClass,
    pub position: PositionClass,
    pub grip_step: u32,
}

impl Pose {
    pub fn new(angle: AngleClass, position: PositionClass, grip_step: u32) -> Result<Self> {
        if grip_step > MAX_GRIP_STEP {
            return Err(Error::OutOfRange { what: "grip step", value: grip_step as i64, max: MAX_GRIP_STEP as i64 });
        }
        Ok(Self { angle, position, grip_step })
    }
}

/// Simulated sensor emitting frame `k` at `k / rate` seconds. Frames are
/// only synthesized when consumed; frame `k` always has the same noise.
pub struct SyntheticSource<P> {
    sim: SimConfig,
    seed: u64,
    rate_hz: f64,
    next: u64,
    pose: P,
}

impl<P: FnMut(f64) -> Pose> SyntheticSource<P> {
    /// `pose` maps a frame timestamp to the pose being sensed.
    pub fn new(sim: SimConfig, seed: u64, pose: P) -> Result<Self> {
        sim.validate()?;
        Ok(Self { sim, seed, rate_hz: SENSOR_RATE_HZ, next: 0, pose })
    }

    pub fn with_rate(mut self, rate_hz: f64) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Config(format!("source rate must be positive, got {rate_hz}")));
        }
        self.rate_hz = rate_hz;
        Ok(self)
    }
}

impl<P: FnMut(f64) -> Pose> FrameSource for SyntheticSource<P> {
    fn poll(&mut self, now: f64) -> Result<Poll> {
        // Slack absorbs rounding when tick and frame times coincide.
        let newest = (now * self.rate_hz + 1e-6).floor();
        if newest < 0.0 || (newest as u64) < self.next {
            return Ok(Poll::default());
        }
        let newest = newest as u64;
        let t = newest as f64 / self.rate_hz;
        let pose = (self.pose)(t);
        let mut rng = sample_rng(self.seed, newest);
        let mut frame = synth_frame(pose.angle, pose.position, pose.grip_step, &self.sim, &mut rng)?;
        frame.timestamp = t;
        let dropped = newest - self.next;
        self.next = newest + 1;
        Ok(Poll { frame: Some(frame), dropped })
    }
}

/// Single-value mailbox between a producer thread and the loop. Publishing
/// overwrites any unread value.
#[derive(Debug, Default)]
pub struct LatestSlot<T> {
    inner: Mutex<(Option<T>, u64)>,
}

impl<T> LatestSlot<T> {
    pub fn new() -> Self {
        Self { inner: Mutex::new((None, 0)) }
    }

    pub fn publish(&self, value: T) {
        let mut g = self.inner.lock().expect("slot poisoned");
        if g.0.is_some() {
            g.1 += 1;
        }
        g.0 = Some(value);
    }

    /// The newest value and how many were overwritten since the last take.
    pub fn take(&self) -> Option<(T, u64)> {
        let mut g = self.inner.lock().expect("slot poisoned");
        let v = g.0.take()?;
        let dropped = std::mem::take(&mut g.1);
        Some((v, dropped))
    }
}

impl FrameSource for Arc<LatestSlot<TactileFrame>> {
    fn poll(&mut self, _now: f64) -> Result<Poll> {
        Ok(match self.take() {
            Some((frame, dropped)) => Poll { frame: Some(frame), dropped },
            None => Poll::default(),
        })
    }
}

pub trait SnapshotSink {
    fn emit(&mut self, s: &TickSnapshot) -> Result<()>;
}

impl<F: FnMut(&TickSnapshot) -> Result<()>> SnapshotSink for F {
    fn emit(&mut self, s: &TickSnapshot) -> Result<()> {
        self(s)
    }
}

#[derive(Debug, Default)]
pub struct NullSink;

impl SnapshotSink for NullSink {
    fn emit(&mut self, _: &TickSnapshot) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct CollectSink(pub Vec<TickSnapshot>);

impl SnapshotSink for CollectSink {
    fn emit(&mut self, s: &TickSnapshot) -> Result<()> {
        self.0.push(s.clone());
        Ok(())
    }
}

/// Bounded hand-off to a consumer that must never stall the loop: when the
/// queue is full the oldest snapshot is discarded.
#[derive(Debug, Clone)]
pub struct DropOldestSink {
    queue: Arc<ArrayQueue<Arc<TickSnapshot>>>,
    discarded: Arc<AtomicU64>,
}

impl DropOldestSink {
    pub fn new(capacity: usize) -> Self {
        Self { queue: Arc::new(ArrayQueue::new(capacity.max(1))), discarded: Arc::default() }
    }

    pub fn pop(&self) -> Option<Arc<TickSnapshot>> {
        self.queue.pop()
    }

    pub fn discarded(&self) -> u64 {
        self.discarded.load(Ordering::Relaxed)
    }
}

impl SnapshotSink for DropOldestSink {
    fn emit(&mut self, s: &TickSnapshot) -> Result<()> {
        if self.queue.force_push(Arc::new(s.clone())).is_some() {
            self.discarded.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }
}

/// Column order of the snapshot log. Grid cells are row-major; empty
/// fields mean "not applicable in this mode".
pub const SNAPSHOT_LOG_HEADER: &str = "tick,mode,timestamp,pattern,angle_deg,position,\
s00,s01,s02,s10,s11,s12,s20,s21,s22,\
c0_active,c0_x,c0_y,c0_tau_a,c0_tau_e,\
c1_active,c1_x,c1_y,c1_tau_a,c1_tau_e,\
c2_active,c2_x,c2_y,c2_tau_a,c2_tau_e,\
merge_ms,resize_ms,cnn_ms,mask_ms,ik_ms,total_ms";

/// One comma-separated line per tick after a header line.
pub struct SnapshotLog<W: Write> {
    out: W,
}

impl<W: Write> SnapshotLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{SNAPSHOT_LOG_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn snapshot_log_line(s: &TickSnapshot) -> String {
    let mut line = format!("{},{},{}", s.tick, s.mode, s.frame.timestamp);
    match s.prediction {
        Some(p) => {
            let _ = write!(line, ",{},{},{}", p.pattern.get(), p.angle.degrees(), p.position.name());
        }
        None => line.push_str(",,,"),
    }
    for v in s.stimulus.values().iter().flatten() {
        let _ = write!(line, ",{v}");
    }
    for c in &s.contacts {
        let _ = write!(
            line,
            ",{},{},{},{},{}",
            c.active() as u8,
            c.target.x,
            c.target.y,
            c.angles.tau_a,
            c.angles.tau_e
        );
    }
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let l = &s.latency;
    let _ = write!(
        line,
        ",{:.6},{:.6},{},{},{:.6},{:.6}",
        l.merge,
        l.resize,
        opt(l.cnn),
        opt(l.mask),
        l.ik,
        l.total
    );
    line
}

impl<W: Write> SnapshotSink for SnapshotLog<W> {
    fn emit(&mut self, s: &TickSnapshot) -> Result<()> {
        writeln!(self.out, "{}", snapshot_log_line(s))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles; `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Self { count: v.len(), p50: rank(0.50), p99: rank(0.99), max: v[v.len() - 1] })
    }
}

/// Per-stage summaries; a stage that never ran has no row.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTable {
    pub rows: Vec<(&'static str, LatencySummary)>,
}

impl StageTable {
    pub fn from_latencies(l: &[StageLatency]) -> Self {
        let columns: [(&'static str, Vec<f64>); 6] = [
            ("merge", l.iter().map(|x| x.merge).collect()),
            ("resize", l.iter().map(|x| x.resize).collect()),
            ("cnn", l.iter().filter_map(|x| x.cnn).collect()),
            ("mask", l.iter().filter_map(|x| x.mask).collect()),
            ("ik", l.iter().map(|x| x.ik).collect()),
            ("total", l.iter().map(|x| x.total).collect()),
        ];
        let rows = columns
            .into_iter()
            .filter_map(|(name, v)| LatencySummary::from_samples(&v).map(|s| (name, s)))
            .collect();
        Self { rows }
    }

    pub fn get(&self, stage: &str) -> Option<LatencySummary> {
        self.rows.iter().find(|(n, _)| *n == stage).map(|(_, s)| *s)
    }

    pub fn format(&self) -> String {
        let mut s = format!("{:<8} {:>10} {:>10} {:>10}\n", "stage", "p50_ms", "p99_ms", "max_ms");
        for (name, r) in &self.rows {
            let _ = writeln!(s, "{name:<8} {:>10.4} {:>10.4} {:>10.4}", r.p50, r.p99, r.max);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: PipelineMode,
    pub ticks: u64,
    pub frames_consumed: u64,
    pub dropped_frames: u64,
    /// Ticks that found no new frame and reused the previous one.
    pub starved_ticks: u64,
    /// Ticks that started more than one period late.
    pub overruns: u64,
    pub cnn_invocations: u64,
    pub latency: StageTable,
}

impl RunReport {
    pub fn starved(&self) -> bool {
        self.starved_ticks > 0
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "ticks = {}", self.ticks);
        let _ = writeln!(s, "frames_consumed = {}", self.frames_consumed);
        let _ = writeln!(s, "dropped_frames = {}", self.dropped_frames);
        let _ = writeln!(s, "starved_ticks = {}", self.starved_ticks);
        let _ = writeln!(s, "starved = {}", self.starved());
        let _ = writeln!(s, "overruns = {}", self.overruns);
        let _ = writeln!(s, "cnn_invocations = {}", self.cnn_invocations);
        if let Some(t) = self.latency.get("total") {
            let _ = writeln!(s, "latency_p50_ms = {:.4}", t.p50);
            let _ = writeln!(s, "latency_p99_ms = {:.4}", t.p99);
            let _ = writeln!(s, "latency_max_ms = {:.4}", t.max);
        }
        s.push_str(&self.latency.format());
        s
    }
}

/// Fixed-rate loop for `duration` seconds. Each tick consumes the newest
/// frame (reusing the previous one if none arrived). A tick starting more
/// than a period late is counted as an overrun and the schedule skips ahead
/// instead of bursting to catch up.
pub fn run(
    pipeline: &mut Pipeline,
    source: &mut dyn FrameSource,
    mode: PipelineMode,
    sink: &mut dyn SnapshotSink,
    clock: &mut dyn Clock,
    duration: f64,
) -> Result<RunReport> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::Config(format!("duration must be non-negative, got {duration}")));
    }
    if matches!(mode, PipelineMode::Masked(_)) && !pipeline.has_model() {
        return Err(Error::Config("masked mode needs a trained model".into()));
    }
    let period = 1.0 / TICK_RATE_HZ;
    let start = clock.now();
    let cnn_before = pipeline.cnn_invocations();
    let mut last = TactileFrame::zero(start);
    let mut latencies = Vec::new();
    let (mut consumed, mut dropped, mut starved, mut overruns) = (0, 0, 0, 0);
    let mut slot: u64 = 0;

    loop {
        let deadline = start + slot as f64 * period;
        if deadline >= start + duration - 1e-9 {
            break;
        }
        clock.sleep_until(deadline);
        let now = clock.now();
        if now - deadline > period {
            overruns += 1;
            log::warn!("tick {} started {:.2} ms late", pipeline.ticks(), (now - deadline) * 1e3);
            slot = ((now - start) / period).floor() as u64;
        }

        let poll = source.poll(now - start)?;
        dropped += poll.dropped;
        match poll.frame {
            Some(f) => {
                consumed += 1;
                last = f;
            }
            None => starved += 1,
        }
        let snap = pipeline.tick(&last, mode)?;
        latencies.push(snap.latency);
        sink.emit(&snap).map_err(|e| Error::Sink(format!("tick {}: {e}", snap.tick)))?;
        slot += 1;
    }

    Ok(RunReport {
        mode,
        ticks: latencies.len() as u64,
        frames_consumed: consumed,
        dropped_frames: dropped,
        starved_ticks: starved,
        overruns,
        cnn_invocations: pipeline.cnn_invocations() - cnn_before,
        latency: StageTable::from_latencies(&latencies),
    })
}

/// Unpaced ticks over a fixed rotation of noisy full-grip frames, for
/// latency measurement.
pub fn bench(pipeline: &mut Pipeline, mode: PipelineMode, ticks: usize, seed: u64) -> Result<StageTable> {
    let sim = SimConfig::default();
    let mut latencies = Vec::with_capacity(ticks);
    for i in 0..ticks {
        let id = PatternId::new(i % crate::types::NUM_PATTERNS)?;
        let frame = synth_frame(id.angle(), id.position(), MAX_GRIP_STEP, &sim, &mut sample_rng(seed, i as u64))?;
        latencies.push(pipeline.tick(&frame, mode)?.latency);
    }
    Ok(StageTable::from_latencies(&latencies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::ModelConfig;

    fn small_model() -> ModelParams {
        let cfg = ModelConfig { conv1_channels: 2, conv2_channels: 2, head_widths: vec![8], ..Default::default() };
        ModelParams::init(&cfg, 3)
    }

    fn pose(_: f64) -> Pose {
        Pose { angle: AngleClass::Deg45, position: PositionClass::Right, grip_step: 30 }
    }

    #[test]
    fn zero_frame_direct_retracts() {
        let mut p = Pipeline::new(None, FusionMode::Max, Default::default()).unwrap();
        let s = p.tick(&TactileFrame::zero(0.0), PipelineMode::Direct).unwrap();
        assert!(s.stimulus.is_zero());
        assert!(s.contacts.iter().all(|c| !c.active()));
        assert!(s.prediction.is_none() && s.mask.is_none() && s.latency.cnn.is_none());
        assert!(p.tick(&TactileFrame::zero(0.0), PipelineMode::masked()).is_err());
    }

    #[test]
    fn one_second_run_on_sim_clock() {
        let mut p = Pipeline::new(None, FusionMode::Max, Default::default()).unwrap();
        let mut src = SyntheticSource::new(SimConfig::default(), 1, pose).unwrap();
        let mut sink = CollectSink::default();
        let r = run(&mut p, &mut src, PipelineMode::Direct, &mut sink, &mut SimClock::new(), 1.0).unwrap();
        assert_eq!(r.ticks, 60);
        assert_eq!(sink.0.len(), 60);
        assert_eq!(r.frames_consumed, 60);
        assert_eq!(r.dropped_frames, 59);
        assert!(!r.starved());
        assert_eq!(r.cnn_invocations, 0);
        assert!(r.latency.get("cnn").is_none());
        assert_eq!(sink.0[1].frame.timestamp, 2.0 / 120.0);
    }

    #[test]
    fn slow_source_starves() {
        let mut p = Pipeline::new(None, FusionMode::Max, Default::default()).unwrap();
        let mut src = SyntheticSource::new(SimConfig::default(), 1, pose).unwrap().with_rate(20.0).unwrap();
        let r = run(&mut p, &mut src, PipelineMode::Direct, &mut NullSink, &mut SimClock::new(), 1.0).unwrap();
        assert_eq!(r.ticks, 60);
        assert_eq!(r.frames_consumed, 20);
        assert_eq!(r.starved_ticks, 40);
        assert!(r.format().contains("starved = true"));
    }

    #[test]
    fn masked_run_is_deterministic_and_counts_cnn() {
        let model = small_model();
        let go = || {
            let mut p = Pipeline::new(Some(model.clone()), FusionMode::Max, Default::default()).unwrap();
            let mut src = SyntheticSource::new(SimConfig::default(), 9, pose).unwrap();
            let mut sink = CollectSink::default();
            let r = run(&mut p, &mut src, PipelineMode::masked(), &mut sink, &mut SimClock::new(), 0.5).unwrap();
            assert_eq!(r.cnn_invocations, 30);
            sink.0
        };
        let (a, b) = (go(), go());
        assert!(a.iter().zip(&b).all(|(x, y)| x.same_outputs(y)));
        for s in &a {
            assert!(s.mask.unwrap().contains(&s.stimulus.support()));
        }
    }

    #[test]
    fn failing_sink_stops_loop() {
        let mut p = Pipeline::new(None, FusionMode::Max, Default::default()).unwrap();
        let mut src = SyntheticSource::new(SimConfig::default(), 1, pose).unwrap();
        let mut n = 0;
        let mut sink = |_: &TickSnapshot| -> Result<()> {
            n += 1;
            if n == 3 {
                Err(Error::Sink("disk full".into()))
            } else {
                Ok(())
            }
        };
        let e = run(&mut p, &mut src, PipelineMode::Direct, &mut sink, &mut SimClock::new(), 1.0).unwrap_err();
        assert!(e.to_string().contains("tick 2"), "{e}");
    }

    #[test]
    fn latest_slot_keeps_newest() {
        let slot = Arc::new(LatestSlot::new());
        let producer = {
            let slot = slot.clone();
            std::thread::spawn(move || {
                for i in 0..100 {
                    slot.publish(TactileFrame::zero(i as f64));
                }
            })
        };
        producer.join().unwrap();
        let mut src = slot.clone();
        let p = src.poll(0.0).unwrap();
        assert_eq!(p.frame.unwrap().timestamp, 99.0);
        assert_eq!(p.dropped, 99);
        assert_eq!(src.poll(0.0).unwrap(), Poll::default());
    }

    #[test]
    fn drop_oldest_sink_discards_front() {
        let mut p = Pipeline::new(None, FusionMode::Max, Default::default()).unwrap();
        let mut sink = DropOldestSink::new(2);
        for _ in 0..5 {
            let s = p.tick(&TactileFrame::zero(0.0), PipelineMode::Direct).unwrap();
            sink.emit(&s).unwrap();
        }
        assert_eq!(sink.discarded(), 3);
        assert_eq!(sink.pop().unwrap().tick, 3);
        assert_eq!(sink.pop().unwrap().tick, 4);
        assert!(sink.pop().is_none());
    }

    #[test]
    fn log_has_header_and_fixed_columns() {
        let mut p = Pipeline::new(Some(small_model()), FusionMode::Max, Default::default()).unwrap();
        let mut log = SnapshotLog::new(Vec::new()).unwrap();
        for mode in [PipelineMode::Direct, PipelineMode::masked()] {
            let s = p.tick(&TactileFrame::zero(0.5), mode).unwrap();
            log.emit(&s).unwrap();
        }
        let text = String::from_utf8(log.into_inner().unwrap()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let n = SNAPSHOT_LOG_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == n));
        assert!(lines[1].starts_with("0,direct,0.5,,,,"));
        assert!(lines[2].starts_with("1,masked,0.5,"));
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencySummary::from_samples(&v).unwrap();
        assert_eq!((s.p50, s.p99, s.max), (50.0, 99.0, 100.0));
        assert!(LatencySummary::from_samples(&[]).is_none());
    }
}
