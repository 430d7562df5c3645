//! Synthetic fingertip frames of a grasped pipette and the labeled dataset
//! built from them.
//!
//! The pipette contact is modeled as a Gaussian ridge along a line through
//! the grid:
//!
//! ```text
//! p(cell) = A(step) · exp(−d² / (2σ²)),   A(step) = step · peak_force_per_step
//! ```
//!
//! where `d` is the perpendicular distance from the cell center to the line.
//! Finger B sees the mirror image of finger A. Each finger gets independent
//! additive Gaussian noise, then every cell is clipped to `[0, 9]` N.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::types::{
    pattern_id, AngleClass, ForceGrid10, PatternId, PositionClass, TactileFrame, MAX_FORCE,
    NUM_PATTERNS, SENSOR_SIZE,
};

/// Highest grip step; steps run `0..=MAX_GRIP_STEP` (31 levels).
pub const MAX_GRIP_STEP: u32 = 30;
/// Native sensor frame rate.
pub const SENSOR_RATE_HZ: f64 = 120.0;

const DATASET_MAGIC: &str = "palmpipe-dataset v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Gaussian cross-section of the contact stripe, in cells.
    pub line_width_sigma: f64,
    /// Ridge amplitude added per grip step, in newtons.
    pub peak_force_per_step: f64,
    /// Per-cell additive noise, in newtons. Zero disables noise.
    pub noise_sigma: f64,
    /// Perpendicular displacement of non-center positions, in cells.
    pub offset_cells: f64,
    pub reps_per_config: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            line_width_sigma: 1.2,
            peak_force_per_step: 0.29,
            noise_sigma: 0.15,
            offset_cells: 3.0,
            reps_per_config: 36,
        }
    }
}

impl SimConfig {
    pub fn noiseless(self) -> Self {
        Self { noise_sigma: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("line_width_sigma", self.line_width_sigma),
            ("peak_force_per_step", self.peak_force_per_step),
            ("offset_cells", self.offset_cells),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if self.reps_per_config == 0 {
            return Err(Error::Config("reps_per_config must be at least 1".into()));
        }
        if self.peak_force_per_step * MAX_GRIP_STEP as f64 > MAX_FORCE + 1e-12 {
            return Err(Error::Config(format!(
                "peak_force_per_step {} saturates above {MAX_FORCE} N at full grip",
                self.peak_force_per_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GripSample {
    pub frame: TactileFrame,
    pub angle: AngleClass,
    pub position: PositionClass,
    pub grip_step: u32,
}

impl GripSample {
    pub fn pattern(&self) -> PatternId {
        pattern_id(self.angle, self.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GripSample>,
    pub seed: u64,
    /// Generator settings; `None` when the dataset was read from a file.
    pub config: Option<SimConfig>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-pattern sample counts.
    pub fn class_counts(&self) -> [usize; NUM_PATTERNS] {
        let mut counts = [0; NUM_PATTERNS];
        for s in &self.samples {
            counts[s.pattern().get()] += 1;
        }
        counts
    }
}

/// Noiseless ridge for finger A.
pub fn stripe_field(
    angle: AngleClass,
    position: PositionClass,
    grip_step: u32,
    cfg: &SimConfig,
) -> [[f64; SENSOR_SIZE]; SENSOR_SIZE] {
    let amplitude = grip_step as f64 * cfg.peak_force_per_step;
    let center = (SENSOR_SIZE as f64 - 1.0) / 2.0;
    let (nr, nc) = angle.normal();
    let shift = position.shift() as f64 * cfg.offset_cells;
    let (pr, pc) = (center + shift * nr, center + shift * nc);
    let two_var = 2.0 * cfg.line_width_sigma * cfg.line_width_sigma;

    let mut out = [[0.0; SENSOR_SIZE]; SENSOR_SIZE];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let d = (r as f64 - pr) * nr + (c as f64 - pc) * nc;
            *v = amplitude * (-d * d / two_var).exp();
        }
    }
    out
}

fn add_noise<R: Rng + ?Sized>(
    field: &mut [[f64; SENSOR_SIZE]; SENSOR_SIZE],
    sigma: f64,
    rng: &mut R,
) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative and finite");
    for v in field.iter_mut().flatten() {
        *v += normal.sample(rng);
    }
}

/// Synthesizes one noisy frame for the given labels and grip step.
pub fn synth_frame<R: Rng + ?Sized>(
    angle: AngleClass,
    position: PositionClass,
    grip_step: u32,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<TactileFrame> {
    if grip_step > MAX_GRIP_STEP {
        return Err(Error::OutOfRange {
            what: "grip step",
            value: grip_step as i64,
            max: MAX_GRIP_STEP as i64,
        });
    }
    let mut a = stripe_field(angle, position, grip_step, cfg);
    let mut b = a;
    for row in b.iter_mut() {
        row.reverse();
    }
    add_noise(&mut a, cfg.noise_sigma, rng);
    add_noise(&mut b, cfg.noise_sigma, rng);
    Ok(TactileFrame {
        finger_a: ForceGrid10::clipped(a),
        finger_b: ForceGrid10::clipped(b),
        timestamp: 0.0,
    })
}

/// RNG stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Emits `reps_per_config` samples for each (pattern, grip step) pair,
/// ordered by pattern id, then grip step, then repetition.
pub fn generate_dataset(cfg: &SimConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(NUM_PATTERNS * 31 * cfg.reps_per_config);
    for id in PatternId::all() {
        for step in 0..=MAX_GRIP_STEP {
            for _ in 0..cfg.reps_per_config {
                let index = samples.len() as u64;
                let mut rng = sample_rng(seed, index);
                let mut frame = synth_frame(id.angle(), id.position(), step, cfg, &mut rng)?;
                frame.timestamp = index as f64 / SENSOR_RATE_HZ;
                samples.push(GripSample {
                    frame,
                    angle: id.angle(),
                    position: id.position(),
                    grip_step: step,
                });
            }
        }
    }
    Ok(Dataset { samples, seed, config: Some(*cfg) })
}

/// Stratified seeded split. Each pattern's samples are shuffled and cut by
/// the ratios, then each split is shuffled as a whole.
pub fn split_dataset(
    d: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (rt, rv, rs) = ratios;
    for r in [rt, rv, rs] {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
        }
    }
    if (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_PATTERNS];
    for (i, s) in d.samples.iter().enumerate() {
        by_class[s.pattern().get()].push(i);
    }

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64) * rt).round() as usize;
        let n_val = (((n as f64) * rv).round() as usize).min(n - n_train);
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }

    let mut build = |mut idx: Vec<usize>| {
        idx.shuffle(&mut rng);
        Dataset {
            samples: idx.into_iter().map(|i| d.samples[i].clone()).collect(),
            seed: d.seed,
            config: d.config,
        }
    };
    let train = build(train);
    let val = build(val);
    let test = build(test);
    Ok((train, val, test))
}

/// Writes the newline-delimited dataset format.
///
/// ```text
/// palmpipe-dataset v1,count=N,seed=S
/// pattern_id,grip_step,<100 finger A values>,<100 finger B values>
/// ```
///
/// Values are written in shortest round-trip decimal form, so a read-back
/// reproduces every force bit-exactly.
pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    writeln!(w, "{DATASET_MAGIC},count={},seed={}", d.len(), d.seed)?;
    let mut line = String::with_capacity(4096);
    for s in &d.samples {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{},{}", s.pattern().get(), s.grip_step);
        for v in s.frame.finger_a.iter().chain(s.frame.finger_b.iter()) {
            let _ = write!(line, ",{v}");
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or(Error::ParseLine { line: 1, message: "empty dataset file".into() })??;
    let (count, seed) = parse_header(&header)?;

    let mut samples = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::ParseLine { line: line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 202 {
            return Err(bad(format!("expected 202 fields, found {}", fields.len())));
        }
        let id: usize = fields[0].trim().parse().map_err(|e| bad(format!("pattern id: {e}")))?;
        let id = PatternId::new(id).map_err(|e| bad(e.to_string()))?;
        let grip_step: u32 =
            fields[1].trim().parse().map_err(|e| bad(format!("grip step: {e}")))?;
        if grip_step > MAX_GRIP_STEP {
            return Err(bad(format!("grip step {grip_step} out of range")));
        }
        let values = fields[2..]
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("force value: {e}")))?;
        let finger_a = ForceGrid10::from_slice(&values[..100]).map_err(|e| bad(e.to_string()))?;
        let finger_b = ForceGrid10::from_slice(&values[100..]).map_err(|e| bad(e.to_string()))?;
        let timestamp = samples.len() as f64 / SENSOR_RATE_HZ;
        samples.push(GripSample {
            frame: TactileFrame { finger_a, finger_b, timestamp },
            angle: id.angle(),
            position: id.position(),
            grip_step,
        });
    }
    if samples.len() != count {
        return Err(Error::Parse(format!(
            "header declares {count} records, found {}",
            samples.len()
        )));
    }
    Ok(Dataset { samples, seed, config: None })
}

fn parse_header(header: &str) -> Result<(usize, u64)> {
    let bad = |m: &str| Error::ParseLine { line: 1, message: m.to_string() };
    let mut parts = header.trim().split(',');
    if parts.next() != Some(DATASET_MAGIC) {
        return Err(bad("missing 'palmpipe-dataset v1' header"));
    }
    let (mut count, mut seed) = (None, None);
    for part in parts {
        match part.split_once('=') {
            Some(("count", v)) => count = v.parse().ok(),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => return Err(bad(&format!("unexpected header field {part:?}"))),
        }
    }
    Ok((count.ok_or_else(|| bad("bad count"))?, seed.ok_or_else(|| bad("bad seed"))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(reps: usize) -> SimConfig {
        SimConfig { reps_per_config: reps, ..SimConfig::default() }
    }

    #[test]
    fn zero_grip_noiseless_is_zero() {
        let cfg = SimConfig::default().noiseless();
        let mut rng = sample_rng(1, 0);
        for id in PatternId::all() {
            let f = synth_frame(id.angle(), id.position(), 0, &cfg, &mut rng).unwrap();
            assert_eq!(f.finger_a.total(), 0.0);
            assert_eq!(f.finger_b.total(), 0.0);
        }
    }

    #[test]
    fn vertical_center_profile_peaks_mid_and_is_symmetric() {
        let cfg = SimConfig::default().noiseless();
        let mut rng = sample_rng(1, 0);
        let f = synth_frame(AngleClass::Deg90, PositionClass::Center, 30, &cfg, &mut rng).unwrap();
        let cols: Vec<f64> =
            (0..10).map(|c| (0..10).map(|r| f.finger_a.get(r, c)).sum()).collect();
        let argmax = (0..10).max_by(|&a, &b| cols[a].total_cmp(&cols[b])).unwrap();
        assert!(argmax == 4 || argmax == 5);
        for k in 0..5 {
            assert!((cols[4 - k] - cols[5 + k]).abs() < 1e-12);
        }
        for k in 0..4 {
            assert!(cols[4 - k] > cols[3 - k]);
        }
        // Analytic value at the column next to the ridge center (d = 0.5).
        let expected = 30.0 * 0.29 * (-0.25f64 / (2.0 * 1.44)).exp();
        assert!((f.finger_a.get(0, 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_grip_rejected() {
        let mut rng = sample_rng(1, 0);
        let err = synth_frame(AngleClass::Deg0, PositionClass::Center, 31, &SimConfig::default(), &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn noiseless_mirror_property() {
        let cfg = SimConfig::default().noiseless();
        let mut rng = sample_rng(3, 0);
        for id in PatternId::all() {
            let f = synth_frame(id.angle(), id.position(), 17, &cfg, &mut rng).unwrap();
            assert_eq!(f.finger_b, f.finger_a.mirrored());
        }
    }

    #[test]
    fn total_force_monotone_in_grip() {
        let cfg = SimConfig::default().noiseless();
        let mut rng = sample_rng(0, 0);
        for id in PatternId::all() {
            let mut prev = -1.0;
            for step in 0..=MAX_GRIP_STEP {
                let f = synth_frame(id.angle(), id.position(), step, &cfg, &mut rng).unwrap();
                let t = f.finger_a.total() + f.finger_b.total();
                assert!(t >= prev);
                prev = t;
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { peak_force_per_step: 0.31, ..Default::default() }.validate().is_err());
        assert!(SimConfig { line_width_sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { reps_per_config: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { noise_sigma: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn dataset_sizes() {
        assert_eq!(generate_dataset(&small(1), 5).unwrap().len(), 372);
        let d = generate_dataset(&SimConfig::default(), 5).unwrap();
        assert_eq!(d.len(), 13392);
        assert!(d.class_counts().iter().all(|&c| c == 1116));
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_dataset(&small(2), 42).unwrap();
        let b = generate_dataset(&small(2), 42).unwrap();
        let c = generate_dataset(&small(2), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        write_dataset(&a, &mut fa).unwrap();
        write_dataset(&b, &mut fb).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let d = generate_dataset(&small(1), 9).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back.samples, d.samples);
        assert_eq!(back.seed, 9);
    }

    #[test]
    fn malformed_file_names_line() {
        let text = "palmpipe-dataset v1,count=1,seed=0\n3,4,1.0\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::ParseLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_dataset("garbage\n".as_bytes()).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = generate_dataset(&SimConfig::default(), 1).unwrap();
        let (tr, va, te) = split_dataset(&d, (0.5, 0.25, 0.25), 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6696, 3348, 3348));
        let key = |s: &GripSample| s.frame.timestamp.to_bits();
        let mut all: Vec<u64> =
            tr.samples.iter().chain(&va.samples).chain(&te.samples).map(key).collect();
        all.sort_unstable();
        let mut orig: Vec<u64> = d.samples.iter().map(key).collect();
        orig.sort_unstable();
        assert_eq!(all, orig);
        for part in [&tr, &va, &te] {
            let counts = part.class_counts();
            for c in counts {
                let frac = c as f64 / part.len() as f64;
                assert!((frac - 1.0 / 12.0).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let d = generate_dataset(&small(1), 1).unwrap();
        assert!(split_dataset(&d, (1.0, 0.0, 0.0), 0).is_err());
        assert!(split_dataset(&d, (0.5, 0.3, 0.3), 0).is_err());
    }
}
