//! Confusion matrices, recognition rates, and the machine-observer study.

use std::fmt::Write as _;

use rand::Rng;

use crate::cnn::ModelParams;
use crate::downsample::{bicubic_resize, merge_fingers, FusionMode};
use crate::error::{Error, Result};
use crate::masks::{render_masked, MaskOrdering};
use crate::pipeline::{Pipeline, PipelineMode};
use crate::sensor::{sample_rng, stripe_field, synth_frame, SimConfig};
use crate::types::{ForceGrid10, PatternId, StimulusGrid, TactileFrame, NUM_PATTERNS};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion matrix must be square, got {k} rows")));
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.k && predicted < self.k, "class index out of range");
        self.counts[truth * self.k + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Fraction of all trials on the diagonal.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| {
                let s = self.row_sum(i);
                self.row(i)
                    .iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Rows of two-decimal fractions under a header of predicted classes.
    pub fn format_normalized(&self) -> String {
        let mut s = String::from("    ");
        for j in 0..self.k {
            let _ = write!(s, " {j:>5}");
        }
        s.push('\n');
        for (i, row) in self.row_normalized().iter().enumerate() {
            let _ = write!(s, "{i:>4}");
            for v in row {
                let _ = write!(s, " {v:>5.2}");
            }
            s.push('\n');
        }
        s
    }
}

/// Recognition rate. `normalized` takes the unweighted mean of the per-class
/// correct fractions (how row-normalized tables report it); otherwise the
/// pooled fraction of trials on the diagonal.
pub fn overall_rate(m: &ConfusionMatrix, normalized: bool) -> Result<f64> {
    if let Some(i) = (0..m.k).find(|&i| m.row_sum(i) == 0) {
        return Err(Error::Config(format!("class {i} has no trials")));
    }
    if !normalized {
        return Ok(m.accuracy());
    }
    let sum: f64 = (0..m.k).map(|i| m.get(i, i) as f64 / m.row_sum(i) as f64).sum();
    Ok(sum / m.k as f64)
}

/// Collapses a pattern matrix to its four angle blocks, then takes the
/// normalized rate.
pub fn angle_marginal_rate(m: &ConfusionMatrix) -> Result<f64> {
    if m.k != NUM_PATTERNS {
        return Err(Error::Shape(format!("expected {NUM_PATTERNS} classes, got {}", m.k)));
    }
    let mut collapsed = ConfusionMatrix::new(4);
    for t in PatternId::all() {
        for p in PatternId::all() {
            collapsed.counts[t.angle().index() * 4 + p.angle().index()] += m.get(t.get(), p.get());
        }
    }
    overall_rate(&collapsed, true)
}

/// Published human-study tables, as counts out of 50 answers per pattern.
pub mod published {
    use super::ConfusionMatrix;

    const UNMASKED: [[u64; 12]; 12] = [
        [8, 1, 9, 3, 2, 6, 3, 2, 2, 5, 4, 5],
        [3, 3, 16, 6, 0, 4, 0, 3, 0, 5, 5, 5],
        [7, 1, 8, 7, 1, 7, 2, 0, 5, 7, 3, 2],
        [6, 1, 11, 7, 2, 6, 1, 0, 2, 3, 8, 3],
        [6, 2, 8, 8, 0, 10, 0, 1, 4, 4, 2, 5],
        [4, 3, 9, 6, 4, 5, 3, 3, 2, 7, 3, 1],
        [9, 2, 10, 3, 1, 4, 3, 4, 3, 4, 6, 1],
        [8, 1, 8, 6, 4, 5, 1, 1, 6, 8, 1, 1],
        [6, 1, 11, 4, 4, 2, 2, 4, 6, 1, 3, 6],
        [4, 1, 12, 5, 0, 6, 5, 2, 7, 4, 2, 2],
        [5, 5, 16, 3, 4, 2, 0, 2, 5, 3, 4, 1],
        [5, 1, 3, 2, 4, 4, 5, 2, 6, 1, 8, 9],
    ];

    const MASKED: [[u64; 12]; 12] = [
        [46, 0, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0],
        [1, 39, 0, 0, 6, 1, 0, 2, 1, 0, 0, 0],
        [2, 0, 40, 0, 0, 7, 1, 0, 0, 0, 0, 0],
        [2, 1, 1, 38, 3, 2, 0, 2, 1, 0, 0, 0],
        [6, 1, 0, 9, 29, 3, 0, 0, 2, 0, 0, 0],
        [0, 0, 1, 0, 0, 48, 0, 0, 1, 0, 0, 0],
        [4, 0, 0, 0, 0, 0, 46, 0, 0, 0, 0, 0],
        [3, 1, 0, 0, 0, 0, 1, 45, 0, 0, 0, 0],
        [0, 0, 5, 0, 1, 4, 4, 1, 33, 1, 0, 1],
        [0, 0, 0, 3, 0, 0, 0, 1, 0, 43, 0, 3],
        [0, 0, 0, 0, 0, 1, 0, 0, 1, 4, 44, 0],
        [1, 0, 0, 0, 0, 0, 0, 0, 0, 5, 0, 44],
    ];

    fn build(t: &[[u64; 12]; 12]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&t.map(|r| r.to_vec())).expect("square table")
    }

    /// Recognition without masks.
    pub fn unmasked() -> ConfusionMatrix {
        build(&UNMASKED)
    }

    /// Recognition with masks.
    pub fn masked() -> ConfusionMatrix {
        build(&MASKED)
    }
}

/// Grip range of observer trials, inclusive.
pub const TRIAL_GRIP_RANGE: (u32, u32) = (10, 30);
/// Grip at which the observer's reference templates are rendered.
pub const TEMPLATE_GRIP: u32 = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub trials_per_pattern: usize,
    pub seed: u64,
    pub fusion: FusionMode,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), trials_per_pattern: 500, seed: 0, fusion: FusionMode::Max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub confusion: ConfusionMatrix,
    pub overall_rate: f64,
}

/// The twelve ideal masked stimuli: noiseless frames at the template grip,
/// gated by their own pattern's mask.
pub fn observer_templates(sim: &SimConfig, fusion: FusionMode, ordering: MaskOrdering) -> [StimulusGrid; NUM_PATTERNS] {
    let mut out = [StimulusGrid::zeros(); NUM_PATTERNS];
    for id in PatternId::all() {
        let a = stripe_field(id.angle(), id.position(), TEMPLATE_GRIP, sim);
        let frame = TactileFrame {
            finger_a: ForceGrid10::clipped(a),
            finger_b: ForceGrid10::clipped(a).mirrored(),
            timestamp: 0.0,
        };
        let g = bicubic_resize(&merge_fingers(&frame, fusion));
        out[id.get()] = render_masked(&g, id, ordering);
    }
    out
}

/// Scales a grid so its strongest cell is 1; the zero grid is unchanged.
fn unit_peak(s: &StimulusGrid) -> StimulusGrid {
    let peak = s.values().iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    if peak == 0.0 {
        return *s;
    }
    StimulusGrid::clipped(s.values().map(|row| row.map(|v| v / peak)))
}

/// Nearest template by cellwise squared distance after scaling both grids
/// to unit peak, so grip force does not masquerade as pattern identity.
/// Ties go to the lowest id.
pub fn nearest_template(s: &StimulusGrid, templates: &[StimulusGrid; NUM_PATTERNS]) -> PatternId {
    let s = unit_peak(s);
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, t) in templates.iter().enumerate() {
        let d = s.squared_distance(&unit_peak(t));
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    PatternId::new(best).expect("index below pattern count")
}

/// Runs every trial through one pipeline tick and scores the rendered grid
/// with the nearest-template observer. Patterns run on separate threads;
/// each trial has its own RNG stream, so results do not depend on
/// scheduling.
pub fn machine_observer_study(
    model: Option<&ModelParams>,
    mode: PipelineMode,
    cfg: &StudyConfig,
) -> Result<StudyResult> {
    if cfg.trials_per_pattern == 0 {
        return Err(Error::Config("trials_per_pattern must be at least 1".into()));
    }
    cfg.sim.validate()?;
    let ordering = match mode {
        PipelineMode::Masked(o) => o,
        PipelineMode::Direct => MaskOrdering::default(),
    };
    let templates = observer_templates(&cfg.sim, cfg.fusion, ordering);
    let base = Pipeline::new(model.cloned(), cfg.fusion, Default::default())?;

    let per_pattern: Vec<Result<ConfusionMatrix>> = std::thread::scope(|scope| {
        let handles: Vec<_> = PatternId::all()
            .map(|id| {
                let mut pipe = base.clone();
                let templates = &templates;
                scope.spawn(move || -> Result<ConfusionMatrix> {
                    let mut m = ConfusionMatrix::new(NUM_PATTERNS);
                    for trial in 0..cfg.trials_per_pattern {
                        let index = (id.get() * cfg.trials_per_pattern + trial) as u64;
                        let mut rng = sample_rng(cfg.seed, index);
                        let grip = rng.random_range(TRIAL_GRIP_RANGE.0..=TRIAL_GRIP_RANGE.1);
                        let frame = synth_frame(id.angle(), id.position(), grip, &cfg.sim, &mut rng)?;
                        let snap = pipe.tick(&frame, mode)?;
                        m.record(id.get(), nearest_template(&snap.stimulus, templates).get());
                    }
                    Ok(m)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("study worker panicked")).collect()
    });

    let mut confusion = ConfusionMatrix::new(NUM_PATTERNS);
    for m in per_pattern {
        confusion.merge(&m?);
    }
    let overall_rate = overall_rate(&confusion, true)?;
    Ok(StudyResult { confusion, overall_rate })
}

/// Both matrices in table layout, followed by the summary rates.
pub fn format_study_report(direct: &StudyResult, masked: &StudyResult, cfg: &StudyConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "machine-observer study: {} trials/pattern, noise_sigma {} N, seed {}",
        cfg.trials_per_pattern, cfg.sim.noise_sigma, cfg.seed
    );
    for (name, r) in [("direct", direct), ("masked", masked)] {
        let _ = writeln!(s, "\n{name} rendering (rows = pattern, columns = answer)");
        s.push_str(&r.confusion.format_normalized());
    }
    let _ = writeln!(s);
    for (name, r) in [("direct", direct), ("masked", masked)] {
        let angle = angle_marginal_rate(&r.confusion).unwrap_or(f64::NAN);
        let _ = writeln!(s, "{name}_overall_rate = {:.4}", r.overall_rate);
        let _ = writeln!(s, "{name}_angle_rate = {angle:.4}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_rates() {
        let t1 = published::unmasked();
        let t2 = published::masked();
        for m in [&t1, &t2] {
            assert!((0..12).all(|i| m.row_sum(i) == 50));
        }
        assert!((overall_rate(&t1, true).unwrap() - 0.0967).abs() < 5e-4);
        assert!((overall_rate(&t2, true).unwrap() - 0.825).abs() < 5e-4);
        // Collapsing by angle block gives the reported angle-only figure.
        assert!((angle_marginal_rate(&t1).unwrap() - 0.28).abs() < 1e-12);
    }

    #[test]
    fn identity_and_empty_rows() {
        let mut m = ConfusionMatrix::new(12);
        for i in 0..12 {
            m.record(i, i);
        }
        assert_eq!(overall_rate(&m, true).unwrap(), 1.0);
        assert_eq!(angle_marginal_rate(&m).unwrap(), 1.0);
        let mut gap = ConfusionMatrix::new(3);
        gap.record(0, 0);
        assert!(overall_rate(&gap, true).is_err());
        assert!(angle_marginal_rate(&ConfusionMatrix::new(4)).is_err());
    }

    #[test]
    fn normalized_rate_weights_classes_equally() {
        let m = ConfusionMatrix::from_rows(&[vec![9, 1], vec![0, 90]]).unwrap();
        assert!((overall_rate(&m, true).unwrap() - 0.95).abs() < 1e-15);
        assert!((overall_rate(&m, false).unwrap() - 0.99).abs() < 1e-15);
    }

    #[test]
    fn uniform_predictor_angle_rate_is_quarter() {
        let mut rng = sample_rng(7, 0);
        let mut m = ConfusionMatrix::new(12);
        for t in 0..120_000 {
            m.record(t % 12, rng.random_range(0..12));
        }
        assert!((angle_marginal_rate(&m).unwrap() - 0.25).abs() < 0.01);
    }

    #[test]
    fn templates_are_self_nearest() {
        let t = observer_templates(&SimConfig::default(), FusionMode::Max, MaskOrdering::MaskFirst);
        for id in PatternId::all() {
            assert_eq!(nearest_template(&t[id.get()], &t), id);
            let half = StimulusGrid::clipped(t[id.get()].values().map(|r| r.map(|v| v * 0.3)));
            assert_eq!(nearest_template(&half, &t), id);
        }
    }

    #[test]
    fn report_layout() {
        let r = StudyResult { confusion: published::masked(), overall_rate: 0.825 };
        let s = format_study_report(&r, &r, &StudyConfig::default());
        assert!(s.contains("masked_overall_rate = 0.8250"));
        assert!(s.contains(" 0.92"));
        assert_eq!(s.lines().filter(|l| l.starts_with("  11")).count(), 2);
    }
}
