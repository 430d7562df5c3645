//! Label taxonomy and the value types shared by every stage of the pipeline.
//!
//! Pattern numbering groups ids by angle in blocks of three, with position
//! order (center, left, right) inside each block:
//!
//! | ids   | angle |
//! |-------|-------|
//! | 0–2   | 0°    |
//! | 3–5   | 45°   |
//! | 6–8   | 135°  |
//! | 9–11  | 90°   |
//!
//! Ids 0, 4, 5 and 6 are fixed by the reported experiments; the rest of the
//! layout is inferred and frozen here.

use std::fmt;

use crate::error::{Error, Result};

/// Side length of one fingertip sensor array.
pub const SENSOR_SIZE: usize = 10;
/// Side length of the stimulation grid.
pub const STIM_SIZE: usize = 3;
/// Upper end of the sensor's force range, in newtons.
pub const MAX_FORCE: f64 = 9.0;
/// Number of distinct tilt/position patterns.
pub const NUM_PATTERNS: usize = 12;

/// Pipette tilt angle class.
///
/// Orientation convention (matrix coordinates, row index grows downward):
/// the stripe direction is `(sin θ, cos θ)` in `(row, col)`, so 0° is a
/// horizontal stripe, 90° vertical, 45° follows the main diagonal and 135°
/// the anti-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AngleClass {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl AngleClass {
    pub const ALL: [AngleClass; 4] = [Self::Deg0, Self::Deg45, Self::Deg90, Self::Deg135];

    /// Serialized index, 0–3 in ascending angle order.
    pub fn index(self) -> usize {
        match self {
            Self::Deg0 => 0,
            Self::Deg45 => 1,
            Self::Deg90 => 2,
            Self::Deg135 => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::OutOfRange { what: "angle class", value: i as i64, max: 3 })
    }

    pub fn degrees(self) -> u32 {
        match self {
            Self::Deg0 => 0,
            Self::Deg45 => 45,
            Self::Deg90 => 90,
            Self::Deg135 => 135,
        }
    }

    pub fn from_degrees(deg: u32) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.degrees() == deg)
            .ok_or(Error::OutOfRange { what: "angle (degrees)", value: deg as i64, max: 135 })
    }

    /// Unit vector along the stripe, `(row, col)`.
    pub fn direction(self) -> (f64, f64) {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Self::Deg0 => (0.0, 1.0),
            Self::Deg45 => (h, h),
            Self::Deg90 => (1.0, 0.0),
            Self::Deg135 => (h, -h),
        }
    }

    /// Unit normal pointing toward the `Right` (or, for 0°, `Down`) side.
    pub fn normal(self) -> (f64, f64) {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Self::Deg0 => (1.0, 0.0),
            Self::Deg45 => (-h, h),
            Self::Deg90 => (0.0, 1.0),
            Self::Deg135 => (h, h),
        }
    }

    /// Position of this angle's block in the pattern numbering.
    fn block(self) -> usize {
        match self {
            Self::Deg0 => 0,
            Self::Deg45 => 1,
            Self::Deg135 => 2,
            Self::Deg90 => 3,
        }
    }

    fn from_block(b: usize) -> Self {
        [Self::Deg0, Self::Deg45, Self::Deg135, Self::Deg90][b]
    }
}

impl fmt::Display for AngleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}deg", self.degrees())
    }
}

/// Pipette position class. For 0° the variants read as
/// `Center`, `Up` (= `Left`) and `Down` (= `Right`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PositionClass {
    Center,
    Left,
    Right,
}

impl PositionClass {
    pub const ALL: [PositionClass; 3] = [Self::Center, Self::Left, Self::Right];

    pub fn index(self) -> usize {
        match self {
            Self::Center => 0,
            Self::Left => 1,
            Self::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::OutOfRange { what: "position class", value: i as i64, max: 2 })
    }

    /// Signed shift along the angle's normal: −1, 0 or +1.
    pub fn shift(self) -> i32 {
        match self {
            Self::Center => 0,
            Self::Left => -1,
            Self::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Center => "center",
            Self::Left => "left",
            Self::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Self::Center),
            "left" | "up" => Ok(Self::Left),
            "right" | "down" => Ok(Self::Right),
            other => Err(Error::Parse(format!("unknown position {other:?}"))),
        }
    }
}

impl fmt::Display for PositionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the twelve rendered patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatternId(u8);

impl PatternId {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_PATTERNS {
            Ok(Self(id as u8))
        } else {
            Err(Error::OutOfRange { what: "pattern id", value: id as i64, max: 11 })
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = PatternId> {
        (0..NUM_PATTERNS as u8).map(PatternId)
    }

    pub fn angle(self) -> AngleClass {
        AngleClass::from_block(self.get() / 3)
    }

    pub fn position(self) -> PositionClass {
        PositionClass::ALL[self.get() % 3]
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn pattern_id(angle: AngleClass, position: PositionClass) -> PatternId {
    PatternId((angle.block() * 3 + position.index()) as u8)
}

pub fn pattern_of(id: PatternId) -> (AngleClass, PositionClass) {
    (id.angle(), id.position())
}

/// A 10×10 force map in newtons, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceGrid10([[f64; SENSOR_SIZE]; SENSOR_SIZE]);

impl ForceGrid10 {
    pub fn zeros() -> Self {
        Self([[0.0; SENSOR_SIZE]; SENSOR_SIZE])
    }

    /// Validates that every cell is finite and within `[0, 9]` N.
    pub fn new(values: [[f64; SENSOR_SIZE]; SENSOR_SIZE]) -> Result<Self> {
        for (r, row) in values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=MAX_FORCE).contains(&v) {
                    return Err(Error::InvalidForce { row: r, col: c, value: v });
                }
            }
        }
        Ok(Self(values))
    }

    /// Clips every cell into `[0, 9]` N; NaN becomes 0.
    pub fn clipped(mut values: [[f64; SENSOR_SIZE]; SENSOR_SIZE]) -> Self {
        for v in values.iter_mut().flatten() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, MAX_FORCE) };
        }
        Self(values)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != SENSOR_SIZE * SENSOR_SIZE {
            return Err(Error::Shape(format!(
                "force grid needs {} values, got {}",
                SENSOR_SIZE * SENSOR_SIZE,
                values.len()
            )));
        }
        let mut g = [[0.0; SENSOR_SIZE]; SENSOR_SIZE];
        for (i, &v) in values.iter().enumerate() {
            g[i / SENSOR_SIZE][i % SENSOR_SIZE] = v;
        }
        Self::new(g)
    }

    pub fn rows(&self) -> &[[f64; SENSOR_SIZE]; SENSOR_SIZE] {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flatten().copied()
    }

    /// Flip about the vertical axis (column `c` ↔ `9 − c`).
    pub fn mirrored(&self) -> Self {
        let mut out = self.0;
        for row in out.iter_mut() {
            row.reverse();
        }
        Self(out)
    }

    pub fn total(&self) -> f64 {
        self.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.iter().fold(0.0, f64::max)
    }
}

/// One synchronized reading of both fingertip arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub finger_a: ForceGrid10,
    pub finger_b: ForceGrid10,
    /// Seconds on a monotonic clock.
    pub timestamp: f64,
}

impl TactileFrame {
    pub fn zero(timestamp: f64) -> Self {
        Self { finger_a: ForceGrid10::zeros(), finger_b: ForceGrid10::zeros(), timestamp }
    }
}

pub type Grid3 = [[f64; STIM_SIZE]; STIM_SIZE];

/// Normalized 3×3 stimulation intensities. Row index is the linkage index.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StimulusGrid(Grid3);

impl StimulusGrid {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn new(values: Grid3) -> Result<Self> {
        for (r, row) in values.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidIntensity { row: r, col: c, value: v });
                }
            }
        }
        Ok(Self(values))
    }

    /// Clips into `[0, 1]`; NaN becomes 0.
    pub fn clipped(mut values: Grid3) -> Self {
        for v in values.iter_mut().flatten() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(values)
    }

    pub fn values(&self) -> &Grid3 {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    /// Cells with nonzero intensity.
    pub fn support(&self) -> [[bool; STIM_SIZE]; STIM_SIZE] {
        self.0.map(|row| row.map(|v| v > 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn squared_distance(&self, other: &StimulusGrid) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Boolean 3×3 gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Mask(pub [[bool; STIM_SIZE]; STIM_SIZE]);

impl Mask {
    pub fn all(value: bool) -> Self {
        Self([[value; STIM_SIZE]; STIM_SIZE])
    }

    pub fn cells(&self) -> &[[bool; STIM_SIZE]; STIM_SIZE] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().flatten().filter(|&&b| b).count()
    }

    pub fn contains(&self, support: &[[bool; STIM_SIZE]; STIM_SIZE]) -> bool {
        self.0
            .iter()
            .flatten()
            .zip(support.iter().flatten())
            .all(|(&m, &s)| m || !s)
    }

    /// Row-major `0`/`1` string, e.g. `000111000`.
    pub fn to_bits(&self) -> String {
        self.0.iter().flatten().map(|&b| if b { '1' } else { '0' }).collect()
    }
}
