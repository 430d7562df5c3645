//! Direct downsizing: finger fusion, 10×10 → 3×3 bicubic resampling and the
//! per-row max-peak filter that leaves one stimulation point per linkage.

use crate::types::{
    ForceGrid10, Grid3, StimulusGrid, TactileFrame, MAX_FORCE, SENSOR_SIZE, STIM_SIZE,
};

/// Cubic convolution kernel parameter (Catmull-Rom style).
pub const CUBIC_A: f64 = -0.5;

/// Values closer than this are treated as a tie by the peak filter.
pub const TIE_EPS: f64 = 1e-12;

/// How the two finger arrays are fused into one grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Cellwise maximum after mirroring finger B back onto finger A.
    #[default]
    Max,
    FingerAOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStimulus {
    pub row: usize,
    /// Active column, `None` when the row is idle.
    pub column: Option<usize>,
    pub intensity: f64,
}

pub fn merge_fingers(frame: &TactileFrame, mode: FusionMode) -> ForceGrid10 {
    match mode {
        FusionMode::FingerAOnly => frame.finger_a.clone(),
        FusionMode::Max => {
            let b = frame.finger_b.mirrored();
            let mut out = *frame.finger_a.rows();
            for (r, row) in out.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = v.max(b.get(r, c));
                }
            }
            ForceGrid10::clipped(out)
        }
    }
}

/// Keys' cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source coordinate of output index `i` under the align-centers mapping.
pub fn source_coord(i: usize) -> f64 {
    (i as f64 + 0.5) * SENSOR_SIZE as f64 / STIM_SIZE as f64 - 0.5
}

/// Clamped tap indices and weights for each output coordinate.
fn taps() -> [[(usize, f64); 4]; STIM_SIZE] {
    let mut out = [[(0, 0.0); 4]; STIM_SIZE];
    for (i, t) in out.iter_mut().enumerate() {
        let s = source_coord(i);
        let base = s.floor() as isize;
        for (k, tap) in t.iter_mut().enumerate() {
            let idx = base - 1 + k as isize;
            let w = cubic_kernel(s - idx as f64);
            *tap = (idx.clamp(0, SENSOR_SIZE as isize - 1) as usize, w);
        }
    }
    out
}

/// Bicubic resample in newtons, before clipping and normalization.
/// Linear in the input grid.
pub fn bicubic_resize_raw(grid: &[[f64; SENSOR_SIZE]; SENSOR_SIZE]) -> Grid3 {
    let t = taps();
    let mut out = [[0.0; STIM_SIZE]; STIM_SIZE];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(r, wr) in &t[i] {
                let mut inner = 0.0;
                for &(c, wc) in &t[j] {
                    inner += wc * grid[r][c];
                }
                acc += wr * inner;
            }
            *v = acc;
        }
    }
    out
}

/// Downsizes to 3×3 and normalizes to `[0, 1]` (÷ 9 N, negative lobes
/// clipped to 0).
pub fn bicubic_resize(grid: &ForceGrid10) -> Grid3 {
    bicubic_resize_raw(grid.rows()).map(|row| row.map(|v| (v / MAX_FORCE).clamp(0.0, 1.0)))
}

/// Keeps the strongest cell in each row (ties go to the lowest column).
pub fn row_peak_filter(g: &Grid3) -> StimulusGrid {
    let mut out = [[0.0; STIM_SIZE]; STIM_SIZE];
    for (r, row) in g.iter().enumerate() {
        let mut best = 0;
        for c in 1..STIM_SIZE {
            if row[c] > row[best] + TIE_EPS {
                best = c;
            }
        }
        if row[best] > 0.0 {
            out[r][best] = row[best];
        }
    }
    StimulusGrid::clipped(out)
}

pub fn row_stimuli(s: &StimulusGrid) -> [RowStimulus; STIM_SIZE] {
    std::array::from_fn(|row| {
        let v = s.values()[row];
        let column = (0..STIM_SIZE).filter(|&c| v[c] > 0.0).max_by(|&a, &b| v[a].total_cmp(&v[b]));
        RowStimulus { row, column, intensity: column.map_or(0.0, |c| v[c]) }
    })
}

/// Full direct path: fuse, resize, peak-filter.
pub fn downsize(frame: &TactileFrame, mode: FusionMode) -> StimulusGrid {
    row_peak_filter(&bicubic_resize(&merge_fingers(frame, mode)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(f: impl Fn(usize, usize) -> f64) -> ForceGrid10 {
        let mut g = [[0.0; 10]; 10];
        for (r, row) in g.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(r, c);
            }
        }
        ForceGrid10::new(g).unwrap()
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..STIM_SIZE {
            let s: f64 = taps()[i].iter().map(|t| t.1).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
    }

    #[test]
    fn zero_and_constant_grids() {
        assert_eq!(bicubic_resize(&ForceGrid10::zeros()), [[0.0; 3]; 3]);
        let out = bicubic_resize(&grid(|_, _| 4.5));
        for v in out.iter().flatten() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_rules() {
        let a = grid(|r, c| (r * 10 + c) as f64 / 12.0);
        let frame = TactileFrame { finger_a: a.clone(), finger_b: ForceGrid10::zeros(), timestamp: 0.0 };
        assert_eq!(merge_fingers(&frame, FusionMode::Max), a);
        let frame = TactileFrame { finger_a: a.clone(), finger_b: a.mirrored(), timestamp: 0.0 };
        assert_eq!(merge_fingers(&frame, FusionMode::Max), a);
        let b = grid(|r, c| ((r * 7 + c * 3) % 9) as f64);
        let frame = TactileFrame { finger_a: a.clone(), finger_b: b.clone(), timestamp: 0.0 };
        let m = merge_fingers(&frame, FusionMode::Max);
        let bm = b.mirrored();
        for r in 0..10 {
            for c in 0..10 {
                assert!(m.get(r, c) >= a.get(r, c) && m.get(r, c) >= bm.get(r, c));
            }
        }
        assert_eq!(merge_fingers(&frame, FusionMode::FingerAOnly), a);
    }

    #[test]
    fn peak_filter_examples() {
        let s = row_peak_filter(&[[0.2, 0.9, 0.1], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0]]);
        assert_eq!(s.values(), &[[0.0, 0.9, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let rows = row_stimuli(&s);
        assert_eq!(rows[0].column, Some(1));
        assert_eq!(rows[1].column, Some(0));
        assert_eq!(rows[2].column, None);
    }

    #[test]
    fn zero_frame_maps_to_zero_stimulus() {
        assert!(downsize(&TactileFrame::zero(0.0), FusionMode::Max).is_zero());
    }

    proptest! {
        #[test]
        fn peak_filter_contract(g in prop::array::uniform3(prop::array::uniform3(0.0f64..=1.0))) {
            let s = row_peak_filter(&g);
            for row in s.values() {
                prop_assert!(row.iter().filter(|&&v| v > 0.0).count() <= 1);
            }
            prop_assert_eq!(row_peak_filter(s.values()), s);
        }

        #[test]
        fn resize_is_linear(
            a in prop::collection::vec(0.0f64..4.0, 100),
            b in prop::collection::vec(0.0f64..4.0, 100),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let to = |v: &[f64]| -> [[f64; 10]; 10] { std::array::from_fn(|r| std::array::from_fn(|c| v[r * 10 + c])) };
            let (ga, gb) = (to(&a), to(&b));
            let combo: [[f64; 10]; 10] = std::array::from_fn(|r| std::array::from_fn(|c| alpha * ga[r][c] + beta * gb[r][c]));
            let (ra, rb, rc) = (bicubic_resize_raw(&ga), bicubic_resize_raw(&gb), bicubic_resize_raw(&combo));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((rc[i][j] - (alpha * ra[i][j] + beta * rb[i][j])).abs() < 1e-12);
                }
            }
        }
    }
}
