//! The twelve 3×3 pattern masks and Boolean gating of the downsized grid.
//!
//! Each mask rasterizes its pattern's line onto the stimulation grid with
//! the shift `s ∈ {−1, 0, +1}` given by the position class:
//!
//! | angle | cells                |
//! |-------|----------------------|
//! | 0°    | row `r = 1 + s`      |
//! | 90°   | column `c = 1 + s`   |
//! | 45°   | `c − r = s`          |
//! | 135°  | `r + c = 2 + s`      |
//!
//! ```text
//! id  angle pos     mask
//!  0   0°   center  000 111 000
//!  1   0°   up      111 000 000
//!  2   0°   down    000 000 111
//!  3  45°   center  100 010 001
//!  4  45°   left    000 100 010
//!  5  45°   right   010 001 000
//!  6 135°   center  001 010 100
//!  7 135°   left    010 100 000
//!  8 135°   right   000 001 010
//!  9  90°   center  010 010 010
//! 10  90°   left    100 100 100
//! 11  90°   right   001 001 001
//! ```

use std::io::Write;
use std::sync::OnceLock;

use crate::downsample::row_peak_filter;
use crate::error::Result;
use crate::types::{AngleClass, Grid3, Mask, PatternId, StimulusGrid, NUM_PATTERNS, STIM_SIZE};

/// Order of gating and peak filtering in masked rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskOrdering {
    /// AND with the mask, then keep each row's peak.
    #[default]
    MaskFirst,
    /// Keep each row's peak, then AND with the mask.
    PeakFirst,
}

fn rasterize(id: PatternId) -> Mask {
    let s = id.position().shift();
    let mut cells = [[false; STIM_SIZE]; STIM_SIZE];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let (r, c) = (r as i32, c as i32);
            *cell = match id.angle() {
                AngleClass::Deg0 => r == 1 + s,
                AngleClass::Deg90 => c == 1 + s,
                AngleClass::Deg45 => c - r == s,
                AngleClass::Deg135 => r + c == 2 + s,
            };
        }
    }
    Mask(cells)
}

/// The frozen mask table, indexed by pattern id.
pub fn mask_table() -> &'static [Mask; NUM_PATTERNS] {
    static TABLE: OnceLock<[Mask; NUM_PATTERNS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [Mask::default(); NUM_PATTERNS];
        for id in PatternId::all() {
            t[id.get()] = rasterize(id);
        }
        t
    })
}

pub fn mask_for(id: PatternId) -> Mask {
    mask_table()[id.get()]
}

/// Cellwise AND: values pass where the mask is set, 0 elsewhere.
pub fn apply_mask(g: &Grid3, m: &Mask) -> Grid3 {
    let mut out = *g;
    for (row, mrow) in out.iter_mut().zip(m.cells()) {
        for (v, &keep) in row.iter_mut().zip(mrow) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    out
}

pub fn render_masked(g: &Grid3, id: PatternId, ordering: MaskOrdering) -> StimulusGrid {
    let m = mask_for(id);
    match ordering {
        MaskOrdering::MaskFirst => row_peak_filter(&apply_mask(g, &m)),
        MaskOrdering::PeakFirst => {
            StimulusGrid::clipped(apply_mask(row_peak_filter(g).values(), &m))
        }
    }
}

/// Writes the table as twelve lines of nine `0`/`1` characters, row-major.
pub fn export_mask_table<W: Write>(mut w: W) -> Result<()> {
    for m in mask_table() {
        writeln!(w, "{}", m.to_bits())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(i: usize) -> PatternId {
        PatternId::new(i).unwrap()
    }

    #[test]
    fn table_matches_documented_layout() {
        let expected = [
            "000111000", "111000000", "000000111", "100010001", "000100010", "010001000",
            "001010100", "010100000", "000001010", "010010010", "100100100", "001001001",
        ];
        let mut buf = Vec::new();
        export_mask_table(&mut buf).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
        assert_eq!(lines, expected);
    }

    #[test]
    fn masks_distinct_and_nontrivial() {
        let t = mask_table();
        for i in 0..NUM_PATTERNS {
            assert!(t[i].count() >= 2);
            for j in 0..i {
                assert_ne!(t[i], t[j], "masks {i} and {j} coincide");
            }
        }
        assert_ne!(mask_for(id(4)), mask_for(id(5)));
    }

    #[test]
    fn uniform_grid_mask_first() {
        let g = [[0.5; 3]; 3];
        let s = render_masked(&g, id(0), MaskOrdering::MaskFirst);
        assert_eq!(s.values(), &[[0.0; 3], [0.5, 0.0, 0.0], [0.0; 3]]);
        for i in PatternId::all() {
            assert!(render_masked(&[[0.0; 3]; 3], i, MaskOrdering::MaskFirst).is_zero());
        }
    }

    #[test]
    fn peak_first_drops_rows_peaking_outside_mask() {
        // Mask 9 is the middle column; only row 2 peaks inside it.
        let g = [[0.9, 0.1, 0.1], [0.1, 0.2, 0.8], [0.1, 0.7, 0.1]];
        let s = render_masked(&g, id(9), MaskOrdering::PeakFirst);
        assert_eq!(s.values(), &[[0.0; 3], [0.0; 3], [0.0, 0.7, 0.0]]);
        let s = render_masked(&g, id(9), MaskOrdering::MaskFirst);
        assert_eq!(s.values(), &[[0.0, 0.1, 0.0], [0.0, 0.2, 0.0], [0.0, 0.7, 0.0]]);
    }

    #[test]
    fn supports_of_ideal_renders_are_distinct() {
        // Every row of a uniform grid passes through the mask-first chain to
        // the lowest masked column; the resulting supports must separate all
        // twelve patterns.
        let g = [[1.0; 3]; 3];
        let supports: Vec<_> =
            PatternId::all().map(|i| render_masked(&g, i, MaskOrdering::MaskFirst).support()).collect();
        for i in 0..NUM_PATTERNS {
            for j in 0..i {
                assert_ne!(supports[i], supports[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn and_identities(g in prop::array::uniform3(prop::array::uniform3(0.0f64..=1.0))) {
            prop_assert_eq!(apply_mask(&g, &Mask::all(true)), g);
            prop_assert_eq!(apply_mask(&g, &Mask::all(false)), [[0.0; 3]; 3]);
            for i in PatternId::all() {
                let m = mask_for(i);
                let once = apply_mask(&g, &m);
                prop_assert_eq!(apply_mask(&once, &m), once);
            }
        }

        #[test]
        fn support_containment(
            g in prop::array::uniform3(prop::array::uniform3(0.0f64..=1.0)),
            i in 0usize..12,
        ) {
            for ordering in [MaskOrdering::MaskFirst, MaskOrdering::PeakFirst] {
                let s = render_masked(&g, id(i), ordering);
                prop_assert!(mask_for(id(i)).contains(&s.support()));
            }
        }
    }
}
