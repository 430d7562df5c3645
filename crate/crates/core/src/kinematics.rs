//! Closed-form kinematics of the inverted five-bar linkages and the mapping
//! from stimulus rows to contact commands.
//!
//! Each linkage lives in its own plane with actuated anchors at `(0, 0)` and
//! `(l1, 0)`. The left dyad is `l2` (driven) then `l3`; the right dyad is
//! `l5` (driven) then `l4`; both distal links meet at the contact point.

use std::f64::consts::PI;

use crate::config::KeyValues;
use crate::downsample::row_stimuli;
use crate::error::{Error, Result};
use crate::types::{StimulusGrid, STIM_SIZE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageGeometry {
    l1: f64,
    l2: f64,
    l3: f64,
    l4: f64,
    l5: f64,
}

impl Default for LinkageGeometry {
    fn default() -> Self {
        Self { l1: 40.0, l2: 25.0, l3: 40.0, l4: 40.0, l5: 25.0 }
    }
}

impl LinkageGeometry {
    pub fn new(l1: f64, l2: f64, l3: f64, l4: f64, l5: f64) -> Result<Self> {
        let g = Self { l1, l2, l3, l4, l5 };
        if let Some(bad) = g.lengths().iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::Config(format!("link lengths must be positive, got {bad}")));
        }
        if !g.has_workspace() {
            return Err(Error::Config("linkage has an empty workspace".into()));
        }
        Ok(g)
    }

    pub fn lengths(&self) -> [f64; 5] {
        [self.l1, self.l2, self.l3, self.l4, self.l5]
    }

    /// Whether both dyads can reach `c`.
    pub fn reaches(&self, c: ContactTarget) -> bool {
        let dl = c.x.hypot(c.y);
        let dr = (c.x - self.l1).hypot(c.y);
        in_annulus(dl, self.l2, self.l3) && in_annulus(dr, self.l5, self.l4)
    }

    fn has_workspace(&self) -> bool {
        let span = self.l1 + self.l2 + self.l3 + self.l4 + self.l5;
        let steps = 64;
        (0..=steps).any(|i| {
            (0..=steps).any(|j| {
                let x = -span + 2.0 * span * i as f64 / steps as f64;
                let y = -span + 2.0 * span * j as f64 / steps as f64;
                self.reaches(ContactTarget { x, y })
            })
        })
    }
}

fn in_annulus(d: f64, a: f64, b: f64) -> bool {
    d <= a + b && d >= (a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactTarget {
    pub x: f64,
    pub y: f64,
}

impl ContactTarget {
    pub fn distance(&self, o: &ContactTarget) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Side of the anchor→contact line on which a dyad's elbow sits:
/// `Plus` means counter-clockwise of the contact as seen from the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elbow {
    Plus,
    Minus,
}

impl Elbow {
    fn sign(self) -> f64 {
        match self {
            Elbow::Plus => 1.0,
            Elbow::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Elbow::Plus => Elbow::Minus,
            Elbow::Minus => Elbow::Plus,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "plus" => Ok(Elbow::Plus),
            "-" | "minus" => Ok(Elbow::Minus),
            other => Err(Error::Config(format!("elbow must be + or -, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub a: Elbow,
    pub e: Elbow,
}

impl Default for Branch {
    /// Both elbows outward, away from the midline.
    fn default() -> Self {
        Self { a: Elbow::Plus, e: Elbow::Minus }
    }
}

impl Branch {
    pub fn mirrored(self) -> Self {
        Self { a: self.e.flipped(), e: self.a.flipped() }
    }

    pub fn all() -> [Branch; 4] {
        use Elbow::*;
        [
            Branch { a: Plus, e: Minus },
            Branch { a: Plus, e: Plus },
            Branch { a: Minus, e: Minus },
            Branch { a: Minus, e: Plus },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoAngles {
    pub tau_a: f64,
    pub tau_e: f64,
    pub branch: Branch,
    /// Side of the left-elbow→right-elbow line the contact sits on. The
    /// crank angles alone admit two assemblies; this picks one.
    pub assembly: Elbow,
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Solves `h + d·cos τ + e·sin τ = 0` through `t = tan(τ/2)`, i.e.
/// `(h − d)t² + 2e·t + (h + d) = 0`, returning both roots in `(−π, π]`.
fn half_angle_roots(d: f64, e: f64, h: f64, target: ContactTarget) -> Result<[f64; 2]> {
    let disc = e * e + d * d - h * h;
    if disc < 0.0 || !disc.is_finite() {
        return Err(Error::OutOfWorkspace { x: target.x, y: target.y });
    }
    let a = h - d;
    let c = h + d;
    // Cancellation-free form of (−e ± √disc) / a.
    let q = -(e + e.signum() * disc.sqrt());
    if q == 0.0 {
        // e = 0 and disc = 0: a double root, unless the quadratic vanishes.
        if a == 0.0 {
            return Err(Error::Singular(format!(
                "dyad degenerate at ({:.3}, {:.3})",
                target.x, target.y
            )));
        }
        let t = 2.0 * (-e / a).atan();
        return Ok([t, t]);
    }
    let t1 = if a == 0.0 { PI } else { 2.0 * (q / a).atan() };
    let t2 = 2.0 * (c / q).atan();
    Ok([t1, t2])
}

/// Picks the root whose elbow lies on the requested side of the
/// anchor→contact line.
fn pick_root(
    roots: [f64; 2],
    anchor: (f64, f64),
    link: f64,
    c: ContactTarget,
    elbow: Elbow,
) -> f64 {
    let (ox, oy) = anchor;
    let side = |tau: f64| cross(c.x - ox, c.y - oy, link * tau.cos(), link * tau.sin()) * elbow.sign();
    if side(roots[0]) >= side(roots[1]) {
        roots[0]
    } else {
        roots[1]
    }
}

pub fn inverse_kinematics(c: ContactTarget, g: &LinkageGeometry, branch: Branch) -> Result<ServoAngles> {
    if !(c.x.is_finite() && c.y.is_finite()) {
        return Err(Error::OutOfWorkspace { x: c.x, y: c.y });
    }
    let (x, y) = (c.x, c.y);
    let d = -2.0 * g.l2 * x;
    let e = -2.0 * g.l2 * y;
    let h = g.l2 * g.l2 + x * x + y * y - g.l3 * g.l3;
    let tau_a = pick_root(half_angle_roots(d, e, h, c)?, (0.0, 0.0), g.l2, c, branch.a);

    let xr = x - g.l1;
    let i = -2.0 * g.l5 * xr;
    let j = -2.0 * g.l5 * y;
    let k = g.l5 * g.l5 + xr * xr + y * y - g.l4 * g.l4;
    let tau_e = pick_root(half_angle_roots(i, j, k, c)?, (g.l1, 0.0), g.l5, c, branch.e);

    let (ax, ay) = (g.l2 * tau_a.cos(), g.l2 * tau_a.sin());
    let (ex, ey) = (g.l1 + g.l5 * tau_e.cos(), g.l5 * tau_e.sin());
    let assembly = if cross(ex - ax, ey - ay, x - ax, y - ay) >= 0.0 { Elbow::Plus } else { Elbow::Minus };
    Ok(ServoAngles { tau_a, tau_e, branch, assembly })
}

/// Relative tolerance for accepting an assembly on either elbow side when
/// the dyad is (nearly) straight.
const SIDE_EPS: f64 = 1e-12;

pub fn forward_kinematics(a: &ServoAngles, g: &LinkageGeometry) -> Result<ContactTarget> {
    if !(a.tau_a.is_finite() && a.tau_e.is_finite()) {
        return Err(Error::Singular("non-finite joint angle".into()));
    }
    let (ax, ay) = (g.l2 * a.tau_a.cos(), g.l2 * a.tau_a.sin());
    let (ex, ey) = (g.l1 + g.l5 * a.tau_e.cos(), g.l5 * a.tau_e.sin());
    let (dx, dy) = (ex - ax, ey - ay);
    let dist = dx.hypot(dy);
    let longest = g.lengths().iter().fold(0.0f64, |m, &l| m.max(l));
    if dist <= 1e-12 * longest {
        return Err(Error::Singular("elbow joints coincide".into()));
    }
    let along = (g.l3 * g.l3 - g.l4 * g.l4 + dist * dist) / (2.0 * dist);
    let h2 = g.l3 * g.l3 - along * along;
    if h2 < 0.0 {
        return Err(Error::Singular(format!(
            "distal links cannot meet (elbows {dist:.6} mm apart)"
        )));
    }
    let h = h2.sqrt();
    let (mx, my) = (ax + along * dx / dist, ay + along * dy / dist);
    let c = match a.assembly {
        Elbow::Plus => ContactTarget { x: mx - h * dy / dist, y: my + h * dx / dist },
        Elbow::Minus => ContactTarget { x: mx + h * dy / dist, y: my - h * dx / dist },
    };
    // The cranks must also sit on the requested elbow sides of the result.
    let tol = -SIDE_EPS * longest * longest;
    let sa = cross(c.x, c.y, ax, ay) * a.branch.a.sign();
    let se = cross(c.x - g.l1, c.y, ex - g.l1, ey) * a.branch.e.sign();
    if sa < tol || se < tol {
        return Err(Error::Singular("assembly does not match the requested branch".into()));
    }
    Ok(c)
}

/// Where each linkage points for each stimulus column, and how far it
/// travels with intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplayMap {
    /// Column → x target, mm.
    pub x_presets: [f64; STIM_SIZE],
    /// y at zero intensity (and for idle rows), mm.
    pub y_retracted: f64,
    /// y at full intensity, mm.
    pub y_engaged: f64,
}

impl Default for DisplayMap {
    fn default() -> Self {
        Self { x_presets: [8.0, 20.0, 32.0], y_retracted: 45.0, y_engaged: 30.0 }
    }
}

impl DisplayMap {
    pub fn target(&self, column: usize, intensity: f64) -> ContactTarget {
        ContactTarget {
            x: self.x_presets[column],
            y: self.y_retracted + intensity * (self.y_engaged - self.y_retracted),
        }
    }

    /// Safe pose for idle rows: centered above the base, retracted.
    pub fn retracted(&self) -> ContactTarget {
        ContactTarget { x: self.x_presets[STIM_SIZE / 2], y: self.y_retracted }
    }
}

/// Geometry, display map and branch, validated together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KinematicsConfig {
    pub geometry: LinkageGeometry,
    pub display: DisplayMap,
    pub branch: Branch,
}

impl KinematicsConfig {
    pub fn new(geometry: LinkageGeometry, display: DisplayMap, branch: Branch) -> Result<Self> {
        let cfg = Self { geometry, display, branch };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every preset column must be solvable along its whole stroke.
    pub fn validate(&self) -> Result<()> {
        let d = &self.display;
        if !(d.x_presets.iter().all(|v| v.is_finite()) && d.y_retracted.is_finite() && d.y_engaged.is_finite()) {
            return Err(Error::Config("display targets must be finite".into()));
        }
        let mut targets = vec![d.retracted()];
        for col in 0..STIM_SIZE {
            for step in 0..=8 {
                targets.push(d.target(col, step as f64 / 8.0));
            }
        }
        for t in targets {
            let angles = inverse_kinematics(t, &self.geometry, self.branch).map_err(|e| {
                Error::Config(format!("display target ({}, {}) mm unusable: {e}", t.x, t.y))
            })?;
            if forward_kinematics(&angles, &self.geometry)?.distance(&t) > 1e-6 {
                return Err(Error::Config(format!("display target ({}, {}) mm is singular", t.x, t.y)));
            }
        }
        Ok(())
    }

    /// Reads `l1`..`l5`, `x_preset_0`..`x_preset_2`, `y_retracted`,
    /// `y_engaged`, `branch_a`, `branch_e` (each `+` or `-`); absent keys keep
    /// their defaults. Unknown keys are left in `kv` for the caller.
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        let g = &mut cfg.geometry;
        for (key, slot) in [("l1", &mut g.l1), ("l2", &mut g.l2), ("l3", &mut g.l3), ("l4", &mut g.l4), ("l5", &mut g.l5)] {
            if let Some(v) = kv.take_f64(key)? {
                *slot = v;
            }
        }
        cfg.geometry = LinkageGeometry::new(g.l1, g.l2, g.l3, g.l4, g.l5)?;
        for (i, slot) in cfg.display.x_presets.iter_mut().enumerate() {
            if let Some(v) = kv.take_f64(&format!("x_preset_{i}"))? {
                *slot = v;
            }
        }
        if let Some(v) = kv.take_f64("y_retracted")? {
            cfg.display.y_retracted = v;
        }
        if let Some(v) = kv.take_f64("y_engaged")? {
            cfg.display.y_engaged = v;
        }
        if let Some(v) = kv.take("branch_a") {
            cfg.branch.a = Elbow::parse(&v)?;
        }
        if let Some(v) = kv.take("branch_e") {
            cfg.branch.e = Elbow::parse(&v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactCommand {
    /// Linkage (stimulus row) index.
    pub linkage: usize,
    /// Active column, if the row carries a stimulus.
    pub column: Option<usize>,
    pub intensity: f64,
    pub target: ContactTarget,
    pub angles: ServoAngles,
}

impl ContactCommand {
    pub fn active(&self) -> bool {
        self.column.is_some()
    }
}

/// One command per linkage: active rows press at their column's preset x
/// with depth proportional to intensity; idle rows retract.
pub fn grid_to_contacts(s: &StimulusGrid, cfg: &KinematicsConfig) -> Result<[ContactCommand; STIM_SIZE]> {
    let rows = row_stimuli(s);
    let mut out = Vec::with_capacity(STIM_SIZE);
    for r in rows {
        let target = match r.column {
            Some(c) => cfg.display.target(c, r.intensity),
            None => cfg.display.retracted(),
        };
        let angles = inverse_kinematics(target, &cfg.geometry, cfg.branch)?;
        out.push(ContactCommand { linkage: r.row, column: r.column, intensity: r.intensity, target, angles });
    }
    Ok(out.try_into().expect("one command per row"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> LinkageGeometry {
        LinkageGeometry::default()
    }

    #[test]
    fn symmetric_target_gives_mirrored_angles() {
        let c = ContactTarget { x: 20.0, y: 40.0 };
        let a = inverse_kinematics(c, &g(), Branch::default()).unwrap();
        let mut diff = a.tau_e - (PI - a.tau_a);
        diff = (diff + PI).rem_euclid(2.0 * PI) - PI;
        assert!(diff.abs() < 1e-12, "{a:?}");
        // Elbow-out: left elbow left of the midline, right elbow right of it.
        assert!(g().l2 * a.tau_a.cos() < 20.0);
        assert!(40.0 + g().l5 * a.tau_e.cos() > 20.0);
    }

    #[test]
    fn vertical_cranks_land_on_midline() {
        let a = ServoAngles { tau_a: PI / 2.0, tau_e: PI / 2.0, branch: Branch::default(), assembly: Elbow::Plus };
        let c = forward_kinematics(&a, &g()).unwrap();
        assert!((c.x - 20.0).abs() < 1e-12);
        assert!((c.y - (25.0 + (40f64.powi(2) - 20f64.powi(2)).sqrt())).abs() < 1e-9);
    }

    #[test]
    fn far_target_is_out_of_workspace() {
        for c in [
            ContactTarget { x: 0.0, y: 66.0 },
            ContactTarget { x: 3.0, y: 1.0 },
            ContactTarget { x: f64::NAN, y: 1.0 },
        ] {
            match inverse_kinematics(c, &g(), Branch::default()) {
                Err(Error::OutOfWorkspace { .. }) => {}
                other => panic!("{c:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn coincident_elbows_rejected() {
        // l2 = l5 = l1/2 puts both cranks on the same point.
        let geo = LinkageGeometry::new(40.0, 20.0, 30.0, 30.0, 20.0).unwrap();
        let a = ServoAngles { tau_a: 0.0, tau_e: PI, branch: Branch::default(), assembly: Elbow::Plus };
        assert!(matches!(forward_kinematics(&a, &geo), Err(Error::Singular(_))));
    }

    #[test]
    fn linear_fallback_matches_quadratic() {
        // Choose y so that h = d for the left dyad: x²+y²+l2²−l3² = −2·l2·x.
        let x = 10.0;
        let y = (g().l3.powi(2) - g().l2.powi(2) - x * x - 2.0 * g().l2 * x).sqrt();
        let c = ContactTarget { x, y };
        for b in Branch::all() {
            let a = inverse_kinematics(c, &g(), b).unwrap();
            let back = forward_kinematics(&a, &g()).unwrap();
            assert!(back.distance(&c) < 1e-9, "{b:?}: {back:?}");
        }
    }

    #[test]
    fn zero_grid_retracts_everything() {
        let cfg = KinematicsConfig::default();
        let cmds = grid_to_contacts(&StimulusGrid::zeros(), &cfg).unwrap();
        for (i, c) in cmds.iter().enumerate() {
            assert_eq!(c.linkage, i);
            assert!(!c.active());
            assert_eq!(c.target, ContactTarget { x: 20.0, y: 45.0 });
        }
    }

    #[test]
    fn full_intensity_center_engages() {
        let cfg = KinematicsConfig::default();
        let mut v = [[0.0; 3]; 3];
        v[1][1] = 1.0;
        v[0][0] = 0.5;
        v[2][2] = 0.25;
        let cmds = grid_to_contacts(&StimulusGrid::new(v).unwrap(), &cfg).unwrap();
        assert_eq!(cmds[1].target, ContactTarget { x: 20.0, y: 30.0 });
        assert!(cmds[1].angles.tau_a.is_finite() && cmds[1].angles.tau_e.is_finite());
        assert_eq!(cmds[0].target, ContactTarget { x: 8.0, y: 37.5 });
        assert_eq!(cmds[2].target.x, 32.0);
    }

    #[test]
    fn bad_display_rejected() {
        let display = DisplayMap { y_engaged: 80.0, ..Default::default() };
        assert!(KinematicsConfig::new(g(), display, Branch::default()).is_err());
        assert!(LinkageGeometry::new(40.0, -1.0, 40.0, 40.0, 25.0).is_err());
    }
}
