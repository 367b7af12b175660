//! Coordination-space geometry for disc robots moving on straight paths.
//!
//! Every conflicting pair owns a [`CrossSection`]: the open set of position
//! pairs where the two discs overlap. Positions are absolute curvilinear
//! coordinates along each path; the section stores the coordinate of the
//! crossing point on each path (`offsets`) and works internally in local
//! coordinates `a = x_i - offsets.0`, `b = x_j - offsets.1`.
//!
//! Completed regions are tested through the lower threshold
//! `h(a) = inf { b : exists a' >= a with (a', b) in region }`, which is convex
//! and non-decreasing up to the upper bound of the winner axis and `+inf`
//! beyond it. Both supported shapes are symmetric under `(a, b) -> (b, a)`, so
//! one threshold function serves both precedence directions.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Absolute tolerance on threshold comparisons (meters).
pub const EPS: f64 = 1e-9;

pub type Configuration = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    pub id: usize,
    pub origin: [f64; 2],
    /// Radians in `[0, 2pi)`.
    pub heading: f64,
    pub entry_pos: f64,
    pub exit_pos: f64,
}

impl PathGeometry {
    pub fn new(id: usize, origin: [f64; 2], heading: f64, entry_pos: f64, exit_pos: f64) -> Result<Self> {
        if !(origin[0].is_finite() && origin[1].is_finite() && heading.is_finite()) {
            return Err(Error::InvalidGeometry(format!("path {id}: non-finite origin or heading")));
        }
        if !(entry_pos < exit_pos) {
            return Err(Error::InvalidGeometry(format!("path {id}: entry {entry_pos} must precede exit {exit_pos}")));
        }
        Ok(PathGeometry { id, origin, heading: heading.rem_euclid(TAU), entry_pos, exit_pos })
    }

    pub fn direction(&self) -> [f64; 2] {
        [self.heading.cos(), self.heading.sin()]
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let d = self.direction();
        [self.origin[0] + s * d[0], self.origin[1] + s * d[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectionKind {
    /// `a^2 + b^2 - 2ab cos(theta) < D^2`.
    Ellipse { cos: f64, sin: f64, diameter: f64 },
    /// `|a - b| < length` with both coordinates inside `(lo, hi)`.
    Band { length: f64, lo: f64, hi: f64 },
}

/// Which robot of `pair` passes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precedence {
    First,
    Second,
}

impl SectionKind {
    /// Open interval covered by the region on either local axis.
    pub fn extent(&self) -> (f64, f64) {
        match *self {
            SectionKind::Ellipse { sin, diameter, .. } => (-diameter / sin, diameter / sin),
            SectionKind::Band { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        match *self {
            SectionKind::Ellipse { cos, diameter, .. } => a * a + b * b - 2.0 * a * b * cos < diameter * diameter,
            SectionKind::Band { length, lo, hi } => a > lo && a < hi && b > lo && b < hi && (a - b).abs() < length,
        }
    }

    /// The lower threshold `h`.
    pub fn floor(&self, a: f64) -> f64 {
        if a >= self.extent().1 {
            f64::INFINITY
        } else {
            self.floor_closed(a)
        }
    }

    /// `h` extended by continuity up to and including the upper extent.
    fn floor_closed(&self, a: f64) -> f64 {
        match *self {
            SectionKind::Ellipse { cos, sin, diameter } => {
                if a <= self.knot() {
                    -diameter / sin
                } else {
                    a * cos - (diameter * diameter - a * a * sin * sin).max(0.0).sqrt()
                }
            }
            SectionKind::Band { length, lo, .. } => lo.max(a - length),
        }
    }

    /// Where `h` leaves its constant part.
    fn knot(&self) -> f64 {
        match *self {
            SectionKind::Ellipse { cos, sin, diameter } => -cos * diameter / sin,
            SectionKind::Band { length, lo, .. } => lo + length,
        }
    }

    /// Point of the smooth part of `h` with derivative `slope`.
    fn tangent_point(&self, slope: f64) -> Option<f64> {
        match *self {
            SectionKind::Ellipse { cos, sin, diameter } => {
                if slope <= 0.0 {
                    return None;
                }
                let m = slope - cos;
                let a = m * diameter / (sin * (sin * sin + m * m).sqrt());
                (a > self.knot() && a < diameter / sin).then_some(a)
            }
            SectionKind::Band { .. } => None,
        }
    }

    /// `max_t b(t) - h(a(t))` over `t in [0, 1]` for the segment `(a0, b0) + t (da, db)`,
    /// `da, db >= 0`. The difference is concave on the finite part of `h`, so only
    /// the endpoints, the knot and the tangent point need evaluating.
    fn sweep_max(&self, a0: f64, b0: f64, da: f64, db: f64) -> f64 {
        let hi = self.extent().1;
        if a0 >= hi {
            return f64::NEG_INFINITY;
        }
        let t_end = if da > 0.0 { ((hi - a0) / da).min(1.0) } else { 1.0 };
        let eval = |t: f64| b0 + t * db - self.floor_closed((a0 + t * da).min(hi));
        let mut best = eval(0.0).max(eval(t_end));
        if da > 0.0 {
            let tk = (self.knot() - a0) / da;
            if tk > 0.0 && tk < t_end {
                best = best.max(eval(tk));
            }
            if let Some(a) = self.tangent_point(db / da) {
                let t = (a - a0) / da;
                if t > 0.0 && t < t_end {
                    best = best.max(eval(t));
                }
            }
        }
        best
    }

    fn segment_hits(&self, a0: f64, b0: f64, da: f64, db: f64) -> bool {
        match *self {
            SectionKind::Ellipse { cos, diameter, .. } => {
                let qa = da * da + db * db - 2.0 * cos * da * db;
                let qb = 2.0 * (a0 * da + b0 * db - cos * (a0 * db + b0 * da));
                let q = |t: f64| {
                    let (a, b) = (a0 + t * da, b0 + t * db);
                    a * a + b * b - 2.0 * a * b * cos
                };
                let mut m = q(0.0).min(q(1.0));
                if qa > 0.0 {
                    let t = -qb / (2.0 * qa);
                    if t > 0.0 && t < 1.0 {
                        m = m.min(q(t));
                    }
                }
                m < diameter * diameter - EPS * diameter
            }
            SectionKind::Band { length, lo, hi } => {
                let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
                for (p, d) in [(a0, da), (b0, db)] {
                    if d == 0.0 {
                        if !(p > lo && p < hi) {
                            return false;
                        }
                    } else {
                        t0 = t0.max((lo - p) / d);
                        t1 = t1.min((hi - p) / d);
                    }
                }
                if t0 >= t1 {
                    return false;
                }
                let f = |t: f64| (a0 + t * da) - (b0 + t * db);
                let (f0, f1) = (f(t0), f(t1));
                let m = if f0.signum() != f1.signum() { 0.0 } else { f0.abs().min(f1.abs()) };
                m < length - EPS
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub pair: (usize, usize),
    pub kind: SectionKind,
    /// Absolute coordinate of the local origin on each axis.
    pub offsets: (f64, f64),
    pub bounds_i: (f64, f64),
    pub bounds_j: (f64, f64),
}

impl CrossSection {
    /// Crossing of two straight paths at angle `theta` (radians, in `(0, pi)`).
    pub fn ellipse(pair: (usize, usize), theta: f64, diameter: f64, offsets: (f64, f64)) -> Result<Self> {
        let (sin, cos) = theta.sin_cos();
        if !(diameter > 0.0) || !(sin > 1e-12) {
            return Err(Error::InvalidGeometry(format!("crossing angle {theta} or diameter {diameter}")));
        }
        let kind = SectionKind::Ellipse { cos, sin, diameter };
        Ok(Self::from_kind(pair, kind, offsets))
    }

    /// Same-path following region truncated to the local window `(lo, hi)`.
    pub fn band(pair: (usize, usize), length: f64, window: (f64, f64), offsets: (f64, f64)) -> Result<Self> {
        if !(length > 0.0) || !(window.0 < window.1) {
            return Err(Error::InvalidGeometry(format!("band length {length} window {window:?}")));
        }
        let kind = SectionKind::Band { length, lo: window.0, hi: window.1 };
        Ok(Self::from_kind(pair, kind, offsets))
    }

    fn from_kind(pair: (usize, usize), kind: SectionKind, offsets: (f64, f64)) -> Self {
        let (lo, hi) = kind.extent();
        CrossSection {
            pair,
            kind,
            offsets,
            bounds_i: (lo + offsets.0, hi + offsets.0),
            bounds_j: (lo + offsets.1, hi + offsets.1),
        }
    }

    /// Same section with the roles of the two robots exchanged.
    pub fn swapped(&self) -> CrossSection {
        CrossSection {
            pair: (self.pair.1, self.pair.0),
            kind: self.kind,
            offsets: (self.offsets.1, self.offsets.0),
            bounds_i: self.bounds_j,
            bounds_j: self.bounds_i,
        }
    }

    /// Relabels the two robots without touching geometry.
    pub fn relabeled(&self, pair: (usize, usize)) -> CrossSection {
        CrossSection { pair, ..self.clone() }
    }

    pub fn scale(&self) -> f64 {
        match self.kind {
            SectionKind::Ellipse { diameter, .. } => diameter,
            SectionKind::Band { length, .. } => length,
        }
    }

    pub fn bounds_of(&self, robot: usize) -> Option<(f64, f64)> {
        if robot == self.pair.0 {
            Some(self.bounds_i)
        } else if robot == self.pair.1 {
            Some(self.bounds_j)
        } else {
            None
        }
    }

    /// Physical overlap at `p = (x_i, x_j)`.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        self.kind.contains(p.0 - self.offsets.0, p.1 - self.offsets.1)
    }

    pub fn in_completed(&self, p: (f64, f64), prec: Precedence) -> bool {
        self.in_completed_inflated(p, prec, 0.0)
    }

    /// Membership in the completed region dilated by `[-r, r]^2`; negative `r` erodes.
    pub fn in_completed_inflated(&self, p: (f64, f64), prec: Precedence, r: f64) -> bool {
        let first = prec == Precedence::First;
        let (xw, xl) = if first { (p.0, p.1) } else { (p.1, p.0) };
        self.excess(first, xw, xl, r) > EPS
    }

    /// `x_l + r - h(x_w - r)` in absolute coordinates; positive inside the completion.
    pub fn excess(&self, winner_first: bool, xw: f64, xl: f64, r: f64) -> f64 {
        let (ow, ol) = if winner_first { self.offsets } else { (self.offsets.1, self.offsets.0) };
        xl - ol + r - self.kind.floor(xw - ow - r)
    }

    /// Loser coordinate above which the configuration is in the completion.
    pub fn threshold(&self, prec: Precedence, x_winner: f64) -> f64 {
        let (ow, ol) = match prec {
            Precedence::First => self.offsets,
            Precedence::Second => (self.offsets.1, self.offsets.0),
        };
        ol + self.kind.floor(x_winner - ow)
    }

    /// Whether the non-decreasing segment `p0 -> p1` meets the `r`-dilated completion.
    pub fn segment_enters(&self, p0: (f64, f64), p1: (f64, f64), prec: Precedence, r: f64) -> bool {
        let first = prec == Precedence::First;
        let (w0, l0, w1, l1) = if first { (p0.0, p0.1, p1.0, p1.1) } else { (p0.1, p0.0, p1.1, p1.0) };
        self.sweep_excess(first, (w0, l0), (w1, l1), r) > EPS
    }

    /// `max` of [`CrossSection::excess`] along a non-decreasing segment given in
    /// (winner, loser) coordinates.
    pub fn sweep_excess(&self, winner_first: bool, from: (f64, f64), to: (f64, f64), r: f64) -> f64 {
        let (ow, ol) = if winner_first { self.offsets } else { (self.offsets.1, self.offsets.0) };
        let (dw, dl) = ((to.0 - from.0).max(0.0), (to.1 - from.1).max(0.0));
        self.kind.sweep_max(from.0 - ow - r, from.1 - ol + r, dw, dl)
    }

    /// Whether the segment `p0 -> p1` passes through the physical overlap region.
    pub fn segment_collides(&self, p0: (f64, f64), p1: (f64, f64)) -> bool {
        let (a0, b0) = (p0.0 - self.offsets.0, p0.1 - self.offsets.1);
        self.kind.segment_hits(a0, b0, p1.0 - p0.0, p1.1 - p0.1)
    }
}

fn cross(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[1] - u[1] * v[0]
}

fn dot(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[0] + u[1] * v[1]
}

/// Collision region between robots of diameter `diameter` on two straight
/// paths, or `None` when they can never touch.
pub fn build_cross_section(
    path_i: &PathGeometry,
    path_j: &PathGeometry,
    diameter: f64,
) -> Result<Option<CrossSection>> {
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::InvalidGeometry(format!("diameter {diameter}")));
    }
    let (ui, uj) = (path_i.direction(), path_j.direction());
    let w = [path_j.origin[0] - path_i.origin[0], path_j.origin[1] - path_i.origin[1]];
    let pair = (path_i.id, path_j.id);
    let sin = cross(ui, uj);
    if sin.abs() > 1e-12 {
        let si = cross(w, uj) / sin;
        let sj = cross(w, ui) / sin;
        let theta = dot(ui, uj).clamp(-1.0, 1.0).acos();
        return CrossSection::ellipse(pair, theta, diameter, (si, sj)).map(Some);
    }
    let lateral = cross(w, ui).abs();
    if lateral >= diameter {
        return Ok(None);
    }
    if dot(ui, uj) < 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "paths {} and {} run head-on within one diameter",
            path_i.id, path_j.id
        )));
    }
    let length = (diameter * diameter - lateral * lateral).sqrt();
    let off_j = -dot(w, ui);
    let lo = path_i.entry_pos.min(path_j.entry_pos - off_j) - 2.0 * diameter;
    let hi = path_i.exit_pos.max(path_j.exit_pos - off_j) + 2.0 * diameter;
    CrossSection::band(pair, length, (lo, hi), (0.0, off_j)).map(Some)
}

/// Cross-sections indexed by unordered robot pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SectionSet {
    robots: usize,
    map: BTreeMap<(usize, usize), CrossSection>,
}

impl SectionSet {
    pub fn new(robots: usize) -> Self {
        SectionSet { robots, map: BTreeMap::new() }
    }

    /// One robot per path, numbered by position in `paths`.
    pub fn from_paths(paths: &[PathGeometry], diameter: f64) -> Result<Self> {
        let mut set = SectionSet::new(paths.len());
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                if let Some(cs) = build_cross_section(&paths[i], &paths[j], diameter)? {
                    set.insert(cs.relabeled((i, j)))?;
                }
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, cs: CrossSection) -> Result<()> {
        let (i, j) = cs.pair;
        if i == j || i >= self.robots || j >= self.robots {
            return Err(Error::InvalidGeometry(format!("pair ({i}, {j}) outside {} robots", self.robots)));
        }
        let cs = if i < j { cs } else { cs.swapped() };
        self.map.insert(cs.pair, cs);
        Ok(())
    }

    /// Section stored with `pair.0 < pair.1`, regardless of argument order.
    pub fn get(&self, i: usize, j: usize) -> Option<&CrossSection> {
        self.map.get(&(i.min(j), i.max(j)))
    }

    pub fn conflicts(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    pub fn robots(&self) -> usize {
        self.robots
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CrossSection> {
        self.map.values()
    }

    /// Largest collision scale over all sections, `0` when empty.
    pub fn scale(&self) -> f64 {
        self.iter().map(CrossSection::scale).fold(0.0, f64::max)
    }

    /// Whether `x` overlaps physically on some pair.
    pub fn collides(&self, x: &[f64]) -> bool {
        self.iter().any(|cs| cs.contains((x[cs.pair.0], x[cs.pair.1])))
    }
}

/// Per-robot hull of the section bounds; `(-inf, inf)` for robots without conflicts.
pub fn obstacle_bounds(sections: &SectionSet) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); sections.robots()];
    for cs in sections.iter() {
        for (r, b) in [(cs.pair.0, cs.bounds_i), (cs.pair.1, cs.bounds_j)] {
            out[r].0 = out[r].0.min(b.0);
            out[r].1 = out[r].1.max(b.1);
        }
    }
    for b in &mut out {
        if b.0 > b.1 {
            *b = (f64::NEG_INFINITY, f64::INFINITY);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

    fn perp(d: f64) -> CrossSection {
        CrossSection::ellipse((0, 1), FRAC_PI_2, d, (0.0, 0.0)).unwrap()
    }

    fn path(id: usize, origin: [f64; 2], heading: f64) -> PathGeometry {
        PathGeometry::new(id, origin, heading, 0.0, 30.0).unwrap()
    }

    #[test]
    fn ellipse_membership_examples() {
        let cs = perp(2.0);
        assert!(cs.contains((0.0, 0.0)));
        assert!(!cs.contains((2.0, 0.0)));
        let cs = CrossSection::ellipse((0, 1), FRAC_PI_3, 1.0, (0.0, 0.0)).unwrap();
        assert!(cs.contains((0.6, 0.6)));
    }

    #[test]
    fn completion_examples() {
        let cs = perp(2.0);
        assert!(cs.in_completed((-10.0, 10.0), Precedence::First));
        assert!(!cs.in_completed((-10.0, 10.0), Precedence::Second));
        assert!(cs.in_completed((0.3, -0.2), Precedence::First));
        assert!(cs.in_completed((0.3, -0.2), Precedence::Second));
    }

    #[test]
    fn built_sections_use_crossing_point_origin() {
        let a = path(0, [-10.0, 0.0], 0.0);
        let b = path(1, [3.0, -7.0], FRAC_PI_2);
        let cs = build_cross_section(&a, &b, 2.0).unwrap().unwrap();
        assert!((cs.offsets.0 - 13.0).abs() < 1e-12);
        assert!((cs.offsets.1 - 7.0).abs() < 1e-12);
        assert!((cs.bounds_i.0 - 11.0).abs() < 1e-12 && (cs.bounds_i.1 - 15.0).abs() < 1e-12);
        assert!(cs.contains((13.0, 7.0)));
    }

    #[test]
    fn built_section_matches_center_distance() {
        let a = path(0, [-5.0, 1.0], 0.3);
        let b = path(1, [2.0, -6.0], 1.9);
        let d = 1.5;
        let cs = build_cross_section(&a, &b, d).unwrap().unwrap();
        for k in 0..400 {
            let xi = (k % 20) as f64 * 0.7 - 2.0;
            let xj = (k / 20) as f64 * 0.7 - 2.0;
            let (p, q) = (a.point_at(xi), b.point_at(xj));
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if (dist - d).abs() > 1e-9 {
                assert_eq!(cs.contains((xi, xj)), dist < d, "xi={xi} xj={xj}");
            }
        }
    }

    #[test]
    fn parallel_paths() {
        let a = path(0, [0.0, 0.0], 0.0);
        let far = path(1, [0.0, 3.0], 0.0);
        assert!(build_cross_section(&a, &far, 2.0).unwrap().is_none());
        let opposite = path(1, [0.0, 2.5], PI);
        assert!(build_cross_section(&a, &opposite, 2.0).unwrap().is_none());
        let head_on = path(1, [0.0, 0.5], PI);
        assert!(build_cross_section(&a, &head_on, 2.0).is_err());
        let same = path(1, [0.0, 0.0], 0.0);
        let band = build_cross_section(&a, &same, 2.0).unwrap().unwrap();
        assert_eq!(band.kind, SectionKind::Band { length: 2.0, lo: -4.0, hi: 34.0 });
        assert!(band.contains((10.0, 11.5)));
        assert!(!band.contains((10.0, 12.0)));
    }

    #[test]
    fn shifted_lane_band() {
        let a = path(0, [0.0, 0.0], 0.0);
        let b = path(1, [5.0, 0.0], 0.0);
        let band = build_cross_section(&a, &b, 1.0).unwrap().unwrap();
        assert!(band.contains((10.0, 5.2)));
        assert!(!band.contains((10.0, 6.0)));
    }

    #[test]
    fn bounds_examples() {
        let mut set = SectionSet::new(3);
        set.insert(perp(2.0)).unwrap();
        let b = obstacle_bounds(&set);
        assert_eq!(b[0], (-2.0, 2.0));
        assert_eq!(b[2], (f64::NEG_INFINITY, f64::INFINITY));
        set.insert(CrossSection::ellipse((2, 0), FRAC_PI_2, 2.0, (0.0, 3.0)).unwrap()).unwrap();
        assert_eq!(obstacle_bounds(&set)[0], (-2.0, 5.0));
    }

    #[test]
    fn threshold_is_infinite_past_upper_bound() {
        let cs = CrossSection::ellipse((0, 1), 1.0, 1.0, (2.0, -1.0)).unwrap();
        assert_eq!(cs.threshold(Precedence::First, cs.bounds_i.1), f64::INFINITY);
        assert!(cs.threshold(Precedence::First, cs.bounds_i.1 - 1e-6).is_finite());
        assert_eq!(cs.threshold(Precedence::Second, cs.bounds_j.1 + 0.1), f64::INFINITY);
    }

    #[test]
    fn segment_check_catches_corner_cut() {
        let cs = perp(2.0);
        // Endpoints on either side of the completion, segment through it.
        let p0 = (-3.0, -3.0);
        let p1 = (3.0, 3.0);
        assert!(!cs.in_completed(p0, Precedence::First));
        assert!(!cs.in_completed(p1, Precedence::First));
        assert!(cs.segment_enters(p0, p1, Precedence::First, 0.0));
        assert!(cs.segment_collides(p0, p1));
        assert!(!cs.segment_enters((-3.0, -3.0), (3.0, -3.0), Precedence::First, 0.0));
    }

    /// Brute-force completion test on a dense grid of region points.
    fn grid_oracle(cs: &CrossSection, p: (f64, f64), prec: Precedence) -> bool {
        let (lo, hi) = cs.kind.extent();
        let n = 800;
        let step = (hi - lo) / n as f64;
        for ia in 0..=n {
            let a = lo + ia as f64 * step;
            for ib in 0..=n {
                let b = lo + ib as f64 * step;
                if !cs.kind.contains(a, b) {
                    continue;
                }
                let q = (a + cs.offsets.0, b + cs.offsets.1);
                let hit = match prec {
                    Precedence::First => q.0 >= p.0 && q.1 <= p.1,
                    Precedence::Second => q.1 >= p.1 && q.0 <= p.0,
                };
                if hit {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn completion_agrees_with_grid_oracle() {
        let sections = [
            CrossSection::ellipse((0, 1), 0.7, 1.0, (0.5, -0.2)).unwrap(),
            CrossSection::ellipse((0, 1), 2.4, 1.0, (0.0, 0.0)).unwrap(),
            CrossSection::band((0, 1), 1.0, (-2.0, 3.0), (0.0, 0.0)).unwrap(),
        ];
        let mut checked = 0;
        for cs in &sections {
            for k in 0..60 {
                let p = (-3.0 + 0.37 * (k % 13) as f64, -3.0 + 0.29 * (k * 7 % 23) as f64);
                for prec in [Precedence::First, Precedence::Second] {
                    let first = prec == Precedence::First;
                    let (xw, xl) = if first { (p.0, p.1) } else { (p.1, p.0) };
                    if cs.excess(first, xw, xl, 0.0).abs() < 0.05 {
                        continue;
                    }
                    assert_eq!(cs.in_completed(p, prec), grid_oracle(cs, p, prec), "{cs:?} {p:?} {prec:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 200);
    }

    fn any_section() -> impl Strategy<Value = CrossSection> {
        prop_oneof![
            (0.2f64..2.9, 0.5f64..3.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(t, d, oi, oj)| CrossSection::ellipse(
                (0, 1),
                t,
                d,
                (oi, oj)
            )
            .unwrap()),
            (0.5f64..2.0, -5.0f64..0.0, 1.0f64..6.0).prop_map(|(l, lo, w)| CrossSection::band(
                (0, 1),
                l,
                (lo, lo + w),
                (0.0, 0.0)
            )
            .unwrap()),
        ]
    }

    /// Local point of the region at fractions `u` along the extent and `v` across the slice.
    fn inside(cs: &CrossSection, u: f64, v: f64) -> (f64, f64) {
        let (lo, hi) = cs.kind.extent();
        let a = lo + u * (hi - lo);
        let (b0, b1) = match cs.kind {
            SectionKind::Ellipse { cos, sin, diameter } => {
                let w = (diameter * diameter - a * a * sin * sin).sqrt();
                (a * cos - w, a * cos + w)
            }
            SectionKind::Band { length, lo, hi } => (lo.max(a - length), hi.min(a + length)),
        };
        (a, b0 + v * (b1 - b0))
    }

    fn any_prec() -> impl Strategy<Value = Precedence> {
        prop_oneof![Just(Precedence::First), Just(Precedence::Second)]
    }

    proptest! {
        #[test]
        fn geometric_invariance(cs in any_section(), prec in any_prec(),
                                x in -6.0f64..6.0, y in -6.0f64..6.0,
                                alpha in 0.0f64..5.0, beta in 0.0f64..5.0) {
            let p = (x, y);
            prop_assume!(cs.in_completed(p, prec));
            let q = match prec {
                Precedence::First => (x - alpha, y + beta),
                Precedence::Second => (x + beta, y - alpha),
            };
            prop_assert!(cs.in_completed(q, prec));
        }

        #[test]
        fn min_max_closure(cs in any_section(), prec in any_prec(),
                           p in (-6.0f64..6.0, -6.0f64..6.0), q in (-6.0f64..6.0, -6.0f64..6.0)) {
            prop_assume!(!cs.in_completed(p, prec) && !cs.in_completed(q, prec));
            prop_assert!(!cs.in_completed((p.0.max(q.0), p.1.max(q.1)), prec));
            prop_assert!(!cs.in_completed((p.0.min(q.0), p.1.min(q.1)), prec));
        }

        #[test]
        fn union_cover(cs in any_section(), u in 0.01f64..0.99, v in 0.01f64..0.99, other in -20.0f64..20.0) {
            let (a, _) = inside(&cs, u, v);
            let p = (a + cs.offsets.0, other);
            prop_assert!(cs.in_completed(p, Precedence::First) || cs.in_completed(p, Precedence::Second));
        }

        #[test]
        fn region_points_are_in_both_completions(cs in any_section(), u in 0.01f64..0.99, v in 0.01f64..0.99) {
            let (a, b) = inside(&cs, u, v);
            let p = (a + cs.offsets.0, b + cs.offsets.1);
            prop_assert!(cs.contains(p));
            prop_assert!(cs.in_completed(p, Precedence::First));
            prop_assert!(cs.in_completed(p, Precedence::Second));
        }

        #[test]
        fn threshold_monotone(cs in any_section(), a in -6.0f64..6.0, step in 0.0f64..3.0) {
            let h0 = cs.threshold(Precedence::First, a);
            let h1 = cs.threshold(Precedence::First, a + step);
            prop_assert!(h1 >= h0);
            if a >= cs.bounds_i.1 {
                prop_assert_eq!(h0, f64::INFINITY);
            }
        }

        #[test]
        fn segment_check_matches_dense_sampling(cs in any_section(), prec in any_prec(),
                                                 p0 in (-6.0f64..4.0, -6.0f64..4.0),
                                                 d in (0.0f64..5.0, 0.0f64..5.0), r in 0.0f64..0.5) {
            let p1 = (p0.0 + d.0, p0.1 + d.1);
            let exact = cs.segment_enters(p0, p1, prec, r);
            let first = prec == Precedence::First;
            let mut sampled = f64::NEG_INFINITY;
            for k in 0..=4000 {
                let t = k as f64 / 4000.0;
                let p = (p0.0 + t * d.0, p0.1 + t * d.1);
                let (xw, xl) = if first { (p.0, p.1) } else { (p.1, p.0) };
                sampled = sampled.max(cs.excess(first, xw, xl, r));
            }
            if sampled > 1e-3 {
                prop_assert!(exact);
            }
            if !exact {
                prop_assert!(sampled <= 1e-6);
            }
        }

        #[test]
        fn segment_collision_matches_sampling(cs in any_section(),
                                              p0 in (-6.0f64..4.0, -6.0f64..4.0),
                                              d in (0.0f64..5.0, 0.0f64..5.0)) {
            let p1 = (p0.0 + d.0, p0.1 + d.1);
            let exact = cs.segment_collides(p0, p1);
            let hit = (0..=4000).any(|k| {
                let t = k as f64 / 4000.0;
                cs.contains((p0.0 + t * d.0, p0.1 + t * d.1))
            });
            if hit {
                prop_assert!(exact);
            }
        }
    }
}
