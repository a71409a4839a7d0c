//! Disc geometry over an axis-aligned window.
//!
//! Exact closed forms for pairwise disc intersection, chord unions along a
//! vertical line, union areas of many discs by segmented adaptive Simpson
//! quadrature, a disc-clipped variant used for overlap accounting, and the
//! piecewise overlap-reward shape. All quantities are `f64` and every
//! routine is a pure function of its arguments.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::fp;

/// 2-d point / vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        fp::sqrt(self.norm_sq())
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn dist_sq(self, o: Vec2) -> f64 {
        (self - o).norm_sq()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl core::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl core::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl core::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Disc given by center and radius.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Circle { center: Vec2::new(x, y), radius }
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        self.center.dist_sq(p) <= self.radius * self.radius
    }

    /// True when `other` lies entirely inside `self` (boundary contact counts).
    pub fn contains_circle(&self, other: &Circle) -> bool {
        self.center.dist(other.center) + other.radius <= self.radius
    }

    pub fn overlaps(&self, other: &Circle) -> bool {
        let r = self.radius + other.radius;
        self.center.dist_sq(other.center) < r * r
    }
}

/// Axis-aligned rectangle, `min` component-wise below `max`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    /// The unit square `[0,1] x [0,1]`.
    pub fn unit() -> Self {
        Rect::new(Vec2::ZERO, Vec2::new(1.0, 1.0))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp_point(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("circle radius must be finite and non-negative, got {0}")]
    BadRadius(f64),
    #[error("geometry input must be finite")]
    NonFinite,
    #[error("rectangle min must lie below max component-wise")]
    BadRect,
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("overlap area {value} outside reward domain [0, {max}]")]
    RewardDomain { value: f64, max: f64 },
    #[error("piecewise reward shape requires finite parameters with 0 < s2 < s3")]
    BadRewardShape,
}

fn validate_circle(c: &Circle) -> Result<(), GeomError> {
    if !c.center.is_finite() {
        return Err(GeomError::NonFinite);
    }
    if !c.radius.is_finite() || c.radius < 0.0 {
        return Err(GeomError::BadRadius(c.radius));
    }
    Ok(())
}

fn validate_circles(cs: &[Circle]) -> Result<(), GeomError> {
    cs.iter().try_for_each(validate_circle)
}

fn validate_rect(r: &Rect) -> Result<(), GeomError> {
    if !r.min.is_finite() || !r.max.is_finite() {
        return Err(GeomError::NonFinite);
    }
    if r.min.x > r.max.x || r.min.y > r.max.y {
        return Err(GeomError::BadRect);
    }
    Ok(())
}

fn validate_tol(tol: f64) -> Result<(), GeomError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(GeomError::BadTolerance(tol));
    }
    Ok(())
}

/// Area of a circular segment of a radius-`r` disc cut off by a chord at
/// signed distance `t` from the center (`t < 0` keeps more than half).
fn segment_area(r: f64, t: f64) -> f64 {
    let c = (t / r).clamp(-1.0, 1.0);
    r * r * fp::acos(c) - t * fp::sqrt((r * r - t * t).max(0.0))
}

/// Exact intersection area of two discs.
///
/// Disjoint or tangent pairs give 0; a disc contained in the other gives the
/// smaller disc's full area; otherwise the lens is the sum of the two
/// circular segments cut by the common chord.
pub fn circle_pair_intersection_area(a: &Circle, b: &Circle) -> Result<f64, GeomError> {
    validate_circle(a)?;
    validate_circle(b)?;
    Ok(lens_area(a, b))
}

fn lens_area(a: &Circle, b: &Circle) -> f64 {
    let d = a.center.dist(b.center);
    if d >= a.radius + b.radius {
        return 0.0;
    }
    if d <= fp::abs(a.radius - b.radius) {
        let r = a.radius.min(b.radius);
        return PI * r * r;
    }
    // Signed distances from each center to the chord through the two
    // intersection points.
    let ta = (d * d + a.radius * a.radius - b.radius * b.radius) / (2.0 * d);
    let tb = d - ta;
    segment_area(a.radius, ta) + segment_area(b.radius, tb)
}

/// Total length of the union of chords cut by the vertical line at `x`
/// through every circle, clipped to the window's y-range. Zero when `x` is
/// outside the window.
pub fn chord_union_length(circles: &[Circle], x: f64, clip: &Rect) -> Result<f64, GeomError> {
    validate_circles(circles)?;
    validate_rect(clip)?;
    if !x.is_finite() {
        return Err(GeomError::NonFinite);
    }
    if x < clip.min.x || x > clip.max.x {
        return Ok(0.0);
    }
    let mut buf = Vec::new();
    collect_chords(circles, x, clip.min.y, clip.max.y, &mut buf);
    Ok(merged_length(&mut buf))
}

/// Pushes each circle's chord interval at `x`, clipped to `[ylo, yhi]`.
fn collect_chords(circles: &[Circle], x: f64, ylo: f64, yhi: f64, buf: &mut Vec<(f64, f64)>) {
    for c in circles {
        let dx = x - c.center.x;
        let h2 = c.radius * c.radius - dx * dx;
        if h2 <= 0.0 {
            continue;
        }
        let h = fp::sqrt(h2);
        let lo = (c.center.y - h).max(ylo);
        let hi = (c.center.y + h).min(yhi);
        if lo < hi {
            buf.push((lo, hi));
        }
    }
}

/// Sorts intervals by start and sums the measure of their union.
fn merged_length(buf: &mut [(f64, f64)]) -> f64 {
    if buf.is_empty() {
        return 0.0;
    }
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let (mut lo, mut hi) = buf[0];
    let mut total = 0.0;
    for &(l, h) in &buf[1..] {
        if l > hi {
            total += hi - lo;
            lo = l;
            hi = h;
        } else if h > hi {
            hi = h;
        }
    }
    total + (hi - lo)
}

/// Quadrature result. `degraded` is set when some subinterval hit the
/// recursion-depth cap before meeting its error share; the value returned is
/// the best estimate so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaEstimate {
    pub value: f64,
    pub degraded: bool,
}

const SIMPSON_MAX_DEPTH: u32 = 40;

fn simpson_rule(fl: f64, fm: f64, fr: f64, l: f64, r: f64) -> f64 {
    (r - l) / 6.0 * (fl + 4.0 * fm + fr)
}

/// Adaptive Simpson with the standard 15x termination test and Richardson
/// correction. `tol` is an absolute error budget for `[l, r]`.
pub(crate) fn adaptive_simpson<F: FnMut(f64) -> f64>(
    f: &mut F,
    l: f64,
    r: f64,
    tol: f64,
    degraded: &mut bool,
) -> f64 {
    let m = 0.5 * (l + r);
    let fl = f(l);
    let fm = f(m);
    let fr = f(r);
    let whole = simpson_rule(fl, fm, fr, l, r);
    simpson_rec(f, l, m, r, fl, fm, fr, whole, tol, SIMPSON_MAX_DEPTH, degraded)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    l: f64,
    m: f64,
    r: f64,
    fl: f64,
    fm: f64,
    fr: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    degraded: &mut bool,
) -> f64 {
    let lm = 0.5 * (l + m);
    let rm = 0.5 * (m + r);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(fl, flm, fm, l, m);
    let right = simpson_rule(fm, frm, fr, m, r);
    let delta = left + right - whole;
    if fp::abs(delta) <= 15.0 * tol || depth == 0 {
        if depth == 0 && fp::abs(delta) > 15.0 * tol {
            *degraded = true;
        }
        return left + right + delta / 15.0;
    }
    let half = 0.5 * tol;
    simpson_rec(f, l, lm, m, fl, flm, fm, left, half, depth - 1, degraded)
        + simpson_rec(f, m, rm, r, fm, frm, fr, right, half, depth - 1, degraded)
}

/// Drops circles with zero radius, exact duplicates, and circles contained
/// in another kept circle. Purely an accuracy/cost measure: the union is
/// unchanged.
fn screen_circles(circles: &[Circle]) -> Vec<Circle> {
    let mut dropped = alloc::vec![false; circles.len()];
    for (i, c) in circles.iter().enumerate() {
        if c.radius <= 0.0 {
            dropped[i] = true;
        }
    }
    for i in 0..circles.len() {
        if dropped[i] {
            continue;
        }
        for j in 0..circles.len() {
            if i == j || dropped[j] {
                continue;
            }
            if circles[i].contains_circle(&circles[j]) {
                dropped[j] = true;
            }
        }
    }
    circles
        .iter()
        .zip(&dropped)
        .filter(|&(_, &d)| !d)
        .map(|(c, _)| *c)
        .collect()
}

/// x-coordinates where the integrand loses smoothness: window edges plus
/// every circle's horizontal extent, clamped into the window and deduped.
fn breakpoints(circles: &[Circle], xlo: f64, xhi: f64) -> Vec<f64> {
    let mut xs = Vec::with_capacity(2 * circles.len() + 2);
    xs.push(xlo);
    xs.push(xhi);
    for c in circles {
        xs.push((c.center.x - c.radius).clamp(xlo, xhi));
        xs.push((c.center.x + c.radius).clamp(xlo, xhi));
    }
    xs.sort_unstable_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Area of the union of `circles` clipped to `clip`, by integrating the
/// chord-union length over x with adaptive Simpson on each smooth segment.
/// The absolute error budget `tol` is split across segments by width.
pub fn union_area(circles: &[Circle], clip: &Rect, tol: f64) -> Result<AreaEstimate, GeomError> {
    validate_circles(circles)?;
    validate_rect(clip)?;
    validate_tol(tol)?;
    let kept = screen_circles(circles);
    if kept.is_empty() || clip.area() == 0.0 {
        return Ok(AreaEstimate { value: 0.0, degraded: false });
    }
    let xs = breakpoints(&kept, clip.min.x, clip.max.x);
    let mut segments: Vec<(f64, f64, Vec<Circle>)> = Vec::new();
    let mut active_width = 0.0;
    for w in xs.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let active: Vec<Circle> = kept
            .iter()
            .filter(|c| c.center.x - c.radius < hi && c.center.x + c.radius > lo)
            .copied()
            .collect();
        if active.is_empty() {
            continue;
        }
        active_width += hi - lo;
        segments.push((lo, hi, active));
    }
    if active_width == 0.0 {
        return Ok(AreaEstimate { value: 0.0, degraded: false });
    }
    let mut total = 0.0;
    let mut degraded = false;
    let mut buf: Vec<(f64, f64)> = Vec::new();
    for (lo, hi, active) in &segments {
        let seg_tol = tol * (hi - lo) / active_width;
        let mut f = |x: f64| {
            buf.clear();
            collect_chords(active, x, clip.min.y, clip.max.y, &mut buf);
            merged_length(&mut buf)
        };
        total += adaptive_simpson(&mut f, *lo, *hi, seg_tol, &mut degraded);
    }
    Ok(AreaEstimate { value: total.max(0.0), degraded })
}

/// Area of `disc` ∩ (union of `circles`) ∩ `clip`.
///
/// Same machinery as [`union_area`] with the integration window restricted
/// to the disc: at each x the candidate chords are intersected with the
/// disc's own chord. Used for overlap accounting against coverage history.
pub fn union_area_in_disc(
    disc: &Circle,
    circles: &[Circle],
    clip: &Rect,
    tol: f64,
) -> Result<AreaEstimate, GeomError> {
    validate_circle(disc)?;
    validate_circles(circles)?;
    validate_rect(clip)?;
    validate_tol(tol)?;
    let candidates: Vec<Circle> = circles
        .iter()
        .filter(|c| c.radius > 0.0 && c.overlaps(disc))
        .copied()
        .collect();
    let kept = screen_circles(&candidates);
    let xlo = (disc.center.x - disc.radius).max(clip.min.x);
    let xhi = (disc.center.x + disc.radius).min(clip.max.x);
    if kept.is_empty() || xhi <= xlo || disc.radius == 0.0 {
        return Ok(AreaEstimate { value: 0.0, degraded: false });
    }
    let xs = breakpoints(&kept, xlo, xhi);
    let mut total = 0.0;
    let mut degraded = false;
    let mut buf: Vec<(f64, f64)> = Vec::new();
    let width = xhi - xlo;
    for w in xs.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let active: Vec<Circle> = kept
            .iter()
            .filter(|c| c.center.x - c.radius < hi && c.center.x + c.radius > lo)
            .copied()
            .collect();
        if active.is_empty() {
            continue;
        }
        let seg_tol = tol * (hi - lo) / width;
        let mut f = |x: f64| {
            let dx = x - disc.center.x;
            let h2 = disc.radius * disc.radius - dx * dx;
            if h2 <= 0.0 {
                return 0.0;
            }
            let h = fp::sqrt(h2);
            let ylo = (disc.center.y - h).max(clip.min.y);
            let yhi = (disc.center.y + h).min(clip.max.y);
            if ylo >= yhi {
                return 0.0;
            }
            buf.clear();
            collect_chords(&active, x, ylo, yhi, &mut buf);
            merged_length(&mut buf)
        };
        total += adaptive_simpson(&mut f, lo, hi, seg_tol, &mut degraded);
    }
    Ok(AreaEstimate { value: total.max(0.0), degraded })
}

/// Parameters of the piecewise overlap-reward shape: a linear ramp from
/// `r1` at zero overlap to the peak `r2` at `s2`, then a quadratic fall to
/// `r3` at `s3`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardShape {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub s2: f64,
    pub s3: f64,
}

impl RewardShape {
    fn validate(&self) -> Result<(), GeomError> {
        let all_finite = self.r1.is_finite()
            && self.r2.is_finite()
            && self.r3.is_finite()
            && self.s2.is_finite()
            && self.s3.is_finite();
        if !all_finite || self.s2 <= 0.0 || self.s3 <= self.s2 {
            return Err(GeomError::BadRewardShape);
        }
        Ok(())
    }
}

/// Default shape for an agent of the given radius: rewards 2 → 3 → −3 with
/// the peak at the overlap of two discs whose centers sit one radius apart,
/// `s2 = (π−2)·radius²`, and the worst case at full overlap `s3 = π·radius²`.
pub fn default_reward_shape(radius: f64) -> Result<RewardShape, GeomError> {
    if !radius.is_finite() || radius <= 0.0 {
        return Err(GeomError::BadRadius(radius));
    }
    Ok(RewardShape {
        r1: 2.0,
        r2: 3.0,
        r3: -3.0,
        s2: (PI - 2.0) * radius * radius,
        s3: PI * radius * radius,
    })
}

/// Piecewise overlap reward: linear on `[0, s2)`, quadratic on `[s2, s3]`,
/// continuous at `s2` with peak value `r2`. Overlap outside `[0, s3]` is
/// rejected.
pub fn overlap_reward(s_inter: f64, shape: &RewardShape) -> Result<f64, GeomError> {
    shape.validate()?;
    if !s_inter.is_finite() || s_inter < 0.0 || s_inter > shape.s3 {
        return Err(GeomError::RewardDomain { value: s_inter, max: shape.s3 });
    }
    if s_inter < shape.s2 {
        Ok((shape.r2 - shape.r1) / shape.s2 * s_inter + shape.r1)
    } else {
        let d = shape.s2 - shape.s3;
        Ok((shape.r2 - shape.r3) / (d * d) * (s_inter - shape.s3) * (s_inter - shape.s3) + shape.r3)
    }
}

/// Coverage ratio of four unit discs centered on the corners of a side-2
/// square (pairwise tangent), over their side-4 circumscribing square.
/// Exact value π/4.
pub fn coverage_ratio_tangent(tol: f64) -> Result<AreaEstimate, GeomError> {
    let circles = [
        Circle::new(-1.0, -1.0, 1.0),
        Circle::new(1.0, -1.0, 1.0),
        Circle::new(-1.0, 1.0, 1.0),
        Circle::new(1.0, 1.0, 1.0),
    ];
    let clip = Rect::new(Vec2::new(-2.0, -2.0), Vec2::new(2.0, 2.0));
    let est = union_area(&circles, &clip, tol)?;
    Ok(AreaEstimate { value: est.value / clip.area(), degraded: est.degraded })
}

/// Exact coverage ratio of the tangent layout.
pub fn coverage_ratio_tangent_exact() -> f64 {
    PI / 4.0
}

/// Coverage ratio of four unit discs centered on the corners of a side-√2
/// square (adjacent discs overlapping, diagonal discs tangent at the
/// center), over their side-(2+√2) circumscribing square.
pub fn coverage_ratio_overlap(tol: f64) -> Result<AreaEstimate, GeomError> {
    let h = fp::sqrt(2.0) / 2.0;
    let circles = [
        Circle::new(-h, -h, 1.0),
        Circle::new(h, -h, 1.0),
        Circle::new(-h, h, 1.0),
        Circle::new(h, h, 1.0),
    ];
    let side = 1.0 + h;
    let clip = Rect::new(Vec2::new(-side, -side), Vec2::new(side, side));
    let est = union_area(&circles, &clip, tol)?;
    Ok(AreaEstimate { value: est.value / clip.area(), degraded: est.degraded })
}

/// Exact coverage ratio of the overlapped layout: (2+π)/(3+2√2).
pub fn coverage_ratio_overlap_exact() -> f64 {
    (2.0 + PI) / (3.0 + 2.0 * fp::sqrt(2.0))
}
