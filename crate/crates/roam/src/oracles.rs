//! Independent test oracles: Monte Carlo area estimates, dense-grid chord
//! measurement, brute-force neighbor search, and central finite differences.
//!
//! Deliberately primitive. Nothing here shares code with the quadrature,
//! index, or gradient paths it is used to check; keep it that way.

use alloc::vec::Vec;

use crate::geometry::{Circle, Rect, Vec2};

/// SplitMix64: tiny, fast, seedable. Good enough for sampling oracles and
/// much cheaper than a cryptographic stream when drawing 10^9 points.
#[derive(Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub value: f64,
    pub std_err: f64,
}

fn binomial_estimate(hits: u64, samples: u64, region_area: f64) -> McEstimate {
    let p = hits as f64 / samples as f64;
    McEstimate {
        value: p * region_area,
        std_err: region_area * ((p * (1.0 - p)) / samples as f64).sqrt(),
    }
}

/// Coarse uniform grid over the sampling window holding, per cell, the
/// indices of circles whose bounding test overlaps the cell. Point queries
/// then scan a handful of candidates instead of the whole set.
struct CircleGrid<'a> {
    circles: &'a [Circle],
    cells: Vec<Vec<u32>>,
    n: usize,
    window: Rect,
}

const GRID_N: usize = 24;

impl<'a> CircleGrid<'a> {
    fn new(circles: &'a [Circle], window: Rect) -> Self {
        let n = GRID_N;
        let mut cells = alloc::vec![Vec::new(); n * n];
        let w = window.width() / n as f64;
        let h = window.height() / n as f64;
        for (idx, c) in circles.iter().enumerate() {
            let x0 = (((c.center.x - c.radius - window.min.x) / w).floor() as i64).clamp(0, n as i64 - 1);
            let x1 = (((c.center.x + c.radius - window.min.x) / w).floor() as i64).clamp(0, n as i64 - 1);
            let y0 = (((c.center.y - c.radius - window.min.y) / h).floor() as i64).clamp(0, n as i64 - 1);
            let y1 = (((c.center.y + c.radius - window.min.y) / h).floor() as i64).clamp(0, n as i64 - 1);
            for gy in y0..=y1 {
                for gx in x0..=x1 {
                    cells[gy as usize * n + gx as usize].push(idx as u32);
                }
            }
        }
        CircleGrid { circles, cells, n, window }
    }

    fn hit(&self, p: Vec2) -> bool {
        let gx = (((p.x - self.window.min.x) / self.window.width() * self.n as f64) as usize)
            .min(self.n - 1);
        let gy = (((p.y - self.window.min.y) / self.window.height() * self.n as f64) as usize)
            .min(self.n - 1);
        for &idx in &self.cells[gy * self.n + gx] {
            let c = &self.circles[idx as usize];
            if c.center.dist_sq(p) < c.radius * c.radius {
                return true;
            }
        }
        false
    }
}

/// Monte Carlo area of (union of circles) ∩ clip.
pub fn mc_union_area(circles: &[Circle], clip: &Rect, samples: u64, seed: u64) -> McEstimate {
    let grid = CircleGrid::new(circles, *clip);
    let mut rng = SplitMix64::new(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let p = Vec2::new(
            clip.min.x + rng.next_f64() * clip.width(),
            clip.min.y + rng.next_f64() * clip.height(),
        );
        if grid.hit(p) {
            hits += 1;
        }
    }
    binomial_estimate(hits, samples, clip.area())
}

/// Monte Carlo area of disc ∩ (union of circles) ∩ clip, sampling the disc's
/// clipped bounding box.
pub fn mc_union_area_in_disc(
    disc: &Circle,
    circles: &[Circle],
    clip: &Rect,
    samples: u64,
    seed: u64,
) -> McEstimate {
    let xlo = (disc.center.x - disc.radius).max(clip.min.x);
    let xhi = (disc.center.x + disc.radius).min(clip.max.x);
    let ylo = (disc.center.y - disc.radius).max(clip.min.y);
    let yhi = (disc.center.y + disc.radius).min(clip.max.y);
    if xhi <= xlo || yhi <= ylo {
        return McEstimate { value: 0.0, std_err: 0.0 };
    }
    let window = Rect::new(Vec2::new(xlo, ylo), Vec2::new(xhi, yhi));
    let grid = CircleGrid::new(circles, window);
    let mut rng = SplitMix64::new(seed);
    let mut hits = 0u64;
    let r2 = disc.radius * disc.radius;
    for _ in 0..samples {
        let p = Vec2::new(xlo + rng.next_f64() * window.width(), ylo + rng.next_f64() * window.height());
        if disc.center.dist_sq(p) < r2 && grid.hit(p) {
            hits += 1;
        }
    }
    binomial_estimate(hits, samples, window.area())
}

/// Monte Carlo area of the intersection of two discs.
pub fn mc_lens_area(a: &Circle, b: &Circle, samples: u64, seed: u64) -> McEstimate {
    let xlo = (a.center.x - a.radius).max(b.center.x - b.radius);
    let xhi = (a.center.x + a.radius).min(b.center.x + b.radius);
    let ylo = (a.center.y - a.radius).max(b.center.y - b.radius);
    let yhi = (a.center.y + a.radius).min(b.center.y + b.radius);
    if xhi <= xlo || yhi <= ylo {
        return McEstimate { value: 0.0, std_err: 0.0 };
    }
    let mut rng = SplitMix64::new(seed);
    let mut hits = 0u64;
    let (ra2, rb2) = (a.radius * a.radius, b.radius * b.radius);
    for _ in 0..samples {
        let p = Vec2::new(xlo + rng.next_f64() * (xhi - xlo), ylo + rng.next_f64() * (yhi - ylo));
        if a.center.dist_sq(p) < ra2 && b.center.dist_sq(p) < rb2 {
            hits += 1;
        }
    }
    binomial_estimate(hits, samples, (xhi - xlo) * (yhi - ylo))
}

/// Chord-union length at `x` measured by classifying `cells` midpoints along
/// the clipped y-range. Independent of the interval-merge path.
pub fn grid_chord_union(circles: &[Circle], x: f64, clip: &Rect, cells: u32) -> f64 {
    if x < clip.min.x || x > clip.max.x {
        return 0.0;
    }
    let h = clip.height() / cells as f64;
    let mut covered = 0u64;
    for i in 0..cells {
        let y = clip.min.y + (i as f64 + 0.5) * h;
        let p = Vec2::new(x, y);
        if circles.iter().any(|c| c.center.dist_sq(p) < c.radius * c.radius) {
            covered += 1;
        }
    }
    covered as f64 * h
}

/// Indices of points lying in the closed rectangle.
pub fn brute_in_rect(points: &[Vec2], rect: &Rect) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| rect.contains(**p))
        .map(|(i, _)| i)
        .collect()
}

/// Indices of points lying in the closed disc.
pub fn brute_in_disc(points: &[Vec2], center: Vec2, radius: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| center.dist_sq(**p) <= radius * radius)
        .map(|(i, _)| i)
        .collect()
}

/// Central finite-difference gradient of `f` at `at`.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(f: &mut F, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    let mut g = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        g.push((up - down) / (2.0 * h));
    }
    g
}

/// Relative L2 distance between two gradients:
/// ‖a − b‖ / max(‖a‖, ‖b‖, 1e-12).
pub fn rel_l2_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn splitmix_uniform_mean() {
        let mut rng = SplitMix64::new(1);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rng.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn mc_single_circle_area() {
        let c = [Circle::new(0.5, 0.5, 0.3)];
        let est = mc_union_area(&c, &Rect::unit(), 1_000_000, 42);
        assert!((est.value - PI * 0.09).abs() < 4.0 * est.std_err);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = finite_diff_grad(&mut f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 8.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rel_l2_error_basics() {
        assert!(rel_l2_error(&[1.0, 2.0], &[1.0, 2.0]) < 1e-15);
        assert!(rel_l2_error(&[1.0, 0.0], &[0.0, 1.0]) > 0.9);
    }
}
