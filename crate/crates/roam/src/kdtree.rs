//! 2-d point index over coverage stamps and obstacle centers.
//!
//! Balanced builds split each level on the axis of larger variance at the
//! median point; streaming inserts descend the existing splits (ties go
//! right). Removal tombstones every record of an owner and triggers a full
//! rebuild once tombstones outnumber live points. Queries prune on
//! per-subtree bounding boxes, which are grown on insert and never shrunk by
//! tombstoning, so pruning stays conservative (sound) at the cost of some
//! extra visits after removals.

use alloc::vec::Vec;

use crate::geometry::{Rect, Vec2};

/// Who laid down a point: a coverage stamp of an agent, or an obstacle
/// center. Removal is by owner, e.g. when an agent departs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Owner {
    Agent(u32),
    Obstacle(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointRecord {
    pub pos: Vec2,
    pub owner: Owner,
}

#[derive(Clone, Debug)]
struct Node {
    pos: Vec2,
    owner: Owner,
    axis: u8,
    dead: bool,
    left: Option<u32>,
    right: Option<u32>,
    bb_min: Vec2,
    bb_max: Vec2,
}

impl Node {
    fn leaf(rec: PointRecord, axis: u8) -> Node {
        Node {
            pos: rec.pos,
            owner: rec.owner,
            axis,
            dead: false,
            left: None,
            right: None,
            bb_min: rec.pos,
            bb_max: rec.pos,
        }
    }
}

fn axis_val(p: Vec2, axis: u8) -> f64 {
    if axis == 0 { p.x } else { p.y }
}

#[derive(Clone, Debug, Default)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<u32>,
    live: usize,
    dead: usize,
}

impl KdTree {
    pub fn new() -> Self {
        KdTree::default()
    }

    /// Balanced build. Each level picks the axis of larger coordinate
    /// variance over its point set and splits at the median.
    pub fn build(records: &[PointRecord]) -> Self {
        let mut tree = KdTree::new();
        let mut recs: Vec<PointRecord> = records.to_vec();
        tree.nodes.reserve(recs.len());
        tree.root = tree.build_rec(&mut recs);
        tree.live = records.len();
        tree
    }

    fn build_rec(&mut self, recs: &mut [PointRecord]) -> Option<u32> {
        if recs.is_empty() {
            return None;
        }
        let axis = larger_variance_axis(recs);
        let mid = recs.len() / 2;
        recs.select_nth_unstable_by(mid, |a, b| {
            axis_val(a.pos, axis).total_cmp(&axis_val(b.pos, axis))
        });
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node::leaf(recs[mid], axis));
        let (lo, rest) = recs.split_at_mut(mid);
        let (_, hi) = rest.split_at_mut(1);
        let left = self.build_rec(lo);
        let right = self.build_rec(hi);
        self.nodes[idx as usize].left = left;
        self.nodes[idx as usize].right = right;
        let mut bb_min = self.nodes[idx as usize].pos;
        let mut bb_max = bb_min;
        for child in [left, right].into_iter().flatten() {
            let c = &self.nodes[child as usize];
            bb_min.x = bb_min.x.min(c.bb_min.x);
            bb_min.y = bb_min.y.min(c.bb_min.y);
            bb_max.x = bb_max.x.max(c.bb_max.x);
            bb_max.y = bb_max.y.max(c.bb_max.y);
        }
        self.nodes[idx as usize].bb_min = bb_min;
        self.nodes[idx as usize].bb_max = bb_max;
        Some(idx)
    }

    /// Number of live (non-tombstoned) records.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Streaming insert along the existing splits; equal coordinates go
    /// right. A fresh leaf alternates its split axis from its parent.
    pub fn insert(&mut self, rec: PointRecord) {
        let Some(mut cur) = self.root else {
            self.nodes.push(Node::leaf(rec, 0));
            self.root = Some(0);
            self.live = 1;
            return;
        };
        let new_idx = self.nodes.len() as u32;
        loop {
            let node = &mut self.nodes[cur as usize];
            node.bb_min.x = node.bb_min.x.min(rec.pos.x);
            node.bb_min.y = node.bb_min.y.min(rec.pos.y);
            node.bb_max.x = node.bb_max.x.max(rec.pos.x);
            node.bb_max.y = node.bb_max.y.max(rec.pos.y);
            let axis = node.axis;
            let go_left = axis_val(rec.pos, axis) < axis_val(node.pos, axis);
            let slot = if go_left { &mut node.left } else { &mut node.right };
            match slot {
                Some(next) => cur = *next,
                None => {
                    *slot = Some(new_idx);
                    self.nodes.push(Node::leaf(rec, axis ^ 1));
                    self.live += 1;
                    return;
                }
            }
        }
    }

    /// Tombstones every record of `owner`; returns how many were hit.
    /// Rebuilds from the live set once tombstones outnumber live records.
    pub fn remove_owner(&mut self, owner: Owner) -> usize {
        let mut hit = 0;
        for node in &mut self.nodes {
            if !node.dead && node.owner == owner {
                node.dead = true;
                hit += 1;
            }
        }
        self.live -= hit;
        self.dead += hit;
        if self.dead > self.live {
            let live = self.live_records();
            *self = KdTree::build(&live);
        }
        hit
    }

    /// All live records in traversal order.
    pub fn live_records(&self) -> Vec<PointRecord> {
        let mut out = Vec::with_capacity(self.live);
        self.collect_rec(self.root, &mut out);
        out
    }

    fn collect_rec(&self, idx: Option<u32>, out: &mut Vec<PointRecord>) {
        let Some(i) = idx else { return };
        let node = &self.nodes[i as usize];
        if !node.dead {
            out.push(PointRecord { pos: node.pos, owner: node.owner });
        }
        self.collect_rec(node.left, out);
        self.collect_rec(node.right, out);
    }

    /// Live records inside the closed rectangle.
    pub fn range_query(&self, window: &Rect) -> Vec<PointRecord> {
        let mut out = Vec::new();
        self.range_rec(self.root, window, &mut out, &mut 0);
        out
    }

    /// Range query that also reports how many nodes were visited; a subtree
    /// is skipped only when its bounding box misses the window.
    #[cfg(any(test, feature = "oracles"))]
    pub fn range_query_counted(&self, window: &Rect) -> (Vec<PointRecord>, usize) {
        let mut out = Vec::new();
        let mut visited = 0;
        self.range_rec(self.root, window, &mut out, &mut visited);
        (out, visited)
    }

    fn range_rec(
        &self,
        idx: Option<u32>,
        window: &Rect,
        out: &mut Vec<PointRecord>,
        visited: &mut usize,
    ) {
        let Some(i) = idx else { return };
        let node = &self.nodes[i as usize];
        if node.bb_max.x < window.min.x
            || node.bb_min.x > window.max.x
            || node.bb_max.y < window.min.y
            || node.bb_min.y > window.max.y
        {
            return;
        }
        *visited += 1;
        if !node.dead && window.contains(node.pos) {
            out.push(PointRecord { pos: node.pos, owner: node.owner });
        }
        self.range_rec(node.left, window, out, visited);
        self.range_rec(node.right, window, out, visited);
    }

    /// Live records within the closed disc: a range query over the
    /// circumscribing square followed by an exact Euclidean filter, so
    /// points exactly on the boundary are included.
    pub fn neighbors_in_disc(&self, center: Vec2, radius: f64) -> Vec<PointRecord> {
        if radius < 0.0 {
            return Vec::new();
        }
        let square = Rect::new(
            Vec2::new(center.x - radius, center.y - radius),
            Vec2::new(center.x + radius, center.y + radius),
        );
        let mut out = self.range_query(&square);
        out.retain(|r| center.dist_sq(r.pos) <= radius * radius);
        out
    }

    /// Longest root-to-leaf path, in nodes. Diagnostic.
    pub fn max_depth(&self) -> usize {
        self.depth_rec(self.root)
    }

    fn depth_rec(&self, idx: Option<u32>) -> usize {
        let Some(i) = idx else { return 0 };
        let node = &self.nodes[i as usize];
        1 + self.depth_rec(node.left).max(self.depth_rec(node.right))
    }

    #[cfg(test)]
    fn tombstones(&self) -> usize {
        self.dead
    }
}

fn larger_variance_axis(recs: &[PointRecord]) -> u8 {
    let n = recs.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in recs {
        sx += r.pos.x;
        sy += r.pos.y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy) = (0.0, 0.0);
    for r in recs {
        vx += (r.pos.x - mx) * (r.pos.x - mx);
        vy += (r.pos.y - my) * (r.pos.y - my);
    }
    if vy > vx { 1 } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{self, SplitMix64};

    fn random_records(rng: &mut SplitMix64, n: usize) -> Vec<PointRecord> {
        (0..n)
            .map(|i| PointRecord {
                pos: Vec2::new(rng.next_f64(), rng.next_f64()),
                owner: if rng.next_u64() % 4 == 0 {
                    Owner::Obstacle((i % 7) as u32)
                } else {
                    Owner::Agent((i % 5) as u32)
                },
            })
            .collect()
    }

    fn sorted_positions(mut v: Vec<PointRecord>) -> Vec<(u64, u64, Owner)> {
        let key = |r: &PointRecord| (r.pos.x.to_bits(), r.pos.y.to_bits(), r.owner);
        let mut out: Vec<_> = v.drain(..).map(|r| key(&r)).collect();
        out.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    #[test]
    fn empty_tree_queries() {
        let t = KdTree::new();
        assert!(t.is_empty());
        assert!(t.range_query(&Rect::unit()).is_empty());
        assert!(t.neighbors_in_disc(Vec2::new(0.5, 0.5), 1.0).is_empty());
        assert_eq!(t.max_depth(), 0);
    }

    #[test]
    fn build_matches_brute_force_range() {
        let mut rng = SplitMix64::new(3);
        for case in 0..100 {
            let n = (rng.next_u64() % 200) as usize;
            let recs = random_records(&mut rng, n);
            let tree = KdTree::build(&recs);
            assert_eq!(tree.len(), n);
            let (a, b) = (rng.next_f64(), rng.next_f64());
            let (c, d) = (rng.next_f64(), rng.next_f64());
            let window = Rect::new(
                Vec2::new(a.min(b), c.min(d)),
                Vec2::new(a.max(b), c.max(d)),
            );
            let got = tree.range_query(&window);
            let pts: Vec<Vec2> = recs.iter().map(|r| r.pos).collect();
            let want: Vec<PointRecord> = oracles::brute_in_rect(&pts, &window)
                .into_iter()
                .map(|i| recs[i])
                .collect();
            assert_eq!(sorted_positions(got), sorted_positions(want), "case {case}");
        }
    }

    #[test]
    fn insert_stream_matches_brute_force() {
        let mut rng = SplitMix64::new(17);
        let mut tree = KdTree::new();
        let mut recs: Vec<PointRecord> = Vec::new();
        for step in 0..500 {
            let rec = PointRecord {
                pos: Vec2::new(rng.next_f64(), rng.next_f64()),
                owner: Owner::Agent((step % 3) as u32),
            };
            tree.insert(rec);
            recs.push(rec);
            if step % 50 == 49 {
                let center = Vec2::new(rng.next_f64(), rng.next_f64());
                let r = rng.next_f64() * 0.3;
                let got = tree.neighbors_in_disc(center, r);
                let pts: Vec<Vec2> = recs.iter().map(|x| x.pos).collect();
                let want: Vec<PointRecord> = oracles::brute_in_disc(&pts, center, r)
                    .into_iter()
                    .map(|i| recs[i])
                    .collect();
                assert_eq!(sorted_positions(got), sorted_positions(want));
            }
        }
        assert_eq!(tree.len(), 500);
    }

    #[test]
    fn disc_boundary_is_inclusive() {
        let mut tree = KdTree::new();
        let on_edge = Vec2::new(0.7, 0.5);
        tree.insert(PointRecord { pos: on_edge, owner: Owner::Agent(0) });
        let hits = tree.neighbors_in_disc(Vec2::new(0.5, 0.5), 0.2);
        assert_eq!(hits.len(), 1);
        let miss = tree.neighbors_in_disc(Vec2::new(0.5, 0.5), 0.2 - 1e-12);
        assert!(miss.is_empty());
    }

    #[test]
    fn duplicate_points_all_retrievable() {
        let mut tree = KdTree::new();
        let p = Vec2::new(0.25, 0.25);
        for i in 0..20 {
            tree.insert(PointRecord { pos: p, owner: Owner::Agent(i) });
        }
        assert_eq!(tree.neighbors_in_disc(p, 0.0).len(), 20);
        assert_eq!(tree.len(), 20);
    }

    #[test]
    fn remove_owner_tombstones_and_rebuilds() {
        let mut rng = SplitMix64::new(23);
        let mut tree = KdTree::new();
        for i in 0..60 {
            tree.insert(PointRecord {
                pos: Vec2::new(rng.next_f64(), rng.next_f64()),
                owner: if i < 40 { Owner::Agent(1) } else { Owner::Agent(2) },
            });
        }
        // Removing the minority owner tombstones without rebuilding.
        let hit = tree.remove_owner(Owner::Agent(2));
        assert_eq!(hit, 20);
        assert_eq!(tree.len(), 40);
        assert_eq!(tree.tombstones(), 20);
        assert!(tree
            .range_query(&Rect::unit())
            .iter()
            .all(|r| r.owner == Owner::Agent(1)));
        // Removing the majority owner pushes tombstones past live and forces
        // a rebuild; a rebuilt empty tree has no tombstones left.
        let hit = tree.remove_owner(Owner::Agent(1));
        assert_eq!(hit, 40);
        assert_eq!(tree.len(), 0);
        assert_eq!(tree.tombstones(), 0);
        assert!(tree.range_query(&Rect::unit()).is_empty());
    }

    #[test]
    fn rebuild_preserves_live_set() {
        let mut rng = SplitMix64::new(29);
        let mut tree = KdTree::new();
        let mut recs = Vec::new();
        for i in 0..300 {
            let rec = PointRecord {
                pos: Vec2::new(rng.next_f64(), rng.next_f64()),
                owner: Owner::Agent((i % 2) as u32),
            };
            tree.insert(rec);
            recs.push(rec);
        }
        tree.remove_owner(Owner::Agent(0));
        let survivors: Vec<PointRecord> =
            recs.iter().filter(|r| r.owner == Owner::Agent(1)).copied().collect();
        assert_eq!(
            sorted_positions(tree.live_records()),
            sorted_positions(survivors.clone())
        );
        // Queries after the rebuild still agree with brute force.
        let pts: Vec<Vec2> = survivors.iter().map(|r| r.pos).collect();
        let center = Vec2::new(0.4, 0.6);
        let got = tree.neighbors_in_disc(center, 0.25);
        let want: Vec<PointRecord> = oracles::brute_in_disc(&pts, center, 0.25)
            .into_iter()
            .map(|i| survivors[i])
            .collect();
        assert_eq!(sorted_positions(got), sorted_positions(want));
    }

    #[test]
    fn balanced_build_is_shallow() {
        let mut rng = SplitMix64::new(31);
        let recs = random_records(&mut rng, 1024);
        let tree = KdTree::build(&recs);
        // Perfectly balanced would be 11 levels for 1024 nodes.
        assert!(tree.max_depth() <= 14, "depth {}", tree.max_depth());
    }

    #[test]
    fn pruning_skips_most_of_the_tree_and_stays_sound() {
        let mut rng = SplitMix64::new(37);
        let recs = random_records(&mut rng, 2000);
        let tree = KdTree::build(&recs);
        let window = Rect::new(Vec2::new(0.4, 0.4), Vec2::new(0.45, 0.45));
        let (got, visited) = tree.range_query_counted(&window);
        let pts: Vec<Vec2> = recs.iter().map(|r| r.pos).collect();
        let want = oracles::brute_in_rect(&pts, &window);
        assert_eq!(got.len(), want.len());
        assert!(visited < 600, "visited {visited} of 2000");
    }

    #[test]
    fn variance_axis_split_prefers_spread_dimension() {
        // Points spread along y only; the root must split on y.
        let recs: Vec<PointRecord> = (0..9)
            .map(|i| PointRecord {
                pos: Vec2::new(0.5, i as f64 / 8.0),
                owner: Owner::Agent(0),
            })
            .collect();
        let tree = KdTree::build(&recs);
        assert_eq!(tree.nodes[tree.root.unwrap() as usize].axis, 1);
        // y values are multiples of 1/8; [0.4, 0.6] catches only 0.5.
        let got = tree.range_query(&Rect::new(Vec2::new(0.0, 0.4), Vec2::new(1.0, 0.6)));
        assert_eq!(got.len(), 1);
    }
}
