//! The continuous exploration world: point agents with disc-shaped coverage
//! stamps on the unit square, disc obstacles, a belief grid for entropy
//! accounting, per-step rewards (information gain + collision penalty +
//! overlap shaping), spawn and obstacle-injection schedules, and episode
//! classification.
//!
//! Geometry stays continuous throughout; the grid exists only so that map
//! uncertainty has a computable entropy. Coverage bookkeeping is
//! incremental: each new stamp contributes its area minus its overlap with
//! the union laid down before it, so per-step exploration rates avoid a
//! full union recomputation (available separately as the exact variant).

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    self, Circle, GeomError, Rect, RewardShape, Vec2, overlap_reward, union_area,
    union_area_in_disc,
};
use crate::kdtree::{KdTree, Owner, PointRecord};

const LN_2: f64 = core::f64::consts::LN_2;
/// Retry budget for random obstacle placement before giving up.
const PLACEMENT_TRIES: u32 = 100;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    BadConfig(String),
    #[error("could not place an obstacle after {attempts} attempts")]
    ObstaclePlacement { attempts: u32 },
    #[error("expected {expected} actions for the live agents, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("non-finite action for agent {agent}")]
    NonFiniteAction { agent: u32 },
    #[error("agent {agent} is not alive")]
    DeadAgent { agent: u32 },
    #[error("episode is over (or never started); call reset")]
    EpisodeOver,
    #[error("episode still running; outcome is undefined")]
    EpisodeRunning,
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Agent exploration radius; obstacles share it.
    pub agent_radius: f64,
    /// Steps per episode.
    pub episode_len: u32,
    /// Steps an agent operates before its battery runs out and it departs.
    /// Equals the episode length by default, so departures only occur
    /// in-episode when this is configured shorter.
    pub life_cycle: u32,
    /// Agents present at reset, one per arrival corner.
    pub initial_agents: usize,
    /// Agents injected per spawn tick while capacity remains.
    pub spawn_count: usize,
    /// Steps between spawn ticks.
    pub spawn_period: u32,
    /// Hard cap on concurrently live agents; also the parameter slot count.
    pub n_max: usize,
    /// Reward added per collision an agent participates in.
    pub collision_reward: f64,
    /// Obstacles placed at reset.
    pub static_obstacles: usize,
    /// Obstacle-injection base period m (at difficulty 0).
    pub curriculum_m: u32,
    /// Obstacles per injection at the base period; n/m stays constant as
    /// difficulty shrinks m.
    pub curriculum_n: f64,
    /// Belief grid resolution G (G×G cells).
    pub belief_resolution: usize,
    /// Speed cap, map units per step.
    pub v_max: f64,
    /// Acceleration per unit action, map units per step².
    pub accel_scale: f64,
    /// Velocity damping factor applied each step.
    pub damping: f64,
    /// Exploration rate at or above which a clean episode counts as a
    /// success.
    pub success_rate: f64,
    /// Obstacle sensing radius for observations (larger than the stamp).
    pub sensing_radius: f64,
    /// Nearest-obstacle slots in the observation.
    pub k_obs: usize,
    /// Own-trajectory window length in the observation.
    pub traj_window: usize,
    /// Quadrature tolerance for area computations.
    pub area_tol: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            agent_radius: 0.04,
            episode_len: 60,
            life_cycle: 60,
            initial_agents: 4,
            spawn_count: 2,
            spawn_period: 4,
            n_max: 16,
            collision_reward: -10.0,
            static_obstacles: 4,
            curriculum_m: 4,
            curriculum_n: 1.0,
            belief_resolution: 100,
            v_max: 0.05,
            accel_scale: 0.02,
            damping: 0.25,
            success_rate: 0.9,
            sensing_radius: 0.2,
            k_obs: 4,
            traj_window: 5,
            area_tol: 1e-7,
        }
    }
}

impl EnvConfig {
    /// Observation layout: position (2), velocity (2), k_obs nearest
    /// obstacles relative (2 each), wall distances (4), trajectory window
    /// relative (2 each).
    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.k_obs + 4 + 2 * self.traj_window
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: &str| Err(EnvError::BadConfig(String::from(msg)));
        if !(self.agent_radius > 0.0 && self.agent_radius < 0.5) {
            return bad("agent_radius must lie in (0, 0.5)");
        }
        if self.episode_len == 0 || self.spawn_period == 0 || self.curriculum_m == 0 {
            return bad("episode_len, spawn_period, and curriculum_m must be positive");
        }
        if self.life_cycle == 0 {
            return bad("life_cycle must be positive");
        }
        if self.initial_agents == 0 || self.initial_agents > self.n_max {
            return bad("initial_agents must be in 1..=n_max");
        }
        if self.belief_resolution == 0 {
            return bad("belief_resolution must be positive");
        }
        if !(self.v_max > 0.0 && self.accel_scale > 0.0) {
            return bad("v_max and accel_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad("damping must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.success_rate) {
            return bad("success_rate must lie in [0, 1]");
        }
        if self.sensing_radius <= 0.0 {
            return bad("sensing_radius must be positive");
        }
        if self.curriculum_n < 0.0 {
            return bad("curriculum_n must be non-negative");
        }
        if !(self.area_tol > 0.0) {
            return bad("area_tol must be positive");
        }
        Ok(())
    }
}

/// Occupancy belief for one grid cell. Cells sharpen once and stay known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cell {
    Unknown,
    Free,
    Blocked,
}

/// G×G occupancy-belief field. Unknown cells sit at probability 0.5 and
/// carry ln 2 of entropy each; known cells carry none.
#[derive(Clone, Debug)]
pub struct BeliefGrid {
    g: usize,
    cells: Vec<Cell>,
    unknown: usize,
}

impl BeliefGrid {
    fn new(g: usize) -> Self {
        BeliefGrid { g, cells: alloc::vec![Cell::Unknown; g * g], unknown: g * g }
    }

    pub fn resolution(&self) -> usize {
        self.g
    }

    /// Total entropy: ln 2 per unknown cell, zero per known cell.
    pub fn entropy(&self) -> f64 {
        self.unknown as f64 * LN_2
    }

    /// Occupancy probability of cell (ix, iy).
    pub fn probability(&self, ix: usize, iy: usize) -> f64 {
        match self.cells[iy * self.g + ix] {
            Cell::Unknown => 0.5,
            Cell::Free => 0.0,
            Cell::Blocked => 1.0,
        }
    }

    fn center(&self, idx: u32) -> Vec2 {
        let (ix, iy) = (idx as usize % self.g, idx as usize / self.g);
        let g = self.g as f64;
        Vec2::new((ix as f64 + 0.5) / g, (iy as f64 + 0.5) / g)
    }

    /// Center of the unknown cell nearest to `pos`, or `None` once every
    /// cell is known. Scans outward in square rings and stops as soon as no
    /// closer ring can beat the best hit so far.
    pub fn nearest_unknown(&self, pos: Vec2) -> Option<Vec2> {
        if self.unknown == 0 {
            return None;
        }
        let g = self.g as isize;
        let cell = 1.0 / self.g as f64;
        let cx = ((pos.x * self.g as f64) as isize).clamp(0, g - 1);
        let cy = ((pos.y * self.g as f64) as isize).clamp(0, g - 1);
        fn consider(
            grid: &BeliefGrid,
            pos: Vec2,
            ix: isize,
            iy: isize,
            best: &mut Option<(f64, Vec2)>,
        ) {
            let g = grid.g as isize;
            if ix < 0 || iy < 0 || ix >= g || iy >= g {
                return;
            }
            let idx = (iy * g + ix) as usize;
            if grid.cells[idx] == Cell::Unknown {
                let c = grid.center(idx as u32);
                let d = (c - pos).norm();
                if best.is_none_or(|(bd, _)| d < bd) {
                    *best = Some((d, c));
                }
            }
        }
        let mut best: Option<(f64, Vec2)> = None;
        for r in 0..g {
            // A cell in ring r is at least (r-1) cell widths away, so once
            // the best hit beats that bound no later ring can improve on it.
            if let Some((bd, _)) = best
                && (r - 1) as f64 * cell > bd
            {
                break;
            }
            if r == 0 {
                consider(self, pos, cx, cy, &mut best);
                continue;
            }
            for ix in (cx - r)..=(cx + r) {
                consider(self, pos, ix, cy - r, &mut best);
                consider(self, pos, ix, cy + r, &mut best);
            }
            for iy in (cy - r + 1)..=(cy + r - 1) {
                consider(self, pos, cx - r, iy, &mut best);
                consider(self, pos, cx + r, iy, &mut best);
            }
        }
        best.map(|(_, c)| c)
    }

    /// Indices of unknown cells whose centers lie inside the disc.
    fn unknown_in_disc(&self, disc: &Circle, out: &mut Vec<u32>) {
        let g = self.g as f64;
        let lo = |c: f64| libm::ceil(g * (c - disc.radius) - 0.5).max(0.0) as usize;
        let hi = |c: f64| (libm::floor(g * (c + disc.radius) - 0.5) as usize).min(self.g - 1);
        for iy in lo(disc.center.y)..=hi(disc.center.y) {
            for ix in lo(disc.center.x)..=hi(disc.center.x) {
                let idx = (iy * self.g + ix) as u32;
                if self.cells[iy * self.g + ix] == Cell::Unknown
                    && disc.contains_point(self.center(idx))
                {
                    out.push(idx);
                }
            }
        }
    }

    fn mark(&mut self, idx: u32, blocked: bool) {
        let cell = &mut self.cells[idx as usize];
        if *cell == Cell::Unknown {
            *cell = if blocked { Cell::Blocked } else { Cell::Free };
            self.unknown -= 1;
        }
    }
}

#[derive(Clone, Debug)]
struct Agent {
    id: u32,
    pos: Vec2,
    vel: Vec2,
    age: u32,
    alive: bool,
    /// Every position held, most recent last (includes the current one).
    traj: Vec<Vec2>,
}

/// Read-only snapshot of one live agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentView {
    pub id: u32,
    pub slot: usize,
    pub pos: Vec2,
    pub vel: Vec2,
    pub age: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeOutcome {
    Success,
    Failure,
}

/// Result of one simultaneous step of all live agents.
#[derive(Clone, Debug, Default)]
pub struct StepOutcome {
    /// Ids of the agents the actions were applied to, in order.
    pub acting: Vec<u32>,
    /// Post-move positions of the acting agents.
    pub positions: Vec<Vec2>,
    pub rewards: Vec<f64>,
    /// Collisions each acting agent participated in this step.
    pub collisions: Vec<u32>,
    /// Information-gain component of each reward.
    pub info_gains: Vec<f64>,
    /// Overlap-shaping component of each reward.
    pub overlap_terms: Vec<f64>,
    /// Whether each acting agent is finished (departed, or episode over).
    pub dones: Vec<bool>,
    /// Observations of every agent live after the step (including fresh
    /// spawns, excluding departures), in action order for the next step.
    pub observations: Vec<(AgentView, Vec<f64>)>,
    pub done: bool,
    /// Incrementally tracked exploration rate after the step.
    pub exploration_rate: f64,
    /// Belief entropy after the step.
    pub entropy: f64,
    /// Total entropy decrease this step (includes reveals by agents that
    /// spawned at the end of the step, which are attributed to nobody).
    pub info_gain_total: f64,
    /// Cumulative collision count over the episode so far.
    pub episode_collisions: u64,
}

pub struct Env {
    cfg: EnvConfig,
    shape: RewardShape,
    map: Rect,
    rng: ChaCha8Rng,
    t: u32,
    started: bool,
    agents: Vec<Agent>,
    obstacles: Vec<Circle>,
    tree: KdTree,
    /// Stamps of departed agents, removed from the live tree but still
    /// part of the covered area and the overlap history.
    frozen: Vec<Circle>,
    /// Every stamp ever laid, for exact union recomputation.
    stamps: Vec<Circle>,
    belief: BeliefGrid,
    explored: f64,
    next_agent_id: u32,
    difficulty: f64,
    curriculum_acc: f64,
    episode_collisions: u64,
    obstacle_hit: bool,
}

/// Arrival corners in round-robin order, inset by the agent radius.
fn corner(cfg: &EnvConfig, k: u32) -> Vec2 {
    let r = cfg.agent_radius;
    match k % 4 {
        0 => Vec2::new(r, r),
        1 => Vec2::new(1.0 - r, r),
        2 => Vec2::new(1.0 - r, 1.0 - r),
        _ => Vec2::new(r, 1.0 - r),
    }
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let shape = geometry::default_reward_shape(cfg.agent_radius)?;
        Ok(Env {
            cfg,
            shape,
            map: Rect::unit(),
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            started: false,
            agents: Vec::new(),
            obstacles: Vec::new(),
            tree: KdTree::new(),
            frozen: Vec::new(),
            stamps: Vec::new(),
            belief: BeliefGrid::new(cfg.belief_resolution),
            explored: 0.0,
            next_agent_id: 0,
            difficulty: 0.0,
            curriculum_acc: 0.0,
            episode_collisions: 0,
            obstacle_hit: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// Sets the curriculum difficulty in [0, 1]: the injection period m
    /// shrinks from curriculum_m toward 1 as difficulty grows, while the
    /// per-injection count is rescaled to hold n/m constant. Takes effect
    /// from the next tick; persists across resets.
    pub fn set_difficulty(&mut self, p: f64) {
        self.difficulty = p.clamp(0.0, 1.0);
    }

    /// Current (m, n) injection schedule under the difficulty setting.
    pub fn curriculum_schedule(&self) -> (u32, f64) {
        let m0 = self.cfg.curriculum_m as f64;
        let m = libm::ceil(m0 * (1.0 - self.difficulty)).max(1.0);
        (m as u32, self.cfg.curriculum_n * m / m0)
    }

    /// Rebuilds the world: arrival-corner agents, freshly placed static
    /// obstacles, uniform belief, empty coverage except the initial discs.
    pub fn reset(&mut self, seed: u64) -> Result<(), EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.started = true;
        self.agents.clear();
        self.obstacles.clear();
        self.tree = KdTree::new();
        self.frozen.clear();
        self.stamps.clear();
        self.belief = BeliefGrid::new(self.cfg.belief_resolution);
        self.explored = 0.0;
        self.next_agent_id = 0;
        self.curriculum_acc = 0.0;
        self.episode_collisions = 0;
        self.obstacle_hit = false;

        for _ in 0..self.cfg.static_obstacles {
            match self.try_place_obstacle(true)? {
                Some(pos) => self.add_obstacle(pos)?,
                None => return Err(EnvError::ObstaclePlacement { attempts: PLACEMENT_TRIES }),
            }
        }
        for _ in 0..self.cfg.initial_agents {
            // Initial discs count as coverage but are not sensed: the
            // belief field starts uniform.
            self.spawn_agent(false)?;
        }
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        !self.started || self.t >= self.cfg.episode_len
    }

    pub fn elapsed_steps(&self) -> u32 {
        self.t
    }

    pub fn live_count(&self) -> usize {
        self.agents.iter().filter(|a| a.alive).count()
    }

    /// Live agents in action order (ascending id).
    pub fn live_agents(&self) -> Vec<AgentView> {
        self.agents.iter().filter(|a| a.alive).map(|a| self.view(a)).collect()
    }

    fn view(&self, a: &Agent) -> AgentView {
        AgentView {
            id: a.id,
            slot: a.id as usize % self.cfg.n_max,
            pos: a.pos,
            vel: a.vel,
            age: a.age,
        }
    }

    pub fn obstacles(&self) -> &[Circle] {
        &self.obstacles
    }

    pub fn stamps(&self) -> &[Circle] {
        &self.stamps
    }

    pub fn stamp_count(&self) -> usize {
        self.stamps.len()
    }

    pub fn belief(&self) -> &BeliefGrid {
        &self.belief
    }

    pub fn episode_collisions(&self) -> u64 {
        self.episode_collisions
    }

    pub fn obstacle_collision_occurred(&self) -> bool {
        self.obstacle_hit
    }

    /// Incrementally tracked exploration rate (explored area over map
    /// area). Cheap; drifts from the exact value only by accumulated
    /// quadrature tolerance.
    pub fn exploration_rate(&self) -> f64 {
        (self.explored / self.map.area()).min(1.0)
    }

    /// Exploration rate from a full union-area recomputation over every
    /// stamp and obstacle.
    pub fn exploration_rate_exact(&self, tol: f64) -> Result<f64, GeomError> {
        let mut all = self.stamps.clone();
        all.extend_from_slice(&self.obstacles);
        Ok((union_area(&all, &self.map, tol)?.value / self.map.area()).min(1.0))
    }

    pub fn belief_entropy(&self) -> f64 {
        self.belief.entropy()
    }

    /// Success iff the episode finished with no agent-obstacle collision
    /// and an exact exploration rate at or above the success threshold.
    pub fn classify_episode(&self) -> Result<EpisodeOutcome, EnvError> {
        if !self.is_done() {
            return Err(EnvError::EpisodeRunning);
        }
        if self.obstacle_hit {
            return Ok(EpisodeOutcome::Failure);
        }
        let rate = self.exploration_rate_exact(self.cfg.area_tol.max(1e-6))?;
        Ok(if rate >= self.cfg.success_rate {
            EpisodeOutcome::Success
        } else {
            EpisodeOutcome::Failure
        })
    }

    /// In-map area of an agent disc at `pos` (the full disc area unless it
    /// protrudes past a wall).
    fn disc_in_map_area(&self, pos: Vec2) -> Result<f64, GeomError> {
        let r = self.cfg.agent_radius;
        let disc = Circle { center: pos, radius: r };
        if pos.x >= r && pos.x <= 1.0 - r && pos.y >= r && pos.y <= 1.0 - r {
            Ok(disc.area())
        } else {
            Ok(union_area_in_disc(&disc, &[disc], &self.map, self.cfg.area_tol)?.value)
        }
    }

    /// Area of the disc at `pos` covered by previously stamped agent
    /// discs, live or departed (obstacles do not count). This is the
    /// overlap-shaping argument; the clamp absorbs quadrature error at
    /// the full-overlap boundary.
    pub fn intersection_with_history(&self, pos: Vec2) -> Result<f64, GeomError> {
        let r = self.cfg.agent_radius;
        let disc = Circle { center: pos, radius: r };
        let mut hist: Vec<Circle> = self
            .tree
            .neighbors_in_disc(pos, 2.0 * r)
            .into_iter()
            .filter(|rec| matches!(rec.owner, Owner::Agent(_)))
            .map(|rec| Circle { center: rec.pos, radius: r })
            .collect();
        hist.extend(self.frozen.iter().filter(|c| c.center.dist_sq(pos) <= 4.0 * r * r).copied());
        if hist.is_empty() {
            return Ok(0.0);
        }
        // Re-stamping an already covered spot is common (slow agents) and
        // exact: skip the quadrature when some stamp contains the disc.
        let area = if hist.iter().any(|c| c.contains_circle(&disc)) {
            self.disc_in_map_area(pos)?
        } else {
            union_area_in_disc(&disc, &hist, &self.map, self.cfg.area_tol)?.value
        };
        Ok(area.clamp(0.0, self.shape.s3))
    }

    /// Observation for one live agent; see [`EnvConfig::obs_dim`] for the
    /// layout.
    pub fn observe(&self, id: u32) -> Result<Vec<f64>, EnvError> {
        let agent = self
            .agents
            .iter()
            .find(|a| a.id == id && a.alive)
            .ok_or(EnvError::DeadAgent { agent: id })?;
        let mut o = Vec::with_capacity(self.cfg.obs_dim());
        o.push(agent.pos.x);
        o.push(agent.pos.y);
        o.push(agent.vel.x);
        o.push(agent.vel.y);

        let mut near: Vec<(f64, Vec2)> = self
            .obstacles
            .iter()
            .filter_map(|c| {
                let d = c.center.dist(agent.pos);
                (d <= self.cfg.sensing_radius).then(|| (d, c.center - agent.pos))
            })
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        for k in 0..self.cfg.k_obs {
            match near.get(k) {
                Some((_, rel)) => {
                    o.push(rel.x);
                    o.push(rel.y);
                }
                None => {
                    o.push(0.0);
                    o.push(0.0);
                }
            }
        }

        o.push(agent.pos.x);
        o.push(1.0 - agent.pos.x);
        o.push(agent.pos.y);
        o.push(1.0 - agent.pos.y);

        // Past positions relative to the current one, most recent first;
        // the trajectory's last entry is the current position itself.
        let past = &agent.traj[..agent.traj.len() - 1];
        for k in 0..self.cfg.traj_window {
            match past.iter().rev().nth(k) {
                Some(p) => {
                    o.push(p.x - agent.pos.x);
                    o.push(p.y - agent.pos.y);
                }
                None => {
                    o.push(0.0);
                    o.push(0.0);
                }
            }
        }
        Ok(o)
    }

    /// Observations for every live agent, in action order.
    pub fn observations(&self) -> Vec<(AgentView, Vec<f64>)> {
        self.agents
            .iter()
            .filter(|a| a.alive)
            .map(|a| (self.view(a), self.observe(a.id).expect("agent is alive")))
            .collect()
    }

    /// Advances the world one step. `actions` must hold one vector per
    /// live agent, in [`Env::live_agents`] order; components are clamped
    /// to [−1, 1].
    pub fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver);
        }
        let acting: Vec<usize> = (0..self.agents.len()).filter(|&i| self.agents[i].alive).collect();
        if actions.len() != acting.len() {
            return Err(EnvError::ActionCount { expected: acting.len(), got: actions.len() });
        }
        for (k, a) in actions.iter().enumerate() {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(EnvError::NonFiniteAction { agent: self.agents[acting[k]].id });
            }
        }
        let r = self.cfg.agent_radius;
        let entropy_before = self.belief.entropy();

        // Movement: damped acceleration, speed cap, wall clamp with the
        // outward velocity component zeroed.
        for (k, &ai) in acting.iter().enumerate() {
            let a = &mut self.agents[ai];
            let acc = Vec2::new(actions[k][0].clamp(-1.0, 1.0), actions[k][1].clamp(-1.0, 1.0));
            let mut v = (a.vel + acc * self.cfg.accel_scale) * (1.0 - self.cfg.damping);
            let speed = v.norm();
            if speed > self.cfg.v_max {
                v = v * (self.cfg.v_max / speed);
            }
            let mut p = a.pos + v;
            if p.x <= 0.0 {
                p.x = 0.0;
                v.x = v.x.max(0.0);
            } else if p.x >= 1.0 {
                p.x = 1.0;
                v.x = v.x.min(0.0);
            }
            if p.y <= 0.0 {
                p.y = 0.0;
                v.y = v.y.max(0.0);
            } else if p.y >= 1.0 {
                p.y = 1.0;
                v.y = v.y.min(0.0);
            }
            a.vel = v;
            a.pos = p;
        }

        // Collisions after the simultaneous move: agent pairs and
        // agent-obstacle contacts, both at center distance < 2r.
        let mut collisions = alloc::vec![0u32; acting.len()];
        for k in 0..acting.len() {
            for l in k + 1..acting.len() {
                if self.agents[acting[k]].pos.dist_sq(self.agents[acting[l]].pos) < 4.0 * r * r {
                    collisions[k] += 1;
                    collisions[l] += 1;
                }
            }
            for obst in &self.obstacles {
                if self.agents[acting[k]].pos.dist_sq(obst.center) < 4.0 * r * r {
                    collisions[k] += 1;
                    self.obstacle_hit = true;
                }
            }
        }

        // Overlap with the coverage laid down before this step. Agents
        // moving simultaneously do not penalize each other's same-step
        // stamps.
        let mut overlap_terms = alloc::vec![0.0; acting.len()];
        for (k, &ai) in acting.iter().enumerate() {
            let s_inter = self.intersection_with_history(self.agents[ai].pos)?;
            overlap_terms[k] = overlap_reward(s_inter, &self.shape)?;
        }

        // Belief reveal with equal split between same-step discoverers:
        // first collect every (cell, discoverer) claim, then share each
        // cell's ln 2 among its claimants.
        let mut info_gains = alloc::vec![0.0; acting.len()];
        let mut claims: Vec<(u32, usize)> = Vec::new();
        let mut cell_buf: Vec<u32> = Vec::new();
        for (k, &ai) in acting.iter().enumerate() {
            let disc = Circle { center: self.agents[ai].pos, radius: r };
            cell_buf.clear();
            self.belief.unknown_in_disc(&disc, &mut cell_buf);
            claims.extend(cell_buf.iter().map(|&c| (c, k)));
        }
        claims.sort_unstable();
        let mut idx = 0;
        while idx < claims.len() {
            let cell = claims[idx].0;
            let mut end = idx;
            while end < claims.len() && claims[end].0 == cell {
                end += 1;
            }
            let share = LN_2 / (end - idx) as f64;
            for &(_, k) in &claims[idx..end] {
                info_gains[k] += share;
            }
            let center = self.belief.center(cell);
            let blocked = self.obstacles.iter().any(|o| o.contains_point(center));
            self.belief.mark(cell, blocked);
            idx = end;
        }

        let rewards: Vec<f64> = (0..acting.len())
            .map(|k| {
                info_gains[k] + collisions[k] as f64 * self.cfg.collision_reward + overlap_terms[k]
            })
            .collect();
        self.episode_collisions += collisions.iter().map(|&c| c as u64).sum::<u64>();

        // Stamp the new positions. Marginal coverage is computed against
        // the union so far, including stamps laid earlier in this loop, so
        // the running total stays an exact union accounting.
        let acting_ids: Vec<u32> = acting.iter().map(|&ai| self.agents[ai].id).collect();
        let positions: Vec<Vec2> = acting.iter().map(|&ai| self.agents[ai].pos).collect();
        let mut departed: Vec<usize> = Vec::new();
        for &ai in &acting {
            let (id, pos) = (self.agents[ai].id, self.agents[ai].pos);
            self.add_stamp(id, pos)?;
            let a = &mut self.agents[ai];
            a.traj.push(pos);
            a.age += 1;
            if a.age >= self.cfg.life_cycle {
                a.alive = false;
                departed.push(ai);
            }
        }
        // Departed agents leave the live tree; their coverage is frozen
        // and keeps counting toward the explored area and the overlap
        // history.
        for &ai in &departed {
            self.tree.remove_owner(Owner::Agent(self.agents[ai].id));
            self.frozen
                .extend(self.agents[ai].traj.iter().map(|&p| Circle { center: p, radius: r }));
        }

        self.t += 1;
        let done = self.t >= self.cfg.episode_len;
        if !done {
            self.spawn_tick()?;
            self.curriculum_tick()?;
        }
        let dones: Vec<bool> = acting.iter().map(|&ai| done || !self.agents[ai].alive).collect();

        let entropy = self.belief.entropy();
        Ok(StepOutcome {
            acting: acting_ids,
            positions,
            rewards,
            collisions,
            info_gains,
            overlap_terms,
            dones,
            observations: self.observations(),
            done,
            exploration_rate: self.exploration_rate(),
            entropy,
            info_gain_total: entropy_before - entropy,
            episode_collisions: self.episode_collisions,
        })
    }

    /// Area the disc at `pos` adds to the union of everything stamped so
    /// far (stamps live and frozen, and obstacles), clipped to the map.
    fn coverage_marginal(&self, pos: Vec2) -> Result<f64, GeomError> {
        let r = self.cfg.agent_radius;
        let disc = Circle { center: pos, radius: r };
        let mut prior: Vec<Circle> = self
            .tree
            .neighbors_in_disc(pos, 2.0 * r)
            .into_iter()
            .map(|rec| Circle { center: rec.pos, radius: r })
            .collect();
        prior.extend(self.frozen.iter().filter(|c| c.center.dist_sq(pos) <= 4.0 * r * r).copied());
        if prior.iter().any(|c| c.contains_circle(&disc)) {
            return Ok(0.0);
        }
        let own = self.disc_in_map_area(pos)?;
        if prior.is_empty() {
            return Ok(own);
        }
        let overlap = union_area_in_disc(&disc, &prior, &self.map, self.cfg.area_tol)?.value;
        Ok((own - overlap).max(0.0))
    }

    fn add_stamp(&mut self, agent_id: u32, pos: Vec2) -> Result<(), GeomError> {
        self.explored += self.coverage_marginal(pos)?;
        self.tree.insert(PointRecord { pos, owner: Owner::Agent(agent_id) });
        self.stamps.push(Circle { center: pos, radius: self.cfg.agent_radius });
        Ok(())
    }

    fn add_obstacle(&mut self, pos: Vec2) -> Result<(), GeomError> {
        let id = self.obstacles.len() as u32;
        self.explored += self.coverage_marginal(pos)?;
        self.tree.insert(PointRecord { pos, owner: Owner::Obstacle(id) });
        self.obstacles.push(Circle { center: pos, radius: self.cfg.agent_radius });
        Ok(())
    }

    /// Spawns one agent at the next round-robin corner. `sense` controls
    /// whether its arrival stamp reveals belief cells (true mid-episode;
    /// false at reset, where belief starts uniform).
    fn spawn_agent(&mut self, sense: bool) -> Result<(), EnvError> {
        let id = self.next_agent_id;
        self.next_agent_id += 1;
        let pos = corner(&self.cfg, id);
        self.agents.push(Agent {
            id,
            pos,
            vel: Vec2::ZERO,
            age: 0,
            alive: true,
            traj: alloc::vec![pos],
        });
        self.add_stamp(id, pos)?;
        if sense {
            let disc = Circle { center: pos, radius: self.cfg.agent_radius };
            let mut cells = Vec::new();
            self.belief.unknown_in_disc(&disc, &mut cells);
            for c in cells {
                let center = self.belief.center(c);
                let blocked = self.obstacles.iter().any(|o| o.contains_point(center));
                self.belief.mark(c, blocked);
            }
        }
        Ok(())
    }

    fn spawn_tick(&mut self) -> Result<(), EnvError> {
        if self.t % self.cfg.spawn_period != 0 {
            return Ok(());
        }
        for _ in 0..self.cfg.spawn_count {
            if self.live_count() >= self.cfg.n_max {
                break;
            }
            self.spawn_agent(true)?;
        }
        Ok(())
    }

    fn curriculum_tick(&mut self) -> Result<(), EnvError> {
        let (m, n) = self.curriculum_schedule();
        if self.t % m != 0 {
            return Ok(());
        }
        self.curriculum_acc += n;
        while self.curriculum_acc >= 1.0 {
            self.curriculum_acc -= 1.0;
            match self.try_place_obstacle(false)? {
                Some(pos) => self.add_obstacle(pos)?,
                None => {
                    log::warn!(
                        "skipping obstacle injection at step {}: no free position found",
                        self.t
                    );
                }
            }
        }
        Ok(())
    }

    /// Draws candidate positions until one avoids every live agent and
    /// every arrival corner (so spawns stay survivable); at reset it must
    /// also avoid previously placed obstacles. Returns None when the retry
    /// budget runs out.
    fn try_place_obstacle(&mut self, avoid_obstacles: bool) -> Result<Option<Vec2>, EnvError> {
        let r = self.cfg.agent_radius;
        for _ in 0..PLACEMENT_TRIES {
            let pos =
                Vec2::new(self.rng.random_range(r..=1.0 - r), self.rng.random_range(r..=1.0 - r));
            let near_agent =
                self.agents.iter().any(|a| a.alive && a.pos.dist_sq(pos) < 4.0 * r * r);
            let near_corner = (0..4).any(|k| corner(&self.cfg, k).dist(pos) < 2.5 * r);
            let near_obstacle = avoid_obstacles
                && self.obstacles.iter().any(|o| o.center.dist_sq(pos) < 4.0 * r * r);
            if !near_agent && !near_corner && !near_obstacle {
                return Ok(Some(pos));
            }
        }
        Ok(None)
    }

    #[cfg(test)]
    fn tree_len(&self) -> usize {
        self.tree.len()
    }
}
