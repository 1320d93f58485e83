//! Grid pursuit: pursuers surround randomly moving evaders.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{DiscreteEnv, EnvStep, MultiAgentEnv, StepInfo};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// North, East, West, South, Stay.
pub const PURSUIT_ACTIONS: usize = 5;

const MOVES: [(i32, i32); PURSUIT_ACTIONS] = [(0, -1), (1, 0), (-1, 0), (0, 1), (0, 0)];

pub type Pos = (i32, i32);

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitConfig {
    pub n_pursuers: usize,
    pub n_evaders: usize,
    pub sensing_range: usize,
    pub width: usize,
    pub height: usize,
    pub capture_reward: f64,
    pub step_penalty: f64,
    pub boundary_penalty: f64,
    pub horizon: usize,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            n_pursuers: 6,
            n_evaders: 2,
            sensing_range: 3,
            width: 15,
            height: 15,
            capture_reward: 5.0,
            step_penalty: 0.05,
            boundary_penalty: 0.5,
            horizon: 500,
        }
    }
}

impl PursuitConfig {
    /// N = 8 on the 17 x 17 map.
    pub fn eight_pursuers() -> Self {
        Self {
            n_pursuers: 8,
            width: 17,
            height: 17,
            ..Self::default()
        }
    }

    /// Four pursuers on a 10 x 10 map.
    pub fn small() -> Self {
        Self {
            n_pursuers: 4,
            width: 10,
            height: 10,
            ..Self::default()
        }
    }

    pub fn window(&self) -> usize {
        2 * self.sensing_range + 1
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.window() * self.window()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pursuers == 0 || self.n_evaders == 0 || self.width == 0 || self.height == 0 || self.horizon == 0 {
            return Err(Error::Config("pursuit sizes must be positive".into()));
        }
        if self.width * self.height < self.n_pursuers + self.n_evaders {
            return Err(Error::Config(format!(
                "{}x{} map cannot host {} entities",
                self.width,
                self.height,
                self.n_pursuers + self.n_evaders
            )));
        }
        if [self.capture_reward, self.step_penalty, self.boundary_penalty]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config("pursuit rewards must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// The `n_evaders` cells nearest the geometric centre, ties broken by
    /// row then column.
    pub fn centre_cells(&self) -> Vec<Pos> {
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        let mut cells: Vec<Pos> = (0..self.height as i32)
            .flat_map(|y| (0..self.width as i32).map(move |x| (x, y)))
            .collect();
        cells.sort_by(|a, b| {
            let da = (a.0 as f64 - cx).powi(2) + (a.1 as f64 - cy).powi(2);
            let db = (b.0 as f64 - cx).powi(2) + (b.1 as f64 - cy).powi(2);
            da.total_cmp(&db).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
        });
        cells.truncate(self.n_evaders);
        cells
    }
}

#[derive(Debug, Clone)]
pub struct PursuitEnv {
    cfg: PursuitConfig,
    pursuers: Vec<Pos>,
    evaders: Vec<Pos>,
    t: usize,
    rng: Rng,
}

impl PursuitEnv {
    /// Evaders at the centre, pursuers uniformly on the remaining cells.
    pub fn new(cfg: PursuitConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = Self {
            cfg,
            pursuers: Vec::new(),
            evaders: Vec::new(),
            t: 0,
            rng: rng::seeded(seed),
        };
        env.reset();
        Ok(env)
    }

    /// A specific layout, for tests and oracles.
    pub fn from_state(cfg: PursuitConfig, pursuers: Vec<Pos>, evaders: Vec<Pos>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if pursuers.len() != cfg.n_pursuers || evaders.len() > cfg.n_evaders {
            return Err(Error::Env("entity counts do not match config".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &p in pursuers.iter().chain(&evaders) {
            if !in_bounds(&cfg, p) || !seen.insert(p) {
                return Err(Error::Env(format!("invalid or shared cell {p:?}")));
            }
        }
        Ok(Self {
            cfg,
            pursuers,
            evaders,
            t: 0,
            rng: rng::seeded(seed),
        })
    }

    pub fn config(&self) -> &PursuitConfig {
        &self.cfg
    }

    pub fn pursuers(&self) -> &[Pos] {
        &self.pursuers
    }

    pub fn evaders(&self) -> &[Pos] {
        &self.evaders
    }

    fn occupied(&self, p: Pos) -> bool {
        self.pursuers.contains(&p) || self.evaders.contains(&p)
    }

    fn move_evaders(&mut self) {
        for e in 0..self.evaders.len() {
            let (dx, dy) = MOVES[self.rng.random_range(0..PURSUIT_ACTIONS)];
            let cur = self.evaders[e];
            let next = (cur.0 + dx, cur.1 + dy);
            if next != cur && in_bounds(&self.cfg, next) && !self.occupied(next) {
                self.evaders[e] = next;
            }
        }
    }

    /// Moves pursuers in a random order; returns which ones hit the edge.
    fn move_pursuers(&mut self, actions: &[usize]) -> Vec<bool> {
        let mut order: Vec<usize> = (0..self.pursuers.len()).collect();
        order.shuffle(&mut self.rng);
        let mut hit = vec![false; self.pursuers.len()];
        for i in order {
            let (dx, dy) = MOVES[actions[i]];
            let cur = self.pursuers[i];
            let next = (cur.0 + dx, cur.1 + dy);
            if next == cur {
                continue;
            }
            if !in_bounds(&self.cfg, next) {
                hit[i] = true;
            } else if !self.occupied(next) {
                self.pursuers[i] = next;
            }
        }
        hit
    }

    /// Evaders whose four sides are all pursuers or map edge.
    fn surrounded(&self) -> Vec<usize> {
        (0..self.evaders.len())
            .filter(|&e| {
                let (x, y) = self.evaders[e];
                MOVES[..4].iter().all(|&(dx, dy)| {
                    let n = (x + dx, y + dy);
                    !in_bounds(&self.cfg, n) || self.pursuers.contains(&n)
                })
            })
            .collect()
    }
}

fn in_bounds(cfg: &PursuitConfig, p: Pos) -> bool {
    p.0 >= 0 && p.1 >= 0 && (p.0 as usize) < cfg.width && (p.1 as usize) < cfg.height
}

impl MultiAgentEnv for PursuitEnv {
    type Action = usize;

    fn n_agents(&self) -> usize {
        self.cfg.n_pursuers
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn reset(&mut self) {
        self.evaders = self.cfg.centre_cells();
        let mut free: Vec<Pos> = (0..self.cfg.height as i32)
            .flat_map(|y| (0..self.cfg.width as i32).map(move |x| (x, y)))
            .filter(|p| !self.evaders.contains(p))
            .collect();
        let (picked, _) = free.partial_shuffle(&mut self.rng, self.cfg.n_pursuers);
        self.pursuers = picked.to_vec();
        self.t = 0;
    }

    /// Evaders move first, then pursuers in random order (first come wins a
    /// contested cell), then surrounded evaders are removed.
    fn step(&mut self, actions: &[usize]) -> Result<EnvStep> {
        if actions.len() != self.cfg.n_pursuers {
            return Err(Error::InvalidAction(format!(
                "expected {} actions, got {}",
                self.cfg.n_pursuers,
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= PURSUIT_ACTIONS) {
            return Err(Error::InvalidAction(format!("pursuit action id {a}")));
        }
        if self.t >= self.cfg.horizon || self.evaders.is_empty() {
            return Err(Error::Env("step on a finished episode; reset first".into()));
        }
        self.move_evaders();
        let hit = self.move_pursuers(actions);

        let mut rewards = vec![-self.cfg.step_penalty; self.cfg.n_pursuers];
        for (r, &h) in rewards.iter_mut().zip(&hit) {
            if h {
                *r -= self.cfg.boundary_penalty;
            }
        }
        let captured = self.surrounded();
        for &e in &captured {
            let (x, y) = self.evaders[e];
            for (i, &(px, py)) in self.pursuers.iter().enumerate() {
                if (px - x).abs() + (py - y).abs() == 1 {
                    rewards[i] += self.cfg.capture_reward;
                }
            }
        }
        for &e in captured.iter().rev() {
            self.evaders.remove(e);
        }
        self.t += 1;
        let done_task = self.evaders.is_empty();
        let time_limit = !done_task && self.t >= self.cfg.horizon;
        Ok(EnvStep {
            observations: self.observations(),
            rewards,
            terminal: done_task || time_limit,
            info: StepInfo {
                captures: captured.len(),
                collisions: 0,
                boundary_hits: hit.iter().filter(|&&h| h).count(),
                time_limit,
            },
        })
    }

    /// Three stacked `(2D+1)^2` binary windows: other pursuers, evaders,
    /// off-map cells. Rows run north to south, columns west to east.
    fn observe(&self, agent: usize) -> Vec<f64> {
        let d = self.cfg.sensing_range as i32;
        let w = self.cfg.window();
        let plane = w * w;
        let mut obs = vec![0.0; 3 * plane];
        let (ax, ay) = self.pursuers[agent];
        let cell = |x: i32, y: i32| -> Option<usize> {
            let (dx, dy) = (x - ax, y - ay);
            (dx.abs() <= d && dy.abs() <= d).then(|| ((dy + d) as usize) * w + (dx + d) as usize)
        };
        for (j, &(x, y)) in self.pursuers.iter().enumerate() {
            if j != agent {
                if let Some(k) = cell(x, y) {
                    obs[k] = 1.0;
                }
            }
        }
        for &(x, y) in &self.evaders {
            if let Some(k) = cell(x, y) {
                obs[plane + k] = 1.0;
            }
        }
        for dy in -d..=d {
            for dx in -d..=d {
                if !in_bounds(&self.cfg, (ax + dx, ay + dy)) {
                    obs[2 * plane + ((dy + d) as usize) * w + (dx + d) as usize] = 1.0;
                }
            }
        }
        obs
    }

    fn positions(&self) -> Vec<(f64, f64)> {
        self.pursuers.iter().map(|&(x, y)| (x as f64, y as f64)).collect()
    }

    fn t(&self) -> usize {
        self.t
    }
}

impl DiscreteEnv for PursuitEnv {
    fn n_actions(&self) -> usize {
        PURSUIT_ACTIONS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAY: usize = 4;
    const NORTH: usize = 0;
    const WEST: usize = 2;

    fn cfg(n: usize, m: usize, w: usize) -> PursuitConfig {
        PursuitConfig {
            n_pursuers: n,
            n_evaders: m,
            width: w,
            height: w,
            ..PursuitConfig::default()
        }
    }

    #[test]
    fn reset_is_seeded_and_non_overlapping() {
        let a = PursuitEnv::new(PursuitConfig::default(), 5).unwrap();
        let b = PursuitEnv::new(PursuitConfig::default(), 5).unwrap();
        assert_eq!(a.pursuers(), b.pursuers());
        let mut cells: Vec<Pos> = a.pursuers().iter().chain(a.evaders()).copied().collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 8);
        assert_eq!(a.t(), 0);
    }

    #[test]
    fn evaders_start_at_the_centre() {
        // Brute force: the minimum squared distance to (7, 7) is 0 at (7, 7);
        // the next ring {(7,6), (6,7), (8,7), (7,8)} ties at 1 and row order picks (7, 6).
        let env = PursuitEnv::new(PursuitConfig::default(), 1).unwrap();
        assert_eq!(env.evaders(), &[(7, 7), (7, 6)]);
        let small = PursuitEnv::new(PursuitConfig::small(), 1).unwrap();
        assert_eq!(small.evaders(), &[(4, 4), (5, 4)]);
    }

    #[test]
    fn map_too_small() {
        assert!(PursuitEnv::new(cfg(3, 2, 2), 0).is_err());
    }

    #[test]
    fn observation_length() {
        let env = PursuitEnv::new(PursuitConfig::default(), 0).unwrap();
        assert_eq!(env.observe(0).len(), 147);
    }

    #[test]
    fn corner_capture_rewards_both_pursuers() {
        // Evader in the corner (0,0); pursuers on (1,0) and (0,1). Evader
        // cannot move anywhere legal, so it stays and is captured.
        let c = cfg(3, 1, 6);
        let mut env = PursuitEnv::from_state(c, vec![(1, 0), (0, 1), (5, 5)], vec![(0, 0)], 3).unwrap();
        let step = env.step(&[STAY, STAY, STAY]).unwrap();
        assert_eq!(step.info.captures, 1);
        assert!((step.rewards[0] - 4.95).abs() < 1e-12);
        assert!((step.rewards[1] - 4.95).abs() < 1e-12);
        assert!((step.rewards[2] + 0.05).abs() < 1e-12);
        assert!(step.terminal && !step.info.time_limit);
        assert!(env.evaders().is_empty());
    }

    #[test]
    fn idle_and_boundary_penalties() {
        let c = cfg(2, 1, 8);
        let mut env = PursuitEnv::from_state(c, vec![(0, 0), (6, 6)], vec![(3, 3)], 0).unwrap();
        let s = env.step(&[STAY, STAY]).unwrap();
        assert_eq!(s.rewards, vec![-0.05, -0.05]);
        let s = env.step(&[NORTH, STAY]).unwrap();
        assert!((s.rewards[0] + 0.55).abs() < 1e-12);
        assert_eq!(s.info.boundary_hits, 1);
        let s = env.step(&[WEST, STAY]).unwrap();
        assert!((s.rewards[0] + 0.55).abs() < 1e-12);
        assert_eq!(env.pursuers()[0], (0, 0));
    }

    #[test]
    fn invalid_actions() {
        let mut env = PursuitEnv::new(cfg(2, 1, 5), 0).unwrap();
        assert!(matches!(env.step(&[5, 0]), Err(Error::InvalidAction(_))));
        assert!(matches!(env.step(&[0]), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn horizon_ends_the_episode() {
        let c = PursuitConfig { horizon: 3, ..cfg(2, 1, 9) };
        let mut env = PursuitEnv::new(c, 0).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = Some(env.step(&[STAY, STAY]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.terminal);
        assert!(last.info.time_limit || env.evaders().is_empty());
        assert!(env.step(&[STAY, STAY]).is_err());
    }

    #[test]
    fn lone_agent_sees_nothing_but_maybe_walls() {
        let c = cfg(2, 1, 15);
        let env = PursuitEnv::from_state(c, vec![(7, 7), (0, 0)], vec![(14, 14)], 0).unwrap();
        let o = env.observe(0);
        assert!(o.iter().all(|&v| v == 0.0));
        let corner = env.observe(1);
        // Agent at (0,0): 3 rows above and 3 columns to the left are off-map.
        let off = corner[98..].iter().filter(|&&v| v == 1.0).count();
        assert_eq!(off, 49 - 16);
    }
}
