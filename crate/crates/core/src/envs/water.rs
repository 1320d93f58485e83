//! Waterworld: continuous pursuit of drifting food while avoiding poison.
//!
//! The world is the unit square with one circular obstacle in the middle.
//! Each pursuer carries 25 evenly spaced range-limited rays. Per ray it reads
//! seven channels: distance and radial closing speed of the nearest other
//! pursuer, food and poison, plus distance to the obstacle. Distances are
//! normalised by the sensor range and read 1.0 when nothing is in range.
//! Own position and velocity complete the observation (25 * 7 + 4 = 179).

use rand::Rng as _;

use super::{EnvStep, MultiAgentEnv, StepInfo};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const WATER_SENSORS: usize = 25;
pub const SENSOR_CHANNELS: usize = 7;

const CENTRE: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct WaterConfig {
    pub n_pursuers: usize,
    pub n_food: usize,
    pub n_poison: usize,
    /// Pursuers needed on a food target at once to catch it.
    pub coop_k: usize,
    pub sensor_range: f64,
    pub food_reward: f64,
    pub touch_reward: f64,
    pub poison_penalty: f64,
    pub horizon: usize,
    pub pursuer_radius: f64,
    pub target_radius: f64,
    pub obstacle_radius: f64,
    /// Velocity change per step for a unit action.
    pub thrust: f64,
    pub max_speed: f64,
    pub target_speed: f64,
}

impl Default for WaterConfig {
    fn default() -> Self {
        Self::with_agents(8, 4)
    }
}

impl WaterConfig {
    /// `n` pursuers, cooperation threshold `k`, `n / 2` food and `n` poison.
    pub fn with_agents(n: usize, k: usize) -> Self {
        Self {
            n_pursuers: n,
            n_food: (n / 2).max(1),
            n_poison: n,
            coop_k: k,
            sensor_range: 0.3,
            food_reward: 10.0,
            touch_reward: 0.01,
            poison_penalty: 0.1,
            horizon: 500,
            pursuer_radius: 0.025,
            target_radius: 0.025,
            obstacle_radius: 0.15,
            thrust: 0.005,
            max_speed: 0.02,
            target_speed: 0.005,
        }
    }

    pub fn small() -> Self {
        Self::with_agents(4, 2)
    }

    pub fn obs_dim(&self) -> usize {
        WATER_SENSORS * SENSOR_CHANNELS + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pursuers == 0 || self.coop_k == 0 || self.coop_k > self.n_pursuers || self.horizon == 0 {
            return Err(Error::Config("waterworld needs 0 < K <= N and a horizon".into()));
        }
        let positive = [
            self.sensor_range,
            self.pursuer_radius,
            self.target_radius,
            self.obstacle_radius,
            self.thrust,
            self.max_speed,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) || self.obstacle_radius >= 0.4 {
            return Err(Error::Config("invalid waterworld geometry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct WaterEnv {
    cfg: WaterConfig,
    pursuers: Vec<Body>,
    food: Vec<Body>,
    poison: Vec<Body>,
    t: usize,
    rng: Rng,
}

impl WaterEnv {
    pub fn new(cfg: WaterConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = Self {
            cfg,
            pursuers: Vec::new(),
            food: Vec::new(),
            poison: Vec::new(),
            t: 0,
            rng: rng::seeded(seed),
        };
        env.reset();
        Ok(env)
    }

    /// A constructed state, for tests.
    pub fn from_state(cfg: WaterConfig, pursuers: Vec<Body>, food: Vec<Body>, poison: Vec<Body>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if pursuers.len() != cfg.n_pursuers {
            return Err(Error::Env("pursuer count does not match config".into()));
        }
        Ok(Self {
            cfg,
            pursuers,
            food,
            poison,
            t: 0,
            rng: rng::seeded(seed),
        })
    }

    pub fn config(&self) -> &WaterConfig {
        &self.cfg
    }

    pub fn pursuers(&self) -> &[Body] {
        &self.pursuers
    }

    pub fn food(&self) -> &[Body] {
        &self.food
    }

    pub fn poison(&self) -> &[Body] {
        &self.poison
    }

    fn free_point(&mut self, radius: f64) -> [f64; 2] {
        loop {
            let p = [
                self.rng.random_range(radius..1.0 - radius),
                self.rng.random_range(radius..1.0 - radius),
            ];
            if dist(p, CENTRE) > self.cfg.obstacle_radius + radius {
                return p;
            }
        }
    }

    fn drifting(&mut self) -> Body {
        let pos = self.free_point(self.cfg.target_radius);
        let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
        let s = self.cfg.target_speed;
        Body {
            pos,
            vel: [s * angle.cos(), s * angle.sin()],
        }
    }

    fn touching(&self, p: &Body, target: &Body) -> bool {
        dist(p.pos, target.pos) <= self.cfg.pursuer_radius + self.cfg.target_radius
    }

    fn sense(&self, agent: usize) -> Vec<f64> {
        let me = self.pursuers[agent];
        let range = self.cfg.sensor_range;
        let mut out = Vec::with_capacity(WATER_SENSORS * SENSOR_CHANNELS);
        for k in 0..WATER_SENSORS {
            let angle = std::f64::consts::TAU * k as f64 / WATER_SENSORS as f64;
            let dir = [angle.cos(), angle.sin()];
            let nearest = |bodies: &mut dyn Iterator<Item = &Body>, radius: f64| -> (f64, f64) {
                let mut best: Option<(f64, f64)> = None;
                for b in bodies {
                    if let Some(t) = ray_circle(me.pos, dir, b.pos, radius, range) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            // Positive when the body closes in along the ray.
                            let rel = [b.vel[0] - me.vel[0], b.vel[1] - me.vel[1]];
                            let closing = -(rel[0] * dir[0] + rel[1] * dir[1]);
                            best = Some((t, closing));
                        }
                    }
                }
                match best {
                    Some((t, v)) => (t / range, v / self.cfg.max_speed),
                    None => (1.0, 0.0),
                }
            };
            let others = &mut self.pursuers.iter().enumerate().filter(|(j, _)| *j != agent).map(|(_, b)| b);
            let (pd, pv) = nearest(others, self.cfg.pursuer_radius);
            let (fd, fv) = nearest(&mut self.food.iter(), self.cfg.target_radius);
            let (xd, xv) = nearest(&mut self.poison.iter(), self.cfg.target_radius);
            let od = ray_circle(me.pos, dir, CENTRE, self.cfg.obstacle_radius, range).map_or(1.0, |t| t / range);
            out.extend_from_slice(&[pd, pv, fd, fv, xd, xv, od]);
        }
        out
    }

    fn move_target(b: &mut Body, r: f64, obstacle: f64) {
        for k in 0..2 {
            b.pos[k] += b.vel[k];
            if b.pos[k] < r || b.pos[k] > 1.0 - r {
                b.pos[k] = b.pos[k].clamp(r, 1.0 - r);
                b.vel[k] = -b.vel[k];
            }
        }
        let d = dist(b.pos, CENTRE);
        if d < obstacle + r {
            let n = normal(b.pos, d);
            b.pos = [CENTRE[0] + n[0] * (obstacle + r), CENTRE[1] + n[1] * (obstacle + r)];
            let vn = b.vel[0] * n[0] + b.vel[1] * n[1];
            b.vel = [b.vel[0] - 2.0 * vn * n[0], b.vel[1] - 2.0 * vn * n[1]];
        }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn normal(p: [f64; 2], d: f64) -> [f64; 2] {
    if d > 1e-12 {
        [(p[0] - CENTRE[0]) / d, (p[1] - CENTRE[1]) / d]
    } else {
        [1.0, 0.0]
    }
}

/// Distance along a unit ray from `origin` to a circle, if within `range`.
fn ray_circle(origin: [f64; 2], dir: [f64; 2], centre: [f64; 2], radius: f64, range: f64) -> Option<f64> {
    let w = [centre[0] - origin[0], centre[1] - origin[1]];
    let proj = w[0] * dir[0] + w[1] * dir[1];
    let dist2 = w[0] * w[0] + w[1] * w[1];
    if dist2 <= radius * radius {
        return Some(0.0);
    }
    if proj <= 0.0 {
        return None;
    }
    let perp2 = dist2 - proj * proj;
    if perp2 > radius * radius {
        return None;
    }
    let t = proj - (radius * radius - perp2).sqrt();
    (t <= range).then_some(t)
}

impl MultiAgentEnv for WaterEnv {
    type Action = [f64; 2];

    fn n_agents(&self) -> usize {
        self.cfg.n_pursuers
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn reset(&mut self) {
        let r = self.cfg.pursuer_radius;
        self.pursuers = (0..self.cfg.n_pursuers)
            .map(|_| Body {
                pos: self.free_point(r),
                vel: [0.0; 2],
            })
            .collect();
        self.food = (0..self.cfg.n_food).map(|_| self.drifting()).collect();
        self.poison = (0..self.cfg.n_poison).map(|_| self.drifting()).collect();
        self.t = 0;
    }

    fn step(&mut self, actions: &[[f64; 2]]) -> Result<EnvStep> {
        if actions.len() != self.cfg.n_pursuers {
            return Err(Error::InvalidAction(format!(
                "expected {} actions, got {}",
                self.cfg.n_pursuers,
                actions.len()
            )));
        }
        if actions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAction("non-finite waterworld action".into()));
        }
        if self.t >= self.cfg.horizon {
            return Err(Error::Env("step on a finished episode; reset first".into()));
        }
        let cfg = self.cfg.clone();
        let mut rewards = Vec::with_capacity(cfg.n_pursuers);
        for (body, a) in self.pursuers.iter_mut().zip(actions) {
            let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let a = if norm > 1.0 { [a[0] / norm, a[1] / norm] } else { *a };
            rewards.push(-(a[0] * a[0] + a[1] * a[1]));
            for k in 0..2 {
                body.vel[k] += cfg.thrust * a[k];
            }
            let speed = (body.vel[0].powi(2) + body.vel[1].powi(2)).sqrt();
            if speed > cfg.max_speed {
                body.vel = [body.vel[0] * cfg.max_speed / speed, body.vel[1] * cfg.max_speed / speed];
            }
            let r = cfg.pursuer_radius;
            for k in 0..2 {
                body.pos[k] += body.vel[k];
                if body.pos[k] < r || body.pos[k] > 1.0 - r {
                    body.pos[k] = body.pos[k].clamp(r, 1.0 - r);
                    body.vel[k] = 0.0;
                }
            }
            let d = dist(body.pos, CENTRE);
            if d < cfg.obstacle_radius + r {
                let n = normal(body.pos, d);
                body.pos = [CENTRE[0] + n[0] * (cfg.obstacle_radius + r), CENTRE[1] + n[1] * (cfg.obstacle_radius + r)];
                body.vel = [0.0; 2];
            }
        }
        for b in self.food.iter_mut().chain(self.poison.iter_mut()) {
            Self::move_target(b, cfg.target_radius, cfg.obstacle_radius);
        }

        let mut captures = 0;
        for f in 0..self.food.len() {
            let touchers: Vec<usize> = (0..cfg.n_pursuers)
                .filter(|&i| self.touching(&self.pursuers[i], &self.food[f]))
                .collect();
            for &i in &touchers {
                rewards[i] += cfg.touch_reward;
            }
            if touchers.len() >= cfg.coop_k {
                captures += 1;
                for &i in &touchers {
                    rewards[i] += cfg.food_reward;
                }
                self.food[f] = self.drifting();
            }
        }
        for i in 0..cfg.n_pursuers {
            let hits = self.poison.iter().filter(|x| self.touching(&self.pursuers[i], x)).count();
            rewards[i] -= cfg.poison_penalty * hits as f64;
        }
        self.t += 1;
        let done = self.t >= cfg.horizon;
        Ok(EnvStep {
            observations: self.observations(),
            rewards,
            terminal: done,
            info: StepInfo {
                captures,
                time_limit: done,
                ..StepInfo::default()
            },
        })
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let mut obs = self.sense(agent);
        let me = self.pursuers[agent];
        obs.extend_from_slice(&me.pos);
        obs.push(me.vel[0] / self.cfg.max_speed);
        obs.push(me.vel[1] / self.cfg.max_speed);
        obs
    }

    fn positions(&self) -> Vec<(f64, f64)> {
        self.pursuers.iter().map(|b| (b.pos[0], b.pos[1])).collect()
    }

    fn t(&self) -> usize {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn still(x: f64, y: f64) -> Body {
        Body { pos: [x, y], vel: [0.0; 2] }
    }

    fn cfg(n: usize, k: usize) -> WaterConfig {
        WaterConfig { target_speed: 0.0, ..WaterConfig::with_agents(n, k) }
    }

    #[test]
    fn observation_length() {
        let env = WaterEnv::new(WaterConfig::default(), 0).unwrap();
        assert_eq!(env.observe(0).len(), 179);
    }

    #[test]
    fn zero_action_costs_nothing() {
        let c = cfg(2, 2);
        let mut env = WaterEnv::from_state(c, vec![still(0.1, 0.1), still(0.9, 0.9)], vec![], vec![], 0).unwrap();
        let s = env.step(&[[0.0, 0.0], [0.6, 0.8]]).unwrap();
        assert_eq!(s.rewards[0], 0.0);
        assert!((s.rewards[1] + 1.0).abs() < 1e-12);
        // Out-of-ball actions are clamped before the penalty.
        let s = env.step(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        assert!((s.rewards[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn touching_below_threshold_only_earns_touch_reward() {
        let c = cfg(3, 3);
        let food = still(0.2, 0.2);
        let mut env = WaterEnv::from_state(
            c,
            vec![still(0.2, 0.23), still(0.23, 0.2), still(0.9, 0.9)],
            vec![food],
            vec![],
            0,
        )
        .unwrap();
        let s = env.step(&[[0.0; 2]; 3]).unwrap();
        assert_eq!(s.info.captures, 0);
        assert!((s.rewards[0] - 0.01).abs() < 1e-12);
        assert!((s.rewards[1] - 0.01).abs() < 1e-12);
        assert_eq!(s.rewards[2], 0.0);
        assert_eq!(env.food()[0].pos, food.pos);
    }

    #[test]
    fn poison_costs() {
        let c = cfg(1, 1);
        let mut env = WaterEnv::from_state(c, vec![still(0.2, 0.2)], vec![], vec![still(0.21, 0.2)], 0).unwrap();
        let s = env.step(&[[0.0; 2]]).unwrap();
        assert!((s.rewards[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_actions() {
        let mut env = WaterEnv::new(WaterConfig::small(), 0).unwrap();
        assert!(env.step(&[[f64::NAN, 0.0]; 4]).is_err());
    }

    #[test]
    fn ray_geometry() {
        assert_eq!(ray_circle([0.0, 0.0], [1.0, 0.0], [0.5, 0.0], 0.1, 1.0), Some(0.4));
        assert_eq!(ray_circle([0.0, 0.0], [-1.0, 0.0], [0.5, 0.0], 0.1, 1.0), None);
        assert_eq!(ray_circle([0.0, 0.0], [1.0, 0.0], [0.5, 0.0], 0.1, 0.3), None);
        assert_eq!(ray_circle([0.0, 0.0], [0.0, 1.0], [0.05, 0.0], 0.1, 0.3), Some(0.0));
    }

    proptest! {
        // Capture happens exactly when at least K pursuers touch the same food.
        #[test]
        fn capture_needs_k_touchers(n in 2usize..7, k_off in 0usize..6, touchers in 0usize..7) {
            let k = 1 + k_off % n;
            let touchers = touchers.min(n);
            let food = still(0.25, 0.25);
            let pursuers: Vec<Body> = (0..n)
                .map(|i| {
                    if i < touchers {
                        let a = std::f64::consts::TAU * i as f64 / n as f64;
                        still(0.25 + 0.03 * a.cos(), 0.25 + 0.03 * a.sin())
                    } else {
                        still(0.9, 0.1 + 0.1 * i as f64)
                    }
                })
                .collect();
            let mut env = WaterEnv::from_state(cfg(n, k), pursuers, vec![food], vec![], 1).unwrap();
            let s = env.step(&vec![[0.0; 2]; n]).unwrap();
            prop_assert_eq!(s.info.captures, usize::from(touchers >= k));
            let bonus = if touchers >= k { 10.01 } else { 0.01 };
            for i in 0..touchers {
                prop_assert!((s.rewards[i] - bonus).abs() < 1e-12);
            }
        }

        #[test]
        fn bodies_stay_in_the_square(seed in 0u64..200, acts in proptest::collection::vec(-2.0f64..2.0, 2 * 4 * 40)) {
            let mut env = WaterEnv::new(WaterConfig::small(), seed).unwrap();
            for chunk in acts.chunks(8) {
                let a: Vec<[f64; 2]> = chunk.chunks(2).map(|c| [c[0], c[1]]).collect();
                env.step(&a).unwrap();
                for b in env.pursuers().iter().chain(env.food()).chain(env.poison()) {
                    prop_assert!((0.0..=1.0).contains(&b.pos[0]) && (0.0..=1.0).contains(&b.pos[1]));
                }
            }
        }
    }
}
