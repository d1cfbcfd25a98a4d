//! Receding-horizon trajectory search with the improved cross-entropy
//! method: colored-noise sampling, elite refitting with momentum, elite
//! carry-over between iterations and environment steps.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::RewardBreakdown;
use crate::sim::EffectorKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
}

/// Something the planner can roll out. Steps must be deterministic.
pub trait Env: Sync {
    type State: Clone + Send + Sync;
    fn action_dim(&self) -> usize;
    fn step(&self, state: &Self::State, action: &[f64]) -> Self::State;
    fn reward(&self, state: &Self::State) -> RewardBreakdown;
    fn succeeded(&self, state: &Self::State) -> bool;
    /// Current value of the task joint.
    fn progress(&self, state: &Self::State) -> f64;
    /// Initial and goal value of the task joint.
    fn goal(&self) -> (f64, f64);
    /// Penalty that ends a rollout at `state`, if it is terminal.
    fn terminal(&self, _state: &Self::State) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ICEMConfig {
    #[serde(rename = "T")]
    pub max_steps: usize,
    pub population: usize,
    #[serde(rename = "E")]
    pub elites: usize,
    #[serde(rename = "h")]
    pub horizon: usize,
    pub cem_iterations: usize,
    pub noise_beta: f64,
    /// Per-dimension initial std; half the bound range when absent.
    pub sigma_init: Option<Vec<f64>>,
    pub momentum: f64,
    pub elite_shift_fraction: f64,
    /// Per-dimension `[lo, hi]`; empty means ±0.05 on every dimension.
    pub action_bounds: Vec<[f64; 2]>,
    pub seed: u64,
}

impl Default for ICEMConfig {
    fn default() -> Self {
        ICEMConfig {
            max_steps: 50,
            population: 120,
            elites: 20,
            horizon: 10,
            cem_iterations: 3,
            noise_beta: 2.0,
            sigma_init: None,
            momentum: 0.1,
            elite_shift_fraction: 0.3,
            action_bounds: vec![],
            seed: 0,
        }
    }
}

impl ICEMConfig {
    pub fn for_effector(kind: EffectorKind) -> ICEMConfig {
        let elites = match kind {
            EffectorKind::Suction => 20,
            EffectorKind::Gripper => 300,
            EffectorKind::Hand => 100,
        };
        ICEMConfig { elites, population: default_population(elites), ..ICEMConfig::default() }
    }

    pub fn bounds(&self, dim: usize) -> Vec<[f64; 2]> {
        if self.action_bounds.is_empty() {
            vec![[-0.05, 0.05]; dim]
        } else {
            self.action_bounds.clone()
        }
    }

    pub fn sigma(&self, dim: usize) -> Vec<f64> {
        match &self.sigma_init {
            Some(s) => s.clone(),
            None => self.bounds(dim).iter().map(|[lo, hi]| 0.5 * (hi - lo)).collect(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.into()));
        if self.elites == 0 || self.elites > self.population {
            return bad("need 1 <= E <= population");
        }
        if self.horizon == 0 || self.cem_iterations == 0 {
            return bad("horizon and cem_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.momentum) || !(0.0..=1.0).contains(&self.elite_shift_fraction) {
            return bad("momentum and elite_shift_fraction must lie in [0, 1]");
        }
        if !self.noise_beta.is_finite() {
            return bad("noise_beta must be finite");
        }
        let bounds = self.bounds(dim);
        if bounds.len() != dim || bounds.iter().any(|[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return bad("action_bounds need one finite lo < hi pair per dimension");
        }
        let sigma = self.sigma(dim);
        if sigma.len() != dim || sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigma_init needs one finite non-negative entry per dimension");
        }
        Ok(())
    }
}

/// Population when only the elite count is known.
pub fn default_population(elites: usize) -> usize {
    (2 * elites).max(120)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<Vec<f64>>,
    /// Reward of the state reached by each action.
    pub rewards: Vec<RewardBreakdown>,
    pub success: bool,
    pub s_initial: f64,
    pub s_target: f64,
    pub s_final: f64,
    /// Achieved minus commanded displacement.
    pub delta: f64,
    /// `delta` relative to the commanded displacement, percent.
    pub delta_r: f64,
    /// Best elite score of every CEM iteration, per environment step.
    pub best_scores: Vec<Vec<f64>>,
}

/// Unit-variance Gaussian sequences with power spectrum ∝ 1/f^β.
pub struct ColoredNoise {
    len: usize,
    weights: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl ColoredNoise {
    pub fn new(beta: f64, len: usize) -> ColoredNoise {
        let n = len.max(1);
        let half = n / 2;
        // the zero-frequency bin uses the lowest resolvable frequency
        let weights: Vec<f64> = (0..=half).map(|k| (k.max(1) as f64 / n as f64).powf(-beta / 2.0)).collect();
        let var: f64 = (0..=half)
            .map(|k| {
                let self_conjugate = k == 0 || (n.is_multiple_of(2) && k == half);
                weights[k] * weights[k] * if self_conjugate { 1.0 } else { 4.0 }
            })
            .sum::<f64>()
            / (n as f64 * n as f64);
        ColoredNoise { len: n, weights, scale: 1.0 / var.sqrt(), fft: FftPlanner::new().plan_fft_inverse(n) }
    }

    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.len;
        let half = n / 2;
        let mut spectrum = vec![Complex::new(0.0, 0.0); n];
        for k in 0..=half {
            let self_conjugate = k == 0 || (n.is_multiple_of(2) && k == half);
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = if self_conjugate { 0.0 } else { StandardNormal.sample(rng) };
            spectrum[k] = Complex::new(re, im) * self.weights[k];
            if k != 0 && !self_conjugate {
                spectrum[n - k] = spectrum[k].conj();
            }
        }
        self.fft.process(&mut spectrum);
        spectrum.iter().map(|c| c.re / n as f64 * self.scale).collect()
    }
}

/// Independent stream for one sample of one CEM iteration.
fn substream(seed: u64, step: usize, iteration: usize, sample: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, step as u64, iteration as u64, sample as u64].iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Cumulative reward of `actions` from `start`, with per-step breakdowns.
pub fn rollout<E: Env>(env: &E, start: &E::State, actions: &[Vec<f64>]) -> (f64, Vec<RewardBreakdown>) {
    let mut state = start.clone();
    let mut total = 0.0;
    let mut steps = Vec::with_capacity(actions.len());
    for a in actions {
        state = env.step(&state, a);
        let r = env.reward(&state);
        total += r.total;
        steps.push(r);
        if let Some(p) = env.terminal(&state) {
            total -= p;
            break;
        }
    }
    (total, steps)
}

fn score<E: Env>(env: &E, start: &E::State, actions: &[Vec<f64>]) -> f64 {
    let mut state = start.clone();
    let mut total = 0.0;
    for a in actions {
        state = env.step(&state, a);
        total += env.reward(&state).total;
        if let Some(p) = env.terminal(&state) {
            return total - p;
        }
    }
    total
}

type Sequence = Vec<Vec<f64>>;

struct Sampler<'a> {
    noise: ColoredNoise,
    bounds: &'a [[f64; 2]],
    seed: u64,
}

impl Sampler<'_> {
    fn draw(&self, mean: &[Vec<f64>], std: &[Vec<f64>], step: usize, iteration: usize, sample: usize) -> Sequence {
        let h = mean.len();
        let d = self.bounds.len();
        let mut rng = substream(self.seed, step, iteration, sample);
        let mut seq = vec![vec![0.0; d]; h];
        for j in 0..d {
            let n = self.noise.sample(&mut rng);
            for t in 0..h {
                let [lo, hi] = self.bounds[j];
                seq[t][j] = (mean[t][j] + std[t][j] * n[t]).clamp(lo, hi);
            }
        }
        seq
    }
}

/// Runs the receding-horizon search from `initial`. Rollouts of one CEM
/// iteration run on the current rayon pool; results do not depend on its size.
pub fn plan<E: Env>(env: &E, initial: &E::State, cfg: &ICEMConfig) -> Result<Trajectory, PlanError> {
    let d = env.action_dim();
    cfg.validate(d)?;
    let bounds = cfg.bounds(d);
    let sigma = cfg.sigma(d);
    let h = cfg.horizon;
    let sampler = Sampler { noise: ColoredNoise::new(cfg.noise_beta, h), bounds: &bounds, seed: cfg.seed };
    let carry = ((cfg.elite_shift_fraction * cfg.elites as f64).ceil() as usize).clamp(1, cfg.elites);
    let (s_initial, s_target) = env.goal();

    let mut state = initial.clone();
    let mut mean = vec![vec![0.0; d]; h];
    let mut shifted: Vec<Sequence> = Vec::new();
    let mut traj = Trajectory {
        actions: vec![],
        rewards: vec![],
        success: false,
        s_initial,
        s_target,
        s_final: env.progress(&state),
        delta: 0.0,
        delta_r: 0.0,
        best_scores: vec![],
    };
    for step in 0..cfg.max_steps {
        if env.succeeded(&state) {
            break;
        }
        let mut std: Vec<Vec<f64>> = vec![sigma.clone(); h];
        let mut kept: Vec<Sequence> = std::mem::take(&mut shifted);
        let mut best: Option<(f64, Sequence)> = None;
        let mut iteration_best = Vec::with_capacity(cfg.cem_iterations);
        let mut elites: Vec<Sequence> = Vec::new();
        for it in 0..cfg.cem_iterations {
            let last = it + 1 == cfg.cem_iterations;
            let mut pop: Vec<Sequence> = kept.drain(..).take(cfg.population).collect();
            if last && pop.len() < cfg.population {
                pop.push(mean.iter().map(|a: &Vec<f64>| a.iter().zip(&bounds).map(|(v, b)| v.clamp(b[0], b[1])).collect()).collect());
            }
            let fresh = cfg.population - pop.len();
            let drawn: Vec<Sequence> = (0..fresh).into_par_iter().map(|i| sampler.draw(&mean, &std, step, it, i)).collect();
            pop.extend(drawn);
            let scores: Vec<f64> = pop.par_iter().map(|seq| score(env, &state, seq)).collect();
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.truncate(cfg.elites);
            elites = order.iter().map(|&i| pop[i].clone()).collect();
            let top = scores[order[0]];
            iteration_best.push(top);
            if best.as_ref().is_none_or(|(b, _)| top > *b) {
                best = Some((top, elites[0].clone()));
            }

            let e = elites.len() as f64;
            for t in 0..h {
                for j in 0..d {
                    let m = elites.iter().map(|s| s[t][j]).sum::<f64>() / e;
                    let v = elites.iter().map(|s| (s[t][j] - m).powi(2)).sum::<f64>() / e;
                    mean[t][j] = (1.0 - cfg.momentum) * m + cfg.momentum * mean[t][j];
                    std[t][j] = (1.0 - cfg.momentum) * v.sqrt() + cfg.momentum * std[t][j];
                }
            }
            kept = elites.iter().take(carry).cloned().collect();
        }
        let (_, seq) = best.expect("at least one iteration");
        let action = seq[0].clone();
        state = env.step(&state, &action);
        traj.rewards.push(env.reward(&state));
        traj.actions.push(action);
        traj.best_scores.push(iteration_best);

        // shift the plan one step; the freed tail restarts at zero mean
        mean.remove(0);
        mean.push(vec![0.0; d]);
        let tail_std = vec![sigma.clone(); h];
        shifted = elites
            .into_iter()
            .take(carry)
            .enumerate()
            .map(|(i, mut s)| {
                s.remove(0);
                let extra = sampler.draw(&mean, &tail_std, step, cfg.cem_iterations, i);
                s.push(extra[h - 1].clone());
                s
            })
            .collect();
    }
    traj.s_final = env.progress(&state);
    traj.success = env.succeeded(&state);
    traj.delta = (traj.s_final - s_initial) - (s_target - s_initial);
    traj.delta_r = traj.delta / (s_target - s_initial) * 100.0;
    Ok(traj)
}

/// Worker count from `TWINFORGE_WORKERS`, when set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("TWINFORGE_WORKERS").ok()?.trim().parse().ok().filter(|n: &usize| *n >= 1)
}

pub use rayon::ThreadPool;

pub fn worker_pool(workers: usize) -> Result<ThreadPool, PlanError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| PlanError::InvalidConfig(e.to_string()))
}

/// One prismatic joint pushed by a point effector on the same line. Actions
/// snap to three levels: back, stay, forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPush {
    pub step_size: f64,
    pub x0: f64,
    pub s_target: f64,
    pub upper: f64,
    /// Weight of the effector-to-part distance penalty.
    pub w_dist: f64,
    pub epsilon: f64,
}

impl ToyPush {
    pub const LEVELS: [f64; 3] = [-1.0, 0.0, 1.0];

    pub fn level(&self, a: f64) -> usize {
        if a < -self.step_size / 3.0 {
            0
        } else if a > self.step_size / 3.0 {
            2
        } else {
            1
        }
    }

    pub fn initial(&self) -> (f64, f64) {
        (self.x0, 0.0)
    }

    fn apply(&self, (x, s): (f64, f64), level: usize) -> (f64, f64) {
        let x = x + Self::LEVELS[level] * self.step_size;
        if x > s {
            let s = x.min(self.upper);
            (s, s)
        } else {
            (x, s)
        }
    }

    fn value(&self, (x, s): (f64, f64)) -> f64 {
        -50.0 * (self.s_target - s).abs() / self.s_target - self.w_dist * (x - s).powi(2)
    }

    /// Best first-action levels over all level sequences of length `h`.
    pub fn exhaustive_first_actions(&self, h: usize) -> Vec<usize> {
        let n = 3usize.pow(h as u32);
        let mut values = vec![0.0; n];
        for (code, v) in values.iter_mut().enumerate() {
            let mut st = self.initial();
            let mut c = code;
            for _ in 0..h {
                st = self.apply(st, c % 3);
                *v += self.value(st);
                c /= 3;
            }
        }
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut firsts: Vec<usize> = (0..n).filter(|&c| values[c] >= best - 1e-12).map(|c| c % 3).collect();
        firsts.sort_unstable();
        firsts.dedup();
        firsts
    }
}

impl Env for ToyPush {
    type State = (f64, f64);

    fn action_dim(&self) -> usize {
        1
    }

    fn step(&self, state: &(f64, f64), action: &[f64]) -> (f64, f64) {
        self.apply(*state, self.level(action[0]))
    }

    fn reward(&self, state: &(f64, f64)) -> RewardBreakdown {
        let v = self.value(*state);
        RewardBreakdown { r_target: v, total: v, ..Default::default() }
    }

    fn succeeded(&self, state: &(f64, f64)) -> bool {
        (self.s_target - state.1).abs() < self.epsilon
    }

    fn progress(&self, state: &(f64, f64)) -> f64 {
        state.1
    }

    fn goal(&self) -> (f64, f64) {
        (0.0, self.s_target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(seed: u64) -> ToyPush {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ToyPush {
            step_size: 0.05,
            x0: rng.random_range(-0.12..0.0),
            s_target: rng.random_range(0.02..0.12),
            upper: 0.3,
            w_dist: rng.random_range(1.0..200.0),
            epsilon: 0.005,
        }
    }

    fn toy_cfg(seed: u64) -> ICEMConfig {
        ICEMConfig { max_steps: 1, population: 30, elites: 5, horizon: 2, seed, ..ICEMConfig::default() }
    }

    #[test]
    fn colored_noise_has_unit_variance() {
        let gen = ColoredNoise::new(2.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let mut acc = vec![0.0; 10];
        let mut lag1 = 0.0;
        for _ in 0..n {
            let s = gen.sample(&mut rng);
            for t in 0..10 {
                acc[t] += s[t] * s[t];
            }
            lag1 += s[0] * s[1];
        }
        for a in acc {
            assert!((a / n as f64 - 1.0).abs() < 0.05);
        }
        // beta = 2 is strongly correlated in time
        assert!(lag1 / n as f64 > 0.5);
        let white = ColoredNoise::new(0.0, 10);
        let c: f64 = (0..n).map(|_| white.sample(&mut rng)).map(|s| s[0] * s[1]).sum::<f64>() / n as f64;
        assert!(c.abs() < 0.05);
    }

    #[test]
    fn toy_agrees_with_enumeration() {
        let mut agree = 0;
        for trial in 0..100 {
            let env = toy(trial);
            let traj = plan(&env, &env.initial(), &toy_cfg(trial)).unwrap();
            let chosen = traj.actions.first().map(|a| env.level(a[0])).unwrap_or(1);
            agree += env.exhaustive_first_actions(2).contains(&chosen) as usize;
        }
        assert!(agree >= 95, "{agree}/100");
    }

    #[test]
    fn empty_rollout_scores_zero() {
        let env = toy(0);
        assert_eq!(rollout(&env, &env.initial(), &[]), (0.0, vec![]));
        let (r, steps) = rollout(&env, &env.initial(), &[vec![0.0]]);
        assert_eq!(r, env.reward(&env.step(&env.initial(), &[0.0])).total);
        assert_eq!(steps.len(), 1);
    }

    #[test]
    fn already_at_goal_plans_nothing() {
        let env = ToyPush { x0: -0.1, s_target: 0.001, ..toy(3) };
        let traj = plan(&env, &env.initial(), &ICEMConfig::default()).unwrap();
        assert!(traj.success && traj.actions.is_empty());
    }

    #[test]
    fn config_validation() {
        let ok = ICEMConfig::default();
        assert!(ok.validate(3).is_ok());
        assert!(ICEMConfig { elites: 200, ..ok.clone() }.validate(3).is_err());
        assert!(ICEMConfig { horizon: 0, ..ok.clone() }.validate(3).is_err());
        assert!(ICEMConfig { action_bounds: vec![[0.1, 0.0]], ..ok.clone() }.validate(1).is_err());
        assert!(ICEMConfig { action_bounds: vec![[-1.0, 1.0]], ..ok.clone() }.validate(2).is_err());
        assert_eq!(ICEMConfig::for_effector(EffectorKind::Gripper).population, 600);
        assert_eq!(ICEMConfig::for_effector(EffectorKind::Suction).population, 120);
        let json = serde_json::to_string(&ok).unwrap();
        assert!(json.contains("\"T\":50") && json.contains("\"E\":20") && json.contains("\"h\":10"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn plans_are_deterministic_bounded_and_monotone(seed in 0u64..1000) {
            let env = toy(seed);
            let cfg = ICEMConfig { max_steps: 6, population: 24, elites: 4, horizon: 3, seed, ..ICEMConfig::default() };
            let a = plan(&env, &env.initial(), &cfg).unwrap();
            let b = plan(&env, &env.initial(), &cfg).unwrap();
            prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            for act in &a.actions {
                prop_assert!(act.iter().all(|v| (-0.05..=0.05).contains(v)));
            }
            for scores in &a.best_scores {
                prop_assert!(scores.windows(2).all(|w| w[1] >= w[0]));
            }
            if a.success {
                prop_assert!((a.s_target - a.s_final).abs() < env.epsilon);
            }
        }

        #[test]
        fn rollout_is_additive(seed in 0u64..1000, k in 0usize..4) {
            let env = toy(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.random_range(-0.05..0.05)]).collect();
            let (whole, _) = rollout(&env, &env.initial(), &seq);
            let (head, _) = rollout(&env, &env.initial(), &seq[..k]);
            let mid = seq[..k].iter().fold(env.initial(), |s, a| env.step(&s, a));
            let (tail, _) = rollout(&env, &mid, &seq[k..]);
            prop_assert!((whole - head - tail).abs() < 1e-9);
        }
    }
}
