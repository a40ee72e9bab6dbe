//! The sampling loop: initialization, forced exploration, tracking rules and
//! the GLR stopping test.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocation_for, check_means, check_theta, SEPARATION_TOL};
use crate::engine::IncrementalEngine;
use crate::error::{Error, Result};
use crate::gai::{self, GaiAnswer};
use crate::glr::{count_terms_sum, glr_unchecked, ThresholdParams};
use crate::reward::RewardFamily;
use crate::state::EmpiricalState;
use crate::tree::{Answer, GameTree, LeafId};

/// Relative gap below which two ratio keys count as tied.
pub const RATIO_TIE_TOL: f64 = 1e-9;

pub const DEFAULT_MAX_ROUNDS: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Rd,
    D,
    C,
    #[serde(rename = "rr")]
    RoundRobin,
    Ugape,
    Lucb,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Rd => "rd",
            SamplerKind::D => "d",
            SamplerKind::C => "c",
            SamplerKind::RoundRobin => "rr",
            SamplerKind::Ugape => "ugape",
            SamplerKind::Lucb => "lucb",
        }
    }

    pub fn all() -> [SamplerKind; 6] {
        [
            SamplerKind::Rd,
            SamplerKind::D,
            SamplerKind::C,
            SamplerKind::RoundRobin,
            SamplerKind::Ugape,
            SamplerKind::Lucb,
        ]
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Naive,
    Fast,
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(EngineKind::Naive),
            "fast" => Ok(EngineKind::Fast),
            _ => Err(Error::Config(format!("unknown engine {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub theta: f64,
    pub family: RewardFamily,
    pub delta: f64,
    pub sampler: SamplerKind,
    pub engine: EngineKind,
    /// Abort with [`Error::RoundCap`] once this many samples have been drawn.
    pub max_rounds: u64,
    pub refresh_interval: Option<u64>,
    /// Cross-check the fast engine against the naive recursions every round.
    pub paranoid: bool,
    /// Keep one [`TraceStep`] per post-initialization round.
    pub record_trace: bool,
    /// Ignore the stopping rule and run for exactly this many samples.
    pub horizon: Option<u64>,
}

impl RunConfig {
    pub fn new(theta: f64, family: RewardFamily, delta: f64, sampler: SamplerKind) -> Self {
        RunConfig {
            theta,
            family,
            delta,
            sampler,
            engine: EngineKind::Naive,
            max_rounds: DEFAULT_MAX_ROUNDS,
            refresh_interval: None,
            paranoid: false,
            record_trace: false,
            horizon: None,
        }
    }

    pub fn engine(mut self, engine: EngineKind) -> Self {
        self.engine = engine;
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub leaf: LeafId,
    /// GLR statistic after the sample.
    pub z: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub tau: u64,
    pub answer: Answer,
    pub correct: bool,
    pub counts: Vec<u64>,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gai: Option<GaiAnswer>,
    #[serde(skip)]
    pub trace: Vec<TraceStep>,
}

impl RunResult {
    /// Outcome fields only, ignoring timing.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        self.tau == other.tau
            && self.answer == other.answer
            && self.correct == other.correct
            && self.counts == other.counts
            && self.gai == other.gai
            && self.trace == other.trace
    }
}

/// Forced exploration: the least-sampled leaf if some count is below
/// √t − |L|/2, where `t` is the index of the round being played.
pub fn select_forced(counts: &[u64], t: u64) -> Option<LeafId> {
    let floor = (t as f64).sqrt() - counts.len() as f64 / 2.0;
    let mut best = 0;
    for (l, &n) in counts.iter().enumerate() {
        if n < counts[best] {
            best = l;
        }
    }
    ((counts[best] as f64) < floor).then_some(best)
}

/// Lowest index whose score is within [`RATIO_TIE_TOL`] (relative) of the maximum.
fn argmax_tolerant(scores: impl Iterator<Item = f64> + Clone) -> LeafId {
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let slack = RATIO_TIE_TOL * max.abs().max(f64::MIN_POSITIVE);
    scores.into_iter().position(|x| x >= max - slack).unwrap_or(0)
}

/// Ratio rule: argmax w_ℓ / N_ℓ.
pub fn select_rd(counts: &[u64], w: &[f64]) -> LeafId {
    argmax_tolerant(w.iter().zip(counts).map(|(&w, &n)| w / n as f64))
}

/// Relative gap between the best and second-best ratio key, or +∞ with one leaf.
pub fn rd_gap(counts: &[u64], w: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (&w, &n) in w.iter().zip(counts) {
        let r = w / n as f64;
        if r > best {
            second = best;
            best = r;
        } else if r > second {
            second = r;
        }
    }
    if second == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        (best - second) / best.abs().max(f64::MIN_POSITIVE)
    }
}

/// D-Tracking: argmax t w_ℓ − N_ℓ.
pub fn select_d(counts: &[u64], w: &[f64], t: u64) -> LeafId {
    argmax_tolerant(w.iter().zip(counts).map(|(&w, &n)| t as f64 * w - n as f64))
}

/// C-Tracking: argmax of cumulative projected weight minus count.
pub fn select_c(counts: &[u64], cumulative_w: &[f64]) -> LeafId {
    argmax_tolerant(cumulative_w.iter().zip(counts).map(|(&c, &n)| c - n as f64))
}

/// Projection floor used by C-Tracking at round `t`.
pub fn c_tracking_floor(num_leaves: usize, t: u64) -> f64 {
    0.5 / ((num_leaves * num_leaves) as f64 + t as f64).sqrt()
}

/// Projects `w` onto {x : x ≥ eps, Σ x = 1} by clipping w − s at eps, with
/// the shift s chosen to restore the unit sum. Requires eps · |w| ≤ 1.
pub fn project_floor(w: &[f64], eps: f64) -> Vec<f64> {
    let n = w.len();
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    // With the k largest coordinates above the floor, s = (top_k − (1 − (n − k) eps)) / k.
    let mut shift = 0.0;
    let mut top = 0.0;
    for k in 1..=n {
        top += sorted[k - 1];
        let s = (top - (1.0 - (n - k) as f64 * eps)) / k as f64;
        let next_ok = k == n || sorted[k] - s <= eps;
        if sorted[k - 1] - s >= eps && next_ok {
            shift = s;
            break;
        }
    }
    w.iter().map(|&x| (x - shift).max(eps)).collect()
}

enum Backend<'a> {
    Naive(EmpiricalState),
    Fast(IncrementalEngine<'a>),
}

impl Backend<'_> {
    fn state(&self) -> &EmpiricalState {
        match self {
            Backend::Naive(s) => s,
            Backend::Fast(e) => e.state(),
        }
    }
}

/// Checks that means, θ and δ describe a valid run instance.
pub fn check_instance(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    delta: f64,
) -> Result<()> {
    check_theta(family, theta)?;
    check_means(tree, family, means)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    let v = tree.values(means)[tree.root()];
    if (v - theta).abs() <= SEPARATION_TOL {
        return Err(Error::AssumptionViolated(format!(
            "root value {v} is within {SEPARATION_TOL} of the threshold {theta}"
        )));
    }
    Ok(())
}

/// Which statistic drives the stopping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum StopMode {
    Threshold,
    Gai { throttle: bool },
}

/// Runs one trial of the configured sampler until the GLR test fires.
pub fn run<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<RunResult> {
    match cfg.sampler {
        SamplerKind::Ugape => crate::baselines::run_ugape(tree, means, cfg, rng),
        SamplerKind::Lucb => crate::baselines::run_lucb_micro(tree, means, cfg, rng),
        _ => run_loop(tree, means, cfg, rng, StopMode::Threshold),
    }
}

/// Cyclic sampling in leaf order with the GLR stopping rule.
pub fn run_roundrobin<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let cfg = RunConfig {
        sampler: SamplerKind::RoundRobin,
        ..cfg.clone()
    };
    run_loop(tree, means, &cfg, rng, StopMode::Threshold)
}

pub(crate) fn run_loop<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    rng: &mut R,
    mode: StopMode,
) -> Result<RunResult> {
    check_instance(tree, means, cfg.theta, &cfg.family, cfg.delta)?;
    if matches!(mode, StopMode::Gai { .. }) {
        gai::require_max_root(tree)?;
    }
    let started = Instant::now();
    let num_leaves = tree.num_leaves();
    let family = cfg.family;
    let theta = cfg.theta;
    let params = ThresholdParams::new(cfg.delta, num_leaves)?;
    let truth = tree.answer(tree.root(), means, theta)?;

    let mut state = EmpiricalState::new(num_leaves);
    for (l, &m) in means.iter().enumerate() {
        state.record(l, family.draw(m, rng));
    }
    let mut backend = match cfg.engine {
        EngineKind::Naive => Backend::Naive(state),
        EngineKind::Fast => Backend::Fast(
            IncrementalEngine::new(tree, state, theta, family)?
                .with_refresh_interval(cfg.refresh_interval),
        ),
    };
    let mut cumulative_w = vec![1.0; num_leaves];
    let mut trace = Vec::new();
    let mut last_gai_check = 0u64;

    loop {
        let samples = backend.state().t();
        if let Some(h) = cfg.horizon {
            if samples >= h {
                let state = backend.state();
                let answer = Answer::from_value(tree.values(&state.means())[tree.root()], theta);
                return Ok(finish(state, answer, truth, started, None, trace));
            }
        }
        if samples >= cfg.max_rounds {
            return Err(Error::RoundCap(cfg.max_rounds));
        }
        let t = samples + 1;
        let leaf = choose_leaf(tree, &backend, cfg, t, &mut cumulative_w)?;
        let reward = family.draw(means[leaf], rng);
        let (z, answer, beta) = match &mut backend {
            Backend::Naive(state) => {
                state.record(leaf, reward);
                let z = glr_unchecked(tree, state, theta, &family);
                let answer = Answer::from_value(tree.values(&state.means())[tree.root()], theta);
                (z, answer, params.beta_from_terms(count_terms_sum(state.counts())))
            }
            Backend::Fast(engine) => {
                engine.update(leaf, reward);
                if cfg.paranoid {
                    cross_check(tree, engine, theta, &family, t)?;
                }
                (engine.stop_stat().abs(), engine.answer(), engine.beta(&params))
            }
        };
        let (stat, recommendation) = match mode {
            StopMode::Threshold => (z, None),
            StopMode::Gai { throttle } => {
                let due = !throttle || {
                    let gap = (t as f64).ln().ceil().max(1.0) as u64;
                    t - last_gai_check >= gap
                };
                if due {
                    last_gai_check = t;
                    let (zg, rec) = gai::gai_step(tree, backend.state(), theta, &family);
                    (zg, Some(rec))
                } else {
                    (f64::NEG_INFINITY, None)
                }
            }
        };
        if cfg.record_trace {
            trace.push(TraceStep {
                leaf,
                z: if stat.is_finite() { stat } else { z },
                beta,
            });
        }
        if cfg.horizon.is_none() && stat >= beta {
            let state = backend.state();
            let gai_answer = recommendation.map(|r| (r, gai::is_correct(tree, means, theta, r)));
            let mut result = finish(state, answer, truth, started, gai_answer.map(|g| g.0), trace);
            if let Some((_, ok)) = gai_answer {
                result.correct = ok;
            }
            return Ok(result);
        }
    }
}

fn finish(
    state: &EmpiricalState,
    answer: Answer,
    truth: Answer,
    started: Instant,
    gai: Option<GaiAnswer>,
    trace: Vec<TraceStep>,
) -> RunResult {
    RunResult {
        tau: state.t(),
        answer,
        correct: answer == truth,
        counts: state.counts().to_vec(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        gai,
        trace,
    }
}

fn choose_leaf(
    tree: &GameTree,
    backend: &Backend<'_>,
    cfg: &RunConfig,
    t: u64,
    cumulative_w: &mut [f64],
) -> Result<LeafId> {
    let state = backend.state();
    let counts = state.counts();
    let num_leaves = counts.len();
    match cfg.sampler {
        SamplerKind::RoundRobin => {
            return Ok(((t - 1 - num_leaves as u64) % num_leaves as u64) as usize);
        }
        SamplerKind::Rd => {
            if let Backend::Fast(engine) = backend {
                let leaf = engine.select(t);
                if cfg.paranoid {
                    check_selection(tree, state, cfg, t, leaf)?;
                }
                return Ok(leaf);
            }
        }
        SamplerKind::D | SamplerKind::C => {}
        SamplerKind::Ugape | SamplerKind::Lucb => {
            return Err(Error::Config(format!("{} has its own loop", cfg.sampler)));
        }
    }
    if cfg.sampler != SamplerKind::C {
        if let Some(l) = select_forced(counts, t) {
            return Ok(l);
        }
    }
    let w = allocation_for(tree, &state.means(), cfg.theta, &cfg.family).w;
    Ok(match cfg.sampler {
        SamplerKind::Rd => select_rd(counts, &w),
        SamplerKind::D => select_d(counts, &w, t),
        _ => {
            let projected = project_floor(&w, c_tracking_floor(num_leaves, t));
            for (c, p) in cumulative_w.iter_mut().zip(&projected) {
                *c += p;
            }
            select_c(counts, cumulative_w)
        }
    })
}

/// Naive ratio-rule choice for the current state, for comparison with the engine.
pub fn naive_rd_choice(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
    t: u64,
) -> (LeafId, f64) {
    let counts = state.counts();
    if let Some(l) = select_forced(counts, t) {
        return (l, f64::INFINITY);
    }
    let w = allocation_for(tree, &state.means(), theta, family).w;
    (select_rd(counts, &w), rd_gap(counts, &w))
}

fn check_selection(
    tree: &GameTree,
    state: &EmpiricalState,
    cfg: &RunConfig,
    t: u64,
    leaf: LeafId,
) -> Result<()> {
    let (naive, gap) = naive_rd_choice(tree, state, cfg.theta, &cfg.family, t);
    if naive != leaf && gap > RATIO_TIE_TOL {
        return Err(Error::EngineMismatch {
            round: t,
            detail: format!("engine chose leaf {leaf}, naive rule chose {naive}"),
        });
    }
    Ok(())
}

fn cross_check(
    tree: &GameTree,
    engine: &IncrementalEngine<'_>,
    theta: f64,
    family: &RewardFamily,
    t: u64,
) -> Result<()> {
    let z = glr_unchecked(tree, engine.state(), theta, family);
    let fast = engine.stop_stat().abs();
    if (fast - z).abs() > 1e-8 * z.max(1.0) {
        return Err(Error::EngineMismatch {
            round: t,
            detail: format!("|Z~| = {fast}, naive Z = {z}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::DocNode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_examples() {
        assert_eq!(select_forced(&[1; 9], 10), None);
        assert_eq!(select_forced(&[1, 100, 100, 100], 100), Some(0));
        assert_eq!(select_forced(&[3, 3, 3], 100), Some(0));
    }

    #[test]
    fn rd_examples() {
        assert_eq!(select_rd(&[9, 1], &[0.9, 0.1]), 0);
        assert_eq!(select_rd(&[1, 1], &[0.9, 0.1]), 0);
        assert_eq!(select_rd(&[5, 10], &[0.0, 1.0]), 1);
    }

    #[test]
    fn d_examples() {
        assert_eq!(select_d(&[25, 25, 25, 25], &[0.25; 4], 100), 0);
        assert_eq!(select_d(&[7], &[1.0], 8), 0);
        assert_eq!(select_d(&[100, 1, 1], &[0.92, 0.05, 0.03], 200), 0);
    }

    #[test]
    fn c_examples() {
        assert_eq!(select_c(&[1, 1, 1], &[1.0 + 1.0 / 3.0; 3]), 0);
        let w = [0.97, 0.03, 0.0, 0.0];
        let eps = c_tracking_floor(4, 10);
        let p = project_floor(&w, eps);
        assert!(p.iter().all(|&x| x >= eps));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] < w[0]);
        assert_eq!(project_floor(&[0.25; 4], 0.1), vec![0.25; 4]);
    }

    #[test]
    fn c_tracking_sandwich() {
        let w = [0.6, 0.25, 0.1, 0.05];
        let mut counts = vec![1u64; 4];
        let mut cum = vec![1.0; 4];
        for t in 5..5000u64 {
            let p = project_floor(&w, c_tracking_floor(4, t));
            for (c, x) in cum.iter_mut().zip(&p) {
                *c += x;
            }
            let l = select_c(&counts, &cum);
            counts[l] += 1;
            for k in 0..4 {
                let n = counts[k] as f64;
                assert!(n >= cum[k] - 4.0 && n <= cum[k] + 1.0, "t={t} leaf={k}");
            }
        }
    }

    fn depth2() -> (GameTree, Vec<f64>) {
        let t = GameTree::from_doc(&DocNode::max(vec![
            DocNode::min(vec![DocNode::leaf("a"), DocNode::leaf("b")]),
            DocNode::min(vec![DocNode::leaf("c"), DocNode::leaf("d")]),
        ]))
        .unwrap();
        (t, vec![0.2, 0.9, 0.7, 0.8])
    }

    #[test]
    fn engines_agree_on_traces() {
        let (t, m) = depth2();
        for seed in 0..20 {
            let base = RunConfig::new(0.5, RewardFamily::Bernoulli, 0.05, SamplerKind::Rd).traced();
            let a = run(&t, &m, &base, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut fast = base.clone().engine(EngineKind::Fast);
            fast.paranoid = true;
            let b = run(&t, &m, &fast, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a.tau, b.tau);
            let la: Vec<_> = a.trace.iter().map(|s| s.leaf).collect();
            let lb: Vec<_> = b.trace.iter().map(|s| s.leaf).collect();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn round_robin_is_cyclic() {
        let (t, m) = depth2();
        let mut cfg = RunConfig::new(0.5, RewardFamily::Bernoulli, 0.05, SamplerKind::RoundRobin);
        cfg.horizon = Some(103);
        let r = run(&t, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (lo, hi) = (r.counts.iter().min().unwrap(), r.counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(r.counts.iter().sum::<u64>(), 103);
    }

    #[test]
    fn single_leaf_samplers_coincide() {
        let t = GameTree::from_doc(&DocNode::leaf("a")).unwrap();
        let results: Vec<_> = [SamplerKind::Rd, SamplerKind::D, SamplerKind::C, SamplerKind::RoundRobin]
            .into_iter()
            .map(|k| {
                let cfg = RunConfig::new(0.5, RewardFamily::Bernoulli, 0.1, k);
                run(&t, &[0.9], &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
            })
            .collect();
        for r in &results[1..] {
            assert_eq!(r.tau, results[0].tau);
        }
    }

    #[test]
    fn round_cap_is_reported() {
        let (t, m) = depth2();
        let mut cfg = RunConfig::new(0.5, RewardFamily::Bernoulli, 1e-10, SamplerKind::Rd);
        cfg.max_rounds = 50;
        assert!(matches!(
            run(&t, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::RoundCap(50))
        ));
    }
}
