//! Instance generation, batch experiments and summary output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{characteristic_values, lower_bound_t, optimal_allocation, SEPARATION_TOL};
use crate::error::{Error, Result};
use crate::gai::run_gai;
use crate::reward::RewardFamily;
use crate::sampling::{run, EngineKind, RunConfig, RunResult, SamplerKind, DEFAULT_MAX_ROUNDS};
use crate::tree::{Answer, GameTree, NodeId, NodeLabel};

pub const RESAMPLE_CAP: usize = 1000;
/// Minimum gap between the two largest child d-values at a MAX-like node.
pub const ARGMAX_GAP: f64 = 1e-6;
pub const THREADS_ENV: &str = "TMCTS_THREADS";

/// Random complete tree whose second-best root child has value exactly θ.
pub fn gen_instance(
    depth: usize,
    arity: usize,
    family: &RewardFamily,
    theta: f64,
    seed: u64,
) -> Result<(GameTree, Vec<f64>)> {
    if depth == 0 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    crate::allocation::check_theta(family, theta)?;
    let tree = GameTree::complete(depth, arity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESAMPLE_CAP {
        let mut means: Vec<f64> = (0..tree.num_leaves())
            .map(|_| match family {
                RewardFamily::Bernoulli => rng.gen_range(0.05..=0.95),
                RewardFamily::Gaussian { .. } => {
                    let z: f64 = rng.sample(StandardNormal);
                    theta + z
                }
            })
            .collect();
        place_second_best(&tree, &mut means, theta);
        if acceptable(&tree, &means, family, theta) {
            return Ok((tree, means));
        }
    }
    Err(Error::ResampleCap(RESAMPLE_CAP))
}

/// Shifts the second-best root child's subtree so its value is θ, pinning the
/// leaf that realizes the value to θ exactly.
fn place_second_best(tree: &GameTree, means: &mut [f64], theta: f64) {
    let children = tree.children(tree.root());
    if children.len() < 2 {
        return;
    }
    let values = tree.values(means);
    let mut order: Vec<NodeId> = children.to_vec();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite"));
    let second = order[1];
    let shift = theta - values[second];
    let (lo, hi) = tree.nodes()[second].leaf_range;
    for m in &mut means[lo..hi] {
        *m += shift;
    }
    let values = tree.values(means);
    let mut s = second;
    while tree.leaf_of(s).is_none() {
        s = *tree
            .children(s)
            .iter()
            .find(|&&c| values[c] == values[s])
            .expect("value is attained");
    }
    means[tree.leaf_of(s).expect("leaf")] = theta;
}

fn acceptable(tree: &GameTree, means: &[f64], family: &RewardFamily, theta: f64) -> bool {
    if !means.iter().all(|&m| family.is_interior(m)) {
        return false;
    }
    let values = tree.values(means);
    let v = values[tree.root()];
    if (v - theta).abs() <= SEPARATION_TOL {
        return false;
    }
    // The shift can reorder the root's children.
    let mut child_values: Vec<f64> = tree.children(tree.root()).iter().map(|&c| values[c]).collect();
    child_values.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    if child_values.len() >= 2 && child_values[1] != theta {
        return false;
    }
    let answer = Answer::from_value(v, theta);
    let d = characteristic_values(tree, means, theta, family, answer);
    for (s, node) in tree.nodes().iter().enumerate() {
        let Some(label) = node.label else { continue };
        let max_like = match answer {
            Answer::Win => label == NodeLabel::Max,
            Answer::Lose => label == NodeLabel::Min,
        };
        if !max_like || d[s] <= 0.0 || node.children.len() < 2 {
            continue;
        }
        let mut ds: Vec<f64> = node.children.iter().map(|&c| d[c]).collect();
        ds.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        if ds[0] - ds[1] <= ARGMAX_GAP {
            return false;
        }
    }
    true
}

fn default_trials() -> usize {
    1
}

fn default_instances() -> usize {
    1
}

fn default_max_rounds() -> u64 {
    DEFAULT_MAX_ROUNDS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub depth: usize,
    pub arity: usize,
    pub family: RewardFamily,
    pub theta: f64,
    pub deltas: Vec<f64>,
    pub samplers: Vec<SamplerKind>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineKind,
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// Worker threads; `None` uses all cores. Capped by `TMCTS_THREADS`.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
    /// Also run good action identification trials.
    #[serde(default)]
    pub gai: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.instances == 0 {
            return Err(Error::Config("trials and instances must be positive".into()));
        }
        if self.depth == 0 || self.arity == 0 {
            return Err(Error::Config("depth and arity must be positive".into()));
        }
        if let Some(d) = self.deltas.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
            return Err(Error::Config(format!("delta {d} outside (0, 1)")));
        }
        if self.samplers.is_empty() && !self.gai {
            return Err(Error::Config("no samplers configured".into()));
        }
        crate::allocation::check_theta(&self.family, self.theta)
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn instance_seed(&self, instance: usize) -> u64 {
        derive_seed(self.seed, &["instance", &instance.to_string()])
    }
}

/// Seed for one stream, derived from the master seed and a path of labels.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn trial_seed(master: u64, instance: usize, sampler: &str, delta_idx: usize, trial: usize) -> u64 {
    derive_seed(
        master,
        &[
            "trial",
            &instance.to_string(),
            sampler,
            &delta_idx.to_string(),
            &trial.to_string(),
        ],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config_hash: String,
    pub instance: usize,
    pub sampler: String,
    pub delta: f64,
    pub depth: usize,
    pub seed: u64,
    pub tau: u64,
    pub answer: Option<String>,
    pub correct: bool,
    pub d_s0: f64,
    pub t_star: f64,
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub tree: GameTree,
    pub means: Vec<f64>,
    pub d_s0: f64,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub instances: Vec<Instance>,
    pub records: Vec<TrialRecord>,
}

struct WorkItem {
    instance: usize,
    sampler: Option<SamplerKind>,
    delta_idx: usize,
    trial: usize,
}

fn sampler_label(s: Option<SamplerKind>) -> &'static str {
    s.map_or("gai", SamplerKind::name)
}

/// Worker count after applying the `TMCTS_THREADS` cap.
pub fn thread_count(requested: Option<usize>) -> usize {
    let env_cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let base = requested
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    env_cap.map_or(base, |cap| base.min(cap))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let instances: Vec<Instance> = (0..config.instances)
        .map(|i| {
            let (tree, means) = gen_instance(
                config.depth,
                config.arity,
                &config.family,
                config.theta,
                config.instance_seed(i),
            )?;
            Instance::new(tree, means, config.theta, &config.family)
        })
        .collect::<Result<_>>()?;

    let mut kinds: Vec<Option<SamplerKind>> = config.samplers.iter().map(|&s| Some(s)).collect();
    if config.gai {
        kinds.push(None);
    }
    let mut work = Vec::new();
    for instance in 0..instances.len() {
        for &sampler in &kinds {
            for delta_idx in 0..config.deltas.len() {
                for trial in 0..config.trials {
                    work.push(WorkItem {
                        instance,
                        sampler,
                        delta_idx,
                        trial,
                    });
                }
            }
        }
    }
    let hash = config.hash();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(config.threads))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records = pool.install(|| {
        work.par_iter()
            .map(|item| run_trial(config, &hash, &instances[item.instance], item))
            .collect::<Vec<_>>()
    });
    Ok(Experiment { instances, records })
}

fn run_trial(config: &ExperimentConfig, hash: &str, inst: &Instance, item: &WorkItem) -> TrialRecord {
    let delta = config.deltas[item.delta_idx];
    let label = sampler_label(item.sampler);
    let seed = trial_seed(config.seed, item.instance, label, item.delta_idx, item.trial);
    let mut cfg = RunConfig::new(
        config.theta,
        config.family,
        delta,
        item.sampler.unwrap_or(SamplerKind::Rd),
    )
    .engine(config.engine);
    cfg.max_rounds = config.max_rounds;
    let mut record = record_trial(inst, &cfg, item.sampler.is_none(), seed);
    record.config_hash = hash.to_string();
    record.instance = item.instance;
    record
}

/// Runs one seeded trial and packs the outcome; a failed run is recorded in
/// `error` rather than returned. `config_hash` and `instance` are left blank.
pub fn record_trial(inst: &Instance, cfg: &RunConfig, gai: bool, seed: u64) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome: Result<RunResult> = if gai {
        run_gai(&inst.tree, &inst.means, cfg, false, &mut rng)
    } else {
        run(&inst.tree, &inst.means, cfg, &mut rng)
    };
    let t_star = lower_bound_t(inst.d_s0, cfg.delta).unwrap_or(f64::NAN);
    let mut record = TrialRecord {
        config_hash: String::new(),
        instance: 0,
        sampler: if gai { "gai" } else { cfg.sampler.name() }.to_string(),
        delta: cfg.delta,
        depth: inst.tree.depth(),
        seed,
        tau: 0,
        answer: None,
        correct: false,
        d_s0: inst.d_s0,
        t_star,
        ratio: f64::NAN,
        error: None,
    };
    match outcome {
        Ok(r) => {
            record.tau = r.tau;
            record.answer = Some(match r.gai {
                Some(g) => g.to_string(),
                None => r.answer.to_string(),
            });
            record.correct = r.correct;
            record.ratio = r.tau as f64 / t_star;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

impl Instance {
    pub fn new(tree: GameTree, means: Vec<f64>, theta: f64, family: &RewardFamily) -> Result<Self> {
        let d_s0 = optimal_allocation(&tree, &means, theta, family)?.d_root();
        Ok(Instance { tree, means, d_s0 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sampler: String,
    pub delta: f64,
    pub depth: usize,
    pub mean_tau: f64,
    pub std_tau: f64,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub errors: usize,
    pub trials: usize,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per (sampler, δ, depth) cell, in order of first appearance.
/// Failed trials count as errors and are left out of the means.
pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64, usize)> = Vec::new();
    let mut cells: BTreeMap<(String, u64, usize), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.sampler.clone(), r.delta.to_bits(), r.depth);
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &cells[&key];
            let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            let taus: Vec<f64> = ok.iter().map(|r| r.tau as f64).collect();
            let ratios: Vec<f64> = ok.iter().map(|r| r.ratio).collect();
            let (mean_tau, std_tau) = mean_std(&taus);
            let (mean_ratio, std_ratio) = mean_std(&ratios);
            SummaryRow {
                sampler: key.0.clone(),
                delta: f64::from_bits(key.1),
                depth: key.2,
                mean_tau,
                std_tau,
                mean_ratio,
                std_ratio,
                errors: rs.iter().filter(|r| !r.correct).count(),
                trials: rs.len(),
            }
        })
        .collect()
}

pub fn write_records(records: &[TrialRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub const CSV_HEADER: &str = "sampler,delta,depth,mean_tau,std_tau,mean_ratio,std_ratio,errors,trials";

pub fn emit_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(CSV_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes one gnuplot data block per sampler, (ln(1/δ), mean ratio, std), and
/// a plotting script next to it. Returns the script path.
pub fn emit_plotdata(rows: &[SummaryRow], path: &Path) -> Result<PathBuf> {
    let mut samplers: Vec<&str> = Vec::new();
    for row in rows {
        if !samplers.contains(&row.sampler.as_str()) {
            samplers.push(&row.sampler);
        }
    }
    let mut data = String::new();
    for (i, s) in samplers.iter().enumerate() {
        if i > 0 {
            data.push_str("\n\n");
        }
        data.push_str(&format!("# {s}\n"));
        let mut pts: Vec<&SummaryRow> = rows.iter().filter(|r| r.sampler == *s).collect();
        pts.sort_by(|a, b| b.delta.partial_cmp(&a.delta).expect("finite"));
        for r in pts {
            data.push_str(&format!("{} {} {}\n", (1.0 / r.delta).ln(), r.mean_ratio, r.std_ratio));
        }
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))?;

    let script_path = path.with_extension("gp");
    let file_name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let mut gp = fs::File::create(&script_path).map_err(|e| Error::io(&script_path, e))?;
    let mut script = String::from(
        "set xlabel 'ln(1/delta)'\nset ylabel 'mean tau / T*'\nset key top right\nplot ",
    );
    let series: Vec<String> = samplers
        .iter()
        .enumerate()
        .map(|(i, s)| format!("'{file_name}' index {i} using 1:2:3 with yerrorlines title '{s}'"))
        .collect();
    script.push_str(&series.join(", \\\n     "));
    script.push('\n');
    gp.write_all(script.as_bytes()).map_err(|e| Error::io(&script_path, e))?;
    Ok(script_path)
}
