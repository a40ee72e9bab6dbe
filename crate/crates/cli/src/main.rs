use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tmcts_core::allocation::optimal_allocation;
use tmcts_core::glr::{beta, glr, ThresholdParams};
use tmcts_core::harness::{
    self, emit_csv, emit_plotdata, gen_instance, read_records, record_trial, summarize,
    write_records, ExperimentConfig, Instance, TrialRecord,
};
use tmcts_core::reward::RewardFamily;
use tmcts_core::sampling::{EngineKind, RunConfig, SamplerKind};
use tmcts_core::state::EmpiricalState;
use tmcts_core::tree::{parse_leaf_map, parse_tree, serialize_leaf_map, serialize_tree, Answer, GameTree};

#[derive(Parser)]
#[command(name = "tmcts", version, about = "Thresholding search over minimax trees with stochastic leaves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random complete tree with its leaf means.
    Gen(GenArgs),
    /// Print the characteristic values and the optimal allocation.
    Alloc(AllocArgs),
    /// Evaluate the GLR stopping statistic for given counts and means.
    Glr(GlrArgs),
    /// Run one seeded identification trial and print its record.
    Run(RunArgs),
    /// Run one seeded good action identification trial.
    Gai(GaiArgs),
    /// Run a batch experiment described by a JSON config.
    Experiment(ExperimentArgs),
    /// Summarize a records file into CSV and plot data.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Bernoulli,
    Gaussian,
}

#[derive(Args)]
struct FamilyOpts {
    #[arg(long, value_enum, default_value = "bernoulli")]
    family: FamilyArg,
    /// Variance of the Gaussian family.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

impl FamilyOpts {
    fn family(&self) -> Result<RewardFamily> {
        Ok(match self.family {
            FamilyArg::Bernoulli => RewardFamily::Bernoulli,
            FamilyArg::Gaussian => RewardFamily::gaussian(self.sigma2)?,
        })
    }
}

#[derive(Args)]
struct InstanceOpts {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    means: PathBuf,
    #[arg(long)]
    theta: f64,
    #[command(flatten)]
    family: FamilyOpts,
}

impl InstanceOpts {
    fn load(&self) -> Result<(GameTree, Vec<f64>, RewardFamily)> {
        let tree = load_tree(&self.tree)?;
        let means = load_leaf_map(&tree, &self.means)?;
        Ok((tree, means, self.family.family()?))
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    arity: usize,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    family: FamilyOpts,
    /// Where to write the tree; printed with the means otherwise.
    #[arg(long)]
    tree_out: Option<PathBuf>,
    #[arg(long)]
    means_out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocArgs {
    #[command(flatten)]
    instance: InstanceOpts,
}

#[derive(Args)]
struct GlrArgs {
    #[arg(long)]
    tree: PathBuf,
    /// Leaf name to sample count.
    #[arg(long)]
    counts: PathBuf,
    /// Leaf name to empirical mean.
    #[arg(long)]
    means: PathBuf,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    delta: f64,
    #[command(flatten)]
    family: FamilyOpts,
}

#[derive(Args)]
struct TrialOpts {
    #[command(flatten)]
    instance: InstanceOpts,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "naive")]
    engine: EngineKind,
    #[arg(long)]
    max_rounds: Option<u64>,
}

impl TrialOpts {
    fn trial(&self, gai: bool, configure: impl FnOnce(&mut RunConfig)) -> Result<TrialRecord> {
        let (tree, means, family) = self.instance.load()?;
        let inst = Instance::new(tree, means, self.instance.theta, &family)?;
        let mut cfg = RunConfig::new(self.instance.theta, family, self.delta, SamplerKind::Rd).engine(self.engine);
        if let Some(m) = self.max_rounds {
            cfg.max_rounds = m;
        }
        configure(&mut cfg);
        let record = record_trial(&inst, &cfg, gai, self.seed);
        if let Some(e) = &record.error {
            bail!("{e}");
        }
        Ok(record)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    trial: TrialOpts,
    #[arg(long, default_value = "rd")]
    sampler: SamplerKind,
    /// Rebuild the fast engine's aggregates every this many rounds.
    #[arg(long)]
    refresh_interval: Option<u64>,
    /// Check the fast engine against the naive recursions every round.
    #[arg(long)]
    paranoid: bool,
}

#[derive(Args)]
struct GaiArgs {
    #[command(flatten)]
    trial: TrialOpts,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for records, summary, plot data and instances.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's worker count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Gnuplot data file; the script is written next to it.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_tree(path: &Path) -> Result<GameTree> {
    parse_tree(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_leaf_map(tree: &GameTree, path: &Path) -> Result<Vec<f64>> {
    parse_leaf_map(tree, &read(path)?).with_context(|| format!("in {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let family = a.family.family()?;
    let (tree, means) = gen_instance(a.depth, a.arity, &family, a.theta, a.seed)?;
    match (&a.tree_out, &a.means_out) {
        (Some(t), Some(m)) => {
            write(t, &serialize_tree(&tree))?;
            write(m, &serialize_leaf_map(&tree, &means))
        }
        (None, None) => {
            let tree_doc: serde_json::Value = serde_json::from_str(&serialize_tree(&tree))?;
            let means_doc: serde_json::Value = serde_json::from_str(&serialize_leaf_map(&tree, &means))?;
            print_json(&json!({ "tree": tree_doc, "means": means_doc }))
        }
        _ => bail!("--tree-out and --means-out go together"),
    }
}

fn cmd_alloc(a: &AllocArgs) -> Result<()> {
    let (tree, means, family) = a.instance.load()?;
    let alloc = optimal_allocation(&tree, &means, a.instance.theta, &family)?;
    let w: serde_json::Map<String, serde_json::Value> = (0..tree.num_leaves())
        .map(|l| (tree.leaf_name(l).to_string(), json!(alloc.w[l])))
        .collect();
    print_json(&json!({
        "answer": alloc.answer,
        "d_s0": alloc.d_root(),
        "d": alloc.d,
        "w": w,
    }))
}

fn cmd_glr(a: &GlrArgs) -> Result<()> {
    let family = a.family.family()?;
    let tree = load_tree(&a.tree)?;
    let raw_counts = load_leaf_map(&tree, &a.counts)?;
    let means = load_leaf_map(&tree, &a.means)?;
    let counts = raw_counts
        .iter()
        .map(|&c| {
            if c >= 0.0 && c.fract() == 0.0 {
                Ok(c as u64)
            } else {
                bail!("count {c} is not a non-negative integer")
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    let state = EmpiricalState::from_counts_means(&counts, &means)?;
    let z = glr(&tree, &state, a.theta, &family)?;
    let params = ThresholdParams::new(a.delta, tree.num_leaves())?;
    let b = beta(&state, &params)?;
    let answer = Answer::from_value(tree.values(&means)[tree.root()], a.theta);
    print_json(&json!({ "z": z, "beta": b, "stop": z >= b, "answer": answer }))
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let record = a.trial.trial(false, |cfg| {
        cfg.sampler = a.sampler;
        cfg.refresh_interval = a.refresh_interval;
        cfg.paranoid = a.paranoid;
    })?;
    print_json(&record)
}

fn cmd_gai(a: &GaiArgs) -> Result<()> {
    print_json(&a.trial.trial(true, |_| {})?)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut config: ExperimentConfig =
        serde_json::from_str(&read(&a.config)?).with_context(|| format!("in {}", a.config.display()))?;
    if a.threads.is_some() {
        config.threads = a.threads;
    }
    let exp = harness::run_experiment(&config)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, inst) in exp.instances.iter().enumerate() {
        write(&a.out.join(format!("instance-{i}.tree.json")), &serialize_tree(&inst.tree))?;
        write(
            &a.out.join(format!("instance-{i}.means.json")),
            &serialize_leaf_map(&inst.tree, &inst.means),
        )?;
    }
    write_records(&exp.records, &a.out.join("records.jsonl"))?;
    let rows = summarize(&exp.records);
    emit_csv(&rows, &a.out.join("summary.csv"))?;
    emit_plotdata(&rows, &a.out.join("ratio.dat"))?;
    for r in &rows {
        println!(
            "{:>6} delta={:<8e} mean_tau={:<12.1} ratio={:.3}±{:.3} errors={}/{}",
            r.sampler, r.delta, r.mean_tau, r.mean_ratio, r.std_ratio, r.errors, r.trials
        );
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let rows = summarize(&read_records(&a.records)?);
    emit_csv(&rows, &a.csv)?;
    if let Some(p) = &a.plot {
        emit_plotdata(&rows, p)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Alloc(a) => cmd_alloc(a),
        Command::Glr(a) => cmd_glr(a),
        Command::Run(a) => cmd_run(a),
        Command::Gai(a) => cmd_gai(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Report(a) => cmd_report(a),
    }
}
