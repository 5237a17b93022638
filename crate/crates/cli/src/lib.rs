//! Experiment driver: training runs, evaluation, hypergraph dumps and
//! cross-seed comparisons.

pub mod compare;
pub mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use hypermix::hypergraph::Hypergraph;
use hypermix::nn::checkpoint;
use hypermix::parallel;
use hypermix::training::{self, EvalStats, Learner, MetricRecord};
use hypermix::{Rng, Stream};

pub use compare::{aggregate, percentile, CurvePoint};
pub use config::{Config, MixerSection, Variant};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("run directory {0} already holds results")]
    Exists(PathBuf),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error(transparent)]
    Core(#[from] hypermix::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] hypermix::nn::NnError),
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// `<out>/<variant>/seed_<seed>`.
pub fn run_dir(out: &Path, variant: &Variant, seed: u64) -> PathBuf {
    out.join(variant.dir_name()).join(format!("seed_{seed}"))
}

/// Result of one finished training run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<MetricRecord>,
}

/// Trains one (variant, seed) into a fresh run directory.
pub fn train_one(cfg: &Config, variant: &Variant, seed: u64, out: &Path) -> Result<RunSummary, CliError> {
    let dir = run_dir(out, variant, seed);
    if dir.join(METRICS_FILE).exists() || dir.join(CHECKPOINT_FILE).exists() {
        return Err(CliError::Exists(dir));
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let snapshot = cfg.snapshot(variant, seed);
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, snapshot.to_json()).map_err(|e| io_err(&cfg_path, e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let file = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&metrics_path)
        .map_err(|e| io_err(&metrics_path, e))?;
    let mut writer = BufWriter::new(file);
    let spec = cfg.run_spec(variant);
    log::info!("training {} seed {seed} -> {}", variant.label(), dir.display());
    let outcome = training::run(&spec, seed, |rec| {
        let line = serde_json::to_string(rec).expect("metric serializes");
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| hypermix::Error::Training(format!("writing metrics: {e}")))
    })?;
    checkpoint::save(&outcome.learner.params, &dir.join(CHECKPOINT_FILE))?;
    if let Some(last) = outcome.metrics.last() {
        log::info!(
            "{} seed {seed}: final return {:.3}, success {:.2}",
            variant.label(),
            last.mean_return,
            last.success_rate
        );
    }
    Ok(RunSummary {
        variant: *variant,
        seed,
        dir,
        metrics: outcome.metrics,
    })
}

/// Trains every variant × seed of `cfg` (or only `seed`), replicas in parallel.
pub fn run_train(cfg: &Config, out: &Path, seed: Option<u64>) -> Result<Vec<RunSummary>, CliError> {
    let seeds = match seed {
        Some(s) => vec![s],
        None => cfg.seeds.clone(),
    };
    let jobs: Vec<(Variant, u64)> = cfg
        .variants()
        .into_iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    parallel::map(jobs, |(v, s)| train_one(cfg, &v, s, out))
        .into_iter()
        .collect()
}

/// Rebuilds the networks described by `cfg` and loads a checkpoint into them.
pub fn load_learner(cfg: &Config, checkpoint_path: &Path) -> Result<Learner, CliError> {
    let variant = cfg.variants()[0];
    let spec = cfg.run_spec(&variant);
    let env = spec.env.build(spec.gamma).map_err(hypermix::Error::from)?;
    let mut learner = Learner::new(
        env.spec(),
        spec.mixer,
        spec.agent,
        spec.mixer_config,
        spec.train.optimizer,
        cfg.seeds[0],
    )?;
    checkpoint::load_into(&mut learner.params, checkpoint_path)?;
    learner.update_target();
    Ok(learner)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Greedy evaluation of a checkpoint.
pub fn run_eval(cfg: &Config, checkpoint_path: &Path, episodes: usize) -> Result<EvalReport, CliError> {
    if episodes == 0 {
        return Err(CliError::Config("episodes: must be positive".into()));
    }
    let learner = load_learner(cfg, checkpoint_path)?;
    let mut env = cfg.env.build(cfg.gamma).map_err(hypermix::Error::from)?;
    let mut rng = Rng::stream(cfg.seeds[0], Stream::Eval);
    let EvalStats {
        mean_return,
        success_rate,
    } = learner.evaluate(env.as_mut(), episodes, &mut rng)?;
    Ok(EvalReport {
        episodes,
        mean_return,
        success_rate,
    })
}

/// Rolls one greedy episode and writes the incidence matrix seen at every
/// step to `<out>/step_<t>.csv`. Returns the hypergraphs in step order.
pub fn dump_hypergraph(cfg: &Config, checkpoint_path: &Path, seed: u64, out: &Path) -> Result<Vec<Hypergraph>, CliError> {
    let kind = cfg.run_spec(&cfg.variants()[0]).mixer;
    if !kind.uses_hypergraph() {
        return Err(hypermix::Error::UnsupportedMixer(kind.to_string()).into());
    }
    let learner = load_learner(cfg, checkpoint_path)?;
    let mut env = cfg.env.build(cfg.gamma).map_err(hypermix::Error::from)?;
    let mut env_rng = Rng::stream(seed, Stream::Env);
    let mut no_explore = Rng::new(seed);
    let episode = learner.collect_episode(env.as_mut(), 0.0, &mut env_rng, &mut no_explore)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut graphs = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let graph = learner.mixer.hypergraph(&learner.params, &episode.observations[t])?;
        let path = out.join(format!("step_{t:03}.csv"));
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        graph.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
        graphs.push(graph);
    }
    Ok(graphs)
}

/// Outcome of [`compare`]: the curves plus each variant's final median.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub points: Vec<CurvePoint>,
    pub final_medians: Vec<(String, f64)>,
}

impl Comparison {
    /// Whether final medians never decrease along the variant order.
    pub fn is_monotone(&self) -> bool {
        self.final_medians.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Seeds used by `compare`: `k` consecutive integers from the first configured seed.
pub fn compare_seeds(cfg: &Config, k: usize) -> Vec<u64> {
    (0..k as u64).map(|i| cfg.seeds[0] + i).collect()
}

/// Trains each variant on `k` seeds (in memory) and writes the aggregated CSV.
pub fn compare(cfg: &Config, variants: &[Variant], k: usize, out_csv: &Path) -> Result<Comparison, CliError> {
    if k == 0 {
        return Err(CliError::Config("seeds: compare needs at least one seed".into()));
    }
    if variants.is_empty() {
        return Err(CliError::Config("mixers: empty list".into()));
    }
    let seeds = compare_seeds(cfg, k);
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = parallel::map(jobs, |(v, s)| {
        let spec = cfg.run_spec(&variants[v]);
        training::run(&spec, s, |_| Ok(())).map(|o| (v, o.metrics))
    });
    let mut per_variant: Vec<Vec<Vec<MetricRecord>>> = vec![Vec::new(); variants.len()];
    for r in results {
        let (v, metrics) = r?;
        per_variant[v].push(metrics);
    }
    let mut points = Vec::new();
    let mut final_medians = Vec::new();
    for (variant, runs) in variants.iter().zip(&per_variant) {
        let curve = aggregate(&variant.label(), runs)?;
        if let Some(last) = curve.last() {
            final_medians.push((variant.label(), last.median));
        }
        points.extend(curve);
    }
    if let Some(parent) = out_csv.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = File::create(out_csv).map_err(|e| io_err(out_csv, e))?;
    let mut w = BufWriter::new(file);
    compare::write_csv(&points, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(out_csv, e))?;
    Ok(Comparison { points, final_medians })
}

/// Parses `a,b,c`; with no list, the config's sweep or its single mixer.
pub fn parse_variants(list: Option<&str>, cfg: &Config) -> Result<Vec<Variant>, CliError> {
    match list {
        Some(s) => s.split(',').filter(|p| !p.trim().is_empty()).map(Variant::parse).collect(),
        None => Ok(cfg.variants()),
    }
}

/// Reads a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))))
        .collect()
}
