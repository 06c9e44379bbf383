//! Experiment recipes: dataset generation, training, evaluation campaigns
//! and the three hypothesis studies, with their on-disk artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    attribute_columns, generate_dataset, parse_dataset, pearson_matrix, write_dataset, Correlation, DatasetRow,
    TeacherPolicy, ATTRIBUTE_NAMES,
};
use crate::market::{
    run_episode, BuyerPolicy, DeadlineClass, Density, EpisodeSpec, IllegalActionMode, MarketConfig, MarketError,
    RatioClass, Zoa,
};
use crate::metrics::{
    write_plot_data, write_results, write_summary, CampaignSummary, EpisodeResult, SummaryKey,
};
use crate::neural::checkpoint::find;
use crate::neural::{
    decode_checkpoint, encode_checkpoint, train_supervised, EpochStats, NamedNetwork, NeuralError, PolicyNetwork,
    TrainConfig,
};
use crate::protocol::ParseError;
use crate::rl::{
    train_rl, write_training_log, ActorCritic, DdpgConfig, NetworkBuyer, RewardSpec, RlBuyer, RlError,
    TrainingLogRow,
};
use crate::strategies::{SellerStrategy, TeacherParams};
use crate::{derive_seed, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    GenData,
    TrainSl,
    TrainRl,
    Evaluate,
    HypothesisA,
    HypothesisB,
    HypothesisC,
}

impl RunMode {
    pub const ALL: [RunMode; 7] = [
        RunMode::GenData,
        RunMode::TrainSl,
        RunMode::TrainRl,
        RunMode::Evaluate,
        RunMode::HypothesisA,
        RunMode::HypothesisB,
        RunMode::HypothesisC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::GenData => "gen-data",
            RunMode::TrainSl => "train-sl",
            RunMode::TrainRl => "train-rl",
            RunMode::Evaluate => "evaluate",
            RunMode::HypothesisA => "hypothesis-a",
            RunMode::HypothesisB => "hypothesis-b",
            RunMode::HypothesisC => "hypothesis-c",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunMode {
    type Err = ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        RunMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = RunMode::ALL.iter().map(|m| m.as_str()).collect();
            ParseError(format!("unknown mode `{s}` (expected one of: {})", names.join(", ")))
        })
    }
}

/// Buyer evaluated by the `evaluate` mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalStrategy {
    #[default]
    Teacher,
    Sl,
    Rl,
}

impl EvalStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalStrategy::Teacher => "teacher",
            EvalStrategy::Sl => "sl",
            EvalStrategy::Rl => "rl",
        }
    }
}

impl FromStr for EvalStrategy {
    type Err = ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "teacher" => Ok(EvalStrategy::Teacher),
            "sl" => Ok(EvalStrategy::Sl),
            "rl" => Ok(EvalStrategy::Rl),
            _ => Err(ParseError(format!("unknown strategy `{s}` (expected teacher, sl or rl)"))),
        }
    }
}

/// Everything a run needs. Unset market knobs fall back to the comparison
/// setting (low density, high ratio, long deadline, ZoA 60 and 100).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub mode: RunMode,
    pub seed: u64,
    /// Generation, training or per-cell campaign episodes.
    pub episodes: Option<usize>,
    pub test_episodes: Option<usize>,
    pub adaptation_episodes: Option<usize>,
    /// Divisor applied to every episode count.
    pub scale: usize,
    pub sellers: Vec<String>,
    /// Use all 81 settings instead of the knobs below.
    pub sweep: bool,
    pub zoa: Option<Zoa>,
    pub md: Option<Density>,
    pub mr: Option<RatioClass>,
    pub deadline: Option<DeadlineClass>,
    pub strategy: EvalStrategy,
    pub teacher: TeacherParams,
    pub train: TrainConfig,
    pub ddpg: DdpgConfig,
    pub reward: RewardSpec,
    pub dataset: Option<PathBuf>,
    pub sl_checkpoint: Option<PathBuf>,
    pub rl_checkpoint: Option<PathBuf>,
    /// Defaults to `mask` while the learner acts and `abort` otherwise.
    pub illegal: Option<IllegalActionMode>,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            mode: RunMode::Evaluate,
            seed: 0,
            episodes: None,
            test_episodes: None,
            adaptation_episodes: None,
            scale: 1,
            sellers: Vec::new(),
            sweep: false,
            zoa: None,
            md: None,
            mr: None,
            deadline: None,
            strategy: EvalStrategy::Teacher,
            teacher: TeacherParams::default(),
            train: TrainConfig::default(),
            ddpg: DdpgConfig::default(),
            reward: RewardSpec::default(),
            dataset: None,
            sl_checkpoint: None,
            rl_checkpoint: None,
            illegal: None,
            out: PathBuf::from("out"),
        }
    }
}

pub const DEFAULT_TRAIN_EPISODES: usize = 500;
pub const DEFAULT_TEST_EPISODES: usize = 100;
pub const DEFAULT_ADAPTATION_EPISODES: usize = 500;
pub const DEFAULT_TRANSFER_PAIR: [&str; 2] = ["conceder", "rel_tft"];

pub fn parse_spec(input: &[u8]) -> std::result::Result<ExperimentSpec, ParseError> {
    serde_json::from_slice(input).map_err(|e| ParseError(e.to_string()))
}

/// Every problem with `spec`, without touching the file system beyond
/// checking that consumed inputs exist.
pub fn validate_spec(spec: &ExperimentSpec) -> Vec<String> {
    let mut out = Vec::new();
    for id in &spec.sellers {
        if SellerStrategy::from_id(id).is_none() {
            out.push(format!(
                "unknown seller `{id}` (valid: {})",
                SellerStrategy::IDS.join(", ")
            ));
        }
    }
    if spec.mode == RunMode::HypothesisC && !spec.sellers.is_empty() && spec.sellers.len() != 2 {
        out.push("hypothesis-c needs exactly two sellers".into());
    }
    if spec.scale == 0 {
        out.push("scale must be at least 1".into());
    }
    for (name, v) in [
        ("episodes", spec.episodes),
        ("test_episodes", spec.test_episodes),
        ("adaptation_episodes", spec.adaptation_episodes),
    ] {
        if v == Some(0) {
            out.push(format!("{name} must be at least 1"));
        }
    }
    if let Err(e) = spec.teacher.validate() {
        out.push(e);
    }
    if let Err(e) = spec.train.validate() {
        out.push(e.to_string());
    }
    let d = &spec.ddpg;
    if d.batch_size >= d.buffer_capacity {
        out.push(format!(
            "K must be < N (batch size {} vs buffer capacity {})",
            d.batch_size, d.buffer_capacity
        ));
    }
    if let Err(e) = d.validate() {
        if d.batch_size < d.buffer_capacity {
            out.push(e.to_string());
        }
    }
    if !(0.0..=1.0).contains(&spec.reward.discount_exponent) {
        out.push("discount exponent must lie in [0, 1]".into());
    }
    let needs = |p: &Option<PathBuf>, what: &str, out: &mut Vec<String>| match p {
        None => out.push(format!("{} mode needs {what}", spec.mode)),
        Some(p) if !p.exists() => out.push(format!("{what} `{}` does not exist", p.display())),
        Some(_) => {}
    };
    let exists = |p: &Option<PathBuf>, what: &str, out: &mut Vec<String>| {
        if let Some(p) = p {
            if !p.exists() {
                out.push(format!("{what} `{}` does not exist", p.display()));
            }
        }
    };
    match (spec.mode, spec.strategy) {
        (RunMode::Evaluate, EvalStrategy::Sl) => needs(&spec.sl_checkpoint, "an SL checkpoint", &mut out),
        (RunMode::Evaluate, EvalStrategy::Rl) => needs(&spec.rl_checkpoint, "an RL checkpoint", &mut out),
        _ => {
            exists(&spec.sl_checkpoint, "SL checkpoint", &mut out);
            exists(&spec.rl_checkpoint, "RL checkpoint", &mut out);
        }
    }
    exists(&spec.dataset, "dataset", &mut out);
    out
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec:\n  {}", .0.join("\n  "))]
    InvalidSpec(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

impl ExperimentSpec {
    fn scaled(&self, n: usize) -> usize {
        (n / self.scale.max(1)).max(1)
    }

    pub fn train_episodes(&self) -> usize {
        let base = match self.mode {
            RunMode::Evaluate | RunMode::HypothesisA => DEFAULT_TEST_EPISODES,
            _ => DEFAULT_TRAIN_EPISODES,
        };
        self.scaled(self.episodes.unwrap_or(base))
    }

    pub fn test_episodes(&self) -> usize {
        self.scaled(self.test_episodes.unwrap_or(DEFAULT_TEST_EPISODES))
    }

    pub fn adaptation_episodes(&self) -> usize {
        self.scaled(self.adaptation_episodes.unwrap_or(DEFAULT_ADAPTATION_EPISODES))
    }

    /// Market settings, with `seed` filled in.
    pub fn configs(&self, seed: u64) -> Vec<MarketConfig> {
        if self.sweep || self.mode == RunMode::HypothesisA {
            return MarketConfig::sweep(seed);
        }
        let zoas = match self.zoa {
            Some(z) => vec![z],
            None => vec![Zoa::A60, Zoa::H100],
        };
        zoas.into_iter()
            .map(|zoa| MarketConfig {
                md: self.md.unwrap_or(Density::L),
                mr: self.mr.unwrap_or(RatioClass::H),
                zoa,
                deadline_class: self.deadline.unwrap_or(DeadlineClass::Lg),
                seed,
            })
            .collect()
    }

    pub fn seller_strategies(&self) -> Vec<SellerStrategy> {
        let ids: Vec<&str> = if self.sellers.is_empty() {
            match self.mode {
                RunMode::HypothesisC => DEFAULT_TRANSFER_PAIR.to_vec(),
                _ => SellerStrategy::IDS.to_vec(),
            }
        } else {
            self.sellers.iter().map(String::as_str).collect()
        };
        ids.into_iter().filter_map(SellerStrategy::from_id).collect()
    }

    fn illegal_or(&self, default: IllegalActionMode) -> IllegalActionMode {
        self.illegal.unwrap_or(default)
    }
}

/// Seed tags separating the random streams of a run.
mod stream {
    pub const DATA: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TEST: u64 = 3;
    pub const ADAPT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const LEARN: u64 = 6;
    pub const EPISODE: u64 = 7;
}

/// `n` episodes cycling through `configs` and, once per pass, `sellers`.
pub fn cycled_specs(
    configs: &[MarketConfig],
    sellers: &[SellerStrategy],
    n: usize,
    teacher: TeacherParams,
    illegal: IllegalActionMode,
) -> Vec<EpisodeSpec> {
    (0..n)
        .map(|i| {
            let config = configs[i % configs.len()];
            let seller = sellers[(i / configs.len()) % sellers.len()];
            let mut s = EpisodeSpec::new(config, i as u64, seller, teacher);
            s.illegal = illegal;
            s
        })
        .collect()
}

fn episode_rng(spec: &EpisodeSpec) -> SimRng {
    SimRng::seed_from_u64(derive_seed(spec.config.seed, &[spec.episode_id, stream::EPISODE]))
}

/// Runs `specs` in parallel with a fresh policy per episode. The market
/// stream of an episode depends only on its spec, so campaigns over the same
/// specs are paired across policies.
pub fn run_campaign<P, F>(specs: &[EpisodeSpec], make: F) -> Result<Vec<EpisodeResult>>
where
    P: BuyerPolicy,
    F: Fn() -> P + Sync,
{
    specs
        .par_iter()
        .map(|s| {
            let mut policy = make();
            let mut rng = episode_rng(s);
            Ok(run_episode(s, &mut policy, &mut rng)?.result)
        })
        .collect()
}

/// Supervised pretraining on `rows`.
pub fn train_policy(rows: &[DatasetRow], cfg: &TrainConfig, seed: u64) -> Result<(PolicyNetwork, Vec<EpochStats>)> {
    let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[stream::INIT]));
    let mut net = PolicyNetwork::new(&crate::neural::policy::DEFAULT_HIDDEN, cfg.dropout_rate, &mut rng);
    let history = train_supervised(&mut net, rows, cfg)?;
    Ok((net, history))
}

pub fn default_dataset(spec: &ExperimentSpec) -> Vec<DatasetRow> {
    let seed = derive_seed(spec.seed, &[stream::DATA]);
    generate_dataset(
        &spec.configs(seed),
        &spec.seller_strategies(),
        spec.teacher,
        spec.train_episodes(),
        seed,
    )
}

/// Pearson matrix of the seven state attributes of `rows`.
pub fn attribute_correlation(rows: &[DatasetRow]) -> Option<Correlation> {
    let table: Vec<Vec<f64>> = rows.iter().map(attribute_columns).collect();
    pearson_matrix(&table)
}

/// A fresh learner around `actor`.
pub fn new_learner(spec: &ExperimentSpec, actor: PolicyNetwork, tag: u64) -> Result<RlBuyer> {
    let mut rng = SimRng::seed_from_u64(derive_seed(spec.seed, &[stream::INIT, tag]));
    let mut actor = actor;
    actor.dropout_rate = 0.0;
    let ac = ActorCritic::new(actor, spec.ddpg.clone(), &mut rng)?;
    Ok(RlBuyer::new(ac, spec.reward, derive_seed(spec.seed, &[stream::LEARN, tag]))?)
}

pub fn random_actor(spec: &ExperimentSpec, tag: u64) -> PolicyNetwork {
    let mut rng = SimRng::seed_from_u64(derive_seed(spec.seed, &[stream::INIT, tag, 1]));
    PolicyNetwork::new(&crate::neural::policy::DEFAULT_HIDDEN, 0.0, &mut rng)
}

/// Trains `agent` on `n` episodes against `sellers` drawn from stream `tag`.
pub fn learn(
    spec: &ExperimentSpec,
    agent: &mut RlBuyer,
    sellers: &[SellerStrategy],
    n: usize,
    tag: u64,
) -> Result<Vec<TrainingLogRow>> {
    let seed = derive_seed(spec.seed, &[tag]);
    let specs = cycled_specs(
        &spec.configs(seed),
        sellers,
        n,
        spec.teacher,
        spec.illegal_or(IllegalActionMode::Mask),
    );
    Ok(train_rl(agent, &specs, seed)?)
}

pub fn key(strategy: &str, seller: &str, zoa: &str, md: &str, mr: &str, deadline: &str) -> SummaryKey {
    SummaryKey {
        strategy: strategy.into(),
        seller: seller.into(),
        zoa: zoa.into(),
        md: md.into(),
        mr: mr.into(),
        deadline: deadline.into(),
    }
}

fn summarize(k: SummaryKey, results: &[EpisodeResult]) -> Result<(SummaryKey, CampaignSummary)> {
    let s = CampaignSummary::from_results(results)
        .map_err(|e| ExperimentError::InvalidSpec(vec![e.to_string()]))?;
    Ok((k, s))
}

fn joined<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let v: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    v.join("+")
}

/// Success, utility and time of the teacher in all 81 settings for each
/// seller; `n` episodes per cell.
pub fn hypothesis_a(spec: &ExperimentSpec, n: usize) -> Result<Vec<(SummaryKey, CampaignSummary)>> {
    let seed = derive_seed(spec.seed, &[stream::TEST]);
    let mut rows = Vec::new();
    for seller in spec.seller_strategies() {
        for config in MarketConfig::sweep(seed) {
            let specs = cycled_specs(&[config], &[seller], n, spec.teacher, spec.illegal_or(IllegalActionMode::Abort));
            let results = run_campaign(&specs, || TeacherPolicy::new(spec.teacher))?;
            rows.push(summarize(
                key(
                    "teacher",
                    &seller.to_string(),
                    config.zoa.as_str(),
                    config.md.as_str(),
                    config.mr.as_str(),
                    config.deadline_class.as_str(),
                ),
                &results,
            )?);
        }
    }
    Ok(rows)
}

/// Outcome of the supervised-versus-reinforcement comparison.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub summaries: Vec<(SummaryKey, CampaignSummary)>,
    pub results: Vec<(String, Vec<EpisodeResult>)>,
    pub logs: Vec<(String, Vec<TrainingLogRow>)>,
    pub networks: Vec<NamedNetwork>,
}

fn per_zoa_rows(
    strategy: &str,
    sellers: &str,
    configs: &[MarketConfig],
    specs: &[EpisodeSpec],
    results: &[EpisodeResult],
) -> Result<Vec<(SummaryKey, CampaignSummary)>> {
    let c0 = configs[0];
    let all_zoa = joined(configs.iter().map(|c| c.zoa));
    let mut rows = vec![summarize(
        key(strategy, sellers, &all_zoa, c0.md.as_str(), c0.mr.as_str(), c0.deadline_class.as_str()),
        results,
    )?];
    if configs.len() > 1 {
        for c in configs {
            let sub: Vec<EpisodeResult> = specs
                .iter()
                .zip(results)
                .filter(|(s, _)| s.config.zoa == c.zoa)
                .map(|(_, r)| *r)
                .collect();
            if sub.is_empty() {
                continue;
            }
            rows.push(summarize(
                key(strategy, sellers, c.zoa.as_str(), c.md.as_str(), c.mr.as_str(), c.deadline_class.as_str()),
                &sub,
            )?);
        }
    }
    Ok(rows)
}

/// Teacher, SL-only, SL+RL and RL-only buyers on the same test markets.
pub fn hypothesis_b(spec: &ExperimentSpec, sl: &PolicyNetwork) -> Result<ComparisonRun> {
    let sellers = spec.seller_strategies();
    let n = spec.train_episodes();

    let mut sl_rl = new_learner(spec, sl.clone(), 1)?;
    let log_sl_rl = learn(spec, &mut sl_rl, &sellers, n, stream::TRAIN)?;
    let mut rl = new_learner(spec, random_actor(spec, 2), 2)?;
    let log_rl = learn(spec, &mut rl, &sellers, n, stream::TRAIN)?;

    let test_seed = derive_seed(spec.seed, &[stream::TEST]);
    let configs = spec.configs(test_seed);
    let test = cycled_specs(
        &configs,
        &sellers,
        spec.test_episodes(),
        spec.teacher,
        spec.illegal_or(IllegalActionMode::Abort),
    );
    let seller_label = joined(sellers.iter());
    let mut run = ComparisonRun {
        summaries: Vec::new(),
        results: Vec::new(),
        logs: vec![("sl+rl".into(), log_sl_rl), ("rl".into(), log_rl)],
        networks: vec![
            named("sl", sl),
            named("sl+rl_actor", &sl_rl.ac.actor),
            named("rl_actor", &rl.ac.actor),
        ],
    };
    let campaigns: [(&str, Vec<EpisodeResult>); 4] = [
        ("teacher", run_campaign(&test, || TeacherPolicy::new(spec.teacher))?),
        ("sl", run_campaign(&test, || NetworkBuyer { actor: sl })?),
        ("sl+rl", run_campaign(&test, || NetworkBuyer { actor: &sl_rl.ac.actor })?),
        ("rl", run_campaign(&test, || NetworkBuyer { actor: &rl.ac.actor })?),
    ];
    for (name, results) in campaigns {
        run.summaries.extend(per_zoa_rows(name, &seller_label, &configs, &test, &results)?);
        run.results.push((name.into(), results));
    }
    Ok(run)
}

/// One transfer direction: learn against `source`, adapt to `target`, then
/// evaluate the frozen SL network and the adapted learner on `target`.
pub fn transfer(
    spec: &ExperimentSpec,
    sl: &PolicyNetwork,
    source: SellerStrategy,
    target: SellerStrategy,
    tag: u64,
) -> Result<ComparisonRun> {
    let test_seed = derive_seed(spec.seed, &[stream::TEST]);
    let configs = spec.configs(test_seed);
    let label = format!("{source}->{target}");
    let mut agent = new_learner(spec, sl.clone(), 10 + tag)?;
    let mut log = learn(spec, &mut agent, &[source], spec.train_episodes(), stream::TRAIN)?;
    log.extend(learn(spec, &mut agent, &[target], spec.adaptation_episodes(), stream::ADAPT)?);
    let test = cycled_specs(
        &configs,
        &[target],
        spec.test_episodes(),
        spec.teacher,
        spec.illegal_or(IllegalActionMode::Abort),
    );
    let mut run = ComparisonRun {
        summaries: Vec::new(),
        results: Vec::new(),
        logs: vec![(format!("{source}_to_{target}"), log)],
        networks: vec![named(&format!("sl+rl_actor_{source}_to_{target}"), &agent.ac.actor)],
    };
    let frozen = run_campaign(&test, || NetworkBuyer { actor: sl })?;
    let adapted = run_campaign(&test, || NetworkBuyer { actor: &agent.ac.actor })?;
    for (name, results) in [("sl", frozen), ("sl+rl", adapted)] {
        run.summaries.extend(per_zoa_rows(name, &label, &configs, &test, &results)?);
        run.results.push((format!("{name}_{source}_to_{target}"), results));
    }
    Ok(run)
}

/// Transfer study in both directions between the two configured sellers.
pub fn hypothesis_c(spec: &ExperimentSpec, sl: &PolicyNetwork) -> Result<ComparisonRun> {
    let sellers = spec.seller_strategies();
    let mut run = ComparisonRun {
        summaries: Vec::new(),
        results: Vec::new(),
        logs: Vec::new(),
        networks: vec![named("sl", sl)],
    };
    for (tag, (source, target)) in [(sellers[0], sellers[1]), (sellers[1], sellers[0])].into_iter().enumerate() {
        let part = transfer(spec, sl, source, target, tag as u64)?;
        run.summaries.extend(part.summaries);
        run.results.extend(part.results);
        run.logs.extend(part.logs);
        run.networks.extend(part.networks);
    }
    Ok(run)
}

fn named(name: &str, net: &PolicyNetwork) -> NamedNetwork {
    NamedNetwork {
        name: name.into(),
        dropout_rate: net.dropout_rate,
        mlp: net.mlp.clone(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the policy stored under `policy` or `actor` in a checkpoint.
pub fn load_policy(path: &Path) -> Result<PolicyNetwork> {
    let nets = decode_checkpoint(&read(path)?)?;
    let n = find(&nets, "policy").or_else(|_| find(&nets, "actor"))?;
    Ok(PolicyNetwork::from_mlp(n.mlp.clone(), n.dropout_rate)?)
}

fn load_actor_critic(path: &Path, cfg: &DdpgConfig) -> Result<ActorCritic> {
    let nets = decode_checkpoint(&read(path)?)?;
    let net = |name: &str| find(&nets, name).cloned();
    let actor = net("actor")?;
    let mut ac = ActorCritic::from_parts(
        PolicyNetwork::from_mlp(actor.mlp, 0.0)?,
        net("critic")?.mlp,
        cfg.clone(),
    )?;
    ac.actor_target = PolicyNetwork::from_mlp(net("actor_target")?.mlp, 0.0)?;
    ac.critic_target = net("critic_target")?.mlp;
    Ok(ac)
}

fn actor_critic_networks(ac: &ActorCritic) -> Vec<NamedNetwork> {
    let raw = |name: &str, mlp: &crate::neural::Mlp| NamedNetwork {
        name: name.into(),
        dropout_rate: 0.0,
        mlp: mlp.clone(),
    };
    vec![
        named("actor", &ac.actor),
        raw("critic", &ac.critic),
        named("actor_target", &ac.actor_target),
        raw("critic_target", &ac.critic_target),
    ]
}

/// Writes artifacts under the output directory and records their names.
struct Sink {
    dir: PathBuf,
    written: Vec<String>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|source| ExperimentError::Io { path, source })?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::result::Result<(), csv::Error>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|source| ExperimentError::Csv {
            path: self.dir.join(name),
            source,
        })?;
        self.bytes(name, &buf)
    }
}

fn write_history(out: &mut Vec<u8>, history: &[EpochStats]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "train_loss",
        "train_accuracy",
        "val_loss",
        "val_accuracy",
        "val_offer_rmse",
    ])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.train_accuracy.to_string(),
            h.val_loss.to_string(),
            h.val_accuracy.to_string(),
            h.val_offer_rmse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: RunMode,
    pub seed: u64,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub adaptation_episodes: usize,
    pub spec: ExperimentSpec,
    pub artifacts: Vec<String>,
}

/// What a run produced besides its files.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub artifacts: Vec<PathBuf>,
    pub summaries: Vec<(SummaryKey, CampaignSummary)>,
    pub history: Vec<EpochStats>,
    pub correlation: Option<Correlation>,
    pub dataset_rows: usize,
}

fn sl_network(spec: &ExperimentSpec, sink: &mut Sink, report: &mut RunReport) -> Result<PolicyNetwork> {
    if let Some(p) = &spec.sl_checkpoint {
        return load_policy(p);
    }
    let rows = match &spec.dataset {
        Some(p) => parse_dataset(&read(p)?).map_err(|e| ExperimentError::Input {
            path: p.clone(),
            message: e.0,
        })?,
        None => default_dataset(spec),
    };
    report.dataset_rows = rows.len();
    let (net, history) = train_policy(&rows, &spec.train, spec.seed)?;
    sink.csv("sl_history.csv", |b| write_history(b, &history))?;
    report.history = history;
    Ok(net)
}

fn write_comparison(sink: &mut Sink, run: &ComparisonRun) -> Result<()> {
    sink.csv("summary.csv", |b| write_summary(b, &run.summaries))?;
    for (name, results) in &run.results {
        sink.csv(&format!("results_{}.csv", name.replace('+', "_")), |b| write_results(b, results))?;
    }
    for (name, log) in &run.logs {
        sink.csv(&format!("training_log_{}.csv", name.replace('+', "_")), |b| {
            write_training_log(b, log)
        })?;
    }
    sink.bytes("networks.ckpt", &encode_checkpoint(&run.networks))
}

/// Validates `spec`, runs its mode and writes artifacts plus `manifest.json`.
pub fn run(spec: &ExperimentSpec) -> Result<RunReport> {
    let problems = validate_spec(spec);
    if !problems.is_empty() {
        return Err(ExperimentError::InvalidSpec(problems));
    }
    let mut sink = Sink::new(&spec.out)?;
    let mut report = RunReport::default();
    match spec.mode {
        RunMode::GenData => {
            let rows = default_dataset(spec);
            report.dataset_rows = rows.len();
            sink.csv("dataset.csv", |b| write_dataset(b, &rows))?;
            if let Some(c) = attribute_correlation(&rows) {
                sink.csv("correlation.csv", |b| c.write_csv(b, &ATTRIBUTE_NAMES))?;
                report.correlation = Some(c);
            }
        }
        RunMode::TrainSl => {
            let net = sl_network(spec, &mut sink, &mut report)?;
            sink.bytes("sl.ckpt", &encode_checkpoint(&[named("policy", &net)]))?;
        }
        RunMode::TrainRl => {
            let actor = match &spec.sl_checkpoint {
                Some(p) => load_policy(p)?,
                None => random_actor(spec, 0),
            };
            let mut agent = new_learner(spec, actor, 0)?;
            let log = learn(spec, &mut agent, &spec.seller_strategies(), spec.train_episodes(), stream::TRAIN)?;
            sink.csv("training_log.csv", |b| write_training_log(b, &log))?;
            sink.bytes("rl.ckpt", &encode_checkpoint(&actor_critic_networks(&agent.ac)))?;
        }
        RunMode::Evaluate => {
            let seed = derive_seed(spec.seed, &[stream::TEST]);
            let configs = spec.configs(seed);
            let sellers = spec.seller_strategies();
            let specs = cycled_specs(
                &configs,
                &sellers,
                spec.train_episodes(),
                spec.teacher,
                spec.illegal_or(IllegalActionMode::Abort),
            );
            let results = match spec.strategy {
                EvalStrategy::Teacher => run_campaign(&specs, || TeacherPolicy::new(spec.teacher))?,
                EvalStrategy::Sl => {
                    let net = load_policy(spec.sl_checkpoint.as_deref().expect("validated"))?;
                    run_campaign(&specs, || NetworkBuyer { actor: &net })?
                }
                EvalStrategy::Rl => {
                    let ac = load_actor_critic(spec.rl_checkpoint.as_deref().expect("validated"), &spec.ddpg)?;
                    run_campaign(&specs, || NetworkBuyer { actor: &ac.actor })?
                }
            };
            report.summaries = per_zoa_rows(
                spec.strategy.as_str(),
                &joined(sellers.iter()),
                &configs,
                &specs,
                &results,
            )?;
            sink.csv("results.csv", |b| write_results(b, &results))?;
            sink.csv("summary.csv", |b| write_summary(b, &report.summaries))?;
        }
        RunMode::HypothesisA => {
            report.summaries = hypothesis_a(spec, spec.train_episodes())?;
            sink.csv("summary.csv", |b| write_summary(b, &report.summaries))?;
            sink.csv("plot.csv", |b| write_plot_data(b, &report.summaries))?;
        }
        RunMode::HypothesisB => {
            let sl = sl_network(spec, &mut sink, &mut report)?;
            let run = hypothesis_b(spec, &sl)?;
            write_comparison(&mut sink, &run)?;
            report.summaries = run.summaries;
        }
        RunMode::HypothesisC => {
            let sl = sl_network(spec, &mut sink, &mut report)?;
            let run = hypothesis_c(spec, &sl)?;
            write_comparison(&mut sink, &run)?;
            report.summaries = run.summaries;
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        mode: spec.mode,
        seed: spec.seed,
        train_episodes: spec.train_episodes(),
        test_episodes: spec.test_episodes(),
        adaptation_episodes: spec.adaptation_episodes(),
        // The output directory is left out so reruns elsewhere compare equal.
        spec: ExperimentSpec {
            out: PathBuf::new(),
            ..spec.clone()
        },
        artifacts: sink.written.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    sink.bytes("manifest.json", &json)?;
    report.artifacts = sink.written.iter().map(|n| spec.out.join(n)).collect();
    Ok(report)
}
