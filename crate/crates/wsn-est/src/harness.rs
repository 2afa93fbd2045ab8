//! Monte Carlo experiment runner: the compared estimation schemes, the
//! per-trial pipeline, aggregation, and parameter sweeps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, Clustering, ClusteringConfig};
use crate::consensus::{self, Topology};
use crate::error::{Error, Result};
use crate::estimation::{self, EstimatorMode, MapSettings, MarginalModel};
use crate::io;
use crate::scenario::{self, Scenario, ScenarioConfig};
use crate::selection::{self, SelectionBudget};

const STAGE_PLACEMENT: u64 = 0;
const STAGE_OBSERVATIONS: u64 = 1;
const STAGE_TOPOLOGY: u64 = 2;

/// How cluster estimates are fused into one network estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Consensus,
    Map,
}

/// Which sensors feed the cluster estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    All,
    /// Budgeted greedy pick of up to this many sensors inside each cluster.
    ClusterMrmr(usize),
    /// One greedy pick of this many sensors over the whole network.
    GlobalMrmr(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheme {
    pub estimator: EstimatorMode,
    pub combiner: Combiner,
    pub selection: SelectionMode,
}

impl Scheme {
    pub fn new(estimator: EstimatorMode, combiner: Combiner) -> Self {
        Scheme {
            estimator,
            combiner,
            selection: SelectionMode::All,
        }
    }

    pub fn with_selection(mut self, selection: SelectionMode) -> Self {
        self.selection = selection;
        self
    }

    /// The four combinations without sensor selection.
    pub fn all_basic() -> Vec<Scheme> {
        let mut out = Vec::new();
        for combiner in [Combiner::Consensus, Combiner::Map] {
            for estimator in [EstimatorMode::Copula, EstimatorMode::Independence] {
                out.push(Scheme::new(estimator, combiner));
            }
        }
        out
    }

    /// Parses a comma-separated scheme list.
    pub fn parse_list(text: &str) -> Result<Vec<Scheme>> {
        text.split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<_>>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err(Error::InvalidArgument("empty scheme list".into()))
                } else {
                    Ok(v)
                }
            })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match (self.combiner, self.estimator) {
            (Combiner::Consensus, EstimatorMode::Copula) => "consensus-copula",
            (Combiner::Consensus, EstimatorMode::Independence) => "consensus-indep",
            (Combiner::Map, EstimatorMode::Copula) => "map-copula",
            (Combiner::Map, EstimatorMode::Independence) => "map-indep",
        };
        match self.selection {
            SelectionMode::All => write!(f, "{base}"),
            SelectionMode::ClusterMrmr(m_k) => write!(f, "{base}+mk{m_k}"),
            SelectionMode::GlobalMrmr(m) => write!(f, "{base}+g{m}"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, suffix) = match s.split_once('+') {
            Some((b, rest)) => (b, Some(rest)),
            None => (s, None),
        };
        let (combiner, estimator) = match base {
            "consensus-copula" => (Combiner::Consensus, EstimatorMode::Copula),
            "consensus-indep" => (Combiner::Consensus, EstimatorMode::Independence),
            "map-copula" => (Combiner::Map, EstimatorMode::Copula),
            "map-indep" => (Combiner::Map, EstimatorMode::Independence),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scheme '{other}' (expected consensus-copula, consensus-indep, map-copula or map-indep)"
                )))
            }
        };
        let selection = match suffix {
            None => SelectionMode::All,
            Some(rest) => {
                if let Some(n) = rest.strip_prefix("mk") {
                    SelectionMode::ClusterMrmr(parse_count(n, s)?)
                } else if let Some(n) = rest.strip_prefix('g') {
                    SelectionMode::GlobalMrmr(parse_count(n, s)?)
                } else {
                    return Err(Error::InvalidArgument(format!(
                        "unknown selection suffix in '{s}' (expected +mk<n> or +g<n>)"
                    )));
                }
            }
        };
        Ok(Scheme {
            estimator,
            combiner,
            selection,
        })
    }
}

fn parse_count(text: &str, whole: &str) -> Result<usize> {
    let n: usize = text
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad selection count in '{whole}'")))?;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "selection count must be positive in '{whole}'"
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Complete,
    Ring,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusSettings {
    pub beta_fraction: f64,
    pub tol: f64,
    pub topology: TopologyKind,
}

impl Default for ConsensusSettings {
    fn default() -> Self {
        ConsensusSettings {
            beta_fraction: consensus::DEFAULT_BETA_FRACTION,
            tol: consensus::DEFAULT_TOL,
            topology: TopologyKind::Complete,
        }
    }
}

impl ConsensusSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_fraction > 0.0 && self.beta_fraction < 1.0) {
            return Err(Error::Config(format!(
                "consensus beta_fraction = {} outside (0, 1)",
                self.beta_fraction
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "consensus tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Full experiment description: the scenario fields live at the top level,
/// the pipeline stages in their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub n_obs: usize,
    pub clustering: ClusteringConfig,
    pub consensus: ConsensusSettings,
    pub selection: SelectionBudget,
    pub estimation: MapSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            n_obs: 70,
            clustering: ClusteringConfig::default(),
            consensus: ConsensusSettings::default(),
            selection: SelectionBudget::default(),
            estimation: MapSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.clustering.validate()?;
        self.consensus.validate()?;
        self.selection.validate()?;
        if self.n_obs == 0 {
            return Err(Error::Config("n_obs must be positive".into()));
        }
        if self.estimation.grid_points < 2 {
            return Err(Error::Config("estimation grid_points must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub theta_hat: Option<f64>,
    pub squared_error: Option<f64>,
    /// Per-cluster MAP estimates handed to the combiner.
    pub cluster_estimates: Option<Vec<f64>>,
    /// Active sensors per cluster after selection, in pick order.
    pub selected: Option<Vec<Vec<usize>>>,
    pub consensus_iterations: Option<usize>,
    pub consensus_converged: Option<bool>,
    pub error: Option<String>,
}

impl SchemeOutcome {
    fn failed(scheme: Scheme, error: &Error) -> Self {
        SchemeOutcome {
            scheme,
            theta_hat: None,
            squared_error: None,
            cluster_estimates: None,
            selected: None,
            consensus_iterations: None,
            consensus_converged: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub theta_true: f64,
    pub k_hat: usize,
    pub accuracy: f64,
    pub outcomes: Vec<SchemeOutcome>,
}

/// splitmix64-style scramble; distinct streams stay decorrelated even for
/// adjacent stream ids.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stage_rng(trial_seed: u64, stage: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(trial_seed, stage))
}

/// One full pipeline pass: scenario, observations, clustering, then every
/// scheme. A failing scheme records its error without aborting the others.
pub fn run_trial(cfg: &ExperimentConfig, schemes: &[Scheme], seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let mut rng = stage_rng(seed, STAGE_PLACEMENT);
    let scn = scenario::generate_scenario(&cfg.scenario, &mut rng)?;
    let mut rng = stage_rng(seed, STAGE_OBSERVATIONS);
    let (theta_true, obs) = scenario::generate_observations(&scn, cfg.n_obs, &mut rng)?;
    let clus = clustering::cluster(&obs, &cfg.clustering)?;
    let accuracy = clustering::clustering_accuracy(&clus, &scn.labels());
    let outcomes = schemes
        .iter()
        .map(|&scheme| {
            run_scheme(cfg, &scn, &obs, theta_true, &clus, scheme, seed)
                .unwrap_or_else(|e| SchemeOutcome::failed(scheme, &e))
        })
        .collect();
    Ok(TrialResult {
        seed,
        theta_true,
        k_hat: clus.k_hat(),
        accuracy,
        outcomes,
    })
}

fn run_scheme(
    cfg: &ExperimentConfig,
    scn: &Scenario,
    obs: &[Vec<f64>],
    theta_true: f64,
    clus: &Clustering,
    scheme: Scheme,
    seed: u64,
) -> Result<SchemeOutcome> {
    let (active, selected) = select_active(cfg, scn, clus, scheme.selection)?;
    let mut estimators = Vec::new();
    let mut columns = Vec::new();
    for sensors in &active {
        let mut sorted = sensors.clone();
        sorted.sort_unstable();
        let cobs = estimation::extract_columns(obs, &sorted)?;
        let marginals = sorted
            .iter()
            .map(|&l| MarginalModel::new(scn.sensors[l].sigma2))
            .collect::<Result<Vec<_>>>()?;
        estimators.push(estimation::fit_cluster_estimator(
            sorted,
            &cobs,
            marginals,
            scn.prior,
            scheme.estimator,
        )?);
        columns.push(cobs);
    }
    let mut outcome = SchemeOutcome {
        scheme,
        theta_hat: None,
        squared_error: None,
        cluster_estimates: None,
        selected: selected.map(|_| active.clone()),
        consensus_iterations: None,
        consensus_converged: None,
        error: None,
    };
    match scheme.combiner {
        Combiner::Consensus => {
            let maps = estimators
                .iter()
                .zip(&columns)
                .map(|(e, cobs)| Ok(e.map_estimate_with(cobs, &cfg.estimation)?.theta))
                .collect::<Result<Vec<f64>>>()?;
            let k = maps.len();
            let frac = cfg.consensus.beta_fraction;
            let topo = match cfg.consensus.topology {
                TopologyKind::Complete => Topology::complete(k, frac)?,
                TopologyKind::Ring => Topology::ring(k, frac)?,
                TopologyKind::Random => {
                    let mut rng = stage_rng(seed, STAGE_TOPOLOGY);
                    Topology::random_balanced(k, k / 2, frac, &mut rng)?
                }
            };
            let run = consensus::run_consensus(
                &maps,
                &topo,
                cfg.consensus.tol,
                consensus::DEFAULT_MAX_ITER,
            )?;
            outcome.theta_hat = Some(run.theta_hat);
            outcome.squared_error = Some((run.theta_hat - theta_true).powi(2));
            outcome.cluster_estimates = Some(maps);
            outcome.consensus_iterations = Some(run.iterations);
            outcome.consensus_converged = Some(run.converged);
        }
        Combiner::Map => {
            let est = estimation::cluster_map_global(&estimators, obs, &cfg.estimation)?;
            outcome.theta_hat = Some(est.theta);
            outcome.squared_error = Some((est.theta - theta_true).powi(2));
        }
    }
    Ok(outcome)
}

/// Resolves the selection mode into the per-cluster active sensor sets.
/// Returns `None` in the second slot when no selection ran. Relevance and
/// redundancy both come from the scenario model; plug-in MI estimates at
/// deployed sample sizes are noisy enough to reorder picks.
fn select_active(
    cfg: &ExperimentConfig,
    scn: &Scenario,
    clus: &Clustering,
    mode: SelectionMode,
) -> Result<(Vec<Vec<usize>>, Option<()>)> {
    match mode {
        SelectionMode::All => Ok((clus.clusters.clone(), None)),
        SelectionMode::ClusterMrmr(m_k) => {
            let relevance = scn.relevances()?;
            let redundancy = scn.model_redundancy_mi()?;
            let budget = SelectionBudget {
                alpha_k: (m_k as f64 - 1.0) * cfg.selection.r * cfg.selection.e_t,
                r: cfg.selection.r,
                e_t: cfg.selection.e_t,
            };
            let picks = selection::cluster_mrmr(clus, &relevance, &redundancy, &budget)?;
            Ok((picks.into_iter().map(|p| p.selected).collect(), Some(())))
        }
        SelectionMode::GlobalMrmr(m) => {
            let relevance = scn.relevances()?;
            let redundancy = scn.model_redundancy_mi()?;
            let pool: Vec<usize> = (0..scn.sensor_count()).collect();
            let picked = selection::mrmr_incremental(&relevance, &redundancy, m, &pool)?.selected;
            let active: Vec<Vec<usize>> = clus
                .clusters
                .iter()
                .map(|cluster| {
                    picked
                        .iter()
                        .copied()
                        .filter(|s| cluster.contains(s))
                        .collect::<Vec<_>>()
                })
                .filter(|set: &Vec<usize>| !set.is_empty())
                .collect();
            if active.is_empty() {
                return Err(Error::Estimation(
                    "global selection left every cluster empty".into(),
                ));
            }
            Ok((active, Some(())))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeAggregate {
    pub scheme: Scheme,
    pub mean_mse: f64,
    pub mse_stderr: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub trials: usize,
    pub mean_accuracy: f64,
    pub per_scheme: Vec<SchemeAggregate>,
    pub results: Vec<TrialResult>,
}

/// Neumaier compensated accumulator; summation order never leaks into the
/// rounded result for the magnitudes seen here.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn run_monte_carlo(
    cfg: &ExperimentConfig,
    schemes: &[Scheme],
    trials: usize,
    base_seed: u64,
) -> Result<MonteCarloRun> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    if schemes.is_empty() {
        return Err(Error::Config("need at least one scheme".into()));
    }
    let mut results = Vec::with_capacity(trials);
    for t in 0..trials {
        results.push(run_trial(cfg, schemes, derive_seed(base_seed, t as u64))?);
    }
    let mut acc_sum = CompensatedSum::default();
    for r in &results {
        acc_sum.add(r.accuracy);
    }
    let per_scheme = schemes
        .iter()
        .enumerate()
        .map(|(i, &scheme)| {
            let errors: Vec<f64> = results
                .iter()
                .filter_map(|r| r.outcomes[i].squared_error)
                .collect();
            let successes = errors.len();
            let failures = trials - successes;
            let (mean_mse, mse_stderr) = if successes == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mut s = CompensatedSum::default();
                for &e in &errors {
                    s.add(e);
                }
                let mean = s.value() / successes as f64;
                let stderr = if successes > 1 {
                    let mut ss = CompensatedSum::default();
                    for &e in &errors {
                        ss.add((e - mean) * (e - mean));
                    }
                    (ss.value() / (successes as f64 - 1.0)).sqrt() / (successes as f64).sqrt()
                } else {
                    f64::NAN
                };
                (mean, stderr)
            };
            SchemeAggregate {
                scheme,
                mean_mse,
                mse_stderr,
                successes,
                failures,
            }
        })
        .collect();
    Ok(MonteCarloRun {
        trials,
        mean_accuracy: acc_sum.value() / trials as f64,
        per_scheme,
        results,
    })
}

/// Aligned per-cluster estimate lists for the standard-deviation bound check:
/// keeps the trials sharing the most common cluster count, needs at least 30.
pub fn consensus_std_bound_inputs(
    results: &[TrialResult],
    scheme_index: usize,
) -> Option<Vec<Vec<f64>>> {
    let vectors: Vec<&Vec<f64>> = results
        .iter()
        .filter_map(|r| r.outcomes.get(scheme_index)?.cluster_estimates.as_ref())
        .collect();
    let max_k = vectors.iter().map(|v| v.len()).max()?;
    let mut counts = vec![0usize; max_k + 1];
    for v in &vectors {
        counts[v.len()] += 1;
    }
    let modal_k = counts
        .iter()
        .enumerate()
        .max_by_key(|&(_, &c)| c)
        .map(|(k, _)| k)?;
    let kept: Vec<&&Vec<f64>> = vectors.iter().filter(|v| v.len() == modal_k).collect();
    if kept.len() < 30 || modal_k == 0 {
        return None;
    }
    Some(
        (0..modal_k)
            .map(|k| kept.iter().map(|v| v[k]).collect())
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    NObs,
    DTh,
    MK,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::NObs => "n_obs",
            SweepAxis::DTh => "d_th",
            SweepAxis::MK => "m_k",
        };
        write!(f, "{name}")
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_db" => Ok(SweepAxis::SnrDb),
            "n_obs" => Ok(SweepAxis::NObs),
            "d_th" => Ok(SweepAxis::DTh),
            "m_k" => Ok(SweepAxis::MK),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis '{other}' (expected snr_db, n_obs, d_th or m_k)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub trials: usize,
    pub base: ExperimentConfig,
    pub schemes: Vec<Scheme>,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub scheme: String,
    pub mean_mse: f64,
    pub mse_stderr: f64,
    pub mean_accuracy: f64,
    pub trials: usize,
}

fn integer_value(v: f64, what: &str) -> Result<usize> {
    let n = v.round();
    if (v - n).abs() > 1e-9 || n < 1.0 || n > usize::MAX as f64 {
        return Err(Error::Config(format!("{what} must be a positive integer, got {v}")));
    }
    Ok(n as usize)
}

/// Runs the Monte Carlo estimate at every axis value. Each value reuses the
/// same per-trial seeds, so curves differ only through the swept parameter.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one axis value".into()));
    }
    if spec.schemes.is_empty() {
        return Err(Error::Config("sweep needs at least one scheme".into()));
    }
    let mut rows = Vec::new();
    for &value in &spec.values {
        let mut cfg = spec.base.clone();
        let mut schemes = spec.schemes.clone();
        match spec.axis {
            SweepAxis::SnrDb => cfg.scenario.snr_db = value,
            SweepAxis::NObs => cfg.n_obs = integer_value(value, "n_obs")?,
            SweepAxis::DTh => cfg.clustering.d_th = value,
            SweepAxis::MK => {
                let m_k = integer_value(value, "m_k")?;
                let clusters = cfg.scenario.cluster_sizes.len();
                for s in &mut schemes {
                    s.selection = match s.selection {
                        SelectionMode::All => SelectionMode::All,
                        SelectionMode::ClusterMrmr(_) => SelectionMode::ClusterMrmr(m_k),
                        SelectionMode::GlobalMrmr(_) => SelectionMode::GlobalMrmr(m_k * clusters),
                    };
                }
            }
        }
        let run = run_monte_carlo(&cfg, &schemes, spec.trials, spec.base_seed)?;
        for agg in &run.per_scheme {
            rows.push(SweepRow {
                axis: spec.axis,
                value,
                scheme: agg.scheme.to_string(),
                mean_mse: agg.mean_mse,
                mse_stderr: agg.mse_stderr,
                mean_accuracy: run.mean_accuracy,
                trials: run.trials,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "axis",
        "value",
        "scheme",
        "mean_mse",
        "mse_stderr",
        "mean_accuracy",
        "trials",
    ])?;
    for r in rows {
        w.write_record([
            r.axis.to_string(),
            r.value.to_string(),
            r.scheme.clone(),
            io::fmt_g9(r.mean_mse),
            io::fmt_g9(r.mse_stderr),
            io::fmt_g9(r.mean_accuracy),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format per-trial dump: one row per (trial, scheme).
pub fn write_trials_csv(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trial",
        "seed",
        "k_hat",
        "accuracy",
        "scheme",
        "theta_hat",
        "squared_error",
        "consensus_iterations",
        "error",
    ])?;
    let opt = |x: Option<f64>| x.map(io::fmt_g9).unwrap_or_default();
    for (t, r) in results.iter().enumerate() {
        for o in &r.outcomes {
            w.write_record([
                t.to_string(),
                r.seed.to_string(),
                r.k_hat.to_string(),
                io::fmt_g9(r.accuracy),
                o.scheme.to_string(),
                opt(o.theta_hat),
                opt(o.squared_error),
                o.consensus_iterations
                    .map(|i| i.to_string())
                    .unwrap_or_default(),
                o.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
