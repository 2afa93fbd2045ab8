use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsn_est::clustering::{self, Clustering, ClusteringConfig};
use wsn_est::copula::{self, CopulaFamily};
use wsn_est::dependence::{self, DependenceMeasure, MiEstimatorKind};
use wsn_est::error::{Error, Result};
use wsn_est::harness::{self, ExperimentConfig, Scheme, SweepAxis, SweepSpec};
use wsn_est::io;
use wsn_est::scenario::Scenario;
use wsn_est::selection::{self, SelectionBudget};

#[derive(Parser)]
#[command(
    name = "wsn-est",
    version,
    about = "Cluster-based collaborative estimation for dependent sensor networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo trials and write one CSV row per trial and scheme
    Simulate {
        /// Experiment config JSON; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated scheme names, e.g. consensus-copula,map-indep+mk2
        #[arg(
            long,
            default_value = "consensus-copula,consensus-indep,map-copula,map-indep"
        )]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter and write aggregated curves
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// snr_db, n_obs, d_th or m_k
        #[arg(long)]
        axis: String,
        /// Comma-separated numeric axis values
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(
            long,
            default_value = "consensus-copula,consensus-indep,map-copula,map-indep"
        )]
        schemes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster the sensors of an observation CSV by rank dependence
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "d-th", default_value_t = 0.83)]
        d_th: f64,
        /// tau or rho
        #[arg(long, default_value = "tau")]
        measure: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick sensors cluster by cluster under an energy budget
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Cluster assignment CSV as written by the cluster subcommand
        #[arg(long)]
        clusters: PathBuf,
        /// Per-cluster energy bound alpha_k
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// Scenario JSON for model-based relevance and redundancy; otherwise
        /// both are estimated from the observation CSV
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit copula families to an observation CSV and rank them
    FitCopula {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated family names
        #[arg(
            long,
            default_value = "independence,clayton,gumbel,frank,gaussian"
        )]
        families: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            trials,
            seed,
            schemes,
            out,
        } => {
            let cfg = load_config(config)?;
            let schemes = Scheme::parse_list(&schemes)?;
            let run = harness::run_monte_carlo(&cfg, &schemes, trials, seed)?;
            harness::write_trials_csv(&out, &run.results)?;
            println!(
                "{} trials, mean clustering accuracy {:.4}",
                run.trials, run.mean_accuracy
            );
            for agg in &run.per_scheme {
                println!(
                    "{}: mean mse {} (se {}), {}/{} trials ok",
                    agg.scheme,
                    io::fmt_g9(agg.mean_mse),
                    io::fmt_g9(agg.mse_stderr),
                    agg.successes,
                    run.trials
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            trials,
            seed,
            schemes,
            out,
        } => {
            let spec = SweepSpec {
                axis: axis.parse::<SweepAxis>()?,
                values: parse_values(&values)?,
                trials,
                base: load_config(config)?,
                schemes: Scheme::parse_list(&schemes)?,
                base_seed: seed,
            };
            let rows = harness::sweep(&spec)?;
            harness::write_sweep_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Cluster {
            data,
            d_th,
            measure,
            out,
        } => {
            let obs = io::read_observations(&data)?;
            let cfg = ClusteringConfig {
                d_th,
                measure: measure.parse::<DependenceMeasure>()?,
                ..ClusteringConfig::default()
            };
            let clus = clustering::cluster(&obs, &cfg)?;
            write_clusters_csv(&out, &clus)?;
            println!("{} clusters over {} sensors", clus.k_hat(), clus.sensor_count());
            println!("wrote {}", out.display());
        }
        Command::Select {
            data,
            clusters,
            alpha,
            scenario,
            out,
        } => {
            let obs = io::read_observations(&data)?;
            let clus = read_clusters_csv(&clusters)?;
            let l = clus.sensor_count();
            if obs.first().map_or(0, |r| r.len()) != l {
                return Err(Error::Dimension(format!(
                    "cluster file covers {l} sensors, data has {}",
                    obs.first().map_or(0, |r| r.len())
                )));
            }
            let (relevance, redundancy) = match scenario {
                Some(path) => {
                    let scn = Scenario::load(&path)?;
                    (scn.relevances()?, scn.model_redundancy_mi()?)
                }
                // without a scenario, estimate redundancy from the data and
                // score each sensor by how much it shares with the rest
                None => {
                    let red =
                        dependence::mi_matrix(&obs, MiEstimatorKind::GaussianClosedForm)?;
                    let rel = red
                        .iter()
                        .map(|row| row.iter().sum::<f64>() / (l as f64 - 1.0))
                        .collect();
                    (rel, red)
                }
            };
            let budget = SelectionBudget {
                alpha_k: alpha,
                ..SelectionBudget::default()
            };
            let picks = selection::cluster_mrmr(&clus, &relevance, &redundancy, &budget)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["cluster_id", "rank", "sensor_index", "step_objective"])?;
            for (k, res) in picks.iter().enumerate() {
                for (rank, (&s, &obj)) in
                    res.selected.iter().zip(&res.objective_trace).enumerate()
                {
                    w.write_record([
                        k.to_string(),
                        rank.to_string(),
                        s.to_string(),
                        io::fmt_g9(obj),
                    ])?;
                }
            }
            w.flush()?;
            println!(
                "selected {} sensors across {} clusters",
                picks.iter().map(|p| p.selected.len()).sum::<usize>(),
                picks.len()
            );
            println!("wrote {}", out.display());
        }
        Command::FitCopula {
            data,
            families,
            out,
        } => {
            let obs = io::read_observations(&data)?;
            let u = copula::epit_transform(&obs)?;
            let library = families
                .split(',')
                .map(|f| f.trim().parse::<CopulaFamily>())
                .collect::<Result<Vec<_>>>()?;
            let sel = copula::select_copula_aic(&library, &u)?;
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["family", "phi", "log_lik", "aic", "degenerate", "selected", "note"])?;
            for entry in &sel.table {
                let selected = entry.family == sel.model.family()
                    && entry.fit.as_ref().map(|f| f.phi) == Some(sel.model.phi());
                w.write_record([
                    entry.family.to_string(),
                    entry.fit.as_ref().map(|f| io::fmt_g9(f.phi)).unwrap_or_default(),
                    entry
                        .fit
                        .as_ref()
                        .map(|f| io::fmt_g9(f.log_lik))
                        .unwrap_or_default(),
                    entry.aic.map(io::fmt_g9).unwrap_or_default(),
                    entry
                        .fit
                        .as_ref()
                        .map(|f| f.degenerate.to_string())
                        .unwrap_or_default(),
                    selected.to_string(),
                    entry.note.clone().unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            println!(
                "best family: {} (phi {})",
                sel.model.family(),
                io::fmt_g9(sel.model.phi())
            );
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn load_config(path: Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(&p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad axis value '{v}'")))
        })
        .collect()
}

fn write_clusters_csv(path: &PathBuf, clus: &Clustering) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sensor", "cluster", "is_medoid"])?;
    let mut rows: Vec<(usize, usize, bool)> = Vec::new();
    for (k, members) in clus.clusters.iter().enumerate() {
        for &s in members {
            rows.push((s, k, clus.medoids[k] == s));
        }
    }
    rows.sort_unstable();
    for (s, k, medoid) in rows {
        w.write_record([s.to_string(), k.to_string(), medoid.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_clusters_csv(path: &PathBuf) -> Result<Clustering> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::DataFormat(format!("cluster file missing column '{name}'")))
    };
    let sensor_col = col("sensor")?;
    let cluster_col = col("cluster")?;
    let medoid_col = headers.iter().position(|h| h == "is_medoid");
    let mut assignments: Vec<(usize, usize, bool)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::DataFormat("short row in cluster file".into()))
        };
        let sensor: usize = field(sensor_col)?
            .trim()
            .parse()
            .map_err(|_| Error::DataFormat("bad sensor index in cluster file".into()))?;
        let cluster: usize = field(cluster_col)?
            .trim()
            .parse()
            .map_err(|_| Error::DataFormat("bad cluster id in cluster file".into()))?;
        let medoid = match medoid_col {
            Some(i) => field(i)?.trim() == "true",
            None => false,
        };
        assignments.push((sensor, cluster, medoid));
    }
    if assignments.is_empty() {
        return Err(Error::DataFormat("empty cluster file".into()));
    }
    let k = assignments.iter().map(|&(_, c, _)| c).max().unwrap() + 1;
    let mut clusters = vec![Vec::new(); k];
    let mut medoids = vec![None; k];
    let mut seen = std::collections::BTreeSet::new();
    for &(s, c, m) in &assignments {
        if !seen.insert(s) {
            return Err(Error::DataFormat(format!(
                "sensor {s} assigned twice in cluster file"
            )));
        }
        clusters[c].push(s);
        if m {
            medoids[c] = Some(s);
        }
    }
    if clusters.iter().any(|c| c.is_empty()) {
        return Err(Error::DataFormat("cluster ids are not contiguous".into()));
    }
    let medoids = clusters
        .iter()
        .zip(medoids)
        .map(|(members, m)| m.unwrap_or(members[0]))
        .collect();
    Ok(Clustering { clusters, medoids })
}
