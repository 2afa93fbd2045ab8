//! Synthetic field generation: sensors scattered in a square around a target,
//! Gaussian noise whose variance grows with distance, and cluster-wise copula
//! dependence between the noise coordinates.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::copula::{self, CopulaFamily, CopulaModel};
use crate::dependence;
use crate::error::{Error, Result};
use crate::estimation::GaussianPrior;

/// Sensors closer to the target than this are re-drawn so sigma2 stays finite.
pub const MIN_TARGET_DISTANCE: f64 = 1e-3;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub phi: f64,
}

impl CopulaSpec {
    pub fn build(&self, dim: usize) -> Result<CopulaModel> {
        match self.family {
            CopulaFamily::Independence => CopulaModel::independence(dim),
            _ => CopulaModel::new(self.family, self.phi, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementMode {
    UniformRandom,
    FixedList(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub sensor_count: usize,
    pub area: f64,
    pub target: (f64, f64),
    pub prior: GaussianPrior,
    pub snr_db: f64,
    pub cluster_sizes: Vec<usize>,
    /// One spec per cluster, or a single spec applied to every cluster.
    pub copulas: Vec<CopulaSpec>,
    pub placement: PlacementMode,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sensor_count: 13,
            area: 1.5,
            target: (0.75, 0.75),
            prior: GaussianPrior {
                theta_p: 2.0,
                sigma_p2: 1.0,
            },
            snr_db: 10.0,
            cluster_sizes: vec![5, 4, 4],
            copulas: vec![CopulaSpec {
                family: CopulaFamily::Clayton,
                phi: 5.0,
            }],
            placement: PlacementMode::UniformRandom,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensor_count == 0 {
            return Err(Error::Config("sensor_count must be positive".into()));
        }
        if !(self.area > 0.0 && self.area.is_finite()) {
            return Err(Error::Config(format!("area must be positive, got {}", self.area)));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config("snr_db must be finite".into()));
        }
        if !(self.target.0.is_finite() && self.target.1.is_finite()) {
            return Err(Error::Config("target position must be finite".into()));
        }
        GaussianPrior::new(self.prior.theta_p, self.prior.sigma_p2)?;
        let total: usize = self.cluster_sizes.iter().sum();
        if total != self.sensor_count || self.cluster_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "cluster sizes {:?} do not partition {} sensors",
                self.cluster_sizes, self.sensor_count
            )));
        }
        let k = self.cluster_sizes.len();
        if self.copulas.len() != k && self.copulas.len() != 1 {
            return Err(Error::Config(format!(
                "{} copula specs for {k} clusters (give one per cluster or a single shared spec)",
                self.copulas.len()
            )));
        }
        for (spec, &size) in self.cluster_copulas().zip(&self.cluster_sizes) {
            if size >= 2 {
                spec.build(size)?;
            }
        }
        if let PlacementMode::FixedList(points) = &self.placement {
            if points.len() != self.sensor_count {
                return Err(Error::Config(format!(
                    "fixed placement lists {} points for {} sensors",
                    points.len(),
                    self.sensor_count
                )));
            }
        }
        Ok(())
    }

    /// Per-cluster copula specs, broadcasting a single shared spec.
    pub fn cluster_copulas(&self) -> impl Iterator<Item = &CopulaSpec> {
        let broadcast = self.copulas.len() == 1;
        self.cluster_sizes
            .iter()
            .enumerate()
            .map(move |(k, _)| if broadcast { &self.copulas[0] } else { &self.copulas[k] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub x: f64,
    pub y: f64,
    pub sigma2: f64,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sensors: Vec<Sensor>,
    pub prior: GaussianPrior,
    pub snr_db: f64,
    pub sigma0_sq: f64,
    pub copulas: Vec<CopulaSpec>,
}

/// Noise scale sigma0^2 implied by SNR = E[theta^2] / sigma0^2 under the
/// Gaussian prior, where E[theta^2] = theta_p^2 + sigma_p2.
pub fn snr_to_sigma0(snr_db: f64, prior: &GaussianPrior) -> f64 {
    let second_moment = prior.theta_p * prior.theta_p + prior.sigma_p2;
    second_moment / 10f64.powf(snr_db / 10.0)
}

pub fn generate_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let sigma0_sq = snr_to_sigma0(cfg.snr_db, &cfg.prior);
    let (tx, ty) = cfg.target;
    let positions: Vec<(f64, f64)> = match &cfg.placement {
        PlacementMode::FixedList(points) => {
            for (i, p) in points.iter().enumerate() {
                let dist = (p[0] - tx).hypot(p[1] - ty);
                if dist < MIN_TARGET_DISTANCE {
                    return Err(Error::Scenario(format!(
                        "fixed sensor {i} is {dist:.2e} from the target, minimum is {MIN_TARGET_DISTANCE:.0e}"
                    )));
                }
            }
            points.iter().map(|p| (p[0], p[1])).collect()
        }
        PlacementMode::UniformRandom => {
            let mut out = Vec::with_capacity(cfg.sensor_count);
            for i in 0..cfg.sensor_count {
                let mut placed = None;
                for _ in 0..MAX_REDRAWS {
                    let x = rng.gen_range(0.0..cfg.area);
                    let y = rng.gen_range(0.0..cfg.area);
                    if (x - tx).hypot(y - ty) >= MIN_TARGET_DISTANCE {
                        placed = Some((x, y));
                        break;
                    }
                }
                match placed {
                    Some(p) => out.push(p),
                    None => {
                        return Err(Error::Scenario(format!(
                            "sensor {i} still inside the {MIN_TARGET_DISTANCE:.0e} exclusion disc after {MAX_REDRAWS} draws"
                        )))
                    }
                }
            }
            out
        }
    };
    let labels = labels_from_sizes(&cfg.cluster_sizes);
    let sensors = positions
        .iter()
        .zip(&labels)
        .map(|(&(x, y), &cluster)| {
            let dist = (x - tx).hypot(y - ty);
            Sensor {
                x,
                y,
                sigma2: sigma0_sq / dist,
                cluster,
            }
        })
        .collect();
    let copulas = cfg.cluster_copulas().copied().collect();
    Ok(Scenario {
        sensors,
        prior: cfg.prior,
        snr_db: cfg.snr_db,
        sigma0_sq,
        copulas,
    })
}

fn labels_from_sizes(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat(k).take(s))
        .collect()
}

impl Scenario {
    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sensors.iter().map(|s| s.cluster).collect()
    }

    /// Sensor indices grouped by cluster label.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let k = self.sensors.iter().map(|s| s.cluster).max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); k];
        for (i, s) in self.sensors.iter().enumerate() {
            groups[s.cluster].push(i);
        }
        groups
    }

    pub fn sigma2_vector(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.sigma2).collect()
    }

    /// Closed-form relevance I(z_l; theta) under the Gaussian prior and
    /// this sensor's noise variance.
    pub fn relevance_mi(&self, sensor: usize) -> Result<f64> {
        let s = self
            .sensors
            .get(sensor)
            .ok_or_else(|| Error::InvalidArgument(format!("no sensor {sensor}")))?;
        dependence::gaussian_relevance_mi(self.prior.sigma_p2, s.sigma2)
    }

    pub fn relevances(&self) -> Result<Vec<f64>> {
        (0..self.sensor_count()).map(|l| self.relevance_mi(l)).collect()
    }

    /// Pairwise mutual information implied by the generating model: the
    /// cluster copula's pair MI inside a cluster, zero across clusters and
    /// on the diagonal. The parameter channel every sensor shares is left
    /// out, so this is noise dependence alone.
    pub fn model_redundancy_mi(&self) -> Result<Vec<Vec<f64>>> {
        let per_cluster: Vec<f64> = self
            .copulas
            .iter()
            .map(|c| copula::pair_mutual_information(c.family, c.phi))
            .collect::<Result<_>>()?;
        let l = self.sensor_count();
        let mut m = vec![vec![0.0; l]; l];
        for i in 0..l {
            for j in 0..l {
                let (ci, cj) = (self.sensors[i].cluster, self.sensors[j].cluster);
                if i != j && ci == cj {
                    m[i][j] = per_cluster[ci];
                }
            }
        }
        Ok(m)
    }

    fn uniform_copula(&self) -> Result<CopulaSpec> {
        let first = self.copulas[0];
        if self.copulas.iter().any(|c| *c != first) {
            return Err(Error::Unsupported(
                "scenario file format stores a single copula spec; clusters differ".into(),
            ));
        }
        Ok(first)
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        let doc = ScenarioFile {
            sensors: self.sensors.clone(),
            prior: self.prior,
            snr_db: self.snr_db,
            copula: self.uniform_copula()?,
        };
        fs::write(path, serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let doc: ScenarioFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if doc.sensors.is_empty() {
            return Err(Error::DataFormat("scenario file lists no sensors".into()));
        }
        if doc.sensors.iter().any(|s| !(s.sigma2 > 0.0)) {
            return Err(Error::DataFormat(
                "scenario file holds a nonpositive sensor variance".into(),
            ));
        }
        let k = doc.sensors.iter().map(|s| s.cluster).max().unwrap() + 1;
        let copulas = vec![doc.copula; k];
        Ok(Scenario {
            sigma0_sq: snr_to_sigma0(doc.snr_db, &doc.prior),
            sensors: doc.sensors,
            prior: doc.prior,
            snr_db: doc.snr_db,
            copulas,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    sensors: Vec<Sensor>,
    prior: GaussianPrior,
    snr_db: f64,
    copula: CopulaSpec,
}

/// Draws theta from the prior and an N x L observation matrix: cluster by
/// cluster, each time row is a copula sample pushed through the inverse
/// Gaussian noise CDF and shifted by theta. Rows are i.i.d. and clusters
/// mutually independent.
pub fn generate_observations<R: Rng + ?Sized>(
    scn: &Scenario,
    n: usize,
    rng: &mut R,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one time step".into()));
    }
    let normal = Normal::new(scn.prior.theta_p, scn.prior.sigma_p2.sqrt())
        .map_err(|e| Error::Scenario(e.to_string()))?;
    let theta = normal.sample(rng);
    let l = scn.sensor_count();
    let mut obs = vec![vec![0.0f64; l]; n];
    for (cluster, sensors) in scn.clusters().iter().enumerate() {
        let d = sensors.len();
        let rows = if d >= 2 {
            scn.copulas[cluster].build(d)?.sample(n, rng)?
        } else {
            (0..n)
                .map(|_| vec![rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12)])
                .collect()
        };
        for (t, row) in rows.iter().enumerate() {
            for (slot, &sensor) in sensors.iter().enumerate() {
                let sd = scn.sensors[sensor].sigma2.sqrt();
                obs[t][sensor] = theta + sd * crate::numeric::norm_quantile(row[slot]);
            }
        }
    }
    Ok((theta, obs))
}
