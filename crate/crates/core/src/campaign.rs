//! Campaign orchestration: runs (environment x algorithm x latent x seed)
//! grids through the observation -> embedding -> goal-policy -> exploration
//! pipeline, persists per-cell artifacts under a deterministic path scheme,
//! and records every cell's outcome in a manifest.

use crate::arm_env::{observation_dataset, EnvKind};
use crate::error::Error;
use crate::explorer::{run_exploration, ExplorationConfig, OutcomeEncoder};
use crate::goal_policy::{kde_fit, GoalPolicy};
use crate::metrics::{
    attainable_histogram_cached, state_point, Histogram, KlcTracker, DEFAULT_BINS,
    DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED,
};
use crate::repr_learn::{
    fit_isomap, fit_neural, fit_pca, Dataset, EmbeddingModel, TrainConfig, Variant,
};
use crate::rng::{cell_seed, explore_seed, observation_seed, train_seed};
use crate::serialize::{
    save_model, write_epoch_log_csv, write_history_jsonl, write_klc_csv, write_loss_csv,
    write_true_states_csv, KlcRow, SavedModel,
};
use crate::Result;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Rpe,
    RgeEfr,
    RgePca,
    RgeIsomap,
    RgeAe,
    RgeVae,
    RgeVaeGp,
    RgeRfvae,
    RgeRfvaeGp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Rpe,
        Algorithm::RgeEfr,
        Algorithm::RgePca,
        Algorithm::RgeIsomap,
        Algorithm::RgeAe,
        Algorithm::RgeVae,
        Algorithm::RgeVaeGp,
        Algorithm::RgeRfvae,
        Algorithm::RgeRfvaeGp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Rpe => "rpe",
            Algorithm::RgeEfr => "rge-efr",
            Algorithm::RgePca => "rge-pca",
            Algorithm::RgeIsomap => "rge-isomap",
            Algorithm::RgeAe => "rge-ae",
            Algorithm::RgeVae => "rge-vae",
            Algorithm::RgeVaeGp => "rge-vae-gp",
            Algorithm::RgeRfvae => "rge-rfvae",
            Algorithm::RgeRfvaeGp => "rge-rfvae-gp",
        }
    }

    /// Which embedding learner the algorithm trains, if any.
    pub fn variant(&self) -> Option<Variant> {
        match self {
            Algorithm::Rpe | Algorithm::RgeEfr => None,
            Algorithm::RgePca => Some(Variant::Pca),
            Algorithm::RgeIsomap => Some(Variant::Isomap),
            Algorithm::RgeAe => Some(Variant::Ae),
            Algorithm::RgeVae | Algorithm::RgeVaeGp => Some(Variant::Vae),
            Algorithm::RgeRfvae | Algorithm::RgeRfvaeGp => Some(Variant::Rfvae),
        }
    }

    pub fn uses_latent(&self) -> bool {
        self.variant().is_some()
    }

    /// Goals from N(0, I) in the latent space instead of a fitted KDE.
    pub fn uses_gaussian_prior(&self) -> bool {
        matches!(self, Algorithm::RgeVaeGp | Algorithm::RgeRfvaeGp)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .copied()
            .ok_or_else(|| Error::UnknownName(s.to_string(), "algorithm"))
    }
}

/// Optional knobs layered over each variant's training defaults.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingOverrides {
    pub ae_updates: Option<usize>,
    /// Applies to VAE and RFVAE.
    pub vae_updates: Option<usize>,
    pub warmup_updates: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl TrainingOverrides {
    pub fn resolve(&self, variant: Variant, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::default_for(variant);
        let updates = match variant {
            Variant::Ae => self.ae_updates,
            _ => self.vae_updates,
        };
        if let Some(u) = updates {
            cfg.n_updates = u;
        }
        if let Some(w) = self.warmup_updates {
            cfg.warmup_updates = w;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        // a ramp longer than the run just ends with the run
        cfg.warmup_updates = cfg.warmup_updates.min(cfg.n_updates);
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub environments: Vec<EnvKind>,
    pub algorithms: Vec<Algorithm>,
    pub latent_dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub campaign_seed: u64,
    pub n_observation: usize,
    pub n_bootstrap: usize,
    pub n_exploration: usize,
    pub gamma_e: f64,
    pub noise_sigma: f64,
    pub knn_k: usize,
    pub isomap_kappa: usize,
    pub scott_squared: bool,
    pub bins: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub training: TrainingOverrides,
    pub output_dir: PathBuf,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig::desk_default(PathBuf::from("campaign-out"))
    }
}

impl CampaignConfig {
    /// Small grid sized for a laptop: quick algorithms, 2000 observations,
    /// 2000 exploration epochs, 3 seeds.
    pub fn desk_default(output_dir: PathBuf) -> Self {
        CampaignConfig {
            environments: vec![EnvKind::ArmBall],
            algorithms: vec![
                Algorithm::Rpe,
                Algorithm::RgeEfr,
                Algorithm::RgePca,
                Algorithm::RgeIsomap,
            ],
            latent_dims: vec![2],
            seeds: vec![1, 2, 3],
            campaign_seed: 0,
            n_observation: 2000,
            n_bootstrap: 100,
            n_exploration: 2000,
            gamma_e: 0.2,
            noise_sigma: 0.05,
            knn_k: 1,
            isomap_kappa: 10,
            scott_squared: false,
            bins: DEFAULT_BINS,
            mc_samples: DEFAULT_MC_SAMPLES,
            mc_seed: DEFAULT_MC_SEED,
            training: TrainingOverrides::default(),
            output_dir,
        }
    }

    /// Full roster at the published scales (10000 observations, 5000
    /// exploration epochs, 5 seeds, 2e5/1e5-update training budgets).
    pub fn paper_scale(output_dir: PathBuf) -> Self {
        CampaignConfig {
            environments: vec![EnvKind::ArmBall, EnvKind::ArmArrow],
            algorithms: Algorithm::ALL.to_vec(),
            latent_dims: vec![2, 10],
            seeds: vec![1, 2, 3, 4, 5],
            n_observation: 10_000,
            n_exploration: 5_000,
            training: TrainingOverrides {
                ae_updates: Some(200_000),
                vae_updates: Some(100_000),
                warmup_updates: Some(50_000),
                batch_size: None,
                learning_rate: None,
            },
            ..CampaignConfig::desk_default(output_dir)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.environments.is_empty() || self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "environments, algorithms, and seeds must be nonempty".into(),
            ));
        }
        if self.algorithms.iter().any(|a| a.uses_latent()) && self.latent_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "latent_dims must be nonempty for embedding algorithms".into(),
            ));
        }
        if self.algorithms.iter().any(|a| a.variant().is_some()) && self.n_observation < 2 {
            return Err(Error::InvalidConfig(
                "embedding algorithms need n_observation >= 2".into(),
            ));
        }
        if self.n_exploration == 0 {
            return Err(Error::InvalidConfig("n_exploration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma_e) {
            return Err(Error::InvalidConfig("gamma_e must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be positive".into()));
        }
        if self.bins < 2 || self.mc_samples == 0 {
            return Err(Error::InvalidConfig(
                "need at least 2 bins and 1 MC sample".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellId {
    pub env: EnvKind,
    pub algo: Algorithm,
    pub latent: usize,
    pub seed: u64,
}

impl CellId {
    pub fn rel_path(&self) -> PathBuf {
        PathBuf::from(self.env.to_string())
            .join(self.algo.name())
            .join(self.latent.to_string())
            .join(self.seed.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub env: String,
    pub algo: String,
    pub latent: usize,
    pub seed: u64,
    pub path: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_klc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handled: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: Vec<CellResult>,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.status == "ok")
    }
}

/// Grid cells in deterministic order. Algorithms without a latent dimension
/// appear once per (env, seed) under the engineered dimension.
pub fn enumerate_cells(cfg: &CampaignConfig) -> Vec<CellId> {
    let mut cells = Vec::new();
    for &env in &cfg.environments {
        for &algo in &cfg.algorithms {
            let latents: Vec<usize> = if algo.uses_latent() {
                cfg.latent_dims.clone()
            } else {
                vec![env.engineered_dim()]
            };
            for latent in latents {
                for &seed in &cfg.seeds {
                    cells.push(CellId {
                        env,
                        algo,
                        latent,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GOALSPACE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("GOALSPACE_THREADS={v} is not a count")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

struct ObsData {
    dataset: Dataset,
}

fn fit_embedding(
    cfg: &CampaignConfig,
    cell: &CellId,
    variant: Variant,
    data: &Dataset,
    cseed: u64,
    dir: &Path,
) -> Result<EmbeddingModel> {
    match variant {
        Variant::Pca => Ok(EmbeddingModel::Pca(fit_pca(data, cell.latent)?)),
        Variant::Isomap => Ok(EmbeddingModel::Isomap(fit_isomap(
            data,
            cell.latent,
            cfg.isomap_kappa,
        )?)),
        v => {
            let tcfg = cfg.training.resolve(v, train_seed(cseed));
            let (model, loss) = fit_neural(data, cell.latent, v, &tcfg)?;
            write_loss_csv(&dir.join("loss.csv"), &loss)?;
            Ok(EmbeddingModel::Neural(model))
        }
    }
}

fn run_cell_inner(
    cfg: &CampaignConfig,
    cell: &CellId,
    obs: Option<&ObsData>,
    attainable: &Histogram,
) -> Result<(f64, u64)> {
    let dir = cfg.output_dir.join(cell.rel_path());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cseed = cell_seed(
        cfg.campaign_seed,
        &cell.env.to_string(),
        cell.algo.name(),
        cell.latent,
        cell.seed,
    );

    let embedding = match cell.algo.variant() {
        None => None,
        Some(variant) => {
            let data = &obs
                .expect("embedding cells run inside a group that generated observations")
                .dataset;
            let model = fit_embedding(cfg, cell, variant, data, cseed, &dir)?;
            save_model(
                &dir.join("embedding.model"),
                &SavedModel::Embedding(model.clone()),
            )?;
            Some(model)
        }
    };

    let policy = match (cell.algo, embedding.as_ref()) {
        (Algorithm::Rpe, _) => None,
        (Algorithm::RgeEfr, _) => Some(GoalPolicy::UniformBox {
            dim: cell.env.engineered_dim(),
        }),
        (algo, Some(model)) if algo.uses_gaussian_prior() => Some(GoalPolicy::GaussianPrior {
            dim: model.latent_dim(),
        }),
        (_, Some(model)) => {
            let data = &obs.unwrap().dataset;
            let mut outcomes = Array2::zeros((data.n(), model.latent_dim()));
            for (i, row) in data.images.rows().into_iter().enumerate() {
                let o = model.encode(&row)?;
                outcomes.row_mut(i).assign(&ndarray::ArrayView1::from(&o));
            }
            let kde = kde_fit(&outcomes.view(), cfg.scott_squared)?;
            save_model(&dir.join("policy.model"), &SavedModel::Kde(kde.clone()))?;
            Some(GoalPolicy::Kde(kde))
        }
        (algo, None) => {
            return Err(Error::InvalidConfig(format!(
                "{algo} needs an embedding but none was fitted"
            )))
        }
    };

    let encoder = match embedding.as_ref() {
        Some(model) => OutcomeEncoder::Learned(model),
        None => OutcomeEncoder::Engineered(cell.env),
    };
    let ecfg = ExplorationConfig {
        n_observation: cfg.n_observation,
        n_bootstrap: cfg.n_bootstrap,
        n_exploration: cfg.n_exploration,
        gamma_e: cfg.gamma_e,
        noise_sigma: cfg.noise_sigma,
        knn_k: cfg.knn_k,
        seed: explore_seed(cseed),
    };
    let (history, log) = run_exploration(cell.env, &encoder, policy.as_ref(), &ecfg)?;

    let mut tracker = KlcTracker::new(attainable.clone());
    let mut klc_rows = Vec::with_capacity(history.len());
    let mut handled_cumulative = 0u64;
    for entry in &history {
        tracker.push(&state_point(&entry.true_state));
        handled_cumulative += entry.handled as u64;
        klc_rows.push(KlcRow {
            epoch: entry.epoch,
            klc: tracker.klc(),
            handled_cumulative,
        });
    }

    write_klc_csv(&dir.join("klc.csv"), &klc_rows)?;
    write_history_jsonl(&dir.join("history.jsonl"), &history)?;
    write_epoch_log_csv(&dir.join("epoch_log.csv"), &log)?;
    write_true_states_csv(&dir.join("true_states.csv"), &history)?;

    Ok((klc_rows.last().map(|r| r.klc).unwrap_or(f64::NAN), handled_cumulative))
}

fn run_cell(
    cfg: &CampaignConfig,
    cell: &CellId,
    obs: Option<&ObsData>,
    attainable: &Histogram,
) -> CellResult {
    let base = CellResult {
        env: cell.env.to_string(),
        algo: cell.algo.name().to_string(),
        latent: cell.latent,
        seed: cell.seed,
        path: cell.rel_path().to_string_lossy().into_owned(),
        status: "ok".into(),
        error: None,
        final_klc: None,
        handled: None,
    };
    match run_cell_inner(cfg, cell, obs, attainable) {
        Ok((final_klc, handled)) => CellResult {
            final_klc: Some(final_klc),
            handled: Some(handled),
            ..base
        },
        Err(e) => CellResult {
            status: "failed".into(),
            error: Some(e.to_string()),
            ..base
        },
    }
}

/// Run every cell of the grid. Cell failures are recorded in the returned
/// manifest (and on disk) without aborting the rest of the campaign.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let cells = enumerate_cells(cfg);
    let pool = thread_pool()?;

    let cache_dir = cfg.output_dir.join(".cache");
    let mut attainable: HashMap<EnvKind, Histogram> = HashMap::new();
    for &env in &cfg.environments {
        attainable.insert(
            env,
            attainable_histogram_cached(env, cfg.bins, cfg.mc_samples, cfg.mc_seed, &cache_dir)?,
        );
    }

    // group by (env, seed) so one observation dataset serves every algorithm
    let mut groups: Vec<((EnvKind, u64), Vec<CellId>)> = Vec::new();
    for cell in &cells {
        let key = (cell.env, cell.seed);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(*cell),
            None => groups.push((key, vec![*cell])),
        }
    }

    let mut results: HashMap<CellId, CellResult> = HashMap::new();
    for ((env, seed), group) in groups {
        let obs = if group.iter().any(|c| c.algo.variant().is_some()) {
            let oseed = observation_seed(cfg.campaign_seed, &env.to_string(), seed);
            let (_, images) = observation_dataset(env, cfg.n_observation, oseed);
            Some(ObsData {
                dataset: Dataset::new(images)?,
            })
        } else {
            None
        };
        let att = &attainable[&env];
        let group_results: Vec<(CellId, CellResult)> = pool.install(|| {
            group
                .par_iter()
                .map(|cell| (*cell, run_cell(cfg, cell, obs.as_ref(), att)))
                .collect()
        });
        results.extend(group_results);
    }

    let manifest = Manifest {
        cells: cells.iter().map(|c| results.remove(c).unwrap()).collect(),
    };
    let path = cfg.output_dir.join("manifest.json");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
    Ok(manifest)
}
