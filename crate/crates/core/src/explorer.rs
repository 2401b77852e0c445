//! Goal-directed exploration loops: random parameterization exploration
//! (no goals), and goal exploration driven by a goal policy plus a
//! nearest-neighbor meta-policy with Gaussian parameter noise.

use crate::arm_env::{
    run_episode, ArmGeometry, DmpConfig, EnvKind, MotorParams, RawImage, TrueState,
};
use crate::error::Error;
use crate::goal_policy::{sample_goal, GoalPolicy};
use crate::repr_learn::EmbeddingModel;
use crate::rng::stream_rng;
use crate::Result;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    #[serde(rename = "theta")]
    pub params: MotorParams,
    pub outcome: Vec<f64>,
    pub true_state: TrueState,
    pub handled: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub n_observation: usize,
    pub n_bootstrap: usize,
    pub n_exploration: usize,
    /// Probability of a uniform-random episode during the exploration phase.
    pub gamma_e: f64,
    /// Scale of the Gaussian noise added to the reused parameterization.
    pub noise_sigma: f64,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            n_observation: 10_000,
            n_bootstrap: 100,
            n_exploration: 5_000,
            gamma_e: 0.2,
            noise_sigma: 0.05,
            knn_k: 1,
            seed: 0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma_e) {
            return Err(Error::InvalidConfig(format!(
                "gamma_e {} must lie in [0, 1]",
                self.gamma_e
            )));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::InvalidConfig("knn_k must be positive".into()));
        }
        Ok(())
    }
}

/// Engineered outcome features: object position mapped from [-1,1]^2 to
/// [0,1]^2, plus angle/2pi for the arrow.
pub fn engineered_encode(state: &TrueState) -> Vec<f64> {
    let mut out = vec![
        (state.object_pos[0] + 1.0) / 2.0,
        (state.object_pos[1] + 1.0) / 2.0,
    ];
    if state.env_kind == EnvKind::ArmArrow {
        out.push(state.object_angle / (2.0 * std::f64::consts::PI));
    }
    out
}

/// How an episode's final scene becomes an outcome vector.
pub enum OutcomeEncoder<'a> {
    Engineered(EnvKind),
    Learned(&'a EmbeddingModel),
}

impl OutcomeEncoder<'_> {
    pub fn dim(&self) -> usize {
        match self {
            OutcomeEncoder::Engineered(env) => env.engineered_dim(),
            OutcomeEncoder::Learned(model) => model.latent_dim(),
        }
    }

    pub fn encode(&self, state: &TrueState, image: &RawImage) -> Result<Vec<f64>> {
        match self {
            OutcomeEncoder::Engineered(_) => Ok(engineered_encode(state)),
            OutcomeEncoder::Learned(model) => {
                let flat = image.to_vec();
                model.encode(&ndarray::ArrayView1::from(&flat))
            }
        }
    }
}

/// Nearest achieved outcome (ties resolved toward the earliest epoch), its
/// parameterization perturbed by noise_sigma * N(0, I) and clamped to the
/// parameter box.
pub fn meta_policy(
    goal: &[f64],
    history: &[HistoryEntry],
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> Result<MotorParams> {
    let best = nearest_outcome_index(goal, history)?;
    let mut values = history[best].params.values().to_vec();
    for v in &mut values {
        let eps: f64 = rng.sample(StandardNormal);
        *v = (*v + noise_sigma * eps).clamp(0.0, 1.0);
    }
    MotorParams::new(values)
}

fn nearest_outcome_index(goal: &[f64], history: &[HistoryEntry]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, entry) in history.iter().enumerate() {
        if entry.outcome.len() != goal.len() {
            return Err(Error::DimensionMismatch {
                expected: goal.len(),
                got: entry.outcome.len(),
            });
        }
        let d: f64 = goal
            .iter()
            .zip(&entry.outcome)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Forward-model regressor: mean outcome of the k history entries nearest to
/// `params` in parameter space (ties toward the earliest epoch).
pub fn knn_predict(history: &[HistoryEntry], params: &MotorParams, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if history.len() < k {
        return Err(Error::InsufficientHistory {
            k,
            have: history.len(),
        });
    }
    let q = params.values();
    let mut order: Vec<(f64, usize)> = history
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let d: f64 = q
                .iter()
                .zip(entry.params.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let l = history[0].outcome.len();
    let mut mean = vec![0.0; l];
    for &(_, i) in order.iter().take(k) {
        for (m, o) in mean.iter_mut().zip(&history[i].outcome) {
            *m += o;
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    Ok(mean)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLogRow {
    pub epoch: usize,
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub handled: bool,
    pub goal: Option<Vec<f64>>,
}

#[cfg(debug_assertions)]
fn entry_checksum(entry: &HistoryEntry) -> u64 {
    let mut h = crate::rng::mix(entry.epoch as u64 ^ (entry.handled as u64) << 32);
    for &v in entry.params.values() {
        h = crate::rng::mix(h ^ v.to_bits());
    }
    for &v in &entry.outcome {
        h = crate::rng::mix(h ^ v.to_bits());
    }
    h = crate::rng::mix(h ^ entry.true_state.object_pos[0].to_bits());
    h = crate::rng::mix(h ^ entry.true_state.object_pos[1].to_bits());
    h = crate::rng::mix(h ^ entry.true_state.object_angle.to_bits());
    h
}

/// Run one full exploration: n_bootstrap uniform-random episodes, then
/// n_exploration episodes that are uniform-random with probability gamma_e
/// and goal-directed otherwise. `policy: None` is pure random
/// parameterization exploration (no goals ever drawn).
pub fn run_exploration(
    env_kind: EnvKind,
    encoder: &OutcomeEncoder,
    policy: Option<&GoalPolicy>,
    cfg: &ExplorationConfig,
) -> Result<(Vec<HistoryEntry>, Vec<EpochLogRow>)> {
    cfg.validate()?;
    if let Some(p) = policy {
        if p.dim() != encoder.dim() {
            return Err(Error::DimensionMismatch {
                expected: encoder.dim(),
                got: p.dim(),
            });
        }
    }
    let dmp = DmpConfig::default();
    let geom = ArmGeometry::default();
    let total = cfg.n_bootstrap + cfg.n_exploration;
    let mut history: Vec<HistoryEntry> = Vec::with_capacity(total);
    let mut log = Vec::with_capacity(total);

    #[cfg(debug_assertions)]
    let mut checksum_chain: u64 = 0;

    for epoch in 0..total {
        let mut rng = stream_rng(cfg.seed, epoch as u64);

        // history must behave as append-only storage
        #[cfg(debug_assertions)]
        {
            let recomputed = history
                .iter()
                .fold(0u64, |acc, e| crate::rng::mix(acc ^ entry_checksum(e)));
            debug_assert_eq!(recomputed, checksum_chain, "history entry mutated");
        }

        let mut goal: Option<Vec<f64>> = None;
        let params = if epoch < cfg.n_bootstrap {
            MotorParams::uniform(&mut rng)
        } else {
            let u: f64 = rng.gen();
            match policy {
                Some(p) if u >= cfg.gamma_e => {
                    let g = sample_goal(p, &mut rng);
                    let theta = meta_policy(&g, &history, cfg.noise_sigma, &mut rng)?;
                    goal = Some(g);
                    theta
                }
                _ => MotorParams::uniform(&mut rng),
            }
        };

        let (state, image, handled) = run_episode(env_kind, &params, &dmp, &geom)?;
        let outcome = encoder.encode(&state, &image)?;
        log.push(EpochLogRow {
            epoch,
            x: state.object_pos[0],
            y: state.object_pos[1],
            angle: state.object_angle,
            handled,
            goal,
        });
        let entry = HistoryEntry {
            epoch,
            params,
            outcome,
            true_state: state,
            handled,
        };
        #[cfg(debug_assertions)]
        {
            checksum_chain = crate::rng::mix(checksum_chain ^ entry_checksum(&entry));
        }
        history.push(entry);
    }

    Ok((history, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_env::N_PARAMS;
    use crate::rng::rng_from;

    fn entry(epoch: usize, params: Vec<f64>, outcome: Vec<f64>) -> HistoryEntry {
        let full: Vec<f64> = params
            .into_iter()
            .chain(std::iter::repeat(0.5))
            .take(N_PARAMS)
            .collect();
        HistoryEntry {
            epoch,
            params: MotorParams::new(full).unwrap(),
            outcome,
            true_state: TrueState::initial(EnvKind::ArmBall),
            handled: false,
        }
    }

    #[test]
    fn singleton_history_always_reuses_the_only_entry() {
        let h = vec![entry(0, vec![0.3, 0.7], vec![0.1, 0.9])];
        let mut rng = rng_from(1);
        let p = meta_policy(&[0.8, 0.2], &h, 0.0, &mut rng).unwrap();
        assert_eq!(p.values(), h[0].params.values());
    }

    #[test]
    fn zero_noise_exact_goal_returns_params_verbatim() {
        let h = vec![
            entry(0, vec![0.1], vec![0.2, 0.6]),
            entry(1, vec![0.9], vec![0.4, 0.4]),
        ];
        let mut rng = rng_from(2);
        let p = meta_policy(&[0.4, 0.4], &h, 0.0, &mut rng).unwrap();
        assert_eq!(p.values(), h[1].params.values());
    }

    #[test]
    fn empty_history_is_an_error() {
        let mut rng = rng_from(3);
        assert!(matches!(
            meta_policy(&[0.0], &[], 0.1, &mut rng),
            Err(Error::EmptyHistory)
        ));
    }

    #[test]
    fn nearest_choice_matches_linear_scan_oracle() {
        let mut rng = rng_from(4);
        for _ in 0..1000 {
            let n = rng.gen_range(1..30);
            let dim = rng.gen_range(1..4usize);
            let history: Vec<HistoryEntry> = (0..n)
                .map(|i| {
                    entry(
                        i,
                        (0..N_PARAMS).map(|_| rng.gen()).collect(),
                        (0..dim).map(|_| rng.gen()).collect(),
                    )
                })
                .collect();
            let goal: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
            // independent scan: strictly-smaller distance wins, first entry
            // kept on ties, distances accumulated in reverse order
            let mut best = None;
            for i in (0..n).rev() {
                let d: f64 = goal
                    .iter()
                    .zip(&history[i].outcome)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                best = match best {
                    Some((bd, _)) if bd < d => best,
                    Some((bd, bi)) if bd == d && bi < i => best,
                    _ => Some((d, i)),
                };
            }
            let expect = best.unwrap().1;
            assert_eq!(nearest_outcome_index(&goal, &history).unwrap(), expect);
        }
    }

    #[test]
    fn knn_trivial_cases() {
        let h = vec![
            entry(0, vec![0.0], vec![1.0, 0.0]),
            entry(1, vec![0.5], vec![0.0, 1.0]),
            entry(2, vec![1.0], vec![0.5, 0.5]),
        ];
        let q = h[1].params.clone();
        assert_eq!(knn_predict(&h, &q, 1).unwrap(), vec![0.0, 1.0]);
        let global = knn_predict(&h, &q, 3).unwrap();
        assert!((global[0] - 0.5).abs() < 1e-15);
        assert!((global[1] - 0.5).abs() < 1e-15);
        assert!(matches!(
            knn_predict(&h, &q, 4),
            Err(Error::InsufficientHistory { k: 4, have: 3 })
        ));
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let mut rng = rng_from(5);
        let history: Vec<HistoryEntry> = (0..60)
            .map(|i| {
                entry(
                    i,
                    (0..N_PARAMS).map(|_| rng.gen()).collect(),
                    vec![rng.gen(), rng.gen()],
                )
            })
            .collect();
        for _ in 0..500 {
            let q = MotorParams::new((0..N_PARAMS).map(|_| rng.gen()).collect()).unwrap();
            let k = rng.gen_range(1..10);
            let got = knn_predict(&history, &q, k).unwrap();
            let mut dists: Vec<(f64, usize)> = history
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let d: f64 = q
                        .values()
                        .iter()
                        .zip(e.params.values())
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (d, i)
                })
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = vec![0.0; 2];
            for &(_, i) in dists.iter().take(k) {
                want[0] += history[i].outcome[0] / k as f64;
                want[1] += history[i].outcome[1] / k as f64;
            }
            assert!((got[0] - want[0]).abs() < 1e-12);
            assert!((got[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_policy_output_stays_in_the_unit_box() {
        let h = vec![entry(0, vec![0.5; 21], vec![0.5, 0.5])];
        let mut rng = rng_from(6);
        for _ in 0..100 {
            let p = meta_policy(&[0.0, 0.0], &h, 50.0, &mut rng).unwrap();
            assert!(p.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn engineered_features_hit_the_affine_corners() {
        let mut s = TrueState::initial(EnvKind::ArmBall);
        s.object_pos = [-1.0, -1.0];
        assert_eq!(engineered_encode(&s), vec![0.0, 0.0]);

        let mut s = TrueState::initial(EnvKind::ArmArrow);
        s.object_pos = [0.0, 0.0];
        s.object_angle = std::f64::consts::PI;
        assert_eq!(engineered_encode(&s), vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn engineered_features_round_trip() {
        let mut rng = rng_from(7);
        for _ in 0..100 {
            let mut s = TrueState::initial(EnvKind::ArmArrow);
            s.object_pos = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            s.object_angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let enc = engineered_encode(&s);
            let x = enc[0] * 2.0 - 1.0;
            let y = enc[1] * 2.0 - 1.0;
            let a = enc[2] * std::f64::consts::TAU;
            assert!((x - s.object_pos[0]).abs() < 1e-12);
            assert!((y - s.object_pos[1]).abs() < 1e-12);
            assert!((a - s.object_angle).abs() < 1e-12);
        }
    }

    fn small_cfg(seed: u64) -> ExplorationConfig {
        ExplorationConfig {
            n_observation: 0,
            n_bootstrap: 20,
            n_exploration: 80,
            seed,
            ..ExplorationConfig::default()
        }
    }

    #[test]
    fn history_length_counts_both_phases() {
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
        let policy = GoalPolicy::UniformBox { dim: 2 };
        let (history, log) =
            run_exploration(EnvKind::ArmBall, &encoder, Some(&policy), &small_cfg(1)).unwrap();
        assert_eq!(history.len(), 100);
        assert_eq!(log.len(), 100);
        for (i, e) in history.iter().enumerate() {
            assert_eq!(e.epoch, i);
        }
        // bootstrap epochs never log a goal; some exploration epoch should
        assert!(log[..20].iter().all(|r| r.goal.is_none()));
        assert!(log[20..].iter().any(|r| r.goal.is_some()));
    }

    #[test]
    fn fixed_seed_reproduces_the_run_bitwise() {
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmArrow);
        let policy = GoalPolicy::UniformBox { dim: 3 };
        let cfg = small_cfg(9);
        let (h1, _) = run_exploration(EnvKind::ArmArrow, &encoder, Some(&policy), &cfg).unwrap();
        let (h2, _) = run_exploration(EnvKind::ArmArrow, &encoder, Some(&policy), &cfg).unwrap();
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.params.values(), b.params.values());
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.true_state.object_pos, b.true_state.object_pos);
        }
    }

    #[test]
    fn gamma_one_reduces_to_random_parameterization_exploration() {
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
        let policy = GoalPolicy::UniformBox { dim: 2 };
        let mut cfg = small_cfg(10);
        cfg.gamma_e = 1.0;
        let (with_policy, _) =
            run_exploration(EnvKind::ArmBall, &encoder, Some(&policy), &cfg).unwrap();
        let (without, _) = run_exploration(EnvKind::ArmBall, &encoder, None, &cfg).unwrap();
        for (a, b) in with_policy.iter().zip(&without) {
            assert_eq!(a.params.values(), b.params.values());
        }
    }

    #[test]
    fn policy_dimension_must_match_encoder() {
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
        let policy = GoalPolicy::UniformBox { dim: 3 };
        assert!(run_exploration(EnvKind::ArmBall, &encoder, Some(&policy), &small_cfg(1)).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
        let mut cfg = small_cfg(1);
        cfg.gamma_e = 1.5;
        assert!(run_exploration(EnvKind::ArmBall, &encoder, None, &cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.noise_sigma = 0.0;
        assert!(run_exploration(EnvKind::ArmBall, &encoder, None, &cfg).is_err());
    }

    #[test]
    fn goal_exploration_handles_far_more_than_random_parameterization() {
        // desk-scale paired runs; the engineered-features goal explorer must
        // move the ball at least three times as often as random exploration
        for seed in [1, 2, 3] {
            let cfg = ExplorationConfig {
                n_observation: 0,
                n_bootstrap: 100,
                n_exploration: 2000,
                seed,
                ..ExplorationConfig::default()
            };
            let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
            let policy = GoalPolicy::UniformBox { dim: 2 };
            let (efr, _) =
                run_exploration(EnvKind::ArmBall, &encoder, Some(&policy), &cfg).unwrap();
            let (rpe, _) = run_exploration(EnvKind::ArmBall, &encoder, None, &cfg).unwrap();
            let count = |h: &[HistoryEntry]| h.iter().filter(|e| e.handled).count();
            let (ce, cr) = (count(&efr), count(&rpe));
            assert!(
                ce >= 3 * cr.max(1),
                "seed {seed}: goal-directed {ce} vs random {cr}"
            );
        }
    }

    #[test]
    fn handled_bounding_box_area_never_shrinks() {
        let cfg = ExplorationConfig {
            n_observation: 0,
            n_bootstrap: 100,
            n_exploration: 1000,
            seed: 4,
            ..ExplorationConfig::default()
        };
        let encoder = OutcomeEncoder::Engineered(EnvKind::ArmBall);
        let policy = GoalPolicy::UniformBox { dim: 2 };
        let (history, _) =
            run_exploration(EnvKind::ArmBall, &encoder, Some(&policy), &cfg).unwrap();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        let mut last_area = 0.0;
        let mut seen = false;
        for e in &history {
            if e.handled {
                for d in 0..2 {
                    lo[d] = lo[d].min(e.true_state.object_pos[d]);
                    hi[d] = hi[d].max(e.true_state.object_pos[d]);
                }
                seen = true;
            }
            if seen {
                let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
                assert!(area >= last_area);
                last_area = area;
            }
        }
        assert!(seen && last_area > 0.0);
    }
}
