//! Exploration coverage metrics: the discretized KL divergence of explored
//! outcomes against a Monte-Carlo histogram of the attainable set, plus the
//! cumulative ball-handled count. All of this is computed on TRUE object
//! states (ground truth the learner never sees), never on embeddings.

use crate::arm_env::EnvKind;
use crate::error::Error;
use crate::Result;
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

pub const DEFAULT_BINS: usize = 30;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
pub const DEFAULT_MC_SEED: u64 = 2_718_281;
/// Floor for attainable-bin mass where the MC estimate is zero but explored
/// mass exists.
pub const KLC_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub dims: usize,
    pub bins: usize,
    pub bounds: Vec<(f64, f64)>,
    pub counts: Vec<u64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn empty(bounds: Vec<(f64, f64)>, bins: usize) -> Self {
        let dims = bounds.len();
        let size = bins.pow(dims as u32);
        Histogram {
            dims,
            bins,
            bounds,
            counts: vec![0; size],
            mass: vec![0.0; size],
        }
    }

    /// Bounds for an environment's true-state space: [-1,1] per spatial dim,
    /// [0, 2pi) for the ArmArrow angle.
    pub fn env_bounds(env: EnvKind) -> Vec<(f64, f64)> {
        match env {
            EnvKind::ArmBall => vec![(-1.0, 1.0), (-1.0, 1.0)],
            EnvKind::ArmArrow => vec![
                (-1.0, 1.0),
                (-1.0, 1.0),
                (0.0, 2.0 * std::f64::consts::PI),
            ],
        }
    }

    pub fn bin_index(&self, point: &[f64]) -> usize {
        let mut idx = 0;
        for (d, &p) in point.iter().enumerate() {
            let (lo, hi) = self.bounds[d];
            let t = ((p - lo) / (hi - lo) * self.bins as f64).floor();
            let b = (t as isize).clamp(0, self.bins as isize - 1) as usize;
            idx = idx * self.bins + b;
        }
        idx
    }

    pub fn add(&mut self, point: &[f64]) {
        let i = self.bin_index(point);
        self.counts[i] += 1;
    }

    pub fn normalize(&mut self) {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return;
        }
        for (m, &c) in self.mass.iter_mut().zip(&self.counts) {
            *m = c as f64 / total as f64;
        }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.dims as u32).to_le_bytes());
        buf.extend_from_slice(&(self.bins as u32).to_le_bytes());
        for &(lo, hi) in &self.bounds {
            buf.extend_from_slice(&lo.to_le_bytes());
            buf.extend_from_slice(&hi.to_le_bytes());
        }
        for &m in &self.mass {
            buf.extend_from_slice(&m.to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Histogram> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::BadModelFile(format!(
                    "histogram file truncated at byte {pos}"
                )));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let dims = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let bins = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut bounds = Vec::with_capacity(dims);
        for _ in 0..dims {
            let lo = f64::from_le_bytes(take(8)?.try_into().unwrap());
            let hi = f64::from_le_bytes(take(8)?.try_into().unwrap());
            bounds.push((lo, hi));
        }
        let size = bins.pow(dims as u32);
        let mut mass = Vec::with_capacity(size);
        for _ in 0..size {
            mass.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        Ok(Histogram {
            dims,
            bins,
            bounds,
            counts: vec![0; size],
            mass,
        })
    }
}

/// Normalized histogram of a point set; out-of-range points land in edge bins.
pub fn build_histogram(
    points: &[Vec<f64>],
    bounds: Vec<(f64, f64)>,
    bins: usize,
) -> Result<Histogram> {
    if points.is_empty() {
        return Err(Error::EmptyInput("histogram needs at least one point"));
    }
    let mut h = Histogram::empty(bounds, bins);
    for p in points {
        h.add(p);
    }
    h.normalize();
    Ok(h)
}

/// Monte-Carlo histogram of the attainable outcome set: uniform over the
/// unit disk (rejection from [-1,1]^2), times a uniform angle for ArmArrow.
pub fn attainable_histogram(
    env: EnvKind,
    bins: usize,
    mc_samples: usize,
    seed: u64,
) -> Histogram {
    let mut h = Histogram::empty(Histogram::env_bounds(env), bins);
    let mut rng = crate::rng::rng_from(seed);
    let mut accepted = 0;
    while accepted < mc_samples {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let y: f64 = rng.gen_range(-1.0..1.0);
        if x * x + y * y > 1.0 {
            continue;
        }
        match env {
            EnvKind::ArmBall => h.add(&[x, y]),
            EnvKind::ArmArrow => {
                let a = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                h.add(&[x, y, a]);
            }
        }
        accepted += 1;
    }
    h.normalize();
    h
}

/// Same histogram, cached on disk keyed by (env, bins, samples, seed).
pub fn attainable_histogram_cached(
    env: EnvKind,
    bins: usize,
    mc_samples: usize,
    seed: u64,
    cache_dir: &Path,
) -> Result<Histogram> {
    let name = format!("attainable_{env}_{bins}_{mc_samples}_{seed}.bin");
    let path = cache_dir.join(name);
    if path.exists() {
        if let Ok(h) = Histogram::read_binary(&path) {
            return Ok(h);
        }
    }
    let h = attainable_histogram(env, bins, mc_samples, seed);
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    h.write_binary(&path)?;
    // hand back the on-disk form so hits and misses agree exactly
    Histogram::read_binary(&path)
}

/// KL-coverage: sum over bins with explored mass E(i) > 0 of
/// E(i) * ln(E(i) / max(A(i), 1e-10)), in nats. Low = good coverage.
pub fn klc(explored: &Histogram, attainable: &Histogram) -> Result<f64> {
    if explored.mass.len() != attainable.mass.len() {
        return Err(Error::HistogramMismatch(
            explored.mass.len(),
            attainable.mass.len(),
        ));
    }
    let mut sum = 0.0;
    for (&e, &a) in explored.mass.iter().zip(&attainable.mass) {
        if e > 0.0 {
            sum += e * (e / a.max(KLC_FLOOR)).ln();
        }
    }
    Ok(sum)
}

/// Cumulative handled count per epoch.
pub fn handled_curve(handled: &[bool]) -> Vec<u64> {
    let mut acc = 0;
    handled
        .iter()
        .map(|&h| {
            acc += h as u64;
            acc
        })
        .collect()
}

/// Streaming KLC: keeps the explored histogram up to date one episode at a
/// time and reports KLC against a fixed attainable histogram.
pub struct KlcTracker {
    explored: Histogram,
    attainable: Histogram,
    n: u64,
}

impl KlcTracker {
    pub fn new(attainable: Histogram) -> Self {
        let explored = Histogram::empty(attainable.bounds.clone(), attainable.bins);
        KlcTracker {
            explored,
            attainable,
            n: 0,
        }
    }

    pub fn push(&mut self, point: &[f64]) {
        self.explored.add(point);
        self.n += 1;
    }

    pub fn klc(&mut self) -> f64 {
        self.explored.normalize();
        klc(&self.explored, &self.attainable).expect("matching shapes by construction")
    }
}

/// The point that the KLC histogram bins for one episode's final state.
pub fn state_point(state: &crate::arm_env::TrueState) -> Vec<f64> {
    match state.env_kind {
        EnvKind::ArmBall => vec![state.object_pos[0], state.object_pos[1]],
        EnvKind::ArmArrow => vec![
            state.object_pos[0],
            state.object_pos[1],
            state.object_angle,
        ],
    }
}
