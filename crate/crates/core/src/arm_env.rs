//! Simulated 7-joint planar arm with a DMP controller and a sticky-tip
//! object. An episode rolls the controller out for 50 steps; if the tip ever
//! comes within `grab_radius` of the object, the object sticks to the tip
//! for the rest of the episode. Scenes are rasterized to 70x70 grayscale
//! frames; the arm itself is never drawn.

use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const IMG_SIZE: usize = 70;
pub const N_PIXELS: usize = IMG_SIZE * IMG_SIZE;
pub const N_PARAMS: usize = 21;

/// World-to-pixel affine: continuous pixel coords (col, row) = (35 + 30x, 35 - 30y).
/// Pixel (r, c) covers [c, c+1) x [r, r+1), so its center sits at (c+0.5, r+0.5).
pub const PIXEL_SCALE: f64 = 30.0;
pub const PIXEL_OFFSET: f64 = 35.0;
pub const BALL_RADIUS_PX: f64 = 4.0;
pub const GRAB_RADIUS: f64 = 0.1;
pub const INITIAL_POS: [f64; 2] = [0.6, 0.6];

/// Integration timestep of the joint dynamics (episode lasts n_steps * DT
/// seconds). Sized so uniformly random parameters only rarely bring the tip
/// near the object.
pub const DT: f64 = 1.0 / 240.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    ArmBall,
    ArmArrow,
}

impl EnvKind {
    /// Dimension of the handcrafted feature space (see `explorer::engineered_encode`).
    pub fn engineered_dim(self) -> usize {
        match self {
            EnvKind::ArmBall => 2,
            EnvKind::ArmArrow => 3,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::ArmBall => write!(f, "armball"),
            EnvKind::ArmArrow => write!(f, "armarrow"),
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "armball" => Ok(EnvKind::ArmBall),
            "armarrow" => Ok(EnvKind::ArmArrow),
            other => Err(Error::UnknownName(other.to_string(), "environment")),
        }
    }
}

/// One critically damped transformation system per joint, goal = start = 0,
/// driven by a forcing term of Gaussian bases over the phase in [0, 1].
/// Parameters in [0, 1] map affinely to signed basis weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmpConfig {
    pub n_joints: usize,
    pub n_basis: usize,
    pub n_steps: usize,
    pub basis_centers: Vec<f64>,
    pub basis_width: f64,
    pub spring_k: f64,
    pub damping_c: f64,
    pub weight_scale: f64,
}

impl Default for DmpConfig {
    fn default() -> Self {
        DmpConfig {
            n_joints: 7,
            n_basis: 3,
            n_steps: 50,
            basis_centers: vec![0.25, 0.5, 0.75],
            basis_width: 0.05,
            spring_k: 25.0,
            damping_c: 10.0,
            weight_scale: 200.0,
        }
    }
}

impl DmpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_joints * self.n_basis != N_PARAMS {
            return Err(Error::InvalidConfig(format!(
                "n_joints * n_basis must be {}, got {}",
                N_PARAMS,
                self.n_joints * self.n_basis
            )));
        }
        if self.basis_centers.len() != self.n_basis {
            return Err(Error::InvalidConfig(format!(
                "need {} basis centers, got {}",
                self.n_basis,
                self.basis_centers.len()
            )));
        }
        if !self.basis_centers.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "basis centers must be strictly increasing".into(),
            ));
        }
        if self.basis_width <= 0.0 || self.spring_k <= 0.0 || self.damping_c <= 0.0 {
            return Err(Error::InvalidConfig(
                "basis_width, spring_k, damping_c must be positive".into(),
            ));
        }
        let crit = 2.0 * self.spring_k.sqrt();
        if (self.damping_c - crit).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "damping must be critically damped (c = 2*sqrt(k) = {crit}), got {}",
                self.damping_c
            )));
        }
        Ok(())
    }
}

/// Policy parameters: 21 reals in [0, 1] (3 basis weights per joint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorParams(Vec<f64>);

impl MotorParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_PARAMS {
            return Err(Error::DimensionMismatch {
                expected: N_PARAMS,
                got: values.len(),
            });
        }
        Ok(MotorParams(
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        ))
    }

    pub fn uniform(rng: &mut impl Rng) -> Self {
        MotorParams((0..N_PARAMS).map(|_| rng.gen::<f64>()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmGeometry {
    pub link_lengths: Vec<f64>,
    pub base: [f64; 2],
}

impl Default for ArmGeometry {
    fn default() -> Self {
        ArmGeometry {
            link_lengths: vec![1.0 / 7.0; 7],
            base: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueState {
    pub env_kind: EnvKind,
    pub object_pos: [f64; 2],
    /// In [0, 2pi); meaningful for ArmArrow only.
    pub object_angle: f64,
    pub held: bool,
}

impl TrueState {
    pub fn initial(env_kind: EnvKind) -> Self {
        TrueState {
            env_kind,
            object_pos: INITIAL_POS,
            object_angle: 0.0,
            held: false,
        }
    }
}

/// 70x70 grayscale frame, values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage(pub Array2<f64>);

impl RawImage {
    pub fn zeros() -> Self {
        RawImage(Array2::zeros((IMG_SIZE, IMG_SIZE)))
    }

    pub fn flat(&self) -> ndarray::ArrayView1<'_, f64> {
        self.0.view().into_shape_with_order(N_PIXELS).unwrap()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.flat().to_vec()
    }
}

/// Rolls the DMP out to an n_steps x n_joints matrix of joint angles,
/// clamped to [-pi, pi]. Params 0.5 map to zero forcing (rest posture).
pub fn dmp_rollout(params: &MotorParams, cfg: &DmpConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if params.values().len() != cfg.n_joints * cfg.n_basis {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_joints * cfg.n_basis,
            got: params.values().len(),
        });
    }
    let mut traj = Array2::zeros((cfg.n_steps, cfg.n_joints));
    let mut y = vec![0.0; cfg.n_joints];
    let mut v = vec![0.0; cfg.n_joints];
    for t in 0..cfg.n_steps {
        let s = t as f64 / (cfg.n_steps - 1) as f64;
        for j in 0..cfg.n_joints {
            let mut f = 0.0;
            for b in 0..cfg.n_basis {
                let w = cfg.weight_scale * (2.0 * params.values()[j * cfg.n_basis + b] - 1.0);
                let d = (s - cfg.basis_centers[b]) / cfg.basis_width;
                f += w * (-0.5 * d * d).exp();
            }
            let a = -cfg.spring_k * y[j] - cfg.damping_c * v[j] + f;
            v[j] += a * DT;
            y[j] = (y[j] + v[j] * DT).clamp(-std::f64::consts::PI, std::f64::consts::PI);
            traj[[t, j]] = y[j];
        }
    }
    Ok(traj)
}

/// Tip position of the open chain: sum of link vectors at cumulative angles.
pub fn forward_kinematics(angles: &[f64], geom: &ArmGeometry) -> [f64; 2] {
    let mut acc = 0.0;
    let mut x = geom.base[0];
    let mut y = geom.base[1];
    for (a, l) in angles.iter().zip(&geom.link_lengths) {
        acc += a;
        x += l * acc.cos();
        y += l * acc.sin();
    }
    [x, y]
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a.rem_euclid(two_pi)
}

/// Runs one episode: rollout, sticky-grab check at each step, final render.
/// Fully deterministic in (env_kind, params, cfg, geom).
pub fn run_episode(
    env_kind: EnvKind,
    params: &MotorParams,
    cfg: &DmpConfig,
    geom: &ArmGeometry,
) -> Result<(TrueState, RawImage, bool)> {
    let traj = dmp_rollout(params, cfg)?;
    let mut state = TrueState::initial(env_kind);
    let mut prev_tip = forward_kinematics(&vec![0.0; cfg.n_joints], geom);
    for t in 0..cfg.n_steps {
        let tip = forward_kinematics(traj.row(t).as_slice().unwrap(), geom);
        if !state.held {
            let dx = tip[0] - state.object_pos[0];
            let dy = tip[1] - state.object_pos[1];
            if (dx * dx + dy * dy).sqrt() <= GRAB_RADIUS {
                state.held = true;
            }
        }
        if state.held {
            state.object_pos = tip;
            if env_kind == EnvKind::ArmArrow {
                let dx = tip[0] - prev_tip[0];
                let dy = tip[1] - prev_tip[1];
                if dx != 0.0 || dy != 0.0 {
                    state.object_angle = wrap_angle(dy.atan2(dx));
                }
            }
        }
        prev_tip = tip;
    }
    let handled = state.held;
    let image = render_scene(env_kind, &state);
    Ok((state, image, handled))
}

/// Rasterizes the object (never the arm): ArmBall as an antialiased disk of
/// pixel radius `BALL_RADIUS_PX`, ArmArrow as an isosceles triangle of the
/// same bounding radius rotated by the object angle.
pub fn render_scene(env_kind: EnvKind, state: &TrueState) -> RawImage {
    let ccol = PIXEL_OFFSET + PIXEL_SCALE * state.object_pos[0];
    let crow = PIXEL_OFFSET - PIXEL_SCALE * state.object_pos[1];
    let mut img = RawImage::zeros();
    match env_kind {
        EnvKind::ArmBall => {
            for r in 0..IMG_SIZE {
                for c in 0..IMG_SIZE {
                    let dx = c as f64 + 0.5 - ccol;
                    let dy = r as f64 + 0.5 - crow;
                    let d = (dx * dx + dy * dy).sqrt();
                    img.0[[r, c]] = (BALL_RADIUS_PX + 0.5 - d).clamp(0.0, 1.0);
                }
            }
        }
        EnvKind::ArmArrow => {
            // Nose at the object angle, two tail corners 140 deg off: a
            // single symmetry axis, so a pi rotation stays distinguishable.
            let spread = 140.0_f64.to_radians();
            let verts: Vec<[f64; 2]> = [0.0, spread, -spread]
                .iter()
                .map(|off| {
                    let a = state.object_angle + off;
                    // world y up, pixel row down
                    [
                        ccol + BALL_RADIUS_PX * a.cos(),
                        crow - BALL_RADIUS_PX * a.sin(),
                    ]
                })
                .collect();
            for r in 0..IMG_SIZE {
                for c in 0..IMG_SIZE {
                    let p = [c as f64 + 0.5, r as f64 + 0.5];
                    let sd = triangle_sdf(p, &verts);
                    img.0[[r, c]] = (0.5 - sd).clamp(0.0, 1.0);
                }
            }
        }
    }
    img
}

/// Signed distance from `p` to the triangle: negative inside.
fn triangle_sdf(p: [f64; 2], v: &[[f64; 2]]) -> f64 {
    let mut min_d2 = f64::INFINITY;
    let mut all_pos = true;
    let mut all_neg = true;
    for i in 0..3 {
        let a = v[i];
        let b = v[(i + 1) % 3];
        let e = [b[0] - a[0], b[1] - a[1]];
        let w = [p[0] - a[0], p[1] - a[1]];
        let t = ((w[0] * e[0] + w[1] * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        let dx = w[0] - t * e[0];
        let dy = w[1] - t * e[1];
        min_d2 = min_d2.min(dx * dx + dy * dy);
        let cross = e[0] * w[1] - e[1] * w[0];
        all_pos &= cross >= 0.0;
        all_neg &= cross <= 0.0;
    }
    let d = min_d2.sqrt();
    if all_pos || all_neg {
        -d
    } else {
        d
    }
}

/// Passive-observation sampler: object placed uniformly over [-1, 1]^2
/// (times [0, 2pi) for ArmArrow), rendered without running the arm.
pub fn sample_observation(env_kind: EnvKind, rng: &mut impl Rng) -> (TrueState, RawImage) {
    let state = TrueState {
        env_kind,
        object_pos: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        object_angle: match env_kind {
            EnvKind::ArmBall => 0.0,
            EnvKind::ArmArrow => rng.gen_range(0.0..2.0 * std::f64::consts::PI),
        },
        held: false,
    };
    let image = render_scene(env_kind, &state);
    (state, image)
}

/// Stacks n observation images into an (n x 4900) dataset plus the states.
pub fn observation_dataset(
    env_kind: EnvKind,
    n: usize,
    seed: u64,
) -> (Vec<TrueState>, Array2<f64>) {
    let mut images = Array2::zeros((n, N_PIXELS));
    let mut states = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = crate::rng::stream_rng(seed, i as u64);
        let (state, img) = sample_observation(env_kind, &mut rng);
        images.row_mut(i).assign(&img.flat());
        states.push(state);
    }
    (states, images)
}

pub fn image_from_flat(v: &Array1<f64>) -> RawImage {
    RawImage(
        v.clone()
            .into_shape_with_order((IMG_SIZE, IMG_SIZE))
            .unwrap(),
    )
}
