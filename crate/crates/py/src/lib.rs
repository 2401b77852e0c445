//! Python bindings: `import goalspace`. Thin wrappers over the core crate,
//! trading plain lists/tuples for zero extra dependencies on the Python side.

use goalspace_core::arm_env::{self, EnvKind, MotorParams};
use goalspace_core::campaign::{run_campaign, CampaignConfig, TrainingOverrides};
use goalspace_core::repr_learn::{fit_isomap, fit_pca, fit_neural, Dataset, EmbeddingModel, Variant};
use goalspace_core::serialize::{load_model, save_model, SavedModel};
use ndarray::{Array2, ArrayView1};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::Path;
use std::str::FromStr;

fn value_err(e: goalspace_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_env(env: &str) -> PyResult<EnvKind> {
    EnvKind::from_str(env).map_err(value_err)
}

fn images_to_array(images: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = images.len();
    let dim = images.first().map(Vec::len).unwrap_or(0);
    let mut out = Array2::zeros((n, dim));
    for (i, row) in images.into_iter().enumerate() {
        if row.len() != dim {
            return Err(PyValueError::new_err(format!(
                "image {i} has {} pixels, expected {dim}",
                row.len()
            )));
        }
        out.row_mut(i).assign(&ArrayView1::from(&row));
    }
    Ok(out)
}

/// Passive observation stage: n scenes with the object at uniform poses.
/// Returns (images, states); each image is a flat row of 4900 pixels in
/// [0, 1], each state a tuple (x, y, angle).
#[pyfunction]
fn observe(
    py: Python<'_>,
    env: &str,
    n: usize,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<(f64, f64, f64)>)> {
    let env = parse_env(env)?;
    let (states, images) = py.allow_threads(|| arm_env::observation_dataset(env, n, seed));
    let rows = images.rows().into_iter().map(|r| r.to_vec()).collect();
    let tuples = states
        .iter()
        .map(|s| (s.object_pos[0], s.object_pos[1], s.object_angle))
        .collect();
    Ok((rows, tuples))
}

/// Run one motor episode from 21 DMP parameters in [0, 1].
/// Returns ((x, y, angle), image, handled).
#[pyfunction]
fn run_episode(
    py: Python<'_>,
    env: &str,
    params: Vec<f64>,
) -> PyResult<((f64, f64, f64), Vec<f64>, bool)> {
    let env = parse_env(env)?;
    let params = MotorParams::new(params).map_err(value_err)?;
    let (state, image, handled) = py
        .allow_threads(|| {
            arm_env::run_episode(
                env,
                &params,
                &arm_env::DmpConfig::default(),
                &arm_env::ArmGeometry::default(),
            )
        })
        .map_err(value_err)?;
    Ok((
        (state.object_pos[0], state.object_pos[1], state.object_angle),
        image.to_vec(),
        handled,
    ))
}

/// A fitted goal-space embedding (pca | isomap | ae | vae | rfvae).
#[pyclass]
struct Embedding {
    inner: EmbeddingModel,
}

#[pymethods]
impl Embedding {
    #[staticmethod]
    #[pyo3(signature = (variant, images, latent, seed, kappa=10, updates=None, batch_size=None, learning_rate=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        variant: &str,
        images: Vec<Vec<f64>>,
        latent: usize,
        seed: u64,
        kappa: usize,
        updates: Option<usize>,
        batch_size: Option<usize>,
        learning_rate: Option<f64>,
    ) -> PyResult<Embedding> {
        let variant = Variant::from_str(variant).map_err(value_err)?;
        let data = Dataset::new(images_to_array(images)?).map_err(value_err)?;
        let inner = py
            .allow_threads(|| match variant {
                Variant::Pca => Ok(EmbeddingModel::Pca(fit_pca(&data, latent)?)),
                Variant::Isomap => Ok(EmbeddingModel::Isomap(fit_isomap(&data, latent, kappa)?)),
                v => {
                    let overrides = TrainingOverrides {
                        ae_updates: updates,
                        vae_updates: updates,
                        warmup_updates: None,
                        batch_size,
                        learning_rate,
                    };
                    let cfg = overrides.resolve(v, seed);
                    let (model, _) = fit_neural(&data, latent, v, &cfg)?;
                    Ok(EmbeddingModel::Neural(model))
                }
            })
            .map_err(value_err)?;
        Ok(Embedding { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Embedding> {
        match load_model(Path::new(path)).map_err(value_err)? {
            SavedModel::Embedding(inner) => Ok(Embedding { inner }),
            SavedModel::Kde(_) => Err(PyValueError::new_err(
                "file holds a goal policy, not an embedding",
            )),
        }
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(Path::new(path), &SavedModel::Embedding(self.inner.clone())).map_err(value_err)
    }

    fn encode(&self, image: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner
            .encode(&ArrayView1::from(&image))
            .map_err(value_err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant().to_string()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
}

/// Run a campaign described by a JSON config (same schema as the CLI's
/// --config). Returns the manifest as a JSON string.
#[pyfunction]
fn campaign(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: CampaignConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let manifest = py.allow_threads(|| run_campaign(&cfg)).map_err(value_err)?;
    serde_json::to_string_pretty(&manifest).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn goalspace(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Embedding>()?;
    m.add_function(wrap_pyfunction!(observe, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(campaign, m)?)?;
    Ok(())
}
