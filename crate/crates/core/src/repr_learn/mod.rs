//! Embedding learners mapping flattened scene images to l-dimensional
//! outcome vectors: PCA, Isomap, and dense autoencoder variants (plain AE,
//! VAE, VAE with a radial-flow posterior) trained by hand-written
//! reverse-mode differentiation.

pub mod dense;
pub mod flows;
pub mod isomap;
pub mod pca;
pub mod train;

pub use isomap::fit_isomap;
pub use pca::fit_pca;
pub use train::{fit_neural, TrainConfig};

use crate::error::Error;
use crate::Result;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Flattened image rows in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Array2<f64>,
}

impl Dataset {
    pub fn new(images: Array2<f64>) -> Result<Self> {
        if images.nrows() < 2 {
            return Err(Error::EmptyInput("dataset needs at least 2 images"));
        }
        if !images.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "dataset pixels must lie in [0, 1]".into(),
            ));
        }
        Ok(Dataset { images })
    }

    pub fn n(&self) -> usize {
        self.images.nrows()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Pca,
    Isomap,
    Ae,
    Vae,
    Rfvae,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Pca => "pca",
            Variant::Isomap => "isomap",
            Variant::Ae => "ae",
            Variant::Vae => "vae",
            Variant::Rfvae => "rfvae",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(Variant::Pca),
            "isomap" => Ok(Variant::Isomap),
            "ae" => Ok(Variant::Ae),
            "vae" => Ok(Variant::Vae),
            "rfvae" => Ok(Variant::Rfvae),
            other => Err(Error::UnknownName(other.to_string(), "variant")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingModel {
    Pca(pca::PcaModel),
    Isomap(isomap::IsomapModel),
    Neural(dense::NeuralModel),
}

impl EmbeddingModel {
    pub fn variant(&self) -> Variant {
        match self {
            EmbeddingModel::Pca(_) => Variant::Pca,
            EmbeddingModel::Isomap(_) => Variant::Isomap,
            EmbeddingModel::Neural(m) => m.variant,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            EmbeddingModel::Pca(m) => m.components.ncols(),
            EmbeddingModel::Isomap(m) => m.embedding.ncols(),
            EmbeddingModel::Neural(m) => m.latent,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EmbeddingModel::Pca(m) => m.mean.len(),
            EmbeddingModel::Isomap(m) => m.train_images.ncols(),
            EmbeddingModel::Neural(m) => m.net.input_dim,
        }
    }

    /// Deterministic embedding of one flattened image.
    pub fn encode(&self, image: &ArrayView1<f64>) -> Result<Vec<f64>> {
        if image.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: image.len(),
            });
        }
        Ok(match self {
            EmbeddingModel::Pca(m) => m.encode(image),
            EmbeddingModel::Isomap(m) => m.encode(image),
            EmbeddingModel::Neural(m) => m.encode(image),
        })
    }
}
