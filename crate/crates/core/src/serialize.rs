//! On-disk formats: the versioned binary model container, JSON-lines
//! exploration histories, the CSV emitters, and PGM image export.
//!
//! Model container layout: 4 magic bytes, u16 version, u8 model tag, then
//! tagged sections. Each section is [tag: u8][kind: u8][count: u64][payload]
//! where kind 0 holds u64 values and kind 1 holds f64 values, everything
//! little-endian.

use crate::arm_env::{RawImage, IMG_SIZE};
use crate::error::Error;
use crate::explorer::{EpochLogRow, HistoryEntry};
use crate::goal_policy::KdeModel;
use crate::repr_learn::dense::{DenseNet, Linear, NeuralModel};
use crate::repr_learn::flows::{FlowChain, RadialFlow};
use crate::repr_learn::isomap::IsomapModel;
use crate::repr_learn::pca::PcaModel;
use crate::repr_learn::train::LossRow;
use crate::repr_learn::{EmbeddingModel, Variant};
use crate::Result;
use ndarray::{Array1, Array2};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MODEL_MAGIC: [u8; 4] = *b"GSMD";
pub const MODEL_VERSION: u16 = 1;

const TAG_PCA: u8 = 0;
const TAG_ISOMAP: u8 = 1;
const TAG_AE: u8 = 2;
const TAG_VAE: u8 = 3;
const TAG_RFVAE: u8 = 4;
const TAG_KDE: u8 = 5;

const SEC_DIMS: u8 = 0;
const SEC_MEAN: u8 = 1;
const SEC_COMPONENTS: u8 = 2;
const SEC_EIGENVALUES: u8 = 3;
const SEC_TRAIN_IMAGES: u8 = 4;
const SEC_EMBEDDING: u8 = 5;
const SEC_WEIGHTS: u8 = 6;
const SEC_FLOW_ALPHA: u8 = 7;
const SEC_FLOW_BETA: u8 = 8;
const SEC_FLOW_C: u8 = 9;
const SEC_SAMPLES: u8 = 10;
const SEC_BANDWIDTH: u8 = 11;

enum Section {
    U64s(Vec<u64>),
    F64s(Vec<f64>),
}

/// Either kind of model travels in the same container.
#[derive(Debug, Clone)]
pub enum SavedModel {
    Embedding(EmbeddingModel),
    Kde(KdeModel),
}

struct ContainerWriter {
    out: BufWriter<File>,
}

impl ContainerWriter {
    fn create(path: &Path, tag: u8) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&MODEL_MAGIC)
            .and_then(|_| out.write_all(&MODEL_VERSION.to_le_bytes()))
            .and_then(|_| out.write_all(&[tag]))
            .map_err(|e| Error::io(path, e))?;
        Ok(ContainerWriter { out })
    }

    fn section_u64(&mut self, tag: u8, values: &[u64]) -> std::io::Result<()> {
        self.out.write_all(&[tag, 0])?;
        self.out.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn section_f64(&mut self, tag: u8, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
        let values: Vec<f64> = values.into_iter().collect();
        self.out.write_all(&[tag, 1])?;
        self.out.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn read_sections(path: &Path) -> Result<(u8, Vec<(u8, Section)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::BadModelFile("missing magic bytes".into()))?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadModelFile("wrong magic bytes".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)
        .map_err(|_| Error::BadModelFile("missing version".into()))?;
    let version = u16::from_le_bytes(v);
    if version != MODEL_VERSION {
        return Err(Error::BadModelFile(format!(
            "unsupported version {version}"
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::BadModelFile("missing model tag".into()))?;

    let mut sections = Vec::new();
    loop {
        let mut head = [0u8; 2];
        match r.read_exact(&mut head) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(_) => return Err(Error::BadModelFile("truncated section header".into())),
        }
        let mut cnt = [0u8; 8];
        r.read_exact(&mut cnt)
            .map_err(|_| Error::BadModelFile("truncated section count".into()))?;
        let count = u64::from_le_bytes(cnt) as usize;
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::BadModelFile("truncated section payload".into()))?;
        let section = match head[1] {
            0 => Section::U64s(
                buf.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => Section::F64s(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            k => return Err(Error::BadModelFile(format!("unknown section kind {k}"))),
        };
        sections.push((head[0], section));
    }
    Ok((tag[0], sections))
}

fn take_f64s(sections: &[(u8, Section)], tag: u8) -> Result<Vec<f64>> {
    sections
        .iter()
        .find_map(|(t, s)| match (t, s) {
            (t, Section::F64s(v)) if *t == tag => Some(v.clone()),
            _ => None,
        })
        .ok_or_else(|| Error::BadModelFile(format!("missing float section {tag}")))
}

fn take_u64s(sections: &[(u8, Section)], tag: u8) -> Result<Vec<u64>> {
    sections
        .iter()
        .find_map(|(t, s)| match (t, s) {
            (t, Section::U64s(v)) if *t == tag => Some(v.clone()),
            _ => None,
        })
        .ok_or_else(|| Error::BadModelFile(format!("missing dims section {tag}")))
}

fn shape2(values: Vec<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if values.len() != rows * cols {
        return Err(Error::BadModelFile(format!(
            "section holds {} values, expected {}x{}",
            values.len(),
            rows,
            cols
        )));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).unwrap())
}

/// Fixed flattening order for every dense-net parameter. The loader reads
/// them back in the same order.
fn net_weights(net: &DenseNet) -> Vec<f64> {
    let layers: Vec<&Linear> = match net.logvar.as_ref() {
        Some(lv) => vec![
            &net.enc1, &net.enc2, &net.mu, lv, &net.dec1, &net.dec2, &net.dec3,
        ],
        None => vec![&net.enc1, &net.enc2, &net.mu, &net.dec1, &net.dec2, &net.dec3],
    };
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.w.iter().copied());
        out.extend(l.b.iter().copied());
    }
    out
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let io = |e| Error::io(path, e);
    match model {
        SavedModel::Embedding(EmbeddingModel::Pca(m)) => {
            let mut w = ContainerWriter::create(path, TAG_PCA)?;
            let d = m.mean.len() as u64;
            let l = m.components.ncols() as u64;
            w.section_u64(SEC_DIMS, &[d, l]).map_err(io)?;
            w.section_f64(SEC_MEAN, m.mean.iter().copied()).map_err(io)?;
            w.section_f64(SEC_COMPONENTS, m.components.iter().copied())
                .map_err(io)?;
            w.section_f64(SEC_EIGENVALUES, m.eigenvalues.iter().copied())
                .map_err(io)?;
            w.out.flush().map_err(io)
        }
        SavedModel::Embedding(EmbeddingModel::Isomap(m)) => {
            let mut w = ContainerWriter::create(path, TAG_ISOMAP)?;
            let (n, d) = (m.train_images.nrows() as u64, m.train_images.ncols() as u64);
            let l = m.embedding.ncols() as u64;
            w.section_u64(SEC_DIMS, &[n, d, l]).map_err(io)?;
            w.section_f64(SEC_TRAIN_IMAGES, m.train_images.iter().copied())
                .map_err(io)?;
            w.section_f64(SEC_EMBEDDING, m.embedding.iter().copied())
                .map_err(io)?;
            w.out.flush().map_err(io)
        }
        SavedModel::Embedding(EmbeddingModel::Neural(m)) => {
            let tag = match m.variant {
                Variant::Ae => TAG_AE,
                Variant::Vae => TAG_VAE,
                Variant::Rfvae => TAG_RFVAE,
                _ => unreachable!("neural model variant"),
            };
            let mut w = ContainerWriter::create(path, tag)?;
            let n_flows = m.flows.as_ref().map(|c| c.flows.len()).unwrap_or(0) as u64;
            w.section_u64(
                SEC_DIMS,
                &[
                    m.net.input_dim as u64,
                    m.net.hidden.0 as u64,
                    m.net.hidden.1 as u64,
                    m.latent as u64,
                    m.net.logvar.is_some() as u64,
                    n_flows,
                ],
            )
            .map_err(io)?;
            w.section_f64(SEC_WEIGHTS, net_weights(&m.net)).map_err(io)?;
            if let Some(chain) = m.flows.as_ref() {
                w.section_f64(SEC_FLOW_ALPHA, chain.flows.iter().map(|f| f.alpha_raw))
                    .map_err(io)?;
                w.section_f64(SEC_FLOW_BETA, chain.flows.iter().map(|f| f.beta_raw))
                    .map_err(io)?;
                w.section_f64(
                    SEC_FLOW_C,
                    chain.flows.iter().flat_map(|f| f.c.iter().copied().collect::<Vec<_>>()),
                )
                .map_err(io)?;
            }
            w.out.flush().map_err(io)
        }
        SavedModel::Kde(m) => {
            let mut w = ContainerWriter::create(path, TAG_KDE)?;
            let (n, d) = (m.samples.nrows() as u64, m.samples.ncols() as u64);
            w.section_u64(SEC_DIMS, &[n, d]).map_err(io)?;
            w.section_f64(SEC_SAMPLES, m.samples.iter().copied())
                .map_err(io)?;
            w.section_f64(SEC_BANDWIDTH, m.bandwidth.iter().copied())
                .map_err(io)?;
            w.out.flush().map_err(io)
        }
    }
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let (tag, sections) = read_sections(path)?;
    match tag {
        TAG_PCA => {
            let dims = take_u64s(&sections, SEC_DIMS)?;
            let (d, l) = (dims[0] as usize, dims[1] as usize);
            let mean = Array1::from_vec(take_f64s(&sections, SEC_MEAN)?);
            let components = shape2(take_f64s(&sections, SEC_COMPONENTS)?, d, l)?;
            let eigenvalues = take_f64s(&sections, SEC_EIGENVALUES)?;
            Ok(SavedModel::Embedding(EmbeddingModel::Pca(PcaModel {
                mean,
                components,
                eigenvalues,
            })))
        }
        TAG_ISOMAP => {
            let dims = take_u64s(&sections, SEC_DIMS)?;
            let (n, d, l) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
            let train = shape2(take_f64s(&sections, SEC_TRAIN_IMAGES)?, n, d)?;
            let embedding = shape2(take_f64s(&sections, SEC_EMBEDDING)?, n, l)?;
            Ok(SavedModel::Embedding(EmbeddingModel::Isomap(
                IsomapModel::from_parts(train, embedding),
            )))
        }
        TAG_AE | TAG_VAE | TAG_RFVAE => {
            let variant = match tag {
                TAG_AE => Variant::Ae,
                TAG_VAE => Variant::Vae,
                _ => Variant::Rfvae,
            };
            let dims = take_u64s(&sections, SEC_DIMS)?;
            let [input, h1, h2, latent, with_logvar, n_flows] = dims.as_slice() else {
                return Err(Error::BadModelFile("neural dims need 6 entries".into()));
            };
            let (input, h1, h2, latent) =
                (*input as usize, *h1 as usize, *h2 as usize, *latent as usize);
            let weights = take_f64s(&sections, SEC_WEIGHTS)?;
            let mut shapes = vec![(input, h1), (h1, h2), (h2, latent)];
            if *with_logvar == 1 {
                shapes.push((h2, latent));
            }
            shapes.extend([(latent, h2), (h2, h1), (h1, input)]);
            let mut cursor = 0usize;
            let mut layers = Vec::new();
            for (i, o) in shapes {
                let wlen = i * o;
                if cursor + wlen + o > weights.len() {
                    return Err(Error::BadModelFile("weight section too short".into()));
                }
                let w = shape2(weights[cursor..cursor + wlen].to_vec(), i, o)?;
                cursor += wlen;
                let b = Array1::from_vec(weights[cursor..cursor + o].to_vec());
                cursor += o;
                layers.push(Linear { w, b });
            }
            if cursor != weights.len() {
                return Err(Error::BadModelFile("weight section too long".into()));
            }
            let mut it = layers.into_iter();
            let enc1 = it.next().unwrap();
            let enc2 = it.next().unwrap();
            let mu = it.next().unwrap();
            let logvar = (*with_logvar == 1).then(|| it.next().unwrap());
            let dec1 = it.next().unwrap();
            let dec2 = it.next().unwrap();
            let dec3 = it.next().unwrap();
            let net = DenseNet {
                input_dim: input,
                hidden: (h1, h2),
                latent,
                enc1,
                enc2,
                mu,
                logvar,
                dec1,
                dec2,
                dec3,
            };
            let flows = if *n_flows > 0 {
                let alphas = take_f64s(&sections, SEC_FLOW_ALPHA)?;
                let betas = take_f64s(&sections, SEC_FLOW_BETA)?;
                let cs = take_f64s(&sections, SEC_FLOW_C)?;
                if alphas.len() != *n_flows as usize || cs.len() != *n_flows as usize * latent {
                    return Err(Error::BadModelFile("flow sections inconsistent".into()));
                }
                Some(FlowChain {
                    flows: (0..*n_flows as usize)
                        .map(|k| RadialFlow {
                            alpha_raw: alphas[k],
                            beta_raw: betas[k],
                            c: Array1::from_vec(cs[k * latent..(k + 1) * latent].to_vec()),
                        })
                        .collect(),
                })
            } else {
                None
            };
            Ok(SavedModel::Embedding(EmbeddingModel::Neural(NeuralModel {
                variant,
                net,
                flows,
                latent,
            })))
        }
        TAG_KDE => {
            let dims = take_u64s(&sections, SEC_DIMS)?;
            let (n, d) = (dims[0] as usize, dims[1] as usize);
            let samples = shape2(take_f64s(&sections, SEC_SAMPLES)?, n, d)?;
            let bandwidth = shape2(take_f64s(&sections, SEC_BANDWIDTH)?, d, d)?;
            Ok(SavedModel::Kde(KdeModel::from_parts(samples, bandwidth)?))
        }
        t => Err(Error::BadModelFile(format!("unknown model tag {t}"))),
    }
}

pub fn write_history_jsonl(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in history {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_jsonl(path: &Path) -> Result<Vec<HistoryEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Decimal text for CSV cells; Display for f64 is the shortest form that
/// round-trips exactly, which keeps reruns byte-identical.
fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["update_index", "total", "reconstruction", "kl", "logdet"])?;
    for r in rows {
        w.write_record([
            r.update.to_string(),
            fmt(r.total),
            fmt(r.recon),
            fmt(r.kl),
            fmt(r.logdet),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlcRow {
    pub epoch: usize,
    pub klc: f64,
    pub handled_cumulative: u64,
}

pub fn write_klc_csv(path: &Path, rows: &[KlcRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["epoch", "klc", "handled_cumulative"])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            fmt(r.klc),
            r.handled_cumulative.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    idx: usize,
) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| {
        Error::MalformedCsv(format!("{}: missing column {idx}", path.display()))
    })?;
    raw.parse().map_err(|_| {
        Error::MalformedCsv(format!(
            "{}: bad value `{raw}` in column {idx}",
            path.display()
        ))
    })
}

pub fn read_klc_csv(path: &Path) -> Result<Vec<KlcRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(KlcRow {
            epoch: csv_field(path, &rec, 0)?,
            klc: csv_field(path, &rec, 1)?,
            handled_cumulative: csv_field(path, &rec, 2)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRow {
    pub episode: usize,
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub handled: bool,
}

pub fn read_true_states_csv(path: &Path) -> Result<Vec<StateRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(StateRow {
            episode: csv_field(path, &rec, 0)?,
            x: csv_field(path, &rec, 1)?,
            y: csv_field(path, &rec, 2)?,
            angle: csv_field(path, &rec, 3)?,
            handled: csv_field(path, &rec, 4)?,
        });
    }
    Ok(rows)
}

pub fn write_epoch_log_csv(path: &Path, rows: &[EpochLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["epoch", "x", "y", "angle", "handled", "goal"])?;
    for r in rows {
        let goal = r
            .goal
            .as_ref()
            .map(|g| g.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        w.write_record([
            r.epoch.to_string(),
            fmt(r.x),
            fmt(r.y),
            fmt(r.angle),
            r.handled.to_string(),
            goal,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_true_states_csv(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["episode", "x", "y", "angle", "handled"])?;
    for e in history {
        w.write_record([
            e.epoch.to_string(),
            fmt(e.true_state.object_pos[0]),
            fmt(e.true_state.object_pos[1]),
            fmt(e.true_state.object_angle),
            e.handled.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Binary PGM (P5), 8-bit, for eyeballing rendered scenes.
pub fn write_pgm(path: &Path, image: &RawImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{IMG_SIZE} {IMG_SIZE}\n255\n").map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = image
        .flat()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
