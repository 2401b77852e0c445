//! Isomap embedding: kappa-nearest-neighbor graph, per-node Dijkstra
//! geodesics, classical MDS on the squared geodesic matrix. Out-of-sample
//! images are embedded by nearest-training-image lookup.

use super::Dataset;
use crate::error::Error;
use crate::linalg;
use crate::Result;
use ndarray::{Array2, ArrayView1, ArrayView2};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
pub struct IsomapModel {
    pub train_images: Array2<f64>,
    pub embedding: Array2<f64>,
    train_sq_norms: Vec<f64>,
}

impl IsomapModel {
    pub fn from_parts(train_images: Array2<f64>, embedding: Array2<f64>) -> Self {
        let train_sq_norms = train_images
            .rows()
            .into_iter()
            .map(|r| r.dot(&r))
            .collect();
        IsomapModel {
            train_images,
            embedding,
            train_sq_norms,
        }
    }

    pub fn encode(&self, image: &ArrayView1<f64>) -> Vec<f64> {
        let prods = self.train_images.dot(image);
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.train_images.nrows() {
            let d2 = self.train_sq_norms[i] - 2.0 * prods[i];
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        self.embedding.row(best).to_vec()
    }
}

/// Pairwise Euclidean distances via the Gram expansion
/// d2(i,j) = |xi|^2 + |xj|^2 - 2 xi.xj, floored at 0.
fn pairwise_distances(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let gram = x.dot(&x.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let d2 = gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]];
            d[[i, j]] = d2.max(0.0).sqrt();
        }
    }
    d
}

struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance (distances are finite)
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then(other.node.cmp(&self.node))
    }
}

/// Symmetrized kappa-NN adjacency (union of directed neighborhoods).
fn knn_graph(dist: &Array2<f64>, kappa: usize) -> Vec<Vec<(usize, f64)>> {
    let n = dist.nrows();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[[i, a]].partial_cmp(&dist[[i, b]]).unwrap());
        for &j in order.iter().take(kappa) {
            let w = dist[[i, j]];
            if !adj[i].iter().any(|&(k, _)| k == j) {
                adj[i].push((j, w));
            }
            if !adj[j].iter().any(|&(k, _)| k == i) {
                adj[j].push((i, w));
            }
        }
    }
    adj
}

fn count_components(adj: &[Vec<(usize, f64)>]) -> usize {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut components = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    components
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// All-pairs geodesics over the kappa-NN graph; errors if disconnected.
pub fn geodesic_distances(x: &ArrayView2<f64>, kappa: usize) -> Result<Array2<f64>> {
    let eucl = pairwise_distances(x);
    let adj = knn_graph(&eucl, kappa);
    let components = count_components(&adj);
    if components > 1 {
        return Err(Error::DisconnectedGraph { components });
    }
    let n = x.nrows();
    let mut geo = Array2::zeros((n, n));
    for s in 0..n {
        let row = dijkstra(&adj, s);
        for (j, &v) in row.iter().enumerate() {
            geo[[s, j]] = v;
        }
    }
    Ok(geo)
}

/// Classical MDS: double-centered squared distances, top-l eigenpairs,
/// coordinates v_k * sqrt(lambda_k). Non-positive eigenvalues give zero
/// coordinates.
pub fn classical_mds(geo: &ArrayView2<f64>, l: usize) -> Result<Array2<f64>> {
    let n = geo.nrows();
    let sq = geo.mapv(|v| v * v);
    let row_mean = sq.mean_axis(ndarray::Axis(1)).unwrap();
    let grand = row_mean.mean().unwrap();
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            b[[i, j]] = -0.5 * (sq[[i, j]] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let (vals, vecs) = linalg::sym_eig_topl(&b.view(), l)?;
    let mut emb = Array2::zeros((n, l));
    for c in 0..l {
        if vals[c] > 0.0 {
            let s = vals[c].sqrt();
            for i in 0..n {
                emb[[i, c]] = vecs[[i, c]] * s;
            }
        }
    }
    Ok(emb)
}

pub fn fit_isomap(data: &Dataset, l: usize, kappa: usize) -> Result<IsomapModel> {
    let n = data.n();
    if l > n {
        return Err(Error::LatentTooLarge {
            l,
            n,
            d: data.dim(),
        });
    }
    let geo = geodesic_distances(&data.images.view(), kappa)?;
    let embedding = classical_mds(&geo.view(), l)?;
    Ok(IsomapModel::from_parts(data.images.clone(), embedding))
}
