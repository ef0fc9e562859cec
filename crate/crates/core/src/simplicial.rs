//! Vietoris-Rips style simplicial complexes over time-series patches.
//!
//! A series is cut into equal-length patches (the point cloud), pairwise
//! cosine similarity is thresholded to produce edges, and triangles are the
//! 3-cliques of that edge graph. Levels above dimension 2 are not built.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ComplexError {
    #[error("cannot cut a series of length {len} into {n} patches")]
    PatchCount { n: usize, len: usize },
    #[error("similarity percentile {0} must lie strictly between 0 and 1")]
    BadPercentile(f64),
    #[error("need at least two patches to rank pair similarities, got {n}")]
    NotEnoughPairs { n: usize },
    #[error("simplex dimension {k} exceeds the maximum tracked dimension {max}")]
    BadDimension { k: usize, max: usize },
    #[error("boundary operator is defined for dimensions 1 and 2, got {0}")]
    BadBoundaryDimension(usize),
    #[error("maximum dimension {0} is not supported; this complex tracks at most 2")]
    BadMaxDimension(usize),
}

pub const MAX_DIMENSION: usize = 2;

/// Patches of one series, treated as points in R^{patch_len}.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec<f64>>,
    pub patch_len: usize,
}

/// Cuts `x` into `n` equal patches of length floor(len / n), dropping the
/// trailing remainder.
pub fn patch(x: &[f64], n: usize) -> Result<PointCloud, ComplexError> {
    if n == 0 || n > x.len() {
        return Err(ComplexError::PatchCount { n, len: x.len() });
    }
    let patch_len = x.len() / n;
    let points = (0..n)
        .map(|i| x[i * patch_len..(i + 1) * patch_len].to_vec())
        .collect();
    Ok(PointCloud { points, patch_len })
}

/// Pairwise cosine similarity between patches. The diagonal is exactly 1.
/// A zero-norm patch is treated as dissimilar to everything else.
pub fn similarity_matrix(cloud: &PointCloud) -> Vec<Vec<f64>> {
    let n = cloud.points.len();
    let norms: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| p.iter().map(|&v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        sim[i][i] = 1.0;
        for j in (i + 1)..n {
            let value = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = cloud.points[i]
                    .iter()
                    .zip(&cloud.points[j])
                    .map(|(&a, &b)| a * b)
                    .sum();
                dot / (norms[i] * norms[j])
            } else {
                0.0
            };
            sim[i][j] = value;
            sim[j][i] = value;
        }
    }
    sim
}

/// Similarity value such that the top `q` fraction of off-diagonal pairs lie
/// at or above it. Uses linear interpolation between order statistics
/// (the common "type 7" sample quantile).
pub fn cutoff_from_percentile(sim: &[Vec<f64>], q: f64) -> Result<f64, ComplexError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(ComplexError::BadPercentile(q));
    }
    let n = sim.len();
    if n < 2 {
        return Err(ComplexError::NotEnoughPairs { n });
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push(sim[i][j]);
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("similarities are finite"));
    let p = 1.0 - q;
    let h = (pairs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let value = if lo + 1 < pairs.len() {
        pairs[lo] + frac * (pairs[lo + 1] - pairs[lo])
    } else {
        pairs[lo]
    };
    Ok(value)
}

/// A simplicial complex with simplexes of dimension at most two, each list
/// sorted lexicographically over ascending vertex tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialComplex {
    pub vertex_count: usize,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub cutoff: f64,
}

impl SimplicialComplex {
    pub fn simplex_count(&self, k: usize) -> Result<usize, ComplexError> {
        match k {
            0 => Ok(self.vertex_count),
            1 => Ok(self.edges.len()),
            2 => Ok(self.triangles.len()),
            other => Err(ComplexError::BadDimension {
                k: other,
                max: MAX_DIMENSION,
            }),
        }
    }

    /// Vertex tuples of all k-simplexes, in storage order.
    pub fn simplices(&self, k: usize) -> Result<Vec<Vec<usize>>, ComplexError> {
        match k {
            0 => Ok((0..self.vertex_count).map(|v| vec![v]).collect()),
            1 => Ok(self.edges.iter().map(|e| e.to_vec()).collect()),
            2 => Ok(self.triangles.iter().map(|t| t.to_vec()).collect()),
            other => Err(ComplexError::BadDimension {
                k: other,
                max: MAX_DIMENSION,
            }),
        }
    }

    /// Fraction of vertex pairs that are connected by an edge.
    pub fn edge_density(&self) -> f64 {
        let n = self.vertex_count;
        if n < 2 {
            return 0.0;
        }
        self.edges.len() as f64 / (n * (n - 1) / 2) as f64
    }
}

/// Builds the complex whose edges are vertex pairs with similarity at or
/// above `cutoff` (ties included) and whose triangles are the 3-cliques of
/// that graph. `max_dim` limits which levels are populated.
pub fn build_rips_from_similarity(
    sim: &[Vec<f64>],
    cutoff: f64,
    max_dim: usize,
) -> Result<SimplicialComplex, ComplexError> {
    if max_dim > MAX_DIMENSION {
        return Err(ComplexError::BadMaxDimension(max_dim));
    }
    let n = sim.len();
    let mut edges = Vec::new();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    if max_dim >= 1 {
        for i in 0..n {
            for j in (i + 1)..n {
                if sim[i][j] >= cutoff {
                    edges.push([i, j]);
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
    }
    let mut triangles = Vec::new();
    if max_dim >= 2 {
        // Common neighbors above j keep the enumeration lexicographic and
        // each clique reported once.
        for &[i, j] in &edges {
            let (mut a, mut b) = (0, 0);
            let (ni, nj) = (&neighbors[i], &neighbors[j]);
            while a < ni.len() && b < nj.len() {
                match ni[a].cmp(&nj[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        if ni[a] > j {
                            triangles.push([i, j, ni[a]]);
                        }
                        a += 1;
                        b += 1;
                    }
                }
            }
        }
        triangles.sort_unstable();
    }
    Ok(SimplicialComplex {
        vertex_count: n,
        edges,
        triangles,
        cutoff,
    })
}

/// Patch a series, rank pair similarities, then build the complex using the
/// top `q` fraction of pairs as edges.
pub fn build_complex(
    x: &[f64],
    n: usize,
    q: f64,
    max_dim: usize,
) -> Result<SimplicialComplex, ComplexError> {
    let cloud = patch(x, n)?;
    let sim = similarity_matrix(&cloud);
    let cutoff = cutoff_from_percentile(&sim, q)?;
    build_rips_from_similarity(&sim, cutoff, max_dim)
}

/// Symmetric 0/1 adjacency between k-simplexes with a zero diagonal.
/// Vertices are adjacent through shared edges; higher simplexes are adjacent
/// through a shared face one dimension down.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub size: usize,
    pub entries: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.size + j]
    }
}

pub fn adjacency(complex: &SimplicialComplex, k: usize) -> Result<AdjacencyMatrix, ComplexError> {
    let size = complex.simplex_count(k)?;
    let mut entries = vec![0u8; size * size];
    let mut set = |i: usize, j: usize| {
        entries[i * size + j] = 1;
        entries[j * size + i] = 1;
    };
    match k {
        0 => {
            for &[a, b] in &complex.edges {
                set(a, b);
            }
        }
        1 => {
            for i in 0..complex.edges.len() {
                for j in (i + 1)..complex.edges.len() {
                    let (e, f) = (complex.edges[i], complex.edges[j]);
                    let shares = e.iter().any(|v| f.contains(v));
                    if shares {
                        set(i, j);
                    }
                }
            }
        }
        2 => {
            for i in 0..complex.triangles.len() {
                for j in (i + 1)..complex.triangles.len() {
                    let (s, t) = (complex.triangles[i], complex.triangles[j]);
                    let shared = s.iter().filter(|v| t.contains(v)).count();
                    if shared == 2 {
                        set(i, j);
                    }
                }
            }
        }
        _ => unreachable!("simplex_count rejected the dimension"),
    }
    Ok(AdjacencyMatrix { size, entries })
}

/// Neighbor counts per k-simplex: the row sums of [`adjacency`].
pub fn degree(complex: &SimplicialComplex, k: usize) -> Result<Vec<usize>, ComplexError> {
    let adj = adjacency(complex, k)?;
    Ok((0..adj.size)
        .map(|i| {
            (0..adj.size)
                .map(|j| adj.get(i, j) as usize)
                .sum::<usize>()
        })
        .collect())
}

/// Signed incidence of k-simplexes onto their (k-1)-faces, stored densely
/// with integer entries. Removing the i-th vertex of a simplex contributes
/// sign (-1)^i to that face's row.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<i64>,
}

impl BoundaryMatrix {
    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.entries[i * self.cols + j]
    }

    /// Integer matrix product, used to check boundary-of-boundary vanishing.
    pub fn compose(&self, other: &BoundaryMatrix) -> Vec<i64> {
        assert_eq!(self.cols, other.rows, "boundary dimensions must chain");
        let mut out = vec![0i64; self.rows * other.cols];
        for i in 0..self.rows {
            for p in 0..self.cols {
                let v = self.get(i, p);
                if v == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[i * other.cols + j] += v * other.get(p, j);
                }
            }
        }
        out
    }
}

pub fn boundary_matrix(
    complex: &SimplicialComplex,
    k: usize,
) -> Result<BoundaryMatrix, ComplexError> {
    match k {
        1 => {
            let rows = complex.vertex_count;
            let cols = complex.edges.len();
            let mut entries = vec![0i64; rows * cols];
            for (col, &[a, b]) in complex.edges.iter().enumerate() {
                entries[b * cols + col] = 1; // remove position 0 -> face {b}
                entries[a * cols + col] = -1; // remove position 1 -> face {a}
            }
            Ok(BoundaryMatrix {
                rows,
                cols,
                entries,
            })
        }
        2 => {
            let rows = complex.edges.len();
            let cols = complex.triangles.len();
            let mut entries = vec![0i64; rows * cols];
            for (col, &[a, b, c]) in complex.triangles.iter().enumerate() {
                let faces = [[b, c], [a, c], [a, b]];
                for (i, face) in faces.iter().enumerate() {
                    let row = complex
                        .edges
                        .binary_search(face)
                        .expect("closure: every triangle face is a stored edge");
                    entries[row * cols + col] = if i % 2 == 0 { 1 } else { -1 };
                }
            }
            Ok(BoundaryMatrix {
                rows,
                cols,
                entries,
            })
        }
        other => Err(ComplexError::BadBoundaryDimension(other)),
    }
}
