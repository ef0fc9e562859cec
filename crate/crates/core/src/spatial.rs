//! Spatial encoder: message passing over the simplicial complex of a series.
//!
//! Each sample gets its own complex. Simplexes start from the mean of their
//! constituent vertex patches, pass messages through a degree-normalized
//! adjacency with self-loops, and each dimension level is mean-pooled into
//! one vector. The spatial representation concatenates the level vectors;
//! a level with no simplexes contributes zeros.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::simplicial::{
    adjacency, build_rips_from_similarity, cutoff_from_percentile, patch, similarity_matrix,
    AdjacencyMatrix, ComplexError, PointCloud, SimplicialComplex,
};
use crate::tensor::{fill_xavier, Param, Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("message passing needs at least one layer")]
    NoLayers,
    #[error("spatial encoder needs at least dimension level 0")]
    NoLevels,
    #[error(transparent)]
    Complex(#[from] ComplexError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How the edge threshold is chosen for each sample's complex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffRule {
    /// Keep the top `q` fraction of pair similarities (per sample).
    TopFraction(f64),
    /// Use one fixed similarity threshold for every sample.
    Fixed(f64),
}

/// Mean of the constituent vertex patches for every k-simplex;
/// shape: simplex count x patch length. Gradients never flow through this.
pub fn initial_features(
    complex: &SimplicialComplex,
    cloud: &PointCloud,
    k: usize,
) -> Result<Tensor, ComplexError> {
    let simplexes = complex.simplices(k)?;
    let width = cloud.patch_len;
    let mut data = Vec::with_capacity(simplexes.len() * width);
    for simplex in &simplexes {
        let mut mean = vec![0.0; width];
        for &v in simplex {
            for (m, &value) in mean.iter_mut().zip(&cloud.points[v]) {
                *m += value;
            }
        }
        for m in mean.iter_mut() {
            *m /= simplex.len() as f64;
        }
        data.extend(mean);
    }
    Ok(Tensor::new(data, vec![simplexes.len(), width]).expect("feature shape"))
}

/// Symmetrically normalized adjacency with self-loops:
/// G = D^(-1/2) (A + I) D^(-1/2) where D holds the row sums of A + I.
pub fn normalized_operator(adj: &AdjacencyMatrix) -> Vec<f64> {
    let m = adj.size;
    let mut hat = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            hat[i * m + j] = adj.get(i, j) as f64;
        }
        hat[i * m + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..m)
        .map(|i| {
            let row_sum: f64 = hat[i * m..(i + 1) * m].iter().sum();
            1.0 / row_sum.sqrt()
        })
        .collect();
    for i in 0..m {
        for j in 0..m {
            hat[i * m + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    hat
}

/// One message passing step: relu(G . H . W).
pub fn message_passing_layer(
    tape: &mut Tape,
    h: TensorId,
    g: TensorId,
    w: TensorId,
) -> Result<TensorId, TensorError> {
    let mixed = tape.matmul(g, h)?;
    let projected = tape.matmul(mixed, w)?;
    Ok(tape.relu(projected))
}

#[derive(Debug, Clone)]
pub struct LevelWeights {
    pub weights: Vec<Param>,
}

/// Parameters of the spatial branch. `levels[k]` holds the message passing
/// stack for k-simplexes; all levels share the layer count and width.
#[derive(Debug, Clone)]
pub struct SpatialEncoder {
    pub dim: usize,
    pub patch_count: usize,
    pub patch_len: usize,
    pub cutoff: CutoffRule,
    pub levels: Vec<LevelWeights>,
}

impl SpatialEncoder {
    /// `level_count` is the number of simplex dimensions used (1..=3 for
    /// vertices, edges, triangles). The first layer maps patch features to
    /// d; later layers are d to d.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        series_len: usize,
        patch_count: usize,
        d: usize,
        layer_count: usize,
        level_count: usize,
        cutoff: CutoffRule,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, SpatialError> {
        if layer_count == 0 {
            return Err(SpatialError::NoLayers);
        }
        if level_count == 0 {
            return Err(SpatialError::NoLevels);
        }
        if level_count > crate::simplicial::MAX_DIMENSION + 1 {
            return Err(SpatialError::Complex(ComplexError::BadMaxDimension(
                level_count - 1,
            )));
        }
        if patch_count == 0 || patch_count > series_len {
            return Err(SpatialError::Complex(ComplexError::PatchCount {
                n: patch_count,
                len: series_len,
            }));
        }
        let patch_len = series_len / patch_count;
        let levels = (0..level_count)
            .map(|k| {
                let weights = (0..layer_count)
                    .map(|layer| {
                        let in_dim = if layer == 0 { patch_len } else { d };
                        let name = format!("spatial.k{k}.mp{layer}.w");
                        let shape = vec![in_dim, d];
                        let mut data = vec![0.0; in_dim * d];
                        fill_xavier(&mut data, &shape, rng);
                        Param { name, shape, data }
                    })
                    .collect();
                LevelWeights { weights }
            })
            .collect();
        Ok(SpatialEncoder {
            dim: d,
            patch_count,
            patch_len,
            cutoff,
            levels,
        })
    }

    /// Concatenated level vectors; length = levels * d.
    pub fn output_dim(&self) -> usize {
        self.levels.len() * self.dim
    }

    pub fn params(&self) -> Vec<&Param> {
        self.levels
            .iter()
            .flat_map(|l| l.weights.iter())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.levels
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut())
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> SpatialIds {
        SpatialIds {
            levels: self
                .levels
                .iter()
                .map(|l| l.weights.iter().map(|w| tape.leaf_param(w)).collect())
                .collect(),
        }
    }

    /// Builds this sample's complex and returns the concatenated pooled
    /// level vectors (rank 1, length levels * d).
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &SpatialIds,
        x: &[f64],
    ) -> Result<TensorId, SpatialError> {
        let complex = self.complex_for(x)?;
        self.forward_with_complex(tape, ids, &complex, x)
    }

    /// The complex this encoder would build for `x`.
    pub fn complex_for(&self, x: &[f64]) -> Result<SimplicialComplex, ComplexError> {
        let cloud = patch(x, self.patch_count)?;
        let sim = similarity_matrix(&cloud);
        let cutoff = match self.cutoff {
            CutoffRule::TopFraction(q) => cutoff_from_percentile(&sim, q)?,
            CutoffRule::Fixed(c) => c,
        };
        build_rips_from_similarity(&sim, cutoff, self.levels.len() - 1)
    }

    pub fn forward_with_complex(
        &self,
        tape: &mut Tape,
        ids: &SpatialIds,
        complex: &SimplicialComplex,
        x: &[f64],
    ) -> Result<TensorId, SpatialError> {
        let cloud = patch(x, self.patch_count)?;
        let mut parts = Vec::with_capacity(self.levels.len());
        for (k, level_ids) in ids.levels.iter().enumerate() {
            let m = complex.simplex_count(k)?;
            if m == 0 {
                parts.push(tape.constant(vec![0.0; self.dim], vec![self.dim])?);
                continue;
            }
            let features = initial_features(complex, &cloud, k)?;
            let mut h = tape.constant(features.data, features.shape)?;
            let adj = adjacency(complex, k)?;
            let g = tape.constant(normalized_operator(&adj), vec![m, m])?;
            for &w in level_ids {
                h = message_passing_layer(tape, h, g, w)?;
            }
            parts.push(tape.mean_rows(h)?);
        }
        Ok(tape.concat_vecs(&parts)?)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialIds {
    pub levels: Vec<Vec<TensorId>>,
}

impl SpatialIds {
    /// Ids in the same order as [`SpatialEncoder::params`].
    pub fn flatten(&self) -> Vec<TensorId> {
        self.levels.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn full_triangle() -> SimplicialComplex {
        SimplicialComplex {
            vertex_count: 3,
            edges: vec![[0, 1], [0, 2], [1, 2]],
            triangles: vec![[0, 1, 2]],
            cutoff: 0.5,
        }
    }

    #[test]
    fn initial_features_average_vertex_patches() {
        let cloud = PointCloud {
            points: vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            patch_len: 2,
        };
        let complex = full_triangle();
        let f0 = initial_features(&complex, &cloud, 0).unwrap();
        assert_eq!(f0.shape, vec![3, 2]);
        assert_eq!(f0.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let f1 = initial_features(&complex, &cloud, 1).unwrap();
        assert_eq!(f1.data[..2], [2.0, 3.0]); // mean of patches 0 and 1
        let f2 = initial_features(&complex, &cloud, 2).unwrap();
        assert_eq!(f2.shape, vec![1, 2]);
        assert_eq!(f2.data, vec![3.0, 4.0]);
    }

    #[test]
    fn normalized_operator_on_regular_graph_has_unit_row_sums() {
        let complex = full_triangle();
        let adj = adjacency(&complex, 0).unwrap();
        let g = normalized_operator(&adj);
        for v in &g {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for i in 0..3 {
            let row_sum: f64 = g[i * 3..(i + 1) * 3].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn message_passing_preserves_constants_on_regular_graphs() {
        // Regular graph + identity weights: relu(G . 1 . I) = 1.
        let complex = full_triangle();
        let adj = adjacency(&complex, 0).unwrap();
        let g_data = normalized_operator(&adj);
        let mut tape = Tape::new();
        let h = tape.constant(vec![1.0; 6], vec![3, 2]).unwrap();
        let g = tape.constant(g_data, vec![3, 3]).unwrap();
        let w = tape
            .leaf(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2], true)
            .unwrap();
        let out = message_passing_layer(&mut tape, h, g, w).unwrap();
        for v in tape.value(out) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    fn test_encoder(cutoff: CutoffRule) -> SpatialEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        SpatialEncoder::new(24, 6, 8, 2, 3, cutoff, &mut rng).unwrap()
    }

    #[test]
    fn forward_concatenates_level_vectors() {
        let enc = test_encoder(CutoffRule::TopFraction(0.4));
        assert_eq!(enc.output_dim(), 24);
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.3).sin()).collect();
        let mut tape = Tape::new();
        let ids = enc.register(&mut tape);
        let out = enc.forward(&mut tape, &ids, &x).unwrap();
        assert_eq!(tape.shape(out), &[24]);
        assert!(tape.value(out).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_levels_contribute_zero_blocks() {
        // A threshold above 1.0 admits no edges: levels 1 and 2 are empty.
        let enc = test_encoder(CutoffRule::Fixed(2.0));
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.3).cos()).collect();
        let mut tape = Tape::new();
        let ids = enc.register(&mut tape);
        let out = enc.forward(&mut tape, &ids, &x).unwrap();
        let values = tape.value(out);
        assert_eq!(values.len(), 24);
        assert!(values[8..].iter().all(|&v| v == 0.0));
        assert!(values[..8].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradients_skip_empty_levels_but_reach_used_weights() {
        let enc = test_encoder(CutoffRule::Fixed(2.0));
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.9).sin()).collect();
        let mut tape = Tape::new();
        let ids = enc.register(&mut tape);
        let out = enc.forward(&mut tape, &ids, &x).unwrap();
        let loss = tape.sum_all(out);
        tape.backward(loss).unwrap();
        // Level 0 weights participate; higher levels were empty so their
        // gradient is identically zero.
        let g0 = tape.grad(ids.levels[0][0]).unwrap();
        assert!(g0.iter().any(|&v| v != 0.0));
        let g1 = tape.grad(ids.levels[1][0]).unwrap();
        assert!(g1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_and_register_stay_aligned() {
        let enc = test_encoder(CutoffRule::TopFraction(0.2));
        let mut tape = Tape::new();
        let ids = enc.register(&mut tape);
        let flat: Vec<TensorId> = ids.levels.iter().flatten().copied().collect();
        let params = enc.params();
        assert_eq!(params.len(), flat.len());
        assert_eq!(params.len(), 6); // 3 levels x 2 layers
        for (p, &id) in params.iter().zip(&flat) {
            assert_eq!(tape.value(id), p.data.as_slice(), "misaligned {}", p.name);
        }
    }
}
