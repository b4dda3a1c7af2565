//! Parameter tensors of the recommender and their initialization.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{cast_vec, Mat, Scalar};
use crate::corpus::KgTriple;

/// Standard deviation of the Gaussian entity-embedding initialization.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm_gain: Vec<T>,
    pub attn_norm_bias: Vec<T>,
    pub query: Mat<T>,
    pub query_bias: Vec<T>,
    /// No bias: a key bias shifts every score in a softmax row equally.
    pub key: Mat<T>,
    pub value: Mat<T>,
    pub value_bias: Vec<T>,
    pub output: Mat<T>,
    pub output_bias: Vec<T>,
    pub ff_norm_gain: Vec<T>,
    pub ff_norm_bias: Vec<T>,
    /// `4d × d`
    pub ff_in: Mat<T>,
    pub ff_in_bias: Vec<T>,
    /// `d × 4d`
    pub ff_out: Mat<T>,
    pub ff_out_bias: Vec<T>,
}

/// All learned tensors. Field order here is the checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// `(vocab + 1) × d`; the last row is the `[MASK]` token.
    pub entity: Mat<T>,
    /// `(max_sequence_length + 1) × d`
    pub position: Mat<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm_gain: Vec<T>,
    pub final_norm_bias: Vec<T>,
    /// W₁ (`d × d`) and b₁ of the output head.
    pub head_hidden: Mat<T>,
    pub head_hidden_bias: Vec<T>,
    /// W₂ (`item_count × d`) and b₂ of the output head.
    pub head_out: Mat<T>,
    pub head_out_bias: Vec<T>,
}

/// Borrowed view of one named tensor.
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

fn mat_view<'a, T>(name: String, m: &'a Mat<T>) -> TensorView<'a, T> {
    TensorView { name, shape: vec![m.rows, m.cols], data: &m.data }
}

fn vec_view<'a, T>(name: String, v: &'a [T]) -> TensorView<'a, T> {
    TensorView { name, shape: vec![v.len()], data: v }
}

impl<T: Scalar> Params<T> {
    pub fn zeros(vocab: usize, items: usize, dim: usize, layers: usize, max_len: usize) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Self {
            entity: Mat::zeros(vocab + 1, dim),
            position: Mat::zeros(max_len + 1, dim),
            layers: (0..layers)
                .map(|_| LayerParams {
                    attn_norm_gain: z(dim),
                    attn_norm_bias: z(dim),
                    query: Mat::zeros(dim, dim),
                    query_bias: z(dim),
                    key: Mat::zeros(dim, dim),
                    value: Mat::zeros(dim, dim),
                    value_bias: z(dim),
                    output: Mat::zeros(dim, dim),
                    output_bias: z(dim),
                    ff_norm_gain: z(dim),
                    ff_norm_bias: z(dim),
                    ff_in: Mat::zeros(4 * dim, dim),
                    ff_in_bias: z(4 * dim),
                    ff_out: Mat::zeros(dim, 4 * dim),
                    ff_out_bias: z(dim),
                })
                .collect(),
            final_norm_gain: z(dim),
            final_norm_bias: z(dim),
            head_hidden: Mat::zeros(dim, dim),
            head_hidden_bias: z(dim),
            head_out: Mat::zeros(items, dim),
            head_out_bias: z(items),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|t| t.iter_mut().for_each(|v| *v = T::zero()));
        out
    }

    pub fn views(&self) -> Vec<TensorView<'_, T>> {
        let mut v = vec![mat_view("entity".into(), &self.entity), mat_view("position".into(), &self.position)];
        for (l, p) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layer{l}.{s}");
            v.push(vec_view(n("attn_norm_gain"), &p.attn_norm_gain));
            v.push(vec_view(n("attn_norm_bias"), &p.attn_norm_bias));
            v.push(mat_view(n("query"), &p.query));
            v.push(vec_view(n("query_bias"), &p.query_bias));
            v.push(mat_view(n("key"), &p.key));
            v.push(mat_view(n("value"), &p.value));
            v.push(vec_view(n("value_bias"), &p.value_bias));
            v.push(mat_view(n("output"), &p.output));
            v.push(vec_view(n("output_bias"), &p.output_bias));
            v.push(vec_view(n("ff_norm_gain"), &p.ff_norm_gain));
            v.push(vec_view(n("ff_norm_bias"), &p.ff_norm_bias));
            v.push(mat_view(n("ff_in"), &p.ff_in));
            v.push(vec_view(n("ff_in_bias"), &p.ff_in_bias));
            v.push(mat_view(n("ff_out"), &p.ff_out));
            v.push(vec_view(n("ff_out_bias"), &p.ff_out_bias));
        }
        v.push(vec_view("final_norm_gain".into(), &self.final_norm_gain));
        v.push(vec_view("final_norm_bias".into(), &self.final_norm_bias));
        v.push(mat_view("head_hidden".into(), &self.head_hidden));
        v.push(vec_view("head_hidden_bias".into(), &self.head_hidden_bias));
        v.push(mat_view("head_out".into(), &self.head_out));
        v.push(vec_view("head_out_bias".into(), &self.head_out_bias));
        v
    }

    /// Mutable access to every tensor, in the same order as [`Params::views`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = vec![&mut self.entity.data, &mut self.position.data];
        for p in &mut self.layers {
            v.extend([
                &mut p.attn_norm_gain,
                &mut p.attn_norm_bias,
                &mut p.query.data,
                &mut p.query_bias,
                &mut p.key.data,
                &mut p.value.data,
                &mut p.value_bias,
                &mut p.output.data,
                &mut p.output_bias,
                &mut p.ff_norm_gain,
                &mut p.ff_norm_bias,
                &mut p.ff_in.data,
                &mut p.ff_in_bias,
                &mut p.ff_out.data,
                &mut p.ff_out_bias,
            ]);
        }
        v.extend([
            &mut self.final_norm_gain,
            &mut self.final_norm_bias,
            &mut self.head_hidden.data,
            &mut self.head_hidden_bias,
            &mut self.head_out.data,
            &mut self.head_out_bias,
        ]);
        v
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Vec<T>)) {
        for t in self.tensors_mut() {
            f(t);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.views().iter().map(|t| t.data.len()).sum()
    }

    pub fn squared_norm(&self) -> T {
        self.views().iter().flat_map(|t| t.data.iter()).map(|&v| v * v).sum()
    }

    pub fn scale(&mut self, factor: T) {
        self.for_each_mut(|t| t.iter_mut().for_each(|v| *v = *v * factor));
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        let src: Vec<Vec<T>> = other.views().iter().map(|t| t.data.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + alpha * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.views().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let vocab = self.entity.rows - 1;
        let dim = self.entity.cols;
        let mut out = Params::<U>::zeros(vocab, self.head_out.rows, dim, self.layers.len(), self.position.rows - 1);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.views()) {
            *dst = cast_vec(src.data);
        }
        out
    }
}

/// Seeded Gaussian table of `vocab + 1` rows (mean 0, std 0.02); the final
/// `[MASK]` row is zero.
pub fn gaussian_table(vocab: usize, dim: usize, seed: u64) -> Mat<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, EMBEDDING_INIT_STD).expect("valid std");
    let mut table = Mat::zeros(vocab + 1, dim);
    for v in &mut table.data[..vocab * dim] {
        *v = normal.sample(&mut rng) as f32;
    }
    table
}

/// One relation-agnostic propagation pass: every entity with knowledge-graph
/// neighbours becomes `0.5·self + 0.5·mean(neighbours)`, reading from the
/// unsmoothed table. Edges are treated as undirected and de-duplicated.
pub fn smooth_with_graph(base: &Mat<f32>, triples: &[KgTriple]) -> Mat<f32> {
    let vocab = base.rows - 1;
    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); vocab];
    for t in triples {
        if t.head < vocab && t.tail < vocab && t.head != t.tail {
            neighbours[t.head].insert(t.tail);
            neighbours[t.tail].insert(t.head);
        }
    }
    let mut out = base.clone();
    for (e, ns) in neighbours.iter().enumerate() {
        if ns.is_empty() {
            continue;
        }
        let count = ns.len() as f64;
        let row = out.row_mut(e);
        for (i, r) in row.iter_mut().enumerate() {
            let mean = ns.iter().map(|&n| base.row(n)[i] as f64).sum::<f64>() / count;
            *r = (0.5 * base.row(e)[i] as f64 + 0.5 * mean) as f32;
        }
    }
    out
}

pub fn graph_smoothed_init(vocab: usize, dim: usize, triples: &[KgTriple], seed: u64) -> Mat<f32> {
    smooth_with_graph(&gaussian_table(vocab, dim, seed), triples)
}

/// Initializes every tensor except the entity table: linear weights uniform in
/// `±1/√fan_in`, biases zero, norm gains one, positional rows N(0, 0.02).
pub(crate) fn init_dense<R: Rng>(params: &mut Params<f32>, rng: &mut R) {
    let normal = Normal::new(0.0f64, EMBEDDING_INIT_STD).expect("valid std");
    for v in &mut params.position.data {
        *v = normal.sample(rng) as f32;
    }
    let mut uniform = |m: &mut Mat<f32>| {
        let bound = 1.0 / (m.cols as f64).sqrt();
        for v in &mut m.data {
            *v = rng.random_range(-bound..bound) as f32;
        }
    };
    for layer in &mut params.layers {
        uniform(&mut layer.query);
        uniform(&mut layer.key);
        uniform(&mut layer.value);
        uniform(&mut layer.output);
        uniform(&mut layer.ff_in);
        uniform(&mut layer.ff_out);
        layer.attn_norm_gain.iter_mut().for_each(|g| *g = 1.0);
        layer.ff_norm_gain.iter_mut().for_each(|g| *g = 1.0);
    }
    uniform(&mut params.head_hidden);
    uniform(&mut params.head_out);
    params.final_norm_gain.iter_mut().for_each(|g| *g = 1.0);
}
