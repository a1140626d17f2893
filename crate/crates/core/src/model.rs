//! The embedding encoder and the two continuous-space losses: the
//! hop-adaptive triplet margin loss and the semantic label-margin loss.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Graph, Triplet};
use crate::layers::{restore_array, BoundDenseBn, DenseBn, NamedArray};

/// How raw nodes enter the encoder: materialised sparse binary attribute
/// rows, or (for attribute-free graphs) one-hot node identities realised as
/// an embedding-table lookup on the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Attrs { dim: usize },
    OneHot { n: usize },
}

impl InputMode {
    pub fn dim(&self) -> usize {
        match *self {
            InputMode::Attrs { dim } => dim,
            InputMode::OneHot { n } => n,
        }
    }

    pub fn for_graph(graph: &Graph) -> Self {
        match graph.attr_dim() {
            Some(dim) => InputMode::Attrs { dim },
            None => InputMode::OneHot {
                n: graph.num_nodes(),
            },
        }
    }
}

/// One batch of encoder inputs.
pub enum AttrBatch {
    Dense(Array2<f32>),
    Ids(Vec<usize>),
}

impl AttrBatch {
    /// Materialise the rows for `nodes` according to the graph's input mode.
    pub fn for_nodes(graph: &Graph, nodes: &[u32]) -> AttrBatch {
        match graph.attrs() {
            Some(attrs) => {
                let mut x = Array2::<f32>::zeros((nodes.len(), attrs.dim));
                for (r, &node) in nodes.iter().enumerate() {
                    for &bit in &attrs.rows[node as usize] {
                        x[(r, bit as usize)] = 1.0;
                    }
                }
                AttrBatch::Dense(x)
            }
            None => AttrBatch::Ids(nodes.iter().map(|&n| n as usize).collect()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AttrBatch::Dense(x) => x.nrows(),
            AttrBatch::Ids(ids) => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The multi-layer embedding network: dense + batchnorm + ReLU blocks
/// funnelling the input down to the embedding width.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub input: InputMode,
    pub layers: Vec<DenseBn>,
}

pub struct BoundEncoder {
    pub layers: Vec<BoundDenseBn>,
}

impl EncoderParams {
    /// `layer_sizes` lists every layer's output width; the last entry is the
    /// embedding dimension.
    pub fn init(input: InputMode, layer_sizes: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len());
        let mut fan_in = input.dim();
        for &out in layer_sizes {
            layers.push(DenseBn::init(fan_in, out, rng));
            fan_in = out;
        }
        Ok(EncoderParams { input, layers })
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(0)
    }

    /// Forward pass producing one embedding row per batch row. Training mode
    /// updates batch-norm running statistics; evaluation mode is
    /// deterministic and row-independent.
    pub fn encode(
        &mut self,
        tape: &mut Tape,
        batch: &AttrBatch,
        train: bool,
    ) -> Result<(Tensor, BoundEncoder)> {
        if batch.is_empty() {
            return Err(Error::Invalid("encode called with an empty batch".into()));
        }
        let mut bound = Vec::with_capacity(self.layers.len());
        let mut h = match batch {
            AttrBatch::Dense(x) => {
                if x.ncols() != self.input.dim() {
                    return Err(Error::Dim(format!(
                        "attribute dimension {} does not match encoder input {}",
                        x.ncols(),
                        self.input.dim()
                    )));
                }
                let x = tape.constant(x.clone())?;
                let (h, b) = self.layers[0].forward(tape, x, train)?;
                bound.push(b);
                h
            }
            AttrBatch::Ids(ids) => {
                if !matches!(self.input, InputMode::OneHot { .. }) {
                    return Err(Error::Dim(
                        "id batch passed to an attribute-input encoder".into(),
                    ));
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= self.input.dim()) {
                    return Err(Error::NodeOutOfBounds {
                        id: bad as u64,
                        n: self.input.dim(),
                    });
                }
                let (h, b) = self.layers[0].forward_lookup(tape, ids, train)?;
                bound.push(b);
                h
            }
        };
        for layer in self.layers.iter_mut().skip(1) {
            let (next, b) = layer.forward(tape, h, train)?;
            bound.push(b);
            h = next;
        }
        Ok((h, BoundEncoder { layers: bound }))
    }

    /// Read-only evaluation forward: running batch-norm statistics, no
    /// gradients, row-independent and thread-safe.
    pub fn encode_eval(&self, tape: &mut Tape, batch: &AttrBatch) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::Invalid("encode called with an empty batch".into()));
        }
        let mut h = match batch {
            AttrBatch::Dense(x) => {
                if x.ncols() != self.input.dim() {
                    return Err(Error::Dim(format!(
                        "attribute dimension {} does not match encoder input {}",
                        x.ncols(),
                        self.input.dim()
                    )));
                }
                let x = tape.constant(x.clone())?;
                self.layers[0].forward_eval(tape, x)?
            }
            AttrBatch::Ids(ids) => {
                if !matches!(self.input, InputMode::OneHot { .. }) {
                    return Err(Error::Dim(
                        "id batch passed to an attribute-input encoder".into(),
                    ));
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= self.input.dim()) {
                    return Err(Error::NodeOutOfBounds {
                        id: bad as u64,
                        n: self.input.dim(),
                    });
                }
                self.layers[0].forward_lookup_eval(tape, ids)?
            }
        };
        for layer in self.layers.iter().skip(1) {
            h = layer.forward_eval(tape, h)?;
        }
        Ok(h)
    }

    pub fn named_arrays(&mut self) -> Vec<NamedArray<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.named_arrays(&format!("embed.l{i}")))
            .collect()
    }

    pub fn grad_handles(&self, bound: &BoundEncoder) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .zip(&bound.layers)
            .enumerate()
            .flat_map(|(i, (l, b))| l.grad_handles(&format!("embed.l{i}"), b))
            .collect()
    }

    pub fn from_sections(
        input: InputMode,
        sections: &BTreeMap<String, Array2<f32>>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = sections.get(&format!("embed.l{i}.w")) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut layer = DenseBn::init(w.nrows(), w.ncols(), &mut rng);
            for field in ["w", "b", "gamma", "beta", "bn_mean", "bn_var"] {
                let name = format!("embed.l{i}.{field}");
                let target = match field {
                    "w" => &mut layer.w,
                    "b" => &mut layer.b,
                    "gamma" => &mut layer.gamma,
                    "beta" => &mut layer.beta,
                    "bn_mean" => &mut layer.bn.running_mean,
                    _ => &mut layer.bn.running_var,
                };
                restore_array(sections, &name, target)?;
            }
            layers.push(layer);
            i += 1;
        }
        if layers.is_empty() {
            return Err(Error::Format {
                format: "NQCK",
                msg: "no encoder layers found".into(),
            });
        }
        if layers[0].input_dim() != input.dim() {
            return Err(Error::Dim(format!(
                "checkpoint encoder input {} does not match graph input {}",
                layers[0].input_dim(),
                input.dim()
            )));
        }
        Ok(EncoderParams { input, layers })
    }
}

use rand::SeedableRng;

/// Triplet margins: hop-difference (adaptive) or a constant (ablation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginMode {
    Adaptive,
    Fixed(f32),
}

/// Margin configuration shared by the two continuous losses.
#[derive(Debug, Clone, Copy)]
pub struct MarginConfig {
    pub mode: MarginMode,
    pub semantic_margin: f32,
    pub fraction_t: f32,
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if let MarginMode::Fixed(v) = self.mode {
            if !(v > 0.0) {
                return Err(Error::Config("fixed margin must be > 0".into()));
            }
        }
        if !(self.semantic_margin > 0.0) {
            return Err(Error::Config("semantic margin must be > 0".into()));
        }
        if !(self.fraction_t > 0.0 && self.fraction_t <= 1.0) {
            return Err(Error::Config("fraction_t must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Triplets re-indexed to embedding rows, with the per-triplet margin
/// already resolved.
#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub anchor_rows: Vec<usize>,
    pub positive_rows: Vec<usize>,
    pub negative_rows: Vec<usize>,
    pub margins: Vec<f32>,
}

impl TripletBatch {
    pub fn from_triplets<F>(triplets: &[Triplet], mode: MarginMode, mut row_of: F) -> Self
    where
        F: FnMut(u32) -> usize,
    {
        let mut batch = TripletBatch::default();
        for t in triplets {
            batch.anchor_rows.push(row_of(t.anchor));
            batch.positive_rows.push(row_of(t.positive));
            batch.negative_rows.push(row_of(t.negative));
            batch.margins.push(match mode {
                MarginMode::Adaptive => (t.delta_an - t.delta_ap) as f32,
                MarginMode::Fixed(v) => v,
            });
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.anchor_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_rows.is_empty()
    }
}

/// Mean over triplets of `max(D(z_a, z_p) - D(z_a, z_n) + margin, 0)` with
/// Euclidean row distances.
pub fn adaptive_margin_loss(tape: &mut Tape, z: Tensor, batch: &TripletBatch) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::Invalid("margin loss over an empty triplet list".into()));
    }
    let za = tape.gather_rows(z, &batch.anchor_rows)?;
    let zp = tape.gather_rows(z, &batch.positive_rows)?;
    let zn = tape.gather_rows(z, &batch.negative_rows)?;
    let d_ap = tape.l2_distance_rows(za, zp)?;
    let d_an = tape.l2_distance_rows(za, zn)?;
    let diff = tape.sub(d_ap, d_an)?;
    let margins = Array2::from_shape_vec((batch.len(), 1), batch.margins.clone())
        .expect("margin vector length");
    let margins = tape.constant(margins)?;
    let shifted = tape.add(diff, margins)?;
    let hinged = tape.relu(shifted)?;
    let total = tape.sum(hinged)?;
    tape.scale(total, 1.0 / batch.len() as f32)
}

/// Label pairs re-indexed to embedding rows with their target distances
/// (0 for intersecting label sets, the semantic margin otherwise).
#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub i_rows: Vec<usize>,
    pub j_rows: Vec<usize>,
    pub targets: Vec<f32>,
}

impl PairBatch {
    pub fn from_pairs<F>(
        pairs: &[crate::graph::LabelPair],
        semantic_margin: f32,
        mut row_of: F,
    ) -> Self
    where
        F: FnMut(u32) -> usize,
    {
        let mut batch = PairBatch::default();
        for p in pairs {
            batch.i_rows.push(row_of(p.i));
            batch.j_rows.push(row_of(p.j));
            batch
                .targets
                .push(if p.same_label { 0.0 } else { semantic_margin });
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.i_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_rows.is_empty()
    }
}

/// Mean over pairs of `(D(z_i, z_j) - target)^2`.
pub fn semantic_margin_loss(tape: &mut Tape, z: Tensor, batch: &PairBatch) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::Invalid("semantic loss over an empty pair list".into()));
    }
    let zi = tape.gather_rows(z, &batch.i_rows)?;
    let zj = tape.gather_rows(z, &batch.j_rows)?;
    let d = tape.l2_distance_rows(zi, zj)?;
    let targets = Array2::from_shape_vec((batch.len(), 1), batch.targets.clone())
        .expect("target vector length");
    let targets = tape.constant(targets)?;
    let err = tape.sub(d, targets)?;
    let sq = tape.mul(err, err)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / batch.len() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn z_tape(values: Array2<f32>) -> (Tape, Tensor) {
        let mut tape = Tape::new();
        let z = tape.leaf(values, true).unwrap();
        (tape, z)
    }

    #[test]
    fn encode_output_shape_is_embed_dim() {
        let mut enc = EncoderParams::init(
            InputMode::Attrs { dim: 20 },
            &[32, 16, 128],
            &mut rng(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = AttrBatch::Dense(Array2::zeros((4, 20)));
        let (z, _) = enc.encode(&mut tape, &x, true).unwrap();
        assert_eq!(tape.shape(z), (4, 128));
        assert_eq!(enc.embed_dim(), 128);
    }

    #[test]
    fn eval_mode_is_deterministic_and_row_independent() {
        let mut enc =
            EncoderParams::init(InputMode::Attrs { dim: 8 }, &[8, 4], &mut rng()).unwrap();
        let mut x = Array2::zeros((3, 8));
        x[(0, 1)] = 1.0;
        x[(1, 1)] = 1.0;
        x[(2, 5)] = 1.0;
        let mut tape = Tape::new();
        let (z, _) = enc
            .encode(&mut tape, &AttrBatch::Dense(x.clone()), false)
            .unwrap();
        let zv = tape.value(z).clone();
        // Identical input rows give identical outputs.
        assert_eq!(zv.row(0), zv.row(1));
        // And a second pass reproduces the first exactly.
        let mut tape2 = Tape::new();
        let (z2, _) = enc.encode(&mut tape2, &AttrBatch::Dense(x), false).unwrap();
        assert_eq!(tape2.value(z2), &zv);
    }

    #[test]
    fn zero_attribute_row_is_finite_in_eval_mode() {
        let mut enc =
            EncoderParams::init(InputMode::Attrs { dim: 6 }, &[4, 4], &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = AttrBatch::Dense(Array2::zeros((1, 6)));
        let (z, _) = enc.encode(&mut tape, &x, false).unwrap();
        assert!(tape.value(z).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attr_dim_mismatch_rejected() {
        let mut enc =
            EncoderParams::init(InputMode::Attrs { dim: 6 }, &[4], &mut rng()).unwrap();
        let mut tape = Tape::new();
        let x = AttrBatch::Dense(Array2::zeros((2, 5)));
        assert!(enc.encode(&mut tape, &x, false).is_err());
    }

    #[test]
    fn one_hot_mode_uses_lookup() {
        let mut enc =
            EncoderParams::init(InputMode::OneHot { n: 10 }, &[4, 4], &mut rng()).unwrap();
        let mut tape = Tape::new();
        let (z, _) = enc
            .encode(&mut tape, &AttrBatch::Ids(vec![0, 3, 3]), false)
            .unwrap();
        let zv = tape.value(z);
        assert_eq!(zv.nrows(), 3);
        assert_eq!(zv.row(1), zv.row(2));
    }

    fn one_triplet(margin: f32) -> TripletBatch {
        TripletBatch {
            anchor_rows: vec![0],
            positive_rows: vec![1],
            negative_rows: vec![2],
            margins: vec![margin],
        }
    }

    #[test]
    fn margin_exactly_met_gives_zero() {
        // z_a = z_p = (0,0), z_n = (2,0), margin = 3 - 1 = 2.
        let (mut tape, z) = z_tape(array![[0.0, 0.0], [0.0, 0.0], [2.0, 0.0]]);
        let loss = adaptive_margin_loss(&mut tape, z, &one_triplet(2.0)).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn coincident_triplet_pays_full_margin() {
        let (mut tape, z) = z_tape(array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let loss = adaptive_margin_loss(&mut tape, z, &one_triplet(2.0)).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn satisfied_hinge_contributes_zero() {
        // D(a,n) = 10 far exceeds D(a,p) + margin.
        let (mut tape, z) = z_tape(array![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]);
        let loss = adaptive_margin_loss(&mut tape, z, &one_triplet(2.0)).unwrap();
        assert_eq!(tape.value(loss)[(0, 0)], 0.0);
    }

    #[test]
    fn empty_triplet_list_rejected() {
        let (mut tape, z) = z_tape(array![[0.0, 0.0]]);
        assert!(adaptive_margin_loss(&mut tape, z, &TripletBatch::default()).is_err());
    }

    #[test]
    fn translation_invariance_of_margin_loss() {
        let base = array![[0.5, -1.0], [2.0, 0.25], [-1.5, 3.0], [0.0, 1.0]];
        let shifted = base.mapv(|v| v + 7.25);
        let batch = TripletBatch {
            anchor_rows: vec![0, 1],
            positive_rows: vec![1, 2],
            negative_rows: vec![2, 3],
            margins: vec![1.0, 2.0],
        };
        let (mut t1, z1) = z_tape(base);
        let (mut t2, z2) = z_tape(shifted);
        let l1 = adaptive_margin_loss(&mut t1, z1, &batch).unwrap();
        let l2 = adaptive_margin_loss(&mut t2, z2, &batch).unwrap();
        assert_abs_diff_eq!(
            t1.value(l1)[(0, 0)],
            t2.value(l2)[(0, 0)],
            epsilon = 1e-5
        );
    }

    #[test]
    fn semantic_loss_examples() {
        // Same-label pair at zero distance.
        let (mut tape, z) = z_tape(array![[1.0, 2.0], [1.0, 2.0]]);
        let batch = PairBatch {
            i_rows: vec![0],
            j_rows: vec![1],
            targets: vec![0.0],
        };
        let loss = semantic_margin_loss(&mut tape, z, &batch).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 0.0, epsilon = 1e-7);

        // Different-label pair at exactly the semantic margin.
        let (mut tape, z) = z_tape(array![[0.0, 0.0], [5.0, 0.0]]);
        let batch = PairBatch {
            i_rows: vec![0],
            j_rows: vec![1],
            targets: vec![5.0],
        };
        let loss = semantic_margin_loss(&mut tape, z, &batch).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 0.0, epsilon = 1e-7);

        // Same-label pair at distance 5 pays 25.
        let (mut tape, z) = z_tape(array![[0.0, 0.0], [3.0, 4.0]]);
        let batch = PairBatch {
            i_rows: vec![0],
            j_rows: vec![1],
            targets: vec![0.0],
        };
        let loss = semantic_margin_loss(&mut tape, z, &batch).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 25.0, epsilon = 1e-4);
    }
}
