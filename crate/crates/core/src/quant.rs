//! Differentiable code assignment over learned codebooks: Gumbel-softmax
//! relaxation, hard one-hot codes, autoencoder reconstruction, the
//! quantisation loss and the rank loss that carries hop ordering into code
//! space.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::layers::{restore_array, BoundDense, BoundDenseBn, Dense, DenseBn, NamedArray};

/// M codebooks of K codewords each, in the L-dimensional embedding space.
#[derive(Debug, Clone)]
pub struct Codebooks {
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub books: Vec<Array2<f32>>,
}

/// Bits needed to store one codeword index.
pub fn index_bits(k: usize) -> u32 {
    (k.max(2) as u64 - 1).ilog2() + 1
}

impl Codebooks {
    /// Codewords start i.i.d. normal with std `1/sqrt(L)`. The per-node code
    /// payload `M * ceil(log2 K)` must be a whole number of bytes.
    pub fn init(m: usize, k: usize, l: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if m == 0 || k < 2 || l == 0 {
            return Err(Error::Config("codebooks need m >= 1, k >= 2, l >= 1".into()));
        }
        if (m as u32 * index_bits(k)) % 8 != 0 {
            return Err(Error::Config(format!(
                "code payload m*ceil(log2 k) = {} bits is not byte-packable",
                m as u32 * index_bits(k)
            )));
        }
        let std = 1.0 / (l as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let books = (0..m)
            .map(|_| Array2::from_shape_fn((k, l), |_| dist.sample(rng) as f32))
            .collect();
        Ok(Codebooks { m, k, l, books })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Tensor>> {
        self.books
            .iter()
            .map(|b| tape.leaf(b.clone(), true))
            .collect()
    }

    pub fn named_arrays(&mut self) -> Vec<NamedArray<'_>> {
        self.books
            .iter_mut()
            .enumerate()
            .map(|(j, b)| crate::layers::named(format!("cb.{j}"), b, true))
            .collect()
    }

    pub fn grad_handles(&self, bound: &[Tensor]) -> Vec<(String, Tensor)> {
        bound
            .iter()
            .enumerate()
            .map(|(j, &t)| (format!("cb.{j}"), t))
            .collect()
    }

    pub fn from_sections(sections: &BTreeMap<String, Array2<f32>>) -> Result<Self> {
        let mut books = Vec::new();
        let mut j = 0;
        while let Some(b) = sections.get(&format!("cb.{j}")) {
            books.push(b.clone());
            j += 1;
        }
        if books.is_empty() {
            return Err(Error::Format {
                format: "NQCK",
                msg: "no codebook sections found".into(),
            });
        }
        let (k, l) = books[0].dim();
        if books.iter().any(|b| b.dim() != (k, l)) {
            return Err(Error::Format {
                format: "NQCK",
                msg: "codebooks disagree on shape".into(),
            });
        }
        Ok(Codebooks {
            m: books.len(),
            k,
            l,
            books,
        })
    }
}

/// The code-assignment encoder: dense+batchnorm+ReLU trunk, then M parallel
/// K-way logit heads.
#[derive(Debug, Clone)]
pub struct QuantEncoder {
    pub layers: Vec<DenseBn>,
    pub heads: Vec<Dense>,
}

pub struct BoundQuantEncoder {
    pub layers: Vec<BoundDenseBn>,
    pub heads: Vec<BoundDense>,
}

impl QuantEncoder {
    pub fn init(l: usize, hidden: &[usize], m: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("quant encoder needs at least one hidden layer".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = l;
        for &out in hidden {
            layers.push(DenseBn::init(fan_in, out, rng));
            fan_in = out;
        }
        let heads = (0..m).map(|_| Dense::init(fan_in, k, rng)).collect();
        Ok(QuantEncoder { layers, heads })
    }

    /// Per-codebook logits: M tensors of shape B x K.
    pub fn logits(
        &mut self,
        tape: &mut Tape,
        z: Tensor,
        train: bool,
    ) -> Result<(Vec<Tensor>, BoundQuantEncoder)> {
        let mut bound_layers = Vec::with_capacity(self.layers.len());
        let mut h = z;
        for layer in &mut self.layers {
            let (next, b) = layer.forward(tape, h, train)?;
            bound_layers.push(b);
            h = next;
        }
        let mut logits = Vec::with_capacity(self.heads.len());
        let mut bound_heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (y, b) = head.forward(tape, h)?;
            logits.push(y);
            bound_heads.push(b);
        }
        Ok((
            logits,
            BoundQuantEncoder {
                layers: bound_layers,
                heads: bound_heads,
            },
        ))
    }

    /// Read-only evaluation logits.
    pub fn logits_eval(&self, tape: &mut Tape, z: Tensor) -> Result<Vec<Tensor>> {
        let mut h = z;
        for layer in &self.layers {
            h = layer.forward_eval(tape, h)?;
        }
        self.heads.iter().map(|head| head.forward_eval(tape, h)).collect()
    }

    pub fn named_arrays(&mut self) -> Vec<NamedArray<'_>> {
        let mut out: Vec<NamedArray<'_>> = self
            .layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.named_arrays(&format!("qenc.l{i}")))
            .collect();
        out.extend(
            self.heads
                .iter_mut()
                .enumerate()
                .flat_map(|(j, h)| h.named_arrays(&format!("qenc.head{j}"))),
        );
        out
    }

    pub fn grad_handles(&self, bound: &BoundQuantEncoder) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .layers
            .iter()
            .zip(&bound.layers)
            .enumerate()
            .flat_map(|(i, (l, b))| l.grad_handles(&format!("qenc.l{i}"), b))
            .collect();
        out.extend(
            self.heads
                .iter()
                .zip(&bound.heads)
                .enumerate()
                .flat_map(|(j, (h, b))| h.grad_handles(&format!("qenc.head{j}"), b)),
        );
        out
    }

    pub fn from_sections(sections: &BTreeMap<String, Array2<f32>>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = sections.get(&format!("qenc.l{i}.w")) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut layer = DenseBn::init(w.nrows(), w.ncols(), &mut rng);
            restore_dense_bn(sections, &format!("qenc.l{i}"), &mut layer)?;
            layers.push(layer);
            i += 1;
        }
        let mut heads = Vec::new();
        let mut j = 0;
        while let Some(w) = sections.get(&format!("qenc.head{j}.w")) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut head = Dense::init(w.nrows(), w.ncols(), &mut rng);
            restore_array(sections, &format!("qenc.head{j}.w"), &mut head.w)?;
            restore_array(sections, &format!("qenc.head{j}.b"), &mut head.b)?;
            heads.push(head);
            j += 1;
        }
        if layers.is_empty() || heads.is_empty() {
            return Err(Error::Format {
                format: "NQCK",
                msg: "incomplete quant encoder sections".into(),
            });
        }
        Ok(QuantEncoder { layers, heads })
    }
}

fn restore_dense_bn(
    sections: &BTreeMap<String, Array2<f32>>,
    prefix: &str,
    layer: &mut DenseBn,
) -> Result<()> {
    restore_array(sections, &format!("{prefix}.w"), &mut layer.w)?;
    restore_array(sections, &format!("{prefix}.b"), &mut layer.b)?;
    restore_array(sections, &format!("{prefix}.gamma"), &mut layer.gamma)?;
    restore_array(sections, &format!("{prefix}.beta"), &mut layer.beta)?;
    restore_array(sections, &format!("{prefix}.bn_mean"), &mut layer.bn.running_mean)?;
    restore_array(sections, &format!("{prefix}.bn_var"), &mut layer.bn.running_var)?;
    Ok(())
}

/// Decoder from the codeword-sum space back to embeddings. `Identity`
/// recovers plain product quantisation (the codeword sum itself).
#[derive(Debug, Clone)]
pub enum Decoder {
    Identity,
    Mlp(DecoderMlp),
}

#[derive(Debug, Clone)]
pub struct DecoderMlp {
    pub layers: Vec<DenseBn>,
    pub out: Dense,
}

pub struct BoundDecoder {
    pub layers: Vec<BoundDenseBn>,
    pub out: Option<BoundDense>,
}

impl Decoder {
    /// Mirror of the quant encoder trunk, ending in a linear projection back
    /// to the embedding width.
    pub fn mlp(l: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("decoder needs at least one hidden layer".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = l;
        for &out in hidden {
            layers.push(DenseBn::init(fan_in, out, rng));
            fan_in = out;
        }
        let out = Dense::init(fan_in, l, rng);
        Ok(Decoder::Mlp(DecoderMlp { layers, out }))
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Tensor,
        train: bool,
    ) -> Result<(Tensor, BoundDecoder)> {
        match self {
            Decoder::Identity => Ok((
                x,
                BoundDecoder {
                    layers: Vec::new(),
                    out: None,
                },
            )),
            Decoder::Mlp(mlp) => {
                let mut bound_layers = Vec::with_capacity(mlp.layers.len());
                let mut h = x;
                for layer in &mut mlp.layers {
                    let (next, b) = layer.forward(tape, h, train)?;
                    bound_layers.push(b);
                    h = next;
                }
                let (y, bound_out) = mlp.out.forward(tape, h)?;
                Ok((
                    y,
                    BoundDecoder {
                        layers: bound_layers,
                        out: Some(bound_out),
                    },
                ))
            }
        }
    }

    /// Read-only evaluation forward.
    pub fn forward_eval(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor> {
        match self {
            Decoder::Identity => Ok(x),
            Decoder::Mlp(mlp) => {
                let mut h = x;
                for layer in &mlp.layers {
                    h = layer.forward_eval(tape, h)?;
                }
                mlp.out.forward_eval(tape, h)
            }
        }
    }

    pub fn named_arrays(&mut self) -> Vec<NamedArray<'_>> {
        match self {
            Decoder::Identity => Vec::new(),
            Decoder::Mlp(mlp) => {
                let mut out: Vec<NamedArray<'_>> = mlp
                    .layers
                    .iter_mut()
                    .enumerate()
                    .flat_map(|(i, l)| l.named_arrays(&format!("qdec.l{i}")))
                    .collect();
                out.extend(mlp.out.named_arrays("qdec.out"));
                out
            }
        }
    }

    pub fn grad_handles(&self, bound: &BoundDecoder) -> Vec<(String, Tensor)> {
        match self {
            Decoder::Identity => Vec::new(),
            Decoder::Mlp(mlp) => {
                let mut out: Vec<(String, Tensor)> = mlp
                    .layers
                    .iter()
                    .zip(&bound.layers)
                    .enumerate()
                    .flat_map(|(i, (l, b))| l.grad_handles(&format!("qdec.l{i}"), b))
                    .collect();
                if let Some(b) = &bound.out {
                    out.extend(mlp.out.grad_handles("qdec.out", b));
                }
                out
            }
        }
    }

    pub fn from_sections(sections: &BTreeMap<String, Array2<f32>>) -> Result<Self> {
        if !sections.contains_key("qdec.out.w") {
            return Ok(Decoder::Identity);
        }
        let mut layers = Vec::new();
        let mut i = 0;
        while let Some(w) = sections.get(&format!("qdec.l{i}.w")) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut layer = DenseBn::init(w.nrows(), w.ncols(), &mut rng);
            restore_dense_bn(sections, &format!("qdec.l{i}"), &mut layer)?;
            layers.push(layer);
            i += 1;
        }
        let w = &sections["qdec.out.w"];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Dense::init(w.nrows(), w.ncols(), &mut rng);
        restore_array(sections, "qdec.out.w", &mut out.w)?;
        restore_array(sections, "qdec.out.b", &mut out.b)?;
        Ok(Decoder::Mlp(DecoderMlp { layers, out }))
    }
}

use rand::SeedableRng;

/// Row-stochastic soft assignments, one B x K tensor per codebook.
pub struct SoftAssign {
    pub per_book: Vec<Tensor>,
}

impl SoftAssign {
    pub fn num_books(&self) -> usize {
        self.per_book.len()
    }

    /// Restrict to a subset of batch rows (e.g. triplet anchors).
    pub fn gather_rows(&self, tape: &mut Tape, rows: &[usize]) -> Result<SoftAssign> {
        let per_book = self
            .per_book
            .iter()
            .map(|&u| tape.gather_rows(u, rows))
            .collect::<Result<Vec<_>>>()?;
        Ok(SoftAssign { per_book })
    }
}

/// One codeword index per (row, codebook).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardCodes {
    pub codes: Array2<u32>,
}

impl HardCodes {
    pub fn num_rows(&self) -> usize {
        self.codes.nrows()
    }

    pub fn num_books(&self) -> usize {
        self.codes.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> HardCodes {
        let mut codes = Array2::zeros((rows.len(), self.codes.ncols()));
        for (r, &src) in rows.iter().enumerate() {
            codes.row_mut(r).assign(&self.codes.row(src));
        }
        HardCodes { codes }
    }

    /// Column `j` as usize picks, for select-per-row ops.
    fn book_column(&self, j: usize) -> Vec<usize> {
        self.codes.column(j).iter().map(|&c| c as usize).collect()
    }
}

/// Gumbel-softmax relaxation. With a noise source this is the training path
/// `softmax((logits + g)/tau)` with `g = -log(-log(U))`; without noise it is
/// the deterministic evaluation path (plain tempered softmax).
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: &[Tensor],
    tau: f32,
    mut noise: Option<&mut ChaCha8Rng>,
) -> Result<SoftAssign> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let mut per_book = Vec::with_capacity(logits.len());
    for &raw in logits {
        let shape = tape.shape(raw);
        let mut x = raw;
        if let Some(rng) = noise.as_deref_mut() {
            let g = Array2::from_shape_fn(shape, |_| {
                let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                (-(-u.ln()).ln()) as f32
            });
            let g = tape.constant(g)?;
            x = tape.add(x, g)?;
        }
        let x = tape.scale(x, 1.0 / tau)?;
        per_book.push(tape.softmax_rows(x)?);
    }
    Ok(SoftAssign { per_book })
}

/// Argmax per (row, codebook); ties break to the lowest index. The result
/// carries no gradient anywhere it is used.
pub fn hard_assign(tape: &Tape, u: &SoftAssign) -> HardCodes {
    let rows = tape.shape(u.per_book[0]).0;
    let mut codes = Array2::<u32>::zeros((rows, u.num_books()));
    for (j, &t) in u.per_book.iter().enumerate() {
        let v = tape.value(t);
        for r in 0..rows {
            let row = v.row(r);
            let mut best = 0usize;
            let mut best_val = row[0];
            for (c, &val) in row.iter().enumerate().skip(1) {
                if val > best_val {
                    best_val = val;
                    best = c;
                }
            }
            codes[(r, j)] = best as u32;
        }
    }
    HardCodes { codes }
}

/// Soft reconstruction input: `sum_j u_j . C_j`, shape B x L.
pub fn codeword_sum_soft(tape: &mut Tape, u: &SoftAssign, books: &[Tensor]) -> Result<Tensor> {
    if u.num_books() != books.len() {
        return Err(Error::Dim(format!(
            "{} assignments vs {} codebooks",
            u.num_books(),
            books.len()
        )));
    }
    let mut acc = tape.matmul(u.per_book[0], books[0])?;
    for j in 1..books.len() {
        let term = tape.matmul(u.per_book[j], books[j])?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// Hard reconstruction input: the selected codeword per book, summed.
pub fn codeword_sum_hard(cb: &Codebooks, codes: &HardCodes) -> Result<Array2<f32>> {
    if codes.num_books() != cb.m {
        return Err(Error::Dim(format!(
            "{} code columns vs {} codebooks",
            codes.num_books(),
            cb.m
        )));
    }
    let mut out = Array2::<f32>::zeros((codes.num_rows(), cb.l));
    for r in 0..codes.num_rows() {
        for j in 0..cb.m {
            let idx = codes.codes[(r, j)] as usize;
            if idx >= cb.k {
                return Err(Error::Dim(format!(
                    "codeword index {idx} out of range (K = {})",
                    cb.k
                )));
            }
            let mut row = out.row_mut(r);
            row += &cb.books[j].row(idx);
        }
    }
    Ok(out)
}

/// Mean squared reconstruction residual `1/B sum_i ||z_i - recon_i||^2`.
pub fn quantisation_loss(tape: &mut Tape, z: Tensor, recon: Tensor) -> Result<Tensor> {
    let rows = tape.shape(z).0;
    if rows == 0 {
        return Err(Error::Invalid("quantisation loss over an empty batch".into()));
    }
    let err = tape.sub(z, recon)?;
    let sq = tape.mul(err, err)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / rows as f32)
}

/// Hinge rank loss over codes: `sum_t max(u_a . q_n - u_a . q_p + 1, 0)`.
/// `u_a` holds the anchors' soft assignments; the one-hot positive/negative
/// codes are constants, so gradient flows only through `u_a`.
pub fn rank_loss(
    tape: &mut Tape,
    u_anchor: &SoftAssign,
    q_positive: &HardCodes,
    q_negative: &HardCodes,
) -> Result<Tensor> {
    let m = u_anchor.num_books();
    let rows = tape.shape(u_anchor.per_book[0]).0;
    if q_positive.num_books() != m || q_negative.num_books() != m {
        return Err(Error::Dim("codebook count mismatch in rank loss".into()));
    }
    if q_positive.num_rows() != rows || q_negative.num_rows() != rows {
        return Err(Error::Dim("triplet count mismatch in rank loss".into()));
    }
    let mut dot_p: Option<Tensor> = None;
    let mut dot_n: Option<Tensor> = None;
    for j in 0..m {
        let sp = tape.select_col_per_row(u_anchor.per_book[j], &q_positive.book_column(j))?;
        let sn = tape.select_col_per_row(u_anchor.per_book[j], &q_negative.book_column(j))?;
        dot_p = Some(match dot_p {
            Some(acc) => tape.add(acc, sp)?,
            None => sp,
        });
        dot_n = Some(match dot_n {
            Some(acc) => tape.add(acc, sn)?,
            None => sn,
        });
    }
    let diff = tape.sub(dot_n.unwrap(), dot_p.unwrap())?;
    let shifted = tape.add_scalar(diff, 1.0)?;
    let hinged = tape.relu(shifted)?;
    tape.sum(hinged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn byte_packability_enforced() {
        assert!(Codebooks::init(8, 256, 4, &mut rng(0)).is_ok());
        assert!(Codebooks::init(8, 2, 4, &mut rng(0)).is_ok()); // 8 bits
        assert!(Codebooks::init(3, 4, 4, &mut rng(0)).is_err()); // 6 bits
    }

    #[test]
    fn gumbel_rows_are_stochastic() {
        let mut tape = Tape::new();
        let logits = tape
            .leaf(Array2::from_shape_fn((5, 7), |(r, c)| (r * c) as f32 * 0.3 - 1.0), true)
            .unwrap();
        let mut noise = rng(3);
        let u = gumbel_softmax(&mut tape, &[logits], 0.7, Some(&mut noise)).unwrap();
        let v = tape.value(u.per_book[0]);
        for r in 0..5 {
            let s: f64 = v.row(r).iter().map(|&x| x as f64).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-6);
            assert!(v.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn equal_logits_without_noise_are_uniform() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((2, 8)), true).unwrap();
        let u = gumbel_softmax(&mut tape, &[logits], 1.0, None).unwrap();
        let v = tape.value(u.per_book[0]);
        for &x in v.iter() {
            assert_abs_diff_eq!(x, 1.0 / 8.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn small_tau_sharpens_to_one_hot() {
        // Same fixed noise at every temperature; by tau = 0.01 the max entry
        // must exceed 0.999.
        let logits_raw = array![[0.3, -0.2, 0.5, 0.1]];
        let mut max_by_tau = Vec::new();
        for &tau in &[1.0f32, 0.5, 0.1, 0.01] {
            let mut tape = Tape::new();
            let logits = tape.leaf(logits_raw.clone(), true).unwrap();
            let mut noise = rng(3); // identical stream each time
            let u = gumbel_softmax(&mut tape, &[logits], tau, Some(&mut noise)).unwrap();
            let v = tape.value(u.per_book[0]);
            let m = v.iter().fold(f32::MIN, |a, &b| a.max(b));
            max_by_tau.push(m);
        }
        assert!(max_by_tau.windows(2).all(|w| w[1] >= w[0] - 1e-6));
        assert!(*max_by_tau.last().unwrap() >= 0.999);
    }

    #[test]
    fn invalid_tau_rejected() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((1, 4)), true).unwrap();
        assert!(gumbel_softmax(&mut tape, &[logits], 0.0, None).is_err());
    }

    #[test]
    fn hard_assign_argmax_and_ties() {
        let mut tape = Tape::new();
        let u0 = tape.constant(array![[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]).unwrap();
        let codes = hard_assign(
            &tape,
            &SoftAssign {
                per_book: vec![u0],
            },
        );
        assert_eq!(codes.codes[(0, 0)], 1);
        assert_eq!(codes.codes[(1, 0)], 0, "ties break to the lowest index");
    }

    #[test]
    fn hard_assign_matches_logit_argmax_without_noise() {
        let mut tape = Tape::new();
        let raw = Array2::from_shape_fn((6, 5), |(r, c)| ((r * 7 + c * 3) % 11) as f32 * 0.21);
        let logits = tape.leaf(raw.clone(), true).unwrap();
        let u = gumbel_softmax(&mut tape, &[logits], 0.8, None).unwrap();
        let codes = hard_assign(&tape, &u);
        for r in 0..6 {
            let mut best = 0;
            for c in 1..5 {
                if raw[(r, c)] > raw[(r, best)] {
                    best = c;
                }
            }
            assert_eq!(codes.codes[(r, 0)] as usize, best);
        }
    }

    #[test]
    fn one_hot_selection_sums_codewords() {
        let mut r = rng(5);
        let cb = Codebooks::init(2, 16, 3, &mut r).unwrap();
        let codes = HardCodes {
            codes: array![[2u32, 9]],
        };
        let sum = codeword_sum_hard(&cb, &codes).unwrap();
        for c in 0..3 {
            let want = cb.books[0][(2, c)] + cb.books[1][(9, c)];
            assert_abs_diff_eq!(sum[(0, c)], want, epsilon = 1e-6);
        }
    }

    #[test]
    fn soft_and_hard_paths_agree_on_exact_one_hots() {
        let mut r = rng(6);
        let cb = Codebooks::init(2, 16, 3, &mut r).unwrap();
        let codes = HardCodes {
            codes: array![[3u32, 0], [15, 2]],
        };
        let mut one_hots = Vec::new();
        let mut tape = Tape::new();
        for j in 0..2 {
            let mut u = Array2::<f32>::zeros((2, 16));
            for row in 0..2 {
                u[(row, codes.codes[(row, j)] as usize)] = 1.0;
            }
            one_hots.push(tape.constant(u).unwrap());
        }
        let books = cb.bind(&mut tape).unwrap();
        let soft = codeword_sum_soft(
            &mut tape,
            &SoftAssign {
                per_book: one_hots,
            },
            &books,
        )
        .unwrap();
        let hard = codeword_sum_hard(&cb, &codes).unwrap();
        let sv = tape.value(soft);
        for (a, b) in sv.iter().zip(hard.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn uniform_assignment_over_zero_codebooks_is_zero() {
        let cb = Codebooks {
            m: 2,
            k: 4,
            l: 3,
            books: vec![Array2::zeros((4, 3)), Array2::zeros((4, 3))],
        };
        let mut tape = Tape::new();
        let u = SoftAssign {
            per_book: (0..2)
                .map(|_| tape.constant(Array2::from_elem((2, 4), 0.25)).unwrap())
                .collect(),
        };
        let books = cb.bind(&mut tape).unwrap();
        let sum = codeword_sum_soft(&mut tape, &u, &books).unwrap();
        assert!(tape.value(sum).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantisation_loss_examples() {
        // Perfect reconstruction.
        let mut tape = Tape::new();
        let z = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]], true).unwrap();
        let loss = quantisation_loss(&mut tape, z, z).unwrap();
        assert_eq!(tape.value(loss)[(0, 0)], 0.0);

        // z = 0, reconstruction with squared norm 4.
        let mut tape = Tape::new();
        let z = tape.leaf(array![[0.0, 0.0]], true).unwrap();
        let r = tape.constant(array![[2.0, 0.0]]).unwrap();
        let loss = quantisation_loss(&mut tape, z, r).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn plain_pq_recovered_with_identity_decoder() {
        // With an identity decoder and one-hot assignments, the loss value
        // equals the brute-force codeword residual of Eq-5-style product
        // quantisation, for any assignment.
        let mut r = rng(9);
        let cb = Codebooks::init(4, 4, 6, &mut r).unwrap();
        let z_raw = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 5 + j) as f32 * 0.37).sin());
        let codes = HardCodes {
            codes: Array2::from_shape_fn((5, 4), |(i, j)| ((i * 3 + j) % 4) as u32),
        };

        let mut tape = Tape::new();
        let z = tape.leaf(z_raw.clone(), true).unwrap();
        let mut one_hots = Vec::new();
        for j in 0..4 {
            let mut u = Array2::<f32>::zeros((5, 4));
            for row in 0..5 {
                u[(row, codes.codes[(row, j)] as usize)] = 1.0;
            }
            one_hots.push(tape.constant(u).unwrap());
        }
        let books = cb.bind(&mut tape).unwrap();
        let sum = codeword_sum_soft(
            &mut tape,
            &SoftAssign {
                per_book: one_hots,
            },
            &books,
        )
        .unwrap();
        let mut identity = Decoder::Identity;
        let (recon, _) = identity.forward(&mut tape, sum, false).unwrap();
        let loss = quantisation_loss(&mut tape, z, recon).unwrap();

        // Brute force.
        let mut want = 0f64;
        for i in 0..5 {
            for c in 0..6 {
                let mut approx_v = 0f32;
                for j in 0..4 {
                    approx_v += cb.books[j][(codes.codes[(i, j)] as usize, c)];
                }
                let d = (z_raw[(i, c)] - approx_v) as f64;
                want += d * d;
            }
        }
        want /= 5.0;
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)] as f64, want, epsilon = 1e-5);
    }

    #[test]
    fn rank_loss_identical_codes_pay_the_margin() {
        let mut tape = Tape::new();
        let u = SoftAssign {
            per_book: vec![tape.leaf(array![[0.25, 0.75], [0.6, 0.4]], true).unwrap()],
        };
        let q = HardCodes {
            codes: array![[1u32], [0]],
        };
        let loss = rank_loss(&mut tape, &u, &q, &q).unwrap();
        assert_abs_diff_eq!(tape.value(loss)[(0, 0)], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn rank_loss_anchor_matching_positive_is_zero() {
        // u one-hot equal to q_p and disjoint from q_n: max(0 - M + 1, 0) = 0.
        let m = 8;
        let mut tape = Tape::new();
        let mut per_book = Vec::new();
        for _ in 0..m {
            let mut u = Array2::<f32>::zeros((1, 4));
            u[(0, 2)] = 1.0;
            per_book.push(tape.leaf(u, true).unwrap());
        }
        let qp = HardCodes {
            codes: Array2::from_elem((1, m), 2u32),
        };
        let qn = HardCodes {
            codes: Array2::from_elem((1, m), 0u32),
        };
        let loss = rank_loss(
            &mut tape,
            &SoftAssign { per_book },
            &qp,
            &qn,
        )
        .unwrap();
        assert_eq!(tape.value(loss)[(0, 0)], 0.0);
    }

    #[test]
    fn rank_loss_stays_within_bounds() {
        // Row-stochastic u keeps each triplet's hinge within [0, M + 1].
        let m = 3;
        let mut r = rng(21);
        for _ in 0..20 {
            let mut tape = Tape::new();
            let mut per_book = Vec::new();
            for _ in 0..m {
                let raw = Array2::from_shape_fn((1, 5), |_| r.random::<f32>() * 4.0 - 2.0);
                let logits = tape.leaf(raw, true).unwrap();
                let u = gumbel_softmax(&mut tape, &[logits], 1.0, None).unwrap();
                per_book.push(u.per_book[0]);
            }
            let qp = HardCodes {
                codes: Array2::from_shape_fn((1, m), |_| r.random_range(0..5u32)),
            };
            let qn = HardCodes {
                codes: Array2::from_shape_fn((1, m), |_| r.random_range(0..5u32)),
            };
            let loss = rank_loss(&mut tape, &SoftAssign { per_book }, &qp, &qn).unwrap();
            let v = tape.value(loss)[(0, 0)];
            assert!((0.0..=(m as f32 + 1.0 + 1e-5)).contains(&v), "loss {v}");
        }
    }
}
