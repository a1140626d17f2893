//! Dense and dense+batchnorm+ReLU building blocks shared by the embedding
//! encoder and the quantisation autoencoder.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BnState, Tape, Tensor};
use crate::error::{Error, Result};

/// He-style initialisation: N(0, sqrt(2 / fan_in)).
pub fn init_weight(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let std = (2.0 / rows as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng) as f32)
}

/// Plain affine layer.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f32>,
    pub b: Array2<f32>,
}

/// Tape handles for one bound layer, used to read gradients after backward.
#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: init_weight(input, output, rng),
            b: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundDense> {
        Ok(BoundDense {
            w: tape.leaf(self.w.clone(), true)?,
            b: tape.leaf(self.b.clone(), true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Tensor) -> Result<(Tensor, BoundDense)> {
        let bound = self.bind(tape)?;
        let y = tape.dense(x, bound.w, bound.b)?;
        Ok((y, bound))
    }

    /// Gradient-free forward for read-only evaluation paths.
    pub fn forward_eval(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor> {
        let w = tape.constant(self.w.clone())?;
        let b = tape.constant(self.b.clone())?;
        tape.dense(x, w, b)
    }
}

/// Dense layer followed by batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct DenseBn {
    pub w: Array2<f32>,
    pub b: Array2<f32>,
    pub gamma: Array2<f32>,
    pub beta: Array2<f32>,
    pub bn: BnState,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDenseBn {
    pub w: Tensor,
    pub b: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl DenseBn {
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseBn {
            w: init_weight(input, output, rng),
            b: Array2::zeros((1, output)),
            gamma: Array2::ones((1, output)),
            beta: Array2::zeros((1, output)),
            bn: BnState::new(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundDenseBn> {
        Ok(BoundDenseBn {
            w: tape.leaf(self.w.clone(), true)?,
            b: tape.leaf(self.b.clone(), true)?,
            gamma: tape.leaf(self.gamma.clone(), true)?,
            beta: tape.leaf(self.beta.clone(), true)?,
        })
    }

    /// Affine map, then batch norm (training mode updates running stats),
    /// then ReLU.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        x: Tensor,
        train: bool,
    ) -> Result<(Tensor, BoundDenseBn)> {
        let bound = self.bind(tape)?;
        let lin = tape.dense(x, bound.w, bound.b)?;
        let normed = tape.batchnorm(lin, bound.gamma, bound.beta, &mut self.bn, train)?;
        let y = tape.relu(normed)?;
        Ok((y, bound))
    }

    /// Variant for a pre-gathered first layer (one-hot input mode): the
    /// affine part is `w[ids] + b` instead of a matmul.
    pub fn forward_lookup(
        &mut self,
        tape: &mut Tape,
        ids: &[usize],
        train: bool,
    ) -> Result<(Tensor, BoundDenseBn)> {
        let bound = self.bind(tape)?;
        let rows = tape.gather_rows(bound.w, ids)?;
        let lin = tape.add_bias(rows, bound.b)?;
        let normed = tape.batchnorm(lin, bound.gamma, bound.beta, &mut self.bn, train)?;
        let y = tape.relu(normed)?;
        Ok((y, bound))
    }

    /// Gradient-free evaluation forward (running batch-norm statistics).
    pub fn forward_eval(&self, tape: &mut Tape, x: Tensor) -> Result<Tensor> {
        let w = tape.constant(self.w.clone())?;
        let b = tape.constant(self.b.clone())?;
        let gamma = tape.constant(self.gamma.clone())?;
        let beta = tape.constant(self.beta.clone())?;
        let lin = tape.dense(x, w, b)?;
        let normed = tape.batchnorm_eval(lin, gamma, beta, &self.bn)?;
        tape.relu(normed)
    }

    pub fn forward_lookup_eval(&self, tape: &mut Tape, ids: &[usize]) -> Result<Tensor> {
        let w = tape.constant(self.w.clone())?;
        let b = tape.constant(self.b.clone())?;
        let gamma = tape.constant(self.gamma.clone())?;
        let beta = tape.constant(self.beta.clone())?;
        let rows = tape.gather_rows(w, ids)?;
        let lin = tape.add_bias(rows, b)?;
        let normed = tape.batchnorm_eval(lin, gamma, beta, &self.bn)?;
        tape.relu(normed)
    }
}

/// A named view over every array a model wants checkpointed: trainable
/// parameters and batch-norm running state.
pub struct NamedArray<'a> {
    pub name: String,
    pub array: &'a mut Array2<f32>,
    pub trainable: bool,
}

pub fn named<'a>(name: String, array: &'a mut Array2<f32>, trainable: bool) -> NamedArray<'a> {
    NamedArray {
        name,
        array,
        trainable,
    }
}

impl Dense {
    pub fn named_arrays(&mut self, prefix: &str) -> Vec<NamedArray<'_>> {
        vec![
            named(format!("{prefix}.w"), &mut self.w, true),
            named(format!("{prefix}.b"), &mut self.b, true),
        ]
    }

    /// Pairs of (name, bound tensor) matching [`Dense::named_arrays`] order.
    pub fn grad_handles(&self, prefix: &str, bound: &BoundDense) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), bound.w),
            (format!("{prefix}.b"), bound.b),
        ]
    }
}

impl DenseBn {
    pub fn named_arrays(&mut self, prefix: &str) -> Vec<NamedArray<'_>> {
        vec![
            named(format!("{prefix}.w"), &mut self.w, true),
            named(format!("{prefix}.b"), &mut self.b, true),
            named(format!("{prefix}.gamma"), &mut self.gamma, true),
            named(format!("{prefix}.beta"), &mut self.beta, true),
            named(format!("{prefix}.bn_mean"), &mut self.bn.running_mean, false),
            named(format!("{prefix}.bn_var"), &mut self.bn.running_var, false),
        ]
    }

    pub fn grad_handles(&self, prefix: &str, bound: &BoundDenseBn) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), bound.w),
            (format!("{prefix}.b"), bound.b),
            (format!("{prefix}.gamma"), bound.gamma),
            (format!("{prefix}.beta"), bound.beta),
        ]
    }
}

/// Restore an array from checkpoint sections, enforcing shape equality.
pub fn restore_array(
    sections: &std::collections::BTreeMap<String, Array2<f32>>,
    name: &str,
    target: &mut Array2<f32>,
) -> Result<()> {
    let src = sections
        .get(name)
        .ok_or_else(|| Error::Format {
            format: "NQCK",
            msg: format!("missing section `{name}`"),
        })?;
    if src.dim() != target.dim() {
        return Err(Error::Format {
            format: "NQCK",
            msg: format!(
                "section `{name}` has shape {}x{}, expected {}x{}",
                src.nrows(),
                src.ncols(),
                target.nrows(),
                target.ncols()
            ),
        });
    }
    target.assign(src);
    Ok(())
}
