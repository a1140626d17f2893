//! Joint optimisation of the four losses with mini-batch SGD, One Cycle
//! learning rate, and the sigmoid weight schedules for the semantic and
//! quantisation terms.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{sample_label_pairs, sample_triplet, Graph, LabelSubset, PathAccess, Triplet};
use crate::model::{
    adaptive_margin_loss, semantic_margin_loss, AttrBatch, BoundEncoder, EncoderParams, InputMode,
    MarginMode, PairBatch, TripletBatch,
};
use crate::quant::{
    codeword_sum_soft, gumbel_softmax, hard_assign, quantisation_loss, rank_loss, BoundDecoder,
    BoundQuantEncoder, Codebooks, Decoder, HardCodes, QuantEncoder,
};
use crate::seeds;

/// Full training configuration. Defaults follow the reference recipe:
/// lr 0.001, batch 100, tau 1, omega 0.5, T = 10%, M = 8, K = 256, L = 128.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub base_lr: f64,
    pub tau: f32,
    pub omega: f64,
    pub m_c: f32,
    pub fraction_t: f64,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub hidden: Vec<usize>,
    pub quant_hidden: Vec<usize>,
    pub momentum: f32,
    pub max_hop: u8,
    pub seed: u64,
    /// `Some(v)` swaps the adaptive margin for the constant `v` (ablation).
    pub fixed_margin: Option<f32>,
    /// Drops the rank loss term entirely (ablation); the log reports 0.
    pub no_rank_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            base_lr: 0.001,
            tau: 1.0,
            omega: 0.5,
            m_c: 100.0,
            fraction_t: 0.10,
            m: 8,
            k: 256,
            l: 128,
            hidden: vec![512, 256, 128],
            quant_hidden: vec![256, 128],
            momentum: 0.9,
            max_hop: 6,
            seed: 42,
            fixed_margin: None,
            no_rank_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positives: &[(&str, f64)] = &[
            ("batch_size", self.batch_size as f64),
            ("base_lr", self.base_lr),
            ("tau", self.tau as f64),
            ("omega", self.omega),
            ("m_c", self.m_c as f64),
            ("m", self.m as f64),
            ("k", self.k as f64),
            ("l", self.l as f64),
        ];
        for (name, v) in positives {
            if !(*v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.fraction_t > 0.0 && self.fraction_t <= 1.0) {
            return Err(Error::Config(format!(
                "fraction_t must be in (0,1], got {}",
                self.fraction_t
            )));
        }
        if self.max_hop < 1 {
            return Err(Error::Config("max_hop must be >= 1".into()));
        }
        if self.hidden.is_empty() || *self.hidden.last().unwrap() != self.l {
            return Err(Error::Config(format!(
                "hidden widths {:?} must end at the embedding width {}",
                self.hidden, self.l
            )));
        }
        if self.quant_hidden.is_empty() {
            return Err(Error::Config("quant_hidden must not be empty".into()));
        }
        if let Some(v) = self.fixed_margin {
            if !(v > 0.0) {
                return Err(Error::Config("margin.value must be > 0".into()));
            }
        }
        if !(0.0..1.0).contains(&(self.momentum as f64)) {
            return Err(Error::Config("momentum must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn margin_mode(&self) -> MarginMode {
        match self.fixed_margin {
            Some(v) => MarginMode::Fixed(v),
            None => MarginMode::Adaptive,
        }
    }
}

/// Loss-weight schedules over training progress `mu` in [0,1]:
/// `alpha = 0.1 * s`, `beta = 1 - s` with `s = 1/(1+exp(-omega*mu))`.
/// Out-of-range progress is clamped with a warning.
pub fn schedules(mu: f64, omega: f64) -> (f64, f64) {
    let mu = if (0.0..=1.0).contains(&mu) {
        mu
    } else {
        log::warn!("training progress {mu} outside [0,1]; clamping");
        mu.clamp(0.0, 1.0)
    };
    let s = 1.0 / (1.0 + (-omega * mu).exp());
    (0.1 * s, 1.0 - s)
}

/// One Cycle learning rate: linear warmup from `base/25` to `base` over the
/// first 30% of steps, then cosine annealing down to `base/1e4`.
pub fn one_cycle_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    const WARMUP_FRAC: f64 = 0.3;
    const START_DIV: f64 = 25.0;
    const FINAL_DIV: f64 = 1e4;
    let start = base_lr / START_DIV;
    if total_steps == 0 {
        return start;
    }
    let warmup = WARMUP_FRAC * total_steps as f64;
    let s = (step.min(total_steps)) as f64;
    if s <= warmup {
        start + (base_lr - start) * if warmup > 0.0 { s / warmup } else { 1.0 }
    } else {
        let t = (s - warmup) / (total_steps as f64 - warmup);
        let floor = base_lr / FINAL_DIV;
        floor + (base_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Everything the checkpoint holds: the embedding encoder, the quantisation
/// autoencoder and the codebooks.
pub struct TrainedModel {
    pub encoder: EncoderParams,
    pub qenc: QuantEncoder,
    pub qdec: Decoder,
    pub codebooks: Codebooks,
    pub tau: f32,
}

const EVAL_BATCH: usize = 256;

impl TrainedModel {
    pub fn init(input: InputMode, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let encoder = EncoderParams::init(input, &cfg.hidden, rng)?;
        let qenc = QuantEncoder::init(cfg.l, &cfg.quant_hidden, cfg.m, cfg.k, rng)?;
        let mut dec_hidden: Vec<usize> = cfg.quant_hidden.clone();
        dec_hidden.reverse();
        let qdec = Decoder::mlp(cfg.l, &dec_hidden, rng)?;
        let codebooks = Codebooks::init(cfg.m, cfg.k, cfg.l, rng)?;
        Ok(TrainedModel {
            encoder,
            qenc,
            qdec,
            codebooks,
            tau: cfg.tau,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.embed_dim()
    }

    fn meta_array(&self) -> Array2<f32> {
        let mode_flag = match self.encoder.input {
            InputMode::Attrs { .. } => 0.0,
            InputMode::OneHot { .. } => 1.0,
        };
        Array2::from_shape_vec(
            (1, 7),
            vec![
                1.0,
                mode_flag,
                self.encoder.input.dim() as f32,
                self.codebooks.m as f32,
                self.codebooks.k as f32,
                self.codebooks.l as f32,
                self.tau,
            ],
        )
        .unwrap()
    }

    /// Write the NQCK checkpoint (canonical section order, byte-stable).
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let meta = self.meta_array();
        let mut sections: Vec<(String, Array2<f32>)> = vec![("meta".into(), meta)];
        for arr in self.named_arrays() {
            sections.push((arr.name, arr.array.clone()));
        }
        let borrowed: Vec<(String, &Array2<f32>)> =
            sections.iter().map(|(n, a)| (n.clone(), a)).collect();
        checkpoint::save(path, &borrowed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sections = checkpoint::load(path)?;
        let meta = sections.get("meta").ok_or(Error::Format {
            format: "NQCK",
            msg: "missing meta section".into(),
        })?;
        if meta.len() < 7 {
            return Err(Error::Format {
                format: "NQCK",
                msg: "meta section too short".into(),
            });
        }
        let dim = meta[(0, 2)] as usize;
        let input = if meta[(0, 1)] == 0.0 {
            InputMode::Attrs { dim }
        } else {
            InputMode::OneHot { n: dim }
        };
        let encoder = EncoderParams::from_sections(input, &sections)?;
        let qenc = QuantEncoder::from_sections(&sections)?;
        let qdec = Decoder::from_sections(&sections)?;
        let codebooks = Codebooks::from_sections(&sections)?;
        Ok(TrainedModel {
            encoder,
            qenc,
            qdec,
            codebooks,
            tau: meta[(0, 6)],
        })
    }

    fn named_arrays(&mut self) -> Vec<crate::layers::NamedArray<'_>> {
        let mut out = self.encoder.named_arrays();
        out.extend(self.qenc.named_arrays());
        out.extend(self.qdec.named_arrays());
        out.extend(self.codebooks.named_arrays());
        out
    }

    /// Evaluation-mode embeddings for the listed nodes (deterministic; uses
    /// running batch-norm statistics and a fixed internal batch size).
    pub fn embed_nodes(&self, graph: &Graph, nodes: &[u32]) -> Result<Array2<f32>> {
        let l = self.embed_dim();
        let mut out = Array2::<f32>::zeros((nodes.len(), l));
        for (chunk_idx, chunk) in nodes.chunks(EVAL_BATCH).enumerate() {
            let batch = AttrBatch::for_nodes(graph, chunk);
            let mut tape = Tape::new();
            let z = self.encoder.encode_eval(&mut tape, &batch)?;
            let zv = tape.value(z);
            for (r, _) in chunk.iter().enumerate() {
                out.row_mut(chunk_idx * EVAL_BATCH + r).assign(&zv.row(r));
            }
        }
        Ok(out)
    }

    pub fn embed_all(&self, graph: &Graph) -> Result<Array2<f32>> {
        let nodes: Vec<u32> = (0..graph.num_nodes() as u32).collect();
        self.embed_nodes(graph, &nodes)
    }

    /// Deterministic hard codes for every node: evaluation-mode encoding,
    /// noise-free softmax, argmax.
    pub fn assign_codes(&self, graph: &Graph) -> Result<HardCodes> {
        let n = graph.num_nodes();
        let mut codes = Array2::<u32>::zeros((n, self.codebooks.m));
        let nodes: Vec<u32> = (0..n as u32).collect();
        for (chunk_idx, chunk) in nodes.chunks(EVAL_BATCH).enumerate() {
            let batch = AttrBatch::for_nodes(graph, chunk);
            let mut tape = Tape::new();
            let z = self.encoder.encode_eval(&mut tape, &batch)?;
            let logits = self.qenc.logits_eval(&mut tape, z)?;
            let u = gumbel_softmax(&mut tape, &logits, self.tau, None)?;
            let hard = hard_assign(&tape, &u);
            for r in 0..chunk.len() {
                codes
                    .row_mut(chunk_idx * EVAL_BATCH + r)
                    .assign(&hard.codes.row(r));
            }
        }
        Ok(HardCodes { codes })
    }
}

/// Per-step loss components (raw, unweighted) plus the weights in force.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_q: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
}

/// Per-epoch means of the loss components; alpha/beta/lr are the last
/// step's values.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: u32,
    pub l_a: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
}

/// One sampled mini-batch, re-indexed to batch rows.
pub struct BatchData {
    pub nodes: Vec<u32>,
    pub attrs: AttrBatch,
    pub triplets: TripletBatch,
    pub pairs: Option<PairBatch>,
}

struct ForwardOut {
    total: Tensor,
    stats: StepStats,
    bound_enc: BoundEncoder,
    bound_qenc: BoundQuantEncoder,
    bound_dec: BoundDecoder,
    bound_books: Vec<Tensor>,
}

pub struct Trainer<'g> {
    pub cfg: TrainConfig,
    graph: &'g Graph,
    pub model: TrainedModel,
    paths: PathAccess<'g>,
    subset: Option<LabelSubset>,
    momentum_buf: BTreeMap<String, Array2<f32>>,
    sample_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    step: u64,
    total_steps: u64,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g Graph, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let input = InputMode::for_graph(graph);
        let mut init_rng = seeds::rng_for(cfg.seed, seeds::INIT, 0);
        let model = TrainedModel::init(input, cfg, &mut init_rng)?;
        Self::from_model(graph, cfg, model)
    }

    /// Resume path: reuse an existing model's parameters (momentum starts
    /// cold).
    pub fn from_model(graph: &'g Graph, cfg: &TrainConfig, model: TrainedModel) -> Result<Self> {
        cfg.validate()?;
        if model.encoder.input != InputMode::for_graph(graph) {
            return Err(Error::Dim(
                "checkpoint input mode does not match the graph".into(),
            ));
        }
        let mut paths = PathAccess::build(graph, cfg.max_hop)?;
        // Degenerate graphs fail before any epoch; the probe uses its own
        // stream so training draws are unaffected.
        let mut probe = seeds::rng_for(cfg.seed, seeds::SAMPLE, u64::MAX);
        sample_triplet(&mut paths, &mut probe)?;

        let subset = match graph.labels() {
            Some(labels) if labels.labelled_nodes().len() >= 2 => {
                let mut subset_rng = seeds::rng_for(cfg.seed, seeds::SUBSET, 0);
                Some(LabelSubset::select(graph, cfg.fraction_t, &mut subset_rng)?)
            }
            _ => {
                log::warn!("fewer than 2 labelled nodes; semantic margin loss disabled");
                None
            }
        };
        let batches = Self::batches_per_epoch(graph.num_nodes(), cfg.batch_size);
        Ok(Trainer {
            cfg: cfg.clone(),
            graph,
            model,
            paths,
            subset,
            momentum_buf: BTreeMap::new(),
            sample_rng: seeds::rng_for(cfg.seed, seeds::SAMPLE, 0),
            noise_rng: seeds::rng_for(cfg.seed, seeds::NOISE, 0),
            step: 0,
            total_steps: cfg.epochs as u64 * batches as u64,
        })
    }

    pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
        n.div_ceil(batch_size).max(1)
    }

    pub fn progress(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.step as f64 / self.total_steps as f64
        }
    }

    /// Snapshot of the Gumbel-noise stream, for replaying a step's forward
    /// pass (descent checks).
    pub fn clone_noise_rng(&self) -> ChaCha8Rng {
        self.noise_rng.clone()
    }

    /// Sample one batch: `batch_size` triplets plus `batch_size/2` label
    /// pairs, deduplicated into a single node list in first-seen order.
    pub fn sample_batch(&mut self) -> Result<BatchData> {
        let bs = self.cfg.batch_size;
        let mut triplets: Vec<Triplet> = Vec::with_capacity(bs);
        for _ in 0..bs {
            triplets.push(sample_triplet(&mut self.paths, &mut self.sample_rng)?);
        }
        let raw_pairs = match &self.subset {
            Some(subset) => Some(sample_label_pairs(
                self.graph,
                subset,
                (bs / 2).max(1),
                &mut self.sample_rng,
            )?),
            None => None,
        };

        let mut nodes: Vec<u32> = Vec::new();
        let mut row_of: HashMap<u32, usize> = HashMap::new();
        let intern = |node: u32, nodes: &mut Vec<u32>, row_of: &mut HashMap<u32, usize>| {
            *row_of.entry(node).or_insert_with(|| {
                nodes.push(node);
                nodes.len() - 1
            })
        };
        for t in &triplets {
            intern(t.anchor, &mut nodes, &mut row_of);
            intern(t.positive, &mut nodes, &mut row_of);
            intern(t.negative, &mut nodes, &mut row_of);
        }
        if let Some(pairs) = &raw_pairs {
            for p in pairs {
                intern(p.i, &mut nodes, &mut row_of);
                intern(p.j, &mut nodes, &mut row_of);
            }
        }

        let triplet_batch =
            TripletBatch::from_triplets(&triplets, self.cfg.margin_mode(), |n| row_of[&n]);
        let pair_batch = raw_pairs
            .map(|pairs| PairBatch::from_pairs(&pairs, self.cfg.m_c, |n| row_of[&n]));
        let attrs = AttrBatch::for_nodes(self.graph, &nodes);
        Ok(BatchData {
            nodes,
            attrs,
            triplets: triplet_batch,
            pairs: pair_batch,
        })
    }

    fn forward_batch(
        &mut self,
        batch: &BatchData,
        noise: &mut ChaCha8Rng,
        mu: f64,
        lr: f64,
        partial: &mut StepStats,
    ) -> Result<(Tape, ForwardOut)> {
        let (alpha, beta) = schedules(mu, self.cfg.omega);
        partial.alpha = alpha;
        partial.beta = beta;
        partial.lr = lr;

        let mut tape = Tape::new();
        let (z, bound_enc) = self.model.encoder.encode(&mut tape, &batch.attrs, true)?;

        let l_a = adaptive_margin_loss(&mut tape, z, &batch.triplets)?;
        partial.l_a = tape.value(l_a)[(0, 0)] as f64;

        let (logits, bound_qenc) = self.model.qenc.logits(&mut tape, z, true)?;
        let u = gumbel_softmax(&mut tape, &logits, self.cfg.tau, Some(noise))?;
        let bound_books = self.model.codebooks.bind(&mut tape)?;
        let sum = codeword_sum_soft(&mut tape, &u, &bound_books)?;
        let (recon, bound_dec) = self.model.qdec.forward(&mut tape, sum, true)?;
        let l_q = quantisation_loss(&mut tape, z, recon)?;
        partial.l_q = tape.value(l_q)[(0, 0)] as f64;

        let l_r = if self.cfg.no_rank_loss {
            None
        } else {
            let hard = hard_assign(&tape, &u);
            let q_p = hard.select_rows(&batch.triplets.positive_rows);
            let q_n = hard.select_rows(&batch.triplets.negative_rows);
            let u_a = u.gather_rows(&mut tape, &batch.triplets.anchor_rows)?;
            let l = rank_loss(&mut tape, &u_a, &q_p, &q_n)?;
            partial.l_r = tape.value(l)[(0, 0)] as f64;
            Some(l)
        };

        let l_c = match &batch.pairs {
            Some(pairs) if !pairs.is_empty() => {
                // The subset loss is a double sum normalised by 1/T, so its
                // weight grows with the supervision fraction; the sampled
                // mean is rescaled accordingly (1x at the default 10%).
                let mean = semantic_margin_loss(&mut tape, z, pairs)?;
                let l = tape.scale(mean, (self.cfg.fraction_t / 0.10) as f32)?;
                partial.l_c = tape.value(l)[(0, 0)] as f64;
                Some(l)
            }
            _ => None,
        };

        // total = l_a + l_r + alpha*l_c + beta*l_q
        let mut total = l_a;
        if let Some(l_r) = l_r {
            total = tape.add(total, l_r)?;
        }
        if let Some(l_c) = l_c {
            let scaled = tape.scale(l_c, alpha as f32)?;
            total = tape.add(total, scaled)?;
        }
        let weighted_q = tape.scale(l_q, beta as f32)?;
        total = tape.add(total, weighted_q)?;
        partial.total = tape.value(total)[(0, 0)] as f64;

        let stats = *partial;
        Ok((
            tape,
            ForwardOut {
                total,
                stats,
                bound_enc,
                bound_qenc,
                bound_dec,
                bound_books,
            },
        ))
    }

    /// Forward-only loss on a frozen batch (no parameter update, no step
    /// count advance). `noise` must replicate the stream the comparison
    /// step consumed.
    pub fn loss_on(
        &mut self,
        batch: &BatchData,
        noise: &mut ChaCha8Rng,
        mu: f64,
    ) -> Result<StepStats> {
        let mut partial = StepStats::default();
        let lr = one_cycle_lr(self.step, self.total_steps, self.cfg.base_lr);
        let (_tape, out) = self
            .forward_batch(batch, noise, mu, lr, &mut partial)
            .map_err(|e| dress_non_finite(e, &partial))?;
        Ok(out.stats)
    }

    /// One optimisation step: forward, backward, SGD-with-momentum update.
    pub fn train_step(&mut self, batch: &BatchData) -> Result<StepStats> {
        let mu = self.progress();
        let lr = one_cycle_lr(self.step, self.total_steps, self.cfg.base_lr);
        let mut noise = self.noise_rng.clone();
        let mut partial = StepStats::default();
        let (mut tape, out) = self
            .forward_batch(batch, &mut noise, mu, lr, &mut partial)
            .map_err(|e| dress_non_finite(e, &partial))?;
        self.noise_rng = noise;

        tape.backward(out.total)
            .map_err(|e| dress_non_finite(e, &partial))?;

        let mut handles = self.model.encoder.grad_handles(&out.bound_enc);
        handles.extend(self.model.qenc.grad_handles(&out.bound_qenc));
        handles.extend(self.model.qdec.grad_handles(&out.bound_dec));
        handles.extend(self.model.codebooks.grad_handles(&out.bound_books));

        let mut grads: BTreeMap<String, Array2<f32>> = BTreeMap::new();
        for (name, tensor) in handles {
            if let Some(g) = tape.grad(tensor) {
                grads.insert(name, g.clone());
            }
        }
        drop(tape);

        let momentum = self.cfg.momentum;
        let lr32 = lr as f32;
        for arr in self.model.named_arrays() {
            if !arr.trainable {
                continue;
            }
            if let Some(g) = grads.get(&arr.name) {
                let v = self
                    .momentum_buf
                    .entry(arr.name.clone())
                    .or_insert_with(|| Array2::zeros(g.dim()));
                v.zip_mut_with(g, |v, &g| *v = momentum * *v + g);
                arr.array.zip_mut_with(v, |p, &v| *p -= lr32 * v);
            }
        }

        self.step += 1;
        Ok(out.stats)
    }

    pub fn run_epoch(&mut self, epoch: u32) -> Result<EpochStats> {
        let batches = Self::batches_per_epoch(self.graph.num_nodes(), self.cfg.batch_size);
        let mut acc = EpochStats {
            epoch,
            l_a: 0.0,
            l_r: 0.0,
            l_c: 0.0,
            l_q: 0.0,
            alpha: 0.0,
            beta: 0.0,
            lr: 0.0,
        };
        for _ in 0..batches {
            let batch = self.sample_batch()?;
            let stats = self.train_step(&batch)?;
            acc.l_a += stats.l_a;
            acc.l_r += stats.l_r;
            acc.l_c += stats.l_c;
            acc.l_q += stats.l_q;
            acc.alpha = stats.alpha;
            acc.beta = stats.beta;
            acc.lr = stats.lr;
        }
        let inv = 1.0 / batches as f64;
        acc.l_a *= inv;
        acc.l_r *= inv;
        acc.l_c *= inv;
        acc.l_q *= inv;
        Ok(acc)
    }
}

fn dress_non_finite(err: Error, partial: &StepStats) -> Error {
    match err {
        Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!(
            "{msg}; components so far: l_a={:.6e} l_r={:.6e} l_c={:.6e} l_q={:.6e} (alpha={:.4}, beta={:.4}, lr={:.3e})",
            partial.l_a, partial.l_r, partial.l_c, partial.l_q, partial.alpha, partial.beta, partial.lr
        )),
        other => other,
    }
}

pub struct TrainOutput {
    pub model: TrainedModel,
    pub log: Vec<EpochStats>,
}

/// Train from scratch for `cfg.epochs` epochs.
pub fn fit(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutput> {
    fit_from(graph, cfg, None)
}

/// Train, optionally resuming from an existing model.
pub fn fit_from(
    graph: &Graph,
    cfg: &TrainConfig,
    resume: Option<TrainedModel>,
) -> Result<TrainOutput> {
    let mut trainer = match resume {
        Some(model) => Trainer::from_model(graph, cfg, model)?,
        None => Trainer::new(graph, cfg)?,
    };
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let stats = trainer.run_epoch(epoch)?;
        log::info!(
            "epoch {epoch}: l_a={:.4} l_r={:.4} l_c={:.4} l_q={:.4} lr={:.3e}",
            stats.l_a,
            stats.l_r,
            stats.l_c,
            stats.l_q,
            stats.lr
        );
        log.push(stats);
    }
    Ok(TrainOutput {
        model: trainer.model,
        log,
    })
}

/// Train with early stopping on validation link AUC: embeddings are scored
/// after every epoch against the held-out positives and an equal number of
/// sampled non-edges; training stops after `patience` epochs without
/// improvement.
pub fn fit_early_stop(
    graph: &Graph,
    cfg: &TrainConfig,
    val_edges: &[(u32, u32)],
    patience: u32,
) -> Result<TrainOutput> {
    if val_edges.is_empty() {
        return Err(Error::Eval("early stopping needs validation edges".into()));
    }
    let mut trainer = Trainer::new(graph, cfg)?;
    let mut log = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0u32;
    for epoch in 0..cfg.epochs {
        let stats = trainer.run_epoch(epoch)?;
        log.push(stats);
        let emb = trainer.model.embed_all(graph)?;
        let mut neg_rng = seeds::rng_for(cfg.seed, seeds::VAL, epoch as u64);
        let auc = crate::eval::embedding_link_auc(&emb, graph, val_edges, &mut neg_rng)?;
        if auc > best + 1e-6 {
            best = auc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                log::info!("early stop at epoch {epoch}: val AUC stalled at {best:.4}");
                break;
            }
        }
    }
    Ok(TrainOutput {
        model: trainer.model,
        log,
    })
}

/// Training log as CSV: `epoch,l_a,l_r,l_c,l_q,alpha,beta,lr`.
pub fn write_log_csv(path: &Path, log: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,l_a,l_r,l_c,l_q,alpha,beta,lr\n");
    for row in log {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            row.epoch, row.l_a, row.l_r, row.l_c, row.l_q, row.alpha, row.beta, row.lr
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_endpoints() {
        let (alpha, beta) = schedules(0.0, 0.5);
        assert_abs_diff_eq!(alpha, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(beta, 0.5, epsilon = 1e-12);
        let (alpha, beta) = schedules(1.0, 0.5);
        assert_abs_diff_eq!(alpha, 0.0622459331, epsilon = 1e-6);
        assert_abs_diff_eq!(beta, 0.3775406688, epsilon = 1e-6);
    }

    #[test]
    fn schedule_monotonicity() {
        let mut last_alpha = -1.0;
        let mut last_beta = 2.0;
        for i in 0..=100 {
            let mu = i as f64 / 100.0;
            let (alpha, beta) = schedules(mu, 0.5);
            assert!(alpha >= last_alpha);
            assert!(beta <= last_beta);
            last_alpha = alpha;
            last_beta = beta;
        }
    }

    #[test]
    fn schedule_clamps_out_of_range() {
        assert_eq!(schedules(-0.5, 0.5), schedules(0.0, 0.5));
        assert_eq!(schedules(1.5, 0.5), schedules(1.0, 0.5));
    }

    #[test]
    fn one_cycle_endpoints_and_peak() {
        let base = 0.001;
        let total = 1000;
        assert_abs_diff_eq!(one_cycle_lr(0, total, base), base / 25.0, epsilon = 1e-15);
        assert_abs_diff_eq!(one_cycle_lr(300, total, base), base, epsilon = 1e-12);
        assert_abs_diff_eq!(one_cycle_lr(total, total, base), base / 1e4, epsilon = 1e-9);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.fraction_t = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.hidden = vec![64, 32];
        assert!(cfg.validate().is_err(), "hidden must end at l");
        let mut cfg = TrainConfig::default();
        cfg.fixed_margin = Some(-1.0);
        assert!(cfg.validate().is_err());
    }
}
