//! Triplet and label-pair sampling for the training loop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::paths::{PathAccess, UNREACHABLE};
use super::Graph;
use crate::error::{Error, Result};

/// A structural triplet: `delta_ap < delta_an`, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: u32,
    pub positive: u32,
    pub negative: u32,
    pub delta_ap: u8,
    pub delta_an: u8,
}

const ANCHOR_ATTEMPTS: usize = 64;

/// Group a distance row into hop rings `1..=max_hop`, skipping the anchor
/// itself and unreachable nodes. Returns the list of non-empty hops and the
/// per-hop node lists.
fn hop_rings(row: &[u8], max_hop: u8) -> (Vec<u8>, Vec<Vec<u32>>) {
    let mut rings: Vec<Vec<u32>> = vec![Vec::new(); max_hop as usize + 1];
    for (j, &d) in row.iter().enumerate() {
        if d != 0 && d != UNREACHABLE && d <= max_hop {
            rings[d as usize].push(j as u32);
        }
    }
    let hops: Vec<u8> = (1..=max_hop)
        .filter(|&h| !rings[h as usize].is_empty())
        .collect();
    (hops, rings)
}

fn triplet_from_anchor(
    anchor: u32,
    row: &[u8],
    max_hop: u8,
    rng: &mut ChaCha8Rng,
) -> Option<Triplet> {
    let (hops, rings) = hop_rings(row, max_hop);
    if hops.len() < 2 {
        return None;
    }
    // Uniform over unordered pairs of distinct non-empty hop counts, then
    // uniform within each ring.
    let n_pairs = hops.len() * (hops.len() - 1) / 2;
    let mut pick = rng.random_range(0..n_pairs);
    let (mut lo, mut hi) = (0, 1);
    'outer: for i in 0..hops.len() {
        for j in (i + 1)..hops.len() {
            if pick == 0 {
                lo = i;
                hi = j;
                break 'outer;
            }
            pick -= 1;
        }
    }
    let (d_p, d_n) = (hops[lo], hops[hi]);
    let ring_p = &rings[d_p as usize];
    let ring_n = &rings[d_n as usize];
    let positive = ring_p[rng.random_range(0..ring_p.len())];
    let negative = ring_n[rng.random_range(0..ring_n.len())];
    Some(Triplet {
        anchor,
        positive,
        negative,
        delta_ap: d_p,
        delta_an: d_n,
    })
}

/// Sample one triplet: anchor uniform, then two distinct hop counts uniform
/// over the anchor's non-empty rings, then uniform nodes within each ring.
/// Anchors without two distinct finite rings are resampled; if no anchor in
/// the whole graph qualifies the graph is degenerate.
pub fn sample_triplet(paths: &mut PathAccess<'_>, rng: &mut ChaCha8Rng) -> Result<Triplet> {
    let n = paths.num_nodes();
    if n < 3 {
        return Err(Error::DegenerateGraph(
            "need at least 3 nodes to form a triplet".into(),
        ));
    }
    let max_hop = paths.max_hop();
    for _ in 0..ANCHOR_ATTEMPTS {
        let anchor = rng.random_range(0..n) as u32;
        let row = paths.row(anchor).to_vec();
        if let Some(t) = triplet_from_anchor(anchor, &row, max_hop, rng) {
            return Ok(t);
        }
    }
    // Deterministic fallback: collect every qualifying anchor.
    let qualifying: Vec<u32> = (0..n as u32)
        .filter(|&a| {
            let row = paths.row(a);
            let (hops, _) = hop_rings(row, max_hop);
            hops.len() >= 2
        })
        .collect();
    if qualifying.is_empty() {
        return Err(Error::DegenerateGraph(
            "no anchor has two distinct finite hop rings".into(),
        ));
    }
    let anchor = qualifying[rng.random_range(0..qualifying.len())];
    let row = paths.row(anchor).to_vec();
    Ok(triplet_from_anchor(anchor, &row, max_hop, rng).expect("anchor was verified"))
}

/// A labelled pair drawn from the semi-supervision subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelPair {
    pub i: u32,
    pub j: u32,
    pub same_label: bool,
}

/// The fixed subset of labelled nodes feeding the semantic margin loss,
/// chosen once per run.
#[derive(Debug, Clone)]
pub struct LabelSubset {
    nodes: Vec<u32>,
}

impl LabelSubset {
    /// Draw `fraction * N` labelled nodes (all of them when fewer exist,
    /// with at least two required).
    pub fn select(graph: &Graph, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label fraction must be in (0,1], got {fraction}"
            )));
        }
        let labels = graph
            .labels()
            .ok_or_else(|| Error::Invalid("graph has no labels".into()))?;
        let mut labelled = labels.labelled_nodes();
        if labelled.len() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 labelled nodes, found {}",
                labelled.len()
            )));
        }
        let target = ((fraction * graph.num_nodes() as f64).round() as usize)
            .clamp(2, labelled.len());
        // Partial Fisher-Yates: the first `target` entries are a uniform draw.
        for i in 0..target {
            let j = rng.random_range(i..labelled.len());
            labelled.swap(i, j);
        }
        labelled.truncate(target);
        labelled.sort_unstable();
        Ok(LabelSubset { nodes: labelled })
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Draw `count` pairs of distinct nodes from the subset; `same_label` is
/// true iff the two label sets intersect.
pub fn sample_label_pairs(
    graph: &Graph,
    subset: &LabelSubset,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabelPair>> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::Invalid("graph has no labels".into()))?;
    if subset.len() < 2 {
        return Err(Error::Invalid(
            "label subset must hold at least 2 nodes".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0..subset.len());
        let mut b = rng.random_range(0..subset.len() - 1);
        if b >= a {
            b += 1;
        }
        let (i, j) = (subset.nodes[a], subset.nodes[b]);
        pairs.push(LabelPair {
            i,
            j,
            same_label: labels.same_label(i, j),
        });
    }
    Ok(pairs)
}
