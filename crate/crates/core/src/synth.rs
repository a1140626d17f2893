//! Seeded stochastic-block-model fixtures: community-structured graphs with
//! noisy community-indicator attributes and community labels.
//!
//! Nodes carry a latent angle on a shared circle. Edge probabilities keep
//! the configured within/cross marginal rates but concentrate on small
//! angular distances, and part of each attribute vector is an angular
//! window, so attributes correlate with adjacency the way bag-of-words
//! attributes correlate with citations in real networks. Without that
//! coupling an attribute-driven encoder has nothing to learn links from.
//!
//! Each community occupies two opposite arcs of the circle. Local angular
//! geometry (what link prediction needs) says nothing about which far-away
//! arc shares a node's community, so label supervision carries information
//! the structure alone cannot provide.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, SparseAttrs};
use crate::seeds;

#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub attr_dim: usize,
    /// Flip rate of the community-indicator bits.
    pub attr_noise: f64,
    /// Probability that a node's label reads as a neighbouring community
    /// (labels are imperfect observations of the structural blocks).
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 1000,
            communities: 5,
            p_in: 0.1,
            p_out: 0.005,
            attr_dim: 300,
            attr_noise: 0.05,
            label_noise: 0.0,
            seed: 7,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 || self.communities < 1 || self.communities > self.nodes {
            return Err(Error::Config("need 2 <= communities <= nodes".into()));
        }
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("attr_noise", self.attr_noise),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

// Angular decay scale of the edge kernel.
const KERNEL_SCALE: f64 = std::f64::consts::PI / 10.0;

fn kernel(dist: f64) -> f64 {
    (-dist / KERNEL_SCALE).exp()
}

fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % (2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d)
}

// Fixed half-width of the angular attribute window, as a fraction of pi.
const WINDOW_FRACTION: f64 = 0.2;

/// Stripe index on a circle split into `stripes` equal arcs.
fn arc_of(angle: f64, stripes: usize) -> usize {
    let frac = angle / (2.0 * std::f64::consts::PI);
    ((frac * stripes as f64) as usize).min(stripes - 1)
}

/// Generate the latent-angle stochastic block model: nodes sit on a circle,
/// each community owns two opposite arcs of it, and edges concentrate on
/// small angular distances while keeping the configured within/cross
/// marginal rates (kernel normalisation is computed empirically per pair
/// type). Nodes that come out isolated are wired to a same-community peer
/// so every node can enter training.
pub fn generate(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.nodes;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut rng = seeds::rng_for(cfg.seed, seeds::SYNTH, 0);
    let angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * two_pi).collect();
    // Two opposite stripes per community.
    let community: Vec<usize> = angles
        .iter()
        .map(|&a| arc_of(a, 2 * cfg.communities) % cfg.communities)
        .collect();

    // Empirical kernel means per pair type keep the marginals at p_in/p_out.
    let (mut kin_sum, mut kin_n, mut kout_sum, mut kout_n) = (0f64, 0u64, 0f64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = kernel(circle_dist(angles[i], angles[j]));
            if community[i] == community[j] {
                kin_sum += k;
                kin_n += 1;
            } else {
                kout_sum += k;
                kout_n += 1;
            }
        }
    }
    let z_in = (kin_sum / kin_n.max(1) as f64).max(1e-12);
    let z_out = (kout_sum / kout_n.max(1) as f64).max(1e-12);

    let mut edges: Vec<(u32, u32)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (base, z) = if community[i] == community[j] {
                (cfg.p_in, z_in)
            } else {
                (cfg.p_out, z_out)
            };
            let p = (base * kernel(circle_dist(angles[i], angles[j])) / z).min(1.0);
            if rng.random::<f64>() < p {
                edges.push((i as u32, j as u32));
            }
        }
    }

    // Patch up isolated nodes.
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
    }
    for i in 0..n {
        if degree[i] > 0 {
            continue;
        }
        let peers: Vec<usize> = (0..n)
            .filter(|&j| j != i && community[j] == community[i])
            .collect();
        let pool: Vec<usize> = if peers.is_empty() {
            (0..n).filter(|&j| j != i).collect()
        } else {
            peers
        };
        let j = pool[rng.random_range(0..pool.len())];
        edges.push((i as u32, j as u32));
        degree[i] += 1;
        degree[j] += 1;
    }

    // Attributes: the first half holds per-community indicator blocks with
    // iid bit flips; the second half is a circle of window bits encoding the
    // latent angle. Keeping the two ranges disjoint stops a wide window from
    // mimicking a foreign community's block.
    let mut attr_rng = seeds::rng_for(cfg.seed, seeds::SYNTH, 1);
    let indicator_dims = (cfg.attr_dim / 2).max(cfg.communities);
    let circle_dims = cfg.attr_dim - indicator_dims;
    let block = indicator_dims.div_ceil(cfg.communities).max(1);
    let window = WINDOW_FRACTION * std::f64::consts::PI;
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    for i in 0..n {
        let c = community[i];
        let lo = (c * block).min(indicator_dims);
        let hi = ((c + 1) * block).min(indicator_dims);
        let mut row = Vec::new();
        for bit in 0..cfg.attr_dim {
            let on = if bit < indicator_dims {
                let indicator = bit >= lo && bit < hi;
                let flip = attr_rng.random::<f64>() < cfg.attr_noise;
                indicator != flip
            } else if circle_dims > 0 {
                let bit_angle = two_pi * (bit - indicator_dims) as f64 / circle_dims as f64;
                circle_dist(bit_angle, angles[i]) < window
            } else {
                false
            };
            if on {
                row.push(bit as u32);
            }
        }
        rows.push(row);
    }

    // Labels observe the community through a jittered angle, so nodes near
    // a stripe boundary can read as the neighbouring community. Label noise
    // is the jitter half-width relative to the stripe width.
    let mut label_rng = seeds::rng_for(cfg.seed, seeds::SYNTH, 2);
    let stripes = 2 * cfg.communities;
    let jitter_halfwidth = cfg.label_noise * two_pi / stripes as f64;
    let label_rows: Vec<Vec<u32>> = (0..n)
        .map(|i| {
            let jitter = (label_rng.random::<f64>() * 2.0 - 1.0) * jitter_halfwidth;
            let shifted = (angles[i] + jitter).rem_euclid(two_pi);
            vec![(arc_of(shifted, stripes) % cfg.communities) as u32]
        })
        .collect();
    let labels = Labels {
        count: cfg.communities,
        rows: label_rows,
    };
    Graph::from_edges(n, &edges)?
        .with_attrs(SparseAttrs {
            dim: cfg.attr_dim,
            rows,
        })?
        .with_labels(labels)
}

pub struct FixtureFiles {
    pub edges: PathBuf,
    pub attrs: PathBuf,
    pub labels: PathBuf,
}

/// Write a graph in the text ingestion formats (edges / attribute index
/// lists / node labels).
pub fn write_files(graph: &Graph, dir: &Path) -> Result<FixtureFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let edges_path = dir.join("edges.txt");
    let attrs_path = dir.join("attrs.txt");
    let labels_path = dir.join("labels.txt");

    let mut buf = String::new();
    for (i, j) in graph.edges() {
        buf.push_str(&format!("{i} {j}\n"));
    }
    std::fs::write(&edges_path, &buf).map_err(|e| Error::io(&edges_path, e))?;

    if let Some(attrs) = graph.attrs() {
        let file = std::fs::File::create(&attrs_path).map_err(|e| Error::io(&attrs_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for row in &attrs.rows {
            let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
            writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io(&attrs_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&attrs_path, e))?;
    }

    if let Some(labels) = graph.labels() {
        let file = std::fs::File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for (node, row) in labels.rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let ids: Vec<String> = row.iter().map(|l| l.to_string()).collect();
            writeln!(w, "{node} {}", ids.join(",")).map_err(|e| Error::io(&labels_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&labels_path, e))?;
    }

    Ok(FixtureFiles {
        edges: edges_path,
        attrs: attrs_path,
        labels: labels_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SbmConfig {
        SbmConfig {
            nodes: 60,
            communities: 3,
            p_in: 0.3,
            p_out: 0.01,
            attr_dim: 30,
            attr_noise: 0.05,
            label_noise: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_cfg()).unwrap();
        let b = generate(&small_cfg()).unwrap();
        assert_eq!(a.num_edges(), b.num_edges());
        for i in 0..60u32 {
            assert_eq!(a.neighbours(i), b.neighbours(i));
            assert_eq!(a.attrs().unwrap().rows[i as usize], b.attrs().unwrap().rows[i as usize]);
        }
    }

    #[test]
    fn no_isolated_nodes() {
        let g = generate(&SbmConfig {
            p_in: 0.02,
            p_out: 0.0,
            ..small_cfg()
        })
        .unwrap();
        for i in 0..g.num_nodes() as u32 {
            assert!(g.degree(i) > 0, "node {i} isolated");
        }
    }

    fn community_vec(g: &crate::graph::Graph) -> Vec<u32> {
        g.labels().unwrap().rows.iter().map(|r| r[0]).collect()
    }

    #[test]
    fn marginal_within_rate_matches_p_in() {
        // The angular kernel concentrates edges but preserves the marginal
        // within-community rate.
        let cfg = SbmConfig {
            nodes: 600,
            communities: 3,
            p_in: 0.1,
            p_out: 0.0,
            attr_dim: 30,
            attr_noise: 0.05,
            label_noise: 0.0,
            seed: 5,
        };
        let g = generate(&cfg).unwrap();
        let com = community_vec(&g);
        let mut sizes = vec![0usize; 3];
        for &c in &com {
            sizes[c as usize] += 1;
        }
        let within_pairs: usize = sizes.iter().map(|&s| s * (s - 1) / 2).sum();
        let rate = g.num_edges() as f64 / within_pairs as f64;
        assert!(
            (rate - 0.1).abs() < 0.02,
            "marginal within rate {rate} should be near 0.1"
        );
    }

    #[test]
    fn within_community_edges_dominate() {
        let g = generate(&small_cfg()).unwrap();
        let com = community_vec(&g);
        let (mut within, mut across) = (0usize, 0usize);
        for (i, j) in g.edges() {
            if com[i as usize] == com[j as usize] {
                within += 1;
            } else {
                across += 1;
            }
        }
        assert!(within > 3 * across, "within {within}, across {across}");
    }

    #[test]
    fn files_round_trip_through_loader() {
        let cfg = small_cfg();
        let g = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_files(&g, dir.path()).unwrap();
        let loaded =
            crate::graph::load_graph(&files.edges, Some(&files.attrs), Some(&files.labels))
                .unwrap();
        assert_eq!(loaded.num_nodes(), g.num_nodes());
        assert_eq!(loaded.num_edges(), g.num_edges());
        assert_eq!(loaded.labels().unwrap().rows, g.labels().unwrap().rows);
        // Attribute dim may shrink if the top bits never fire; rows must match.
        for i in 0..g.num_nodes() {
            assert_eq!(loaded.attrs().unwrap().rows[i], g.attrs().unwrap().rows[i]);
        }
    }
}
