//! Packed quantisation codes, pre-computed codeword lookup tables, and
//! table-based similarity search.
//!
//! A node's code is M codeword indices packed to `ceil(log2 K)` bits each
//! (one byte per index at K = 256, 64 bits per node at M = 8). Similarity
//! between two stored nodes needs M table lookups and M-1 additions; no
//! floating-point distance is evaluated online and the decoder is bypassed
//! entirely.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::autodiff::Tape;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::InputMode;
use crate::quant::{codeword_sum_hard, index_bits, Codebooks, Decoder, HardCodes};
use crate::train::TrainedModel;

const NQCS_MAGIC: &[u8; 4] = b"NQCS";
const NQCS_VERSION: u16 = 1;
const RECON_BATCH: usize = 256;

/// Pack per-node codeword indices into an MSB-first bitstream, one
/// fixed-width record per node.
pub fn pack_codes(codes: &HardCodes, k: usize) -> Result<Vec<u8>> {
    let bits = index_bits(k) as usize;
    let (n, m) = codes.codes.dim();
    if (m * bits) % 8 != 0 {
        return Err(Error::Config(format!(
            "code payload {} bits per node is not byte-aligned",
            m * bits
        )));
    }
    let bpn = m * bits / 8;
    let mut out = vec![0u8; n * bpn];
    for node in 0..n {
        let mut bitpos = node * bpn * 8;
        for j in 0..m {
            let idx = codes.codes[(node, j)];
            if idx as usize >= k {
                return Err(Error::Dim(format!("code index {idx} out of range (K = {k})")));
            }
            for b in (0..bits).rev() {
                if (idx >> b) & 1 == 1 {
                    out[bitpos / 8] |= 1 << (7 - bitpos % 8);
                }
                bitpos += 1;
            }
        }
    }
    Ok(out)
}

pub fn unpack_codes(payload: &[u8], n: usize, m: usize, k: usize) -> Result<HardCodes> {
    let bits = index_bits(k) as usize;
    let bpn = m * bits / 8;
    if payload.len() != n * bpn {
        return Err(Error::Format {
            format: "NQCS",
            msg: format!("payload is {} bytes, expected {}", payload.len(), n * bpn),
        });
    }
    let mut codes = Array2::<u32>::zeros((n, m));
    for node in 0..n {
        let mut bitpos = node * bpn * 8;
        for j in 0..m {
            let mut idx = 0u32;
            for _ in 0..bits {
                idx = (idx << 1) | ((payload[bitpos / 8] >> (7 - bitpos % 8)) & 1) as u32;
                bitpos += 1;
            }
            codes[(node, j)] = idx;
        }
    }
    Ok(HardCodes { codes })
}

/// Immutable store of packed codes plus the codebooks and decoder needed to
/// reconstruct explicit embeddings. Queries are read-only.
pub struct CodeStore {
    n: usize,
    m: usize,
    k: usize,
    l: usize,
    payload: Vec<u8>,
    pub codebooks: Codebooks,
    pub decoder: Decoder,
}

impl CodeStore {
    pub fn new(codes: &HardCodes, codebooks: Codebooks, decoder: Decoder) -> Result<Self> {
        if codes.num_books() != codebooks.m {
            return Err(Error::Dim(format!(
                "codes have {} books, codebooks have {}",
                codes.num_books(),
                codebooks.m
            )));
        }
        let payload = pack_codes(codes, codebooks.k)?;
        Ok(CodeStore {
            n: codes.num_rows(),
            m: codebooks.m,
            k: codebooks.k,
            l: codebooks.l,
            payload,
            codebooks,
            decoder,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_books(&self) -> usize {
        self.m
    }

    pub fn codebook_size(&self) -> usize {
        self.k
    }

    pub fn embed_dim(&self) -> usize {
        self.l
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload.len()
    }

    pub fn bytes_per_node(&self) -> usize {
        self.m * index_bits(self.k) as usize / 8
    }

    /// Zero-copy byte view of a node's code when indices are byte-wide
    /// (K = 256).
    fn byte_codes(&self, node: usize) -> Option<&[u8]> {
        if index_bits(self.k) == 8 {
            let start = node * self.m;
            Some(&self.payload[start..start + self.m])
        } else {
            None
        }
    }

    pub fn code_row(&self, node: usize) -> Result<Vec<u32>> {
        if node >= self.n {
            return Err(Error::NodeOutOfBounds {
                id: node as u64,
                n: self.n,
            });
        }
        if let Some(bytes) = self.byte_codes(node) {
            return Ok(bytes.iter().map(|&b| b as u32).collect());
        }
        let bits = index_bits(self.k) as usize;
        let bpn = self.bytes_per_node();
        let mut bitpos = node * bpn * 8;
        let mut row = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            let mut idx = 0u32;
            for _ in 0..bits {
                idx = (idx << 1) | ((self.payload[bitpos / 8] >> (7 - bitpos % 8)) & 1) as u32;
                bitpos += 1;
            }
            row.push(idx);
        }
        Ok(row)
    }

    pub fn unpack(&self) -> Result<HardCodes> {
        unpack_codes(&self.payload, self.n, self.m, self.k)
    }

    /// NQCS binary layout: header (magic, version, N, M, K, L), packed code
    /// payload, raw codebooks, then the decoder as an embedded NQCK block.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(NQCS_MAGIC).map_err(io)?;
        w.write_all(&NQCS_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.m as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.k as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.l as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&self.payload).map_err(io)?;
        for book in &self.codebooks.books {
            for &v in book.iter() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        match &self.decoder {
            Decoder::Identity => w.write_all(&[0u8]).map_err(io)?,
            Decoder::Mlp(_) => {
                w.write_all(&[1u8]).map_err(io)?;
                let mut dec = self.decoder.clone();
                let arrays = dec.named_arrays();
                let sections: Vec<(String, &Array2<f32>)> = arrays
                    .iter()
                    .map(|a| (a.name.clone(), &*a.array))
                    .collect();
                checkpoint::write_sections(&mut w, &sections).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let bad = |msg: String| Error::Format {
            format: "NQCS",
            msg,
        };
        let mut header = [0u8; 24];
        r.read_exact(&mut header).map_err(io)?;
        if &header[0..4] != NQCS_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != NQCS_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(header[6..14].try_into().unwrap()) as usize;
        let m = u16::from_le_bytes(header[14..16].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
        let l = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
        let bpn = m * index_bits(k) as usize / 8;
        let mut payload = vec![0u8; n * bpn];
        r.read_exact(&mut payload).map_err(io)?;
        let mut books = Vec::with_capacity(m);
        for _ in 0..m {
            let mut raw = vec![0u8; k * l * 4];
            r.read_exact(&mut raw).map_err(io)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            books.push(Array2::from_shape_vec((k, l), values).map_err(|e| bad(e.to_string()))?);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        let decoder = match flag[0] {
            0 => Decoder::Identity,
            1 => {
                let sections = checkpoint::read_sections(&mut r)?;
                Decoder::from_sections(&sections)?
            }
            other => return Err(bad(format!("unknown decoder flag {other}"))),
        };
        Ok(CodeStore {
            n,
            m,
            k,
            l,
            payload,
            codebooks: Codebooks { m, k, l, books },
            decoder,
        })
    }

    /// Explicit embeddings from codes: `D(sum_m C_m[q_im])` for every node,
    /// evaluated in fixed-size batches.
    pub fn reconstruct_embeddings(&self) -> Result<Array2<f32>> {
        let codes = self.unpack()?;
        let mut out = Array2::<f32>::zeros((self.n, self.l));
        let mut start = 0;
        while start < self.n {
            let end = (start + RECON_BATCH).min(self.n);
            let rows: Vec<usize> = (start..end).collect();
            let chunk = codes.select_rows(&rows);
            let sums = codeword_sum_hard(&self.codebooks, &chunk)?;
            let mut tape = Tape::new();
            let x = tape.constant(sums)?;
            let y = self.decoder.forward_eval(&mut tape, x)?;
            let yv = tape.value(y);
            for (r, node) in (start..end).enumerate() {
                out.row_mut(node).assign(&yv.row(r));
            }
            start = end;
        }
        Ok(out)
    }
}

/// Export hard codes for every node of a trained model (evaluation mode,
/// no noise; deterministic).
pub fn export_codes(graph: &Graph, model: &TrainedModel) -> Result<CodeStore> {
    if model.encoder.input != InputMode::for_graph(graph) {
        return Err(Error::Dim(format!(
            "checkpoint input {:?} does not match graph {:?}",
            model.encoder.input,
            InputMode::for_graph(graph)
        )));
    }
    let codes = model.assign_codes(graph)?;
    CodeStore::new(&codes, model.codebooks.clone(), model.qdec.clone())
}

/// Per-codebook K x K codeword inner-product tables.
pub struct LookupTables {
    pub m: usize,
    pub k: usize,
    tables: Vec<Vec<f32>>,
}

/// Pre-compute every possible codeword-pair inner product (symmetric by
/// construction; 64-bit accumulation).
pub fn build_tables(cb: &Codebooks) -> LookupTables {
    let (m, k, l) = (cb.m, cb.k, cb.l);
    let mut tables = Vec::with_capacity(m);
    for book in &cb.books {
        let mut table = vec![0f32; k * k];
        for a in 0..k {
            for b in a..k {
                let mut acc = 0f64;
                for c in 0..l {
                    acc += book[(a, c)] as f64 * book[(b, c)] as f64;
                }
                let v = acc as f32;
                table[a * k + b] = v;
                table[b * k + a] = v;
            }
        }
        tables.push(table);
    }
    LookupTables { m, k, tables }
}

impl LookupTables {
    pub fn get(&self, book: usize, a: usize, b: usize) -> f32 {
        self.tables[book][a * self.k + b]
    }

    /// The K-wide table rows selected by one query's codes; scanning a
    /// candidate then costs M indexed reads.
    fn query_rows<'t>(&'t self, query_codes: &[u32]) -> Vec<&'t [f32]> {
        query_codes
            .iter()
            .enumerate()
            .map(|(j, &q)| {
                let start = q as usize * self.k;
                &self.tables[j][start..start + self.k]
            })
            .collect()
    }
}

/// Code-to-code similarity: `sum_m table_m[q_i[m]][q_j[m]]`.
pub fn code_similarity(
    store: &CodeStore,
    tables: &LookupTables,
    i: usize,
    j: usize,
) -> Result<f32> {
    let qi = store.code_row(i)?;
    let qj = store.code_row(j)?;
    let mut acc = 0f32;
    for b in 0..store.m {
        acc += tables.get(b, qi[b] as usize, qj[b] as usize);
    }
    Ok(acc)
}

/// Similarity of `query` to every stored node (index = node id).
pub fn score_all(store: &CodeStore, tables: &LookupTables, query: usize) -> Result<Vec<f32>> {
    let qrow = store.code_row(query)?;
    let rows = tables.query_rows(&qrow);
    let mut scores = vec![0f32; store.n];
    if index_bits(store.k) == 8 {
        for (node, chunk) in store.payload.chunks_exact(store.m).enumerate() {
            let mut acc = 0f32;
            for (j, &c) in chunk.iter().enumerate() {
                acc += rows[j][c as usize];
            }
            scores[node] = acc;
        }
    } else {
        for (node, score) in scores.iter_mut().enumerate() {
            let row = store.code_row(node)?;
            let mut acc = 0f32;
            for (j, &c) in row.iter().enumerate() {
                acc += rows[j][c as usize];
            }
            *score = acc;
        }
    }
    Ok(scores)
}

/// Ranked recommendation result.
#[derive(Debug, Clone)]
pub struct TopK {
    pub items: Vec<(u32, f32)>,
    /// Set when fewer than `k` candidates existed.
    pub truncated: bool,
}

/// Top-k nodes by code similarity, descending, excluding the query and the
/// given set; ties break by ascending node id.
pub fn recommend_top_k(
    store: &CodeStore,
    tables: &LookupTables,
    query: usize,
    k: usize,
    exclude: &[u32],
) -> Result<TopK> {
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    let scores = score_all(store, tables, query)?;
    let mut sorted_exclude: Vec<u32> = exclude.to_vec();
    sorted_exclude.sort_unstable();
    let mut ranked: Vec<(u32, f32)> = scores
        .iter()
        .enumerate()
        .filter(|&(node, _)| node != query && sorted_exclude.binary_search(&(node as u32)).is_err())
        .map(|(node, &s)| (node as u32, s))
        .collect();
    ranked.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("similarity scores are finite")
            .then(a.0.cmp(&b.0))
    });
    let truncated = k > ranked.len();
    if truncated {
        log::warn!(
            "requested top-{k} but only {} candidates exist",
            ranked.len()
        );
    }
    ranked.truncate(k);
    Ok(TopK {
        items: ranked,
        truncated,
    })
}

/// Storage accounting for one store layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub code_bytes: u64,
    pub codebook_bytes: u64,
    pub float_bytes: u64,
}

/// Byte counts for N packed codes, the codebooks, and the float-embedding
/// baseline they replace.
pub fn storage_report(n: usize, m: usize, k: usize, l: usize) -> StorageReport {
    StorageReport {
        code_bytes: n as u64 * m as u64 * index_bits(k) as u64 / 8,
        codebook_bytes: m as u64 * k as u64 * l as u64 * 4,
        float_bytes: n as u64 * l as u64 * 4,
    }
}

impl StorageReport {
    pub fn code_mb(&self) -> f64 {
        self.code_bytes as f64 / (1u64 << 20) as f64
    }

    pub fn codebook_mb(&self) -> f64 {
        self.codebook_bytes as f64 / (1u64 << 20) as f64
    }

    pub fn float_mb(&self) -> f64 {
        self.float_bytes as f64 / (1u64 << 20) as f64
    }
}

impl std::fmt::Display for StorageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "codes:          {:>14} bytes ({:.3} MB)",
            self.code_bytes,
            self.code_mb()
        )?;
        writeln!(
            f,
            "codebooks:      {:>14} bytes ({:.3} MB)",
            self.codebook_bytes,
            self.codebook_mb()
        )?;
        write!(
            f,
            "float baseline: {:>14} bytes ({:.3} MB)",
            self.float_bytes,
            self.float_mb()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_codes(n: usize, m: usize, k: usize, seed: u64) -> HardCodes {
        let mut r = rng(seed);
        HardCodes {
            codes: Array2::from_shape_fn((n, m), |_| r.random_range(0..k as u32)),
        }
    }

    fn store(n: usize, m: usize, k: usize, l: usize, seed: u64) -> CodeStore {
        let mut r = rng(seed);
        let cb = Codebooks::init(m, k, l, &mut r).unwrap();
        let codes = random_codes(n, m, k, seed + 1);
        CodeStore::new(&codes, cb, Decoder::Identity).unwrap()
    }

    #[test]
    fn pack_round_trip_byte_wide() {
        let codes = random_codes(17, 8, 256, 3);
        let payload = pack_codes(&codes, 256).unwrap();
        assert_eq!(payload.len(), 17 * 8);
        let back = unpack_codes(&payload, 17, 8, 256).unwrap();
        assert_eq!(back, codes);
    }

    #[test]
    fn pack_round_trip_sub_byte() {
        // 4 books of 16 codewords: 4 bits each, 2 bytes per node.
        let codes = random_codes(9, 4, 16, 5);
        let payload = pack_codes(&codes, 16).unwrap();
        assert_eq!(payload.len(), 9 * 2);
        let back = unpack_codes(&payload, 9, 4, 16).unwrap();
        assert_eq!(back, codes);
    }

    #[test]
    fn payload_size_matches_code_arithmetic() {
        // 2995 nodes at 8 bytes per node.
        let s = store(2995, 8, 256, 4, 7);
        assert_eq!(s.payload_bytes(), 23_960);
        assert_eq!(s.bytes_per_node(), 8);
    }

    #[test]
    fn tables_match_direct_dot_products() {
        let mut r = rng(11);
        let cb = Codebooks::init(2, 16, 16, &mut r).unwrap();
        let tables = build_tables(&cb);
        for j in 0..2 {
            for a in 0..16 {
                for b in 0..16 {
                    let direct: f64 = (0..16)
                        .map(|c| cb.books[j][(a, c)] as f64 * cb.books[j][(b, c)] as f64)
                        .sum();
                    assert_abs_diff_eq!(tables.get(j, a, b) as f64, direct, epsilon = 1e-6);
                    assert_eq!(tables.get(j, a, b), tables.get(j, b, a));
                }
            }
        }
    }

    #[test]
    fn orthonormal_codewords_give_identity_table() {
        let mut book = Array2::<f32>::zeros((3, 3));
        for i in 0..3 {
            book[(i, i)] = 1.0;
        }
        let cb = Codebooks {
            m: 1,
            k: 3,
            l: 3,
            books: vec![book],
        };
        let tables = build_tables(&cb);
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert_eq!(tables.get(0, a, b), want);
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_and_diagonal_is_norm() {
        let s = store(20, 4, 16, 6, 13);
        let tables = build_tables(&s.codebooks);
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(
                    code_similarity(&s, &tables, i, j).unwrap(),
                    code_similarity(&s, &tables, j, i).unwrap()
                );
            }
            // Self-similarity = sum of selected codeword squared norms.
            let row = s.code_row(i).unwrap();
            let want: f64 = (0..4)
                .map(|j| {
                    (0..6)
                        .map(|c| {
                            let v = s.codebooks.books[j][(row[j] as usize, c)] as f64;
                            v * v
                        })
                        .sum::<f64>()
                })
                .sum();
            assert_abs_diff_eq!(
                code_similarity(&s, &tables, i, i).unwrap() as f64,
                want,
                epsilon = 1e-5
            );
        }
    }

    #[test]
    fn similarity_matches_per_book_codeword_dot_oracle() {
        let s = store(50, 8, 256, 8, 17);
        let tables = build_tables(&s.codebooks);
        for i in 0..50 {
            for j in 0..50 {
                let qi = s.code_row(i).unwrap();
                let qj = s.code_row(j).unwrap();
                let mut want = 0f64;
                for b in 0..8 {
                    for c in 0..8 {
                        want += s.codebooks.books[b][(qi[b] as usize, c)] as f64
                            * s.codebooks.books[b][(qj[b] as usize, c)] as f64;
                    }
                }
                let got = code_similarity(&s, &tables, i, j).unwrap() as f64;
                assert_abs_diff_eq!(got, want, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn out_of_range_node_rejected() {
        let s = store(5, 4, 16, 4, 19);
        let tables = build_tables(&s.codebooks);
        assert!(code_similarity(&s, &tables, 0, 5).is_err());
    }

    #[test]
    fn top_k_matches_brute_force_sort() {
        let s = store(200, 8, 16, 6, 23);
        let tables = build_tables(&s.codebooks);
        let query = 7usize;
        let exclude: Vec<u32> = vec![1, 2, 3];
        let got = recommend_top_k(&s, &tables, query, 25, &exclude).unwrap();
        assert!(!got.truncated);

        let mut brute: Vec<(u32, f32)> = (0..200u32)
            .filter(|&n| n as usize != query && !exclude.contains(&n))
            .map(|n| {
                (
                    n,
                    code_similarity(&s, &tables, query, n as usize).unwrap(),
                )
            })
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        brute.truncate(25);
        assert_eq!(got.items, brute);
        assert!(got.items.iter().all(|&(n, _)| n as usize != query));
    }

    #[test]
    fn full_ranking_is_a_permutation() {
        let s = store(30, 4, 16, 4, 29);
        let tables = build_tables(&s.codebooks);
        let got = recommend_top_k(&s, &tables, 0, 29, &[]).unwrap();
        assert!(!got.truncated);
        let mut ids: Vec<u32> = got.items.iter().map(|&(n, _)| n).collect();
        ids.sort_unstable();
        assert_eq!(ids, (1..30u32).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_k_flags_truncation() {
        let s = store(10, 4, 16, 4, 31);
        let tables = build_tables(&s.codebooks);
        let got = recommend_top_k(&s, &tables, 0, 50, &[]).unwrap();
        assert!(got.truncated);
        assert_eq!(got.items.len(), 9);
    }

    #[test]
    fn nqcs_round_trip_is_byte_identical() {
        let mut r = rng(37);
        let cb = Codebooks::init(4, 16, 6, &mut r).unwrap();
        let dec = Decoder::mlp(6, &[8], &mut r).unwrap();
        let codes = random_codes(12, 4, 16, 38);
        let s = CodeStore::new(&codes, cb, dec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.nqcs");
        let p2 = dir.path().join("b.nqcs");
        s.save(&p1).unwrap();
        let loaded = CodeStore::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.unpack().unwrap(), s.unpack().unwrap());
    }

    #[test]
    fn reconstruction_matches_row_by_row_decoder() {
        let mut r = rng(41);
        let cb = Codebooks::init(4, 16, 6, &mut r).unwrap();
        let dec = Decoder::mlp(6, &[8], &mut r).unwrap();
        let codes = random_codes(10, 4, 16, 42);
        let s = CodeStore::new(&codes, cb, dec).unwrap();
        let all = s.reconstruct_embeddings().unwrap();
        assert_eq!(all.dim(), (10, 6));
        // Row-by-row oracle.
        let unpacked = s.unpack().unwrap();
        for i in 0..10 {
            let one = unpacked.select_rows(&[i]);
            let sums = codeword_sum_hard(&s.codebooks, &one).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(sums).unwrap();
            let y = s.decoder.forward_eval(&mut tape, x).unwrap();
            let yv = tape.value(y);
            for c in 0..6 {
                assert_abs_diff_eq!(all[(i, c)], yv[(0, c)], epsilon = 1e-6);
            }
        }
        // Equal codes reconstruct identically.
        let twin_codes = HardCodes {
            codes: Array2::from_shape_fn((2, 4), |(_, j)| unpacked.codes[(3, j)]),
        };
        let twin = CodeStore::new(&twin_codes, s.codebooks.clone(), s.decoder.clone()).unwrap();
        let tv = twin.reconstruct_embeddings().unwrap();
        assert_eq!(tv.row(0), tv.row(1));
    }

    #[test]
    fn storage_numbers() {
        // The large-graph float baseline lands within 1% of 155.31 MB.
        let rep = storage_report(317_080, 8, 256, 128);
        assert_eq!(rep.code_bytes, 2_536_640);
        assert_eq!(rep.float_bytes, 317_080 * 128 * 4);
        assert!((rep.float_mb() - 155.31).abs() / 155.31 < 0.01);
        // Codebooks at the default sizes.
        assert_eq!(rep.codebook_bytes, 8 * 256 * 128 * 4);
        // Empty store keeps the codebook cost.
        let empty = storage_report(0, 8, 256, 128);
        assert_eq!(empty.code_bytes, 0);
        assert_eq!(empty.codebook_bytes, rep.codebook_bytes);
    }
}
