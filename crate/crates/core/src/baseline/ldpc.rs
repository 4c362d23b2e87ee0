//! Regular LDPC code with sum-product decoding.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Sparse parity-check matrix plus a systematic encoder derived from its
/// reduced row-echelon form.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    /// Variable indices of each check.
    checks: Vec<Vec<usize>>,
    /// `(check, slot)` pairs of each variable.
    var_edges: Vec<Vec<(usize, usize)>>,
    /// Codeword positions carrying information bits.
    info_positions: Vec<usize>,
    /// For each pivot: its position and the information bits (as indices into
    /// `info_positions`) that sum into it.
    parity_rules: Vec<(usize, Vec<usize>)>,
}

/// Outcome of one block decode.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcDecode {
    /// Information bits, present only when every parity check is satisfied.
    pub bits: Option<Vec<u8>>,
    pub iterations: usize,
}

impl LdpcCode {
    /// A `(col_weight, row_weight)`-regular code of length `n`, built by
    /// random socket matching with duplicate-edge and 4-cycle repair.
    pub fn regular(n: usize, col_weight: usize, row_weight: usize, seed: u64) -> Result<Self> {
        if n == 0 || col_weight == 0 || row_weight <= col_weight || (n * col_weight) % row_weight != 0 {
            return Err(Error::Config(format!(
                "no ({col_weight},{row_weight})-regular code of length {n}"
            )));
        }
        let m = n * col_weight / row_weight;
        let mut r = rng::substream(seed, &[tag::INIT, 0x1d9c]);
        let mut sockets: Vec<usize> = (0..n * col_weight).map(|e| e / col_weight).collect();
        sockets.shuffle(&mut r);
        // check c owns sockets[c*row_weight .. (c+1)*row_weight]
        for _ in 0..200 {
            let bad = Self::bad_edges(&sockets, m, row_weight);
            if bad.is_empty() {
                break;
            }
            for e in bad {
                let other = r.random_range(0..sockets.len());
                sockets.swap(e, other);
            }
        }
        let checks: Vec<Vec<usize>> = sockets.chunks(row_weight).map(|c| c.to_vec()).collect();
        if checks.iter().any(|c| {
            let mut s = c.clone();
            s.sort_unstable();
            s.windows(2).any(|w| w[0] == w[1])
        }) {
            return Err(Error::Config("could not build a simple Tanner graph".into()));
        }
        Ok(Self::from_checks(n, checks))
    }

    /// Socket indices sitting on a repeated edge or a 4-cycle.
    fn bad_edges(sockets: &[usize], m: usize, row_weight: usize) -> Vec<usize> {
        let mut bad = Vec::new();
        let mut pair_owner = std::collections::HashMap::new();
        for c in 0..m {
            let row = &sockets[c * row_weight..(c + 1) * row_weight];
            for a in 0..row_weight {
                for b in a + 1..row_weight {
                    let (u, v) = (row[a].min(row[b]), row[a].max(row[b]));
                    if u == v {
                        bad.push(c * row_weight + b);
                        continue;
                    }
                    if let Some(&prev) = pair_owner.get(&(u, v)) {
                        if prev != c {
                            bad.push(c * row_weight + b);
                        }
                    } else {
                        pair_owner.insert((u, v), c);
                    }
                }
            }
        }
        bad.sort_unstable();
        bad.dedup();
        bad
    }

    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Self {
        let mut var_edges = vec![Vec::new(); n];
        for (c, vars) in checks.iter().enumerate() {
            for (slot, &v) in vars.iter().enumerate() {
                var_edges[v].push((c, slot));
            }
        }
        let (info_positions, parity_rules) = systematic_form(n, &checks);
        Self {
            n,
            checks,
            var_edges,
            info_positions,
            parity_rules,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Information bits per block, `n - rank(H)`.
    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::Shape(format!("expected {} information bits, got {}", self.k(), info.len())));
        }
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            cw[pos] = b & 1;
        }
        for (pos, deps) in &self.parity_rules {
            cw[*pos] = deps.iter().fold(0, |acc, &j| acc ^ (info[j] & 1));
        }
        Ok(cw)
    }

    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        self.checks
            .iter()
            .all(|c| c.iter().fold(0u8, |acc, &v| acc ^ bits[v]) == 0)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    /// Sum-product decoding of channel LLRs (`log P(0)/P(1)`). The syndrome
    /// of the channel hard decisions is checked before any iteration.
    pub fn decode(&self, llr: &[f64], max_iters: usize) -> Result<LdpcDecode> {
        if llr.len() != self.n {
            return Err(Error::Shape(format!("expected {} LLRs, got {}", self.n, llr.len())));
        }
        let hard = |post: &[f64]| -> Vec<u8> { post.iter().map(|&l| u8::from(l < 0.0)).collect() };
        let mut bits = hard(llr);
        if self.is_codeword(&bits) {
            return Ok(LdpcDecode {
                bits: Some(self.extract_info(&bits)),
                iterations: 0,
            });
        }
        let mut c2v: Vec<Vec<f64>> = self.checks.iter().map(|c| vec![0.0; c.len()]).collect();
        let mut post = llr.to_vec();
        let mut tanh_buf = Vec::new();
        for iter in 1..=max_iters {
            for (c, vars) in self.checks.iter().enumerate() {
                tanh_buf.clear();
                for (slot, &v) in vars.iter().enumerate() {
                    let msg = post[v] - c2v[c][slot];
                    tanh_buf.push((msg / 2.0).tanh());
                }
                for slot in 0..vars.len() {
                    let mut prod = 1.0;
                    for (j, t) in tanh_buf.iter().enumerate() {
                        if j != slot {
                            prod *= t;
                        }
                    }
                    let prod = prod.clamp(-0.999_999_999_999, 0.999_999_999_999);
                    c2v[c][slot] = 2.0 * prod.atanh();
                }
            }
            for (v, edges) in self.var_edges.iter().enumerate() {
                post[v] = llr[v] + edges.iter().map(|&(c, s)| c2v[c][s]).sum::<f64>();
            }
            bits = hard(&post);
            if self.is_codeword(&bits) {
                return Ok(LdpcDecode {
                    bits: Some(self.extract_info(&bits)),
                    iterations: iter,
                });
            }
        }
        Ok(LdpcDecode {
            bits: None,
            iterations: max_iters,
        })
    }
}

/// Gauss-Jordan elimination over GF(2). Returns the information positions
/// (non-pivot columns) and, for each pivot column, the information bits it
/// is the XOR of.
fn systematic_form(n: usize, checks: &[Vec<usize>]) -> (Vec<usize>, Vec<(usize, Vec<usize>)>) {
    let words = n.div_ceil(64);
    let mut rows: Vec<Vec<u64>> = checks
        .iter()
        .map(|c| {
            let mut r = vec![0u64; words];
            for &v in c {
                r[v / 64] ^= 1 << (v % 64);
            }
            r
        })
        .collect();
    let get = |r: &[u64], col: usize| (r[col / 64] >> (col % 64)) & 1 == 1;
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        let Some(p) = (rank..rows.len()).find(|&i| get(&rows[i], col)) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != rank && get(row, col) {
                row.iter_mut().zip(&pivot).for_each(|(a, b)| *a ^= b);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let mut is_pivot = vec![false; n];
    pivots.iter().for_each(|&p| is_pivot[p] = true);
    let info: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let rules = pivots
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let deps = info
                .iter()
                .enumerate()
                .filter(|(_, &c)| get(&rows[i], c))
                .map(|(j, _)| j)
                .collect();
            (p, deps)
        })
        .collect();
    (info, rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn code() -> LdpcCode {
        LdpcCode::regular(1024, 3, 6, 7).unwrap()
    }

    #[test]
    fn structure() {
        let c = code();
        assert_eq!(c.checks().len(), 512);
        assert!(c.checks().iter().all(|r| r.len() == 6));
        assert!(c.var_edges.iter().all(|e| e.len() == 3));
        assert!(c.k() >= 512, "k = {}", c.k());
    }

    #[test]
    fn zero_word_and_noiseless_decode() {
        let c = code();
        let zero = c.encode(&vec![0; c.k()]).unwrap();
        assert!(zero.iter().all(|&b| b == 0));
        let mut r = rng::substream(1, &[]);
        let info: Vec<u8> = (0..c.k()).map(|_| r.random_range(0..2)).collect();
        let cw = c.encode(&info).unwrap();
        assert!(c.is_codeword(&cw));
        let llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 10.0 } else { -10.0 }).collect();
        let out = c.decode(&llr, 50).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.bits.unwrap(), info);
    }

    #[test]
    fn corrects_a_few_flips() {
        let c = code();
        let info = vec![1u8; c.k()];
        let cw = c.encode(&info).unwrap();
        let mut llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 2.0 } else { -2.0 }).collect();
        for i in [3, 100, 517, 900] {
            llr[i] = -llr[i] * 0.5;
        }
        let out = c.decode(&llr, 50).unwrap();
        assert!(out.iterations > 0);
        assert_eq!(out.bits.unwrap(), info);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn xor_of_codewords_is_codeword(a in proptest::collection::vec(0u8..2, 1024), b in proptest::collection::vec(0u8..2, 1024)) {
            let c = code();
            let k = c.k();
            let (a, b) = (&a[..k], &b[..k]);
            let x = c.encode(a).unwrap();
            let y = c.encode(b).unwrap();
            let s: Vec<u8> = x.iter().zip(&y).map(|(p, q)| p ^ q).collect();
            prop_assert!(c.is_codeword(&s));
        }
    }
}
