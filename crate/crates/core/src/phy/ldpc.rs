//! Seeded column-weight-3 LDPC code with systematic encoding and sum-product decoding.
//!
//! The parity-check matrix is grown column by column. Each column picks its three
//! rows among the lowest-degree rows that do not close a length-4 cycle with rows
//! already holding a shared column, so row degrees stay within one of each other.
//! A generator is obtained from the reduced row-echelon form of the matrix; pivot
//! columns carry parity and the remaining columns carry the information bits.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const COLUMN_WEIGHT: usize = 3;
const MAX_CONSTRUCTION_ATTEMPTS: u64 = 64;
// |tanh(x/2)| saturates here; keeps atanh finite.
const TANH_LIMIT: f64 = 1.0 - 1e-15;
const MSG_LIMIT: f64 = 50.0;
// Channel LLR clamp; keeps e^L plus three saturated check messages finite.
const INPUT_LIMIT: f64 = 500.0;

type Words = Vec<u64>;

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
fn get_bit(w: &[u64], i: usize) -> bool {
    (w[i / 64] >> (i % 64)) & 1 == 1
}

#[inline]
fn set_bit(w: &mut [u64], i: usize) {
    w[i / 64] |= 1 << (i % 64);
}

#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    m: usize,
    /// Row-major Tanner edges: `check_ptr[c]..check_ptr[c+1]` index into `edge_var`.
    check_ptr: Vec<usize>,
    edge_var: Vec<u32>,
    /// Edges incident to each variable.
    var_ptr: Vec<usize>,
    var_edges: Vec<u32>,
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    /// For each parity bit, the information bits it sums (bitset over info index).
    parity_rows: Vec<Words>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Systematic information bits.
    pub info: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

impl LdpcCode {
    /// Builds an `m x n` code with full row rank, deterministic in `seed`.
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(Error::InvalidConfig(format!("need 0 < m < n, got m={m} n={n}")));
        }
        if m < COLUMN_WEIGHT * 2 {
            return Err(Error::InvalidConfig("too few checks for column weight 3".into()));
        }
        for attempt in 0..MAX_CONSTRUCTION_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let cols = grow_columns(n, m, &mut rng);
            if let Some(code) = Self::from_columns(n, m, &cols, seed) {
                return Ok(code);
            }
        }
        Err(Error::InvalidConfig("could not build a full-rank parity-check matrix".into()))
    }

    fn from_columns(n: usize, m: usize, cols: &[Vec<usize>], seed: u64) -> Option<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (v, rs) in cols.iter().enumerate() {
            for &r in rs {
                rows[r].push(v);
            }
        }
        let (pivots, reduced) = row_reduce(&rows, n)?;
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_positions.len();
        let parity_rows = reduced
            .iter()
            .map(|row| {
                let mut w = vec![0u64; words_for(k)];
                for (t, &c) in info_positions.iter().enumerate() {
                    if get_bit(row, c) {
                        set_bit(&mut w, t);
                    }
                }
                w
            })
            .collect();

        let mut check_ptr = Vec::with_capacity(m + 1);
        let mut edge_var = Vec::new();
        check_ptr.push(0);
        for r in &rows {
            edge_var.extend(r.iter().map(|&v| v as u32));
            check_ptr.push(edge_var.len());
        }
        let mut var_lists: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (e, &v) in edge_var.iter().enumerate() {
            var_lists[v as usize].push(e as u32);
        }
        let mut var_ptr = Vec::with_capacity(n + 1);
        let mut var_edges = Vec::with_capacity(edge_var.len());
        var_ptr.push(0);
        for l in var_lists {
            var_edges.extend(l);
            var_ptr.push(var_edges.len());
        }
        Some(Self {
            n,
            m,
            check_ptr,
            edge_var,
            var_ptr,
            var_edges,
            info_positions,
            parity_positions: pivots,
            parity_rows,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.n - self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    /// Column indices of check `c`.
    pub fn check_row(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.edge_var[self.check_ptr[c]..self.check_ptr[c + 1]]
            .iter()
            .map(|&v| v as usize)
    }

    pub fn column_weight(&self, v: usize) -> usize {
        self.var_ptr[v + 1] - self.var_ptr[v]
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        let k = self.k();
        if info.len() != k {
            return Err(Error::LengthMismatch { expected: k, actual: info.len() });
        }
        let mut u = vec![0u64; words_for(k)];
        for (t, &b) in info.iter().enumerate() {
            if b & 1 == 1 {
                set_bit(&mut u, t);
            }
        }
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            cw[pos] = b & 1;
        }
        for (row, &pos) in self.parity_rows.iter().zip(&self.parity_positions) {
            let ones: u32 = row.iter().zip(&u).map(|(a, b)| (a & b).count_ones()).sum();
            cw[pos] = (ones & 1) as u8;
        }
        Ok(cw)
    }

    pub fn syndrome_is_zero(&self, bits: &[u8]) -> bool {
        (0..self.m).all(|c| self.check_row(c).fold(0u8, |acc, v| acc ^ (bits[v] & 1)) == 0)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    /// Flooding sum-product decoding. Stops as soon as the hard decision satisfies
    /// every check; a zero posterior LLR counts as an erasure and blocks convergence.
    pub fn decode(&self, llrs: &[f64], max_iterations: usize) -> Result<DecodeOutput> {
        if llrs.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, actual: llrs.len() });
        }
        // Messages are carried as E = e^L, which turns both halves of the
        // sum-product update into products and quotients:
        // tanh(L/2) = (E - 1) / (E + 1) and e^(2 atanh p) = (1 + p) / (1 - p).
        let (e_lo, e_hi) = ((-MSG_LIMIT).exp(), MSG_LIMIT.exp());
        let channel: Vec<f64> = llrs.iter().map(|&l| l.clamp(-INPUT_LIMIT, INPUT_LIMIT).exp()).collect();
        let mut v2c: Vec<f64> = self
            .edge_var
            .iter()
            .map(|&v| channel[v as usize].clamp(e_lo, e_hi))
            .collect();
        let mut c2v = vec![1.0f64; v2c.len()];
        let mut hard = vec![0u8; self.n];
        let mut scratch = Vec::new();
        let mut converged = false;
        let mut iterations = 0;

        for it in 1..=max_iterations {
            iterations = it;
            for c in 0..self.m {
                let (lo, hi) = (self.check_ptr[c], self.check_ptr[c + 1]);
                scratch.clear();
                scratch.extend(v2c[lo..hi].iter().map(|&e| (e - 1.0) / (e + 1.0)));
                // Leave-one-out products via prefix/suffix passes.
                let mut prefix = 1.0;
                for (i, e) in (lo..hi).enumerate() {
                    c2v[e] = prefix;
                    prefix *= scratch[i];
                }
                let mut suffix = 1.0;
                for (i, e) in (lo..hi).enumerate().rev() {
                    let p = (c2v[e] * suffix).clamp(-TANH_LIMIT, TANH_LIMIT);
                    c2v[e] = (1.0 + p) / (1.0 - p);
                    suffix *= scratch[i];
                }
            }
            let mut erased = false;
            for v in 0..self.n {
                let edges = &self.var_edges[self.var_ptr[v]..self.var_ptr[v + 1]];
                let total = edges.iter().fold(channel[v], |acc, &e| acc * c2v[e as usize]);
                for &e in edges {
                    v2c[e as usize] = (total / c2v[e as usize]).clamp(e_lo, e_hi);
                }
                // A zero posterior LLR is an erasure.
                erased |= total == 1.0;
                hard[v] = u8::from(total < 1.0);
            }
            if !erased && self.syndrome_is_zero(&hard) {
                converged = true;
                break;
            }
        }
        Ok(DecodeOutput {
            info: self.extract_info(&hard),
            converged,
            iterations,
        })
    }

    /// Number of row pairs sharing two or more columns (length-4 cycles).
    pub fn four_cycles(&self) -> usize {
        let mut count = 0;
        let mut cols = vec![vec![0u64; words_for(self.n)]; self.m];
        for (c, w) in cols.iter_mut().enumerate() {
            for v in self.check_row(c) {
                set_bit(w, v);
            }
        }
        for a in 0..self.m {
            for b in a + 1..self.m {
                let shared: u32 = cols[a].iter().zip(&cols[b]).map(|(x, y)| (x & y).count_ones()).sum();
                if shared >= 2 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Writes the parity-check matrix, one row per line as space-separated column
    /// indices, preceded by a `n m` header line.
    pub fn write_parity_check<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n, self.m)?;
        for c in 0..self.m {
            let row: Vec<String> = self.check_row(c).map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Column-by-column growth with degree balancing and length-4 cycle avoidance.
fn grow_columns(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut row_deg = vec![0usize; m];
    let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut cols: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut blocked = vec![false; m];
    for v in 0..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(COLUMN_WEIGHT);
        blocked.iter_mut().for_each(|b| *b = false);
        for _ in 0..COLUMN_WEIGHT {
            let pick = pick_row(&row_deg, &blocked, &chosen, rng).unwrap_or_else(|| {
                // Every row would close a 4-cycle; fall back to degree balancing only.
                let free = vec![false; m];
                pick_row(&row_deg, &free, &chosen, rng).expect("m > column weight")
            });
            chosen.push(pick);
            // Rows sharing a column with `pick` would now close a 4-cycle through v.
            for &c in &row_cols[pick] {
                for &r in &cols[c] {
                    blocked[r] = true;
                }
            }
        }
        for &r in &chosen {
            row_deg[r] += 1;
            row_cols[r].push(v);
        }
        chosen.sort_unstable();
        cols.push(chosen);
    }
    cols
}

fn pick_row(row_deg: &[usize], blocked: &[bool], chosen: &[usize], rng: &mut ChaCha8Rng) -> Option<usize> {
    let allowed = |r: &usize| !blocked[*r] && !chosen.contains(r);
    let min = (0..row_deg.len()).filter(allowed).map(|r| row_deg[r]).min()?;
    let candidates: Vec<usize> = (0..row_deg.len()).filter(allowed).filter(|&r| row_deg[r] == min).collect();
    candidates.choose(rng).copied()
}

/// Gauss-Jordan elimination over GF(2), pivoting from the rightmost column. Returns
/// the pivot column of each reduced row, or `None` if the rows are dependent.
fn row_reduce(rows: &[Vec<usize>], n: usize) -> Option<(Vec<usize>, Vec<Words>)> {
    let m = rows.len();
    let mut mat: Vec<Words> = rows
        .iter()
        .map(|r| {
            let mut w = vec![0u64; words_for(n)];
            for &c in r {
                set_bit(&mut w, c);
            }
            w
        })
        .collect();
    let mut pivots = Vec::with_capacity(m);
    let mut rank = 0;
    for col in (0..n).rev() {
        if rank == m {
            break;
        }
        let Some(p) = (rank..m).find(|&r| get_bit(&mat[r], col)) else {
            continue;
        };
        mat.swap(rank, p);
        let pivot_row = mat[rank].clone();
        for (r, row) in mat.iter_mut().enumerate() {
            if r != rank && get_bit(row, col) {
                row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
            }
        }
        pivots.push(col);
        rank += 1;
    }
    (rank == m).then_some((pivots, mat))
}
