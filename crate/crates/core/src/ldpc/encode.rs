use super::code::ParityCheck;
use crate::error::{check_len, Result};

/// Systematic encoder derived from the reduced row-echelon form of H.
///
/// Pivots are chosen from the rightmost columns first, so for codes whose
/// trailing `n - k` columns are invertible (all 802.11n codes) the info bits
/// form the codeword prefix.
#[derive(Clone, Debug)]
pub struct Encoder {
    n: usize,
    info_positions: Vec<usize>,
    /// `(parity position, packed mask over info bits)` per pivot.
    parity_rules: Vec<(usize, Vec<u64>)>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl Encoder {
    pub fn new(pc: &ParityCheck) -> Self {
        let n = pc.n();
        let w = words(n);
        let mut mat: Vec<Vec<u64>> = pc
            .rows()
            .iter()
            .map(|row| {
                let mut v = vec![0u64; w];
                for &c in row {
                    v[c / 64] |= 1 << (c % 64);
                }
                v
            })
            .collect();
        let bit = |row: &[u64], c: usize| (row[c / 64] >> (c % 64)) & 1 == 1;
        let mut pivots = Vec::new();
        let mut rank = 0;
        for col in (0..n).rev() {
            let Some(p) = (rank..mat.len()).find(|&r| bit(&mat[r], col)) else {
                continue;
            };
            mat.swap(rank, p);
            let pivot_row = mat[rank].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                if r != rank && bit(row, col) {
                    for (a, b) in row.iter_mut().zip(&pivot_row) {
                        *a ^= b;
                    }
                }
            }
            pivots.push(col);
            rank += 1;
            if rank == mat.len() {
                break;
            }
        }
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let kw = words(info_positions.len());
        let parity_rules = pivots
            .iter()
            .enumerate()
            .map(|(r, &col)| {
                let mut mask = vec![0u64; kw];
                for (j, &c) in info_positions.iter().enumerate() {
                    if bit(&mat[r], c) {
                        mask[j / 64] |= 1 << (j % 64);
                    }
                }
                (col, mask)
            })
            .collect();
        Self {
            n,
            info_positions,
            parity_rules,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    /// Codeword positions that carry the info bits, ascending.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        check_len("info bits", self.k(), info.len())?;
        let mut packed = vec![0u64; words(info.len())];
        let mut out = vec![0u8; self.n];
        for (j, (&b, &pos)) in info.iter().zip(&self.info_positions).enumerate() {
            let b = b & 1;
            packed[j / 64] |= (b as u64) << (j % 64);
            out[pos] = b;
        }
        for (pos, mask) in &self.parity_rules {
            let ones: u32 = mask
                .iter()
                .zip(&packed)
                .map(|(m, x)| (m & x).count_ones())
                .sum();
            out[*pos] = (ones & 1) as u8;
        }
        Ok(out)
    }

    /// Reads the info bits back out of a codeword.
    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }
}
