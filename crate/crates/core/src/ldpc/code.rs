use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Sparse binary parity-check matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityCheck {
    n: usize,
    /// Column indices of the ones in each row, ascending.
    rows: Vec<Vec<usize>>,
    /// Row indices of the ones in each column, ascending.
    cols: Vec<Vec<usize>>,
    /// Lifting factor when the matrix was expanded from a base matrix.
    pub lifting: Option<usize>,
}

/// Base matrix of the IEEE 802.11n rate-1/2 code with lifting factor 54
/// (`-1` marks an all-zero block).
const BASE_1296_R12: [[i8; 24]; 12] = [
    [
        40, -1, -1, -1, 22, -1, 49, 23, 43, -1, -1, -1, 1, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1,
        -1,
    ],
    [
        50, 1, -1, -1, 48, 35, -1, -1, 13, -1, 30, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1, -1,
    ],
    [
        39, 50, -1, -1, 4, -1, 2, -1, -1, -1, -1, 49, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1,
    ],
    [
        33, -1, -1, 38, 37, -1, -1, 4, 1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1, -1,
    ],
    [
        45, -1, -1, -1, 0, 22, -1, -1, 20, 42, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1, -1, -1,
    ],
    [
        51, -1, -1, 48, 35, -1, -1, -1, 44, -1, 18, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1,
        -1,
    ],
    [
        47, 11, -1, -1, -1, 17, -1, -1, 51, -1, -1, -1, 0, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1, -1,
    ],
    [
        5, -1, 25, -1, 6, -1, 45, -1, 13, 40, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1, -1, -1,
    ],
    [
        33, -1, -1, 34, 24, -1, -1, -1, 23, -1, -1, 46, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1,
        -1,
    ],
    [
        1, -1, 27, -1, 1, -1, -1, -1, 38, -1, 44, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0, -1,
    ],
    [
        -1, 18, -1, -1, 23, -1, -1, 8, 0, 35, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, 0, 0,
    ],
    [
        49, -1, 17, -1, 30, -1, -1, -1, 34, -1, -1, 19, 1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,
        0,
    ],
];

const LIFTING_1296: usize = 54;

const BUNDLED_1296_R12: &str = include_str!("../../data/ieee80211n_1296_r12.alist");

impl ParityCheck {
    /// Builds a matrix from the column indices of each row.
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let mut cols = vec![Vec::new(); n];
        let mut sorted_rows = Vec::with_capacity(rows.len());
        for (r, row) in rows.into_iter().enumerate() {
            let mut row = row;
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::CodeDescriptor(format!("row {r} repeats a column")));
            }
            for &c in &row {
                if c >= n {
                    return Err(Error::CodeDescriptor(format!(
                        "row {r} references column {c} but n = {n}"
                    )));
                }
                cols[c].push(r);
            }
            sorted_rows.push(row);
        }
        if let Some(c) = cols.iter().position(Vec::is_empty) {
            return Err(Error::CodeDescriptor(format!("column {c} is in no check")));
        }
        Ok(Self {
            n,
            rows: sorted_rows,
            cols,
            lifting: None,
        })
    }

    /// Expands a quasi-cyclic base matrix; entry `s >= 0` is the identity
    /// cyclically shifted right by `s`.
    pub fn from_base_matrix(base: &[Vec<i32>], lifting: usize) -> Result<Self> {
        let bcols = base.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(base.len() * lifting);
        for (br, brow) in base.iter().enumerate() {
            if brow.len() != bcols {
                return Err(Error::CodeDescriptor(format!(
                    "base row {br} has wrong width"
                )));
            }
            for i in 0..lifting {
                let row = brow
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s >= 0)
                    .map(|(bc, &s)| bc * lifting + (i + s as usize) % lifting)
                    .collect();
                rows.push(row);
            }
        }
        let mut pc = Self::from_rows(bcols * lifting, rows)?;
        pc.lifting = Some(lifting);
        Ok(pc)
    }

    /// The n = 1296, rate-1/2 IEEE 802.11n code expanded from its base matrix.
    pub fn ieee80211n_1296_r12() -> Self {
        let base: Vec<Vec<i32>> = BASE_1296_R12
            .iter()
            .map(|r| r.iter().map(|&v| v as i32).collect())
            .collect();
        Self::from_base_matrix(&base, LIFTING_1296).expect("bundled base matrix is valid")
    }

    /// The bundled alist descriptor of the n = 1296, rate-1/2 code.
    pub fn bundled_1296_r12() -> Result<Self> {
        let mut pc = Self::parse_alist(BUNDLED_1296_R12)?;
        pc.lifting = Some(LIFTING_1296);
        Ok(pc)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn checks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn cols(&self) -> &[Vec<usize>] {
        &self.cols
    }

    pub fn edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `H c` over GF(2); all-zero means `c` is a codeword.
    pub fn syndrome(&self, bits: &[u8]) -> Vec<u8> {
        self.rows
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &c| acc ^ (bits[c] & 1)))
            .collect()
    }

    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        bits.len() == self.n && self.syndrome(bits).iter().all(|&s| s == 0)
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_alist(&std::fs::read_to_string(path)?)
    }

    /// Parses the alist format (1-based indices). Index lists may be padded
    /// with zeros to the maximum degree or written unpadded.
    pub fn parse_alist(text: &str) -> Result<Self> {
        let values = text
            .split_ascii_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| {
                    Error::CodeDescriptor(format!("not a non-negative integer: {t:?}"))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let header = |i: usize| {
            values
                .get(i)
                .copied()
                .ok_or_else(|| Error::CodeDescriptor("truncated header".into()))
        };
        let (n, m, max_col, max_row) = (header(0)?, header(1)?, header(2)?, header(3)?);
        if values.len() < 4 + n + m {
            return Err(Error::CodeDescriptor("truncated degree lists".into()));
        }
        let col_deg = &values[4..4 + n];
        let row_deg = &values[4 + n..4 + n + m];
        if col_deg.iter().any(|&d| d > max_col) || row_deg.iter().any(|&d| d > max_row) {
            return Err(Error::CodeDescriptor(
                "degree exceeds declared maximum".into(),
            ));
        }
        let body = &values[4 + n + m..];
        let padded = n * max_col + m * max_row;
        let unpadded = col_deg.iter().sum::<usize>() + row_deg.iter().sum::<usize>();
        let is_padded = if body.len() == padded {
            true
        } else if body.len() == unpadded {
            false
        } else {
            return Err(Error::CodeDescriptor(format!(
                "body has {} entries, expected {padded} (padded) or {unpadded} (unpadded)",
                body.len()
            )));
        };
        let mut pos = 0;
        let mut lists = |degs: &[usize], width: usize, bound: usize, what: &str| {
            let mut out = Vec::with_capacity(degs.len());
            for (i, &d) in degs.iter().enumerate() {
                let w = if is_padded { width } else { d };
                let chunk = &body[pos..pos + w];
                pos += w;
                if chunk[d..].iter().any(|&v| v != 0) {
                    return Err(Error::CodeDescriptor(format!(
                        "{what} {i}: more entries than its degree {d}"
                    )));
                }
                let mut list = Vec::with_capacity(d);
                for &v in &chunk[..d] {
                    if v == 0 || v > bound {
                        return Err(Error::CodeDescriptor(format!(
                            "{what} {i}: index {v} outside 1..={bound}"
                        )));
                    }
                    list.push(v - 1);
                }
                out.push(list);
            }
            Ok(out)
        };
        let col_lists = lists(col_deg, max_col, m, "column")?;
        let row_lists = lists(row_deg, max_row, n, "row")?;
        let pc = Self::from_rows(n, row_lists)?;
        for (c, mut list) in col_lists.into_iter().enumerate() {
            list.sort_unstable();
            if list != pc.cols[c] {
                return Err(Error::CodeDescriptor(format!(
                    "column {c} list disagrees with the row lists"
                )));
            }
        }
        Ok(pc)
    }

    /// Writes the padded alist format.
    pub fn to_alist(&self) -> String {
        let max_col = self.cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = usize>| {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "{} {}", self.n, self.rows.len());
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut self.cols.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.rows.iter().map(Vec::len)));
        for list in &self.cols {
            let mut it = list
                .iter()
                .map(|&r| r + 1)
                .chain(std::iter::repeat(0))
                .take(max_col);
            let _ = writeln!(s, "{}", join(&mut it));
        }
        for list in &self.rows {
            let mut it = list
                .iter()
                .map(|&c| c + 1)
                .chain(std::iter::repeat(0))
                .take(max_row);
            let _ = writeln!(s, "{}", join(&mut it));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str =
        "6 3\n2 3\n2 2 2 1 1 1\n3 3 3\n1 2\n1 3\n1 2\n2 0\n3 0\n3 0\n1 2 3\n1 3 4\n2 5 6\n";

    #[test]
    fn toy_descriptor() {
        let pc = ParityCheck::parse_alist(TOY).unwrap();
        assert_eq!(pc.n(), 6);
        assert_eq!(pc.checks(), 3);
        assert_eq!(pc.rows()[2], vec![1, 4, 5]);
        assert_eq!(pc.cols()[0], vec![0, 1]);
    }

    #[test]
    fn unpadded_descriptor() {
        let text = "6 3\n2 3\n2 2 2 1 1 1\n3 3 3\n1 2\n1 3\n1 2\n2\n3\n3\n1 2 3\n1 3 4\n2 5 6\n";
        assert_eq!(
            ParityCheck::parse_alist(text).unwrap(),
            ParityCheck::parse_alist(TOY).unwrap()
        );
    }

    #[test]
    fn malformed_descriptors_are_rejected() {
        let index_too_large = TOY.replace("2 5 6\n", "2 5 7\n");
        assert!(ParityCheck::parse_alist(&index_too_large).is_err());
        let lists_disagree = TOY.replace("1 2\n1 3\n", "1 2\n1 2\n");
        assert!(ParityCheck::parse_alist(&lists_disagree).is_err());
        let degree_mismatch = TOY.replace("3 3 3\n", "3 3 2\n");
        assert!(ParityCheck::parse_alist(&degree_mismatch).is_err());
        assert!(ParityCheck::parse_alist("6 3\n2").is_err());
        assert!(ParityCheck::parse_alist("six").is_err());
    }

    #[test]
    fn out_of_range_column_is_rejected() {
        let err = ParityCheck::from_rows(4, vec![vec![0, 4]]).unwrap_err();
        assert!(err.to_string().contains("column 4"), "{err}");
    }

    #[test]
    fn expanded_code_dimensions() {
        let pc = ParityCheck::ieee80211n_1296_r12();
        assert_eq!(pc.n(), 1296);
        assert_eq!(pc.checks(), 648);
        assert_eq!(pc.lifting, Some(54));
    }

    #[test]
    fn bundled_descriptor_matches_base_matrix() {
        let bundled = ParityCheck::bundled_1296_r12().unwrap();
        assert_eq!(bundled, ParityCheck::ieee80211n_1296_r12());
        assert_eq!(bundled.to_alist(), BUNDLED_1296_R12);
    }

    #[test]
    fn alist_roundtrip() {
        let pc = ParityCheck::ieee80211n_1296_r12();
        let back = ParityCheck::parse_alist(&pc.to_alist()).unwrap();
        assert_eq!(back.rows(), pc.rows());
    }
}
