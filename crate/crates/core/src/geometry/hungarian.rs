use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Result of a gated rectangular assignment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CrossViewMatch {
    /// `(row, col)` pairs sorted by row; no row or column repeats.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the costs of the returned pairs.
    pub total_cost: f64,
}

/// Cost with a forbidden-count major part, so gated entries behave like an
/// infinitely large sentinel without any loss of precision in the minor part.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex {
    major: i64,
    minor: f64,
}

impl Lex {
    const ZERO: Lex = Lex {
        major: 0,
        minor: 0.0,
    };
    const INF: Lex = Lex {
        major: i64::MAX / 4,
        minor: 0.0,
    };
}

impl PartialOrd for Lex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(
            self.major
                .cmp(&other.major)
                .then(self.minor.total_cmp(&other.minor)),
        )
    }
}

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex {
            major: self.major + o.major,
            minor: self.minor + o.minor,
        }
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex {
            major: self.major - o.major,
            minor: self.minor - o.minor,
        }
    }
}

impl AddAssign for Lex {
    fn add_assign(&mut self, o: Lex) {
        *self = *self + o;
    }
}

impl SubAssign for Lex {
    fn sub_assign(&mut self, o: Lex) {
        *self = *self - o;
    }
}

/// Minimum-cost assignment of a rectangular cost matrix.
///
/// Entries `>= gate` (and non-finite entries) are forbidden. Among all
/// assignments of size `min(rows, cols)` the solver first minimises the number
/// of forbidden pairs and then the total cost; forbidden pairs are dropped from
/// the output. This is the same optimum as padding to a square matrix with a
/// large sentinel, without the sentinel's rounding error.
pub fn hungarian_match(cost: &[Vec<f64>], gate: f64) -> CrossViewMatch {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    assert!(
        cost.iter().all(|r| r.len() == cols),
        "cost matrix rows must have equal length"
    );
    if rows == 0 || cols == 0 {
        return CrossViewMatch::default();
    }
    let lex = |c: f64| {
        if c.is_finite() && c < gate {
            Lex { major: 0, minor: c }
        } else {
            Lex {
                major: 1,
                minor: 0.0,
            }
        }
    };
    // The solver needs rows <= cols.
    let transposed = rows > cols;
    let (n, m) = if transposed {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let a = |i: usize, j: usize| {
        if transposed {
            lex(cost[j][i])
        } else {
            lex(cost[i][j])
        }
    };
    let assignment = solve(n, m, a);

    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transposed { (j, i) } else { (i, j) })
        .filter(|&(r, c)| lex(cost[r][c]).major == 0)
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    CrossViewMatch { pairs, total_cost }
}

/// Shortest augmenting path Hungarian algorithm with potentials, O(n²m).
/// Returns the column of every row; requires `n <= m`.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> Lex) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual source.
    let mut u = vec![Lex::ZERO; n + 1];
    let mut v = vec![Lex::ZERO; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![Lex::INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Lex::INF;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_optimum() {
        let m = hungarian_match(&[vec![1.0, 10.0], vec![10.0, 1.0]], f64::INFINITY);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total_cost, 2.0);
    }

    #[test]
    fn gated_single_entry() {
        let m = hungarian_match(&[vec![5.0]], 4.0);
        assert!(m.pairs.is_empty());
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn empty_matrix() {
        assert_eq!(hungarian_match(&[], 1.0), CrossViewMatch::default());
        assert_eq!(
            hungarian_match(&[vec![], vec![]], 1.0),
            CrossViewMatch::default()
        );
    }

    #[test]
    fn tall_matrix_is_transposed() {
        let cost = vec![vec![3.0], vec![1.0], vec![2.0]];
        let m = hungarian_match(&cost, f64::INFINITY);
        assert_eq!(m.pairs, vec![(1, 0)]);
    }

    #[test]
    fn gate_prefers_more_allowed_pairs_over_cheaper_forbidden_mix() {
        // Row 0 can only take column 0 under the gate; row 1 then takes column 1.
        let cost = vec![vec![0.5, 9.0], vec![0.1, 0.7]];
        let m = hungarian_match(&cost, 0.8);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert!((m.total_cost - 1.2).abs() < 1e-12);
    }

    #[test]
    fn forbidden_pairs_are_dropped_not_swapped() {
        let cost = vec![vec![0.9, 0.9], vec![0.1, 0.9]];
        let m = hungarian_match(&cost, 0.8);
        assert_eq!(m.pairs, vec![(1, 0)]);
    }
}
