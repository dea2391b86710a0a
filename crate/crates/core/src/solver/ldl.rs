//! Sparse symmetric LDL^T without pivoting, preceded by a minimum-degree
//! ordering. Suited to quasi-definite KKT matrices, where any symmetric
//! permutation admits a factorization and the pivot signs give the inertia.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

/// Structure of a symmetric matrix given by upper-triangle coordinates,
/// with the fill-reducing permutation and elimination tree precomputed.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    /// Upper-triangle CSC of the permuted matrix.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Source entry k lands in permuted CSC position `entry_map[k]`.
    entry_map: Vec<usize>,
    parent: Vec<Option<usize>>,
    l_ptr: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// Fill-reducing order: repeatedly eliminate a vertex of least current
/// degree (lowest index on ties).
pub fn minimum_degree_order(n: usize, rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for (&i, &j) in rows.iter().zip(cols) {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let mut nbrs: Vec<usize> = adj[v].drain().collect();
        nbrs.sort_unstable();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}

impl LdlSymbolic {
    /// Analyse the pattern given by upper-triangle coordinates `(rows[k],
    /// cols[k])`, `rows[k] <= cols[k]`. Every diagonal entry must appear.
    pub fn analyse(n: usize, rows: &[usize], cols: &[usize]) -> LdlSymbolic {
        let perm = minimum_degree_order(n, rows, cols);
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        // Permuted coordinates, upper triangle.
        let coords: Vec<(usize, usize)> = rows
            .iter()
            .zip(cols)
            .map(|(&i, &j)| {
                let (a, b) = (pinv[i], pinv[j]);
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| (coords[k].1, coords[k].0));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(coords.len());
        let mut entry_map = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c) = coords[k];
            if last != Some((r, c)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
            entry_map[k] = row_idx.len() - 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }

        // Elimination tree and column counts of L.
        let mut parent = vec![None; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in col_ptr[k]..col_ptr[k + 1] {
                let mut i = row_idx[p];
                if i < k {
                    while flag[i] != k {
                        if parent[i].is_none() {
                            parent[i] = Some(k);
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i].expect("set above");
                    }
                }
            }
        }
        let mut l_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_ptr[k + 1] = l_ptr[k] + lnz[k];
        }
        LdlSymbolic {
            n,
            perm,
            col_ptr,
            row_idx,
            entry_map,
            parent,
            l_ptr,
        }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }

    /// Numeric factorization for source `values` aligned with the analysed
    /// coordinates. Returns `None` on an exactly zero pivot.
    pub fn factor(&self, values: &[f64]) -> Option<LdlFactor> {
        let n = self.n;
        let mut ax = vec![0.0; self.row_idx.len()];
        for (k, &v) in values.iter().enumerate() {
            ax[self.entry_map[k]] += v;
        }
        let nnz = self.factor_nnz();
        let mut l_idx = vec![0usize; nnz];
        let mut l_val = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                let mut i = self.row_idx[p];
                y[i] += ax[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i].expect("path reaches k");
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = self.l_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    y[l_idx[p]] -= l_val[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                l_idx[end] = k;
                l_val[end] = l_ki;
                lnz[i] += 1;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return None;
            }
        }
        Some(LdlFactor { l_idx, l_val, d })
    }

    /// Solve `A x = b` in place using a factor of this pattern.
    pub fn solve(&self, factor: &LdlFactor, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                x[factor.l_idx[p]] -= factor.l_val[p] * xj;
            }
        }
        for j in 0..n {
            x[j] /= factor.d[j];
        }
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                xj -= factor.l_val[p] * x[factor.l_idx[p]];
            }
            x[j] = xj;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}

impl LdlFactor {
    pub fn inertia(&self) -> Inertia {
        let mut out = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for &d in &self.d {
            if d > 0.0 {
                out.positive += 1;
            } else if d < 0.0 {
                out.negative += 1;
            } else {
                out.zero += 1;
            }
        }
        out
    }
}

/// `y = A x` for a symmetric matrix in upper-triangle coordinates.
pub fn symmetric_matvec(rows: &[usize], cols: &[usize], values: &[f64], x: &[f64], y: &mut [f64]) {
    y.fill(0.0);
    for k in 0..values.len() {
        let (i, j, v) = (rows[k], cols[k], values[k]);
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap())
                .unwrap();
            m.swap(c, p);
            x.swap(c, p);
            for r in c + 1..n {
                let f = m[r][c] / m[c][c];
                for k in c..n {
                    m[r][k] -= f * m[c][k];
                }
                x[r] -= f * x[c];
            }
        }
        for c in (0..n).rev() {
            for k in c + 1..n {
                x[c] -= m[c][k] * x[k];
            }
            x[c] /= m[c][c];
        }
        x
    }

    #[test]
    fn quasi_definite_kkt_solves_and_reports_inertia() {
        // [H J^T; J -D] with H = diag(4, 3, 5), J = [[1, 2, 0]], D = 1e-8.
        let rows = vec![0, 1, 2, 0, 1, 3, 0];
        let cols = vec![0, 1, 2, 3, 3, 3, 1];
        let vals = vec![4.0, 3.0, 5.0, 1.0, 2.0, -1e-8, 0.5];
        let sym = LdlSymbolic::analyse(4, &rows, &cols);
        let f = sym.factor(&vals).unwrap();
        assert_eq!(
            f.inertia(),
            Inertia {
                positive: 3,
                negative: 1,
                zero: 0
            }
        );
        let b = [1.0, -2.0, 0.5, 3.0];
        let mut x = b;
        sym.solve(&f, &mut x);
        let mut ax = [0.0; 4];
        symmetric_matvec(&rows, &cols, &vals, &x, &mut ax);
        for k in 0..4 {
            assert!((ax[k] - b[k]).abs() < 1e-9, "{ax:?}");
        }
    }

    #[test]
    fn duplicate_coordinates_are_summed() {
        let rows = vec![0, 0, 1, 0];
        let cols = vec![0, 0, 1, 1];
        let vals = vec![1.0, 1.0, 3.0, 1.0];
        let sym = LdlSymbolic::analyse(2, &rows, &cols);
        let f = sym.factor(&vals).unwrap();
        let mut x = [3.0, 4.0];
        sym.solve(&f, &mut x);
        // [[2,1],[1,3]] x = [3,4] -> x = [1, 1]
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let sym = LdlSymbolic::analyse(2, &[0, 1, 0], &[0, 1, 1]);
        assert!(sym.factor(&[0.0, 1.0, 1.0]).is_none());
    }

    proptest! {
        #[test]
        fn random_sparse_spd_matches_dense(seed_vals in proptest::collection::vec(-1.0f64..1.0, 40), n in 3usize..9) {
            let mut rows = Vec::new();
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            let mut dense = vec![vec![0.0; n]; n];
            let mut k = 0;
            for j in 0..n {
                for i in 0..j {
                    let v = seed_vals[k % seed_vals.len()];
                    k += 1;
                    if v.abs() > 0.5 {
                        rows.push(i); cols.push(j); vals.push(v);
                        dense[i][j] += v; dense[j][i] += v;
                    }
                }
            }
            for i in 0..n {
                let d = n as f64 + 1.0;
                rows.push(i); cols.push(i); vals.push(d);
                dense[i][i] += d;
            }
            let sym = LdlSymbolic::analyse(n, &rows, &cols);
            let f = sym.factor(&vals).unwrap();
            prop_assert_eq!(f.inertia().positive, n);
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut x = b.clone();
            sym.solve(&f, &mut x);
            let xd = dense_solve(&dense, &b);
            for i in 0..n {
                prop_assert!((x[i] - xd[i]).abs() < 1e-10);
            }
        }
    }
}
