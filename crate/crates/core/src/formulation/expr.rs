//! Sparse quadratic constraint rows and the coordinate-format matrices the
//! evaluators return.

use crate::network::Phase;

/// `constant + sum(coef * x[var])`; the slack voltages enter as constants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn var(index: usize) -> Self {
        Affine {
            constant: 0.0,
            terms: vec![(index, 1.0)],
        }
    }

    pub fn constant(value: f64) -> Self {
        Affine {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, scale: f64) {
        self.constant += scale * other.constant;
        self.terms
            .extend(other.terms.iter().map(|&(i, c)| (i, c * scale)));
    }

    /// Linear combination `sum(w_k * parts[k])`.
    pub fn combine(parts: &[(&Affine, f64)]) -> Affine {
        let mut out = Affine::default();
        for (a, w) in parts {
            if *w != 0.0 {
                out.add_scaled(a, *w);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum RowKind {
    VoltageDropRe,
    VoltageDropIm,
    BranchActiveFlow,
    BranchReactiveFlow,
    LoadActive,
    LoadReactive,
    PvActive,
    PvReactive,
    KclRe,
    KclIm,
    Thermal,
    VoltageLower,
    VoltageUpper,
    Unbalance,
    PvCap,
    PhaseSelection,
}

impl RowKind {
    pub fn is_equality(self) -> bool {
        !matches!(
            self,
            RowKind::Thermal
                | RowKind::VoltageLower
                | RowKind::VoltageUpper
                | RowKind::Unbalance
                | RowKind::PvCap
                | RowKind::PhaseSelection
        )
    }
}

/// Which entity a row was generated for: a node, branch, or PV candidate
/// index depending on the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowInfo {
    pub kind: RowKind,
    pub entity: usize,
    pub phase: Option<Phase>,
    pub t: usize,
}

/// `c(x) = constant + sum(a_k x_k) + sum(q_ij x_i x_j)`, with `i <= j` in
/// the quadratic list. Equality rows mean `c(x) = 0`, inequality rows
/// `c(x) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRow {
    pub info: RowInfo,
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl QuadRow {
    pub fn new(info: RowInfo) -> Self {
        QuadRow {
            info,
            constant: 0.0,
            linear: Vec::new(),
            quadratic: Vec::new(),
        }
    }

    pub fn is_equality(&self) -> bool {
        self.info.kind.is_equality()
    }

    pub fn add_affine(&mut self, a: &Affine, scale: f64) -> &mut Self {
        self.constant += scale * a.constant;
        self.linear
            .extend(a.terms.iter().map(|&(i, c)| (i, c * scale)));
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// Add `scale * a * b`, expanding into constant, linear and bilinear parts.
    pub fn add_product(&mut self, a: &Affine, b: &Affine, scale: f64) -> &mut Self {
        self.constant += scale * a.constant * b.constant;
        if a.constant != 0.0 {
            self.linear
                .extend(b.terms.iter().map(|&(j, c)| (j, c * a.constant * scale)));
        }
        if b.constant != 0.0 {
            self.linear
                .extend(a.terms.iter().map(|&(i, c)| (i, c * b.constant * scale)));
        }
        for &(i, ci) in &a.terms {
            for &(j, cj) in &b.terms {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                self.quadratic.push((lo, hi, ci * cj * scale));
            }
        }
        self
    }

    /// Merge duplicate terms and drop exact zeros.
    pub fn finish(mut self) -> Self {
        self.linear.sort_by_key(|t| t.0);
        let mut lin: Vec<(usize, f64)> = Vec::with_capacity(self.linear.len());
        for (i, c) in self.linear.drain(..) {
            match lin.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => lin.push((i, c)),
            }
        }
        lin.retain(|t| t.1 != 0.0);
        self.linear = lin;

        self.quadratic.sort_by_key(|t| (t.0, t.1));
        let mut quad: Vec<(usize, usize, f64)> = Vec::with_capacity(self.quadratic.len());
        for (i, j, c) in self.quadratic.drain(..) {
            match quad.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += c,
                _ => quad.push((i, j, c)),
            }
        }
        quad.retain(|t| t.2 != 0.0);
        self.quadratic = quad;
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(i, c)| c * x[i]).sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&(i, j, c)| c * x[i] * x[j])
            .sum();
        self.constant + lin + quad
    }

    pub fn is_linear(&self) -> bool {
        self.quadratic.is_empty()
    }
}

/// Coordinate-format sparse matrix. Hessians carry only the upper triangle
/// (`row <= col`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for k in 0..self.values.len() {
            d[self.rows[k]][self.cols[k]] += self.values[k];
        }
        d
    }

    /// Dense symmetric matrix from upper-triangle storage.
    pub fn to_dense_symmetric(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for k in 0..self.values.len() {
            let (r, c) = (self.rows[k], self.cols[k]);
            d[r][c] += self.values[k];
            if r != c {
                d[c][r] += self.values[k];
            }
        }
        d
    }
}
