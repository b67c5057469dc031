//! Band operators: sparse `X`-by-`X` real matrices with finite propagation.
//!
//! Entry `A[x][y]` sits in row `x`, column `y`; `(A v)(x) = sum_y A[x][y] v(y)`.
//! Rows are stored sorted by column with explicit zeros removed.
//!
//! Operators built from lattice offsets keep their [`SymbolicSource`], the
//! coefficient functions of the bi-infinite operator the window truncates.
//! Limit operators evaluate that source far outside the stored window.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use num_traits::Zero;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse_expression, Expr};
use crate::linalg::DenseMatrix;
use crate::scalar::{compensated_sum, Distance, Scalar};
use crate::space::{Space, SupportSet};

/// Exponent regime for operator norms. `P0` (the closure of finitely
/// supported sequences in l-infinity) has the same norms as `Pinf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormRegime {
    P1,
    Pinf,
    P0,
}

impl NormRegime {
    /// `true` for the row-sum regimes.
    pub fn is_sup(self) -> bool {
        !matches!(self, NormRegime::P1)
    }

    pub fn name(self) -> &'static str {
        match self {
            NormRegime::P1 => "p1",
            NormRegime::Pinf => "pinf",
            NormRegime::P0 => "p0",
        }
    }
}

/// One term `A[x + k][x] = a_k(x)` of a lattice operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetTerm {
    pub offset: Vec<i64>,
    pub coefficient: Expr,
}

impl OffsetTerm {
    pub fn parse(offset: Vec<i64>, coefficient: &str) -> Result<Self> {
        let dim = offset.len();
        Ok(Self {
            offset,
            coefficient: parse_expression(coefficient, dim)?,
        })
    }
}

/// Coefficient functions of a bi-infinite operator on `Z^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicSource {
    pub dim: usize,
    pub terms: Vec<OffsetTerm>,
}

impl SymbolicSource {
    pub fn new(dim: usize, terms: Vec<OffsetTerm>) -> Self {
        Self { dim, terms }.merged()
    }

    fn merged(self) -> Self {
        let mut by_offset: BTreeMap<Vec<i64>, Expr> = BTreeMap::new();
        for t in self.terms {
            match by_offset.remove(&t.offset) {
                Some(prev) => {
                    by_offset.insert(t.offset, prev.plus(t.coefficient));
                }
                None => {
                    by_offset.insert(t.offset, t.coefficient);
                }
            }
        }
        Self {
            dim: self.dim,
            terms: by_offset
                .into_iter()
                .map(|(offset, coefficient)| OffsetTerm {
                    offset,
                    coefficient,
                })
                .collect(),
        }
    }

    /// `A[row][col]` of the bi-infinite operator.
    pub fn entry(&self, row: &[i64], col: &[i64]) -> Result<f64> {
        let x: Vec<f64> = col.iter().map(|&c| c as f64).collect();
        let mut total = 0.0;
        for t in &self.terms {
            if t.offset.iter().zip(row.iter().zip(col)).all(|(k, (r, c))| r - c == *k) {
                total += t.coefficient.eval(&x).map_err(|message| Error::Evaluation {
                    expr: t.coefficient.to_string(),
                    point: col.to_vec(),
                    message,
                })?;
            }
        }
        Ok(total)
    }

    /// Source of the product `A B`:
    /// `(AB)[x + k + j][x] = a_k(x + j) b_j(x)`.
    pub fn product(&self, other: &SymbolicSource) -> SymbolicSource {
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &other.terms {
                let offset = a.offset.iter().zip(&b.offset).map(|(p, q)| p + q).collect();
                terms.push(OffsetTerm {
                    offset,
                    coefficient: a.coefficient.shifted(&b.offset).times(b.coefficient.clone()),
                });
            }
        }
        SymbolicSource::new(self.dim, terms)
    }

    /// Source of the transpose: `A*[x - k][x] = a_k(x - k)`.
    pub fn adjoint(&self) -> SymbolicSource {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let neg: Vec<i64> = t.offset.iter().map(|k| -k).collect();
                OffsetTerm {
                    coefficient: t.coefficient.shifted(&neg),
                    offset: neg,
                }
            })
            .collect();
        SymbolicSource::new(self.dim, terms)
    }

    pub fn sum(&self, other: &SymbolicSource, other_scale: f64) -> SymbolicSource {
        let mut terms = self.terms.clone();
        for t in &other.terms {
            terms.push(OffsetTerm {
                offset: t.offset.clone(),
                coefficient: Expr::Const(other_scale).times(t.coefficient.clone()),
            });
        }
        SymbolicSource::new(self.dim, terms)
    }

    pub fn scaled(&self, s: f64) -> SymbolicSource {
        SymbolicSource::new(self.dim, self.sum(&SymbolicSource::new(self.dim, vec![]), 0.0).terms)
            .map_coefficients(|e| Expr::Const(s).times(e))
    }

    fn map_coefficients(self, f: impl Fn(Expr) -> Expr) -> SymbolicSource {
        SymbolicSource {
            dim: self.dim,
            terms: self
                .terms
                .into_iter()
                .map(|t| OffsetTerm {
                    offset: t.offset,
                    coefficient: f(t.coefficient),
                })
                .collect(),
        }
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.terms.iter().all(|t| t.coefficient.is_constant())
    }
}

/// A band operator on a finite space.
#[derive(Debug, Clone)]
pub struct BandOperator<T> {
    space: Arc<Space>,
    rows: Vec<Vec<(usize, T)>>,
    propagation: Distance,
    source: Option<Arc<SymbolicSource>>,
}

impl<T: Scalar> PartialEq for BandOperator<T> {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space) && self.rows == other.rows
    }
}

pub(crate) fn same_space(a: &Arc<Space>, b: &Arc<Space>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Result of [`band_from_offsets`]; terms whose offset never fits in the
/// window are skipped and reported in `warnings`.
#[derive(Debug, Clone)]
pub struct OffsetBuild<T> {
    pub operator: BandOperator<T>,
    pub warnings: Vec<String>,
}

/// Lattice operator `A[x + k][x] = a_k(x)` restricted to a grid window.
pub fn band_from_offsets<T: Scalar>(
    space: &Arc<Space>,
    terms: Vec<OffsetTerm>,
) -> Result<OffsetBuild<T>> {
    let g = space.grid_window().ok_or(Error::NotAGrid)?;
    let dim = g.dim();
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for t in terms {
        if t.offset.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "offset {:?} in a {dim}-dimensional window",
                t.offset
            )));
        }
        if let Some(v) = t.coefficient.max_var() {
            if v >= dim {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient `{}` uses x{v} in a {dim}-dimensional window",
                    t.coefficient
                )));
            }
        }
        if (0..dim).any(|a| t.offset[a].abs() > g.extent(a)) {
            warnings.push(format!(
                "offset {:?} leaves the window entirely; term skipped",
                t.offset
            ));
            continue;
        }
        kept.push(t);
    }
    let source = SymbolicSource::new(dim, kept);
    let mut triplets = Vec::new();
    for t in &source.terms {
        for col in 0..space.len() {
            let x = g.coords(col);
            let target: Vec<i64> = x.iter().zip(&t.offset).map(|(a, b)| a + b).collect();
            if let Some(row) = g.index_of(&target) {
                let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
                let v = t.coefficient.eval(&xf).map_err(|message| Error::Evaluation {
                    expr: t.coefficient.to_string(),
                    point: x.clone(),
                    message,
                })?;
                triplets.push((row, col, T::of(v)));
            }
        }
    }
    let operator = BandOperator::from_triplets(space, triplets)?.with_source(Some(Arc::new(source)));
    Ok(OffsetBuild { operator, warnings })
}

/// A multiplication operator `f` composed with a partial translation `t`:
/// `(f V v)(t(y)) = f(t(y)) v(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTerm<T> {
    pub multiplier: Vec<T>,
    /// `(y, t(y))` pairs, sorted by `y`.
    pub translation: Vec<(usize, usize)>,
    /// Lattice offset shared by every pair, when grouping by offset.
    pub offset: Option<Vec<i64>>,
}

impl<T: Scalar> DecompositionTerm<T> {
    pub fn is_injective(&self) -> bool {
        let mut dom: Vec<usize> = self.translation.iter().map(|p| p.0).collect();
        let mut ran: Vec<usize> = self.translation.iter().map(|p| p.1).collect();
        dom.sort_unstable();
        ran.sort_unstable();
        let n = dom.len();
        dom.dedup();
        ran.dedup();
        dom.len() == n && ran.len() == n
    }

    pub fn displacement(&self, space: &Space) -> Distance {
        self.translation
            .iter()
            .map(|&(y, x)| space.distance(x, y))
            .max()
            .unwrap_or_else(Distance::zero)
    }

    pub fn multiplier_sup(&self) -> T {
        self.multiplier.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Norms of the masked operators `A Q_F`, `Q_F A`, and optionally
/// `P_F' A Q_F`, `Q_F A P_F'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PClassDefect<T> {
    pub aq: T,
    pub qa: T,
    pub pq: Option<T>,
    pub qp: Option<T>,
}

impl<T: Scalar> BandOperator<T> {
    pub fn zero(space: &Arc<Space>) -> Self {
        Self {
            space: space.clone(),
            rows: vec![Vec::new(); space.len()],
            propagation: Distance::zero(),
            source: None,
        }
    }

    pub fn identity(space: &Arc<Space>) -> Self {
        Self::diagonal(space, &vec![T::one(); space.len()])
    }

    pub fn diagonal(space: &Arc<Space>, values: &[T]) -> Self {
        let rows = values
            .iter()
            .enumerate()
            .map(|(i, &v)| if v == T::zero() { vec![] } else { vec![(i, v)] })
            .collect();
        Self {
            space: space.clone(),
            rows,
            propagation: Distance::zero(),
            source: None,
        }
    }

    /// Lattice shift `(S v)(x + k) = v(x)` on a grid window.
    pub fn shift(space: &Arc<Space>, k: &[i64]) -> Result<Self> {
        let term = OffsetTerm {
            offset: k.to_vec(),
            coefficient: Expr::Const(1.0),
        };
        Ok(band_from_offsets(space, vec![term])?.operator)
    }

    /// Build from `(row, col, value)` triplets; duplicates are summed and
    /// zeros dropped.
    pub fn from_triplets(
        space: &Arc<Space>,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let n = space.len();
        let mut rows: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); n];
        for (x, y, v) in triplets {
            if x >= n || y >= n {
                return Err(Error::IndexMismatch {
                    expected: n,
                    got: x.max(y) + 1,
                });
            }
            *rows[x].entry(y).or_insert_with(T::zero) += v;
        }
        Ok(Self::from_sorted_rows(
            space,
            rows.into_iter().map(|r| r.into_iter().collect()).collect(),
        ))
    }

    fn from_sorted_rows(space: &Arc<Space>, rows: Vec<Vec<(usize, T)>>) -> Self {
        let rows: Vec<Vec<(usize, T)>> = rows
            .into_iter()
            .map(|r| r.into_iter().filter(|(_, v)| *v != T::zero()).collect())
            .collect();
        let mut propagation = Distance::zero();
        for (x, row) in rows.iter().enumerate() {
            for &(y, _) in row {
                let d = space.distance(x, y);
                if d > propagation {
                    propagation = d;
                }
            }
        }
        Self {
            space: space.clone(),
            rows,
            propagation,
            source: None,
        }
    }

    pub fn with_source(mut self, source: Option<Arc<SymbolicSource>>) -> Self {
        self.source = source;
        self
    }

    pub fn source(&self) -> Option<&Arc<SymbolicSource>> {
        self.source.as_ref()
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn row(&self, x: usize) -> &[(usize, T)] {
        &self.rows[x]
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        match self.rows[x].binary_search_by_key(&y, |e| e.0) {
            Ok(k) => self.rows[x][k].1,
            Err(_) => T::zero(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(x, r)| r.iter().map(move |&(y, v)| (x, y, v)))
    }

    pub fn is_zero(&self) -> bool {
        self.nnz() == 0
    }

    /// Max `d(x, y)` over nonzero entries.
    pub fn propagation(&self) -> Distance {
        self.propagation
    }

    pub fn max_abs_entry(&self) -> T {
        self.entries().fold(T::zero(), |m, (_, _, v)| m.max(v.abs()))
    }

    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.dim() {
            return Err(Error::IndexMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.iter().fold(T::zero(), |acc, &(y, a)| acc + a * v[y]))
            .collect())
    }

    pub fn multiply(&self, other: &BandOperator<T>) -> Result<BandOperator<T>> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        let n = self.dim();
        let mut acc = vec![T::zero(); n];
        let mut mark = vec![false; n];
        let mut touched = Vec::new();
        let mut rows = Vec::with_capacity(n);
        for row in &self.rows {
            for &(k, a) in row {
                for &(y, b) in &other.rows[k] {
                    if !mark[y] {
                        mark[y] = true;
                        touched.push(y);
                    }
                    acc[y] += a * b;
                }
            }
            touched.sort_unstable();
            let mut out = Vec::with_capacity(touched.len());
            for &y in &touched {
                out.push((y, acc[y]));
                acc[y] = T::zero();
                mark[y] = false;
            }
            touched.clear();
            rows.push(out);
        }
        let source = match (&self.source, &other.source) {
            (Some(a), Some(b)) => Some(Arc::new(a.product(b))),
            _ => None,
        };
        Ok(Self::from_sorted_rows(&self.space, rows).with_source(source))
    }

    /// Transpose, which is the adjoint for real scalar entries.
    pub fn adjoint(&self) -> BandOperator<T> {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); self.dim()];
        for (x, y, v) in self.entries() {
            rows[y].push((x, v));
        }
        Self {
            space: self.space.clone(),
            rows,
            propagation: self.propagation,
            source: self.source.as_ref().map(|s| Arc::new(s.adjoint())),
        }
    }

    pub fn add(&self, other: &BandOperator<T>) -> Result<BandOperator<T>> {
        self.combine(other, T::one())
    }

    pub fn sub(&self, other: &BandOperator<T>) -> Result<BandOperator<T>> {
        self.combine(other, -T::one())
    }

    fn combine(&self, other: &BandOperator<T>, s: T) -> Result<BandOperator<T>> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| merge_rows(a, b, s))
            .collect();
        let source = match (&self.source, &other.source) {
            (Some(a), Some(b)) => Some(Arc::new(a.sum(b, s.as_f64()))),
            _ => None,
        };
        Ok(Self::from_sorted_rows(&self.space, rows).with_source(source))
    }

    pub fn scale(&self, s: T) -> BandOperator<T> {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&(y, v)| (y, v * s)).collect())
            .collect();
        Self::from_sorted_rows(&self.space, rows)
            .with_source(self.source.as_ref().map(|src| Arc::new(src.scaled(s.as_f64()))))
    }

    /// `f A` for a multiplication operator `f`.
    pub fn left_multiply_diag(&self, f: &[T]) -> BandOperator<T> {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(x, r)| r.iter().map(|&(y, v)| (y, f[x] * v)).collect())
            .collect();
        Self::from_sorted_rows(&self.space, rows)
    }

    /// `A f` for a multiplication operator `f`.
    pub fn right_multiply_diag(&self, f: &[T]) -> BandOperator<T> {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|&(y, v)| (y, v * f[y])).collect())
            .collect();
        Self::from_sorted_rows(&self.space, rows)
    }

    /// `P_rows A P_cols`; `None` keeps everything on that side.
    pub fn masked(&self, rows: Option<&SupportSet>, cols: Option<&SupportSet>) -> BandOperator<T> {
        let keep_row = |x: usize| rows.map_or(true, |s| s.contains(x));
        let keep_col = |y: usize| cols.map_or(true, |s| s.contains(y));
        let out = self
            .rows
            .iter()
            .enumerate()
            .map(|(x, r)| {
                if keep_row(x) {
                    r.iter().copied().filter(|&(y, _)| keep_col(y)).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self::from_sorted_rows(&self.space, out)
    }

    pub fn row_abs_sums(&self) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| compensated_sum(r.iter().map(|e| e.1.abs())))
            .collect()
    }

    pub fn column_abs_sums(&self) -> Vec<T> {
        let mut cols: Vec<Vec<T>> = vec![Vec::new(); self.dim()];
        for (_, y, v) in self.entries() {
            cols[y].push(v.abs());
        }
        cols.into_iter().map(compensated_sum).collect()
    }

    /// Exact operator norm: max column sum for `P1`, max row sum otherwise.
    pub fn op_norm(&self, regime: NormRegime) -> T {
        let sums = match regime {
            NormRegime::P1 => self.column_abs_sums(),
            NormRegime::Pinf | NormRegime::P0 => self.row_abs_sums(),
        };
        sums.into_iter().fold(T::zero(), T::max)
    }

    fn masked_norm(&self, keep_row: impl Fn(usize) -> bool, keep_col: impl Fn(usize) -> bool, regime: NormRegime) -> T {
        match regime {
            NormRegime::P1 => {
                let mut cols: Vec<Vec<T>> = vec![Vec::new(); self.dim()];
                for (x, y, v) in self.entries() {
                    if keep_row(x) && keep_col(y) {
                        cols[y].push(v.abs());
                    }
                }
                cols.into_iter().map(compensated_sum).fold(T::zero(), T::max)
            }
            NormRegime::Pinf | NormRegime::P0 => self
                .rows
                .iter()
                .enumerate()
                .filter(|(x, _)| keep_row(*x))
                .map(|(_, r)| {
                    compensated_sum(r.iter().filter(|e| keep_col(e.0)).map(|e| e.1.abs()))
                })
                .fold(T::zero(), T::max),
        }
    }

    /// Cut-off norms measuring how far the operator is from being
    /// killed by large-support projections.
    pub fn pclass_defect(
        &self,
        f: &SupportSet,
        f_prime: Option<&SupportSet>,
        regime: NormRegime,
    ) -> PClassDefect<T> {
        let in_f = |i: usize| f.contains(i);
        PClassDefect {
            aq: self.masked_norm(|_| true, |y| !in_f(y), regime),
            qa: self.masked_norm(|x| !in_f(x), |_| true, regime),
            pq: f_prime.map(|g| self.masked_norm(|x| g.contains(x), |y| !in_f(y), regime)),
            qp: f_prime.map(|g| self.masked_norm(|x| !in_f(x), |y| g.contains(y), regime)),
        }
    }

    /// Largest entrywise difference.
    pub fn max_abs_diff(&self, other: &BandOperator<T>) -> Result<T> {
        if !same_space(&self.space, &other.space) {
            return Err(Error::SpaceMismatch);
        }
        Ok(self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                merge_rows(a, b, -T::one())
                    .into_iter()
                    .fold(T::zero(), |m, (_, v)| m.max(v.abs()))
            })
            .fold(T::zero(), T::max))
    }

    /// Dense submatrix `A[rows][cols]`.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix<T> {
        let mut pos = vec![usize::MAX; self.dim()];
        for (j, &c) in cols.iter().enumerate() {
            pos[c] = j;
        }
        let mut m = DenseMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for &(y, v) in &self.rows[r] {
                if pos[y] != usize::MAX {
                    m[(i, pos[y])] = v;
                }
            }
        }
        m
    }

    /// Embed a dense block placed at `rows x cols` into an operator on `space`.
    pub fn from_dense_block(
        space: &Arc<Space>,
        block: &DenseMatrix<T>,
        rows: &[usize],
        cols: &[usize],
    ) -> BandOperator<T> {
        let out: Vec<Vec<(usize, T)>> = {
            let mut out = vec![Vec::new(); space.len()];
            let mut order: Vec<(usize, usize)> = cols.iter().copied().enumerate().collect();
            order.sort_unstable_by_key(|p| p.1);
            for (i, &r) in rows.iter().enumerate() {
                out[r] = order
                    .iter()
                    .map(|&(j, c)| (c, block[(i, j)]))
                    .collect();
            }
            out
        };
        Self::from_sorted_rows(space, out)
    }

    /// Re-express a grid operator on another grid window, matching points by
    /// lattice coordinates. Entries whose row or column falls outside
    /// `target` are dropped.
    pub fn section(&self, target: &Arc<Space>) -> Result<BandOperator<T>> {
        let g = self.space.grid_window().ok_or(Error::NotAGrid)?;
        let t = target.grid_window().ok_or(Error::NotAGrid)?;
        if g.dim() != t.dim() {
            return Err(Error::DimensionMismatch("section window dimension".into()));
        }
        let map: Vec<Option<usize>> = (0..self.dim())
            .map(|i| t.index_of(&g.coords(i)))
            .collect();
        let triplets = self.entries().filter_map(|(x, y, v)| match (map[x], map[y]) {
            (Some(a), Some(b)) => Some((a, b, v)),
            _ => None,
        });
        Ok(Self::from_triplets(target, triplets)?.with_source(self.source.clone()))
    }

    /// Decomposition `A = sum_k f_k V_k` into multiplication
    /// operators and partial translations.
    ///
    /// On grid windows entries are grouped by lattice offset, which is the
    /// canonical choice whenever it stays within `N = geometry_profile(prop)`
    /// terms. Otherwise (explicit tables, or tiny windows where offsets
    /// outnumber ball sizes) the nonzero pattern is edge-coloured as a
    /// bipartite graph with exactly max-degree colours; each colour class is
    /// a partial bijection, and max degree is at most `N`.
    pub fn decompose_band(&self) -> Vec<DecompositionTerm<T>> {
        if self.is_zero() {
            return Vec::new();
        }
        let bound = self.space.geometry_profile(self.propagation);
        if let Some(g) = self.space.grid_window() {
            let mut groups: BTreeMap<Vec<i64>, Vec<(usize, usize)>> = BTreeMap::new();
            for (x, y, _) in self.entries() {
                let cx = g.coords(x);
                let cy = g.coords(y);
                let k: Vec<i64> = cx.iter().zip(&cy).map(|(a, b)| a - b).collect();
                groups.entry(k).or_default().push((y, x));
            }
            if groups.len() <= bound {
                return groups
                    .into_iter()
                    .map(|(k, mut pairs)| {
                        pairs.sort_unstable();
                        self.term_from_pairs(pairs, Some(k))
                    })
                    .collect();
            }
        }
        bipartite_edge_coloring(self.dim(), self.entries().map(|(x, y, _)| (y, x)))
            .into_iter()
            .map(|mut pairs| {
                pairs.sort_unstable();
                self.term_from_pairs(pairs, None)
            })
            .collect()
    }

    fn term_from_pairs(&self, pairs: Vec<(usize, usize)>, offset: Option<Vec<i64>>) -> DecompositionTerm<T> {
        let mut multiplier = vec![T::zero(); self.dim()];
        for &(y, x) in &pairs {
            multiplier[x] = self.get(x, y);
        }
        DecompositionTerm {
            multiplier,
            translation: pairs,
            offset,
        }
    }

    /// Read a `row-id,col-id,value` CSV using the space's point labels.
    pub fn from_coo_csv<R: Read>(space: &Arc<Space>, reader: R) -> Result<BandOperator<T>> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut triplets = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv {
                line: line + 1,
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(Error::Csv {
                    line: line + 1,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let value: f64 = match rec[2].parse() {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(_) => {
                    return Err(Error::Csv {
                        line: line + 1,
                        message: format!("bad value `{}`", &rec[2]),
                    })
                }
            };
            let x = space.index_of(&rec[0])?;
            let y = space.index_of(&rec[1])?;
            triplets.push((x, y, T::of(value)));
        }
        Self::from_triplets(space, triplets)
    }

    pub fn write_coo_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["row", "col", "value"]).map_err(io)?;
        for (x, y, v) in self.entries() {
            w.write_record([
                self.space.label(x),
                self.space.label(y),
                &format!("{v}"),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Rebuild `sum_k f_k V_k`.
pub fn reconstruct<T: Scalar>(space: &Arc<Space>, terms: &[DecompositionTerm<T>]) -> Result<BandOperator<T>> {
    BandOperator::from_triplets(
        space,
        terms.iter().flat_map(|t| {
            t.translation
                .iter()
                .map(move |&(y, x)| (x, y, t.multiplier[x]))
        }),
    )
}

fn merge_rows<T: Scalar>(a: &[(usize, T)], b: &[(usize, T)], s: T) -> Vec<(usize, T)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ya, va)), Some(&(yb, vb))) if ya == yb => {
                out.push((ya, va + s * vb));
                i += 1;
                j += 1;
            }
            (Some(&(ya, va)), Some(&(yb, _))) if ya < yb => {
                out.push((ya, va));
                i += 1;
            }
            (Some(_), Some(&(yb, vb))) => {
                out.push((yb, s * vb));
                j += 1;
            }
            (Some(&(ya, va)), None) => {
                out.push((ya, va));
                i += 1;
            }
            (None, Some(&(yb, vb))) => {
                out.push((yb, s * vb));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// Proper edge colouring of a bipartite multigraph-free edge list
/// `(left, right)` with exactly `max degree` colours (Konig's theorem,
/// alternating-path recolouring). Returns the colour classes.
pub fn bipartite_edge_coloring(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize)>,
) -> Vec<Vec<(usize, usize)>> {
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let mut deg_l = vec![0usize; n];
    let mut deg_r = vec![0usize; n];
    for &(u, v) in &edges {
        deg_l[u] += 1;
        deg_r[v] += 1;
    }
    let delta = deg_l.iter().chain(&deg_r).copied().max().unwrap_or(0);
    if delta == 0 {
        return Vec::new();
    }
    const NONE: usize = usize::MAX;
    // left[u * delta + c] = right partner of u in colour c
    let mut left = vec![NONE; n * delta];
    let mut right = vec![NONE; n * delta];
    for &(u, v) in &edges {
        let a = (0..delta).find(|&c| left[u * delta + c] == NONE).expect("degree bound");
        let b = (0..delta).find(|&c| right[v * delta + c] == NONE).expect("degree bound");
        if right[v * delta + a] != NONE {
            // Walk the a/b alternating path starting at v and swap colours.
            let mut path = Vec::new();
            let mut on_right = true;
            let mut cur = v;
            let mut colour = a;
            loop {
                let next = if on_right {
                    right[cur * delta + colour]
                } else {
                    left[cur * delta + colour]
                };
                if next == NONE {
                    break;
                }
                let (l, r) = if on_right { (next, cur) } else { (cur, next) };
                path.push((l, r, colour));
                cur = next;
                on_right = !on_right;
                colour = if colour == a { b } else { a };
            }
            for &(l, r, c) in &path {
                left[l * delta + c] = NONE;
                right[r * delta + c] = NONE;
            }
            for &(l, r, c) in &path {
                let d = if c == a { b } else { a };
                left[l * delta + d] = r;
                right[r * delta + d] = l;
            }
        }
        left[u * delta + a] = v;
        right[v * delta + a] = u;
    }
    let mut classes = vec![Vec::new(); delta];
    for u in 0..n {
        for c in 0..delta {
            let v = left[u * delta + c];
            if v != NONE {
                classes[c].push((u, v));
            }
        }
    }
    classes.retain(|c| !c.is_empty());
    classes
}

/// Approximate `l^p -> l^p` norm for `1 < p < inf` by Boyd's power
/// iteration from several starting vectors. The value is a lower bound of
/// the true norm (every iterate is a feasible unit vector).
pub fn estimate_lp_norm<T: Scalar>(a: &BandOperator<T>, p: f64, iterations: usize, seed: u64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "p = {p}; use the exact regimes for p in {{1, inf}}"
        )));
    }
    let q = p / (p - 1.0);
    let n = a.dim();
    if n == 0 || a.is_zero() {
        return Ok(0.0);
    }
    let at = a.adjoint();
    let to_f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let pnorm = |v: &[f64], p: f64| v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let dual = |v: &[f64], p: f64| {
        let nv = pnorm(v, p);
        v.iter()
            .map(|x| x.signum() * (x.abs() / nv).powf(p - 1.0))
            .collect::<Vec<f64>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for start in 0..4 {
        let mut x: Vec<f64> = if start == 0 {
            vec![1.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let nx = pnorm(&x, p);
        x.iter_mut().for_each(|v| *v /= nx);
        for _ in 0..iterations {
            let xt: Vec<T> = x.iter().map(|&v| T::of(v)).collect();
            let y = to_f(&a.apply(&xt)?);
            let ny = pnorm(&y, p);
            best = best.max(ny);
            if ny == 0.0 {
                break;
            }
            let yd: Vec<T> = dual(&y, p).into_iter().map(T::of).collect();
            let z = to_f(&at.apply(&yd)?);
            if z.iter().all(|v| *v == 0.0) {
                break;
            }
            x = dual(&z, q);
        }
    }
    Ok(best)
}

/// Random sparse band operator on a grid window, used by the test zoo.
pub fn random_band<T: Scalar>(
    space: &Arc<Space>,
    reach: i64,
    density: f64,
    rng: &mut impl Rng,
) -> BandOperator<T> {
    let mut triplets = Vec::new();
    let r = Distance::from_integer(reach);
    for x in 0..space.len() {
        for y in space.ball(x, r) {
            if rng.gen::<f64>() < density {
                triplets.push((x, y, T::of(rng.gen_range(-2.0..2.0))));
            }
        }
    }
    BandOperator::from_triplets(space, triplets).expect("indices come from the space")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_grid_space, MetricKind};

    fn line(lo: i64, hi: i64) -> Arc<Space> {
        make_grid_space(1, &[lo], &[hi], MetricKind::L1).unwrap()
    }

    fn tridiagonal(space: &Arc<Space>) -> BandOperator<f64> {
        band_from_offsets(
            space,
            vec![
                OffsetTerm::parse(vec![0], "2").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
                OffsetTerm::parse(vec![-1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator
    }

    fn delta(space: &Space, x: i64) -> Vec<f64> {
        let mut v = vec![0.0; space.len()];
        v[space.index_of_coords(&[x]).unwrap()] = 1.0;
        v
    }

    #[test]
    fn tridiagonal_construction() {
        let s = line(-10, 10);
        let a = tridiagonal(&s);
        assert_eq!(a.propagation(), Distance::from_integer(1));
        assert_eq!(a.nnz(), 21 + 20 + 20);
        assert_eq!(a.op_norm(NormRegime::Pinf), 4.0);
        assert_eq!(a.op_norm(NormRegime::P1), 4.0);
    }

    #[test]
    fn diagonal_coefficient_expression() {
        let s = line(-10, 10);
        let a: BandOperator<f64> =
            band_from_offsets(&s, vec![OffsetTerm::parse(vec![0], "2 + 1/(1+x0^2)").unwrap()])
                .unwrap()
                .operator;
        let o = s.index_of_coords(&[0]).unwrap();
        assert_eq!(a.get(o, o), 3.0);
        assert_eq!(a.propagation(), Distance::zero());
    }

    #[test]
    fn empty_terms_give_zero() {
        let s = line(-3, 3);
        let a: BandOperator<f64> = band_from_offsets(&s, vec![]).unwrap().operator;
        assert!(a.is_zero());
        assert_eq!(a.propagation(), Distance::zero());
        assert!(a.decompose_band().is_empty());
    }

    #[test]
    fn offsets_outside_window_warn() {
        let s = line(-2, 2);
        let b = band_from_offsets::<f64>(&s, vec![OffsetTerm::parse(vec![7], "1").unwrap()]).unwrap();
        assert!(b.operator.is_zero());
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn evaluation_errors_name_the_point() {
        let s = line(-2, 2);
        match band_from_offsets::<f64>(&s, vec![OffsetTerm::parse(vec![0], "1/x0").unwrap()]) {
            Err(Error::Evaluation { point, .. }) => assert_eq!(point, vec![0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn apply_examples() {
        let s = line(-2, 2);
        let id = BandOperator::<f64>::identity(&s);
        let v = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        assert_eq!(id.apply(&v).unwrap(), v);
        let shift = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        assert_eq!(shift.apply(&delta(&s, 0)).unwrap(), delta(&s, 1));
        assert!(matches!(
            id.apply(&[1.0]),
            Err(Error::IndexMismatch { expected: 5, got: 1 })
        ));

        let s = line(-10, 10);
        let lap = tridiagonal(&s);
        let out = lap.apply(&vec![1.0; s.len()]).unwrap();
        for (i, v) in out.iter().enumerate() {
            let x = s.coords(i).unwrap()[0];
            if x.abs() < 10 {
                assert_eq!(*v, 0.0);
            } else {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn multiply_examples() {
        let s = line(-5, 5);
        let lap = tridiagonal(&s);
        let id = BandOperator::identity(&s);
        assert_eq!(lap.multiply(&id).unwrap(), lap);
        let up = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        let down = BandOperator::<f64>::shift(&s, &[-1]).unwrap();
        let p = up.multiply(&down).unwrap();
        for i in 0..s.len() {
            let x = s.coords(i).unwrap()[0];
            // down then up: the point -5 has no preimage under the up shift
            let expect = if x == -5 { 0.0 } else { 1.0 };
            assert_eq!(p.get(i, i), expect);
        }
        assert_eq!(p.propagation(), Distance::zero());
        assert!(lap.multiply(&lap).unwrap().propagation() <= Distance::from_integer(2));
        let other = line(-5, 6);
        assert_eq!(
            lap.multiply(&BandOperator::identity(&other)).unwrap_err(),
            Error::SpaceMismatch
        );
    }

    #[test]
    fn adjoint_examples() {
        let s = line(-5, 5);
        let up = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        let down = BandOperator::<f64>::shift(&s, &[-1]).unwrap();
        assert_eq!(up.adjoint(), down);
        assert_eq!(up.adjoint().adjoint(), up);
    }

    #[test]
    fn norm_examples() {
        let s = line(0, 1);
        let d = BandOperator::<f64>::diagonal(&s, &[3.0, -5.0]);
        assert_eq!(d.op_norm(NormRegime::P1), 5.0);
        let id = BandOperator::<f64>::identity(&s);
        for r in [NormRegime::P1, NormRegime::Pinf, NormRegime::P0] {
            assert_eq!(id.op_norm(r), 1.0);
        }
        assert_eq!(BandOperator::<f64>::zero(&s).op_norm(NormRegime::Pinf), 0.0);
    }

    #[test]
    fn propagation_examples() {
        let s = make_grid_space(2, &[-4, -4], &[4, 4], MetricKind::L1).unwrap();
        let sh = BandOperator::<f64>::shift(&s, &[2, -1]).unwrap();
        assert_eq!(sh.propagation(), Distance::from_integer(3));
        let s1 = line(-6, 6);
        let a = BandOperator::<f64>::shift(&s1, &[1]).unwrap();
        let b = BandOperator::<f64>::shift(&s1, &[3]).unwrap();
        assert_eq!(a.add(&b).unwrap().propagation(), Distance::from_integer(3));
    }

    #[test]
    fn tridiagonal_decomposes_into_three_offsets() {
        let s = line(-10, 10);
        let a = tridiagonal(&s);
        let terms = a.decompose_band();
        assert_eq!(terms.len(), 3);
        assert_eq!(s.geometry_profile(a.propagation()), 3);
        let offsets: Vec<Vec<i64>> = terms.iter().map(|t| t.offset.clone().unwrap()).collect();
        assert_eq!(offsets, vec![vec![-1], vec![0], vec![1]]);
        assert_eq!(reconstruct(&s, &terms).unwrap(), a);
    }

    #[test]
    fn tiny_window_falls_back_to_coloring() {
        // full 3x3 matrix: five lattice offsets but balls of radius 2 hold 3 points
        let s = line(-1, 1);
        let a = BandOperator::<f64>::from_triplets(
            &s,
            (0..3).flat_map(|x| (0..3).map(move |y| (x, y, 1.0 + (x * 3 + y) as f64))),
        )
        .unwrap();
        let terms = a.decompose_band();
        assert!(terms.len() <= s.geometry_profile(a.propagation()));
        assert!(terms.iter().all(|t| t.is_injective()));
        assert_eq!(reconstruct(&s, &terms).unwrap(), a);
    }

    #[test]
    fn edge_coloring_is_proper_and_tight() {
        let edges = vec![(0, 0), (0, 1), (1, 0), (1, 2), (2, 1), (2, 2), (3, 0), (3, 3)];
        let classes = bipartite_edge_coloring(4, edges.clone());
        // right vertex 0 has degree 3
        assert_eq!(classes.len(), 3);
        let mut all: Vec<(usize, usize)> = classes.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut expect = edges;
        expect.sort_unstable();
        assert_eq!(all, expect);
        for c in &classes {
            let mut l: Vec<usize> = c.iter().map(|e| e.0).collect();
            let mut r: Vec<usize> = c.iter().map(|e| e.1).collect();
            l.sort_unstable();
            r.sort_unstable();
            l.dedup();
            r.dedup();
            assert_eq!(l.len(), c.len());
            assert_eq!(r.len(), c.len());
        }
    }

    #[test]
    fn pclass_defect_examples() {
        let s = line(-50, 50);
        let values: Vec<f64> = (0..s.len())
            .map(|i| 1.0 / (1.0 + s.coords(i).unwrap()[0].abs() as f64))
            .collect();
        let a = BandOperator::diagonal(&s, &values);
        for n in [0i64, 5, 20] {
            let f = SupportSet::grid_box(&s, &[-n], &[n]).unwrap();
            let d = a.pclass_defect(&f, None, NormRegime::Pinf);
            assert!((d.aq - 1.0 / (2.0 + n as f64)).abs() < 1e-15);
            assert_eq!(d.aq, d.qa);
        }
        let id = BandOperator::<f64>::identity(&s);
        let f = SupportSet::grid_box(&s, &[-3], &[3]).unwrap();
        assert_eq!(id.pclass_defect(&f, None, NormRegime::P1).aq, 1.0);
        let inside = id.masked(Some(&f), Some(&f));
        let d = inside.pclass_defect(&f, Some(&f), NormRegime::Pinf);
        assert_eq!((d.aq, d.qa, d.pq, d.qp), (0.0, 0.0, Some(0.0), Some(0.0)));
    }

    #[test]
    fn coo_roundtrip() {
        let s = make_grid_space(2, &[0, 0], &[2, 2], MetricKind::Linf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: BandOperator<f64> = random_band(&s, 1, 0.5, &mut rng);
        let mut buf = Vec::new();
        a.write_coo_csv(&mut buf).unwrap();
        let b = BandOperator::<f64>::from_coo_csv(&s, buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn symbolic_product_matches_window_product_in_interior() {
        let s = line(-8, 8);
        let a: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![1], "x0").unwrap(),
                OffsetTerm::parse(vec![0], "2").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        let b: BandOperator<f64> = band_from_offsets(
            &s,
            vec![OffsetTerm::parse(vec![-1], "1 + x0^2").unwrap()],
        )
        .unwrap()
        .operator;
        let ab = a.multiply(&b).unwrap();
        let src = ab.source().unwrap();
        for (x, y, v) in ab.entries() {
            let cx = s.coords(x).unwrap();
            let cy = s.coords(y).unwrap();
            if cx[0].abs() < 7 {
                assert!((src.entry(&cx, &cy).unwrap() - v).abs() < 1e-12);
            }
        }
        let at = a.adjoint();
        let srct = at.source().unwrap();
        for (x, y, v) in at.entries() {
            let cx = s.coords(x).unwrap();
            let cy = s.coords(y).unwrap();
            assert!((srct.entry(&cx, &cy).unwrap() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn p_norm_estimate_is_between_exact_extremes_for_diagonal() {
        let s = line(0, 4);
        let d = BandOperator::<f64>::diagonal(&s, &[1.0, -3.0, 2.0, 0.5, 0.0]);
        let est = estimate_lp_norm(&d, 2.0, 50, 1).unwrap();
        assert!((est - 3.0).abs() < 1e-9);
        assert!(estimate_lp_norm(&d, 1.0, 10, 1).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let s = line(-5, 5);
        let a: BandOperator<f32> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![0], "2").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        assert_eq!(a.op_norm(NormRegime::Pinf), 3.0f32);
        assert_eq!(a.adjoint().op_norm(NormRegime::P1), 3.0f32);
    }
}
