//! Partitions of unity with controlled variation, Lipschitz dual families,
//! and the operator assemblies built from them.
//!
//! A partition `{phi_i}` satisfies `sum_i phi_i(x) = 1`; a dual family
//! `{psi_i}` has `psi_i = 1` on `supp phi_i`. Assemblies are exact finite sums
//! on the window, accumulated in index order so results are reproducible.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{same_space, BandOperator, NormRegime};
use crate::scalar::{distance_to_f64, Distance, Scalar};
use crate::space::{Space, SpaceKind, SupportSet};

/// Sparse function on a space: `(point, value)` pairs sorted by point,
/// zeros omitted.
pub type SparseFn<T> = Vec<(usize, T)>;

fn lookup<T: Scalar>(f: &SparseFn<T>, x: usize) -> T {
    match f.binary_search_by_key(&x, |e| e.0) {
        Ok(k) => f[k].1,
        Err(_) => T::zero(),
    }
}

fn dense<T: Scalar>(f: &SparseFn<T>, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for &(x, v) in f {
        out[x] = v;
    }
    out
}

/// Tolerance for `sum_i phi_i = 1` after normalization.
pub fn sum_tolerance<T: Scalar>() -> f64 {
    (T::epsilon().as_f64() * 64.0).max(1e-12)
}

fn point_view<T: Scalar>(n: usize, functions: &[SparseFn<T>]) -> Vec<Vec<(usize, T)>> {
    let mut by_point = vec![Vec::new(); n];
    for (i, f) in functions.iter().enumerate() {
        for &(x, v) in f {
            by_point[x].push((i, v));
        }
    }
    by_point
}

/// Family of functions `phi_i: X -> [0, 1]` summing to one.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity<T> {
    space: Arc<Space>,
    functions: Vec<SparseFn<T>>,
    by_point: Vec<Vec<(usize, T)>>,
    multiplicity: usize,
    support_diameter: Distance,
    certificate: Option<VariationCertificate>,
}

/// Measured `(r, eps)`-variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationCertificate {
    pub r: f64,
    pub eps: f64,
    pub measured: f64,
}

impl<T: Scalar> PartitionOfUnity<T> {
    /// Validate and wrap an explicit family.
    pub fn from_functions(space: &Arc<Space>, functions: Vec<SparseFn<T>>) -> Result<Self> {
        let n = space.len();
        let mut functions: Vec<SparseFn<T>> = functions
            .into_iter()
            .map(|mut f| {
                f.sort_unstable_by_key(|e| e.0);
                f.retain(|e| e.1 != T::zero());
                f
            })
            .filter(|f| !f.is_empty())
            .collect();
        functions.shrink_to_fit();
        for f in &functions {
            for w in f.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidArgument(format!("point {} listed twice", w[0].0)));
                }
            }
            for &(x, v) in f {
                if x >= n {
                    return Err(Error::IndexMismatch { expected: n, got: x + 1 });
                }
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(Error::InvalidArgument(format!(
                        "partition value {v} at {} outside [0, 1]",
                        space.label(x)
                    )));
                }
            }
        }
        let by_point = point_view(n, &functions);
        let tol = sum_tolerance::<T>();
        for (x, vals) in by_point.iter().enumerate() {
            let s: f64 = vals.iter().map(|e| e.1.as_f64()).sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "partition sums to {s} at {}",
                    space.label(x)
                )));
            }
        }
        let multiplicity = by_point.iter().map(Vec::len).max().unwrap_or(0);
        let support_diameter = functions
            .iter()
            .map(|f| space.diameter(&SupportSet::from_indices(n, f.iter().map(|e| e.0))))
            .max()
            .unwrap_or_else(Distance::zero);
        Ok(Self {
            space: space.clone(),
            functions,
            by_point,
            multiplicity,
            support_diameter,
            certificate: None,
        })
    }

    /// The one-element partition `phi = 1`.
    pub fn constant(space: &Arc<Space>) -> Self {
        let f = (0..space.len()).map(|x| (x, T::one())).collect();
        Self::from_functions(space, vec![f]).expect("constant function is a partition")
    }

    /// Indicators of the disjoint cubes `lo + side * (k + [0, side))`.
    pub fn indicator_cubes(space: &Arc<Space>, side: i64) -> Result<Self> {
        let g = space.grid_window().ok_or(Error::NotAGrid)?;
        if side < 1 {
            return Err(Error::InvalidArgument("cube side must be positive".into()));
        }
        let mut cells: std::collections::BTreeMap<Vec<i64>, SparseFn<T>> = Default::default();
        for x in 0..space.len() {
            let key: Vec<i64> = g
                .coords(x)
                .iter()
                .zip(&g.lo)
                .map(|(c, l)| (c - l) / side)
                .collect();
            cells.entry(key).or_default().push((x, T::one()));
        }
        Self::from_functions(space, cells.into_values().collect())
    }

    /// Products of per-axis tents `max(0, 1 - |v - c|/width)` centred at
    /// `lo + j * width`.
    pub fn tents(space: &Arc<Space>, width: i64) -> Result<Self> {
        let g = space.grid_window().ok_or(Error::NotAGrid)?;
        if width < 1 {
            return Err(Error::InvalidArgument("tent width must be positive".into()));
        }
        let dim = g.dim();
        let counts: Vec<usize> = (0..dim)
            .map(|a| (g.extent(a) + width - 1) as usize / width as usize + 1)
            .collect();
        let total: usize = counts.iter().product();
        let mut functions: Vec<SparseFn<T>> = vec![Vec::new(); total];
        let w = T::of(width as f64);
        for x in 0..space.len() {
            let c = g.coords(x);
            // per axis: (tent index, value) pairs with positive value
            let per_axis: Vec<Vec<(usize, T)>> = (0..dim)
                .map(|a| {
                    let off = c[a] - g.lo[a];
                    let j = (off / width) as usize;
                    let rem = off % width;
                    if rem == 0 {
                        vec![(j, T::one())]
                    } else {
                        let right = T::of(rem as f64) / w;
                        vec![(j, T::one() - right), (j + 1, right)]
                    }
                })
                .collect();
            let mut stack: Vec<(usize, T)> = vec![(0, T::one())];
            for (a, choices) in per_axis.iter().enumerate() {
                let count = counts[a];
                stack = stack
                    .into_iter()
                    .flat_map(|(idx, v)| {
                        choices
                            .iter()
                            .map(move |&(j, t)| (idx * count + j, v * t))
                    })
                    .collect();
            }
            for (idx, v) in stack {
                functions[idx].push((x, v));
            }
        }
        Self::from_functions(space, functions)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn function(&self, i: usize) -> &SparseFn<T> {
        &self.functions[i]
    }

    pub fn value(&self, i: usize, x: usize) -> T {
        lookup(&self.functions[i], x)
    }

    /// `(i, phi_i(x))` for the functions not vanishing at `x`.
    pub fn at_point(&self, x: usize) -> &[(usize, T)] {
        &self.by_point[x]
    }

    pub fn support(&self, i: usize) -> SupportSet {
        SupportSet::from_indices(self.space.len(), self.functions[i].iter().map(|e| e.0))
    }

    /// Max over points of the number of functions not vanishing there.
    pub fn multiplicity(&self) -> usize {
        self.multiplicity
    }

    pub fn support_diameter(&self) -> Distance {
        self.support_diameter
    }

    pub fn certificate(&self) -> Option<VariationCertificate> {
        self.certificate
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_family_csv(&self.space, &self.functions, writer)
    }
}

pub(crate) fn write_family_csv<T: Scalar, W: Write>(
    space: &Space,
    functions: &[SparseFn<T>],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["index", "point", "value"]).map_err(io)?;
    for (i, f) in functions.iter().enumerate() {
        for &(x, v) in f {
            w.write_record([i.to_string(), space.label(x).to_string(), format!("{v}")])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Exact `max_{d(x,y) <= r} sum_i |phi_i(x) - phi_i(y)|`.
pub fn variation<T: Scalar>(pou: &PartitionOfUnity<T>, r: Distance) -> T {
    let space = &pou.space;
    (0..space.len())
        .into_par_iter()
        .map(|x| {
            let px = &pou.by_point[x];
            space
                .ball(x, r)
                .into_iter()
                .filter(|&y| y > x)
                .map(|y| sparse_l1_diff(px, &pou.by_point[y]))
                .fold(T::zero(), T::max)
        })
        .reduce(T::zero, T::max)
}

fn sparse_l1_diff<T: Scalar>(a: &[(usize, T)], b: &[(usize, T)]) -> T {
    let (mut i, mut j) = (0, 0);
    let mut s = T::zero();
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                s += (va - vb).abs();
                i += 1;
                j += 1;
            }
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                s += va.abs();
                i += 1;
            }
            (Some(&(_, va)), None) => {
                s += va.abs();
                i += 1;
            }
            (_, Some(&(_, vb))) => {
                s += vb.abs();
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    s
}

/// Partition with measured `(r, eps)`-variation.
///
/// Grid windows get product tents of width `ceil(2 r dim / eps)`; explicit
/// tables get normalized distance bumps whose radius doubles until the
/// measured variation fits. `eps >= 2` is met by the constant partition.
pub fn build_partition<T: Scalar>(
    space: &Arc<Space>,
    r: Distance,
    eps: f64,
) -> Result<PartitionOfUnity<T>> {
    if !(eps > 0.0) || eps.is_nan() {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    if r <= Distance::zero() {
        return Err(Error::InvalidArgument(format!("r = {r} must be positive")));
    }
    let rf = distance_to_f64(&r);
    let slack = sum_tolerance::<T>();
    let mut pou = if eps >= 2.0 {
        PartitionOfUnity::<T>::constant(space)
    } else {
        match space.kind() {
            SpaceKind::Grid(g) => {
                let width = (2.0 * rf * g.dim() as f64 / eps).ceil() as i64;
                for a in 0..g.dim() {
                    if g.extent(a) < width {
                        return Err(Error::WindowTooSmall {
                            axis: a,
                            have: g.extent(a),
                            need: width,
                        });
                    }
                }
                PartitionOfUnity::tents(space, width)?
            }
            SpaceKind::Table { .. } => table_partition(space, r, eps, slack)?,
        }
    };
    let measured = variation(&pou, r).as_f64();
    if measured > eps + slack {
        return Err(Error::Refused(format!(
            "constructed partition has variation {measured} > {eps} at r = {r}"
        )));
    }
    pou.certificate = Some(VariationCertificate {
        r: rf,
        eps,
        measured,
    });
    Ok(pou)
}

fn table_partition<T: Scalar>(
    space: &Arc<Space>,
    r: Distance,
    eps: f64,
    slack: f64,
) -> Result<PartitionOfUnity<T>> {
    let n = space.len();
    let diam = space.diameter(&SupportSet::full(n));
    let diam_f = distance_to_f64(&diam);
    let mut radius = 2.0 * distance_to_f64(&r) / eps;
    while radius <= 2.0 * diam_f {
        let bumps: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                (0..n)
                    .map(|y| (1.0 - distance_to_f64(&space.distance(c, y)) / radius).max(0.0))
                    .collect()
            })
            .collect();
        let totals: Vec<f64> = (0..n).map(|y| bumps.iter().map(|b| b[y]).sum()).collect();
        let functions: Vec<SparseFn<T>> = bumps
            .iter()
            .map(|b| {
                (0..n)
                    .filter(|&y| b[y] > 0.0)
                    .map(|y| (y, T::of(b[y] / totals[y])))
                    .collect()
            })
            .collect();
        let pou = PartitionOfUnity::from_functions(space, functions)?;
        if variation(&pou, r).as_f64() <= eps + slack {
            return Ok(pou);
        }
        radius *= 2.0;
    }
    Ok(PartitionOfUnity::constant(space))
}

/// `psi_i = 1` on `supp phi_i`, `L`-Lipschitz, supported in the
/// `halo`-neighbourhood of `supp phi_i`.
#[derive(Debug, Clone)]
pub struct DualFamily<T> {
    space: Arc<Space>,
    functions: Vec<SparseFn<T>>,
    by_point: Vec<Vec<(usize, T)>>,
    lipschitz: f64,
    halo: f64,
}

/// `psi_i(x) = max(0, 1 - L d(x, supp phi_i))`; `L = inf` gives indicators.
pub fn build_dual_family<T: Scalar>(pou: &PartitionOfUnity<T>, lipschitz: f64) -> Result<DualFamily<T>> {
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant {lipschitz} must be positive"
        )));
    }
    let space = &pou.space;
    let n = space.len();
    let halo = 1.0 / lipschitz;
    let functions: Vec<SparseFn<T>> = (0..pou.len())
        .into_par_iter()
        .map(|i| {
            space
                .distances_to_set(&pou.support(i), halo)
                .into_iter()
                .filter_map(|(x, d)| {
                    let v = if d.is_zero() {
                        1.0
                    } else {
                        1.0 - lipschitz * distance_to_f64(&d)
                    };
                    (v > 0.0).then(|| (x, T::of(v)))
                })
                .collect()
        })
        .collect();
    let by_point = point_view(n, &functions);
    Ok(DualFamily {
        space: space.clone(),
        functions,
        by_point,
        lipschitz,
        halo,
    })
}

impl<T: Scalar> DualFamily<T> {
    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn halo(&self) -> f64 {
        self.halo
    }

    pub fn function(&self, i: usize) -> &SparseFn<T> {
        &self.functions[i]
    }

    pub fn value(&self, i: usize, x: usize) -> T {
        lookup(&self.functions[i], x)
    }

    pub fn at_point(&self, x: usize) -> &[(usize, T)] {
        &self.by_point[x]
    }

    pub fn support(&self, i: usize) -> SupportSet {
        SupportSet::from_indices(self.space.len(), self.functions[i].iter().map(|e| e.0))
    }

    /// Largest `|psi_i(x) - psi_i(y)| / d(x, y)`. On grid windows unit
    /// steps suffice because both lattice metrics are geodesic on a box;
    /// tables are scanned over all pairs.
    pub fn max_lipschitz_ratio(&self) -> f64 {
        let n = self.space.len();
        let pairs: Vec<(usize, usize)> = match self.space.kind() {
            SpaceKind::Grid(_) => (0..n)
                .flat_map(|x| {
                    self.space
                        .ball(x, Distance::from_integer(1))
                        .into_iter()
                        .filter(move |&y| y > x)
                        .map(move |y| (x, y))
                })
                .collect(),
            SpaceKind::Table { .. } => (0..n)
                .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
                .collect(),
        };
        pairs
            .into_par_iter()
            .map(|(x, y)| {
                let d = distance_to_f64(&self.space.distance(x, y));
                let diff = sparse_l1_max(&self.by_point[x], &self.by_point[y]);
                diff / d
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_family_csv(&self.space, &self.functions, writer)
    }
}

fn sparse_l1_max<T: Scalar>(a: &[(usize, T)], b: &[(usize, T)]) -> f64 {
    let mut m: f64 = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let (d, di, dj) = match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => ((va - vb).abs(), 1, 1),
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => (va.abs(), 1, 0),
            (Some(&(_, va)), None) => (va.abs(), 1, 0),
            (_, Some(&(_, vb))) => (vb.abs(), 0, 1),
            (None, None) => unreachable!(),
        };
        m = m.max(d.as_f64());
        i += di;
        j += dj;
    }
    m
}

fn check_family<T: Scalar>(
    pou: &PartitionOfUnity<T>,
    dual: &DualFamily<T>,
    blocks: &[BandOperator<T>],
) -> Result<()> {
    if pou.len() != dual.len() || pou.len() != blocks.len() {
        return Err(Error::IndexSetMismatch(format!(
            "{} partition functions, {} dual functions, {} blocks",
            pou.len(),
            dual.len(),
            blocks.len()
        )));
    }
    if !same_space(&pou.space, &dual.space) || blocks.iter().any(|b| !same_space(b.space(), &pou.space)) {
        return Err(Error::SpaceMismatch);
    }
    Ok(())
}

fn active(len: usize, skip: Option<&BTreeSet<usize>>) -> Vec<usize> {
    (0..len).filter(|i| skip.map_or(true, |k| !k.contains(i))).collect()
}

fn sum_triplets<T: Scalar>(space: &Arc<Space>, parts: Vec<Vec<(usize, usize, T)>>) -> BandOperator<T> {
    BandOperator::from_triplets(space, parts.into_iter().flatten()).expect("indices come from the space")
}

/// `sum_i phi_i B_i psi_i` (`pinf`, `p0`) or `sum_i psi_i B_i phi_i` (`p1`)
/// over `i` not in `skip`.
pub fn assemble_blocks<T: Scalar>(
    pou: &PartitionOfUnity<T>,
    dual: &DualFamily<T>,
    blocks: &[BandOperator<T>],
    regime: NormRegime,
    skip: Option<&BTreeSet<usize>>,
) -> Result<BandOperator<T>> {
    check_family(pou, dual, blocks)?;
    let parts = active(pou.len(), skip)
        .into_par_iter()
        .map(|i| {
            let (left, right) = if regime.is_sup() {
                (&pou.functions[i], &dual.functions[i])
            } else {
                (&dual.functions[i], &pou.functions[i])
            };
            let mut out = Vec::new();
            for &(x, lv) in left {
                for &(y, b) in blocks[i].row(x) {
                    let rv = lookup(right, y);
                    if rv != T::zero() {
                        out.push((x, y, lv * b * rv));
                    }
                }
            }
            out
        })
        .collect();
    Ok(sum_triplets(&pou.space, parts))
}

/// `[f, A] = fA - Af`, entries `(f(x) - f(y)) A_xy`.
pub fn multiplication_commutator<T: Scalar>(f: &[T], a: &BandOperator<T>) -> BandOperator<T> {
    BandOperator::from_triplets(
        a.space(),
        a.entries()
            .filter(|&(x, y, _)| f[x] != f[y])
            .map(|(x, y, v)| (x, y, (f[x] - f[y]) * v)),
    )
    .expect("indices come from the space")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Right,
    Left,
}

/// Which hypothesis the caller asserts for a commutator assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    /// The partition has small `(r, eps)`-variation at `r = prop(A)`.
    Variation,
    /// The dual family is `L`-Lipschitz; `eps = r L`.
    Lipschitz,
}

/// The hypothesis each `(regime, side)` case relies on.
pub fn required_hypothesis(regime: NormRegime, side: Side) -> Hypothesis {
    match (regime.is_sup(), side) {
        (true, Side::Right) | (false, Side::Left) => Hypothesis::Lipschitz,
        _ => Hypothesis::Variation,
    }
}

#[derive(Debug, Clone)]
pub struct CommutatorAssembly<T> {
    pub operator: BandOperator<T>,
    pub hypothesis: Hypothesis,
    pub eps: f64,
    /// `N = geometry_profile(prop(A))`.
    pub profile: usize,
    /// `M = max ||B_i||` over assembled indices.
    pub block_bound: f64,
    pub a_norm: f64,
    /// `eps N M ||A||`.
    pub bound: f64,
}

/// Commutator sums controlled by the partition geometry:
///
/// | regime | right | left |
/// |---|---|---|
/// | `pinf`, `p0` | `sum phi B [psi, A]` | `sum [phi, A] B psi` |
/// | `p1` | `sum psi B [phi, A]` | `sum [psi, A] B phi` |
///
/// Norm at most `eps N M ||A||`.
#[allow(clippy::too_many_arguments)]
pub fn commutator_assembly<T: Scalar>(
    pou: &PartitionOfUnity<T>,
    dual: &DualFamily<T>,
    blocks: &[BandOperator<T>],
    a: &BandOperator<T>,
    regime: NormRegime,
    side: Side,
    skip: Option<&BTreeSet<usize>>,
    certificate: Option<Hypothesis>,
) -> Result<CommutatorAssembly<T>> {
    check_family(pou, dual, blocks)?;
    if !same_space(a.space(), &pou.space) {
        return Err(Error::SpaceMismatch);
    }
    let needed = required_hypothesis(regime, side);
    match certificate {
        None => {
            return Err(Error::MissingCertificate(format!(
                "{} regime, {side:?} side requires the {needed:?} hypothesis",
                regime.name()
            )))
        }
        Some(h) if h != needed => {
            return Err(Error::MissingCertificate(format!(
                "{h:?} supplied but {} regime, {side:?} side requires {needed:?}",
                regime.name()
            )))
        }
        Some(_) => {}
    }
    let r = a.propagation();
    let eps = if r.is_zero() {
        0.0
    } else {
        match needed {
            Hypothesis::Lipschitz => distance_to_f64(&r) * dual.lipschitz,
            Hypothesis::Variation => variation(pou, r).as_f64(),
        }
    };
    let n = pou.space.len();
    let idx = active(pou.len(), skip);
    // (f inside the commutator, outer weight, side of the outer weight)
    let sup = regime.is_sup();
    let parts: Vec<Vec<(usize, usize, T)>> = idx
        .par_iter()
        .map(|&i| {
            let phi = dense(&pou.functions[i], n);
            let psi = dense(&dual.functions[i], n);
            let (inner, outer) = match (sup, side) {
                (true, Side::Right) | (false, Side::Left) => (&psi, &phi),
                _ => (&phi, &psi),
            };
            let comm = multiplication_commutator(inner, a);
            let prod = match side {
                Side::Right => blocks[i]
                    .left_multiply_diag(outer)
                    .multiply(&comm)
                    .expect("same space"),
                Side::Left => comm
                    .multiply(&blocks[i].right_multiply_diag(outer))
                    .expect("same space"),
            };
            prod.entries().collect()
        })
        .collect();
    let operator = sum_triplets(&pou.space, parts);
    let profile = pou.space.geometry_profile(r);
    let block_bound = idx
        .iter()
        .map(|&i| blocks[i].op_norm(regime).as_f64())
        .fold(0.0, f64::max);
    let a_norm = a.op_norm(regime).as_f64();
    let bound = if eps == 0.0 {
        0.0
    } else {
        eps * profile as f64 * block_bound * a_norm
    };
    log::debug!(
        "commutator assembly ({}, {side:?}): eps = {eps} via {needed:?}, N = {profile}, M = {block_bound}, |A| = {a_norm}",
        regime.name()
    );
    Ok(CommutatorAssembly {
        operator,
        hypothesis: needed,
        eps,
        profile,
        block_bound,
        a_norm,
        bound,
    })
}

/// `M_n(A) = sum_i phi_i A psi_i^(n)` (`pinf`, `p0`) or
/// `sum_i psi_i^(n) A phi_i` (`p1`) with the `1/n`-Lipschitz dual family.
/// Entrywise `M_n(A)_xy = w(x, y) A_xy` with `0 <= w <= 1`, so `M_n` is
/// contractive and `|M_n(A) - A|` shrinks entrywise as `n` grows.
pub fn smooth<T: Scalar>(
    a: &BandOperator<T>,
    n: usize,
    regime: NormRegime,
    pou: &PartitionOfUnity<T>,
) -> Result<BandOperator<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("smoothing index n must be at least 1".into()));
    }
    if !same_space(a.space(), &pou.space) {
        return Err(Error::SpaceMismatch);
    }
    let dual = build_dual_family(pou, 1.0 / n as f64)?;
    smooth_with_dual(a, regime, pou, &dual)
}

pub fn smooth_with_dual<T: Scalar>(
    a: &BandOperator<T>,
    regime: NormRegime,
    pou: &PartitionOfUnity<T>,
    dual: &DualFamily<T>,
) -> Result<BandOperator<T>> {
    let triplets = a.entries().filter_map(|(x, y, v)| {
        let w = if regime.is_sup() {
            weight(&pou.by_point[x], &dual.by_point[y])
        } else {
            weight(&dual.by_point[x], &pou.by_point[y])
        };
        (w != T::zero()).then(|| (x, y, w * v))
    });
    BandOperator::from_triplets(a.space(), triplets)
}

fn weight<T: Scalar>(a: &[(usize, T)], b: &[(usize, T)]) -> T {
    let (mut i, mut j) = (0, 0);
    let mut s = T::zero();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    s
}

/// Width of the tents `build_partition` uses on a grid window.
pub fn tent_width(r: Distance, dim: usize, eps: f64) -> i64 {
    (2.0 * distance_to_f64(&r) * dim as f64 / eps)
        .ceil()
        .to_i64()
        .unwrap_or(i64::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{band_from_offsets, OffsetTerm};
    use crate::space::{make_grid_space, MetricKind};

    fn line(lo: i64, hi: i64) -> Arc<Space> {
        make_grid_space(1, &[lo], &[hi], MetricKind::L1).unwrap()
    }

    fn one() -> Distance {
        Distance::from_integer(1)
    }

    #[test]
    fn tent_partition_on_line() {
        let s = line(-100, 100);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.1).unwrap();
        let cert = pou.certificate().unwrap();
        assert!(cert.measured <= 0.1 + 1e-12);
        assert_eq!(tent_width(one(), 1, 0.1), 20);
        assert_eq!(pou.multiplicity(), 2);
        assert_eq!(pou.support_diameter(), Distance::from_integer(38));
        // brute-force pair scan
        let mut worst: f64 = 0.0;
        for x in 0..s.len() {
            for y in 0..s.len() {
                if s.distance(x, y) <= one() {
                    let d: f64 = (0..pou.len())
                        .map(|i| (pou.value(i, x) - pou.value(i, y)).abs())
                        .sum();
                    worst = worst.max(d);
                }
            }
        }
        assert!((worst - variation(&pou, one())).abs() < 1e-15);
        assert!(worst <= 2.0 / 20.0 + 1e-15);
    }

    #[test]
    fn eps_two_gives_constant_partition() {
        let s = line(-3, 3);
        let pou: PartitionOfUnity<f64> = build_partition(&s, Distance::from_integer(5), 2.0).unwrap();
        assert_eq!(pou.len(), 1);
        assert_eq!(variation(&pou, Distance::from_integer(5)), 0.0);
    }

    #[test]
    fn indicator_partition_has_variation_two() {
        let s = line(0, 20);
        let pou = PartitionOfUnity::<f64>::indicator_cubes(&s, 5).unwrap();
        assert_eq!(variation(&pou, one()), 2.0);
        assert_eq!(variation(&pou, Distance::from_integer(3)), 2.0);
    }

    #[test]
    fn window_too_small_names_minimum() {
        let s = line(0, 10);
        match build_partition::<f64>(&s, one(), 0.1) {
            Err(Error::WindowTooSmall { need, have, .. }) => {
                assert_eq!(need, 20);
                assert_eq!(have, 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_dimensional_tents() {
        for metric in [MetricKind::L1, MetricKind::Linf] {
            let s = make_grid_space(2, &[-12, -12], &[12, 12], metric).unwrap();
            let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
            assert!(variation(&pou, one()) <= 0.5 + 1e-12);
            for x in 0..s.len() {
                let t: f64 = pou.at_point(x).iter().map(|e| e.1).sum();
                assert!((t - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn table_partition_is_certified() {
        let labels: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let d: Vec<Vec<Distance>> = (0..6)
            .map(|i: i64| (0..6).map(|j: i64| Distance::from_integer((i - j).abs())).collect())
            .collect();
        let s = Space::from_table(labels, d).unwrap();
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.9).unwrap();
        assert!(variation(&pou, one()) <= 0.9 + 1e-12);
    }

    #[test]
    fn dual_family_examples() {
        let s = line(-30, 30);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
        let dual = build_dual_family(&pou, 0.25).unwrap();
        for i in 0..pou.len() {
            for &(x, _) in pou.function(i) {
                assert_eq!(dual.value(i, x), 1.0);
            }
            let supp = pou.support(i);
            for x in 0..s.len() {
                let d = supp.iter().map(|y| s.distance(x, y)).min().unwrap();
                if distance_to_f64(&d) >= 4.0 {
                    assert_eq!(dual.value(i, x), 0.0);
                }
            }
        }
        // exhaustive Lipschitz audit
        let mut worst: f64 = 0.0;
        for i in 0..dual.len() {
            for x in 0..s.len() {
                for y in 0..x {
                    let r = (dual.value(i, x) - dual.value(i, y)).abs()
                        / distance_to_f64(&s.distance(x, y));
                    worst = worst.max(r);
                }
            }
        }
        assert!(worst <= 0.25 + 1e-12);
        assert!((dual.max_lipschitz_ratio() - worst).abs() < 1e-12);
        let ind = build_dual_family(&pou, f64::INFINITY).unwrap();
        for i in 0..pou.len() {
            assert_eq!(ind.support(i), pou.support(i));
        }
    }

    fn tridiagonal(s: &Arc<Space>) -> BandOperator<f64> {
        band_from_offsets(
            s,
            vec![
                OffsetTerm::parse(vec![0], "2").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
                OffsetTerm::parse(vec![-1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator
    }

    #[test]
    fn identity_blocks_assemble_to_identity() {
        let s = line(-20, 20);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
        let dual = build_dual_family(&pou, 0.5).unwrap();
        let blocks = vec![BandOperator::identity(&s); pou.len()];
        let id = BandOperator::identity(&s);
        let out = assemble_blocks(&pou, &dual, &blocks, NormRegime::Pinf, None).unwrap();
        assert!(out.max_abs_diff(&id).unwrap() < 1e-15);
        let out = assemble_blocks(&pou, &dual, &blocks, NormRegime::P1, None).unwrap();
        assert!(out.max_abs_diff(&id).unwrap() < 1e-15);
        let zeros = vec![BandOperator::zero(&s); pou.len()];
        assert!(assemble_blocks(&pou, &dual, &zeros, NormRegime::Pinf, None).unwrap().is_zero());
        assert!(matches!(
            assemble_blocks(&pou, &dual, &blocks[1..], NormRegime::Pinf, None),
            Err(Error::IndexSetMismatch(_))
        ));
    }

    #[test]
    fn commutator_assembly_examples() {
        let s = line(-40, 40);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
        let dual = build_dual_family(&pou, 1.0 / 8.0).unwrap();
        let blocks = vec![BandOperator::identity(&s); pou.len()];
        let diag = BandOperator::diagonal(&s, &vec![1.5; s.len()]);
        let c = commutator_assembly(
            &pou,
            &dual,
            &blocks,
            &diag,
            NormRegime::Pinf,
            Side::Right,
            None,
            Some(Hypothesis::Lipschitz),
        )
        .unwrap();
        assert!(c.operator.is_zero());

        let shift = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        let c = commutator_assembly(
            &pou,
            &dual,
            &blocks,
            &shift,
            NormRegime::Pinf,
            Side::Right,
            None,
            Some(Hypothesis::Lipschitz),
        )
        .unwrap();
        assert_eq!(c.eps, 1.0 / 8.0);
        assert_eq!(c.profile, 3);
        assert!(c.operator.op_norm(NormRegime::Pinf) <= c.bound);

        let all: BTreeSet<usize> = (0..pou.len()).collect();
        let c = commutator_assembly(
            &pou,
            &dual,
            &blocks,
            &shift,
            NormRegime::Pinf,
            Side::Right,
            Some(&all),
            Some(Hypothesis::Lipschitz),
        )
        .unwrap();
        assert!(c.operator.is_zero());

        for (regime, side) in [
            (NormRegime::Pinf, Side::Right),
            (NormRegime::Pinf, Side::Left),
            (NormRegime::P1, Side::Right),
            (NormRegime::P1, Side::Left),
        ] {
            assert!(matches!(
                commutator_assembly(&pou, &dual, &blocks, &shift, regime, side, None, None),
                Err(Error::MissingCertificate(_))
            ));
            let wrong = match required_hypothesis(regime, side) {
                Hypothesis::Lipschitz => Hypothesis::Variation,
                Hypothesis::Variation => Hypothesis::Lipschitz,
            };
            assert!(matches!(
                commutator_assembly(&pou, &dual, &blocks, &shift, regime, side, None, Some(wrong)),
                Err(Error::MissingCertificate(_))
            ));
        }
    }

    #[test]
    fn right_commutator_matches_definition() {
        let s = line(-15, 15);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
        let dual = build_dual_family(&pou, 0.25).unwrap();
        let a = tridiagonal(&s);
        let blocks: Vec<BandOperator<f64>> = (0..pou.len())
            .map(|i| BandOperator::identity(&s).scale(1.0 + i as f64))
            .collect();
        let c = commutator_assembly(
            &pou,
            &dual,
            &blocks,
            &a,
            NormRegime::Pinf,
            Side::Right,
            None,
            Some(Hypothesis::Lipschitz),
        )
        .unwrap();
        let n = s.len();
        let mut expect = BandOperator::zero(&s);
        for i in 0..pou.len() {
            let phi = dense(pou.function(i), n);
            let psi = dense(dual.function(i), n);
            let comm = BandOperator::diagonal(&s, &psi)
                .multiply(&a)
                .unwrap()
                .sub(&a.multiply(&BandOperator::diagonal(&s, &psi)).unwrap())
                .unwrap();
            let term = BandOperator::diagonal(&s, &phi)
                .multiply(&blocks[i])
                .unwrap()
                .multiply(&comm)
                .unwrap();
            expect = expect.add(&term).unwrap();
        }
        assert!(c.operator.max_abs_diff(&expect).unwrap() < 1e-13);
    }

    #[test]
    fn smoothing_examples() {
        let s = line(-30, 30);
        let pou: PartitionOfUnity<f64> = build_partition(&s, one(), 0.5).unwrap();
        let values: Vec<f64> = (0..s.len()).map(|i| 1.0 + i as f64 / 7.0).collect();
        let d = BandOperator::diagonal(&s, &values);
        for n in [1, 3, 10] {
            assert_eq!(smooth(&d, n, NormRegime::Pinf, &pou).unwrap(), d);
        }
        let a = tridiagonal(&s);
        let norm = a.op_norm(NormRegime::Pinf);
        let mut prev = f64::INFINITY;
        for n in [1usize, 2, 4, 8, 16, 32, 64] {
            for regime in [NormRegime::Pinf, NormRegime::P1] {
                let m = smooth(&a, n, regime, &pou).unwrap();
                assert!(m.op_norm(regime) <= a.op_norm(regime) + 1e-15);
                let diff = m.sub(&a).unwrap().op_norm(regime);
                assert!(diff <= 1.0 * 3.0 * norm / n as f64 + 1e-12);
                if regime == NormRegime::Pinf {
                    assert!(diff <= prev + 1e-15);
                    prev = diff;
                }
            }
        }
    }

    #[test]
    fn partition_csv_lists_every_value() {
        let s = line(0, 4);
        let pou = PartitionOfUnity::<f64>::indicator_cubes(&s, 2).unwrap();
        let mut buf = Vec::new();
        pou.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.starts_with("index,point,value\n0,0,1\n"));
    }
}
