//! Finite, strongly discrete metric spaces with bounded geometry.
//!
//! Two kinds are supported: explicit distance tables, validated on
//! construction, and finite windows of the integer lattice `Z^dim` under the
//! l1 or l-infinity metric. Grid windows remember their embedding into the
//! ambient lattice so that translation by a lattice vector makes sense.
//!
//! All spaces are immutable once built and shared through `Arc`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;
use std::sync::{Arc, Mutex};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{parse_distance, Distance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    L1,
    Linf,
}

impl MetricKind {
    pub fn lattice_distance(self, a: &[i64], b: &[i64]) -> i64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            MetricKind::L1 => diffs.sum(),
            MetricKind::Linf => diffs.max().unwrap_or(0),
        }
    }

    pub fn norm(self, v: &[i64]) -> i64 {
        let zero = vec![0; v.len()];
        self.lattice_distance(v, &zero)
    }
}

/// A box `lo <= x <= hi` in `Z^dim`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridWindow {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub metric: MetricKind,
    strides: Vec<usize>,
}

impl GridWindow {
    fn new(lo: Vec<i64>, hi: Vec<i64>, metric: MetricKind) -> Self {
        let dim = lo.len();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * (hi[a + 1] - lo[a + 1] + 1) as usize;
        }
        Self {
            lo,
            hi,
            metric,
            strides,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn len(&self) -> usize {
        (0..self.dim())
            .map(|a| (self.extent(a) + 1) as usize)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(
            x.iter()
                .zip(&self.lo)
                .zip(&self.strides)
                .map(|((v, l), s)| (v - l) as usize * s)
                .sum(),
        )
    }

    pub fn coords(&self, mut index: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim()];
        for a in 0..self.dim() {
            out[a] = self.lo[a] + (index / self.strides[a]) as i64;
            index %= self.strides[a];
        }
        out
    }

    /// The centered window `[-radius, radius]^dim` with the same metric.
    pub fn centered(&self, radius: &[i64]) -> GridWindow {
        GridWindow::new(
            radius.iter().map(|r| -r).collect(),
            radius.to_vec(),
            self.metric,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    Table { distances: Vec<Distance> },
    Grid(GridWindow),
}

pub struct Space {
    labels: Vec<String>,
    lookup: HashMap<String, usize>,
    kind: SpaceKind,
    profile_cache: Mutex<BTreeMap<Distance, usize>>,
}

impl fmt::Debug for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SpaceKind::Grid(g) => write!(f, "Space::Grid({:?}..={:?}, {:?})", g.lo, g.hi, g.metric),
            SpaceKind::Table { .. } => write!(f, "Space::Table({} points)", self.len()),
        }
    }
}

impl PartialEq for Space {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.kind == other.kind
    }
}

/// `make_grid_space`: the window `lo <= x <= hi` of `Z^dim`.
pub fn make_grid_space(
    dim: usize,
    lo: &[i64],
    hi: &[i64],
    metric: MetricKind,
) -> Result<Arc<Space>> {
    Space::grid(dim, lo, hi, metric)
}

impl Space {
    pub fn grid(dim: usize, lo: &[i64], hi: &[i64], metric: MetricKind) -> Result<Arc<Space>> {
        if dim == 0 || lo.len() != dim || hi.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "dim {dim}, lo has {} entries, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Err(Error::EmptyWindow {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            });
        }
        let window = GridWindow::new(lo.to_vec(), hi.to_vec(), metric);
        let labels: Vec<String> = (0..window.len())
            .map(|i| coords_label(&window.coords(i)))
            .collect();
        Ok(Arc::new(Self::assemble(labels, SpaceKind::Grid(window))))
    }

    pub fn from_window(window: &GridWindow) -> Result<Arc<Space>> {
        Self::grid(window.dim(), &window.lo, &window.hi, window.metric)
    }

    /// Explicit space from labels and a full symmetric distance matrix.
    /// Every metric axiom is checked.
    pub fn from_table(labels: Vec<String>, distances: Vec<Vec<Distance>>) -> Result<Arc<Space>> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::MetricAxiom("space has no points".into()));
        }
        if distances.len() != n || distances.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "distance table must be {n} x {n}"
            )));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.clone()) {
                return Err(Error::MetricAxiom(format!("duplicate point `{l}`")));
            }
        }
        let flat: Vec<Distance> = distances.into_iter().flatten().collect();
        let space = Self::assemble(labels, SpaceKind::Table { distances: flat });
        space.check_metric_axioms()?;
        Ok(Arc::new(space))
    }

    /// Read a `point-id,point-id,distance` CSV. Each unordered pair must be
    /// given at least once; repeated pairs must agree. A header line is
    /// skipped when its distance column does not parse.
    pub fn from_distance_csv<R: Read>(reader: R) -> Result<Arc<Space>> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut order: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut pairs: Vec<(usize, usize, Distance, usize)> = Vec::new();
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
            let d = match parse_distance(&rec[2]) {
                Some(d) => d,
                None if line == 0 => continue,
                None => {
                    return Err(Error::Csv {
                        line: line + 1,
                        message: format!("bad distance `{}`", &rec[2]),
                    })
                }
            };
            let mut id = |s: &str| -> usize {
                *index.entry(s.to_string()).or_insert_with(|| {
                    order.push(s.to_string());
                    order.len() - 1
                })
            };
            let a = id(&rec[0]);
            let b = id(&rec[1]);
            pairs.push((a, b, d, line + 1));
        }
        let n = order.len();
        let mut table: Vec<Vec<Option<Distance>>> = vec![vec![None; n]; n];
        for i in 0..n {
            table[i][i] = Some(Distance::zero());
        }
        for (a, b, d, line) in pairs {
            for (x, y) in [(a, b), (b, a)] {
                match table[x][y] {
                    Some(prev) if prev != d && !(x == y && d.is_zero()) => {
                        return Err(Error::Csv {
                            line,
                            message: format!(
                                "conflicting distance for ({}, {})",
                                order[x], order[y]
                            ),
                        })
                    }
                    _ => table[x][y] = Some(d),
                }
            }
        }
        let mut full = Vec::with_capacity(n);
        for (i, row) in table.into_iter().enumerate() {
            let mut out = Vec::with_capacity(n);
            for (j, d) in row.into_iter().enumerate() {
                out.push(d.ok_or_else(|| {
                    Error::MetricAxiom(format!("missing distance ({}, {})", order[i], order[j]))
                })?);
            }
            full.push(out);
        }
        Self::from_table(order, full)
    }

    fn assemble(labels: Vec<String>, kind: SpaceKind) -> Self {
        let lookup = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self {
            labels,
            lookup,
            kind,
            profile_cache: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn grid_window(&self) -> Option<&GridWindow> {
        match &self.kind {
            SpaceKind::Grid(g) => Some(g),
            SpaceKind::Table { .. } => None,
        }
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.lookup
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownPoint(label.to_string()))
    }

    pub fn coords(&self, i: usize) -> Option<Vec<i64>> {
        self.grid_window().map(|g| g.coords(i))
    }

    pub fn index_of_coords(&self, x: &[i64]) -> Option<usize> {
        self.grid_window().and_then(|g| g.index_of(x))
    }

    pub fn distance(&self, i: usize, j: usize) -> Distance {
        match &self.kind {
            SpaceKind::Table { distances } => distances[i * self.len() + j],
            SpaceKind::Grid(g) => {
                Distance::from_integer(g.metric.lattice_distance(&g.coords(i), &g.coords(j)))
            }
        }
    }

    /// Closed ball `B(x, r)`, sorted by index.
    pub fn ball(&self, x: usize, r: Distance) -> Vec<usize> {
        if r.is_negative() {
            return Vec::new();
        }
        match &self.kind {
            SpaceKind::Table { .. } => (0..self.len())
                .filter(|&y| self.distance(x, y) <= r)
                .collect(),
            SpaceKind::Grid(g) => {
                let reach = r.floor().to_integer();
                let center = g.coords(x);
                let lo: Vec<i64> = center
                    .iter()
                    .zip(&g.lo)
                    .map(|(c, l)| (c - reach).max(*l))
                    .collect();
                let hi: Vec<i64> = center
                    .iter()
                    .zip(&g.hi)
                    .map(|(c, h)| (c + reach).min(*h))
                    .collect();
                let mut out = Vec::new();
                for_each_in_box(&lo, &hi, |p| {
                    if g.metric.lattice_distance(p, &center) <= reach {
                        out.push(g.index_of(p).expect("box lies in window"));
                    }
                });
                out.sort_unstable();
                out
            }
        }
    }

    /// `geometry_profile`: `max_x #B(x, r)`, cached per radius.
    pub fn geometry_profile(&self, r: Distance) -> usize {
        if r.is_negative() {
            return 0;
        }
        if let Some(&n) = self.profile_cache.lock().expect("cache lock").get(&r) {
            return n;
        }
        let n = match &self.kind {
            SpaceKind::Grid(g) => grid_profile(g, r),
            SpaceKind::Table { .. } => (0..self.len())
                .map(|x| self.ball(x, r).len())
                .max()
                .unwrap_or(0),
        };
        self.profile_cache
            .lock()
            .expect("cache lock")
            .insert(r, n);
        n
    }

    pub fn diameter(&self, set: &SupportSet) -> Distance {
        let pts: Vec<usize> = set.iter().collect();
        if let (Some(g), true) = (self.grid_window(), pts.len() > 64) {
            // l1 and l-infinity diameters only depend on per-axis (or
            // per-diagonal) extremes.
            let coords: Vec<Vec<i64>> = pts.iter().map(|&i| g.coords(i)).collect();
            let d = match g.metric {
                MetricKind::Linf => (0..g.dim())
                    .map(|a| {
                        let (mn, mx) = min_max(coords.iter().map(|c| c[a]));
                        mx - mn
                    })
                    .max()
                    .unwrap_or(0),
                MetricKind::L1 => {
                    let dim = g.dim();
                    (0..(1usize << dim))
                        .map(|signs| {
                            let (mn, mx) = min_max(coords.iter().map(|c| {
                                (0..dim)
                                    .map(|a| if signs >> a & 1 == 1 { -c[a] } else { c[a] })
                                    .sum::<i64>()
                            }));
                            mx - mn
                        })
                        .max()
                        .unwrap_or(0)
                }
            };
            return Distance::from_integer(d);
        }
        let mut best = Distance::zero();
        for (k, &a) in pts.iter().enumerate() {
            for &b in &pts[k + 1..] {
                best = best.max(self.distance(a, b));
            }
        }
        best
    }

    /// `(x, d(x, set))` for every `x` in `set` or with `d(x, set) < limit`,
    /// sorted by index. Grid windows use breadth-first search over unit
    /// steps, which is exact for both lattice metrics on a box.
    pub fn distances_to_set(&self, set: &SupportSet, limit: f64) -> Vec<(usize, Distance)> {
        match &self.kind {
            SpaceKind::Table { .. } => {
                let pts: Vec<usize> = set.iter().collect();
                (0..self.len())
                    .filter_map(|x| {
                        let d = pts.iter().map(|&s| self.distance(x, s)).min()?;
                        let keep = d.is_zero() || (*d.numer() as f64) < limit * (*d.denom() as f64);
                        keep.then_some((x, d))
                    })
                    .collect()
            }
            SpaceKind::Grid(g) => {
                let steps: Vec<Vec<i64>> = {
                    let dim = g.dim();
                    let mut out = Vec::new();
                    for_each_in_box(&vec![-1; dim], &vec![1; dim], |p| {
                        let n = MetricKind::L1.norm(p);
                        let ok = match g.metric {
                            MetricKind::L1 => n == 1,
                            MetricKind::Linf => n > 0,
                        };
                        if ok {
                            out.push(p.to_vec());
                        }
                    });
                    out
                };
                let mut dist: Vec<i64> = vec![-1; self.len()];
                let mut frontier: Vec<usize> = set.iter().collect();
                for &s in &frontier {
                    dist[s] = 0;
                }
                let mut depth = 0i64;
                while !frontier.is_empty() && ((depth + 1) as f64) < limit {
                    depth += 1;
                    let mut next = Vec::new();
                    for &x in &frontier {
                        let c = g.coords(x);
                        for s in &steps {
                            let y: Vec<i64> = c.iter().zip(s).map(|(a, b)| a + b).collect();
                            if let Some(j) = g.index_of(&y) {
                                if dist[j] < 0 {
                                    dist[j] = depth;
                                    next.push(j);
                                }
                            }
                        }
                    }
                    frontier = next;
                }
                dist.iter()
                    .enumerate()
                    .filter(|(_, &d)| d >= 0)
                    .map(|(x, &d)| (x, Distance::from_integer(d)))
                    .collect()
            }
        }
    }

    /// Points within distance `r` of `set`.
    pub fn neighborhood(&self, set: &SupportSet, r: Distance) -> SupportSet {
        let mut out = SupportSet::empty(self.len());
        for x in set.iter() {
            for y in self.ball(x, r) {
                out.insert(y);
            }
        }
        out
    }

    /// Set of distinct attained distances (finite, so the space is strongly
    /// discrete).
    pub fn attained_distances(&self) -> BTreeSet<Distance> {
        let mut out = BTreeSet::new();
        for i in 0..self.len() {
            for j in 0..self.len() {
                out.insert(self.distance(i, j));
            }
        }
        out
    }

    /// Check identity, symmetry, non-negativity and the triangle inequality
    /// over every triple.
    pub fn check_metric_axioms(&self) -> Result<()> {
        let n = self.len();
        let d: Vec<Distance> = (0..n * n).map(|k| self.distance(k / n, k % n)).collect();
        for i in 0..n {
            for j in 0..n {
                let dij = d[i * n + j];
                if dij.is_negative() {
                    return Err(Error::MetricAxiom(format!(
                        "negative distance between {} and {}",
                        self.labels[i], self.labels[j]
                    )));
                }
                if (i == j) != dij.is_zero() {
                    return Err(Error::MetricAxiom(format!(
                        "d({}, {}) = {} violates identity of indiscernibles",
                        self.labels[i], self.labels[j], dij
                    )));
                }
                if dij != d[j * n + i] {
                    return Err(Error::MetricAxiom(format!(
                        "asymmetric distance between {} and {}",
                        self.labels[i], self.labels[j]
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if d[i * n + k] > d[i * n + j] + d[j * n + k] {
                        return Err(Error::MetricAxiom(format!(
                            "triangle inequality fails for ({}, {}, {})",
                            self.labels[i], self.labels[j], self.labels[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn min_max(it: impl Iterator<Item = i64>) -> (i64, i64) {
    it.fold((i64::MAX, i64::MIN), |(a, b), v| (a.min(v), b.max(v)))
}

pub(crate) fn coords_label(x: &[i64]) -> String {
    x.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(":")
}

/// Visit every lattice point of the box `lo..=hi` in row-major order.
pub(crate) fn for_each_in_box(lo: &[i64], hi: &[i64], mut f: impl FnMut(&[i64])) {
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return;
    }
    let mut p = lo.to_vec();
    loop {
        f(&p);
        let mut axis = p.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if p[axis] < hi[axis] {
                p[axis] += 1;
                for q in axis + 1..p.len() {
                    p[q] = lo[q];
                }
                break;
            }
        }
    }
}

fn grid_profile(g: &GridWindow, r: Distance) -> usize {
    // Ball cardinality at a point only depends on its clearance to the
    // window faces per axis, so scanning the clearance classes suffices.
    let reach = r.floor().to_integer();
    let dim = g.dim();
    let offsets = {
        let lo = vec![-reach; dim];
        let hi = vec![reach; dim];
        let mut v = Vec::new();
        for_each_in_box(&lo, &hi, |p| {
            if g.metric.norm(p) <= reach {
                v.push(p.to_vec());
            }
        });
        v
    };
    let candidates: Vec<Vec<i64>> = (0..dim)
        .map(|a| {
            let lo = g.lo[a];
            let hi = g.hi[a];
            let mut c: BTreeSet<i64> = BTreeSet::new();
            for t in 0..=reach.min(hi - lo) {
                c.insert(lo + t);
                c.insert(hi - t);
            }
            c.insert(lo + (hi - lo) / 2);
            c.into_iter().collect()
        })
        .collect();
    let mut best = 0usize;
    let mut idx = vec![0usize; dim];
    loop {
        let center: Vec<i64> = (0..dim).map(|a| candidates[a][idx[a]]).collect();
        let count = offsets
            .iter()
            .filter(|o| {
                o.iter()
                    .zip(&center)
                    .enumerate()
                    .all(|(a, (d, c))| g.lo[a] <= c + d && c + d <= g.hi[a])
            })
            .count();
        best = best.max(count);
        let mut axis = dim;
        loop {
            if axis == 0 {
                return best;
            }
            axis -= 1;
            if idx[axis] + 1 < candidates[axis].len() {
                idx[axis] += 1;
                for q in axis + 1..dim {
                    idx[q] = 0;
                }
                break;
            }
        }
    }
}

/// A subset `F` of a space, stored as a bit mask over point indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupportSet {
    bits: Vec<bool>,
}

impl SupportSet {
    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_indices(n: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n);
        for i in idx {
            s.insert(i);
        }
        s
    }

    /// Lattice points of the box `lo..=hi` that lie in the space.
    pub fn grid_box(space: &Space, lo: &[i64], hi: &[i64]) -> Result<Self> {
        let g = space.grid_window().ok_or(Error::NotAGrid)?;
        if lo.len() != g.dim() || hi.len() != g.dim() {
            return Err(Error::DimensionMismatch("box corners".into()));
        }
        let mut s = Self::empty(space.len());
        for_each_in_box(lo, hi, |p| {
            if let Some(i) = g.index_of(p) {
                s.insert(i);
            }
        });
        Ok(s)
    }

    pub fn universe_len(&self) -> usize {
        self.bits.len()
    }

    pub fn insert(&mut self, i: usize) {
        self.bits[i] = true;
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits.get(i).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: i64) -> Distance {
        Distance::from_integer(n)
    }

    #[test]
    fn path_window_has_five_points() {
        let s = make_grid_space(1, &[-2], &[2], MetricKind::L1).unwrap();
        assert_eq!(s.len(), 5);
        let a = s.index_of_coords(&[-2]).unwrap();
        let b = s.index_of_coords(&[2]).unwrap();
        assert_eq!(s.distance(a, b), d(4));
        assert_eq!(s.label(a), "-2");
    }

    #[test]
    fn unit_square_linf_distances() {
        let s = make_grid_space(2, &[0, 0], &[1, 1], MetricKind::Linf).unwrap();
        assert_eq!(s.len(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0 } else { 1 };
                assert_eq!(s.distance(i, j), d(expect));
            }
        }
    }

    #[test]
    fn singleton_window() {
        let s = make_grid_space(1, &[0], &[0], MetricKind::L1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.geometry_profile(d(5)), 1);
    }

    #[test]
    fn rejects_bad_windows() {
        assert!(matches!(
            make_grid_space(2, &[0], &[1, 1], MetricKind::L1),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            make_grid_space(1, &[3], &[1], MetricKind::L1),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn geometry_profile_examples() {
        let s = make_grid_space(1, &[-10], &[10], MetricKind::L1).unwrap();
        assert_eq!(s.geometry_profile(d(1)), 3);
        assert_eq!(s.geometry_profile(d(0)), 1);
        let s2 = make_grid_space(2, &[-5, -5], &[5, 5], MetricKind::L1).unwrap();
        // enumerate the ball at the origin directly
        let origin = s2.index_of_coords(&[0, 0]).unwrap();
        let brute = (0..s2.len())
            .filter(|&y| s2.distance(origin, y) <= d(1))
            .count();
        assert_eq!(brute, 5);
        assert_eq!(s2.geometry_profile(d(1)), 5);
    }

    #[test]
    fn grid_profile_matches_brute_force() {
        for (lo, hi, m) in [
            (vec![-3, 0], vec![2, 1], MetricKind::L1),
            (vec![0, 0], vec![4, 6], MetricKind::Linf),
            (vec![-1], vec![1], MetricKind::L1),
        ] {
            let s = make_grid_space(lo.len(), &lo, &hi, m).unwrap();
            for r in 0..6 {
                let brute = (0..s.len())
                    .map(|x| (0..s.len()).filter(|&y| s.distance(x, y) <= d(r)).count())
                    .max()
                    .unwrap();
                assert_eq!(s.geometry_profile(d(r)), brute, "{lo:?} {hi:?} r={r}");
                assert_eq!(s.ball(0, d(r)).len(), (0..s.len()).filter(|&y| s.distance(0, y) <= d(r)).count());
            }
        }
    }

    #[test]
    fn fractional_radius_floors_on_grid() {
        let s = make_grid_space(1, &[-10], &[10], MetricKind::L1).unwrap();
        assert_eq!(s.geometry_profile(Distance::new(3, 2)), 3);
    }

    #[test]
    fn table_space_validates_axioms() {
        let labels = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let ok = vec![
            vec![d(0), d(1), d(2)],
            vec![d(1), d(0), d(1)],
            vec![d(2), d(1), d(0)],
        ];
        let s = Space::from_table(labels.clone(), ok).unwrap();
        assert_eq!(s.geometry_profile(d(1)), 3);
        let bad = vec![
            vec![d(0), d(1), d(5)],
            vec![d(1), d(0), d(1)],
            vec![d(5), d(1), d(0)],
        ];
        assert!(matches!(
            Space::from_table(labels, bad),
            Err(Error::MetricAxiom(_))
        ));
    }

    #[test]
    fn csv_table_roundtrip() {
        let text = "p,q,distance\na,b,1\nb,c,1/2\na,c,3/2\n";
        let s = Space::from_distance_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        let a = s.index_of("a").unwrap();
        let c = s.index_of("c").unwrap();
        assert_eq!(s.distance(c, a), Distance::new(3, 2));
        assert!(Space::from_distance_csv("a,b,1\n".as_bytes()).is_ok());
        assert!(Space::from_distance_csv("a,b,1\nb,c,1\n".as_bytes()).is_err());
    }

    #[test]
    fn diameter_fast_path_agrees() {
        let s = make_grid_space(2, &[0, 0], &[9, 9], MetricKind::L1).unwrap();
        let set = SupportSet::grid_box(&s, &[1, 2], &[8, 9]).unwrap();
        assert_eq!(s.diameter(&set), d(14));
        let s = make_grid_space(2, &[0, 0], &[9, 9], MetricKind::Linf).unwrap();
        let set = SupportSet::grid_box(&s, &[1, 2], &[8, 9]).unwrap();
        assert_eq!(s.diameter(&set), d(7));
    }
}
