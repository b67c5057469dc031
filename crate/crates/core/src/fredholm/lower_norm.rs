//! Lower norms `nu(A|F) = inf { |Av| : supp v in F, |v| = 1 }`.
//!
//! `pinf`/`p0`: the unit sphere of `l^inf(F)` is the union of the facets
//! `v_j = +-1`; by symmetry `v_j = 1` suffices, and each facet is one LP in
//! `(v, t)` minimising `t` subject to `|(Av)_x| <= t`.
//!
//! `p1`: the unit sphere of `l^1(F)` splits into orthants; on each orthant
//! `|v|_1` is linear, so each orthant is one LP. Exact only for small `|F|`.

use std::collections::BTreeSet;

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{BandOperator, NormRegime};
use crate::scalar::{distance_to_f64, Scalar};
use crate::space::SupportSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerNormMethod {
    /// Exact LP over facets or orthants.
    LpExact,
    /// `1 / |A_FF^-1|` when `A` maps `l(F)` into `l(F)` and `A_FF` is invertible.
    InverseNorm,
    /// Random search: an upper estimate only.
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerNormResult {
    pub value: f64,
    pub regime: NormRegime,
    pub method: LowerNormMethod,
    /// Support constraint `s` for restricted lower norms.
    pub support_constraint: Option<f64>,
    /// Unit vector (length = space size) attaining `value`.
    pub certificate: Vec<f64>,
    /// The support set the minimum was found on.
    pub support: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LowerNormOptions {
    /// Use the inverse-norm formula when it applies.
    pub inverse_shortcut: bool,
    /// Largest `|F|` solved exactly in `p1` (there are `2^(|F|-1)` orthants).
    pub p1_exact_cap: usize,
    /// Fall back to random search when `p1` exceeds the cap.
    pub allow_sampling: bool,
    pub samples: usize,
    pub seed: u64,
}

impl Default for LowerNormOptions {
    fn default() -> Self {
        LowerNormOptions {
            inverse_shortcut: true,
            p1_exact_cap: 16,
            allow_sampling: true,
            samples: 20_000,
            seed: 0,
        }
    }
}

pub fn lower_norm<T: Scalar>(a: &BandOperator<T>, f: &SupportSet, regime: NormRegime) -> Result<LowerNormResult> {
    lower_norm_with(a, f, regime, &LowerNormOptions::default())
}

/// Columns of `A` restricted to `F` in sparse form, and the rows they hit.
struct Restriction {
    cols: Vec<usize>,
    /// `col_entries[j]` = nonzeros `(row position, value)` of column `cols[j]`.
    col_entries: Vec<Vec<(usize, f64)>>,
    rows: Vec<usize>,
}

fn restrict<T: Scalar>(a: &BandOperator<T>, f: &SupportSet) -> Restriction {
    let cols: Vec<usize> = f.iter().collect();
    let mut pos = vec![usize::MAX; a.dim()];
    for (j, &c) in cols.iter().enumerate() {
        pos[c] = j;
    }
    let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cols.len()];
    let mut rows = BTreeSet::new();
    for (x, y, v) in a.entries() {
        if pos[y] != usize::MAX {
            raw[pos[y]].push((x, v.as_f64()));
            rows.insert(x);
        }
    }
    let rows: Vec<usize> = rows.into_iter().collect();
    let mut rpos = vec![usize::MAX; a.dim()];
    for (i, &r) in rows.iter().enumerate() {
        rpos[r] = i;
    }
    let col_entries = raw
        .into_iter()
        .map(|c| c.into_iter().map(|(x, v)| (rpos[x], v)).collect())
        .collect();
    Restriction {
        cols,
        col_entries,
        rows,
    }
}

impl Restriction {
    fn image(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for (j, col) in self.col_entries.iter().enumerate() {
            if v[j] != 0.0 {
                for &(i, a) in col {
                    out[i] += a * v[j];
                }
            }
        }
        out
    }

    fn ratio(&self, v: &[f64], regime: NormRegime) -> f64 {
        let w = self.image(v);
        if regime.is_sup() {
            let num = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            num / v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        } else {
            w.iter().map(|x| x.abs()).sum::<f64>() / v.iter().map(|x| x.abs()).sum::<f64>()
        }
    }

    fn embed(&self, n: usize, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (j, &c) in self.cols.iter().enumerate() {
            out[c] = v[j];
        }
        out
    }
}

pub fn lower_norm_with<T: Scalar>(
    a: &BandOperator<T>,
    f: &SupportSet,
    regime: NormRegime,
    opts: &LowerNormOptions,
) -> Result<LowerNormResult> {
    if f.universe_len() != a.dim() {
        return Err(Error::IndexMismatch {
            expected: a.dim(),
            got: f.universe_len(),
        });
    }
    if f.is_empty() {
        return Err(Error::InvalidArgument("lower norm over an empty support".into()));
    }
    let res = restrict(a, f);
    let n = a.dim();
    let finish = |value: f64, method, v: Vec<f64>| LowerNormResult {
        value,
        regime,
        method,
        support_constraint: None,
        certificate: res.embed(n, &v),
        support: res.cols.clone(),
    };
    if res.rows.is_empty() {
        // A vanishes on l(F)
        let mut v = vec![0.0; res.cols.len()];
        v[0] = 1.0;
        return Ok(finish(0.0, LowerNormMethod::LpExact, v));
    }
    if opts.inverse_shortcut && res.rows.iter().all(|&x| f.contains(x)) {
        if let Some((value, v)) = inverse_norm_formula(a, &res.cols, regime) {
            return Ok(finish(value, LowerNormMethod::InverseNorm, v));
        }
    }
    if regime.is_sup() {
        let (value, v) = facet_lps(&res)?;
        Ok(finish(value, LowerNormMethod::LpExact, v))
    } else if res.cols.len() <= opts.p1_exact_cap {
        let (value, v) = orthant_lps(&res)?;
        Ok(finish(value, LowerNormMethod::LpExact, v))
    } else if opts.allow_sampling {
        let (value, v) = sampled(&res, regime, opts.samples, opts.seed);
        Ok(finish(value, LowerNormMethod::Sampled, v))
    } else {
        Err(Error::Unsupported(format!(
            "exact p1 lower norm over {} points exceeds the cap of {}",
            res.cols.len(),
            opts.p1_exact_cap
        )))
    }
}

/// `A` maps `l(F)` into `l(F)`: `nu = 1 / |A_FF^-1|` with the extremizer
/// built from the row (`pinf`) or column (`p1`) attaining the inverse norm.
fn inverse_norm_formula<T: Scalar>(a: &BandOperator<T>, cols: &[usize], regime: NormRegime) -> Option<(f64, Vec<f64>)> {
    let block = a.dense_block(cols, cols);
    let m = cols.len();
    let mut d = crate::linalg::DenseMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            d[(i, j)] = block[(i, j)].as_f64();
        }
    }
    let inv = d.inverse().ok()?;
    let norm = inv.norm(regime);
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    let v = if regime.is_sup() {
        // v = A^-1 sign(row i*), normalised to |v|_inf = 1
        let (istar, _) = (0..m)
            .map(|i| (i, inv.row(i).iter().map(|x| x.abs()).sum::<f64>()))
            .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        let s: Vec<f64> = inv.row(istar).iter().map(|&x| if x >= 0.0 { 1.0 } else { -1.0 }).collect();
        let v = inv.mul_vec(&s);
        let scale = v.iter().fold(0.0f64, |mx, x| mx.max(x.abs()));
        v.into_iter().map(|x| x / scale).collect()
    } else {
        let (jstar, _) = (0..m)
            .map(|j| (j, (0..m).map(|i| inv[(i, j)].abs()).sum::<f64>()))
            .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        let v: Vec<f64> = (0..m).map(|i| inv[(i, jstar)]).collect();
        let scale: f64 = v.iter().map(|x| x.abs()).sum();
        v.into_iter().map(|x| x / scale).collect()
    };
    Some((1.0 / norm, v))
}

fn lp_err(e: minilp::Error) -> Error {
    Error::LinearProgram(e.to_string())
}

fn argmin(candidates: Vec<(f64, Vec<f64>)>) -> (f64, Vec<f64>) {
    // first minimum in index order keeps the result deterministic
    candidates
        .into_iter()
        .fold((f64::INFINITY, Vec::new()), |best, c| if c.0 < best.0 { c } else { best })
}

fn facet_lps(res: &Restriction) -> Result<(f64, Vec<f64>)> {
    let m = res.cols.len();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..m).map(|_| p.add_var(0.0, (-1.0, 1.0))).collect();
    let t = p.add_var(1.0, (0.0, f64::INFINITY));
    let mut row_terms: Vec<Vec<(minilp::Variable, f64)>> = vec![Vec::new(); res.rows.len()];
    for (j, col) in res.col_entries.iter().enumerate() {
        for &(i, a) in col {
            row_terms[i].push((vars[j], a));
        }
    }
    for terms in row_terms {
        let mut upper = terms.clone();
        upper.push((t, -1.0));
        p.add_constraint(upper.as_slice(), ComparisonOp::Le, 0.0);
        let mut lower = terms;
        lower.push((t, 1.0));
        p.add_constraint(lower.as_slice(), ComparisonOp::Ge, 0.0);
    }
    let base = p.solve().map_err(lp_err)?;
    let facets: Vec<(f64, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|j| {
            let sol = base.clone().fix_var(vars[j], 1.0).map_err(lp_err)?;
            let mut v: Vec<f64> = vars.iter().map(|&x| sol[x].clamp(-1.0, 1.0)).collect();
            v[j] = 1.0;
            // report the value the vector actually attains
            Ok((res.ratio(&v, NormRegime::Pinf), v))
        })
        .collect::<Result<_>>()?;
    Ok(argmin(facets))
}

fn orthant_lps(res: &Restriction) -> Result<(f64, Vec<f64>)> {
    let m = res.cols.len();
    let count = 1usize << (m - 1);
    let orthants: Vec<(f64, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|mask| {
            // sign of coordinate 0 fixed to + by symmetry v -> -v
            let sign = |j: usize| if j > 0 && (mask >> (j - 1)) & 1 == 1 { -1.0 } else { 1.0 };
            let mut p = Problem::new(OptimizationDirection::Minimize);
            let u: Vec<_> = (0..m).map(|_| p.add_var(0.0, (0.0, f64::INFINITY))).collect();
            let s: Vec<_> = (0..res.rows.len()).map(|_| p.add_var(1.0, (0.0, f64::INFINITY))).collect();
            let norm: Vec<_> = u.iter().map(|&x| (x, 1.0)).collect();
            p.add_constraint(norm.as_slice(), ComparisonOp::Eq, 1.0);
            let mut row_terms: Vec<Vec<(minilp::Variable, f64)>> = vec![Vec::new(); res.rows.len()];
            for (j, col) in res.col_entries.iter().enumerate() {
                for &(i, a) in col {
                    row_terms[i].push((u[j], sign(j) * a));
                }
            }
            for (i, terms) in row_terms.into_iter().enumerate() {
                let mut upper = terms.clone();
                upper.push((s[i], -1.0));
                p.add_constraint(upper.as_slice(), ComparisonOp::Le, 0.0);
                let mut lower = terms;
                lower.push((s[i], 1.0));
                p.add_constraint(lower.as_slice(), ComparisonOp::Ge, 0.0);
            }
            let sol = p.solve().map_err(lp_err)?;
            let mut v: Vec<f64> = (0..m).map(|j| sign(j) * sol[u[j]].max(0.0)).collect();
            let total: f64 = v.iter().map(|x| x.abs()).sum();
            v.iter_mut().for_each(|x| *x /= total);
            Ok((res.ratio(&v, NormRegime::P1), v))
        })
        .collect::<Result<_>>()?;
    Ok(argmin(orthants))
}

/// Random search over signed unit vectors and coordinate vectors.
fn sampled(res: &Restriction, regime: NormRegime, samples: usize, seed: u64) -> (f64, Vec<f64>) {
    let m = res.cols.len();
    let mut best = (f64::INFINITY, Vec::new());
    for j in 0..m {
        let mut v = vec![0.0; m];
        v[j] = 1.0;
        let r = res.ratio(&v, regime);
        if r < best.0 {
            best = (r, v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = res.ratio(&v, regime);
        if r < best.0 {
            best = (r, v);
        }
    }
    let (value, mut v) = best;
    let scale = if regime.is_sup() {
        v.iter().fold(0.0f64, |mx, x| mx.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs()).sum()
    };
    v.iter_mut().for_each(|x| *x /= scale);
    (value, v)
}

/// `nu_s(A|F)`: the smallest lower norm over subsets of `F` of diameter at
/// most `s`. When `diam(F) <= s` this is `nu(A|F)`; otherwise the candidates
/// are the maximal sets `B(x, s/2) & F` (deduplicated), giving an upper
/// estimate of the infimum over all admissible subsets.
pub fn restricted_lower_norm<T: Scalar>(
    a: &BandOperator<T>,
    f: &SupportSet,
    s: f64,
    regime: NormRegime,
) -> Result<LowerNormResult> {
    restricted_lower_norm_with(a, f, s, regime, &LowerNormOptions::default())
}

pub fn restricted_lower_norm_with<T: Scalar>(
    a: &BandOperator<T>,
    f: &SupportSet,
    s: f64,
    regime: NormRegime,
    opts: &LowerNormOptions,
) -> Result<LowerNormResult> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("support constraint must be nonnegative, got {s}")));
    }
    let space = a.space();
    if f.universe_len() != a.dim() {
        return Err(Error::IndexMismatch {
            expected: a.dim(),
            got: f.universe_len(),
        });
    }
    if f.is_empty() {
        return Err(Error::InvalidArgument("lower norm over an empty support".into()));
    }
    if distance_to_f64(&space.diameter(f)) <= s {
        let mut r = lower_norm_with(a, f, regime, opts)?;
        r.support_constraint = Some(s);
        return Ok(r);
    }
    let pts: Vec<usize> = f.iter().collect();
    let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    for &x in &pts {
        sets.insert(
            pts.iter()
                .copied()
                .filter(|&y| distance_to_f64(&space.distance(x, y)) <= s / 2.0)
                .collect(),
        );
    }
    let sets: Vec<Vec<usize>> = sets.into_iter().collect();
    let maximal: Vec<&Vec<usize>> = sets
        .iter()
        .filter(|s1| {
            !sets
                .iter()
                .any(|s2| s2.len() > s1.len() && s1.iter().all(|x| s2.binary_search(x).is_ok()))
        })
        .collect();
    let results: Vec<LowerNormResult> = maximal
        .par_iter()
        .map(|set| lower_norm_with(a, &SupportSet::from_indices(a.dim(), set.iter().copied()), regime, opts))
        .collect::<Result<_>>()?;
    let mut best = results
        .into_iter()
        .fold(None::<LowerNormResult>, |b, r| match b {
            Some(b) if b.value <= r.value => Some(b),
            _ => Some(r),
        })
        .expect("F is nonempty");
    best.support_constraint = Some(s);
    Ok(best)
}

/// Support scale `s = 8 r M N / delta` at which `nu_s <= nu + delta`.
pub fn localization_radius(delta: f64, m: f64, r: f64, n: usize) -> Result<f64> {
    if !(delta > 0.0) || !(m >= 0.0) || !(r >= 0.0) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "localization radius needs delta > 0, M >= 0, r >= 0, N >= 1 (got {delta}, {m}, {r}, {n})"
        )));
    }
    Ok(8.0 * r * m * n as f64 / delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{make_grid_space, MetricKind};

    fn tri(n: i64, d: f64, off: f64) -> BandOperator<f64> {
        let s = make_grid_space(1, &[-n], &[n], MetricKind::L1).unwrap();
        let m = s.len();
        let t = (0..m).flat_map(|i| {
            let mut v = vec![(i, i, d)];
            if i + 1 < m {
                v.push((i, i + 1, off));
                v.push((i + 1, i, off));
            }
            v
        });
        BandOperator::from_triplets(&s, t).unwrap()
    }

    #[test]
    fn diagonal_lower_norm_is_min_abs() {
        let s = make_grid_space(1, &[-3], &[3], MetricKind::L1).unwrap();
        let vals: Vec<f64> = (0..7).map(|i| 1.0 + (i as f64 - 3.0).abs()).collect();
        let a = BandOperator::diagonal(&s, &vals);
        let f = SupportSet::full(7);
        for regime in [NormRegime::P1, NormRegime::Pinf] {
            let r = lower_norm(&a, &f, regime).unwrap();
            assert!((r.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lp_matches_inverse_formula_on_square_sections() {
        let a = tri(3, 3.0, 1.0);
        let f = SupportSet::full(a.dim());
        for regime in [NormRegime::Pinf, NormRegime::P1] {
            let short = lower_norm(&a, &f, regime).unwrap();
            assert_eq!(short.method, LowerNormMethod::InverseNorm);
            let opts = LowerNormOptions {
                inverse_shortcut: false,
                ..Default::default()
            };
            let lp = lower_norm_with(&a, &f, regime, &opts).unwrap();
            assert_eq!(lp.method, LowerNormMethod::LpExact);
            assert!((lp.value - short.value).abs() < 1e-9, "{} vs {}", lp.value, short.value);
        }
    }

    #[test]
    fn certificate_attains_value() {
        let a = tri(4, 2.0, -1.0);
        let f = SupportSet::from_indices(a.dim(), 2..6);
        for regime in [NormRegime::Pinf, NormRegime::P1] {
            let r = lower_norm(&a, &f, regime).unwrap();
            let w = a.apply(&r.certificate).unwrap();
            let (num, den) = if regime.is_sup() {
                (
                    w.iter().fold(0.0f64, |m, x| m.max(x.abs())),
                    r.certificate.iter().fold(0.0f64, |m, x| m.max(x.abs())),
                )
            } else {
                (w.iter().map(|x| x.abs()).sum(), r.certificate.iter().map(|x| x.abs()).sum())
            };
            assert!((den - 1.0).abs() < 1e-12);
            assert!((num - r.value).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_section_has_zero_lower_norm() {
        let a = tri(2, 0.0, 1.0);
        // [[0,1],[1,0]] pattern; restrict to a single point whose column is (1 above, 1 below)
        let f = SupportSet::from_indices(a.dim(), [2]);
        let r = lower_norm(&a, &f, NormRegime::Pinf).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let z = BandOperator::<f64>::zero(a.space());
        assert_eq!(lower_norm(&z, &f, NormRegime::Pinf).unwrap().value, 0.0);
    }

    #[test]
    fn restricted_is_monotone_and_bounded_below() {
        let a = tri(6, 2.5, 1.0);
        let f = SupportSet::full(a.dim());
        for regime in [NormRegime::Pinf, NormRegime::P1] {
            let nu = lower_norm(&a, &f, regime).unwrap().value;
            let mut prev = f64::INFINITY;
            for s in [0.0, 2.0, 4.0, 8.0, 100.0] {
                let v = restricted_lower_norm(&a, &f, s, regime).unwrap().value;
                assert!(v >= nu - 1e-9);
                assert!(v <= prev + 1e-9);
                prev = v;
            }
            assert!((prev - nu).abs() < 1e-9);
        }
    }

    #[test]
    fn p1_cap_and_sampling() {
        let a = tri(10, 3.0, 1.0);
        let f = SupportSet::from_indices(a.dim(), 0..18);
        let opts = LowerNormOptions {
            allow_sampling: false,
            inverse_shortcut: false,
            ..Default::default()
        };
        assert!(matches!(
            lower_norm_with(&a, &f, NormRegime::P1, &opts),
            Err(Error::Unsupported(_))
        ));
        let opts = LowerNormOptions {
            inverse_shortcut: false,
            ..Default::default()
        };
        let r = lower_norm_with(&a, &f, NormRegime::P1, &opts).unwrap();
        assert_eq!(r.method, LowerNormMethod::Sampled);
        assert!(r.value >= 1.0 - 1e-9);
    }

    #[test]
    fn localization_radius_formula() {
        assert_eq!(localization_radius(0.5, 2.0, 1.0, 3).unwrap(), 96.0);
        assert!(localization_radius(0.0, 1.0, 1.0, 1).is_err());
    }
}
