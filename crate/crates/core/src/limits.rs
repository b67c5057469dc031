//! Limit operators on `Z^N` along direction sequences `h_m -> inf`.
//!
//! The limit along `(h_m)` is the entrywise limit of the translates
//! `A_{x + h_m, y + h_m}` on a reference window. Translates are evaluated
//! from the operator's [`SymbolicSource`], so tails far outside the stored
//! window are available. Richness is only ever claimed on the tested tail.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{BandOperator, SymbolicSource};
use crate::scalar::Scalar;
use crate::space::{GridWindow, Space};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// `h_m = m u`.
    Ray(Vec<i64>),
    /// `h_m` listed explicitly.
    Explicit(Vec<Vec<i64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSequence {
    pub label: String,
    pub generator: Generator,
}

impl DirectionSequence {
    pub fn ray(label: impl Into<String>, u: Vec<i64>) -> Result<Self> {
        if u.iter().all(|&c| c == 0) {
            return Err(Error::InvalidArgument("ray direction must be nonzero".into()));
        }
        Ok(Self {
            label: label.into(),
            generator: Generator::Ray(u),
        })
    }

    pub fn explicit(label: impl Into<String>, points: Vec<Vec<i64>>) -> Result<Self> {
        let norms: Vec<i64> = points.iter().map(|p| p.iter().map(|c| c.abs()).sum()).collect();
        // strictly increasing from some index on: the final three must be
        if norms.len() < 3 || norms.windows(2).rev().take(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "explicit sequence `{}` must end with strictly growing norms",
                points.len()
            )));
        }
        Ok(Self {
            label: label.into(),
            generator: Generator::Explicit(points),
        })
    }

    /// `+e_a` and `-e_a` for every axis, labelled `+x0`, `-x0`, ...
    pub fn coordinate_rays(dim: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for a in 0..dim {
            for sign in [1i64, -1] {
                let mut u = vec![0; dim];
                u[a] = sign;
                let label = format!("{}x{a}", if sign > 0 { '+' } else { '-' });
                out.push(Self {
                    label,
                    generator: Generator::Ray(u),
                });
            }
        }
        out
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.generator {
            Generator::Ray(u) => Some(u.len()),
            Generator::Explicit(p) => p.first().map(Vec::len),
        }
    }

    pub fn point(&self, m: u64) -> Result<Vec<i64>> {
        match &self.generator {
            Generator::Ray(u) => Ok(u.iter().map(|c| c * m as i64).collect()),
            Generator::Explicit(p) => p.get(m as usize).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "sequence `{}` has {} points; index {m} requested",
                    self.label,
                    p.len()
                ))
            }),
        }
    }

    /// Default tail: every index for explicit sequences, otherwise
    /// `samples` geometrically spaced indices in `[first, last]`.
    pub fn default_tail(&self, first: u64, last: u64, samples: usize) -> Tail {
        match &self.generator {
            Generator::Explicit(p) => Tail {
                indices: (0..p.len() as u64).collect(),
            },
            Generator::Ray(_) => Tail::geometric(first, last, samples),
        }
    }
}

/// Tested tail indices, increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub indices: Vec<u64>,
}

impl Tail {
    pub fn range(first: u64, last: u64) -> Self {
        Self {
            indices: (first..=last).collect(),
        }
    }

    pub fn geometric(first: u64, last: u64, samples: usize) -> Self {
        let samples = samples.max(3);
        let (a, b) = (first.max(1) as f64, last.max(first.max(1)) as f64);
        let mut indices: Vec<u64> = (0..samples)
            .map(|k| (a * (b / a).powf(k as f64 / (samples - 1) as f64)).round() as u64)
            .collect();
        indices.dedup();
        Self { indices }
    }
}

/// Translate `A` by `h`: entries `A_{x+h, y+h}` placed at `(x, y)` on the
/// reference window.
#[derive(Debug, Clone)]
pub struct Translate<T> {
    pub operator: BandOperator<T>,
    /// Some referenced entry lay outside the stored window (only possible
    /// without a symbolic source).
    pub truncated: bool,
}

pub fn translate<T: Scalar>(
    a: &BandOperator<T>,
    h: &[i64],
    refwin: Option<&Arc<Space>>,
) -> Result<Translate<T>> {
    let g = a
        .space()
        .grid_window()
        .ok_or_else(|| Error::Unsupported("translation needs a grid window".into()))?;
    if h.len() != g.dim() {
        return Err(Error::DimensionMismatch(format!(
            "translation {h:?} in a {}-dimensional window",
            g.dim()
        )));
    }
    let target = refwin.unwrap_or(a.space());
    let t = target
        .grid_window()
        .ok_or_else(|| Error::Unsupported("reference window must be a grid".into()))?;
    if t.dim() != g.dim() {
        return Err(Error::DimensionMismatch("reference window dimension".into()));
    }
    if let Some(src) = a.source() {
        let operator = evaluate_source(src, target, t, h)?;
        return Ok(Translate {
            operator: operator.with_source(Some(src.clone())),
            truncated: false,
        });
    }
    let mut truncated = false;
    let mut triplets = Vec::new();
    for x in 0..target.len() {
        let cx: Vec<i64> = t.coords(x).iter().zip(h).map(|(c, d)| c + d).collect();
        match g.index_of(&cx) {
            Some(ix) => {
                for &(iy, v) in a.row(ix) {
                    let cy: Vec<i64> = g.coords(iy).iter().zip(h).map(|(c, d)| c - d).collect();
                    if let Some(y) = t.index_of(&cy) {
                        triplets.push((x, y, v));
                    }
                }
            }
            None => truncated = true,
        }
    }
    Ok(Translate {
        operator: BandOperator::from_triplets(target, triplets)?,
        truncated,
    })
}

fn evaluate_source<T: Scalar>(
    src: &SymbolicSource,
    target: &Arc<Space>,
    t: &GridWindow,
    h: &[i64],
) -> Result<BandOperator<T>> {
    let mut triplets = Vec::new();
    for term in &src.terms {
        for col in 0..target.len() {
            let y = t.coords(col);
            let row_c: Vec<i64> = y.iter().zip(&term.offset).map(|(a, b)| a + b).collect();
            if let Some(row) = t.index_of(&row_c) {
                let at: Vec<i64> = y.iter().zip(h).map(|(a, b)| a + b).collect();
                let xf: Vec<f64> = at.iter().map(|&c| c as f64).collect();
                let v = term.coefficient.eval(&xf).map_err(|message| Error::Evaluation {
                    expr: term.coefficient.to_string(),
                    point: at.clone(),
                    message,
                })?;
                triplets.push((row, col, T::of(v)));
            }
        }
    }
    BandOperator::from_triplets(target, triplets)
}

#[derive(Debug, Clone)]
pub struct LimitOperatorResult<T> {
    pub operator: BandOperator<T>,
    pub rich: bool,
    /// Max over entries of (max - min) across the tested translates.
    pub cauchy_residual: f64,
    pub tol: f64,
    pub direction: String,
    /// Other directions whose limits coincide within `tol`.
    pub aliases: Vec<String>,
    pub tail: Vec<u64>,
    /// Largest window norm among the tested translates, per regime slot
    /// `[p1, pinf]`.
    pub translate_norms: [f64; 2],
}

/// Centred window with half the source extent per axis.
pub fn default_reference_window(space: &Space) -> Result<Arc<Space>> {
    let g = space.grid_window().ok_or(Error::NotAGrid)?;
    let radius: Vec<i64> = (0..g.dim()).map(|a| g.extent(a) / 2).collect();
    Space::from_window(&g.centered(&radius))
}

pub fn centered_window(space: &Space, radius: i64) -> Result<Arc<Space>> {
    let g = space.grid_window().ok_or(Error::NotAGrid)?;
    Space::from_window(&g.centered(&vec![radius; g.dim()]))
}

/// Entrywise limit along `dir`: the mean of the last three translates, with
/// `rich = (cauchy_residual <= tol)`.
pub fn limit_operator<T: Scalar>(
    a: &BandOperator<T>,
    dir: &DirectionSequence,
    tail: &Tail,
    tol: f64,
    refwin: Option<&Arc<Space>>,
) -> Result<LimitOperatorResult<T>> {
    let src = a.source().ok_or(Error::NoSymbolicSource)?.clone();
    let g = a.space().grid_window().ok_or(Error::NotAGrid)?;
    if dir.dim() != Some(g.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "direction `{}` does not match the {}-dimensional window",
            dir.label,
            g.dim()
        )));
    }
    if tail.indices.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "tail must contain at least 3 indices, found {}",
            tail.indices.len()
        )));
    }
    let reference = match refwin {
        Some(r) => r.clone(),
        None => default_reference_window(a.space())?,
    };
    let t = reference.grid_window().ok_or(Error::NotAGrid)?.clone();
    let translates: Vec<BandOperator<T>> = tail
        .indices
        .par_iter()
        .map(|&m| evaluate_source(&src, &reference, &t, &dir.point(m)?))
        .collect::<Result<_>>()?;
    // aligned entry table over the union pattern
    let mut table: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let k = translates.len();
    for (j, tr) in translates.iter().enumerate() {
        for (x, y, v) in tr.entries() {
            table.entry((x, y)).or_insert_with(|| vec![0.0; k])[j] = v.as_f64();
        }
    }
    let mut residual: f64 = 0.0;
    let mut triplets = Vec::new();
    for (&(x, y), vals) in &table {
        let (mn, mx) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        residual = residual.max(mx - mn);
        let mean = vals[k - 3..].iter().sum::<f64>() / 3.0;
        triplets.push((x, y, T::of(mean)));
    }
    let operator = BandOperator::from_triplets(&reference, triplets)?;
    let translate_norms = [
        translates
            .iter()
            .map(|t| t.op_norm(crate::operator::NormRegime::P1).as_f64())
            .fold(0.0, f64::max),
        translates
            .iter()
            .map(|t| t.op_norm(crate::operator::NormRegime::Pinf).as_f64())
            .fold(0.0, f64::max),
    ];
    Ok(LimitOperatorResult {
        operator,
        rich: residual <= tol,
        cauchy_residual: residual,
        tol,
        direction: dir.label.clone(),
        aliases: Vec::new(),
        tail: tail.indices.clone(),
        translate_norms,
    })
}

#[derive(Debug, Clone)]
pub struct SpectrumSample<T> {
    /// Distinct limit operators, in direction-label order.
    pub members: Vec<LimitOperatorResult<T>>,
    /// `true` iff every tested direction was rich.
    pub rich: bool,
}

/// Limit operators along every direction (evaluated in parallel, ordered by
/// label), deduplicated entrywise within `tol`.
pub fn spectrum_sample<T: Scalar>(
    a: &BandOperator<T>,
    dirs: &[DirectionSequence],
    tails: &dyn Fn(&DirectionSequence) -> Tail,
    tol: f64,
    refwin: Option<&Arc<Space>>,
) -> Result<SpectrumSample<T>> {
    let mut sorted: Vec<&DirectionSequence> = dirs.iter().collect();
    sorted.sort_by(|a, b| a.label.cmp(&b.label));
    let tails: Vec<Tail> = sorted.iter().map(|d| tails(d)).collect();
    let results: Vec<LimitOperatorResult<T>> = sorted
        .par_iter()
        .zip(tails.par_iter())
        .map(|(d, t)| limit_operator(a, d, t, tol, refwin))
        .collect::<Result<_>>()?;
    let rich = results.iter().all(|r| r.rich);
    let mut members: Vec<LimitOperatorResult<T>> = Vec::new();
    for r in results {
        match members.iter_mut().find(|m| {
            m.operator
                .max_abs_diff(&r.operator)
                .map(|d| d.as_f64() <= tol)
                .unwrap_or(false)
        }) {
            Some(m) => {
                m.aliases.push(r.direction.clone());
                m.rich &= r.rich;
            }
            None => members.push(r),
        }
    }
    Ok(SpectrumSample { members, rich })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{band_from_offsets, NormRegime, OffsetTerm};
    use crate::space::{make_grid_space, MetricKind};

    fn line(r: i64) -> Arc<Space> {
        make_grid_space(1, &[-r], &[r], MetricKind::L1).unwrap()
    }

    fn diag(s: &Arc<Space>, expr: &str) -> BandOperator<f64> {
        band_from_offsets(s, vec![OffsetTerm::parse(vec![0], expr).unwrap()])
            .unwrap()
            .operator
    }

    fn ray(sign: i64) -> DirectionSequence {
        DirectionSequence::ray(if sign > 0 { "+x0" } else { "-x0" }, vec![sign]).unwrap()
    }

    #[test]
    fn translate_examples() {
        let s = line(20);
        let a = diag(&s, "min(max(x0, -30), 30)");
        let t0 = translate(&a, &[0], None).unwrap();
        assert_eq!(t0.operator, a);
        let t5 = translate(&a, &[5], None).unwrap();
        for i in 0..s.len() {
            let x = s.coords(i).unwrap()[0];
            assert_eq!(t5.operator.get(i, i), ((x + 5) as f64).clamp(-30.0, 30.0));
        }
        let lap: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![0], "2").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        assert_eq!(translate(&lap, &[13], None).unwrap().operator, lap);
        // without a source, far translates are truncated
        let plain = BandOperator::from_triplets(&s, lap.entries()).unwrap();
        assert!(translate(&plain, &[13], None).unwrap().truncated);
        assert!(!translate(&plain, &[0], None).unwrap().truncated);
    }

    #[test]
    fn limit_of_decaying_diagonal() {
        let s = line(10);
        let a = diag(&s, "2 + 1/(1+x0^2)");
        let tail = Tail::geometric(1000, 10000, 12);
        // |x| <= 2 keeps the tail oscillation 1/(1+998^2) - 1/(1+10002^2) below 1e-6
        let refwin = centered_window(&s, 2).unwrap();
        let r = limit_operator(&a, &ray(1), &tail, 1e-6, Some(&refwin)).unwrap();
        assert!(r.rich);
        let two = BandOperator::diagonal(r.operator.space(), &vec![2.0; r.operator.dim()]);
        assert!(r.operator.max_abs_diff(&two).unwrap() < 1e-6);
        assert!(r.operator.propagation() <= a.propagation());
    }

    #[test]
    fn oscillating_coefficient_is_not_rich() {
        let s = line(10);
        let a = diag(&s, "sin(x0)");
        let r = limit_operator(&a, &ray(1), &Tail::range(1000, 1100), 1e-6, None).unwrap();
        assert!(!r.rich);
        assert!(r.cauchy_residual > 1.9);
    }

    #[test]
    fn laurent_operator_is_its_own_limit() {
        let s = line(10);
        let a: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![0], "1").unwrap(),
                OffsetTerm::parse(vec![1], "-0.5").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        let r = limit_operator(&a, &ray(-1), &Tail::geometric(10, 1000, 5), 1e-12, None).unwrap();
        assert!(r.rich);
        assert_eq!(r.cauchy_residual, 0.0);
        let expect = a.section(r.operator.space()).unwrap();
        assert_eq!(r.operator, expect);
    }

    #[test]
    fn spectrum_examples() {
        let s = line(10);
        let tails = |_: &DirectionSequence| Tail::geometric(1000, 10000, 8);
        let a = diag(&s, "2 + 1/(1+x0^2)");
        let refwin = centered_window(&s, 2).unwrap();
        let sp = spectrum_sample(&a, &DirectionSequence::coordinate_rays(1), &tails, 1e-6, Some(&refwin))
            .unwrap();
        assert_eq!(sp.members.len(), 1);
        assert_eq!(sp.members[0].aliases.len(), 1);
        assert!(sp.rich);

        let b = diag(&s, "tanh(x0) + 2");
        let sp = spectrum_sample(&b, &DirectionSequence::coordinate_rays(1), &tails, 1e-6, None).unwrap();
        assert_eq!(sp.members.len(), 2);
        let mut vals: Vec<f64> = sp.members.iter().map(|m| m.operator.get(0, 0)).collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-9 && (vals[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn explicit_sequences_need_growth() {
        assert!(DirectionSequence::explicit("e", vec![vec![1], vec![2], vec![2]]).is_err());
        let d = DirectionSequence::explicit("e", vec![vec![1], vec![4], vec![9], vec![16]]).unwrap();
        assert_eq!(d.point(2).unwrap(), vec![9]);
        assert!(d.point(7).is_err());
    }

    #[test]
    fn two_dimensional_limits_keep_transverse_dependence() {
        let s = make_grid_space(2, &[-4, -4], &[4, 4], MetricKind::L1).unwrap();
        let a: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![0, 0], "tanh(x0) + x1/10").unwrap(),
                OffsetTerm::parse(vec![0, 1], "1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        let d = DirectionSequence::ray("+x0", vec![1, 0]).unwrap();
        let r = limit_operator(&a, &d, &Tail::geometric(100, 1000, 5), 1e-9, None).unwrap();
        assert!(r.rich);
        let rw = r.operator.space().clone();
        let p = rw.index_of_coords(&[0, 2]).unwrap();
        assert!((r.operator.get(p, p) - 1.2).abs() < 1e-12);
        assert!(r.operator.op_norm(NormRegime::Pinf) <= r.translate_norms[1] + 1e-12);
    }
}
