//! Commutators with bounded functions and the quasi-locality modulus
//! `sup { ||[A, f]|| : f L-Lipschitz, |f| <= 1 }`.
//!
//! For real entries the modulus has the closed form
//! `max_x sum_y |A_xy| min(L d(x, y), 2)` (rows for `pinf`/`p0`, columns for
//! `p1`), attained by `f*(z) = min(L d(z, x*), 2) - 1` at the extremal row or
//! column `x*`. Complex-valued `f` cannot do better: `|f(y) - f(x)|` obeys
//! the same two caps.

use std::sync::Arc;

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::{BandOperator, NormRegime};
use crate::scalar::{compensated_sum, distance_to_f64, Scalar};
use crate::space::{Space, SpaceKind};

/// A function with `|f| <= 1` and an audited Lipschitz bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzFunction<T> {
    values: Vec<T>,
    lipschitz: f64,
}

impl<T: Scalar> LipschitzFunction<T> {
    /// Checks `|f| <= 1` and `|f(x) - f(y)| <= L d(x, y)` (up to `1e-12`
    /// relative slack).
    pub fn new(space: &Space, values: Vec<T>, lipschitz: f64) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::IndexMismatch {
                expected: space.len(),
                got: values.len(),
            });
        }
        if let Some((x, v)) = values.iter().enumerate().find(|(_, v)| v.abs() > T::one()) {
            return Err(Error::InvalidArgument(format!(
                "|f({})| = {} exceeds 1",
                space.label(x),
                v.abs()
            )));
        }
        let ratio = lipschitz_ratio(space, &values);
        if ratio > lipschitz * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::InvalidArgument(format!(
                "function has Lipschitz ratio {ratio} > declared {lipschitz}"
            )));
        }
        Ok(Self { values, lipschitz })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// `max |f(x) - f(y)| / d(x, y)`; unit steps suffice on grid windows.
pub fn lipschitz_ratio<T: Scalar>(space: &Space, f: &[T]) -> f64 {
    let n = space.len();
    let one = crate::scalar::Distance::from_integer(1);
    (0..n)
        .into_par_iter()
        .map(|x| {
            let others: Vec<usize> = match space.kind() {
                SpaceKind::Grid(_) => space.ball(x, one),
                SpaceKind::Table { .. } => (0..n).collect(),
            };
            others
                .into_iter()
                .filter(|&y| y > x)
                .map(|y| (f[x] - f[y]).abs().as_f64() / distance_to_f64(&space.distance(x, y)))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// `[A, f] = Af - fA`, entries `A_xy (f(y) - f(x))`.
pub fn commutator<T: Scalar>(a: &BandOperator<T>, f: &[T]) -> Result<BandOperator<T>> {
    if f.len() != a.dim() {
        return Err(Error::IndexMismatch {
            expected: a.dim(),
            got: f.len(),
        });
    }
    BandOperator::from_triplets(
        a.space(),
        a.entries()
            .filter(|&(x, y, _)| f[x] != f[y])
            .map(|(x, y, v)| (x, y, v * (f[y] - f[x]))),
    )
}

/// Closed-form modulus with its extremal row (`pinf`, `p0`) or column (`p1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QlModulus {
    pub value: f64,
    pub argmax: Option<usize>,
}

pub fn ql_modulus<T: Scalar>(a: &BandOperator<T>, lipschitz: f64, regime: NormRegime) -> f64 {
    ql_modulus_detail(a, lipschitz, regime).value
}

pub fn ql_modulus_detail<T: Scalar>(a: &BandOperator<T>, lipschitz: f64, regime: NormRegime) -> QlModulus {
    let space = a.space();
    let cap = T::two();
    let weight = |x: usize, y: usize| -> T {
        let d = space.distance(x, y);
        if d.is_zero() {
            T::zero()
        } else {
            (T::of(lipschitz) * T::of_distance(&d)).min(cap)
        }
    };
    let sums: Vec<T> = match regime {
        NormRegime::Pinf | NormRegime::P0 => (0..a.dim())
            .map(|x| compensated_sum(a.row(x).iter().map(|&(y, v)| v.abs() * weight(x, y))))
            .collect(),
        NormRegime::P1 => {
            let mut cols: Vec<Vec<T>> = vec![Vec::new(); a.dim()];
            for (x, y, v) in a.entries() {
                cols[y].push(v.abs() * weight(x, y));
            }
            cols.into_iter().map(compensated_sum).collect()
        }
    };
    let mut best = QlModulus {
        value: 0.0,
        argmax: None,
    };
    for (i, s) in sums.into_iter().enumerate() {
        let v = s.as_f64();
        if v > best.value {
            best = QlModulus {
                value: v,
                argmax: Some(i),
            };
        }
    }
    best
}

/// `f*(z) = min(L d(z, x*), 2) - 1` at the extremal index; `None` when the
/// modulus is zero.
pub fn ql_extremizer<T: Scalar>(
    a: &BandOperator<T>,
    lipschitz: f64,
    regime: NormRegime,
) -> Option<LipschitzFunction<T>> {
    let star = ql_modulus_detail(a, lipschitz, regime).argmax?;
    let space = a.space();
    let values: Vec<T> = (0..space.len())
        .map(|z| {
            (T::of(lipschitz) * T::of_distance(&space.distance(z, star))).min(T::two()) - T::one()
        })
        .collect();
    Some(LipschitzFunction { values, lipschitz })
}

/// `(L, modulus)` samples for reports.
pub fn ql_curve<T: Scalar>(a: &BandOperator<T>, ls: &[f64], regime: NormRegime) -> Vec<(f64, f64)> {
    ls.iter().map(|&l| (l, ql_modulus(a, l, regime))).collect()
}

/// `L = eps / (r M N)` for a band operator, re-verified against the modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommutatorCertificate {
    /// `f64::INFINITY` when the operator is diagonal (any `L` works).
    pub lipschitz: f64,
    pub sentinel: bool,
    pub r: f64,
    pub m: f64,
    pub n: usize,
    pub eps: f64,
    pub modulus: f64,
}

pub fn band_commutator_certificate<T: Scalar>(
    a: &BandOperator<T>,
    eps: f64,
    regime: NormRegime,
) -> Result<CommutatorCertificate> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
    }
    let prop = a.propagation();
    let n = a.space().geometry_profile(prop);
    let m = a.op_norm(regime).as_f64();
    let r = distance_to_f64(&prop);
    if prop.is_zero() || m == 0.0 {
        return Ok(CommutatorCertificate {
            lipschitz: f64::INFINITY,
            sentinel: true,
            r,
            m,
            n,
            eps,
            modulus: 0.0,
        });
    }
    let lipschitz = eps / (r * m * n as f64);
    let modulus = ql_modulus(a, lipschitz, regime);
    if modulus > eps * (1.0 + 1e-12) {
        return Err(Error::Refused(format!(
            "modulus {modulus} at L = {lipschitz} exceeds eps = {eps}"
        )));
    }
    Ok(CommutatorCertificate {
        lipschitz,
        sentinel: false,
        r,
        m,
        n,
        eps,
        modulus,
    })
}

/// Convenience: clamp `scale * g(x)` into `[-1, 1]`.
pub fn clamped<T: Scalar>(space: &Arc<Space>, g: impl Fn(&Space, usize) -> f64) -> Vec<T> {
    (0..space.len())
        .map(|x| T::of(g(space, x).clamp(-1.0, 1.0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{band_from_offsets, OffsetTerm};
    use crate::space::{make_grid_space, MetricKind};

    fn line(lo: i64, hi: i64) -> Arc<Space> {
        make_grid_space(1, &[lo], &[hi], MetricKind::L1).unwrap()
    }

    #[test]
    fn commutator_examples() {
        let s = line(-50, 50);
        let shift = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        assert!(commutator(&shift, &vec![0.3; s.len()]).unwrap().is_zero());
        let d = BandOperator::diagonal(&s, &vec![2.0; s.len()]);
        let f = clamped::<f64>(&s, |sp, x| sp.coords(x).unwrap()[0] as f64 / 100.0);
        assert!(commutator(&d, &f).unwrap().is_zero());
        let c = commutator(&shift, &f).unwrap();
        for (x, y, v) in c.entries() {
            assert_eq!(s.coords(x).unwrap()[0], s.coords(y).unwrap()[0] + 1);
            assert!((v + 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn modulus_examples() {
        let s = line(-20, 20);
        let d = BandOperator::diagonal(&s, &vec![3.0; s.len()]);
        assert_eq!(ql_modulus(&d, 5.0, NormRegime::Pinf), 0.0);
        let shift = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        for l in [0.1, 1.0, 2.0] {
            assert!((ql_modulus(&shift, l, NormRegime::Pinf) - l).abs() < 1e-15);
        }
        assert_eq!(ql_modulus(&shift, 7.0, NormRegime::Pinf), 2.0);
    }

    #[test]
    fn certificate_examples() {
        let s = line(-20, 20);
        let shift = BandOperator::<f64>::shift(&s, &[1]).unwrap();
        let c = band_commutator_certificate(&shift, 0.3, NormRegime::Pinf).unwrap();
        assert!((c.lipschitz - 0.1).abs() < 1e-15);
        assert!(c.modulus <= 0.3);
        let lap: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![0], "2").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
                OffsetTerm::parse(vec![-1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        let c = band_commutator_certificate(&lap, 1.2, NormRegime::Pinf).unwrap();
        assert!((c.lipschitz - 0.1).abs() < 1e-15);
        assert!(c.modulus <= 1.2);
        let d = BandOperator::diagonal(&s, &vec![3.0; s.len()]);
        let c = band_commutator_certificate(&d, 0.5, NormRegime::Pinf).unwrap();
        assert!(c.sentinel && c.lipschitz.is_infinite() && c.modulus == 0.0);
    }

    #[test]
    fn extremizer_attains_modulus() {
        let s = line(-10, 10);
        let a: BandOperator<f64> = band_from_offsets(
            &s,
            vec![
                OffsetTerm::parse(vec![2], "sin(x0)").unwrap(),
                OffsetTerm::parse(vec![-1], "1 + x0/10").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        for regime in [NormRegime::Pinf, NormRegime::P1] {
            for l in [0.05, 0.3, 1.5] {
                let f = ql_extremizer(&a, l, regime).unwrap();
                assert!(lipschitz_ratio(&s, f.values()) <= l + 1e-12);
                let c = commutator(&a, f.values()).unwrap();
                assert!((c.op_norm(regime) - ql_modulus(&a, l, regime)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lipschitz_function_is_audited() {
        let s = line(0, 4);
        assert!(LipschitzFunction::new(&s, vec![0.0, 0.5, 1.0, 0.5, 0.0], 0.5).is_ok());
        assert!(LipschitzFunction::new(&s, vec![0.0, 0.9, 1.0, 0.5, 0.0], 0.5).is_err());
        assert!(LipschitzFunction::new(&s, vec![0.0, 0.0, 1.5, 0.0, 0.0], 9.0).is_err());
    }
}
