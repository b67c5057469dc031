//! Invertibility of constant-coefficient (Laurent) operators via the symbol
//! `p(theta) = sum_k c_k exp(i k . theta)` on the torus.
//!
//! A Laurent operator is invertible iff `p` has no zero; its inverse is the
//! Laurent operator whose coefficients are the Fourier coefficients of `1/p`,
//! so the inverse norm (equal in every `l^p` regime) is `sum_k |d_k|`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operator::BandOperator;
use crate::scalar::Scalar;

/// Default number of symbol samples on the torus (split across axes).
pub const SYMBOL_GRID_POINTS: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaurentCoefficients {
    pub dim: usize,
    /// `(k, c_k)` with `A[x + k][x] = c_k`, sorted by offset.
    pub terms: Vec<(Vec<i64>, f64)>,
}

impl LaurentCoefficients {
    pub fn new(dim: usize, terms: impl IntoIterator<Item = (Vec<i64>, f64)>) -> Result<Self> {
        let mut map: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (k, c) in terms {
            if k.len() != dim {
                return Err(Error::DimensionMismatch(format!("offset {k:?} in dimension {dim}")));
            }
            *map.entry(k).or_insert(0.0) += c;
        }
        Ok(LaurentCoefficients {
            dim,
            terms: map.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        })
    }

    /// Largest `|k|_inf` with a nonzero coefficient.
    pub fn reach(&self) -> i64 {
        self.terms
            .iter()
            .map(|(k, _)| k.iter().map(|c| c.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn symbol(&self, theta: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                let phase: f64 = k.iter().zip(theta).map(|(&a, &t)| a as f64 * t).sum();
                Complex64::from_polar(*c, phase)
            })
            .sum()
    }
}

/// Coefficients of a translation-invariant grid operator. Uses the symbolic
/// source when every coefficient is constant, otherwise groups stored
/// entries by lattice offset. Fails with `NotConstantCoefficient` when some
/// offset varies by more than `tol` (an absent entry counts as zero).
pub fn laurent_coefficients<T: Scalar>(a: &BandOperator<T>, tol: f64) -> Result<LaurentCoefficients> {
    let g = a.space().grid_window().ok_or(Error::NotAGrid)?;
    let dim = g.dim();
    if let Some(src) = a.source().filter(|s| s.has_constant_coefficients()) {
        let terms = src
            .terms
            .iter()
            .map(|t| {
                let c = t.coefficient.eval(&vec![0.0; dim]).map_err(|message| Error::Evaluation {
                    expr: t.coefficient.to_string(),
                    point: vec![0; dim],
                    message,
                })?;
                Ok((t.offset.clone(), c))
            })
            .collect::<Result<Vec<_>>>()?;
        return LaurentCoefficients::new(dim, terms);
    }
    let mut groups: BTreeMap<Vec<i64>, Vec<f64>> = BTreeMap::new();
    for (x, y, v) in a.entries() {
        let k: Vec<i64> = g.coords(x).iter().zip(g.coords(y)).map(|(p, q)| p - q).collect();
        groups.entry(k).or_default().push(v.as_f64());
    }
    let mut deviation: f64 = 0.0;
    let mut terms = Vec::new();
    for (k, vals) in groups {
        // number of (x, x - k) pairs inside the window
        let expected: i64 = (0..dim).map(|ax| (g.extent(ax) + 1 - k[ax].abs()).max(0)).product();
        let (mn, mx) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        deviation = deviation.max(mx - mn);
        if (vals.len() as i64) < expected {
            deviation = deviation.max(mx.abs()).max(mn.abs());
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        terms.push((k, mean));
    }
    if deviation > tol {
        return Err(Error::NotConstantCoefficient { deviation });
    }
    LaurentCoefficients::new(dim, terms)
}

#[derive(Debug, Clone, Serialize)]
pub struct LaurentReport {
    pub invertible: bool,
    /// `min |p|` over the sample grid.
    pub symbol_min: f64,
    /// Bound on how far `min |p|` over the torus can sit below the grid
    /// minimum: one grid step times `sum |k|_1 |c_k|`.
    pub slack: f64,
    /// Coefficient uncertainty propagated to the symbol.
    pub uncertainty: f64,
    pub grid_points: usize,
    /// `|A^-1|`, identical in `p1`, `pinf` and `p0`.
    pub inverse_norm: Option<f64>,
    /// Inverse coefficients in the shells carrying all but `1e-9` of the norm.
    pub inverse_terms: usize,
}

/// Decides invertibility from the sampled symbol.
///
/// `coefficient_uncertainty` bounds the error of each coefficient (for a
/// limit operator, its Cauchy residual). The symbol is then known up to
/// `U = #terms * coefficient_uncertainty`:
/// * `grid_min <= U` means a zero cannot be excluded at this resolution and
///   the operator is reported not invertible;
/// * `grid_min - slack - U > 0` certifies invertibility;
/// * anything in between is `Inconclusive`.
pub fn laurent_invertibility(coeffs: &LaurentCoefficients, coefficient_uncertainty: f64) -> Result<LaurentReport> {
    laurent_invertibility_on_grid(coeffs, coefficient_uncertainty, SYMBOL_GRID_POINTS)
}

pub fn laurent_invertibility_on_grid(
    coeffs: &LaurentCoefficients,
    coefficient_uncertainty: f64,
    grid_points: usize,
) -> Result<LaurentReport> {
    let dim = coeffs.dim;
    if dim == 0 {
        return Err(Error::InvalidArgument("symbol of a 0-dimensional operator".into()));
    }
    let per_axis = 1usize << (grid_points.max(2).ilog2() as usize).div_ceil(dim);
    let total = per_axis.pow(dim as u32);
    let step = 2.0 * std::f64::consts::PI / per_axis as f64;
    let values: Vec<Complex64> = (0..total)
        .map(|idx| {
            let theta: Vec<f64> = multi_index(idx, per_axis, dim)
                .iter()
                .map(|&j| j as f64 * step)
                .collect();
            coeffs.symbol(&theta)
        })
        .collect();
    let symbol_min = values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let lipschitz: f64 = coeffs
        .terms
        .iter()
        .map(|(k, c)| k.iter().map(|a| a.abs() as f64).sum::<f64>() * c.abs())
        .sum();
    let slack = step * lipschitz;
    let uncertainty = coeffs.terms.len() as f64 * coefficient_uncertainty.max(0.0);
    let mut report = LaurentReport {
        invertible: false,
        symbol_min,
        slack,
        uncertainty,
        grid_points: total,
        inverse_norm: None,
        inverse_terms: 0,
    };
    if symbol_min <= uncertainty || symbol_min <= f64::EPSILON * lipschitz.max(1.0) {
        return Ok(report);
    }
    if symbol_min - slack - uncertainty <= 0.0 {
        return Err(Error::Inconclusive {
            grid_min: symbol_min,
            slack: slack + uncertainty,
        });
    }
    let (norm, terms) = inverse_norm(values, per_axis, dim);
    report.invertible = true;
    report.inverse_norm = Some(norm);
    report.inverse_terms = terms;
    Ok(report)
}

fn multi_index(mut idx: usize, per_axis: usize, dim: usize) -> Vec<usize> {
    let mut out = vec![0; dim];
    for a in (0..dim).rev() {
        out[a] = idx % per_axis;
        idx /= per_axis;
    }
    out
}

/// `sum |d_k|` for `d = DFT(1/p)` over the whole grid, plus the number of
/// coefficients in the `|k|_inf` shells needed to get within `1e-9` of it.
/// Summing every shell matters: inverses of sparse symbols such as
/// `1 - c z^2` vanish on every other shell.
fn inverse_norm(values: Vec<Complex64>, per_axis: usize, dim: usize) -> (f64, usize) {
    let mut data: Vec<Complex64> = values.into_iter().map(|z| 1.0 / z).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(per_axis);
    let total = data.len();
    for axis in 0..dim {
        let stride = per_axis.pow((dim - 1 - axis) as u32);
        let mut line = vec![Complex64::new(0.0, 0.0); per_axis];
        for start in 0..total {
            if (start / stride) % per_axis != 0 {
                continue;
            }
            for j in 0..per_axis {
                line[j] = data[start + j * stride];
            }
            fft.process(&mut line);
            for j in 0..per_axis {
                data[start + j * stride] = line[j];
            }
        }
    }
    let scale = 1.0 / total as f64;
    let half = (per_axis / 2) as i64;
    let mut shells = vec![0.0f64; half as usize + 1];
    let mut counts = vec![0usize; half as usize + 1];
    for (idx, z) in data.iter().enumerate() {
        let shell = multi_index(idx, per_axis, dim)
            .into_iter()
            .map(|j| {
                let k = j as i64;
                if k >= half {
                    per_axis as i64 - k
                } else {
                    k
                }
            })
            .max()
            .unwrap_or(0);
        shells[shell as usize] += z.norm() * scale;
        counts[shell as usize] += 1;
    }
    let sum: f64 = shells.iter().sum();
    let mut tail = sum;
    let mut terms = 0;
    for (s, c) in shells.iter().zip(&counts) {
        if tail <= 1e-9 * sum {
            break;
        }
        tail -= s;
        terms += c;
    }
    (sum, terms)
}
