//! Desk-scale Fredholm consistency check: sampled limit operators, their
//! invertibility, a parametrix witness, and finite-section corroboration.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::laurent::{laurent_coefficients, laurent_invertibility};
use super::lower_norm::{localization_radius, lower_norm, restricted_lower_norm, LowerNormMethod};
use super::parametrix::{assemble_parametrix, LimitInvertibility, ParametrixConfig, ParametrixMetrics};
use crate::error::{Error, Result};
use crate::limits::{centered_window, spectrum_sample, DirectionSequence, LimitOperatorResult, Tail};
use crate::operator::{BandOperator, NormRegime};
use crate::scalar::{distance_to_f64, Scalar};
use crate::space::{Space, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    ConsistentWithFredholm,
    NotFredholm,
    Inconclusive,
}

/// Strength of an invertibility claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    /// Symbol certification of a constant-coefficient limit.
    Certified,
    /// Lower norms of growing truncations.
    Heuristic,
    Undecided,
}

#[derive(Debug, Clone)]
pub struct VerdictConfig {
    pub regime: NormRegime,
    pub directions: Vec<DirectionSequence>,
    pub tail_first: u64,
    pub tail_last: u64,
    pub tail_samples: usize,
    pub richness_tol: f64,
    /// Radius of the centred reference window carrying limit operators;
    /// `None` uses `min(half extent, 32)`.
    pub reference_radius: Option<i64>,
    pub parametrix: ParametrixConfig,
    pub bounded_below_tol: f64,
    /// Radii of centred finite sections; empty uses doubling radii from 4 up
    /// to `min(half extent, 128)`.
    pub section_radii: Vec<i64>,
    /// `delta` of the lower-norm localization cross-check.
    pub delta: f64,
    /// Truncation lower norms at or below this count as vanishing.
    pub heuristic_tol: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        VerdictConfig {
            regime: NormRegime::Pinf,
            directions: Vec::new(),
            tail_first: 1_000_000,
            tail_last: 10_000_000,
            tail_samples: 8,
            richness_tol: 1e-6,
            reference_radius: None,
            parametrix: ParametrixConfig::default(),
            bounded_below_tol: 1e-6,
            section_radii: Vec::new(),
            delta: 0.4,
            heuristic_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitVerdict {
    pub direction: String,
    pub aliases: Vec<String>,
    pub rich: bool,
    pub cauchy_residual: f64,
    pub invertible: Option<bool>,
    pub evidence: Evidence,
    pub symbol_min: Option<f64>,
    pub inverse_norm: Option<f64>,
    /// Lower norm on the reference window.
    pub lower_norm: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizationCheck {
    pub direction: String,
    pub delta: f64,
    pub s: f64,
    pub nu: f64,
    pub nu_s: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumInfimum {
    pub inf_value: f64,
    pub attaining_index: usize,
    pub attaining_direction: String,
    pub values: Vec<f64>,
    pub localization: Vec<LocalizationCheck>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedBelowCheck {
    pub direction: String,
    pub nu: f64,
    /// `1 / |A_R|`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionPoint {
    pub radius: i64,
    pub size: usize,
    pub nu: f64,
    pub method: LowerNormMethod,
}

/// Which equivalent conditions the run could check.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Checklist {
    pub limits_invertible: Option<bool>,
    pub inverses_uniformly_bounded: Option<bool>,
    pub limits_bounded_below: Option<bool>,
    pub parametrix_exists: Option<bool>,
    pub residuals_compact: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FredholmReport {
    pub verdict: Verdict,
    pub regime: NormRegime,
    pub spectrum_rich: bool,
    pub limits: Vec<LimitVerdict>,
    /// `sup |Phi^-1|` over the sampled spectrum.
    pub uniform_inverse_bound: Option<f64>,
    pub lower_norm_infimum: Option<SpectrumInfimum>,
    pub parametrix: Option<ParametrixMetrics>,
    pub parametrix_error: Option<String>,
    pub bounded_below: Vec<BoundedBelowCheck>,
    pub finite_sections: Vec<SectionPoint>,
    pub checklist: Checklist,
    pub caveats: Vec<String>,
}

impl FredholmReport {
    fn inconclusive(regime: NormRegime, caveat: String) -> Self {
        FredholmReport {
            verdict: Verdict::Inconclusive,
            regime,
            spectrum_rich: false,
            limits: Vec::new(),
            uniform_inverse_bound: None,
            lower_norm_infimum: None,
            parametrix: None,
            parametrix_error: None,
            bounded_below: Vec::new(),
            finite_sections: Vec::new(),
            checklist: Checklist::default(),
            caveats: vec![caveat],
        }
    }
}

fn reference_window(space: &Space, radius: Option<i64>) -> Result<Arc<Space>> {
    let g = space.grid_window().ok_or(Error::NotAGrid)?;
    let half = (0..g.dim()).map(|a| g.extent(a) / 2).min().unwrap_or(0);
    centered_window(space, radius.unwrap_or(32).min(half))
}

/// Lower norm of a limit operator over its whole reference window.
fn window_lower_norm<T: Scalar>(phi: &BandOperator<T>, regime: NormRegime) -> Result<f64> {
    Ok(lower_norm(phi, &SupportSet::full(phi.dim()), regime)?.value)
}

/// Minimum lower norm over sampled limit operators, with the localization
/// cross-check `nu_s <= nu + delta` at `s = localization_radius(delta, ...)`.
pub fn spectrum_lower_norm_infimum<T: Scalar>(
    spectrum: &[LimitOperatorResult<T>],
    regime: NormRegime,
    delta: f64,
) -> Result<SpectrumInfimum> {
    if spectrum.is_empty() {
        return Err(Error::InvalidArgument("empty sampled spectrum".into()));
    }
    let rows: Vec<(f64, LocalizationCheck)> = spectrum
        .par_iter()
        .map(|member| {
            let phi = &member.operator;
            let full = SupportSet::full(phi.dim());
            let nu = lower_norm(phi, &full, regime)?.value;
            let r = phi.propagation();
            let s = localization_radius(
                delta,
                phi.op_norm(regime).as_f64(),
                distance_to_f64(&r),
                phi.space().geometry_profile(r),
            )?;
            let nu_s = restricted_lower_norm(phi, &full, s, regime)?.value;
            Ok((
                nu,
                LocalizationCheck {
                    direction: member.direction.clone(),
                    delta,
                    s,
                    nu,
                    nu_s,
                    holds: nu_s <= nu + delta && nu_s >= nu - 1e-9,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let attaining_index = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v < values[best] { i } else { best });
    Ok(SpectrumInfimum {
        inf_value: values[attaining_index],
        attaining_index,
        attaining_direction: spectrum[attaining_index].direction.clone(),
        values,
        localization: rows.into_iter().map(|r| r.1).collect(),
    })
}

/// Invertibility of one limit operator: symbol certification when its
/// coefficients are constant, truncation lower norms otherwise.
pub fn classify_limit<T: Scalar>(member: &LimitOperatorResult<T>, config: &VerdictConfig) -> LimitVerdict {
    let mut out = LimitVerdict {
        direction: member.direction.clone(),
        aliases: member.aliases.clone(),
        rich: member.rich,
        cauchy_residual: member.cauchy_residual,
        invertible: None,
        evidence: Evidence::Undecided,
        symbol_min: None,
        inverse_norm: None,
        lower_norm: window_lower_norm(&member.operator, config.regime).ok(),
        note: None,
    };
    match laurent_coefficients(&member.operator, config.richness_tol) {
        Ok(coeffs) => match laurent_invertibility(&coeffs, member.cauchy_residual) {
            Ok(rep) => {
                out.invertible = Some(rep.invertible);
                out.evidence = Evidence::Certified;
                out.symbol_min = Some(rep.symbol_min);
                out.inverse_norm = rep.inverse_norm;
            }
            Err(e) => out.note = Some(e.to_string()),
        },
        Err(Error::NotConstantCoefficient { .. }) => truncation_heuristic(member, config, &mut out),
        Err(e) => out.note = Some(e.to_string()),
    }
    out
}

fn truncation_heuristic<T: Scalar>(member: &LimitOperatorResult<T>, config: &VerdictConfig, out: &mut LimitVerdict) {
    let phi = &member.operator;
    let Some(g) = phi.space().grid_window() else {
        out.note = Some("limit operator is not on a grid window".into());
        return;
    };
    let half = (0..g.dim()).map(|a| g.extent(a) / 2).min().unwrap_or(0);
    let mut radii = Vec::new();
    let mut r = 4;
    while r < half {
        radii.push(r);
        r *= 2;
    }
    radii.push(half);
    let nus: Vec<f64> = radii
        .iter()
        .filter_map(|&r| {
            let w = centered_window(phi.space(), r).ok()?;
            let sec = phi.section(&w).ok()?;
            window_lower_norm(&sec, config.regime).ok()
        })
        .collect();
    out.evidence = Evidence::Heuristic;
    if nus.len() < 2 {
        out.note = Some("reference window too small for truncation stabilization".into());
        return;
    }
    let last = nus[nus.len() - 1];
    let prev = nus[nus.len() - 2];
    if last <= config.heuristic_tol {
        out.invertible = Some(false);
        out.note = Some(format!("truncation lower norms {nus:?} vanish"));
    } else if (last - prev).abs() <= 1e-2 * last {
        out.invertible = Some(true);
        out.inverse_norm = Some(1.0 / last);
        out.note = Some(format!("truncation lower norms {nus:?} stabilize"));
    } else {
        out.note = Some(format!("truncation lower norms {nus:?} have not stabilized"));
    }
}

fn section_curve<T: Scalar>(a: &BandOperator<T>, config: &VerdictConfig) -> Vec<SectionPoint> {
    let Some(g) = a.space().grid_window() else {
        return Vec::new();
    };
    let half = (0..g.dim()).map(|ax| g.extent(ax) / 2).min().unwrap_or(0);
    let radii: Vec<i64> = if config.section_radii.is_empty() {
        let cap = half.min(128);
        let mut v = Vec::new();
        let mut r = 4;
        while r <= cap {
            v.push(r);
            r *= 2;
        }
        v
    } else {
        config.section_radii.iter().copied().filter(|&r| r <= half).collect()
    };
    radii
        .par_iter()
        .filter_map(|&r| {
            let w = centered_window(a.space(), r).ok()?;
            let sec = a.section(&w).ok()?;
            let res = lower_norm(&sec, &SupportSet::full(sec.dim()), config.regime).ok()?;
            Some(SectionPoint {
                radius: r,
                size: sec.dim(),
                nu: res.value,
                method: res.method,
            })
        })
        .collect()
}

/// Runs the full pipeline. Never fails: anything undecidable yields an
/// `Inconclusive` verdict with caveats.
pub fn fredholm_verdict<T: Scalar>(a: &BandOperator<T>, config: &VerdictConfig) -> FredholmReport {
    let regime = config.regime;
    if a.source().is_none() {
        return FredholmReport::inconclusive(regime, "operator has no symbolic coefficient source".into());
    }
    if config.directions.is_empty() {
        return FredholmReport::inconclusive(regime, "no directions configured".into());
    }
    let refwin = match reference_window(a.space(), config.reference_radius) {
        Ok(w) => w,
        Err(e) => return FredholmReport::inconclusive(regime, format!("reference window: {e}")),
    };
    let tail = |d: &DirectionSequence| -> Tail { d.default_tail(config.tail_first, config.tail_last, config.tail_samples) };
    let sample = match spectrum_sample(a, &config.directions, &tail, config.richness_tol, Some(&refwin)) {
        Ok(s) => s,
        Err(e) => return FredholmReport::inconclusive(regime, format!("limit operators: {e}")),
    };
    let mut caveats = vec![
        format!(
            "operator spectrum sampled along {} direction(s) only",
            config.directions.len()
        ),
        format!(
            "limit operators represented on a reference window of {} points",
            refwin.len()
        ),
        "residual defects and norms are measured on a finite window".to_string(),
    ];
    let limits: Vec<LimitVerdict> = sample.members.par_iter().map(|m| classify_limit(m, config)).collect();
    let lower_norm_infimum = match spectrum_lower_norm_infimum(&sample.members, regime, config.delta) {
        Ok(inf) => Some(inf),
        Err(e) => {
            caveats.push(format!("lower-norm infimum unavailable: {e}"));
            None
        }
    };
    let finite_sections = section_curve(a, config);
    let mut checklist = Checklist {
        limits_bounded_below: lower_norm_infimum
            .as_ref()
            .map(|inf| inf.inf_value > config.heuristic_tol),
        ..Default::default()
    };
    let mut report = FredholmReport {
        verdict: Verdict::Inconclusive,
        regime,
        spectrum_rich: sample.rich,
        limits,
        uniform_inverse_bound: None,
        lower_norm_infimum,
        parametrix: None,
        parametrix_error: None,
        bounded_below: Vec::new(),
        finite_sections,
        checklist: Checklist::default(),
        caveats,
    };
    for l in report.limits.iter().filter(|l| !l.rich) {
        report.caveats.push(format!(
            "direction `{}` is not rich (Cauchy residual {:e})",
            l.direction, l.cauchy_residual
        ));
    }
    if !sample.rich {
        report.checklist = checklist;
        return report;
    }
    let certified_failure = report
        .limits
        .iter()
        .find(|l| l.invertible == Some(false) && l.evidence == Evidence::Certified);
    if let Some(l) = certified_failure {
        report.caveats.push(format!("limit operator along `{}` is not invertible", l.direction));
        checklist.limits_invertible = Some(false);
        report.checklist = checklist;
        report.verdict = Verdict::NotFredholm;
        return report;
    }
    for l in &report.limits {
        match (l.invertible, l.evidence) {
            (Some(false), _) => report.caveats.push(format!(
                "limit operator along `{}` appears singular (heuristic only)",
                l.direction
            )),
            (None, _) => report.caveats.push(format!(
                "invertibility along `{}` undecided{}",
                l.direction,
                l.note.as_ref().map(|n| format!(": {n}")).unwrap_or_default()
            )),
            (Some(true), Evidence::Heuristic) => report.caveats.push(format!(
                "invertibility along `{}` is heuristic",
                l.direction
            )),
            _ => {}
        }
    }
    if report.limits.iter().any(|l| l.invertible != Some(true)) {
        report.checklist = checklist;
        return report;
    }
    checklist.limits_invertible = Some(true);
    let m = report
        .limits
        .iter()
        .filter_map(|l| l.inverse_norm)
        .fold(0.0, f64::max);
    report.uniform_inverse_bound = Some(m);
    checklist.inverses_uniformly_bounded = Some(m.is_finite());
    let inv: Vec<LimitInvertibility> = report
        .limits
        .iter()
        .map(|l| LimitInvertibility {
            direction: l.direction.clone(),
            invertible: l.invertible,
            inverse_norm: l.inverse_norm,
        })
        .collect();
    let pconfig = ParametrixConfig {
        regime,
        ..config.parametrix.clone()
    };
    match assemble_parametrix(a, &inv, &pconfig) {
        Ok(p) => {
            let bound = 1.0 / p.metrics.a_r_norm;
            report.bounded_below = report
                .limits
                .iter()
                .filter_map(|l| {
                    l.lower_norm.map(|nu| BoundedBelowCheck {
                        direction: l.direction.clone(),
                        nu,
                        bound,
                        holds: nu >= bound - config.bounded_below_tol,
                    })
                })
                .collect();
            checklist.parametrix_exists = Some(true);
            checklist.residuals_compact = Some(p.metrics.residual_ok);
            let ok = p.metrics.residual_ok;
            report.parametrix = Some(p.metrics);
            report.verdict = if ok {
                Verdict::ConsistentWithFredholm
            } else {
                report
                    .caveats
                    .push("parametrix residual defect exceeds tolerance on the largest tested set".into());
                Verdict::Inconclusive
            };
        }
        Err(e) => {
            report.parametrix_error = Some(e.to_string());
            report.caveats.push(format!("parametrix construction failed: {e}"));
        }
    }
    report.checklist = checklist;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{band_from_offsets, OffsetTerm};
    use crate::space::{make_grid_space, MetricKind};

    fn op(lo: i64, hi: i64, terms: &[(i64, &str)]) -> BandOperator<f64> {
        let s = make_grid_space(1, &[lo], &[hi], MetricKind::L1).unwrap();
        band_from_offsets(
            &s,
            terms.iter().map(|(k, e)| OffsetTerm::parse(vec![*k], e).unwrap()).collect(),
        )
        .unwrap()
        .operator
    }

    fn config() -> VerdictConfig {
        VerdictConfig {
            directions: DirectionSequence::coordinate_rays(1),
            ..Default::default()
        }
    }

    #[test]
    fn decaying_perturbation_of_scalar_is_consistent() {
        let a = op(-200, 200, &[(0, "2 + 1/(1+x^2)")]);
        let r = fredholm_verdict(&a, &config());
        assert_eq!(r.verdict, Verdict::ConsistentWithFredholm, "{:?}", r.caveats);
        assert!((r.uniform_inverse_bound.unwrap() - 0.5).abs() < 1e-9);
        assert!(r.parametrix.as_ref().unwrap().left_defect < 1e-9);
        assert_eq!(r.limits.len(), 1);
        assert_eq!(r.limits[0].aliases.len(), 1);
    }

    #[test]
    fn decaying_diagonal_is_not_fredholm() {
        let a = op(-200, 200, &[(0, "1/(1+abs(x))")]);
        let r = fredholm_verdict(&a, &config());
        assert_eq!(r.verdict, Verdict::NotFredholm, "{:?}", r.caveats);
        let nus: Vec<f64> = r.finite_sections.iter().map(|p| p.nu).collect();
        assert!(nus.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn backward_difference_is_not_fredholm() {
        let a = op(-200, 200, &[(0, "1"), (1, "-1")]);
        let r = fredholm_verdict(&a, &config());
        assert_eq!(r.verdict, Verdict::NotFredholm);
        let nus: Vec<f64> = r.finite_sections.iter().map(|p| p.nu).collect();
        assert!(nus.windows(2).all(|w| w[1] < w[0]));
        assert!(nus.last().unwrap() < &0.01);
    }

    #[test]
    fn missing_directions_are_inconclusive() {
        let a = op(-20, 20, &[(0, "2")]);
        let r = fredholm_verdict(&a, &VerdictConfig::default());
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(!r.caveats.is_empty());
    }

    #[test]
    fn infimum_examples() {
        let s = make_grid_space(1, &[-30], &[30], MetricKind::L1).unwrap();
        let wrap = |operator: BandOperator<f64>, label: &str| LimitOperatorResult {
            operator,
            rich: true,
            cauchy_residual: 0.0,
            tol: 1e-6,
            direction: label.into(),
            aliases: vec![],
            tail: vec![],
            translate_norms: [0.0; 2],
        };
        let id = BandOperator::<f64>::identity(&s);
        let shift = BandOperator::shift(&s, &[1]).unwrap();
        let spectrum = vec![
            wrap(id.sub(&shift.scale(0.5)).unwrap(), "a"),
            wrap(id.scale(2.0), "b"),
        ];
        let inf = spectrum_lower_norm_infimum(&spectrum, NormRegime::Pinf, 0.4).unwrap();
        assert_eq!(inf.attaining_index, 0);
        assert!((inf.inf_value - 0.5).abs() < 1e-3);
        assert!(inf.localization.iter().all(|c| c.holds));
        assert!(spectrum_lower_norm_infimum::<f64>(&[], NormRegime::Pinf, 0.4).is_err());
    }
}
