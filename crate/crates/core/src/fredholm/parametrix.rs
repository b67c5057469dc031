//! Patchwise local inverses glued into a global parametrix.
//!
//! `pinf`/`p0` (`p1` swaps the roles of `phi` and `psi`):
//! * left: `sum phi_i B_i psi_i A = I + T0 - sum_K phi_i` with
//!   `T0 = sum phi_i B_i [psi_i, A]`, so `A_L = (I + T0)^-1 sum phi_i B_i psi_i`
//!   leaves the residual `A_L A - I = -(I + T0)^-1 sum_K phi_i`;
//! * right: `A sum phi_i C_i psi_i = I + T0' - sum_K phi_i` with
//!   `T0' = sum [A, phi_i] C_i psi_i`, so `A_R = sum phi_i C_i psi_i (I + T0')^-1`.

use std::collections::BTreeSet;
use std::sync::Arc;

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::operator::{BandOperator, NormRegime};
use crate::partition::{
    assemble_blocks, build_dual_family, sum_tolerance, build_partition, commutator_assembly, tent_width, DualFamily, Hypothesis,
    PartitionOfUnity, Side,
};
use crate::scalar::{distance_to_f64, Distance, Scalar};
use crate::space::{Space, SupportSet};

#[derive(Debug, Clone)]
pub struct LocalParametrixSet<T> {
    /// `V_i = supp psi_i`.
    pub patches: Vec<Vec<usize>>,
    /// Buffered windows `W_i = N_b(V_i)` (the last one tried for `i` in `K`).
    pub windows: Vec<Vec<usize>>,
    /// `B_i = A_W^-1 P_W` (zero for `i` in `K`).
    pub left_inverses: Vec<BandOperator<T>>,
    /// `C_i = P_W A_W^-1 P_V` (zero for `i` in `K`).
    pub right_inverses: Vec<BandOperator<T>>,
    pub exceptional: BTreeSet<usize>,
    pub buffer_used: Vec<Option<i64>>,
    /// `|A_W^-1|` for accepted patches.
    pub inverse_norms: Vec<Option<f64>>,
    /// `max_i max(|B_i|, |C_i|)` over `i` not in `K`.
    pub norm_bound: f64,
    /// Largest entrywise deviation in `B_i A P_V = P_V = P_V A C_i`.
    pub identity_defect: f64,
}

struct Patch<T> {
    window: Vec<usize>,
    accepted: Option<(i64, f64, BandOperator<T>, BandOperator<T>, f64)>,
}

/// Smallest buffer `b <= max_buffer` with `|A_W^-1| <= m_target` for
/// `W = N_b(V_i)`; patches that never qualify (or whose identities fail to
/// `1e-9`) form the exceptional set `K`.
pub fn local_parametrices<T: Scalar>(
    a: &BandOperator<T>,
    dual: &DualFamily<T>,
    m_target: f64,
    max_buffer: i64,
    regime: NormRegime,
) -> Result<LocalParametrixSet<T>> {
    if !(m_target > 0.0) {
        return Err(Error::InvalidArgument(format!("M_target = {m_target} must be positive")));
    }
    if max_buffer < 0 {
        return Err(Error::InvalidArgument(format!("max_buffer = {max_buffer} must be nonnegative")));
    }
    if !crate::operator::same_space(a.space(), dual.space()) {
        return Err(Error::SpaceMismatch);
    }
    let space = a.space().clone();
    let covered = (0..dual.len()).fold(SupportSet::empty(space.len()), |acc, i| acc.union(&dual.support(i)));
    if covered.count() != space.len() {
        return Err(Error::InvalidArgument("dual family supports do not cover the space".into()));
    }
    let a_norm = a.op_norm(regime).as_f64();
    let patches: Vec<Vec<usize>> = (0..dual.len()).map(|i| dual.support(i).iter().collect()).collect();
    let solved: Vec<Patch<T>> = patches
        .par_iter()
        .map(|v| solve_patch(a, &space, v, m_target, max_buffer, regime, a_norm))
        .collect();
    let mut out = LocalParametrixSet {
        patches,
        windows: Vec::with_capacity(solved.len()),
        left_inverses: Vec::with_capacity(solved.len()),
        right_inverses: Vec::with_capacity(solved.len()),
        exceptional: BTreeSet::new(),
        buffer_used: Vec::with_capacity(solved.len()),
        inverse_norms: Vec::with_capacity(solved.len()),
        norm_bound: 0.0,
        identity_defect: 0.0,
    };
    for (i, p) in solved.into_iter().enumerate() {
        out.windows.push(p.window);
        match p.accepted {
            Some((b, inv_norm, left, right, defect)) => {
                out.norm_bound = out
                    .norm_bound
                    .max(left.op_norm(regime).as_f64())
                    .max(right.op_norm(regime).as_f64());
                out.identity_defect = out.identity_defect.max(defect);
                out.left_inverses.push(left);
                out.right_inverses.push(right);
                out.buffer_used.push(Some(b));
                out.inverse_norms.push(Some(inv_norm));
            }
            None => {
                out.exceptional.insert(i);
                out.left_inverses.push(BandOperator::zero(&space));
                out.right_inverses.push(BandOperator::zero(&space));
                out.buffer_used.push(None);
                out.inverse_norms.push(None);
            }
        }
    }
    if out.exceptional.len() == out.patches.len() {
        return Err(Error::NoInvertiblePatches { max_buffer });
    }
    Ok(out)
}

fn solve_patch<T: Scalar>(
    a: &BandOperator<T>,
    space: &Arc<Space>,
    v: &[usize],
    m_target: f64,
    max_buffer: i64,
    regime: NormRegime,
    a_norm: f64,
) -> Patch<T> {
    let vset = SupportSet::from_indices(space.len(), v.iter().copied());
    let mut window = v.to_vec();
    let mut last_size = 0;
    for b in 0..=max_buffer {
        let wset = space.neighborhood(&vset, Distance::from_integer(b));
        if wset.count() == last_size {
            // window stopped growing (reached the whole space)
            continue;
        }
        last_size = wset.count();
        window = wset.iter().collect();
        let block = a.dense_block(&window, &window);
        let inv = match block.inverse() {
            Ok(inv) => inv,
            Err(_) => continue,
        };
        let inv_norm = inv.norm(regime).as_f64();
        if !inv_norm.is_finite() || inv_norm > m_target {
            continue;
        }
        let vpos: Vec<usize> = window
            .iter()
            .enumerate()
            .filter(|(_, x)| vset.contains(**x))
            .map(|(j, _)| j)
            .collect();
        let defect = identity_defect(&block, &inv, &vpos);
        if defect > 1e-9f64.max(sum_tolerance::<T>() * (1.0 + inv_norm * a_norm)) {
            continue;
        }
        let left = BandOperator::from_dense_block(space, &inv, &window, &window);
        let mut right_block = DenseMatrix::zeros(window.len(), vpos.len());
        for i in 0..window.len() {
            for (c, &j) in vpos.iter().enumerate() {
                right_block[(i, c)] = inv[(i, j)];
            }
        }
        let right = BandOperator::from_dense_block(space, &right_block, &window, v);
        return Patch {
            window,
            accepted: Some((b, inv_norm, left, right, defect)),
        };
    }
    Patch { window, accepted: None }
}

/// Max entrywise deviation of `A_W^-1 A_W P_V` and `P_V A_W A_W^-1` from
/// `P_V`. Since `V` is inside `W`, these equal `B A P_V` and `P_V A C`.
fn identity_defect<T: Scalar>(block: &DenseMatrix<T>, inv: &DenseMatrix<T>, vpos: &[usize]) -> f64 {
    let m = block.rows();
    let mut worst: f64 = 0.0;
    for &c in vpos {
        // column c of inv * block
        for i in 0..m {
            let s: f64 = (0..m).map(|k| inv[(i, k)].as_f64() * block[(k, c)].as_f64()).sum();
            let target = if i == c { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
        // row c of block * inv
        for j in 0..m {
            let s: f64 = (0..m).map(|k| block[(c, k)].as_f64() * inv[(k, j)].as_f64()).sum();
            let target = if j == c { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

/// Invertibility data of one sampled limit operator.
#[derive(Debug, Clone, Serialize)]
pub struct LimitInvertibility {
    pub direction: String,
    pub invertible: Option<bool>,
    pub inverse_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ParametrixConfig {
    pub regime: NormRegime,
    /// `M_target = M (1 + slack)` absorbs rounding in window inverse norms.
    pub m_target_slack: f64,
    pub max_buffer: i64,
    pub neumann_tol: f64,
    pub neumann_max_terms: usize,
    pub residual_tol: f64,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        ParametrixConfig {
            regime: NormRegime::Pinf,
            m_target_slack: 1e-9,
            max_buffer: 8,
            neumann_tol: 1e-12,
            neumann_max_terms: 200,
            residual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DefectPoint {
    /// `|F|`.
    pub size: usize,
    pub aq: f64,
    pub qa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametrixMetrics {
    pub regime: NormRegime,
    /// `sup |Phi^-1|` over the sampled spectrum.
    pub m: f64,
    pub m_target: f64,
    /// `1 / (2 M N |A|)`.
    pub eps: f64,
    /// `N = geometry_profile(prop(A))`.
    pub profile: usize,
    pub a_norm: f64,
    pub propagation: f64,
    /// Scale of the partition: `prop(A)`, or 1 for diagonal operators.
    pub partition_scale: f64,
    pub lipschitz: f64,
    pub tent_width: Option<i64>,
    pub patches: usize,
    pub exceptional: Vec<usize>,
    /// `|supp sum_K phi_i|`.
    pub exceptional_support: usize,
    pub local_norm_bound: f64,
    pub max_buffer_used: i64,
    pub identity_defect: f64,
    pub t0_norm: f64,
    pub t0_bound: f64,
    pub t0_prime_norm: f64,
    pub t0_prime_bound: f64,
    pub neumann_terms: usize,
    pub neumann_terms_prime: usize,
    /// `|(I + T0)^-1|`, at most 2.
    pub inverse_factor_norm: f64,
    pub inverse_factor_prime_norm: f64,
    pub a_l_norm: f64,
    pub a_r_norm: f64,
    /// `|A_L| <= 2 M_target` and `|A_R| <= 2 M_target`.
    pub a_l_within_2m: bool,
    pub a_r_within_2m: bool,
    /// Width of the boundary layer, and of the pad around the exceptional
    /// support, excluded from the residual claim.
    pub boundary_margin: i64,
    /// Residual defects `|R Q_F|`, `|Q_F R|` for growing excluded sets `F`.
    pub left_defect_curve: Vec<DefectPoint>,
    pub right_defect_curve: Vec<DefectPoint>,
    /// `max(aq, qa)` at `F = N_margin(E) ∪ B`.
    pub left_defect: f64,
    pub right_defect: f64,
    pub residual_tol: f64,
    pub residual_ok: bool,
}

#[derive(Debug, Clone)]
pub struct Parametrix<T> {
    pub a_l: BandOperator<T>,
    pub a_r: BandOperator<T>,
    /// `A_L A - I`.
    pub left_residual: BandOperator<T>,
    /// `A A_R - I`.
    pub right_residual: BandOperator<T>,
    pub partition: PartitionOfUnity<T>,
    pub dual: DualFamily<T>,
    pub local: LocalParametrixSet<T>,
    pub metrics: ParametrixMetrics,
}

pub fn assemble_parametrix<T: Scalar>(
    a: &BandOperator<T>,
    spectrum: &[LimitInvertibility],
    config: &ParametrixConfig,
) -> Result<Parametrix<T>> {
    if spectrum.is_empty() {
        return Err(Error::Refused("empty sampled spectrum".into()));
    }
    let mut m: f64 = 0.0;
    for l in spectrum {
        match (l.invertible, l.inverse_norm) {
            (Some(true), Some(norm)) if norm.is_finite() => m = m.max(norm),
            (Some(false), _) => {
                return Err(Error::Refused(format!("limit operator along `{}` is not invertible", l.direction)))
            }
            _ => {
                return Err(Error::Refused(format!(
                    "invertibility of the limit operator along `{}` is undecided",
                    l.direction
                )))
            }
        }
    }
    let regime = config.regime;
    let space = a.space().clone();
    let a_norm = a.op_norm(regime).as_f64();
    if a_norm == 0.0 || m == 0.0 {
        return Err(Error::Refused("zero operator".into()));
    }
    let prop = a.propagation();
    let scale = if prop.is_zero() { Distance::from_integer(1) } else { prop };
    let profile = space.geometry_profile(prop);
    let eps = 1.0 / (2.0 * m * profile as f64 * a_norm);
    let lipschitz = eps / distance_to_f64(&scale);
    let pou: PartitionOfUnity<T> = build_partition(&space, scale, eps)?;
    let dual = build_dual_family(&pou, lipschitz)?;
    let m_target = m * (1.0 + config.m_target_slack);
    let local = local_parametrices(a, &dual, m_target, config.max_buffer, regime)?;
    let skip = Some(&local.exceptional);
    let sup = regime.is_sup();
    let right_hyp = if sup { Hypothesis::Lipschitz } else { Hypothesis::Variation };
    let left_hyp = if sup { Hypothesis::Variation } else { Hypothesis::Lipschitz };
    let t0 = commutator_assembly(&pou, &dual, &local.left_inverses, a, regime, Side::Right, skip, Some(right_hyp))?;
    let t0p = commutator_assembly(&pou, &dual, &local.right_inverses, a, regime, Side::Left, skip, Some(left_hyp))?;
    // T0' = sum [A, w] C w' = -(left assembly)
    let t0p_op = t0p.operator.scale(-T::one());
    let t0_norm = t0.operator.op_norm(regime).as_f64();
    let t0p_norm = t0p_op.op_norm(regime).as_f64();
    let min_window = pou.space().grid_window().map(|_| tent_width(scale, space_dim(&space), eps) + 1);
    for norm in [t0_norm, t0p_norm] {
        if norm > 0.5 {
            return Err(Error::ParametrixTooCoarse {
                norm,
                min_window: min_window.unwrap_or(space.len() as i64),
            });
        }
    }
    let (inv, terms) = neumann_inverse(&t0.operator, regime, config)?;
    let (invp, terms_p) = neumann_inverse(&t0p_op, regime, config)?;
    let g = assemble_blocks(&pou, &dual, &local.left_inverses, regime, skip)?;
    let gp = assemble_blocks(&pou, &dual, &local.right_inverses, regime, skip)?;
    let a_l = inv.multiply(&g)?;
    let a_r = gp.multiply(&invp)?;
    let id = BandOperator::identity(&space);
    let left_residual = a_l.multiply(a)?.sub(&id)?;
    let right_residual = a.multiply(&a_r)?.sub(&id)?;

    let exceptional_set = local
        .exceptional
        .iter()
        .fold(SupportSet::empty(space.len()), |acc, &i| acc.union(&pou.support(i)));
    let max_buffer_used = local.buffer_used.iter().flatten().copied().max().unwrap_or(0);
    let boundary_margin = 2 * (distance_to_f64(&prop).ceil() as i64 + max_buffer_used);
    let (nested, claim) = nested_sets(&space, &exceptional_set, boundary_margin);
    let curve = |r: &BandOperator<T>| -> Vec<DefectPoint> {
        nested
            .iter()
            .map(|f| {
                let d = r.pclass_defect(f, None, regime);
                DefectPoint {
                    size: f.count(),
                    aq: d.aq.as_f64(),
                    qa: d.qa.as_f64(),
                }
            })
            .collect()
    };
    let left_defect_curve = curve(&left_residual);
    let right_defect_curve = curve(&right_residual);
    let at_claim = |c: &[DefectPoint]| c[claim].aq.max(c[claim].qa);
    let left_defect = at_claim(&left_defect_curve);
    let right_defect = at_claim(&right_defect_curve);
    let a_l_norm = a_l.op_norm(regime).as_f64();
    let a_r_norm = a_r.op_norm(regime).as_f64();
    let metrics = ParametrixMetrics {
        regime,
        m,
        m_target,
        eps,
        profile,
        a_norm,
        propagation: distance_to_f64(&prop),
        partition_scale: distance_to_f64(&scale),
        lipschitz,
        tent_width: space.grid_window().map(|g| tent_width(scale, g.dim(), eps)),
        patches: pou.len(),
        exceptional: local.exceptional.iter().copied().collect(),
        exceptional_support: exceptional_set.count(),
        local_norm_bound: local.norm_bound,
        max_buffer_used,
        identity_defect: local.identity_defect,
        t0_norm,
        t0_bound: t0.bound,
        t0_prime_norm: t0p_norm,
        t0_prime_bound: t0p.bound,
        neumann_terms: terms,
        neumann_terms_prime: terms_p,
        inverse_factor_norm: inv.op_norm(regime).as_f64(),
        inverse_factor_prime_norm: invp.op_norm(regime).as_f64(),
        a_l_norm,
        a_r_norm,
        a_l_within_2m: a_l_norm <= 2.0 * m_target,
        a_r_within_2m: a_r_norm <= 2.0 * m_target,
        boundary_margin,
        left_defect_curve,
        right_defect_curve,
        left_defect,
        right_defect,
        residual_tol: config.residual_tol,
        residual_ok: left_defect < config.residual_tol && right_defect < config.residual_tol,
    };
    log::info!(
        "parametrix: eps = {eps:.3e}, N = {profile}, {} patches, |K| = {}, |T0| = {t0_norm:.3e}, |A_L| = {a_l_norm:.6}",
        metrics.patches,
        metrics.exceptional.len()
    );
    Ok(Parametrix {
        a_l,
        a_r,
        left_residual,
        right_residual,
        partition: pou,
        dual,
        local,
        metrics,
    })
}

fn space_dim(space: &Space) -> usize {
    space.grid_window().map_or(1, |g| g.dim())
}

/// `sum_k (-T)^k`, stopping once a term has norm below `neumann_tol`.
fn neumann_inverse<T: Scalar>(
    t: &BandOperator<T>,
    regime: NormRegime,
    config: &ParametrixConfig,
) -> Result<(BandOperator<T>, usize)> {
    let minus_t = t.scale(-T::one());
    let mut acc = BandOperator::identity(t.space());
    let mut term = acc.clone();
    for k in 1..=config.neumann_max_terms {
        term = minus_t.multiply(&term)?;
        if term.op_norm(regime).as_f64() < config.neumann_tol {
            return Ok((acc, k));
        }
        acc = acc.add(&term)?;
    }
    Err(Error::Refused(format!(
        "Neumann series did not reach {} within {} terms",
        config.neumann_tol, config.neumann_max_terms
    )))
}

/// Excluded sets `F_rho = N_rho(E) ∪ B` for `rho = 0, 1, 2, 4, ...` and
/// `rho = margin`, where `B` is the boundary layer of width `margin`. Stops
/// before `F` covers the window. Returns the sets and the position of
/// `F_margin`, on which the residual claim is made.
fn nested_sets(space: &Arc<Space>, exceptional: &SupportSet, margin: i64) -> (Vec<SupportSet>, usize) {
    let n = space.len();
    let boundary = match space.grid_window() {
        Some(g) => SupportSet::from_indices(
            n,
            (0..n).filter(|&i| {
                let c = g.coords(i);
                (0..g.dim()).any(|a| c[a] - g.lo[a] < margin || g.hi[a] - c[a] < margin)
            }),
        ),
        None => SupportSet::empty(n),
    };
    let at = |rho: i64| space.neighborhood(exceptional, Distance::from_integer(rho)).union(&boundary);
    let mut radii = vec![if exceptional.is_empty() { margin } else { 0 }];
    while let Some(&last) = radii.last() {
        let next = if last == 0 { 1 } else { last * 2 };
        if exceptional.is_empty() || at(next).count() >= n {
            break;
        }
        radii.push(next);
    }
    if !radii.contains(&margin) {
        radii.push(margin);
        radii.sort_unstable();
    }
    let claim = radii.iter().position(|&r| r == margin).expect("margin radius is present");
    (radii.into_iter().map(at).collect(), claim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{band_from_offsets, OffsetTerm};
    use crate::partition::build_partition;
    use crate::space::{make_grid_space, MetricKind};

    fn diag(lo: i64, hi: i64, expr: &str) -> BandOperator<f64> {
        let s = make_grid_space(1, &[lo], &[hi], MetricKind::L1).unwrap();
        band_from_offsets(&s, vec![OffsetTerm::parse(vec![0], expr).unwrap()])
            .unwrap()
            .operator
    }

    fn invertible(norm: f64) -> Vec<LimitInvertibility> {
        ["+x0", "-x0"]
            .iter()
            .map(|d| LimitInvertibility {
                direction: d.to_string(),
                invertible: Some(true),
                inverse_norm: Some(norm),
            })
            .collect()
    }

    #[test]
    fn scalar_operator_has_exact_inverse() {
        let a = diag(-20, 20, "2");
        let p = assemble_parametrix(&a, &invertible(0.5), &ParametrixConfig::default()).unwrap();
        let half = BandOperator::identity(a.space()).scale(0.5);
        assert!(p.a_l.max_abs_diff(&half).unwrap() < 1e-12);
        assert!(p.a_r.max_abs_diff(&half).unwrap() < 1e-12);
        assert!(p.left_residual.max_abs_entry() < 1e-12);
        assert!(p.local.exceptional.is_empty());
        assert!((p.local.norm_bound - 0.5).abs() < 1e-12);
    }

    #[test]
    fn local_inverses_satisfy_patch_identities() {
        let a = band_from_offsets::<f64>(
            &make_grid_space(1, &[-30], &[30], MetricKind::L1).unwrap(),
            vec![
                OffsetTerm::parse(vec![0], "4 + 1/(1+x^2)").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
                OffsetTerm::parse(vec![-1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        let pou = build_partition::<f64>(a.space(), Distance::from_integer(1), 0.2).unwrap();
        let dual = build_dual_family(&pou, 0.2).unwrap();
        let set = local_parametrices(&a, &dual, 0.5 + 1e-9, 4, NormRegime::Pinf).unwrap();
        assert!(set.exceptional.is_empty());
        for (i, v) in set.patches.iter().enumerate() {
            let pv = SupportSet::from_indices(a.dim(), v.iter().copied());
            let proj = BandOperator::diagonal(
                a.space(),
                &(0..a.dim()).map(|x| if pv.contains(x) { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
            );
            let bap = set.left_inverses[i].multiply(&a).unwrap().multiply(&proj).unwrap();
            let pac = proj.multiply(&a).unwrap().multiply(&set.right_inverses[i]).unwrap();
            assert!(bap.max_abs_diff(&proj).unwrap() < 1e-9);
            assert!(pac.max_abs_diff(&proj).unwrap() < 1e-9);
        }
    }

    #[test]
    fn vanishing_coefficient_creates_exceptional_patches() {
        let a = diag(-40, 40, "x/(1+abs(x))");
        let pou = build_partition::<f64>(a.space(), Distance::from_integer(1), 0.5).unwrap();
        let dual = build_dual_family(&pou, 0.5).unwrap();
        let set = local_parametrices(&a, &dual, 1.0 + 1e-9 + 0.1, 2, NormRegime::Pinf).unwrap();
        assert!(!set.exceptional.is_empty());
        for &i in &set.exceptional {
            let origin = a.space().index_of_coords(&[0]).unwrap();
            // every exceptional patch sees a tiny coefficient
            assert!(set.patches[i].iter().any(|&x| (x as i64 - origin as i64).abs() <= 10));
        }
        let none = local_parametrices(&a, &dual, 1e-3, 2, NormRegime::Pinf);
        assert!(matches!(none, Err(Error::NoInvertiblePatches { max_buffer: 2 })));
    }

    #[test]
    fn exceptional_residual_is_compact() {
        // a = 0 on [-2, 2], 2 elsewhere: limits 2I, local inverses fail near 0
        let a = diag(-60, 60, "2 * min(1, max(0, abs(x) - 2))");
        let p = assemble_parametrix(&a, &invertible(0.5), &ParametrixConfig::default()).unwrap();
        assert!(!p.local.exceptional.is_empty());
        assert!(p.metrics.residual_ok, "{:?}", p.metrics.left_defect_curve);
        // residual columns sit inside the exceptional support
        let e = p.metrics.exceptional_support;
        assert!(e > 0);
        let curve = &p.metrics.left_defect_curve;
        assert!(curve.last().unwrap().aq < 1e-12);
        assert!(curve.last().unwrap().qa < 1e-12);
    }

    #[test]
    fn banded_residual_vanishes_away_from_patches_and_boundary() {
        let s = make_grid_space(1, &[-150], &[150], MetricKind::L1).unwrap();
        let terms = [(0, "3 + tanh(x0/4)"), (1, "0.5"), (-2, "0.25/(1+x0^2)")];
        let a: BandOperator<f64> = band_from_offsets(
            &s,
            terms.iter().map(|(k, e)| OffsetTerm::parse(vec![*k], e).unwrap()).collect(),
        )
        .unwrap()
        .operator;
        for regime in [NormRegime::P1, NormRegime::Pinf] {
            let config = ParametrixConfig {
                regime,
                ..ParametrixConfig::default()
            };
            let p = assemble_parametrix(&a, &invertible(1.0 / 1.5), &config).unwrap();
            assert!(!p.local.exceptional.is_empty());
            assert!(p.metrics.residual_ok, "{:?}", p.metrics.left_defect_curve);
            // the residual itself is not small; only its part away from E and B is
            let whole = p.left_residual.pclass_defect(&SupportSet::empty(s.len()), None, regime);
            assert!(whole.aq.max(whole.qa) > p.metrics.residual_tol);
        }
    }

    #[test]
    fn refuses_without_invertible_spectrum() {
        let a = diag(-10, 10, "1/(1+abs(x))");
        let spectrum = vec![LimitInvertibility {
            direction: "+x0".into(),
            invertible: Some(false),
            inverse_norm: None,
        }];
        assert!(matches!(
            assemble_parametrix(&a, &spectrum, &ParametrixConfig::default()),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn tridiagonal_parametrix_in_both_regimes() {
        let s = make_grid_space(1, &[-80], &[80], MetricKind::L1).unwrap();
        let a = band_from_offsets::<f64>(
            &s,
            vec![
                OffsetTerm::parse(vec![0], "4 + 1/(1+x^2)").unwrap(),
                OffsetTerm::parse(vec![1], "-1").unwrap(),
                OffsetTerm::parse(vec![-1], "-1").unwrap(),
            ],
        )
        .unwrap()
        .operator;
        for regime in [NormRegime::Pinf, NormRegime::P1] {
            let config = ParametrixConfig {
                regime,
                ..Default::default()
            };
            let p = assemble_parametrix(&a, &invertible(0.5), &config).unwrap();
            assert!(p.metrics.t0_norm <= 0.5);
            assert!(p.metrics.t0_norm <= p.metrics.t0_bound + 1e-12);
            assert!(p.metrics.a_l_norm <= 1.0);
            assert!(p.metrics.a_r_norm <= 1.0);
            assert!(p.metrics.residual_ok);
        }
    }
}
