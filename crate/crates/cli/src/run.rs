//! Runs the configured analyses and collects the report and CSV side files.
//! Analyses are independent: a failure is recorded and the run continues.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Map, Value};

use limitop::fredholm::{
    assemble_parametrix, classify_limit, fredholm_verdict, localization_radius, lower_norm_with,
    restricted_lower_norm_with, DefectPoint, Evidence, LimitInvertibility, LowerNormMethod, LowerNormOptions,
    ParametrixConfig, VerdictConfig,
};
use limitop::limits::{centered_window, spectrum_sample, DirectionSequence, SpectrumSample};
use limitop::operator::reconstruct;
use limitop::partition::{build_partition, smooth};
use limitop::quasilocal::{band_commutator_certificate, commutator, ql_extremizer, ql_modulus_detail};
use limitop::scalar::{distance_to_f64, parse_distance};
use limitop::space::SpaceKind;
use limitop::{band_from_offsets, Distance, NormRegime, OffsetTerm, Operator, Space, SupportSet};

use crate::config::{AnalysisConfig, OperatorSpec, SpaceSpec};
use crate::report::{claim, fmt_num, num, render_json, tagged, to_value, Tag, Table, SIGNIFICANT_DIGITS};

/// The space or operator could not be built from the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupError(pub String);

impl fmt::Display for SetupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SetupError {}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Value,
    /// File name to table.
    pub tables: BTreeMap<String, Table>,
    /// Raw side files (limit operators in coordinate-list form).
    pub files: BTreeMap<String, Vec<u8>>,
    /// Failed internal checks; a nonempty list means exit code 3.
    pub violations: Vec<String>,
}

impl RunOutput {
    /// Writes `report.json` and every side file into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), render_json(&self.report))?;
        for (name, t) in &self.tables {
            t.write(&dir.join(name))?;
        }
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    config: &'a AnalysisConfig,
    space: Arc<Space>,
    a: Operator,
    tables: BTreeMap<String, Table>,
    files: BTreeMap<String, Vec<u8>>,
    violations: Vec<String>,
}

impl Ctx<'_> {
    fn violation(&mut self, analysis: &str, msg: impl fmt::Display) {
        self.violations.push(format!("{analysis}: {msg}"));
    }
}

type Outcome = std::result::Result<Value, String>;

pub fn build_space(section: &SpaceSpec) -> Result<Arc<Space>, SetupError> {
    let err = |e: limitop::Error| SetupError(format!("space: {e}"));
    match section {
        SpaceSpec::Grid { dim, lo, hi, metric } => Space::grid(*dim, lo, hi, *metric).map_err(err),
        SpaceSpec::Table { labels, distances } => {
            let mut parsed = Vec::with_capacity(distances.len());
            for (i, row) in distances.iter().enumerate() {
                let mut r = Vec::with_capacity(row.len());
                for (j, d) in row.iter().enumerate() {
                    r.push(parse_distance(d).ok_or_else(|| {
                        SetupError(format!("space.distances[{i}][{j}]: `{d}` is not a rational distance"))
                    })?);
                }
                parsed.push(r);
            }
            Space::from_table(labels.clone(), parsed).map_err(err)
        }
        SpaceSpec::TableCsv { path } => {
            let f = File::open(path).map_err(|e| SetupError(format!("space.csv: {}: {e}", path.display())))?;
            Space::from_distance_csv(f).map_err(err)
        }
    }
}

pub fn build_operator(section: &OperatorSpec, space: &Arc<Space>) -> Result<(Operator, Vec<String>), SetupError> {
    let err = |e: limitop::Error| SetupError(format!("operator: {e}"));
    match section {
        OperatorSpec::Terms(terms) => {
            let parsed = terms
                .iter()
                .map(|t| OffsetTerm::parse(t.offset.clone(), &t.coefficient))
                .collect::<limitop::Result<Vec<_>>>()
                .map_err(err)?;
            let built = band_from_offsets::<f64>(space, parsed).map_err(err)?;
            Ok((built.operator, built.warnings))
        }
        OperatorSpec::Coo(path) => {
            let f = File::open(path).map_err(|e| SetupError(format!("operator.coo: {}: {e}", path.display())))?;
            Ok((Operator::from_coo_csv(space, f).map_err(err)?, Vec::new()))
        }
    }
}

/// Runs every requested analysis in the canonical order.
pub fn run(config: &AnalysisConfig) -> Result<RunOutput, SetupError> {
    let space = build_space(&config.space)?;
    let (a, warnings) = build_operator(&config.operator, &space)?;
    let mut ctx = Ctx {
        config,
        space,
        a,
        tables: BTreeMap::new(),
        files: BTreeMap::new(),
        violations: Vec::new(),
    };

    let mut analyses = Map::new();
    for name in crate::config::ANALYSES {
        if !config.wants(name) {
            continue;
        }
        log::info!("running {name}");
        let outcome = match name {
            "norms" => norms(&mut ctx),
            "decompose" => decompose(&mut ctx),
            "quasilocality" => quasilocality(&mut ctx),
            "smoothing" => smoothing(&mut ctx),
            "limits" => limits(&mut ctx),
            "lower-norms" => lower_norms(&mut ctx),
            "parametrix" => parametrix(&mut ctx),
            "fredholm" => fredholm(&mut ctx),
            _ => unreachable!("validated analysis name"),
        };
        let entry = match outcome {
            Ok(v) => json!({"status": "ok", "result": v}),
            Err(e) => {
                log::warn!("{name} failed: {e}");
                json!({"status": "error", "error": e})
            }
        };
        analyses.insert(name.to_string(), entry);
    }

    let a = &ctx.a;
    let report = json!({
        "tool": {"name": "limitop", "version": env!("CARGO_PKG_VERSION")},
        "seed": config.seed,
        "precision_significant_digits": SIGNIFICANT_DIGITS,
        "config": to_value(config),
        "space": space_summary(&ctx.space),
        "operator": {
            "nnz": a.nnz(),
            "propagation": a.propagation().to_string(),
            "symbolic": a.source().is_some(),
            "warnings": warnings,
        },
        "analyses": Value::Object(analyses),
        "invariant_violations": ctx.violations,
    });
    Ok(RunOutput {
        report,
        tables: ctx.tables,
        files: ctx.files,
        violations: ctx.violations,
    })
}

fn space_summary(space: &Space) -> Value {
    match space.kind() {
        SpaceKind::Grid(g) => json!({
            "kind": "grid",
            "points": space.len(),
            "dim": g.dim(),
        }),
        SpaceKind::Table { .. } => json!({"kind": "table", "points": space.len()}),
    }
}

fn regimes() -> [NormRegime; 3] {
    [NormRegime::P1, NormRegime::Pinf, NormRegime::P0]
}

fn norms(ctx: &mut Ctx) -> Outcome {
    let a = &ctx.a;
    let mut out = Map::new();
    for r in regimes() {
        out.insert(format!("op_norm_{}", r.name()), claim(a.op_norm(r), Tag::Exact));
    }
    let p1 = a.op_norm(NormRegime::P1);
    let dual = a.adjoint().op_norm(NormRegime::Pinf);
    out.insert("adjoint_op_norm_pinf".into(), claim(dual, Tag::Exact));
    out.insert("max_abs_entry".into(), claim(a.max_abs_entry(), Tag::Exact));
    if p1 != dual {
        ctx.violation("norms", format!("|A|_1 = {p1} differs from |A^T|_inf = {dual}"));
    }
    Ok(Value::Object(out))
}

fn decompose(ctx: &mut Ctx) -> Outcome {
    let a = &ctx.a;
    let space = &ctx.space;
    let terms = a.decompose_band();
    let rebuilt = reconstruct(space, &terms).map_err(|e| e.to_string())?;
    let error = rebuilt.max_abs_diff(a).map_err(|e| e.to_string())?;
    let profile = space.geometry_profile(a.propagation());
    let (bound, bound_kind) = match space.kind() {
        SpaceKind::Grid(_) => (profile, "geometry_profile(prop(A))"),
        SpaceKind::Table { .. } => ((2 * profile).saturating_sub(1), "2 geometry_profile(prop(A)) - 1"),
    };
    let mut table = Table::new(&["term", "offset", "pairs", "multiplier_sup", "displacement", "injective"]);
    for (i, t) in terms.iter().enumerate() {
        let offset = t
            .offset
            .as_ref()
            .map(|o| o.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        table.push(vec![
            i.to_string(),
            offset,
            t.translation.len().to_string(),
            fmt_num(t.multiplier_sup()),
            t.displacement(space).to_string(),
            t.is_injective().to_string(),
        ]);
    }
    ctx.tables.insert("decomposition.csv".into(), table);
    let term_count = terms.len();
    if error > 1e-12 {
        ctx.violation("decompose", format!("reconstruction error {error:e} exceeds 1e-12"));
    }
    if term_count > bound {
        ctx.violation("decompose", format!("{term_count} terms exceed the bound {bound}"));
    }
    if let Some(i) = terms.iter().position(|t| !t.is_injective()) {
        ctx.violation("decompose", format!("term {i} is not a partial translation"));
    }
    Ok(json!({
        "terms": term_count,
        "term_bound": bound,
        "term_bound_kind": bound_kind,
        "reconstruction_error": claim(error, Tag::Exact),
        "csv": "decomposition.csv",
    }))
}

fn quasilocality(ctx: &mut Ctx) -> Outcome {
    let section = ctx.config.quasilocality.clone().expect("validated");
    let regime = ctx.config.regime;
    let mut table = Table::new(&["lipschitz", "modulus", "extremizer_commutator_norm"]);
    let mut curve = Vec::new();
    let mut failures = Vec::new();
    for &l in &section.lipschitz {
        let q = ql_modulus_detail(&ctx.a, l, regime);
        let attained = match ql_extremizer(&ctx.a, l, regime) {
            Some(f) => commutator(&ctx.a, f.values()).map_err(|e| e.to_string())?.op_norm(regime),
            None => 0.0,
        };
        if (attained - q.value).abs() > 1e-9 * q.value.max(1.0) {
            failures.push(format!("extremizer at L = {l} gives {attained}, modulus is {}", q.value));
        }
        table.push(vec![fmt_num(l), fmt_num(q.value), fmt_num(attained)]);
        curve.push(json!({
            "lipschitz": num(l),
            "modulus": claim(q.value, Tag::Exact),
            "extremizer_commutator_norm": claim(attained, Tag::Exact),
        }));
    }
    for f in failures {
        ctx.violation("quasilocality", f);
    }
    ctx.tables.insert("ql_curve.csv".into(), table);
    let certificate = match band_commutator_certificate(&ctx.a, section.eps, regime) {
        Ok(c) => {
            let mut v = tagged(&c, Tag::Certified);
            v["lipschitz"] = num(c.lipschitz);
            v
        }
        Err(e) => {
            ctx.violation("quasilocality", &e);
            json!({"error": e.to_string()})
        }
    };
    Ok(json!({
        "regime": regime,
        "curve": curve,
        "commutator_certificate": certificate,
        "csv": "ql_curve.csv",
    }))
}

fn smoothing(ctx: &mut Ctx) -> Outcome {
    let section = ctx.config.smoothing.clone().expect("validated");
    let regime = ctx.config.regime;
    let a = &ctx.a;
    let prop = a.propagation();
    let r = if prop > Distance::from_integer(0) { prop } else { Distance::from_integer(1) };
    let pou = build_partition::<f64>(&ctx.space, r, section.partition_eps).map_err(|e| e.to_string())?;
    let a_norm = a.op_norm(regime);
    let profile = ctx.space.geometry_profile(prop);
    let rf = distance_to_f64(&prop);
    let mut ns = section.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut table = Table::new(&["n", "distance", "bound", "smoothed_norm"]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut previous: Option<f64> = None;
    for &n in &ns {
        let m = smooth(a, n, regime, &pou).map_err(|e| e.to_string())?;
        let dist = m.sub(a).map_err(|e| e.to_string())?.op_norm(regime);
        let bound = rf * profile as f64 * a_norm / n as f64;
        let norm = m.op_norm(regime);
        let slack = 1e-12 * a_norm.max(1.0);
        if dist > bound + slack {
            failures.push(format!("n = {n}: |M_n(A) - A| = {dist} exceeds {bound}"));
        }
        if norm > a_norm + slack {
            failures.push(format!("n = {n}: |M_n(A)| = {norm} exceeds |A| = {a_norm}"));
        }
        if previous.is_some_and(|p| dist > p + slack) {
            failures.push(format!("n = {n}: distance increased"));
        }
        previous = Some(dist);
        table.push(vec![n.to_string(), fmt_num(dist), fmt_num(bound), fmt_num(norm)]);
        rows.push(json!({
            "n": n,
            "distance": claim(dist, Tag::Exact),
            "bound": num(bound),
            "smoothed_norm": claim(norm, Tag::Exact),
        }));
    }
    for f in failures {
        ctx.violation("smoothing", f);
    }
    ctx.tables.insert("smoothing.csv".into(), table);
    Ok(json!({
        "regime": regime,
        "partition": {
            "functions": pou.len(),
            "multiplicity": pou.multiplicity(),
            "certificate": pou.certificate().map(|c| to_value(&c)),
        },
        "a_norm": claim(a_norm, Tag::Exact),
        "rows": rows,
        "csv": "smoothing.csv",
    }))
}

fn directions(config: &AnalysisConfig) -> Result<Vec<DirectionSequence>, String> {
    config
        .directions
        .iter()
        .map(|d| d.build().map_err(|e| e.to_string()))
        .collect()
}

fn verdict_config(config: &AnalysisConfig) -> Result<VerdictConfig, String> {
    Ok(VerdictConfig {
        regime: config.regime,
        directions: directions(config)?,
        tail_first: config.tail.first,
        tail_last: config.tail.last,
        tail_samples: config.tail.samples,
        richness_tol: config.tolerances.richness,
        reference_radius: config.reference_radius,
        parametrix: ParametrixConfig {
            regime: config.regime,
            max_buffer: config.tolerances.max_buffer,
            residual_tol: config.tolerances.residual,
            ..ParametrixConfig::default()
        },
        section_radii: config.section_radii.clone(),
        delta: config.tolerances.delta,
        ..VerdictConfig::default()
    })
}

fn sample_spectrum(ctx: &Ctx) -> Result<SpectrumSample<f64>, String> {
    let cfg = ctx.config;
    let dirs = directions(cfg)?;
    let g = ctx.space.grid_window().ok_or("limit operators need a grid space")?;
    let half = (0..g.dim()).map(|a| g.extent(a) / 2).min().unwrap_or(0);
    let refwin = centered_window(&ctx.space, cfg.reference_radius.unwrap_or(32).min(half)).map_err(|e| e.to_string())?;
    let (first, last, samples) = (cfg.tail.first, cfg.tail.last, cfg.tail.samples);
    spectrum_sample(
        &ctx.a,
        &dirs,
        &|d: &DirectionSequence| d.default_tail(first, last, samples),
        cfg.tolerances.richness,
        Some(&refwin),
    )
    .map_err(|e| e.to_string())
}

fn limits(ctx: &mut Ctx) -> Outcome {
    let sample = sample_spectrum(ctx)?;
    let a_prop = ctx.a.propagation();
    let mut table = Table::new(&["index", "direction", "aliases", "rich", "cauchy_residual", "norm_p1", "norm_pinf", "propagation", "file"]);
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (i, m) in sample.members.iter().enumerate() {
        let phi = &m.operator;
        let (n1, ninf) = (phi.op_norm(NormRegime::P1), phi.op_norm(NormRegime::Pinf));
        let slack = 1e-9 * m.translate_norms[0].max(m.translate_norms[1]).max(1.0);
        if n1 > m.translate_norms[0] + slack || ninf > m.translate_norms[1] + slack {
            failures.push(format!("limit `{}` is larger than every translate", m.direction));
        }
        if phi.propagation() > a_prop {
            failures.push(format!("limit `{}` has larger propagation than A", m.direction));
        }
        let file = format!("limit_{i}.csv");
        let mut buf = Vec::new();
        phi.write_coo_csv(&mut buf).map_err(|e| e.to_string())?;
        ctx.files.insert(file.clone(), buf);
        table.push(vec![
            i.to_string(),
            m.direction.clone(),
            m.aliases.join(" "),
            m.rich.to_string(),
            fmt_num(m.cauchy_residual),
            fmt_num(n1),
            fmt_num(ninf),
            phi.propagation().to_string(),
            file.clone(),
        ]);
        members.push(json!({
            "direction": m.direction,
            "aliases": m.aliases,
            "rich": m.rich,
            "tail": m.tail,
            "cauchy_residual": claim(m.cauchy_residual, Tag::Sampled),
            "tol": num(m.tol),
            "norm_p1": claim(n1, Tag::Exact),
            "norm_pinf": claim(ninf, Tag::Exact),
            "translate_norm_max_p1": num(m.translate_norms[0]),
            "translate_norm_max_pinf": num(m.translate_norms[1]),
            "propagation": phi.propagation().to_string(),
            "reference_points": phi.dim(),
            "file": file,
        }));
    }
    for f in failures {
        ctx.violation("limits", f);
    }
    ctx.tables.insert("limits.csv".into(), table);
    Ok(json!({
        "rich": sample.rich,
        "members": members,
        "csv": "limits.csv",
    }))
}

fn method_tag(m: LowerNormMethod) -> Tag {
    match m {
        LowerNormMethod::LpExact => Tag::Exact,
        LowerNormMethod::InverseNorm => Tag::Certified,
        LowerNormMethod::Sampled => Tag::Sampled,
    }
}

fn lower_norms(ctx: &mut Ctx) -> Outcome {
    let section = ctx.config.lower_norms.clone().expect("validated");
    let regime = ctx.config.regime;
    let a = &ctx.a;
    let f = match &section.support {
        None => SupportSet::full(ctx.space.len()),
        Some((lo, hi)) => SupportSet::grid_box(&ctx.space, lo, hi).map_err(|e| e.to_string())?,
    };
    let opts = LowerNormOptions {
        seed: ctx.config.seed,
        ..LowerNormOptions::default()
    };
    let nu = lower_norm_with(a, &f, regime, &opts).map_err(|e| e.to_string())?;
    let mut table = Table::new(&["s", "value", "method"]);
    table.push(vec!["inf".into(), fmt_num(nu.value), method_name(nu.method).into()]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut ss = section.s.clone();
    ss.sort_by(f64::total_cmp);
    ss.dedup();
    for &s in &ss {
        let r = restricted_lower_norm_with(a, &f, s, regime, &opts).map_err(|e| e.to_string())?;
        if r.value < nu.value - 1e-9 && nu.method != LowerNormMethod::Sampled && r.method != LowerNormMethod::Sampled {
            failures.push(format!("nu_s = {} below nu = {} at s = {s}", r.value, nu.value));
        }
        table.push(vec![fmt_num(s), fmt_num(r.value), method_name(r.method).into()]);
        rows.push(json!({"s": num(s), "value": claim(r.value, method_tag(r.method))}));
    }
    let prop = a.propagation();
    let delta = ctx.config.tolerances.delta;
    let localization = localization_radius(
        delta,
        a.op_norm(regime),
        distance_to_f64(&prop),
        ctx.space.geometry_profile(prop),
    )
    .and_then(|s| Ok((s, restricted_lower_norm_with(a, &f, s, regime, &opts)?)));
    let localization = match localization {
        Ok((s, r)) => {
            let holds = r.value <= nu.value + delta + 1e-12;
            if !holds && r.method != LowerNormMethod::Sampled {
                failures.push(format!("nu_s = {} exceeds nu + delta = {} at s = {s}", r.value, nu.value + delta));
            }
            json!({"delta": num(delta), "s": num(s), "nu_s": claim(r.value, method_tag(r.method)), "holds": holds})
        }
        Err(e) => json!({"error": e.to_string()}),
    };
    for f in failures {
        ctx.violation("lower-norms", f);
    }
    ctx.tables.insert("lower_norms.csv".into(), table);
    Ok(json!({
        "regime": regime,
        "support_size": f.count(),
        "nu": claim(nu.value, method_tag(nu.method)),
        "method": nu.method,
        "restricted": rows,
        "localization": localization,
        "csv": "lower_norms.csv",
    }))
}

fn method_name(m: LowerNormMethod) -> &'static str {
    match m {
        LowerNormMethod::LpExact => "lp-exact",
        LowerNormMethod::InverseNorm => "inverse-norm",
        LowerNormMethod::Sampled => "sampled",
    }
}

fn defect_table(curve: &[DefectPoint]) -> Table {
    let mut t = Table::new(&["size", "aq", "qa"]);
    for p in curve {
        t.push(vec![p.size.to_string(), fmt_num(p.aq), fmt_num(p.qa)]);
    }
    t
}

fn parametrix(ctx: &mut Ctx) -> Outcome {
    let vcfg = verdict_config(ctx.config)?;
    let sample = sample_spectrum(ctx)?;
    let verdicts: Vec<_> = sample.members.iter().map(|m| classify_limit(m, &vcfg)).collect();
    let spectrum: Vec<LimitInvertibility> = verdicts
        .iter()
        .map(|v| LimitInvertibility {
            direction: v.direction.clone(),
            invertible: v.invertible,
            inverse_norm: v.inverse_norm,
        })
        .collect();
    let limits: Vec<Value> = verdicts
        .iter()
        .map(|v| tagged(v, evidence_tag(v.evidence)))
        .collect();
    let p = match assemble_parametrix(&ctx.a, &spectrum, &vcfg.parametrix) {
        Ok(p) => p,
        Err(e) => return Ok(json!({"limits": limits, "error": e.to_string()})),
    };
    let m = &p.metrics;
    let mut failures = Vec::new();
    if m.t0_norm > m.t0_bound * (1.0 + 1e-9) + 1e-15 || m.t0_prime_norm > m.t0_prime_bound * (1.0 + 1e-9) + 1e-15 {
        failures.push(format!(
            "commutator terms {} / {} exceed their bounds {} / {}",
            m.t0_norm, m.t0_prime_norm, m.t0_bound, m.t0_prime_bound
        ));
    }
    if !m.a_l_within_2m || !m.a_r_within_2m {
        failures.push(format!("|A_L| = {}, |A_R| = {} exceed 2 M_target = {}", m.a_l_norm, m.a_r_norm, 2.0 * m.m_target));
    }
    for f in failures {
        ctx.violation("parametrix", f);
    }
    ctx.tables.insert("parametrix_left_defect.csv".into(), defect_table(&m.left_defect_curve));
    ctx.tables.insert("parametrix_right_defect.csv".into(), defect_table(&m.right_defect_curve));
    Ok(json!({
        "limits": limits,
        "metrics": tagged(m, Tag::Certified),
        "csv": ["parametrix_left_defect.csv", "parametrix_right_defect.csv"],
    }))
}

fn evidence_tag(e: Evidence) -> Tag {
    match e {
        Evidence::Certified => Tag::Certified,
        Evidence::Heuristic | Evidence::Undecided => Tag::Heuristic,
    }
}

fn fredholm(ctx: &mut Ctx) -> Outcome {
    let vcfg = verdict_config(ctx.config)?;
    let report = fredholm_verdict(&ctx.a, &vcfg);
    let mut sections = Table::new(&["radius", "size", "nu", "method"]);
    for s in &report.finite_sections {
        sections.push(vec![s.radius.to_string(), s.size.to_string(), fmt_num(s.nu), method_name(s.method).into()]);
    }
    ctx.tables.insert("finite_sections.csv".into(), sections);
    let mut csv = vec!["finite_sections.csv"];
    if let Some(m) = &report.parametrix {
        ctx.tables.insert("fredholm_left_defect.csv".into(), defect_table(&m.left_defect_curve));
        ctx.tables.insert("fredholm_right_defect.csv".into(), defect_table(&m.right_defect_curve));
        csv.extend(["fredholm_left_defect.csv", "fredholm_right_defect.csv"]);
    }
    let mut v = to_value(&report);
    v["limits"] = Value::Array(report.limits.iter().map(|l| tagged(l, evidence_tag(l.evidence))).collect());
    if let Some(m) = &report.parametrix {
        v["parametrix"] = tagged(m, Tag::Certified);
    }
    if let Some(inf) = &report.lower_norm_infimum {
        // p1 lower norms on windows above the exact cap are sampled
        let tag = if report.regime == NormRegime::P1 { Tag::Sampled } else { Tag::Exact };
        v["lower_norm_infimum"] = tagged(inf, tag);
    }
    v["finite_sections_tag"] = Value::from(Tag::Heuristic.name());
    v["csv"] = json!(csv);
    Ok(v)
}
