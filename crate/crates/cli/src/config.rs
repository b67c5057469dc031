//! Strict JSON configuration: unknown keys, missing fields and type errors
//! are all collected before anything runs.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use limitop::limits::DirectionSequence;
use limitop::{MetricKind, NormRegime, OffsetTerm};

pub const ANALYSES: [&str; 8] = [
    "norms",
    "decompose",
    "quasilocality",
    "smoothing",
    "limits",
    "lower-norms",
    "parametrix",
    "fredholm",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceSpec {
    Grid {
        dim: usize,
        lo: Vec<i64>,
        hi: Vec<i64>,
        metric: MetricKind,
    },
    Table {
        labels: Vec<String>,
        /// Rational distances as text (`"3/2"`).
        distances: Vec<Vec<String>>,
    },
    TableCsv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorSpec {
    Terms(Vec<TermSpec>),
    Coo(PathBuf),
}

#[derive(Debug, Clone, Serialize)]
pub struct TermSpec {
    pub offset: Vec<i64>,
    pub coefficient: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionSpec {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ray: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<i64>>>,
}

impl DirectionSpec {
    pub fn build(&self) -> limitop::Result<DirectionSequence> {
        match (&self.ray, &self.points) {
            (Some(u), _) => DirectionSequence::ray(self.label.clone(), u.clone()),
            (None, Some(p)) => DirectionSequence::explicit(self.label.clone(), p.clone()),
            (None, None) => unreachable!("validated"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub richness: f64,
    pub residual: f64,
    pub delta: f64,
    pub max_buffer: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailSpec {
    pub first: u64,
    pub last: u64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasilocalitySpec {
    pub lipschitz: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothingSpec {
    pub n: Vec<usize>,
    pub partition_eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerNormSpec {
    /// Box `[lo, hi]` (grid) or `None` for the whole space.
    pub support: Option<(Vec<i64>, Vec<i64>)>,
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisConfig {
    pub space: SpaceSpec,
    pub operator: OperatorSpec,
    pub regime: NormRegime,
    pub analyses: Vec<String>,
    pub directions: Vec<DirectionSpec>,
    pub tolerances: Tolerances,
    pub tail: TailSpec,
    pub reference_radius: Option<i64>,
    pub section_radii: Vec<i64>,
    pub quasilocality: Option<QuasilocalitySpec>,
    pub smoothing: Option<SmoothingSpec>,
    pub lower_norms: Option<LowerNormSpec>,
    /// Not echoed: reports must not depend on where they are written.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl AnalysisConfig {
    pub fn wants(&self, analysis: &str) -> bool {
        self.analyses.iter().any(|a| a == analysis)
    }
}

/// Walks a JSON document, recording every violation with its path.
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, path: &str, msg: impl fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str], required: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.err(path, "expected an object");
            return None;
        };
        for k in map.keys() {
            if !allowed.contains(&k.as_str()) {
                self.err(&join(path, k), "unknown key");
            }
        }
        for r in required {
            if !map.contains_key(*r) {
                self.err(&join(path, r), "missing required field");
            }
        }
        Some(map)
    }

    fn f64(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(path, "expected a finite number");
                None
            }
        }
    }

    fn positive(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = self.f64(v, path)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.err(path, format!("must be positive, got {x}"));
            None
        }
    }

    fn i64(&mut self, v: &Value, path: &str) -> Option<i64> {
        match v.as_i64() {
            Some(x) => Some(x),
            None => {
                self.err(path, "expected an integer");
                None
            }
        }
    }

    fn u64(&mut self, v: &Value, path: &str) -> Option<u64> {
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                self.err(path, "expected a nonnegative integer");
                None
            }
        }
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.err(path, "expected a string");
                None
            }
        }
    }

    fn array<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a Vec<Value>> {
        match v.as_array() {
            Some(a) => Some(a),
            None => {
                self.err(path, "expected an array");
                None
            }
        }
    }

    fn list<T>(&mut self, v: &Value, path: &str, mut item: impl FnMut(&mut Self, &Value, &str) -> Option<T>) -> Option<Vec<T>> {
        let arr = self.array(v, path)?;
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, x) in arr.iter().enumerate() {
            match item(self, x, &format!("{path}[{i}]")) {
                Some(t) => out.push(t),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn ints(&mut self, v: &Value, path: &str) -> Option<Vec<i64>> {
        self.list(v, path, |c, x, p| c.i64(x, p))
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

const TOP_KEYS: [&str; 14] = [
    "space",
    "operator",
    "regime",
    "analyses",
    "directions",
    "tolerances",
    "tail",
    "reference_radius",
    "section_radii",
    "quasilocality",
    "smoothing",
    "lower_norms",
    "output",
    "seed",
];

/// Parses and validates a configuration; relative paths are resolved
/// against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<AnalysisConfig, ConfigErrors> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![format!("invalid JSON: {e}")]))?;
    let mut c = Checker { errors: Vec::new() };
    let Some(top) = c.object(&doc, "", &TOP_KEYS, &["space", "operator", "analyses"]) else {
        return Err(ConfigErrors(c.errors));
    };

    let space = top.get("space").and_then(|v| parse_space(&mut c, v, base_dir));
    let dim = match &space {
        Some(SpaceSpec::Grid { dim, .. }) => Some(*dim),
        _ => None,
    };
    let operator = top.get("operator").and_then(|v| parse_operator(&mut c, v, base_dir, dim));

    let regime = match top.get("regime") {
        None => Some(NormRegime::Pinf),
        Some(v) => match v.as_str() {
            Some("p1") => Some(NormRegime::P1),
            Some("pinf") => Some(NormRegime::Pinf),
            Some("p0") => Some(NormRegime::P0),
            _ => {
                c.err("regime", "expected one of \"p1\", \"pinf\", \"p0\"");
                None
            }
        },
    };

    let analyses = top.get("analyses").and_then(|v| {
        c.list(v, "analyses", |c, x, p| {
            let s = c.string(x, p)?;
            if ANALYSES.contains(&s.as_str()) {
                Some(s)
            } else {
                c.err(p, format!("unknown analysis `{s}` (expected one of {})", ANALYSES.join(", ")));
                None
            }
        })
    });
    let analyses = analyses.map(|a| {
        let mut seen = BTreeSet::new();
        a.into_iter().filter(|x| seen.insert(x.clone())).collect::<Vec<_>>()
    });
    if let Some(a) = &analyses {
        if a.is_empty() {
            c.err("analyses", "at least one analysis is required");
        }
    }
    let wants = |name: &str| analyses.as_ref().is_some_and(|a| a.iter().any(|x| x == name));

    let directions = match top.get("directions") {
        None => {
            for name in ["limits", "parametrix", "fredholm"] {
                if wants(name) {
                    c.err("directions", format!("missing required field (needed by `{name}`)"));
                }
            }
            Some(Vec::new())
        }
        Some(v) => c.list(v, "directions", |c, x, p| parse_direction(c, x, p, dim)),
    };
    if let Some(dirs) = &directions {
        let mut labels = BTreeSet::new();
        for (i, d) in dirs.iter().enumerate() {
            if !labels.insert(d.label.clone()) {
                c.err(&format!("directions[{i}].label"), format!("duplicate label `{}`", d.label));
            }
        }
        if dirs.is_empty() && top.contains_key("directions") {
            for name in ["limits", "parametrix", "fredholm"] {
                if wants(name) {
                    c.err("directions", format!("must be nonempty (needed by `{name}`)"));
                }
            }
        }
    }
    let limit_like = wants("limits") || wants("parametrix") || wants("fredholm");
    if limit_like {
        if let Some(OperatorSpec::Coo(_)) = &operator {
            c.err("operator", "limit-operator analyses need coefficient terms, not a COO file");
        }
        if let Some(SpaceSpec::Table { .. } | SpaceSpec::TableCsv { .. }) = &space {
            c.err("space", "limit-operator analyses need a grid space");
        }
    }

    let mut tolerances = Tolerances {
        richness: 1e-6,
        residual: 1e-6,
        delta: 0.4,
        max_buffer: 8,
    };
    if let Some(v) = top.get("tolerances") {
        if let Some(m) = c.object(v, "tolerances", &["richness", "residual", "delta", "max_buffer"], &[]) {
            if let Some(x) = m.get("richness").and_then(|x| c.positive(x, "tolerances.richness")) {
                tolerances.richness = x;
            }
            if let Some(x) = m.get("residual").and_then(|x| c.positive(x, "tolerances.residual")) {
                tolerances.residual = x;
            }
            if let Some(x) = m.get("delta").and_then(|x| c.positive(x, "tolerances.delta")) {
                tolerances.delta = x;
            }
            if let Some(x) = m.get("max_buffer").and_then(|x| c.u64(x, "tolerances.max_buffer")) {
                tolerances.max_buffer = x as i64;
            }
        }
    }

    let mut tail = TailSpec {
        first: 1_000_000,
        last: 10_000_000,
        samples: 8,
    };
    if let Some(v) = top.get("tail") {
        if let Some(m) = c.object(v, "tail", &["first", "last", "samples"], &[]) {
            if let Some(x) = m.get("first").and_then(|x| c.u64(x, "tail.first")) {
                tail.first = x;
            }
            if let Some(x) = m.get("last").and_then(|x| c.u64(x, "tail.last")) {
                tail.last = x;
            }
            if let Some(x) = m.get("samples").and_then(|x| c.u64(x, "tail.samples")) {
                tail.samples = x as usize;
            }
        }
        if tail.samples < 3 {
            c.err("tail.samples", "at least 3 samples are required");
        }
        if tail.first == 0 || tail.last <= tail.first {
            c.err("tail", "need 0 < first < last");
        }
    }

    let reference_radius = top.get("reference_radius").and_then(|v| {
        let r = c.u64(v, "reference_radius")?;
        if r == 0 {
            c.err("reference_radius", "must be positive");
            None
        } else {
            Some(r as i64)
        }
    });
    let section_radii = match top.get("section_radii") {
        None => Some(Vec::new()),
        Some(v) => c.list(v, "section_radii", |c, x, p| c.u64(x, p).map(|r| r as i64)),
    };

    let quasilocality = match top.get("quasilocality") {
        None => {
            if wants("quasilocality") {
                c.err("quasilocality", "missing required field (needed by `quasilocality`)");
            }
            None
        }
        Some(v) => c.object(v, "quasilocality", &["lipschitz", "eps"], &["lipschitz", "eps"]).and_then(|m| {
            let l = m
                .get("lipschitz")
                .and_then(|x| c.list(x, "quasilocality.lipschitz", |c, y, p| c.positive(y, p)));
            let e = m.get("eps").and_then(|x| c.positive(x, "quasilocality.eps"));
            Some(QuasilocalitySpec { lipschitz: l?, eps: e? })
        }),
    };
    let smoothing = match top.get("smoothing") {
        None => {
            if wants("smoothing") {
                c.err("smoothing", "missing required field (needed by `smoothing`)");
            }
            None
        }
        Some(v) => c.object(v, "smoothing", &["n", "partition_eps"], &["n", "partition_eps"]).and_then(|m| {
            let n = m.get("n").and_then(|x| {
                c.list(x, "smoothing.n", |c, y, p| match c.u64(y, p)? {
                    0 => {
                        c.err(p, "must be at least 1");
                        None
                    }
                    k => Some(k as usize),
                })
            });
            let e = m.get("partition_eps").and_then(|x| c.positive(x, "smoothing.partition_eps"));
            Some(SmoothingSpec {
                n: n?,
                partition_eps: e?,
            })
        }),
    };
    let lower_norms = match top.get("lower_norms") {
        None => {
            if wants("lower-norms") {
                c.err("lower_norms", "missing required field (needed by `lower-norms`)");
            }
            None
        }
        Some(v) => c.object(v, "lower_norms", &["support", "s"], &["support", "s"]).and_then(|m| {
            let support = m.get("support").and_then(|x| parse_support(&mut c, x, dim));
            let s = m.get("s").and_then(|x| {
                c.list(x, "lower_norms.s", |c, y, p| {
                    let v = c.f64(y, p)?;
                    if v < 0.0 {
                        c.err(p, "must be nonnegative");
                        None
                    } else {
                        Some(v)
                    }
                })
            });
            Some(LowerNormSpec { support: support?, s: s? })
        }),
    };

    let output_dir = top.get("output").and_then(|v| {
        let m = c.object(v, "output", &["dir"], &["dir"])?;
        let d = c.string(m.get("dir")?, "output.dir")?;
        Some(base_dir.join(d))
    });
    let seed = match top.get("seed") {
        None => Some(0),
        Some(v) => c.u64(v, "seed"),
    };

    if !c.errors.is_empty() {
        return Err(ConfigErrors(c.errors));
    }
    Ok(AnalysisConfig {
        space: space.expect("validated"),
        operator: operator.expect("validated"),
        regime: regime.expect("validated"),
        analyses: analyses.expect("validated"),
        directions: directions.expect("validated"),
        tolerances,
        tail,
        reference_radius,
        section_radii: section_radii.expect("validated"),
        quasilocality,
        smoothing,
        lower_norms,
        output_dir,
        seed: seed.expect("validated"),
    })
}

fn parse_space(c: &mut Checker, v: &Value, base: &Path) -> Option<SpaceSpec> {
    let kind = v.get("kind").and_then(|k| k.as_str());
    match kind {
        Some("grid") => {
            let m = c.object(v, "space", &["kind", "dim", "lo", "hi", "metric"], &["kind", "dim", "lo", "hi"])?;
            let dim = m.get("dim").and_then(|x| c.u64(x, "space.dim"));
            let lo = m.get("lo").and_then(|x| c.ints(x, "space.lo"));
            let hi = m.get("hi").and_then(|x| c.ints(x, "space.hi"));
            let metric = match m.get("metric").map(|x| x.as_str()) {
                None | Some(Some("l1")) => Some(MetricKind::L1),
                Some(Some("linf")) => Some(MetricKind::Linf),
                _ => {
                    c.err("space.metric", "expected \"l1\" or \"linf\"");
                    None
                }
            };
            let (dim, lo, hi, metric) = (dim?, lo?, hi?, metric?);
            if dim == 0 {
                c.err("space.dim", "must be at least 1");
                return None;
            }
            if lo.len() != dim as usize || hi.len() != dim as usize {
                c.err("space", format!("lo and hi must have {dim} entries"));
                return None;
            }
            if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                c.err("space", "lo must not exceed hi");
                return None;
            }
            Some(SpaceSpec::Grid {
                dim: dim as usize,
                lo,
                hi,
                metric,
            })
        }
        Some("table") => {
            let m = c.object(v, "space", &["kind", "labels", "distances", "csv"], &["kind"])?;
            match (m.get("csv"), m.get("labels"), m.get("distances")) {
                (Some(p), None, None) => Some(SpaceSpec::TableCsv {
                    path: base.join(c.string(p, "space.csv")?),
                }),
                (None, Some(l), Some(d)) => {
                    let labels = c.list(l, "space.labels", |c, x, p| c.string(x, p));
                    let distances = c.list(d, "space.distances", |c, row, p| {
                        c.list(row, p, |c, x, q| match x {
                            Value::String(s) => Some(s.clone()),
                            Value::Number(n) => Some(n.to_string()),
                            _ => {
                                c.err(q, "expected a number or a rational string");
                                None
                            }
                        })
                    });
                    Some(SpaceSpec::Table {
                        labels: labels?,
                        distances: distances?,
                    })
                }
                _ => {
                    c.err("space", "table spaces need either `csv` or both `labels` and `distances`");
                    None
                }
            }
        }
        _ => {
            c.err("space.kind", "expected \"grid\" or \"table\"");
            None
        }
    }
}

fn parse_operator(c: &mut Checker, v: &Value, base: &Path, dim: Option<usize>) -> Option<OperatorSpec> {
    let m = c.object(v, "operator", &["terms", "coo"], &[])?;
    match (m.get("terms"), m.get("coo")) {
        (Some(t), None) => {
            let terms = c.list(t, "operator.terms", |c, x, p| {
                let m = c.object(x, p, &["offset", "coefficient"], &["offset", "coefficient"])?;
                let offset = m.get("offset").and_then(|o| c.ints(o, &join(p, "offset")));
                let coefficient = m.get("coefficient").and_then(|e| c.string(e, &join(p, "coefficient")));
                let (offset, coefficient) = (offset?, coefficient?);
                if let Some(d) = dim {
                    if offset.len() != d {
                        c.err(&join(p, "offset"), format!("expected {d} entries"));
                        return None;
                    }
                }
                // report grammar errors now rather than at run time
                if let Err(e) = OffsetTerm::parse(offset.clone(), &coefficient) {
                    c.err(&join(p, "coefficient"), e);
                    return None;
                }
                Some(TermSpec { offset, coefficient })
            })?;
            if terms.is_empty() {
                c.err("operator.terms", "at least one term is required");
                return None;
            }
            if dim.is_none() {
                c.err("operator.terms", "coefficient terms need a grid space");
                return None;
            }
            Some(OperatorSpec::Terms(terms))
        }
        (None, Some(p)) => Some(OperatorSpec::Coo(base.join(c.string(p, "operator.coo")?))),
        _ => {
            c.err("operator", "exactly one of `terms` or `coo` is required");
            None
        }
    }
}

fn parse_direction(c: &mut Checker, v: &Value, path: &str, dim: Option<usize>) -> Option<DirectionSpec> {
    let m = c.object(v, path, &["label", "ray", "points"], &["label"])?;
    let label = m.get("label").and_then(|l| c.string(l, &join(path, "label")))?;
    let dir = match (m.get("ray"), m.get("points")) {
        (Some(r), None) => DirectionSpec {
            label,
            ray: Some(c.ints(r, &join(path, "ray"))?),
            points: None,
        },
        (None, Some(p)) => DirectionSpec {
            label,
            ray: None,
            points: Some(c.list(p, &join(path, "points"), |c, x, q| c.ints(x, q))?),
        },
        _ => {
            c.err(path, "exactly one of `ray` or `points` is required");
            return None;
        }
    };
    if let Err(e) = dir.build() {
        c.err(path, e);
        return None;
    }
    let d = dir.build().ok()?.dim();
    if let (Some(want), Some(got)) = (dim, d) {
        if want != got {
            c.err(path, format!("direction has dimension {got}, space has {want}"));
            return None;
        }
    }
    Some(dir)
}

fn parse_support(c: &mut Checker, v: &Value, dim: Option<usize>) -> Option<Option<(Vec<i64>, Vec<i64>)>> {
    if v.as_str() == Some("full") {
        return Some(None);
    }
    let m = c.object(v, "lower_norms.support", &["lo", "hi"], &["lo", "hi"])?;
    let lo = m.get("lo").and_then(|x| c.ints(x, "lower_norms.support.lo"));
    let hi = m.get("hi").and_then(|x| c.ints(x, "lower_norms.support.hi"));
    let (lo, hi) = (lo?, hi?);
    match dim {
        Some(d) if lo.len() == d && hi.len() == d => Some(Some((lo, hi))),
        Some(d) => {
            c.err("lower_norms.support", format!("lo and hi must have {d} entries"));
            None
        }
        None => {
            c.err("lower_norms.support", "box supports need a grid space; use \"full\"");
            None
        }
    }
}
