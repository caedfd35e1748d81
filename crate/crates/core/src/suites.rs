//! Suite runner and deterministic report emission.
//!
//! Each suite evaluates the identity battery of one module for the levels in
//! a [`RunConfig`] and returns one [`Row`] per identity.  Rows are sorted by
//! suite, inputs and id, so a report depends only on the configuration.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use num_rational::BigRational;
use serde::Serialize;

use crate::amplitude::{render_float, Amplitude, Backend};
use crate::characters::{character_check, check_levels, partition_xn, MultChar, SigmaClass};
use crate::constants::{self, GlobalConfig};
use crate::error::{Error, Result};
use crate::field::LocalField;
use crate::group::GroupElem;
use crate::kernels::{
    check_kernel_identity, profile_i, profiles_stable, verify_phi, MicrolocalKernel, ProfileI,
};
use crate::maintm::{admissible, main_term_lhs, main_term_rhs, standard_battery, SmoothedKernel};
use crate::projector::projector_on_principal_series;
use crate::specrep::{
    hecke_eigenvalue, macdonald_u, rallis_integral_check, whittaker_norm_check, whittaker_value,
    SatakeParams, SeriesReport,
};
use crate::stability::{
    fit_equivalence, metaplectic_normal_form, orbital_scan, phi_u_closed_form, EssentialEquivalence,
};

/// Suite names accepted by [`run_suite`], besides `all`.
pub const SUITES: [&str; 6] = [
    "characters",
    "constants",
    "fourier-kernel",
    "main-term",
    "specrep",
    "stability",
];

pub const REPORT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest principal-series model dimension for which the fourier-kernel
/// suite builds π(f).
pub const PROJECTOR_MAX_DIM: u64 = 400;

/// Level of the congruence subgroup U₂ = K[l] in the orbital battery.
pub const ORBITAL_U2_LEVEL: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Md,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!(
                "unknown format '{other}' (expected json, md or csv)"
            ))),
        }
    }
}

/// Parameters of a batch run.  `threads` and `out` do not enter the report.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub p: u64,
    /// Working precision M; when absent each computation uses the policy minimum.
    pub precision: Option<u32>,
    #[serde(rename = "N")]
    pub ns: Vec<u32>,
    #[serde(rename = "N0")]
    pub n0: u32,
    pub m: u32,
    /// Exponent ξ of the class σ.
    pub sigma: u64,
    pub backend: Backend,
    pub tolerance: f64,
    pub suites: Vec<String>,
    pub format: Format,
    /// Record wall-clock micros per row; off by default so reports are reproducible.
    pub timings: bool,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 leaves the choice to the thread pool.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            p: 3,
            precision: None,
            ns: vec![4, 5],
            n0: 1,
            m: 1,
            sigma: 1,
            backend: Backend::Exact,
            tolerance: 1e-9,
            suites: vec!["all".into()],
            format: Format::Json,
            timings: false,
            out: None,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Checks primality, level constraints, the precision policy and suite names.
    pub fn validate(&self) -> Result<()> {
        LocalField::new(self.p, 2)?;
        if self.ns.is_empty() {
            return Err(Error::Config("at least one N is required".into()));
        }
        for &n in &self.ns {
            check_levels(self.p, n, self.n0)?;
            if let Some(prec) = self.precision {
                LocalField::with_policy(self.p, prec, n, self.n0, self.m)?;
            }
        }
        SigmaClass::new(self.p, self.n0, self.sigma)?;
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "tolerance {} must be a nonnegative number",
                self.tolerance
            )));
        }
        for s in &self.suites {
            if s != "all" && !SUITES.contains(&s.as_str()) {
                return Err(unknown_suite(s));
            }
        }
        Ok(())
    }

    /// The N values in increasing order without repeats.
    pub fn levels(&self) -> Vec<u32> {
        let mut ns = self.ns.clone();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    fn field(&self, n: u32, extra: u32) -> Result<LocalField> {
        let need = LocalField::required_precision(self.p, n, self.n0, extra);
        LocalField::new(self.p, self.precision.unwrap_or(need).max(need))
    }

    fn kernel(&self, n: u32, extra: u32) -> Result<MicrolocalKernel> {
        let field = self.field(n, extra)?;
        MicrolocalKernel::build(
            &field,
            n,
            SigmaClass::new(self.p, self.n0, self.sigma)?,
            self.backend,
        )
    }

    fn inputs(&self, n: u32) -> String {
        format!("p={},N={},N0={},sigma={}", self.p, n, self.n0, self.sigma)
    }
}

/// Parses flat `key = value` text; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected key = value, got '{line}'",
                i + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl RunConfig {
    /// Sets one field from its textual form.  Keys match the command-line flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "p" => self.p = parse_num(key, value)?,
            "precision" | "M" => self.precision = Some(parse_num(key, value)?),
            "N" => self.ns = parse_list(key, value)?,
            "N0" => self.n0 = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "backend" => self.backend = value.trim().parse().map_err(Error::Config)?,
            "tolerance" => self.tolerance = parse_num(key, value)?,
            "suite" => {
                self.suites = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "format" => self.format = value.parse()?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "threads" => self.threads = parse_num(key, value)?,
            "timings" => self.timings = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }
}

fn unknown_suite(name: &str) -> Error {
    Error::Config(format!(
        "unknown suite '{name}' (expected one of {}, all)",
        SUITES.join(", ")
    ))
}

/// One identity: its two sides and whether they agree.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct Row {
    pub suite: String,
    pub id: String,
    pub inputs: String,
    pub lhs: String,
    pub rhs: String,
    pub pass: bool,
    pub micros: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub version: String,
    pub config: RunConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub meta: Meta,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn empty(cfg: &RunConfig) -> Self {
        Report {
            meta: Meta {
                version: REPORT_VERSION.into(),
                config: cfg.clone(),
            },
            rows: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn suite_rows<'a>(&'a self, suite: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.suite == suite)
    }

    fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| (&a.suite, &a.inputs, &a.id).cmp(&(&b.suite, &b.inputs, &b.id)));
    }
}

/// A computed identity before it is stamped with suite, inputs and timing.
struct Cell {
    id: String,
    lhs: String,
    rhs: String,
    pass: bool,
}

fn cell(id: impl Into<String>, lhs: impl Into<String>, rhs: impl Into<String>, pass: bool) -> Cell {
    Cell {
        id: id.into(),
        lhs: lhs.into(),
        rhs: rhs.into(),
        pass,
    }
}

/// Left side of a grid comparison: "identical", or the largest deviation.
fn grid_match(equal: bool, max_diff: f64) -> String {
    if equal {
        "identical".into()
    } else {
        format!("max deviation {}", render_float(max_diff))
    }
}

fn flag(id: &str, ok: bool) -> Cell {
    cell(id, ok.to_string(), "true", ok)
}

struct Sink<'a> {
    suite: &'static str,
    cfg: &'a RunConfig,
    rows: Vec<Row>,
}

impl<'a> Sink<'a> {
    fn new(suite: &'static str, cfg: &'a RunConfig) -> Self {
        Sink {
            suite,
            cfg,
            rows: Vec::new(),
        }
    }

    /// Runs one computation producing several cells.  Configuration errors
    /// abort the suite; any other error becomes a failing row named `group`.
    fn group<T>(
        &mut self,
        group: &str,
        inputs: &str,
        f: impl FnOnce() -> Result<(Vec<Cell>, T)>,
    ) -> Result<Option<T>> {
        let start = Instant::now();
        let out = f();
        let micros = if self.cfg.timings {
            start.elapsed().as_micros() as u64
        } else {
            0
        };
        let (cells, value) = match out {
            Ok((cells, v)) => (cells, Some(v)),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => (vec![cell(group, format!("error: {e}"), "ok", false)], None),
        };
        for c in cells {
            self.rows.push(Row {
                suite: self.suite.into(),
                id: c.id,
                inputs: inputs.into(),
                lhs: c.lhs,
                rhs: c.rhs,
                pass: c.pass,
                micros,
            });
        }
        Ok(value)
    }

    fn cells(
        &mut self,
        group: &str,
        inputs: &str,
        f: impl FnOnce() -> Result<Vec<Cell>>,
    ) -> Result<()> {
        self.group(group, inputs, || Ok((f()?, ()))).map(|_| ())
    }
}

/// Runs one named suite, or every suite for `all`.
pub fn run_suite(name: &str, cfg: &RunConfig) -> Result<Report> {
    let names: Vec<&str> = match name {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => return Err(unknown_suite(s)),
    };
    cfg.validate()?;
    let mut report = Report::empty(cfg);
    for s in names {
        report.rows.extend(run_one(s, cfg)?);
    }
    report.sort();
    Ok(report)
}

/// Runs every suite listed in the configuration; an empty list gives an empty report.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let mut names: Vec<&str> = Vec::new();
    for s in &cfg.suites {
        let add: Vec<&str> = if s == "all" {
            SUITES.to_vec()
        } else {
            vec![s.as_str()]
        };
        for a in add {
            if !names.contains(&a) {
                names.push(a);
            }
        }
    }
    let mut report = Report::empty(cfg);
    for s in names {
        report.rows.extend(run_one(s, cfg)?);
    }
    report.sort();
    Ok(report)
}

fn run_one(name: &str, cfg: &RunConfig) -> Result<Vec<Row>> {
    match name {
        "fourier-kernel" => fourier_kernel(cfg),
        "main-term" => main_term(cfg),
        "stability" => stability(cfg),
        "specrep" => specrep(cfg),
        "characters" => characters(cfg),
        "constants" => constants_suite(cfg),
        other => Err(unknown_suite(other)),
    }
}

fn fourier_kernel(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("fourier-kernel", cfg);
    let mut profiles: Vec<(u32, ProfileI)> = Vec::new();
    for n in cfg.levels() {
        let inputs = cfg.inputs(n);
        let kernel = sink.group("kernel", &inputs, || {
            let k = cfg.kernel(n, 1)?;
            let phi = k.compute_phi()?;
            let r = verify_phi(&k, &phi)?;
            let mut cells = vec![
                flag("phi/support", r.support),
                flag("phi/smoothness", r.smoothness),
                flag("phi/unit-dilation", r.dilation),
                flag("phi/weyl-symmetry", r.weyl),
                flag("phi/fourier-commutes-with-symmetrization", r.commutes),
                cell(
                    "phi/normalization",
                    r.normalization.clone(),
                    r.expected_normalization.clone(),
                    r.normalization_ok,
                ),
            ];
            if k.field.p() != 2 {
                let closed = k.phi_closed_form(&phi)?;
                let ok = closed.approx_eq(&phi, cfg.tolerance)?;
                cells.push(cell(
                    "phi/odd-q-closed-form",
                    grid_match(ok, closed.max_abs_diff(&phi)?),
                    "identical",
                    ok,
                ));
            }
            let id = check_kernel_identity(&k)?;
            cells.push(cell(
                "heart/closed-form",
                format!("{} mismatches in {} cells", id.mismatches, id.cells),
                format!("0 mismatches in {} cells", id.cells),
                id.pass(),
            ));
            profiles.push((n, profile_i(&phi, n)?));
            Ok((cells, k))
        })?;
        if let Some(k) = kernel {
            sink.cells("projector", &inputs, || projector_cells(&k))?;
        }
    }
    for pair in profiles.windows(2) {
        let ((a, pa), (b, pb)) = (&pair[0], &pair[1]);
        let inputs = format!("p={},N={a}..{b},N0={},sigma={}", cfg.p, cfg.n0, cfg.sigma);
        sink.cells("profile/n-stability", &inputs, || {
            Ok(vec![flag("profile/n-stability", profiles_stable(pa, pb)?)])
        })?;
    }
    Ok(sink.rows)
}

fn projector_cells(k: &MicrolocalKernel) -> Result<Vec<Cell>> {
    let p = k.field.p();
    let n = k.n;
    if crate::field::upow(p, n - 1) * (p + 1) > PROJECTOR_MAX_DIM {
        return Ok(Vec::new());
    }
    let samples = 20;
    let mut cells = Vec::new();
    let case = |label: &str, chi: &MultChar, rank: i64, cells: &mut Vec<Cell>| -> Result<()> {
        let r = projector_on_principal_series(k, chi, n, samples)?;
        let id = format!("projector/{label}");
        cells.push(flag(&format!("{id}/idempotent"), r.idempotent));
        cells.push(flag(&format!("{id}/self-adjoint"), r.self_adjoint));
        let got = r.rank.map_or_else(|| r.trace.clone(), |x| x.to_string());
        cells.push(cell(
            format!("{id}/rank"),
            got,
            rank.to_string(),
            r.rank == Some(rank),
        ));
        if rank == 1 {
            let ok = r.image_ok == Some(true) && r.image_checked == samples;
            cells.push(cell(
                format!("{id}/image-transforms-by-omega"),
                format!(
                    "{}/{} samples",
                    if ok { r.image_checked } else { 0 },
                    r.image_checked
                ),
                format!("{samples}/{samples} samples"),
                ok,
            ));
        }
        Ok(())
    };
    let omega = k
        .block
        .first()
        .ok_or_else(|| Error::Model("empty σ-block".into()))?
        .clone();
    case("in-block", &omega, 1, &mut cells)?;
    case("unramified", &MultChar::trivial(p, n), 0, &mut cells)?;
    let others: Vec<MultChar> = partition_xn(p, n, k.n0)?
        .into_iter()
        .filter(|(s, _)| *s != k.sigma)
        .flat_map(|(_, b)| b)
        .collect();
    if let Some(w) = others.iter().find(|w| k.block.contains(&w.inverse())) {
        case("inverse-in-block", w, 1, &mut cells)?;
    }
    if let Some(w) = others.iter().find(|w| !k.block.contains(&w.inverse())) {
        case("outside-block", w, 0, &mut cells)?;
    }
    Ok(cells)
}

fn main_term(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("main-term", cfg);
    let m = cfg.m;
    for n in cfg.levels() {
        let ord2 = u32::from(cfg.p == 2);
        if !admissible(n, cfg.n0, m, ord2) {
            return Err(Error::Config(format!(
                "main-term needs N - N0 >= 2m + ord2 + 1; got N = {n}, N0 = {}, m = {m}",
                cfg.n0
            )));
        }
        let inputs = format!("{},m={m}", cfg.inputs(n));
        sink.cells("main-term", &inputs, || {
            let k = cfg.kernel(n, 2 * m + 2)?;
            let smoothed = SmoothedKernel::new(&k, m)?;
            let mut cells = Vec::new();
            for psi in standard_battery(&k.field, m)? {
                let lhs = main_term_lhs(&k, &smoothed, &psi)?;
                let rhs = main_term_rhs(&k, &psi)?;
                let label = &psi.label;
                cells.push(cell(
                    format!("{label}/paths"),
                    lhs.brute.render(),
                    lhs.closed.render(),
                    lhs.brute.approx_eq(&lhs.closed, cfg.tolerance),
                ));
                cells.push(cell(
                    label.clone(),
                    lhs.brute.render(),
                    rhs.render(),
                    lhs.brute.approx_eq(&rhs, cfg.tolerance),
                ));
            }
            Ok(cells)
        })?;
    }
    Ok(sink.rows)
}

fn unit0(p: u64) -> i64 {
    if p == 2 {
        3
    } else {
        2
    }
}

fn gamma_split(f: &LocalField) -> Result<GroupElem> {
    GroupElem::from_ints(f, [1, 0, 0, unit0(f.p())])
}

fn gamma_split_near(f: &LocalField) -> Result<GroupElem> {
    GroupElem::from_ints(f, [1, 0, 0, 1 + f.p() as i64])
}

fn gamma_off_diagonal(f: &LocalField) -> Result<GroupElem> {
    let p2 = (f.p() * f.p()) as i64;
    GroupElem::from_ints(f, [1, p2, p2, unit0(f.p())])
}

fn gamma_elliptic(f: &LocalField) -> Result<GroupElem> {
    let a = f.pi_pow(-1);
    GroupElem::new(f, [a, f.pi_pow(1), f.pi_pow(1).neg(), a])
}

fn gamma_control(f: &LocalField) -> Result<GroupElem> {
    let p = f.p() as i64;
    GroupElem::from_ints(f, [p * (1 + p * p * p), 0, 0, 1])
}

type GammaFn = fn(&LocalField) -> Result<GroupElem>;

/// The orbital battery: regular semisimple γ with entries of valuation ≥ −1.
/// The last element never meets the support of f and serves as a control.
pub fn orbital_battery(p: u64) -> Vec<(String, GammaFn)> {
    vec![
        (format!("diag(1,{})", unit0(p)), gamma_split as GammaFn),
        ("diag(1,1+p)".into(), gamma_split_near),
        (format!("(1,p^2;p^2,{})", unit0(p)), gamma_off_diagonal),
        ("p^-1(1,p^2;-p^2,1)".into(), gamma_elliptic),
        ("diag(p(1+p^3),1)".into(), gamma_control),
    ]
}

fn fit_label(fit: &Option<EssentialEquivalence>) -> String {
    match fit {
        Some(e) => format!("(zeta8^{}, c={})", e.gamma_exp, e.c),
        None => "none".into(),
    }
}

fn stability(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("stability", cfg);
    let m = cfg.m;
    let levels = cfg.levels();
    let p = cfg.p as i64;
    let u = if cfg.p == 2 { 3 } else { 2 };
    let taus = [("1", 1i64), ("u^2", u * u), ("p^2", p * p)];
    let mut residuals: Vec<(u32, Vec<crate::grid::GridFnB>)> = Vec::new();
    for &n in &levels {
        let inputs = format!("{},m={m}", cfg.inputs(n));
        let nf = sink.group("smoothing", &inputs, || {
            let k = cfg.kernel(n, 2 * m + 2)?;
            let closed = phi_u_closed_form(&k, m)?;
            let brute = k.compute_phi()?.smooth_adjoint(m)?;
            let ok = closed.approx_eq(&brute, cfg.tolerance)?;
            let mut cells = vec![cell(
                "phi-u/closed-form",
                grid_match(ok, closed.max_abs_diff(&brute)?),
                "identical",
                ok && !closed.is_zero(),
            )];
            let mut forms = Vec::new();
            for (_, t) in taus {
                forms.push(metaplectic_normal_form(&k, &k.field.int(t), m)?);
            }
            let dilated = forms[0].phi0.dilate(&k.field.int(p), false)?;
            cells.push(flag(
                "normal-form/p^2-twist-is-dilation",
                forms[2].phi0.approx_eq(&dilated, cfg.tolerance)?,
            ));
            let fit = fit_equivalence(&forms[1].phi0, &forms[0].phi0, 0, cfg.tolerance)?;
            cells.push(cell(
                "normal-form/unit-square-twist",
                fit_label(&fit),
                "(zeta8^0, c=0)",
                fit == Some(EssentialEquivalence { gamma_exp: 0, c: 0 }),
            ));
            Ok((cells, forms.into_iter().map(|f| f.phi0).collect::<Vec<_>>()))
        })?;
        if let Some(nf) = nf {
            residuals.push((n, nf));
        }
    }
    if residuals.len() > 1 {
        let (n_base, base) = &residuals[0];
        let span = format!(
            "p={},N={}..{},N0={},sigma={},m={m}",
            cfg.p,
            n_base,
            residuals.last().map_or(*n_base, |r| r.0),
            cfg.n0,
            cfg.sigma
        );
        for (i, (label, t)) in taus.iter().enumerate() {
            let v = if *t % p == 0 { 2 } else { 0 };
            sink.cells("normal-form", &span, || {
                let mut fits = Vec::new();
                for (n, forms) in &residuals[1..] {
                    fits.push((n, fit_equivalence(&forms[i], &base[i], v, cfg.tolerance)?));
                }
                let first = fits[0].1;
                let common = first.is_some() && fits.iter().all(|(_, f)| *f == first);
                let lhs = fits
                    .iter()
                    .map(|(n, f)| format!("N={n}:{}", fit_label(f)))
                    .collect::<Vec<_>>()
                    .join(" ");
                Ok(vec![cell(
                    format!("normal-form/tau={label}/n-stability"),
                    lhs,
                    "single (gamma, c) with gamma^8 = 1",
                    common,
                )])
            })?;
        }
    }
    let listed = levels
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join("+");
    let span = format!(
        "p={},N={listed},N0={},sigma={},U2=K[{}]",
        cfg.p, cfg.n0, cfg.sigma, ORBITAL_U2_LEVEL
    );
    for (label, gamma) in orbital_battery(cfg.p) {
        sink.cells("orbital", &span, || {
            let scan = orbital_scan(
                &label,
                cfg.p,
                cfg.n0,
                cfg.sigma,
                ORBITAL_U2_LEVEL,
                &levels,
                cfg.backend,
                gamma,
            )?;
            let values = scan
                .rows
                .iter()
                .map(|r| format!("N={}:{}", r.n, r.value))
                .collect::<Vec<_>>()
                .join(" ");
            let thr = scan
                .threshold
                .map_or("none".to_string(), |t| format!("threshold N={t}"));
            Ok(vec![cell(
                format!("orbital/{label}"),
                format!("{thr}; {values}"),
                "0 from a threshold in range",
                scan.threshold.is_some(),
            )])
        })?;
    }
    Ok(sink.rows)
}

/// Satake points for the Hecke and Whittaker comparison.
pub fn satake_points() -> Vec<SatakeParams> {
    let mut v: Vec<SatakeParams> = [(0, 1), (1, 2), (1, 3), (2, 5), (1, 6), (3, 7)]
        .into_iter()
        .map(|(a, b)| SatakeParams::tempered(a, b))
        .collect();
    v.extend(
        [(11, 10), (-11, 10), (2, 1), (3, 1)]
            .into_iter()
            .map(|(a, b)| SatakeParams::real(a, b)),
    );
    v
}

/// Unitary Satake points (tempered or complementary series).
pub fn unitary_points() -> Vec<SatakeParams> {
    let mut v: Vec<SatakeParams> = [
        (0, 1),
        (1, 2),
        (1, 3),
        (2, 3),
        (1, 4),
        (2, 5),
        (1, 6),
        (3, 7),
    ]
    .into_iter()
    .map(|(a, b)| SatakeParams::tempered(a, b))
    .collect();
    v.extend(
        [(11, 10), (-11, 10)]
            .into_iter()
            .map(|(a, b)| SatakeParams::real(a, b)),
    );
    v
}

/// Satake points with α ≠ β, where Macdonald's u₁, u₂ are defined.
pub fn regular_points() -> Vec<SatakeParams> {
    let mut v: Vec<SatakeParams> = [
        (1, 2),
        (1, 3),
        (2, 3),
        (1, 4),
        (1, 5),
        (2, 5),
        (1, 6),
        (5, 6),
        (1, 7),
        (3, 7),
    ]
    .into_iter()
    .map(|(a, b)| SatakeParams::tempered(a, b))
    .collect();
    v.extend(
        [
            (2, 1),
            (3, 1),
            (3, 2),
            (5, 2),
            (-2, 1),
            (-3, 2),
            (11, 10),
            (-11, 10),
            (1, 2),
            (4, 3),
        ]
        .into_iter()
        .map(|(a, b)| SatakeParams::real(a, b)),
    );
    v
}

pub fn satake_label(s: &SatakeParams) -> String {
    match s {
        SatakeParams::Tempered { num, den } => format!("alpha=exp(i pi {num}/{den})"),
        SatakeParams::Real { num, den } => format!("alpha={num}/{den}"),
        SatakeParams::RealFloat { t } => format!("alpha={}", render_float(*t)),
    }
}

pub const WHITTAKER_DEPTH: i32 = 8;
pub const WHITTAKER_NORM_TERMS: usize = 200;
pub const RALLIS_TERMS: usize = 60;
/// Cap for the adaptive truncation of the specrep series checks.
pub const MAX_SERIES_TERMS: usize = 4096;

/// Runs `check` with `start` terms, doubling until the tail bound drops
/// below a tenth of the tolerance relative to the closed form.
fn truncated_series(
    start: usize,
    tol: f64,
    check: impl Fn(usize) -> Result<SeriesReport>,
) -> Result<SeriesReport> {
    let mut terms = start;
    loop {
        let r = check(terms)?;
        if r.tail_bound <= 0.1 * tol * r.closed.abs() || terms >= MAX_SERIES_TERMS {
            return Ok(r);
        }
        terms = (2 * terms).min(MAX_SERIES_TERMS);
    }
}

fn specrep(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("specrep", cfg);
    let mut qs = vec![3, 5, cfg.p];
    qs.sort_unstable();
    qs.dedup();
    let tol = cfg.tolerance;
    for q in qs {
        let inputs = format!("q={q}");
        sink.cells("whittaker-hecke", &inputs, || {
            let f = LocalField::new(q, WHITTAKER_DEPTH as u32 + 4)?;
            let mut cells = Vec::new();
            for s in satake_points() {
                for n in 0..=WHITTAKER_DEPTH {
                    let y = f.pi_pow(n);
                    let w = whittaker_value(&s, q, &y)?;
                    let h = hecke_eigenvalue(&s, &f, &y)?;
                    cells.push(cell(
                        format!("whittaker=hecke/{}/|y|=q^-{n}", satake_label(&s)),
                        w.render(),
                        h.render(),
                        w.approx_eq(&h, tol),
                    ));
                }
            }
            Ok(cells)
        })?;
        sink.cells("series", &inputs, || {
            let mut cells = Vec::new();
            for s in unitary_points() {
                let r = truncated_series(WHITTAKER_NORM_TERMS, tol, |t| {
                    whittaker_norm_check(&s, q, 0.0, t)
                })?;
                cells.push(cell(
                    format!("whittaker-norm/{}", satake_label(&s)),
                    render_float(r.series),
                    render_float(r.closed),
                    r.pass(tol),
                ));
                let r = truncated_series(RALLIS_TERMS, tol, |t| rallis_integral_check(&s, q, t))?;
                cells.push(cell(
                    format!("rallis/{}", satake_label(&s)),
                    render_float(r.series),
                    render_float(r.closed),
                    r.pass(tol),
                ));
            }
            Ok(cells)
        })?;
        sink.cells("macdonald", &inputs, || {
            let one = Amplitude::one(Backend::Exact);
            let mut cells = Vec::new();
            for s in regular_points() {
                let (u1, u2) = macdonald_u(&s, q).ok_or_else(|| Error::Domain("α = β".into()))?;
                let sum = u1.add(&u2);
                cells.push(cell(
                    format!("macdonald/u1+u2/{}", satake_label(&s)),
                    sum.render(),
                    one.render(),
                    sum.approx_eq(&one, tol),
                ));
            }
            Ok(cells)
        })?;
    }
    Ok(sink.rows)
}

fn characters(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("characters", cfg);
    for n in cfg.levels() {
        let inputs = format!("p={},N={n},N0={}", cfg.p, cfg.n0);
        sink.cells("characters", &inputs, || {
            let r = character_check(cfg.p, n, cfg.n0)?;
            Ok(vec![
                cell(
                    "count/X_N",
                    r.xn_count.to_string(),
                    r.xn_expected.to_string(),
                    r.xn_count == r.xn_expected,
                ),
                cell(
                    "count/Sigma",
                    r.sigma_count.to_string(),
                    r.sigma_expected.to_string(),
                    r.sigma_count == r.sigma_expected,
                ),
                flag("blocks/partition", r.partition),
                flag("blocks/inverse-exclusion", r.inverse_exclusion),
                flag("iota/homomorphism", r.iota_homomorphism),
                flag("iota/bijective", r.iota_bijective),
            ])
        })?;
    }
    Ok(sink.rows)
}

fn constants_suite(cfg: &RunConfig) -> Result<Vec<Row>> {
    let mut sink = Sink::new("constants", cfg);
    let n = cfg.levels().last().copied().unwrap_or(4);
    let w_norm = BigRational::new(7.into(), 3.into());
    for (d, q) in constants::standard_configs() {
        let inputs = format!("D={d},q={q},N={n},N0={}", cfg.n0);
        sink.cells("constants", &inputs, || {
            let g = GlobalConfig::new(d, q, n, cfg.n0)?;
            let fam = constants::family_size_constant(&g)?;
            let c0 = constants::c0(&g)?;
            let vol = constants::volume_gamma_g(&g)?;
            let vol_ex = constants::volume_example(&g);
            let l = constants::c_ledger(&g, &w_norm)?;
            let mt = constants::main_term_constant(&g)?;
            let two = constants::SymbolicReal::int(2);
            Ok(vec![
                cell(
                    "family-size/dual-path",
                    fam.general.to_string(),
                    fam.example.to_string(),
                    fam.agree(),
                ),
                cell(
                    "c0/dual-path",
                    c0.general.to_string(),
                    c0.example.to_string(),
                    c0.agree(),
                ),
                cell(
                    "vol(Gamma\\G)=(D-1)/12",
                    vol.to_string(),
                    vol_ex.to_string(),
                    vol == vol_ex,
                ),
                cell(
                    "ledger/c1^-1 c2 = c3",
                    l.c1.recip()?.mul(&l.c2).to_string(),
                    l.c3.to_string(),
                    l.relation_holds,
                ),
                cell(
                    "ledger/c4/c3",
                    l.c4_over_c3.to_string(),
                    two.to_string(),
                    l.c4_over_c3 == two,
                ),
                cell(
                    "main-term-constant",
                    mt.lhs.to_string(),
                    mt.rhs.to_string(),
                    mt.holds,
                ),
            ])
        })?;
    }
    Ok(sink.rows)
}

/// Serializes a report.  JSON follows {meta: {version, config}, rows: [...]};
/// markdown and CSV carry the same rows in the same order.
pub fn emit_report(report: &Report, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            let mut out =
                serde_json::to_vec_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Md => {
            let config =
                serde_json::to_string(&report.meta.config).map_err(|e| Error::Io(e.to_string()))?;
            let mut s = format!(
                "# padic-lab report\n\nversion: {}\n\nconfig: `{config}`\n\n",
                report.meta.version
            );
            s.push_str("| suite | id | inputs | lhs | rhs | pass | micros |\n|---|---|---|---|---|---|---|\n");
            let esc = |x: &str| x.replace('|', "\\|");
            for r in &report.rows {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} |\n",
                    esc(&r.suite),
                    esc(&r.id),
                    esc(&r.inputs),
                    esc(&r.lhs),
                    esc(&r.rhs),
                    r.pass,
                    r.micros
                ));
            }
            Ok(s.into_bytes())
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(["suite", "id", "inputs", "lhs", "rhs", "pass", "micros"])
                .map_err(|e| Error::Io(e.to_string()))?;
            for r in &report.rows {
                w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Io(e.to_string()))
        }
    }
}
