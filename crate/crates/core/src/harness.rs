//! Convergence studies over uniformly refined meshes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{
    hessian_oscillation, quad_points, Difference, FeFunction, FeSpace, Jet, PiecewiseFn, Scheme,
    P2_NODES,
};
use crate::forms::{norm, NormTag, SchemeParams};
use crate::mesh::{build_lshape, build_structured_square, refine_times, uniform_refine, Triangulation};
use crate::problems::{Discretization, Domain, ManufacturedSolution, ProblemKind, ProblemSpec, SourceFunctional};
use crate::solver::{solve, NewtonControls, NewtonReport};
use crate::transfer::{morley_interpolate, SmootherTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorNorm {
    #[serde(rename = "energy_pw")]
    EnergyPw,
    #[serde(rename = "H1_broken")]
    H1Broken,
    #[serde(rename = "L2")]
    L2,
}

impl ErrorNorm {
    pub const ALL: [ErrorNorm; 3] = [ErrorNorm::EnergyPw, ErrorNorm::H1Broken, ErrorNorm::L2];

    pub fn name(self) -> &'static str {
        match self {
            ErrorNorm::EnergyPw => "energy_pw",
            ErrorNorm::H1Broken => "H1_broken",
            ErrorNorm::L2 => "L2",
        }
    }
}

impl FromStr for ErrorNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ErrorNorm::ALL
            .into_iter()
            .find(|n| n.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownTag(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLoadConfig {
    pub x: f64,
    pub y: f64,
    #[serde(default = "one")]
    pub magnitude: f64,
}

fn one() -> f64 {
    1.0
}

fn default_norms() -> Vec<ErrorNorm> {
    ErrorNorm::ALL.to_vec()
}

fn default_jim() -> SmootherTag {
    SmootherTag::Jim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub name: String,
    pub problem: ProblemKind,
    pub scheme: Scheme,
    #[serde(default = "default_jim")]
    pub r: SmootherTag,
    #[serde(default = "default_jim")]
    pub s: SmootherTag,
    #[serde(default)]
    pub params: SchemeParams,
    #[serde(default)]
    pub newton: NewtonControls,
    pub mesh: Domain,
    /// Inclusive range of refinement levels.
    pub levels: [usize; 2],
    #[serde(default)]
    pub solution: Option<String>,
    #[serde(default)]
    pub point_load: Option<PointLoadConfig>,
    #[serde(default = "default_norms")]
    pub norms: Vec<ErrorNorm>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels[0] > self.levels[1] {
            return Err(Error::Config(format!("empty level range {:?}", self.levels)));
        }
        if self.norms.is_empty() {
            return Err(Error::Config("no error norms requested".into()));
        }
        match (&self.solution, &self.point_load) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Config("give exactly one of `solution` and `point_load`".into()))
            }
            (Some(name), None) => {
                let m = ManufacturedSolution::by_name(name)?;
                if m.domain != self.mesh {
                    return Err(Error::Config(format!("solution `{name}` lives on the {} domain", m.domain)));
                }
            }
            (None, Some(_)) => {}
        }
        self.params.validate()?;
        self.newton.validate()
    }

    pub fn manufactured(&self) -> Option<ManufacturedSolution> {
        self.solution.as_deref().and_then(|n| ManufacturedSolution::by_name(n).ok())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let sources = match (self.manufactured(), self.point_load) {
            (Some(m), _) => m.sources(self.problem),
            (None, Some(p)) => {
                let mut s = vec![SourceFunctional::PointLoad {
                    at: [p.x, p.y],
                    magnitude: p.magnitude,
                }];
                if self.problem == ProblemKind::VonKarman {
                    s.push(SourceFunctional::Zero);
                }
                s
            }
            (None, None) => return Err(Error::Config("no source".into())),
        };
        let mut spec = ProblemSpec::new(self.problem, self.scheme, sources).with_smoothers(self.r, self.s);
        spec.params = self.params;
        spec.newton = self.newton;
        Ok(spec)
    }

    /// Output path without extension.
    pub fn output_stem(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(&self.name))
    }
}

pub fn base_mesh(domain: Domain) -> Result<Triangulation> {
    match domain {
        Domain::Square => build_structured_square(1),
        Domain::Lshape => build_lshape(),
    }
}

/// Base mesh refined `level` times.
pub fn level_mesh(domain: Domain, level: usize) -> Result<Arc<Triangulation>> {
    Ok(Arc::new(refine_times(&base_mesh(domain)?, level)))
}

fn error_integrals(mesh: &Triangulation, f: &dyn PiecewiseFn) -> [f64; 3] {
    let split = f.needs_split();
    let degree = if split { 14 } else { 10 };
    let mut s = [0.0; 3];
    for k in 0..mesh.num_triangles() {
        for q in quad_points(mesh, k, degree, split) {
            let j = f.jet_in_sub(k, q.x, q.sub);
            s[0] += q.w * j.hessian_dot(&j);
            s[1] += q.w * (j.g[0] * j.g[0] + j.g[1] * j.g[1]);
            s[2] += q.w * j.v * j.v;
        }
    }
    s
}

/// Errors of `approx` against `exact` in the requested broken norms.
pub fn error_norms(
    mesh: &Triangulation,
    exact: &dyn PiecewiseFn,
    approx: &dyn PiecewiseFn,
    which: &[ErrorNorm],
) -> BTreeMap<ErrorNorm, f64> {
    let s = error_integrals(mesh, &Difference(exact, approx));
    which
        .iter()
        .map(|n| {
            let v = match n {
                ErrorNorm::EnergyPw => s[0],
                ErrorNorm::H1Broken => s[1],
                ErrorNorm::L2 => s[2],
            };
            (*n, v.max(0.0).sqrt())
        })
        .collect()
}

/// Coefficients on a dG space of a finer mesh reproducing `f` exactly; the
/// fine mesh must descend from `f`'s mesh through `levels` refinements.
pub fn prolongate(f: &FeFunction, fine: &Arc<Triangulation>, levels: usize) -> Result<FeFunction> {
    let space = Arc::new(FeSpace::new(fine.clone(), Scheme::Dg)?);
    let ancestors = ancestors(fine, levels)?;
    let mut c = vec![0.0; space.dim()];
    for t in 0..fine.num_triangles() {
        for (a, node) in P2_NODES.iter().enumerate() {
            let x = fine.from_barycentric(t, *node);
            c[6 * t + a] = f.jet(ancestors[t], x).v;
        }
    }
    FeFunction::new(space, c)
}

fn ancestors(fine: &Triangulation, levels: usize) -> Result<Vec<usize>> {
    if levels == 0 {
        return Ok((0..fine.num_triangles()).collect());
    }
    let parents = fine
        .parents()
        .ok_or_else(|| Error::InvalidParameter("mesh carries no refinement history".into()))?;
    if levels == 1 {
        return Ok(parents.to_vec());
    }
    Err(Error::InvalidParameter("use prolongate_chain for several levels".into()))
}

/// Prolongation through a chain of refinements, coarsest first.
pub fn prolongate_chain(f: &FeFunction, chain: &[Arc<Triangulation>]) -> Result<FeFunction> {
    let mut cur = f.clone();
    for m in chain {
        cur = prolongate(&cur, m, 1)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

/// Least-squares slope of log(error) against log(h) over the last three
/// points.
pub fn fit_rate(h: &[f64], err: &[f64]) -> Option<RateFit> {
    let n = h.len().min(err.len());
    if n < 2 {
        return None;
    }
    let start = n.saturating_sub(3);
    let pts: Vec<(f64, f64)> = (start..n)
        .filter(|&i| err[i] > 0.0 && h[i] > 0.0)
        .map(|i| (h[i].ln(), err[i].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let rate = sxy / sxx;
    let residual = (pts.iter().map(|(x, y)| (y - my - rate * (x - mx)).powi(2)).sum::<f64>() / m).sqrt();
    Some(RateFit { rate, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub dofs: usize,
    pub h_max: f64,
    pub newton_iterations: usize,
    pub errors: BTreeMap<ErrorNorm, f64>,
    pub residual_norms: Vec<f64>,
    pub corrections: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub name: String,
    pub problem: ProblemKind,
    pub scheme: Scheme,
    pub r: SmootherTag,
    pub s: SmootherTag,
    pub mesh: Domain,
    /// `exact:<solution>` or `fine_mesh:<level>`.
    pub reference: String,
    pub levels: Vec<LevelResult>,
    pub rates: BTreeMap<ErrorNorm, RateFit>,
    pub wall_time: f64,
}

/// Solves on one level and returns the discretization with the Newton report.
pub fn solve_level(config: &StudyConfig, level: usize) -> Result<(Discretization, NewtonReport)> {
    let mesh = level_mesh(config.mesh, level)?;
    let d = Discretization::new(config.spec()?, mesh)?;
    let report = solve(&d)?;
    Ok((d, report))
}

fn components(d: &Discretization, x: &[f64]) -> Result<Vec<FeFunction>> {
    let n = d.space().dim();
    (0..d.spec().kind.components())
        .map(|c| FeFunction::new(d.space().clone(), x[c * n..(c + 1) * n].to_vec()))
        .collect()
}

fn combine(maps: Vec<BTreeMap<ErrorNorm, f64>>) -> BTreeMap<ErrorNorm, f64> {
    let mut out = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            *out.entry(k).or_insert(0.0) += v * v;
        }
    }
    out.into_iter().map(|(k, v): (ErrorNorm, f64)| (k, v.sqrt())).collect()
}

pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let start = Instant::now();
    let mut levels = Vec::new();
    let (lo, hi) = (config.levels[0], config.levels[1]);
    let reference = match config.manufactured() {
        Some(m) => format!("exact:{}", m.name),
        None => format!("fine_mesh:{}", hi + 2),
    };
    // point loads: solve once on the fine reference mesh
    let fine = if config.manufactured().is_none() {
        let (d, rep) = solve_level(config, hi + 2).map_err(|e| e.at_level(hi + 2))?;
        Some(components(&d, &rep.solution)?)
    } else {
        None
    };
    for level in lo..=hi {
        let run = || -> Result<LevelResult> {
            let (d, rep) = solve_level(config, level)?;
            let comps = components(&d, &rep.solution)?;
            let errors = match (&config.manufactured(), &fine) {
                (Some(m), _) => {
                    let exact = [m.u, m.v];
                    combine(
                        comps
                            .iter()
                            .zip(exact)
                            .map(|(c, e)| error_norms(d.mesh(), &e.as_fn(), c, &config.norms))
                            .collect(),
                    )
                }
                (None, Some(fine)) => {
                    let mut chain = Vec::new();
                    let mut m = (**d.mesh()).clone();
                    for _ in level..hi + 2 {
                        m = uniform_refine(&m);
                        chain.push(Arc::new(m.clone()));
                    }
                    let top = chain.last().expect("at least two refinements").clone();
                    let mut maps = Vec::new();
                    for (c, f) in comps.iter().zip(fine) {
                        let p = prolongate_chain(c, &chain)?;
                        let fd = prolongate(f, &top, 0)?;
                        maps.push(error_norms(&top, &fd, &p, &config.norms));
                    }
                    combine(maps)
                }
                (None, None) => unreachable!(),
            };
            Ok(LevelResult {
                level,
                dofs: d.dim(),
                h_max: d.mesh().h_max(),
                newton_iterations: rep.iterations,
                errors,
                residual_norms: rep.residual_norms,
                corrections: rep.corrections,
            })
        };
        levels.push(run().map_err(|e| e.at_level(level))?);
    }
    let h: Vec<f64> = levels.iter().map(|l| l.h_max).collect();
    let rates = config
        .norms
        .iter()
        .filter_map(|n| {
            let e: Vec<f64> = levels.iter().map(|l| l.errors[n]).collect();
            fit_rate(&h, &e).map(|f| (*n, f))
        })
        .collect();
    Ok(StudyResult {
        name: config.name.clone(),
        problem: config.problem,
        scheme: config.scheme,
        r: config.r,
        s: config.s,
        mesh: config.mesh,
        reference,
        levels,
        rates,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

impl StudyResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::FunctionFile(e.to_string()))
    }

    fn norms(&self) -> Vec<ErrorNorm> {
        self.levels.first().map(|l| l.errors.keys().copied().collect()).unwrap_or_default()
    }

    /// Level table with metadata, rates, timing and Newton logs as `#` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# meta,name,{}", self.name);
        let _ = writeln!(s, "# meta,problem,{}", self.problem);
        let _ = writeln!(s, "# meta,scheme,{}", self.scheme);
        let _ = writeln!(s, "# meta,r,{}", self.r);
        let _ = writeln!(s, "# meta,s,{}", self.s);
        let _ = writeln!(s, "# meta,mesh,{}", self.mesh);
        let _ = writeln!(s, "# meta,reference,{}", self.reference);
        let norms = self.norms();
        s.push_str("level,dofs,h_max,newton_iterations");
        for n in &norms {
            let _ = write!(s, ",{}", n.name());
        }
        s.push('\n');
        for l in &self.levels {
            let _ = write!(s, "{},{},{:?},{}", l.level, l.dofs, l.h_max, l.newton_iterations);
            for n in &norms {
                let _ = write!(s, ",{:?}", l.errors[n]);
            }
            s.push('\n');
        }
        for (n, f) in &self.rates {
            let _ = writeln!(s, "# rate,{},{:?},{:?}", n.name(), f.rate, f.residual);
        }
        let _ = writeln!(s, "# wall_time,{:?}", self.wall_time);
        for l in &self.levels {
            for (tag, v) in [("residual", &l.residual_norms), ("correction", &l.corrections)] {
                let _ = write!(s, "# newton,{},{tag}", l.level);
                for x in v {
                    let _ = write!(s, ",{x:?}");
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::FunctionFile(format!("csv: {m}"));
        let num = |t: &str| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}")));
        let int = |t: &str| t.parse::<usize>().map_err(|e| bad(format!("`{t}`: {e}")));
        let mut meta = BTreeMap::new();
        let mut norms: Vec<ErrorNorm> = Vec::new();
        let mut levels: Vec<LevelResult> = Vec::new();
        let mut rates = BTreeMap::new();
        let mut wall_time = None;
        let mut header = false;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = line.strip_prefix("# ") {
                let f: Vec<&str> = rest.split(',').collect();
                match f[0] {
                    "meta" if f.len() >= 3 => {
                        meta.insert(f[1].to_string(), f[2..].join(","));
                    }
                    "rate" if f.len() == 4 => {
                        rates.insert(
                            f[1].parse::<ErrorNorm>()?,
                            RateFit {
                                rate: num(f[2])?,
                                residual: num(f[3])?,
                            },
                        );
                    }
                    "wall_time" if f.len() == 2 => wall_time = Some(num(f[1])?),
                    "newton" if f.len() >= 3 => {
                        let lv = int(f[1])?;
                        let vals = f[3..].iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
                        let l = levels
                            .iter_mut()
                            .find(|l| l.level == lv)
                            .ok_or_else(|| bad(format!("newton log for unknown level {lv}")))?;
                        match f[2] {
                            "residual" => l.residual_norms = vals,
                            "correction" => l.corrections = vals,
                            other => return Err(bad(format!("unknown newton field `{other}`"))),
                        }
                    }
                    other => return Err(bad(format!("unknown comment `{other}`"))),
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if !header {
                if f.len() < 4 || f[..4] != ["level", "dofs", "h_max", "newton_iterations"] {
                    return Err(bad("missing header".into()));
                }
                norms = f[4..].iter().map(|t| t.parse()).collect::<Result<_>>()?;
                header = true;
                continue;
            }
            if f.len() != 4 + norms.len() {
                return Err(bad(format!("row `{line}` has {} fields", f.len())));
            }
            let mut errors = BTreeMap::new();
            for (n, t) in norms.iter().zip(&f[4..]) {
                errors.insert(*n, num(t)?);
            }
            levels.push(LevelResult {
                level: int(f[0])?,
                dofs: int(f[1])?,
                h_max: num(f[2])?,
                newton_iterations: int(f[3])?,
                errors,
                residual_norms: vec![],
                corrections: vec![],
            });
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing meta `{k}`")));
        Ok(StudyResult {
            name: get("name")?,
            problem: get("problem")?.parse()?,
            scheme: get("scheme")?.parse()?,
            r: get("r")?.parse()?,
            s: get("s")?.parse()?,
            mesh: get("mesh")?.parse()?,
            reference: get("reference")?,
            levels,
            rates,
            wall_time: wall_time.ok_or_else(|| bad("missing wall_time".into()))?,
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        if let Some(dir) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let csv = stem.with_extension("csv");
        let json = stem.with_extension("json");
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&json, self.to_json())?;
        Ok((csv, json))
    }
}

/// One level of a scheme comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareLevel {
    pub level: usize,
    pub h_max: f64,
    /// ‖u − u_h‖_h per scheme.
    pub errors: BTreeMap<Scheme, f64>,
    /// ‖(1 − Π₀) D²u‖
    pub oscillation: f64,
    /// |||u − I_M u|||_pw
    pub interpolation: f64,
    /// Pairwise ratios keyed `a/b`; empty when every error is negligible.
    pub ratios: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub name: String,
    pub problem: ProblemKind,
    pub levels: Vec<CompareLevel>,
    pub wall_time: f64,
}

pub const COMPARED: [Scheme; 3] = [Scheme::Morley, Scheme::Dg, Scheme::C0ip];

/// Errors of the Morley, dG and C⁰IP schemes (S = JIM) against the exact
/// solution in ‖·‖_h, with the best-approximation proxy ‖(1 − Π₀)D²u‖.
pub fn compare_schemes(config: &StudyConfig) -> Result<CompareResult> {
    config.validate()?;
    if config.s != SmootherTag::Jim {
        return Err(Error::Config("the comparison requires s = \"JIM\"".into()));
    }
    let m = config
        .manufactured()
        .ok_or_else(|| Error::Config("the comparison needs a manufactured solution".into()))?;
    let start = Instant::now();
    let mut levels = Vec::new();
    for level in config.levels[0]..=config.levels[1] {
        let run = || -> Result<CompareLevel> {
            let mesh = level_mesh(config.mesh, level)?;
            let mut errors = BTreeMap::new();
            let exact = [m.u, m.v];
            for scheme in COMPARED {
                let c = StudyConfig {
                    scheme,
                    ..config.clone()
                };
                let d = Discretization::new(c.spec()?, mesh.clone())?;
                let rep = solve(&d)?;
                let mut sq = 0.0;
                for (comp, e) in components(&d, &rep.solution)?.iter().zip(exact) {
                    let u = e.as_fn();
                    sq += norm(&mesh, &Difference(&u, comp), NormTag::H, &config.params).powi(2);
                }
                errors.insert(scheme, sq.sqrt());
            }
            let morley = Arc::new(FeSpace::new(mesh.clone(), Scheme::Morley)?);
            let (mut osc, mut interp) = (0.0, 0.0);
            for e in exact.iter().take(config.problem.components()) {
                let u = e.as_fn();
                osc += hessian_oscillation(&mesh, &u).powi(2);
                let im = morley_interpolate(&u, &morley)?;
                interp += norm(&mesh, &Difference(&u, &im), NormTag::Pw, &config.params).powi(2);
            }
            let (osc, interp) = (osc.sqrt(), interp.sqrt());
            let mut ratios = BTreeMap::new();
            let mut named: Vec<(String, f64)> = errors.iter().map(|(s, e)| (s.to_string(), *e)).collect();
            named.push(("oscillation".into(), osc));
            if named.iter().any(|(_, e)| *e > 1e-10) {
                for (i, (a, ea)) in named.iter().enumerate() {
                    for (b, eb) in &named[i + 1..] {
                        ratios.insert(format!("{a}/{b}"), ea / eb);
                    }
                }
            }
            Ok(CompareLevel {
                level,
                h_max: mesh.h_max(),
                errors,
                oscillation: osc,
                interpolation: interp,
                ratios,
            })
        };
        levels.push(run().map_err(|e| e.at_level(level))?);
    }
    Ok(CompareResult {
        name: config.name.clone(),
        problem: config.problem,
        levels,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

impl CompareResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h_max");
        for sch in COMPARED {
            let _ = write!(s, ",{sch}");
        }
        s.push_str(",oscillation,interpolation");
        let keys: Vec<String> = self
            .levels
            .iter()
            .flat_map(|l| l.ratios.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        for k in &keys {
            let _ = write!(s, ",{k}");
        }
        s.push('\n');
        for l in &self.levels {
            let _ = write!(s, "{},{:?}", l.level, l.h_max);
            for sch in COMPARED {
                let _ = write!(s, ",{:?}", l.errors[&sch]);
            }
            let _ = write!(s, ",{:?},{:?}", l.oscillation, l.interpolation);
            for k in &keys {
                match l.ratios.get(k) {
                    Some(v) => {
                        let _ = write!(s, ",{v:?}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        let _ = writeln!(s, "# wall_time,{:?}", self.wall_time);
        s
    }

    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        if let Some(dir) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let csv = stem.with_extension("csv");
        let json = stem.with_extension("json");
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&json, self.to_json())?;
        Ok((csv, json))
    }
}

/// Jet of the exact solution, used where a closure is more convenient.
pub fn exact_jet(m: &ManufacturedSolution, component: usize, p: [f64; 2]) -> Jet {
    if component == 0 {
        m.u.jet(p)
    } else {
        m.v.jet(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
name = "demo"
problem = "navier_stokes"
scheme = "morley"
r = "IM"
mesh = "square"
levels = [1, 2]
solution = "sin2"
norms = ["energy_pw", "L2"]

[params]
sigma1 = 20.0
sigma2 = 20.0
sigma_ip = 20.0
theta = 1.0
"#;

    #[test]
    fn config_parsing() {
        let c = StudyConfig::from_toml(CONFIG).unwrap();
        assert_eq!(c.r, SmootherTag::Im);
        assert_eq!(c.s, SmootherTag::Jim);
        assert_eq!(c.norms, vec![ErrorNorm::EnergyPw, ErrorNorm::L2]);
        let bad = CONFIG.replace("levels = [1, 2]", "levels = [3, 2]");
        assert!(matches!(StudyConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = CONFIG.replace("\"L2\"", "\"H3\"");
        assert!(StudyConfig::from_toml(&bad).is_err());
        let bad = CONFIG.replace("solution = \"sin2\"", "solution = \"lshape\"");
        assert!(StudyConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn rate_fit() {
        let h = [0.5, 0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        let f = fit_rate(&h, &e).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-12 && f.residual < 1e-12);
        assert!(fit_rate(&[0.1], &[1.0]).is_none());
        assert_eq!(fit_rate(&h, &e), fit_rate(&h, &e));
    }

    #[test]
    fn study_roundtrip() {
        let c = StudyConfig::from_toml(CONFIG).unwrap();
        let r = run_study(&c).unwrap();
        assert_eq!(r.levels.len(), 2);
        let back = StudyResult::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert_eq!(StudyResult::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn exact_reproduction_and_zero() {
        let mesh = level_mesh(Domain::Square, 2).unwrap();
        let space = Arc::new(FeSpace::new(mesh.clone(), Scheme::Dg).unwrap());
        let q = |p: [f64; 2]| Jet {
            v: p[0] * p[0] - p[0] * p[1],
            g: [2.0 * p[0] - p[1], -p[0]],
            h: [2.0, -1.0, 0.0],
        };
        let f = FeFunction::new(space.clone(), space.interpolate_nodal(|p| q(p).v).unwrap()).unwrap();
        let e = error_norms(&mesh, &crate::fespace::Smooth::new(q, 2), &f, &ErrorNorm::ALL);
        assert!(e.values().all(|v| *v < 1e-12), "{e:?}");

        let m = ManufacturedSolution::by_name("sin2").unwrap();
        let z = error_norms(&mesh, &m.u.as_fn(), &space.zero(), &[ErrorNorm::EnergyPw]);
        let full = crate::forms::energy_sq(&mesh, &m.u.as_fn()).sqrt();
        assert!((z[&ErrorNorm::EnergyPw] - full).abs() < 1e-12 * full);
    }

    #[test]
    fn prolongation_is_exact() {
        let coarse = level_mesh(Domain::Lshape, 1).unwrap();
        let space = Arc::new(FeSpace::new(coarse.clone(), Scheme::Morley).unwrap());
        let c: Vec<f64> = (0..space.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = FeFunction::new(space, c).unwrap();
        let fine1 = Arc::new(uniform_refine(&coarse));
        let fine2 = Arc::new(uniform_refine(&fine1));
        let p = prolongate_chain(&f, &[fine1, fine2.clone()]).unwrap();
        for t in (0..fine2.num_triangles()).step_by(7) {
            let x = fine2.centroid(t);
            let k = coarse.locate(x).unwrap();
            let (a, b) = (p.jet(t, x), f.jet(k, x));
            assert!((a.v - b.v).abs() < 1e-12 && (a.h[0] - b.h[0]).abs() < 1e-9);
        }
    }
}
