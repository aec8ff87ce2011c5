//! Sweeps over scales and candidate measures, variational gaps and the
//! finite-scale inequality suite.

use serde::{Deserialize, Serialize};

use crate::bowen::{
    greedy_separated, net_cover, span_count, structured_sep_count, subcover_count, CountRecord, CoverSpec,
    Exactness, PointCloud,
};
use crate::error::{Error, Result};
use crate::measure::{
    brin_katok_entropy, katok_count, katok_entropy, ks_eps_entropy, measure_provider, shapira_count,
    shapira_entropy, DisintegratedMeasure, MeasureKind, MeasureOptions,
};
use crate::system::{make_system, FiberedSystem, Structure, SystemSpec};
use crate::topological::{
    cover_entropy, effective_num_omega, eps_topological_entropy, mdim_estimate, omega_sample,
    CurveEntry, CurveKind, EntropyCurve, TopoConfig, DEFAULT_MDIM_WINDOW,
};

/// n schedule used for exact symbolic measures when none is configured.
pub fn default_symbolic_n_schedule() -> Vec<usize> {
    (1..=8).map(|i| i * 250).collect()
}

/// Geometric grid from a quarter of the diameter down by halves, four scales.
pub fn default_eps_grid(system: &FiberedSystem) -> Vec<f64> {
    let top = system.fiber.diameter() / 4.0;
    (0..4).map(|k| top * (-(k as f64)).exp2()).collect()
}

pub const DEFAULT_DELTAS: [f64; 3] = [0.25, 0.1, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub system: SystemSpec,
    /// Strictly decreasing; empty means the default grid.
    pub eps_grid: Vec<f64>,
    pub n_schedule: Vec<usize>,
    /// n schedule for the measure side; defaults per measure kind.
    pub n_measure: Option<Vec<usize>>,
    pub deltas: Vec<f64>,
    pub num_omega: usize,
    /// `(ω, x)` pairs for Brin–Katok; defaults to `num_omega`.
    pub num_pairs: Option<usize>,
    pub measures: Vec<String>,
    pub seed: u64,
    pub max_cloud_points: u64,
    pub saturation: f64,
    /// Use closed-form counts when the system has them.
    pub closed_forms: bool,
    pub mdim_window: usize,
    pub measure_options: MeasureOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let topo = TopoConfig::default();
        Self {
            system: SystemSpec::catalog("doubling"),
            eps_grid: Vec::new(),
            n_schedule: topo.n_schedule,
            n_measure: None,
            deltas: DEFAULT_DELTAS.to_vec(),
            num_omega: topo.num_omega,
            num_pairs: None,
            measures: Vec::new(),
            seed: 0,
            max_cloud_points: topo.max_cloud_points,
            saturation: topo.saturation,
            closed_forms: true,
            mdim_window: DEFAULT_MDIM_WINDOW,
            measure_options: MeasureOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("grid.epsilon values must be positive".into()));
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("grid.epsilon must be strictly decreasing".into()));
        }
        for (key, s) in [("grid.n", Some(&self.n_schedule)), ("grid.n_measure", self.n_measure.as_ref())] {
            if let Some(s) = s {
                if s.is_empty() || s[0] == 0 || s.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument(format!(
                        "{key} must be a nonempty increasing list of positive integers"
                    )));
                }
            }
        }
        if self.deltas.is_empty()
            || self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0))
            || self.deltas.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::InvalidArgument("grid.delta must be a decreasing list in (0, 1)".into()));
        }
        if self.num_omega == 0 || self.num_pairs == Some(0) {
            return Err(Error::InvalidArgument("budget.num_omega and measures.num_pairs must be positive".into()));
        }
        if self.max_cloud_points == 0 {
            return Err(Error::InvalidArgument("budget.max_cloud_points must be positive".into()));
        }
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(Error::InvalidArgument("budget.saturation must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn topo_config(&self, n_schedule: Vec<usize>) -> TopoConfig {
        TopoConfig {
            n_schedule,
            num_omega: self.num_omega,
            seed: self.seed,
            max_cloud_points: self.max_cloud_points,
            saturation: self.saturation,
        }
    }

    pub fn build_system(&self) -> Result<FiberedSystem> {
        let mut system = make_system(&self.system)?;
        if !self.closed_forms {
            system.structure = None;
        }
        Ok(system)
    }

    pub fn resolved_eps_grid(&self, system: &FiberedSystem) -> Vec<f64> {
        if self.eps_grid.is_empty() {
            default_eps_grid(system)
        } else {
            self.eps_grid.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub curve_kind: CurveKind,
    pub measure_id: Option<String>,
    pub eps: Option<f64>,
    pub reason: String,
    /// Whether the skip was caused by a resource budget.
    pub budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureCurves {
    pub measure_id: String,
    pub kind: MeasureKind,
    pub ergodic: Option<bool>,
    pub n_schedule: Vec<usize>,
    pub ks: EntropyCurve,
    pub shapira: EntropyCurve,
    pub katok: EntropyCurve,
    pub brin_katok: EntropyCurve,
    /// Per-ε dispersion of the Brin–Katok pair estimates.
    pub bk_dispersion: Vec<(f64, f64)>,
}

impl MeasureCurves {
    pub fn curve(&self, kind: CurveKind) -> Option<&EntropyCurve> {
        match kind {
            CurveKind::Ks => Some(&self.ks),
            CurveKind::Shapira => Some(&self.shapira),
            CurveKind::Katok => Some(&self.katok),
            CurveKind::BrinKatok => Some(&self.brin_katok),
            _ => None,
        }
    }

    pub fn curves(&self) -> [&EntropyCurve; 4] {
        [&self.ks, &self.shapira, &self.katok, &self.brin_katok]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdimRow {
    pub curve_kind: CurveKind,
    pub measure_id: Option<String>,
    pub window: usize,
    pub upper: f64,
    pub lower: f64,
    pub per_window_slopes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Principle {
    Ks,
    Shapira,
    Katok,
    BrinKatok,
}

impl Principle {
    pub const ALL: [Principle; 4] = [Principle::Ks, Principle::Shapira, Principle::Katok, Principle::BrinKatok];

    pub fn curve_kind(self) -> CurveKind {
        match self {
            Principle::Ks => CurveKind::Ks,
            Principle::Shapira => CurveKind::Shapira,
            Principle::Katok => CurveKind::Katok,
            Principle::BrinKatok => CurveKind::BrinKatok,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.curve_kind().as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub eps: f64,
    pub topological: f64,
    /// Largest candidate value; absent when no candidate has this scale.
    pub measure: Option<f64>,
    pub best_measure: Option<String>,
    /// Topological minus measure side; the topological value when no
    /// candidate is available.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub principle: Principle,
    pub points: Vec<GapPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub system: String,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
    pub topological: EntropyCurve,
    pub cover: EntropyCurve,
    pub measures: Vec<MeasureCurves>,
    pub mdim: Vec<MdimRow>,
    pub gaps: Vec<GapSeries>,
    pub skipped: Vec<SkippedCell>,
}

impl SweepResult {
    pub fn empty(system: &str, seed: u64) -> Self {
        Self {
            system: system.to_string(),
            seed,
            eps_grid: Vec::new(),
            topological: EntropyCurve::new(CurveKind::Topological, None),
            cover: EntropyCurve::new(CurveKind::Cover, None),
            measures: Vec::new(),
            mdim: Vec::new(),
            gaps: Vec::new(),
            skipped: Vec::new(),
        }
    }

    /// Every curve with its measure id, topological side first.
    pub fn all_curves(&self) -> Vec<&EntropyCurve> {
        let mut out = vec![&self.topological, &self.cover];
        for m in &self.measures {
            out.extend(m.curves());
        }
        out
    }

    pub fn budget_exceeded(&self) -> bool {
        self.skipped.iter().any(|s| s.budget)
    }
}

/// Errors that mark a cell as skipped rather than failing the run.
fn skip_reason(e: &Error) -> Option<bool> {
    match e {
        Error::Budget(_) | Error::Infeasible { .. } => Some(true),
        Error::MassUnreachable { .. }
        | Error::EmptyBucket { .. }
        | Error::ZeroMass { .. }
        | Error::Uncovered { .. }
        | Error::MalformedCounts(_)
        | Error::NotStructured(_)
        | Error::Unsupported(_) => Some(false),
        _ => None,
    }
}

fn record(
    curve: &mut EntropyCurve,
    skipped: &mut Vec<SkippedCell>,
    eps: f64,
    entry: Result<CurveEntry>,
) -> Result<()> {
    match entry {
        Ok(e) => curve.push(e),
        Err(e) => match skip_reason(&e) {
            Some(budget) => {
                skipped.push(SkippedCell {
                    curve_kind: curve.kind,
                    measure_id: curve.measure_id.clone(),
                    eps: Some(eps),
                    reason: e.to_string(),
                    budget,
                });
                Ok(())
            }
            None => Err(e),
        },
    }
}

fn cover_entry(system: &FiberedSystem, eps: f64, cfg: &TopoConfig) -> Result<CurveEntry> {
    let cover = net_cover(&system.fiber, eps)?;
    let c = cover_entropy(system, &cover, cfg)?;
    let exactness = match system.structure {
        Some(Structure::Cylinder { alphabet }) if cover.uniform_cylinder_depth(alphabet).is_some() => Exactness::Exact,
        _ => Exactness::GreedyUpper,
    };
    let num = c.per_omega.len();
    let fixed = c.per_omega.iter().map(|g| g.fixed_n).sum::<f64>() / num as f64;
    Ok(CurveEntry {
        eps,
        estimate: c.value,
        estimate_fixed_n: fixed,
        stderr: c.stderr,
        num_omega: num,
        delta_trend: Vec::new(),
        cells: c
            .per_omega
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let (n, log_count) = *g.raw.last().expect("nonempty growth data");
                crate::topological::Cell {
                    omega_index: i,
                    delta: None,
                    n,
                    count: log_count.exp().round().min(f64::MAX),
                    exactness,
                    entropy_fixed_n: g.fixed_n,
                    entropy_slope: g.value,
                }
            })
            .collect(),
    })
}

fn measure_curves(
    system: &FiberedSystem,
    measure: &DisintegratedMeasure,
    grid: &[f64],
    config: &SweepConfig,
    skipped: &mut Vec<SkippedCell>,
) -> Result<MeasureCurves> {
    let n_schedule = match (&config.n_measure, measure.kind) {
        (Some(s), _) => s.clone(),
        (None, MeasureKind::ExactSymbolic) => default_symbolic_n_schedule(),
        (None, _) => config.n_schedule.clone(),
    };
    let cfg = config.topo_config(n_schedule.clone());
    let opts = &config.measure_options;
    let id = Some(measure.id.clone());
    let mut out = MeasureCurves {
        measure_id: measure.id.clone(),
        kind: measure.kind,
        ergodic: measure.ergodic,
        n_schedule,
        ks: EntropyCurve::new(CurveKind::Ks, id.clone()),
        shapira: EntropyCurve::new(CurveKind::Shapira, id.clone()),
        katok: EntropyCurve::new(CurveKind::Katok, id.clone()),
        brin_katok: EntropyCurve::new(CurveKind::BrinKatok, id),
        bk_dispersion: Vec::new(),
    };
    let pairs = config.num_pairs.unwrap_or(config.num_omega);
    for &eps in grid {
        record(&mut out.ks, skipped, eps, ks_eps_entropy(measure, system, eps, &cfg, opts))?;
        let shapira = net_cover(&system.fiber, eps)
            .and_then(|cover| shapira_entropy(measure, system, &cover, eps, &config.deltas, &cfg, opts));
        record(&mut out.shapira, skipped, eps, shapira)?;
        record(
            &mut out.katok,
            skipped,
            eps,
            katok_entropy(measure, system, eps, &config.deltas, &cfg, opts),
        )?;
        let bk = brin_katok_entropy(measure, system, eps, pairs, &cfg).map(|r| {
            out.bk_dispersion.push((eps, r.dispersion));
            r.entry
        });
        record(&mut out.brin_katok, skipped, eps, bk)?;
    }
    Ok(out)
}

fn mdim_row(curve: &EntropyCurve, window: usize, skipped: &mut Vec<SkippedCell>) -> Option<MdimRow> {
    match mdim_estimate(curve, window) {
        Ok(m) => Some(MdimRow {
            curve_kind: curve.kind,
            measure_id: curve.measure_id.clone(),
            window: m.window,
            upper: m.upper,
            lower: m.lower,
            per_window_slopes: m.per_window_slopes,
        }),
        Err(e) => {
            skipped.push(SkippedCell {
                curve_kind: curve.kind,
                measure_id: curve.measure_id.clone(),
                eps: None,
                reason: format!("mdim: {e}"),
                budget: false,
            });
            None
        }
    }
}

/// Topological and measure-side curves on the shared ε grid, mdim
/// estimates of every curve and the four gap series.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let system = config.build_system()?;
    let grid = config.resolved_eps_grid(&system);
    let cfg = config.topo_config(config.n_schedule.clone());
    let mut result = SweepResult::empty(&system.name, config.seed);
    result.eps_grid = grid.clone();
    let mut skipped = Vec::new();
    for &eps in &grid {
        record(&mut result.topological, &mut skipped, eps, eps_topological_entropy(&system, eps, &cfg))?;
        record(&mut result.cover, &mut skipped, eps, cover_entry(&system, eps, &cfg))?;
    }
    for (i, spec) in config.measures.iter().enumerate() {
        let seed = crate::rng::derive_seed(config.seed, "measure", i as u64);
        let measure = measure_provider(&system, spec, seed, &config.measure_options)?;
        let curves = measure_curves(&system, &measure, &grid, config, &mut skipped)?;
        result.measures.push(curves);
    }
    let window = config.mdim_window;
    let mut mdim = Vec::new();
    for curve in result.all_curves() {
        if let Some(row) = mdim_row(curve, window, &mut skipped) {
            mdim.push(row);
        }
    }
    result.mdim = mdim;
    if result.topological.entries.is_empty() {
        // the topological cells carry the reasons
        result.gaps.clear();
    } else {
        result.gaps = Principle::ALL
            .iter()
            .map(|&p| {
                Ok(GapSeries {
                    principle: p,
                    points: variational_gap(&result, p)?,
                })
            })
            .collect::<Result<_>>()?;
    }
    result.skipped = skipped;
    Ok(result)
}

/// `gap(ε)` = topological side minus the best candidate of the principle.
pub fn variational_gap(sweep: &SweepResult, principle: Principle) -> Result<Vec<GapPoint>> {
    if sweep.topological.entries.is_empty() {
        return Err(Error::MissingCurve("topological".into()));
    }
    let kind = principle.curve_kind();
    Ok(sweep
        .topological
        .entries
        .iter()
        .map(|t| {
            let mut best: Option<(f64, &str)> = None;
            for m in &sweep.measures {
                if let Some(e) = m.curve(kind).and_then(|c| c.at(t.eps)) {
                    if best.is_none_or(|(v, _)| e.estimate > v) {
                        best = Some((e.estimate, &m.measure_id));
                    }
                }
            }
            GapPoint {
                eps: t.eps,
                topological: t.estimate,
                measure: best.map(|b| b.0),
                best_measure: best.map(|b| b.1.to_string()),
                gap: t.estimate - best.map_or(0.0, |b| b.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckLevel {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub system: String,
    pub check: String,
    pub level: CheckLevel,
    pub measure_id: Option<String>,
    pub omega: Option<usize>,
    pub n: Option<usize>,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    /// The compared quantities, in the order of the inequality.
    pub values: Vec<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub verdicts: Vec<Verdict>,
    /// Systems or checks that could not run on an exact backend.
    pub skipped: Vec<String>,
}

impl SuiteReport {
    pub fn hard_total(&self) -> usize {
        self.verdicts.iter().filter(|v| v.level == CheckLevel::Hard).count()
    }

    pub fn hard_failures(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| v.level == CheckLevel::Hard && !v.passed).collect()
    }

    pub fn soft_failures(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| v.level == CheckLevel::Soft && !v.passed).collect()
    }

    pub fn all_hard_passed(&self) -> bool {
        self.hard_failures().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub num_omega: usize,
    pub n_max: usize,
    pub eps: Vec<f64>,
    pub deltas: Vec<f64>,
    /// Tolerance of the entropy-level checks, in nats.
    pub soft_tolerance: f64,
    /// n schedule of the entropy-level checks.
    pub soft_n_schedule: Vec<usize>,
    pub seed: u64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            num_omega: 4,
            n_max: 4,
            eps: vec![0.5, 0.25, 0.125],
            deltas: DEFAULT_DELTAS.to_vec(),
            soft_tolerance: 0.05,
            soft_n_schedule: default_symbolic_n_schedule(),
            seed: 0,
        }
    }
}

/// Systems and measures of the default exact suite.
pub fn default_suite_instances() -> Vec<(SystemSpec, Vec<String>)> {
    let measures = vec!["uniform".to_string(), "bernoulli(0.7,0.3)".to_string()];
    vec![
        (SystemSpec::catalog("full-shift(2)"), measures.clone()),
        (SystemSpec::catalog("random-subshift(2)"), measures),
    ]
}

struct Ctx<'a> {
    system: &'a FiberedSystem,
    out: &'a mut Vec<Verdict>,
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        check: &str,
        level: CheckLevel,
        measure_id: Option<&str>,
        omega: Option<usize>,
        n: Option<usize>,
        eps: Option<f64>,
        delta: Option<f64>,
        values: Vec<f64>,
        passed: bool,
    ) {
        self.out.push(Verdict {
            system: self.system.name.clone(),
            check: check.to_string(),
            level,
            measure_id: measure_id.map(str::to_string),
            omega,
            n,
            eps,
            delta,
            values,
            passed,
        });
    }
}

fn level_of(records: &[&CountRecord]) -> CheckLevel {
    if records.iter().all(|r| r.exactness == Exactness::Exact) {
        CheckLevel::Hard
    } else {
        CheckLevel::Soft
    }
}

fn chain_leq(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
}

/// Exact integer inequalities at fixed `(ω, n, ε, δ)` plus entropy-level
/// checks with a tolerance. Only cylinder systems have exact backends;
/// other systems are listed as skipped.
pub fn inequality_suite(
    system: &FiberedSystem,
    measures: &[DisintegratedMeasure],
    params: &SuiteParams,
) -> Result<SuiteReport> {
    let mut verdicts = Vec::new();
    let mut skipped = Vec::new();
    let Some(Structure::Cylinder { .. }) = system.structure else {
        skipped.push(format!("{}: no exact backend", system.name));
        return Ok(SuiteReport { verdicts, skipped });
    };
    let fiber = &system.fiber;
    let mut ctx = Ctx {
        system,
        out: &mut verdicts,
    };
    let eps_min = params.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let depth = params.n_max + fiber.open_ball_depth(eps_min / 4.0);
    let cloud = PointCloud::cylinders(fiber, depth, depth + 8)?;
    let num = effective_num_omega(system, params.num_omega);
    let opts = MeasureOptions::default();
    let cylinder_covers = [CoverSpec::cylinders(fiber, 1)?, CoverSpec::cylinders(fiber, 2)?];
    for w in 0..num {
        let env = omega_sample(system, params.seed, w, params.n_max + 1)?;
        let sep = |n: usize, eps: f64| greedy_separated(&cloud, system, &env, n, eps).map(|r| r.1);
        for n in 1..=params.n_max {
            // sep(diam) ≤ subcover ≤ sep(Leb) for cylinder covers
            for cover in &cylinder_covers {
                let a = sep(n, cover.diam_cert)?;
                let b = subcover_count(system, &env, cover, &cloud, n)?;
                let c = sep(n, cover.leb_cert)?;
                let v = vec![a.value, b.value, c.value];
                let ok = chain_leq(&v);
                ctx.push("sep(diam) <= subcover <= sep(leb)", level_of(&[&a, &b, &c]), None, Some(w), Some(n), Some(cover.diam_cert), None, v, ok);
            }
            for &eps in &params.eps {
                let s = sep(n, eps)?;
                let sp = span_count(&cloud, system, &env, n, eps)?;
                let sp2 = span_count(&cloud, system, &env, n, eps / 2.0)?;
                let lvl = level_of(&[&s, &sp, &sp2]);
                ctx.push("span <= sep", lvl, None, Some(w), Some(n), Some(eps), None, vec![sp.value, s.value], sp.value <= s.value);
                ctx.push("sep <= span(eps/2)", lvl, None, Some(w), Some(n), Some(eps), None, vec![s.value, sp2.value], s.value <= sp2.value);
                let st = structured_sep_count(system, n, eps)?;
                ctx.push("structured sep == cloud sep", level_of(&[&s]), None, Some(w), Some(n), Some(eps), None, vec![st.value, s.value], st.value == s.value);
                let net = net_cover(fiber, eps)?;
                let a = sep(n, net.diam_cert)?;
                let b = subcover_count(system, &env, &net, &cloud, n)?;
                let c = sep(n, net.leb_cert)?;
                let v = vec![a.value, b.value, c.value];
                let ok = chain_leq(&v);
                ctx.push("sep(diam) <= subcover <= sep(leb)", level_of(&[&a, &b, &c]), None, Some(w), Some(n), Some(net.diam_cert), None, v, ok);
                for m in measures {
                    let mut previous: Option<f64> = None;
                    for &delta in &params.deltas {
                        let k = katok_count(m, system, &env, n, eps, delta, &opts)?;
                        let sh = shapira_count(m, system, &env, &net, n, delta, &opts)?;
                        let k4 = katok_count(m, system, &env, n, eps / 4.0, delta, &opts)?;
                        let lvl = level_of(&[&k, &sh, &k4]);
                        let id = Some(m.id.as_str());
                        ctx.push("katok <= shapira(net cover)", lvl, id, Some(w), Some(n), Some(eps), Some(delta), vec![k.value, sh.value], k.value <= sh.value);
                        ctx.push("shapira(net cover) <= katok(eps/4)", lvl, id, Some(w), Some(n), Some(eps), Some(delta), vec![sh.value, k4.value], sh.value <= k4.value);
                        if let Some(p) = previous {
                            ctx.push("katok non-increasing in delta", level_of(&[&k]), id, Some(w), Some(n), Some(eps), Some(delta), vec![k.value, p], k.value >= p);
                        }
                        previous = Some(k.value);
                    }
                }
            }
        }
        // degenerate scale: one ball covers everything
        let big = 2.0 * fiber.diameter();
        for n in 1..=params.n_max {
            let s = sep(n, big)?;
            let sp = span_count(&cloud, system, &env, n, big)?;
            let single = CoverSpec::cylinders(fiber, 0)?;
            let sub = subcover_count(system, &env, &single, &cloud, n)?;
            let mut v = vec![s.value, sp.value, sub.value];
            for m in measures {
                v.push(katok_count(m, system, &env, n, big, params.deltas[0], &opts)?.value);
            }
            let ok = v.iter().all(|&x| x == 1.0);
            ctx.push("counts at eps >= diam equal 1", level_of(&[&s, &sp, &sub]), None, Some(w), Some(n), Some(big), None, v, ok);
        }
    }
    // entropy-level checks
    let cfg = TopoConfig {
        n_schedule: params.soft_n_schedule.clone(),
        num_omega: params.num_omega,
        seed: params.seed,
        ..TopoConfig::default()
    };
    let tol = params.soft_tolerance;
    let delta = *params.deltas.last().expect("nonempty deltas");
    for m in measures {
        for &eps in &params.eps {
            let id = Some(m.id.as_str());
            let bk = brin_katok_entropy(m, system, eps, params.num_omega.max(8), &cfg)?.entry.estimate;
            let k2 = katok_entropy(m, system, 2.0 * eps, &[delta], &cfg, &opts)?.estimate;
            ctx.push("katok(2 eps) <= bk(eps) + tol", CheckLevel::Soft, id, None, None, Some(eps), Some(delta), vec![k2, bk + tol], k2 <= bk + tol);
            let ks = ks_eps_entropy(m, system, eps, &cfg, &opts)?.estimate;
            ctx.push("bk(eps) <= ks(eps) + tol", CheckLevel::Soft, id, None, None, Some(eps), None, vec![bk, ks + tol], bk <= ks + tol);
        }
    }
    Ok(SuiteReport { verdicts, skipped })
}

/// Suite over several systems, each with its candidate measures.
pub fn run_suite(instances: &[(SystemSpec, Vec<String>)], params: &SuiteParams) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        verdicts: Vec::new(),
        skipped: Vec::new(),
    };
    for (spec, specs) in instances {
        let system = make_system(spec)?;
        let measures = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                measure_provider(&system, s, crate::rng::derive_seed(params.seed, "measure", i as u64), &MeasureOptions::default())
            })
            .collect::<Result<Vec<_>>>()?;
        let r = inequality_suite(&system, &measures, params)?;
        report.verdicts.extend(r.verdicts);
        report.skipped.extend(r.skipped);
    }
    Ok(report)
}
