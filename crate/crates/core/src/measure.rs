//! Disintegrated measures `μ = ∫ μ_ω dP` and the measure-theoretic
//! ε-entropies: partition (Kolmogorov–Sinai), Shapira, Katok and Brin–Katok,
//! plus the Shannon–McMillan–Breiman diagnostic.
//!
//! Three representations are supported:
//! - exact symbolic: Bernoulli or Markov cylinder masses on a symbolic fiber;
//! - exact product: Lebesgue measure on circle and cube fibers;
//! - atoms: equally weighted points per environment bucket (empirical
//!   measures and point masses).
//!
//! Exact symbolic counts use the mass spectrum of cylinders, grouped into
//! type classes for Bernoulli laws so that depths in the thousands stay cheap.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bowen::{
    refine_itineraries, BowenIndex, CountKind, CountParams, CountRecord, CoverSpec, Exactness, OrbitTable, PointCloud,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::setcover::sparse_mass_cover;
use crate::system::{
    BaseLaw, BaseTrajectory, FiberKind, FiberMap, FiberPoint, FiberSpace,
    FiberedSystem, PointRef, Structure,
};
use crate::term::Term;
use crate::topological::{
    effective_num_omega, entry_from_cells, growth_rate_logs, mean_stderr, omega_sample, Cell,
    CurveEntry, TopoConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    ExactSymbolic,
    ExactProduct,
    Empirical,
}

/// Equally weighted atoms per environment key (the last `condition`
/// environment symbols before time 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomBuckets {
    pub condition: usize,
    pub steps: usize,
    pub buckets: BTreeMap<Vec<u8>, Vec<FiberPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Representation {
    Symbolic(BaseLaw),
    /// Lebesgue measure; `surrogate` is a low-discrepancy sample used where
    /// no closed form is available.
    Lebesgue { surrogate: Vec<FiberPoint> },
    Atoms(AtomBuckets),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisintegratedMeasure {
    pub id: String,
    pub kind: MeasureKind,
    pub repr: Representation,
    /// Ergodicity when known from the construction.
    pub ergodic: Option<bool>,
}

/// View of `μ_ω` for one environment.
#[derive(Debug, Clone, Copy)]
pub enum FiberView<'a> {
    Symbolic(&'a BaseLaw),
    Lebesgue(&'a [FiberPoint]),
    Atoms(&'a [FiberPoint]),
}

impl FiberView<'_> {
    /// Finite sample standing in for the measure in generic computations.
    fn atoms(&self) -> Option<&[FiberPoint]> {
        match self {
            FiberView::Symbolic(_) => None,
            FiberView::Lebesgue(a) | FiberView::Atoms(a) => Some(a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    pub empirical_steps: usize,
    /// Steps discarded after each restart of the empirical orbit.
    pub empirical_burn_in: usize,
    pub empirical_condition: usize,
    pub surrogate_atoms: usize,
    /// Deepest cylinder spectrum computed for exact symbolic measures.
    pub max_symbol_depth: usize,
    /// Largest number of spectrum classes (type classes or words).
    pub max_classes: usize,
    /// Sampled statistics stop growing `n` once the number of distinct
    /// itineraries exceeds this fraction of the sample.
    pub saturation: f64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            empirical_steps: 100_000,
            empirical_burn_in: 8,
            empirical_condition: 0,
            surrogate_atoms: 1 << 14,
            max_symbol_depth: 4096,
            max_classes: 1 << 22,
            saturation: 1.0 / 16.0,
        }
    }
}

fn is_cylinder(system: &FiberedSystem) -> bool {
    matches!(system.structure, Some(Structure::Cylinder { .. }))
}

fn markov_irreducible(matrix: &[Vec<f64>]) -> bool {
    let k = matrix.len();
    (0..k).all(|start| {
        let mut seen = vec![false; k];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (j, &p) in matrix[i].iter().enumerate() {
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}

/// Bits of precision consumed per step by the fiber maps; used to size the
/// restart chunks of empirical orbits so floating point never collapses.
fn expansion_bits(system: &FiberedSystem) -> f64 {
    system
        .maps
        .iter()
        .map(|m| match m {
            FiberMap::Times(k) => (*k as f64).log2(),
            FiberMap::Rotate(_) => 0.0,
            FiberMap::Tent => 1.0,
            FiberMap::ProductShift => 1.0,
            FiberMap::ShiftPermute(_) => 1.0,
        })
        .fold(0.0, f64::max)
}

/// Empirical measure along the skew-product orbit. The fiber orbit restarts
/// from a uniform point every chunk (the environment keeps running); each
/// chunk discards `burn_in` steps and records the rest. Points recorded at
/// time `t` go to the bucket keyed by the `condition` symbols before `t`.
pub fn build_empirical(
    system: &FiberedSystem,
    steps: usize,
    condition: usize,
    burn_in: usize,
    seed: u64,
) -> Result<AtomBuckets> {
    if steps == 0 {
        return Err(Error::InvalidArgument("empirical measure needs at least one step".into()));
    }
    let bits = expansion_bits(system);
    let chunk = if bits > 0.0 {
        ((40.0 / bits).floor() as usize).clamp(4, 256)
    } else {
        256
    };
    let burn = burn_in.min(chunk / 4);
    let record = chunk - burn;
    let chunks = steps.div_ceil(record);
    let word_len = chunk + 64;
    let mut rng = stream(seed, "empirical", 0);
    let env = system.base.law.sample(condition + chunks * chunk, &mut rng);
    let mut buckets: BTreeMap<Vec<u8>, Vec<FiberPoint>> = BTreeMap::new();
    let mut recorded = 0;
    'outer: for c in 0..chunks {
        let mut x = system.fiber.random_point(&mut rng, word_len);
        for j in 0..chunk {
            let t = condition + c * chunk + j;
            if j >= burn {
                buckets
                    .entry(env[t - condition..t].to_vec())
                    .or_default()
                    .push(x.clone());
                recorded += 1;
                if recorded == steps {
                    break 'outer;
                }
            }
            x = system.step(env[t], x.as_ref());
        }
    }
    Ok(AtomBuckets {
        condition,
        steps,
        buckets,
    })
}

fn parse_point(fiber: &FiberSpace, args: &[Term], text: &str) -> Result<FiberPoint> {
    let nums: Vec<f64> = args
        .iter()
        .map(|a| a.as_numbers())
        .collect::<Option<Vec<Vec<f64>>>>()
        .ok_or_else(|| Error::InvalidArgument(format!("cannot read point in '{text}'")))?
        .concat();
    let p = match fiber.kind {
        FiberKind::Circle if nums.len() == 1 => FiberPoint::Real(nums[0].rem_euclid(1.0)),
        FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) if nums.len() == d => FiberPoint::Vector(nums),
        FiberKind::Symbolic(_) => {
            let mut w: Vec<u8> = nums.iter().map(|&v| v as u8).collect();
            w.resize(w.len().max(256), 0);
            FiberPoint::Word(w)
        }
        _ => {
            return Err(Error::Incompatible(format!(
                "point '{text}' does not fit fiber {:?}",
                fiber.kind
            )))
        }
    };
    if !fiber.contains(&p) {
        return Err(Error::Incompatible(format!("point '{text}' lies outside the fiber")));
    }
    Ok(p)
}

/// Build a candidate measure from its spec string: `bernoulli(p..)`,
/// `markov((row),..)`, `markov-init((init),(row),..)`, `uniform`,
/// `lebesgue`, `empirical`, `empirical(N)`, `empirical(N,L)`, `point(x..)`
/// or `default` (the system's natural measure).
pub fn measure_provider(
    system: &FiberedSystem,
    spec: &str,
    seed: u64,
    opts: &MeasureOptions,
) -> Result<DisintegratedMeasure> {
    let term = Term::parse(spec)?;
    let (name, args) = term
        .as_call()
        .ok_or_else(|| Error::InvalidArgument(format!("cannot read measure '{spec}'")))?;
    let id = spec.split_whitespace().collect::<String>();
    match name {
        "default" => {
            let d = system.default_measure.clone().unwrap_or_else(|| "empirical".into());
            let mut m = measure_provider(system, &d, seed, opts)?;
            m.id = d;
            Ok(m)
        }
        "bernoulli" | "markov" | "markov-init" | "uniform" => {
            let FiberKind::Symbolic(k) = system.fiber.kind else {
                if name == "uniform" {
                    return measure_provider(system, "lebesgue", seed, opts).map(|mut m| {
                        m.id = id.clone();
                        m
                    });
                }
                return Err(Error::Incompatible(format!(
                    "{name} measures need a symbolic fiber, not {:?}",
                    system.fiber.kind
                )));
            };
            let law = if name == "uniform" {
                BaseLaw::Bernoulli(vec![1.0 / k as f64; k])
            } else {
                BaseLaw::parse(spec)?
            };
            if law.alphabet_size() != k {
                return Err(Error::Incompatible(format!(
                    "measure over {} letters on a {k}-letter fiber",
                    law.alphabet_size()
                )));
            }
            let ergodic = match &law {
                BaseLaw::Bernoulli(_) => Some(true),
                BaseLaw::Markov { matrix, .. } => markov_irreducible(matrix).then_some(true),
            };
            Ok(DisintegratedMeasure {
                id,
                kind: MeasureKind::ExactSymbolic,
                repr: Representation::Symbolic(law),
                ergodic,
            })
        }
        "lebesgue" => {
            if matches!(system.fiber.kind, FiberKind::Symbolic(_)) {
                return Err(Error::Incompatible(
                    "Lebesgue measure needs a circle or cube fiber".into(),
                ));
            }
            let cloud = PointCloud::quasi_random(&system.fiber, opts.surrogate_atoms, seed, 0)?;
            Ok(DisintegratedMeasure {
                id,
                kind: MeasureKind::ExactProduct,
                repr: Representation::Lebesgue {
                    surrogate: cloud.points,
                },
                ergodic: None,
            })
        }
        "empirical" => {
            let nums: Vec<f64> = args.iter().filter_map(Term::as_number).collect();
            if nums.len() != args.len() || nums.len() > 2 {
                return Err(Error::InvalidArgument(format!("cannot read measure '{spec}'")));
            }
            let steps = nums.first().map_or(opts.empirical_steps, |&v| v as usize);
            let condition = nums.get(1).map_or(opts.empirical_condition, |&v| v as usize);
            if condition > 0 && !system.base.two_sided {
                return Err(Error::Incompatible(
                    "conditioning on the environment past needs a two-sided base".into(),
                ));
            }
            let atoms = build_empirical(
                system,
                steps,
                condition,
                opts.empirical_burn_in,
                derive_seed(seed, &id, 0),
            )?;
            Ok(DisintegratedMeasure {
                id,
                kind: MeasureKind::Empirical,
                repr: Representation::Atoms(atoms),
                ergodic: None,
            })
        }
        "point" => {
            let p = parse_point(&system.fiber, args, spec)?;
            let mut buckets = BTreeMap::new();
            buckets.insert(Vec::new(), vec![p]);
            Ok(DisintegratedMeasure {
                id,
                kind: MeasureKind::Empirical,
                repr: Representation::Atoms(AtomBuckets {
                    condition: 0,
                    steps: 1,
                    buckets,
                }),
                ergodic: None,
            })
        }
        other => Err(Error::InvalidArgument(format!("unknown measure '{other}'"))),
    }
}

impl DisintegratedMeasure {
    /// `μ_ω` for the environment `env`.
    pub fn fiber(&self, env: &BaseTrajectory) -> Result<FiberView<'_>> {
        match &self.repr {
            Representation::Symbolic(law) => Ok(FiberView::Symbolic(law)),
            Representation::Lebesgue { surrogate } => Ok(FiberView::Lebesgue(surrogate)),
            Representation::Atoms(b) => {
                let key = env.past(b.condition).ok_or(Error::HorizonTooShort {
                    have: env.past_len(),
                    need: b.condition,
                })?;
                match b.buckets.get(key) {
                    Some(atoms) if !atoms.is_empty() => Ok(FiberView::Atoms(atoms)),
                    _ => Err(Error::EmptyBucket {
                        key: key.to_vec(),
                        steps: b.steps,
                    }),
                }
            }
        }
    }

    /// Whether `μ_ω` does not depend on `ω`.
    pub fn is_constant(&self) -> bool {
        match &self.repr {
            Representation::Atoms(b) => b.condition == 0,
            _ => true,
        }
    }

    fn check_system(&self, system: &FiberedSystem) -> Result<()> {
        if let Representation::Symbolic(law) = &self.repr {
            match system.structure {
                Some(Structure::Cylinder { alphabet }) if alphabet == law.alphabet_size() => Ok(()),
                _ => Err(Error::Incompatible(format!(
                    "measure {} needs a cylinder system over {} letters",
                    self.id,
                    law.alphabet_size()
                ))),
            }
        } else {
            Ok(())
        }
    }

    /// Total mass of `μ_ω`.
    pub fn total_mass(&self, env: &BaseTrajectory) -> Result<f64> {
        Ok(match self.fiber(env)? {
            FiberView::Symbolic(law) => {
                let k = law.alphabet_size();
                (0..k as u8).map(|a| log_cylinder_mass(law, &[a]).exp()).sum()
            }
            FiberView::Lebesgue(_) => 1.0,
            FiberView::Atoms(a) => a.iter().map(|_| 1.0 / a.len() as f64).sum(),
        })
    }
}

fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `log μ([w])`.
pub fn log_cylinder_mass(law: &BaseLaw, word: &[u8]) -> f64 {
    match law {
        BaseLaw::Bernoulli(p) => word.iter().map(|&a| ln(p[a as usize])).sum(),
        BaseLaw::Markov { initial, matrix } => {
            let Some((&first, rest)) = word.split_first() else {
                return 0.0;
            };
            let mut acc = ln(initial[first as usize]);
            let mut prev = first;
            for &a in rest {
                acc += ln(matrix[prev as usize][a as usize]);
                prev = a;
            }
            acc
        }
    }
}

fn shannon(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Entropy rate: `H(p)` for Bernoulli, `-Σ π_i P_ij log P_ij` for Markov.
pub fn entropy_rate(law: &BaseLaw) -> f64 {
    match law {
        BaseLaw::Bernoulli(p) => shannon(p),
        BaseLaw::Markov { matrix, .. } => {
            let pi = crate::system::stationary_distribution(matrix);
            pi.iter().zip(matrix).map(|(w, row)| w * shannon(row)).sum()
        }
    }
}

/// Entropy of the depth-`d` cylinder partition.
pub fn cylinder_partition_entropy(law: &BaseLaw, d: usize) -> f64 {
    match law {
        BaseLaw::Bernoulli(p) => d as f64 * shannon(p),
        BaseLaw::Markov { initial, matrix } => {
            if d == 0 {
                return 0.0;
            }
            let row_h: Vec<f64> = matrix.iter().map(|r| shannon(r)).collect();
            let mut marginal = initial.clone();
            let mut h = shannon(initial);
            for _ in 1..d {
                h += marginal.iter().zip(&row_h).map(|(m, r)| m * r).sum::<f64>();
                let mut next = vec![0.0; marginal.len()];
                for (i, m) in marginal.iter().enumerate() {
                    for (j, p) in matrix[i].iter().enumerate() {
                        next[j] += m * p;
                    }
                }
                marginal = next;
            }
            h
        }
    }
}

/// Cylinder masses at depth `d` as `(log mass, log multiplicity)` classes,
/// most massive first. Zero-mass cylinders are omitted.
pub fn mass_spectrum(law: &BaseLaw, d: usize, max_classes: usize) -> Result<Vec<(f64, f64)>> {
    let k = law.alphabet_size();
    let mut out: Vec<(f64, f64)> = Vec::new();
    match law {
        BaseLaw::Bernoulli(p) => {
            // number of compositions of d into k parts
            let mut classes = 1f64;
            for i in 1..k {
                classes *= (d + i) as f64 / i as f64;
            }
            if classes > max_classes as f64 {
                return Err(Error::Budget(format!(
                    "{classes:.0} type classes at depth {d} exceed {max_classes}"
                )));
            }
            let mut lnfact = vec![0.0f64; d + 1];
            for i in 1..=d {
                lnfact[i] = lnfact[i - 1] + (i as f64).ln();
            }
            let lp: Vec<f64> = p.iter().map(|&x| ln(x)).collect();
            let mut counts = vec![0usize; k];
            fn rec(
                j: usize,
                left: usize,
                counts: &mut Vec<usize>,
                lp: &[f64],
                lnfact: &[f64],
                d: usize,
                out: &mut Vec<(f64, f64)>,
            ) {
                let k = counts.len();
                if j == k - 1 {
                    counts[j] = left;
                    let mut lm = 0.0;
                    let mut lmult = lnfact[d];
                    for (c, l) in counts.iter().zip(lp) {
                        if *c > 0 {
                            lm += *c as f64 * l;
                        }
                        lmult -= lnfact[*c];
                    }
                    if lm > f64::NEG_INFINITY {
                        out.push((lm, lmult));
                    }
                    return;
                }
                for c in 0..=left {
                    counts[j] = c;
                    rec(j + 1, left - c, counts, lp, lnfact, d, out);
                }
            }
            rec(0, d, &mut counts, &lp, &lnfact, d, &mut out);
        }
        BaseLaw::Markov { .. } => {
            let words = (k as f64).powi(d as i32);
            if words > max_classes as f64 {
                return Err(Error::Budget(format!(
                    "{words:.0} words at depth {d} exceed {max_classes}"
                )));
            }
            let mut word = vec![0u8; d];
            let total = words as u64;
            for mut code in 0..total {
                for slot in word.iter_mut().rev() {
                    *slot = (code % k as u64) as u8;
                    code /= k as u64;
                }
                let lm = log_cylinder_mass(law, &word);
                if lm > f64::NEG_INFINITY {
                    out.push((lm, 0.0));
                }
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(out)
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log of the least number of cylinders whose total mass is strictly above
/// `target`, taking the most massive first (optimal for disjoint sets).
pub fn log_count_above(spectrum: &[(f64, f64)], target: f64) -> Result<f64> {
    let mut acc = 0.0;
    let mut log_count = f64::NEG_INFINITY;
    for &(lm, lmult) in spectrum {
        let class_mass = (lm + lmult).exp();
        if acc + class_mass > target {
            let log_need = ln(target - acc) - lm;
            let log_r = if log_need > 36.0 {
                log_need
            } else {
                let r = if log_need == f64::NEG_INFINITY {
                    1.0
                } else {
                    log_need.exp().floor() + 1.0
                };
                r.ln()
            };
            return Ok(logaddexp(log_count, log_r));
        }
        acc += class_mass;
        log_count = logaddexp(log_count, lmult);
    }
    Err(Error::MassUnreachable {
        target,
        reached: acc,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Depth of the cylinder that equals an open `(n, ε)` Bowen ball.
fn bowen_depth(fiber: &FiberSpace, n: usize, eps: f64) -> usize {
    match fiber.open_ball_depth(eps) {
        0 => 0,
        q => n + q - 1,
    }
}

fn exact_spectrum_count(
    law: &BaseLaw,
    depth: usize,
    delta: f64,
    opts: &MeasureOptions,
) -> Result<f64> {
    if depth > opts.max_symbol_depth {
        return Err(Error::Budget(format!(
            "cylinder depth {depth} exceeds max_symbol_depth {}",
            opts.max_symbol_depth
        )));
    }
    let spectrum = mass_spectrum(law, depth, opts.max_classes)?;
    log_count_above(&spectrum, 1.0 - delta)
}

/// Neighbour lists `{b : d_n(a, b) < ε}` over a table of atoms.
fn open_ball_lists(table: &OrbitTable, fiber: &FiberSpace, eps: f64) -> Vec<Vec<u32>> {
    let mut index = BowenIndex::new(table, fiber, eps);
    for p in 0..table.len() {
        index.insert(p);
    }
    (0..table.len())
        .into_par_iter()
        .map(|p| {
            let mut nb = Vec::new();
            index.candidates(p, |q| {
                if table.within_open(fiber, p, q, eps) {
                    nb.push(q as u32);
                }
                false
            });
            nb.sort_unstable();
            nb
        })
        .collect()
}

/// `N^δ_{μω}(n, ε)`: least number of open `(n, ε)` Bowen balls, centred at
/// points of the measure's support, with union mass strictly above `1 - δ`.
pub fn katok_count(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    n: usize,
    eps: f64,
    delta: f64,
    opts: &MeasureOptions,
) -> Result<CountRecord> {
    check_delta(delta)?;
    if !(eps > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("need eps > 0 and n ≥ 1".into()));
    }
    measure.check_system(system)?;
    let params = CountParams {
        omega: None,
        n,
        eps: Some(eps),
        delta: Some(delta),
    };
    let view = measure.fiber(env)?;
    if let FiberView::Symbolic(law) = view {
        let depth = bowen_depth(&system.fiber, n, eps);
        let lc = exact_spectrum_count(law, depth, delta, opts)?;
        return Ok(CountRecord::from_log(CountKind::Katok, lc, Exactness::Exact, params));
    }
    let atoms = view.atoms().expect("non-symbolic views carry atoms");
    let table = OrbitTable::build(system, env, atoms, n)?;
    let sets = open_ball_lists(&table, &system.fiber, eps);
    atom_cover_record(CountKind::Katok, view, &sets, delta, params)
}

/// `N_{μω}(U_0^{n-1}, δ)`: least number of elements of the iterated cover
/// with union mass strictly above `1 - δ`.
pub fn shapira_count(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    cover: &CoverSpec,
    n: usize,
    delta: f64,
    opts: &MeasureOptions,
) -> Result<CountRecord> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    measure.check_system(system)?;
    let params = CountParams {
        omega: None,
        n,
        eps: Some(cover.diam_cert),
        delta: Some(delta),
    };
    let view = measure.fiber(env)?;
    if let FiberView::Symbolic(law) = view {
        let q = cover
            .uniform_cylinder_depth(law.alphabet_size())
            .ok_or_else(|| Error::Unsupported("exact Shapira counts need a complete cylinder cover".into()))?;
        let depth = if q == 0 { 0 } else { n + q - 1 };
        let lc = exact_spectrum_count(law, depth, delta, opts)?;
        return Ok(CountRecord::from_log(CountKind::Shapira, lc, Exactness::Exact, params));
    }
    let atoms = view.atoms().expect("non-symbolic views carry atoms");
    let table = OrbitTable::build(system, env, atoms, n)?;
    let mut sets = None;
    refine_itineraries(&table, &system.fiber, cover, n, |m, groups| {
        if m == n {
            sets = Some(groups.to_vec());
        }
        true
    })?;
    let sets = sets.ok_or_else(|| Error::Budget("iterated cover too large".into()))?;
    atom_cover_record(CountKind::Shapira, view, &sets, delta, params)
}

fn atom_cover_record(
    kind: CountKind,
    view: FiberView<'_>,
    sets: &[Vec<u32>],
    delta: f64,
    params: CountParams,
) -> Result<CountRecord> {
    let len = view.atoms().expect("non-symbolic views carry atoms").len();
    let weights = vec![1.0 / len as f64; len];
    let (count, exact) = sparse_mass_cover(sets, &weights, 1.0 - delta).map_err(|reached| Error::MassUnreachable {
        target: 1.0 - delta,
        reached,
    })?;
    let exactness = match (view, exact) {
        (FiberView::Lebesgue(_), _) => Exactness::Sampled,
        (_, true) => Exactness::Exact,
        (_, false) => Exactness::GreedyUpper,
    };
    Ok(CountRecord::new(kind, count, exactness, params))
}

/// Neighbour pairs above this make a Katok schedule skip that `n`.
const MAX_BALL_PAIRS: usize = 20_000_000;

enum AtomCounter<'a> {
    Katok { eps: f64 },
    Shapira { cover: &'a CoverSpec },
}

/// Katok or Shapira counts of an atomic fiber measure along `schedule`, one
/// list per δ. Orbits are computed once; neighbour lists and itineraries are
/// refined from one `n` to the next. The schedule ends once the smallest-δ
/// count exceeds `saturation` times the number of atoms.
fn atom_schedule_counts(
    view: FiberView<'_>,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    counter: AtomCounter<'_>,
    schedule: &[usize],
    deltas: &[f64],
    saturation: f64,
) -> Result<Vec<Vec<(usize, CountRecord)>>> {
    let atoms = view.atoms().expect("non-symbolic views carry atoms");
    let n_max = *schedule.last().ok_or_else(|| Error::InvalidArgument("empty n schedule".into()))?;
    let table = OrbitTable::build(system, env, atoms, n_max)?;
    let fiber = &system.fiber;
    let cap = saturation * atoms.len() as f64;
    let mut out: Vec<Vec<(usize, CountRecord)>> = vec![Vec::new(); deltas.len()];
    let (kind, eps) = match counter {
        AtomCounter::Katok { eps } => (CountKind::Katok, eps),
        AtomCounter::Shapira { cover } => (CountKind::Shapira, cover.diam_cert),
    };
    // records every δ at `n`; false once saturated
    let record = |n: usize, sets: &[Vec<u32>], out: &mut Vec<Vec<(usize, CountRecord)>>| -> Result<bool> {
        for (k, &d) in deltas.iter().enumerate() {
            let params = CountParams {
                omega: None,
                n,
                eps: Some(eps),
                delta: Some(d),
            };
            let c = atom_cover_record(kind, view, sets, d, params)?;
            if c.value > cap && atoms.len() > 1 {
                for o in out[..k].iter_mut() {
                    o.pop();
                }
                return Ok(false);
            }
            out[k].push((n, c));
        }
        Ok(true)
    };
    match counter {
        AtomCounter::Shapira { cover } => {
            let mut failure = None;
            refine_itineraries(&table, fiber, cover, n_max, |m, groups| {
                if !schedule.contains(&m) {
                    return true;
                }
                match record(m, groups, &mut out) {
                    Ok(go) => go,
                    Err(e) => {
                        failure = Some(e);
                        false
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
        }
        AtomCounter::Katok { eps } => {
            let len = table.len();
            let probe: Vec<usize> = (0..len).step_by(len.div_ceil(64).max(1)).collect();
            let mut lists: Option<(usize, Vec<Vec<u32>>)> = None;
            for &n in schedule {
                let sets = match lists.take() {
                    Some((prev, sets)) => sets
                        .into_par_iter()
                        .enumerate()
                        .map(|(p, nb)| {
                            nb.into_iter()
                                .filter(|&q| (prev..n).all(|i| fiber.dist(table.at(p, i), table.at(q as usize, i)) < eps))
                                .collect()
                        })
                        .collect(),
                    None => {
                        let prefix = table.prefix(n)?;
                        let hits: usize = probe
                            .par_iter()
                            .map(|&p| (0..len).filter(|&q| prefix.within_open(fiber, p, q, eps)).count())
                            .sum();
                        if hits as f64 / probe.len() as f64 * len as f64 > MAX_BALL_PAIRS as f64 {
                            continue;
                        }
                        open_ball_lists(&prefix, fiber, eps)
                    }
                };
                let go = record(n, &sets, &mut out)?;
                lists = Some((n, sets));
                if !go {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Radius per coordinate of the product-shift Bowen box, valid for `n ≤ D`.
fn product_shift_box(fiber: &FiberSpace, dim: usize, n: usize, eps: f64) -> Option<Vec<f64>> {
    if n > dim {
        return None;
    }
    Some(
        (0..dim)
            .map(|l| {
                let w = if l < n { 1.0 } else { (-((l - n + 1) as f64)).exp2() };
                eps / (fiber.scale * w)
            })
            .collect(),
    )
}

/// Arc radius of the Bowen ball on the circle for expanding or rotation
/// maps when no wrap-around can occur.
fn circle_ball_radius(system: &FiberedSystem, env: &BaseTrajectory, n: usize, eps: f64) -> Option<f64> {
    let rho = eps / system.fiber.scale;
    let mut factor = 1.0f64;
    let mut m_max = 1.0f64;
    let mut radius = rho;
    for i in 0..n {
        if i > 0 {
            let m = match system.map_for(env.future()[i - 1]) {
                FiberMap::Times(m) => *m as f64,
                FiberMap::Rotate(_) => 1.0,
                _ => return None,
            };
            m_max = m_max.max(m);
            factor *= m;
        }
        radius = radius.min(rho / factor);
    }
    for &s in &env.future()[..n.saturating_sub(1)] {
        if let FiberMap::Times(m) = system.map_for(s) {
            m_max = m_max.max(*m as f64);
        }
    }
    (rho * m_max <= 0.5).then_some(radius)
}

/// `μ_ω(B_{d_n^ω}(x, ε))` for the open Bowen ball.
#[allow(clippy::too_many_arguments)]
pub fn bowen_ball_mass(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    x: &FiberPoint,
    n: usize,
    eps: f64,
) -> Result<f64> {
    Ok(log_bowen_ball_masses(measure, system, env, x, &[n], eps)?[0].0.exp())
}

/// Log masses for a schedule of `n`, each tagged exact or sampled.
fn log_bowen_ball_masses(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    x: &FiberPoint,
    schedule: &[usize],
    eps: f64,
) -> Result<Vec<(f64, bool)>> {
    measure.check_system(system)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let fiber = &system.fiber;
    let view = measure.fiber(env)?;
    match (view, x) {
        (FiberView::Symbolic(law), FiberPoint::Word(w)) => schedule
            .iter()
            .map(|&n| {
                let d = bowen_depth(fiber, n, eps);
                if d > w.len() {
                    return Err(Error::InvalidArgument(format!(
                        "word of length {} too short for depth {d}",
                        w.len()
                    )));
                }
                Ok((log_cylinder_mass(law, &w[..d]), true))
            })
            .collect(),
        (FiberView::Lebesgue(surrogate), _) => schedule
            .iter()
            .map(|&n| {
                if let (Some(Structure::ProductShift { dim }), FiberPoint::Vector(v)) =
                    (system.structure, x)
                {
                    if let Some(r) = product_shift_box(fiber, dim, n, eps) {
                        let m = v
                            .iter()
                            .zip(&r)
                            .map(|(&c, &r)| ((c + r).min(1.0) - (c - r).max(0.0)).max(0.0))
                            .product();
                        return Ok((ln(m), true));
                    }
                }
                if let FiberPoint::Real(_) = x {
                    env.require(n)?;
                    if let Some(r) = circle_ball_radius(system, env, n, eps) {
                        return Ok((ln((2.0 * r).min(1.0)), true));
                    }
                }
                atom_ball_masses(system, env, surrogate, x, &[n], eps).map(|m| (ln(m[0]), false))
            })
            .collect(),
        (FiberView::Atoms(atoms), _) => Ok(atom_ball_masses(system, env, atoms, x, schedule, eps)?
            .into_iter()
            .map(|m| (ln(m), false))
            .collect()),
        _ => Err(Error::Incompatible("point does not fit the fiber".into())),
    }
}

/// Fraction of atoms in the open Bowen ball around `x`, for each `n`.
fn atom_ball_masses(
    system: &FiberedSystem,
    env: &BaseTrajectory,
    atoms: &[FiberPoint],
    x: &FiberPoint,
    schedule: &[usize],
    eps: f64,
) -> Result<Vec<f64>> {
    let n_max = *schedule.iter().max().expect("nonempty schedule");
    let xs = crate::system::fiber_iterate(system, env, x, n_max)?.points;
    // exit time: first i with d(T^i x, T^i a) ≥ ε
    let exits: Vec<usize> = atoms
        .par_iter()
        .map(|a| {
            let mut y = a.clone();
            for (i, xi) in xs.iter().enumerate() {
                if system.fiber.metric(xi, &y) >= eps {
                    return i;
                }
                if i + 1 < n_max {
                    y = system.step(env.future()[i], y.as_ref());
                }
            }
            n_max
        })
        .collect();
    Ok(schedule
        .iter()
        .map(|&n| exits.iter().filter(|&&e| e >= n).count() as f64 / atoms.len() as f64)
        .collect())
}

/// Grid cell of a point for the partition of diameter `≤ ε`.
fn cell_label(fiber: &FiberSpace, p: PointRef<'_>, eps: f64) -> u64 {
    let s = fiber.scale;
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut mix = |v: u64| {
        h = (h ^ v).wrapping_mul(0x0100_0000_01b3);
    };
    match p {
        PointRef::Real(x) => {
            let m = (s / eps).ceil().max(1.0);
            mix(((x * m) as u64).min(m as u64 - 1));
        }
        PointRef::Vector(v) => {
            for (j, &c) in v.iter().enumerate() {
                let m = (s * fiber.weight(j) / eps).ceil().max(1.0);
                mix(((c * m) as u64).min(m as u64 - 1));
            }
        }
        PointRef::Word(w) => {
            let q = fiber.closed_ball_depth(eps).min(w.len());
            for &a in &w[..q] {
                mix(a as u64 + 1);
            }
        }
    }
    h
}

/// Dyadic refinement levels per coordinate of the product-shift join of
/// `n` grid partitions; Lebesgue entropy of the join is `ln 2 · Σ levels`.
fn product_shift_join_levels(fiber: &FiberSpace, dim: usize, n: usize, eps: f64) -> Option<Vec<u32>> {
    if n > dim {
        return None;
    }
    let base: Vec<u32> = (0..dim)
        .map(|c| {
            let mut r = 0u32;
            while fiber.scale * fiber.weight(c) * (-(r as f64)).exp2() > eps {
                r += 1;
            }
            r
        })
        .collect();
    let mut levels = vec![0u32; dim];
    for i in 0..n {
        for (c, &r) in base.iter().enumerate() {
            let (l, lvl) = if c + i < dim {
                (c + i, r)
            } else {
                (c + i - dim, if r > 0 { r + 1 } else { 0 })
            };
            levels[l] = levels[l].max(lvl);
        }
    }
    Some(levels)
}

/// `H_{μω}(⋁_{i<n} (T_ω^i)^{-1} α)` for the grid partition `α` of diameter
/// `≤ ε`, with the number of distinct itineraries (atoms only).
fn joint_partition_entropy(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    eps: f64,
    n: usize,
) -> Result<(f64, Option<usize>, Exactness)> {
    let fiber = &system.fiber;
    let view = measure.fiber(env)?;
    if let FiberView::Symbolic(law) = view {
        let d = match fiber.closed_ball_depth(eps) {
            0 => 0,
            q => n + q - 1,
        };
        return Ok((cylinder_partition_entropy(law, d), None, Exactness::Exact));
    }
    if let (FiberView::Lebesgue(_), Some(Structure::ProductShift { dim })) = (view, system.structure) {
        if let Some(levels) = product_shift_join_levels(fiber, dim, n, eps) {
            let total: u32 = levels.iter().sum();
            return Ok((total as f64 * 2f64.ln(), None, Exactness::Exact));
        }
    }
    let atoms = view.atoms().expect("non-symbolic views carry atoms");
    let table = OrbitTable::build(system, env, atoms, n)?;
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for p in 0..atoms.len() {
        let mut h = 0x9e37_79b9_7f4a_7c15u64;
        for i in 0..n {
            h = (h ^ cell_label(fiber, table.at(p, i), eps))
                .wrapping_mul(0xbf58_476d_1ce4_e5b9)
                .rotate_left(31);
        }
        *counts.entry(h).or_default() += 1;
    }
    let total = atoms.len() as f64;
    let mut c: Vec<usize> = counts.values().copied().collect();
    c.sort_unstable();
    let h = c
        .iter()
        .map(|&k| {
            let p = k as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok((h.max(0.0), Some(c.len()), Exactness::Sampled))
}

fn measure_num_omega(measure: &DisintegratedMeasure, system: &FiberedSystem, requested: usize) -> usize {
    // constant fiber measures on cylinder systems give identical counts for every ω
    if is_cylinder(system) && measure.is_constant() {
        1
    } else {
        effective_num_omega(system, requested)
    }
}

fn horizon_for(measure: &DisintegratedMeasure, n_max: usize) -> usize {
    let cond = match &measure.repr {
        Representation::Atoms(b) => b.condition,
        _ => 0,
    };
    n_max.max(cond).max(1)
}

/// Kolmogorov–Sinai ε-entropy: growth of the joint partition entropy of the
/// grid partition with diameter `≤ ε`, averaged over ω-samples.
pub fn ks_eps_entropy(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    eps: f64,
    cfg: &TopoConfig,
    opts: &MeasureOptions,
) -> Result<CurveEntry> {
    measure.check_system(system)?;
    let num = measure_num_omega(measure, system, cfg.num_omega);
    let n_max = *cfg.n_schedule.last().ok_or_else(|| Error::InvalidArgument("empty n schedule".into()))?;
    let cells: Vec<Cell> = (0..num)
        .into_par_iter()
        .map(|i| {
            let env = omega_sample(system, cfg.seed, i, horizon_for(measure, n_max))?;
            let mut raw = Vec::new();
            let mut exactness = Exactness::Exact;
            for &n in &cfg.n_schedule {
                let (h, distinct, ex) = joint_partition_entropy(measure, system, &env, eps, n)?;
                if let (Some(d), FiberView::Lebesgue(a) | FiberView::Atoms(a)) = (distinct, measure.fiber(&env)?) {
                    if a.len() > 1 && d as f64 > opts.saturation * a.len() as f64 && raw.len() >= 3 {
                        break;
                    }
                }
                exactness = ex;
                raw.push((n, h));
            }
            let g = growth_rate_logs(&raw)?;
            let (n, h) = raw[raw.len() - 1];
            Ok(Cell {
                omega_index: i,
                delta: None,
                n,
                count: h.exp(),
                exactness,
                entropy_fixed_n: g.fixed_n,
                entropy_slope: g.value,
            })
        })
        .collect::<Result<_>>()?;
    Ok(entry_from_cells(eps, cells))
}

fn delta_entry(eps: f64, deltas: &[f64], cells: Vec<Cell>) -> Result<CurveEntry> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("empty delta schedule".into()));
    }
    let mut trend = Vec::new();
    let mut smallest = None;
    for &d in deltas {
        let sub: Vec<Cell> = cells.iter().filter(|c| c.delta == Some(d)).cloned().collect();
        let e = entry_from_cells(eps, sub);
        trend.push((d, e.estimate));
        if smallest.as_ref().is_none_or(|(sd, _): &(f64, CurveEntry)| d < *sd) {
            smallest = Some((d, e));
        }
    }
    let (_, best) = smallest.expect("nonempty");
    Ok(CurveEntry {
        delta_trend: trend,
        cells,
        ..best
    })
}

fn check_deltas(deltas: &[f64]) -> Result<()> {
    for &d in deltas {
        check_delta(d)?;
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("delta schedule must decrease".into()));
    }
    Ok(())
}

fn count_cell(
    counts: &[(usize, CountRecord)],
    omega_index: usize,
    delta: f64,
) -> Result<Cell> {
    let raw: Vec<(usize, f64)> = counts.iter().map(|(n, c)| (*n, c.log_value)).collect();
    let g = growth_rate_logs(&raw)?;
    let (n, last) = counts[counts.len() - 1];
    let exactness = counts
        .iter()
        .map(|(_, c)| c.exactness)
        .find(|e| *e != Exactness::Exact)
        .unwrap_or(Exactness::Exact);
    Ok(Cell {
        omega_index,
        delta: Some(delta),
        n,
        count: last.value,
        exactness,
        entropy_fixed_n: g.fixed_n,
        entropy_slope: g.value,
    })
}

fn schedule_entry<'a>(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    eps: f64,
    deltas: &[f64],
    cfg: &TopoConfig,
    opts: &MeasureOptions,
    counter: impl Fn() -> AtomCounter<'a> + Sync,
    single: impl Fn(&BaseTrajectory, usize, f64) -> Result<CountRecord> + Sync,
) -> Result<CurveEntry> {
    check_deltas(deltas)?;
    measure.check_system(system)?;
    let num = measure_num_omega(measure, system, cfg.num_omega);
    let n_max = *cfg.n_schedule.last().ok_or_else(|| Error::InvalidArgument("empty n schedule".into()))?;
    let per_omega: Vec<Vec<Cell>> = (0..num)
        .into_par_iter()
        .map(|i| {
            let env = omega_sample(system, cfg.seed, i, horizon_for(measure, n_max))?;
            let view = measure.fiber(&env)?;
            let counts = if let FiberView::Symbolic(_) = view {
                deltas
                    .iter()
                    .map(|&d| {
                        cfg.n_schedule
                            .iter()
                            .map(|&n| single(&env, n, d).map(|c| (n, c)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                atom_schedule_counts(view, system, &env, counter(), &cfg.n_schedule, deltas, opts.saturation)?
            };
            deltas
                .iter()
                .zip(counts)
                .map(|(&d, c)| {
                    if c.len() < 3.min(cfg.n_schedule.len()) {
                        return Err(Error::Budget(format!(
                            "{} atoms saturate before three n values at eps = {eps}",
                            view.atoms().map_or(0, <[FiberPoint]>::len)
                        )));
                    }
                    let c: Vec<_> = c.into_iter().map(|(n, r)| (n, r.with_omega(i))).collect();
                    count_cell(&c, i, d)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    // cells ordered by δ, then ω
    let cells = (0..deltas.len())
        .flat_map(|k| per_omega.iter().map(move |cells| cells[k].clone()))
        .collect();
    delta_entry(eps, deltas, cells)
}

/// Katok ε-entropy per δ; the entry's estimate is the smallest-δ value.
pub fn katok_entropy(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    eps: f64,
    deltas: &[f64],
    cfg: &TopoConfig,
    opts: &MeasureOptions,
) -> Result<CurveEntry> {
    schedule_entry(
        measure,
        system,
        eps,
        deltas,
        cfg,
        opts,
        || AtomCounter::Katok { eps },
        |env, n, d| katok_count(measure, system, env, n, eps, d, opts),
    )
}

/// Shapira entropy of `cover` per δ; `eps` labels the entry.
pub fn shapira_entropy(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    cover: &CoverSpec,
    eps: f64,
    deltas: &[f64],
    cfg: &TopoConfig,
    opts: &MeasureOptions,
) -> Result<CurveEntry> {
    schedule_entry(
        measure,
        system,
        eps,
        deltas,
        cfg,
        opts,
        || AtomCounter::Shapira { cover },
        |env, n, d| shapira_count(measure, system, env, cover, n, d, opts),
    )
}

/// Draw a point from `μ_ω`.
fn sample_point<R: Rng>(view: FiberView<'_>, fiber: &FiberSpace, word_len: usize, rng: &mut R) -> FiberPoint {
    match view {
        FiberView::Symbolic(law) => FiberPoint::Word(law.sample(word_len, rng)),
        FiberView::Lebesgue(_) => fiber.random_point(rng, word_len),
        FiberView::Atoms(a) => a[rng.random_range(0..a.len())].clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEntropySample {
    pub omega_id: usize,
    pub x: FiberPoint,
    pub n_schedule: Vec<usize>,
    pub log_masses: Vec<f64>,
    pub slope: f64,
    pub upper_est: f64,
    pub lower_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrinKatokResult {
    pub entry: CurveEntry,
    /// Standard deviation of the per-pair estimates.
    pub dispersion: f64,
    pub samples: Vec<LocalEntropySample>,
}

/// Brin–Katok local ε-entropy averaged over sampled `(ω, x)` pairs.
pub fn brin_katok_entropy(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    eps: f64,
    num_pairs: usize,
    cfg: &TopoConfig,
) -> Result<BrinKatokResult> {
    measure.check_system(system)?;
    if num_pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let schedule = &cfg.n_schedule;
    let n_max = *schedule.last().ok_or_else(|| Error::InvalidArgument("empty n schedule".into()))?;
    let word_len = n_max + system.fiber.open_ball_depth(eps) + 2;
    let samples: Vec<LocalEntropySample> = (0..num_pairs)
        .into_par_iter()
        .map(|i| {
            let env = omega_sample(system, cfg.seed, i, horizon_for(measure, n_max))?;
            let view = measure.fiber(&env)?;
            let mut rng = stream(cfg.seed, "bk-point", i as u64);
            let x = sample_point(view, &system.fiber, word_len, &mut rng);
            let masses = log_bowen_ball_masses(measure, system, &env, &x, schedule, eps)?;
            let atoms = view.atoms().map_or(0, |a| a.len());
            let mut raw = Vec::new();
            for (&n, &(m, exact)) in schedule.iter().zip(&masses) {
                if m == f64::NEG_INFINITY {
                    return Err(Error::ZeroMass { n });
                }
                // sampled balls holding few atoms no longer resolve the decay
                if !exact && raw.len() >= 3 && m.exp() * (atoms as f64) < 1.0 / cfg.saturation {
                    break;
                }
                raw.push((n, -m));
            }
            let g = growth_rate_logs(&raw)?;
            let take = raw.len().div_ceil(2).max(1);
            let rates: Vec<f64> = raw[raw.len() - take..].iter().map(|&(n, l)| l / n as f64).collect();
            Ok(LocalEntropySample {
                omega_id: i,
                x,
                n_schedule: raw.iter().map(|r| r.0).collect(),
                log_masses: masses.iter().take(raw.len()).map(|m| m.0).collect(),
                slope: g.value,
                upper_est: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                lower_est: rates.iter().copied().fold(f64::INFINITY, f64::min),
            })
        })
        .collect::<Result<_>>()?;
    let exact = matches!(measure.kind, MeasureKind::ExactSymbolic)
        || (matches!(measure.kind, MeasureKind::ExactProduct) && system.structure.is_some());
    let cells: Vec<Cell> = samples
        .iter()
        .map(|s| {
            let n = *s.n_schedule.last().expect("nonempty");
            let lm = *s.log_masses.last().expect("nonempty");
            Cell {
                omega_index: s.omega_id,
                delta: None,
                n,
                count: (-lm).exp().min(f64::MAX),
                exactness: if exact { Exactness::Exact } else { Exactness::Sampled },
                entropy_fixed_n: -lm / n as f64,
                entropy_slope: s.slope,
            }
        })
        .collect();
    let slopes: Vec<f64> = samples.iter().map(|s| s.slope).collect();
    let (_, se) = mean_stderr(&slopes);
    let dispersion = se * (slopes.len() as f64).sqrt();
    Ok(BrinKatokResult {
        entry: entry_from_cells(eps, cells),
        dispersion,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmbReport {
    pub reference: f64,
    pub n: usize,
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

/// Deviation of `-(1/n) log μ_ω(A^n(x))` from the entropy rate at the
/// largest `n`, for the partition into depth-`q` cylinders.
pub fn smb_diagnostic(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    q: usize,
    n: usize,
    num_pairs: usize,
    seed: u64,
) -> Result<SmbReport> {
    measure.check_system(system)?;
    let Representation::Symbolic(law) = &measure.repr else {
        return Err(Error::Unsupported("the SMB diagnostic needs an exact symbolic measure".into()));
    };
    if q == 0 || n == 0 || num_pairs == 0 {
        return Err(Error::InvalidArgument("need q, n and num_pairs ≥ 1".into()));
    }
    let reference = entropy_rate(law);
    let d = n + q - 1;
    let deviations: Vec<f64> = (0..num_pairs)
        .map(|i| {
            let mut rng = stream(seed, "smb-point", i as u64);
            let w = law.sample(d, &mut rng);
            (-log_cylinder_mass(law, &w) / n as f64 - reference).abs()
        })
        .collect();
    let max_deviation = deviations.iter().copied().fold(0.0, f64::max);
    let mean_deviation = deviations.iter().sum::<f64>() / deviations.len() as f64;
    Ok(SmbReport {
        reference,
        n,
        deviations,
        max_deviation,
        mean_deviation,
    })
}

fn tent_preimage(a: f64, b: f64) -> f64 {
    // tent^{-1}[a,b) = [a/2, b/2) ∪ (1 - b/2, 1 - a/2]
    (b / 2.0 - a / 2.0) + ((1.0 - a / 2.0) - (1.0 - b / 2.0))
}

/// Lebesgue mass of `T^{-1}(box)` for maps with a closed-form preimage.
fn lebesgue_preimage(map: &FiberMap, lo: &[f64], hi: &[f64]) -> Option<f64> {
    match map {
        // m branches of length (b - a) / m each
        FiberMap::Times(_) | FiberMap::Rotate(_) => Some(hi[0] - lo[0]),
        FiberMap::Tent => Some(lo.iter().zip(hi).map(|(&a, &b)| tent_preimage(a, b)).product()),
        FiberMap::ProductShift => {
            let d = lo.len();
            let mut m = tent_preimage(lo[d - 1], hi[d - 1]);
            for j in 0..d - 1 {
                m *= hi[j] - lo[j];
            }
            Some(m)
        }
        FiberMap::ShiftPermute(_) => None,
    }
}

/// Dyadic test boxes over the first two and the last coordinates.
fn test_boxes(fiber: &FiberSpace, depth: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let dim = match fiber.kind {
        FiberKind::Circle => 1,
        FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => d,
        FiberKind::Symbolic(_) => 0,
    };
    let mut axes: Vec<usize> = vec![0];
    if dim > 1 {
        axes.push(dim - 1);
    }
    if dim > 2 {
        axes.insert(1, 1);
    }
    let mut out = Vec::new();
    for level in 1..=depth.min(6) {
        let cells = 1usize << level;
        let total = cells.pow(axes.len() as u32);
        if total > 4096 {
            break;
        }
        for code in 0..total {
            let mut lo = vec![0.0; dim];
            let mut hi = vec![1.0; dim];
            let mut c = code;
            for &ax in &axes {
                let k = c % cells;
                c /= cells;
                lo[ax] = k as f64 / cells as f64;
                hi[ax] = (k + 1) as f64 / cells as f64;
            }
            out.push((lo, hi));
        }
    }
    out
}

fn in_box(p: PointRef<'_>, lo: &[f64], hi: &[f64]) -> bool {
    match p {
        PointRef::Real(x) => lo[0] <= x && x < hi[0],
        PointRef::Vector(v) => v.iter().zip(lo.iter().zip(hi)).all(|(&x, (&a, &b))| {
            a <= x && (x < b || (b == 1.0 && x <= 1.0))
        }),
        PointRef::Word(_) => false,
    }
}

/// Largest `|μ_{θω}(C) − μ_ω(T_ω^{-1} C)|` over a panel of cylinders or
/// dyadic boxes up to `test_depth`, averaged over ω-samples.
pub fn invariance_diagnostic(
    measure: &DisintegratedMeasure,
    system: &FiberedSystem,
    test_depth: usize,
    num_omega: usize,
    seed: u64,
) -> Result<f64> {
    measure.check_system(system)?;
    let num = if measure.is_constant() {
        effective_num_omega(system, num_omega).min(system.base.alphabet_size.max(1) * 4)
    } else {
        effective_num_omega(system, num_omega)
    };
    let fiber = &system.fiber;
    let per: Vec<f64> = (0..num)
        .map(|i| {
            let env = omega_sample(system, seed, i, horizon_for(measure, 2) + 1)?;
            let next = env.shifted(1);
            let map = system.map_for(env.future()[0]);
            match (measure.fiber(&env)?, measure.fiber(&next)?) {
                (FiberView::Symbolic(law), _) => {
                    let FiberMap::ShiftPermute(perm) = map else {
                        return Err(Error::Incompatible("symbolic measure on a non-shift map".into()));
                    };
                    let k = law.alphabet_size();
                    let mut worst = 0.0f64;
                    for q in 1..=test_depth {
                        let total = (k as f64).powi(q as i32);
                        if total > 4096.0 {
                            break;
                        }
                        let mut w = vec![0u8; q];
                        for mut code in 0..total as u64 {
                            for slot in w.iter_mut().rev() {
                                *slot = (code % k as u64) as u8;
                                code /= k as u64;
                            }
                            let lhs = log_cylinder_mass(law, &w).exp();
                            let v: Vec<u8> = w
                                .iter()
                                .map(|&a| perm.iter().position(|&p| p == a).expect("permutation") as u8)
                                .collect();
                            let rhs: f64 = (0..k as u8)
                                .map(|a| {
                                    let mut av = vec![a];
                                    av.extend_from_slice(&v);
                                    log_cylinder_mass(law, &av).exp()
                                })
                                .sum();
                            worst = worst.max((lhs - rhs).abs());
                        }
                    }
                    Ok(worst)
                }
                (FiberView::Lebesgue(_), _) => {
                    let mut worst = 0.0f64;
                    for (lo, hi) in test_boxes(fiber, test_depth) {
                        let lhs: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
                        let rhs = lebesgue_preimage(map, &lo, &hi)
                            .ok_or_else(|| Error::Unsupported("no closed-form preimage".into()))?;
                        worst = worst.max((lhs - rhs).abs());
                    }
                    Ok(worst)
                }
                (FiberView::Atoms(here), FiberView::Atoms(there)) => {
                    let pushed: Vec<FiberPoint> = here.iter().map(|x| map.apply(x.as_ref())).collect();
                    let frac = |set: &[FiberPoint], test: &dyn Fn(PointRef<'_>) -> bool| {
                        set.iter().filter(|p| test(p.as_ref())).count() as f64 / set.len() as f64
                    };
                    let mut worst = 0.0f64;
                    if let FiberKind::Symbolic(k) = fiber.kind {
                        for q in 1..=test_depth {
                            let total = (k as f64).powi(q as i32);
                            if total > 4096.0 {
                                break;
                            }
                            for mut code in 0..total as u64 {
                                let mut w = vec![0u8; q];
                                for slot in w.iter_mut().rev() {
                                    *slot = (code % k as u64) as u8;
                                    code /= k as u64;
                                }
                                let t = |p: PointRef<'_>| matches!(p, PointRef::Word(x) if x.starts_with(&w));
                                worst = worst.max((frac(there, &t) - frac(&pushed, &t)).abs());
                            }
                        }
                    } else {
                        for (lo, hi) in test_boxes(fiber, test_depth) {
                            let t = |p: PointRef<'_>| in_box(p, &lo, &hi);
                            worst = worst.max((frac(there, &t) - frac(&pushed, &t)).abs());
                        }
                    }
                    Ok(worst)
                }
                _ => Err(Error::Incompatible("mixed measure views".into())),
            }
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_system, sample_base, SystemSpec};

    fn sys(name: &str) -> FiberedSystem {
        make_system(&SystemSpec::catalog(name)).unwrap()
    }

    fn measure(system: &FiberedSystem, spec: &str) -> DisintegratedMeasure {
        measure_provider(system, spec, 7, &MeasureOptions::default()).unwrap()
    }

    fn env(system: &FiberedSystem, horizon: usize) -> BaseTrajectory {
        sample_base(system, 3, horizon).unwrap()
    }

    /// Brute force: enumerate every word, sort masses, accumulate.
    fn brute_count(law: &BaseLaw, depth: usize, delta: f64) -> usize {
        let k = law.alphabet_size();
        let mut masses = Vec::new();
        for code in 0..k.pow(depth as u32) {
            let mut c = code;
            let mut w = vec![0u8; depth];
            for slot in w.iter_mut() {
                *slot = (c % k) as u8;
                c /= k;
            }
            let m: f64 = match law {
                BaseLaw::Bernoulli(p) => w.iter().map(|&a| p[a as usize]).product(),
                BaseLaw::Markov { initial, matrix } => {
                    let mut m = if depth > 0 { initial[w[0] as usize] } else { 1.0 };
                    for t in 1..depth {
                        m *= matrix[w[t - 1] as usize][w[t] as usize];
                    }
                    m
                }
            };
            masses.push(m);
        }
        masses.sort_by(|a, b| b.total_cmp(a));
        let mut acc = 0.0;
        for (i, m) in masses.iter().enumerate() {
            acc += m;
            if acc > 1.0 - delta + 1e-12 {
                return i + 1;
            }
        }
        masses.len()
    }

    #[test]
    fn cylinder_mass_by_hand() {
        let law = BaseLaw::parse("bernoulli(0.7,0.3)").unwrap();
        assert!((log_cylinder_mass(&law, &[0, 1]).exp() - 0.21).abs() < 1e-15);
        let m = BaseLaw::parse("markov((0.9,0.1),(0.4,0.6))").unwrap();
        // stationary (0.8, 0.2)
        assert!((log_cylinder_mass(&m, &[1, 1]).exp() - 0.2 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn katok_by_hand() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "bernoulli(0.7,0.3)");
        let e = env(&f, 4);
        // open (1, 1/2)-balls are depth-2 cylinders: masses .49 .21 .21 .09
        let c = katok_count(&mu, &f, &e, 1, 0.5, 0.25, &MeasureOptions::default()).unwrap();
        assert_eq!(c.value, 3.0);
        assert_eq!(c.exactness, Exactness::Exact);
        let c = katok_count(&mu, &f, &e, 1, 0.5, 0.5, &MeasureOptions::default()).unwrap();
        assert_eq!(c.value, 2.0);
    }

    #[test]
    fn spectrum_counts_match_brute_force() {
        let f = sys("full-shift(3)");
        let opts = MeasureOptions::default();
        for spec in ["bernoulli(0.5,0.3,0.2)", "markov((0.1,0.6,0.3),(0.5,0.5,0),(0.2,0.2,0.6))"] {
            let mu = measure(&f, spec);
            let Representation::Symbolic(law) = &mu.repr else { unreachable!() };
            let e = env(&f, 8);
            for n in 1..=5 {
                for eps in [1.0, 0.5, 0.25] {
                    for delta in [0.05, 0.3, 0.6] {
                        let d = bowen_depth(&f.fiber, n, eps);
                        let c = katok_count(&mu, &f, &e, n, eps, delta, &opts).unwrap();
                        assert_eq!(c.value as usize, brute_count(law, d, delta), "{spec} n={n} eps={eps} delta={delta}");
                    }
                }
            }
        }
    }

    #[test]
    fn shapira_on_cylinder_cover() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "bernoulli(0.7,0.3)");
        let e = env(&f, 4);
        let cover = CoverSpec::cylinders(&f.fiber, 1).unwrap();
        // two-step itineraries are depth-2 cylinders
        let c = shapira_count(&mu, &f, &e, &cover, 2, 0.3, &MeasureOptions::default()).unwrap();
        assert_eq!(c.value, 3.0);
    }

    #[test]
    fn large_depth_stays_finite() {
        let law = BaseLaw::parse("bernoulli(0.7,0.3)").unwrap();
        let s = mass_spectrum(&law, 2000, 1 << 22).unwrap();
        let lc = log_count_above(&s, 0.9).unwrap();
        let h = shannon(&[0.7, 0.3]);
        // within a few standard deviations of d H
        assert!((lc / 2000.0 - h).abs() < 0.03, "{}", lc / 2000.0);
    }

    #[test]
    fn ks_entropy_of_bernoulli() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "bernoulli(0.7,0.3)");
        let cfg = TopoConfig::default();
        let e = ks_eps_entropy(&mu, &f, 0.25, &cfg, &MeasureOptions::default()).unwrap();
        let h = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
        assert!((e.estimate - h).abs() < 1e-9);
        assert_eq!(e.num_omega, 1);
    }

    #[test]
    fn markov_partition_entropy_matches_enumeration() {
        let law = BaseLaw::parse("markov-init((0.5,0.5),(0.9,0.1),(0.4,0.6))").unwrap();
        for d in 0..=8 {
            let spectrum = mass_spectrum(&law, d, 1 << 20).unwrap();
            let brute: f64 = spectrum.iter().map(|&(l, _)| -l.exp() * l).sum();
            assert!((cylinder_partition_entropy(&law, d) - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn point_mass_has_zero_entropy() {
        let f = sys("doubling");
        let mu = measure(&f, "point(0)");
        let cfg = TopoConfig { n_schedule: (1..=8).collect(), ..TopoConfig::default() };
        let opts = MeasureOptions::default();
        let ks = ks_eps_entropy(&mu, &f, 0.1, &cfg, &opts).unwrap();
        assert_eq!(ks.estimate, 0.0);
        let k = katok_entropy(&mu, &f, 0.1, &[0.2], &cfg, &opts).unwrap();
        assert_eq!(k.estimate, 0.0);
        assert!(invariance_diagnostic(&mu, &f, 3, 1, 0).unwrap() < 1e-15);
        let moving = measure(&f, "point(0.3)");
        assert!(invariance_diagnostic(&moving, &f, 3, 1, 0).unwrap() > 0.5);
    }

    #[test]
    fn uniform_bk_has_no_dispersion() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "uniform");
        let cfg = TopoConfig { n_schedule: (4..=32).step_by(4).collect(), ..TopoConfig::default() };
        let bk = brin_katok_entropy(&mu, &f, 0.25, 16, &cfg).unwrap();
        assert!((bk.entry.estimate - 2f64.ln()).abs() < 1e-9);
        assert!(bk.dispersion < 1e-9);
        for s in &bk.samples {
            assert!((s.upper_est - s.lower_est) >= 0.0);
        }
    }

    #[test]
    fn bowen_mass_by_hand() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "uniform");
        let e = env(&f, 4);
        let x = FiberPoint::Word(vec![0; 16]);
        // (1, 1/2)-ball is a depth-2 cylinder
        assert!((bowen_ball_mass(&mu, &f, &e, &x, 1, 0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    fn monte_carlo_mass(system: &FiberedSystem, e: &BaseTrajectory, x: &FiberPoint, n: usize, eps: f64) -> f64 {
        let mut rng = stream(11, "mc", 0);
        let xs = crate::system::fiber_iterate(system, e, x, n).unwrap().points;
        let trials = 200_000;
        let mut hit = 0;
        for _ in 0..trials {
            let y = system.fiber.random_point(&mut rng, 0);
            let ys = crate::system::fiber_iterate(system, e, &y, n).unwrap().points;
            if xs.iter().zip(&ys).all(|(a, b)| system.fiber.metric(a, b) < eps) {
                hit += 1;
            }
        }
        hit as f64 / trials as f64
    }

    #[test]
    fn lebesgue_ball_mass_matches_monte_carlo() {
        for (name, x) in [
            ("product-shift(3)", FiberPoint::Vector(vec![0.3, 0.6, 0.1])),
            ("random-expanding(2,3,0.5)", FiberPoint::Real(0.37)),
        ] {
            let f = sys(name);
            let mu = measure(&f, "lebesgue");
            let e = env(&f, 4);
            for n in 1..=3 {
                let exact = bowen_ball_mass(&mu, &f, &e, &x, n, 0.15).unwrap();
                let mc = monte_carlo_mass(&f, &e, &x, n, 0.15);
                let tol = 4.0 * (mc * (1.0 - mc) / 200_000.0).sqrt() + 1e-3;
                assert!((exact - mc).abs() < tol, "{name} n={n}: {exact} vs {mc}");
            }
        }
    }

    #[test]
    fn invariance_of_exact_measures() {
        let f = sys("full-shift(2)");
        assert!(invariance_diagnostic(&measure(&f, "bernoulli(0.7,0.3)"), &f, 4, 2, 0).unwrap() < 1e-12);
        let m = sys("random-subshift(3)");
        assert!(invariance_diagnostic(&measure(&m, "uniform"), &m, 3, 4, 0).unwrap() < 1e-12);
        let biased = measure(&m, "bernoulli(0.6,0.3,0.1)");
        assert!(invariance_diagnostic(&biased, &m, 2, 8, 0).unwrap() > 1e-3);
        for name in ["doubling", "product-shift(4)", "random-expanding(2,3,0.5)"] {
            let s = sys(name);
            assert!(invariance_diagnostic(&measure(&s, "lebesgue"), &s, 4, 4, 0).unwrap() < 1e-12, "{name}");
        }
    }

    #[test]
    fn empirical_doubling_is_nearly_invariant() {
        let f = sys("doubling");
        let mu = measure(&f, "empirical(50000)");
        let Representation::Atoms(b) = &mu.repr else { unreachable!() };
        assert_eq!(b.buckets.values().map(Vec::len).sum::<usize>(), 50000);
        let d = invariance_diagnostic(&mu, &f, 4, 1, 0).unwrap();
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn conditioned_empirical_buckets() {
        let f = sys("random-expanding(2,3,0.5)");
        let mu = measure(&f, "empirical(20000,2)");
        let Representation::Atoms(b) = &mu.repr else { unreachable!() };
        assert_eq!(b.buckets.len(), 4);
        let e = env(&f, 4);
        assert!(mu.fiber(&e).is_ok());
        let one_sided = make_system(&SystemSpec { two_sided: false, ..SystemSpec::catalog("random-expanding(2,3,0.5)") }).unwrap();
        assert!(matches!(
            measure_provider(&one_sided, "empirical(100,2)", 0, &MeasureOptions::default()),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn markov_smb_deviation_is_small() {
        let f = sys("full-shift(2)");
        let mu = measure(&f, "markov((0.9,0.1),(0.4,0.6))");
        let r = smb_diagnostic(&mu, &f, 1, 4000, 32, 5).unwrap();
        let pi = [0.8, 0.2];
        let h = pi[0] * shannon(&[0.9, 0.1]) + pi[1] * shannon(&[0.4, 0.6]);
        assert!((r.reference - h).abs() < 1e-12);
        assert!(r.mean_deviation < 0.02, "{}", r.mean_deviation);
    }

    #[test]
    fn rejects_bad_inputs() {
        let f = sys("doubling");
        assert!(matches!(measure_provider(&f, "bernoulli(0.5,0.5)", 0, &MeasureOptions::default()), Err(Error::Incompatible(_))));
        assert!(measure_provider(&f, "point(0.1,0.2)", 0, &MeasureOptions::default()).is_err());
        let s = sys("full-shift(2)");
        let mu = measure(&s, "bernoulli(0.5,0.5)");
        let e = env(&s, 4);
        assert!(katok_count(&mu, &s, &e, 1, 0.5, 0.0, &MeasureOptions::default()).is_err());
        assert!(katok_count(&mu, &s, &e, 1, 0.5, 1.0, &MeasureOptions::default()).is_err());
    }
}
