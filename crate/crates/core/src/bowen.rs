//! Bowen metrics and the counting primitives built on them: separated and
//! spanning sets, structured closed-form separated counts, ε/4-net covers and
//! minimal subcovers of iterated covers.
//!
//! Separation is strict (`d_n > ε`) and spanning is non-strict (`d_n ≤ ε`).
//! Generic counts work on a finite [`PointCloud`] standing in for the fiber;
//! orbits are computed once per point and shared by all pair queries.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::setcover;
use crate::system::{
    fiber_iterate, BaseTrajectory, FiberKind, FiberPoint, FiberSpace, FiberedSystem, PointRef,
    Structure,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountKind {
    Sep,
    Span,
    Subcover,
    Shapira,
    Katok,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exactness {
    Exact,
    GreedyLower,
    GreedyUpper,
    /// Computed on a finite sample standing in for the measure.
    Sampled,
}

impl Exactness {
    pub fn as_str(&self) -> &'static str {
        match self {
            Exactness::Exact => "exact",
            Exactness::GreedyLower => "greedy-lower",
            Exactness::GreedyUpper => "greedy-upper",
            Exactness::Sampled => "sampled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CountParams {
    pub omega: Option<usize>,
    pub n: usize,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
}

/// One counting statistic. `value` is the integer count (held as `f64` so
/// that closed-form counts far beyond `u64` still fit); `log_value` is its
/// natural log computed without overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub kind: CountKind,
    pub value: f64,
    pub log_value: f64,
    pub exactness: Exactness,
    pub params: CountParams,
}

impl CountRecord {
    pub fn new(kind: CountKind, value: usize, exactness: Exactness, params: CountParams) -> Self {
        Self {
            kind,
            value: value as f64,
            log_value: (value as f64).ln(),
            exactness,
            params,
        }
    }

    pub fn from_log(kind: CountKind, log_value: f64, exactness: Exactness, params: CountParams) -> Self {
        Self {
            kind,
            value: log_value.exp().round().min(f64::MAX),
            log_value,
            exactness,
            params,
        }
    }

    pub fn with_omega(mut self, omega: usize) -> Self {
        self.params.omega = Some(omega);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Grid { mesh: f64 },
    Cylinders { depth: usize },
    QuasiRandom { count: usize, seed: u64 },
    OrbitDerived,
}

/// Finite surrogate for a fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<FiberPoint>,
    pub provenance: Provenance,
}

/// Per-coordinate grid sizes for a cube/circle grid of metric mesh `mesh`.
fn grid_axes(fiber: &FiberSpace, mesh: f64) -> Vec<u64> {
    let axis = |w: f64| -> u64 {
        let step = mesh / (fiber.scale * w);
        ((1.0 / step).ceil() as u64).saturating_add(1).min(u32::MAX as u64)
    };
    match fiber.kind {
        FiberKind::Circle => {
            let step = mesh / fiber.scale;
            vec![((1.0 / step).ceil() as u64).clamp(1, u32::MAX as u64)]
        }
        FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => {
            (0..d).map(|j| axis(fiber.weight(j))).collect()
        }
        FiberKind::Symbolic(_) => Vec::new(),
    }
}

impl PointCloud {
    pub fn new(points: Vec<FiberPoint>, provenance: Provenance) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self { points, provenance })
    }

    pub fn single(point: FiberPoint) -> Self {
        Self {
            points: vec![point],
            provenance: Provenance::OrbitDerived,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points of a grid with metric mesh `mesh` (saturating).
    pub fn grid_size(fiber: &FiberSpace, mesh: f64) -> u64 {
        grid_axes(fiber, mesh)
            .iter()
            .fold(1u64, |acc, &m| acc.saturating_mul(m))
    }

    /// Regular grid of metric mesh `mesh` on a circle or cube fiber.
    pub fn grid(fiber: &FiberSpace, mesh: f64) -> Result<Self> {
        if !(mesh > 0.0) {
            return Err(Error::InvalidArgument(format!("grid mesh {mesh}")));
        }
        let axes = grid_axes(fiber, mesh);
        let points = match fiber.kind {
            FiberKind::Circle => {
                let m = axes[0];
                (0..m).map(|i| FiberPoint::Real(i as f64 / m as f64)).collect()
            }
            FiberKind::UnitCube(_) | FiberKind::WeightedCube(_) => {
                let total = Self::grid_size(fiber, mesh);
                if total > 1 << 26 {
                    return Err(Error::Infeasible {
                        epsilon: mesh,
                        needed: total,
                        budget: 1 << 26,
                    });
                }
                let mut pts = Vec::with_capacity(total as usize);
                let mut idx = vec![0u64; axes.len()];
                loop {
                    pts.push(FiberPoint::Vector(
                        idx.iter()
                            .zip(&axes)
                            .map(|(&i, &m)| if m <= 1 { 0.0 } else { i as f64 / (m - 1) as f64 })
                            .collect(),
                    ));
                    // odometer with the last coordinate fastest
                    let mut j = axes.len();
                    loop {
                        if j == 0 {
                            return Self::new(pts, Provenance::Grid { mesh });
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] < axes[j] {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
            }
            FiberKind::Symbolic(_) => {
                return Err(Error::InvalidArgument(
                    "symbolic fibers use cylinder clouds".into(),
                ))
            }
        };
        Self::new(points, Provenance::Grid { mesh })
    }

    /// One representative per cylinder of the given depth, padded with `0`
    /// to `word_len` letters.
    pub fn cylinders(fiber: &FiberSpace, depth: usize, word_len: usize) -> Result<Self> {
        let FiberKind::Symbolic(k) = fiber.kind else {
            return Err(Error::InvalidArgument("cylinder cloud needs a symbolic fiber".into()));
        };
        let total = (k as f64).powi(depth as i32);
        if total > (1u64 << 26) as f64 {
            return Err(Error::Infeasible {
                epsilon: (-(depth as f64)).exp2(),
                needed: total as u64,
                budget: 1 << 26,
            });
        }
        let word_len = word_len.max(depth);
        let points = (0..total as u64)
            .map(|mut code| {
                let mut w = vec![0u8; word_len];
                for slot in w[..depth].iter_mut().rev() {
                    *slot = (code % k as u64) as u8;
                    code /= k as u64;
                }
                FiberPoint::Word(w)
            })
            .collect();
        Self::new(points, Provenance::Cylinders { depth })
    }

    /// Low-discrepancy cloud (additive recurrence with a seeded offset).
    pub fn quasi_random(fiber: &FiberSpace, count: usize, seed: u64, word_len: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyCloud);
        }
        let mut rng = crate::rng::stream(seed, "cloud", 0);
        let dim = match fiber.kind {
            FiberKind::Circle => 1,
            FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => d,
            FiberKind::Symbolic(_) => 0,
        };
        let points = if dim == 0 {
            (0..count).map(|_| fiber.random_point(&mut rng, word_len)).collect()
        } else {
            // generalized golden ratio: phi_d is the root of x^{d+1} = x + 1
            let mut phi = 2.0f64;
            for _ in 0..64 {
                phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
            }
            let alpha: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
            let offset: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            (0..count)
                .map(|i| {
                    let coords: Vec<f64> = alpha
                        .iter()
                        .zip(&offset)
                        .map(|(a, o)| (o + a * (i as f64 + 1.0)).fract())
                        .collect();
                    if dim == 1 && fiber.kind == FiberKind::Circle {
                        FiberPoint::Real(coords[0])
                    } else {
                        FiberPoint::Vector(coords)
                    }
                })
                .collect()
        };
        Self::new(points, Provenance::QuasiRandom { count, seed })
    }

    /// Cloud resolving scale `eps` for orbits of length up to `n_max`.
    ///
    /// Continuous fibers: a grid of mesh at most `eps/8`, refined as far as
    /// the budget allows. Symbolic fibers: all cylinders deep enough that
    /// every `(n, eps)` Bowen class is represented.
    pub fn for_scale(fiber: &FiberSpace, eps: f64, n_max: usize, budget: u64) -> Result<Self> {
        if let FiberKind::Symbolic(k) = fiber.kind {
            let depth = n_max + fiber.open_ball_depth(eps);
            let needed = (k as f64).powi(depth as i32);
            if needed > budget as f64 {
                return Err(Error::Infeasible {
                    epsilon: eps,
                    needed: needed.min(u64::MAX as f64) as u64,
                    budget,
                });
            }
            return Self::cylinders(fiber, depth, depth + 2);
        }
        let base = eps / 8.0;
        let needed = Self::grid_size(fiber, base);
        if needed > budget {
            return Err(Error::Infeasible {
                epsilon: eps,
                needed,
                budget,
            });
        }
        // finest mesh whose grid fits the budget
        let (mut lo, mut hi) = (base * 1e-9, base);
        if Self::grid_size(fiber, lo) <= budget {
            hi = lo;
        } else {
            for _ in 0..80 {
                let mid = (lo * hi).sqrt();
                if Self::grid_size(fiber, mid) <= budget {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        Self::grid(fiber, hi)
    }
}

#[derive(Debug, Clone)]
enum OrbitData {
    Real(Vec<f64>),
    Vector { dim: usize, data: Vec<f64> },
    Word { len: usize, data: Vec<u8> },
}

/// Orbits `x, T_ω x, …, T_ω^{n-1} x` of every cloud point, stored flat and
/// point-major.
#[derive(Debug, Clone)]
pub struct OrbitTable {
    n: usize,
    stride: usize,
    len: usize,
    data: Arc<OrbitData>,
}

impl OrbitTable {
    pub fn build(
        system: &FiberedSystem,
        env: &BaseTrajectory,
        points: &[FiberPoint],
        n: usize,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        env.require(n)?;
        let orbits: Vec<Vec<FiberPoint>> = points
            .par_iter()
            .map(|x| fiber_iterate(system, env, x, n).map(|s| s.points))
            .collect::<Result<_>>()?;
        let data = match &points[0] {
            FiberPoint::Real(_) => OrbitData::Real(
                orbits
                    .iter()
                    .flatten()
                    .map(|p| match p {
                        FiberPoint::Real(x) => *x,
                        _ => unreachable!(),
                    })
                    .collect(),
            ),
            FiberPoint::Vector(v) => {
                let dim = v.len();
                let mut data = Vec::with_capacity(points.len() * n * dim);
                for p in orbits.iter().flatten() {
                    match p {
                        FiberPoint::Vector(v) if v.len() == dim => data.extend_from_slice(v),
                        _ => return Err(Error::InvalidArgument("mixed cloud dimensions".into())),
                    }
                }
                OrbitData::Vector { dim, data }
            }
            FiberPoint::Word(w) => {
                let len = w.len();
                let mut data = Vec::with_capacity(points.len() * n * len);
                for p in orbits.iter().flatten() {
                    match p {
                        FiberPoint::Word(v) if v.len() == len => data.extend_from_slice(v),
                        _ => return Err(Error::InvalidArgument("mixed word lengths".into())),
                    }
                }
                OrbitData::Word { len, data }
            }
        };
        Ok(Self {
            n,
            stride: n,
            len: points.len(),
            data: Arc::new(data),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The same orbits cut to their first `n` points, sharing storage.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.stride {
            return Err(Error::InvalidArgument(format!(
                "prefix length {n} outside 1..={}",
                self.stride
            )));
        }
        Ok(Self {
            n,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn at(&self, p: usize, i: usize) -> PointRef<'_> {
        let row = p * self.stride + i;
        match &*self.data {
            OrbitData::Real(v) => PointRef::Real(v[row]),
            OrbitData::Vector { dim, data } => PointRef::Vector(&data[row * dim..(row + 1) * dim]),
            OrbitData::Word { len, data } => PointRef::Word(&data[row * len..(row + 1) * len]),
        }
    }

    pub fn bowen(&self, fiber: &FiberSpace, a: usize, b: usize) -> f64 {
        (0..self.n)
            .map(|i| fiber.dist(self.at(a, i), self.at(b, i)))
            .fold(0.0, f64::max)
    }

    /// `d_n(a, b) ≤ eps`, scanning the most discriminating (latest) times first.
    pub fn within_closed(&self, fiber: &FiberSpace, a: usize, b: usize, eps: f64) -> bool {
        (0..self.n)
            .rev()
            .all(|i| fiber.dist(self.at(a, i), self.at(b, i)) <= eps)
    }

    /// `d_n(a, b) < eps`.
    pub fn within_open(&self, fiber: &FiberSpace, a: usize, b: usize, eps: f64) -> bool {
        (0..self.n)
            .rev()
            .all(|i| fiber.dist(self.at(a, i), self.at(b, i)) < eps)
    }
}

/// Spatial hashing of one time slice at radius `r`: two points at distance
/// `≤ r` fall into equal or adjacent cells.
#[derive(Debug, Clone)]
struct Cells {
    // (coordinate, number of cells, wraps)
    axes: Vec<(usize, u64, bool)>,
    // symbolic: shared prefix length
    prefix: usize,
}

const MAX_KEYED_AXES: usize = 2;

impl Cells {
    fn new(fiber: &FiberSpace, r: f64) -> Self {
        let count = |rho: f64| -> u64 {
            if rho <= 0.0 {
                1 << 40
            } else {
                ((1.0 / rho).floor() as u64).min(1 << 40)
            }
        };
        match fiber.kind {
            FiberKind::Circle => {
                let c = count(r / fiber.scale);
                let axes = if c >= 3 { vec![(0, c, true)] } else { Vec::new() };
                Cells { axes, prefix: 0 }
            }
            FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => {
                let mut axes: Vec<(usize, u64, bool)> = (0..d)
                    .map(|j| (j, count(r / (fiber.scale * fiber.weight(j))), false))
                    .filter(|a| a.1 >= 3)
                    .collect();
                axes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                axes.truncate(MAX_KEYED_AXES);
                Cells { axes, prefix: 0 }
            }
            FiberKind::Symbolic(_) => Cells {
                axes: Vec::new(),
                prefix: fiber.closed_ball_depth(r),
            },
        }
    }

    fn coords(&self, p: PointRef<'_>) -> Vec<u64> {
        match p {
            PointRef::Real(x) => self
                .axes
                .iter()
                .map(|&(_, c, _)| ((x * c as f64) as u64).min(c - 1))
                .collect(),
            PointRef::Vector(v) => self
                .axes
                .iter()
                .map(|&(j, c, _)| ((v[j] * c as f64) as u64).min(c - 1))
                .collect(),
            PointRef::Word(w) => {
                let mut h = 0xcbf2_9ce4_8422_2325u64;
                for &s in &w[..self.prefix.min(w.len())] {
                    h = (h ^ u64::from(s)).wrapping_mul(0x0100_0000_01b3);
                }
                vec![h]
            }
        }
    }

    /// Cell coordinates whose cells may hold points within `r` of `p`.
    fn neighbours(&self, p: PointRef<'_>) -> Vec<Vec<u64>> {
        let own = self.coords(p);
        if matches!(p, PointRef::Word(_)) {
            return vec![own];
        }
        let mut out: Vec<Vec<u64>> = vec![Vec::new()];
        for (k, &(_, c, wrap)) in self.axes.iter().enumerate() {
            let x = own[k];
            let mut opts = vec![x];
            if wrap {
                opts.push((x + 1) % c);
                opts.push((x + c - 1) % c);
            } else {
                if x + 1 < c {
                    opts.push(x + 1);
                }
                if x > 0 {
                    opts.push(x - 1);
                }
            }
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    opts.iter().map(move |&o| {
                        let mut v = prefix.clone();
                        v.push(o);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

fn hash_key(first: &[u64], last: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &v in first.iter().chain(std::iter::once(&u64::MAX)).chain(last) {
        h ^= v;
        h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29);
    }
    h
}

/// Index over orbits keyed by the cells of the first and last orbit points.
pub(crate) struct BowenIndex<'a> {
    table: &'a OrbitTable,
    cells: Cells,
    buckets: HashMap<u64, Vec<u32>>,
}

impl<'a> BowenIndex<'a> {
    pub(crate) fn new(table: &'a OrbitTable, fiber: &FiberSpace, r: f64) -> Self {
        Self {
            table,
            cells: Cells::new(fiber, r),
            buckets: HashMap::new(),
        }
    }

    fn own_key(&self, p: usize) -> u64 {
        let last = self.table.n - 1;
        hash_key(
            &self.cells.coords(self.table.at(p, 0)),
            &self.cells.coords(self.table.at(p, last)),
        )
    }

    pub(crate) fn insert(&mut self, p: usize) {
        let key = self.own_key(p);
        self.buckets.entry(key).or_default().push(p as u32);
    }

    /// Every indexed point that could be within `r` of `p` (superset).
    pub(crate) fn candidates(&self, p: usize, mut visit: impl FnMut(usize) -> bool) -> bool {
        let last = self.table.n - 1;
        let firsts = self.cells.neighbours(self.table.at(p, 0));
        let lasts = self.cells.neighbours(self.table.at(p, last));
        let mut seen_keys = Vec::with_capacity(firsts.len() * lasts.len());
        for f in &firsts {
            for l in &lasts {
                let key = hash_key(f, l);
                if seen_keys.contains(&key) {
                    continue;
                }
                seen_keys.push(key);
                if let Some(bucket) = self.buckets.get(&key) {
                    for &q in bucket {
                        if visit(q as usize) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// `d_n^ω(x, y) = max_{0 ≤ i < n} d(T_ω^i x, T_ω^i y)`.
pub fn bowen_distance(
    system: &FiberedSystem,
    env: &BaseTrajectory,
    x: &FiberPoint,
    y: &FiberPoint,
    n: usize,
) -> Result<f64> {
    let ox = fiber_iterate(system, env, x, n)?;
    let oy = fiber_iterate(system, env, y, n)?;
    Ok(ox
        .points
        .iter()
        .zip(&oy.points)
        .map(|(a, b)| system.fiber.metric(a, b))
        .fold(0.0, f64::max))
}

/// Whether cloud-based counts are exact: on symbolic fibers the Bowen
/// metric is an ultrametric, so Bowen classes partition the cloud, and a
/// cylinder cloud of sufficient depth meets every class.
fn cloud_is_exact(system: &FiberedSystem, cloud: &PointCloud, n: usize, eps: f64) -> bool {
    matches!(system.structure, Some(Structure::Cylinder { .. }))
        && matches!(cloud.provenance, Provenance::Cylinders { depth }
            if depth + 1 >= n + system.fiber.open_ball_depth(eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon must be positive, got {eps}")))
    }
}

/// Greedy maximal `(ω, ε, n)`-separated subset of the cloud, scanned in index
/// order. The result is maximal in the cloud and therefore also spans it.
pub fn greedy_separated_in(
    table: &OrbitTable,
    fiber: &FiberSpace,
    eps: f64,
) -> Vec<usize> {
    let mut index = BowenIndex::new(table, fiber, eps);
    let mut chosen = Vec::new();
    for p in 0..table.len() {
        let blocked = index.candidates(p, |q| table.within_closed(fiber, p, q, eps));
        if !blocked {
            index.insert(p);
            chosen.push(p);
        }
    }
    chosen
}

pub fn greedy_separated(
    cloud: &PointCloud,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    n: usize,
    eps: f64,
) -> Result<(Vec<FiberPoint>, CountRecord)> {
    check_eps(eps)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let table = OrbitTable::build(system, env, &cloud.points, n)?;
    let chosen = greedy_separated_in(&table, &system.fiber, eps);
    let exactness = if cloud_is_exact(system, cloud, n, eps) {
        Exactness::Exact
    } else {
        Exactness::GreedyLower
    };
    let record = CountRecord::new(
        CountKind::Sep,
        chosen.len(),
        exactness,
        CountParams {
            n,
            eps: Some(eps),
            ..CountParams::default()
        },
    );
    Ok((chosen.into_iter().map(|i| cloud.points[i].clone()).collect(), record))
}

/// Neighbourhood lists above this total fall back to the sequential scan.
const MAX_NEIGHBOUR_PAIRS: usize = 20_000_000;

/// Greedy cover of the cloud by closed Bowen balls `d_n ≤ ε` centred at cloud
/// points: always take the ball covering most uncovered points.
pub fn span_count(
    cloud: &PointCloud,
    system: &FiberedSystem,
    env: &BaseTrajectory,
    n: usize,
    eps: f64,
) -> Result<CountRecord> {
    check_eps(eps)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let fiber = &system.fiber;
    let table = OrbitTable::build(system, env, &cloud.points, n)?;
    let len = table.len();
    let mut index = BowenIndex::new(&table, fiber, eps);
    for p in 0..len {
        index.insert(p);
    }
    let mut neighbours: Vec<Vec<u32>> = Vec::with_capacity(len);
    let mut total = 0usize;
    let mut overflow = false;
    for p in 0..len {
        let mut nb = Vec::new();
        index.candidates(p, |q| {
            if table.within_closed(fiber, p, q, eps) {
                nb.push(q as u32);
            }
            false
        });
        nb.sort_unstable();
        total += nb.len();
        neighbours.push(nb);
        if total > MAX_NEIGHBOUR_PAIRS {
            overflow = true;
            break;
        }
    }
    let exactness = if cloud_is_exact(system, cloud, n, eps) {
        Exactness::Exact
    } else {
        Exactness::GreedyUpper
    };
    let params = CountParams {
        n,
        eps: Some(eps),
        ..CountParams::default()
    };
    if overflow {
        // sequential scan: each uncovered point becomes a centre
        let centres = greedy_separated_in(&table, fiber, eps).len();
        return Ok(CountRecord::new(CountKind::Span, centres, exactness, params));
    }

    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut covered = vec![false; len];
    let mut remaining = len;
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> = neighbours
        .iter()
        .enumerate()
        .map(|(i, nb)| (nb.len(), Reverse(i)))
        .collect();
    let mut centres = 0;
    while remaining > 0 {
        let (_, Reverse(i)) = heap.pop().expect("uncovered points remain");
        let gain = neighbours[i].iter().filter(|&&q| !covered[q as usize]).count();
        let fresh = (gain, Reverse(i));
        if heap.peek().is_none_or(|top| fresh >= *top) {
            for &q in &neighbours[i] {
                if !covered[q as usize] {
                    covered[q as usize] = true;
                    remaining -= 1;
                }
            }
            centres += 1;
        } else {
            heap.push(fresh);
        }
    }
    Ok(CountRecord::new(CountKind::Span, centres, exactness, params))
}

/// Maximum number of reals in `[0,1]` pairwise more than `r` apart.
pub fn interval_packing(r: f64) -> f64 {
    if r >= 1.0 {
        1.0
    } else {
        (1.0 / r).ceil()
    }
}

/// Closed-form `sep(ω, ε, n)` for structured systems.
///
/// Cylinder systems: the count is `k^{n+c-1}` where `c` is the number of
/// leading letters that decide separation at scale `ε`. Product shift: a
/// product over coordinates of [`interval_packing`] at the effective Bowen
/// weight `1` for coordinates `< n` and `2^{-(ℓ-n+1)}` beyond; exact for
/// `n ≤ D`.
pub fn structured_sep_count(system: &FiberedSystem, n: usize, eps: f64) -> Result<CountRecord> {
    check_eps(eps)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let params = CountParams {
        n,
        eps: Some(eps),
        ..CountParams::default()
    };
    match system.structure {
        Some(Structure::Cylinder { alphabet }) => {
            let c = system.fiber.closed_ball_depth(eps);
            let exponent = if c == 0 { 0 } else { n + c - 1 };
            let log_value = exponent as f64 * (alphabet as f64).ln();
            let mut rec = CountRecord::from_log(CountKind::Sep, log_value, Exactness::Exact, params);
            rec.value = (alphabet as f64).powi(exponent as i32).min(f64::MAX);
            Ok(rec)
        }
        Some(Structure::ProductShift { dim }) => {
            if n > dim {
                return Err(Error::Unsupported(format!(
                    "closed form needs n ≤ D = {dim}, got n = {n}"
                )));
            }
            let mut value = 1.0;
            let mut log_value = 0.0;
            for l in 0..dim {
                let w = if l < n { 1.0 } else { (-((l - n + 1) as f64)).exp2() };
                let m = interval_packing(eps / (system.fiber.scale * w));
                value *= m;
                log_value += m.ln();
            }
            Ok(CountRecord {
                kind: CountKind::Sep,
                value,
                log_value,
                exactness: Exactness::Exact,
                params,
            })
        }
        None => Err(Error::NotStructured(system.name.clone())),
    }
}

/// One element of a fiber cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoverElement {
    /// Open ball `{y : d(center, y) < radius}`.
    Ball { center: FiberPoint, radius: f64 },
    /// Words starting with the given prefix.
    Cylinder(Vec<u8>),
}

impl CoverElement {
    pub fn contains(&self, fiber: &FiberSpace, p: PointRef<'_>) -> bool {
        match (self, p) {
            (CoverElement::Ball { center, radius }, _) => fiber.dist(center.as_ref(), p) < *radius,
            (CoverElement::Cylinder(prefix), PointRef::Word(w)) => w.starts_with(prefix),
            _ => false,
        }
    }
}

/// Finite cover with certified diameter upper bound and Lebesgue-number
/// lower bound. For cylinder covers `leb_cert` is attained by closed balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    pub elements: Vec<CoverElement>,
    pub diam_cert: f64,
    pub leb_cert: f64,
}

impl CoverSpec {
    /// All cylinders of one depth.
    pub fn cylinders(fiber: &FiberSpace, depth: usize) -> Result<Self> {
        let FiberKind::Symbolic(k) = fiber.kind else {
            return Err(Error::InvalidArgument("cylinder cover needs a symbolic fiber".into()));
        };
        let total = (k as f64).powi(depth as i32);
        if total > 1e6 {
            return Err(Error::Infeasible {
                epsilon: (-(depth as f64)).exp2(),
                needed: total as u64,
                budget: 1_000_000,
            });
        }
        let elements = (0..total as u64)
            .map(|mut code| {
                let mut w = vec![0u8; depth];
                for slot in w.iter_mut().rev() {
                    *slot = (code % k as u64) as u8;
                    code /= k as u64;
                }
                CoverElement::Cylinder(w)
            })
            .collect();
        let size = fiber.scale * (-(depth as f64)).exp2();
        Ok(Self {
            elements,
            diam_cert: if depth == 0 { fiber.diameter() } else { size },
            leb_cert: size,
        })
    }

    /// A single ball containing the whole fiber.
    pub fn single_ball(fiber: &FiberSpace, center: FiberPoint) -> Self {
        Self {
            elements: vec![CoverElement::Ball {
                center,
                radius: 2.0 * fiber.diameter(),
            }],
            diam_cert: fiber.diameter(),
            leb_cert: fiber.diameter(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Depth `q` if the cover is exactly the family of all depth-`q` cylinders.
    pub fn uniform_cylinder_depth(&self, alphabet: usize) -> Option<usize> {
        let CoverElement::Cylinder(first) = self.elements.first()? else {
            return None;
        };
        let q = first.len();
        if (alphabet as f64).powi(q as i32) != self.elements.len() as f64 {
            return None;
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.elements {
            match e {
                CoverElement::Cylinder(w) if w.len() == q && w.iter().all(|&s| (s as usize) < alphabet) => {
                    if !seen.insert(w.clone()) {
                        return None;
                    }
                }
                _ => return None,
            }
        }
        Some(q)
    }
}

/// Cover of the fiber with `diam ≤ ε` and Lebesgue number `≥ ε/4`: balls of
/// radius `ε/2` around an `ε/4`-net.
///
/// Circle: greedy farthest-point net on a fine grid, stopped once the exact
/// covering radius (half the largest gap) is at most `ε/4`. Cubes: product
/// lattice of per-coordinate nets. Symbolic: the open `ε/2`-balls, i.e. all
/// cylinders of the matching depth.
pub fn net_cover(fiber: &FiberSpace, eps: f64) -> Result<CoverSpec> {
    check_eps(eps)?;
    let s = fiber.scale;
    match fiber.kind {
        FiberKind::Circle => {
            // radii in arc units
            let target = eps / (4.0 * s);
            let grid_n = ((64.0 / (eps / s)).ceil() as usize).clamp(8, 1 << 22);
            let grid: Vec<f64> = (0..grid_n).map(|i| i as f64 / grid_n as f64).collect();
            let mut net = vec![0.0f64];
            let mut dist: Vec<f64> = grid.iter().map(|&g| crate::system::circle_distance(g, 0.0)).collect();
            loop {
                let mut sorted = net.clone();
                sorted.sort_by(f64::total_cmp);
                let mut gap: f64 = 1.0 - sorted[sorted.len() - 1] + sorted[0];
                for w in sorted.windows(2) {
                    gap = gap.max(w[1] - w[0]);
                }
                if gap / 2.0 <= target || net.len() >= grid_n {
                    let radius_arc = gap / 2.0;
                    let elements = net
                        .iter()
                        .map(|&c| CoverElement::Ball {
                            center: FiberPoint::Real(c),
                            radius: eps / 2.0,
                        })
                        .collect();
                    return Ok(CoverSpec {
                        elements,
                        diam_cert: eps.min(fiber.diameter()),
                        leb_cert: eps / 2.0 - radius_arc * s,
                    });
                }
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
                let c = grid[far];
                net.push(c);
                for (d, &g) in dist.iter_mut().zip(&grid) {
                    *d = d.min(crate::system::circle_distance(g, c));
                }
            }
        }
        FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => {
            let per_axis: Vec<usize> = (0..d)
                .map(|j| {
                    let t = eps / (4.0 * s * fiber.weight(j));
                    if t >= 0.5 {
                        1
                    } else {
                        (1.0 / (2.0 * t)).ceil() as usize
                    }
                })
                .collect();
            let total = per_axis.iter().fold(1f64, |a, &m| a * m as f64);
            if total > 1e6 {
                return Err(Error::Infeasible {
                    epsilon: eps,
                    needed: total as u64,
                    budget: 1_000_000,
                });
            }
            let radius = (0..d)
                .map(|j| s * fiber.weight(j) / (2.0 * per_axis[j] as f64))
                .fold(0.0, f64::max);
            let mut elements = Vec::with_capacity(total as usize);
            let mut idx = vec![0usize; d];
            'outer: loop {
                let center = idx
                    .iter()
                    .zip(&per_axis)
                    .map(|(&i, &m)| (2 * i + 1) as f64 / (2 * m) as f64)
                    .collect();
                elements.push(CoverElement::Ball {
                    center: FiberPoint::Vector(center),
                    radius: eps / 2.0,
                });
                let mut j = d;
                loop {
                    if j == 0 {
                        break 'outer;
                    }
                    j -= 1;
                    idx[j] += 1;
                    if idx[j] < per_axis[j] {
                        break;
                    }
                    idx[j] = 0;
                }
            }
            Ok(CoverSpec {
                elements,
                diam_cert: eps.min(fiber.diameter()),
                leb_cert: eps / 2.0 - radius,
            })
        }
        FiberKind::Symbolic(_) => {
            let q = fiber.open_ball_depth(eps / 2.0);
            CoverSpec::cylinders(fiber, q)
        }
    }
}

/// Point–itinerary memberships above this stop the refinement.
pub(crate) const MAX_MEMBERSHIP_PAIRS: usize = 20_000_000;

/// Lookup of the cover elements containing a point.
pub(crate) struct CoverIndex<'a> {
    cover: &'a CoverSpec,
    fiber: &'a FiberSpace,
    cells: Cells,
    balls: HashMap<Vec<u64>, Vec<u32>>,
    /// cylinder prefix → element, grouped by depth
    cylinders: Vec<(usize, HashMap<&'a [u8], u32>)>,
}

impl<'a> CoverIndex<'a> {
    pub(crate) fn new(cover: &'a CoverSpec, fiber: &'a FiberSpace) -> Self {
        let r = cover
            .elements
            .iter()
            .filter_map(|e| match e {
                CoverElement::Ball { radius, .. } => Some(*radius),
                CoverElement::Cylinder(_) => None,
            })
            .fold(0.0, f64::max);
        let cells = Cells::new(fiber, r.max(f64::MIN_POSITIVE));
        let mut balls: HashMap<Vec<u64>, Vec<u32>> = HashMap::new();
        let mut by_depth: std::collections::BTreeMap<usize, HashMap<&'a [u8], u32>> = Default::default();
        for (j, e) in cover.elements.iter().enumerate() {
            match e {
                CoverElement::Ball { center, .. } => {
                    balls.entry(cells.coords(center.as_ref())).or_default().push(j as u32)
                }
                CoverElement::Cylinder(w) => {
                    by_depth.entry(w.len()).or_default().entry(w.as_slice()).or_insert(j as u32);
                }
            }
        }
        Self {
            cover,
            fiber,
            cells,
            balls,
            cylinders: by_depth.into_iter().collect(),
        }
    }

    /// Sorted indices of the elements containing `p`.
    pub(crate) fn members(&self, p: PointRef<'_>, out: &mut Vec<u32>) {
        out.clear();
        if !self.balls.is_empty() {
            let cells = if matches!(p, PointRef::Word(_)) {
                self.balls.keys().cloned().collect()
            } else {
                self.cells.neighbours(p)
            };
            for c in cells {
                if let Some(ids) = self.balls.get(&c) {
                    out.extend(
                        ids.iter()
                            .copied()
                            .filter(|&j| self.cover.elements[j as usize].contains(self.fiber, p)),
                    );
                }
            }
        }
        if let PointRef::Word(w) = p {
            for (d, map) in &self.cylinders {
                if let Some(&j) = w.get(..*d).and_then(|pre| map.get(pre)) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

/// Groups of table points sharing an itinerary of the iterated cover
/// `⋁_{i<n} (T_ω^i)^{-1} U`, refined one time step at a time. `visit` sees
/// the groups after every step and returns false to stop. Returns the last
/// `n` visited, which is short of `n_max` when `visit` stopped early or the
/// membership total exceeded `MAX_MEMBERSHIP_PAIRS`.
pub(crate) fn refine_itineraries(
    table: &OrbitTable,
    fiber: &FiberSpace,
    cover: &CoverSpec,
    n_max: usize,
    mut visit: impl FnMut(usize, &[Vec<u32>]) -> bool,
) -> Result<usize> {
    let index = CoverIndex::new(cover, fiber);
    let len = table.len();
    let members_at = |i: usize| -> Result<Vec<Vec<u32>>> {
        (0..len)
            .into_par_iter()
            .map_init(Vec::new, |buf, p| {
                let x = table.at(p, i);
                index.members(x, buf);
                if buf.is_empty() {
                    return Err(Error::Uncovered {
                        index: p,
                        point: x.to_owned().to_string(),
                    });
                }
                Ok(buf.clone())
            })
            .collect()
    };
    let mut groups: Vec<Vec<u32>> = vec![(0..len as u32).collect()];
    let mut done = 0;
    for i in 0..n_max.min(table.n()) {
        let members = members_at(i)?;
        let mut next: Vec<Vec<u32>> = Vec::new();
        let mut total = 0usize;
        for g in &groups {
            let mut split: std::collections::BTreeMap<u32, Vec<u32>> = Default::default();
            for &p in g {
                for &e in &members[p as usize] {
                    split.entry(e).or_default().push(p);
                }
            }
            for (_, part) in split {
                total += part.len();
                next.push(part);
            }
        }
        if total > MAX_MEMBERSHIP_PAIRS {
            break;
        }
        groups = next;
        done = i + 1;
        if !visit(done, &groups) {
            break;
        }
    }
    Ok(done)
}

fn subcover_record(groups: &[Vec<u32>], len: usize, n: usize) -> CountRecord {
    let weights = vec![1.0; len];
    let (count, exact) = setcover::sparse_mass_cover(groups, &weights, len as f64 - 0.5)
        .expect("every point lies in some itinerary");
    CountRecord::new(
        CountKind::Subcover,
        count,
        if exact { Exactness::Exact } else { Exactness::GreedyUpper },
        CountParams {
            n,
            ..CountParams::default()
        },
    )
}

/// Minimal subfamily of `⋁_{i<n} (T_ω^i)^{-1} U` covering the cloud.
pub fn subcover_count(
    system: &FiberedSystem,
    env: &BaseTrajectory,
    cover: &CoverSpec,
    cloud: &PointCloud,
    n: usize,
) -> Result<CountRecord> {
    let table = OrbitTable::build(system, env, &cloud.points, n)?;
    let mut record = None;
    let reached = refine_itineraries(&table, &system.fiber, cover, n, |m, groups| {
        if m == n {
            record = Some(subcover_record(groups, table.len(), n));
        }
        true
    })?;
    record.ok_or_else(|| Error::Budget(format!("iterated cover too large beyond n = {reached}")))
}

/// Subcover counts for a schedule of `n`, stopping once the number of
/// itineraries exceeds `saturation` times the cloud size.
pub fn subcover_counts(
    system: &FiberedSystem,
    env: &BaseTrajectory,
    cover: &CoverSpec,
    cloud: &PointCloud,
    schedule: &[usize],
    saturation: f64,
) -> Result<Vec<(usize, CountRecord)>> {
    let n_max = *schedule.last().ok_or_else(|| Error::InvalidArgument("empty n schedule".into()))?;
    let table = OrbitTable::build(system, env, &cloud.points, n_max)?;
    let cap = saturation * table.len() as f64;
    let mut out = Vec::new();
    refine_itineraries(&table, &system.fiber, cover, n_max, |m, groups| {
        if schedule.contains(&m) {
            if groups.len() as f64 > cap {
                return false;
            }
            out.push((m, subcover_record(groups, table.len(), m)));
        }
        true
    })?;
    Ok(out)
}

/// Closed-form `N(T, ω, U, n) = k^{n+q-1}` for a complete depth-`q` cylinder
/// cover of a cylinder system.
pub fn structured_subcover_count(
    system: &FiberedSystem,
    cover: &CoverSpec,
    n: usize,
) -> Result<CountRecord> {
    let Some(Structure::Cylinder { alphabet }) = system.structure else {
        return Err(Error::NotStructured(system.name.clone()));
    };
    let q = cover
        .uniform_cylinder_depth(alphabet)
        .ok_or_else(|| Error::NotStructured("cover is not a complete cylinder family".into()))?;
    let exponent = if q == 0 { 0 } else { n + q - 1 };
    let mut rec = CountRecord::from_log(
        CountKind::Subcover,
        exponent as f64 * (alphabet as f64).ln(),
        Exactness::Exact,
        CountParams {
            n,
            ..CountParams::default()
        },
    );
    rec.value = (alphabet as f64).powi(exponent as i32).min(f64::MAX);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{make_system, SystemSpec};

    fn sys(name: &str) -> FiberedSystem {
        make_system(&SystemSpec::catalog(name)).unwrap()
    }

    /// Exhaustive maximum separated subset by branch and bound.
    fn brute_max_separated(dist: &dyn Fn(usize, usize) -> f64, len: usize, eps: f64) -> usize {
        fn go(
            cand: &[usize],
            chosen: usize,
            best: &mut usize,
            dist: &dyn Fn(usize, usize) -> f64,
            eps: f64,
        ) {
            if chosen + cand.len() <= *best {
                return;
            }
            let Some((&first, rest)) = cand.split_first() else {
                *best = (*best).max(chosen);
                return;
            };
            let keep: Vec<usize> = rest.iter().copied().filter(|&j| dist(first, j) > eps).collect();
            go(&keep, chosen + 1, best, dist, eps);
            go(rest, chosen, best, dist, eps);
        }
        let all: Vec<usize> = (0..len).collect();
        let mut best = 0;
        go(&all, 0, &mut best, dist, eps);
        best
    }

    /// Exhaustive minimum cover by closed balls centred at cloud points.
    fn brute_min_span(dist: &dyn Fn(usize, usize) -> f64, len: usize, eps: f64) -> usize {
        for k in 1..=len {
            let mut idx: Vec<usize> = (0..k).collect();
            loop {
                if (0..len).all(|p| idx.iter().any(|&c| dist(c, p) <= eps)) {
                    return k;
                }
                let mut i = k;
                loop {
                    if i == 0 {
                        break;
                    }
                    i -= 1;
                    if idx[i] < len - k + i {
                        idx[i] += 1;
                        for j in i + 1..k {
                            idx[j] = idx[j - 1] + 1;
                        }
                        break;
                    }
                    if i == 0 {
                        idx.clear();
                    }
                }
                if idx.is_empty() || idx[0] > len - k {
                    break;
                }
            }
        }
        len
    }

    #[test]
    fn bowen_distance_examples() {
        let d = sys("doubling");
        let env = BaseTrajectory::constant(0, 4);
        let v = bowen_distance(&d, &env, &FiberPoint::Real(0.0), &FiberPoint::Real(0.1), 2).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        let x = FiberPoint::Real(0.3);
        assert_eq!(bowen_distance(&d, &env, &x, &x, 4).unwrap(), 0.0);
        // n = 1 is the fiber metric
        let y = FiberPoint::Real(0.45);
        assert_eq!(
            bowen_distance(&d, &env, &x, &y, 1).unwrap(),
            d.fiber.metric(&x, &y)
        );

        let f = sys("full-shift(2)");
        let x = FiberPoint::Word(vec![0, 0, 1, 0, 0, 0]);
        let y = FiberPoint::Word(vec![0; 6]);
        assert_eq!(bowen_distance(&f, &env, &x, &y, 2).unwrap(), 0.5);
        assert!(bowen_distance(&f, &env, &x, &y, 5).is_err());
    }

    #[test]
    fn greedy_separated_on_circle_grid() {
        let d = sys("doubling");
        let env = BaseTrajectory::constant(0, 1);
        for eps in [0.5, 0.3, 0.2] {
            let cloud = PointCloud::grid(&d.fiber, eps / 10.0).unwrap();
            let (pts, rec) = greedy_separated(&cloud, &d, &env, 1, eps).unwrap();
            let dist = |a: usize, b: usize| d.fiber.metric(&cloud.points[a], &cloud.points[b]);
            let best = brute_max_separated(&dist, cloud.len(), eps);
            assert_eq!(rec.value as usize, pts.len());
            assert_eq!(rec.exactness, Exactness::GreedyLower);
            assert_eq!(pts.len(), best, "eps = {eps}");
        }
        // on R/Z the arc distance never exceeds 1/2, so no two points are > 1/2 apart
        let cloud = PointCloud::grid(&d.fiber, 0.05).unwrap();
        assert_eq!(greedy_separated(&cloud, &d, &env, 1, 0.5).unwrap().1.value, 1.0);
        assert_eq!(greedy_separated(&cloud, &d, &env, 1, 0.3).unwrap().1.value, 3.0);
    }

    #[test]
    fn greedy_output_is_separated_and_spanning() {
        let s = sys("random-expanding(2,3,0.5)");
        let env = BaseTrajectory::forward(vec![0, 1, 1, 0]);
        let cloud = PointCloud::grid(&s.fiber, 0.01).unwrap();
        let eps = 0.07;
        let n = 3;
        let table = OrbitTable::build(&s, &env, &cloud.points, n).unwrap();
        let chosen = greedy_separated_in(&table, &s.fiber, eps);
        for (i, &a) in chosen.iter().enumerate() {
            for &b in &chosen[i + 1..] {
                assert!(table.bowen(&s.fiber, a, b) > eps);
            }
        }
        for p in 0..cloud.len() {
            assert!(chosen.iter().any(|&c| table.bowen(&s.fiber, c, p) <= eps));
        }
        // the spatial index agrees with a plain quadratic scan
        let mut plain: Vec<usize> = Vec::new();
        for p in 0..cloud.len() {
            if plain.iter().all(|&q| table.bowen(&s.fiber, p, q) > eps) {
                plain.push(p);
            }
        }
        assert_eq!(plain, chosen);
    }

    #[test]
    fn single_point_cloud() {
        let d = sys("doubling");
        let env = BaseTrajectory::constant(0, 3);
        let cloud = PointCloud::single(FiberPoint::Real(0.25));
        let (pts, rec) = greedy_separated(&cloud, &d, &env, 3, 0.1).unwrap();
        assert_eq!(pts, vec![FiberPoint::Real(0.25)]);
        assert_eq!(rec.value, 1.0);
        assert_eq!(span_count(&cloud, &d, &env, 3, 0.1).unwrap().value, 1.0);
        assert!(PointCloud::new(vec![], Provenance::OrbitDerived).is_err());
    }

    #[test]
    fn full_shift_separated_depth_three() {
        let f = sys("full-shift(2)");
        let env = BaseTrajectory::constant(0, 4);
        let cloud = PointCloud::cylinders(&f.fiber, 3, 5).unwrap();
        let (_, rec) = greedy_separated(&cloud, &f, &env, 2, 0.5).unwrap();
        let table = OrbitTable::build(&f, &env, &cloud.points, 2).unwrap();
        let dist = |a: usize, b: usize| table.bowen(&f.fiber, a, b);
        assert_eq!(brute_max_separated(&dist, 8, 0.5), 4);
        assert_eq!(rec.value, 4.0);
        assert_eq!(rec.exactness, Exactness::Exact);
    }

    #[test]
    fn span_examples() {
        let d = sys("doubling");
        let env = BaseTrajectory::constant(0, 2);
        for eps in [0.5, 0.3, 0.15] {
            let cloud = PointCloud::grid(&d.fiber, 0.05).unwrap();
            let rec = span_count(&cloud, &d, &env, 1, eps).unwrap();
            let dist = |a: usize, b: usize| d.fiber.metric(&cloud.points[a], &cloud.points[b]);
            let best = brute_min_span(&dist, cloud.len(), eps);
            assert!(rec.value as usize >= best);
            assert!(rec.value >= 1.0 && rec.value as usize <= cloud.len());
        }
        // a closed half-circle arc ball covers R/Z; 0.3-balls need two
        let cloud = PointCloud::grid(&d.fiber, 0.05).unwrap();
        assert_eq!(span_count(&cloud, &d, &env, 1, 0.5).unwrap().value, 1.0);
        assert_eq!(span_count(&cloud, &d, &env, 1, 0.3).unwrap().value, 2.0);
    }

    #[test]
    fn structured_counts_match_brute_force() {
        let f = sys("full-shift(2)");
        assert_eq!(structured_sep_count(&f, 2, 0.5).unwrap().value, 4.0);
        assert_eq!(structured_sep_count(&f, 1, 0.5).unwrap().value, 2.0);
        let env = BaseTrajectory::constant(0, 8);
        for n in 1..=4 {
            for m in 1..=(8 - n) {
                let eps = (-(m as f64)).exp2();
                let cloud = PointCloud::cylinders(&f.fiber, n + m, n + m + 2).unwrap();
                let (_, greedy) = greedy_separated(&cloud, &f, &env, n, eps).unwrap();
                let closed = structured_sep_count(&f, n, eps).unwrap();
                assert_eq!(greedy.value, closed.value, "n = {n}, m = {m}");
                assert_eq!(closed.value, 2f64.powi((n + m - 1) as i32));
            }
        }
    }

    #[test]
    fn product_shift_closed_form() {
        let p = sys("product-shift(12)");
        assert_eq!(structured_sep_count(&p, 1, 0.5).unwrap().value, 2.0);
        assert!(structured_sep_count(&p, 13, 0.5).is_err());
        assert!(matches!(
            structured_sep_count(&sys("doubling"), 1, 0.5),
            Err(Error::NotStructured(_))
        ));
        // oracle: exhaustive separated set on a grid in the (x0, x1) slice
        let pts: Vec<(f64, f64)> = (0..=8)
            .flat_map(|i| (0..=8).map(move |j| (i as f64 / 8.0, j as f64 / 8.0)))
            .collect();
        let dist = |a: usize, b: usize| {
            let (x, y) = (pts[a], pts[b]);
            (x.0 - y.0).abs().max(0.5 * (x.1 - y.1).abs())
        };
        assert_eq!(brute_max_separated(&dist, pts.len(), 0.5), 2);
    }

    #[test]
    fn product_shift_formula_matches_orbits() {
        // the grid must be fine enough to realise the packings along every axis
        let p = sys("product-shift(3)");
        let env = BaseTrajectory::constant(0, 4);
        let cloud = PointCloud::grid(&p.fiber, 1.0 / 64.0).unwrap();
        for n in 1..=2 {
            let eps = 0.25;
            let (_, greedy) = greedy_separated(&cloud, &p, &env, n, eps).unwrap();
            let closed = structured_sep_count(&p, n, eps).unwrap();
            assert_eq!(greedy.value, closed.value, "n = {n}");
        }
    }

    #[test]
    fn net_cover_on_circle() {
        let f = FiberSpace::new(FiberKind::Circle).unwrap();
        let cover = net_cover(&f, 0.5).unwrap();
        assert_eq!(cover.len(), 4);
        for e in &cover.elements {
            assert!(matches!(e, CoverElement::Ball { radius, .. } if *radius == 0.25));
        }
        assert!(cover.diam_cert <= 0.5);
        assert!(cover.leb_cert >= 0.125);
        // every grid point lies eps/4-deep inside some ball
        for i in 0..1000 {
            let x = i as f64 / 1000.0;
            assert!(cover.elements.iter().any(|e| match e {
                CoverElement::Ball { center, radius } =>
                    f.metric(center, &FiberPoint::Real(x)) + 0.125 <= *radius,
                _ => false,
            }));
        }
        assert!(net_cover(&f, 0.0).is_err());
        assert!(net_cover(&f, -1.0).is_err());
    }

    #[test]
    fn net_cover_certificates() {
        for kind in [
            FiberKind::Circle,
            FiberKind::UnitCube(2),
            FiberKind::WeightedCube(5),
            FiberKind::Symbolic(2),
            FiberKind::Symbolic(3),
        ] {
            let f = FiberSpace::new(kind).unwrap();
            for eps in [f.diameter(), 0.3, 0.125, 0.05] {
                let c = net_cover(&f, eps).unwrap();
                assert!(c.diam_cert <= eps + 1e-15, "{kind:?} {eps}");
                assert!(c.leb_cert >= eps / 4.0 - 1e-15, "{kind:?} {eps}");
            }
        }
        // radius eps/2 balls around an eps/4-net: one ball once eps ≥ 2·diameter
        let f = FiberSpace::new(FiberKind::UnitCube(3)).unwrap();
        assert_eq!(net_cover(&f, 2.0).unwrap().len(), 1);
        assert_eq!(net_cover(&f, 1.0).unwrap().len(), 8);
    }

    #[test]
    fn subcover_examples() {
        let f = sys("full-shift(2)");
        let env = BaseTrajectory::constant(0, 4);
        let cover = CoverSpec::cylinders(&f.fiber, 1).unwrap();
        let cloud = PointCloud::cylinders(&f.fiber, 3, 5).unwrap();
        let rec = subcover_count(&f, &env, &cover, &cloud, 3).unwrap();
        assert_eq!((rec.value, rec.exactness), (8.0, Exactness::Exact));
        assert_eq!(structured_subcover_count(&f, &cover, 3).unwrap().value, 8.0);
        let rec1 = subcover_count(&f, &env, &cover, &cloud, 1).unwrap();
        assert_eq!(rec1.value, cover.len() as f64);

        let single = CoverSpec::single_ball(&f.fiber, FiberPoint::Word(vec![0; 5]));
        assert_eq!(subcover_count(&f, &env, &single, &cloud, 3).unwrap().value, 1.0);

        let partial = CoverSpec {
            elements: vec![CoverElement::Cylinder(vec![0])],
            diam_cert: 0.5,
            leb_cert: 0.5,
        };
        assert!(matches!(
            subcover_count(&f, &env, &partial, &cloud, 1),
            Err(Error::Uncovered { index: 4, .. })
        ));
    }

    #[test]
    fn subcover_sandwich_on_cylinder_covers() {
        let f = sys("full-shift(2)");
        let env = BaseTrajectory::constant(0, 8);
        for q in 1..=2 {
            let cover = CoverSpec::cylinders(&f.fiber, q).unwrap();
            for n in 1..=4 {
                let cloud = PointCloud::cylinders(&f.fiber, n + q + 1, n + q + 3).unwrap();
                let sub = subcover_count(&f, &env, &cover, &cloud, n).unwrap().value;
                let lo = structured_sep_count(&f, n, cover.diam_cert).unwrap().value;
                let hi = structured_sep_count(&f, n, cover.leb_cert).unwrap().value;
                assert!(lo <= sub && sub <= hi, "q = {q}, n = {n}: {lo} {sub} {hi}");
            }
        }
    }
}
