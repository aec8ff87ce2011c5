//! Continuous bundle random dynamical systems over symbolic driving bases.
//!
//! The base is a finite-alphabet shift carrying a Bernoulli or Markov law.
//! An environment `ω` is a sampled symbol sequence, `θ` is the index shift,
//! and the fiber map used at time `i` is `T_{ω_i}`. Every fiber is the full
//! space, so the bundle is `Ω × X`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::term::Term;

const LAW_TOL: f64 = 1e-12;
pub const MAX_CUBE_DIM: usize = 64;
pub const MAX_ALPHABET: usize = 256;

/// Law of the driving symbol process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseLaw {
    Bernoulli(Vec<f64>),
    Markov {
        initial: Vec<f64>,
        matrix: Vec<Vec<f64>>,
    },
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidLaw(format!("{what} is empty")));
    }
    if v.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
        return Err(Error::InvalidLaw(format!(
            "{what} has entries outside [0,1]: {v:?}"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > LAW_TOL {
        return Err(Error::InvalidLaw(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl BaseLaw {
    pub fn alphabet_size(&self) -> usize {
        match self {
            BaseLaw::Bernoulli(p) => p.len(),
            BaseLaw::Markov { initial, .. } => initial.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLaw::Bernoulli(p) => check_prob_vector(p, "Bernoulli vector"),
            BaseLaw::Markov { initial, matrix } => {
                check_prob_vector(initial, "initial vector")?;
                if matrix.len() != initial.len() {
                    return Err(Error::InvalidLaw(format!(
                        "transition matrix has {} rows for {} states",
                        matrix.len(),
                        initial.len()
                    )));
                }
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != initial.len() {
                        return Err(Error::InvalidLaw(format!("row {i} has wrong length")));
                    }
                    check_prob_vector(row, &format!("transition row {i}"))?;
                }
                Ok(())
            }
        }
    }

    /// Parse `bernoulli(p0,p1,..)`, `markov((r0),(r1),..)` (stationary start)
    /// or `markov-init((init),(r0),(r1),..)`.
    pub fn parse(text: &str) -> Result<BaseLaw> {
        let term = Term::parse(text)?;
        let bad = || Error::InvalidLaw(format!("cannot read law '{text}'"));
        let (name, args) = term.as_call().ok_or_else(bad)?;
        let law = match name {
            "bernoulli" => {
                let p = args
                    .iter()
                    .map(Term::as_number)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                BaseLaw::Bernoulli(p)
            }
            "markov" | "markov-init" => {
                let mut rows = args
                    .iter()
                    .map(Term::as_numbers)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                let initial = if name == "markov-init" {
                    if rows.is_empty() {
                        return Err(bad());
                    }
                    Some(rows.remove(0))
                } else {
                    None
                };
                BaseLaw::markov(rows, initial)?
            }
            _ => return Err(bad()),
        };
        law.validate()?;
        Ok(law)
    }

    /// Markov law; with no initial vector the stationary distribution is used.
    pub fn markov(matrix: Vec<Vec<f64>>, initial: Option<Vec<f64>>) -> Result<BaseLaw> {
        let initial = match initial {
            Some(v) => v,
            None => {
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != matrix.len() {
                        return Err(Error::InvalidLaw(format!("row {i} has wrong length")));
                    }
                    check_prob_vector(row, &format!("transition row {i}"))?;
                }
                stationary_distribution(&matrix)
            }
        };
        let law = BaseLaw::Markov { initial, matrix };
        law.validate()?;
        Ok(law)
    }

    fn first_symbol<R: Rng>(&self, rng: &mut R) -> u8 {
        match self {
            BaseLaw::Bernoulli(p) => draw(p, rng),
            BaseLaw::Markov { initial, .. } => draw(initial, rng),
        }
    }

    fn next_symbol<R: Rng>(&self, prev: u8, rng: &mut R) -> u8 {
        match self {
            BaseLaw::Bernoulli(p) => draw(p, rng),
            BaseLaw::Markov { matrix, .. } => draw(&matrix[prev as usize], rng),
        }
    }

    /// Sample `len` consecutive symbols.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let mut s = self.first_symbol(rng);
        out.push(s);
        for _ in 1..len {
            s = self.next_symbol(s, rng);
            out.push(s);
        }
        out
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn draw<R: Rng>(p: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i as u8;
        }
    }
    // rounding: fall back to the last symbol with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0) as u8
}

/// Stationary vector by power iteration on the lazy chain `(P + I) / 2`,
/// which has the same stationary law and is aperiodic.
pub fn stationary_distribution(matrix: &[Vec<f64>]) -> Vec<f64> {
    let k = matrix.len();
    let mut v = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += 0.5 * v[i] * matrix[i][j];
            }
            next[i] += 0.5 * v[i];
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < 1e-15 {
            break;
        }
    }
    v
}

/// The driving process: alphabet, law, and whether negative times are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProcess {
    pub alphabet_size: usize,
    pub law: BaseLaw,
    pub two_sided: bool,
}

impl BaseProcess {
    pub fn new(law: BaseLaw, two_sided: bool) -> Result<Self> {
        law.validate()?;
        let alphabet_size = law.alphabet_size();
        if alphabet_size > MAX_ALPHABET {
            return Err(Error::Unsupported(format!(
                "base alphabet {alphabet_size} exceeds {MAX_ALPHABET}"
            )));
        }
        Ok(Self {
            alphabet_size,
            law,
            two_sided,
        })
    }

    /// A one-letter base makes the system deterministic.
    pub fn is_deterministic(&self) -> bool {
        match &self.law {
            BaseLaw::Bernoulli(p) => p.iter().filter(|&&x| x > 0.0).count() <= 1,
            BaseLaw::Markov { .. } => self.alphabet_size == 1,
        }
    }
}

/// A finite window of an environment sequence. Index `origin_offset` of
/// `symbols` is time 0; earlier entries are negative times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseTrajectory {
    symbols: Arc<[u8]>,
    origin_offset: usize,
}

impl BaseTrajectory {
    pub fn new(symbols: Vec<u8>, origin_offset: usize) -> Self {
        assert!(origin_offset <= symbols.len());
        Self {
            symbols: symbols.into(),
            origin_offset,
        }
    }

    /// One-sided trajectory starting at time 0.
    pub fn forward(symbols: Vec<u8>) -> Self {
        Self::new(symbols, 0)
    }

    pub fn constant(symbol: u8, horizon: usize) -> Self {
        Self::forward(vec![symbol; horizon])
    }

    /// Number of symbols at non-negative times.
    pub fn horizon(&self) -> usize {
        self.symbols.len() - self.origin_offset
    }

    pub fn past_len(&self) -> usize {
        self.origin_offset
    }

    pub fn origin_offset(&self) -> usize {
        self.origin_offset
    }

    /// Symbols at times `0..horizon`.
    pub fn future(&self) -> &[u8] {
        &self.symbols[self.origin_offset..]
    }

    /// Symbols at times `-l..0`, if available.
    pub fn past(&self, l: usize) -> Option<&[u8]> {
        (l <= self.origin_offset).then(|| &self.symbols[self.origin_offset - l..self.origin_offset])
    }

    pub fn at(&self, t: isize) -> Option<u8> {
        let idx = self.origin_offset as isize + t;
        (idx >= 0).then(|| self.symbols.get(idx as usize).copied()).flatten()
    }

    /// `θ^n ω`: the same sequence viewed from time `n`.
    pub fn shifted(&self, n: usize) -> BaseTrajectory {
        assert!(n <= self.horizon(), "shift beyond horizon");
        BaseTrajectory {
            symbols: self.symbols.clone(),
            origin_offset: self.origin_offset + n,
        }
    }

    pub fn require(&self, need: usize) -> Result<()> {
        if self.horizon() < need {
            Err(Error::HorizonTooShort {
                have: self.horizon(),
                need,
            })
        } else {
            Ok(())
        }
    }
}

/// Shape of the fiber and its metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiberKind {
    /// `R/Z` with arc distance.
    Circle,
    /// `[0,1]^D` with the max norm.
    UnitCube(usize),
    /// `[0,1]^D` with `d(x,y) = sup_j 2^{-j} |x_j - y_j|`.
    WeightedCube(usize),
    /// Words over `k` letters with `d(x,y) = 2^{-(first differing index)}`.
    Symbolic(usize),
}

/// A point of some fiber. Symbolic points are finite words; letters past the
/// stored length are unknown and treated as agreeing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FiberPoint {
    Real(f64),
    Vector(Vec<f64>),
    Word(Vec<u8>),
}

impl FiberPoint {
    pub fn as_ref(&self) -> PointRef<'_> {
        match self {
            FiberPoint::Real(x) => PointRef::Real(*x),
            FiberPoint::Vector(v) => PointRef::Vector(v),
            FiberPoint::Word(w) => PointRef::Word(w),
        }
    }
}

impl fmt::Display for FiberPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FiberPoint::Real(x) => write!(f, "{x}"),
            FiberPoint::Vector(v) => write!(f, "{v:?}"),
            FiberPoint::Word(w) => {
                for s in w {
                    write!(f, "{s}.")?;
                }
                Ok(())
            }
        }
    }
}

/// Borrowed view of a fiber point, used by the flat orbit tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointRef<'a> {
    Real(f64),
    Vector(&'a [f64]),
    Word(&'a [u8]),
}

impl PointRef<'_> {
    pub fn to_owned(self) -> FiberPoint {
        match self {
            PointRef::Real(x) => FiberPoint::Real(x),
            PointRef::Vector(v) => FiberPoint::Vector(v.to_vec()),
            PointRef::Word(w) => FiberPoint::Word(w.to_vec()),
        }
    }
}

/// Index of the first differing letter over the common length.
pub fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y)
}

pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).abs();
    d.min(1.0 - d)
}

/// Fiber space with its metric, optionally multiplied by a constant `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpace {
    pub kind: FiberKind,
    pub scale: f64,
}

impl FiberSpace {
    pub fn new(kind: FiberKind) -> Result<Self> {
        Self::with_scale(kind, 1.0)
    }

    pub fn with_scale(kind: FiberKind, scale: f64) -> Result<Self> {
        match kind {
            FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) if d == 0 || d > MAX_CUBE_DIM => {
                return Err(Error::Unsupported(format!(
                    "cube dimension {d} outside 1..={MAX_CUBE_DIM}"
                )))
            }
            FiberKind::Symbolic(k) if !(2..=MAX_ALPHABET).contains(&k) => {
                return Err(Error::Unsupported(format!(
                    "alphabet size {k} outside 2..={MAX_ALPHABET}"
                )))
            }
            _ => {}
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("metric scale {scale}")));
        }
        Ok(Self { kind, scale })
    }

    /// Parse `circle`, `cube(D)`, `weighted-cube(D)` or `symbolic(k)`.
    pub fn parse(text: &str, scale: f64) -> Result<Self> {
        let term = Term::parse(text)?;
        let bad = || Error::InvalidArgument(format!("unknown fiber '{text}'"));
        let (name, args) = term.as_call().ok_or_else(bad)?;
        let int_arg = || -> Result<usize> {
            let v = args.first().and_then(Term::as_number).ok_or_else(bad)?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(bad());
            }
            Ok(v as usize)
        };
        let kind = match name {
            "circle" => FiberKind::Circle,
            "cube" => FiberKind::UnitCube(int_arg()?),
            "weighted-cube" => FiberKind::WeightedCube(int_arg()?),
            "symbolic" => FiberKind::Symbolic(int_arg()?),
            _ => return Err(bad()),
        };
        Self::with_scale(kind, scale)
    }

    pub fn diameter(&self) -> f64 {
        let base = match self.kind {
            FiberKind::Circle => 0.5,
            _ => 1.0,
        };
        base * self.scale
    }

    /// Coordinate weights of the cube metrics.
    pub fn weight(&self, j: usize) -> f64 {
        match self.kind {
            FiberKind::WeightedCube(_) => (-(j as f64)).exp2(),
            _ => 1.0,
        }
    }

    pub fn dist(&self, a: PointRef<'_>, b: PointRef<'_>) -> f64 {
        let raw = match (a, b) {
            (PointRef::Real(x), PointRef::Real(y)) => circle_distance(x, y),
            (PointRef::Vector(x), PointRef::Vector(y)) => match self.kind {
                FiberKind::WeightedCube(_) => x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .map(|(j, (p, q))| (-(j as f64)).exp2() * (p - q).abs())
                    .fold(0.0, f64::max),
                _ => x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max),
            },
            (PointRef::Word(x), PointRef::Word(y)) => match first_difference(x, y) {
                Some(j) => (-(j as f64)).exp2(),
                None => 0.0,
            },
            _ => panic!("points of different fiber kinds"),
        };
        raw * self.scale
    }

    pub fn metric(&self, a: &FiberPoint, b: &FiberPoint) -> f64 {
        self.dist(a.as_ref(), b.as_ref())
    }

    pub fn contains(&self, p: &FiberPoint) -> bool {
        match (self.kind, p) {
            (FiberKind::Circle, FiberPoint::Real(x)) => (0.0..1.0).contains(x),
            (FiberKind::UnitCube(d) | FiberKind::WeightedCube(d), FiberPoint::Vector(v)) => {
                v.len() == d && v.iter().all(|x| (0.0..=1.0).contains(x))
            }
            (FiberKind::Symbolic(k), FiberPoint::Word(w)) => w.iter().all(|&s| (s as usize) < k),
            _ => false,
        }
    }

    /// Uniform random point; words get length `word_len`.
    pub fn random_point<R: Rng>(&self, rng: &mut R, word_len: usize) -> FiberPoint {
        match self.kind {
            FiberKind::Circle => FiberPoint::Real(rng.random::<f64>()),
            FiberKind::UnitCube(d) | FiberKind::WeightedCube(d) => {
                FiberPoint::Vector((0..d).map(|_| rng.random::<f64>()).collect())
            }
            FiberKind::Symbolic(k) => {
                FiberPoint::Word((0..word_len).map(|_| rng.random_range(0..k) as u8).collect())
            }
        }
    }

    /// Number of leading letters two words must share to be at distance
    /// `< eps` (open ball). Zero when every pair qualifies.
    pub fn open_ball_depth(&self, eps: f64) -> usize {
        // distance s*2^{-j} < eps  <=>  first difference j satisfies s*2^{-j} < eps;
        // letters 0..c must agree where c = #{j >= 0 : s*2^{-j} >= eps}
        count_levels(self.scale, eps, |v, e| v >= e)
    }

    /// Number of leading letters two words must share to be at distance `<= eps`.
    pub fn closed_ball_depth(&self, eps: f64) -> usize {
        count_levels(self.scale, eps, |v, e| v > e)
    }
}

fn count_levels(scale: f64, eps: f64, keep: impl Fn(f64, f64) -> bool) -> usize {
    let mut c = 0;
    while c < 1100 && keep(scale * (-(c as f64)).exp2(), eps) {
        c += 1;
    }
    c
}

pub fn tent(x: f64) -> f64 {
    if x < 0.5 {
        2.0 * x
    } else {
        2.0 - 2.0 * x
    }
}

/// A continuous self-map of the fiber attached to one environment symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FiberMap {
    /// `x -> m x mod 1` on the circle.
    Times(u32),
    /// `x -> x + a mod 1` on the circle.
    Rotate(f64),
    /// Coordinatewise tent map on a cube.
    Tent,
    /// `(x_0, .., x_{D-1}) -> (x_1, .., x_{D-1}, tent(x_0))`.
    ProductShift,
    /// Left shift followed by a letter permutation; a `0` is appended so the
    /// stored word length is preserved.
    ShiftPermute(Vec<u8>),
}

impl FiberMap {
    pub fn parse(text: &str) -> Result<FiberMap> {
        let term = Term::parse(text)?;
        let bad = || Error::InvalidArgument(format!("unknown fiber map '{text}'"));
        let (name, args) = term.as_call().ok_or_else(bad)?;
        let num = |i: usize| args.get(i).and_then(Term::as_number).ok_or_else(bad);
        Ok(match name {
            "times" => {
                let m = num(0)?;
                if m.fract() != 0.0 || !(1.0..=1e6).contains(&m) {
                    return Err(bad());
                }
                FiberMap::Times(m as u32)
            }
            "rotate" => FiberMap::Rotate(num(0)?),
            "tent" => FiberMap::Tent,
            "product-shift" => FiberMap::ProductShift,
            "shift" => FiberMap::ShiftPermute(Vec::new()),
            "shift-permute" => {
                let perm = args
                    .iter()
                    .map(|t| t.as_number().map(|v| v as u8))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(bad)?;
                FiberMap::ShiftPermute(perm)
            }
            _ => return Err(bad()),
        })
    }

    fn check(&mut self, fiber: &FiberSpace) -> Result<()> {
        let ok = match (&mut *self, fiber.kind) {
            (FiberMap::Times(_) | FiberMap::Rotate(_), FiberKind::Circle) => true,
            (FiberMap::Tent, FiberKind::UnitCube(_) | FiberKind::WeightedCube(_)) => true,
            (FiberMap::ProductShift, FiberKind::UnitCube(_) | FiberKind::WeightedCube(_)) => true,
            (FiberMap::ShiftPermute(perm), FiberKind::Symbolic(k)) => {
                if perm.is_empty() {
                    *perm = (0..k).map(|s| s as u8).collect();
                }
                let mut seen = vec![false; k];
                perm.len() == k
                    && perm.iter().all(|&s| {
                        let fresh = (s as usize) < k && !seen[s as usize];
                        if fresh {
                            seen[s as usize] = true;
                        }
                        fresh
                    })
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Incompatible(format!(
                "map {self:?} is not a self-map of {:?}",
                fiber.kind
            )))
        }
    }

    pub fn apply(&self, x: PointRef<'_>) -> FiberPoint {
        match (self, x) {
            (FiberMap::Times(m), PointRef::Real(v)) => {
                let y = *m as f64 * v;
                FiberPoint::Real(y - y.floor())
            }
            (FiberMap::Rotate(a), PointRef::Real(v)) => {
                let y = (v + a).rem_euclid(1.0);
                FiberPoint::Real(if y >= 1.0 { 0.0 } else { y })
            }
            (FiberMap::Tent, PointRef::Vector(v)) => {
                FiberPoint::Vector(v.iter().map(|&c| tent(c)).collect())
            }
            (FiberMap::ProductShift, PointRef::Vector(v)) => {
                let mut out = Vec::with_capacity(v.len());
                out.extend_from_slice(&v[1..]);
                out.push(tent(v[0]));
                FiberPoint::Vector(out)
            }
            (FiberMap::ShiftPermute(perm), PointRef::Word(w)) => {
                let mut out: Vec<u8> = w.iter().skip(1).map(|&s| perm[s as usize]).collect();
                if !w.is_empty() {
                    out.push(0);
                }
                FiberPoint::Word(out)
            }
            _ => panic!("map {self:?} applied to incompatible point"),
        }
    }

    /// Preimage of a letter under the permutation (symbolic maps only).
    pub fn inverse_letter(&self, s: u8) -> Option<u8> {
        match self {
            FiberMap::ShiftPermute(perm) => perm.iter().position(|&p| p == s).map(|i| i as u8),
            _ => None,
        }
    }
}

/// Closed-form counting backends available for a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    /// Symbolic fiber whose maps are shift-then-permute: Bowen balls and
    /// iterated cylinder covers are cylinders.
    Cylinder { alphabet: usize },
    /// Weighted-cube product shift over a one-symbol base.
    ProductShift { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberedSystem {
    pub name: String,
    pub base: BaseProcess,
    pub fiber: FiberSpace,
    pub maps: Vec<FiberMap>,
    pub structure: Option<Structure>,
    /// Natural fiber measure of catalog entries, as a measure spec string.
    pub default_measure: Option<String>,
}

impl FiberedSystem {
    pub fn new(
        name: impl Into<String>,
        base: BaseProcess,
        fiber: FiberSpace,
        mut maps: Vec<FiberMap>,
    ) -> Result<Self> {
        if maps.len() != base.alphabet_size {
            return Err(Error::InvalidArgument(format!(
                "{} maps for a base alphabet of {}",
                maps.len(),
                base.alphabet_size
            )));
        }
        for m in &mut maps {
            m.check(&fiber)?;
        }
        let structure = match fiber.kind {
            FiberKind::Symbolic(k) if maps.iter().all(|m| matches!(m, FiberMap::ShiftPermute(_))) => {
                Some(Structure::Cylinder { alphabet: k })
            }
            FiberKind::WeightedCube(d)
                if base.alphabet_size == 1 && maps[0] == FiberMap::ProductShift =>
            {
                Some(Structure::ProductShift { dim: d })
            }
            _ => None,
        };
        Ok(Self {
            name: name.into(),
            base,
            fiber,
            maps,
            structure,
            default_measure: None,
        })
    }

    pub fn map_for(&self, symbol: u8) -> &FiberMap {
        &self.maps[symbol as usize]
    }

    pub fn step(&self, symbol: u8, x: PointRef<'_>) -> FiberPoint {
        self.map_for(symbol).apply(x)
    }

    /// `T_ω^n x`.
    pub fn advance(&self, env: &BaseTrajectory, x: &FiberPoint, n: usize) -> Result<FiberPoint> {
        env.require(n)?;
        let mut p = x.clone();
        for &s in &env.future()[..n] {
            p = self.step(s, p.as_ref());
        }
        Ok(p)
    }

    /// Uniform point of the fiber, handy for property checks.
    pub fn random_point<R: Rng>(&self, rng: &mut R, word_len: usize) -> FiberPoint {
        self.fiber.random_point(rng, word_len)
    }
}

/// How a system is requested: a catalog name or explicit fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: Option<String>,
    pub base: Option<String>,
    pub fiber: Option<String>,
    pub maps: Vec<String>,
    pub two_sided: bool,
    pub scale: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            name: None,
            base: None,
            fiber: None,
            maps: Vec::new(),
            two_sided: true,
            scale: 1.0,
        }
    }
}

impl SystemSpec {
    pub fn catalog(name: &str) -> Self {
        Self {
            name: Some(name.to_string()),
            ..Self::default()
        }
    }
}

fn int_param(args: &[Term], i: usize, default: Option<usize>, what: &str) -> Result<usize> {
    match args.get(i) {
        None => default.ok_or_else(|| Error::InvalidArgument(format!("missing {what}"))),
        Some(t) => {
            let v = t
                .as_number()
                .ok_or_else(|| Error::InvalidArgument(format!("{what} must be a number")))?;
            if v.fract() != 0.0 || v < 0.0 || v > 1e9 {
                return Err(Error::InvalidArgument(format!("{what} must be an integer")));
            }
            Ok(v as usize)
        }
    }
}

/// Build and validate a system from its spec.
pub fn make_system(spec: &SystemSpec) -> Result<FiberedSystem> {
    let Some(name) = &spec.name else {
        let base = spec
            .base
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("custom system needs a base law".into()))?;
        let fiber = spec
            .fiber
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("custom system needs a fiber".into()))?;
        let base = BaseProcess::new(BaseLaw::parse(base)?, spec.two_sided)?;
        let fiber = FiberSpace::parse(fiber, spec.scale)?;
        let maps = spec
            .maps
            .iter()
            .map(|m| FiberMap::parse(m))
            .collect::<Result<Vec<_>>>()?;
        return FiberedSystem::new("custom", base, fiber, maps);
    };

    let term = Term::parse(name).map_err(|_| Error::UnknownSystem(name.clone()))?;
    let (head, args) = term
        .as_call()
        .ok_or_else(|| Error::UnknownSystem(name.clone()))?;
    let one_symbol = || BaseProcess::new(BaseLaw::Bernoulli(vec![1.0]), spec.two_sided);
    let mut system = match head {
        "doubling" => FiberedSystem::new(
            name.clone(),
            one_symbol()?,
            FiberSpace::with_scale(FiberKind::Circle, spec.scale)?,
            vec![FiberMap::Times(2)],
        )?,
        "random-expanding" => {
            let m1 = int_param(args, 0, Some(2), "m1")?;
            let m2 = int_param(args, 1, Some(3), "m2")?;
            let p = args.get(2).and_then(Term::as_number).unwrap_or(0.5);
            if m1 == 0 || m2 == 0 || m1 > 1_000_000 || m2 > 1_000_000 {
                return Err(Error::Unsupported("multipliers must be in 1..=10^6".into()));
            }
            let base = BaseProcess::new(BaseLaw::Bernoulli(vec![p, 1.0 - p]), spec.two_sided)?;
            FiberedSystem::new(
                name.clone(),
                base,
                FiberSpace::with_scale(FiberKind::Circle, spec.scale)?,
                vec![FiberMap::Times(m1 as u32), FiberMap::Times(m2 as u32)],
            )?
        }
        "product-shift" => {
            let d = int_param(args, 0, Some(12), "D")?;
            let mut s = FiberedSystem::new(
                name.clone(),
                one_symbol()?,
                FiberSpace::with_scale(FiberKind::WeightedCube(d), spec.scale)?,
                vec![FiberMap::ProductShift],
            )?;
            s.default_measure = Some("lebesgue".into());
            s
        }
        "full-shift" => {
            let k = int_param(args, 0, Some(2), "k")?;
            if !(2..=MAX_ALPHABET).contains(&k) {
                return Err(Error::Unsupported(format!("k = {k} outside 2..=256")));
            }
            let p = match args.get(1) {
                Some(t) => t
                    .as_numbers()
                    .ok_or_else(|| Error::InvalidLaw(format!("bad weights in '{name}'")))?,
                None => vec![1.0 / k as f64; k],
            };
            if p.len() != k {
                return Err(Error::InvalidLaw(format!(
                    "{} weights for {k} letters",
                    p.len()
                )));
            }
            BaseLaw::Bernoulli(p.clone()).validate()?;
            let mut s = FiberedSystem::new(
                name.clone(),
                one_symbol()?,
                FiberSpace::with_scale(FiberKind::Symbolic(k), spec.scale)?,
                vec![FiberMap::ShiftPermute(Vec::new())],
            )?;
            s.default_measure = Some(format!("bernoulli({})", join_numbers(&p)));
            s
        }
        "random-subshift" => {
            let k = int_param(args, 0, Some(2), "k")?;
            if !(2..=MAX_ALPHABET).contains(&k) {
                return Err(Error::Unsupported(format!("k = {k} outside 2..=256")));
            }
            let p = args.get(1).and_then(Term::as_number).unwrap_or(0.5);
            let base = BaseProcess::new(BaseLaw::Bernoulli(vec![p, 1.0 - p]), spec.two_sided)?;
            let cycle: Vec<u8> = (0..k).map(|s| ((s + 1) % k) as u8).collect();
            let mut s = FiberedSystem::new(
                name.clone(),
                base,
                FiberSpace::with_scale(FiberKind::Symbolic(k), spec.scale)?,
                vec![FiberMap::ShiftPermute(Vec::new()), FiberMap::ShiftPermute(cycle)],
            )?;
            s.default_measure = Some(format!("bernoulli({})", join_numbers(&vec![1.0 / k as f64; k])));
            s
        }
        _ => return Err(Error::UnknownSystem(name.clone())),
    };
    system.name = name.clone();
    Ok(system)
}

pub(crate) fn join_numbers(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// Sample an environment with `horizon` non-negative times (and as many
/// negative times when the base is two-sided).
pub fn sample_base(system: &FiberedSystem, seed: u64, horizon: usize) -> Result<BaseTrajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let mut rng = rng::stream(seed, "base", 0);
    let past = if system.base.two_sided { horizon } else { 0 };
    let symbols = system.base.law.sample(past + horizon, &mut rng);
    Ok(BaseTrajectory::new(symbols, past))
}

/// `x, T_ω x, …, T_ω^{n-1} x` together with the environment used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub points: Vec<FiberPoint>,
    pub env: BaseTrajectory,
}

pub fn fiber_iterate(
    system: &FiberedSystem,
    env: &BaseTrajectory,
    x: &FiberPoint,
    n: usize,
) -> Result<OrbitSegment> {
    if n == 0 {
        return Err(Error::InvalidArgument("orbit length must be positive".into()));
    }
    env.require(n)?;
    let mut points = Vec::with_capacity(n);
    points.push(x.clone());
    for i in 1..n {
        let next = system.step(env.future()[i - 1], points[i - 1].as_ref());
        points.push(next);
    }
    Ok(OrbitSegment {
        points,
        env: env.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reals(seg: &OrbitSegment) -> Vec<f64> {
        seg.points
            .iter()
            .map(|p| match p {
                FiberPoint::Real(x) => *x,
                _ => unreachable!(),
            })
            .collect()
    }

    #[test]
    fn catalog_doubling() {
        let s = make_system(&SystemSpec::catalog("doubling")).unwrap();
        assert_eq!(s.base.alphabet_size, 1);
        assert_eq!(s.fiber.kind, FiberKind::Circle);
        assert!(s.base.is_deterministic());
    }

    #[test]
    fn catalog_random_expanding() {
        let s = make_system(&SystemSpec::catalog("random-expanding(2,3,0.5)")).unwrap();
        assert_eq!(s.base.alphabet_size, 2);
        assert_eq!(s.maps, vec![FiberMap::Times(2), FiberMap::Times(3)]);
    }

    #[test]
    fn catalog_full_shift_metric() {
        let s = make_system(&SystemSpec::catalog("full-shift(2,(0.5,0.5))")).unwrap();
        assert_eq!(s.fiber.kind, FiberKind::Symbolic(2));
        assert_eq!(s.structure, Some(Structure::Cylinder { alphabet: 2 }));
        let x = FiberPoint::Word(vec![0, 0, 1, 0]);
        let y = FiberPoint::Word(vec![0, 0, 0, 0]);
        assert_eq!(s.fiber.metric(&x, &y), 0.25);
    }

    #[test]
    fn catalog_errors() {
        assert!(matches!(
            make_system(&SystemSpec::catalog("lorenz")),
            Err(Error::UnknownSystem(_))
        ));
        assert!(matches!(
            make_system(&SystemSpec::catalog("random-expanding(2,3,1.5)")),
            Err(Error::InvalidLaw(_))
        ));
        assert!(matches!(
            make_system(&SystemSpec::catalog("product-shift(65)")),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            make_system(&SystemSpec::catalog("full-shift(257)")),
            Err(Error::Unsupported(_))
        ));
        assert!(make_system(&SystemSpec::catalog("product-shift(64)")).is_ok());
    }

    #[test]
    fn custom_system() {
        let spec = SystemSpec {
            base: Some("markov((0.9,0.1),(0.5,0.5))".into()),
            fiber: Some("circle".into()),
            maps: vec!["times(2)".into(), "rotate(0.25)".into()],
            ..SystemSpec::default()
        };
        let s = make_system(&spec).unwrap();
        assert_eq!(s.base.alphabet_size, 2);
        let bad = SystemSpec {
            maps: vec!["times(2)".into(), "tent".into()],
            ..spec
        };
        assert!(matches!(make_system(&bad), Err(Error::Incompatible(_))));
    }

    #[test]
    fn markov_validation() {
        assert!(BaseLaw::parse("markov((0.9,0.2),(0.5,0.5))").is_err());
        let law = BaseLaw::parse("markov((0.9,0.1),(0.5,0.5))").unwrap();
        if let BaseLaw::Markov { initial, .. } = law {
            // stationary: pi_0 = 0.5 / 0.6
            assert!((initial[0] - 5.0 / 6.0).abs() < 1e-12);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn doubling_orbit() {
        let s = make_system(&SystemSpec::catalog("doubling")).unwrap();
        let env = BaseTrajectory::constant(0, 3);
        let seg = fiber_iterate(&s, &env, &FiberPoint::Real(0.1), 3).unwrap();
        // oracle: repeated application of x -> 2x mod 1
        let mut x = 0.1f64;
        let mut expected = vec![x];
        for _ in 0..2 {
            x = (2.0 * x) % 1.0;
            expected.push(x);
        }
        assert_eq!(reals(&seg), expected);
        let got = reals(&seg);
        assert!((got[1] - 0.2).abs() < 1e-15 && (got[2] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn single_step_orbit_is_the_point() {
        let s = make_system(&SystemSpec::catalog("random-expanding(2,3,0.5)")).unwrap();
        let env = BaseTrajectory::forward(vec![1]);
        let seg = fiber_iterate(&s, &env, &FiberPoint::Real(0.37), 1).unwrap();
        assert_eq!(seg.points, vec![FiberPoint::Real(0.37)]);
    }

    #[test]
    fn random_expanding_orbit() {
        let s = make_system(&SystemSpec::catalog("random-expanding(2,3,0.5)")).unwrap();
        let env = BaseTrajectory::forward(vec![0, 1, 0]);
        let got = reals(&fiber_iterate(&s, &env, &FiberPoint::Real(0.1), 3).unwrap());
        assert_eq!(got[0], 0.1);
        assert!((got[1] - 0.2).abs() < 1e-15);
        assert!((got[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn horizon_too_short() {
        let s = make_system(&SystemSpec::catalog("doubling")).unwrap();
        let env = BaseTrajectory::constant(0, 2);
        assert_eq!(
            fiber_iterate(&s, &env, &FiberPoint::Real(0.1), 4),
            Err(Error::HorizonTooShort { have: 2, need: 4 })
        );
    }

    #[test]
    fn doubling_base_is_constant() {
        let s = make_system(&SystemSpec::catalog("doubling")).unwrap();
        let env = sample_base(&s, 99, 10).unwrap();
        assert_eq!(env.future(), &[0u8; 10]);
        assert_eq!(env.past(10).unwrap(), &[0u8; 10]);
        assert!(sample_base(&s, 1, 0).is_err());
    }

    #[test]
    fn bernoulli_frequency_within_three_sigma() {
        let s = make_system(&SystemSpec::catalog("random-expanding(2,3,0.5)")).unwrap();
        let n = 1_000_000usize;
        let env = sample_base(&s, 7, n).unwrap();
        let zeros = env.future().iter().filter(|&&c| c == 0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((zeros - 0.5 * n as f64).abs() < 3.0 * sigma, "zeros = {zeros}");
    }

    #[test]
    fn absorbing_markov_chain_stays() {
        let spec = SystemSpec {
            base: Some("markov-init((1,0),(0.5,0.5),(0,1))".into()),
            fiber: Some("circle".into()),
            maps: vec!["times(2)".into(), "times(3)".into()],
            ..SystemSpec::default()
        };
        let s = make_system(&spec).unwrap();
        let env = sample_base(&s, 3, 200).unwrap();
        let seq = env.future();
        let hit = seq.iter().position(|&c| c == 1).expect("absorbed within 200 steps");
        assert!(seq[hit..].iter().all(|&c| c == 1));
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let s = make_system(&SystemSpec::catalog("random-expanding(2,3,0.5)")).unwrap();
        let a = sample_base(&s, 11, 64).unwrap();
        assert_eq!(a, sample_base(&s, 11, 64).unwrap());
        assert_ne!(a, sample_base(&s, 12, 64).unwrap());
    }

    #[test]
    fn product_shift_map() {
        let m = FiberMap::ProductShift;
        let y = m.apply(PointRef::Vector(&[0.2, 0.5, 0.9]));
        assert_eq!(y, FiberPoint::Vector(vec![0.5, 0.9, 0.4]));
    }

    #[test]
    fn ball_depths() {
        let f = FiberSpace::new(FiberKind::Symbolic(2)).unwrap();
        // open ball of radius 2^-m is the depth-(m+1) cylinder
        assert_eq!(f.open_ball_depth(0.5), 2);
        assert_eq!(f.open_ball_depth(0.125), 4);
        assert_eq!(f.closed_ball_depth(0.5), 1);
        assert_eq!(f.closed_ball_depth(0.3), 2);
        assert_eq!(f.open_ball_depth(1.5), 0);
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spaces = [
            FiberSpace::new(FiberKind::Circle).unwrap(),
            FiberSpace::new(FiberKind::UnitCube(3)).unwrap(),
            FiberSpace::new(FiberKind::WeightedCube(6)).unwrap(),
            FiberSpace::new(FiberKind::Symbolic(3)).unwrap(),
        ];
        for f in spaces {
            for _ in 0..10_000 {
                let x = f.random_point(&mut rng, 6);
                let y = f.random_point(&mut rng, 6);
                let z = f.random_point(&mut rng, 6);
                let dxy = f.metric(&x, &y);
                assert_eq!(dxy, f.metric(&y, &x));
                assert!(dxy >= 0.0 && dxy <= f.diameter());
                assert_eq!(f.metric(&x, &x), 0.0);
                assert!(f.metric(&x, &z) <= dxy + f.metric(&y, &z) + 1e-12);
            }
        }
    }
}
