//! Private per-agent measures, barycenter support grids and transport costs.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a discrete measure.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Line,
    /// Angles in `[0, 2pi)`.
    Circle,
    Grid2d,
}

impl SpaceKind {
    pub fn name(self) -> &'static str {
        match self {
            SpaceKind::Line => "line",
            SpaceKind::Circle => "circle",
            SpaceKind::Grid2d => "grid2d",
        }
    }

    pub fn coords(self) -> usize {
        match self {
            SpaceKind::Line | SpaceKind::Circle => 1,
            SpaceKind::Grid2d => 2,
        }
    }
}

/// A point of one of the base spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Line(f64),
    Circle(f64),
    Grid2d([f64; 2]),
}

impl Point {
    pub fn space(&self) -> SpaceKind {
        match self {
            Point::Line(_) => SpaceKind::Line,
            Point::Circle(_) => SpaceKind::Circle,
            Point::Grid2d(_) => SpaceKind::Grid2d,
        }
    }

    /// Builds a point from raw coordinates, wrapping angles into `[0, 2pi)`.
    pub fn from_coords(space: SpaceKind, coords: &[f64]) -> Result<Self> {
        if coords.len() != space.coords() {
            return Err(Error::Dimension {
                expected: space.coords(),
                actual: coords.len(),
            });
        }
        Ok(match space {
            SpaceKind::Line => Point::Line(coords[0]),
            SpaceKind::Circle => Point::Circle(wrap_angle(coords[0])),
            SpaceKind::Grid2d => Point::Grid2d([coords[0], coords[1]]),
        })
    }

    pub fn coords(&self) -> Vec<f64> {
        match *self {
            Point::Line(x) | Point::Circle(x) => vec![x],
            Point::Grid2d(p) => p.to_vec(),
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Shortest arc length between two angles.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

/// The fixed barycenter support `z_1..z_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportGrid {
    space: SpaceKind,
    points: Vec<Point>,
}

impl SupportGrid {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::param("support", "at least one support point is required"))?;
        let space = first.space();
        for p in &points {
            if p.space() != space {
                return Err(Error::SpaceMismatch {
                    expected: space.name(),
                    actual: p.space().name(),
                });
            }
        }
        let mut keys: Vec<Vec<u64>> = points
            .iter()
            .map(|p| p.coords().iter().map(|c| c.to_bits()).collect())
            .collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("support", "support points must be distinct"));
        }
        Ok(SupportGrid { space, points })
    }

    /// `n` equally spaced points covering `[lo, hi]` inclusive.
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 || !(hi > lo) && n > 1 {
            return Err(Error::param("support", format!("need n >= 1 and lo < hi, got n = {n}, [{lo}, {hi}]")));
        }
        let pts = if n == 1 {
            vec![Point::Line(lo)]
        } else {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n).map(|l| Point::Line(lo + h * l as f64)).collect()
        };
        Self::new(pts)
    }

    /// Angles `2 pi l / n`, `l = 0..n`.
    pub fn circle(n: usize) -> Result<Self> {
        Self::new((0..n).map(|l| Point::Circle(TAU * l as f64 / n as f64)).collect())
    }

    /// Pixel centers of a `rows x cols` image in row-major order.
    pub fn grid2d(rows: usize, cols: usize) -> Result<Self> {
        Self::new(
            (0..rows)
                .flat_map(|r| (0..cols).map(move |c| pixel_center(r, c)))
                .collect(),
        )
    }

    pub fn space(&self) -> SpaceKind {
        self.space
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn pixel_center(row: usize, col: usize) -> Point {
    Point::Grid2d([row as f64 + 0.5, col as f64 + 0.5])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    SquaredEuclidean,
    SquaredAngular,
}

/// `c(z, y) = scale * d(z, y)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostFunction {
    pub kind: CostKind,
    pub scale: f64,
}

impl CostFunction {
    pub fn new(kind: CostKind) -> Self {
        CostFunction { kind, scale: 1.0 }
    }

    pub fn scaled(kind: CostKind, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param("cost.scale", format!("must be positive and finite, got {scale}")));
        }
        Ok(CostFunction { kind, scale })
    }

    /// Rescales so the largest cost between any two grid points is 1.
    pub fn normalized_for(kind: CostKind, grid: &SupportGrid) -> Result<Self> {
        let unit = CostFunction::new(kind);
        let pts = grid.points();
        let mut max = 0.0f64;
        match grid.space() {
            // the diameter of an axis-aligned pixel grid is attained between corners
            SpaceKind::Grid2d => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in pts {
                    if let Point::Grid2d(c) = p {
                        for k in 0..2 {
                            lo[k] = lo[k].min(c[k]);
                            hi[k] = hi[k].max(c[k]);
                        }
                    }
                }
                max = unit.eval(&Point::Grid2d(lo), &Point::Grid2d(hi))?;
            }
            _ => {
                for a in pts {
                    for b in pts {
                        max = max.max(unit.eval(a, b)?);
                    }
                }
            }
        }
        if max <= 0.0 {
            return Ok(unit);
        }
        Self::scaled(kind, 1.0 / max)
    }

    fn compatible(&self, space: SpaceKind) -> bool {
        matches!(
            (self.kind, space),
            (CostKind::SquaredEuclidean, SpaceKind::Line | SpaceKind::Grid2d)
                | (CostKind::SquaredAngular, SpaceKind::Circle)
        )
    }

    pub fn eval(&self, z: &Point, y: &Point) -> Result<f64> {
        let d2 = match (self.kind, z, y) {
            (CostKind::SquaredEuclidean, Point::Line(a), Point::Line(b)) => (a - b) * (a - b),
            (CostKind::SquaredEuclidean, Point::Grid2d(a), Point::Grid2d(b)) => {
                (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
            }
            (CostKind::SquaredAngular, Point::Circle(a), Point::Circle(b)) => angular_distance(*a, *b).powi(2),
            _ => {
                return Err(Error::SpaceMismatch {
                    expected: z.space().name(),
                    actual: y.space().name(),
                })
            }
        };
        Ok(self.scale * d2)
    }

    /// Fills `out[l] = c(z_l, y)`.
    pub fn cost_vector_into(&self, grid: &SupportGrid, y: &Point, out: &mut [f64]) -> Result<()> {
        if y.space() != grid.space() || !self.compatible(grid.space()) {
            return Err(Error::SpaceMismatch {
                expected: grid.space().name(),
                actual: y.space().name(),
            });
        }
        if out.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                actual: out.len(),
            });
        }
        for (o, z) in out.iter_mut().zip(grid.points()) {
            *o = self.eval(z, y)?;
        }
        Ok(())
    }

    pub fn cost_vector(&self, grid: &SupportGrid, y: &Point) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len()];
        self.cost_vector_into(grid, y, &mut out)?;
        Ok(out)
    }
}

/// Finitely supported probability measure with strictly positive weights.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    atoms: Vec<Point>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl DiscreteMeasure {
    /// Normalizes `weights` and drops zero-weight atoms.
    pub fn new(atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::Dimension {
                expected: atoms.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Measure(format!("weights must be finite and nonnegative, found {w}")));
        }
        if let Some(first) = atoms.first() {
            if atoms.iter().any(|a| a.space() != first.space()) {
                return Err(Error::Measure("atoms live in different spaces".into()));
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Measure("total mass is zero".into()));
        }
        let (atoms, weights): (Vec<_>, Vec<_>) = atoms
            .into_iter()
            .zip(weights)
            .filter(|(_, w)| *w > 0.0)
            .map(|(a, w)| (a, w / total))
            .unzip();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Measure(e.to_string()))?;
        Ok(DiscreteMeasure { atoms, weights, index })
    }

    pub fn point_mass(y: Point) -> Self {
        Self::new(vec![y], vec![1.0]).expect("a point mass is a valid measure")
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn space(&self) -> SpaceKind {
        self.atoms[0].space()
    }

    /// CSV rows `weight,coord...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let _ = write!(s, "{w:e}");
            for c in a.coords() {
                let _ = write!(s, ",{c:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, space: SpaceKind) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("measure csv line {}: {e}", i + 1)))?;
            if vals.is_empty() {
                return Err(Error::Parse(format!("measure csv line {}: empty", i + 1)));
            }
            weights.push(vals[0]);
            atoms.push(Point::from_coords(space, &vals[1..])?);
        }
        Self::new(atoms, weights)
    }
}

/// A samplable probability measure held by one agent.
#[derive(Debug, Clone)]
pub enum MeasureOracle {
    Gaussian { mean: f64, std: f64, normal: Normal<f64> },
    VonMises { loc: f64, kappa: f64 },
    Discrete(DiscreteMeasure),
}

impl MeasureOracle {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::Measure(format!("gaussian needs finite mean and std > 0, got ({mean}, {std})")));
        }
        let normal = Normal::new(mean, std).map_err(|e| Error::Measure(e.to_string()))?;
        Ok(MeasureOracle::Gaussian { mean, std, normal })
    }

    pub fn von_mises(loc: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite() && loc.is_finite()) {
            return Err(Error::Measure(format!("von Mises needs kappa > 0, got {kappa}")));
        }
        Ok(MeasureOracle::VonMises {
            loc: wrap_angle(loc),
            kappa,
        })
    }

    pub fn discrete(atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        DiscreteMeasure::new(atoms, weights).map(MeasureOracle::Discrete)
    }

    pub fn space(&self) -> SpaceKind {
        match self {
            MeasureOracle::Gaussian { .. } => SpaceKind::Line,
            MeasureOracle::VonMises { .. } => SpaceKind::Circle,
            MeasureOracle::Discrete(d) => d.space(),
        }
    }

    pub fn as_discrete(&self) -> Option<&DiscreteMeasure> {
        match self {
            MeasureOracle::Discrete(d) => Some(d),
            _ => None,
        }
    }

    /// One i.i.d. draw; consumes the stream sequentially.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            MeasureOracle::Gaussian { normal, .. } => Point::Line(normal.sample(rng)),
            MeasureOracle::VonMises { loc, kappa } => Point::Circle(wrap_angle(loc + sample_von_mises_offset(*kappa, rng))),
            MeasureOracle::Discrete(d) => d.atoms[d.index.sample(rng)],
        }
    }
}

/// Best-Fisher rejection sampler for a von Mises offset around 0, in `(-pi, pi]`.
fn sample_von_mises_offset<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}
