//! Run configuration: a TOML document with `graph`, `support`, `cost`,
//! `measures`, `solver` and `output` sections, plus built-in presets.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Algorithm, DEFAULT_BATCH_CAP};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologyKind};
use crate::imageio::{image_to_measure, read_image};
use crate::measures::{CostFunction, CostKind, MeasureOracle, Point, SpaceKind, SupportGrid};
use crate::rng::{stream_for, Purpose};

/// Exact gradients are used in `auto` mode only while `n * atoms` stays at or below this.
pub const EXACT_SIZE_GUARD: usize = 10_000_000;
/// Samples used to estimate the dual value of a continuous measure.
pub const DEFAULT_DUAL_EVAL_BATCH: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every random stream of the run.
    pub seed: u64,
    pub graph: GraphConfig,
    pub support: SupportConfig,
    pub cost: CostConfig,
    /// One entry per agent.
    pub measures: Vec<MeasureSpec>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub m: usize,
    pub topology: TopologySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Complete,
    Cycle,
    Star,
    /// `p` defaults to `min(2 ln m / m, 1)`, `seed` to the master seed.
    ErdosRenyi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Text file: the agent count on the first line, then one `i j` pair per line.
    EdgeList { path: PathBuf },
}

impl TopologySpec {
    pub fn parse_name(name: &str) -> Result<Self> {
        Ok(match name {
            "complete" => TopologySpec::Complete,
            "cycle" => TopologySpec::Cycle,
            "star" => TopologySpec::Star,
            "erdos_renyi" | "er" => TopologySpec::ErdosRenyi { p: None, seed: None },
            other => {
                return Err(Error::param(
                    "graph.topology",
                    format!("unknown topology `{other}` (complete, cycle, star, erdos_renyi)"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupportConfig {
    /// `n` equally spaced points on `[lo, hi]`.
    Line { lo: f64, hi: f64, n: usize },
    /// Angles `2 pi l / n`.
    Circle { n: usize },
    /// Pixel centers of a `rows x cols` image.
    Grid2d { rows: usize, cols: usize },
}

impl SupportConfig {
    pub fn build(&self) -> Result<SupportGrid> {
        match *self {
            SupportConfig::Line { lo, hi, n } => SupportGrid::line(lo, hi, n),
            SupportConfig::Circle { n } => SupportGrid::circle(n),
            SupportConfig::Grid2d { rows, cols } => SupportGrid::grid2d(rows, cols),
        }
    }

    pub fn space(&self) -> SpaceKind {
        match self {
            SupportConfig::Line { .. } => SpaceKind::Line,
            SupportConfig::Circle { .. } => SpaceKind::Circle,
            SupportConfig::Grid2d { .. } => SpaceKind::Grid2d,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            SupportConfig::Line { n, .. } | SupportConfig::Circle { n } => n,
            SupportConfig::Grid2d { rows, cols } => rows * cols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostKind,
    /// Multiplier applied to the cost; ignored when `normalize` is set.
    #[serde(default = "one")]
    pub scale: f64,
    /// Rescale so that the largest cost over the support is 1.
    #[serde(default)]
    pub normalize: bool,
}

impl CostConfig {
    pub fn build(&self, grid: &SupportGrid) -> Result<CostFunction> {
        if self.normalize {
            CostFunction::normalized_for(self.kind, grid)
        } else {
            CostFunction::scaled(self.kind, self.scale)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Gaussian { mean: f64, std: f64 },
    VonMises { loc: f64, kappa: f64 },
    /// `atoms` holds one coordinate list per atom.
    Discrete { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Grayscale image file (binary PGM or a text matrix), normalized to a probability.
    Image { path: PathBuf },
}

impl MeasureSpec {
    pub fn build(&self, space: SpaceKind) -> Result<MeasureOracle> {
        match self {
            MeasureSpec::Gaussian { mean, std } => MeasureOracle::gaussian(*mean, *std),
            MeasureSpec::VonMises { loc, kappa } => MeasureOracle::von_mises(*loc, *kappa),
            MeasureSpec::Discrete { atoms, weights } => {
                let pts = atoms
                    .iter()
                    .map(|c| Point::from_coords(space, c))
                    .collect::<Result<Vec<_>>>()?;
                MeasureOracle::discrete(pts, weights.clone())
            }
            MeasureSpec::Image { path } => image_to_measure(&read_image(path)?),
        }
    }

    pub fn space(&self, support: SpaceKind) -> SpaceKind {
        match self {
            MeasureSpec::Gaussian { .. } => SpaceKind::Line,
            MeasureSpec::VonMises { .. } => SpaceKind::Circle,
            MeasureSpec::Image { .. } => SpaceKind::Grid2d,
            MeasureSpec::Discrete { .. } => support,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientChoice {
    /// Exact when every measure is discrete and within [`EXACT_SIZE_GUARD`].
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub epsilon: f64,
    /// Number of rounds. Exactly one of `rounds` and `radius` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    /// Bound on the norm of the dual solution; the round count is then derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Constant batch size overriding the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_batch: Option<usize>,
    #[serde(default = "default_batch_cap")]
    pub batch_cap: usize,
    #[serde(default)]
    pub gradient: GradientChoice,
    #[serde(default = "default_dual_eval_batch")]
    pub dual_eval_batch: usize,
    /// Record a trace row every this many rounds (the last round is always recorded).
    #[serde(default = "one_usize")]
    pub record_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_trace_file")]
    pub trace_file: String,
    #[serde(default = "default_barycenter_file")]
    pub barycenter_file: String,
    /// Write one PGM per agent for grid2d supports.
    #[serde(default)]
    pub render_pgm: bool,
    /// Fill the `wall_ms` column; zeros when off, making traces reproducible byte for byte.
    #[serde(default = "yes")]
    pub wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
            trace_file: default_trace_file(),
            barycenter_file: default_barycenter_file(),
            render_pgm: false,
            wall_clock: true,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_batch_cap() -> usize {
    DEFAULT_BATCH_CAP
}
fn default_dual_eval_batch() -> usize {
    DEFAULT_DUAL_EVAL_BATCH
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_trace_file() -> String {
    "trace.csv".into()
}
fn default_barycenter_file() -> String {
    "barycenter.csv".into()
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(field, format!("must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Field-level checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        positive("solver.gamma", s.gamma)?;
        positive("solver.epsilon", s.epsilon)?;
        if let Some(r) = s.radius {
            positive("solver.radius", r)?;
        }
        if s.rounds.is_some() == s.radius.is_some() {
            return Err(Error::param("solver.rounds", "exactly one of rounds and radius must be given"));
        }
        if s.fixed_batch == Some(0) {
            return Err(Error::param("solver.fixed_batch", "must be at least 1"));
        }
        if s.batch_cap == 0 {
            return Err(Error::param("solver.batch_cap", "must be at least 1"));
        }
        if s.dual_eval_batch == 0 {
            return Err(Error::param("solver.dual_eval_batch", "must be at least 1"));
        }
        if s.record_every == 0 {
            return Err(Error::param("solver.record_every", "must be at least 1"));
        }
        if self.graph.m == 0 {
            return Err(Error::param("graph.m", "must be at least 1"));
        }
        if self.measures.len() != self.graph.m {
            return Err(Error::param(
                "graph.m",
                format!("{} agents but {} measures", self.graph.m, self.measures.len()),
            ));
        }
        if let TopologySpec::ErdosRenyi { p: Some(p), .. } = self.graph.topology {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::param("graph.topology.p", format!("must lie in (0, 1], got {p}")));
            }
        }
        match self.support {
            SupportConfig::Line { lo, hi, n } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::param("support", "line needs finite lo < hi"));
                }
                if n == 0 {
                    return Err(Error::param("support.n", "must be at least 1"));
                }
            }
            SupportConfig::Circle { n: 0 } => return Err(Error::param("support.n", "must be at least 1")),
            SupportConfig::Grid2d { rows, cols } if rows == 0 || cols == 0 => {
                return Err(Error::param("support", "grid needs at least one row and column"))
            }
            _ => {}
        }
        if !self.cost.normalize {
            positive("cost.scale", self.cost.scale)?;
        }
        let space = self.support.space();
        let cost_ok = matches!(
            (self.cost.kind, space),
            (CostKind::SquaredEuclidean, SpaceKind::Line | SpaceKind::Grid2d) | (CostKind::SquaredAngular, SpaceKind::Circle)
        );
        if !cost_ok {
            return Err(Error::param("cost.kind", format!("{:?} does not apply to a {} support", self.cost.kind, space.name())));
        }
        for (i, m) in self.measures.iter().enumerate() {
            let ms = m.space(space);
            if ms != space {
                return Err(Error::param(
                    format!("measures[{i}]"),
                    format!("lives on a {} but the support is a {}", ms.name(), space.name()),
                ));
            }
            match m {
                MeasureSpec::Gaussian { std, .. } => positive(&format!("measures[{i}].std"), *std)?,
                MeasureSpec::VonMises { kappa, .. } => positive(&format!("measures[{i}].kappa"), *kappa)?,
                MeasureSpec::Discrete { atoms, weights } if atoms.len() != weights.len() => {
                    return Err(Error::param(format!("measures[{i}]"), "atoms and weights differ in length"))
                }
                _ => {}
            }
        }
        if self.solver.gradient == GradientChoice::Exact
            && self.measures.iter().any(|m| matches!(m, MeasureSpec::Gaussian { .. } | MeasureSpec::VonMises { .. }))
        {
            return Err(Error::param("solver.gradient", "exact gradients need discrete measures"));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        let m = self.graph.m;
        if m == 1 {
            return Topology::from_edges(1, []);
        }
        match &self.graph.topology {
            TopologySpec::Complete => Topology::build(TopologyKind::Complete, m),
            TopologySpec::Cycle => Topology::build(TopologyKind::Cycle, m),
            TopologySpec::Star => Topology::build(TopologyKind::Star, m),
            TopologySpec::ErdosRenyi { p, seed } => Topology::build(
                TopologyKind::ErdosRenyi {
                    p: *p,
                    seed: seed.unwrap_or(self.seed),
                },
                m,
            ),
            TopologySpec::EdgeList { path } => {
                let t = Topology::read_edge_list(path)?;
                if t.m() != m {
                    return Err(Error::param("graph.m", format!("edge list has {} agents, config says {m}", t.m())));
                }
                Ok(t)
            }
        }
    }
}

/// Built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Gauss1d,
    VonMises,
    ImageDir,
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss1d" => Ok(PresetName::Gauss1d),
            "vonmises" => Ok(PresetName::VonMises),
            "image_dir" => Ok(PresetName::ImageDir),
            other => Err(Error::param("preset", format!("unknown preset `{other}` (gauss1d, vonmises, image_dir)"))),
        }
    }
}

/// Knobs that change how a preset is generated.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetOptions {
    pub m: usize,
    pub seed: u64,
    /// Support size for the 1-D presets.
    pub n: usize,
    /// Image directory for `image_dir`.
    pub images: Option<PathBuf>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            m: 10,
            seed: 7,
            n: 100,
            images: None,
        }
    }
}

pub const GAUSS_MEAN_RANGE: (f64, f64) = (-4.0, 4.0);
pub const GAUSS_STD_RANGE: (f64, f64) = (0.1, 0.6);
pub const VONMISES_KAPPA_RANGE: (f64, f64) = (2.0, 20.0);

fn solver_defaults(fixed_batch: Option<usize>) -> SolverConfig {
    SolverConfig {
        algorithm: Algorithm::Accel,
        gamma: 0.1,
        epsilon: 0.01,
        rounds: Some(1000),
        radius: None,
        fixed_batch,
        batch_cap: DEFAULT_BATCH_CAP,
        gradient: GradientChoice::Auto,
        dual_eval_batch: DEFAULT_DUAL_EVAL_BATCH,
        record_every: 10,
    }
}

pub fn preset(name: PresetName, opts: &PresetOptions) -> Result<RunConfig> {
    if opts.m == 0 {
        return Err(Error::param("graph.m", "must be at least 1"));
    }
    let mut rng = stream_for(opts.seed, Purpose::Setup, 0, 0);
    let cfg = match name {
        PresetName::Gauss1d => RunConfig {
            seed: opts.seed,
            graph: GraphConfig {
                m: opts.m,
                topology: TopologySpec::ErdosRenyi { p: None, seed: None },
            },
            support: SupportConfig::Line { lo: -5.0, hi: 5.0, n: opts.n },
            cost: CostConfig {
                kind: CostKind::SquaredEuclidean,
                scale: 1.0,
                normalize: false,
            },
            measures: (0..opts.m)
                .map(|_| MeasureSpec::Gaussian {
                    mean: rng.random_range(GAUSS_MEAN_RANGE.0..GAUSS_MEAN_RANGE.1),
                    std: rng.random_range(GAUSS_STD_RANGE.0..GAUSS_STD_RANGE.1),
                })
                .collect(),
            solver: solver_defaults(Some(100)),
            output: OutputConfig::default(),
        },
        PresetName::VonMises => RunConfig {
            seed: opts.seed,
            graph: GraphConfig {
                m: opts.m,
                topology: TopologySpec::ErdosRenyi { p: None, seed: None },
            },
            support: SupportConfig::Circle { n: opts.n },
            cost: CostConfig {
                kind: CostKind::SquaredAngular,
                scale: 1.0,
                normalize: false,
            },
            measures: (0..opts.m)
                .map(|_| MeasureSpec::VonMises {
                    loc: rng.random_range(-PI..PI),
                    kappa: rng.random_range(VONMISES_KAPPA_RANGE.0..VONMISES_KAPPA_RANGE.1),
                })
                .collect(),
            solver: solver_defaults(Some(100)),
            output: OutputConfig::default(),
        },
        PresetName::ImageDir => image_preset(opts)?,
    };
    Ok(cfg)
}

fn image_preset(opts: &PresetOptions) -> Result<RunConfig> {
    let dir = opts
        .images
        .as_ref()
        .ok_or_else(|| Error::param("images", "the image_dir preset needs an image directory"))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::param("images", format!("no image files in {}", dir.display())));
    }
    let mut shape = None;
    for f in &files {
        let img = read_image(f)?;
        match shape {
            None => shape = Some((img.rows, img.cols)),
            Some(s) if s != (img.rows, img.cols) => {
                return Err(Error::param(
                    "images",
                    format!(
                        "{} is {}x{}, expected {}x{}",
                        f.display(),
                        img.rows,
                        img.cols,
                        s.0,
                        s.1
                    ),
                ))
            }
            _ => {}
        }
    }
    let (rows, cols) = shape.expect("at least one image");
    let m = files.len();
    Ok(RunConfig {
        seed: opts.seed,
        graph: GraphConfig {
            m,
            topology: if m <= 2 { TopologySpec::Complete } else { TopologySpec::Cycle },
        },
        support: SupportConfig::Grid2d { rows, cols },
        cost: CostConfig {
            kind: CostKind::SquaredEuclidean,
            scale: 1.0,
            normalize: true,
        },
        measures: files.into_iter().map(|path| MeasureSpec::Image { path }).collect(),
        solver: solver_defaults(Some(100)),
        output: OutputConfig {
            render_pgm: true,
            ..OutputConfig::default()
        },
    })
}
