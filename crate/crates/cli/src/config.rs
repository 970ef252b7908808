//! Run configuration. Every field has a default; the committed
//! `configs/reference.toml` spells all of them out.

use std::path::PathBuf;

use deepstpp::discrete::DiscreteFitOptions;
use deepstpp::kernel::ReferenceKernelParams;
use deepstpp::model::{BasisWidths, ModelConfig, SpatialDomain, TimeWindow};
use deepstpp::optim::FitOptions;
use deepstpp::predict::ForecastOptions;
use deepstpp::simulate::SimOptions;
use deepstpp::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: f64,
    pub domain: SpatialDomain,
    pub model: ModelSection,
    pub simulate: SimulateSection,
    pub fit: FitSection,
    pub evaluate: EvaluateSection,
    pub predict: PredictSection,
    pub rank_demo: RankDemoSection,
    pub graph: GraphSection,
    pub discrete: DiscreteSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 10.0,
            domain: SpatialDomain { x_lo: -1.0, x_hi: 1.0, y_lo: -1.0, y_hi: 1.0 },
            model: ModelSection::default(),
            simulate: SimulateSection::default(),
            fit: FitSection::default(),
            evaluate: EvaluateSection::default(),
            predict: PredictSection::default(),
            rank_demo: RankDemoSection::default(),
            graph: GraphSection::default(),
            discrete: DiscreteSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub temporal_rank: usize,
    pub spatial_rank: usize,
    pub mu: f64,
    pub learn_mu: bool,
    pub tau_max: f64,
    pub a_max: f64,
    /// Initial total coefficient mass, spread evenly over `alpha`.
    pub alpha0: f64,
    pub widths: BasisWidths,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            temporal_rank: 2,
            spatial_rank: 2,
            mu: 1.0,
            learn_mu: true,
            tau_max: 3.0,
            a_max: 2.0,
            alpha0: 0.1,
            widths: BasisWidths { psi: vec![32, 32], phi: vec![32, 32], u: vec![32, 32], v: vec![32, 32], mark: vec![32, 32] },
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            temporal_rank: self.temporal_rank,
            spatial_rank: self.spatial_rank,
            mark_rank: 0,
            mu: self.mu,
            learn_mu: self.learn_mu,
            tau_max: self.tau_max,
            a_max: self.a_max,
            widths: self.widths.clone(),
        }
    }
}

/// Where simulated events come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Homogeneous process with rate `simulate.mu` on the domain.
    Poisson,
    /// Closed-form reference kernel with baseline `simulate.mu`.
    Reference,
    /// Temporal exponential Hawkes process.
    ExpHawkes,
    /// Model stored in `simulate.checkpoint`.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub source: Source,
    pub sequences: usize,
    pub mu: f64,
    pub hawkes_a: f64,
    pub hawkes_b: f64,
    pub reference: ReferenceKernelParams,
    pub checkpoint: Option<PathBuf>,
    pub options: SimOptions,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            source: Source::Reference,
            sequences: 100,
            mu: 1.0,
            hawkes_a: 0.5,
            hawkes_b: 1.0,
            reference: ReferenceKernelParams::default(),
            checkpoint: None,
            options: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Defaults to `corpus.csv` in the output directory.
    pub corpus: Option<PathBuf>,
    pub options: FitOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Fit report whose barrier weight is used to recompute the objective.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub corpus: Option<PathBuf>,
    /// Without a checkpoint, a homogeneous process with rate `predict.mu`.
    pub checkpoint: Option<PathBuf>,
    pub mu: f64,
    pub horizon: Option<f64>,
    pub time_nodes: usize,
    pub space_cells: usize,
    pub tail_tolerance: f64,
    pub max_doublings: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        let f = ForecastOptions::default();
        Self {
            corpus: None,
            checkpoint: None,
            mu: 1.0,
            horizon: f.horizon,
            time_nodes: f.time_nodes,
            space_cells: f.space_cells,
            tail_tolerance: f.tail_tolerance,
            max_doublings: f.max_doublings,
        }
    }
}

impl PredictSection {
    pub fn forecast_options(&self) -> ForecastOptions {
        ForecastOptions {
            horizon: self.horizon,
            time_nodes: self.time_nodes,
            space_cells: self.space_cells,
            tail_tolerance: self.tail_tolerance,
            max_doublings: self.max_doublings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankDemoSection {
    pub size: usize,
    pub rel_tol: f64,
}

impl Default for RankDemoSection {
    fn default() -> Self {
        Self { size: 200, rel_tol: deepstpp::kernel::DEFAULT_RANK_TOL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Free,
    Poly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftChoice {
    Adjacency,
    Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub corpus: Option<PathBuf>,
    /// Adjacency matrix file; required for polynomial filters.
    pub adjacency: Option<PathBuf>,
    /// Node count when no adjacency is given.
    pub nodes: usize,
    pub filter: FilterKind,
    pub shift: ShiftChoice,
    pub degree: usize,
    pub graph_rank: usize,
    pub temporal_rank: usize,
    pub tau_max: f64,
    pub mu: f64,
    pub per_node_mu: bool,
    pub alpha0: f64,
    pub widths: Vec<usize>,
    pub options: FitOptions,
    /// Checkpoint read by `graph-snapshots`.
    pub checkpoint: Option<PathBuf>,
    pub snapshot_time: f64,
    pub snapshot_lags: Vec<f64>,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            corpus: None,
            adjacency: None,
            nodes: 5,
            filter: FilterKind::Free,
            shift: ShiftChoice::Adjacency,
            degree: 2,
            graph_rank: 1,
            temporal_rank: 1,
            tau_max: 3.0,
            mu: 0.5,
            per_node_mu: true,
            alpha0: 0.1,
            widths: vec![16],
            options: FitOptions::default(),
            checkpoint: None,
            snapshot_time: 5.0,
            snapshot_lags: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteSection {
    pub panel: Option<PathBuf>,
    pub depth: usize,
    pub threshold: f64,
    pub options: DiscreteFitOptions,
}

impl Default for DiscreteSection {
    fn default() -> Self {
        Self { panel: None, depth: 2, threshold: 0.02, options: DiscreteFitOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    /// Kernel on lag x displacement for a fixed source event.
    Kernel,
    /// Conditional intensity on time x space for one corpus sequence.
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub kind: ExportKind,
    pub checkpoint: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub sequence: usize,
    pub source_time: f64,
    pub source_location: [f64; 2],
    /// Nodes per axis.
    pub cells: [usize; 3],
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            kind: ExportKind::Kernel,
            checkpoint: None,
            corpus: None,
            sequence: 0,
            source_time: 1.0,
            source_location: [0.0, 0.0],
            cells: [20, 16, 16],
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn window(&self) -> Result<TimeWindow> {
        TimeWindow::new(self.horizon)
    }

    pub fn domain(&self) -> Result<SpatialDomain> {
        let d = self.domain;
        SpatialDomain::new(d.x_lo, d.x_hi, d.y_lo, d.y_hi)
    }

    /// Checks everything that does not depend on input files.
    pub fn validate(&self) -> Result<()> {
        let window = self.window()?;
        let domain = self.domain()?;
        self.model.model_config().validate(window, &domain)?;
        self.fit.options.validate()?;
        self.graph.options.validate()?;
        let s = &self.simulate;
        if s.sequences == 0 {
            return Err(Error::InvalidConfig("simulate.sequences must be positive".into()));
        }
        if s.source == Source::Checkpoint && s.checkpoint.is_none() {
            return Err(Error::InvalidConfig("simulate.checkpoint is required for source = \"checkpoint\"".into()));
        }
        deepstpp::kernel::ExpHawkesSpec::new(s.mu, s.hawkes_a, s.hawkes_b)?;
        s.reference.validate()?;
        let p = &self.predict;
        if !(p.mu >= 0.0 && p.tail_tolerance > 0.0 && p.time_nodes >= 2 && p.space_cells >= 1) {
            return Err(Error::InvalidConfig("invalid prediction settings".into()));
        }
        if self.rank_demo.size == 0 || !(self.rank_demo.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rank demo needs a positive size and tolerance".into()));
        }
        let g = &self.graph;
        if g.graph_rank == 0 || g.temporal_rank == 0 || g.nodes == 0 || !(g.tau_max > 0.0 && g.tau_max <= self.horizon) {
            return Err(Error::InvalidConfig("invalid graph model settings".into()));
        }
        if g.filter == FilterKind::Poly && (g.adjacency.is_none() || g.degree == 0) {
            return Err(Error::InvalidConfig("polynomial filters need graph.adjacency and degree >= 1".into()));
        }
        if self.discrete.depth == 0 {
            return Err(Error::InvalidConfig("discrete.depth must be positive".into()));
        }
        if self.export.cells.iter().any(|&c| c < 2) {
            return Err(Error::InvalidConfig("export.cells must be at least 2 per axis".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("horizon = 5
bogus = 1
").is_err());
        assert!(RunConfig::parse("horizon = -1
").is_err());
    }
}
