//! Configuration files: a strict TOML schema (unknown keys rejected) and the
//! builders that turn parsed sections into validated runtime objects.

use serde::Deserialize;

use crate::controller::{
    AlgorithmVariant, DisturbanceComponent, DisturbanceSpec, EstimationGain, GainSet, Smoothing,
    UncertaintySpec,
};
use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::linalg::Mat;
use crate::lmi::{ModeInstance, ScalingGrid, Theorem4Instance};
use crate::sim::{
    InitialEstimates, InitialState, InitialVector, SimConfig, SwitchingSetup,
};
use crate::switching::{SemiMarkovSpec, SojournDistribution};
use crate::topology::Graph;
use crate::trigger::TriggerConfig;

/// A scalar broadcast to all players/modes, or an explicit list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, len: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrVec::Vec(v) if v.len() == len => Ok(v.clone()),
            ScalarOrVec::Vec(v) => Err(Error::invalid_config(format!(
                "{name} needs {len} entries, got {}",
                v.len()
            ))),
        }
    }
}

/// Matrix literal or named template.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatSpec {
    Named(String),
    Identity {
        identity: f64,
    },
    Matrix {
        matrix: Vec<Vec<f64>>,
    },
}

impl MatSpec {
    fn build(&self, dim: usize, name: &str) -> Result<Mat> {
        match self {
            MatSpec::Named(s) if s == "identity" => Ok(Mat::identity(dim)),
            MatSpec::Named(s) if s == "zero" => Ok(Mat::zeros(dim, dim)),
            MatSpec::Named(s) => Err(Error::invalid_config(format!(
                "{name}: unknown template `{s}` (expected `identity` or `zero`)"
            ))),
            MatSpec::Identity { identity } => Ok(Mat::identity(dim).scale(*identity)),
            MatSpec::Matrix { matrix } => {
                let m = Mat::from_rows(matrix)
                    .map_err(|e| Error::invalid_config(format!("{name}: {e}")))?;
                if m.rows() != dim || m.cols() != dim {
                    return Err(Error::invalid_config(format!("{name} must be {dim}x{dim}")));
                }
                Ok(m)
            }
        }
    }
}

fn parse_edges(edges: &[Vec<f64>]) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::with_capacity(edges.len());
    for e in edges {
        if e.len() != 2 && e.len() != 3 {
            return Err(Error::invalid_config(
                "each edge must be [i, j] or [i, j, w] with 1-based nodes",
            ));
        }
        let as_index = |v: f64| -> Result<usize> {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::invalid_config(format!("invalid node index {v}")));
            }
            Ok(v as usize)
        };
        out.push((
            as_index(e[0])?,
            as_index(e[1])?,
            if e.len() == 3 { e[2] } else { 1.0 },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub nodes: usize,
    pub edges: Vec<Vec<f64>>,
}

impl GraphSection {
    pub fn build(&self) -> Result<Graph> {
        Graph::from_edges(self.nodes, &parse_edges(&self.edges)?)
            .map_err(|e| Error::invalid_config(format!("graph: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticPlayer {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub kind: String,
    /// Connectivity fixture: one 2-vector per player.
    pub c: Option<Vec<Vec<f64>>>,
    /// Quadratic games: per-player blocks plus moduli.
    pub players: Option<Vec<QuadraticPlayer>>,
    pub action_dim: Option<usize>,
    pub mu: Option<f64>,
    pub lipschitz: Option<ScalarOrVec>,
}

impl GameSection {
    pub fn build(&self) -> Result<GameDefinition> {
        match self.kind.as_str() {
            "connectivity" => {
                let c = self
                    .c
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("connectivity game needs `c`"))?;
                let mut offsets = Vec::with_capacity(c.len());
                for (i, v) in c.iter().enumerate() {
                    if v.len() != 2 {
                        return Err(Error::invalid_config(format!(
                            "c[{}] must be a 2-vector",
                            i + 1
                        )));
                    }
                    offsets.push([v[0], v[1]]);
                }
                GameDefinition::connectivity(offsets)
            }
            "quadratic" => {
                let players = self
                    .players
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("quadratic game needs `players`"))?;
                let n = self
                    .action_dim
                    .ok_or_else(|| Error::invalid_config("quadratic game needs `action_dim`"))?;
                let mu = self
                    .mu
                    .ok_or_else(|| Error::invalid_config("quadratic game needs `mu`"))?;
                let lipschitz = self
                    .lipschitz
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("quadratic game needs `lipschitz`"))?
                    .expand(players.len(), "lipschitz")?;
                let mut qs = Vec::with_capacity(players.len());
                let mut cs = Vec::with_capacity(players.len());
                for p in players {
                    qs.push(Mat::from_rows(&p.q)?);
                    cs.push(p.c.clone());
                }
                GameDefinition::quadratic(qs, cs, n, mu, lipschitz)
            }
            other => Err(Error::invalid_config(format!(
                "unknown game kind `{other}` (expected `connectivity` or `quadratic`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub algorithm: AlgorithmVariant,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub output_stride: Option<usize>,
    pub smoothing: Option<Smoothing>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k1: f64,
    pub k2: ScalarOrVec,
    pub k3: ScalarOrVec,
    /// Per-player estimation gain (continuous variant only; the sampled
    /// variant takes per-mode gains from the switching block).
    pub k4: Option<ScalarOrVec>,
    pub alpha: Option<f64>,
    pub epsilon: f64,
    pub g_tilde: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerDisturbance {
    pub components: Vec<DisturbanceComponent>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub players: Vec<PlayerDisturbance>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySection {
    /// One n x (N n) matrix per player.
    pub maps: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialVectorSection {
    Named(String),
    Fixed { fixed: Vec<f64> },
    Random { random_box: f64 },
}

impl InitialVectorSection {
    fn build(&self, name: &str) -> Result<InitialVector> {
        match self {
            InitialVectorSection::Named(s) if s == "origin" => Ok(InitialVector::Origin),
            InitialVectorSection::Named(s) => Err(Error::invalid_config(format!(
                "initial {name}: unknown template `{s}` (expected `origin`)"
            ))),
            InitialVectorSection::Fixed { fixed } => Ok(InitialVector::Fixed(fixed.clone())),
            InitialVectorSection::Random { random_box } => {
                Ok(InitialVector::RandomBox(*random_box))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialEstimatesSection {
    Named(String),
    Random { random_box: f64 },
}

impl InitialEstimatesSection {
    fn build(&self) -> Result<InitialEstimates> {
        match self {
            InitialEstimatesSection::Named(s) if s == "own" => Ok(InitialEstimates::Own),
            InitialEstimatesSection::Named(s) if s == "exact" => Ok(InitialEstimates::Exact),
            InitialEstimatesSection::Named(s) => Err(Error::invalid_config(format!(
                "initial estimates: unknown template `{s}` (expected `own` or `exact`)"
            ))),
            InitialEstimatesSection::Random { random_box } => {
                Ok(InitialEstimates::RandomBox(*random_box))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub positions: Option<InitialVectorSection>,
    pub velocities: Option<InitialVectorSection>,
    pub estimates: Option<InitialEstimatesSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub sojourn: SojournDistribution,
    pub nodes: usize,
    pub edges: Vec<Vec<f64>>,
    /// Estimation gain K(m) for this mode.
    pub k4: f64,
    /// `[lo, hi]` rate intervals toward every mode (self entry ignored).
    pub rate_row: Vec<Vec<f64>>,
    /// Optional explicit embedded-chain row; defaults to normalized
    /// rate-interval midpoints.
    pub embedded_row: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSection {
    pub initial_mode: Option<usize>,
    pub modes: Vec<ModeSection>,
}

impl SwitchingSection {
    pub fn build(&self) -> Result<(SemiMarkovSpec, Vec<Graph>, Vec<f64>)> {
        let s = self.modes.len();
        let mut sojourn = Vec::with_capacity(s);
        let mut graphs = Vec::with_capacity(s);
        let mut k4 = Vec::with_capacity(s);
        let mut rates = Vec::with_capacity(s);
        let mut embedded_rows = Vec::with_capacity(s);
        for (m, mode) in self.modes.iter().enumerate() {
            sojourn.push(mode.sojourn);
            graphs.push(
                Graph::from_edges(mode.nodes, &parse_edges(&mode.edges)?)
                    .map_err(|e| Error::invalid_config(format!("mode {}: {e}", m + 1)))?,
            );
            k4.push(mode.k4);
            if mode.rate_row.len() != s || mode.rate_row.iter().any(|r| r.len() != 2) {
                return Err(Error::invalid_config(format!(
                    "mode {}: rate_row needs {s} [lo, hi] pairs",
                    m + 1
                )));
            }
            rates.push(
                mode.rate_row
                    .iter()
                    .map(|r| (r[0], r[1]))
                    .collect::<Vec<_>>(),
            );
            embedded_rows.push(mode.embedded_row.clone());
        }
        let initial_mode = self.initial_mode.unwrap_or(1);
        let spec = if embedded_rows.iter().all(|r| r.is_some()) {
            let mut embedded = Mat::zeros(s, s);
            for (m, row) in embedded_rows.iter().enumerate() {
                let row = row.as_ref().unwrap();
                if row.len() != s {
                    return Err(Error::invalid_config("embedded_row length mismatch"));
                }
                for (a, &p) in row.iter().enumerate() {
                    embedded[(m, a)] = p;
                }
            }
            let spec = SemiMarkovSpec {
                initial_mode,
                sojourn,
                embedded,
                rate_intervals: Some(rates),
            };
            spec.validate()?;
            spec
        } else if embedded_rows.iter().all(|r| r.is_none()) {
            SemiMarkovSpec::from_rate_intervals(initial_mode, sojourn, rates)?
        } else {
            return Err(Error::invalid_config(
                "give embedded_row for every mode or for none",
            ));
        };
        Ok((spec, graphs, k4))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub h: f64,
    pub zeta: ScalarOrVec,
    pub phi: MatSpec,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub trajectory: Option<String>,
    pub events: Option<String>,
    pub report: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_seeds: usize,
}

/// Top-level config file. Which sections must be present depends on the
/// consumer: simulations need `game`/`sim`/`gains`, switching generation
/// needs `sim`/`switching`, equilibrium solving needs `game`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub game: Option<GameSection>,
    pub sim: Option<SimSection>,
    pub graph: Option<GraphSection>,
    pub gains: Option<GainsSection>,
    pub disturbance: Option<DisturbanceSection>,
    pub uncertainty: Option<UncertaintySection>,
    pub initial: Option<InitialSection>,
    pub switching: Option<SwitchingSection>,
    pub trigger: Option<TriggerSection>,
    pub output: Option<OutputSection>,
    pub monte_carlo: Option<MonteCarloSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid_config(format!("config parse: {e}")))
    }

    pub fn game(&self) -> Result<GameDefinition> {
        self.game
            .as_ref()
            .ok_or_else(|| Error::invalid_config("missing [game] section"))?
            .build()
    }

    /// Build and validate a full simulation config.
    pub fn build_sim(&self) -> Result<SimConfig> {
        let game = self.game()?;
        let np = game.players();
        let n = game.action_dim();
        let sim = self
            .sim
            .as_ref()
            .ok_or_else(|| Error::invalid_config("missing [sim] section"))?;
        let gains_sec = self
            .gains
            .as_ref()
            .ok_or_else(|| Error::invalid_config("missing [gains] section"))?;

        let (switching, k4_modes) = match &self.switching {
            Some(sw) => {
                let (spec, graphs, k4) = sw.build()?;
                (Some(SwitchingSetup { spec, graphs }), Some(k4))
            }
            None => (None, None),
        };

        let k4 = match sim.algorithm {
            AlgorithmVariant::Alg1 => {
                let k4 = gains_sec
                    .k4
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("continuous variant needs gains.k4"))?;
                EstimationGain::PerPlayer(k4.expand(np, "k4")?)
            }
            AlgorithmVariant::Alg2 => {
                if gains_sec.k4.is_some() {
                    return Err(Error::invalid_config(
                        "sampled variant takes per-mode k4 in [[switching.modes]], not gains.k4",
                    ));
                }
                EstimationGain::PerMode(k4_modes.clone().unwrap_or_default())
            }
        };
        let gains = GainSet {
            k1: gains_sec.k1,
            k2: gains_sec.k2.expand(np, "k2")?,
            k3: gains_sec.k3.expand(np, "k3")?,
            k4,
            alpha: gains_sec.alpha.unwrap_or(0.0),
            epsilon: gains_sec.epsilon,
            g_tilde: gains_sec.g_tilde.unwrap_or(0.0),
        };

        let disturbance = match &self.disturbance {
            Some(d) => {
                if d.players.len() != np {
                    return Err(Error::invalid_config("disturbance needs one block per player"));
                }
                for (i, p) in d.players.iter().enumerate() {
                    if p.components.len() != n {
                        return Err(Error::invalid_config(format!(
                            "disturbance for player {} needs {n} components",
                            i + 1
                        )));
                    }
                }
                DisturbanceSpec::new(d.players.iter().map(|p| p.components.clone()).collect())
            }
            None => DisturbanceSpec::zero(np, n),
        };

        let uncertainty = match &self.uncertainty {
            Some(u) => {
                let mut maps = Vec::with_capacity(u.maps.len());
                for m in &u.maps {
                    maps.push(Mat::from_rows(m)?);
                }
                Some(UncertaintySpec::new(maps, np, n)?)
            }
            None => None,
        };

        let initial_sec = self.initial.clone().unwrap_or_default();
        let initial = InitialState {
            positions: initial_sec
                .positions
                .map(|p| p.build("positions"))
                .transpose()?
                .unwrap_or(InitialVector::Origin),
            velocities: initial_sec
                .velocities
                .map(|p| p.build("velocities"))
                .transpose()?
                .unwrap_or(InitialVector::Origin),
            estimates: initial_sec
                .estimates
                .map(|e| e.build())
                .transpose()?
                .unwrap_or(InitialEstimates::Own),
        };

        let trigger = match &self.trigger {
            Some(t) => Some(TriggerConfig {
                h: t.h,
                zeta: t.zeta.expand(np, "zeta")?,
                phi: t.phi.build(np, "Phi")?,
            }),
            None => None,
        };

        let config = SimConfig {
            game,
            variant: sim.algorithm,
            graph: self.graph.as_ref().map(|g| g.build()).transpose()?,
            gains,
            disturbance,
            uncertainty,
            switching,
            trigger,
            dt: sim.dt,
            horizon: sim.horizon,
            seed: sim.seed,
            output_stride: sim.output_stride.unwrap_or(100),
            initial,
            smoothing: sim.smoothing.unwrap_or(Smoothing::Exact),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn output(&self) -> OutputSection {
        self.output.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiModeSection {
    pub nodes: usize,
    pub edges: Vec<Vec<f64>>,
    pub k4: f64,
    pub p: MatSpec,
    pub rate_row: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiSection {
    pub action_dim: usize,
    pub h: f64,
    pub epsilon: f64,
    pub zeta: ScalarOrVec,
    pub q: MatSpec,
    pub u: MatSpec,
    pub r: MatSpec,
    pub s: Option<MatSpec>,
    pub phi: MatSpec,
    pub modes: Vec<LmiModeSection>,
    pub search: Option<ScalingGrid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiConfigFile {
    pub lmi: LmiSection,
}

impl LmiConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid_config(format!("config parse: {e}")))
    }

    pub fn build(&self) -> Result<(Theorem4Instance, Option<ScalingGrid>)> {
        let sec = &self.lmi;
        if sec.modes.is_empty() {
            return Err(Error::invalid_config("[lmi] needs at least one mode"));
        }
        let s = sec.modes.len();
        let np = sec.modes[0].nodes;
        let d = np * np * sec.action_dim;
        let mut modes = Vec::with_capacity(s);
        for (m, mode) in sec.modes.iter().enumerate() {
            if mode.rate_row.len() != s || mode.rate_row.iter().any(|r| r.len() != 2) {
                return Err(Error::invalid_config(format!(
                    "mode {}: rate_row needs {s} [lo, hi] pairs",
                    m + 1
                )));
            }
            modes.push(ModeInstance {
                graph: Graph::from_edges(mode.nodes, &parse_edges(&mode.edges)?)?,
                k4: mode.k4,
                p: mode.p.build(np, &format!("P({})", m + 1))?,
                rate_row: mode.rate_row.iter().map(|r| (r[0], r[1])).collect(),
            });
        }
        let inst = Theorem4Instance {
            action_dim: sec.action_dim,
            modes,
            q: sec.q.build(np, "Q")?,
            u: sec.u.build(np, "U")?,
            r: sec.r.build(np, "R")?,
            s: sec
                .s
                .clone()
                .unwrap_or(MatSpec::Named("zero".into()))
                .build(d, "S")?,
            phi: sec.phi.build(np, "Phi")?,
            zeta: sec.zeta.expand(np, "zeta")?,
            h: sec.h,
            epsilon: sec.epsilon,
        };
        inst.validate()?;
        Ok((inst, sec.search.clone()))
    }
}
