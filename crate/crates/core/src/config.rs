//! Scenario files.
//!
//! A scenario is a TOML document. Unknown keys are rejected and every error
//! names the offending key path. Matrices are written either as a scalar `s`
//! (meaning `s·I₂`) or as two rows, `[[a, b], [c, d]]`.
//!
//! ```toml
//! name = "two-robot"
//! seed = 1
//! trials = 100
//!
//! [model]
//! dt = 0.033
//! [model.shared]
//! W = 1e-5
//! V = 1e-4
//! [[model.agent]]
//! x0_mean = [0.1, 0.0]
//! [[model.agent]]
//! x0_mean = [-0.1, 0.0]
//!
//! [trigger]
//! kind = "send-on-delta"
//! beta = 1e-4
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::controller::CostWeights;
use crate::error::{Error, Result};
use crate::model::{AgentModel, Graph};
use crate::scheduler::{ThresholdChange, TriggerKind, TriggerPolicy};

pub const DEFAULT_DT: f64 = 0.033;
pub const DEFAULT_W: f64 = 1e-5;
pub const DEFAULT_V: f64 = 1e-4;
pub const DEFAULT_HORIZON: usize = 300;
pub const DEFAULT_TOLERANCE: f64 = 0.01;
pub const DEFAULT_WHEEL_BASE: f64 = 0.105;
pub const DEFAULT_WHEEL_RADIUS: f64 = 0.016;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows([[f64; 2]; 2]),
}

impl MatrixSpec {
    pub fn to_matrix(self) -> Matrix2<f64> {
        match self {
            MatrixSpec::Scalar(s) => Matrix2::identity() * s,
            MatrixSpec::Rows(r) => Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]),
        }
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        if m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 && m[(0, 0)] == m[(1, 1)] {
            MatrixSpec::Scalar(m[(0, 0)])
        } else {
            MatrixSpec::Rows([[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]])
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    FixedHorizon,
    /// Stop once every pairwise estimated distance is below `tolerance`.
    ToleranceStop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerAxes {
    /// One policy on the planar estimate.
    #[default]
    Joint,
    /// One scalar policy per axis.
    PerAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerName {
    TimeTriggered,
    SendOnDelta,
    /// Tabuada-type relative threshold.
    #[serde(alias = "tabuada")]
    Relative,
    Mixed,
    Integral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Complete,
    Path,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub model: ModelSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub unicycle: UnicycleSection,
    #[serde(default)]
    pub trigger: TriggerSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<TriggerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub shared: MatrixOverrides,
    #[serde(default)]
    pub agent: Vec<AgentSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixOverrides {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSpec>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixSpec>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<MatrixSpec>,
    #[serde(rename = "X0", default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub x0_mean: [f64; 2],
    /// Initial unicycle heading (rad).
    #[serde(default)]
    pub heading: f64,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSpec>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixSpec>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<MatrixSpec>,
    #[serde(rename = "X0", default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnicycleSection {
    #[serde(default = "default_wheel_base")]
    pub wheel_base: f64,
    #[serde(default = "default_wheel_radius")]
    pub wheel_radius: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
}

impl Default for UnicycleSection {
    fn default() -> Self {
        UnicycleSection {
            wheel_base: DEFAULT_WHEEL_BASE,
            wheel_radius: DEFAULT_WHEEL_RADIUS,
            omega_max: std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    #[serde(default = "default_trigger_name")]
    pub kind: TriggerName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<TriggerAxes>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
}

impl Default for TriggerSection {
    fn default() -> Self {
        TriggerSection {
            kind: default_trigger_name(),
            alpha: None,
            beta: None,
            gamma: None,
            period: None,
            axes: None,
            schedule: Vec::new(),
        }
    }
}

/// Thresholds from `from_step` on; missing values keep the base ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub from_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(rename = "Q", default = "default_q")]
    pub q: MatrixSpec,
    #[serde(rename = "QM", default = "default_q")]
    pub qm: MatrixSpec,
    #[serde(rename = "R", default = "default_r")]
    pub r: MatrixSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Rendezvous point; the centroid of the initial means when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<[f64; 2]>,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            q: default_q(),
            qm: default_q(),
            r: default_r(),
            horizon: DEFAULT_HORIZON,
            reference: None,
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}
fn default_trials() -> usize {
    1
}
fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_wheel_base() -> f64 {
    DEFAULT_WHEEL_BASE
}
fn default_wheel_radius() -> f64 {
    DEFAULT_WHEEL_RADIUS
}
fn default_omega_max() -> f64 {
    std::f64::consts::PI
}
fn default_trigger_name() -> TriggerName {
    TriggerName::TimeTriggered
}
fn default_q() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}
fn default_r() -> MatrixSpec {
    MatrixSpec::Scalar(0.1)
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleParams {
    pub wheel_base: f64,
    pub wheel_radius: f64,
    pub omega_max: f64,
}

/// A trigger rule with its schedule and axis mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    pub schedule: Vec<ThresholdChange>,
    pub axes: TriggerAxes,
}

impl TriggerSpec {
    pub fn joint(kind: TriggerKind) -> Self {
        TriggerSpec {
            kind,
            schedule: Vec::new(),
            axes: TriggerAxes::Joint,
        }
    }

    pub fn per_axis(kind: TriggerKind) -> Self {
        TriggerSpec {
            axes: TriggerAxes::PerAxis,
            ..Self::joint(kind)
        }
    }

    /// Fresh policies for one agent: one for the joint mode, two per axis.
    pub fn policies(&self) -> Result<Vec<TriggerPolicy>> {
        let n = match self.axes {
            TriggerAxes::Joint => 1,
            TriggerAxes::PerAxis => 2,
        };
        (0..n)
            .map(|_| TriggerPolicy::with_schedule(self.kind, self.schedule.clone()))
            .collect()
    }

    pub fn label(&self) -> String {
        match self.axes {
            TriggerAxes::Joint => self.kind.to_string(),
            TriggerAxes::PerAxis => format!("{} per-axis", self.kind),
        }
    }

    fn to_section(&self) -> TriggerSection {
        let mut s = section_from_kind(&self.kind);
        s.axes = Some(self.axes);
        s.schedule = self
            .schedule
            .iter()
            .map(|c| {
                let t = section_from_kind(&c.kind);
                ScheduleEntry {
                    from_step: c.from_step,
                    alpha: t.alpha,
                    beta: t.beta,
                    gamma: t.gamma,
                    period: t.period,
                }
            })
            .collect();
        s
    }
}

fn section_from_kind(kind: &TriggerKind) -> TriggerSection {
    let mut s = TriggerSection::default();
    match *kind {
        TriggerKind::TimeTriggered { period } => {
            s.kind = TriggerName::TimeTriggered;
            s.period = Some(period);
        }
        TriggerKind::SendOnDelta { beta } => {
            s.kind = TriggerName::SendOnDelta;
            s.beta = Some(beta);
        }
        TriggerKind::Relative { alpha } => {
            s.kind = TriggerName::Relative;
            s.alpha = Some(alpha);
        }
        TriggerKind::Mixed { alpha, beta } => {
            s.kind = TriggerName::Mixed;
            s.alpha = Some(alpha);
            s.beta = Some(beta);
        }
        TriggerKind::Integral { gamma } => {
            s.kind = TriggerName::Integral;
            s.gamma = Some(gamma);
        }
    }
    s
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    pub mode: Mode,
    pub tolerance: f64,
    pub out_dir: Option<PathBuf>,
    pub dt: f64,
    pub models: Vec<AgentModel>,
    pub headings: Vec<f64>,
    pub graph: Graph,
    pub unicycle: UnicycleParams,
    pub trigger: TriggerSpec,
    pub compare: Vec<TriggerSpec>,
    pub weights: CostWeights,
    pub reference: Vector2<f64>,
}

impl Scenario {
    pub fn agents(&self) -> usize {
        self.models.len()
    }

    pub fn horizon(&self) -> usize {
        self.weights.horizon
    }

    pub fn with_trigger(&self, trigger: TriggerSpec) -> Self {
        Scenario {
            trigger,
            ..self.clone()
        }
    }

    /// [`Scenario::to_file`] as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario files always serialize")
    }

    /// The scenario written back out with every default made explicit.
    /// Scenario files carry one set of weights for all agents.
    pub fn to_file(&self) -> ScenarioFile {
        let agent = self
            .models
            .iter()
            .zip(&self.headings)
            .map(|(m, &heading)| AgentSection {
                x0_mean: [m.x0_mean[0], m.x0_mean[1]],
                heading,
                a: Some(MatrixSpec::from_matrix(&m.a)),
                b: Some(MatrixSpec::from_matrix(&m.b)),
                c: Some(MatrixSpec::from_matrix(&m.c)),
                w: Some(MatrixSpec::from_matrix(&m.w)),
                v: Some(MatrixSpec::from_matrix(&m.v)),
                x0: Some(MatrixSpec::from_matrix(&m.x0_cov)),
            })
            .collect();
        ScenarioFile {
            name: self.name.clone(),
            seed: self.seed,
            trials: self.trials,
            mode: self.mode,
            tolerance: self.tolerance,
            out_dir: self.out_dir.as_ref().map(|p| p.display().to_string()),
            model: ModelSection {
                agents: Some(self.agents()),
                dt: self.dt,
                shared: MatrixOverrides::default(),
                agent,
            },
            graph: GraphSection {
                topology: None,
                adjacency: Some(self.graph.adjacency().to_vec()),
            },
            unicycle: UnicycleSection {
                wheel_base: self.unicycle.wheel_base,
                wheel_radius: self.unicycle.wheel_radius,
                omega_max: self.unicycle.omega_max,
            },
            trigger: self.trigger.to_section(),
            weights: WeightsSection {
                q: MatrixSpec::from_matrix(&self.weights.q[0]),
                qm: MatrixSpec::from_matrix(&self.weights.qm[0]),
                r: MatrixSpec::from_matrix(&self.weights.r[0]),
                horizon: self.weights.horizon,
                reference: Some([self.reference[0], self.reference[1]]),
            },
            compare: self.compare.iter().map(TriggerSpec::to_section).collect(),
        }
    }
}

/// Parse a trigger written as `kind[:key=value,...]`, e.g.
/// `mixed:alpha=0.1,beta=1e-4` or `time-triggered`. The kind names and keys
/// are those of the `[trigger]` table.
pub fn parse_trigger_spec(text: &str, axes: TriggerAxes) -> Result<TriggerSpec> {
    let path = format!("--trigger {text}");
    let (name, params) = text.split_once(':').unwrap_or((text, ""));
    let kind: TriggerName =
        serde::de::Deserialize::deserialize(serde::de::value::StrDeserializer::<
            serde::de::value::Error,
        >::new(name.trim()))
        .map_err(|e| Error::config(&path, e.to_string()))?;
    let mut section = TriggerSection {
        kind,
        ..TriggerSection::default()
    };
    for pair in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(&path, format!("expected key=value, got `{pair}`")))?;
        let number = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(&path, format!("`{key}` is not a number: `{v}`")))
        };
        match key.trim() {
            "alpha" => section.alpha = Some(number(value)?),
            "beta" => section.beta = Some(number(value)?),
            "gamma" => section.gamma = Some(number(value)?),
            "period" => {
                section.period = Some(value.trim().parse().map_err(|_| {
                    Error::config(
                        &path,
                        format!("period must be a positive integer, got `{value}`"),
                    )
                })?)
            }
            other => {
                return Err(Error::config(
                    &path,
                    format!("unknown trigger parameter `{other}`"),
                ))
            }
        }
    }
    resolve_trigger(&section, "trigger", axes)
}

/// Parse scenario text; errors carry the key path.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| Error::config("<document>", e.to_string().trim_end()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." {
                "<document>".into()
            } else {
                path
            },
            e.into_inner().message().to_string(),
        )
    })
}

/// Read, parse and resolve a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    parse_scenario(&text)?.resolve()
}

fn resolve_trigger(s: &TriggerSection, path: &str, inherited: TriggerAxes) -> Result<TriggerSpec> {
    let need_f = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| {
            Error::config(
                format!("{path}.{key}"),
                format!("required for {:?} triggers", s.kind),
            )
        })
    };
    let kind = match s.kind {
        TriggerName::TimeTriggered => TriggerKind::TimeTriggered {
            period: s.period.unwrap_or(1),
        },
        TriggerName::SendOnDelta => TriggerKind::SendOnDelta {
            beta: need_f(s.beta, "beta")?,
        },
        TriggerName::Relative => TriggerKind::Relative {
            alpha: need_f(s.alpha, "alpha")?,
        },
        TriggerName::Mixed => TriggerKind::Mixed {
            alpha: need_f(s.alpha, "alpha")?,
            beta: need_f(s.beta, "beta")?,
        },
        TriggerName::Integral => TriggerKind::Integral {
            gamma: need_f(s.gamma, "gamma")?,
        },
    };
    let unused = match s.kind {
        TriggerName::TimeTriggered => [
            ("alpha", s.alpha.is_some()),
            ("beta", s.beta.is_some()),
            ("gamma", s.gamma.is_some()),
        ],
        TriggerName::SendOnDelta => [
            ("alpha", s.alpha.is_some()),
            ("gamma", s.gamma.is_some()),
            ("period", s.period.is_some()),
        ],
        TriggerName::Relative => [
            ("beta", s.beta.is_some()),
            ("gamma", s.gamma.is_some()),
            ("period", s.period.is_some()),
        ],
        TriggerName::Mixed => [
            ("gamma", s.gamma.is_some()),
            ("period", s.period.is_some()),
            ("", false),
        ],
        TriggerName::Integral => [
            ("alpha", s.alpha.is_some()),
            ("beta", s.beta.is_some()),
            ("period", s.period.is_some()),
        ],
    };
    for (key, present) in unused {
        if present {
            return Err(Error::config(
                format!("{path}.{key}"),
                format!("not a parameter of {:?} triggers", s.kind),
            ));
        }
    }
    kind.validate().map_err(|e| match e {
        Error::Config { path: p, message } => {
            Error::config(p.replacen("trigger", path, 1), message)
        }
        other => other,
    })?;
    let mut schedule = Vec::with_capacity(s.schedule.len());
    for (i, c) in s.schedule.iter().enumerate() {
        let p = format!("{path}.schedule[{i}]");
        let changed = match kind {
            TriggerKind::TimeTriggered { period } => TriggerKind::TimeTriggered {
                period: c.period.unwrap_or(period),
            },
            TriggerKind::SendOnDelta { beta } => TriggerKind::SendOnDelta {
                beta: c.beta.unwrap_or(beta),
            },
            TriggerKind::Relative { alpha } => TriggerKind::Relative {
                alpha: c.alpha.unwrap_or(alpha),
            },
            TriggerKind::Mixed { alpha, beta } => TriggerKind::Mixed {
                alpha: c.alpha.unwrap_or(alpha),
                beta: c.beta.unwrap_or(beta),
            },
            TriggerKind::Integral { gamma } => TriggerKind::Integral {
                gamma: c.gamma.unwrap_or(gamma),
            },
        };
        changed.validate().map_err(|e| match e {
            Error::Config { path: q, message } => {
                Error::config(q.replacen("trigger", &p, 1), message)
            }
            other => other,
        })?;
        schedule.push(ThresholdChange {
            from_step: c.from_step,
            kind: changed,
        });
    }
    Ok(TriggerSpec {
        kind,
        schedule,
        axes: s.axes.unwrap_or(inherited),
    })
}

fn positive(v: f64, path: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn pick(
    agent: Option<MatrixSpec>,
    shared: Option<MatrixSpec>,
    default: Matrix2<f64>,
) -> Matrix2<f64> {
    agent.or(shared).map_or(default, MatrixSpec::to_matrix)
}

impl ScenarioFile {
    pub fn resolve(&self) -> Result<Scenario> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be ≥ 1"));
        }
        positive(self.tolerance, "tolerance")?;
        positive(self.model.dt, "model.dt")?;
        let n = self.model.agent.len();
        if n == 0 {
            return Err(Error::config(
                "model.agent",
                "at least one agent is required",
            ));
        }
        if let Some(count) = self.model.agents {
            if count != n {
                return Err(Error::config(
                    "model.agents",
                    format!("{count} agents declared but {n} [[model.agent]] entries given"),
                ));
            }
        }
        let dt = self.model.dt;
        let sh = &self.model.shared;
        let mut models = Vec::with_capacity(n);
        let mut headings = Vec::with_capacity(n);
        for (i, a) in self.model.agent.iter().enumerate() {
            let o = a;
            let m = AgentModel {
                a: pick(o.a, sh.a, Matrix2::identity()),
                b: pick(o.b, sh.b, Matrix2::identity() * dt),
                c: pick(o.c, sh.c, Matrix2::identity()),
                w: pick(o.w, sh.w, Matrix2::identity() * DEFAULT_W),
                v: pick(o.v, sh.v, Matrix2::identity() * DEFAULT_V),
                x0_mean: Vector2::new(a.x0_mean[0], a.x0_mean[1]),
                x0_cov: pick(o.x0, sh.x0, Matrix2::zeros()),
            };
            m.validate(&format!("model.agent[{i}]"))?;
            if !a.heading.is_finite() {
                return Err(Error::config(
                    format!("model.agent[{i}].heading"),
                    "must be finite",
                ));
            }
            models.push(m);
            headings.push(crate::model::wrap_angle(a.heading));
        }

        let graph = match (&self.graph.topology, &self.graph.adjacency) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "graph",
                    "give either topology or adjacency, not both",
                ))
            }
            (_, Some(adj)) => Graph::from_adjacency(adj.clone())?,
            (Some(Topology::Path), None) => Graph::path(n),
            (Some(Topology::Ring), None) => Graph::ring(n),
            (Some(Topology::Complete), None) | (None, None) => Graph::complete(n),
        };
        if graph.len() != n {
            return Err(Error::config(
                "graph.adjacency",
                format!("{}×{} matrix for {n} agents", graph.len(), graph.len()),
            ));
        }
        if !graph.is_connected() {
            return Err(Error::config("graph", "graph is not connected"));
        }

        let u = &self.unicycle;
        positive(u.wheel_base, "unicycle.wheel_base")?;
        positive(u.wheel_radius, "unicycle.wheel_radius")?;
        positive(u.omega_max, "unicycle.omega_max")?;

        let trigger = resolve_trigger(&self.trigger, "trigger", TriggerAxes::Joint)?;
        let compare = self
            .compare
            .iter()
            .enumerate()
            .map(|(i, c)| resolve_trigger(c, &format!("compare[{i}]"), trigger.axes))
            .collect::<Result<Vec<_>>>()?;

        let w = &self.weights;
        let weights = CostWeights::uniform(
            n,
            w.q.to_matrix(),
            w.qm.to_matrix(),
            w.r.to_matrix(),
            w.horizon,
        );
        weights.validate()?;
        let reference = match w.reference {
            Some(r) => Vector2::new(r[0], r[1]),
            None => models.iter().map(|m| m.x0_mean).sum::<Vector2<f64>>() / n as f64,
        };
        if reference.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("weights.reference", "must be finite"));
        }

        Ok(Scenario {
            name: self.name.clone(),
            seed: self.seed,
            trials: self.trials,
            mode: self.mode,
            tolerance: self.tolerance,
            out_dir: self.out_dir.as_ref().map(PathBuf::from),
            dt,
            models,
            headings,
            graph,
            unicycle: UnicycleParams {
                wheel_base: u.wheel_base,
                wheel_radius: u.wheel_radius,
                omega_max: u.omega_max,
            },
            trigger,
            compare,
            weights,
            reference,
        })
    }
}
