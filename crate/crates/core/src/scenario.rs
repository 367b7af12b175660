//! Scenario files (TOML).
//!
//! ```toml
//! seed = 1
//! slots = 5000
//! diameter = 1.0
//! arrival_rate = 0.04    # per path and slot, overridable per path
//! delta = 0.0            # request anticipation margin
//! substeps = 4           # collision-check samples per slot
//! drain = false          # keep stepping without arrivals until all robots exit
//! halt_on_breach = true
//!
//! [limits]
//! v_max = 0.5
//! u_max = 0.025
//! u_min = -0.025
//!
//! [policy]
//! kind = "heuristic"     # or "exact"
//! locking = false
//! lock_a = 1.0
//! lock_b = 2.0
//! lock_threshold = 2500.0
//! backpressure = false
//! period = 100
//! queue_limit = 30.0
//!
//! [regime]
//! p = 0.0                # normal -> brake, per slot
//! q = 0.0                # brake -> normal, per slot
//!
//! [noise]                # optional; bounds are drawn per robot at spawn
//! control = 0.2          # disturbance bound, fraction of the control bounds
//! velocity_obs = 0.2     # velocity observation error bound, fraction of v_max
//! position_obs = 1.0     # position observation error bound, in diameters
//! window = { start = 500, end = 1000, factor = 10.0 }
//!
//! [[paths]]
//! origin = [-19.25, -0.75]
//! heading_deg = 0.0
//! phase = 1              # back-pressure group: 0, 1 or 2
//! rate = 0.04            # optional
//! ```

use serde::{Deserialize, Serialize};

use crate::coordspace::PathGeometry;
use crate::dynamics::RobotLimits;
use crate::error::{Error, Result};
use crate::intersection::{Layout, PolicyConfig, PolicyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub slots: u64,
    pub diameter: f64,
    #[serde(default)]
    pub arrival_rate: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub drain: bool,
    #[serde(default = "default_true")]
    pub halt_on_breach: bool,
    pub limits: LimitsSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub regime: RegimeSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    pub paths: Vec<PathSpec>,
}

fn default_substeps() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub v_max: f64,
    pub u_max: f64,
    pub u_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Exact,
    Heuristic,
}

impl std::str::FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PolicyName::Exact),
            "heuristic" => Ok(PolicyName::Heuristic),
            _ => Err(Error::config("policy.kind", format!("unknown policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySpec {
    pub kind: PolicyName,
    pub locking: bool,
    pub lock_a: f64,
    pub lock_b: f64,
    pub lock_threshold: f64,
    pub backpressure: bool,
    pub period: u64,
    pub queue_limit: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        let d = PolicyConfig::default();
        PolicySpec {
            kind: PolicyName::Heuristic,
            locking: d.locking,
            lock_a: d.lock_a,
            lock_b: d.lock_b,
            lock_threshold: d.lock_threshold,
            backpressure: d.backpressure,
            period: d.period,
            queue_limit: d.queue_limit,
        }
    }
}

impl PolicySpec {
    pub fn config(&self) -> PolicyConfig {
        PolicyConfig {
            kind: match self.kind {
                PolicyName::Exact => PolicyKind::Exact,
                PolicyName::Heuristic => PolicyKind::Heuristic,
            },
            locking: self.locking,
            lock_a: self.lock_a,
            lock_b: self.lock_b,
            lock_threshold: self.lock_threshold,
            backpressure: self.backpressure,
            period: self.period,
            queue_limit: self.queue_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeSpec {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub control: f64,
    pub velocity_obs: f64,
    pub position_obs: f64,
    pub window: Option<NoiseWindow>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { control: 0.2, velocity_obs: 0.2, position_obs: 1.0, window: None }
    }
}

/// Position observation bounds are multiplied by `factor` for slots in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseWindow {
    pub start: u64,
    pub end: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub origin: [f64; 2],
    pub heading_deg: f64,
    #[serde(default)]
    pub phase: u8,
    #[serde(default)]
    pub rate: Option<f64>,
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is outside [0, 1]")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must be positive and finite")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must be non-negative and finite")))
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("scenario").to_string();
            Error::config(field, e.to_string().trim_end().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        positive("diameter", self.diameter)?;
        unit("arrival_rate", self.arrival_rate)?;
        non_negative("delta", self.delta)?;
        if self.substeps == 0 {
            return Err(Error::config("substeps", "must be at least 1"));
        }
        self.limits().map_err(|e| Error::config("limits", e.to_string()))?;
        unit("regime.p", self.regime.p)?;
        unit("regime.q", self.regime.q)?;
        let pol = &self.policy;
        if pol.period == 0 {
            return Err(Error::config("policy.period", "must be at least 1"));
        }
        non_negative("policy.queue_limit", pol.queue_limit)?;
        non_negative("policy.lock_a", pol.lock_a)?;
        non_negative("policy.lock_b", pol.lock_b)?;
        non_negative("policy.lock_threshold", pol.lock_threshold)?;
        if let Some(n) = &self.noise {
            non_negative("noise.control", n.control)?;
            if n.control >= 1.0 {
                return Err(Error::config("noise.control", "must be below 1"));
            }
            non_negative("noise.velocity_obs", n.velocity_obs)?;
            non_negative("noise.position_obs", n.position_obs)?;
            if let Some(w) = n.window {
                if w.start > w.end {
                    return Err(Error::config("noise.window.end", "precedes start"));
                }
                positive("noise.window.factor", w.factor)?;
            }
        }
        if self.paths.is_empty() {
            return Err(Error::config("paths", "at least one path is required"));
        }
        for (k, p) in self.paths.iter().enumerate() {
            if let Some(r) = p.rate {
                unit(&format!("paths[{k}].rate"), r)?;
            }
            if p.phase > 2 {
                return Err(Error::config(format!("paths[{k}].phase"), "must be 0, 1 or 2"));
            }
        }
        self.layout()?;
        Ok(())
    }

    pub fn limits(&self) -> Result<RobotLimits> {
        RobotLimits::new(self.limits.v_max, self.limits.u_max, self.limits.u_min)
    }

    pub fn rates(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.rate.unwrap_or(self.arrival_rate)).collect()
    }

    pub fn layout(&self) -> Result<Layout> {
        let paths: Vec<PathGeometry> = self
            .paths
            .iter()
            .enumerate()
            .map(|(k, p)| {
                PathGeometry::new(k, p.origin, p.heading_deg.to_radians(), 0.0, 1.0)
                    .map_err(|e| Error::config(format!("paths[{k}]"), e.to_string()))
            })
            .collect::<Result<_>>()?;
        Layout::new(&paths, self.diameter, self.paths.iter().map(|p| p.phase).collect())
            .map_err(|e| Error::config("paths", e.to_string()))
    }
}
