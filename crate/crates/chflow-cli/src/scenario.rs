//! Scenario files: the JSON network description consumed by every
//! subcommand. Bare names resolve to the bundled scenarios.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use chflow_core::network::{BprParams, Link, Network, OdSpec};

pub const BUNDLED: &[(&str, &str)] = &[
    ("braess", include_str!("../../../scenarios/braess.json")),
    ("zhang", include_str!("../../../scenarios/zhang.json")),
];

#[derive(Debug, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    /// True only when link parameters were transcribed from the published
    /// figures; bundled scenarios ship with synthetic placeholders.
    #[serde(default)]
    pub figure_calibrated: bool,
    #[serde(default)]
    pub bpr: Option<BprSpec>,
    pub links: Vec<LinkSpec>,
    pub od_pairs: Vec<OdPairSpec>,
}

#[derive(Debug, Deserialize)]
pub struct BprSpec {
    pub coefficient: f64,
    pub exponent: f64,
}

#[derive(Debug, Deserialize)]
pub struct LinkSpec {
    pub id: u32,
    pub t0: f64,
    pub capacity: f64,
}

#[derive(Debug, Deserialize)]
pub struct OdPairSpec {
    pub id: u32,
    pub demand: f64,
    pub routes: Vec<Vec<u32>>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("malformed scenario file")
    }

    pub fn build(&self) -> Result<Network> {
        let bpr = self
            .bpr
            .as_ref()
            .map(|b| BprParams { coefficient: b.coefficient, exponent: b.exponent })
            .unwrap_or_default();
        let links = self
            .links
            .iter()
            .map(|l| Link { id: l.id, free_flow_time: l.t0, capacity: l.capacity })
            .collect();
        let ods = self
            .od_pairs
            .iter()
            .map(|od| OdSpec { id: od.id, demand: od.demand, routes: od.routes.clone() })
            .collect();
        Network::new(links, ods, bpr).map_err(Into::into)
    }
}

/// Load a scenario from a path, falling back to a bundled scenario when the
/// argument is a bare known name.
pub fn load(spec: &str) -> Result<ScenarioFile> {
    if let Ok(text) = std::fs::read_to_string(spec) {
        return ScenarioFile::parse(&text);
    }
    for (name, text) in BUNDLED {
        if spec == *name {
            return ScenarioFile::parse(text);
        }
    }
    bail!("scenario '{spec}' is neither a readable file nor a bundled name (bundled: braess, zhang)")
}
