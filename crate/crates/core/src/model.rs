//! Validated system data model.
//!
//! The on-disk configuration (TOML) deserialises into [`SystemConfig`];
//! [`validate_system`] checks every structural invariant and returns an
//! immutable [`SystemModel`]. Units: MW, MWh, $ and a half-hour step.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy per MW of dispatch in one half-hour step.
pub const STEP_HOURS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "is_false")]
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    /// MW per radian.
    pub susceptance: f64,
    /// MW.
    pub flow_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    ThermalGen,
    VreGen,
    Hydro,
    Storage,
    RderSolar,
    RderStorage,
}

impl ResourceKind {
    pub fn is_storage_like(self) -> bool {
        matches!(self, ResourceKind::Storage | ResourceKind::Hydro | ResourceKind::RderStorage)
    }

    pub fn is_rder(self) -> bool {
        matches!(self, ResourceKind::RderSolar | ResourceKind::RderStorage)
    }

    /// Kinds whose availability must come from a trace.
    pub fn needs_availability_trace(self) -> bool {
        matches!(self, ResourceKind::VreGen | ResourceKind::RderSolar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::ThermalGen => "thermal-gen",
            ResourceKind::VreGen => "vre-gen",
            ResourceKind::Hydro => "hydro",
            ResourceKind::Storage => "storage",
            ResourceKind::RderSolar => "rder-solar",
            ResourceKind::RderStorage => "rder-storage",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resource {
    pub id: String,
    pub node: String,
    pub kind: ResourceKind,
    /// MW.
    pub capacity: f64,
    /// $/MWh; a `variable_cost` trace overrides it per step.
    #[serde(default)]
    pub variable_cost: f64,
    /// $/MWh of reserve.
    #[serde(default)]
    pub reserve_cost: f64,
    /// $/MW-year, annualised.
    #[serde(default)]
    pub invest_cost: f64,
    #[serde(default = "one")]
    pub charge_efficiency: f64,
    #[serde(default = "one")]
    pub discharge_efficiency: f64,
    /// Hours of energy at full power (storage and hydro).
    #[serde(default)]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elcc_derate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_position: Option<u32>,
    #[serde(default)]
    pub built: bool,
    #[serde(default)]
    pub retirable: bool,
}

impl Resource {
    pub fn energy_capacity(&self) -> f64 {
        self.capacity * self.duration
    }

    pub fn is_candidate(&self) -> bool {
        self.queue_position.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consumer {
    pub id: String,
    pub node: String,
    /// $/MWh.
    pub voll: f64,
    /// $/MWh paid by the insurer for interrupted energy.
    #[serde(default)]
    pub compensation_rate: f64,
    /// $/year.
    #[serde(default)]
    pub premium: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Fraction of nodal demand; defaults to an equal split among the
    /// node's consumers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<f64>,
}

/// Risk preference of a convex mean/CVaR utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskParams {
    /// Weight on CVaR, the mean gets `1 - beta`.
    pub beta: f64,
    /// Tail probability mass (the `1/alpha` multiplier).
    pub alpha: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self { beta: 0.5, alpha: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Eom,
    Ordc,
    Cm,
}

impl DesignKind {
    pub const ALL: [DesignKind; 3] = [DesignKind::Eom, DesignKind::Ordc, DesignKind::Cm];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::Eom => "eom",
            DesignKind::Ordc => "ordc",
            DesignKind::Cm => "cm",
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eom" => Ok(DesignKind::Eom),
            "ordc" => Ok(DesignKind::Ordc),
            "cm" => Ok(DesignKind::Cm),
            other => Err(Error::validation("design", format!("unknown market design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReserveSegment {
    /// MW.
    pub quantity: f64,
    /// $/MWh.
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitySegment {
    /// Fraction of maximum system demand.
    pub fraction: f64,
    /// Penalty as a multiple of CONE.
    pub cone_multiple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EomParams {
    pub price_cap: f64,
}

impl Default for EomParams {
    fn default() -> Self {
        Self { price_cap: 15_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdcParams {
    pub price_cap: f64,
    pub segments: Vec<ReserveSegment>,
}

impl Default for OrdcParams {
    fn default() -> Self {
        Self {
            price_cap: 15_000.0,
            segments: vec![
                ReserveSegment { quantity: 2000.0, penalty: 15_000.0 },
                ReserveSegment { quantity: 1000.0, penalty: 10_000.0 },
                ReserveSegment { quantity: 1000.0, penalty: 5_000.0 },
            ],
        }
    }
}

/// How the listed fractions are matched with the listed CONE multiples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CmPairing {
    /// Largest quantity block gets the highest multiple, and so on.
    #[default]
    Descending,
    /// Pair element-wise in the order given.
    AsListed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmParams {
    pub price_cap: f64,
    /// $/MW-year.
    pub cone: f64,
    pub fractions: Vec<f64>,
    pub cone_multiples: Vec<f64>,
    #[serde(default)]
    pub pairing: CmPairing,
}

impl Default for CmParams {
    fn default() -> Self {
        Self {
            price_cap: 2_000.0,
            cone: 90_000.0,
            fractions: vec![0.95, 0.05, 0.05],
            cone_multiples: vec![0.5, 1.0, 1.5],
            pairing: CmPairing::Descending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// System-wide shedding cost; when absent each consumer's VOLL is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shed_cost: Option<f64>,
    #[serde(default)]
    pub eom: EomParams,
    #[serde(default)]
    pub ordc: OrdcParams,
    #[serde(default)]
    pub cm: CmParams,
}

/// One resolved wholesale market design.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketDesign {
    pub kind: DesignKind,
    pub price_cap: f64,
    pub shed_cost: Option<f64>,
    /// Ordered by non-increasing penalty.
    pub ordc_segments: Vec<ReserveSegment>,
    /// Ordered by non-increasing multiple.
    pub cm_segments: Vec<CapacitySegment>,
    pub cone: f64,
}

impl MarketDesign {
    pub fn reserve_requirement(&self) -> f64 {
        self.ordc_segments.iter().map(|s| s.quantity).sum()
    }

    pub fn has_reserves(&self) -> bool {
        !self.ordc_segments.is_empty()
    }

    /// Shedding cost applied to a consumer, capped at the price cap.
    pub fn shed_cost_for(&self, consumer: &Consumer) -> f64 {
        self.shed_cost.unwrap_or(consumer.voll).min(self.price_cap)
    }
}

impl MarketConfig {
    pub fn design(&self, kind: DesignKind) -> MarketDesign {
        match kind {
            DesignKind::Eom => MarketDesign {
                kind,
                price_cap: self.eom.price_cap,
                shed_cost: self.shed_cost,
                ordc_segments: Vec::new(),
                cm_segments: Vec::new(),
                cone: 0.0,
            },
            DesignKind::Ordc => {
                let mut segs = self.ordc.segments.clone();
                segs.sort_by(|a, b| b.penalty.total_cmp(&a.penalty));
                MarketDesign {
                    kind,
                    price_cap: self.ordc.price_cap,
                    shed_cost: self.shed_cost,
                    ordc_segments: segs,
                    cm_segments: Vec::new(),
                    cone: 0.0,
                }
            }
            DesignKind::Cm => MarketDesign {
                kind,
                price_cap: self.cm.price_cap,
                shed_cost: self.shed_cost,
                ordc_segments: Vec::new(),
                cm_segments: self.cm.segments(),
                cone: self.cm.cone,
            },
        }
    }
}

impl CmParams {
    pub fn segments(&self) -> Vec<CapacitySegment> {
        let mut fractions = self.fractions.clone();
        let mut multiples = self.cone_multiples.clone();
        if self.pairing == CmPairing::Descending {
            fractions.sort_by(|a, b| b.total_cmp(a));
            multiples.sort_by(|a, b| b.total_cmp(a));
        }
        let mut segs: Vec<_> = fractions
            .into_iter()
            .zip(multiples)
            .map(|(fraction, cone_multiple)| CapacitySegment { fraction, cone_multiple })
            .collect();
        // demand curve order: highest value block first
        segs.sort_by(|a, b| b.cone_multiple.total_cmp(&a.cone_multiple));
        segs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InsuranceMode {
    #[default]
    Direct,
    Subsidy,
}

/// An RDER technology the insurer (or a consumer) can size continuously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RderOption {
    pub id: String,
    pub node: String,
    pub kind: ResourceKind,
    /// $/MW-year.
    pub invest_cost: f64,
    #[serde(default)]
    pub duration: f64,
    #[serde(default = "one")]
    pub charge_efficiency: f64,
    #[serde(default = "one")]
    pub discharge_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsuranceConfig {
    #[serde(default = "default_insurer_beta")]
    pub beta: f64,
    #[serde(default = "default_insurer_alpha")]
    pub alpha: f64,
    /// Annual cost of reserved capital, fraction per year.
    #[serde(default = "default_capital_cost")]
    pub capital_cost: f64,
    /// Share of RDER cost borne by the insurer.
    #[serde(default = "one")]
    pub subsidy: f64,
    #[serde(default)]
    pub mode: InsuranceMode,
    #[serde(default)]
    pub catalog: Vec<RderOption>,
}

fn default_insurer_beta() -> f64 {
    0.1
}

fn default_insurer_alpha() -> f64 {
    0.99
}

fn default_capital_cost() -> f64 {
    0.1
}

impl Default for InsuranceConfig {
    fn default() -> Self {
        Self {
            beta: default_insurer_beta(),
            alpha: default_insurer_alpha(),
            capital_cost: default_capital_cost(),
            subsidy: 1.0,
            mode: InsuranceMode::Direct,
            catalog: Vec::new(),
        }
    }
}

impl InsuranceConfig {
    pub fn risk(&self) -> RiskParams {
        RiskParams {
            beta: self.beta,
            alpha: self.alpha,
        }
    }

    /// Insurer cost share actually applied.
    pub fn kappa(&self) -> f64 {
        match self.mode {
            InsuranceMode::Direct => 1.0,
            InsuranceMode::Subsidy => self.subsidy,
        }
    }
}

/// Multipliers that turn a base weather year into a stylised extreme year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtremeSpec {
    pub id: String,
    /// Base scenario to perturb; the first base scenario when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    /// Applied to the peak representative day only.
    #[serde(default = "one")]
    pub demand_scale: f64,
    /// Fractional reduction of thermal availability.
    #[serde(default)]
    pub thermal_derate: f64,
    /// Fractional reduction of VRE availability.
    #[serde(default)]
    pub vre_derate: f64,
    #[serde(default = "one")]
    pub hydro_inflow_scale: f64,
    /// Replacement availability per line id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub line_availability: BTreeMap<String, f64>,
}

impl ExtremeSpec {
    pub fn identity(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            base: None,
            demand_scale: 1.0,
            thermal_derate: 0.0,
            vre_derate: 0.0,
            hydro_inflow_scale: 1.0,
            line_availability: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |f: &str| format!("extremes.{}.{f}", self.id);
        if !(self.demand_scale >= 1.0 && self.demand_scale.is_finite()) {
            return Err(Error::validation(p("demand_scale"), "must be finite and >= 1"));
        }
        for (name, v) in [("thermal_derate", self.thermal_derate), ("vre_derate", self.vre_derate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(p(name), "must lie in [0, 1]"));
            }
        }
        if !(self.hydro_inflow_scale > 0.0 && self.hydro_inflow_scale <= 1.0) {
            return Err(Error::validation(p("hydro_inflow_scale"), "must lie in (0, 1]"));
        }
        for (line, a) in &self.line_availability {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::validation(p(&format!("line_availability.{line}")), "must lie in [0, 1]"));
            }
        }
        let identity = self.demand_scale == 1.0
            && self.thermal_derate == 0.0
            && self.vre_derate == 0.0
            && self.hydro_inflow_scale == 1.0
            && self.line_availability.is_empty();
        if identity {
            return Err(Error::validation(
                format!("extremes.{}", self.id),
                "extreme spec leaves every trace unchanged",
            ));
        }
        Ok(())
    }
}

/// Parameters of the bundled synthetic weather-year generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraces {
    pub base_years: usize,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub demand: Vec<SyntheticDemand>,
    #[serde(default)]
    pub availability: Vec<SyntheticAvailability>,
    #[serde(default)]
    pub inflow: Vec<SyntheticInflow>,
}

fn default_days() -> usize {
    365
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDemand {
    pub node: String,
    /// MW.
    pub mean: f64,
    #[serde(default)]
    pub daily_swing: f64,
    #[serde(default)]
    pub seasonal_swing: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AvailabilityProfile {
    Solar,
    Wind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAvailability {
    /// Resource or RDER option id.
    pub resource: String,
    pub profile: AvailabilityProfile,
    /// Mean capacity factor.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticInflow {
    pub resource: String,
    /// MWh per half-hour step.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_rep_days")]
    pub representative_days: usize,
    /// Storage with a longer duration (hours) is chained across days.
    #[serde(default = "default_long_threshold")]
    pub long_duration_threshold: f64,
    #[serde(default = "default_extreme_probability")]
    pub extreme_probability: f64,
    #[serde(default)]
    pub extremes: Vec<ExtremeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTraces>,
}

fn default_rep_days() -> usize {
    24
}

fn default_long_threshold() -> f64 {
    12.0
}

fn default_extreme_probability() -> f64 {
    0.01
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            representative_days: default_rep_days(),
            long_duration_threshold: default_long_threshold(),
            extreme_probability: default_extreme_probability(),
            extremes: Vec::new(),
            synthetic: None,
        }
    }
}

/// Threshold a candidate's utility must meet to stay in the mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EntryRule {
    /// Keep when utility >= 0.
    #[default]
    NonNegative,
    /// Keep when utility > 0.
    Positive,
}

impl EntryRule {
    pub fn admits(self, utility: f64) -> bool {
        match self {
            EntryRule::NonNegative => utility >= 0.0,
            EntryRule::Positive => utility > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub entry_rule: EntryRule,
}

fn default_max_iterations() -> usize {
    100
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            entry_rule: EntryRule::NonNegative,
        }
    }
}

/// The configuration file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub lines: Vec<Line>,
    #[serde(default)]
    pub resources: Vec<Resource>,
    #[serde(default)]
    pub consumers: Vec<Consumer>,
    #[serde(default)]
    pub market_design: MarketConfig,
    #[serde(default)]
    pub risk: RiskParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insurance: Option<InsuranceConfig>,
    #[serde(default)]
    pub scenarios: ScenarioConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumConfig,
}

impl SystemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }
}

/// Validated, immutable system. Index vectors are derived from the ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    pub resources: Vec<Resource>,
    pub consumers: Vec<Consumer>,
    pub market: MarketConfig,
    pub risk: RiskParams,
    pub insurance: Option<InsuranceConfig>,
    pub scenarios: ScenarioConfig,
    pub equilibrium: EquilibriumConfig,
    reference: usize,
    line_ends: Vec<(usize, usize)>,
    resource_node: Vec<usize>,
    consumer_node: Vec<usize>,
}

impl SystemModel {
    pub fn reference_node(&self) -> usize {
        self.reference
    }

    pub fn line_ends(&self, line: usize) -> (usize, usize) {
        self.line_ends[line]
    }

    pub fn resource_node(&self, r: usize) -> usize {
        self.resource_node[r]
    }

    pub fn consumer_node(&self, d: usize) -> usize {
        self.consumer_node[d]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn resource_index(&self, id: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.id == id)
    }

    pub fn consumers_at(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.consumers.len()).filter(move |&d| self.consumer_node[d] == node)
    }

    pub fn design(&self, kind: DesignKind) -> MarketDesign {
        self.market.design(kind)
    }

    pub fn build_status(&self) -> Vec<bool> {
        self.resources.iter().map(|r| r.built).collect()
    }

    /// Copy of the model with the given build statuses.
    pub fn with_mix(&self, mix: &[bool]) -> SystemModel {
        assert_eq!(mix.len(), self.resources.len());
        let mut m = self.clone();
        for (r, &b) in m.resources.iter_mut().zip(mix) {
            r.built = b;
        }
        m
    }

    pub fn to_config(&self) -> SystemConfig {
        SystemConfig {
            nodes: self.nodes.clone(),
            lines: self.lines.clone(),
            resources: self.resources.clone(),
            consumers: self.consumers.clone(),
            market_design: self.market.clone(),
            risk: self.risk,
            insurance: self.insurance.clone(),
            scenarios: self.scenarios.clone(),
            equilibrium: self.equilibrium.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        validate_system(SystemConfig::load(path)?)
    }
}

fn check_unique<'a>(section: &str, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if id.is_empty() {
            return Err(Error::validation(format!("{section}[{i}].id"), "empty id"));
        }
        if !seen.insert(id) {
            return Err(Error::validation(format!("{section}[{i}].id"), format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

fn in_unit(path: String, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(path, format!("{v} is outside [0, 1]")))
    }
}

fn in_half_open_unit(path: String, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(path, format!("{v} is outside (0, 1]")))
    }
}

fn non_negative(path: String, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(path, format!("{v} must be finite and >= 0")))
    }
}

/// Checks every invariant of the configuration and derives the indices.
pub fn validate_system(cfg: SystemConfig) -> Result<SystemModel> {
    if cfg.nodes.is_empty() {
        return Err(Error::validation("nodes", "at least one node is required"));
    }
    check_unique("nodes", cfg.nodes.iter().map(|n| n.id.as_str()))?;
    check_unique("lines", cfg.lines.iter().map(|l| l.id.as_str()))?;
    check_unique("resources", cfg.resources.iter().map(|r| r.id.as_str()))?;
    check_unique("consumers", cfg.consumers.iter().map(|c| c.id.as_str()))?;

    let node_idx: BTreeMap<&str, usize> = cfg.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let lookup = |path: String, id: &str| -> Result<usize> {
        node_idx
            .get(id)
            .copied()
            .ok_or_else(|| Error::validation(path, format!("unknown node `{id}`")))
    };

    let flagged: Vec<usize> = cfg.nodes.iter().enumerate().filter(|(_, n)| n.reference).map(|(i, _)| i).collect();
    let reference = match flagged.as_slice() {
        [] => 0,
        [r] => *r,
        _ => return Err(Error::validation("nodes", "more than one reference node flagged")),
    };

    let mut line_ends = Vec::with_capacity(cfg.lines.len());
    let mut pairs = BTreeSet::new();
    for (i, l) in cfg.lines.iter().enumerate() {
        let a = lookup(format!("lines[{i}].from"), &l.from)?;
        let b = lookup(format!("lines[{i}].to"), &l.to)?;
        if a == b {
            return Err(Error::validation(format!("lines[{i}]"), "line connects a node to itself"));
        }
        if !(l.susceptance > 0.0 && l.susceptance.is_finite()) {
            return Err(Error::validation(format!("lines[{i}].susceptance"), "must be > 0"));
        }
        non_negative(format!("lines[{i}].flow_limit"), l.flow_limit)?;
        if !pairs.insert((a.min(b), a.max(b))) {
            return Err(Error::validation(
                format!("lines[{i}]"),
                format!("duplicate line between `{}` and `{}`", l.from, l.to),
            ));
        }
        line_ends.push((a, b));
    }

    // connectivity
    let n = cfg.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &line_ends {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([reference]);
    seen[reference] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if let Some(lonely) = seen.iter().position(|s| !s) {
        return Err(Error::validation(
            format!("nodes[{lonely}]"),
            format!("node `{}` is not connected to the network", cfg.nodes[lonely].id),
        ));
    }

    let mut consumer_node = Vec::with_capacity(cfg.consumers.len());
    for (i, c) in cfg.consumers.iter().enumerate() {
        consumer_node.push(lookup(format!("consumers[{i}].node"), &c.node)?);
        non_negative(format!("consumers[{i}].voll"), c.voll)?;
        non_negative(format!("consumers[{i}].compensation_rate"), c.compensation_rate)?;
        non_negative(format!("consumers[{i}].premium"), c.premium)?;
        in_unit(format!("consumers[{i}].beta"), c.beta)?;
        in_half_open_unit(format!("consumers[{i}].alpha"), c.alpha)?;
        if let Some(s) = c.share {
            in_unit(format!("consumers[{i}].share"), s)?;
        }
    }
    let mut consumers = cfg.consumers.clone();
    for node in 0..n {
        let at: Vec<usize> = (0..consumers.len()).filter(|&d| consumer_node[d] == node).collect();
        if at.is_empty() {
            continue;
        }
        let given: Vec<Option<f64>> = at.iter().map(|&d| consumers[d].share).collect();
        if given.iter().all(Option::is_none) {
            let s = 1.0 / at.len() as f64;
            for &d in &at {
                consumers[d].share = Some(s);
            }
        } else if given.iter().all(Option::is_some) {
            let total: f64 = given.iter().flatten().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::validation(
                    format!("consumers@{}", cfg.nodes[node].id),
                    format!("demand shares sum to {total}, expected 1"),
                ));
            }
        } else {
            return Err(Error::validation(
                format!("consumers@{}", cfg.nodes[node].id),
                "either all or none of a node's consumers may set `share`",
            ));
        }
    }

    let mut resource_node = Vec::with_capacity(cfg.resources.len());
    for (i, r) in cfg.resources.iter().enumerate() {
        let p = |f: &str| format!("resources[{i}].{f}");
        resource_node.push(lookup(p("node"), &r.node)?);
        if r.kind.is_rder() {
            return Err(Error::validation(p("kind"), "RDER kinds belong in insurance.catalog"));
        }
        if !(r.capacity > 0.0 && r.capacity.is_finite()) {
            return Err(Error::validation(p("capacity"), format!("capacity {} must be > 0", r.capacity)));
        }
        non_negative(p("reserve_cost"), r.reserve_cost)?;
        non_negative(p("invest_cost"), r.invest_cost)?;
        in_half_open_unit(p("charge_efficiency"), r.charge_efficiency)?;
        in_half_open_unit(p("discharge_efficiency"), r.discharge_efficiency)?;
        if r.kind.is_storage_like() && (r.duration.is_nan() || r.duration <= 0.0) {
            return Err(Error::validation(p("duration"), "storage and hydro need a duration > 0"));
        }
        if let Some(a) = r.elcc_derate {
            in_unit(p("elcc_derate"), a)?;
        }
        if !r.variable_cost.is_finite() {
            return Err(Error::validation(p("variable_cost"), "must be finite"));
        }
    }

    let mut market = cfg.market_design.clone();
    validate_market(&mut market)?;
    in_unit("risk.beta".into(), cfg.risk.beta)?;
    in_half_open_unit("risk.alpha".into(), cfg.risk.alpha)?;

    if let Some(ins) = &cfg.insurance {
        in_unit("insurance.beta".into(), ins.beta)?;
        in_half_open_unit("insurance.alpha".into(), ins.alpha)?;
        non_negative("insurance.capital_cost".into(), ins.capital_cost)?;
        match ins.mode {
            InsuranceMode::Direct => {
                if ins.subsidy != 1.0 {
                    return Err(Error::validation("insurance.subsidy", "direct mode requires subsidy = 1"));
                }
            }
            InsuranceMode::Subsidy => in_half_open_unit("insurance.subsidy".into(), ins.subsidy)?,
        }
        check_unique("insurance.catalog", ins.catalog.iter().map(|o| o.id.as_str()))?;
        for (i, o) in ins.catalog.iter().enumerate() {
            let p = |f: &str| format!("insurance.catalog[{i}].{f}");
            let node = lookup(p("node"), &o.node)?;
            if !o.kind.is_rder() {
                return Err(Error::validation(p("kind"), "catalog entries must be rder-solar or rder-storage"));
            }
            if !consumer_node.contains(&node) {
                return Err(Error::validation(p("node"), format!("node `{}` has no consumer", o.node)));
            }
            non_negative(p("invest_cost"), o.invest_cost)?;
            in_half_open_unit(p("charge_efficiency"), o.charge_efficiency)?;
            in_half_open_unit(p("discharge_efficiency"), o.discharge_efficiency)?;
            if o.kind == ResourceKind::RderStorage && (o.duration.is_nan() || o.duration <= 0.0) {
                return Err(Error::validation(p("duration"), "storage needs a duration > 0"));
            }
        }
    }

    let sc = &cfg.scenarios;
    if sc.representative_days == 0 {
        return Err(Error::validation("scenarios.representative_days", "must be >= 1"));
    }
    in_half_open_unit("scenarios.extreme_probability".into(), sc.extreme_probability)?;
    check_unique("scenarios.extremes", sc.extremes.iter().map(|e| e.id.as_str()))?;
    for e in &sc.extremes {
        e.validate()?;
        for line in e.line_availability.keys() {
            if !cfg.lines.iter().any(|l| &l.id == line) {
                return Err(Error::validation(
                    format!("extremes.{}.line_availability", e.id),
                    format!("unknown line `{line}`"),
                ));
            }
        }
    }
    if sc.extremes.len() as f64 * sc.extreme_probability > 1.0 {
        return Err(Error::validation("scenarios.extremes", "extreme probabilities exceed 1"));
    }
    if let Some(syn) = &sc.synthetic {
        if syn.base_years == 0 || syn.days == 0 {
            return Err(Error::validation("scenarios.synthetic", "need at least one year of one day"));
        }
        for (i, d) in syn.demand.iter().enumerate() {
            lookup(format!("scenarios.synthetic.demand[{i}].node"), &d.node)?;
        }
    }
    if cfg.equilibrium.max_iterations == 0 {
        return Err(Error::validation("equilibrium.max_iterations", "must be >= 1"));
    }

    let mut nodes = cfg.nodes.clone();
    for (i, node) in nodes.iter_mut().enumerate() {
        node.reference = i == reference;
    }

    Ok(SystemModel {
        nodes,
        lines: cfg.lines,
        resources: cfg.resources,
        consumers,
        market,
        risk: cfg.risk,
        insurance: cfg.insurance,
        scenarios: cfg.scenarios,
        equilibrium: cfg.equilibrium,
        reference,
        line_ends,
        resource_node,
        consumer_node,
    })
}

fn validate_market(m: &mut MarketConfig) -> Result<()> {
    if let Some(s) = m.shed_cost {
        non_negative("market_design.shed_cost".into(), s)?;
    }
    for (name, cap) in [("eom", m.eom.price_cap), ("ordc", m.ordc.price_cap), ("cm", m.cm.price_cap)] {
        if cap.is_nan() || cap <= 0.0 {
            return Err(Error::validation(format!("market_design.{name}.price_cap"), "must be > 0"));
        }
    }
    for (i, s) in m.ordc.segments.iter().enumerate() {
        non_negative(format!("market_design.ordc.segments[{i}].quantity"), s.quantity)?;
        non_negative(format!("market_design.ordc.segments[{i}].penalty"), s.penalty)?;
    }
    if m.ordc.segments.windows(2).any(|w| w[1].penalty > w[0].penalty) {
        return Err(Error::validation(
            "market_design.ordc.segments",
            "penalties must be non-increasing in cumulative quantity",
        ));
    }
    if m.cm.fractions.len() != m.cm.cone_multiples.len() {
        return Err(Error::validation(
            "market_design.cm",
            "fractions and cone_multiples must have equal length",
        ));
    }
    for (i, f) in m.cm.fractions.iter().enumerate() {
        non_negative(format!("market_design.cm.fractions[{i}]"), *f)?;
    }
    for (i, f) in m.cm.cone_multiples.iter().enumerate() {
        non_negative(format!("market_design.cm.cone_multiples[{i}]"), *f)?;
    }
    non_negative("market_design.cm.cone".into(), m.cm.cone)?;
    Ok(())
}
