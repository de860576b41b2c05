use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SyngenError;

pub const CONFIG_VERSION: u32 = 1;

/// Sub-process categories of the Markov chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubProcess {
    Reaction,
    ThermalSeparation,
    CountercurrentSeparation,
    Filtration,
    Centrifugation,
    Purification,
}

impl SubProcess {
    pub const ALL: [SubProcess; 6] = [
        SubProcess::Reaction,
        SubProcess::ThermalSeparation,
        SubProcess::CountercurrentSeparation,
        SubProcess::Filtration,
        SubProcess::Centrifugation,
        SubProcess::Purification,
    ];
}

/// Where a pattern of temperature/pressure-changing units is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSite {
    Feed,
    ReactionInlet,
    ReactionOutlet,
    SeparationInlet,
    Purification,
}

/// Distribution of a unit pattern: `count[k]` is the probability of
/// inserting k units (k = 0, 1, 2); each unit is drawn from `units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternWeights {
    pub count: [f64; 3],
    pub units: BTreeMap<String, f64>,
}

impl PatternWeights {
    fn new(count: [f64; 3], units: &[(&str, f64)]) -> Self {
        Self { count, units: units.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub version: u32,
    pub seed: u64,
    pub first_subprocess: BTreeMap<SubProcess, f64>,
    pub next_subprocess: BTreeMap<SubProcess, f64>,
    pub pattern_weights: BTreeMap<PatternSite, PatternWeights>,
    pub p_recycle: f64,
    pub p_heat_integration: f64,
    pub p_add_reactant: f64,
    /// Probabilities of starting with one, two or three raw-material feeds.
    pub feed_count: [f64; 3],
    pub max_nodes: usize,
    /// Branches this many sub-processes deep are forced into purification.
    pub max_depth: usize,
}

fn dist(entries: &[(SubProcess, f64)]) -> BTreeMap<SubProcess, f64> {
    entries.iter().copied().collect()
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        use SubProcess::*;
        let process_units = [("hex", 0.5), ("v", 0.2), ("pp", 0.2), ("comp", 0.1)];
        let mut pattern_weights = BTreeMap::new();
        pattern_weights.insert(PatternSite::Feed, PatternWeights::new([0.6, 0.3, 0.1], &process_units));
        pattern_weights.insert(PatternSite::ReactionInlet, PatternWeights::new([0.7, 0.25, 0.05], &process_units));
        pattern_weights.insert(PatternSite::ReactionOutlet, PatternWeights::new([0.5, 0.4, 0.1], &process_units));
        pattern_weights.insert(PatternSite::SeparationInlet, PatternWeights::new([0.6, 0.3, 0.1], &process_units));
        pattern_weights.insert(
            PatternSite::Purification,
            PatternWeights::new([0.5, 0.35, 0.15], &[("hex", 0.6), ("v", 0.2), ("pp", 0.2)]),
        );
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            first_subprocess: dist(&[
                (Reaction, 0.40),
                (ThermalSeparation, 0.25),
                (CountercurrentSeparation, 0.15),
                (Filtration, 0.10),
                (Centrifugation, 0.10),
            ]),
            next_subprocess: dist(&[
                (ThermalSeparation, 0.25),
                (CountercurrentSeparation, 0.10),
                (Filtration, 0.07),
                (Centrifugation, 0.05),
                (Reaction, 0.08),
                (Purification, 0.45),
            ]),
            pattern_weights,
            p_recycle: 0.45,
            p_heat_integration: 0.5,
            p_add_reactant: 0.4,
            feed_count: [0.8, 0.15, 0.05],
            max_nodes: 50,
            max_depth: 4,
        }
    }
}

impl GeneratorConfig {
    /// A deliberately different distribution over the same unit vocabulary:
    /// separation-led processes with more feeds and recycles, little heat
    /// integration, and long inline patterns that put dryers, cyclones and
    /// flash drums where the default config only places hex/v/pp/comp.
    /// Stands in for a target corpus when fine-tuning.
    pub fn shifted() -> Self {
        use SubProcess::*;
        let units = [("dry", 0.3), ("cycl", 0.25), ("flash", 0.2), ("comp", 0.15), ("pp", 0.1)];
        let mut cfg = Self {
            first_subprocess: dist(&[(CountercurrentSeparation, 0.5), (Centrifugation, 0.3), (Filtration, 0.2)]),
            next_subprocess: dist(&[
                (CountercurrentSeparation, 0.3),
                (Centrifugation, 0.2),
                (ThermalSeparation, 0.05),
                (Purification, 0.45),
            ]),
            p_recycle: 0.8,
            p_heat_integration: 0.1,
            p_add_reactant: 0.1,
            feed_count: [0.2, 0.4, 0.4],
            max_nodes: 70,
            max_depth: 6,
            seed: 1,
            ..Self::default()
        };
        for w in cfg.pattern_weights.values_mut() {
            *w = PatternWeights::new([0.1, 0.3, 0.6], &units);
        }
        cfg
    }
}

fn check_prob(name: &str, p: f64) -> Result<(), SyngenError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SyngenError::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

fn check_dist(name: &str, d: &BTreeMap<SubProcess, f64>) -> Result<(), SyngenError> {
    for (k, &p) in d {
        check_prob(&format!("{name}.{k:?}"), p)?;
    }
    let sum: f64 = d.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SyngenError::InvalidConfig(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SyngenError> {
        if self.version != CONFIG_VERSION {
            return Err(SyngenError::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        check_dist("first_subprocess", &self.first_subprocess)?;
        check_dist("next_subprocess", &self.next_subprocess)?;
        if self.first_subprocess.get(&SubProcess::Purification).copied().unwrap_or(0.0) != 0.0 {
            return Err(SyngenError::InvalidConfig("purification cannot be the first sub-process".into()));
        }
        if self.next_subprocess.get(&SubProcess::Purification).copied().unwrap_or(0.0) <= 0.0 {
            return Err(SyngenError::InvalidConfig("next_subprocess needs purification > 0".into()));
        }
        for (name, p) in [
            ("p_recycle", self.p_recycle),
            ("p_heat_integration", self.p_heat_integration),
            ("p_add_reactant", self.p_add_reactant),
        ] {
            check_prob(name, p)?;
        }
        let feeds: f64 = self.feed_count.iter().sum();
        if self.feed_count.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (feeds - 1.0).abs() > 1e-9 {
            return Err(SyngenError::InvalidConfig("feed_count is not a distribution".into()));
        }
        if self.max_nodes < 3 {
            return Err(SyngenError::InvalidConfig("max_nodes must be at least 3".into()));
        }
        for site in [
            PatternSite::Feed,
            PatternSite::ReactionInlet,
            PatternSite::ReactionOutlet,
            PatternSite::SeparationInlet,
            PatternSite::Purification,
        ] {
            let w = self
                .pattern_weights
                .get(&site)
                .ok_or_else(|| SyngenError::InvalidConfig(format!("missing pattern weights for {site:?}")))?;
            let sum: f64 = w.count.iter().sum();
            if w.count.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(SyngenError::InvalidConfig(format!("pattern counts for {site:?} are not a distribution")));
            }
            if w.units.is_empty() || w.units.values().any(|&x| !(x.is_finite() && x >= 0.0)) {
                return Err(SyngenError::InvalidConfig(format!("bad unit weights for {site:?}")));
            }
            for name in w.units.keys() {
                if crate::sfiles::UnitCategory::from_known(name).is_none() {
                    return Err(SyngenError::InvalidConfig(format!("unknown unit {name:?} in {site:?} pattern")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SyngenError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SyngenError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SyngenError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}
