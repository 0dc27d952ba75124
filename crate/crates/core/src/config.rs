//! Audit configuration: one TOML document with a section per stage. Every
//! field has a default; the resolved configuration (defaults included) is
//! echoed into each command's output manifest so reports are self-describing.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, EmbeddingFormat, GroupBy, GroupSelector};
use crate::error::{Error, Result};
use crate::sampling::{mix_seed, GroupingAttr, ResamplePlan, StratumAttr, TargetCount};

/// Per-stage seed ordinals under the master seed.
pub mod stage {
    pub const SYNTH: u64 = 0;
    pub const INSPECT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVALUATE: u64 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub embeddings: PathBuf,
    pub format: EmbeddingFormat,
    pub metadata: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            embeddings: "embeddings.bin".into(),
            format: EmbeddingFormat::Binary,
            metadata: "metadata.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfigSection {
    pub enabled: bool,
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for TsneConfigSection {
    fn default() -> Self {
        TsneConfigSection {
            enabled: false,
            perplexity: 30.0,
            iterations: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectConfig {
    /// KS tests run on this many leading PCA modes.
    pub modes: usize,
    /// Cumulative explained-variance target for the retained PCA basis.
    pub variance_target: f64,
    /// 0 uses the full input set.
    pub subsample_per_group: usize,
    pub subsample_attribute: GroupingAttr,
    pub one_scan_per_patient: bool,
    /// Pairs of selector strings; empty uses the built-in default pairs
    /// (race pairs, sex pair, first-label contrast).
    pub pairs: Vec<(String, String)>,
    /// 0 = automatic bin count.
    pub marginal_bins: usize,
    pub tsne: TsneConfigSection,
}

impl Default for InspectConfig {
    fn default() -> Self {
        InspectConfig {
            modes: 4,
            variance_target: 0.99,
            subsample_per_group: 1000,
            subsample_attribute: GroupingAttr::Race,
            one_scan_per_patient: false,
            pairs: Vec::new(),
            marginal_bins: 0,
            tsne: TsneConfigSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    /// Attribute names: `race`, `sex`, `age`. The evaluated label's status
    /// stratum is appended automatically per label.
    pub attributes: Vec<String>,
    pub age_bin_width: f64,
    /// 0 = lower median of realized stratum sizes.
    pub target_count: usize,
    pub skip_empty: bool,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            attributes: vec!["race".into(), "age".into()],
            age_bin_width: 10.0,
            target_count: 0,
            skip_empty: true,
        }
    }
}

impl ResampleConfig {
    pub fn to_plan(&self, seed: u64) -> Result<ResamplePlan> {
        let mut attributes = Vec::with_capacity(self.attributes.len());
        for name in &self.attributes {
            let attr = match name.as_str() {
                "race" => StratumAttr::Race,
                "sex" => StratumAttr::Sex,
                "age" => StratumAttr::Age {
                    bin_width: self.age_bin_width,
                },
                other => {
                    return Err(Error::config(format!(
                        "unknown resample attribute {other:?} (expected race, sex or age)"
                    )))
                }
            };
            attributes.push(attr);
        }
        Ok(ResamplePlan {
            attributes,
            target: if self.target_count == 0 {
                TargetCount::Median
            } else {
                TargetCount::Fixed(self.target_count)
            },
            skip_empty: self.skip_empty,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbesConfig {
    pub labels: Vec<String>,
    /// Any of `linear`, `mlp3`, `mlp5`.
    pub presets: Vec<String>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden_width: usize,
}

impl Default for ProbesConfig {
    fn default() -> Self {
        ProbesConfig {
            labels: Vec::new(),
            presets: vec!["linear".into(), "mlp3".into(), "mlp5".into()],
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            hidden_width: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScores {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Empty = the probe labels.
    pub labels: Vec<String>,
    /// Selector strings; empty = races (lexicographic) then Female, Male.
    pub groups: Vec<String>,
    pub target_fpr: f64,
    pub bootstrap_replicates: usize,
    pub patient_bootstrap: bool,
    /// Probe model files; empty = `probe_<preset>.json` for each configured
    /// preset, looked up in the output directory.
    pub probe_models: Vec<PathBuf>,
    pub external_scores: Vec<ExternalScores>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            labels: Vec::new(),
            groups: Vec::new(),
            target_fpr: 0.2,
            bootstrap_replicates: 2000,
            patient_bootstrap: false,
            probe_models: Vec::new(),
            external_scores: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeConfig {
    pub group_by: Vec<GroupBy>,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            group_by: vec![GroupBy::Race, GroupBy::Sex],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Master seed; per-stage seeds derive from it via the substream mixer.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub inspect: InspectConfig,
    pub resample: ResampleConfig,
    pub probes: ProbesConfig,
    pub evaluate: EvaluateConfig,
    pub summarize: SummarizeConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            out_dir: "out".into(),
            data: DataConfig::default(),
            inspect: InspectConfig::default(),
            resample: ResampleConfig::default(),
            probes: ProbesConfig::default(),
            evaluate: EvaluateConfig::default(),
            summarize: SummarizeConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: AuditConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inspect.modes == 0 {
            return Err(Error::config("inspect.modes must be >= 1"));
        }
        if !(self.inspect.variance_target > 0.0 && self.inspect.variance_target <= 1.0) {
            return Err(Error::config("inspect.variance_target must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.evaluate.target_fpr) {
            return Err(Error::config("evaluate.target_fpr must be in [0, 1]"));
        }
        if self.evaluate.bootstrap_replicates < 2 {
            return Err(Error::config("evaluate.bootstrap_replicates must be >= 2"));
        }
        for preset in &self.probes.presets {
            if !["linear", "mlp3", "mlp5"].contains(&preset.as_str()) {
                return Err(Error::config(format!(
                    "unknown probe preset {preset:?} (expected linear, mlp3 or mlp5)"
                )));
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: u64) -> u64 {
        mix_seed(self.seed, stage)
    }

    /// Resolved TOML echo, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Inspect pairs with the documented defaults when none are configured:
    /// every race pair, the sex pair, then positive-vs-negative on the first
    /// label.
    pub fn inspect_pairs(&self, cohort: &Cohort) -> Result<Vec<(GroupSelector, GroupSelector)>> {
        if !self.inspect.pairs.is_empty() {
            return self
                .inspect
                .pairs
                .iter()
                .map(|(a, b)| Ok((parse_selector(a)?, parse_selector(b)?)))
                .collect();
        }
        let mut pairs = Vec::new();
        let races = cohort.race_values();
        for i in 0..races.len() {
            for j in (i + 1)..races.len() {
                pairs.push((
                    GroupSelector::Race(races[i].clone()),
                    GroupSelector::Race(races[j].clone()),
                ));
            }
        }
        pairs.push((
            GroupSelector::Sex(crate::cohort::Sex::Male),
            GroupSelector::Sex(crate::cohort::Sex::Female),
        ));
        if let Some(label) = cohort.label_names().first() {
            pairs.push((
                GroupSelector::Label {
                    name: label.clone(),
                    value: true,
                },
                GroupSelector::Label {
                    name: label.clone(),
                    value: false,
                },
            ));
        }
        Ok(pairs)
    }

    /// Evaluation groups with the documented defaults when none are
    /// configured: races in lexicographic order, then Female, Male.
    pub fn evaluate_groups(&self, cohort: &Cohort) -> Result<Vec<GroupSelector>> {
        if !self.evaluate.groups.is_empty() {
            return self.evaluate.groups.iter().map(|s| parse_selector(s)).collect();
        }
        let mut groups: Vec<GroupSelector> = cohort
            .race_values()
            .into_iter()
            .map(GroupSelector::Race)
            .collect();
        groups.push(GroupSelector::Sex(crate::cohort::Sex::Female));
        groups.push(GroupSelector::Sex(crate::cohort::Sex::Male));
        Ok(groups)
    }

    pub fn evaluate_labels(&self) -> Vec<String> {
        if self.evaluate.labels.is_empty() {
            self.probes.labels.clone()
        } else {
            self.evaluate.labels.clone()
        }
    }
}

pub fn parse_selector(s: &str) -> Result<GroupSelector> {
    GroupSelector::from_str(s).map_err(|detail| Error::Config { detail })
}
