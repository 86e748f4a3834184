//! Sidecar description of a long-format dataset: the observation domain,
//! the entity order, and each feature's modality. Categorical features
//! declare their level labels in order, fixing the label-to-index map.

use fungraph::embed::{Dataset, FeatureData, Modality};
use fungraph::fda::Domain;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub version: u32,
    pub domain: DomainSpec,
    /// Entity identifiers in storage order; rows may arrive in any order.
    pub entities: Vec<String>,
    pub features: Vec<FeatureSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub modality: ModalityName,
    /// Level labels in index order; present exactly for categoricals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityName {
    Longitudinal,
    Categorical,
    Scalar,
}

impl std::fmt::Display for ModalityName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModalityName::Longitudinal => "longitudinal",
            ModalityName::Categorical => "categorical",
            ModalityName::Scalar => "scalar",
        })
    }
}

impl DatasetSchema {
    /// Describes a generated dataset, labeling level `i` as `level_i`.
    pub fn describe(dataset: &Dataset) -> Self {
        let width = (dataset.n().max(2) - 1).to_string().len();
        let entities = (0..dataset.n())
            .map(|i| format!("e{i:0width$}"))
            .collect();
        let features = dataset
            .features()
            .iter()
            .map(|f| {
                let (modality, levels) = match f.data.modality() {
                    Modality::Longitudinal => (ModalityName::Longitudinal, None),
                    Modality::Scalar => (ModalityName::Scalar, None),
                    Modality::Categorical { levels } => (
                        ModalityName::Categorical,
                        Some((0..levels).map(|l| format!("level_{l}")).collect()),
                    ),
                };
                FeatureSpec {
                    name: f.name.clone(),
                    modality,
                    levels,
                }
            })
            .collect();
        Self {
            version: SCHEMA_VERSION,
            domain: DomainSpec {
                t_min: dataset.domain().t_min(),
                t_max: dataset.domain().t_max(),
            },
            entities,
            features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema version {} is not the supported {SCHEMA_VERSION}",
                self.version
            )));
        }
        if self.entities.is_empty() {
            return Err(CliError::Config("schema lists no entities".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &self.entities {
            if !seen.insert(id.as_str()) {
                return Err(CliError::Config(format!("duplicate entity id '{id}'")));
            }
        }
        let mut names = std::collections::HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(CliError::Config(format!("duplicate feature '{}'", f.name)));
            }
            match (f.modality, &f.levels) {
                (ModalityName::Categorical, Some(levels)) if levels.len() >= 2 => {}
                (ModalityName::Categorical, _) => {
                    return Err(CliError::Config(format!(
                        "categorical feature '{}' needs at least 2 declared levels",
                        f.name
                    )));
                }
                (_, Some(_)) => {
                    return Err(CliError::Config(format!(
                        "feature '{}' declares levels but is not categorical",
                        f.name
                    )));
                }
                (_, None) => {}
            }
        }
        self.to_domain()?;
        Ok(())
    }

    pub fn to_domain(&self) -> Result<Domain> {
        Domain::new(self.domain.t_min, self.domain.t_max).map_err(CliError::from)
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e == id)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Level index of `label` within `feature`, both by name.
    pub fn level_index(&self, feature: &FeatureSpec, label: &str) -> Result<usize> {
        let levels = feature.levels.as_ref().ok_or_else(|| {
            CliError::Config(format!("feature '{}' has no levels", feature.name))
        })?;
        levels.iter().position(|l| l == label).ok_or_else(|| {
            CliError::Config(format!(
                "feature '{}' has no level '{label}' (declared: {})",
                feature.name,
                levels.join(", ")
            ))
        })
    }

    /// Label of a level index, for writing predictions back out.
    pub fn level_label<'a>(&self, feature: &'a FeatureSpec, level: usize) -> Result<&'a str> {
        let levels = feature.levels.as_ref().ok_or_else(|| {
            CliError::Config(format!("feature '{}' has no levels", feature.name))
        })?;
        levels.get(level).map(|s| s.as_str()).ok_or_else(|| {
            CliError::Config(format!(
                "level {level} out of range for feature '{}' ({} levels)",
                feature.name,
                levels.len()
            ))
        })
    }
}

/// Level labels of a generated dataset's categorical values.
pub fn generated_label(level: usize) -> String {
    format!("level_{level}")
}

/// Modality of core feature data, as schema vocabulary.
pub fn modality_name(data: &FeatureData) -> ModalityName {
    modality_label(data.modality())
}

pub fn modality_label(modality: Modality) -> ModalityName {
    match modality {
        Modality::Longitudinal => ModalityName::Longitudinal,
        Modality::Scalar => ModalityName::Scalar,
        Modality::Categorical { .. } => ModalityName::Categorical,
    }
}
