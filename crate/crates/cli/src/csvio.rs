//! Long-format CSV ingestion and the flat CSV reports. A dataset row is
//! `entity_id,feature,time,value`: longitudinal rows carry a time stamp,
//! scalar and categorical rows leave it empty, and categorical values are
//! level labels resolved through the schema.

use std::fs::{self, File};
use std::path::Path;

use fungraph::embed::{Dataset, Feature, FeatureData};
use fungraph::fda::DiscreteSamples;
use serde::{Deserialize, Serialize};

use crate::error::{at_path, CliError, Result};
use crate::schema::{generated_label, DatasetSchema, ModalityName};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongFormatRow {
    pub entity_id: String,
    pub feature: String,
    pub time: Option<f64>,
    pub value: String,
}

/// One scored metric of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub target: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Writes the dataset in deterministic order: features as declared, then
/// entities in schema order, then observations in time order.
pub fn write_dataset(path: &Path, dataset: &Dataset, schema: &DatasetSchema) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| at_path(path, e))?;
    for feature in dataset.features() {
        for (i, entity) in schema.entities.iter().enumerate() {
            match &feature.data {
                FeatureData::Longitudinal(samples) => {
                    let s = &samples[i];
                    for (t, v) in s.times().iter().zip(s.values()) {
                        writer
                            .serialize(LongFormatRow {
                                entity_id: entity.clone(),
                                feature: feature.name.clone(),
                                time: Some(*t),
                                value: format!("{v}"),
                            })
                            .map_err(|e| at_path(path, e))?;
                    }
                }
                FeatureData::Scalar(values) => {
                    writer
                        .serialize(LongFormatRow {
                            entity_id: entity.clone(),
                            feature: feature.name.clone(),
                            time: None,
                            value: format!("{}", values[i]),
                        })
                        .map_err(|e| at_path(path, e))?;
                }
                FeatureData::Categorical { values, .. } => {
                    writer
                        .serialize(LongFormatRow {
                            entity_id: entity.clone(),
                            feature: feature.name.clone(),
                            time: None,
                            value: generated_label(values[i]),
                        })
                        .map_err(|e| at_path(path, e))?;
                }
            }
        }
    }
    writer.flush().map_err(|e| at_path(path, e))?;
    Ok(())
}

/// Per-feature accumulator while rows stream in.
enum Collect {
    Long(Vec<Vec<(f64, f64)>>),
    Scalar(Vec<Option<f64>>),
    Categorical(Vec<Option<usize>>),
}

/// Reads a long-format CSV against its schema. Every entity must have a
/// value for every feature; violations name both.
pub fn read_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    schema.validate()?;
    let n = schema.entities.len();
    let mut collects: Vec<Collect> = schema
        .features
        .iter()
        .map(|f| match f.modality {
            ModalityName::Longitudinal => Collect::Long(vec![Vec::new(); n]),
            ModalityName::Scalar => Collect::Scalar(vec![None; n]),
            ModalityName::Categorical => Collect::Categorical(vec![None; n]),
        })
        .collect();

    let file = File::open(path).map_err(|e| at_path(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    for (line, record) in reader.deserialize::<LongFormatRow>().enumerate() {
        let row = record.map_err(|e| at_path(path, e))?;
        let context = || format!("row {} (entity '{}')", line + 2, row.entity_id);
        let entity = schema.entity_index(&row.entity_id).ok_or_else(|| {
            CliError::Config(format!("{}: entity not in the schema", context()))
        })?;
        let (slot, spec) = schema
            .features
            .iter()
            .position(|f| f.name == row.feature)
            .map(|j| (j, &schema.features[j]))
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{}: feature '{}' not in the schema",
                    context(),
                    row.feature
                ))
            })?;
        match (&mut collects[slot], spec.modality) {
            (Collect::Long(rows), _) => {
                let t = row.time.ok_or_else(|| {
                    CliError::Config(format!(
                        "{}: longitudinal feature '{}' needs a time",
                        context(),
                        row.feature
                    ))
                })?;
                let v: f64 = row.value.parse().map_err(|_| {
                    CliError::Config(format!(
                        "{}: value '{}' of feature '{}' is not numeric",
                        context(),
                        row.value,
                        row.feature
                    ))
                })?;
                rows[entity].push((t, v));
            }
            (Collect::Scalar(values), _) => {
                reject_time(&row, &context)?;
                let v: f64 = row.value.parse().map_err(|_| {
                    CliError::Config(format!(
                        "{}: value '{}' of feature '{}' is not numeric",
                        context(),
                        row.value,
                        row.feature
                    ))
                })?;
                put_once(&mut values[entity], v, &row, &context)?;
            }
            (Collect::Categorical(values), _) => {
                reject_time(&row, &context)?;
                let level = schema.level_index(spec, &row.value)?;
                put_once(&mut values[entity], level, &row, &context)?;
            }
        }
    }

    let features = schema
        .features
        .iter()
        .zip(collects)
        .map(|(spec, collect)| {
            let data = match collect {
                Collect::Long(mut rows) => {
                    let mut series = Vec::with_capacity(n);
                    for (i, points) in rows.iter_mut().enumerate() {
                        if points.is_empty() {
                            return Err(missing(&schema.entities[i], &spec.name));
                        }
                        points.sort_by(|a, b| a.0.total_cmp(&b.0));
                        let (times, values) = points.iter().cloned().unzip();
                        let samples = DiscreteSamples::new(times, values).map_err(|e| {
                            CliError::Config(format!(
                                "entity '{}', feature '{}': {e}",
                                schema.entities[i], spec.name
                            ))
                        })?;
                        series.push(samples);
                    }
                    FeatureData::Longitudinal(series)
                }
                Collect::Scalar(values) => FeatureData::Scalar(unwrap_all(
                    values,
                    &schema.entities,
                    &spec.name,
                )?),
                Collect::Categorical(values) => FeatureData::Categorical {
                    levels: spec.levels.as_ref().map_or(0, Vec::len),
                    values: unwrap_all(values, &schema.entities, &spec.name)?,
                },
            };
            Ok(Feature {
                name: spec.name.clone(),
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(n, schema.to_domain()?, features).map_err(CliError::from)
}

fn missing(entity: &str, feature: &str) -> CliError {
    CliError::Config(format!("entity '{entity}' has no value for feature '{feature}'"))
}

fn unwrap_all<T>(values: Vec<Option<T>>, entities: &[String], feature: &str) -> Result<Vec<T>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| missing(&entities[i], feature)))
        .collect()
}

fn reject_time(row: &LongFormatRow, context: &impl Fn() -> String) -> Result<()> {
    if row.time.is_some() {
        return Err(CliError::Config(format!(
            "{}: feature '{}' is not longitudinal but carries a time",
            context(),
            row.feature
        )));
    }
    Ok(())
}

fn put_once<T>(
    slot: &mut Option<T>,
    value: T,
    row: &LongFormatRow,
    context: &impl Fn() -> String,
) -> Result<()> {
    if slot.is_some() {
        return Err(CliError::Config(format!(
            "{}: duplicate value for feature '{}'",
            context(),
            row.feature
        )));
    }
    *slot = Some(value);
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| at_path(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| at_path(path, e))?;
    }
    writer.flush().map_err(|e| at_path(path, e))?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path).map_err(|e| at_path(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .map(|r| r.map_err(|e| at_path(path, e)))
        .collect()
}

/// Per-epoch train and validation losses, 1-based epochs.
pub fn write_loss(path: &Path, history: &[(f64, f64)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| at_path(path, e))?;
    writer
        .write_record(["epoch", "train_loss", "val_loss"])
        .map_err(|e| at_path(path, e))?;
    for (epoch, (train, val)) in history.iter().enumerate() {
        writer
            .write_record([(epoch + 1).to_string(), train.to_string(), val.to_string()])
            .map_err(|e| at_path(path, e))?;
    }
    writer.flush().map_err(|e| at_path(path, e))?;
    Ok(())
}
