//! Runs a trained model over a model tensor and decodes every target back
//! to its native form: curves for longitudinal features, levels for
//! categorical ones, values for scalars. Forecast outputs are spliced onto
//! each entity's observed history before decoding.

use fungraph::decode::{assemble_forecast, decode_target, DecodedValue};
use fungraph::embed::{EmbeddedTensor, FeatureEmbedding};
use fungraph::gcn::{TaskMode, TrainedModel};
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::containers::{
    load_model, load_tensor, save_json, write_manifest, DecodedJson, PredictionRow,
    PredictionsFile, FORMAT_VERSION,
};
use crate::error::{CliError, Result};

fn decode_row(
    model: &TrainedModel,
    tensor: &EmbeddedTensor,
    entity: usize,
    j: usize,
    raw: &DVector<f64>,
) -> Result<DecodedJson> {
    match model.task.mode {
        TaskMode::Static => {
            let prediction = decode_target(raw, tensor.embedding(j), tensor.stats(j))?;
            Ok(match prediction.value {
                DecodedValue::Curve(curve) => DecodedJson::Curve {
                    coeffs: curve.coeffs().iter().copied().collect(),
                },
                DecodedValue::Scalar(value) => DecodedJson::Scalar { value },
                DecodedValue::Level(level) => DecodedJson::Level { level },
            })
        }
        TaskMode::Forecast { .. } => {
            let FeatureEmbedding::Spline(basis) = tensor.embedding(j) else {
                return Err(CliError::Config(format!(
                    "forecast target '{}' is not spline-embedded in this tensor",
                    tensor.feature_names()[j]
                )));
            };
            let history = tensor.entity_row(j, entity).rows(0, model.k1).into_owned();
            let curve = assemble_forecast(&history, raw, basis, tensor.stats(j))?;
            Ok(DecodedJson::Curve {
                coeffs: curve.coeffs().iter().copied().collect(),
            })
        }
    }
}

pub fn run(config: &RunConfig) -> Result<()> {
    let model = load_model(&config.model_path())?;
    let tensor_path = config.gcn_tensor_path();
    let tensor = load_tensor(&tensor_path)?;
    let outputs = model.predict_tensor(&tensor)?;

    let mut rows = Vec::with_capacity(tensor.n() * model.task.targets.len());
    for (entity, output) in outputs.iter().enumerate() {
        for (t, &(j, _)) in model.task.targets.iter().enumerate() {
            let raw = output.row(t).transpose();
            let decoded = decode_row(&model, &tensor, entity, j, &raw)?;
            rows.push(PredictionRow {
                entity,
                target: tensor.feature_names()[j].clone(),
                raw: raw.iter().copied().collect(),
                decoded,
            });
        }
    }

    let path = config.predictions_path();
    let n_rows = rows.len();
    save_json(
        &path,
        &PredictionsFile {
            version: FORMAT_VERSION,
            tensor: tensor_path.display().to_string(),
            task: model.task.clone(),
            rows,
        },
    )?;
    write_manifest(&config.out, "predict", config, &[&path])?;

    println!(
        "predicted {} target(s) for {} entities ({n_rows} rows)",
        model.task.targets.len(),
        tensor.n()
    );
    println!("wrote {}", path.display());
    Ok(())
}
