use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{load_weights_file, save_weights_file, ModelSpec, NetError, Network};
use crate::tensor::Float;

use super::trainer::TrainHistory;
use super::{Result, TrainError};

/// JSON stored next to a weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_completed: usize,
    pub history: TrainHistory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

/// `<weights>.json`.
pub fn sidecar_path(weights: impl AsRef<Path>) -> PathBuf {
    let mut s = weights.as_ref().as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn checkpoint<T: Float>(
    network: &Network<T>,
    history: &TrainHistory,
    model: Option<&ModelSpec>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    save_weights_file(network, path)?;
    let meta = CheckpointMeta {
        epochs_completed: history.len(),
        history: history.clone(),
        model: model.cloned(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let text = fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads weights into an existing network and returns the stored history.
pub fn resume_into<T: Float>(network: &mut Network<T>, path: impl AsRef<Path>) -> Result<TrainHistory> {
    let path = path.as_ref();
    let meta = read_meta(path)?;
    load_weights_file(network, path)?;
    Ok(meta.history)
}

/// Rebuilds the network from the sidecar's model description, then loads
/// its weights.
pub fn resume<T: Float>(path: impl AsRef<Path>) -> Result<(Network<T>, TrainHistory, ModelSpec)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TrainError::Net(NetError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found", path.display()),
        ))));
    }
    let meta = read_meta(path)?;
    let spec = meta.model.ok_or_else(|| {
        TrainError::Argument(format!(
            "{} does not record a model description",
            sidecar_path(path).display()
        ))
    })?;
    let mut network = spec.build(0)?;
    load_weights_file(&mut network, path)?;
    Ok((network, meta.history, spec))
}
