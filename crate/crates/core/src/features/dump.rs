//! Feature dumps: `<root>/<stem>/layer_<index>.drt`, one `[C, H, W]` tensor per layer.

use std::path::{Path, PathBuf};

use super::{check_activations, LayerActivations, ModelError, NetworkTopology};
use crate::tensor::{load_tensor, save_tensor};

pub fn layer_dump_path(root: &Path, stem: &str, layer_index: u32) -> PathBuf {
    root.join(stem).join(format!("layer_{layer_index}.drt"))
}

pub fn write_feature_dump(root: &Path, stem: &str, acts: &[LayerActivations]) -> Result<(), ModelError> {
    std::fs::create_dir_all(root.join(stem))?;
    for a in acts {
        save_tensor(&a.maps, layer_dump_path(root, stem, a.layer_index))?;
    }
    Ok(())
}

pub fn read_feature_dump(
    root: &Path,
    stem: &str,
    topology: &NetworkTopology,
) -> Result<Vec<LayerActivations>, ModelError> {
    let acts = topology
        .layers
        .iter()
        .map(|spec| {
            let path = layer_dump_path(root, stem, spec.index);
            if !path.exists() {
                return Err(ModelError::FeatureDump {
                    path,
                    reason: "missing layer file".into(),
                });
            }
            let maps = load_tensor(&path).map_err(|e| ModelError::FeatureDump {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            LayerActivations::new(spec.index, spec.group, maps).map_err(|e| ModelError::FeatureDump {
                path,
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_activations(topology, &acts)?;
    Ok(acts)
}
