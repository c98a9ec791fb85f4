use std::path::Path;

use safetensors::{Dtype, SafeTensors};

use crate::error::{Error, Result};
use crate::nn::{Backbone, Module};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn decode(view: &safetensors::tensor::TensorView<'_>) -> Result<Vec<f64>> {
    let bytes = view.data();
    Ok(match view.dtype() {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        other => return Err(Error::Checkpoint(format!("unsupported pretrained dtype {other:?}"))),
    })
}

/// Loads ImageNet weights into a three-channel ResNet-50 body.
///
/// The file is a safetensors archive using torchvision parameter names
/// (`conv1.weight`, `layer1.0.bn1.running_mean`, ...). Entries the body does
/// not use, such as `fc.*` and `num_batches_tracked`, are ignored.
pub fn load_pretrained<T: Scalar>(body: &mut Backbone<T>, path: &Path) -> Result<()> {
    if !matches!(body, Backbone::ResNet50(_)) {
        return Err(Error::Config("pretrained weights exist only for paper_resnet50".into()));
    }
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let file = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut problem: Option<Error> = None;
    body.visit_params_mut("", &mut |name, param| {
        if problem.is_some() {
            return;
        }
        let loaded = file
            .tensor(name)
            .map_err(|_| Error::Checkpoint(format!("{}: missing tensor {name}", path.display())))
            .and_then(|view| {
                if view.shape() != param.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{}: {name} has shape {:?}, expected {:?}",
                        path.display(),
                        view.shape(),
                        param.value.shape()
                    )));
                }
                let values = decode(&view)?.into_iter().map(T::lit).collect();
                Tensor::from_vec(view.shape(), values)
            });
        match loaded {
            Ok(t) => param.set_value(t),
            Err(e) => problem = Some(e),
        }
    });
    match problem {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
