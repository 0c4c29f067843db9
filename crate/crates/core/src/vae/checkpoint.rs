//! Model persistence on top of the shared tensor container. Batch-norm
//! running statistics travel with the weights, so a loaded model is
//! inference-ready without further state.

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_bundle, write_bundle, TensorBundle};
use crate::nn::ParamStore;
use crate::sim::{substream, StreamDomain};
use crate::vae::model::{ModelParameters, TrainMeta, VaeModel};
use crate::vae::VaeArch;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct VaeMeta {
    arch: VaeArch,
    train: TrainMeta,
}

pub fn save_model(params: &ModelParameters, path: &Path) -> Result<()> {
    let meta = serde_json::to_value(VaeMeta {
        arch: params.arch,
        train: params.train_meta.clone(),
    })?;
    let bundle = TensorBundle {
        kind: "vae".into(),
        meta,
        tensors: params.store.export_tensors(),
    };
    write_bundle(&bundle, path)
}

pub fn load_model(path: &Path) -> Result<ModelParameters> {
    let bundle = read_bundle(path)?;
    if bundle.kind != "vae" {
        return Err(Error::Format(format!(
            "checkpoint kind {:?}, expected \"vae\"",
            bundle.kind
        )));
    }
    let meta: VaeMeta = serde_json::from_value(bundle.meta)?;
    let mut store = ParamStore::<f32>::new();
    // The throwaway init only defines tensor names and shapes; the import
    // overwrites every value.
    let mut rng = substream(0, StreamDomain::Init, 0, 0);
    let model = VaeModel::build(&meta.arch, &mut store, &mut rng)?;
    store.import_tensors(&bundle.tensors)?;
    Ok(ModelParameters::from_parts(model, store, meta.train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{SnapshotBatch, SourceScene};
    use crate::vae::{encode, infer_spectrum, VaeVariant};
    use ndarray::Array2;
    use num_complex::Complex64;
    use rand::Rng;

    fn arch() -> VaeArch {
        VaeArch {
            n_antennas: 6,
            oversampling: 2,
            latent_dim: 3,
            variant: VaeVariant::LearnedNoise,
        }
    }

    #[test]
    fn round_trip_preserves_inference_bit_exactly() {
        let params = ModelParameters::init(&arch(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        save_model(&params, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.arch, params.arch);
        assert_eq!(back.train_meta, params.train_meta);

        let mut rng = substream(30, StreamDomain::Sample, 0, 0);
        let y = Array2::from_shape_fn((6, 3), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let snap: Vec<Complex64> = (0..6).map(|r| y[(r, 0)]).collect();
        let pa = encode(&snap, &params).unwrap();
        let pb = encode(&snap, &back).unwrap();
        assert_eq!(pa, pb);

        let batch = SnapshotBatch {
            y,
            noise_var: 0.5,
            scene: SourceScene::empty(),
            snr_db: 3.0,
        };
        let sa = infer_spectrum(&batch, &params).unwrap();
        let sb = infer_spectrum(&batch, &back).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let params = ModelParameters::init(&arch(), 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("other.ckpt");
        let bundle = TensorBundle {
            kind: "covnet".into(),
            meta: serde_json::json!({}),
            tensors: params.store.export_tensors(),
        };
        write_bundle(&bundle, &path).unwrap();
        assert!(load_model(&path).is_err());
    }
}
