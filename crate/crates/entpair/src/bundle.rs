//! Model bundle files.
//!
//! ```text
//! "EPMB"  magic
//! u16 LE  format version (1)
//! u32 LE  header length in bytes
//! header  UTF-8 JSON, see `Header`
//! blobs   FPTN tensors back to back, in header order
//! ```
//!
//! Tensor order: model parameters (trunks, then head, in layer order),
//! then each batchnorm's running mean and running variance, then Adam's
//! first and second moments in parameter order.

use std::fs;
use std::path::Path;

use entpair_core::model::{build_model, ModelBundle, ModelConfig};
use entpair_core::optim::AdamConfig;
use entpair_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::fptn::{decode_prefix, encode_into, FptnError};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EPMB";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    RunningMean,
    RunningVar,
    AdamFirst,
    AdamSecond,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub role: TensorRole,
    pub index: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub adam: AdamConfig,
    /// Completed optimizer updates.
    pub step: u64,
    pub seed: u64,
    pub batchnorm_initialized: Vec<bool>,
    pub tensors: Vec<TensorEntry>,
}

fn tensors(b: &ModelBundle) -> Vec<(TensorRole, usize, &Tensor<f32>)> {
    let mut out = Vec::new();
    for (i, p) in b.model.params().into_iter().enumerate() {
        out.push((TensorRole::Param, i, p));
    }
    for (i, bn) in b.model.batchnorms().into_iter().enumerate() {
        out.push((TensorRole::RunningMean, i, &bn.running_mean));
        out.push((TensorRole::RunningVar, i, &bn.running_var));
    }
    for (i, m) in b.optimizer.first.iter().enumerate() {
        out.push((TensorRole::AdamFirst, i, m));
    }
    for (i, v) in b.optimizer.second.iter().enumerate() {
        out.push((TensorRole::AdamSecond, i, v));
    }
    out
}

pub fn encode_bundle(b: &ModelBundle) -> Result<Vec<u8>, String> {
    let list = tensors(b);
    let header = Header {
        config: b.model.config.clone(),
        adam: b.optimizer.config,
        step: b.optimizer.t,
        seed: b.seed,
        batchnorm_initialized: b.model.batchnorms().iter().map(|bn| bn.initialized).collect(),
        tensors: list
            .iter()
            .map(|(role, index, t)| TensorEntry { role: role.clone(), index: *index, shape: t.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| e.to_string())?;
    let len = u32::try_from(json.len()).map_err(|_| "bundle header too large".to_string())?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in list {
        encode_into(t, &mut out).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle, String> {
    if bytes.len() < 10 || bytes[..4] != MAGIC {
        return Err("not a model bundle (bad magic)".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format!("unsupported bundle version {version}"));
    }
    let len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let body = &bytes[10..];
    if body.len() < len {
        return Err("truncated bundle header".into());
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| format!("bad bundle header: {e}"))?;
    let mut bundle = build_model(&header.config, header.adam, header.seed).map_err(|e| e.to_string())?;
    let expected: Vec<TensorEntry> = tensors(&bundle)
        .into_iter()
        .map(|(role, index, t)| TensorEntry { role, index, shape: t.shape().to_vec() })
        .collect();
    if expected != header.tensors {
        return Err("tensor list does not match the architecture in the header".into());
    }
    let n_bn = bundle.model.batchnorms().len();
    if header.batchnorm_initialized.len() != n_bn {
        return Err(format!("header lists {} batchnorm flags, model has {n_bn}", header.batchnorm_initialized.len()));
    }
    let mut rest = &body[len..];
    let mut blobs = Vec::with_capacity(expected.len());
    for entry in &expected {
        let (t, used) = decode_prefix(rest).map_err(|e: FptnError| format!("tensor {:?} {}: {e}", entry.role, entry.index))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(format!("tensor {:?} {} has shape {:?}, header says {:?}", entry.role, entry.index, t.shape(), entry.shape));
        }
        blobs.push(t);
        rest = &rest[used..];
    }
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes after the last tensor", rest.len()));
    }
    let mut blobs = blobs.into_iter();
    for p in bundle.model.params_mut() {
        *p = blobs.next().expect("counted above");
    }
    for (bn, init) in bundle.model.batchnorms_mut().into_iter().zip(&header.batchnorm_initialized) {
        bn.running_mean = blobs.next().expect("counted above");
        bn.running_var = blobs.next().expect("counted above");
        bn.initialized = *init;
    }
    for m in bundle.optimizer.first.iter_mut().chain(bundle.optimizer.second.iter_mut()) {
        *m = blobs.next().expect("counted above");
    }
    bundle.optimizer.t = header.step;
    Ok(bundle)
}

pub fn write_bundle(b: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = encode_bundle(b).map_err(|m| Error::format(path, m))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use entpair_core::layers::Mode;
    use entpair_core::loss::bce_loss;
    use entpair_core::model::PairBatch;
    use entpair_core::Prng;

    fn trained_bundle(cfg: &ModelConfig) -> (ModelBundle, PairBatch<f32>) {
        let mut b = build_model(cfg, AdamConfig::default(), 5).unwrap();
        let [h, w, c] = cfg.input_shape;
        let mut rng = Prng::new(2);
        let mut side = || (0..cfg.streams()).map(|_| Tensor::from_fn(&[6, h, w, c], |_| rng.normal() as f32)).collect();
        let batch = PairBatch { left: side(), right: side() };
        let targets = [0.0f32, 1.0, 1.0, 0.0, 1.0, 0.0];
        for _ in 0..2 {
            let (p, cache) = b.model.forward(&batch, Mode::Train, &mut rng).unwrap();
            let g: Vec<f32> = p.data().iter().zip(targets).map(|(&pi, y)| bce_loss(pi, y).unwrap().1 / 6.0).collect();
            let grads = b.model.param_grads(&cache, &Tensor::new(vec![6, 1], g).unwrap()).unwrap();
            b.model.commit(&cache);
            b.optimizer.update(b.model.params_mut(), &grads).unwrap();
        }
        (b, batch)
    }

    #[test]
    fn round_trip_preserves_eval_outputs_bit_exactly() {
        for cfg in [
            ModelConfig::fullface([6, 6, 2]).with_widths(2, 4),
            ModelConfig::landmark_combined([6, 6, 2], ["eyes", "nose", "mouth"]).with_widths(2, 0),
        ] {
            let (b, batch) = trained_bundle(&cfg);
            let bytes = encode_bundle(&b).unwrap();
            let back = decode_bundle(&bytes).unwrap();
            assert_eq!(back, b);
            let bits = |m: &ModelBundle| m.model.logits(&batch).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&b));
            assert_eq!(encode_bundle(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_bundles_are_rejected() {
        let (b, _) = trained_bundle(&ModelConfig::fullface([6, 6, 2]).with_widths(2, 4));
        let bytes = encode_bundle(&b).unwrap();
        assert!(decode_bundle(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_bundle(&extra).unwrap_err().contains("trailing"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_bundle(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(decode_bundle(&bad).unwrap_err().contains("version"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bundle");
        let (b, _) = trained_bundle(&ModelConfig::landmark_single([6, 6, 2], "nose").with_widths(2, 0));
        write_bundle(&b, &path).unwrap();
        assert_eq!(read_bundle(&path).unwrap(), b);
    }
}
