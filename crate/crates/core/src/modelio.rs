//! Single-file model format shared by the CNN and the SVM.
//!
//! ```text
//! magic        8 bytes   "FGNETMDL"
//! version      u32 LE    1
//! kind         u8        1 = cnn, 2 = svm
//! arch_len     u32 LE    byte length of the architecture text
//! arch         UTF-8     `key=value` lines
//! n_params     u64 LE
//! params       n_params × f64 LE, layer order
//! ```
//!
//! CNN architecture keys are `input_length`, `n_classes` and `layers`
//! (comma-separated layer list). Parameters per layer are weights then
//! bias; batch norm stores gamma, beta, running mean, running variance.
//! SVM keys are `n_features` and `n_classes`; parameters are the weight
//! matrix row by row, then the biases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::baselines::LinearSvmModel;
use crate::error::{Error, Result};
use crate::neuralnet::{format_architecture, parse_architecture, Network, Tensor};
use crate::types::RngSeed;

pub const MAGIC: &[u8; 8] = b"FGNETMDL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Cnn = 1,
    Svm = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cnn(Network),
    Svm(LinearSvmModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Cnn(_) => ModelKind::Cnn,
            Model::Svm(_) => ModelKind::Svm,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (arch, params) = match self {
            Model::Cnn(net) => (
                format!(
                    "input_length={}\nn_classes={}\nlayers={}\n",
                    net.input_length(),
                    net.n_classes(),
                    format_architecture(&net.specs())
                ),
                net.layers()
                    .iter()
                    .flat_map(|l| l.state())
                    .flatten()
                    .copied()
                    .collect::<Vec<f64>>(),
            ),
            Model::Svm(m) => (
                format!("n_features={}\nn_classes={}\n", m.n_features(), m.n_classes()),
                m.weights()
                    .data()
                    .iter()
                    .chain(m.biases().data())
                    .copied()
                    .collect(),
            ),
        };
        let mut out = Vec::with_capacity(32 + arch.len() + params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind() as u8);
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(arch.as_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(fmt_err(&format!("unsupported version {version}")));
        }
        let kind = r.take(1)?[0];
        let arch_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let arch = std::str::from_utf8(r.take(arch_len)?)
            .map_err(|_| fmt_err("architecture is not UTF-8"))?;
        let keys = parse_keys(arch)?;
        let n_params = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let raw = r.take(n_params.checked_mul(8).ok_or_else(|| fmt_err("parameter count overflow"))?)?;
        if r.pos != bytes.len() {
            return Err(fmt_err("trailing bytes after parameters"));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let usize_key = |k: &str| -> Result<usize> {
            keys.get(k)
                .ok_or_else(|| fmt_err(&format!("missing key `{k}`")))?
                .parse()
                .map_err(|_| fmt_err(&format!("invalid `{k}`")))
        };
        match kind {
            1 => {
                let specs = parse_architecture(
                    keys.get("layers").ok_or_else(|| fmt_err("missing key `layers`"))?,
                )?;
                let mut net = Network::new(usize_key("input_length")?, usize_key("n_classes")?, &specs, RngSeed(0))?;
                let expected: usize = net.layers().iter().flat_map(|l| l.state()).map(<[f64]>::len).sum();
                if expected != params.len() {
                    return Err(fmt_err(&format!(
                        "architecture needs {expected} parameters, file has {}",
                        params.len()
                    )));
                }
                let mut it = params.into_iter();
                for layer in net.layers_mut() {
                    for slot in layer.state_mut() {
                        for v in slot.iter_mut() {
                            *v = it.next().expect("count checked");
                        }
                    }
                }
                Ok(Model::Cnn(net))
            }
            2 => {
                let (d, k) = (usize_key("n_features")?, usize_key("n_classes")?);
                if params.len() != k * d + k {
                    return Err(fmt_err(&format!(
                        "svm needs {} parameters, file has {}",
                        k * d + k,
                        params.len()
                    )));
                }
                let biases = params[k * d..].to_vec();
                let mut weights = params;
                weights.truncate(k * d);
                Ok(Model::Svm(LinearSvmModel::new(
                    Tensor::new(vec![k, d], weights)?,
                    Tensor::new(vec![k], biases)?,
                )?))
            }
            other => Err(fmt_err(&format!("unknown model kind {other}"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }
}

fn fmt_err(msg: &str) -> Error {
    Error::ModelFormat(msg.to_string())
}

fn parse_keys(arch: &str) -> Result<BTreeMap<&str, &str>> {
    arch.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fmt_err(&format!("bad architecture line `{l}`")))
        })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| fmt_err("unexpected end of file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Mode, LayerSpec};
    use crate::types::{Spectrum, INPUT_LENGTH};

    #[test]
    fn cnn_round_trip_is_bit_exact() {
        let mut net = Network::with_default_architecture(RngSeed(3)).unwrap();
        // move running stats away from their defaults
        let s = Spectrum::new((0..INPUT_LENGTH).map(|i| 1.0 + (i % 99) as f64).collect(), 4000.0, 1400.0, true).unwrap();
        let x = net.batch_input(&[&s, &s]).unwrap();
        net.forward(&x, Mode::Train, &mut RngSeed(1).rng()).unwrap();
        let model = Model::Cnn(net);
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn svm_round_trip_is_bit_exact() {
        let w: Vec<f64> = (0..28).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let m = Model::Svm(
            LinearSvmModel::new(Tensor::new(vec![14, 2], w).unwrap(), Tensor::filled(&[14], -0.1)).unwrap(),
        );
        assert_eq!(Model::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let specs = [LayerSpec::Flatten, LayerSpec::Dense { out_features: 2 }];
        let net = Network::new(3, 2, &specs, RngSeed(0)).unwrap();
        let bytes = Model::Cnn(net).to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(Model::from_bytes(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
    }
}
