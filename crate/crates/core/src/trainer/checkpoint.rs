//! Versioned little-endian checkpoint of the full training state.
//!
//! Layout: magic `BTMCKPT\0`, version (u32), dtype tag, `D K V B` (u64),
//! prior shape and rate (f64), step (u64), embedded config TOML, the eight
//! variational tensors, classifier weights and bias, then an optional
//! optimizer section (flag u32; moments of the ten trainable tensors and the
//! per-document θ update counters). Every real is stored as f64.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::io::{write_atomic, BinReader, BinWriter};
use crate::model::{PriorSpec, VariationalParams};
use crate::scalar::Scalar;
use crate::sentiment::{SentimentClassifier, NUM_CLASSES};

use super::adam::Moments;
use super::{AdamState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BTMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub config: Option<TrainConfig>,
    pub priors: PriorSpec<T>,
    pub params: VariationalParams<T>,
    pub classifier: SentimentClassifier<T>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let mut w = BinWriter::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(T::DTYPE);
        for n in [dims.docs, dims.topics, dims.terms, dims.brands] {
            w.u64(n as u64);
        }
        w.f64(self.priors.gamma_shape.f64());
        w.f64(self.priors.gamma_rate.f64());
        w.u64(self.step);
        w.str(&self.config.as_ref().map(|c| c.to_toml()).unwrap_or_default());
        for (_, t) in self.params.tensors() {
            w.f64s(t.iter().map(|v| v.f64()));
        }
        w.f64s(self.classifier.weights.iter().map(|v| v.f64()));
        w.f64s(self.classifier.bias.iter().map(|v| v.f64()));
        match &self.adam {
            None => w.u32(0),
            Some(a) => {
                w.u32(1);
                for m in &a.moments {
                    w.f64s(m.m.iter().map(|v| v.f64()));
                    w.f64s(m.v.iter().map(|v| v.f64()));
                }
                for &s in &a.theta_steps {
                    w.u64(s);
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::validation("not a model checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {version}")));
        }
        let dtype = r.str()?;
        if dtype != T::DTYPE {
            log::warn!("checkpoint stored as {dtype}, loading as {}", T::DTYPE);
        }
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = r.u64()? as usize;
        }
        let [d, k, v, b] = dims;
        let priors = PriorSpec {
            gamma_shape: T::c(r.f64()?),
            gamma_rate: T::c(r.f64()?),
        };
        let step = r.u64()?;
        let config_text = r.str()?;
        let config = if config_text.is_empty() {
            None
        } else {
            Some(TrainConfig::from_toml(&config_text)?)
        };
        let read_vec = |r: &mut BinReader, n: usize| -> Result<Vec<T>> {
            Ok(r.f64s(n)?.into_iter().map(T::c).collect())
        };
        let mat = |r: &mut BinReader, rows: usize, cols: usize| -> Result<Array2<T>> {
            Ok(Array2::from_shape_vec((rows, cols), read_vec(r, rows * cols)?).unwrap())
        };
        let params = VariationalParams {
            theta_loc: mat(&mut r, d, k)?,
            theta_scale_raw: mat(&mut r, d, k)?,
            beta_loc: mat(&mut r, k, v)?,
            beta_scale_raw: mat(&mut r, k, v)?,
            eta_loc: mat(&mut r, k, v)?,
            eta_scale_raw: mat(&mut r, k, v)?,
            x_loc: Array1::from(read_vec(&mut r, b)?),
            x_scale_raw: Array1::from(read_vec(&mut r, b)?),
        };
        params.validate()?;
        let classifier = SentimentClassifier {
            weights: mat(&mut r, NUM_CLASSES, v)?,
            bias: Array1::from(read_vec(&mut r, NUM_CLASSES)?),
        };
        let adam = match r.u32()? {
            0 => None,
            1 => {
                let mut moments = Vec::new();
                for n in AdamState::<T>::tensor_lengths(&params) {
                    moments.push(Moments {
                        m: read_vec(&mut r, n)?,
                        v: read_vec(&mut r, n)?,
                    });
                }
                let theta_steps = (0..d).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                Some(AdamState { moments, theta_steps })
            }
            f => return Err(Error::validation(format!("bad optimizer flag {f}"))),
        };
        r.finish()?;
        Ok(Self {
            step,
            config,
            priors,
            params,
            classifier,
            adam,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
