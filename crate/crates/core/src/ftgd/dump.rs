//! Sparse dump of a differential restricted to its subspace.
//!
//! ```text
//! magic       8 bytes "TSGDELTA"
//! version     u32 LE
//! checkpoint  u16 LE length + UTF-8 (checkpoint hash)
//! paradigm    u16 LE length + UTF-8
//! epsilon     f64 LE
//! n_params    u64 LE   size of the full parameter vector
//! total_mass  f64 LE   L1 norm of the full gΔ
//! n           u64 LE
//! n x (index u64 LE, gΔ value f64 LE), indices ascending
//! ```

use std::path::Path;

use thiserror::Error;

use super::{FtgdError, GradientDifferential, ParamSubspace};

const MAGIC: &[u8; 8] = b"TSGDELTA";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("dump i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a differential dump (bad magic)")]
    BadMagic,
    #[error("dump format version {0}, expected {VERSION}")]
    VersionMismatch(u32),
    #[error("dump truncated")]
    Truncated,
    #[error("malformed dump: {0}")]
    Malformed(String),
}

/// The part of a gradient differential that downstream analysis needs: gΔ
/// on θ₀ plus the size and L1 mass of the full vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDelta {
    pub checkpoint: String,
    pub paradigm: String,
    pub epsilon: f64,
    pub n_params: usize,
    pub total_mass: f64,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SubspaceDelta {
    pub fn new(gd: &GradientDifferential, subspace: &ParamSubspace) -> Result<Self, FtgdError> {
        if subspace.paradigm != gd.paradigm {
            return Err(FtgdError::Mismatch(format!(
                "subspace of `{}` paired with differential of `{}`",
                subspace.paradigm, gd.paradigm
            )));
        }
        if subspace.indices.last().is_some_and(|&i| i >= gd.len()) {
            return Err(FtgdError::Mismatch("subspace index beyond parameter count".into()));
        }
        Ok(Self {
            checkpoint: gd.checkpoint.clone(),
            paradigm: gd.paradigm.clone(),
            epsilon: subspace.epsilon,
            n_params: gd.len(),
            total_mass: gd.total_mass(),
            indices: subspace.indices.clone(),
            values: subspace.indices.iter().map(|&i| gd.g_delta[i]).collect(),
        })
    }

    pub fn subspace(&self) -> ParamSubspace {
        ParamSubspace {
            indices: self.indices.clone(),
            epsilon: self.epsilon,
            paradigm: self.paradigm.clone(),
        }
    }

    pub fn param_fraction(&self) -> f64 {
        self.indices.len() as f64 / self.n_params as f64
    }

    pub fn mass_fraction(&self) -> f64 {
        if self.total_mass == 0.0 {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.total_mass
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 16 * self.indices.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for s in [&self.checkpoint, &self.paradigm] {
            out.extend_from_slice(&(s.len() as u16).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.n_params as u64).to_le_bytes());
        out.extend_from_slice(&self.total_mass.to_le_bytes());
        out.extend_from_slice(&(self.indices.len() as u64).to_le_bytes());
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out.extend_from_slice(&(i as u64).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DumpError> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8], DumpError> {
            let s = bytes.get(pos..pos + n).ok_or(DumpError::Truncated)?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(DumpError::BadMagic);
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(DumpError::VersionMismatch(version));
        }
        let mut text = || -> Result<String, DumpError> {
            let n = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            String::from_utf8(take(n)?.to_vec()).map_err(|_| DumpError::Malformed("string is not UTF-8".into()))
        };
        let checkpoint = text()?;
        let paradigm = text()?;
        let mut u64_at = || -> Result<u64, DumpError> { Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"))) };
        let epsilon = f64::from_bits(u64_at()?);
        let n_params = u64_at()? as usize;
        let total_mass = f64::from_bits(u64_at()?);
        let n = u64_at()? as usize;
        if n > n_params {
            return Err(DumpError::Malformed(format!("{n} entries for {n_params} parameters")));
        }
        let mut indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let i = u64_at()? as usize;
            if i >= n_params || indices.last().is_some_and(|&p| p >= i) {
                return Err(DumpError::Malformed(format!("index {i} out of order or range")));
            }
            indices.push(i);
            values.push(f64::from_bits(u64_at()?));
        }
        if pos != bytes.len() {
            return Err(DumpError::Malformed(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            checkpoint,
            paradigm,
            epsilon,
            n_params,
            total_mass,
            indices,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DumpError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DumpError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftgd::select_subspace;

    fn gd() -> GradientDifferential {
        GradientDifferential::from_parts(
            vec![0.5, 0.0011, 0.0, -0.02].into(),
            vec![0.2, 0.0002, 0.0, 0.01].into(),
            "p",
            "abc",
        )
    }

    #[test]
    fn round_trip_and_fractions() {
        let gd = gd();
        let sub = select_subspace(&gd, 1e-3).unwrap();
        let d = SubspaceDelta::new(&gd, &sub).unwrap();
        assert_eq!(d.indices, vec![0, 3]);
        assert_eq!(SubspaceDelta::from_bytes(&d.to_bytes()).unwrap(), d);
        assert_eq!(d.param_fraction(), 0.5);
        let total = 0.3 + (0.0011f64 - 0.0002) + 0.03;
        assert!((d.mass_fraction() - (0.3 + 0.03) / total).abs() < 1e-12);
        assert_eq!(d.subspace(), sub);
    }

    #[test]
    fn damaged_dumps_are_rejected() {
        let gd = gd();
        let d = SubspaceDelta::new(&gd, &select_subspace(&gd, 1e-3).unwrap()).unwrap();
        let bytes = d.to_bytes();
        assert!(matches!(SubspaceDelta::from_bytes(&bytes[..bytes.len() - 3]), Err(DumpError::Truncated)));
        assert!(matches!(SubspaceDelta::from_bytes(b"XXXXXXXXXXXX"), Err(DumpError::BadMagic)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(SubspaceDelta::from_bytes(&extra), Err(DumpError::Malformed(_))));
    }
}
