use std::path::Path;

use super::{MstConfig, MstModel};
use crate::error::{MstError, Result};
use crate::hsit::Bundle;
use crate::tensor::Scalar;

impl<T: Scalar> MstModel<T> {
    /// Serialises the configuration and every parameter tensor.
    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        Bundle { manifest: self.config().to_kv(), entries }.encode()
    }

    /// Rebuilds a model from [`MstModel::to_bytes`] output. The bundle must
    /// name exactly the tensors the stored configuration implies, with
    /// matching shapes; otherwise nothing is constructed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bundle = Bundle::<T>::decode(bytes)?;
        let cfg =
            MstConfig::from_kv(&bundle.manifest).map_err(|e| MstError::Integrity(format!("bad manifest: {e}")))?;
        let mut model = Self::new(cfg, 0)?;
        model.params_mut().replace_all(bundle.entries)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
