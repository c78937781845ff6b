//! On-disk model directory: one checkpoint per network plus a `models.json`
//! index recording each checkpoint's file name and architecture.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Models, SpnConfig, SpnModel, TpnConfig, TpnModel, TsafnConfig, TsafnModel};
use crate::error::{Error, Result};
use crate::nnkernel::{load_checkpoint, save_checkpoint, ModelParams};

pub const MODEL_INDEX_FILE: &str = "models.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Tpn,
    Spn,
    Tsafn,
}

impl ModelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Tpn => "tpn",
            ModelRole::Spn => "spn",
            ModelRole::Tsafn => "tsafn",
        }
    }

    pub fn checkpoint_file(self) -> String {
        format!("{}.txsw", self.as_str())
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEntry<A> {
    /// Path relative to the model directory.
    pub checkpoint: String,
    pub arch: A,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelIndex {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpn: Option<RoleEntry<TpnConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spn: Option<RoleEntry<SpnConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsafn: Option<RoleEntry<TsafnConfig>>,
}

impl ModelIndex {
    /// Reads the index; a directory without one yields an empty index.
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_INDEX_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MODEL_INDEX_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// A network that can be stored in a model directory.
pub trait StoredModel: Sized {
    type Arch: Clone;
    const ROLE: ModelRole;

    fn arch(&self) -> &Self::Arch;
    fn params(&self) -> &ModelParams<f32>;
    fn template(arch: Self::Arch) -> Result<Self>;
    fn rebuild(arch: Self::Arch, params: ModelParams<f32>) -> Result<Self>;
    fn entry(index: &ModelIndex) -> Option<&RoleEntry<Self::Arch>>;
    fn set_entry(index: &mut ModelIndex, entry: RoleEntry<Self::Arch>);
}

macro_rules! stored {
    ($ty:ident, $arch:ident, $role:ident, $field:ident) => {
        impl StoredModel for $ty {
            type Arch = $arch;
            const ROLE: ModelRole = ModelRole::$role;

            fn arch(&self) -> &$arch {
                &self.config
            }
            fn params(&self) -> &ModelParams<f32> {
                &self.params
            }
            fn template(arch: $arch) -> Result<Self> {
                $ty::new(arch, 0)
            }
            fn rebuild(arch: $arch, params: ModelParams<f32>) -> Result<Self> {
                $ty::from_params(arch, params)
            }
            fn entry(index: &ModelIndex) -> Option<&RoleEntry<$arch>> {
                index.$field.as_ref()
            }
            fn set_entry(index: &mut ModelIndex, entry: RoleEntry<$arch>) {
                index.$field = Some(entry);
            }
        }
    };
}

stored!(TpnModel, TpnConfig, Tpn, tpn);
stored!(SpnModel, SpnConfig, Spn, spn);
stored!(TsafnModel, TsafnConfig, Tsafn, tsafn);

/// Writes the checkpoint and updates the index entry for the model's role.
pub fn save_role<M: StoredModel>(dir: &Path, model: &M) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = ModelIndex::read(dir)?;
    let file = M::ROLE.checkpoint_file();
    save_checkpoint(model.params(), dir.join(&file))?;
    M::set_entry(
        &mut index,
        RoleEntry {
            checkpoint: file,
            arch: model.arch().clone(),
        },
    );
    index.write(dir)
}

/// Loads one role, failing with [`Error::MissingCheckpoint`] when the index
/// has no entry for it or the checkpoint file is absent.
pub fn load_role<M: StoredModel>(dir: &Path) -> Result<M> {
    let index = ModelIndex::read(dir)?;
    let missing = || Error::MissingCheckpoint(M::ROLE.to_string());
    let entry = M::entry(&index).ok_or_else(missing)?;
    let path = dir.join(&entry.checkpoint);
    if !path.is_file() {
        return Err(missing());
    }
    let template = M::template(entry.arch.clone())?;
    let params = load_checkpoint(template.params(), &path)?;
    M::rebuild(entry.arch.clone(), params)
}

pub fn load_models(dir: &Path) -> Result<Models> {
    Ok(Models {
        tpn: load_role(dir)?,
        spn: load_role(dir)?,
        tsafn: load_role(dir)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_missing_roles() {
        let dir = tempfile::tempdir().unwrap();
        let tpn = TpnModel::new(TpnConfig::default(), 4).unwrap();
        save_role(dir.path(), &tpn).unwrap();
        let back: TpnModel = load_role(dir.path()).unwrap();
        assert_eq!(back, tpn);
        let err = load_role::<SpnModel>(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing checkpoint: spn");
        assert!(matches!(load_models(dir.path()), Err(Error::MissingCheckpoint(r)) if r == "spn"));
    }

    #[test]
    fn architecture_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_role(dir.path(), &SpnModel::new(SpnConfig::default(), 1).unwrap()).unwrap();
        let mut index = ModelIndex::read(dir.path()).unwrap();
        index.spn.as_mut().unwrap().arch.widths = [4, 4, 4];
        index.write(dir.path()).unwrap();
        assert!(matches!(load_role::<SpnModel>(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn index_json_names_roles() {
        let dir = tempfile::tempdir().unwrap();
        save_role(dir.path(), &TsafnModel::new(TsafnConfig::default(), 1).unwrap()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MODEL_INDEX_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["tsafn"]["checkpoint"], "tsafn.txsw");
        assert_eq!(v["tsafn"]["arch"]["kernels"], serde_json::json!([7, 5, 3, 5]));
        assert!(v.get("tpn").is_none());
    }
}
