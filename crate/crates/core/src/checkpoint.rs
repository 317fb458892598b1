//! Self-describing model checkpoints stored as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::TargetKind;
use crate::error::{Error, Result};
use crate::nn::{Adam, DescriptorArch, DescriptorNet, Param, UNet, UNetArch};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Descriptor { arch: DescriptorArch },
    Detector { arch: UNetArch, target: TargetKind },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub step: usize,
    pub epoch: usize,
    pub params: Vec<Param>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn descriptor(
        net: &DescriptorNet,
        step: usize,
        epoch: usize,
        optimizer: Option<&Adam>,
    ) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA,
            model: ModelSpec::Descriptor {
                arch: net.arch().clone(),
            },
            step,
            epoch,
            params: net.params().into_iter().cloned().collect(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn detector(
        net: &UNet,
        target: TargetKind,
        step: usize,
        epoch: usize,
        optimizer: Option<&Adam>,
    ) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA,
            model: ModelSpec::Detector {
                arch: *net.arch(),
                target,
            },
            step,
            epoch,
            params: net.params().into_iter().cloned().collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Writes through a temporary file so readers never see a partial
    /// checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.schema_version != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported schema version {}",
                path.display(),
                ck.schema_version
            )));
        }
        Ok(ck)
    }

    pub fn descriptor_net(&self) -> Result<DescriptorNet> {
        match &self.model {
            ModelSpec::Descriptor { arch } => {
                let mut net = DescriptorNet::new(arch.clone(), 0)?;
                net.load_params(&self.params)?;
                Ok(net)
            }
            ModelSpec::Detector { .. } => Err(Error::Checkpoint(
                "expected a descriptor checkpoint, found a detector".into(),
            )),
        }
    }

    pub fn detector_net(&self) -> Result<(UNet, TargetKind)> {
        match &self.model {
            ModelSpec::Detector { arch, target } => {
                let mut net = UNet::new(*arch, 0)?;
                net.load_params(&self.params)?;
                Ok((net, *target))
            }
            ModelSpec::Descriptor { .. } => Err(Error::Checkpoint(
                "expected a detector checkpoint, found a descriptor".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let net = DescriptorNet::new(DescriptorArch::compact(6), 9).unwrap();
        let path = dir.path().join("d.json");
        Checkpoint::descriptor(&net, 3, 1, Some(&Adam::new(1e-4)))
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.step, 3);
        let back = ck.descriptor_net().unwrap();
        for (a, b) in net.params().iter().zip(back.params()) {
            assert_eq!(a.value, b.value);
        }
        assert!(ck.detector_net().is_err());
    }

    #[test]
    fn detector_round_trip_keeps_target() {
        let dir = tempfile::tempdir().unwrap();
        let arch = UNetArch {
            in_channels: 3,
            base_channels: 2,
            depth: 1,
        };
        let net = UNet::new(arch, 4).unwrap();
        let path = dir.path().join("u.json");
        Checkpoint::detector(&net, TargetKind::Ss, 0, 0, None)
            .save(&path)
            .unwrap();
        let (back, t) = Checkpoint::load(&path).unwrap().detector_net().unwrap();
        assert_eq!(t, TargetKind::Ss);
        assert_eq!(back.params()[0].value, net.params()[0].value);
    }

    #[test]
    fn garbage_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, b"{\"nope\":1}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
