//! Run configuration: a TOML tree with environment overrides and a
//! canonical resolved dump.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::{
    estimate_roi, BatchSpec, HsvRanges, NoiseConfig, RoiMask, SamplingMode, DEFAULT_ROI_THRESHOLD,
};
use crate::descriptor::{AnchorMode, DescriptorTrainConfig, FastApConfig};
use crate::detector::{DetectorTrainConfig, TargetKind};
use crate::error::{Error, Result};
use crate::evaluation::{SyntheticPairConfig, DEFAULT_MAX_THRESHOLD};
use crate::geometry::{AffineRanges, Interpolation};
use crate::nn::{DescriptorArch, UNetArch};
use crate::raster::{Image, Mask};
use crate::registration::RegisterConfig;
use crate::training::{Seeds, TrainImage};

/// Prefix for environment overrides: `UNCONKED__SECTION__KEY=value`.
pub const ENV_PREFIX: &str = "UNCONKED__";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Seeds,
    pub data: DataConfig,
    pub augmentation: AugmentationConfig,
    pub fastap: FastApConfig,
    pub descriptor: DescriptorSection,
    pub detector: DetectorSection,
    pub inference: RegisterConfig,
    pub evaluation: EvaluationConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of training images (PNG or JPEG).
    pub images: Option<PathBuf>,
    /// Optional RoI masks, matched to images by file stem.
    pub masks: Option<PathBuf>,
    /// Square side images are resized to before training.
    pub resize: Option<usize>,
    pub roi_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            images: None,
            masks: None,
            resize: None,
            roi_threshold: DEFAULT_ROI_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub n_views: usize,
    pub sampling: SamplingMode,
    pub interpolation: Interpolation,
    pub affine: AffineRanges,
    pub hsv: HsvRanges,
    pub noise: NoiseConfig,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        let b = BatchSpec::default();
        Self {
            n_views: b.n_views,
            sampling: b.sampling,
            interpolation: b.interpolation,
            affine: b.affine,
            hsv: b.hsv,
            noise: b.noise,
        }
    }
}

impl AugmentationConfig {
    pub fn batch_spec(&self, point_count: usize) -> BatchSpec {
        BatchSpec {
            n_views: self.n_views,
            affine: self.affine,
            hsv: self.hsv,
            noise: self.noise,
            point_count,
            sampling: self.sampling,
            interpolation: self.interpolation,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorProfile {
    /// Seven dilated 3x3 layers up to 128 channels.
    #[default]
    L2net,
    /// Four dilated layers up to 32 channels.
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorSection {
    pub profile: DescriptorProfile,
    pub dim: usize,
    pub points: usize,
    pub lr: f64,
    pub epochs: usize,
    pub anchors: AnchorMode,
}

impl Default for DescriptorSection {
    fn default() -> Self {
        let d = DescriptorTrainConfig::default();
        Self {
            profile: DescriptorProfile::L2net,
            dim: 128,
            points: d.batch.point_count,
            lr: d.lr,
            epochs: d.epochs,
            anchors: d.anchors,
        }
    }
}

impl DescriptorSection {
    pub fn arch(&self) -> DescriptorArch {
        match self.profile {
            DescriptorProfile::L2net => DescriptorArch::l2net(self.dim),
            DescriptorProfile::Compact => DescriptorArch::compact(self.dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub target: TargetKind,
    pub base_channels: usize,
    pub depth: usize,
    pub points: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorTrainConfig::default();
        Self {
            target: d.target,
            base_channels: d.arch.base_channels,
            depth: d.arch.depth,
            points: d.batch.point_count,
            lr: d.lr,
            epochs: d.epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub max_threshold: usize,
    /// Fractions of the closest matches used for the keypoint-distance sweep.
    pub sweep: Vec<f64>,
    pub synthetic: SyntheticPairConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            max_threshold: DEFAULT_MAX_THRESHOLD,
            sweep: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            synthetic: SyntheticPairConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Optimizer steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty::<(String, String)>())
    }

    /// Parses `text`, applies `UNCONKED__*` overrides from `vars` and
    /// validates the result.
    pub fn from_toml_with_env<K, V>(
        text: &str,
        vars: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let k = k.as_ref();
                k.strip_prefix(ENV_PREFIX)
                    .map(|rest| (rest.to_string(), v.as_ref().to_string()))
            })
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            apply_override(&mut table, &key, &raw)?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies overrides from the process environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_with_env(&text, std::env::vars())
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor_train_config().validate()?;
        self.detector_train_config().validate()?;
        self.inference.validate()?;
        self.evaluation.synthetic.validate()?;
        if self.evaluation.max_threshold == 0 {
            return Err(Error::Config(
                "evaluation.max_threshold must be at least 1".into(),
            ));
        }
        if let Some(f) = self
            .evaluation
            .sweep
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return Err(Error::Config(format!(
                "evaluation.sweep fraction {f} outside (0, 1]"
            )));
        }
        if self.data.resize.is_some_and(|s| s < 8) {
            return Err(Error::Config("data.resize must be at least 8".into()));
        }
        Ok(())
    }

    pub fn descriptor_train_config(&self) -> DescriptorTrainConfig {
        DescriptorTrainConfig {
            arch: self.descriptor.arch(),
            batch: self.augmentation.batch_spec(self.descriptor.points),
            fastap: self.fastap,
            lr: self.descriptor.lr,
            epochs: self.descriptor.epochs,
            anchors: self.descriptor.anchors,
            seeds: self.seeds,
        }
    }

    pub fn detector_train_config(&self) -> DetectorTrainConfig {
        DetectorTrainConfig {
            arch: UNetArch {
                in_channels: 3,
                base_channels: self.detector.base_channels,
                depth: self.detector.depth,
            },
            target: self.detector.target,
            batch: self.augmentation.batch_spec(self.detector.points),
            fastap: self.fastap,
            lr: self.detector.lr,
            epochs: self.detector.epochs,
            seeds: self.seeds,
        }
    }

    /// Canonical TOML of every resolved field.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!(
            "malformed override key {ENV_PREFIX}{key}"
        )));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {ENV_PREFIX}{key}: `{p}` is not a section"
            ))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "tif"];

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Loads every image in `data.images`, resizes it and attaches an RoI: the
/// mask with the same stem from `data.masks` when present, otherwise an
/// estimate. Images whose RoI cannot be estimated are skipped with a
/// warning.
pub fn load_training_images(data: &DataConfig) -> Result<Vec<TrainImage>> {
    let dir = data
        .images
        .as_ref()
        .ok_or_else(|| Error::Config("data.images is not set".into()))?;
    let mut out = Vec::new();
    for path in list_images(dir)? {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let mut image = Image::load(&path)?;
        if let Some(s) = data.resize {
            image = image.resize(s, s);
        }
        let mask_path = data
            .masks
            .as_ref()
            .map(|m| m.join(format!("{name}.png")))
            .filter(|p| p.is_file());
        let roi = match mask_path {
            Some(p) => RoiMask::loaded(Mask::load_png(&p)?.resize(image.width(), image.height()))?,
            None => match estimate_roi(&image, data.roi_threshold) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
            },
        };
        out.push(TrainImage { name, image, roi });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no usable images in {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_settings() {
        let c = RunConfig::default();
        assert_eq!(c.fastap.bins, 10);
        assert_eq!(c.augmentation.n_views, 9);
        assert_eq!((c.descriptor.points, c.detector.points), (1460, 250));
        assert_eq!((c.descriptor.epochs, c.detector.epochs), (1000, 400));
        assert_eq!((c.descriptor.lr, c.detector.lr), (1e-4, 1e-4));
        assert_eq!(c.inference.nms_window, 11);
        assert_eq!(c.inference.inference_size, 565);
        assert_eq!(c.evaluation.max_threshold, 25);
        c.validate().unwrap();
    }

    #[test]
    fn resolved_dump_round_trips_and_is_stable() {
        let c = RunConfig::from_toml_str("[fastap]\nbins = 12\n[inference]\nkeypoints = \"all\"\n")
            .unwrap();
        let a = c.resolved_toml().unwrap();
        assert_eq!(a, c.resolved_toml().unwrap());
        let back = RunConfig::from_toml_str(&a).unwrap();
        assert_eq!(back, c);
        assert!(a.contains("bins = 12"));
        let d = RunConfig::default().resolved_toml().unwrap();
        assert!(d.contains("bins = 10") && d.contains("lr = 0.0001"), "{d}");
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(matches!(
            RunConfig::from_toml_str("[fastap]\nbinz = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[nope]\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("[detector]\ntarget = \"xy\"\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn environment_overrides() {
        let vars = [
            ("UNCONKED__FASTAP__BINS", "20"),
            ("UNCONKED__DETECTOR__TARGET", "ap"),
            ("UNCONKED__INFERENCE__KEYPOINTS", "all"),
            ("UNCONKED__INFERENCE__RANSAC__MAX_ITERS", "50"),
            ("OTHER", "x"),
        ];
        let c = RunConfig::from_toml_with_env("[fastap]\nbins = 5\n", vars).unwrap();
        assert_eq!(c.fastap.bins, 20);
        assert_eq!(c.detector.target, TargetKind::Ap);
        assert_eq!(c.inference.keypoints, crate::detector::KeypointBudget::All);
        assert_eq!(c.inference.ransac.max_iters, 50);
        assert!(RunConfig::from_toml_with_env("", [("UNCONKED__FASTAP__NOPE", "1")]).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_toml_str("[descriptor]\nlr = -1.0\n").is_err());
        assert!(RunConfig::from_toml_str("[evaluation]\nsweep = [0.0]\n").is_err());
        assert!(RunConfig::from_toml_str("[inference]\nnms_window = 4\n").is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = RunConfig::load("/nonexistent/run.toml").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("/nonexistent/run.toml")));
    }
}
