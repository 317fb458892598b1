//! Registration pair manifests (JSON lines) and control-point files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ControlPointPair;
use crate::geometry::{Homography, PointSet};

/// One registration pair. Relative paths resolve against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fixed: PathBuf,
    pub moving: PathBuf,
    /// Vessel masks for the overlap metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_mask: Option<PathBuf>,
    /// Field-of-view masks; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_roi: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_roi: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Moving-to-fixed homography, row major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_homography: Option<[f64; 9]>,
}

impl PairRecord {
    pub fn new(fixed: impl Into<PathBuf>, moving: impl Into<PathBuf>) -> Self {
        Self {
            name: None,
            fixed: fixed.into(),
            moving: moving.into(),
            fixed_mask: None,
            moving_mask: None,
            fixed_roi: None,
            moving_roi: None,
            control_points: None,
            category: None,
            true_homography: None,
        }
    }

    pub fn display_name(&self, index: usize) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("pair_{index:04}"))
    }

    pub fn true_transform(&self) -> Option<Homography> {
        self.true_homography.map(Homography::from_row_major)
    }

    fn paths(&self) -> Vec<&PathBuf> {
        let opt = [
            &self.fixed_mask,
            &self.moving_mask,
            &self.fixed_roi,
            &self.moving_roi,
            &self.control_points,
        ];
        let mut v = vec![&self.fixed, &self.moving];
        v.extend(opt.into_iter().flatten());
        v
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [&mut self.fixed, &mut self.moving].into_iter().chain(
            [
                &mut self.fixed_mask,
                &mut self.moving_mask,
                &mut self.fixed_roi,
                &mut self.moving_roi,
                &mut self.control_points,
            ]
            .into_iter()
            .filter_map(Option::as_mut),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairManifest {
    pub pairs: Vec<PairRecord>,
}

impl PairManifest {
    /// Parses JSON lines; blank lines and lines starting with `#` are
    /// skipped. Paths stay as written.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Config(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs })
    }

    /// Reads, resolves relative paths against the manifest's directory and
    /// checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &mut m.pairs {
            for p in r.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.pairs.iter().enumerate() {
            if let Some(p) = r.paths().into_iter().find(|p| !p.is_file()) {
                return Err(Error::Config(format!(
                    "pair {}: missing file {}",
                    i + 1,
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.pairs {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

/// Whitespace-separated `x_fixed y_fixed x_moving y_moving` per line.
pub fn parse_control_points(text: &str) -> Result<ControlPointPair> {
    let mut fixed = Vec::new();
    let mut moving = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("control points line {}: {e}", i + 1)))?;
        if v.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "control points line {}: expected 4 values, got {}",
                i + 1,
                v.len()
            )));
        }
        fixed.push([v[0], v[1]]);
        moving.push([v[2], v[3]]);
    }
    ControlPointPair::new(PointSet::from_coords(fixed), PointSet::from_coords(moving))
}

pub fn load_control_points(path: impl AsRef<Path>) -> Result<ControlPointPair> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_control_points(&text)
}

pub fn format_control_points(cp: &ControlPointPair) -> String {
    let mut s = String::with_capacity(cp.len() * 48);
    for (f, m) in cp.fixed.coords.iter().zip(&cp.moving.coords) {
        s.push_str(&format!("{} {} {} {}\n", f[0], f[1], m[0], m[1]));
    }
    s
}

pub fn save_control_points(path: impl AsRef<Path>, cp: &ControlPointPair) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_control_points(cp)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_points_round_trip() {
        let cp = ControlPointPair::new(
            PointSet::from_coords(vec![[1.5, 2.0], [0.1, 1e-3]]),
            PointSet::from_coords(vec![[3.0, 4.25], [7.0, 8.0]]),
        )
        .unwrap();
        assert_eq!(
            parse_control_points(&format_control_points(&cp)).unwrap(),
            cp
        );
        assert!(parse_control_points("1 2 3\n").is_err());
        assert!(parse_control_points("1 2 3 x\n").is_err());
    }

    #[test]
    fn manifest_resolves_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"").unwrap();
        std::fs::write(dir.path().join("b.png"), b"").unwrap();
        let mut r = PairRecord::new("a.png", "b.png");
        r.category = Some("S".into());
        r.true_homography = Some([1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let m = PairManifest { pairs: vec![r] };
        let path = dir.path().join("m.jsonl");
        m.save(&path).unwrap();
        let loaded = PairManifest::load(&path).unwrap();
        assert_eq!(loaded.pairs[0].fixed, dir.path().join("a.png"));
        assert_eq!(
            loaded.pairs[0].true_transform().unwrap().to_row_major()[2],
            2.0
        );

        let mut bad = m.clone();
        bad.pairs[0].control_points = Some("missing.txt".into());
        bad.save(&path).unwrap();
        assert!(
            matches!(PairManifest::load(&path), Err(Error::Config(m)) if m.contains("missing.txt"))
        );
    }

    #[test]
    fn unknown_fields_and_comments() {
        assert!(PairManifest::parse("{\"fixed\":\"a\",\"moving\":\"b\",\"extra\":1}").is_err());
        let m = PairManifest::parse("# header\n\n{\"fixed\":\"a\",\"moving\":\"b\"}\n").unwrap();
        assert_eq!(m.pairs.len(), 1);
    }
}
