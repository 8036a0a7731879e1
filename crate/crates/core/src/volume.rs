//! Labeled voxel volumes: a JSON header next to a raw `u8` voxel array with
//! x varying fastest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Level, Point3};

pub const AXES_CONVENTION: &str = "LPS-like x=lateral,y=posterior,z=cranial";

/// Per-voxel vertebra labels on a regular grid. `0` is background, `1..=5`
/// are L1..L5.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub voxels: Vec<u8>,
}

/// On-disk header for a [`LabelMap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: [f64; 3],
    #[serde(default = "default_axes")]
    pub axes: String,
    #[serde(default = "default_labels")]
    pub labels: BTreeMap<String, String>,
    /// Raw voxel file, relative to the header. Defaults to the header path
    /// with a `.raw` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

fn default_axes() -> String {
    AXES_CONVENTION.to_string()
}

fn default_labels() -> BTreeMap<String, String> {
    (1..=5).map(|i| (i.to_string(), format!("L{i}"))).collect()
}

impl LabelMap {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3], voxels: Vec<u8>) -> Result<Self> {
        let map = LabelMap {
            dims,
            spacing_mm,
            origin_mm,
            voxels,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Self {
        LabelMap {
            dims,
            spacing_mm,
            origin_mm,
            voxels: vec![0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Format(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Format(format!(
                "spacing must be strictly positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::Format("origin must be finite".into()));
        }
        let expected = self.voxel_count();
        if self.voxels.len() != expected {
            return Err(Error::Consistency(format!(
                "voxel data has {} bytes but dims {:?} require {}",
                self.voxels.len(),
                self.dims,
                expected
            )));
        }
        if let Some((i, &bad)) = self.voxels.iter().enumerate().find(|(_, &v)| v > 5) {
            return Err(Error::Label(format!("voxel {i} has label {bad}, expected 0..=5")));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) {
        let i = self.index(x, y, z);
        self.voxels[i] = label;
    }

    /// World position (mm) of a voxel centre, possibly at fractional index.
    pub fn world(&self, idx: [f64; 3]) -> Point3 {
        Point3::new(
            self.origin_mm[0] + idx[0] * self.spacing_mm[0],
            self.origin_mm[1] + idx[1] * self.spacing_mm[1],
            self.origin_mm[2] + idx[2] * self.spacing_mm[2],
        )
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.voxels.iter().filter(|&&v| v == label).count()
    }

    /// Levels with at least one voxel, in L1..L5 order.
    pub fn levels_present(&self) -> Vec<Level> {
        let mut seen = [false; 6];
        for &v in &self.voxels {
            seen[v as usize] = true;
        }
        Level::ALL.into_iter().filter(|l| seen[l.get() as usize]).collect()
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
            axes: default_axes(),
            labels: default_labels(),
            data: None,
        }
    }
}

/// Default raw-data path for a header path: same stem, `.raw` extension.
pub fn default_data_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

/// Reads a header + raw voxel pair.
pub fn load_labelmap(header_path: &Path, data_path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    let voxels = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    LabelMap::new(header.dims, header.spacing_mm, header.origin_mm, voxels)
}

/// Reads a volume given only its header; the data file comes from the
/// header's `data` field or the `.raw` sibling.
pub fn load_labelmap_from_header(header_path: &Path) -> Result<LabelMap> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", header_path.display())))?;
    let data_path = match &header.data {
        Some(rel) => header_path.parent().unwrap_or(Path::new(".")).join(rel),
        None => default_data_path(header_path),
    };
    load_labelmap(header_path, &data_path)
}

/// Writes a header + raw pair. The header records the data file name.
pub fn save_labelmap(map: &LabelMap, header_path: &Path, data_path: &Path) -> Result<()> {
    map.validate()?;
    let mut header = map.header();
    if let Some(name) = data_path.file_name() {
        if data_path.parent() == header_path.parent() {
            header.data = Some(name.to_string_lossy().into_owned());
        }
    }
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(header_path, json).map_err(|e| Error::io(header_path, e))?;
    fs::write(data_path, &map.voxels).map_err(|e| Error::io(data_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, header: &str, data: &[u8]) -> (PathBuf, PathBuf) {
        let h = dir.join("v.json");
        let d = dir.join("v.raw");
        fs::write(&h, header).unwrap();
        fs::write(&d, data).unwrap();
        (h, d)
    }

    #[test]
    fn all_background_volume() {
        let dir = tempfile::tempdir().unwrap();
        let (h, d) = write_pair(dir.path(), r#"{"dims":[2,2,2],"spacing_mm":[1,1,1]}"#, &[0; 8]);
        let map = load_labelmap(&h, &d).unwrap();
        assert_eq!(map.dims, [2, 2, 2]);
        assert!(map.voxels.iter().all(|&v| v == 0));
        assert!(map.levels_present().is_empty());
    }

    #[test]
    fn short_data_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let (h, d) = write_pair(dir.path(), r#"{"dims":[2,2,2],"spacing_mm":[1,1,1]}"#, &[0; 7]);
        assert!(matches!(load_labelmap(&h, &d), Err(Error::Consistency(_))));
    }

    #[test]
    fn single_l3_voxel() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = vec![0u8; 1000];
        data[5 + 10 * (4 + 10 * 3)] = 3;
        let (h, d) = write_pair(dir.path(), r#"{"dims":[10,10,10],"spacing_mm":[1,1,1]}"#, &data);
        let map = load_labelmap(&h, &d).unwrap();
        let nonzero: Vec<_> = map.voxels.iter().enumerate().filter(|(_, &v)| v != 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(*nonzero[0].1, 3);
        assert_eq!(map.get(5, 4, 3), 3);
        assert_eq!(map.levels_present(), vec![Level::new(3).unwrap()]);
    }

    #[test]
    fn bad_label_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let (h, d) = write_pair(dir.path(), r#"{"dims":[2,1,1],"spacing_mm":[1,1,1]}"#, &[0, 7]);
        assert!(matches!(load_labelmap(&h, &d), Err(Error::Label(_))));
        let (h, d) = write_pair(dir.path(), r#"{"dims":[2,1]"#, &[0, 0]);
        assert!(matches!(load_labelmap(&h, &d), Err(Error::Format(_))));
        let (h, d) = write_pair(dir.path(), r#"{"dims":[2,1,1],"spacing_mm":[1,0,1]}"#, &[0, 0]);
        assert!(matches!(load_labelmap(&h, &d), Err(Error::Format(_))));
    }

    #[test]
    fn save_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = LabelMap::zeros([3, 4, 5], [0.5, 0.75, 1.25], [-10.0, 2.5, 100.125]);
        map.set(1, 2, 3, 4);
        map.set(2, 3, 4, 1);
        let h = dir.path().join("a.json");
        let d = dir.path().join("a.raw");
        save_labelmap(&map, &h, &d).unwrap();
        assert_eq!(load_labelmap(&h, &d).unwrap(), map);
        assert_eq!(load_labelmap_from_header(&h).unwrap(), map);
    }
}
