//! On-disk data cube: a JSON manifest plus raw little-endian arrays.
//!
//! ```text
//! cube/
//!   manifest.json     format_version, year, dims, channel_names, class_names, arrays, byte_order
//!   reflectance.u16   T×C×H×W digital numbers (reflectance × 10 000), row-major
//!   cloud.u8          T×H×W, 1 = cloudy / invalid
//!   labels.u8         H×W class ids, 255 = ignore
//!   days.u16          T day-of-year values
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const IGNORE_LABEL: u8 = 255;
pub const REFLECTANCE_SCALE: f64 = 10_000.0;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REFLECTANCE_FILE: &str = "reflectance.u16";
pub const CLOUD_FILE: &str = "cloud.u8";
pub const LABELS_FILE: &str = "labels.u8";
pub const DAYS_FILE: &str = "days.u16";

/// One site-year of co-registered imagery.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub year: i32,
    pub obs_days: Vec<u32>,
    /// T×C×H×W digital numbers.
    pub reflectance: Array4<u16>,
    /// T×H×W, true where the pixel is cloudy or otherwise unusable.
    pub cloud_mask: Array3<bool>,
    /// H×W class ids, [`IGNORE_LABEL`] for unlabeled pixels.
    pub labels: Array2<u8>,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Dims {
    pub T: usize,
    pub C: usize,
    pub H: usize,
    pub W: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayPaths {
    pub reflectance: String,
    pub cloud: String,
    pub labels: String,
    pub days: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeManifest {
    pub format_version: u32,
    pub year: i32,
    pub dims: Dims,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub arrays: ArrayPaths,
    pub byte_order: String,
}

pub fn to_reflectance(dn: u16) -> f64 {
    dn as f64 / REFLECTANCE_SCALE
}

/// Round to nearest and clamp to the storable reflectance range `[0, 1]`.
pub fn to_digital_number(reflectance: f64) -> u16 {
    (reflectance * REFLECTANCE_SCALE)
        .round()
        .clamp(0.0, REFLECTANCE_SCALE) as u16
}

impl DataCube {
    pub fn dims(&self) -> Dims {
        let (t, c, h, w) = self.reflectance.dim();
        Dims {
            T: t,
            C: c,
            H: h,
            W: w,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let fail = |m: String| Err(Error::Invariant(m));
        if d.T == 0 || d.C == 0 || d.H == 0 || d.W == 0 {
            return fail(format!("all dimensions must be ≥ 1, got {d:?}"));
        }
        if self.obs_days.len() != d.T {
            return fail(format!("{} obs_days for T = {}", self.obs_days.len(), d.T));
        }
        if self.cloud_mask.dim() != (d.T, d.H, d.W) {
            return fail(format!(
                "cloud mask shape {:?} does not match (T, H, W) = ({}, {}, {})",
                self.cloud_mask.dim(),
                d.T,
                d.H,
                d.W
            ));
        }
        if self.labels.dim() != (d.H, d.W) {
            return fail(format!(
                "label shape {:?} does not match (H, W) = ({}, {})",
                self.labels.dim(),
                d.H,
                d.W
            ));
        }
        if self.channel_names.len() != d.C {
            return fail(format!(
                "{} channel names for C = {}",
                self.channel_names.len(),
                d.C
            ));
        }
        if self.class_names.is_empty() || self.class_names.len() > IGNORE_LABEL as usize {
            return fail(format!(
                "{} class names; need 1..=255",
                self.class_names.len()
            ));
        }
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= self.class_names.len())
        {
            return fail(format!(
                "label {bad} is neither a class id nor the ignore value"
            ));
        }
        for (i, &day) in self.obs_days.iter().enumerate() {
            if !(1..=366).contains(&day) {
                return fail(format!("obs day {day} outside [1, 366]"));
            }
            if i > 0 && day <= self.obs_days[i - 1] {
                return fail(format!("obs_days not strictly increasing at index {i}"));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> CubeManifest {
        CubeManifest {
            format_version: FORMAT_VERSION,
            year: self.year,
            dims: self.dims(),
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
            arrays: ArrayPaths {
                reflectance: REFLECTANCE_FILE.into(),
                cloud: CLOUD_FILE.into(),
                labels: LABELS_FILE.into(),
                days: DAYS_FILE.into(),
            },
            byte_order: "little".into(),
        }
    }

    /// Number of clear pixels at each timestep.
    pub fn clear_counts(&self) -> Vec<usize> {
        self.cloud_mask
            .outer_iter()
            .map(crate::sampling::clear_pixel_count)
            .collect()
    }

    /// Keeps only timesteps with `day_of_year <= cutoff`.
    pub fn truncate_to_day(&self, cutoff: u32) -> Result<DataCube> {
        let keep = self.obs_days.iter().take_while(|&&d| d <= cutoff).count();
        if keep == 0 {
            return Err(Error::InvalidInput(format!(
                "cutoff day {cutoff} precedes the first observation (day {})",
                self.obs_days[0]
            )));
        }
        let s = ndarray::s![..keep, .., .., ..];
        Ok(DataCube {
            year: self.year,
            obs_days: self.obs_days[..keep].to_vec(),
            reflectance: self.reflectance.slice(s).to_owned(),
            cloud_mask: self
                .cloud_mask
                .slice(ndarray::s![..keep, .., ..])
                .to_owned(),
            labels: self.labels.clone(),
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
        })
    }

    pub fn labels_view(&self) -> ArrayView2<'_, u8> {
        self.labels.view()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_cube(cube: &DataCube, dir: &Path) -> Result<()> {
    cube.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = cube.manifest();

    let refl: Vec<u8> = cube
        .reflectance
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    let cloud: Vec<u8> = cube.cloud_mask.iter().map(|&c| c as u8).collect();
    let labels: Vec<u8> = cube.labels.iter().copied().collect();
    let mut days = Vec::with_capacity(cube.obs_days.len() * 2);
    for &d in &cube.obs_days {
        days.extend_from_slice(&(d as u16).to_le_bytes());
    }

    write_file(&dir.join(&manifest.arrays.reflectance), &refl)?;
    write_file(&dir.join(&manifest.arrays.cloud), &cloud)?;
    write_file(&dir.join(&manifest.arrays.labels), &labels)?;
    write_file(&dir.join(&manifest.arrays.days), &days)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn read_array(dir: &Path, rel: &str, name: &str, expected: u64) -> Result<Vec<u8>> {
    if Path::new(rel).is_absolute() || rel.contains("..") {
        return Err(Error::Invariant(format!(
            "array path `{rel}` for {name} must be relative to the cube directory"
        )));
    }
    let path = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::ByteLength {
            array: name.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<CubeManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: "cube manifest".into(),
        detail: e.to_string(),
    })?;
    // check the version before the full schema so old/new layouts get a clear message
    if let Some(v) = value.get("format_version").and_then(|v| v.as_u64()) {
        if v != FORMAT_VERSION as u64 {
            return Err(Error::UnsupportedVersion(v as u32));
        }
    }
    let manifest: CubeManifest = serde_json::from_value(value).map_err(|e| Error::Parse {
        what: "cube manifest".into(),
        detail: e.to_string(),
    })?;
    if manifest.byte_order != "little" {
        return Err(Error::Invariant(format!(
            "byte_order `{}` unsupported; only `little`",
            manifest.byte_order
        )));
    }
    Ok(manifest)
}

pub fn read_cube(dir: &Path) -> Result<DataCube> {
    let m = read_manifest(dir)?;
    let Dims {
        T: t,
        C: c,
        H: h,
        W: w,
    } = m.dims;
    let n = |parts: &[usize]| parts.iter().map(|&p| p as u64).product::<u64>();

    let refl = read_array(
        dir,
        &m.arrays.reflectance,
        "reflectance",
        2 * n(&[t, c, h, w]),
    )?;
    let cloud = read_array(dir, &m.arrays.cloud, "cloud", n(&[t, h, w]))?;
    let labels = read_array(dir, &m.arrays.labels, "labels", n(&[h, w]))?;
    let days = read_array(dir, &m.arrays.days, "days", 2 * t as u64)?;

    let refl: Vec<u16> = refl
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    if let Some(&b) = cloud.iter().find(|&&b| b > 1) {
        return Err(Error::Invariant(format!(
            "cloud mask byte {b} is not 0 or 1"
        )));
    }
    let cloud: Vec<bool> = cloud.into_iter().map(|b| b == 1).collect();
    let obs_days: Vec<u32> = days
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as u32)
        .collect();

    let shape_err = |e: ndarray::ShapeError| Error::Invariant(e.to_string());
    let cube = DataCube {
        year: m.year,
        obs_days,
        reflectance: Array4::from_shape_vec((t, c, h, w), refl).map_err(shape_err)?,
        cloud_mask: Array3::from_shape_vec((t, h, w), cloud).map_err(shape_err)?,
        labels: Array2::from_shape_vec((h, w), labels).map_err(shape_err)?,
        channel_names: m.channel_names,
        class_names: m.class_names,
    };
    cube.validate()?;
    Ok(cube)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_cube(t: usize, c: usize, h: usize, w: usize) -> DataCube {
        DataCube {
            year: 2021,
            obs_days: (0..t as u32).map(|i| 1 + 3 * i).collect(),
            reflectance: Array4::from_shape_fn((t, c, h, w), |(a, b, y, x)| {
                (a * 1000 + b * 100 + y * 10 + x) as u16
            }),
            cloud_mask: Array3::from_shape_fn((t, h, w), |(a, y, x)| (a + y + x) % 3 == 0),
            labels: Array2::from_shape_fn((h, w), |(y, x)| {
                if (y + x) % 5 == 4 {
                    IGNORE_LABEL
                } else {
                    ((y + x) % 2) as u8
                }
            }),
            channel_names: (0..c).map(|i| format!("B{i}")).collect(),
            class_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn reflectance_scaling() {
        assert_eq!(to_reflectance(10_000), 1.0);
        assert_eq!(to_reflectance(0), 0.0);
        assert!((to_reflectance(1234) - 0.1234).abs() < 1e-15);
        assert_eq!(to_digital_number(0.1234), 1234);
        assert_eq!(to_digital_number(-0.2), 0);
        assert_eq!(to_digital_number(1.7), 10_000);
    }

    #[test]
    fn single_value_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = tiny_cube(1, 1, 1, 1);
        cube.reflectance[[0, 0, 0, 0]] = 1234;
        cube.labels[[0, 0]] = 0;
        write_cube(&cube, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(REFLECTANCE_FILE)).unwrap();
        assert_eq!(bytes, vec![0xD2, 0x04]);
    }

    #[test]
    fn write_read_identity() {
        let dir = tempfile::tempdir().unwrap();
        let cube = tiny_cube(4, 3, 5, 6);
        write_cube(&cube, dir.path()).unwrap();
        assert_eq!(read_cube(dir.path()).unwrap(), cube);
    }

    #[test]
    fn manifest_keys_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        write_cube(&tiny_cube(2, 1, 2, 2), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "arrays",
                "byte_order",
                "channel_names",
                "class_names",
                "dims",
                "format_version",
                "year"
            ]
        );
    }

    #[test]
    fn refuses_mismatched_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = tiny_cube(3, 2, 4, 4);
        cube.cloud_mask = Array3::from_elem((3, 4, 5), false);
        assert!(matches!(
            write_cube(&cube, dir.path()),
            Err(Error::Invariant(_))
        ));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn refuses_bad_labels_and_days() {
        let mut cube = tiny_cube(3, 1, 2, 2);
        cube.labels[[0, 0]] = 7;
        assert!(cube.validate().is_err());
        let mut cube = tiny_cube(3, 1, 2, 2);
        cube.obs_days = vec![5, 5, 9];
        assert!(cube.validate().is_err());
    }

    #[test]
    fn truncated_array_names_the_array() {
        let dir = tempfile::tempdir().unwrap();
        write_cube(&tiny_cube(3, 2, 4, 4), dir.path()).unwrap();
        let p = dir.path().join(REFLECTANCE_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        match read_cube(dir.path()) {
            Err(Error::ByteLength {
                array,
                expected,
                actual,
            }) => {
                assert_eq!(array, "reflectance");
                assert_eq!(expected, actual + 1);
            }
            other => panic!("expected byte-length error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_cube(&tiny_cube(2, 1, 2, 2), dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 999");
        fs::write(&p, text).unwrap();
        assert!(matches!(
            read_cube(dir.path()),
            Err(Error::UnsupportedVersion(999))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        write_cube(&tiny_cube(2, 1, 2, 2), dir.path()).unwrap();
        fs::remove_file(dir.path().join(CLOUD_FILE)).unwrap();
        assert!(matches!(read_cube(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn truncate_keeps_prefix() {
        let cube = tiny_cube(5, 1, 2, 2); // days 1,4,7,10,13
        let t = cube.truncate_to_day(8).unwrap();
        assert_eq!(t.obs_days, vec![1, 4, 7]);
        assert_eq!(t.reflectance.dim().0, 3);
        assert_eq!(cube.truncate_to_day(400).unwrap(), cube);
        assert!(cube.truncate_to_day(0).is_err());
    }
}
