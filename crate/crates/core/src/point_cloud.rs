//! Points with optional semantic labels, timestamps and frame provenance.

use std::collections::BTreeMap;

use crate::ply::{PlyColumn, PlyData, ScalarType};
use crate::{Error, Result, Vec3};

/// Parallel-array point cloud. `labels`, `frame_ids` always match
/// `positions` in length; `timestamps` does too when present.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub positions: Vec<Vec3>,
    pub labels: Vec<Option<u32>>,
    pub timestamps: Option<Vec<f64>>,
    pub frame_ids: Vec<u32>,
    /// Label ids are in `[0, num_classes)`. Zero means the cloud carries no
    /// semantic schema.
    pub num_classes: usize,
}

impl LabeledPointCloud {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Default::default()
        }
    }

    /// Unlabeled points in frame 0.
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        let n = positions.len();
        Self {
            positions,
            labels: vec![None; n],
            timestamps: None,
            frame_ids: vec![0; n],
            num_classes: 0,
        }
    }

    pub fn from_labeled(positions: Vec<Vec3>, labels: Vec<Option<u32>>, num_classes: usize) -> Result<Self> {
        let n = positions.len();
        let cloud = Self {
            positions,
            labels,
            timestamps: None,
            frame_ids: vec![0; n],
            num_classes,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec3, label: Option<u32>, frame_id: u32, timestamp: Option<f64>) {
        self.positions.push(position);
        self.labels.push(label);
        self.frame_ids.push(frame_id);
        match (&mut self.timestamps, timestamp) {
            (Some(ts), t) => ts.push(t.unwrap_or(f64::NAN)),
            (None, Some(t)) if self.positions.len() == 1 => self.timestamps = Some(vec![t]),
            (None, Some(_)) => {
                let mut ts = vec![f64::NAN; self.positions.len() - 1];
                ts.push(timestamp.unwrap());
                self.timestamps = Some(ts);
            }
            (None, None) => {}
        }
    }

    /// Appends `other`, widening the class count if needed.
    pub fn extend_from(&mut self, other: &LabeledPointCloud) {
        let had = self.len();
        self.positions.extend_from_slice(&other.positions);
        self.labels.extend_from_slice(&other.labels);
        self.frame_ids.extend_from_slice(&other.frame_ids);
        match (&mut self.timestamps, &other.timestamps) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (Some(a), None) => a.extend(std::iter::repeat(f64::NAN).take(other.len())),
            (None, Some(b)) => {
                let mut ts = vec![f64::NAN; had];
                ts.extend_from_slice(b);
                self.timestamps = Some(ts);
            }
            (None, None) => {}
        }
        self.num_classes = self.num_classes.max(other.num_classes);
    }

    /// Keeps the points whose index passes `keep`.
    pub fn filter_indices(&self, mut keep: impl FnMut(usize) -> bool) -> LabeledPointCloud {
        let mut out = LabeledPointCloud::new(self.num_classes);
        let mut ts = self.timestamps.as_ref().map(|_| Vec::new());
        for i in 0..self.len() {
            if keep(i) {
                out.positions.push(self.positions[i]);
                out.labels.push(self.labels[i]);
                out.frame_ids.push(self.frame_ids[i]);
                if let (Some(dst), Some(src)) = (&mut ts, &self.timestamps) {
                    dst.push(src[i]);
                }
            }
        }
        out.timestamps = ts;
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.labels.len() != n || self.frame_ids.len() != n {
            return Err(Error::invalid_input(format!(
                "point cloud arrays disagree: {} positions, {} labels, {} frame ids",
                n,
                self.labels.len(),
                self.frame_ids.len()
            )));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != n {
                return Err(Error::invalid_input("timestamps length differs from positions"));
            }
        }
        if let Some(bad) = self
            .labels
            .iter()
            .flatten()
            .find(|&&l| l as usize >= self.num_classes)
        {
            return Err(Error::invalid_input(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// PLY vertex element with `x y z` plus `label` (int, -1 = unlabeled),
    /// `frame` (uint) and, when present, `timestamp` (double). `extra`
    /// columns are appended verbatim.
    pub fn to_ply(&self, extra: Vec<PlyColumn>) -> Result<Vec<u8>> {
        let mut cols = vec![
            PlyColumn::new("x", ScalarType::Double, self.positions.iter().map(|p| p.x).collect()),
            PlyColumn::new("y", ScalarType::Double, self.positions.iter().map(|p| p.y).collect()),
            PlyColumn::new("z", ScalarType::Double, self.positions.iter().map(|p| p.z).collect()),
            PlyColumn::new(
                "label",
                ScalarType::Int,
                self.labels.iter().map(|l| l.map_or(-1.0, |v| v as f64)).collect(),
            ),
            PlyColumn::new("frame", ScalarType::UInt, self.frame_ids.iter().map(|&f| f as f64).collect()),
        ];
        if let Some(ts) = &self.timestamps {
            cols.push(PlyColumn::new("timestamp", ScalarType::Double, ts.clone()));
        }
        cols.extend(extra);
        let mut comments = Vec::new();
        if self.num_classes > 0 {
            comments.push(format!("num_classes {}", self.num_classes));
        }
        PlyData::new("vertex", cols, comments)?.to_binary_le()
    }

    /// Reads `x y z` and the optional `label`/`frame`/`timestamp` columns.
    /// The class count comes from a `num_classes N` comment or, failing that,
    /// from the largest label.
    pub fn from_ply(bytes: &[u8]) -> Result<Self> {
        let ply = PlyData::parse(bytes)?;
        let element = ply.element_name().to_owned();
        let cols: BTreeMap<&str, &[f64]> = ply.columns().iter().map(|c| (c.name.as_str(), c.values.as_slice())).collect();
        let get = |name: &str| {
            cols.get(name).copied().ok_or_else(|| {
                Error::parse(0, format!("PLY element '{element}' lacks required property '{name}'"))
            })
        };
        let (xs, ys, zs) = (get("x")?, get("y")?, get("z")?);
        let n = xs.len();
        let positions = (0..n).map(|i| Vec3::new(xs[i], ys[i], zs[i])).collect();
        let labels: Vec<Option<u32>> = match cols.get("label") {
            Some(ls) => ls.iter().map(|&l| (l >= 0.0).then_some(l as u32)).collect(),
            None => vec![None; n],
        };
        let frame_ids = match cols.get("frame") {
            Some(fs) => fs.iter().map(|&f| f as u32).collect(),
            None => vec![0; n],
        };
        let timestamps = cols.get("timestamp").map(|t| t.to_vec());
        let from_comment = ply.comments().iter().find_map(|c| {
            c.strip_prefix("num_classes ").and_then(|v| v.trim().parse::<usize>().ok())
        });
        let from_labels = labels.iter().flatten().map(|&l| l as usize + 1).max().unwrap_or(0);
        let cloud = Self {
            positions,
            labels,
            timestamps,
            frame_ids,
            num_classes: from_comment.unwrap_or(0).max(from_labels),
        };
        cloud.validate()?;
        Ok(cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let mut c = LabeledPointCloud::new(4);
        c.push(Vec3::new(1.0, 2.0, 3.0), Some(3), 7, Some(0.5));
        c.push(Vec3::new(-1.0, 0.25, 1e3), None, 8, Some(1.5));
        let back = LabeledPointCloud::from_ply(&c.to_ply(vec![]).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_coordinate_is_named() {
        let ply = PlyData::new(
            "vertex",
            vec![
                PlyColumn::new("x", ScalarType::Float, vec![0.0]),
                PlyColumn::new("y", ScalarType::Float, vec![0.0]),
            ],
            vec![],
        )
        .unwrap()
        .to_binary_le()
        .unwrap();
        let err = LabeledPointCloud::from_ply(&ply).unwrap_err().to_string();
        assert!(err.contains("'z'"), "{err}");
    }

    #[test]
    fn validate_catches_label_out_of_range() {
        assert!(LabeledPointCloud::from_labeled(vec![Vec3::zeros()], vec![Some(2)], 2).is_err());
    }

    #[test]
    fn filter_keeps_parallel_arrays() {
        let mut c = LabeledPointCloud::new(2);
        for i in 0..5 {
            c.push(Vec3::new(i as f64, 0.0, 0.0), Some(i % 2), i, None);
        }
        let f = c.filter_indices(|i| i % 2 == 0);
        assert_eq!(f.len(), 3);
        assert_eq!(f.frame_ids, vec![0, 2, 4]);
        f.validate().unwrap();
    }
}
