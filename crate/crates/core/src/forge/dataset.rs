use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{seeded_shuffle, ForgeError, TaskCategory, TrajectoryInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: TaskCategory,
    pub total_boxes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub instances: Vec<ManifestEntry>,
    /// Empty until the manifest has been split.
    #[serde(default)]
    pub split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a TrajectoryInstance>) -> Self {
        let instances = instances
            .into_iter()
            .map(|i| ManifestEntry { id: i.id.clone(), category: i.category, total_boxes: i.total_boxes() })
            .collect();
        DatasetManifest { instances, split: BTreeMap::new() }
    }

    pub fn ids(&self, which: Split) -> Vec<&str> {
        self.instances.iter().filter(|e| self.split.get(&e.id) == Some(&which)).map(|e| e.id.as_str()).collect()
    }

    pub fn mean_boxes(&self, which: Split) -> Option<f64> {
        let boxes: Vec<usize> = self
            .instances
            .iter()
            .filter(|e| self.split.get(&e.id) == Some(&which))
            .map(|e| e.total_boxes)
            .collect();
        (!boxes.is_empty()).then(|| boxes.iter().sum::<usize>() as f64 / boxes.len() as f64)
    }

    /// True when every instance id carries exactly one split.
    pub fn is_partition(&self) -> bool {
        let ids: HashSet<&str> = self.instances.iter().map(|e| e.id.as_str()).collect();
        ids.len() == self.instances.len()
            && self.split.len() == ids.len()
            && self.split.keys().all(|k| ids.contains(k.as_str()))
    }
}

/// Stratified train/test split. `ratio` is the training fraction; per
/// category, floor((1 - ratio) * n) of the densest instances (by total boxes)
/// go to test. Ties in box count are broken by a seeded shuffle.
pub fn split_dataset(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest, ForgeError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ForgeError::RatioInvalid(ratio));
    }
    let mut by_cat: BTreeMap<TaskCategory, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.instances {
        by_cat.entry(e.category).or_default().push(e);
    }
    let mut split = BTreeMap::new();
    for (cat, mut group) in by_cat {
        let n = group.len();
        let n_test = ((1.0 - ratio) * n as f64 + 1e-9).floor() as usize;
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let cat_seed = seed ^ (cat as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        seeded_shuffle(&mut group, cat_seed);
        group.sort_by_key(|e| std::cmp::Reverse(e.total_boxes));
        for (i, e) in group.into_iter().enumerate() {
            split.insert(e.id.clone(), if i < n_test { Split::Test } else { Split::Train });
        }
    }
    Ok(DatasetManifest { instances: manifest.instances.clone(), split })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(boxes: &[usize]) -> DatasetManifest {
        DatasetManifest {
            instances: boxes
                .iter()
                .enumerate()
                .map(|(i, &b)| ManifestEntry { id: format!("i{i}"), category: TaskCategory::Retrieval, total_boxes: b })
                .collect(),
            split: BTreeMap::new(),
        }
    }

    #[test]
    fn ten_at_point_eight() {
        let m = split_dataset(&manifest(&[3, 1, 4, 1, 5, 9, 2, 6, 5, 3]), 0.8, 7).unwrap();
        assert_eq!(m.ids(Split::Train).len(), 8);
        assert_eq!(m.ids(Split::Test).len(), 2);
        assert!(m.mean_boxes(Split::Test).unwrap() >= m.mean_boxes(Split::Train).unwrap());
        assert!(m.is_partition());
    }

    #[test]
    fn ratio_bounds() {
        assert_eq!(split_dataset(&manifest(&[1]), 1.0, 0), Err(ForgeError::RatioInvalid(1.0)));
        assert!(split_dataset(&manifest(&[1]), 0.0, 0).is_err());
        assert!(split_dataset(&manifest(&[1]), f64::NAN, 0).is_err());
    }

    #[test]
    fn single_instance_floor() {
        let m = split_dataset(&manifest(&[4]), 0.5, 0).unwrap();
        assert_eq!(m.ids(Split::Train), vec!["i0"]);
        assert!(m.ids(Split::Test).is_empty());
    }

    #[test]
    fn stratified_and_seeded() {
        let mut m = manifest(&[2, 2, 2, 2, 2, 2]);
        for e in m.instances.iter_mut().skip(3) {
            e.category = TaskCategory::Counting;
        }
        let a = split_dataset(&m, 0.6, 11).unwrap();
        assert_eq!(a, split_dataset(&m, 0.6, 11).unwrap());
        for cat in [TaskCategory::Retrieval, TaskCategory::Counting] {
            let tests = a.instances.iter().filter(|e| e.category == cat && a.split[&e.id] == Split::Test).count();
            assert_eq!(tests, 1);
        }
    }
}
