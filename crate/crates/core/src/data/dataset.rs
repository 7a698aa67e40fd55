use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Spatial extent every prepared image has.
pub const IMAGE_SIZE: usize = 32;

/// Images with class labels and an optional binary secondary attribute.
///
/// `sample_ids` records where each sample came from in the originally
/// generated or parsed dataset, so subsets and splits stay traceable.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub images: Tensor,
    pub class_labels: Vec<usize>,
    pub attribute_labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub sample_ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        class_labels: Vec<usize>,
        attribute_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = images.rows();
        let ds = LabeledDataset {
            name: name.into(),
            images,
            class_labels,
            attribute_labels,
            num_classes,
            sample_ids: (0..n).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "images must be N×C×H×W, got {shape:?}"
            )));
        }
        let n = shape[0];
        if self.class_labels.len() != n || self.sample_ids.len() != n {
            return Err(Error::Consistency(format!(
                "{n} images but {} labels and {} ids",
                self.class_labels.len(),
                self.sample_ids.len()
            )));
        }
        if let Some(a) = &self.attribute_labels {
            if a.len() != n {
                return Err(Error::Consistency(format!(
                    "{n} images but {} attribute labels",
                    a.len()
                )));
            }
            if a.iter().any(|&v| v > 1) {
                return Err(Error::Data("attribute labels must be binary".into()));
            }
        }
        if self.num_classes == 0 {
            return Err(Error::Data("num_classes must be positive".into()));
        }
        if let Some(&bad) = self.class_labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Data(format!(
                "class label {bad} outside 0..{}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.class_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Subset by position, preserving provenance ids.
    pub fn select(&self, positions: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            images: self.images.select_rows(positions),
            class_labels: positions.iter().map(|&i| self.class_labels[i]).collect(),
            attribute_labels: self
                .attribute_labels
                .as_ref()
                .map(|a| positions.iter().map(|&i| a[i]).collect()),
            num_classes: self.num_classes,
            sample_ids: positions.iter().map(|&i| self.sample_ids[i]).collect(),
        }
    }

    /// First `n` samples (or all of them when `n` exceeds the length).
    pub fn truncate(&self, n: usize) -> LabeledDataset {
        let positions: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&positions)
    }
}
