//! Per-pixel integer label masks with a label table.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    label_table: Vec<String>,
}

impl LabelMask {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        label_table: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}×{width} mask",
                labels.len()
            )));
        }
        if label_table.is_empty() || label_table.len() > 256 {
            return Err(Error::contract("label table must hold 1..=256 names"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= label_table.len()) {
            return Err(Error::contract(format!(
                "label id {bad} outside table of {}",
                label_table.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            label_table,
        })
    }

    /// `background`, `part1`, ... `part{n-1}`.
    pub fn default_table(class_count: usize) -> Vec<String> {
        (0..class_count)
            .map(|i| {
                if i == 0 {
                    "background".to_string()
                } else {
                    format!("part{i}")
                }
            })
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_table(&self) -> &[String] {
        &self.label_table
    }

    pub fn class_count(&self) -> usize {
        self.label_table.len()
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn contains(&self, label: u8) -> bool {
        self.labels.contains(&label)
    }

    /// Pixel count per label id.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.label_table.len()];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Fraction of pixels that agree with `other`.
    pub fn pixel_accuracy(&self, other: &LabelMask) -> f64 {
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len().max(1) as f64
    }
}
