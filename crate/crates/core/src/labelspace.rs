//! Class universe and the two-level fine → parent hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A validated class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// The `K` fine classes, their names and the fine → parent table.
///
/// Immutable once built; every constructor enforces that each parent owns
/// at least one fine class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    class_names: Vec<String>,
    parent_of: Vec<usize>,
    num_parents: usize,
}

impl LabelSpace {
    pub fn new(
        class_names: Vec<String>,
        parent_of: Vec<usize>,
        num_parents: usize,
    ) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(domain(format!(
                "label space needs at least 2 classes, got {k}"
            )));
        }
        if parent_of.len() != k {
            return Err(domain(format!(
                "parent table has {} entries for {k} classes",
                parent_of.len()
            )));
        }
        if num_parents == 0 || num_parents > k {
            return Err(domain(format!(
                "num_parents must lie in [1, {k}], got {num_parents}"
            )));
        }
        let mut seen_names = std::collections::HashSet::new();
        for name in &class_names {
            if !seen_names.insert(name.as_str()) {
                return Err(domain(format!("duplicate class name {name:?}")));
            }
        }
        let mut covered = vec![false; num_parents];
        for (fine, &parent) in parent_of.iter().enumerate() {
            if parent >= num_parents {
                return Err(domain(format!(
                    "class {fine} maps to parent {parent}, outside [0, {num_parents})"
                )));
            }
            covered[parent] = true;
        }
        if let Some(orphan) = covered.iter().position(|c| !c) {
            return Err(domain(format!("parent {orphan} has no fine class")));
        }
        Ok(Self {
            class_names,
            parent_of,
            num_parents,
        })
    }

    /// Each class is its own parent; names are `class_0 .. class_{K-1}`.
    pub fn identity(num_classes: usize) -> Result<Self> {
        Self::new(
            default_names(num_classes),
            (0..num_classes).collect(),
            num_classes,
        )
    }

    /// Consecutive blocks of fine classes share a parent: fine `c` maps to
    /// `c * num_parents / K`.
    pub fn grouped(num_classes: usize, num_parents: usize) -> Result<Self> {
        if num_parents == 0 {
            return Err(domain("num_parents must be positive"));
        }
        let parents = (0..num_classes)
            .map(|c| c * num_parents / num_classes)
            .collect();
        Self::new(default_names(num_classes), parents, num_parents)
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    #[inline]
    pub fn num_parents(&self) -> usize {
        self.num_parents
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn parent_table(&self) -> &[usize] {
        &self.parent_of
    }

    pub fn label(&self, value: usize) -> Result<Label> {
        if value < self.num_classes() {
            Ok(Label(value))
        } else {
            Err(domain(format!(
                "label {value} outside [0, {})",
                self.num_classes()
            )))
        }
    }

    pub fn to_parent(&self, label: Label) -> Result<Label> {
        self.parent_of
            .get(label.0)
            .map(|&p| Label(p))
            .ok_or_else(|| {
                domain(format!(
                    "label {} outside [0, {})",
                    label.0,
                    self.num_classes()
                ))
            })
    }

    pub fn is_identity(&self) -> bool {
        self.num_parents == self.num_classes()
            && self.parent_of.iter().enumerate().all(|(i, &p)| i == p)
    }
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("class_{c}")).collect()
}
