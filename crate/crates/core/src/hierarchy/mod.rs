//! Hierarchical category configuration: main categories, their subcategories and the
//! characteristic phrases that drive scoring and labeling.
//!
//! The on-disk format is strict JSON:
//!
//! ```json
//! {"version": "1",
//!  "categories": [{"name": "Dairy Product", "description": "...",
//!                  "subcategories": [{"name": "Cheese", "description": "...",
//!                                     "characteristics": ["yellow/white blocks", "slices"]}]}]}
//! ```
//!
//! Unknown keys are rejected. A subcategory may optionally carry an `expected_visual`
//! triple (`brightness`, `contrast`, `edge_density`) used by visual scoring.

mod templates;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::VisualAttributes;

pub use templates::{template, TEMPLATE_NAMES};

/// Below this many characteristics a subcategory is accepted but flagged.
pub const RECOMMENDED_MIN_CHARACTERISTICS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Characteristic(pub String);

impl Characteristic {
    pub fn phrase(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subcategory {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub characteristics: Vec<Characteristic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_visual: Option<VisualAttributes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainCategory {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub subcategories: Vec<Subcategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryHierarchy {
    pub version: String,
    pub categories: Vec<MainCategory>,
}

/// One row of the flattened label map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    /// Dense index over all subcategories, in file order.
    pub label: usize,
    pub main_index: usize,
    /// Index of the subcategory within its parent.
    pub sub_index: usize,
    pub main_name: String,
    pub sub_name: String,
}

impl CategoryHierarchy {
    /// Parses and validates a hierarchy document.
    pub fn parse(text: &str) -> Result<Self> {
        let hierarchy: CategoryHierarchy = serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                Error::Hierarchy(e.to_string())
            } else {
                Error::from(e)
            }
        })?;
        hierarchy.validate()?;
        for warning in hierarchy.lint() {
            log::warn!("{warning}");
        }
        Ok(hierarchy)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hierarchy serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Hierarchy("empty hierarchy".into()));
        }
        let mut main_names = HashSet::new();
        for main in &self.categories {
            if main.name.trim().is_empty() {
                return Err(Error::Hierarchy("main category with empty name".into()));
            }
            if !main_names.insert(main.name.as_str()) {
                return Err(Error::Hierarchy(format!(
                    "duplicate main category name {:?}",
                    main.name
                )));
            }
            if main.subcategories.is_empty() {
                return Err(Error::Hierarchy(format!(
                    "main category {:?} has an empty subcategory list",
                    main.name
                )));
            }
            let mut sub_names = HashSet::new();
            for sub in &main.subcategories {
                if sub.name.trim().is_empty() {
                    return Err(Error::Hierarchy(format!(
                        "subcategory with empty name under {:?}",
                        main.name
                    )));
                }
                if !sub_names.insert(sub.name.as_str()) {
                    return Err(Error::Hierarchy(format!(
                        "duplicate subcategory name {:?} under {:?}",
                        sub.name, main.name
                    )));
                }
                if sub.characteristics.is_empty() {
                    return Err(Error::Hierarchy(format!(
                        "subcategory {:?} / {:?} has empty characteristics",
                        main.name, sub.name
                    )));
                }
                let mut phrases = HashSet::new();
                for c in &sub.characteristics {
                    if c.0.trim().is_empty() {
                        return Err(Error::Hierarchy(format!(
                            "empty characteristic in {:?} / {:?}",
                            main.name, sub.name
                        )));
                    }
                    if !phrases.insert(c.0.as_str()) {
                        return Err(Error::Hierarchy(format!(
                            "duplicate characteristic {:?} in {:?} / {:?}",
                            c.0, main.name, sub.name
                        )));
                    }
                }
                if let Some(v) = &sub.expected_visual {
                    if !v.is_valid() {
                        return Err(Error::Hierarchy(format!(
                            "expected_visual of {:?} / {:?} must lie in [0,1]",
                            main.name, sub.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Non-fatal findings, e.g. subcategories with fewer characteristics than recommended.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        for main in &self.categories {
            for sub in &main.subcategories {
                if sub.characteristics.len() < RECOMMENDED_MIN_CHARACTERISTICS {
                    out.push(format!(
                        "subcategory {:?} / {:?} has {} characteristic(s); at least {} recommended",
                        main.name,
                        sub.name,
                        sub.characteristics.len(),
                        RECOMMENDED_MIN_CHARACTERISTICS
                    ));
                }
            }
        }
        out
    }

    /// Number of main categories.
    pub fn main_count(&self) -> usize {
        self.categories.len()
    }

    /// Total number of subcategories across all main categories.
    pub fn label_count(&self) -> usize {
        self.categories.iter().map(|c| c.subcategories.len()).sum()
    }

    pub fn flatten_labels(&self) -> Vec<LabelEntry> {
        let mut out = Vec::with_capacity(self.label_count());
        for (main_index, main) in self.categories.iter().enumerate() {
            for (sub_index, sub) in main.subcategories.iter().enumerate() {
                out.push(LabelEntry {
                    label: out.len(),
                    main_index,
                    sub_index,
                    main_name: main.name.clone(),
                    sub_name: sub.name.clone(),
                });
            }
        }
        out
    }

    /// Flattened label of `(main, sub)` given by index.
    pub fn flat_label(&self, main_index: usize, sub_index: usize) -> Option<usize> {
        let main = self.categories.get(main_index)?;
        if sub_index >= main.subcategories.len() {
            return None;
        }
        let before: usize = self.categories[..main_index]
            .iter()
            .map(|c| c.subcategories.len())
            .sum();
        Some(before + sub_index)
    }

    /// Resolves a `(main, sub)` path given by name.
    pub fn find_path(&self, main: &str, sub: &str) -> Option<(usize, usize)> {
        let mi = self.categories.iter().position(|c| c.name == main)?;
        let si = self.categories[mi]
            .subcategories
            .iter()
            .position(|s| s.name == sub)?;
        Some((mi, si))
    }

    pub fn subcategory(&self, main_index: usize, sub_index: usize) -> Option<&Subcategory> {
        self.categories
            .get(main_index)?
            .subcategories
            .get(sub_index)
    }

    /// Every distinct prompt of the hierarchy, in first-occurrence order.
    pub fn all_prompts(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for main in &self.categories {
            for sub in &main.subcategories {
                for p in build_prompts(sub, main) {
                    if seen.insert(p.clone()) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

pub fn main_template(main: &MainCategory) -> String {
    format!("A photo of {}", main.name)
}

pub fn sub_template(sub: &Subcategory) -> String {
    format!("This is a {}", sub.name)
}

/// The two template prompts followed by one prompt per characteristic phrase.
pub fn build_prompts(sub: &Subcategory, parent: &MainCategory) -> Vec<String> {
    let mut prompts = Vec::with_capacity(2 + sub.characteristics.len());
    prompts.push(main_template(parent));
    prompts.push(sub_template(sub));
    prompts.extend(sub.characteristics.iter().map(|c| c.0.clone()));
    prompts
}
