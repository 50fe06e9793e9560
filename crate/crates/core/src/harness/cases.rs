use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::planner::Route;
use crate::raster::ImageBuffer;

/// Failure categories in table order; unknown labels sort between these and `others`.
pub const CATEGORIES: [(&str, &str); 7] = [
    ("target_ambiguity", "Target ambiguity"),
    ("local_entanglement", "Local entanglement"),
    ("structural_dependency", "Structural dependency"),
    ("hidden_content_reconstruction", "Hidden-content reconstruction"),
    ("scene_wide_consistency", "Scene-wide consistency"),
    ("transformation_complexity", "Transformation complexity"),
    ("others", "Others"),
];

/// Lower-case, `_`-separated category key.
pub(crate) fn normalize_category(label: &str) -> String {
    let key: String = label.trim().to_ascii_lowercase().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    let key = key.split('_').filter(|s| !s.is_empty()).collect::<Vec<_>>().join("_");
    match key.as_str() {
        "other" => "others".into(),
        "hidden_content_reconst" => "hidden_content_reconstruction".into(),
        _ => key,
    }
}

/// The `case.json` document inside each case directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: ImageBuffer,
    pub instruction: String,
    pub oracle_route: Option<Route>,
    /// Normalized category key.
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSet {
    pub root: Option<PathBuf>,
    /// Sorted by id.
    pub cases: Vec<Case>,
}

impl CaseSet {
    pub fn from_cases(mut cases: Vec<Case>) -> Result<Self, HarnessError> {
        let mut seen = BTreeSet::new();
        for c in &mut cases {
            if !seen.insert(c.id.clone()) {
                return Err(HarnessError::CaseSet(format!("duplicate case id '{}'", c.id)));
            }
            if c.instruction.trim().is_empty() {
                return Err(HarnessError::CaseSet(format!("case '{}' has an empty instruction", c.id)));
            }
            c.category = c.category.as_deref().map(normalize_category);
        }
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { root: None, cases })
    }

    /// Loads every sub-directory holding `image.png` and `case.json`; the
    /// directory name is the case id.
    pub fn load(root: &Path) -> Result<Self, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| HarnessError::Io { path, source }
        };
        let mut cases = Vec::new();
        for entry in fs::read_dir(root).map_err(io(root))? {
            let dir = entry.map_err(io(root))?.path();
            if !dir.is_dir() {
                continue;
            }
            let id = dir
                .file_name()
                .and_then(|n| n.to_str())
                .map(String::from)
                .ok_or_else(|| HarnessError::CaseSet(format!("{} is not a valid case directory name", dir.display())))?;
            let doc_path = dir.join("case.json");
            let doc: CaseDocument = serde_json::from_slice(&fs::read(&doc_path).map_err(io(&doc_path))?)
                .map_err(|e| HarnessError::CaseSet(format!("{}: {e}", doc_path.display())))?;
            let image_path = dir.join("image.png");
            let image = ImageBuffer::decode_png(&fs::read(&image_path).map_err(io(&image_path))?)
                .map_err(|e| HarnessError::CaseSet(format!("{}: {e}", image_path.display())))?;
            cases.push(Case { id, image, instruction: doc.instruction, oracle_route: doc.oracle_route, category: doc.category });
        }
        if cases.is_empty() {
            return Err(HarnessError::CaseSet(format!("{} contains no cases", root.display())));
        }
        let mut set = Self::from_cases(cases)?;
        set.root = Some(root.to_path_buf());
        Ok(set)
    }

    /// Writes the set in the directory layout [`CaseSet::load`] reads.
    pub fn save(&self, root: &Path) -> Result<(), HarnessError> {
        for c in &self.cases {
            let dir = root.join(&c.id);
            let io = |source| HarnessError::Io { path: dir.clone(), source };
            fs::create_dir_all(&dir).map_err(io)?;
            let doc = CaseDocument { instruction: c.instruction.clone(), oracle_route: c.oracle_route, category: c.category.clone() };
            fs::write(dir.join("case.json"), serde_json::to_string_pretty(&doc).expect("case document serializes")).map_err(io)?;
            fs::write(dir.join("image.png"), c.image.encode_png()).map_err(io)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}
