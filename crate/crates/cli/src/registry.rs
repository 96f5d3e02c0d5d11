//! Weight registry: a JSON map from (task, scene class) keys to weight file
//! paths, so inference can route each patch to the right checkpoint.

use anyhow::{bail, Context, Result};
use p2d_core::terrain::SceneClass;
use p2d_core::train::PromptKind;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const CLASSIFIER_KEY: &str = "classifier";

pub fn model_key(task: PromptKind, class: SceneClass) -> String {
    format!("{}:{}", task.name(), class.name())
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    /// Where the registry file lives; relative entries resolve against its
    /// parent directory.
    pub path: PathBuf,
    pub entries: BTreeMap<String, String>,
}

impl Registry {
    /// Load the registry, or start an empty one if the file doesn't exist.
    pub fn load_or_empty(path: &Path) -> Result<Registry> {
        let entries = if path.exists() {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading registry {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing registry {}", path.display()))?
        } else {
            BTreeMap::new()
        };
        Ok(Registry {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn save(&self) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let text = serde_json::to_string_pretty(&self.entries)?;
        std::fs::write(&self.path, text)
            .with_context(|| format!("writing registry {}", self.path.display()))
    }

    pub fn insert(&mut self, key: String, weight_path: &Path) {
        self.entries
            .insert(key, weight_path.display().to_string());
    }

    fn resolve(&self, entry: &str) -> PathBuf {
        let p = PathBuf::from(entry);
        if p.is_absolute() {
            p
        } else {
            self.path
                .parent()
                .map(|d| d.join(&p))
                .unwrap_or(p)
        }
    }

    /// Path for a key, or an error listing every available key.
    pub fn lookup(&self, key: &str) -> Result<PathBuf> {
        match self.entries.get(key) {
            Some(entry) => Ok(self.resolve(entry)),
            None => {
                let available: Vec<&str> = self.entries.keys().map(|k| k.as_str()).collect();
                bail!(
                    "no weights registered for '{key}'; available keys: [{}]",
                    available.join(", ")
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_stable() {
        assert_eq!(
            model_key(PromptKind::LowRes, SceneClass::Urban),
            "lowres:urban"
        );
        assert_eq!(
            model_key(PromptKind::TerrainOnly, SceneClass::Bare),
            "terrain:bare"
        );
    }

    #[test]
    fn missing_key_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let mut reg = Registry::load_or_empty(&dir.path().join("registry.json")).unwrap();
        reg.insert("lowres:urban".into(), Path::new("a.p2dw"));
        reg.insert("classifier".into(), Path::new("clf.p2dw"));
        let err = reg.lookup("void:urban").unwrap_err().to_string();
        assert!(err.contains("void:urban"), "{err}");
        assert!(err.contains("lowres:urban"), "{err}");
        assert!(err.contains("classifier"), "{err}");
    }

    #[test]
    fn round_trip_and_relative_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let reg_path = dir.path().join("sub/registry.json");
        std::fs::create_dir_all(reg_path.parent().unwrap()).unwrap();
        let mut reg = Registry::load_or_empty(&reg_path).unwrap();
        reg.insert("lowres:bare".into(), Path::new("weights/bare.p2dw"));
        reg.save().unwrap();
        let back = Registry::load_or_empty(&reg_path).unwrap();
        assert_eq!(
            back.lookup("lowres:bare").unwrap(),
            dir.path().join("sub/weights/bare.p2dw")
        );
    }
}
