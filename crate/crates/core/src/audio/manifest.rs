use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AudioError;
use crate::task::{Task, ASC_CLASSES, SED_CLASSES, TAG_CLASSES};

/// One annotated sound event, times in seconds from segment start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
}

/// One line of a JSON Lines dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<EventAnnotation>>,
}

impl ManifestEntry {
    pub fn scene(path: impl Into<String>, scene_id: usize) -> Self {
        Self {
            path: path.into(),
            task: Task::Asc,
            scene_id: Some(scene_id),
            tags: None,
            events: None,
        }
    }

    pub fn tagged(path: impl Into<String>, tags: Vec<usize>) -> Self {
        Self {
            path: path.into(),
            task: Task::Tag,
            scene_id: None,
            tags: Some(tags),
            events: None,
        }
    }

    pub fn with_events(path: impl Into<String>, events: Vec<EventAnnotation>) -> Self {
        Self {
            path: path.into(),
            task: Task::Sed,
            scene_id: None,
            tags: None,
            events: Some(events),
        }
    }

    /// Checks that exactly the label fields of the entry's task are present
    /// and in range.
    pub fn validate(&self) -> Result<(), String> {
        let present = (
            self.scene_id.is_some(),
            self.tags.is_some(),
            self.events.is_some(),
        );
        let expected = match self.task {
            Task::Asc => (true, false, false),
            Task::Tag => (false, true, false),
            Task::Sed => (false, false, true),
        };
        if present != expected {
            return Err(format!(
                "{} entry must carry exactly its own label field",
                self.task
            ));
        }
        if let Some(s) = self.scene_id {
            if s >= ASC_CLASSES {
                return Err(format!("scene_id {s} out of range"));
            }
        }
        if let Some(tags) = &self.tags {
            if let Some(t) = tags.iter().find(|&&t| t >= TAG_CLASSES) {
                return Err(format!("tag {t} out of range"));
            }
            if tags.iter().collect::<BTreeSet<_>>().len() != tags.len() {
                return Err("duplicate tag".into());
            }
        }
        if let Some(events) = &self.events {
            for e in events {
                if e.class >= SED_CLASSES {
                    return Err(format!("event class {} out of range", e.class));
                }
                if !(e.onset >= 0.0 && e.onset < e.offset && e.offset.is_finite()) {
                    return Err(format!("bad event interval [{}, {}]", e.onset, e.offset));
                }
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, AudioError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| AudioError::Manifest {
            line: i + 1,
            message,
        };
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        entry.validate().map_err(err)?;
        out.push(entry);
    }
    Ok(out)
}

pub fn to_jsonl(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, AudioError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(AudioError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), AudioError> {
    let path = path.as_ref();
    std::fs::write(path, to_jsonl(entries)).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}
