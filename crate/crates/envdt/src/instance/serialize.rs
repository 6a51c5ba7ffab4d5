//! JSON-lines persistence for configurations.
//!
//! A configuration file starts with one header line naming the model and
//! its parameters, followed by one line per instance. Maps are ordered,
//! so serialisation is byte-stable for a given configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ComponentInstance, InstanceModel};

#[derive(Debug, thiserror::Error)]
pub enum InstanceFileError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: expected {expected} record")]
    WrongRecord { line: usize, expected: &'static str },
    #[error("file is empty")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Record {
    ConfigHeader { model: String, params: BTreeMap<String, i64> },
    Instance(ComponentInstance),
}

impl InstanceModel {
    /// Serialises the configuration to JSON lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Record::ConfigHeader {
            model: self.model_name.clone(),
            params: self.params.clone(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serialises"));
        out.push('\n');
        for inst in &self.instances {
            let rec = Record::Instance(inst.clone());
            out.push_str(&serde_json::to_string(&rec).expect("instance serialises"));
            out.push('\n');
        }
        out
    }

    /// Parses a configuration from JSON lines.
    pub fn from_jsonl(text: &str) -> Result<Self, InstanceFileError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (line, header) = lines.next().ok_or(InstanceFileError::Empty)?;
        let (model_name, params) =
            match serde_json::from_str(header).map_err(|source| InstanceFileError::Json {
                line: line + 1,
                source,
            })? {
                Record::ConfigHeader { model, params } => (model, params),
                Record::Instance(_) => {
                    return Err(InstanceFileError::WrongRecord { line: line + 1, expected: "header" })
                }
            };
        let mut instances = Vec::new();
        for (line, text) in lines {
            match serde_json::from_str(text).map_err(|source| InstanceFileError::Json {
                line: line + 1,
                source,
            })? {
                Record::Instance(inst) => instances.push(inst),
                Record::ConfigHeader { .. } => {
                    return Err(InstanceFileError::WrongRecord {
                        line: line + 1,
                        expected: "instance",
                    })
                }
            }
        }
        Ok(InstanceModel { model_name, params, instances })
    }
}
