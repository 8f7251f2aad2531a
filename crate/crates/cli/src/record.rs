use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{CliError, Command};

pub const SCHEMA_VERSION: u32 = 1;

/// Keys carrying wall-clock measurements; they are left out of the payload hash.
const TIMING_KEYS: [&str; 2] = ["runtimes", "wall_clock_seconds"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub command: Command,
    pub config: ExperimentConfig,
    /// sha256 over the command name and the serialized config.
    pub input_hash: String,
    pub payload: Value,
    /// sha256 over the payload with timing fields removed.
    pub payload_hash: String,
    pub passed: bool,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub command: Command,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn input_hash(command: Command, config: &ExperimentConfig) -> String {
    let mut bytes = command.name().as_bytes().to_vec();
    bytes.push(0);
    bytes.extend(serde_json::to_vec(config).expect("config serializes"));
    sha256_hex(&bytes)
}

fn strip_timing(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| !TIMING_KEYS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), strip_timing(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(strip_timing).collect()),
        other => other.clone(),
    }
}

pub fn payload_hash(payload: &Value) -> String {
    sha256_hex(&serde_json::to_vec(&strip_timing(payload)).expect("payload serializes"))
}

impl ResultRecord {
    pub fn new(
        command: Command,
        config: &ExperimentConfig,
        payload: Value,
        passed: bool,
        wall_clock_seconds: f64,
    ) -> Self {
        ResultRecord {
            schema_version: SCHEMA_VERSION,
            command,
            config: config.clone(),
            input_hash: input_hash(command, config),
            payload_hash: payload_hash(&payload),
            payload,
            passed,
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let rec: ResultRecord = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("malformed result record: {e}")))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema version {}",
                rec.schema_version
            )));
        }
        Ok(rec)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ErrorRecord {
    pub fn new(command: Command, err: &CliError) -> Self {
        ErrorRecord {
            schema_version: SCHEMA_VERSION,
            command,
            kind: err.kind().to_string(),
            message: err.to_string(),
            exit_code: err.exit_code(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}
