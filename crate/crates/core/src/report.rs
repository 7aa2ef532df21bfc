//! JSON persistence for reports and experiment tables.
//!
//! Field order follows struct declaration order and config echoes are
//! `BTreeMap`s, so equal values serialise to identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub use crate::attack::{ExperimentRow, ExperimentSummary, ExperimentTable, MatchEntry, ReconstructionReport};

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
