use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Deserialize)]
struct Row {
    token: String,
    patient_id: String,
}

/// Bearer tokens, each bound to exactly one patient and vice versa.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    by_token: HashMap<String, String>,
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: impl Into<String>, patient_id: impl Into<String>) -> Result<(), String> {
        let (token, patient_id) = (token.into(), patient_id.into());
        if token.is_empty() || patient_id.is_empty() {
            return Err("token and patient_id must be non-empty".into());
        }
        if self.by_token.contains_key(&token) {
            return Err(format!("token for {patient_id} is already provisioned"));
        }
        if self.by_token.values().any(|p| *p == patient_id) {
            return Err(format!("patient {patient_id} already has a token"));
        }
        self.by_token.insert(token, patient_id);
        Ok(())
    }

    /// Reads `token,patient_id` rows.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, TokenError> {
        let mut table = Self::new();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        for (i, row) in r.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| TokenError::Row { line, message: e.to_string() })?;
            table
                .insert(row.token, row.patient_id)
                .map_err(|message| TokenError::Row { line, message })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, TokenError> {
        let f = File::open(path).map_err(|e| TokenError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(f)
    }

    pub fn authenticate(&self, token: &str) -> Option<&str> {
        self.by_token.get(token).map(String::as_str)
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.by_token.values().map(String::as_str)
    }
}
