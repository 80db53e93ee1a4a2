use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CellIdentity, LocationFix, LocationSource};

/// Coordinates stored for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub accuracy_m: f64,
}

impl CellRecord {
    pub fn fix(&self) -> LocationFix {
        LocationFix {
            lat_deg: self.lat_deg,
            lon_deg: self.lon_deg,
            source: LocationSource::Cell,
            accuracy_m: self.accuracy_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CellDbError {
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("line {line}: duplicate cell {cell}")]
    Duplicate { line: usize, cell: CellIdentity },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cell {0} is not in the database and no GPS fix is available")]
pub struct UnknownCell(pub CellIdentity);

#[derive(Debug, Deserialize)]
struct CsvRow {
    mcc: u16,
    mnc: u16,
    lac: u16,
    ci: u32,
    lat: f64,
    lon: f64,
    accuracy_m: f64,
}

/// Cell-ID to coordinates table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellDatabase {
    cells: HashMap<CellIdentity, CellRecord>,
}

impl CellDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a cell, refusing duplicates and coordinates a fix could not carry.
    pub fn insert(&mut self, cell: CellIdentity, rec: CellRecord) -> Result<(), String> {
        cell.validate().map_err(|e| e.to_string())?;
        rec.fix().validate().map_err(|e| e.to_string())?;
        if self.cells.contains_key(&cell) {
            return Err(format!("duplicate cell {cell}"));
        }
        self.cells.insert(cell, rec);
        Ok(())
    }

    /// Reads `mcc,mnc,lac,ci,lat,lon,accuracy_m` rows.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, CellDbError> {
        let mut db = Self::new();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        for (i, rec) in r.deserialize::<CsvRow>().enumerate() {
            let line = i + 2;
            let row = rec.map_err(|e| CellDbError::Row { line, message: e.to_string() })?;
            let cell = CellIdentity {
                mcc: row.mcc,
                mnc: row.mnc,
                lac: row.lac,
                ci: row.ci,
            };
            let rec = CellRecord {
                lat_deg: row.lat,
                lon_deg: row.lon,
                accuracy_m: row.accuracy_m,
            };
            if db.cells.contains_key(&cell) {
                return Err(CellDbError::Duplicate { line, cell });
            }
            db.insert(cell, rec).map_err(|message| CellDbError::Row { line, message })?;
        }
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self, CellDbError> {
        let f = File::open(path).map_err(|e| CellDbError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(f)
    }

    pub fn get(&self, cell: &CellIdentity) -> Option<&CellRecord> {
        self.cells.get(cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// GPS when the phone has it, otherwise the serving cell's stored position.
pub fn resolve_location(gps: Option<&LocationFix>, cell: &CellIdentity, db: &CellDatabase) -> Result<LocationFix, UnknownCell> {
    if let Some(g) = gps {
        return Ok(LocationFix {
            source: LocationSource::Gps,
            ..*g
        });
    }
    db.get(cell).map(CellRecord::fix).ok_or(UnknownCell(*cell))
}
