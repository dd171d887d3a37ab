//! Tagged model files written by the command-line tool.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::LearnedDetector;
use crate::error::{Error, Result};
use crate::models::{Autoencoder, MaskedTraining, PgAeModel, StandardAeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "model", rename_all = "snake_case")]
pub enum ModelFile {
    Pgae(PgAeModel),
    Ae(StandardAeModel),
    Masked(MaskedTraining),
    Detector(LearnedDetector),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Pgae(_) => "pgae",
            Self::Ae(_) => "ae",
            Self::Masked(_) => "masked",
            Self::Detector(_) => "detector",
        }
    }

    /// The autoencoder inside, for attacks and reconstruction.
    pub fn autoencoder(&self) -> &dyn Autoencoder {
        match self {
            Self::Pgae(m) => m,
            Self::Ae(m) => m,
            Self::Masked(t) => &t.model,
            Self::Detector(d) => &d.model,
        }
    }

    pub fn schema_hash(&self) -> &str {
        match self {
            Self::Pgae(m) => &m.meta.schema_hash,
            Self::Ae(m) => &m.meta.schema_hash,
            Self::Masked(t) => &t.model.meta.schema_hash,
            Self::Detector(d) => &d.model.meta.schema_hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: Self = serde_json::from_str(&text)?;
        // re-run the shape checks of each checkpoint type
        let checked = match &file {
            Self::Pgae(m) => PgAeModel::from_json(&serde_json::to_string(m)?).map(drop),
            Self::Masked(t) => PgAeModel::from_json(&serde_json::to_string(&t.model)?).map(drop),
            Self::Ae(m) => StandardAeModel::from_json(&serde_json::to_string(m)?).map(drop),
            Self::Detector(d) => StandardAeModel::from_json(&serde_json::to_string(&d.model)?).map(drop),
        };
        checked.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(file)
    }
}
