//! Output files. Every artifact carries the config hash and seed.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssgl_core::io::{Cell, CsvTable};
use ssgl_core::model::PreparedModel;
use ssgl_core::{Predictor, SsglFit, SsglPath};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: u64) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let digest = Sha256::digest(serde_json::to_vec(&config)?);
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Provenance {
            command: command.to_string(),
            config,
            config_hash,
            seed,
        })
    }

    /// Append provenance columns to a table.
    pub fn stamp(&self, mut t: CsvTable) -> CsvTable {
        t.header.push("config_hash".into());
        t.header.push("seed".into());
        for row in &mut t.rows {
            row.push(Cell::Text(self.config_hash.clone()));
            row.push(Cell::Text(self.seed.to_string()));
        }
        t
    }

    pub fn write_csv(&self, dir: &Path, name: &str, t: CsvTable) -> Result<()> {
        let path = dir.join(name);
        self.stamp(t).write(&path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&self, dir: &Path, name: &str, body: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            schema_version: u32,
            #[serde(flatten)]
            provenance: &'a Provenance,
            #[serde(flatten)]
            body: &'a T,
        }
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(&Stamped {
            schema_version: SCHEMA_VERSION,
            provenance: self,
            body,
        })?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda0: f64,
    pub intercept: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub generalized_dimension: usize,
    pub selected_groups: Vec<String>,
    pub beta_original: Vec<f64>,
    pub beta_working: Vec<f64>,
}

impl FitSummary {
    pub fn new(model: &PreparedModel, fit: &SsglFit) -> Self {
        let groups = model.design.groups();
        FitSummary {
            lambda0: fit.lambda0,
            intercept: fit.intercept,
            sigma2: fit.sigma2,
            theta: fit.theta,
            iterations: fit.iterations,
            converged: fit.converged,
            generalized_dimension: fit.generalized_dimension,
            selected_groups: fit.selected_groups.iter().map(|&g| groups[g].id.clone()).collect(),
            beta_original: fit.beta_original.iter().copied().collect(),
            beta_working: fit.beta_ortho.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub lambda0: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sigma2: f64,
    pub theta: f64,
    pub selected: usize,
    pub sigma_updated: bool,
}

pub fn ladder_trace(path: &SsglPath) -> Vec<Rung> {
    path.fits
        .iter()
        .map(|f| Rung {
            lambda0: f.lambda0,
            iterations: f.iterations,
            converged: f.converged,
            sigma2: f.sigma2,
            theta: f.theta,
            selected: f.selected_groups.len(),
            sigma_updated: f.sigma_updated,
        })
        .collect()
}

pub fn ladder_table(rungs: &[Rung]) -> CsvTable {
    let mut t = CsvTable::new(["lambda0", "iterations", "converged", "sigma2", "theta", "selected", "sigma_updated"]);
    for r in rungs {
        t.push(vec![
            r.lambda0.into(),
            r.iterations.into(),
            r.converged.to_string().into(),
            r.sigma2.into(),
            r.theta.into(),
            r.selected.into(),
            r.sigma_updated.to_string().into(),
        ]);
    }
    t
}

/// Contents of `model.json` after the provenance header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBody {
    pub response: String,
    /// Raw CSV columns the predictor consumes, in order.
    pub covariates: Vec<String>,
    pub predictor: Predictor,
    pub fit: FitSummary,
    pub ladder: Vec<Rung>,
}

/// `model.json` as read back by `predict`.
#[derive(Debug, Clone, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: ModelBody,
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: ModelFile = serde_json::from_str(&text).map_err(ssgl_core::SsglError::from)?;
    if m.schema_version > SCHEMA_VERSION {
        return Err(ssgl_core::SsglError::InvalidConfig(format!(
            "model schema version {} is newer than supported version {SCHEMA_VERSION}",
            m.schema_version
        ))
        .into());
    }
    Ok(m)
}

pub fn coefficient_table(model: &PreparedModel, fit: &SsglFit, names: &[String]) -> CsvTable {
    let mut t = CsvTable::new(["group", "column", "beta_original", "beta_working"]);
    for g in 0..model.design.n_groups() {
        let id = &model.design.group(g).id;
        for j in model.design.group_range(g) {
            t.push(vec![
                id.clone().into(),
                names.get(j).cloned().unwrap_or_else(|| format!("{id}[{}]", j)).into(),
                fit.beta_original[j].into(),
                fit.beta_ortho[j].into(),
            ]);
        }
    }
    t
}

pub fn vector_table(name: &str, v: &[f64]) -> CsvTable {
    let mut t = CsvTable::new(["row", name]);
    for (i, x) in v.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*x).into()]);
    }
    t
}
