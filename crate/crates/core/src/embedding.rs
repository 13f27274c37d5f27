//! Low-dimensional coordinates produced by a reducer, together with the
//! settings that produced them, and their CSV + JSON sidecar export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distmat::DistanceMatrix;
use crate::error::{Error, Result};
use crate::tsne::{self, TsneParams};
use crate::umap::{self, UmapParams};

/// Reducer and hyperparameters recorded alongside an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reducer", rename_all = "snake_case")]
pub enum ReducerSettings {
    Tsne(TsneParams),
    Umap(UmapParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub(crate) n: usize,
    pub(crate) dim: usize,
    pub(crate) coords: Vec<f64>,
    pub(crate) seed: u64,
    pub(crate) cost_history: Vec<f64>,
    pub(crate) settings: ReducerSettings,
}

/// Everything needed to regenerate an embedding, minus the input matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub cost_kind: String,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub settings: ReducerSettings,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cost_history(&self) -> &[f64] {
        &self.cost_history
    }

    pub fn settings(&self) -> &ReducerSettings {
        &self.settings
    }

    pub fn final_cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn cost_kind(&self) -> &'static str {
        match &self.settings {
            ReducerSettings::Tsne(p) => p.cost_kind.as_str(),
            ReducerSettings::Umap(_) => "fuzzy_cross_entropy",
        }
    }

    pub fn sidecar(&self) -> EmbeddingSidecar {
        EmbeddingSidecar {
            n: self.n,
            dim: self.dim,
            seed: self.seed,
            cost_kind: self.cost_kind().to_owned(),
            initial_cost: self.cost_history.first().copied().unwrap_or(f64::NAN),
            final_cost: self.final_cost(),
            settings: self.settings.clone(),
        }
    }

    /// `label,y1,…,yd` with a header row; row indices stand in for missing
    /// labels.
    pub fn to_csv_string(&self, labels: Option<&[String]>) -> Result<String> {
        if let Some(l) = labels {
            if l.len() != self.n {
                return Err(Error::InvalidParameter(format!(
                    "{} labels for {} embedded points",
                    l.len(),
                    self.n
                )));
            }
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_owned()];
        header.extend((1..=self.dim).map(|c| format!("y{c}")));
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        writer.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n {
            let label = labels
                .map(|l| l[i].clone())
                .unwrap_or_else(|| i.to_string());
            let mut row = vec![label];
            row.extend(self.point(i).iter().map(|v| v.to_string()));
            writer.write_record(&row).map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(
        &self,
        dir: impl AsRef<Path>,
        stem: &str,
        labels: Option<&[String]>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv_string(labels)?)
            .map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

/// Labeled points read back from an embedding CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub labels: Vec<String>,
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let dim = reader
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .len()
            .saturating_sub(1);
        let mut labels = Vec::new();
        let mut coords = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Format(e.to_string()))?;
            if record.len() != dim + 1 {
                return Err(Error::Format(format!(
                    "row {} has {} fields",
                    labels.len() + 1,
                    record.len()
                )));
            }
            labels.push(record[0].to_owned());
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("bad coordinate '{field}'")))?;
                coords.push(v);
            }
        }
        Ok(EmbeddingTable {
            labels,
            dim,
            coords,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingTable::from_csv_str(&text)
    }
}

/// Reducer choice plus hyperparameters, run on a distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reducer", rename_all = "snake_case")]
pub enum Reducer {
    Tsne(TsneParams),
    Etsne(TsneParams),
    Umap(UmapParams),
}

impl Reducer {
    pub fn name(&self) -> &'static str {
        match self {
            Reducer::Tsne(_) => "tsne",
            Reducer::Etsne(_) => "etsne",
            Reducer::Umap(_) => "umap",
        }
    }

    /// Embeds into `dim` dimensions; for UMAP, `dim` and `seed` override the
    /// corresponding parameter fields.
    pub fn embed(&self, m: &DistanceMatrix, dim: usize, seed: u64) -> Result<Embedding> {
        match self {
            Reducer::Tsne(p) => {
                tsne::tsne_embed(&tsne::perplexity_calibrate(m, p.perplexity)?, dim, p, seed)
            }
            Reducer::Etsne(p) => {
                tsne::etsne_embed(&tsne::perplexity_calibrate(m, p.perplexity)?, dim, p, seed)
            }
            Reducer::Umap(p) => umap::umap(
                m,
                &UmapParams {
                    dim,
                    seed,
                    ..p.clone()
                },
            ),
        }
    }
}
