//! Two-level label taxonomy: coarse labels, fine labels, and the
//! coarse-to-fine mapping that partitions the fine labels.
//!
//! The on-disk form is tab-separated UTF-8, one record per fine label:
//!
//! ```text
//! # coarse<TAB>fine[<TAB>gloss]
//! sports	hockey	Ice hockey is a team sport played on ice.
//! sports	tennis
//! arts	dance
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. A record with an
//! empty fine field declares a coarse label without children, which is
//! rejected once the whole file has been read. Ids are dense and assigned
//! in order of first appearance.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_name;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FineId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoarseId(pub usize);

impl fmt::Display for FineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.0)
    }
}

impl fmt::Display for CoarseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineLabel {
    pub id: FineId,
    pub surface_name: String,
    pub gloss: Option<String>,
    pub parent: CoarseId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseLabel {
    pub id: CoarseId,
    pub surface_name: String,
    pub children: Vec<FineId>,
}

/// One line of the taxonomy file.
#[derive(Clone, Debug, PartialEq)]
pub struct TaxonomyRecord {
    pub coarse: String,
    pub fine: String,
    pub gloss: Option<String>,
}

impl TaxonomyRecord {
    pub fn new(coarse: impl Into<String>, fine: impl Into<String>) -> Self {
        TaxonomyRecord {
            coarse: coarse.into(),
            fine: fine.into(),
            gloss: None,
        }
    }

    pub fn with_gloss(mut self, gloss: impl Into<String>) -> Self {
        self.gloss = Some(gloss.into());
        self
    }
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    coarse: Vec<CoarseLabel>,
    fine: Vec<FineLabel>,
    coarse_by_name: HashMap<String, CoarseId>,
    fine_by_name: HashMap<String, FineId>,
}

impl Taxonomy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let coarse = fields.next().unwrap_or("").trim().to_string();
            let fine = fields.next().unwrap_or("").trim().to_string();
            let gloss = fields
                .next()
                .map(str::trim)
                .filter(|g| !g.is_empty())
                .map(str::to_string);
            if fields.next().is_some() {
                return Err(Error::Taxonomy(format!(
                    "line {}: expected at most 3 tab-separated fields",
                    lineno + 1
                )));
            }
            records.push(TaxonomyRecord {
                coarse,
                fine,
                gloss,
            });
        }
        Self::from_records(&records)
    }

    pub fn from_records(records: &[TaxonomyRecord]) -> Result<Self> {
        let mut coarse: Vec<CoarseLabel> = Vec::new();
        let mut fine: Vec<FineLabel> = Vec::new();
        let mut coarse_by_name = HashMap::new();
        let mut fine_by_name: HashMap<String, FineId> = HashMap::new();

        for rec in records {
            let fine_key = normalize_name(&rec.fine);
            let coarse_key = normalize_name(&rec.coarse);
            if coarse_key.is_empty() {
                if fine_key.is_empty() {
                    continue;
                }
                return Err(Error::Taxonomy(format!(
                    "fine label '{}' has no parent",
                    rec.fine
                )));
            }
            let cid = *coarse_by_name.entry(coarse_key).or_insert_with(|| {
                let id = CoarseId(coarse.len());
                coarse.push(CoarseLabel {
                    id,
                    surface_name: rec.coarse.clone(),
                    children: Vec::new(),
                });
                id
            });
            if fine_key.is_empty() {
                continue;
            }
            if let Some(&prev) = fine_by_name.get(&fine_key) {
                let prev_parent = fine[prev.0].parent;
                return Err(if prev_parent != cid {
                    Error::Taxonomy(format!(
                        "fine label '{}' has two parents ('{}' and '{}')",
                        rec.fine, coarse[prev_parent.0].surface_name, rec.coarse
                    ))
                } else {
                    Error::Taxonomy(format!("duplicate fine surface name '{}'", rec.fine))
                });
            }
            let fid = FineId(fine.len());
            fine.push(FineLabel {
                id: fid,
                surface_name: rec.fine.clone(),
                gloss: rec.gloss.clone(),
                parent: cid,
            });
            fine_by_name.insert(fine_key, fid);
            coarse[cid.0].children.push(fid);
        }

        if coarse.is_empty() {
            return Err(Error::Taxonomy("taxonomy is empty".into()));
        }
        if let Some(empty) = coarse.iter().find(|c| c.children.is_empty()) {
            return Err(Error::Taxonomy(format!(
                "coarse label '{}' has no fine children",
                empty.surface_name
            )));
        }

        Ok(Taxonomy {
            coarse,
            fine,
            coarse_by_name,
            fine_by_name,
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn n_fine(&self) -> usize {
        self.fine.len()
    }

    pub fn coarse_labels(&self) -> &[CoarseLabel] {
        &self.coarse
    }

    pub fn fine_labels(&self) -> &[FineLabel] {
        &self.fine
    }

    pub fn coarse(&self, id: CoarseId) -> &CoarseLabel {
        &self.coarse[id.0]
    }

    pub fn fine(&self, id: FineId) -> &FineLabel {
        &self.fine[id.0]
    }

    pub fn parent(&self, id: FineId) -> CoarseId {
        self.fine[id.0].parent
    }

    /// The fine candidates of a passage with this coarse label.
    pub fn candidates(&self, id: CoarseId) -> &[FineId] {
        &self.coarse[id.0].children
    }

    /// Fine labels outside the candidate set of `id`.
    pub fn negatives(&self, id: CoarseId) -> Vec<FineId> {
        self.fine
            .iter()
            .filter(|f| f.parent != id)
            .map(|f| f.id)
            .collect()
    }

    /// Coarse labels other than `id`.
    pub fn other_coarse(&self, id: CoarseId) -> Vec<CoarseId> {
        self.coarse
            .iter()
            .map(|c| c.id)
            .filter(|&c| c != id)
            .collect()
    }

    pub fn coarse_by_name(&self, name: &str) -> Option<CoarseId> {
        self.coarse_by_name.get(&normalize_name(name)).copied()
    }

    pub fn fine_by_name(&self, name: &str) -> Option<FineId> {
        self.fine_by_name.get(&normalize_name(name)).copied()
    }

    pub fn min_children(&self) -> usize {
        self.coarse
            .iter()
            .map(|c| c.children.len())
            .min()
            .unwrap_or(0)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# coarse\tfine\tgloss\n");
        for f in &self.fine {
            out.push_str(&self.coarse[f.parent.0].surface_name);
            out.push('\t');
            out.push_str(&f.surface_name);
            if let Some(g) = &f.gloss {
                out.push('\t');
                out.push_str(g);
            }
            out.push('\n');
        }
        out
    }
}
