//! Synthetic hierarchical Gaussian corpora.
//!
//! Every passage embedding is `mean + coarse offset + fine offset + noise`
//! with isotropic noise of standard deviation `1/sqrt(dim)` per coordinate,
//! so a cluster has unit RMS radius. Sibling fine centroids sit
//! `separation` radii apart and coarse centroids `coarse_separation` radii
//! apart. A fine prototype starts at its coarse centroid, moves a share
//! `prototype_offset` of the way toward its fine centroid and then takes a
//! random displacement, mimicking label-name embeddings that sit close to
//! their siblings and only roughly point at their cluster.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GoldLabels, Passage};
use crate::embedding::{id_hash, EmbeddingKind, EmbeddingManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::taxonomy::{FineId, Taxonomy, TaxonomyRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub n_coarse: usize,
    pub fine_per_coarse: usize,
    pub per_fine: usize,
    pub dim: usize,
    /// Distance between sibling fine centroids, in cluster radii.
    pub separation: f64,
    /// Distance between coarse centroids, in cluster radii.
    pub coarse_separation: f64,
    /// Length of the component shared by every passage, in cluster radii.
    pub mean_norm: f64,
    /// Mean fraction of a fine class whose text names the class.
    pub seed_fraction: f64,
    /// Per-class seed rates are drawn uniformly from
    /// `seed_fraction * [1 - seed_spread, 1 + seed_spread]`.
    pub seed_spread: f64,
    /// Fraction of all passages placed under the first coarse label.
    pub skew: Option<f64>,
    /// Share of the fine offset carried by a fine prototype.
    pub prototype_offset: f64,
    /// Length of the prototype displacement, in units of `separation`.
    pub prototype_noise: f64,
    /// Prototype displacement for the surface-name-only prototype file.
    pub plain_prototype_noise: f64,
    /// Pull of the first fine prototype toward the corpus mean, in `[0, 1]`.
    pub hub_strength: f64,
    pub text_len: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_coarse: 3,
            fine_per_coarse: 3,
            per_fine: 100,
            dim: 64,
            separation: 2.5,
            coarse_separation: 5.0,
            mean_norm: 3.0,
            seed_fraction: 0.05,
            seed_spread: 0.0,
            skew: None,
            prototype_offset: 0.2,
            prototype_noise: 1.0,
            plain_prototype_noise: 1.4,
            hub_strength: 0.0,
            text_len: 12,
            vocab: 2000,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_coarse == 0 || self.fine_per_coarse == 0 || self.per_fine == 0 || self.dim == 0 {
            return bad("label counts, passages per fine label and dim must be positive".into());
        }
        for (name, v) in [
            ("separation", self.separation),
            ("coarse_separation", self.coarse_separation),
            ("mean_norm", self.mean_norm),
            ("prototype_offset", self.prototype_offset),
            ("prototype_noise", self.prototype_noise),
            ("plain_prototype_noise", self.plain_prototype_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("seed_fraction", self.seed_fraction),
            ("hub_strength", self.hub_strength),
            ("seed_spread", self.seed_spread),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if let Some(s) = self.skew {
            if !(s > 0.0 && s < 1.0) || self.n_coarse < 2 {
                return bad(format!(
                    "skew must lie in (0, 1) and needs at least two coarse labels, got {s}"
                ));
            }
        }
        if self.text_len == 0 || self.vocab == 0 {
            return bad("text_len and vocab must be positive".into());
        }
        Ok(())
    }

    pub fn n_fine(&self) -> usize {
        self.n_coarse * self.fine_per_coarse
    }

    /// Passages per coarse label.
    fn coarse_sizes(&self) -> Vec<usize> {
        let total = self.n_fine() * self.per_fine;
        let per_coarse = self.fine_per_coarse * self.per_fine;
        match self.skew {
            None => vec![per_coarse; self.n_coarse],
            Some(s) => {
                let first = ((s * total as f64).round() as usize).clamp(1, total - 1);
                let rest = total - first;
                let others = self.n_coarse - 1;
                let mut sizes = vec![first];
                sizes.extend((0..others).map(|i| rest / others + usize::from(i < rest % others)));
                sizes
            }
        }
    }
}

pub fn coarse_name(c: usize) -> String {
    format!("c{c}")
}

pub fn fine_name(c: usize, f: usize) -> String {
    format!("c{c}f{f}")
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: GenSpec,
    pub taxonomy: Taxonomy,
    pub corpus: Corpus,
    pub gold: GoldLabels,
    pub passages: EmbeddingMatrix,
    /// Fine rows followed by coarse rows.
    pub prototypes: EmbeddingMatrix,
    pub plain_prototypes: EmbeddingMatrix,
}

/// Orthonormal directions when they fit in `dim`, random unit vectors otherwise.
fn directions<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        if out.len() < dim {
            for u in &out {
                let proj = v.dot(u);
                v.scaled_add(-proj, u);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-9 {
            out.push(v / norm);
        }
    }
    out
}

fn gaussian<R: Rng>(dim: usize, sd: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| sd * rng.sample::<f64, _>(StandardNormal))
}

fn to_matrix(rows: &[Array1<f64>], kind: EmbeddingKind) -> Result<EmbeddingMatrix> {
    let dim = rows.first().map_or(0, |r| r.len());
    let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().map(|&x| x as f32)).collect();
    EmbeddingMatrix::new(rows.len(), dim, data, kind)
}

pub fn generate(spec: &GenSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let noise_sd = 1.0 / (dim as f64).sqrt();
    let dirs = directions(1 + spec.n_coarse + spec.n_fine(), dim, &mut rng);
    let mean = &dirs[0] * spec.mean_norm;
    let coarse_step = spec.coarse_separation / std::f64::consts::SQRT_2;
    let fine_step = spec.separation / std::f64::consts::SQRT_2;

    let mut records = Vec::new();
    let mut coarse_centroids = Vec::new();
    let mut fine_centroids = Vec::new();
    let mut fine_anchors = Vec::new();
    for c in 0..spec.n_coarse {
        let cc = &mean + &(&dirs[1 + c] * coarse_step);
        for f in 0..spec.fine_per_coarse {
            let j = c * spec.fine_per_coarse + f;
            let offset = &dirs[1 + spec.n_coarse + j] * fine_step;
            fine_anchors.push(&cc + &(&offset * spec.prototype_offset));
            fine_centroids.push(&cc + &offset);
            records.push(
                TaxonomyRecord::new(coarse_name(c), fine_name(c, f))
                    .with_gloss(format!("synthetic topic {} under {}", fine_name(c, f), coarse_name(c))),
            );
        }
        coarse_centroids.push(cc);
    }
    let taxonomy = Taxonomy::from_records(&records)?;

    let mut passages = Vec::new();
    let mut rows = Vec::new();
    let mut gold = Vec::new();
    for (c, &size) in spec.coarse_sizes().iter().enumerate() {
        let k = spec.fine_per_coarse;
        for f in 0..k {
            let n = size / k + usize::from(f < size % k);
            let j = c * k + f;
            let spread = spec.seed_spread * rng.gen_range(-1.0..=1.0);
            let rate = (spec.seed_fraction * (1.0 + spread)).clamp(0.0, 1.0);
            let seeded: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
            for &is_seed in &seeded {
                rows.push(&fine_centroids[j] + &gaussian(dim, noise_sd, &mut rng));
                let mut words: Vec<String> = (0..spec.text_len)
                    .map(|_| format!("w{}", rng.gen_range(0..spec.vocab)))
                    .collect();
                if is_seed {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, fine_name(c, f));
                }
                let id = passages.len() as u64;
                passages.push(Passage::new(id, words.join(" "), taxonomy.coarse_labels()[c].id));
                gold.push(Some(FineId(j)));
            }
        }
    }

    let corpus_mean = rows.iter().fold(Array1::<f64>::zeros(dim), |acc, r| acc + r) / rows.len() as f64;
    let prototype_rows = |noise: f64, rng: &mut ChaCha8Rng| {
        let mut out: Vec<Array1<f64>> = fine_anchors
            .iter()
            .map(|c| {
                let d = gaussian(dim, 1.0, rng);
                let d = &d / d.dot(&d).sqrt();
                c + &(d * (noise * spec.separation))
            })
            .collect();
        if spec.hub_strength > 0.0 {
            let h = spec.hub_strength;
            out[0] = &out[0] * (1.0 - h) + &corpus_mean * h;
        }
        out.extend(coarse_centroids.iter().map(|c| {
            let d = gaussian(dim, 1.0, rng);
            let d = &d / d.dot(&d).sqrt();
            c + &(d * (noise * spec.separation))
        }));
        out
    };
    let protos = prototype_rows(spec.prototype_noise, &mut rng);
    let plain = prototype_rows(spec.plain_prototype_noise, &mut rng);

    Ok(SyntheticData {
        spec: spec.clone(),
        corpus: Corpus::new(passages),
        gold: GoldLabels { labels: gold },
        passages: to_matrix(&rows, EmbeddingKind::Passage)?,
        prototypes: to_matrix(&protos, EmbeddingKind::Prototype)?,
        plain_prototypes: to_matrix(&plain, EmbeddingKind::Prototype)?,
        taxonomy,
    })
}

/// Paths of the files written by [`write_to_dir`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPaths {
    pub taxonomy: PathBuf,
    pub corpus: PathBuf,
    pub passages: PathBuf,
    pub prototypes: PathBuf,
    pub plain_prototypes: PathBuf,
    pub spec: PathBuf,
}

impl SyntheticPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        SyntheticPaths {
            taxonomy: dir.join("taxonomy.tsv"),
            corpus: dir.join("corpus.jsonl"),
            passages: dir.join("passages.c2fe"),
            prototypes: dir.join("prototypes.c2fe"),
            plain_prototypes: dir.join("prototypes_plain.c2fe"),
            spec: dir.join("synthetic_spec.json"),
        }
    }
}

pub fn write_to_dir(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<SyntheticPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SyntheticPaths::in_dir(dir);
    fs::write(&paths.taxonomy, data.taxonomy.to_tsv()).map_err(|e| Error::io(&paths.taxonomy, e))?;
    data.corpus
        .write_jsonl(Some(&data.gold), &data.taxonomy, &paths.corpus)?;

    data.passages.write(&paths.passages)?;
    EmbeddingManifest {
        encoder: "synthetic".into(),
        template_id: None,
        gloss: false,
        n_rows: data.passages.n_rows(),
        id_hash: Some(id_hash(&data.corpus.ids())),
    }
    .write_for(&paths.passages)?;
    for (matrix, path, gloss) in [
        (&data.prototypes, &paths.prototypes, true),
        (&data.plain_prototypes, &paths.plain_prototypes, false),
    ] {
        matrix.write(path)?;
        EmbeddingManifest {
            encoder: "synthetic".into(),
            template_id: None,
            gloss,
            n_rows: matrix.n_rows(),
            id_hash: None,
        }
        .write_for(path)?;
    }
    let spec = serde_json::to_string_pretty(&data.spec)?;
    fs::write(&paths.spec, spec + "\n").map_err(|e| Error::io(&paths.spec, e))?;
    Ok(paths)
}

/// Ratio of the mean distance between fine centroids of the same coarse
/// label to the mean distance of passages from their own centroid.
pub fn fine_separation(rows: &Array2<f64>, gold: &[FineId], taxonomy: &Taxonomy) -> f64 {
    let n_fine = taxonomy.n_fine();
    let dim = rows.ncols();
    let mut sums = Array2::<f64>::zeros((n_fine, dim));
    let mut counts = vec![0usize; n_fine];
    for (r, g) in rows.rows().into_iter().zip(gold) {
        let mut s = sums.row_mut(g.0);
        s += &r;
        counts[g.0] += 1;
    }
    for (mut s, &n) in sums.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            s /= n as f64;
        }
    }
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let intra: f64 = rows
        .rows()
        .into_iter()
        .zip(gold)
        .map(|(r, g)| dist(r, sums.row(g.0)))
        .sum::<f64>()
        / rows.nrows() as f64;
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for c in taxonomy.coarse_labels() {
        for (a, &fa) in c.children.iter().enumerate() {
            for &fb in &c.children[a + 1..] {
                if counts[fa.0] > 0 && counts[fb.0] > 0 {
                    inter += dist(sums.row(fa.0), sums.row(fb.0));
                    pairs += 1;
                }
            }
        }
    }
    (inter / pairs.max(1) as f64) / intra
}
