//! Dataset manifests, epoch-wise batch sampling, and a synthetic grounded corpus.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::StsPair;
use crate::numerics::{cosine, normalized};
use crate::teacher_store::{FeatureTable, Modality};

/// Text-only sentences `D` and sentence–image pairs `D^M`.
///
/// File form, one record per line:
///
/// ```text
/// text<TAB>sentence_id
/// pair<TAB>sentence_id<TAB>image_id
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub text_only: Vec<String>,
    pub multimodal: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::MalformedFile {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match f.as_slice() {
                ["text", s] => m.text_only.push(s.to_string()),
                ["pair", s, i] => m.multimodal.push((s.to_string(), i.to_string())),
                _ => {
                    return Err(format!(
                        "line {}: expected `text\\tid` or `pair\\tsentence\\timage`",
                        n + 1
                    ))
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for id in &self.text_only {
            s.push_str(&format!("text\t{id}\n"));
        }
        for (a, b) in &self.multimodal {
            s.push_str(&format!("pair\t{a}\t{b}\n"));
        }
        s
    }

    /// Every sentence the student must embed: `D`, the sentences of `D^M`, then `extra`.
    pub fn sentence_ids<'a>(&'a self, extra: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let all = self
            .text_only
            .iter()
            .map(String::as_str)
            .chain(self.multimodal.iter().map(|(s, _)| s.as_str()))
            .chain(extra);
        for id in all {
            if seen.insert(id) {
                out.push(id.to_string());
            }
        }
        out
    }

    pub fn check_against(&self, text: &FeatureTable, visual: &FeatureTable) -> Result<()> {
        for (s, i) in &self.multimodal {
            if !text.contains(s) {
                return Err(Error::InconsistentManifest(format!(
                    "sentence {s:?} has no teacher text feature"
                )));
            }
            if !visual.contains(i) {
                return Err(Error::InconsistentManifest(format!(
                    "image {i:?} has no teacher visual feature"
                )));
            }
        }
        Ok(())
    }
}

/// Draws batches without replacement, reshuffling at each epoch. An epoch
/// remainder smaller than a batch is dropped so batches never repeat an item.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            order: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next batch of `min(batch, len)` distinct indices.
    pub fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let batch = batch.min(self.len);
        if self.order.is_empty() || self.cursor + batch > self.order.len() {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + batch].to_vec();
        self.cursor += batch;
        out
    }
}

/// Synthetic grounded corpus: sentences and images scattered around shared
/// concept directions, with gold STS scores taken from teacher text similarity.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub text: FeatureTable,
    pub visual: FeatureTable,
    pub manifest: DatasetManifest,
    pub dev: Vec<StsPair>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub sentences_per_concept: usize,
    pub images_per_concept: usize,
    pub dim: usize,
    /// Spread of sentence meanings around their concept.
    pub sentence_noise: f64,
    /// Teacher text feature noise around the sentence meaning.
    pub text_noise: f64,
    /// Teacher visual feature noise around the concept.
    pub visual_noise: f64,
    pub dev_pairs: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            concepts: 64,
            sentences_per_concept: 4,
            images_per_concept: 1,
            dim: 32,
            sentence_noise: 0.6,
            text_noise: 0.15,
            visual_noise: 0.3,
            dev_pairs: 200,
            seed: 7,
        }
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// `normalize(center + noise · g / √dim)` for a standard Gaussian `g`.
fn around(rng: &mut impl Rng, center: &[f64], noise: f64) -> Vec<f64> {
    let scale = noise / (center.len() as f64).sqrt();
    let g = gaussian(rng, center.len());
    let v: Vec<f64> = center.iter().zip(g).map(|(c, e)| c + scale * e).collect();
    normalized(&v).expect("non-degenerate sample")
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let concepts: Vec<Vec<f64>> = (0..spec.concepts)
            .map(|_| normalized(&gaussian(&mut rng, spec.dim)).expect("non-zero"))
            .collect();
        let (mut sids, mut srows, mut iids, mut irows) = (vec![], vec![], vec![], vec![]);
        let mut manifest = DatasetManifest::default();
        for (c, center) in concepts.iter().enumerate() {
            for k in 0..spec.images_per_concept {
                iids.push(format!("img{c:03}_{k}"));
                irows.push(around(&mut rng, center, spec.visual_noise));
            }
            for k in 0..spec.sentences_per_concept {
                let meaning = around(&mut rng, center, spec.sentence_noise);
                let id = format!("c{c:03}_s{k}");
                srows.push(around(&mut rng, &meaning, spec.text_noise));
                manifest.text_only.push(id.clone());
                let image = format!("img{c:03}_{}", k % spec.images_per_concept.max(1));
                manifest.multimodal.push((id.clone(), image));
                sids.push(id);
            }
        }
        let text = FeatureTable::from_rows(Modality::Text, sids.clone(), srows, true)?;
        let visual = FeatureTable::from_rows(Modality::Visual, iids, irows, true)?;

        // half of the dev pairs share a concept, half do not
        let per = spec.sentences_per_concept;
        let mut seen = BTreeSet::new();
        let mut dev = Vec::with_capacity(spec.dev_pairs);
        let max_attempts = spec.dev_pairs * 1000;
        let mut attempts = 0;
        while dev.len() < spec.dev_pairs && attempts < max_attempts {
            attempts += 1;
            let a = rng.gen_range(0..sids.len());
            let b = if dev.len() % 2 == 0 && per > 1 {
                (a / per) * per + rng.gen_range(0..per)
            } else {
                rng.gen_range(0..sids.len())
            };
            if a == b || !seen.insert((a.min(b), a.max(b))) {
                continue;
            }
            let c = cosine(text.row(&sids[a]).unwrap(), text.row(&sids[b]).unwrap())?;
            dev.push(StsPair::new(
                sids[a].clone(),
                sids[b].clone(),
                2.5 * (c + 1.0),
            )?);
        }
        Ok(Self {
            text,
            visual,
            manifest,
            dev,
        })
    }
}
