//! Deterministic synthetic corpora and videos with known ground truth.
//!
//! Each gloss gets a random unit prototype and a random drift direction.
//! Sub-action k of a gloss embeds as `normalize(prototype + k * drift + noise)`,
//! and a video for a sentence repeats each sub-action embedding (plus fresh
//! noise) for a fixed number of frames, so raw features already live in the
//! description embedding space.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::data::{DescriptionCorpus, EmbeddingVector, GlossSequence, SubActionStatement, VisualSequence};
use crate::error::{HstError, Result};
use crate::model::Sample;
use crate::scalar::Scalar;

/// Prototype pairs must have cosine below this.
pub const PROTOTYPE_MAX_COSINE: f64 = 0.5;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_glosses: usize,
    pub subactions_per_gloss: usize,
    pub dimension: usize,
    pub frames_per_subaction: usize,
    /// Per-component standard deviation of the Gaussian noise added to both
    /// description embeddings and video frames.
    pub noise_sigma: f64,
    /// Inclusive (min, max) sentence length in glosses.
    pub sentence_length_range: (usize, usize),
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    /// Length of the per-step drift vector.
    pub drift_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_glosses: 10,
            subactions_per_gloss: 4,
            dimension: 32,
            frames_per_subaction: 2,
            noise_sigma: 0.1,
            sentence_length_range: (2, 4),
            n_train: 200,
            n_dev: 50,
            n_eval: 50,
            drift_scale: 0.25,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_glosses", self.n_glosses),
            ("subactions_per_gloss", self.subactions_per_gloss),
            ("frames_per_subaction", self.frames_per_subaction),
            ("n_train", self.n_train),
            ("n_dev", self.n_dev),
            ("n_eval", self.n_eval),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(HstError::Config(format!("{name} must be at least 1")));
        }
        if self.dimension < 2 {
            return Err(HstError::Config("dimension must be at least 2".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(HstError::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.drift_scale >= 0.0) || !self.drift_scale.is_finite() {
            return Err(HstError::Config("drift_scale must be non-negative".into()));
        }
        let (lo, hi) = self.sentence_length_range;
        if lo == 0 || hi < lo {
            return Err(HstError::Config(format!("bad sentence_length_range ({lo}, {hi})")));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> Pcg64Mcg {
        Pcg64Mcg::seed_from_u64(self.seed ^ stream.wrapping_mul(0xA076_1D64_78BD_642F))
    }
}

fn gaussian(rng: &mut Pcg64Mcg, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Unit prototypes and drift vectors per gloss, before any noise.
#[derive(Clone, Debug)]
pub struct GlossGeometry {
    pub prototypes: Vec<Vec<f64>>,
    pub drifts: Vec<Vec<f64>>,
}

/// Draws prototypes by rejection sampling: each new prototype is resampled
/// until its cosine with every earlier one is below [`PROTOTYPE_MAX_COSINE`].
/// If that fails after many attempts, the candidate with the smallest maximum
/// cosine is kept.
pub fn gloss_geometry(config: &SynthConfig) -> Result<GlossGeometry> {
    config.validate()?;
    let mut rng = config.rng(1);
    let d = config.dimension;
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(config.n_glosses);
    let mut drifts = Vec::with_capacity(config.n_glosses);
    for _ in 0..config.n_glosses {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let mut p = gaussian(&mut rng, d);
            normalize(&mut p);
            let worst = prototypes.iter().map(|q| cos(&p, q)).fold(f64::NEG_INFINITY, f64::max);
            if best.as_ref().is_none_or(|(b, _)| worst < *b) {
                best = Some((worst, p));
            }
            if worst < PROTOTYPE_MAX_COSINE {
                break;
            }
        }
        prototypes.push(best.expect("at least one attempt").1);
        let mut drift = gaussian(&mut rng, d);
        normalize(&mut drift);
        drift.iter_mut().for_each(|x| *x *= config.drift_scale);
        drifts.push(drift);
    }
    Ok(GlossGeometry { prototypes, drifts })
}

pub fn generate_corpus<S: Scalar>(config: &SynthConfig) -> Result<DescriptionCorpus<S>> {
    let geometry = gloss_geometry(config)?;
    let mut rng = config.rng(2);
    let mut rows = Vec::with_capacity(config.n_glosses * config.subactions_per_gloss);
    for g in 0..config.n_glosses {
        for k in 0..config.subactions_per_gloss {
            let noise = gaussian(&mut rng, config.dimension);
            let mut e: Vec<f64> = (0..config.dimension)
                .map(|j| geometry.prototypes[g][j] + k as f64 * geometry.drifts[g][j] + config.noise_sigma * noise[j])
                .collect();
            normalize(&mut e);
            rows.push((
                SubActionStatement {
                    statement_id: (g * config.subactions_per_gloss + k) as u64,
                    gloss_id: g,
                    position: k,
                    text: format!("gloss {g} sub-action {k}"),
                    embedding: EmbeddingVector::new(e.into_iter().map(S::lit).collect())?,
                },
                format!("GLOSS{g}"),
            ));
        }
    }
    DescriptionCorpus::from_statements(rows, Some(config.dimension))
}

/// Frames for `sentence`: every sub-action embedding of every gloss, repeated
/// `frames_per_subaction` times with fresh noise.
pub fn generate_video<S: Scalar>(
    corpus: &DescriptionCorpus<S>,
    config: &SynthConfig,
    sentence: &GlossSequence,
    video_id: impl Into<String>,
    rng: &mut Pcg64Mcg,
) -> Result<Sample<S>> {
    sentence.validate(corpus.vocabulary_size())?;
    if sentence.is_empty() {
        return Err(HstError::EmptyInput("sentence has no glosses".into()));
    }
    let d = corpus.dimension();
    let mut data: Vec<S> = Vec::new();
    for &g in sentence.labels() {
        for stmt in &corpus.glosses()[g].statements {
            for _ in 0..config.frames_per_subaction {
                let noise = gaussian(rng, d);
                data.extend(
                    stmt.embedding.as_slice().iter().zip(&noise).map(|(&x, &n)| x + S::lit(config.noise_sigma * n)),
                );
            }
        }
    }
    let frames = Array2::from_shape_vec((data.len() / d, d), data).expect("whole frames");
    Ok(Sample { features: VisualSequence::new(video_id, frames)?, labels: sentence.clone() })
}

#[derive(Clone, Debug)]
pub struct SynthData<S> {
    pub config: SynthConfig,
    pub corpus: DescriptionCorpus<S>,
    pub train: Vec<Sample<S>>,
    pub dev: Vec<Sample<S>>,
    pub eval: Vec<Sample<S>>,
}

fn random_sentence(rng: &mut Pcg64Mcg, config: &SynthConfig) -> GlossSequence {
    let (lo, hi) = config.sentence_length_range;
    let len = rng.random_range(lo..=hi);
    GlossSequence::new((0..len).map(|_| rng.random_range(0..config.n_glosses)).collect())
}

/// Corpus plus train/dev/eval splits. Dev and eval sentences never repeat a
/// training sentence (or each other).
pub fn generate_dataset<S: Scalar>(config: &SynthConfig) -> Result<SynthData<S>> {
    let corpus = generate_corpus::<S>(config)?;
    let mut sentence_rng = config.rng(3);
    let mut video_rng = config.rng(4);

    let train_sentences: Vec<GlossSequence> =
        (0..config.n_train).map(|_| random_sentence(&mut sentence_rng, config)).collect();
    let mut used: HashSet<GlossSequence> = train_sentences.iter().cloned().collect();
    let (lo, hi) = config.sentence_length_range;
    let space: f64 = (lo..=hi).map(|l| (config.n_glosses as f64).powi(l as i32)).sum();
    if (used.len() + config.n_dev + config.n_eval) as f64 > space {
        return Err(HstError::Config("not enough distinct sentences for disjoint held-out splits".into()));
    }
    let mut held_out = |n: usize| -> Vec<GlossSequence> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = random_sentence(&mut sentence_rng, config);
            if used.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    };
    let dev_sentences = held_out(config.n_dev);
    let eval_sentences = held_out(config.n_eval);

    let mut videos = |split: &str, sentences: Vec<GlossSequence>| -> Result<Vec<Sample<S>>> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| generate_video(&corpus, config, s, format!("{split}-{i:04}"), &mut video_rng))
            .collect()
    };
    let train = videos("train", train_sentences)?;
    let dev = videos("dev", dev_sentences)?;
    let eval = videos("eval", eval_sentences)?;
    Ok(SynthData { config: config.clone(), corpus, train, dev, eval })
}

pub const SPLITS: [&str; 3] = ["train", "dev", "eval"];

impl<S: Scalar> SynthData<S> {
    pub fn split(&self, name: &str) -> Option<&[Sample<S>]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "eval" => Some(&self.eval),
            _ => None,
        }
    }

    /// Layout: `synth.json`, `corpus.jsonl`, and per split
    /// `<split>/<index>.feat.tsv` with `<split>/<index>.labels.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&self.config)? + "\n")?;
        self.corpus.save(dir.join("corpus.jsonl"))?;
        for split in SPLITS {
            let sub = dir.join(split);
            fs::create_dir_all(&sub)?;
            for (i, s) in self.split(split).expect("known split").iter().enumerate() {
                s.features.save(sub.join(format!("{i:04}.feat.tsv")))?;
                s.labels.save(sub.join(format!("{i:04}.labels.txt")))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config: SynthConfig = serde_json::from_str(&fs::read_to_string(dir.join("synth.json"))?)?;
        let corpus = DescriptionCorpus::load(dir.join("corpus.jsonl"))?;
        Ok(Self {
            config,
            corpus,
            train: load_samples(dir.join("train"))?,
            dev: load_samples(dir.join("dev"))?,
            eval: load_samples(dir.join("eval"))?,
        })
    }
}

/// Reads every `*.feat.tsv` in `dir` (sorted by name) with its sibling
/// `*.labels.txt`.
pub fn load_samples<S: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<Sample<S>>> {
    let mut feats: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".feat.tsv"))
        .collect();
    feats.sort();
    feats
        .into_iter()
        .map(|p| {
            let name = p.to_string_lossy();
            let labels = PathBuf::from(format!("{}.labels.txt", &name[..name.len() - ".feat.tsv".len()]));
            Ok(Sample { features: VisualSequence::load(&p)?, labels: GlossSequence::load(&labels)? })
        })
        .collect()
}
