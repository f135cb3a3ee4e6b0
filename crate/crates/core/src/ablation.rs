//! Grid over updating scale, tree depth and decode input, evaluated on a
//! synthetic benchmark.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ctc::{decode, DecodeConfig, WerAccumulator};
use crate::error::{HstError, Result};
use crate::model::{train, LinearModel, Sample, TrainConfig};
use crate::refine::{path_gloss_counts, refine_logits, RefinerConfig, UpdateMatrix};
use crate::scalar::Scalar;
use crate::search::{PathSearcher, SearchConfig};
use crate::synth::SynthData;
use crate::tree::{build_hst, Hst, TreeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeInput {
    /// Model probabilities as they are.
    Origin,
    /// Probabilities after tree refinement.
    Updated,
}

impl std::fmt::Display for DecodeInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecodeInput::Origin => "origin",
            DecodeInput::Updated => "updated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub alphas: Vec<f64>,
    pub depths: Vec<u8>,
    pub inputs: Vec<DecodeInput>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            alphas: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            depths: vec![1, 2, 3],
            inputs: vec![DecodeInput::Origin, DecodeInput::Updated],
        }
    }
}

impl AblationGrid {
    pub fn len(&self) -> usize {
        self.alphas.len() * self.depths.len() * self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub grid: AblationGrid,
    /// `depth` is overridden per grid cell.
    pub tree: TreeConfig,
    pub search: SearchConfig,
    pub decode: DecodeConfig,
    pub train: TrainConfig,
    pub normalize_rows: bool,
    /// Scale used for the depth and input summary tables.
    pub reference_alpha: f64,
}

/// Training schedule for the synthetic benchmark. The default
/// [`TrainConfig`] step is too small for plain gradient descent to fit the
/// classifier within a few dozen epochs.
pub fn benchmark_train_config() -> TrainConfig {
    TrainConfig { learning_rate: 0.05, epochs: 300, lambda_c: 1.0, seed: 7, init_scale: 0.01 }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            grid: AblationGrid::default(),
            tree: TreeConfig::default(),
            search: SearchConfig::default(),
            decode: DecodeConfig::default(),
            train: benchmark_train_config(),
            normalize_rows: true,
            reference_alpha: 1.5,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(HstError::Config("ablation grid is empty".into()));
        }
        for &alpha in &self.grid.alphas {
            RefinerConfig { alpha, normalize_rows: self.normalize_rows }.validate()?;
        }
        for &depth in &self.grid.depths {
            TreeConfig { depth, ..self.tree.clone() }.validate()?;
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub alpha: f64,
    pub depth: u8,
    pub input: DecodeInput,
    pub dev_wer: Option<f64>,
    pub eval_wer: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRun {
    pub depth: u8,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub runs: Vec<DepthRun>,
    pub cells: Vec<AblationCell>,
}

/// Per-split WER: origin first, then one entry per alpha.
struct SplitScores {
    origin: Result<f64>,
    updated: Vec<Result<f64>>,
}

fn score_split<S: Scalar>(
    model: &LinearModel<S>,
    tree: &Hst<S>,
    samples: &[Sample<S>],
    config: &AblationConfig,
) -> Result<SplitScores> {
    let searcher = PathSearcher::new(tree);
    let alphas = &config.grid.alphas;
    let mut origin = WerAccumulator::default();
    let mut updated: Vec<Result<WerAccumulator>> = alphas.iter().map(|_| Ok(WerAccumulator::default())).collect();
    for sample in samples {
        let fwd = model.forward(&sample.features)?;
        origin.add(&sample.labels, &decode(&fwd.probs, &config.decode)?);
        let path = searcher.search(&fwd.aligned, &config.search)?;
        let counts = path_gloss_counts(&path, tree, fwd.probs.frames(), fwd.probs.n_classes())?;
        for (acc, &alpha) in updated.iter_mut().zip(alphas) {
            let Ok(inner) = acc else { continue };
            let refiner = RefinerConfig { alpha, normalize_rows: config.normalize_rows };
            let hyp = UpdateMatrix::from_counts(&counts, alpha)
                .and_then(|w| refine_logits(&fwd.probs, &w, &refiner))
                .and_then(|p| decode(&p, &config.decode));
            match hyp {
                Ok(h) => inner.add(&sample.labels, &h),
                Err(e) => *acc = Err(e),
            }
        }
    }
    Ok(SplitScores { origin: origin.wer(), updated: updated.into_iter().map(|a| a.and_then(|a| a.wer())).collect() })
}

fn split_cell(scores: &Result<SplitScores>, input: DecodeInput, alpha_index: usize) -> std::result::Result<f64, String> {
    let s = scores.as_ref().map_err(|e| e.to_string())?;
    let r = match input {
        DecodeInput::Origin => &s.origin,
        DecodeInput::Updated => &s.updated[alpha_index],
    };
    r.as_ref().map(|w| *w).map_err(|e| e.to_string())
}

/// Trains one model per depth on the train split, then scores dev and eval
/// for every (alpha, input). A failure in one depth or cell is recorded in
/// the report and the remaining cells still run.
pub fn run_ablation<S: Scalar>(data: &SynthData<S>, config: &AblationConfig) -> Result<AblationReport> {
    config.validate()?;
    let corpus = &data.corpus;
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for &depth in &config.grid.depths {
        log::info!("ablation: depth {depth}");
        let trained = build_hst(corpus, &TreeConfig { depth, ..config.tree.clone() }).and_then(|tree| {
            let init = LinearModel::init(
                corpus.dimension(),
                corpus.dimension(),
                corpus.vocabulary_size(),
                config.train.seed,
                config.train.init_scale,
            );
            let (model, trace) = train(init, &data.train, &tree, &config.train)?;
            Ok((tree, model, trace))
        });
        let (dev, eval) = match &trained {
            Ok((tree, model, trace)) => {
                runs.push(DepthRun { depth, loss_trace: trace.iter().map(|x| x.to_f64_lossy()).collect(), error: None });
                (score_split(model, tree, &data.dev, config), score_split(model, tree, &data.eval, config))
            }
            Err(e) => {
                log::warn!("depth {depth} failed: {e}");
                runs.push(DepthRun { depth, loss_trace: vec![], error: Some(e.to_string()) });
                let fail = || Err(HstError::Consistency(format!("depth {depth} not trained: {e}")));
                (fail(), fail())
            }
        };
        for (ai, &alpha) in config.grid.alphas.iter().enumerate() {
            for &input in &config.grid.inputs {
                let d = split_cell(&dev, input, ai);
                let e = split_cell(&eval, input, ai);
                let error = d.as_ref().err().or(e.as_ref().err()).cloned();
                cells.push(AblationCell { alpha, depth, input, dev_wer: d.ok(), eval_wer: e.ok(), error });
            }
        }
    }
    Ok(AblationReport { config: config.clone(), runs, cells })
}

fn pct(w: Option<f64>) -> String {
    w.map_or_else(|| "n/a".to_string(), |w| format!("{:.1}", 100.0 * w))
}

impl AblationReport {
    pub fn cell(&self, alpha: f64, depth: u8, input: DecodeInput) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.depth == depth && c.input == input)
    }

    fn deepest(&self) -> Option<u8> {
        self.config.grid.depths.iter().copied().max()
    }

    /// Three WER tables (percent): updating scale at the deepest tree, tree
    /// depth at the reference scale, and origin vs. updated input.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let reference = self.config.reference_alpha;
        let row = |out: &mut String, label: &str, c: Option<&AblationCell>| {
            let (dev, eval) = c.map_or((None, None), |c| (c.dev_wer, c.eval_wer));
            let _ = writeln!(out, "{label:<12} {:>8} {:>8}", pct(dev), pct(eval));
        };
        let header = |out: &mut String, title: &str| {
            let _ = writeln!(out, "{title}\n{:<12} {:>8} {:>8}", "", "Dev", "Eval");
        };

        if let Some(depth) = self.deepest() {
            header(&mut out, &format!("Updating scale (depth {depth}, updated input)"));
            for &alpha in &self.config.grid.alphas {
                row(&mut out, &format!("alpha={alpha}"), self.cell(alpha, depth, DecodeInput::Updated));
            }
            out.push('\n');
        }

        header(&mut out, &format!("Tree depth (alpha {reference}, updated input)"));
        for &depth in &self.config.grid.depths {
            row(&mut out, &format!("depth={depth}"), self.cell(reference, depth, DecodeInput::Updated));
        }

        if let Some(depth) = self.deepest() {
            out.push('\n');
            header(&mut out, &format!("Decode input (depth {depth}, alpha {reference})"));
            for &input in &self.config.grid.inputs {
                row(&mut out, &input.to_string(), self.cell(reference, depth, input));
            }
        }

        let failed: Vec<&AblationCell> = self.cells.iter().filter(|c| c.error.is_some()).collect();
        if !failed.is_empty() {
            let _ = writeln!(out, "\n{} cell(s) failed", failed.len());
            for c in failed {
                let _ = writeln!(
                    out,
                    "  alpha={} depth={} input={}: {}",
                    c.alpha,
                    c.depth,
                    c.input,
                    c.error.as_deref().unwrap_or_default()
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn small() -> (SynthData<f64>, AblationConfig) {
        let synth = SynthConfig { n_glosses: 4, dimension: 8, n_train: 12, n_dev: 4, n_eval: 4, ..Default::default() };
        let data = generate_dataset::<f64>(&synth).unwrap();
        let config = AblationConfig { train: TrainConfig { epochs: 3, ..benchmark_train_config() }, ..Default::default() };
        (data, config)
    }

    #[test]
    fn report_has_every_cell_and_alpha_one_matches_origin() {
        let (data, config) = small();
        let report = run_ablation(&data, &config).unwrap();
        assert_eq!(report.cells.len(), config.grid.len());
        assert!(report.cells.iter().all(|c| c.error.is_none() && c.dev_wer.is_some() && c.eval_wer.is_some()));
        for depth in [1, 2, 3] {
            let o = report.cell(1.0, depth, DecodeInput::Origin).unwrap();
            let u = report.cell(1.0, depth, DecodeInput::Updated).unwrap();
            assert_eq!((o.dev_wer, o.eval_wer), (u.dev_wer, u.eval_wer));
        }
        let table = report.render_table();
        assert!(table.contains("alpha=1.75"));
        assert!(table.contains("depth=2"));
    }

    #[test]
    fn failing_depth_does_not_abort_others() {
        let (data, mut config) = small();
        // far too large a step: training diverges at every depth
        config.train.learning_rate = 1e300;
        let report = run_ablation(&data, &config).unwrap();
        assert_eq!(report.cells.len(), config.grid.len());
        assert!(report.runs.iter().all(|r| r.error.is_some()));
        assert!(report.cells.iter().all(|c| c.error.is_some()));
    }

    #[test]
    fn empty_grid_rejected() {
        let (data, mut config) = small();
        config.grid.depths.clear();
        assert!(run_ablation(&data, &config).is_err());
    }
}
