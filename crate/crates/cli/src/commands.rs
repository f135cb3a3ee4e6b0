use std::fs;
use std::path::{Path, PathBuf};

use hst_core::ablation::{run_ablation, AblationConfig};
use hst_core::contrastive::{contrastive_loss as contrastive, pseudo_labels, ContrastiveBatch};
use hst_core::ctc::{self, WerAccumulator};
use hst_core::data::{write_matrix_tsv, DescriptionCorpus, GlossSequence, LogitMatrix, VisualSequence};
use hst_core::gradcheck::check_all;
use hst_core::model::{self, LinearModel, TrainConfig};
use hst_core::refine::{build_update_matrix, refine_logits};
use hst_core::search::{PathSelection, SearchConfig};
use hst_core::synth::{generate_dataset, load_samples, SynthData};
use hst_core::tree::{build_hst, BranchingRule, Hst, TreeConfig};
use hst_core::HstError;
use serde::{Deserialize, Serialize};

use crate::config::{pick, require, PipelineConfig};
use crate::*;

type Res = Result<(), CliError>;

/// Refuses to write over any of `inputs`.
fn guard(out: &Path, inputs: &[&Path]) -> Res {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&o)) {
            return Err(CliError::Validation(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(HstError::from)? + "\n";
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Res {
    println!("{}", serde_json::to_string_pretty(value).map_err(HstError::from)?);
    Ok(())
}

fn load_tree(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<(PathBuf, Hst<f64>), CliError> {
    let path = pick(flag, &cfg.tree, "tree")?;
    let tree = Hst::load(require(&path)?)?;
    Ok((path, tree))
}

fn load_corpus(flag: Option<PathBuf>, cfg: &PipelineConfig) -> Result<(PathBuf, DescriptionCorpus<f64>), CliError> {
    let path = pick(flag, &cfg.corpus, "corpus")?;
    let corpus = DescriptionCorpus::load(require(&path)?)?;
    Ok((path, corpus))
}

pub fn build_tree(a: BuildTreeArgs, cfg: PipelineConfig) -> Res {
    let (corpus_path, corpus) = load_corpus(a.corpus, &cfg)?;
    let mut tc: TreeConfig = cfg.tree_build;
    if a.n1.is_some() {
        tc.n1 = a.n1;
    }
    if let Some(d) = a.depth {
        tc.depth = d;
    }
    if let Some(b) = a.branching {
        tc.branching_rule = match b.as_str() {
            "sqrt" => BranchingRule::Sqrt,
            k => BranchingRule::Fixed(
                k.parse().map_err(|_| CliError::Validation(format!("--branching must be `sqrt` or a count, got {k:?}")))?,
            ),
        };
    }
    guard(&a.out, &[&corpus_path])?;
    let tree = build_hst(&corpus, &tc)?;
    log::info!("built {} nodes over {} statements", tree.len(), corpus.len());
    tree.save(&a.out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PathReport {
    config: SearchConfig,
    video_id: String,
    selection: PathSelection<f64>,
}

pub fn search_path(a: SearchPathArgs, cfg: PipelineConfig) -> Res {
    let (tree_path, tree) = load_tree(a.tree, &cfg)?;
    let mut sc = cfg.search;
    if let Some(g) = a.granularity {
        sc.granularity = g;
    }
    if let Some(r) = a.radius {
        sc.window_radius = r;
    }
    let seq = VisualSequence::<f64>::load(require(&a.features)?)?;
    guard(&a.out, &[&tree_path, &a.features])?;
    let selection = hst_core::search::search_path(&tree, &seq, &sc)?;
    write_json(&a.out, &PathReport { config: sc, video_id: seq.video_id.clone(), selection })
}

pub fn refine(a: RefineArgs, cfg: PipelineConfig) -> Res {
    let (tree_path, tree) = load_tree(a.tree, &cfg)?;
    let mut rc = cfg.refiner;
    if let Some(alpha) = a.alpha {
        rc.alpha = alpha;
    }
    if a.no_normalize {
        rc.normalize_rows = false;
    }
    let origin = LogitMatrix::<f64>::load(require(&a.logits)?)?;
    let text = fs::read_to_string(require(&a.path)?).map_err(HstError::from)?;
    let report: PathReport = serde_json::from_str(&text).map_err(HstError::from)?;
    guard(&a.out, &[&tree_path, &a.logits, &a.path])?;
    let w = build_update_matrix(&report.selection, &tree, origin.frames(), origin.n_classes(), &rc)?;
    refine_logits(&origin, &w, &rc)?.save(&a.out)?;
    Ok(())
}

pub fn decode(a: DecodeArgs, cfg: PipelineConfig) -> Res {
    let mut dc = cfg.decode;
    if let Some(m) = a.mode {
        dc.mode = m;
    }
    if let Some(w) = a.beam_width {
        dc.beam_width = w;
    }
    let probs = LogitMatrix::<f64>::load(require(&a.logits)?)?;
    let hyp = ctc::decode(&probs, &dc)?;
    match a.out {
        Some(out) => {
            guard(&out, &[&a.logits])?;
            hyp.save(&out)?;
        }
        None => println!("{hyp}"),
    }
    Ok(())
}

pub fn ctc_loss(a: CtcLossArgs) -> Res {
    let probs = LogitMatrix::<f64>::load(require(&a.logits)?)?;
    let labels = GlossSequence::load(require(&a.labels)?)?;
    let r = ctc::ctc_loss(&probs, &labels, a.grad_out.is_some())?;
    if let (Some(out), Some(g)) = (&a.grad_out, &r.gradient) {
        guard(out, &[&a.logits, &a.labels])?;
        let mut buf = Vec::new();
        write_matrix_tsv(&mut buf, g)?;
        fs::write(out, buf).map_err(HstError::from)?;
    }
    println!("{}", r.negative_log_likelihood);
    Ok(())
}

#[derive(Serialize)]
struct ContrastiveReport {
    loss: f64,
    terms_per_layer: Vec<usize>,
}

pub fn contrastive_loss(a: ContrastiveLossArgs, cfg: PipelineConfig) -> Res {
    let (_, tree) = load_tree(a.tree, &cfg)?;
    let features = VisualSequence::<f64>::load(require(&a.features)?)?;
    let probs = LogitMatrix::<f64>::load(require(&a.logits)?)?;
    if probs.frames() != features.len() {
        return Err(CliError::Validation(format!(
            "{} feature frames but {} logit frames",
            features.len(),
            probs.frames()
        )));
    }
    let batch = ContrastiveBatch::build(&tree, features.frames(), &pseudo_labels(&probs))?;
    let out = contrastive(&batch, &tree, false)?;
    print_json(&ContrastiveReport { loss: out.value, terms_per_layer: out.terms_per_layer })
}

pub fn eval_wer(a: EvalWerArgs) -> Res {
    let refs = GlossSequence::load_all(require(&a.reference)?)?;
    let hyps = GlossSequence::load_all(require(&a.hyp)?)?;
    if refs.len() != hyps.len() {
        return Err(CliError::Validation(format!(
            "{} reference lines but {} hypothesis lines",
            refs.len(),
            hyps.len()
        )));
    }
    let mut acc = WerAccumulator::default();
    for (r, h) in refs.iter().zip(&hyps) {
        acc.add(r, h);
    }
    println!("WER {:.1}%", 100.0 * acc.wer()?);
    Ok(())
}

/// A benchmark directory's `train` split, or the directory itself.
fn training_samples(dir: &Path) -> Result<Vec<model::Sample<f64>>, CliError> {
    let split = dir.join("train");
    let samples = load_samples(if split.is_dir() { &split } else { dir })?;
    if samples.is_empty() {
        return Err(CliError::Validation(format!("no *.feat.tsv files under {}", dir.display())));
    }
    Ok(samples)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    tree_config: &'a TreeConfig,
    samples: usize,
    loss_trace: Vec<f64>,
}

pub fn train(a: TrainArgs, cfg: PipelineConfig) -> Res {
    let (_, corpus) = load_corpus(a.corpus, &cfg)?;
    let (_, tree) = load_tree(a.tree, &cfg)?;
    let data = pick(a.data, &cfg.data, "data")?;
    let mut tc = cfg.train;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    if let Some(lr) = a.lr {
        tc.learning_rate = lr;
    }
    if let Some(l) = a.lambda_c {
        tc.lambda_c = l;
    }
    tc.validate()?;
    if tree.dimension() != corpus.dimension() {
        return Err(HstError::DimensionMismatch { expected: corpus.dimension(), found: tree.dimension() }.into());
    }
    let samples = training_samples(require(&data)?)?;
    let d_raw = samples[0].features.dim();
    let init = LinearModel::init(d_raw, tree.dimension(), corpus.vocabulary_size(), tc.seed, tc.init_scale);
    let (trained, trace) = model::train(init, &samples, &tree, &tc)?;
    log::info!("final training loss {}", trace.last().copied().unwrap_or(f64::NAN));
    trained.save(&a.out)?;
    let report = TrainReport { config: &tc, tree_config: tree.config(), samples: samples.len(), loss_trace: trace };
    match a.report {
        Some(p) => write_json(&p, &report),
        None => print_json(&report),
    }
}

pub fn predict(a: PredictArgs, cfg: PipelineConfig) -> Res {
    let path = pick(a.model, &cfg.model, "model")?;
    let m = LinearModel::<f64>::load(require(&path)?)?;
    let raw = VisualSequence::<f64>::load(require(&a.features)?)?;
    guard(&a.logits_out, &[&path, &a.features])?;
    let fwd = m.forward(&raw)?;
    fwd.probs.save(&a.logits_out)?;
    if let Some(out) = a.aligned_out {
        guard(&out, &[&path, &a.features])?;
        fwd.aligned.save(&out)?;
    }
    Ok(())
}

pub fn grad_check(a: GradCheckArgs, cfg: PipelineConfig) -> Res {
    let mut gc = cfg.grad_check;
    if let Some(n) = a.fixtures {
        gc.fixtures = n;
    }
    let reports = check_all(&gc)?;
    for r in &reports {
        log::info!("{}: max relative error {:.3e} over {} components", r.name, r.max_relative_error, r.components);
    }
    let value = serde_json::json!({ "config": gc, "checks": reports });
    match &a.out {
        Some(p) => write_json(p, &value)?,
        None => print_json(&value)?,
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed: {}", failed.join(", "))))
    }
}

pub fn gen_synth(a: GenSynthArgs, cfg: PipelineConfig) -> Res {
    let data = generate_dataset::<f64>(&cfg.synth)?;
    data.save(&a.out)?;
    log::info!(
        "wrote {} statements and {}/{}/{} videos to {}",
        data.corpus.len(),
        data.train.len(),
        data.dev.len(),
        data.eval.len(),
        a.out.display()
    );
    Ok(())
}

pub fn ablate(a: AblateArgs, cfg: PipelineConfig) -> Res {
    let dir = pick(a.data, &cfg.data, "data")?;
    let data = SynthData::<f64>::load(require(&dir)?)?;
    let mut ac: AblationConfig = cfg.ablation;
    if let Some(g) = &a.grid {
        ac.grid = load_grid(g)?;
    }
    let report = run_ablation(&data, &ac)?;
    write_json(&a.out, &report)?;
    let table = report.render_table();
    match a.table {
        Some(p) => fs::write(&p, table).map_err(HstError::from)?,
        None => print!("{table}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct TreeSummary {
    dimension: usize,
    depth: u8,
    nodes_per_level: Vec<usize>,
    glosses: usize,
    statements: usize,
    valid: bool,
    problem: Option<String>,
}

pub fn inspect_tree(a: InspectTreeArgs, cfg: PipelineConfig) -> Res {
    let (_, tree) = load_tree(a.tree, &cfg)?;
    let problem = match a.corpus.or(cfg.corpus.clone()) {
        Some(p) => {
            let corpus = DescriptionCorpus::load(require(&p)?)?;
            tree.validate_against(&corpus).err().map(|e| e.to_string())
        }
        None => tree.validate().err().map(|e| e.to_string()),
    };
    let level_sets: Vec<Vec<usize>> = (1..=tree.depth()).map(|l| tree.level_ids(l)).collect();
    let glosses: std::collections::BTreeSet<usize> =
        level_sets[0].iter().flat_map(|&id| tree.nodes()[id].gloss_ids.iter().copied()).collect();
    let statements: usize = level_sets[0].iter().map(|&id| tree.nodes()[id].member_statement_ids.len()).sum();
    let summary = TreeSummary {
        dimension: tree.dimension(),
        depth: tree.depth(),
        nodes_per_level: level_sets.iter().map(Vec::len).collect(),
        glosses: glosses.len(),
        statements,
        valid: problem.is_none(),
        problem,
    };
    if a.json {
        print_json(&summary)?;
    } else {
        println!("dimension   {}", summary.dimension);
        println!("depth       {}", summary.depth);
        for (i, n) in summary.nodes_per_level.iter().enumerate() {
            println!("level {}     {n} nodes", i + 1);
        }
        println!("glosses     {}", summary.glosses);
        println!("statements  {}", summary.statements);
        println!("valid       {}", summary.problem.as_deref().unwrap_or("yes"));
    }
    match summary.problem {
        None => Ok(()),
        Some(p) => Err(CliError::Validation(p)),
    }
}
