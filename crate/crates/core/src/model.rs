//! A linear stand-in for the recognition backbone: a projection into the
//! tree's embedding space followed by a linear classifier over glosses plus
//! blank, trained on CTC + lambda * contrastive loss.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::contrastive::{contrastive_loss, pseudo_labels, ContrastiveBatch};
use crate::ctc::{ctc_loss, softmax_rows};
use crate::data::{GlossSequence, LogitMatrix, VisualSequence};
use crate::error::{HstError, Result};
use crate::scalar::Scalar;
use crate::tree::Hst;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<S> {
    /// d_raw x d
    pub projection: Array2<S>,
    pub projection_bias: Array1<S>,
    /// d x (N+1)
    pub classifier: Array2<S>,
    pub classifier_bias: Array1<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda_c: f64,
    pub seed: u64,
    /// Standard deviation of the random part of the initial weights.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, epochs: 50, lambda_c: 1.0, seed: 7, init_scale: 0.01 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(HstError::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(HstError::Config("epochs must be at least 1".into()));
        }
        if !(self.lambda_c >= 0.0) || !self.lambda_c.is_finite() {
            return Err(HstError::Config("lambda_c must be non-negative".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(HstError::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Output of [`LinearModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward<S> {
    pub aligned: VisualSequence<S>,
    pub probs: LogitMatrix<S>,
}

/// Gradients with the same shapes as the model parameters.
pub type ModelGradients<S> = LinearModel<S>;

#[derive(Clone, Debug)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub ctc: S,
    /// `None` when the contrastive term was disabled or had no signal.
    pub contrastive: Option<S>,
    pub gradients: ModelGradients<S>,
}

impl<S: Scalar> LinearModel<S> {
    pub fn zeros(d_raw: usize, d: usize, n_classes: usize) -> Self {
        Self {
            projection: Array2::zeros((d_raw, d)),
            projection_bias: Array1::zeros(d),
            classifier: Array2::zeros((d, n_classes + 1)),
            classifier_bias: Array1::zeros(n_classes + 1),
        }
    }

    /// Gaussian weights with standard deviation `scale`, plus ones on the
    /// leading diagonal of the projection so training starts near the
    /// identity map. Biases start at zero.
    pub fn init(d_raw: usize, d: usize, n_classes: usize, seed: u64, scale: f64) -> Self {
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).expect("finite non-negative scale");
        let mut m = Self::zeros(d_raw, d, n_classes);
        for ((r, c), w) in m.projection.indexed_iter_mut() {
            *w = S::lit(normal.sample(&mut rng) + if r == c { 1.0 } else { 0.0 });
        }
        for w in m.classifier.iter_mut() {
            *w = S::lit(normal.sample(&mut rng));
        }
        m
    }

    pub fn d_raw(&self) -> usize {
        self.projection.nrows()
    }

    pub fn d(&self) -> usize {
        self.projection.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.ncols() - 1
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.d();
        let c = self.classifier.ncols();
        if self.projection_bias.len() != d || self.classifier.nrows() != d || self.classifier_bias.len() != c || c < 2 {
            return Err(HstError::Shape("inconsistent model parameter shapes".into()));
        }
        Ok(())
    }

    fn aligned_and_logits(&self, raw: &Array2<S>) -> Result<(Array2<S>, Array2<S>)> {
        if raw.ncols() != self.d_raw() {
            return Err(HstError::DimensionMismatch { expected: self.d_raw(), found: raw.ncols() });
        }
        let aligned = raw.dot(&self.projection) + &self.projection_bias;
        let logits = aligned.dot(&self.classifier) + &self.classifier_bias;
        Ok((aligned, logits))
    }

    pub fn forward(&self, raw: &VisualSequence<S>) -> Result<Forward<S>> {
        let (aligned, logits) = self.aligned_and_logits(raw.frames())?;
        Ok(Forward {
            aligned: VisualSequence::new(raw.video_id.clone(), aligned)?,
            probs: LogitMatrix::new(softmax_rows(&logits))?,
        })
    }

    /// CTC loss on the classifier output plus `lambda_c` times the contrastive
    /// loss on the projected features, with analytic parameter gradients.
    /// Pseudo labels come from the current (unrefined) probabilities and are
    /// treated as constants.
    pub fn total_loss(
        &self,
        raw: &VisualSequence<S>,
        labels: &GlossSequence,
        tree: &Hst<S>,
        config: &TrainConfig,
    ) -> Result<LossBreakdown<S>> {
        self.check_shapes()?;
        if tree.dimension() != self.d() {
            return Err(HstError::DimensionMismatch { expected: self.d(), found: tree.dimension() });
        }
        let (aligned, logits) = self.aligned_and_logits(raw.frames())?;
        let probs = LogitMatrix::new(softmax_rows(&logits))?;
        let ctc = ctc_loss(&probs, labels, true)?;
        let g_logits = ctc.gradient.expect("requested");

        let mut g_aligned = g_logits.dot(&self.classifier.t());
        let mut total = ctc.negative_log_likelihood;
        let mut contrastive = None;
        if config.lambda_c > 0.0 {
            let batch = ContrastiveBatch::build(tree, &aligned, &pseudo_labels(&probs))?;
            match contrastive_loss(&batch, tree, true) {
                Ok(out) => {
                    let lambda = S::lit(config.lambda_c);
                    total += lambda * out.value;
                    let g = out.gradient.expect("requested");
                    for (i, f) in batch.frames.iter().enumerate() {
                        let mut row = g_aligned.row_mut(f.frame);
                        row.scaled_add(lambda, &g.row(i));
                    }
                    contrastive = Some(out.value);
                }
                Err(HstError::NoSignal) => {}
                Err(e) => return Err(e),
            }
        }

        let gradients = LinearModel {
            projection: raw.frames().t().dot(&g_aligned),
            projection_bias: g_aligned.sum_axis(Axis(0)),
            classifier: aligned.t().dot(&g_logits),
            classifier_bias: g_logits.sum_axis(Axis(0)),
        };
        Ok(LossBreakdown { total, ctc: ctc.negative_log_likelihood, contrastive, gradients })
    }

    /// `self -= step * grads`
    pub fn descend(&mut self, grads: &ModelGradients<S>, step: S) {
        self.projection.scaled_add(-step, &grads.projection);
        self.projection_bias.scaled_add(-step, &grads.projection_bias);
        self.classifier.scaled_add(-step, &grads.classifier);
        self.classifier_bias.scaled_add(-step, &grads.classifier_bias);
    }

    fn accumulate(&mut self, other: &ModelGradients<S>) {
        self.projection += &other.projection;
        self.projection_bias += &other.projection_bias;
        self.classifier += &other.classifier;
        self.classifier_bias += &other.classifier_bias;
    }

    fn scale(&mut self, s: S) {
        self.projection *= s;
        self.projection_bias *= s;
        self.classifier *= s;
        self.classifier_bias *= s;
    }

    /// Flat view of every parameter in a fixed order: projection,
    /// projection bias, classifier, classifier bias.
    pub fn parameters(&self) -> Vec<S> {
        self.projection
            .iter()
            .chain(self.projection_bias.iter())
            .chain(self.classifier.iter())
            .chain(self.classifier_bias.iter())
            .copied()
            .collect()
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.projection
            .iter_mut()
            .chain(self.projection_bias.iter_mut())
            .chain(self.classifier.iter_mut())
            .chain(self.classifier_bias.iter_mut())
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = ModelFile {
            projection: MatrixRecord::from(&self.projection),
            projection_bias: self.projection_bias.to_vec(),
            classifier: MatrixRecord::from(&self.classifier),
            classifier_bias: self.classifier_bias.to_vec(),
        };
        Ok(serde_json::to_string(&rec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelFile<S> = serde_json::from_str(text)?;
        let m = Self {
            projection: rec.projection.into_array()?,
            projection_bias: Array1::from(rec.projection_bias),
            classifier: rec.classifier.into_array()?,
            classifier_bias: Array1::from(rec.classifier_bias),
        };
        m.check_shapes()?;
        if m.parameters().iter().any(|x| !x.is_finite()) {
            return Err(HstError::NonFinite("model parameter".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Self::from_json(&text)
    }
}

/// Row-major matrix as stored in model files.
#[derive(Serialize, Deserialize)]
struct MatrixRecord<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> From<&Array2<S>> for MatrixRecord<S> {
    fn from(m: &Array2<S>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.iter().copied().collect() }
    }
}

impl<S: Scalar> MatrixRecord<S> {
    fn into_array(self) -> Result<Array2<S>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| HstError::Shape(format!("model matrix: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile<S> {
    projection: MatrixRecord<S>,
    projection_bias: Vec<S>,
    classifier: MatrixRecord<S>,
    classifier_bias: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct Sample<S> {
    pub features: VisualSequence<S>,
    pub labels: GlossSequence,
}

/// Mean loss and gradient over the whole dataset.
pub fn dataset_loss<S: Scalar>(
    model: &LinearModel<S>,
    dataset: &[Sample<S>],
    tree: &Hst<S>,
    config: &TrainConfig,
) -> Result<(S, ModelGradients<S>)> {
    if dataset.is_empty() {
        return Err(HstError::EmptyInput("training set is empty".into()));
    }
    let mut grads = LinearModel::zeros(model.d_raw(), model.d(), model.n_classes());
    let mut total = S::zero();
    for sample in dataset {
        let out = model.total_loss(&sample.features, &sample.labels, tree, config)?;
        total += out.total;
        grads.accumulate(&out.gradients);
    }
    let inv = S::one() / S::from_usize(dataset.len()).expect("count fits scalar");
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Full-batch gradient descent. Returns the trained model and the mean loss
/// at the start of every epoch.
pub fn train<S: Scalar>(
    mut model: LinearModel<S>,
    dataset: &[Sample<S>],
    tree: &Hst<S>,
    config: &TrainConfig,
) -> Result<(LinearModel<S>, Vec<S>)> {
    config.validate()?;
    let step = S::lit(config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, grads) = match dataset_loss(&model, dataset, tree, config) {
            // finite but huge weights can overflow the forward pass
            Err(HstError::NonFinite(_)) if epoch > 0 => return Err(HstError::Diverged { epoch }),
            other => other?,
        };
        if !loss.is_finite() {
            return Err(HstError::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {loss}");
        trace.push(loss);
        model.descend(&grads, step);
        if model.parameters().iter().any(|x| !x.is_finite()) {
            return Err(HstError::Diverged { epoch });
        }
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_gives_uniform_probabilities() {
        let m = LinearModel::<f64>::zeros(3, 2, 4);
        let raw = VisualSequence::new("v", array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let f = m.forward(&raw).unwrap();
        assert!(f.probs.scores().iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_projection_passes_features_through() {
        let mut m = LinearModel::<f64>::zeros(3, 3, 2);
        for i in 0..3 {
            m.projection[[i, i]] = 1.0;
        }
        let raw = VisualSequence::new("v", array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        let f = m.forward(&raw).unwrap();
        assert_eq!(f.aligned.frames(), raw.frames());
        for t in 0..2 {
            assert!((f.probs.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda_c: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let m = LinearModel::<f64>::init(4, 3, 2, 9, 0.3);
        let back = LinearModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert_eq!(m, LinearModel::init(4, 3, 2, 9, 0.3));
    }
}
