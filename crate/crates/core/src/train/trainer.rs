use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoder::{EncoderParams, Layer};
use crate::error::{Error, Result};
use crate::io::Document;
use crate::loss::{
    aam_softmax_loss, am_softmax_loss, caa_contrastive_loss, normalize_rows, softmax_cross_entropy_loss,
    sup_margin_con_loss, supcon_loss, ClassVectorTable, ClassifierWeights, EmbeddingBatch, LossReport,
};
use crate::synth::{augment, Dataset};

use super::config::{LambdaMode, LossKind, TrainConfig};
use super::mgda::{combine_gradients, l2_norm, mgda_two_task};
use super::optim::Optimizer;

/// RNG streams under the config seed.
const STREAM_CLASSIFIER: u64 = 3;
const STREAM_CLASS_VECTORS: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;

/// Everything a step updates.
///
/// Flat parameter order: encoder layers (weight then bias, layer by layer), then
/// classifier weights, then class vectors, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams<f64>,
    pub classifier: ClassifierWeights<f64>,
    pub class_vectors: ClassVectorTable<f64>,
}

fn gaussian_rows(rows: usize, cols: usize, seed: u64, stream: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

impl Model {
    /// Glorot-initialized encoder, Gaussian unit-norm classifier rows and Gaussian
    /// unit-norm class vectors, one row per training speaker.
    pub fn init(d_in: usize, n_speakers: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = EncoderParams::init(&cfg.dims(d_in), cfg.activation, cfg.seed)?;
        let d = cfg.embed_dim;
        let w = normalize_rows(gaussian_rows(n_speakers, d, cfg.seed, STREAM_CLASSIFIER))?;
        let classifier = if cfg.loss.constrained_classifier() {
            ClassifierWeights::new(w)?
        } else {
            ClassifierWeights::unconstrained(w)
        };
        let c = normalize_rows(gaussian_rows(n_speakers, d, cfg.seed, STREAM_CLASS_VECTORS))?;
        Ok(Self {
            encoder,
            classifier,
            class_vectors: ClassVectorTable::dense(c),
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.classifier.weights().len() + self.class_vectors.vectors().len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.encoder.flatten();
        out.extend(self.classifier.weights().iter());
        out.extend(self.class_vectors.vectors().iter());
        out
    }

    /// Inverse of [`Model::flatten`]. Classifier rows are written as given.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "flat parameters",
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let (enc, rest) = flat.split_at(self.encoder.num_params());
        let (cls, cv) = rest.split_at(self.classifier.weights().len());
        self.encoder.set_flat(enc)?;
        for (dst, src) in self.classifier.weights_mut().iter_mut().zip(cls) {
            *dst = *src;
        }
        for (dst, src) in self.class_vectors.vectors_mut().iter_mut().zip(cv) {
            *dst = *src;
        }
        Ok(())
    }

    /// Checkpoint document: encoder layers, classifier and class vectors.
    pub fn to_document(&self, header: &crate::io::KeyValues) -> Document {
        let mut doc = Document::new("checkpoint");
        doc.header = header.clone();
        doc.header.set("activation", self.encoder.activation().to_string());
        let dims: Vec<String> = self.encoder.dims().iter().map(usize::to_string).collect();
        doc.header.set("dims", dims.join(","));
        for (k, layer) in self.encoder.layers().iter().enumerate() {
            doc.push_matrix(format!("layer{k}.weight"), layer.weight.clone());
            doc.push_matrix(
                format!("layer{k}.bias"),
                layer.bias.clone().insert_axis(Axis(0)),
            );
        }
        doc.push_matrix("classifier", self.classifier.weights().clone());
        doc.push_matrix("class_vectors", self.class_vectors.vectors().clone());
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let activation: crate::encoder::Activation = doc.header.require("activation")?;
        let dims: String = doc.header.require("dims")?;
        let n_layers = dims.split(',').count().saturating_sub(1);
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let weight = doc.matrix(&format!("layer{k}.weight"))?.clone();
            let bias: Array1<f64> = doc.matrix(&format!("layer{k}.bias"))?.row(0).to_owned();
            layers.push(Layer { weight, bias });
        }
        let encoder = EncoderParams::new(layers, activation)?;
        // stored rows are already normalized when the head is constrained; renormalizing
        // here would perturb the last bit
        let classifier = ClassifierWeights::unconstrained(doc.matrix("classifier")?.clone());
        let model = Self {
            encoder,
            classifier,
            class_vectors: ClassVectorTable::dense(doc.matrix("class_vectors")?.clone()),
        };
        let d = model.encoder.embed_dim();
        if model.classifier.dim() != d || model.class_vectors.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "checkpoint embedding dimension",
                expected: d,
                found: model.classifier.dim(),
            });
        }
        Ok(model)
    }
}

/// Per-task diagnostics of a two-term step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgdaState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub norm_g1: f64,
    pub norm_g2: f64,
    /// Norm of `lambda1 g1 + lambda2 g2`.
    pub norm_combined: f64,
}

impl MgdaState {
    /// `|combined| - min(|g1|, |g2|)`; at most rounding noise for min-norm weights.
    pub fn bound_excess(&self) -> f64 {
        self.norm_combined - self.norm_g1.min(self.norm_g2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Value of the optimized objective before the update.
    pub loss: f64,
    /// Classification and contrastive values for two-term losses.
    pub task_losses: Option<(f64, f64)>,
    pub mgda: Option<MgdaState>,
    pub grad_norm: f64,
}

/// Encoder cache plus paired batch for one set of originals.
struct Encoded {
    batch: EmbeddingBatch<f64>,
    cache: crate::encoder::EncoderCache<f64>,
}

fn encode_pair(model: &Model, originals: &Array2<f64>, augmented: &Array2<f64>, labels: &[usize]) -> Result<Encoded> {
    let mut x = Array2::zeros((originals.nrows() * 2, originals.ncols()));
    x.slice_mut(ndarray::s![..originals.nrows(), ..]).assign(originals);
    x.slice_mut(ndarray::s![originals.nrows().., ..]).assign(augmented);
    let (z, cache) = model.encoder.encode(&x)?;
    let n = originals.nrows();
    let batch = EmbeddingBatch::paired(
        z.slice(ndarray::s![..n, ..]).to_owned(),
        z.slice(ndarray::s![n.., ..]).to_owned(),
        labels,
    )?;
    Ok(Encoded { batch, cache })
}

/// Flat gradient over every model parameter for one loss report.
fn flat_gradient(model: &Model, enc: &Encoded, report: &LossReport<f64>) -> Result<Vec<f64>> {
    let mut g = model.encoder.backprop(&enc.cache, &report.grad_embeddings)?.flatten();
    match &report.grad_classifier_weights {
        Some(gw) => g.extend(gw.iter()),
        None => g.extend(std::iter::repeat_n(0.0, model.classifier.weights().len())),
    }
    match &report.grad_class_vectors {
        Some(gc) => g.extend(gc.iter()),
        None => g.extend(std::iter::repeat_n(0.0, model.class_vectors.vectors().len())),
    }
    Ok(g)
}

fn check_finite(what: &str, report: &LossReport<f64>, at: (usize, usize)) -> Result<()> {
    if report.is_finite() {
        return Ok(());
    }
    let worst = report
        .grad_embeddings
        .iter()
        .filter(|v| !v.is_finite())
        .count();
    Err(Error::NonFinite {
        what: what.to_string(),
        epoch: at.0,
        step: at.1,
        detail: format!(
            "value={} non-finite embedding gradients={worst}",
            report.value
        ),
    })
}

/// Losses and flat gradients of the configured objective.
struct Objective {
    loss: f64,
    grad: Vec<f64>,
    task_losses: Option<(f64, f64)>,
    mgda: Option<MgdaState>,
}

fn objective(model: &Model, enc: &Encoded, cfg: &TrainConfig, at: (usize, usize)) -> Result<Objective> {
    let b = &enc.batch;
    let m = &cfg.margin;
    let single = |report: LossReport<f64>| -> Result<Objective> {
        check_finite(cfg.loss.key(), &report, at)?;
        Ok(Objective {
            loss: report.value,
            grad: flat_gradient(model, enc, &report)?,
            task_losses: None,
            mgda: None,
        })
    };
    match cfg.loss {
        LossKind::CrossEntropy => single(softmax_cross_entropy_loss(b, &model.classifier)?),
        LossKind::AmSoftmax => single(am_softmax_loss(b, &model.classifier, m)?),
        LossKind::AamSoftmax => single(aam_softmax_loss(b, &model.classifier, m)?),
        LossKind::SupCon => single(supcon_loss(b, m.tau, m.denominator)?),
        LossKind::SupMarginCon => single(sup_margin_con_loss(b, m)?),
        LossKind::CaaMarginCon => {
            let cls = aam_softmax_loss(b, &model.classifier, m)?;
            check_finite("aam_softmax", &cls, at)?;
            let con = caa_contrastive_loss(b, &model.class_vectors, m, cfg.ablation)?;
            check_finite("caa_contrastive", &con, at)?;
            let g1 = flat_gradient(model, enc, &cls)?;
            let g2 = flat_gradient(model, enc, &con)?;
            let (l1, l2) = match cfg.lambda_mode {
                LambdaMode::Fixed(l1, l2) => (l1, l2),
                LambdaMode::Mgda => mgda_two_task(&g1, &g2)?,
            };
            let grad = combine_gradients(&g1, &g2, (l1, l2));
            let state = MgdaState {
                lambda1: l1,
                lambda2: l2,
                norm_g1: l2_norm(&g1),
                norm_g2: l2_norm(&g2),
                norm_combined: l2_norm(&grad),
            };
            Ok(Objective {
                loss: l1 * cls.value + l2 * con.value,
                grad,
                task_losses: Some((cls.value, con.value)),
                mgda: Some(state),
            })
        }
    }
}

/// Mutable training state: model plus optimizer moments.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    cfg: TrainConfig,
    optimizer: Optimizer,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, model.num_params());
        Ok(Self {
            model,
            cfg,
            optimizer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Objective value and flat gradient on `originals` and their views, without
    /// updating anything.
    pub fn evaluate(
        &self,
        originals: &Array2<f64>,
        augmented: &Array2<f64>,
        labels: &[usize],
    ) -> Result<(StepMetrics, Vec<f64>)> {
        let enc = encode_pair(&self.model, originals, augmented, labels)?;
        let obj = objective(&self.model, &enc, &self.cfg, (0, 0))?;
        let metrics = StepMetrics {
            loss: obj.loss,
            task_losses: obj.task_losses,
            mgda: obj.mgda,
            grad_norm: l2_norm(&obj.grad),
        };
        Ok((metrics, obj.grad))
    }

    /// One update: encode both views, compute the objective and its gradient, step
    /// the optimizer and put changed classifier rows back on the sphere.
    pub fn step(
        &mut self,
        originals: &Array2<f64>,
        augmented: &Array2<f64>,
        labels: &[usize],
        at: (usize, usize),
    ) -> Result<StepMetrics> {
        let enc = encode_pair(&self.model, originals, augmented, labels)?;
        let obj = objective(&self.model, &enc, &self.cfg, at)?;
        if let Some(bad) = obj.grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter gradient".into(),
                epoch: at.0,
                step: at.1,
                detail: format!("flat index {bad}"),
            });
        }
        let before = self.model.classifier.weights().clone();
        let mut flat = self.model.flatten();
        self.optimizer.step(&mut flat, &obj.grad);
        self.model.set_flat(&flat)?;
        if self.cfg.loss.constrained_classifier() {
            renormalize_changed_rows(self.model.classifier.weights_mut(), &before)?;
        }
        Ok(StepMetrics {
            loss: obj.loss,
            task_losses: obj.task_losses,
            mgda: obj.mgda,
            grad_norm: l2_norm(&obj.grad),
        })
    }
}

/// Rows equal to their previous value are left alone so a zero update stays exact.
fn renormalize_changed_rows(w: &mut Array2<f64>, before: &Array2<f64>) -> Result<()> {
    for (row, (mut r, old)) in w.rows_mut().into_iter().zip(before.rows()).enumerate() {
        if r == old {
            continue;
        }
        let n = r.dot(&r).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroNorm { row });
        }
        r.mapv_inplace(|v| v / n);
    }
    Ok(())
}

/// Functional form of [`Trainer::step`] on a fresh optimizer.
pub fn train_step(
    model: &Model,
    originals: &Array2<f64>,
    augmented: &Array2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(Model, StepMetrics)> {
    let mut trainer = Trainer::new(model.clone(), cfg.clone())?;
    let metrics = trainer.step(originals, augmented, labels, (0, 0))?;
    Ok((trainer.model, metrics))
}

/// Aggregates of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub mean_task_losses: Option<(f64, f64)>,
    pub mean_lambda1: Option<f64>,
    pub last_lambda1: Option<f64>,
    /// Largest [`MgdaState::bound_excess`] seen in the epoch.
    pub max_bound_excess: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Objective over the fixed evaluation pass before training.
    pub initial_loss: f64,
    /// Same pass after training.
    pub final_loss: f64,
}

/// Groups of at most `per_batch` row indices, skipping groups with a single speaker.
fn chunk_batches(order: &[usize], labels: &[usize], per_batch: usize) -> Vec<Vec<usize>> {
    order
        .chunks(per_batch)
        .filter(|c| c.len() >= 2 && c.iter().any(|&i| labels[i] != labels[c[0]]))
        .map(<[usize]>::to_vec)
        .collect()
}

fn gather(data: &Dataset, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    (
        data.features.select(Axis(0), idx),
        idx.iter().map(|&i| data.labels[i]).collect(),
    )
}

/// Objective averaged over the batches of a fixed pass (speakers interleaved round
/// robin) with fixed augmentation. Two-term losses are scored as the plain sum of both terms
/// so the number does not depend on the step's weights.
pub fn evaluation_loss(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let mut seen = vec![0usize; data.labels.iter().max().map_or(0, |m| m + 1)];
    let mut order: Vec<(usize, usize, usize)> = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            seen[y] += 1;
            (seen[y], y, i)
        })
        .collect();
    order.sort_unstable();
    let order: Vec<usize> = order.into_iter().map(|t| t.2).collect();
    let batches = chunk_batches(&order, &data.labels, cfg.batch_size / 2);
    if batches.is_empty() {
        return Err(Error::InvalidBatch("no batch with two speakers".into()));
    }
    let augmented = augment(&data.features, cfg.aug_noise, cfg.aug_dropout, cfg.seed)?;
    let trainer = Trainer::new(model.clone(), cfg.clone())?;
    let mut total = 0.0;
    for idx in &batches {
        let (x, labels) = gather(data, idx);
        let a = augmented.select(Axis(0), idx);
        let (m, _) = trainer.evaluate(&x, &a, &labels)?;
        total += match m.task_losses {
            Some((c, k)) => c + k,
            None => m.loss,
        };
    }
    Ok(total / batches.len() as f64)
}

/// Trains `model` for `cfg.epochs` epochs with seeded shuffling and fresh augmentation
/// every step.
pub fn fit(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.dim() != model.encoder.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "dataset feature dimension",
            expected: model.encoder.input_dim(),
            found: data.dim(),
        });
    }
    if let Some(&max) = data.labels.iter().max() {
        if max >= model.classifier.classes() {
            return Err(Error::LabelOutOfRange {
                label: max,
                classes: model.classifier.classes(),
            });
        }
    }
    let initial_loss = evaluation_loss(&model, data, cfg)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let batches = chunk_batches(&order, &data.labels, cfg.batch_size / 2);
        let mut rec = EpochRecord {
            epoch,
            steps: 0,
            mean_loss: 0.0,
            mean_task_losses: None,
            mean_lambda1: None,
            last_lambda1: None,
            max_bound_excess: None,
        };
        let (mut sum_loss, mut sum_t1, mut sum_t2, mut sum_l1) = (0.0, 0.0, 0.0, 0.0);
        for (step, idx) in batches.iter().enumerate() {
            let (x, labels) = gather(data, idx);
            let a = augment(&x, cfg.aug_noise, cfg.aug_dropout, rng.random())?;
            let m = trainer.step(&x, &a, &labels, (epoch, step + 1))?;
            rec.steps += 1;
            sum_loss += m.loss;
            if let Some((t1, t2)) = m.task_losses {
                sum_t1 += t1;
                sum_t2 += t2;
            }
            if let Some(s) = m.mgda {
                sum_l1 += s.lambda1;
                rec.last_lambda1 = Some(s.lambda1);
                let e = s.bound_excess();
                rec.max_bound_excess = Some(rec.max_bound_excess.map_or(e, |p: f64| p.max(e)));
            }
        }
        let k = rec.steps.max(1) as f64;
        rec.mean_loss = sum_loss / k;
        if rec.last_lambda1.is_some() {
            rec.mean_task_losses = Some((sum_t1 / k, sum_t2 / k));
            rec.mean_lambda1 = Some(sum_l1 / k);
        }
        history.push(rec);
    }
    let model = trainer.model;
    let final_loss = evaluation_loss(&model, data, cfg)?;
    Ok(FitResult {
        model,
        history,
        initial_loss,
        final_loss,
    })
}
