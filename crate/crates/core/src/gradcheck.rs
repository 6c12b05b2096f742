//! Central finite-difference checks of every analytic gradient, used by the
//! `gradcheck` command.
//!
//! Unit-norm parameters are perturbed in the ambient space and renormalized inside
//! the probed function, so the difference quotient is the tangent gradient the
//! kernels report.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoder::{Activation, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::{
    aam_softmax_loss, am_softmax_loss, caa_margin_con_loss, normalize_rows, softmax_cross_entropy_loss,
    sup_margin_con_loss, supcon_loss, ClassVectorTable, ClassifierWeights, EmbeddingBatch, LossReport,
    MarginConfig,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kernel {
    SupCon,
    SupMarginCon,
    AamSoftmax,
    AmSoftmax,
    CrossEntropy,
    CaaMarginCon,
    Encoder,
}

impl Kernel {
    pub const ALL: [Kernel; 7] = [
        Self::SupCon,
        Self::SupMarginCon,
        Self::AamSoftmax,
        Self::AmSoftmax,
        Self::CrossEntropy,
        Self::CaaMarginCon,
        Self::Encoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SupCon => "supcon_loss",
            Self::SupMarginCon => "sup_margin_con_loss",
            Self::AamSoftmax => "aam_softmax_loss",
            Self::AmSoftmax => "am_softmax_loss",
            Self::CrossEntropy => "softmax_cross_entropy_loss",
            Self::CaaMarginCon => "caa_margin_con_loss",
            Self::Encoder => "encoder_backprop",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown kernel {s:?}")))
    }
}

/// Worst error of one kernel over all instances, per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCheck {
    pub kernel: Kernel,
    pub instances: usize,
    /// `(group, max relative error)`.
    pub groups: Vec<(&'static str, f64)>,
}

impl KernelCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < FD_TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub seed: u64,
    pub margin: MarginConfig<f64>,
    /// Encoder layer sizes.
    pub encoder_dims: Vec<usize>,
    pub activation: Activation,
    /// Test hook: scale this kernel's analytic gradients by 1.01.
    pub corrupt: Option<Kernel>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 0,
            margin: MarginConfig::default(),
            encoder_dims: crate::encoder::DEFAULT_DIMS.to_vec(),
            activation: Activation::Relu,
            corrupt: None,
        }
    }
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, absolute below 1e-12.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn central_diff(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Vec<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let v = probe.as_slice_mut().unwrap()[k];
        probe.as_slice_mut().unwrap()[k] = v + FD_STEP;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[k] = v - FD_STEP;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[k] = v;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Random paired batch with 2..=n/2+1 speakers and one classifier row and class
/// vector per speaker.
struct Instance {
    batch: EmbeddingBatch<f64>,
    classifier: Array2<f64>,
    class_vectors: Array2<f64>,
}

fn instance(rng: &mut ChaCha8Rng, k: usize) -> Result<Instance> {
    let n = [4, 8][k % 2];
    let d = [4, 8, 16][(k / 2) % 3];
    let speakers = rng.random_range(2..=n / 2 + 1);
    let mut labels: Vec<usize> = (0..n).map(|i| i % speakers).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let centers = gaussian(rng, speakers, d);
    let mut orig = gaussian(rng, n, d) * 0.5;
    for (i, &y) in labels.iter().enumerate() {
        let mut row = orig.row_mut(i);
        row += &centers.row(y);
    }
    let aug = &orig + &(gaussian(rng, n, d) * 0.3);
    let batch = EmbeddingBatch::paired(normalize_rows(orig)?, normalize_rows(aug)?, &labels)?;
    let classifier = normalize_rows(gaussian(rng, speakers, d))?;
    let class_vectors = gaussian(rng, speakers, d);
    Ok(Instance {
        batch,
        classifier,
        class_vectors,
    })
}

fn rebatch(template: &EmbeddingBatch<f64>, raw: &Array2<f64>) -> EmbeddingBatch<f64> {
    EmbeddingBatch::from_unnormalized(raw.clone(), template.labels().to_vec(), template.views().to_vec())
        .expect("probe batch stays valid for small steps")
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn corrupted(v: Vec<f64>, on: bool) -> Vec<f64> {
    if on {
        v.into_iter().map(|x| x * 1.01).collect()
    } else {
        v
    }
}

fn check_loss(kernel: Kernel, inst: &Instance, m: &MarginConfig<f64>, corrupt: bool) -> Result<Vec<(&'static str, f64)>> {
    let b = &inst.batch;
    let w = ClassifierWeights::new(inst.classifier.clone())?;
    let table = ClassVectorTable::dense(inst.class_vectors.clone());
    let lambdas = (0.7, 1.3);
    let eval = |b: &EmbeddingBatch<f64>, w: &Array2<f64>, c: &Array2<f64>| -> Result<LossReport<f64>> {
        let cw = ClassifierWeights::new(w.clone())?;
        let ct = ClassVectorTable::dense(c.clone());
        match kernel {
            Kernel::SupCon => supcon_loss(b, m.tau, m.denominator),
            Kernel::SupMarginCon => sup_margin_con_loss(b, m),
            Kernel::AamSoftmax => aam_softmax_loss(b, &cw, m),
            Kernel::AmSoftmax => am_softmax_loss(b, &cw, m),
            Kernel::CrossEntropy => softmax_cross_entropy_loss(b, &ClassifierWeights::unconstrained(w.clone())),
            Kernel::CaaMarginCon => caa_margin_con_loss(b, &cw, &ct, m, lambdas),
            Kernel::Encoder => unreachable!(),
        }
    };
    let value = |b: &EmbeddingBatch<f64>, w: &Array2<f64>, c: &Array2<f64>| eval(b, w, c).map(|r| r.value).unwrap_or(f64::NAN);
    let report = eval(b, w.weights(), table.vectors())?;
    let mut groups = Vec::new();
    let fd = central_diff(&|x| value(&rebatch(b, x), w.weights(), table.vectors()), b.data());
    groups.push(("embeddings", relative_error(&corrupted(flat(&report.grad_embeddings), corrupt), &fd)));
    if let Some(gw) = &report.grad_classifier_weights {
        let constrained = kernel != Kernel::CrossEntropy;
        let fd = central_diff(
            &|x| {
                let x = if constrained { normalize_rows(x.clone()).unwrap() } else { x.clone() };
                value(b, &x, table.vectors())
            },
            w.weights(),
        );
        groups.push(("classifier", relative_error(&corrupted(flat(gw), corrupt), &fd)));
    }
    if kernel == Kernel::CaaMarginCon {
        let gc = report.grad_class_vectors.as_ref().expect("caa reports class vectors");
        let fd = central_diff(&|x| value(b, w.weights(), x), table.vectors());
        groups.push(("class_vectors", relative_error(&corrupted(flat(gc), corrupt), &fd)));
    }
    Ok(groups)
}

/// Hidden pre-activations closer than this to a ReLU kink make a central difference
/// straddle the kink; such draws are rejected and redrawn.
pub const KINK_GUARD: f64 = 1e-3;

fn min_hidden_preactivation(enc: &EncoderParams<f64>, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    let layers = enc.layers();
    for layer in &layers[..layers.len() - 1] {
        let u = h.dot(&layer.weight.t()) + &layer.bias;
        closest = u.iter().fold(closest, |m, v| m.min(v.abs()));
        h = u.mapv(|v| enc.activation().apply(v));
    }
    closest
}

fn check_encoder(rng: &mut ChaCha8Rng, opts: &GradcheckOptions, corrupt: bool) -> Result<Vec<(&'static str, f64)>> {
    let rows = 4;
    let (enc, x) = loop {
        let enc = EncoderParams::<f64>::init(&opts.encoder_dims, opts.activation, rng.random())?;
        let x = gaussian(rng, rows, enc.input_dim());
        if opts.activation != Activation::Relu || min_hidden_preactivation(&enc, &x) > KINK_GUARD {
            break (enc, x);
        }
    };
    let upstream = gaussian(rng, rows, enc.embed_dim());
    let (_, cache) = enc.encode(&x)?;
    let grads = enc.backprop(&cache, &upstream)?;
    let objective = |e: &EncoderParams<f64>, x: &Array2<f64>| -> f64 {
        e.embed(x).map(|z| (&z * &upstream).sum()).unwrap_or(f64::NAN)
    };
    let mut probe = enc.clone();
    let base = enc.flatten();
    let mut fd = Vec::with_capacity(base.len());
    for (k, &v) in base.iter().enumerate() {
        probe.set_param(k, v + FD_STEP)?;
        let up = objective(&probe, &x);
        probe.set_param(k, v - FD_STEP)?;
        let down = objective(&probe, &x);
        probe.set_param(k, v)?;
        fd.push((up - down) / (2.0 * FD_STEP));
    }
    let fd_in = central_diff(&|xi| objective(&enc, xi), &x);
    Ok(vec![
        ("parameters", relative_error(&corrupted(grads.flatten(), corrupt), &fd)),
        ("inputs", relative_error(&corrupted(flat(&grads.input), corrupt), &fd_in)),
    ])
}

/// Runs `opts.instances` seeded instances of `kernel`.
pub fn check_kernel(kernel: Kernel, opts: &GradcheckOptions) -> Result<KernelCheck> {
    opts.margin.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(kernel as u64);
    let corrupt = opts.corrupt == Some(kernel);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for k in 0..opts.instances {
        let groups = if kernel == Kernel::Encoder {
            check_encoder(&mut rng, opts, corrupt)?
        } else {
            check_loss(kernel, &instance(&mut rng, k)?, &opts.margin, corrupt)?
        };
        for (name, err) in groups {
            // NaN counts as a failure
            let err = if err.is_nan() { f64::INFINITY } else { err };
            match worst.iter_mut().find(|g| g.0 == name) {
                Some(g) => g.1 = g.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    Ok(KernelCheck {
        kernel,
        instances: opts.instances,
        groups: worst,
    })
}

/// Every kernel in [`Kernel::ALL`] order.
pub fn check_all(opts: &GradcheckOptions) -> Result<Vec<KernelCheck>> {
    Kernel::ALL.into_iter().map(|k| check_kernel(k, opts)).collect()
}
