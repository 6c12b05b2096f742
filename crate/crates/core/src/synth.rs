//! Seeded synthetic speakers: Gaussian clusters around centroids on a sphere, with
//! optional outlier utterances pulled toward another speaker, feature-space
//! augmentation, and verification trial lists.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{Document, KeyValues};

/// Independent random streams derived from one seed.
const STREAM_CENTROIDS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_HELDOUT: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameters shared by every synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    pub d_in: usize,
    /// Within-speaker standard deviation per coordinate.
    pub spread: f64,
    /// Probability that an utterance is displaced toward another speaker's centroid.
    pub outlier_rate: f64,
    /// Fraction of the way an outlier moves toward the other centroid.
    pub outlier_shift: f64,
    /// Radius of the sphere the centroids are drawn on.
    pub radius: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            d_in: 40,
            spread: 0.6,
            outlier_rate: 0.0,
            outlier_shift: 0.5,
            radius: 3.0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_in == 0 {
            return bad("d_in must be positive".into());
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return bad(format!("spread {} must be >= 0", self.spread));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad(format!("outlier_rate {} outside [0, 1]", self.outlier_rate));
        }
        if !(0.0..=1.0).contains(&self.outlier_shift) {
            return bad(format!("outlier_shift {} outside [0, 1]", self.outlier_shift));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius {} must be > 0", self.radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub centroid: Array1<f64>,
    pub spread: f64,
    pub outlier_rate: f64,
    pub outlier_shift: f64,
}

/// The speakers of one synthetic population.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBank {
    speakers: Vec<SpeakerModel>,
    seed: u64,
}

impl SpeakerBank {
    pub fn draw(n_speakers: usize, params: &GeneratorParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if n_speakers < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 speakers, got {n_speakers}"
            )));
        }
        let mut rng = rng_for(seed, STREAM_CENTROIDS);
        let speakers = (0..n_speakers)
            .map(|_| {
                let mut c: Array1<f64> =
                    Array1::from_shape_simple_fn(params.d_in, || rng.sample(StandardNormal));
                let norm = c.dot(&c).sqrt();
                c.mapv_inplace(|v| v * params.radius / norm);
                SpeakerModel {
                    centroid: c,
                    spread: params.spread,
                    outlier_rate: params.outlier_rate,
                    outlier_shift: params.outlier_shift,
                }
            })
            .collect();
        Ok(Self { speakers, seed })
    }

    pub fn speakers(&self) -> &[SpeakerModel] {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    fn sample_with(&self, utts_per_speaker: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        if utts_per_speaker < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 utterances per speaker, got {utts_per_speaker}"
            )));
        }
        let d = self.speakers[0].centroid.len();
        let n = self.speakers.len() * utts_per_speaker;
        let mut features = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        let mut outliers = Vec::with_capacity(n);
        for (s, model) in self.speakers.iter().enumerate() {
            for _ in 0..utts_per_speaker {
                let row = labels.len();
                let noise: Array1<f64> = Array1::from_shape_simple_fn(d, || rng.sample(StandardNormal));
                let mut x = &model.centroid + &(noise * model.spread);
                let draw: f64 = rng.random();
                let other = (s + 1 + rng.random_range(0..self.speakers.len() - 1)) % self.speakers.len();
                let is_outlier = draw < model.outlier_rate;
                if is_outlier {
                    let target = &self.speakers[other].centroid;
                    let k = model.outlier_shift;
                    x = x * (1.0 - k) + &(target * k);
                }
                features.row_mut(row).assign(&x);
                labels.push(s);
                outliers.push(is_outlier);
            }
        }
        Ok(Dataset {
            features,
            labels,
            outliers,
        })
    }

    /// Training utterances of this population.
    pub fn sample(&self, utts_per_speaker: usize) -> Result<Dataset> {
        self.sample_with(utts_per_speaker, &mut rng_for(self.seed, STREAM_TRAIN))
    }

    /// Fresh utterances of the same speakers from an independent stream, for
    /// evaluation.
    pub fn sample_heldout(&self, utts_per_speaker: usize) -> Result<Dataset> {
        self.sample_with(utts_per_speaker, &mut rng_for(self.seed, STREAM_HELDOUT))
    }
}

/// Feature rows with speaker labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// Whether each row was displaced toward another speaker.
    pub outliers: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_speakers(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// `n_speakers * utts_per_speaker` utterances, grouped by speaker.
pub fn generate_dataset(
    n_speakers: usize,
    utts_per_speaker: usize,
    params: &GeneratorParams,
    seed: u64,
) -> Result<Dataset> {
    SpeakerBank::draw(n_speakers, params, seed)?.sample(utts_per_speaker)
}

/// Feature-space augmentation: additive Gaussian noise, then each coordinate zeroed
/// with probability `dropout_prob`. Output row `i` is the view of input row `i`.
pub fn augment(
    features: &Array2<f64>,
    noise_sigma: f64,
    dropout_prob: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise_sigma {noise_sigma} must be >= 0"
        )));
    }
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::InvalidConfig(format!(
            "dropout_prob {dropout_prob} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = features.clone();
    for v in out.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        let drop = rng.random::<f64>() < dropout_prob;
        *v = if drop { 0.0 } else { *v + noise_sigma * eps };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trial {
    pub enroll: usize,
    pub test: usize,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    /// (target count, nontarget count).
    pub fn counts(&self) -> (usize, usize) {
        let t = self.trials.iter().filter(|t| t.target).count();
        (t, self.trials.len() - t)
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Samples `n_target` same-speaker and `n_nontarget` different-speaker utterance
/// pairs without replacement. Trials come out sorted by (enroll, test).
pub fn make_trials(
    labels: &[usize],
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<TrialList> {
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                same.push((i, j));
            } else {
                diff.push((i, j));
            }
        }
    }
    if n_target > same.len() || n_nontarget > diff.len() {
        return Err(Error::InsufficientPairs {
            requested_target: n_target,
            requested_nontarget: n_nontarget,
            max_target: same.len(),
            max_nontarget: diff.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = sample(&mut rng, same.len(), n_target)
        .into_iter()
        .map(|k| (same[k], true))
        .chain(
            sample(&mut rng, diff.len(), n_nontarget)
                .into_iter()
                .map(|k| (diff[k], false)),
        )
        .map(|((enroll, test), target)| Trial {
            enroll,
            test,
            target,
        })
        .collect();
    trials.sort_by_key(|t| (t.enroll, t.test));
    Ok(TrialList { trials })
}

impl Dataset {
    /// Serialized form: `header` plus the feature matrix, labels and outlier flags.
    pub fn to_document(&self, header: &KeyValues) -> Document {
        let mut doc = Document::new("dataset");
        doc.header = header.clone();
        doc.header.set("n", self.len().to_string());
        doc.header.set("d_in", self.dim().to_string());
        doc.push_matrix("features", self.features.clone());
        doc.push_list("labels", &self.labels);
        doc.push_list("outliers", self.outliers.iter().map(|&o| u8::from(o)));
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let features = doc.matrix("features")?.clone();
        let labels: Vec<usize> = doc.list("labels")?;
        let outliers: Vec<u8> = doc.list("outliers")?;
        if labels.len() != features.nrows() || outliers.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            outliers: outliers.into_iter().map(|o| o != 0).collect(),
        })
    }
}

impl TrialList {
    /// One `enroll test target|nontarget` line per trial.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            let flag = if t.target { "target" } else { "nontarget" };
            out.push_str(&format!("{} {} {flag}\n", t.enroll, t.test));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut trials = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let bad = |m: String| Error::Parse { line, message: m };
            let parts: Vec<&str> = l.split_whitespace().collect();
            let [e, t, flag] = parts[..] else {
                return Err(bad(format!("expected `enroll test flag`, got {l:?}")));
            };
            let enroll = e.parse().map_err(|_| bad(format!("bad id {e:?}")))?;
            let test = t.parse().map_err(|_| bad(format!("bad id {t:?}")))?;
            let target = match flag {
                "target" => true,
                "nontarget" => false,
                other => return Err(bad(format!("bad flag {other:?}"))),
            };
            if enroll == test {
                return Err(bad(format!("trial pairs utterance {enroll} with itself")));
            }
            trials.push(Trial {
                enroll,
                test,
                target,
            });
        }
        Ok(Self { trials })
    }
}
