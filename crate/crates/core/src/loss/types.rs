use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on row norms for anything that must live on the unit sphere.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Which view of an utterance a batch row holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Original,
    Augmented,
}

/// Rows of unit-norm embeddings with speaker labels and view flags.
///
/// Every original row is paired with an augmented row of the same speaker, so each
/// speaker contributes equally many rows of both views.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    data: Array2<T>,
    labels: Vec<usize>,
    views: Vec<View>,
}

impl<T: Real> EmbeddingBatch<T> {
    pub fn new(data: Array2<T>, labels: Vec<usize>, views: Vec<View>) -> Result<Self> {
        let rows = data.nrows();
        if labels.len() != rows {
            return Err(Error::DimensionMismatch {
                what: "batch labels",
                expected: rows,
                found: labels.len(),
            });
        }
        if views.len() != rows {
            return Err(Error::DimensionMismatch {
                what: "batch views",
                expected: rows,
                found: views.len(),
            });
        }
        if data.ncols() < 2 {
            return Err(Error::InvalidBatch(format!(
                "embedding dimension {} < 2",
                data.ncols()
            )));
        }
        let originals = views.iter().filter(|v| **v == View::Original).count();
        if originals * 2 != rows || originals < 2 {
            return Err(Error::InvalidBatch(format!(
                "expected N >= 2 originals and N augmented rows, got {originals} originals in {rows} rows"
            )));
        }
        let mut per_speaker: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (&label, &view) in labels.iter().zip(&views) {
            let entry = per_speaker.entry(label).or_default();
            match view {
                View::Original => entry.0 += 1,
                View::Augmented => entry.1 += 1,
            }
        }
        if per_speaker.len() < 2 {
            return Err(Error::InvalidBatch(
                "at least 2 distinct speakers required".into(),
            ));
        }
        if let Some((speaker, (o, a))) = per_speaker.iter().find(|(_, (o, a))| o != a) {
            return Err(Error::InvalidBatch(format!(
                "speaker {speaker} has {o} original rows but {a} augmented rows"
            )));
        }
        for (row, r) in data.axis_iter(Axis(0)).enumerate() {
            let norm = r.dot(&r).sqrt().to_f64_lossy();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { row, norm });
            }
        }
        Ok(Self {
            data,
            labels,
            views,
        })
    }

    /// Normalizes every row of `raw` and builds the batch.
    pub fn from_unnormalized(raw: Array2<T>, labels: Vec<usize>, views: Vec<View>) -> Result<Self> {
        Self::new(normalize_rows(raw)?, labels, views)
    }

    /// Builds a batch whose first half are originals and second half their augmented
    /// views: row `i` and row `i + N` share `labels[i]`.
    pub fn paired(originals: Array2<T>, augmented: Array2<T>, labels: &[usize]) -> Result<Self> {
        let n = originals.nrows();
        let data = ndarray::concatenate(Axis(0), &[originals.view(), augmented.view()])
            .map_err(|e| Error::InvalidBatch(e.to_string()))?;
        let mut all_labels = labels.to_vec();
        all_labels.extend_from_slice(labels);
        let mut views = vec![View::Original; n];
        views.extend(std::iter::repeat_n(View::Augmented, augmented.nrows()));
        Self::new(data, all_labels, views)
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    /// Number of rows (2N).
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    /// Distinct speaker ids in ascending order.
    pub fn speakers(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Applies `perm` to the rows: row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let data = self.data.select(Axis(0), perm);
        let labels = perm.iter().map(|&p| self.labels[p]).collect();
        let views = perm.iter().map(|&p| self.views[p]).collect();
        Self::new(data, labels, views)
    }
}

/// L2-normalizes every row; errors on a zero row.
pub fn normalize_rows<T: Real>(mut m: Array2<T>) -> Result<Array2<T>> {
    for (row, mut r) in m.axis_iter_mut(Axis(0)).enumerate() {
        let norm = r.dot(&r).sqrt();
        if norm <= T::zero() || !norm.is_finite() {
            return Err(Error::ZeroNorm { row });
        }
        r.mapv_inplace(|x| x / norm);
    }
    Ok(m)
}

/// How the contrastive denominator set A(i) is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// Only rows of other speakers.
    #[default]
    NegativesOnly,
    /// Every row except the anchor itself.
    AllOthers,
}

impl std::str::FromStr for Denominator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negatives_only" => Ok(Self::NegativesOnly),
            "all_others" => Ok(Self::AllOthers),
            other => Err(Error::InvalidConfig(format!(
                "denominator must be negatives_only or all_others, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Denominator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NegativesOnly => "negatives_only",
            Self::AllOthers => "all_others",
        })
    }
}

/// Angular margin, temperature and logit scale shared by the margin losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConfig<T> {
    /// Additive angular margin in radians.
    pub margin: T,
    /// Contrastive temperature.
    pub tau: T,
    /// Logit scale of the classification head.
    pub scale: T,
    pub denominator: Denominator,
}

impl<T: Real> Default for MarginConfig<T> {
    fn default() -> Self {
        Self {
            margin: T::lit(0.2),
            tau: T::lit(0.07),
            scale: T::lit(30.0),
            denominator: Denominator::NegativesOnly,
        }
    }
}

impl<T: Real> MarginConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let half_pi = T::lit(std::f64::consts::FRAC_PI_2);
        if !(self.margin >= T::zero() && self.margin < half_pi) {
            return Err(Error::InvalidConfig(format!(
                "margin {} outside [0, pi/2)",
                self.margin
            )));
        }
        if !(self.tau > T::zero()) {
            return Err(Error::InvalidConfig(format!("tau {} must be > 0", self.tau)));
        }
        if !(self.scale > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "scale {} must be > 0",
                self.scale
            )));
        }
        Ok(())
    }

    pub fn with_margin(self, margin: T) -> Self {
        Self { margin, ..self }
    }
}

/// Trainable per-speaker vectors used by the class-aware attention score.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVectorTable<T> {
    vectors: Array2<T>,
    speaker_ids: Vec<usize>,
    index: BTreeMap<usize, usize>,
}

impl<T: Real> ClassVectorTable<T> {
    pub fn new(vectors: Array2<T>, speaker_ids: Vec<usize>) -> Result<Self> {
        if speaker_ids.len() != vectors.nrows() {
            return Err(Error::DimensionMismatch {
                what: "class vector speaker ids",
                expected: vectors.nrows(),
                found: speaker_ids.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("class vectors must be finite".into()));
        }
        let mut index = BTreeMap::new();
        for (row, &id) in speaker_ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate class vector for speaker {id}"
                )));
            }
        }
        Ok(Self {
            vectors,
            speaker_ids,
            index,
        })
    }

    /// Table with rows for speakers `0..vectors.nrows()`.
    pub fn dense(vectors: Array2<T>) -> Self {
        let ids = (0..vectors.nrows()).collect();
        Self::new(vectors, ids).expect("dense ids are unique")
    }

    pub fn vectors(&self) -> &Array2<T> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Array2<T> {
        &mut self.vectors
    }

    pub fn speaker_ids(&self) -> &[usize] {
        &self.speaker_ids
    }

    pub fn row_of(&self, speaker: usize) -> Result<usize> {
        self.index
            .get(&speaker)
            .copied()
            .ok_or(Error::MissingClassVector { speaker })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

/// Unit-norm weight rows of the margin softmax classification head, one per
/// training speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights<T> {
    weights: Array2<T>,
}

impl<T: Real> ClassifierWeights<T> {
    /// Normalizes the rows of `weights`.
    pub fn new(weights: Array2<T>) -> Result<Self> {
        Ok(Self {
            weights: normalize_rows(weights)?,
        })
    }

    /// Keeps the rows as given. Used by the plain linear softmax head, which has no
    /// norm constraint.
    pub fn unconstrained(weights: Array2<T>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.weights
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        let w = std::mem::take(&mut self.weights);
        self.weights = normalize_rows(w)?;
        Ok(())
    }
}

/// Scalar loss plus gradients for each parameter group the loss touches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub value: T,
    pub grad_embeddings: Array2<T>,
    pub grad_class_vectors: Option<Array2<T>>,
    pub grad_classifier_weights: Option<Array2<T>>,
}

impl<T: Real> LossReport<T> {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.iter().all(|v| v.is_finite())
            && self
                .grad_class_vectors
                .iter()
                .chain(self.grad_classifier_weights.iter())
                .all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Multiplies the value and every gradient by `k`.
    pub fn scaled(mut self, k: T) -> Self {
        self.value = self.value * k;
        self.grad_embeddings.mapv_inplace(|v| v * k);
        if let Some(g) = self.grad_class_vectors.as_mut() {
            g.mapv_inplace(|v| v * k);
        }
        if let Some(g) = self.grad_classifier_weights.as_mut() {
            g.mapv_inplace(|v| v * k);
        }
        self
    }
}

/// Removes the component of each gradient row along the matching unit row of `points`.
pub(crate) fn project_tangent<T: Real>(grad: &mut Array2<T>, points: &Array2<T>) {
    for (mut g, z) in grad.axis_iter_mut(Axis(0)).zip(points.axis_iter(Axis(0))) {
        let radial = g.dot(&z);
        g.scaled_add(-radial, &z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels_views() -> (Vec<usize>, Vec<View>) {
        (
            vec![0, 1, 0, 1],
            vec![View::Original, View::Original, View::Augmented, View::Augmented],
        )
    }

    #[test]
    fn rejects_non_unit_rows() {
        let (l, v) = labels_views();
        let data = array![[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 1.0]];
        assert_eq!(
            EmbeddingBatch::new(data, l, v).unwrap_err(),
            Error::NotUnitNorm { row: 2, norm: 2.0 }
        );
    }

    #[test]
    fn rejects_single_speaker_and_unpaired_views() {
        let data = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        let (_, v) = labels_views();
        assert!(matches!(
            EmbeddingBatch::new(data.clone(), vec![3, 3, 3, 3], v.clone()),
            Err(Error::InvalidBatch(_))
        ));
        assert!(matches!(
            EmbeddingBatch::new(data, vec![0, 1, 1, 0], vec![View::Original, View::Original, View::Augmented, View::Original]),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn zero_row_is_reported_by_index() {
        let raw = array![[1.0, 0.0], [0.0, 0.0]];
        assert_eq!(normalize_rows(raw).unwrap_err(), Error::ZeroNorm { row: 1 });
    }

    #[test]
    fn margin_config_bounds() {
        let mut cfg = MarginConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.margin = std::f64::consts::FRAC_PI_2;
        assert!(cfg.validate().is_err());
        let cfg = MarginConfig::<f64> { tau: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tangent_projection_removes_radial_part() {
        let z = array![[0.6, 0.8]];
        let mut g: Array2<f64> = array![[0.6, 0.8]];
        project_tangent(&mut g, &z);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }
}
