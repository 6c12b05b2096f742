use ndarray::{Array2, Axis};

use super::types::{ClassVectorTable, EmbeddingBatch};
use crate::error::Result;
use crate::scalar::Real;

/// Class-aware attention of every batch row over the speakers present in the batch.
///
/// Row `i` holds `softmax_k(z_i . c_k)` where `k` runs over the distinct speakers of
/// the batch only; speakers of the table that are absent from the batch do not enter
/// the normalization.
#[derive(Debug, Clone)]
pub struct ClassAttention<T> {
    /// Distinct batch speakers, ascending.
    classes: Vec<usize>,
    /// Table row of each entry of `classes`.
    table_rows: Vec<usize>,
    /// Index into `classes` of every batch row's label.
    class_of_row: Vec<usize>,
    /// Rows x classes softmax probabilities.
    probs: Array2<T>,
}

impl<T: Real> ClassAttention<T> {
    pub fn compute(batch: &EmbeddingBatch<T>, table: &ClassVectorTable<T>) -> Result<Self> {
        if table.dim() != batch.dim() {
            return Err(crate::Error::DimensionMismatch {
                what: "class vector dimension",
                expected: batch.dim(),
                found: table.dim(),
            });
        }
        let classes = batch.speakers();
        let table_rows = classes
            .iter()
            .map(|&s| table.row_of(s))
            .collect::<Result<Vec<_>>>()?;
        let class_of_row = batch
            .labels()
            .iter()
            .map(|y| classes.binary_search(y).expect("label drawn from batch"))
            .collect();
        let centers = table.vectors().select(Axis(0), &table_rows);
        let mut probs = batch.data().dot(&centers.t());
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|l| (l - max).exp());
            let total = row.sum();
            row.mapv_inplace(|e| e / total);
        }
        Ok(Self {
            classes,
            table_rows,
            class_of_row,
            probs,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Rows x classes attention distribution.
    pub fn probabilities(&self) -> &Array2<T> {
        &self.probs
    }

    /// `alpha[i][j]`: attention of anchor `i` toward the class of row `j`.
    #[inline]
    pub fn score(&self, i: usize, j: usize) -> T {
        self.probs[[i, self.class_of_row[j]]]
    }

    pub fn pair_scores(&self) -> Array2<T> {
        let n = self.class_of_row.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.score(i, j))
    }

    /// Pulls a gradient with respect to the pair scores back to the embeddings and
    /// the class-vector table. Both results are raw Euclidean gradients.
    pub fn backprop(
        &self,
        grad_scores: &Array2<T>,
        batch: &EmbeddingBatch<T>,
        table: &ClassVectorTable<T>,
    ) -> (Array2<T>, Array2<T>) {
        let (rows, c) = self.probs.dim();
        // sum the pair gradients per class: scores only depend on j through y_j
        let mut per_class = Array2::<T>::zeros((rows, c));
        for ((i, j), &g) in grad_scores.indexed_iter() {
            per_class[[i, self.class_of_row[j]]] += g;
        }
        let mut grad_logits = Array2::<T>::zeros((rows, c));
        for i in 0..rows {
            let p = self.probs.row(i);
            let a = per_class.row(i);
            let mean = p.dot(&a);
            for k in 0..c {
                grad_logits[[i, k]] = p[k] * (a[k] - mean);
            }
        }
        let centers = table.vectors().select(Axis(0), &self.table_rows);
        let grad_z = grad_logits.dot(&centers);
        let grad_centers = grad_logits.t().dot(batch.data());
        let mut grad_table = Array2::<T>::zeros(table.vectors().raw_dim());
        for (k, &row) in self.table_rows.iter().enumerate() {
            let mut dst = grad_table.row_mut(row);
            dst += &grad_centers.row(k);
        }
        (grad_z, grad_table)
    }
}

/// Class-aware attention score matrix `alpha[i][j]` for every pair of batch rows.
pub fn caa_scores<T: Real>(
    batch: &EmbeddingBatch<T>,
    table: &ClassVectorTable<T>,
) -> Result<Array2<T>> {
    Ok(ClassAttention::compute(batch, table)?.pair_scores())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::types::View;
    use crate::Error;
    use ndarray::array;

    fn batch() -> EmbeddingBatch<f64> {
        EmbeddingBatch::new(
            array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, -0.6]],
            vec![4, 7, 4, 7],
            vec![View::Original, View::Original, View::Augmented, View::Augmented],
        )
        .unwrap()
    }

    #[test]
    fn equal_class_vectors_give_uniform_attention() {
        let table = ClassVectorTable::new(array![[0.3, -2.0], [0.3, -2.0]], vec![4, 7]).unwrap();
        let alpha = caa_scores(&batch(), &table).unwrap();
        assert!(alpha.iter().all(|a| (a - 0.5).abs() < 1e-15));
    }

    #[test]
    fn two_class_softmax_value() {
        // z_0 = (1, 0): logits +1 toward speaker 4 and -1 toward speaker 7
        let table = ClassVectorTable::new(array![[1.0, 0.0], [-1.0, 0.0]], vec![4, 7]).unwrap();
        let alpha = caa_scores(&batch(), &table).unwrap();
        let e = std::f64::consts::E;
        assert!((alpha[[0, 2]] - e / (e + 1.0 / e)).abs() < 1e-12);
        assert!((alpha[[0, 2]] - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(alpha[[0, 0]], alpha[[0, 2]]);
    }

    #[test]
    fn absent_table_rows_do_not_enter_normalization() {
        let table = ClassVectorTable::new(
            array![[1.0, 0.0], [50.0, 50.0], [-1.0, 0.0]],
            vec![4, 9, 7],
        )
        .unwrap();
        let alpha = caa_scores(&batch(), &table).unwrap();
        for i in 0..4 {
            assert!((alpha[[i, 0]] + alpha[[i, 1]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_speaker_is_an_error() {
        let table = ClassVectorTable::new(array![[1.0, 0.0]], vec![4]).unwrap();
        assert_eq!(
            caa_scores(&batch(), &table).unwrap_err(),
            Error::MissingClassVector { speaker: 7 }
        );
    }
}
