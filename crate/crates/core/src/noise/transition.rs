use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, ProbVector};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic `K×K` matrix; entry `(i, j)` is `P(Ŷ=j | Y=i, X=x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() || matrix.rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "transition matrix must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        for r in 0..matrix.rows() {
            let row = matrix.row(r);
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!("row {r} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidInput(format!("row {r} sums to {sum}")));
            }
        }
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(k: usize) -> Self {
        Self(Matrix::identity(k))
    }

    pub fn uniform(k: usize) -> Self {
        Self(Matrix::from_vec(k, k, vec![1.0 / k as f64; k * k]).expect("finite"))
    }

    pub(crate) fn from_matrix_unchecked(matrix: Matrix) -> Self {
        Self(matrix)
    }

    pub fn num_classes(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// Probability that clean class `i` is observed as some other class.
    pub fn off_diagonal_mass(&self, i: usize) -> f64 {
        1.0 - self.get(i, i)
    }

    /// `Tᵀ · clean`: the noisy posterior `P(Ŷ=j|x) = Σᵢ T_ij P(Y=i|x)`.
    pub fn noisy_posterior(&self, clean: &ProbVector) -> Result<ProbVector> {
        check_dim(self.num_classes(), clean.len())?;
        let mut out = self.0.transpose_matvec(clean.as_slice())?;
        // Renormalise away rounding so the result stays a valid ProbVector.
        let total: f64 = out.iter().sum();
        for v in &mut out {
            *v = (*v / total).clamp(0.0, 1.0);
        }
        Ok(ProbVector::from_vec_unchecked(out))
    }

    /// One row per line, entries space-separated with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.num_classes() {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| Error::Parse {
                        line: n + 1,
                        message: format!("{tok:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(t: TransitionMatrix) -> Self {
        t.0.to_rows()
    }
}

/// Mean over rows of the L1 distance between corresponding rows.
pub fn mean_row_l1(a: &TransitionMatrix, b: &TransitionMatrix) -> Result<f64> {
    check_dim(a.num_classes(), b.num_classes())?;
    let k = a.num_classes();
    let total: f64 = (0..k)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    Ok(total / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validation() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.0, 0.0]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.2, -0.2], vec![0.0, 1.0]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).is_ok());
    }

    #[test]
    fn identity_noisy_posterior_is_identity() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let out = TransitionMatrix::identity(3).noisy_posterior(&p).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn noisy_posterior_hand_product() {
        let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let out = t.noisy_posterior(&p).unwrap();
        assert_abs_diff_eq!(out.as_slice()[0], 0.55, epsilon = 1e-15);
        assert_abs_diff_eq!(out.as_slice()[1], 0.45, epsilon = 1e-15);
        assert!(t.noisy_posterior(&ProbVector::uniform(3)).is_err());
    }

    #[test]
    fn mean_row_l1_of_identity_vs_uniform() {
        let d = mean_row_l1(&TransitionMatrix::identity(2), &TransitionMatrix::uniform(2)).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn text_rejects_garbage_with_line_number() {
        match TransitionMatrix::from_text("1 0\n0 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(seed in any::<u64>(), k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let t = TransitionMatrix::from_rows(&rows).unwrap();
            let text = t.to_text();
            prop_assert_eq!(TransitionMatrix::from_text(&text).unwrap(), t);
        }
    }
}
