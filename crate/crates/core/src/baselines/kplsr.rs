//! Kernel PLS with a Gaussian kernel on landmark vectors.
//!
//! The kernel matrix is centred in feature space. Components are extracted
//! with the kernel NIPALS iteration `t ∝ K u`, `u ∝ Y Yᵀ t`, after which both
//! `K` and `Y Yᵀ` are deflated by `(I - t tᵀ)` on each side. Predictions use
//! the dual coefficients `U (Tᵀ K U)⁻¹ Tᵀ Y`.

use nalgebra::DVector;

use super::{check_training_data, column_means, subtract_row, Matrix};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-12;
const VANISHING: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct KplsrModel {
    sigma: f64,
    /// Training inputs, one frame per row.
    train_x: Matrix,
    /// Column means of the uncentred training kernel.
    kernel_col_means: DVector<f64>,
    kernel_mean: f64,
    /// `n × q` dual coefficients on the centred kernel.
    dual: Matrix,
    y_mean: DVector<f64>,
    components: usize,
}

fn gaussian(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn row_vec(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Gaussian kernel between the rows of `a` and the rows of `b`.
pub fn gaussian_kernel(a: &Matrix, b: &Matrix, sigma: f64) -> Matrix {
    let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| row_vec(a, i)).collect();
    let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| row_vec(b, i)).collect();
    Matrix::from_fn(a.nrows(), b.nrows(), |i, j| gaussian(&ra[i], &rb[j], sigma))
}

/// `(I - t tᵀ) M (I - t tᵀ)` for a unit vector `t`.
fn deflate(m: &Matrix, t: &DVector<f64>) -> Matrix {
    let mt = m * t;
    let tm = m.tr_mul(t);
    let tmt = t.dot(&mt);
    m - &mt * t.transpose() - t * tm.transpose() + t * t.transpose() * tmt
}

impl KplsrModel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "kplsr predict",
                lhs: vec![x.len()],
                rhs: vec![self.input_dim()],
            });
        }
        let n = self.train_x.nrows();
        let k: Vec<f64> = (0..n)
            .map(|i| gaussian(x, &row_vec(&self.train_x, i), self.sigma))
            .collect();
        let k_mean = k.iter().sum::<f64>() / n as f64;
        let centred = DVector::from_iterator(
            n,
            k.iter()
                .zip(self.kernel_col_means.iter())
                .map(|(v, c)| v - k_mean - c + self.kernel_mean),
        );
        let y = self.dual.tr_mul(&centred) + &self.y_mean;
        Ok(y.iter().copied().collect())
    }
}

pub fn kplsr_fit(x: &Matrix, y: &Matrix, components: usize, sigma: f64) -> Result<KplsrModel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("kernel width must be positive, got {sigma}")));
    }
    check_training_data(x, y, components, false)?;
    let n = x.nrows();
    let kernel = gaussian_kernel(x, x, sigma);
    let kernel_col_means = column_means(&kernel);
    let kernel_mean = kernel_col_means.mean();
    let centring = Matrix::identity(n, n) - Matrix::from_element(n, n, 1.0 / n as f64);
    let k_centred = &centring * &kernel * &centring;

    let y_mean = column_means(y);
    let yc = subtract_row(y, &y_mean);
    let mut g = &yc * yc.transpose();
    let mut k = k_centred.clone();
    let k_norm = k.norm();

    let mut scores: Vec<DVector<f64>> = Vec::new();
    let mut y_scores: Vec<DVector<f64>> = Vec::new();
    for _ in 0..components {
        let mut u = {
            let mut best = 0;
            for j in 0..n {
                if g[(j, j)] > g[(best, best)] {
                    best = j;
                }
            }
            g.column(best).into_owned()
        };
        let mut t = DVector::zeros(n);
        let mut t_prev: Option<DVector<f64>> = None;
        let mut vanished = false;
        for _ in 0..MAX_ITERATIONS {
            t = &k * &u;
            let tn = t.norm();
            if !(tn > VANISHING * k_norm) {
                vanished = true;
                break;
            }
            t /= tn;
            u = &g * &t;
            let un = u.norm();
            if !(un > 0.0) {
                vanished = true;
                break;
            }
            u /= un;
            if let Some(prev) = &t_prev {
                if (&t - prev).norm() <= TOLERANCE {
                    break;
                }
            }
            t_prev = Some(t.clone());
        }
        if vanished {
            break;
        }
        k = deflate(&k, &t);
        g = deflate(&g, &t);
        scores.push(t);
        y_scores.push(u);
    }

    let achieved = scores.len();
    let dual = if achieved == 0 {
        Matrix::zeros(n, y.ncols())
    } else {
        let t = Matrix::from_columns(&scores);
        let u = Matrix::from_columns(&y_scores);
        let tku = t.transpose() * &k_centred * &u;
        let inv = tku
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("KPLSR score matrix is singular".into()))?;
        u * inv * t.transpose() * &yc
    };
    if dual.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KPLSR dual coefficients".into()));
    }
    Ok(KplsrModel {
        sigma,
        train_x: x.clone(),
        kernel_col_means,
        kernel_mean,
        dual,
        y_mean,
        components: achieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::plsr_fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_nonpositive_width() {
        let (x, y) = (random(5, 3, 1), random(5, 2, 2));
        assert!(kplsr_fit(&x, &y, 2, 0.0).is_err());
        assert!(kplsr_fit(&x, &y, 2, -1.0).is_err());
        assert!(kplsr_fit(&x, &y, 2, 1.0).is_ok());
    }

    #[test]
    fn wide_kernel_matches_linear_plsr() {
        let x = random(10, 4, 3);
        let b = random(4, 6, 4);
        let y = &x * &b + random(10, 6, 5) * 0.01;
        let linear = plsr_fit(&x, &y, 3).unwrap();
        let kernel = kplsr_fit(&x, &y, 3, 200.0).unwrap();
        let probe = random(3, 4, 6);
        for i in 0..3 {
            let row: Vec<f64> = probe.row(i).iter().copied().collect();
            let a = linear.predict(&row).unwrap();
            let k = kernel.predict(&row).unwrap();
            let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = a.iter().zip(&k).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 0.05 * scale, "{diff} vs {scale}");
        }
    }

    #[test]
    fn duplicate_rows_predict_identically() {
        let mut x = random(6, 3, 7);
        let y = random(6, 4, 8);
        let first = x.row(0).into_owned();
        x.set_row(1, &first);
        let model = kplsr_fit(&x, &y, 4, 1.0).unwrap();
        let r0: Vec<f64> = x.row(0).iter().copied().collect();
        let r1: Vec<f64> = x.row(1).iter().copied().collect();
        assert_eq!(model.predict(&r0).unwrap(), model.predict(&r1).unwrap());
    }

    #[test]
    fn training_points_fit_better_than_held_out() {
        let x = random(12, 3, 9);
        let y = Matrix::from_fn(12, 2, |i, j| (x[(i, 0)] * 3.0).sin() + x[(i, j + 1)].powi(2));
        let model = kplsr_fit(&x.rows(0, 10).into_owned(), &y.rows(0, 10).into_owned(), 8, 0.7).unwrap();
        let err = |i: usize| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let p = model.predict(&row).unwrap();
            (0..2).map(|j| (p[j] - y[(i, j)]).powi(2)).sum::<f64>()
        };
        let train = (0..10).map(err).sum::<f64>() / 10.0;
        let held = (10..12).map(err).sum::<f64>() / 2.0;
        assert!(train < held, "{train} vs {held}");
    }
}
