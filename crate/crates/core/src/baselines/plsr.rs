use nalgebra::DVector;

use super::{check_training_data, column_means, subtract_row, Matrix};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 500;
const TOLERANCE: f64 = 1e-12;
/// A score vector smaller than this fraction of the original X norm means
/// X has been exhausted.
const VANISHING: f64 = 1e-10;

/// Linear partial least squares regression (NIPALS, multi-response).
#[derive(Clone, Debug, PartialEq)]
pub struct PlsrModel {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    /// `p × q` regression matrix acting on centred inputs.
    coefficients: Matrix,
    components: usize,
}

impl PlsrModel {
    /// Component count actually extracted (may be below the requested count
    /// when X runs out of rank).
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn input_dim(&self) -> usize {
        self.x_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.y_mean.len()
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "plsr predict",
                lhs: vec![x.len()],
                rhs: vec![self.input_dim()],
            });
        }
        let centred = DVector::from_iterator(x.len(), x.iter().zip(self.x_mean.iter()).map(|(a, m)| a - m));
        let y = self.coefficients.tr_mul(&centred) + &self.y_mean;
        Ok(y.iter().copied().collect())
    }
}

fn dominant_column(y: &Matrix) -> DVector<f64> {
    let mut best = 0;
    let mut best_norm = -1.0;
    for (j, col) in y.column_iter().enumerate() {
        let n = col.norm_squared();
        if n > best_norm {
            best_norm = n;
            best = j;
        }
    }
    y.column(best).into_owned()
}

/// Fits `components` latent directions. Rows of `x` and `y` are frames.
pub fn plsr_fit(x: &Matrix, y: &Matrix, components: usize) -> Result<PlsrModel> {
    check_training_data(x, y, components, true)?;
    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let mut xr = subtract_row(x, &x_mean);
    let mut yr = subtract_row(y, &y_mean);
    let x_norm = xr.norm();

    let (p_dim, q_dim) = (x.ncols(), y.ncols());
    let mut weights: Vec<DVector<f64>> = Vec::new();
    let mut loadings: Vec<DVector<f64>> = Vec::new();
    let mut y_loadings: Vec<DVector<f64>> = Vec::new();

    for _ in 0..components {
        let mut u = dominant_column(&yr);
        let mut t_prev: Option<DVector<f64>> = None;
        let mut w = DVector::zeros(p_dim);
        let mut t = DVector::zeros(x.nrows());
        let mut c = DVector::zeros(q_dim);
        let mut vanished = false;
        for _ in 0..MAX_ITERATIONS {
            w = xr.tr_mul(&u);
            let wn = w.norm();
            if !(wn > 0.0) {
                vanished = true;
                break;
            }
            w /= wn;
            t = &xr * &w;
            let tt = t.norm_squared();
            if !(t.norm() > VANISHING * x_norm) {
                vanished = true;
                break;
            }
            c = yr.tr_mul(&t) / tt;
            let cc = c.norm_squared();
            if !(cc > 0.0) {
                vanished = true;
                break;
            }
            u = &yr * &c / cc;
            if let Some(prev) = &t_prev {
                if (&t - prev).norm() <= TOLERANCE * t.norm() {
                    break;
                }
            }
            t_prev = Some(t.clone());
        }
        if vanished {
            break;
        }
        let tt = t.norm_squared();
        let p = xr.tr_mul(&t) / tt;
        xr -= &t * p.transpose();
        yr -= &t * c.transpose();
        weights.push(w);
        loadings.push(p);
        y_loadings.push(c);
    }

    let achieved = weights.len();
    let coefficients = if achieved == 0 {
        Matrix::zeros(p_dim, q_dim)
    } else {
        let w = Matrix::from_columns(&weights);
        let p = Matrix::from_columns(&loadings);
        let c = Matrix::from_columns(&y_loadings);
        let ptw = p.tr_mul(&w);
        let inv = ptw
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("PLSR loading matrix is singular".into()))?;
        w * inv * c.transpose()
    };
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PLSR coefficients".into()));
    }
    Ok(PlsrModel {
        x_mean,
        y_mean,
        coefficients,
        components: achieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn recovers_exact_linear_map() {
        let x = random(8, 3, 1);
        let b = random(3, 5, 2);
        let y = &x * &b;
        let model = plsr_fit(&x, &y, 3).unwrap();
        for i in 0..8 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let pred = model.predict(&row).unwrap();
            for (k, v) in pred.iter().enumerate() {
                let want = y[(i, k)];
                assert!((v - want).abs() <= 1e-8 * want.abs().max(1.0), "{v} vs {want}");
            }
        }
    }

    #[test]
    fn mean_input_predicts_mean_response() {
        let x = random(6, 4, 3);
        let y = random(6, 7, 4);
        let model = plsr_fit(&x, &y, 2).unwrap();
        let xm: Vec<f64> = column_means(&x).iter().copied().collect();
        let pred = model.predict(&xm).unwrap();
        let ym = column_means(&y);
        for (a, b) in pred.iter().zip(ym.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_component_counts() {
        let x = random(1, 3, 5);
        let y = random(1, 2, 6);
        assert!(plsr_fit(&x, &y, 1).is_err());
        let x = random(5, 3, 5);
        let y = random(5, 2, 6);
        assert!(plsr_fit(&x, &y, 0).is_err());
        assert!(plsr_fit(&x, &y, 4).is_err());
        assert!(plsr_fit(&x, &y, 3).is_ok());
    }

    #[test]
    fn stops_early_on_rank_deficient_input() {
        let base = random(6, 1, 7);
        let x = Matrix::from_fn(6, 3, |i, j| base[(i, 0)] * (j + 1) as f64);
        let y = random(6, 2, 8);
        let model = plsr_fit(&x, &y, 3).unwrap();
        assert_eq!(model.components(), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = plsr_fit(&random(5, 3, 9), &random(5, 2, 10), 2).unwrap();
        assert!(model.predict(&[0.0; 4]).is_err());
    }
}
