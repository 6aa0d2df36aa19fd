use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_REG: f64 = 1e-4;
pub const DEFAULT_K: usize = 10;

/// Outcome of regularized CCA between two paired views.
#[derive(Clone, Debug, PartialEq)]
pub struct CcaResult {
    /// Sample correlations of the top-`k` canonical variate pairs, clipped
    /// to `[0, 1]` and sorted descending.
    pub correlations: Vec<f64>,
    /// Top-`k` singular values of the regularized whitened cross-covariance.
    pub singular_values: Vec<f64>,
}

impl CcaResult {
    pub fn mean(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len() as f64
    }
}

fn center(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    c
}

/// Sample-space whitening: `Xc (Xc^T Xc / (n-1) + reg I)^(-1/2)` restricted
/// to the span of the centered data, as `U diag(s / sqrt(s^2/(n-1) + reg))`
/// from the eigendecomposition of the Gram matrix `Xc Xc^T = U S^2 U^T`.
fn whitened_basis(x: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let xc = center(x);
    let gram = &xc * xc.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut z = eig.eigenvectors;
    for (j, mut col) in z.column_iter_mut().enumerate() {
        let s2 = eig.eigenvalues[j].max(0.0);
        col *= s2.sqrt() / (s2 / (n - 1) as f64 + reg).sqrt();
    }
    z
}

/// Classical ridge-regularized CCA. `x` and `y` are `samples x features`.
pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, reg: f64) -> Result<CcaResult> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::shape("cca", format!("{} vs {} samples", n, y.nrows())));
    }
    if k == 0 || n < k + 2 {
        return Err(Error::Invalid(format!("cca needs at least k + 2 = {} samples, got {n}", k + 2)));
    }
    if reg.is_nan() || reg <= 0.0 {
        return Err(Error::Invalid(format!("cca regularization must be positive, got {reg}")));
    }
    let zx = whitened_basis(x, reg);
    let zy = whitened_basis(y, reg);
    let m = zx.transpose() * &zy / (n - 1) as f64;
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let k = k.min(order.len());
    let mut correlations = Vec::with_capacity(k);
    let mut singular_values = Vec::with_capacity(k);
    for &i in &order[..k] {
        let a = &zx * u.column(i);
        let b = &zy * vt.row(i).transpose();
        let denom = a.norm() * b.norm();
        let r = if denom > 0.0 { (a.dot(&b) / denom).abs() } else { 0.0 };
        if !r.is_finite() || !svd.singular_values[i].is_finite() {
            return Err(Error::NonFinite { op: "cca".into() });
        }
        correlations.push(r.clamp(0.0, 1.0));
        singular_values.push(svd.singular_values[i]);
    }
    correlations.sort_by(|a, b| b.total_cmp(a));
    Ok(CcaResult { correlations, singular_values })
}

/// Mean of the top-`k` canonical correlations.
pub fn cca_mean_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, reg: f64) -> Result<f64> {
    Ok(cca(x, y, k, reg)?.mean())
}
