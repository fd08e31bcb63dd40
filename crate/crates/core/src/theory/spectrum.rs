use ndarray::Array2;

use super::jacobi::{frobenius_norm, jacobi_eigen};
use crate::error::{Result, TaidError};

/// Off-diagonal stopping threshold relative to `‖G‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// A Gram matrix whose smallest eigenvalue is at most this fraction of the
/// largest is rejected as not positive definite.
pub const PD_THRESHOLD: f64 = 1e-12;

/// Eigen-decomposition `G = Vᵀ D V` of a positive-definite Gram matrix.
/// Rows of `v` are eigenvectors; `d` is ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSpectrum {
    v: Array2<f64>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `exp(-‖x - x'‖² / (2 h²))`.
    Rbf { bandwidth: f64 },
    /// `⟨x, x'⟩`.
    Linear,
    /// The Gram matrix itself, used as given.
    Explicit(Array2<f64>),
}

impl GramSpectrum {
    /// Checks `VᵀV = I` (to `1e-8` Frobenius) and `d > 0`.
    pub fn new(v: Array2<f64>, d: Vec<f64>) -> Result<Self> {
        let n = d.len();
        if n == 0 || v.dim() != (n, n) {
            return Err(TaidError::Dimension {
                expected: n,
                got: v.nrows(),
            });
        }
        if let Some(bad) = d.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(TaidError::InvalidKernel(format!("eigenvalue {bad} is not positive")));
        }
        let err = frobenius_norm(&(v.t().dot(&v) - Array2::<f64>::eye(n)));
        if err > 1e-8 {
            return Err(TaidError::InvalidInput(format!(
                "eigenvector matrix is not orthogonal (error {err:e})"
            )));
        }
        Ok(Self {
            v: v.as_standard_layout().into_owned(),
            d,
        })
    }

    /// Spectrum with `V = I`.
    pub fn diagonal(d: Vec<f64>) -> Result<Self> {
        let n = d.len();
        Self::new(Array2::eye(n), d)
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn d_min(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn d_max(&self) -> f64 {
        self.d.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn kappa(&self) -> f64 {
        self.d_max() / self.d_min()
    }

    /// `Vᵀ D V`.
    pub fn gram(&self) -> Array2<f64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            (0..n).map(|k| self.v[[k, i]] * self.d[k] * self.v[[k, j]]).sum()
        })
    }

    /// Per-eigenvalue shrinkage `d_i / (λ + d_i)`.
    pub fn filter_factors(&self, lambda: f64) -> Vec<f64> {
        self.d.iter().map(|&d| d / (lambda + d)).collect()
    }

    /// `Vᵀ D (λI + D)⁻¹ V y`, the regularised least-squares fit of `y`.
    pub fn apply_filter(&self, lambda: f64, y: &[f64]) -> Vec<f64> {
        let n = self.n();
        let v = self.v.as_slice().expect("standard layout");
        let mut out = vec![0.0; n];
        for k in 0..n {
            let row = &v[k * n..(k + 1) * n];
            let proj: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
            let coeff = proj * self.d[k] / (lambda + self.d[k]);
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * coeff;
            }
        }
        out
    }
}

/// Builds `G_ij = g(x_i, x_j) / N` (or takes an explicit `G`) and
/// diagonalises it.
pub fn gram_from_kernel(points: &[Vec<f64>], kernel: &Kernel) -> Result<GramSpectrum> {
    let g = match kernel {
        Kernel::Explicit(m) => {
            if !points.is_empty() && points.len() != m.nrows() {
                return Err(TaidError::Dimension {
                    expected: m.nrows(),
                    got: points.len(),
                });
            }
            m.clone()
        }
        Kernel::Rbf { bandwidth } => {
            if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(TaidError::param("bandwidth", "must be positive"));
            }
            let denom = 2.0 * bandwidth * bandwidth;
            kernel_matrix(points, |a, b| {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / denom).exp()
            })?
        }
        Kernel::Linear => kernel_matrix(points, |a, b| a.iter().zip(b).map(|(x, y)| x * y).sum())?,
    };
    spectrum_of(&g)
}

fn kernel_matrix(points: &[Vec<f64>], g: impl Fn(&[f64], &[f64]) -> f64) -> Result<Array2<f64>> {
    let n = points.len();
    if n == 0 {
        return Err(TaidError::InvalidInput("kernel needs at least one point".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(TaidError::Dimension {
            expected: dim,
            got: p.len(),
        });
    }
    let scale = 1.0 / n as f64;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| g(&points[i], &points[j]) * scale))
}

fn spectrum_of(g: &Array2<f64>) -> Result<GramSpectrum> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n {
        return Err(TaidError::InvalidKernel(format!(
            "Gram matrix must be square and non-empty, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let norm = frobenius_norm(g);
    for i in 0..n {
        for j in i + 1..n {
            if (g[[i, j]] - g[[j, i]]).abs() > 1e-12 * norm {
                return Err(TaidError::InvalidKernel(format!("Gram matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let eig = jacobi_eigen(g, JACOBI_TOLERANCE).map_err(|e| TaidError::InvalidKernel(e.to_string()))?;
    let d_min = eig.values[0];
    let d_max = eig.values[n - 1];
    if !(d_max > 0.0) || d_min <= PD_THRESHOLD * d_max {
        return Err(TaidError::InvalidKernel(format!(
            "Gram matrix is not positive definite (eigenvalues in [{d_min:e}, {d_max:e}])"
        )));
    }
    GramSpectrum::new(eig.vectors, eig.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn explicit_identity() {
        let s = gram_from_kernel(&[], &Kernel::Explicit(Array2::eye(3))).unwrap();
        assert_eq!(s.d(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.kappa(), 1.0);
    }

    #[test]
    fn explicit_diagonal() {
        let g = arr2(&[[4.0, 0.0], [0.0, 1.0]]) / 2.0;
        let s = gram_from_kernel(&[], &Kernel::Explicit(g)).unwrap();
        assert_eq!(s.d(), &[0.5, 2.0]);
        assert_eq!(s.kappa(), 4.0);
    }

    #[test]
    fn narrow_rbf_is_scaled_identity() {
        let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let s = gram_from_kernel(&points, &Kernel::Rbf { bandwidth: 1e-3 }).unwrap();
        for d in s.d() {
            assert!((d - 0.2).abs() < 1e-12);
        }
        assert!((s.kappa() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rbf_reconstructs() {
        let points: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.7).sin(), i as f64 / 6.0]).collect();
        let kernel = Kernel::Rbf { bandwidth: 0.4 };
        let s = gram_from_kernel(&points, &kernel).unwrap();
        let g = kernel_matrix(&points, |a, b| {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-sq / 0.32).exp()
        })
        .unwrap();
        assert!(frobenius_norm(&(s.gram() - &g)) / frobenius_norm(&g) < 1e-8);
    }

    #[test]
    fn rejects_non_pd_and_asymmetric() {
        // rank-one linear kernel
        let points = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(
            gram_from_kernel(&points, &Kernel::Linear),
            Err(TaidError::InvalidKernel(_))
        ));
        let asym = arr2(&[[1.0, 0.5], [0.0, 1.0]]);
        assert!(matches!(
            gram_from_kernel(&[], &Kernel::Explicit(asym)),
            Err(TaidError::InvalidKernel(_))
        ));
        let indefinite = arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(gram_from_kernel(&[], &Kernel::Explicit(indefinite)).is_err());
    }

    #[test]
    fn filter_matches_explicit_inverse() {
        let g = arr2(&[[2.0, 0.5], [0.5, 1.0]]);
        let s = gram_from_kernel(&[], &Kernel::Explicit(g.clone())).unwrap();
        let lambda = 0.3;
        let y = [1.0, -2.0];
        // G (λI + G)⁻¹ y by 2x2 inverse
        let (a, b, c, d) = (2.3, 0.5, 0.5, 1.3);
        let det = a * d - b * c;
        let w = [(d * y[0] - b * y[1]) / det, (-c * y[0] + a * y[1]) / det];
        let expected = [g[[0, 0]] * w[0] + g[[0, 1]] * w[1], g[[1, 0]] * w[0] + g[[1, 1]] * w[1]];
        let got = s.apply_filter(lambda, &y);
        assert!((got[0] - expected[0]).abs() < 1e-14);
        assert!((got[1] - expected[1]).abs() < 1e-14);
        for f in s.filter_factors(lambda) {
            assert!(f > 0.0 && f < 1.0);
        }
    }
}
