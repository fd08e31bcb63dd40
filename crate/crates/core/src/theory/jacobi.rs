//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use ndarray::Array2;

use crate::error::{Result, TaidError};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order and the matching eigenvectors stored as
/// rows, so `A = vectorsᵀ · diag(values) · vectors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
    pub sweeps: usize,
}

/// Frobenius norm of the strictly off-diagonal part.
pub fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for ((i, j), v) in a.indexed_iter() {
        if i != j {
            s += v * v;
        }
    }
    s.sqrt()
}

pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Diagonalises a symmetric matrix by cyclic Jacobi rotations, sweeping
/// until the off-diagonal norm falls to `tol_rel · ‖A‖_F`.
///
/// Only the upper triangle is read.
pub fn jacobi_eigen(a: &Array2<f64>, tol_rel: f64) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(TaidError::InvalidInput(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(TaidError::InvalidInput("matrix has non-finite entries".into()));
    }
    let mut m: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i <= j {
                a[[i, j]]
            } else {
                a[[j, i]]
            }
        })
        .collect();
    // columns of `q` accumulate the rotations
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    let threshold = tol_rel * m.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut sweeps = 0;
    while off_norm_flat(&m, n) > threshold {
        if sweeps == MAX_SWEEPS {
            return Err(TaidError::InvalidInput(format!(
                "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for r in p + 1..n {
                rotate(&mut m, &mut q, n, p, r);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(k, j)| q[j * n + order[k]]);
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

fn off_norm_flat(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[i * n + j] * m[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Zeroes `m[p][r]` with a plane rotation applied on both sides.
/// Both matrices are row-major `n × n`.
fn rotate(m: &mut [f64], q: &mut [f64], n: usize, p: usize, r: usize) {
    let apr = m[p * n + r];
    if apr == 0.0 {
        return;
    }
    let theta = (m[r * n + r] - m[p * n + p]) / (2.0 * apr);
    let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
    let c = 1.0 / t.hypot(1.0);
    let s = t * c;

    for k in 0..n {
        if k == p || k == r {
            continue;
        }
        let mkp = m[k * n + p];
        let mkr = m[k * n + r];
        let new_p = c * mkp - s * mkr;
        let new_r = s * mkp + c * mkr;
        m[k * n + p] = new_p;
        m[p * n + k] = new_p;
        m[k * n + r] = new_r;
        m[r * n + k] = new_r;
    }
    m[p * n + p] -= t * apr;
    m[r * n + r] += t * apr;
    m[p * n + r] = 0.0;
    m[r * n + p] = 0.0;

    for k in 0..n {
        let qkp = q[k * n + p];
        let qkr = q[k * n + r];
        q[k * n + p] = c * qkp - s * qkr;
        q[k * n + r] = s * qkp + c * qkr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reconstruct(e: &SymmetricEigen) -> Array2<f64> {
        let n = e.values.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            (0..n).map(|k| e.vectors[[k, i]] * e.values[k] * e.vectors[[k, j]]).sum()
        })
    }

    #[test]
    fn two_by_two_by_hand() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let a = ndarray::arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let e = jacobi_eigen(&a, 1e-12).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[[1, 0]].abs() - h).abs() < 1e-14);
        assert!((e.vectors[[1, 0]] - e.vectors[[1, 1]]).abs() < 1e-14);
    }

    #[test]
    fn diagonal_input_needs_no_sweep() {
        let a = ndarray::arr2(&[[4.0, 0.0], [0.0, 1.0]]);
        let e = jacobi_eigen(&a, 1e-12).unwrap();
        assert_eq!(e.sweeps, 0);
        assert_eq!(e.values, vec![1.0, 4.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(jacobi_eigen(&Array2::zeros((2, 3)), 1e-12).is_err());
        assert!(jacobi_eigen(&Array2::zeros((0, 0)), 1e-12).is_err());
        assert!(jacobi_eigen(&ndarray::arr2(&[[f64::NAN]]), 1e-12).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reconstructs_random_symmetric(n in 1usize..24, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut a = Array2::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.random_range(-3.0..3.0);
                    a[[i, j]] = v;
                    a[[j, i]] = v;
                }
            }
            let e = jacobi_eigen(&a, 1e-12).unwrap();
            let err = frobenius_norm(&(reconstruct(&e) - &a)) / frobenius_norm(&a).max(1e-300);
            prop_assert!(err < 1e-10, "reconstruction error {}", err);
            let vvt = e.vectors.dot(&e.vectors.t());
            prop_assert!(frobenius_norm(&(vvt - Array2::<f64>::eye(n))) < 1e-10);
            for w in e.values.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
