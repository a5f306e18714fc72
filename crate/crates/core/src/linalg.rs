//! Symmetric eigensolvers: Householder tridiagonalisation with implicit QL for
//! dense matrices, and Lanczos with full reorthogonalisation and explicit
//! restarts for large sparse operators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Eigenvalues in ascending order with eigenvectors as columns of a row-major `n×n` matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Vec<T>,
    pub n: usize,
}

impl<T: Real> SymmetricEigen<T> {
    pub fn vector(&self, col: usize) -> Vec<T> {
        (0..self.n).map(|r| self.vectors[r * self.n + col]).collect()
    }
}

fn hypot<T: Real>(a: T, b: T) -> T {
    a.hypot(b)
}

// Householder reduction to tridiagonal form (EISPACK tred2). `v` is row-major
// n×n on entry (the symmetric matrix) and holds the orthogonal transform on exit.
fn tred2<T: Real>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale = scale + d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
                v[at(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] = d[k] / scale;
                h = h + d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h = h - f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g = g + v[at(k, j)] * d[k];
                    e[k] = e[k] + v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] = e[j] / h;
                f = f + e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] = e[j] - hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] = v[at(k, j)] - (f * e[k] + g * d[k]);
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g = g + v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] = v[at(k, j)] - g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = T::zero();
    }
    if n > 0 {
        v[at(n - 1, n - 1)] = T::one();
    }
    e[0] = T::zero();
}

// Implicit QL on the tridiagonal (d, e) with eigenvector accumulation into `v`
// (EISPACK tql2). Eigenvalues come out sorted ascending.
fn tql2<T: Real>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    if n > 0 {
        e[n - 1] = T::zero();
    }
    let two = T::one() + T::one();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NoConvergence("tridiagonal QL exceeded 60 sweeps".into()));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = hypot(p, T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in l + 2..n {
                    d[i] = d[i] - h;
                }
                f = f + h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] = d[l] + f;
        e[l] = T::zero();
    }
    // selection sort keeps eigenvector columns aligned
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in i + 1..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                v.swap(at(j, i), at(j, k));
            }
        }
    }
    Ok(())
}

/// Full eigendecomposition of a dense symmetric matrix (row-major `n×n`).
pub fn symmetric_eigen<T: Real>(matrix: &[T], n: usize) -> Result<SymmetricEigen<T>> {
    assert_eq!(matrix.len(), n * n, "matrix must be n×n");
    let mut v = matrix.to_vec();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    if n == 0 {
        return Ok(SymmetricEigen {
            values: d,
            vectors: v,
            n,
        });
    }
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;
    Ok(SymmetricEigen {
        values: d,
        vectors: v,
        n,
    })
}

/// Eigendecomposition of the symmetric tridiagonal matrix with diagonal `diag`
/// and sub-diagonal `off` (`off.len() == diag.len() - 1`).
pub fn tridiagonal_eigen<T: Real>(diag: &[T], off: &[T]) -> Result<SymmetricEigen<T>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![T::zero(); n];
    if n > 1 {
        e[1..n].copy_from_slice(&off[..n - 1]);
    }
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    tql2(n, &mut v, &mut d, &mut e)?;
    Ok(SymmetricEigen {
        values: d,
        vectors: v,
        n,
    })
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn normalize<T: Real>(x: &mut [T]) -> T {
    let nrm = dot(x, x).sqrt();
    if nrm > T::zero() {
        for xi in x.iter_mut() {
            *xi = *xi / nrm;
        }
    }
    nrm
}

/// Tuning for [`lanczos_smallest`].
#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Relative residual target `‖Av - θv‖ <= tol·max(|θ|, tiny)`.
    pub tol: f64,
    pub max_basis: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_basis: 240,
            max_restarts: 60,
            seed: 0x5eed_1a2c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosResult<T> {
    pub value: T,
    pub vector: Vec<T>,
    pub residual: T,
    pub matvecs: usize,
}

/// Smallest eigenpair of the symmetric operator `apply` restricted to the
/// orthogonal complement of the unit vectors in `deflate`.
pub fn lanczos_smallest<T, F>(
    dim: usize,
    apply: F,
    deflate: &[Vec<T>],
    opts: LanczosOptions,
) -> Result<LanczosResult<T>>
where
    T: Real,
    F: Fn(&[T], &mut [T]),
{
    let project = |x: &mut [T]| {
        for u in deflate {
            let c = dot(u, x);
            axpy(-c, u, x);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<T> = (0..dim).map(|_| crate::scalar::cast(rng.gen::<f64>() - 0.5)).collect();
    project(&mut start);
    if normalize(&mut start) == T::zero() {
        return Err(Error::NoConvergence("deflation removed the whole space".into()));
    }
    let free_dim = dim.saturating_sub(deflate.len()).max(1);
    let m_max = opts.max_basis.min(free_dim).max(1);
    let tol: T = crate::scalar::cast(opts.tol);
    let tiny: T = crate::scalar::cast(1e-300_f64.max(f64::MIN_POSITIVE));
    let mut matvecs = 0usize;
    let mut best: Option<LanczosResult<T>> = None;

    for _restart in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<T>> = vec![start.clone()];
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut w = vec![T::zero(); dim];
        let mut converged = None;
        for m in 0..m_max {
            apply(&basis[m], &mut w);
            matvecs += 1;
            project(&mut w);
            let a = dot(&basis[m], &w);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    axpy(-c, q, &mut w);
                }
                project(&mut w);
            }
            let b = normalize(&mut w);
            let check = (m + 1) % 10 == 0 || m + 1 == m_max || b <= tiny;
            if check {
                let eig = tridiagonal_eigen(&alpha, &beta)?;
                let theta = eig.values[0];
                let resid = (b * eig.vectors[m * (m + 1)]).abs();
                let scale = theta.abs().max(tiny);
                if resid <= tol * scale || b <= tiny || m + 1 == free_dim {
                    converged = Some((eig, resid));
                    break;
                }
                if m + 1 == m_max {
                    converged = None;
                    // restart from the current Ritz vector
                    let y = eig.vector(0);
                    let mut ritz = vec![T::zero(); dim];
                    for (q, &c) in basis.iter().zip(&y) {
                        axpy(c, q, &mut ritz);
                    }
                    project(&mut ritz);
                    normalize(&mut ritz);
                    best = Some(LanczosResult {
                        value: theta,
                        vector: ritz.clone(),
                        residual: resid,
                        matvecs,
                    });
                    start = ritz;
                    break;
                }
            }
            beta.push(b);
            basis.push(w.clone());
        }
        if let Some((eig, resid)) = converged {
            let y = eig.vector(0);
            let mut ritz = vec![T::zero(); dim];
            for (q, &c) in basis.iter().zip(&y) {
                axpy(c, q, &mut ritz);
            }
            project(&mut ritz);
            normalize(&mut ritz);
            return Ok(LanczosResult {
                value: eig.values[0],
                vector: ritz,
                residual: resid,
                matvecs,
            });
        }
    }
    let last = best
        .map(|b| format!("{:?} (residual {:?})", b.value, b.residual))
        .unwrap_or_default();
    Err(Error::NoConvergence(format!(
        "Lanczos did not reach tolerance {} after {} restarts; last estimate {last}",
        opts.tol, opts.max_restarts
    )))
}
