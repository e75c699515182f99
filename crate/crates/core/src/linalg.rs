//! Dense linear-algebra kernels: matrix products, cyclic Jacobi
//! eigendecomposition, one-sided Jacobi SVD, truncation and rank.
//!
//! Every routine is a pure function of its inputs. Loop orders are fixed so
//! repeated calls are bit-identical.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAX_SWEEPS: usize = 60;
pub const CONVERGENCE_TOL: f64 = 1e-14;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub vt: Tensor,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Tensor {
        let d = self.s.len();
        let us = Tensor::from_fn(d, d, |i, j| self.u.get(i, j) * self.s[j]);
        matmul(&us, &self.vt).expect("svd factors are square and conformant")
    }
}

#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Tensor,
}

/// `a · b` with the i-k-j loop order; each output entry accumulates its
/// products in ascending `k`, matching the textbook triple loop bit for bit.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_matrix("matmul")?;
    b.expect_matrix("matmul")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!("[{m}x{k}] · [{k2}x{n}]: inner extents {k} and {k2} differ"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] += aip * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_matrix("matmul_tn")?;
    b.expect_matrix("matmul_tn")?;
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(
            "matmul_tn",
            format!("[{k}x{m}]ᵀ · [{k2}x{n}]: row counts {k} and {k2} differ"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let api = ad[p * m + i];
            let row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += api * brow[j];
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_matrix("matmul_nt")?;
    b.expect_matrix("matmul_nt")?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape(
            "matmul_nt",
            format!("[{m}x{k}] · [{n}x{k2}]ᵀ: column counts {k} and {k2} differ"),
        ));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

/// `m · v` for a matrix and a vector of matching length.
pub fn matvec(m: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    m.expect_matrix("matvec")?;
    let (r, c) = (m.shape()[0], m.shape()[1]);
    if v.len() != c {
        return Err(Error::shape("matvec", format!("[{r}x{c}] · [{}]", v.len())));
    }
    Ok((0..r)
        .map(|i| {
            let row = m.row(i);
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * v[j];
            }
            acc
        })
        .collect())
}

fn check_finite(m: &Tensor, context: &str) -> Result<()> {
    if !m.all_finite() {
        return Err(Error::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(())
}

pub fn is_symmetric(m: &Tensor, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.rows();
    let scale = m.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m.get(i, j) - m.get(j, i)).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

fn off_diagonal_mass(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

/// Flips column `j` of `v` (row-major `n×n`) so its first nonzero entry is
/// nonnegative; returns whether a flip happened.
fn canonical_column_sign(v: &mut [f64], n: usize, j: usize) -> bool {
    for i in 0..n {
        let x = v[i * n + j];
        if x != 0.0 {
            if x < 0.0 {
                for r in 0..n {
                    v[r * n + j] = -v[r * n + j];
                }
                return true;
            }
            return false;
        }
    }
    false
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Values are returned in descending order and each eigenvector has a
/// nonnegative first nonzero entry.
pub fn eigh(m: &Tensor) -> Result<EigResult> {
    m.expect_square("eigh")?;
    check_finite(m, "eigh input")?;
    if !is_symmetric(m, SYMMETRY_TOL) {
        return Err(Error::InvalidArgument(
            "eigh requires a symmetric matrix (tolerance 1e-12)".into(),
        ));
    }
    let n = m.rows();
    let mut a = m.data().to_vec();
    let mut v = Tensor::eye(n).into_data();
    let norm = m.frobenius();
    let target = CONVERGENCE_TOL * norm;

    let mut converged = off_diagonal_mass(&a, n) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NotConverged {
                algorithm: "jacobi eigh",
                sweeps,
                residual: off_diagonal_mass(&a, n),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal_mass(&a, n) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![0.0; n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        for r in 0..n {
            vecs[r * n + new_j] = v[r * n + old_j];
        }
    }
    for j in 0..n {
        canonical_column_sign(&mut vecs, n, j);
    }
    Ok(EigResult {
        values,
        vectors: Tensor::matrix(n, n, vecs)?,
    })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &Tensor) -> Result<f64> {
    let e = eigh(m)?;
    Ok(e.values.first().copied().unwrap_or(0.0))
}

/// One-sided Jacobi on the columns of a row-major `rows×cols` buffer with
/// `cols ≤ rows`. Returns the orthogonalised columns and the accumulated
/// right rotation `V` (`cols×cols`).
fn one_sided_jacobi(work: &mut [f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut v = Tensor::eye(cols).into_data();
    for sweep in 0..=MAX_SWEEPS {
        let mut worst: f64 = 0.0;
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let x = work[i * cols + p];
                    let y = work[i * cols + q];
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 {
                    continue;
                }
                let scale = (alpha * beta).sqrt();
                let rel = gamma.abs() / scale;
                if !(rel > CONVERGENCE_TOL) {
                    continue;
                }
                worst = worst.max(rel);
                if sweep == MAX_SWEEPS {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = work[i * cols + p];
                    let y = work[i * cols + q];
                    work[i * cols + p] = c * x - s * y;
                    work[i * cols + q] = s * x + c * y;
                }
                for i in 0..cols {
                    let x = v[i * cols + p];
                    let y = v[i * cols + q];
                    v[i * cols + p] = c * x - s * y;
                    v[i * cols + q] = s * x + c * y;
                }
            }
        }
        if sweep == MAX_SWEEPS && worst > CONVERGENCE_TOL {
            return Err(Error::NotConverged {
                algorithm: "one-sided jacobi svd",
                sweeps: MAX_SWEEPS,
                residual: worst,
            });
        }
        if !rotated {
            break;
        }
    }
    Ok(v)
}

fn column_norms(work: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += work[i * cols + j] * work[i * cols + j];
            }
            acc.sqrt()
        })
        .collect()
}

/// Replaces the columns listed in `missing` of a row-major `n×n` matrix by
/// unit vectors orthogonal to every other column.
fn complete_basis(u: &mut [f64], n: usize, missing: &[usize]) {
    let mut filled: Vec<bool> = vec![true; n];
    for &j in missing {
        filled[j] = false;
    }
    for &j in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..n {
            let mut cand = vec![0.0; n];
            cand[e] = 1.0;
            for _ in 0..2 {
                for k in 0..n {
                    if !filled[k] {
                        continue;
                    }
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += u[i * n + k] * cand[i];
                    }
                    for i in 0..n {
                        cand[i] -= dot * u[i * n + k];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(b, _)| norm > *b + 1e-12) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("n > 0 when a column is missing");
        for i in 0..n {
            u[i * n + j] = cand[i] / norm;
        }
        filled[j] = true;
    }
}

/// Full SVD of a square matrix by one-sided Jacobi.
///
/// `s` is descending; the first nonzero entry of each column of `u` is
/// nonnegative; columns of `u` for zero singular values complete an
/// orthonormal basis.
pub fn svd(m: &Tensor) -> Result<SvdResult> {
    m.expect_square("svd")?;
    check_finite(m, "svd input")?;
    let n = m.rows();
    let mut work = m.data().to_vec();
    let v = one_sided_jacobi(&mut work, n, n)?;
    let norms = column_norms(&work, n, n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();

    let mut u = vec![0.0; n * n];
    let mut vt = vec![0.0; n * n];
    let mut missing = Vec::new();
    for (new_j, &old_j) in order.iter().enumerate() {
        let sigma = norms[old_j];
        if sigma > 0.0 {
            for i in 0..n {
                u[i * n + new_j] = work[i * n + old_j] / sigma;
            }
        } else {
            missing.push(new_j);
        }
        for i in 0..n {
            vt[new_j * n + i] = v[i * n + old_j];
        }
    }
    complete_basis(&mut u, n, &missing);
    for j in 0..n {
        if canonical_column_sign(&mut u, n, j) {
            for i in 0..n {
                vt[j * n + i] = -vt[j * n + i];
            }
        }
    }
    Ok(SvdResult {
        u: Tensor::matrix(n, n, u)?,
        s,
        vt: Tensor::matrix(n, n, vt)?,
    })
}

/// Singular values of any matrix, descending, `min(rows, cols)` of them.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    m.expect_matrix("singular_values")?;
    check_finite(m, "singular_values input")?;
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let (mut work, rows, cols) = if c <= r {
        (m.data().to_vec(), r, c)
    } else {
        (m.transpose()?.into_data(), c, r)
    };
    one_sided_jacobi(&mut work, rows, cols)?;
    let mut s = column_norms(&work, rows, cols);
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Truncated SVD `U_r Σ_r V_rᵀ`.
pub fn best_rank_r(m: &Tensor, r: usize) -> Result<Tensor> {
    m.expect_square("best_rank_r")?;
    let n = m.rows();
    if r > n {
        return Err(Error::InvalidArgument(format!(
            "best_rank_r: rank {r} exceeds dimension {n}"
        )));
    }
    let f = svd(m)?;
    Ok(truncate(&f, r))
}

/// `Σ_{i<r} σ_i u_i v_iᵀ` from an existing factorisation.
pub fn truncate(f: &SvdResult, r: usize) -> Tensor {
    let n = f.s.len();
    let mut out = Tensor::zeros(&[n, n]);
    let data = out.data_mut();
    for k in 0..r.min(n) {
        let sk = f.s[k];
        for i in 0..n {
            let ui = f.u.get(i, k) * sk;
            for j in 0..n {
                data[i * n + j] += ui * f.vt.get(k, j);
            }
        }
    }
    out
}

/// Number of singular values strictly above `rel_tol · σ_1`.
pub fn numeric_rank(m: &Tensor, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "numeric_rank: rel_tol {rel_tol} not in (0, 1)"
        )));
    }
    let s = singular_values(m)?;
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rel_tol * top).count())
}

/// Householder QR of a square matrix. `R` has a nonnegative diagonal.
pub fn qr(m: &Tensor) -> Result<(Tensor, Tensor)> {
    m.expect_square("qr")?;
    check_finite(m, "qr input")?;
    let n = m.rows();
    let mut r = m.data().to_vec();
    let mut q = Tensor::eye(n).into_data();
    for k in 0..n {
        let mut norm = 0.0;
        for i in k..n {
            norm += r[i * n + k] * r[i * n + k];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k * n + k] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        for i in k..n {
            v[i] = r[i * n + k];
        }
        v[k] -= alpha;
        let vnorm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * r[i * n + j];
            }
            let f = 2.0 * dot / vnorm_sq;
            for i in k..n {
                r[i * n + j] -= f * v[i];
            }
        }
        for row in 0..n {
            let mut dot = 0.0;
            for i in k..n {
                dot += q[row * n + i] * v[i];
            }
            let f = 2.0 * dot / vnorm_sq;
            for i in k..n {
                q[row * n + i] -= f * v[i];
            }
        }
    }
    for k in 0..n {
        if r[k * n + k] < 0.0 {
            for j in 0..n {
                r[k * n + j] = -r[k * n + j];
            }
            for i in 0..n {
                q[i * n + k] = -q[i * n + k];
            }
        }
        for i in (k + 1)..n {
            r[i * n + k] = 0.0;
        }
    }
    Ok((Tensor::matrix(n, n, q)?, Tensor::matrix(n, n, r)?))
}

/// Haar-distributed orthogonal matrix: `Q` from the QR of a Gaussian matrix
/// with the sign of each `R_kk` folded into column `k`.
pub fn haar_orthogonal(n: usize, rng: &mut Rng) -> Tensor {
    let g = Tensor::randn(&[n, n], 1.0, rng);
    qr(&g).expect("gaussian matrix is finite and square").0
}
