//! Dense complex linear-algebra helpers layered on LAPACK.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{
    Diag, EigVals, Factorize, Inverse, LUFactorized, ReciprocalConditionNum, Solve, SolveTriangular, QR, SVD, UPLO,
};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_FLOOR: f64 = 1e-14;

/// LU factorization with a reciprocal condition estimate.
pub struct DenseLu {
    lu: LUFactorized<ndarray::OwnedRepr<C64>>,
    rcond: f64,
}

impl DenseLu {
    pub fn new(a: &Array2<C64>) -> Result<Self> {
        if a.iter().any(|z| !z.is_finite()) {
            return Err(Error::near_singular(0.0));
        }
        let lu = a.factorize().map_err(|_| Error::near_singular(0.0))?;
        let rcond = lu.rcond().map_err(|_| Error::near_singular(0.0))?;
        if !(rcond >= RCOND_FLOOR) {
            return Err(Error::near_singular(rcond));
        }
        Ok(DenseLu { lu, rcond })
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn solve(&self, b: &Array1<C64>) -> Array1<C64> {
        self.lu.solve(b).expect("LU solve on a validated factorization")
    }

    pub fn inverse(&self) -> Array2<C64> {
        self.lu.inv().expect("inverse of a validated factorization")
    }
}

/// Solve `a x = b` for one right-hand side.
pub fn solve(a: &Array2<C64>, b: &Array1<C64>) -> Result<Array1<C64>> {
    Ok(DenseLu::new(a)?.solve(b))
}

/// Matrix inverse with the same singularity policy as [`DenseLu`].
pub fn inverse(a: &Array2<C64>) -> Result<Array2<C64>> {
    Ok(DenseLu::new(a)?.inverse())
}

pub fn to_complex(a: &Array2<f64>) -> Array2<C64> {
    a.mapv(|x| C64::new(x, 0.0))
}

/// `diag(d) * a`
pub fn scale_rows(d: &Array1<C64>, a: &Array2<C64>) -> Array2<C64> {
    let mut out = a.clone();
    for (mut row, &di) in out.axis_iter_mut(Axis(0)).zip(d.iter()) {
        row.mapv_inplace(|z| z * di);
    }
    out
}

/// `a * diag(d)`
pub fn scale_cols(a: &Array2<C64>, d: &Array1<C64>) -> Array2<C64> {
    let mut out = a.clone();
    for (mut col, &di) in out.axis_iter_mut(Axis(1)).zip(d.iter()) {
        col.mapv_inplace(|z| z * di);
    }
    out
}

pub fn add_diag(a: &mut Array2<C64>, d: &Array1<C64>) {
    for (i, &di) in d.iter().enumerate() {
        a[[i, i]] += di;
    }
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn norm2(v: ArrayView1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(v: ArrayView1<C64>) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn max_abs_matrix(a: ArrayView2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest column-sum norm.
pub fn norm1(a: ArrayView2<C64>) -> f64 {
    a.axis_iter(Axis(1)).map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Singular values in descending order.
pub fn singular_values(a: &Array2<C64>) -> Result<Array1<f64>> {
    let (_, s, _) = a.svd(false, false)?;
    Ok(s)
}

/// Smallest singular value together with its right singular vectors for the
/// `count` smallest singular values (columns, ascending order of sigma).
pub fn smallest_singular(a: &Array2<C64>, count: usize) -> Result<(Array1<f64>, Array2<C64>)> {
    let (_, s, vt) = a.svd(false, true)?;
    let vt = vt.ok_or_else(|| Error::Backend("svd returned no right vectors".into()))?;
    let n = s.len();
    let count = count.min(n).max(1);
    let mut sig = Array1::zeros(count);
    let mut vecs = Array2::zeros((a.ncols(), count));
    for c in 0..count {
        let idx = n - 1 - c;
        sig[c] = s[idx];
        let row = vt.row(idx);
        for (i, z) in row.iter().enumerate() {
            vecs[[i, c]] = z.conj();
        }
    }
    Ok((sig, vecs))
}

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(a: &Array2<C64>) -> Result<Array1<C64>> {
    Ok(a.eigvals()?)
}

/// Upper-triangular factor `r` with `a^* a = r^* r` for a tall matrix `a`.
pub fn gram_factor(a: &Array2<C64>) -> Result<Array2<C64>> {
    let (_, r) = a.qr()?;
    Ok(r)
}

/// Inverse of an upper-triangular matrix.
pub fn upper_inverse(r: &Array2<C64>) -> Result<Array2<C64>> {
    let eye = identity(r.nrows());
    Ok(r.solve_triangular(UPLO::Upper, Diag::NonUnit, &eye)?)
}

/// Unitary reduction `a = q h q^*` with `h` upper Hessenberg (Householder).
pub fn hessenberg(a: &Array2<C64>) -> (Array2<C64>, Array2<C64>) {
    let n = a.nrows();
    let mut h = a.clone();
    let mut q = identity(n);
    let mut v = vec![C64::new(0.0, 0.0); n];
    for col in 0..n.saturating_sub(2) {
        let x = h.slice(s![col + 1.., col]).to_owned();
        let xnorm = norm2(x.view());
        if xnorm == 0.0 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0.norm() == 0.0 { C64::new(1.0, 0.0) } else { x0 / x0.norm() };
        let m = n - col - 1;
        for i in 0..m {
            v[i] = x[i];
        }
        v[0] += phase * xnorm;
        let vnorm2: f64 = v[..m].iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let tau = 2.0 / vnorm2;
        // h <- (I - tau v v^*) h  on rows col+1..
        for j in col..n {
            let mut dot = C64::new(0.0, 0.0);
            for i in 0..m {
                dot += v[i].conj() * h[[col + 1 + i, j]];
            }
            let f = dot * tau;
            for i in 0..m {
                h[[col + 1 + i, j]] -= v[i] * f;
            }
        }
        // h <- h (I - tau v v^*)  and  q <- q (I - tau v v^*)  on cols col+1..
        for mat in [&mut h, &mut q] {
            for r in 0..n {
                let mut dot = C64::new(0.0, 0.0);
                for i in 0..m {
                    dot += mat[[r, col + 1 + i]] * v[i];
                }
                let f = dot * tau;
                for i in 0..m {
                    mat[[r, col + 1 + i]] -= f * v[i].conj();
                }
            }
        }
        for i in col + 2..n {
            h[[i, col]] = C64::new(0.0, 0.0);
        }
    }
    (q, h)
}

/// Solve `(h + shift I) x = b` for upper Hessenberg `h` in O(n^2) using
/// Gaussian elimination with adjacent-row pivoting. `work` must be n x n.
pub fn hessenberg_shifted_solve(
    h: &Array2<C64>,
    shift: C64,
    b: &Array1<C64>,
    work: &mut Array2<C64>,
) -> Result<Array1<C64>> {
    let n = h.nrows();
    work.assign(h);
    for i in 0..n {
        work[[i, i]] += shift;
    }
    let mut x = b.clone();
    let scale = work.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    for k in 0..n.saturating_sub(1) {
        if work[[k + 1, k]].norm() > work[[k, k]].norm() {
            for j in k..n {
                let t = work[[k, j]];
                work[[k, j]] = work[[k + 1, j]];
                work[[k + 1, j]] = t;
            }
            x.swap(k, k + 1);
        }
        let piv = work[[k, k]];
        if piv.norm() <= 1e-15 * scale {
            return Err(Error::near_singular(piv.norm() / scale));
        }
        let l = work[[k + 1, k]] / piv;
        if l.norm() != 0.0 {
            for j in k..n {
                let t = work[[k, j]];
                work[[k + 1, j]] -= l * t;
            }
            let t = x[k];
            x[k + 1] -= l * t;
        }
    }
    if work[[n - 1, n - 1]].norm() <= 1e-15 * scale {
        return Err(Error::near_singular(work[[n - 1, n - 1]].norm() / scale));
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= work[[i, j]] * x[j];
        }
        x[i] = acc / work[[i, i]];
    }
    Ok(x)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with the degree-13 Pade
/// approximant.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let theta13 = 5.371920351148152;
    let norm = norm1(a.view());
    let squarings = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let scale = 2f64.powi(-squarings);
    let a = a.mapv(|z| z * scale);
    let b = PADE13;
    let id = identity(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let c = |x: f64| C64::new(x, 0.0);
    let inner_u = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    let u = a.dot(&(a6.dot(&inner_u) + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + &id * c(b[1])));
    let inner_v = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    let v = a6.dot(&inner_v) + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + &id * c(b[0]);
    let lu = DenseLu::new(&(&v - &u))?;
    let mut r = lu.inverse().dot(&(&v + &u));
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}
