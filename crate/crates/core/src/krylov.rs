//! Sparse matrices and Krylov solvers (Jacobi-preconditioned CG and BiCGSTAB).

use crate::error::{Error, Result};

/// Compressed sparse row matrix assembled from per-row entries.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in r {
                if last == Some(j) {
                    *val.last_mut().unwrap() += v;
                } else {
                    idx.push(j);
                    val.push(v);
                    last = Some(j);
                }
            }
            ptr.push(idx.len());
        }
        Csr { n, ptr, idx, val }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[k] * x[self.idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.ptr[i]..self.ptr[i + 1])
                    .find(|&k| self.idx[k] == i)
                    .map(|k| self.val[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned CG for symmetric positive (semi-)definite systems. When
/// `weights` is given the iterate is kept orthogonal to constants in the
/// weighted inner product, which handles singular Neumann systems.
pub fn cg(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    weights: Option<&[f64]>,
    rtol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = a.n;
    let d = a.diag();
    let project = |v: &mut [f64]| {
        if let Some(w) = weights {
            let tot: f64 = w.iter().sum();
            let m = dot(v, w) / tot;
            v.iter_mut().for_each(|e| *e -= m);
        }
    };
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bn = norm(b).max(1e-300);
    if norm(&r) <= rtol * bn {
        project(x);
        return Ok(SolveStats {
            iterations: 0,
            residual: norm(&r) / bn,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = norm(&r) / bn;
        if rn <= rtol {
            project(x);
            return Ok(SolveStats {
                iterations: it,
                residual: rn,
            });
        }
        for i in 0..n {
            z[i] = r[i] / d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    project(x);
    let mut res = vec![0.0; n];
    a.mul(x, &mut res);
    let rn = res.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt() / bn;
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: rn,
    })
}

/// Jacobi-preconditioned BiCGSTAB for general nonsingular systems.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.n;
    let d = a.diag();
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|e| *e = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm(&r) <= rtol * bn {
        return Ok(SolveStats {
            iterations: 0,
            residual: norm(&r) / bn,
        });
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] / d[i];
        }
        a.mul(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= rtol * bn {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats {
                iterations: it,
                residual: norm(&s) / bn,
            });
        }
        for i in 0..n {
            z[i] = s[i] / d[i];
        }
        a.mul(&z, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = norm(&r) / bn;
        if rn <= rtol {
            return Ok(SolveStats {
                iterations: it,
                residual: rn,
            });
        }
        if omega == 0.0 {
            break;
        }
    }
    let mut res = vec![0.0; n];
    a.mul(x, &mut res);
    let rn = res.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt() / bn;
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: rn,
    })
}
