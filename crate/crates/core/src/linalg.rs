//! Matrix-free conjugate gradients for the SPD systems of the nutrient
//! step and the elliptic reference solve.

use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    /// `|b - A x| / |b|` at exit.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    exec::sum_by(a.len(), |i| a[i] * b[i])
}

/// Solves `A x = b` for SPD `A`, starting from the contents of `x`.
///
/// `apply(v, out)` must write `A v` into `out`.
pub fn conjugate_gradient<A>(
    apply: A,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= tol * b_norm {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: rr.sqrt() / b_norm,
        });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolver {
                iterations: it,
                residual: rr.sqrt() / b_norm,
                tol,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * b_norm {
            // Confirm against the true residual; the recurrence drifts.
            apply(x, &mut ap);
            let true_rr = exec::sum_by(n, |i| (b[i] - ap[i]).powi(2));
            if true_rr.sqrt() <= tol * b_norm {
                return Ok(CgStats {
                    iterations: it,
                    relative_residual: true_rr.sqrt() / b_norm,
                });
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            rr = true_rr;
            p.copy_from_slice(&r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
        tol,
    })
}
