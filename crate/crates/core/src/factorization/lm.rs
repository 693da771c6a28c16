//! Small dense Levenberg–Marquardt solver with forward-difference Jacobians.

use nalgebra::{DMatrix, DVector};

pub struct LmOptions {
    pub max_iter: usize,
    /// Stop once ½‖r‖² falls below this.
    pub target_cost: f64,
    /// Stop when the relative cost decrease of an accepted step is below this.
    pub rel_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 200, target_cost: 0.0, rel_tol: 1e-13 }
    }
}

fn cost(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn jacobian(res: &mut impl FnMut(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = 1e-7 * (1.0 + x[k].abs());
        xp[k] = x[k] + h;
        let rp = res(&xp);
        xp[k] = x[k];
        j.set_column(k, &((rp - r0) / h));
    }
    j
}

/// Minimize `½‖res(x)‖²` from `x0`; returns the best point and its cost.
pub fn minimize(
    mut res: impl FnMut(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    opts: &LmOptions,
) -> (DVector<f64>, f64) {
    let mut x = x0;
    let mut r = res(&x);
    let mut c = cost(&r);
    let mut mu = 1e-3;
    for _ in 0..opts.max_iter {
        if c <= opts.target_cost {
            break;
        }
        let j = jacobian(&mut res, &x, &r);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * (jtj[(k, k)] + 1e-12);
            }
            let Some(ch) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = ch.solve(&(-&g));
            let xn = &x + step;
            let rn = res(&xn);
            let cn = cost(&rn);
            if cn < c {
                let rel = (c - cn) / c.max(f64::MIN_POSITIVE);
                x = xn;
                r = rn;
                c = cn;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.rel_tol {
                    return (x, c);
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    (x, c)
}
