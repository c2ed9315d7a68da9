//! Small unconstrained minimizers used by the likelihood fit.

use nalgebra::{DMatrix, DVector};

/// Objective returning `(value, gradient)`, or `None` outside its domain.
pub(crate) trait Objective {
    fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>;

    fn value(&mut self, x: &DVector<f64>) -> Option<f64> {
        self.eval(x).map(|(f, _)| f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Converged,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub status: Status,
}

const ARMIJO: f64 = 1e-4;

/// BFGS with an inverse-Hessian update and backtracking Armijo search.
/// `done` is checked at every accepted iterate.
pub(crate) fn bfgs<O: Objective>(
    obj: &mut O,
    x0: DVector<f64>,
    max_iter: usize,
    mut done: impl FnMut(&DVector<f64>, &DVector<f64>) -> bool,
) -> Option<Outcome> {
    let n = x0.len();
    let (mut f, mut g) = obj.eval(&x0)?;
    let mut x = x0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;

    for iter in 0..max_iter {
        if done(&x, &g) {
            return Some(Outcome { x, grad: g, iterations: iter, status: Status::Converged });
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            h_inv = DMatrix::identity(n, n);
            scaled = false;
            dir = -g.clone();
            slope = g.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            if let Some((ft, gt)) = obj.eval(&trial) {
                if ft.is_finite() && ft <= f + ARMIJO * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Some(Outcome { x, grad: g, iterations: iter, status: Status::LineSearchFailed });
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h_inv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yHy + rho) s s'
            h_inv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    let status = if done(&x, &g) { Status::Converged } else { Status::MaxIterations };
    Some(Outcome { x, grad: g, iterations: max_iter, status })
}

/// Derivative-free Nelder–Mead simplex search.
pub(crate) fn nelder_mead<O: Objective>(obj: &mut O, x0: &DVector<f64>, scale: f64, max_evals: usize) -> (DVector<f64>, f64) {
    let n = x0.len();
    let mut value = |x: &DVector<f64>| obj.value(x).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.clone(), value(x0)));
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += if v[i].abs() > 1e-8 { scale * v[i].abs().max(0.05) } else { scale * 0.05 };
        let fv = value(&v);
        simplex.push((v, fv));
    }

    let mut evals = n + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-14 * (best.abs() + 1e-14) {
            break;
        }
        let centroid = simplex[..n].iter().fold(DVector::zeros(n), |acc, (v, _)| acc + v) / n as f64;
        let reflect = &centroid + (&centroid - &simplex[n].0);
        let fr = value(&reflect);
        evals += 1;
        if fr < simplex[0].1 {
            let expand = &centroid + (&reflect - &centroid) * 2.0;
            let fe = value(&expand);
            evals += 1;
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract = if fr < simplex[n].1 {
                &centroid + (&reflect - &centroid) * 0.5
            } else {
                &centroid + (&simplex[n].0 - &centroid) * 0.5
            };
            let fc = value(&contract);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contract, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v = &anchor + (&entry.0 - &anchor) * 0.5;
                    let fv = value(&v);
                    *entry = (v, fv);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Some((f, g))
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let out = bfgs(&mut Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), 500, |_, g| g.amax() < 1e-8).unwrap();
        assert_eq!(out.status, Status::Converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_solves_rosenbrock() {
        let (x, f) = nelder_mead(&mut Rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), 1.0, 5000);
        assert!(f < 1e-10, "{f}");
        assert!((x[0] - 1.0).abs() < 1e-4);
    }
}
