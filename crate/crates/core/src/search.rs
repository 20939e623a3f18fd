//! Derivative-free minimization and a small Hermitian eigenvalue routine used
//! by the brute-force distance oracle.

use faer::c64;

/// Result of a Nelder–Mead run.
#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Nelder–Mead simplex search with the standard coefficients.
pub(crate) fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_evals: usize,
    f_tol: f64,
) -> Minimum {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= f_tol * (values[0].abs() + f_tol) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };

        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=n {
                    let x: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = f(&x);
                    simplex[i] = x;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
    }
}

/// Eigenvalues of a small Hermitian matrix (row-major `n × n`) by cyclic
/// complex Jacobi rotations. The input is overwritten.
pub(crate) fn jacobi_eigenvalues(a: &mut [c64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let idx = |i: usize, j: usize| i * n + j;
    let frob: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tiny = 1e-300f64.max(f64::EPSILON * 1e-2 * frob);
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[idx(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= tiny {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                let g = apq.norm();
                if g <= tiny * 1e-3 {
                    continue;
                }
                let phase = apq / g;
                let app = a[idx(p, p)].re;
                let aqq = a[idx(q, q)].re;
                let theta = (aqq - app) / (2.0 * g);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // J = diag(1, e^{-iφ}) · [[c, s], [-s, c]]
                let jpp = c64::new(c, 0.0);
                let jpq = c64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;
                for k in 0..n {
                    let (xp, xq) = (a[idx(k, p)], a[idx(k, q)]);
                    a[idx(k, p)] = xp * jpp + xq * jqp;
                    a[idx(k, q)] = xp * jpq + xq * jqq;
                }
                for k in 0..n {
                    let (xp, xq) = (a[idx(p, k)], a[idx(q, k)]);
                    a[idx(p, k)] = jpp.conj() * xp + jqp.conj() * xq;
                    a[idx(q, k)] = jpq.conj() * xp + jqq.conj() * xq;
                }
                a[idx(p, q)] = c64::new(0.0, 0.0);
                a[idx(q, p)] = c64::new(0.0, 0.0);
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[idx(i, i)].re).collect();
    ev.sort_by(f64::total_cmp);
    ev
}
