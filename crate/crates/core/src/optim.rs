//! Small dense quasi-Newton minimizer shared by the planner and the
//! simulated human.

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BFGS with Armijo backtracking. `f` writes the gradient into its second
/// argument and returns the objective value. Every accepted step strictly
/// decreases the objective.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut fx = f(&x, &mut g);
    let mut h = identity(d);
    let mut fresh = true;
    let mut xn = vec![0.0; d];
    let mut gn = vec![0.0; d];
    let mut p = vec![0.0; d];

    for iter in 0..opts.max_iters {
        let gnorm = norm(&g);
        if gnorm <= opts.grad_tol || !fx.is_finite() {
            return Minimum {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations: iter,
                converged: gnorm <= opts.grad_tol,
            };
        }
        for i in 0..d {
            p[i] = -dot(&h[i * d..(i + 1) * d], &g);
        }
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            h = identity(d);
            fresh = true;
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..d {
                xn[i] = x[i] + step * p[i];
            }
            let fnew = f(&xn, &mut gn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope && fnew < fx {
                accepted = true;
                fx = fnew;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if fresh {
                let gnorm = norm(&g);
                return Minimum {
                    x,
                    value: fx,
                    grad_norm: gnorm,
                    iterations: iter,
                    converged: gnorm <= opts.grad_tol,
                };
            }
            h = identity(d);
            fresh = true;
            continue;
        }
        let s: Vec<f64> = (0..d).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..d).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
    }
    let gnorm = norm(&g);
    Minimum {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations: opts.max_iters,
        converged: gnorm <= opts.grad_tol,
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..d).map(|i| dot(&h[i * d..(i + 1) * d], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = bfgs(rosen, &[-1.2, 1.0], MinimizeOptions { max_iters: 1000, grad_tol: 1e-10 });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn converges_on_scaled_quadratic() {
        let quad = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let c = (i + 1) as f64;
                g[i] = 2.0 * c * (xi - 1.0);
                v += c * (xi - 1.0).powi(2);
            }
            v
        };
        let m = bfgs(quad, &[0.0; 6], MinimizeOptions::default());
        assert!(m.converged);
        assert!(m.value < 1e-12);
    }
}
