//! Limited-memory BFGS with a strong Wolfe line search.

use crate::stats::dot;

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_SEARCH: usize = 40;

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after each accepted step.
    pub history: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Vec<f64>,
}

/// Minimizes `f` from `x0`. Stops when `max |∇f| <= gtol` or after
/// `max_iter` accepted steps.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, memory: usize, max_iter: usize, gtol: f64) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    let mut history = vec![value];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;

    loop {
        if max_abs(&grad) <= gtol {
            return LbfgsOutcome { x, value, iterations, converged: true, history };
        }
        if iterations >= max_iter || !value.is_finite() {
            return LbfgsOutcome { x, value, iterations, converged: false, history };
        }

        let mut dir = two_loop(&grad, &s_hist, &y_hist, &rho_hist);
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&dir, &grad);
        }
        let alpha0 = if s_hist.is_empty() { (1.0 / max_abs(&grad)).min(1.0) } else { 1.0 };

        let step = line_search(&mut f, &x, &dir, value, slope, alpha0);
        let Some(p) = step else {
            if s_hist.is_empty() {
                return LbfgsOutcome { x, value, iterations, converged: false, history };
            }
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        };

        let s: Vec<f64> = dir.iter().map(|d| p.alpha * d).collect();
        let y: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if s_hist.len() == memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        value = p.value;
        grad = p.grad;
        history.push(value);
        iterations += 1;
    }
}

fn two_loop(grad: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>], rho: &[f64]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; s_hist.len()];
    for i in (0..s_hist.len()).rev() {
        alphas[i] = rho[i] * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
        let gamma = dot(s, y) / dot(y, y);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
    }
    for i in 0..s_hist.len() {
        let beta = rho[i] * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn line_search<F>(f: &mut F, x: &[f64], dir: &[f64], f0: f64, slope0: f64, alpha1: f64) -> Option<Point>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut trial = vec![0.0; x.len()];
    let mut eval = |alpha: f64| {
        for ((t, xi), d) in trial.iter_mut().zip(x).zip(dir) {
            *t = xi + alpha * d;
        }
        let (value, grad) = f(&trial);
        let slope = dot(&grad, dir);
        Point { alpha, value, slope, grad }
    };
    let armijo = |p: &Point| p.value <= f0 + C1 * p.alpha * slope0 && p.value.is_finite();
    let curvature = |p: &Point| p.slope.abs() <= -C2 * slope0;

    let mut prev = Point { alpha: 0.0, value: f0, slope: slope0, grad: Vec::new() };
    let mut alpha = alpha1;
    for i in 0..MAX_LINE_SEARCH {
        let p = eval(alpha);
        if !armijo(&p) || (i > 0 && p.value >= prev.value) {
            return zoom(&mut eval, prev, p, f0, slope0);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.slope >= 0.0 {
            return zoom(&mut eval, p, prev, f0, slope0);
        }
        alpha = (2.0 * p.alpha).min(1e10);
        prev = p;
    }
    (prev.alpha > 0.0).then_some(prev)
}

/// `lo` always satisfies the sufficient-decrease condition (or is the start).
fn zoom<E>(eval: &mut E, mut lo: Point, mut hi: Point, f0: f64, slope0: f64) -> Option<Point>
where
    E: FnMut(f64) -> Point,
{
    for _ in 0..MAX_LINE_SEARCH {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            break;
        }
        let mut alpha = cubic_min(&lo, &hi);
        if !(alpha.is_finite() && alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
            alpha = 0.5 * (a + b);
        }
        let p = eval(alpha);
        if !(p.value <= f0 + C1 * p.alpha * slope0 && p.value.is_finite()) || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -C2 * slope0 {
                return Some(p);
            }
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, p);
            } else {
                lo = p;
            }
        }
    }
    (lo.alpha > 0.0 && lo.value < f0).then_some(lo)
}

fn cubic_min(p: &Point, q: &Point) -> f64 {
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2)
}
