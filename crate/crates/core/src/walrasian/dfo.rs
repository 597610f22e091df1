//! Derivative-free trust-region maximization over a box.
//!
//! Local quadratic models are fitted by least squares to evaluated points
//! near the incumbent; steps come from maximizing the model inside an
//! infinity-norm trust region intersected with the box.

use log::trace;
use nalgebra::{DMatrix, DVector};

use crate::error::{config, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxMaximum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Trust-region radius at termination.
    pub radius: f64,
}

struct Sample {
    x: Vec<f64>,
    f: f64,
}

/// Maximizes `objective` over `[center - half_width, center + half_width]`.
///
/// The trust region starts at `center` and moves only when a step from the
/// incumbent improves on it. Stops when the incumbent value reaches `-eps`
/// (an upper bound of zero is assumed), when the radius falls below
/// `1e-6 * max(half_width, 1)`, or after `budget` evaluations. Returns the
/// incumbent if it is within `eps` of the best value seen, else the best
/// point; among equal values the earliest evaluated point wins.
pub fn maximize_over_box<F>(
    mut objective: F,
    center: &[f64],
    half_width: f64,
    eps: f64,
    budget: usize,
) -> Result<BoxMaximum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = center.len();
    if n == 0 || !(half_width > 0.0) {
        return Err(config(
            "box maximization needs a dimension and a positive half width",
        ));
    }
    if budget < n + 2 {
        return Err(config(format!("budget {budget} is below dimension + 2")));
    }
    let lower: Vec<f64> = center.iter().map(|c| c - half_width).collect();
    let upper: Vec<f64> = center.iter().map(|c| c + half_width).collect();
    let clamp = |x: &mut Vec<f64>| {
        for ((v, lo), hi) in x.iter_mut().zip(&lower).zip(&upper) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let min_radius = 1e-6 * half_width.max(1.0);
    let full = n <= 4;
    let set_size = if full {
        (n + 1) * (n + 2) / 2
    } else {
        2 * n + 1
    };
    let mut samples: Vec<Sample> = Vec::new();
    let mut best = 0usize;
    // Interpolation set: indices into `samples` with finite values.
    let mut set: Vec<usize> = Vec::new();
    let mut eval = |x: Vec<f64>, samples: &mut Vec<Sample>, best: &mut usize| -> Result<usize> {
        let f = objective(&x)?;
        let f = if f.is_nan() { f64::NEG_INFINITY } else { f };
        trace!("dfo eval x={x:?} f={f}");
        samples.push(Sample { x, f });
        let j = samples.len() - 1;
        if j > 0 && f > samples[*best].f {
            *best = j;
        }
        Ok(j)
    };

    // Initial stencil: center, center +/- M/2 per axis, then diagonal
    // points when a full quadratic is fitted.
    let mut stencil = vec![center.to_vec()];
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut x = center.to_vec();
            x[i] += sign * 0.5 * half_width;
            stencil.push(x);
        }
    }
    if full {
        for i in 0..n {
            for k in i + 1..n {
                let mut x = center.to_vec();
                x[i] += 0.5 * half_width;
                x[k] += 0.5 * half_width;
                stencil.push(x);
            }
        }
    }
    for x in stencil {
        if samples.len() >= budget {
            break;
        }
        let j = eval(x, &mut samples, &mut best)?;
        if samples[j].f.is_finite() {
            set.push(j);
        }
    }
    let mut radius = 0.5 * half_width;
    let mut axis = 0usize;
    // The trust region moves only on improving model or poll steps; stencil
    // and geometry points only shape the model.
    let mut inc = if samples[0].f.is_finite() { 0 } else { best };
    while samples.len() < budget && radius > min_radius && samples[inc].f < -eps {
        let first_new = samples.len();
        let xk = samples[inc].x.clone();
        let fk = samples[inc].f;
        let far =
            set.iter().copied().filter(|&j| j != inc).max_by(|&a, &b| {
                inf_dist(&samples[a].x, &xk).total_cmp(&inf_dist(&samples[b].x, &xk))
            });
        let far_dist = far.map_or(0.0, |j| inf_dist(&samples[j].x, &xk));
        let model = if set.len() >= set_size.min(2 * n + 1) {
            fit_model(
                &samples,
                &set,
                &xk,
                radius,
                n,
                full && set.len() >= set_size,
            )
        } else {
            None
        };
        let step = model
            .as_ref()
            .map(|m| (trust_region_step(m, &xk, radius, &lower, &upper), m));
        let predicted = step.as_ref().map_or(0.0, |(s, m)| m.eval(s));
        let geometry_needed = far_dist > 2.5 * radius || set.len() < set_size;
        if !(predicted > 1e-14 * (1.0 + fk.abs())) {
            trace!(
                "dfo no model step radius={radius:e} model={} set={} far={far_dist:e}",
                model.is_some(),
                set.len()
            );
            if geometry_needed {
                let added = geometry_step(
                    &mut eval,
                    &mut samples,
                    &mut best,
                    &mut set,
                    (set_size, inc),
                    &xk,
                    radius,
                    &mut axis,
                    &clamp,
                )?;
                if !added.is_some_and(f64::is_finite) {
                    radius *= 0.5;
                }
            } else {
                radius *= 0.5;
            }
            continue;
        }
        let (step, _) = step.expect("a positive prediction needs a model");
        let x: Vec<f64> = xk.iter().zip(&step).map(|(a, s)| a + s).collect();
        let j = eval(x, &mut samples, &mut best)?;
        let f = samples[j].f;
        let ratio = if f.is_finite() {
            (f - fk) / predicted
        } else {
            f64::NEG_INFINITY
        };
        if f.is_finite() {
            insert_point(&samples, &mut set, set_size, inc, j);
        }
        let long = step.iter().any(|s| s.abs() >= 0.5 * radius);
        trace!("dfo radius={radius:e} f={f} ratio={ratio}");
        if ratio < 0.1 {
            if poll_shift(
                &mut eval,
                &mut samples,
                &mut best,
                &mut set,
                (set_size, inc),
                &xk,
                radius,
                &clamp,
            )? {
                radius = (2.0 * radius).min(half_width);
            } else if !geometry_needed || !f.is_finite() {
                radius *= 0.5;
            }
        } else if ratio >= 0.7 && long {
            radius = (2.0 * radius).min(half_width);
        }
        inc = advance(&samples, inc, first_new);
    }
    let pick = if samples[inc].f >= samples[best].f - eps {
        inc
    } else {
        best
    };
    Ok(BoxMaximum {
        x: samples[pick].x.clone(),
        value: samples[pick].f,
        evaluations: samples.len(),
        radius,
    })
}

/// Best of the incumbent and the samples from `first_new` on.
fn advance(samples: &[Sample], inc: usize, first_new: usize) -> usize {
    (first_new..samples.len()).fold(inc, |k, j| if samples[j].f > samples[k].f { j } else { k })
}

/// Adds sample `j` to the interpolation set. It replaces a member it nearly
/// coincides with, else the point farthest from the incumbent once the set
/// is full.
fn insert_point(samples: &[Sample], set: &mut Vec<usize>, size: usize, best: usize, j: usize) {
    let x = &samples[j].x;
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(pos) = set
        .iter()
        .position(|&i| i != best && inf_dist(&samples[i].x, x) < 1e-9 * scale)
    {
        set[pos] = j;
        return;
    }
    if set.len() < size {
        set.push(j);
        return;
    }
    let xk = &samples[best].x;
    let victim = set
        .iter()
        .enumerate()
        .filter(|(_, &i)| i != best)
        .max_by(|(_, &a), (_, &b)| {
            inf_dist(&samples[a].x, xk).total_cmp(&inf_dist(&samples[b].x, xk))
        })
        .map(|(pos, _)| pos);
    if let Some(pos) = victim {
        set[pos] = j;
    }
}

/// Evaluates a point at distance `radius` from the incumbent along the next
/// geometry direction that is not already in the set. Returns its value, or None when every candidate
/// is taken.
#[allow(clippy::too_many_arguments)]
fn geometry_step<E, C>(
    eval: &mut E,
    samples: &mut Vec<Sample>,
    best: &mut usize,
    set: &mut Vec<usize>,
    (size, inc): (usize, usize),
    xk: &[f64],
    radius: f64,
    axis: &mut usize,
    clamp: &C,
) -> Result<Option<f64>>
where
    E: FnMut(Vec<f64>, &mut Vec<Sample>, &mut usize) -> Result<usize>,
    C: Fn(&mut Vec<f64>),
{
    let dirs = geometry_directions(xk.len());
    for _ in 0..dirs.len() {
        let d = &dirs[*axis % dirs.len()];
        *axis += 1;
        let mut x: Vec<f64> = xk.iter().zip(d).map(|(v, e)| v + radius * e).collect();
        clamp(&mut x);
        let taken = inf_dist(&x, xk) < 1e-3 * radius
            || set
                .iter()
                .any(|&j| inf_dist(&samples[j].x, &x) < 1e-3 * radius);
        if taken {
            continue;
        }
        let j = eval(x, samples, best)?;
        let f = samples[j].f;
        if f.is_finite() {
            insert_point(samples, set, size, inc, j);
        }
        return Ok(Some(f));
    }
    Ok(None)
}

/// Axis directions `+/- e_i`, then the pair diagonals `+/- e_i +/- e_k`.
fn geometry_directions(n: usize) -> Vec<Vec<f64>> {
    let unit = |i: usize, v: f64| {
        let mut d = vec![0.0; n];
        d[i] = v;
        d
    };
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| unit(i, 1.0))
        .chain((0..n).map(|i| unit(i, -1.0)))
        .collect();
    for i in 0..n {
        for k in i + 1..n {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut d = unit(i, a);
                d[k] = b;
                dirs.push(d);
            }
        }
    }
    dirs
}

/// Tries `xk +/- radius * (1, ..., 1)`; true when either improves on the
/// incumbent.
#[allow(clippy::too_many_arguments)]
fn poll_shift<E, C>(
    eval: &mut E,
    samples: &mut Vec<Sample>,
    best: &mut usize,
    set: &mut Vec<usize>,
    (size, inc): (usize, usize),
    xk: &[f64],
    radius: f64,
    clamp: &C,
) -> Result<bool>
where
    E: FnMut(Vec<f64>, &mut Vec<Sample>, &mut usize) -> Result<usize>,
    C: Fn(&mut Vec<f64>),
{
    if xk.len() < 2 {
        return Ok(false);
    }
    let fk = samples[inc].f;
    for sign in [-1.0, 1.0] {
        let mut x: Vec<f64> = xk.iter().map(|v| v + sign * radius).collect();
        clamp(&mut x);
        if inf_dist(&x, xk) < 1e-3 * radius {
            continue;
        }
        let j = eval(x, samples, best)?;
        let f = samples[j].f;
        if f.is_finite() {
            insert_point(samples, set, size, inc, j);
        }
        if f > fk {
            return Ok(true);
        }
    }
    Ok(false)
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `m(s) = g.s + s.H.s / 2`, relative to the incumbent value.
struct Model {
    g: DVector<f64>,
    h: DMatrix<f64>,
}

impl Model {
    fn eval(&self, s: &[f64]) -> f64 {
        let s = DVector::from_column_slice(s);
        self.g.dot(&s) + 0.5 * s.dot(&(&self.h * &s))
    }

    fn grad(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.g + &self.h * s
    }
}

/// Least-squares quadratic through the incumbent; a full Hessian when enough
/// points are available, a diagonal one otherwise.
fn fit_model(
    samples: &[Sample],
    near: &[usize],
    xk: &[f64],
    radius: f64,
    n: usize,
    full: bool,
) -> Option<Model> {
    let cols = if full {
        1 + n + n * (n + 1) / 2
    } else {
        1 + 2 * n
    };
    let rows = near.len();
    let mut a = DMatrix::zeros(rows, cols);
    let mut y = DVector::zeros(rows);
    for (row, &j) in near.iter().enumerate() {
        let s: Vec<f64> = samples[j]
            .x
            .iter()
            .zip(xk)
            .map(|(x, c)| (x - c) / radius)
            .collect();
        a[(row, 0)] = 1.0;
        for i in 0..n {
            a[(row, 1 + i)] = s[i];
        }
        let mut c = 1 + n;
        if full {
            for i in 0..n {
                for k in i..n {
                    a[(row, c)] = if i == k {
                        0.5 * s[i] * s[i]
                    } else {
                        s[i] * s[k]
                    };
                    c += 1;
                }
            }
        } else {
            for i in 0..n {
                a[(row, c + i)] = 0.5 * s[i] * s[i];
            }
        }
        y[row] = samples[j].f;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if rows < cols || svd.singular_values.min() < 1e-8 * smax {
        return None;
    }
    let coef = svd.solve(&y, 1e-12 * smax).ok()?;
    if coef.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        g[i] = coef[1 + i] / radius;
    }
    let r2 = radius * radius;
    let mut c = 1 + n;
    if full {
        for i in 0..n {
            for k in i..n {
                h[(i, k)] = coef[c] / r2;
                h[(k, i)] = coef[c] / r2;
                c += 1;
            }
        }
    } else {
        for i in 0..n {
            h[(i, i)] = coef[c + i] / r2;
        }
    }
    Some(Model { g, h })
}

/// Approximate maximizer of the model over the trust region and the box.
fn trust_region_step(
    model: &Model,
    xk: &[f64],
    radius: f64,
    lower: &[f64],
    upper: &[f64],
) -> Vec<f64> {
    let n = xk.len();
    let lo: Vec<f64> = (0..n).map(|i| (lower[i] - xk[i]).max(-radius)).collect();
    let hi: Vec<f64> = (0..n).map(|i| (upper[i] - xk[i]).min(radius)).collect();
    let project = |s: &mut DVector<f64>| {
        for i in 0..n {
            s[i] = s[i].clamp(lo[i], hi[i]);
        }
    };
    // Newton point when the model is concave.
    if let Some(chol) = (-&model.h).cholesky() {
        let s = chol.solve(&model.g);
        if (0..n).all(|i| s[i] >= lo[i] && s[i] <= hi[i]) {
            return s.iter().copied().collect();
        }
    }
    let lipschitz = model
        .h
        .norm()
        .max(1e-12 * model.g.norm() / radius)
        .max(f64::MIN_POSITIVE);
    let mut s = DVector::zeros(n);
    // Projected gradient ascent from the best of the origin and the Cauchy
    // point along the gradient.
    let mut cauchy = model.g.clone() * (radius / model.g.amax().max(f64::MIN_POSITIVE));
    project(&mut cauchy);
    let cauchy_v: Vec<f64> = cauchy.iter().copied().collect();
    if model.eval(&cauchy_v) > 0.0 {
        s = cauchy;
    }
    let step = 1.0 / lipschitz;
    for _ in 0..500 {
        let mut next = &s + model.grad(&s) * step;
        project(&mut next);
        if (&next - &s).amax() <= 1e-12 * radius {
            s = next;
            break;
        }
        s = next;
    }
    s.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_peak_found() {
        let f = |x: &[f64]| {
            Ok(-(x[0] - 1.3).powi(2)
                - 2.0 * (x[1] + 0.7).powi(2)
                - 0.5 * (x[0] - 1.3) * (x[1] + 0.7))
        };
        let r = maximize_over_box(f, &[0.0, 0.0], 5.0, 0.0, 200).unwrap();
        assert!(
            (r.x[0] - 1.3).abs() < 1e-6 && (r.x[1] + 0.7).abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn peak_outside_box_hits_face() {
        let f = |x: &[f64]| Ok(-(x[0] - 10.0).powi(2) - x[1].powi(2));
        let r = maximize_over_box(f, &[0.0, 0.0], 2.0, 0.0, 200).unwrap();
        assert!(
            (r.x[0] - 2.0).abs() < 1e-9 && r.x[1].abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn constant_objective_keeps_center() {
        let r = maximize_over_box(|_: &[f64]| Ok(-3.0), &[4.0, -1.0, 2.0], 1.0, 0.0, 60).unwrap();
        assert_eq!(r.x, vec![4.0, -1.0, 2.0]);
    }

    #[test]
    fn small_budget_rejected() {
        assert!(maximize_over_box(|_: &[f64]| Ok(0.0), &[0.0, 0.0], 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn stops_at_eps() {
        let f = |x: &[f64]| Ok(-(x[0] * x[0]));
        let r = maximize_over_box(f, &[3.0], 5.0, 1.0, 100).unwrap();
        assert!(r.value >= -1.0);
    }
}
