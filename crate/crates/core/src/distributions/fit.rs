//! Nonlinear least-squares fitting of densities to histograms.
//!
//! The objective is `Σ (pdf(center_i) − density_i)²` over the bins. Each
//! start runs damped Gauss–Newton (Levenberg–Marquardt damping on the
//! diagonal) in an unconstrained parameterization: logarithms of the
//! positive parameters, location parameters as-is.

use super::{Density, Family, FittedModel, Histogram};
use crate::error::{Error, Result};

const GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Starting degrees of freedom for the Chi family (descriptor length).
    pub chi_dof_init: f64,
    pub max_iterations: usize,
    /// Converged when an accepted step improves SSE by less than this
    /// fraction.
    pub rel_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            chi_dof_init: 128.0,
            max_iterations: 200,
            rel_tolerance: 1e-10,
        }
    }
}

fn is_location(family: Family, i: usize) -> bool {
    i == 0 && matches!(family, Family::Normal | Family::LogNormal)
}

fn to_internal(family: Family, p: [f64; 2]) -> [f64; 2] {
    [
        if is_location(family, 0) {
            p[0]
        } else {
            p[0].ln()
        },
        p[1].ln(),
    ]
}

fn to_natural(family: Family, t: [f64; 2]) -> [f64; 2] {
    [
        if is_location(family, 0) {
            t[0]
        } else {
            t[0].exp()
        },
        t[1].exp(),
    ]
}

struct Problem<'a> {
    family: Family,
    centers: Vec<f64>,
    target: &'a [f64],
}

impl Problem<'_> {
    fn residuals(&self, t: [f64; 2], out: &mut [f64]) -> f64 {
        let [a, b] = to_natural(self.family, t);
        if !(a.is_finite() && b.is_finite() && b > 0.0) {
            return f64::NAN;
        }
        let d = Density::new(self.family, a, b);
        let mut sse = 0.0;
        for ((r, &x), &y) in out.iter_mut().zip(&self.centers).zip(self.target) {
            *r = d.eval(x) - y;
            sse += *r * *r;
        }
        sse
    }

    fn sse(&self, t: [f64; 2]) -> f64 {
        let mut buf = vec![0.0; self.centers.len()];
        self.residuals(t, &mut buf)
    }

    /// Central-difference Jacobian, column-major.
    fn jacobian(&self, t: [f64; 2]) -> Option<[Vec<f64>; 2]> {
        let n = self.centers.len();
        let mut cols = [vec![0.0; n], vec![0.0; n]];
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for (j, col) in cols.iter_mut().enumerate() {
            let h = 1e-6 * t[j].abs().max(1.0);
            let mut tp = t;
            let mut tm = t;
            tp[j] += h;
            tm[j] -= h;
            let sp = self.residuals(tp, &mut plus);
            let sm = self.residuals(tm, &mut minus);
            if !(sp.is_finite() && sm.is_finite()) {
                return None;
            }
            for i in 0..n {
                col[i] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Some(cols)
    }

    /// Runs damped Gauss–Newton from `start`. Returns the final point and
    /// its SSE, or `None` if the start itself is not finite.
    fn descend(&self, start: [f64; 2], opts: &FitOptions) -> Option<([f64; 2], f64)> {
        let n = self.centers.len();
        let mut r = vec![0.0; n];
        let mut t = start;
        let mut sse = self.residuals(t, &mut r);
        if !sse.is_finite() {
            return None;
        }
        let mut lambda = 1e-3;
        for _ in 0..opts.max_iterations {
            if sse == 0.0 {
                break;
            }
            let Some(j) = self.jacobian(t) else { break };
            let a00: f64 = j[0].iter().map(|v| v * v).sum();
            let a11: f64 = j[1].iter().map(|v| v * v).sum();
            let a01: f64 = j[0].iter().zip(&j[1]).map(|(x, y)| x * y).sum();
            let g0: f64 = j[0].iter().zip(&r).map(|(x, y)| x * y).sum();
            let g1: f64 = j[1].iter().zip(&r).map(|(x, y)| x * y).sum();

            let mut accepted = false;
            while lambda <= 1e16 {
                let d00 = a00 + lambda * a00.max(1e-300);
                let d11 = a11 + lambda * a11.max(1e-300);
                let det = d00 * d11 - a01 * a01;
                if det > 0.0 && det.is_finite() {
                    let step = [(-g0 * d11 + g1 * a01) / det, (-g1 * d00 + g0 * a01) / det];
                    let trial = [t[0] + step[0], t[1] + step[1]];
                    let trial_sse = self.sse(trial);
                    if trial_sse.is_finite() && trial_sse < sse {
                        let improvement = (sse - trial_sse) / sse;
                        t = trial;
                        sse = self.residuals(t, &mut r);
                        lambda = (lambda * 0.1).max(1e-12);
                        accepted = true;
                        if improvement < opts.rel_tolerance {
                            return Some((t, sse));
                        }
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        Some((t, sse))
    }
}

/// Moment-based starting point in natural parameters.
fn initial_guess(hist: &Histogram, family: Family, opts: &FitOptions) -> [f64; 2] {
    let (mean, var) = hist.moments();
    let floor = hist.bin_width() / 12f64.sqrt();
    let sd = var.sqrt().max(floor);
    let mean = mean.max(floor);
    match family {
        Family::Normal => [mean, sd],
        Family::Chi => [opts.chi_dof_init, mean / opts.chi_dof_init.sqrt()],
        Family::ChiSquare => {
            let scale = (sd * sd / (2.0 * mean)).max(1e-12);
            [(mean / scale).max(1e-3), scale]
        }
        Family::Weibull | Family::LogNormal => {
            let (lmean, lvar) = hist.log_moments().unwrap_or((mean.ln(), 1.0));
            let lsd = lvar.sqrt().max(1e-6);
            if family == Family::LogNormal {
                [lmean, lsd]
            } else {
                let shape = std::f64::consts::PI / (6f64.sqrt() * lsd);
                [shape, (lmean + EULER_GAMMA / shape).exp()]
            }
        }
    }
}

/// The 5×5 multi-start grid around `init`. Positive parameters are scaled by
/// the grid factors; location parameters are shifted by `log2(factor)` times
/// the spread parameter.
fn starts(family: Family, init: [f64; 2]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(GRID.len() * GRID.len());
    for &f0 in &GRID {
        for &f1 in &GRID {
            let p0 = if is_location(family, 0) {
                init[0] + f0.log2() * init[1]
            } else {
                init[0] * f0
            };
            out.push([p0, init[1] * f1]);
        }
    }
    out
}

pub fn fit(hist: &Histogram, family: Family) -> Result<FittedModel> {
    fit_with(hist, family, &FitOptions::default())
}

/// Least-squares fit of `family` to the density of `hist`.
///
/// Deterministic: the same histogram always yields the same model.
pub fn fit_with(hist: &Histogram, family: Family, opts: &FitOptions) -> Result<FittedModel> {
    let needed = family.param_count() + 2;
    let nonempty = hist.nonempty_bins();
    if nonempty < needed {
        return Err(Error::Fit(format!(
            "{family} needs at least {needed} nonempty bins, histogram has {nonempty}"
        )));
    }
    let problem = Problem {
        family,
        centers: hist.bin_centers(),
        target: &hist.density,
    };
    let init = initial_guess(hist, family, opts);

    let mut best: Option<([f64; 2], f64)> = None;
    for start in starts(family, init) {
        let Some((t, sse)) = problem.descend(to_internal(family, start), opts) else {
            continue;
        };
        let params = to_natural(family, t);
        if family.validate(&params).is_err() || !sse.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| sse < b) {
            best = Some((params, sse));
        }
    }

    let (params, sse) =
        best.ok_or_else(|| Error::Fit(format!("every start diverged while fitting {family}")))?;
    Ok(FittedModel {
        family,
        params: params.to_vec(),
        sse,
    })
}

/// Fits every family and ranks the fits by ascending SSE (ties by name).
///
/// Families that fail to fit are left out; an error is returned only when
/// none succeeds.
pub fn compare_fits(hist: &Histogram, families: &[Family]) -> Result<Vec<FittedModel>> {
    if families.is_empty() {
        return Err(Error::argument("no families to compare"));
    }
    let mut fams = families.to_vec();
    fams.sort_by_key(|f| f.name());
    fams.dedup();
    let mut errors = Vec::new();
    let mut fits = Vec::new();
    for family in fams {
        match fit(hist, family) {
            Ok(m) => fits.push(m),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if fits.is_empty() {
        return Err(Error::Fit(errors.join("; ")));
    }
    fits.sort_by(|a, b| {
        a.sse
            .total_cmp(&b.sse)
            .then_with(|| a.family.name().cmp(b.family.name()))
    });
    Ok(fits)
}
