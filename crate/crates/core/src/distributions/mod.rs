//! Densities for match distances and their least-squares fits to histograms.
//!
//! Every family has two parameters:
//!
//! | family      | params        | density                                   |
//! |-------------|---------------|-------------------------------------------|
//! | `Normal`    | (μ, σ)        | N(μ, σ²)                                  |
//! | `Chi`       | (k, s)        | (1/s)·χ_k(x/s), k real > 0                |
//! | `ChiSquare` | (k, s)        | (1/s)·χ²_k(x/s)                           |
//! | `Weibull`   | (κ, λ)        | (κ/λ)(x/λ)^(κ−1) exp(−(x/λ)^κ)            |
//! | `LogNormal` | (μ, σ)        | exp(−(ln x − μ)²/2σ²) / (xσ√(2π))          |
//!
//! Where a density diverges at the origin (shape below the boundary case) it
//! is defined as 0 there.

mod fit;
mod histogram;
pub mod quadrature;
pub mod special;

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use fit::{compare_fits, fit, fit_with, FitOptions};
pub use histogram::{make_histogram, Histogram, DEFAULT_BINS, MIN_BINS};
use special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Chi,
    ChiSquare,
    Weibull,
    LogNormal,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Chi,
        Family::ChiSquare,
        Family::LogNormal,
        Family::Normal,
        Family::Weibull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Chi => "chi",
            Family::ChiSquare => "chi_square",
            Family::Weibull => "weibull",
            Family::LogNormal => "log_normal",
        }
    }

    pub fn param_names(self) -> [&'static str; 2] {
        match self {
            Family::Normal | Family::LogNormal => ["mu", "sigma"],
            Family::Chi | Family::ChiSquare => ["k", "scale"],
            Family::Weibull => ["shape", "scale"],
        }
    }

    pub fn param_count(self) -> usize {
        2
    }

    pub fn support_lo(self) -> f64 {
        match self {
            Family::Normal => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    /// Checks that `params` is a valid parameter vector for this family.
    pub fn validate(self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::validation(format!(
                "{self} takes {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation(format!(
                "{self} parameters must be finite"
            )));
        }
        let positive: &[usize] = match self {
            Family::Normal | Family::LogNormal => &[1],
            _ => &[0, 1],
        };
        for &i in positive {
            if params[i] <= 0.0 {
                return Err(Error::validation(format!(
                    "{self} parameter {} must be > 0, got {}",
                    self.param_names()[i],
                    params[i]
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "normal" | "gaussian" => Ok(Family::Normal),
            "chi" => Ok(Family::Chi),
            "chisquare" | "chisquared" | "chi2" => Ok(Family::ChiSquare),
            "weibull" => Ok(Family::Weibull),
            "lognormal" => Ok(Family::LogNormal),
            _ => Err(Error::argument(format!(
                "unknown distribution family '{s}'"
            ))),
        }
    }
}

/// A density with its constants evaluated once.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Density {
    family: Family,
    a: f64,
    b: f64,
    log_norm: f64,
}

impl Density {
    /// Caller guarantees `params` passed [`Family::validate`] or is a trial
    /// point where non-finite output is acceptable.
    pub(crate) fn new(family: Family, a: f64, b: f64) -> Self {
        let log_norm = match family {
            Family::Normal | Family::LogNormal => -(b.ln() + 0.5 * (2.0 * PI).ln()),
            Family::Chi => -((a / 2.0 - 1.0) * LN_2 + ln_gamma(a / 2.0) + b.ln()),
            Family::ChiSquare => -((a / 2.0) * LN_2 + ln_gamma(a / 2.0) + b.ln()),
            Family::Weibull => a.ln() - b.ln(),
        };
        Density {
            family,
            a,
            b,
            log_norm,
        }
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        match self.family {
            Family::Normal => {
                let z = (x - a) / b;
                (self.log_norm - 0.5 * z * z).exp()
            }
            Family::LogNormal => {
                if x <= 0.0 {
                    return 0.0;
                }
                let z = (x.ln() - a) / b;
                (self.log_norm - 0.5 * z * z - x.ln()).exp()
            }
            Family::Chi => {
                if x < 0.0 {
                    return 0.0;
                }
                let z = x / b;
                if z == 0.0 {
                    return if a == 1.0 { self.log_norm.exp() } else { 0.0 };
                }
                (self.log_norm + (a - 1.0) * z.ln() - 0.5 * z * z).exp()
            }
            Family::ChiSquare => {
                if x < 0.0 {
                    return 0.0;
                }
                let z = x / b;
                if z == 0.0 {
                    return if a == 2.0 { self.log_norm.exp() } else { 0.0 };
                }
                (self.log_norm + (a / 2.0 - 1.0) * z.ln() - 0.5 * z).exp()
            }
            Family::Weibull => {
                if x < 0.0 {
                    return 0.0;
                }
                let z = x / b;
                if z == 0.0 {
                    return if a == 1.0 { self.log_norm.exp() } else { 0.0 };
                }
                let lz = z.ln();
                (self.log_norm + (a - 1.0) * lz - (a * lz).exp()).exp()
            }
        }
    }

    /// Mean and standard deviation.
    pub(crate) fn mean_sd(&self) -> (f64, f64) {
        let (a, b) = (self.a, self.b);
        match self.family {
            Family::Normal => (a, b),
            Family::LogNormal => {
                let mean = (a + 0.5 * b * b).exp();
                (mean, mean * (b * b).exp_m1().sqrt())
            }
            Family::Chi => {
                let ratio = (ln_gamma((a + 1.0) / 2.0) - ln_gamma(a / 2.0)).exp();
                let m = 2f64.sqrt() * ratio;
                let var = (a - m * m).max(1e-300);
                (b * m, b * var.sqrt())
            }
            Family::ChiSquare => (a * b, b * (2.0 * a).sqrt()),
            Family::Weibull => {
                let g1 = ln_gamma(1.0 + 1.0 / a).exp();
                let g2 = ln_gamma(1.0 + 2.0 / a).exp();
                (b * g1, b * (g2 - g1 * g1).max(1e-300).sqrt())
            }
        }
    }

    pub(crate) fn mode(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        match self.family {
            Family::Normal => a,
            Family::LogNormal => (a - b * b).exp(),
            Family::Chi => b * (a - 1.0).max(0.0).sqrt(),
            Family::ChiSquare => b * (a - 2.0).max(0.0),
            Family::Weibull => {
                if a > 1.0 {
                    b * ((a - 1.0) / a).powf(1.0 / a)
                } else {
                    0.0
                }
            }
        }
    }

    /// Points where the density changes character; quadrature splits there.
    fn breakpoints(&self) -> Vec<f64> {
        let (mean, sd) = self.mean_sd();
        let mode = self.mode();
        let mut pts = Vec::with_capacity(80);
        for &c in &[mode, mean] {
            for j in -12..=12 {
                pts.push(c + j as f64 * sd);
            }
        }
        if self.family != Family::Normal {
            let anchor = if mode > 0.0 { mode } else { mean };
            for j in -40..=12 {
                pts.push(anchor * 2f64.powi(j));
            }
        }
        pts
    }

    /// Lower and upper limits beyond which the mass is negligible.
    fn effective_range(&self) -> (f64, f64) {
        let (mean, sd) = self.mean_sd();
        let hi = (mean + 200.0 * sd).max(self.mode() * 8.0);
        match self.family {
            Family::Normal => (self.a - 40.0 * self.b, self.a + 40.0 * self.b),
            _ => (0.0, hi),
        }
    }

    pub(crate) fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.effective_range();
        if x <= lo {
            return 0.0;
        }
        let upper = x.min(hi);
        let v =
            quadrature::integrate_pieces(|t| self.eval(t), lo, upper, &self.breakpoints(), 1e-12);
        v.clamp(0.0, 1.0)
    }
}

/// A fitted (or hand-specified) distance density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: Family,
    pub params: Vec<f64>,
    /// Sum of squared density residuals at the bin centers of the fitted
    /// histogram. Zero for models that were not fitted.
    pub sse: f64,
}

impl FittedModel {
    /// A model with explicit parameters and no fit.
    pub fn new(family: Family, params: &[f64]) -> Result<Self> {
        family.validate(params)?;
        Ok(FittedModel {
            family,
            params: params.to_vec(),
            sse: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate(&self.params)?;
        if !(self.sse.is_finite() && self.sse >= 0.0) {
            return Err(Error::validation(format!(
                "sse must be finite and >= 0, got {}",
                self.sse
            )));
        }
        Ok(())
    }

    pub fn support_lo(&self) -> f64 {
        self.family.support_lo()
    }

    pub(crate) fn density(&self) -> Density {
        Density::new(self.family, self.params[0], self.params[1])
    }

    pub fn pdf(&self, x: f64) -> f64 {
        pdf(self, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        cdf(self, x)
    }

    pub fn mean(&self) -> f64 {
        self.density().mean_sd().0
    }

    pub fn std_dev(&self) -> f64 {
        self.density().mean_sd().1
    }

    /// Location of the density maximum (0 when the density peaks at the
    /// origin).
    pub fn mode(&self) -> f64 {
        self.density().mode()
    }

    /// Largest density value over the support.
    ///
    /// Densities that diverge at the origin are scanned on a grid instead,
    /// since the origin itself is defined as zero.
    pub fn max_density(&self) -> f64 {
        let d = self.density();
        let at_mode = d.eval(d.mode());
        let (mean, sd) = d.mean_sd();
        let start = match self.family {
            Family::Normal => mean - 10.0 * sd,
            _ => 0.0,
        };
        let end = mean + 10.0 * sd;
        let grid = (1..=4096)
            .map(|i| d.eval(start + (end - start) * i as f64 / 4096.0))
            .fold(0.0, f64::max);
        at_mode.max(grid)
    }
}

/// Density of `model` at `x`; zero outside the support.
pub fn pdf(model: &FittedModel, x: f64) -> f64 {
    let v = model.density().eval(x);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Cumulative distribution by adaptive quadrature of [`pdf`].
pub fn cdf(model: &FittedModel, x: f64) -> f64 {
    model.density().cdf(x)
}
