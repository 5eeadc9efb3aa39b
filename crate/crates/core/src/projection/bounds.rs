//! Tail bounds for the squared-distance ratio of a Gaussian projection, and
//! the minimum projected dimension that keeps full and projected
//! aggregation within `epsilon` of each other with probability `1 - delta`.

use serde::Serialize;

use crate::error::{Error, Result};

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")))
    }
}

fn check_m(m: u64) -> Result<()> {
    if m >= 1 {
        Ok(())
    } else {
        Err(Error::invalid("projected dimension m must be at least 1"))
    }
}

/// Upper-tail bound `P(ratio - 1 > delta) <= exp(m [-delta + ln(1 + delta)] / 2)`.
pub fn chernoff_upper(delta: f64, m: u64) -> Result<f64> {
    check_delta(delta)?;
    check_m(m)?;
    Ok((m as f64 * (-delta + delta.ln_1p()) / 2.0).exp())
}

/// Lower-tail bound `P(ratio - 1 < -delta) <= exp(m [delta + ln(1 - delta)] / 2)`.
pub fn chernoff_lower(delta: f64, m: u64) -> Result<f64> {
    check_delta(delta)?;
    check_m(m)?;
    Ok((m as f64 * (delta + (-delta).ln_1p()) / 2.0).exp())
}

/// Two-sided bound for one pair, `2 exp(-m (delta^2/2 - delta^3/3) / 2)`.
pub fn jl_pair_bound(delta: f64, m: u64) -> Result<f64> {
    check_delta(delta)?;
    check_m(m)?;
    let e = delta * delta / 2.0 - delta.powi(3) / 3.0;
    Ok(2.0 * (-(m as f64) * e / 2.0).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnionBound {
    /// `2 n exp(-m (delta^2/2 - delta^3/3) / 2)`, possibly above 1.
    pub raw: f64,
    pub clamped: f64,
}

/// Probability that some of `n` distances to a fixed point is distorted by
/// more than `delta`.
pub fn jl_union_bound(delta: f64, m: u64, n: u64) -> Result<UnionBound> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let raw = n as f64 * jl_pair_bound(delta, m)?;
    Ok(UnionBound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct DimensionQuery {
    pub epsilon: f64,
    pub delta: f64,
    pub n: u64,
    pub h: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionBound {
    /// Smallest integer `m >= 1` meeting the bound.
    pub m: u64,
    pub c1: f64,
    /// Real-valued right-hand side the integer `m` must reach.
    pub bound: f64,
    /// `C1 log(-2n / log(1 - delta)) / (h^(2 alpha) eps^2)`.
    pub large_n_approx: f64,
}

impl DimensionQuery {
    fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos(self.epsilon, "epsilon")?;
        pos(self.h, "h")?;
        pos(self.sigma, "sigma")?;
        pos(self.r0, "R0")?;
        check_delta(self.delta)?;
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// `ln C1` with `C1 = 3 (2 + alpha)^2 (2 R0)^(2 (1 + alpha)) / sigma^2`.
    pub fn ln_c1(&self) -> f64 {
        3f64.ln() + 2.0 * (2.0 + self.alpha).ln() + 2.0 * (1.0 + self.alpha) * (2.0 * self.r0).ln()
            - 2.0 * self.sigma.ln()
    }

    /// `log(2 / (1 - (1 - delta)^(1/n)))`, stable for large `n`.
    pub fn log_term(&self) -> f64 {
        let q = -((-self.delta).ln_1p() / self.n as f64).exp_m1();
        std::f64::consts::LN_2 - q.ln()
    }

    /// Natural log of the real-valued lower bound on `m`.
    pub fn ln_bound(&self) -> f64 {
        self.ln_c1() + self.log_term().ln()
            - 2.0 * self.alpha * self.h.ln()
            - 2.0 * self.epsilon.ln()
    }

    /// Whether a given `m` meets the bound.
    pub fn is_satisfied_by(&self, m: u64) -> bool {
        m as f64 >= self.ln_bound().exp()
    }
}

pub fn min_projection_dim(q: &DimensionQuery) -> Result<DimensionBound> {
    q.validate()?;
    let ln_bound = q.ln_bound();
    // Integers up to 2^53 are exact in f64.
    if ln_bound > 53.0 * std::f64::consts::LN_2 {
        return Err(Error::Numerical(format!(
            "required dimension exp({ln_bound:.3}) overflows"
        )));
    }
    let bound = ln_bound.exp();
    let m = (bound.ceil() as u64).max(1);
    let ln_c1 = q.ln_c1();
    let approx_log = (-2.0 * q.n as f64 / (-q.delta).ln_1p()).ln();
    let large_n_approx =
        (ln_c1 + approx_log.ln() - 2.0 * q.alpha * q.h.ln() - 2.0 * q.epsilon.ln()).exp();
    Ok(DimensionBound {
        m,
        c1: ln_c1.exp(),
        bound,
        large_n_approx,
    })
}
