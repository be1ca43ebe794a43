use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm of the translation residual `h + r - t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::Config(format!("unknown norm {other:?} (expected l1 or l2)"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

fn check_dims(h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
    for other in [r.len(), t.len()] {
        if other != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                found: other,
            });
        }
    }
    Ok(())
}

pub(crate) fn distance_unchecked(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let residuals = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => residuals.map(f64::abs).sum(),
        Norm::L2 => residuals.map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// `||h + r - t||`.
pub fn distance(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(distance_unchecked(h, r, t, norm))
}

/// TransE plausibility `-||h + r - t||`; higher is better.
pub fn score(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64> {
    distance(h, r, t, norm).map(|d| -d)
}

/// Distance plus its gradient with respect to the residual `h + r - t`, written
/// into `grad`. The gradient w.r.t. `h` and `r` is `grad`, w.r.t. `t` it is `-grad`.
/// At a zero residual the L2 gradient is taken as zero.
pub fn distance_grad(h: &[f64], r: &[f64], t: &[f64], norm: Norm, grad: &mut [f64]) -> Result<f64> {
    check_dims(h, r, t)?;
    if grad.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            found: grad.len(),
        });
    }
    for (g, ((h, r), t)) in grad.iter_mut().zip(h.iter().zip(r).zip(t)) {
        *g = h + r - t;
    }
    Ok(residual_grad_in_place(grad, norm))
}

/// Turn a residual vector into the distance gradient in place; returns the distance.
pub(crate) fn residual_grad_in_place(residual: &mut [f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => {
            let d = residual.iter().map(|x| x.abs()).sum();
            for x in residual.iter_mut() {
                *x = if *x > 0.0 {
                    1.0
                } else if *x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            d
        }
        Norm::L2 => {
            let d = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
            if d > 0.0 {
                for x in residual.iter_mut() {
                    *x /= d;
                }
            } else {
                residual.fill(0.0);
            }
            d
        }
    }
}

/// Hinge on plausibility scores: `max(0, margin - pos + neg)`.
pub fn margin_loss(pos: f64, neg: f64, margin: f64) -> f64 {
    (margin - pos + neg).max(0.0)
}
