use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive `lo:hi:step` range of steering strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub lo: f32,
    pub hi: f32,
    pub step: f32,
}

impl AlphaGrid {
    pub fn new(lo: f32, hi: f32, step: f32) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(Error::InvalidInput("grid bounds must be finite".into()));
        }
        if hi < lo {
            return Err(Error::InvalidInput(format!("grid upper bound {hi} below {lo}")));
        }
        if step <= 0.0 && hi > lo {
            return Err(Error::InvalidInput(format!("grid step {step} must be positive")));
        }
        Ok(AlphaGrid { lo, hi, step })
    }

    /// Grid points in increasing order. Points are `lo + i * step`, computed
    /// in f64 so long grids do not drift; `hi` is included when it lies on
    /// the grid up to rounding.
    pub fn points(&self) -> Vec<f32> {
        if self.hi == self.lo {
            return vec![self.lo];
        }
        let (lo, hi, step) = (f64::from(self.lo), f64::from(self.hi), f64::from(self.step));
        let n = ((hi - lo) / step + 1e-6).floor() as usize;
        (0..=n).map(|i| (lo + i as f64 * step) as f32).collect()
    }
}

impl FromStr for AlphaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let parse = |p: &str| {
            p.trim()
                .parse::<f32>()
                .map_err(|_| Error::InvalidInput(format!("bad grid value `{p}` in `{s}`")))
        };
        match parts.as_slice() {
            [single] => {
                let a = parse(single)?;
                AlphaGrid::new(a, a, 1.0)
            }
            [lo, hi, step] => AlphaGrid::new(parse(lo)?, parse(hi)?, parse(step)?),
            _ => Err(Error::InvalidInput(format!("grid `{s}` is not lo:hi:step"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_alpha: f32,
    pub best_value: f64,
    pub direction: Direction,
    /// `(alpha, objective)` for every grid point, in grid order.
    pub evaluations: Vec<(f32, f64)>,
}

/// Evaluates `objective` at every grid point and returns the best. Only a
/// strict improvement replaces the incumbent, so ties go to the smallest
/// strength.
pub fn alpha_grid_search<F>(grid: &AlphaGrid, direction: Direction, mut objective: F) -> Result<GridSearchResult>
where
    F: FnMut(f32) -> Result<f64>,
{
    let mut evaluations = Vec::new();
    let mut best: Option<(f32, f64)> = None;
    for alpha in grid.points() {
        let value = objective(alpha)?;
        if value.is_nan() {
            return Err(Error::InvalidInput(format!("objective undefined at alpha {alpha}")));
        }
        evaluations.push((alpha, value));
        let better = match best {
            None => true,
            Some((_, b)) => match direction {
                Direction::Maximize => value > b,
                Direction::Minimize => value < b,
            },
        };
        if better {
            best = Some((alpha, value));
        }
    }
    let (best_alpha, best_value) = best.ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    Ok(GridSearchResult {
        best_alpha,
        best_value,
        direction,
        evaluations,
    })
}
