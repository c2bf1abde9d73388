//! Uniform maturity grids, grid functions and tracked-mass densities.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grids differ (n = {a} vs {b})")]
    Mismatch { a: usize, b: usize },
    #[error("density has non-finite or negative value at node {index}")]
    BadValue { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform grid `0 = m_0 < ... < m_n = m_max` with trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub m_max: f64,
}

impl Grid {
    pub fn new(n: usize, m_max: f64) -> Self {
        assert!(n >= 8 && m_max > 0.0);
        Grid { n, m_max }
    }

    pub fn dm(&self) -> f64 {
        self.m_max / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.m_max * i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(|i| self.node(i))
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n {
            0.5 * self.dm()
        } else {
            self.dm()
        }
    }
}

/// Plain function values on a [`Grid`] (no normalization contract).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        GridFn { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = vec![0.0; grid.n + 1];
        GridFn { grid, values }
    }

    /// Trapezoid integral over the grid.
    pub fn integral(&self) -> f64 {
        let dm = self.grid.dm();
        let n = self.grid.n;
        let mut s = 0.5 * (self.values[0] + self.values[n]);
        for v in &self.values[1..n] {
            s += v;
        }
        s * dm
    }

    /// Trapezoid L1 distance to another grid function on the same grid.
    pub fn l1_distance(&self, other: &GridFn) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Mismatch {
                a: self.grid.n,
                b: other.grid.n,
            });
        }
        let dm = self.grid.dm();
        let n = self.grid.n;
        let mut s = 0.5
            * ((self.values[0] - other.values[0]).abs()
                + (self.values[n] - other.values[n]).abs());
        for i in 1..n {
            s += (self.values[i] - other.values[i]).abs();
        }
        Ok(s * dm)
    }

    /// Linear interpolation; zero outside the grid.
    pub fn eval(&self, m: f64) -> f64 {
        if m < 0.0 || m > self.grid.m_max {
            return 0.0;
        }
        let u = m / self.grid.dm();
        let i = (u.floor() as usize).min(self.grid.n - 1);
        let frac = u - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Writes `m,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        writeln!(w, "m,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.node(i), v)?;
        }
        Ok(())
    }
}

/// A nonnegative density on a grid with tracked escaped mass:
/// `integral + escaped_mass` stays 1 under operator application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub f: GridFn,
    pub escaped_mass: f64,
}

impl GridDensity {
    /// Builds a density from nonnegative values, normalizing total mass
    /// to one (escaped mass starts at zero).
    pub fn normalized(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(GridError::BadValue { index });
            }
        }
        let mut f = GridFn { grid, values };
        let total = f.integral();
        if total <= 0.0 {
            return Err(GridError::BadValue { index: 0 });
        }
        for v in &mut f.values {
            *v /= total;
        }
        Ok(GridDensity {
            f,
            escaped_mass: 0.0,
        })
    }

    /// Density proportional to `f` on the grid.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self, GridError> {
        let vals = grid.nodes().map(&f).collect();
        Self::normalized(grid, vals)
    }

    /// Uniform density on `[0, hi]`.
    pub fn uniform(grid: Grid, hi: f64) -> Self {
        let vals = grid
            .nodes()
            .map(|m| if m <= hi { 1.0 } else { 0.0 })
            .collect();
        Self::normalized(grid, vals).expect("uniform density is valid")
    }

    /// Unit point mass in the grid cell at `at` (one nonzero node).
    pub fn spike(grid: Grid, at: f64) -> Self {
        let i = ((at / grid.dm()).round() as usize).min(grid.n);
        let mut vals = vec![0.0; grid.n + 1];
        vals[i] = 1.0;
        Self::normalized(grid, vals).expect("spike density is valid")
    }

    /// In-domain mass (trapezoid).
    pub fn mass(&self) -> f64 {
        self.f.integral()
    }

    /// `mass + escaped`, which operator application preserves.
    pub fn total_account(&self) -> f64 {
        self.mass() + self.escaped_mass
    }

    /// JSON sidecar accompanying CSV exports.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "escaped_mass": self.escaped_mass,
            "grid_n": self.f.grid.n,
            "mMax": self.f.grid.m_max,
        })
    }
}
