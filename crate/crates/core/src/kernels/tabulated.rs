use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Piecewise-linear density given by `(grid, value)` pairs, zero outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    grid: Vec<f64>,
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl Tabulated {
    pub const NORMALIZATION_TOL: f64 = 1e-6;

    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::Validation(format!(
                "table needs at least two (grid, value) pairs of equal length, got {} and {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("table grid must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!(
                "table density value {v} is negative or non-finite"
            )));
        }
        let mut cdf = Vec::with_capacity(grid.len());
        cdf.push(0.0);
        for i in 1..grid.len() {
            let area = 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
            cdf.push(cdf[i - 1] + area);
        }
        let total = cdf[cdf.len() - 1];
        if (total - 1.0).abs() > Self::NORMALIZATION_TOL {
            return Err(Error::Validation(format!("table integrates to {total}, not 1")));
        }
        Ok(Tabulated { grid, values, cdf })
    }

    /// Reads whitespace- or comma-separated `grid value` lines; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Validation(format!("line {}: {e}", lineno + 1)))
            };
            match fields.as_slice() {
                [g, v] => {
                    grid.push(parse(g)?);
                    values.push(parse(v)?);
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "line {}: expected two columns, found {}",
                        lineno + 1,
                        fields.len()
                    )))
                }
            }
        }
        Self::new(grid, values)
    }

    pub fn lo(&self) -> f64 {
        self.grid[0]
    }

    pub fn hi(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, t: f64) -> Option<usize> {
        if t < self.lo() || t > self.hi() {
            return None;
        }
        let i = self.grid.partition_point(|&g| g <= t);
        Some(i.clamp(1, self.grid.len() - 1) - 1)
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self.segment(t) {
            None => 0.0,
            Some(i) => {
                let (x0, x1) = (self.grid[i], self.grid[i + 1]);
                let w = (t - x0) / (x1 - x0);
                self.values[i] * (1.0 - w) + self.values[i + 1] * w
            }
        }
    }

    /// Inverse CDF, solving the quadratic on the containing segment.
    pub fn quantile(&self, u: f64) -> f64 {
        let total = self.cdf[self.cdf.len() - 1];
        let target = u.clamp(0.0, 1.0) * total;
        let i = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1) - 1;
        let (x0, x1) = (self.grid[i], self.grid[i + 1]);
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let need = target - self.cdf[i];
        let width = x1 - x0;
        let slope = (f1 - f0) / width;
        // need = f0 * s + slope * s^2 / 2 for s in [0, width]
        let s = if slope.abs() < 1e-14 {
            if f0 > 0.0 {
                need / f0
            } else {
                0.0
            }
        } else {
            let disc = (f0 * f0 + 2.0 * slope * need).max(0.0);
            (disc.sqrt() - f0) / slope
        };
        x0 + s.clamp(0.0, width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Tabulated {
        Tabulated::new(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn interpolates_linearly() {
        let t = triangle();
        assert_eq!(t.pdf(0.0), 1.0);
        assert!((t.pdf(0.25) - 0.75).abs() < 1e-15);
        assert_eq!(t.pdf(1.5), 0.0);
    }

    #[test]
    fn rejects_unnormalized_table() {
        let err = Tabulated::new(vec![0.0, 1.0], vec![2.0, 2.0]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_negative_and_unsorted() {
        assert!(Tabulated::new(vec![0.0, 1.0], vec![-1.0, 3.0]).is_err());
        assert!(Tabulated::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let t = triangle();
        assert!((t.quantile(0.5)).abs() < 1e-12);
        // cdf(x) = (1+x)^2 / 2 on [-1, 0]
        assert!((t.quantile(0.125) - (-0.5)).abs() < 1e-12);
        assert!((t.quantile(0.875) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parses_text_with_comments() {
        let t = Tabulated::parse("# grid value\n-1 0\n0, 1\n\n1 0 # end\n").unwrap();
        assert_eq!(t.grid(), &[-1.0, 0.0, 1.0]);
        assert!(Tabulated::parse("0 1 2\n").is_err());
    }
}
