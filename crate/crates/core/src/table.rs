//! Rectangular tables on positive axes, interpolated bilinearly in `(ln x, ln y)`.

use std::path::Path;

use crate::error::{data, domain, Result};

/// Values `v[i][j]` at nodes `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable2d {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl LogTable2d {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("x", &xs), ("y", &ys)] {
            if axis.len() < 2 {
                return Err(data(format!("table axis {name} needs at least two nodes")));
            }
            if axis[0] <= 0.0 || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(data(format!(
                    "table axis {name} must be positive and strictly increasing"
                )));
            }
        }
        if values.len() != xs.len() * ys.len() {
            return Err(data(format!(
                "table has {} values for a {}x{} grid",
                values.len(),
                xs.len(),
                ys.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(data("table values must be finite"));
        }
        Ok(LogTable2d { xs, ys, values })
    }

    /// Reads a headed CSV with three columns `x,y,<value>` covering every node
    /// of a rectangular grid exactly once (any row order).
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        if reader.headers()?.len() != 3 {
            return Err(data(format!("{}: expected three columns", path.display())));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let mut row = [0.0; 3];
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = record[k].parse::<f64>().map_err(|e| {
                    data(format!("{}: row {}: {e}", path.display(), line + 2))
                })?;
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// Assembles a table from `(x, y, value)` triples.
    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        let axis = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = axis(0);
        let ys = axis(1);
        if xs.len() * ys.len() != rows.len() {
            return Err(data(format!(
                "table rows do not form a rectangular grid ({} x {} nodes, {} rows)",
                xs.len(),
                ys.len(),
                rows.len()
            )));
        }
        let mut values = vec![f64::NAN; xs.len() * ys.len()];
        for r in rows {
            let i = xs.binary_search_by(|v| v.total_cmp(&r[0])).expect("node present");
            let j = ys.binary_search_by(|v| v.total_cmp(&r[1])).expect("node present");
            let slot = &mut values[i * ys.len() + j];
            if !slot.is_nan() {
                return Err(data(format!("duplicate table node ({}, {})", r[0], r[1])));
            }
            *slot = r[2];
        }
        Self::new(xs, ys, values)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.ys[0], self.ys[self.ys.len() - 1])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when the axes coincide and the value matrix is symmetric.
    pub fn is_symmetric(&self) -> bool {
        if self.xs != self.ys {
            return false;
        }
        let n = self.xs.len();
        (0..n).all(|i| (0..i).all(|j| self.values[i * n + j] == self.values[j * n + i]))
    }

    fn locate(axis: &[f64], t: f64) -> (usize, f64) {
        let k = match axis.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(k) => k.min(axis.len() - 2),
            Err(k) => k - 1,
        };
        let s = (t / axis[k]).ln() / (axis[k + 1] / axis[k]).ln();
        (k, s)
    }

    /// Bilinear interpolation in log coordinates; error outside the box.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return Err(domain(format!(
                "table lookup at ({x:e}, {y:e}) outside [{x0:e}, {x1:e}] x [{y0:e}, {y1:e}]"
            )));
        }
        let (i, s) = Self::locate(&self.xs, x);
        let (j, t) = Self::locate(&self.ys, y);
        let ny = self.ys.len();
        let v = |a: usize, b: usize| self.values[a * ny + b];
        Ok((1.0 - s) * ((1.0 - t) * v(i, j) + t * v(i, j + 1))
            + s * ((1.0 - t) * v(i + 1, j) + t * v(i + 1, j + 1)))
    }

    /// `eval` averaged over both argument orders, which is exactly symmetric
    /// for symmetric tables.
    pub fn eval_symmetric(&self, x: f64, y: f64) -> Result<f64> {
        Ok(0.5 * (self.eval(x, y)? + self.eval(y, x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LogTable2d {
        // v = ln x + ln y is reproduced exactly by log-bilinear interpolation
        let axis = vec![0.1, 1.0, 10.0];
        let mut vals = Vec::new();
        for x in &axis {
            for y in &axis {
                vals.push(f64::ln(*x) + f64::ln(*y));
            }
        }
        LogTable2d::new(axis.clone(), axis, vals).unwrap()
    }

    #[test]
    fn reproduces_log_linear_data() {
        let t = sample();
        for (x, y) in [(0.3, 2.0), (1.0, 1.0), (7.0, 0.11)] {
            let v = t.eval(x, y).unwrap();
            assert!((v - (f64::ln(x) + f64::ln(y))).abs() < 1e-13);
        }
    }

    #[test]
    fn out_of_box_is_domain_error() {
        let t = sample();
        assert!(matches!(t.eval(20.0, 1.0), Err(crate::Error::Domain(_))));
        assert!(matches!(t.eval(1.0, 0.01), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn rows_roundtrip_and_symmetry() {
        let rows = [
            [1.0, 1.0, 2.0],
            [1.0, 2.0, 3.0],
            [2.0, 1.0, 3.0],
            [2.0, 2.0, 4.0],
        ];
        let t = LogTable2d::from_rows(&rows).unwrap();
        assert!(t.is_symmetric());
        assert_eq!(t.eval(2.0, 1.0).unwrap(), 3.0);
        let a = t.eval_symmetric(1.3, 1.7).unwrap();
        let b = t.eval_symmetric(1.7, 1.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = [[1.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 1.0, 3.0]];
        assert!(LogTable2d::from_rows(&rows).is_err());
    }
}
