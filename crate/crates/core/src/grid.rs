//! Geometric volume grids, cell-averaged states and initial-condition families.
//!
//! A [`Grid`] covers `(x_min, x_max)` with cells whose edges form a geometric
//! sequence. Each cell carries its geometric midpoint `c_i = sqrt(e_i e_{i+1})`
//! as representative volume, and a [`State`] stores the cell average of the
//! number density on every cell. Moments are evaluated by the midpoint rule on
//! that representation, `M_m = sum_i c_i^m f_i dx_i`.

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};

/// Geometric mesh of `(x_min, x_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    log_ratio: f64,
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl Grid {
    /// Builds a geometric grid with `cells` cells spanning `(x_min, x_max)`.
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Result<Self> {
        if !(x_min > 0.0) || !x_min.is_finite() {
            return Err(config(format!("grid.x_min must be positive, got {x_min}")));
        }
        if !(x_max > x_min) || !x_max.is_finite() {
            return Err(config(format!(
                "grid.x_max must exceed x_min, got x_min = {x_min}, x_max = {x_max}"
            )));
        }
        if cells < 2 {
            return Err(config(format!("grid.cells must be at least 2, got {cells}")));
        }
        let log_ratio = (x_max / x_min).ln() / cells as f64;
        let mut grid = Self::with_log_ratio(x_min, log_ratio, cells);
        // pin the last edge to the requested bound
        grid.edges[cells] = x_max;
        grid.x_max = x_max;
        grid.rebuild_cells();
        Ok(grid)
    }

    fn with_log_ratio(x_min: f64, log_ratio: f64, cells: usize) -> Self {
        let mut edges: Vec<f64> = (0..=cells)
            .map(|i| x_min * (i as f64 * log_ratio).exp())
            .collect();
        edges[0] = x_min;
        let mut grid = Grid {
            x_min,
            x_max: edges[cells],
            log_ratio,
            edges,
            centers: Vec::new(),
            widths: Vec::new(),
        };
        grid.rebuild_cells();
        grid
    }

    fn rebuild_cells(&mut self) {
        self.centers = self
            .edges
            .windows(2)
            .map(|w| (w[0] * w[1]).sqrt())
            .collect();
        self.widths = self.edges.windows(2).map(|w| w[1] - w[0]).collect();
    }

    /// Grid with the same lower bound and edge ratio, extended by whole cells
    /// until its upper bound reaches at least `x_max`. The edges of `self`
    /// are reproduced exactly on the shared range.
    pub fn extended_to(&self, x_max: f64) -> Result<Self> {
        if x_max <= self.x_max {
            return Ok(self.clone());
        }
        let extra = ((x_max / self.x_max).ln() / self.log_ratio).ceil() as usize;
        let cells = self.cell_count() + extra.max(1);
        let mut grid = Self::with_log_ratio(self.x_min, self.log_ratio, cells);
        grid.edges[..=self.cell_count()].copy_from_slice(&self.edges);
        grid.rebuild_cells();
        Ok(grid)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn cell_count(&self) -> usize {
        self.centers.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Constant ratio `e_{i+1} / e_i`.
    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }

    /// Index of the cell `[e_k, e_{k+1})` containing `v`, or `None` when `v`
    /// lies outside `[x_min, x_max)`.
    pub fn cell_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.x_min) || v >= self.x_max {
            return None;
        }
        let n = self.cell_count();
        let mut k = (((v / self.x_min).ln() / self.log_ratio).floor() as usize).min(n - 1);
        while k > 0 && v < self.edges[k] {
            k -= 1;
        }
        while k + 1 < n && v >= self.edges[k + 1] {
            k += 1;
        }
        Some(k)
    }

    /// Splits one particle of volume `v` between the two cell centres that
    /// bracket it so that number and volume are both preserved. Outside the
    /// centre range the particle is assigned to the end cell with the number
    /// adjusted so that volume is preserved.
    ///
    /// Returns `[(cell, number), (cell, number)]`; the second entry may carry a
    /// zero weight.
    pub fn split(&self, v: f64) -> [(usize, f64); 2] {
        let c = &self.centers;
        let n = c.len();
        if v <= c[0] {
            return [(0, v / c[0]), (0, 0.0)];
        }
        if v >= c[n - 1] {
            return [(n - 1, v / c[n - 1]), (n - 1, 0.0)];
        }
        // c[k] < v < c[k+1]; centres are geometric so the same log index works
        let mut k = ((((v / c[0]).ln()) / self.log_ratio).floor() as usize).min(n - 2);
        while k > 0 && v < c[k] {
            k -= 1;
        }
        while k + 2 < n && v >= c[k + 1] {
            k += 1;
        }
        let upper = (v - c[k]) / (c[k + 1] - c[k]);
        [(k, 1.0 - upper), (k + 1, upper)]
    }

    /// Midpoint-rule moment `sum_i c_i^m f_i dx_i` of a density vector.
    pub fn moment_of(&self, density: &[f64], m: f64) -> f64 {
        debug_assert_eq!(density.len(), self.cell_count());
        let mut sum = 0.0;
        for ((&c, &dx), &f) in self.centers.iter().zip(&self.widths).zip(density) {
            if f != 0.0 {
                sum += c.powf(m) * f * dx;
            }
        }
        sum
    }

    /// `sum_i phi(c_i) f_i dx_i`.
    pub fn integrate_with(&self, density: &[f64], phi: impl Fn(f64) -> f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.widths)
            .zip(density)
            .map(|((&c, &dx), &f)| phi(c) * f * dx)
            .sum()
    }
}

/// Convenience wrapper for [`Grid::new`].
pub fn make_grid(x_min: f64, x_max: f64, cells: usize) -> Result<Grid> {
    Grid::new(x_min, x_max, cells)
}

/// Cell-averaged number density on a grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    grid: Arc<Grid>,
    density: Vec<f64>,
    time: f64,
}

impl State {
    pub fn new(grid: Arc<Grid>, density: Vec<f64>, time: f64) -> Result<Self> {
        if density.len() != grid.cell_count() {
            return Err(data(format!(
                "state has {} values for {} cells",
                density.len(),
                grid.cell_count()
            )));
        }
        if let Some(i) = density.iter().position(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(data(format!("negative or non-finite density in cell {i}")));
        }
        if !(time >= 0.0) {
            return Err(data(format!("state time must be non-negative, got {time}")));
        }
        Ok(State {
            grid,
            density,
            time,
        })
    }

    pub fn zero(grid: Arc<Grid>) -> Self {
        let n = grid.cell_count();
        State {
            grid,
            density: vec![0.0; n],
            time: 0.0,
        }
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<Grid>, density: Vec<f64>, time: f64) -> Self {
        State {
            grid,
            density,
            time,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Density multiplied by a non-negative factor.
    pub fn scaled(&self, factor: f64) -> Self {
        State {
            grid: self.grid.clone(),
            density: self.density.iter().map(|f| f * factor).collect(),
            time: self.time,
        }
    }

    pub fn moment(&self, m: f64) -> f64 {
        self.grid.moment_of(&self.density, m)
    }

    pub fn mass(&self) -> f64 {
        self.moment(1.0)
    }
}

/// Moment `M_m` of a state.
pub fn moment(state: &State, m: f64) -> f64 {
    state.moment(m)
}

/// Closed-form and tabulated initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `lambda exp(-lambda x)` rescaled to total mass `mass`.
    Exponential { lambda: f64, mass: f64 },
    /// `x^{-p}` on `(0, x_c)` rescaled to total mass `mass`.
    PowerCutoff { p: f64, x_c: f64, mass: f64 },
    /// Log-normal bump centred at `x0` with log-width `w`, rescaled to `mass`.
    PointMassSmeared { x0: f64, w: f64, mass: f64 },
    /// Tabulated `(x, f)` pairs interpolated log-log; rescaled only when
    /// `mass` is given.
    Tabulated {
        x: Vec<f64>,
        f: Vec<f64>,
        #[serde(default)]
        mass: Option<f64>,
    },
}

impl InitialCondition {
    pub fn exponential(lambda: f64) -> Self {
        InitialCondition::Exponential {
            lambda,
            mass: 1.0 / lambda,
        }
    }

    /// Reads a two-column `x,f` CSV with header.
    pub fn from_csv(path: impl AsRef<Path>, mass: Option<f64>) -> Result<Self> {
        let (x, f) = read_xy_csv(path.as_ref())?;
        let ic = InitialCondition::Tabulated { x, f, mass };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialCondition::Exponential { lambda, mass } => {
                if !(lambda > 0.0) {
                    return Err(config(format!("initial.lambda must be positive, got {lambda}")));
                }
                check_mass(mass)
            }
            InitialCondition::PowerCutoff { p, x_c, mass } => {
                if !(p < 2.0) || !p.is_finite() {
                    return Err(config(format!(
                        "initial.p must be below 2 for a finite mass, got {p}"
                    )));
                }
                if !(x_c > 0.0) {
                    return Err(config(format!("initial.x_c must be positive, got {x_c}")));
                }
                check_mass(mass)
            }
            InitialCondition::PointMassSmeared { x0, w, mass } => {
                if !(x0 > 0.0) {
                    return Err(config(format!("initial.x0 must be positive, got {x0}")));
                }
                if !(w > 0.0) {
                    return Err(config(format!("initial.w must be positive, got {w}")));
                }
                check_mass(mass)
            }
            InitialCondition::Tabulated {
                ref x,
                ref f,
                mass,
            } => {
                validate_table(x, f)?;
                match mass {
                    Some(m) => check_mass(m),
                    None => Ok(()),
                }
            }
        }
    }

    /// Configured total mass, when the family fixes one.
    pub fn mass(&self) -> Option<f64> {
        match *self {
            InitialCondition::Exponential { mass, .. }
            | InitialCondition::PowerCutoff { mass, .. }
            | InitialCondition::PointMassSmeared { mass, .. } => Some(mass),
            InitialCondition::Tabulated { mass, .. } => mass,
        }
    }

    /// Whether the continuous profile belongs to `X_m`, i.e. `M_m < inf`.
    pub fn has_finite_moment(&self, m: f64) -> bool {
        match *self {
            InitialCondition::Exponential { .. } => m > -1.0,
            InitialCondition::PowerCutoff { p, .. } => m - p > -1.0,
            InitialCondition::PointMassSmeared { .. } => true,
            InitialCondition::Tabulated { ref x, ref f, .. } => {
                // zero below the first node, bounded support
                x.first().is_some_and(|&x0| x0 > 0.0) || f.iter().all(|v| *v == 0.0)
            }
        }
    }

    /// Integral of the unnormalised profile over `[a, b]`.
    fn cell_integral(&self, a: f64, b: f64, quad: &GaussLegendre) -> f64 {
        match *self {
            InitialCondition::Exponential { lambda, .. } => {
                // int_a^b lambda e^{-lambda x} dx
                -(-lambda * a).exp() * (-lambda * (b - a)).exp_m1()
            }
            InitialCondition::PowerCutoff { p, x_c, .. } => {
                let hi = b.min(x_c);
                if hi <= a {
                    return 0.0;
                }
                let log_span = (hi / a).ln();
                let e = 1.0 - p;
                if e == 0.0 {
                    log_span
                } else {
                    a.powf(e) * (e * log_span).exp_m1() / e
                }
            }
            InitialCondition::PointMassSmeared { x0, w, .. } => {
                let s = w * std::f64::consts::SQRT_2;
                let za = (a / x0).ln() / s;
                let zb = (b / x0).ln() / s;
                0.5 * (statrs::function::erf::erf(zb) - statrs::function::erf::erf(za))
            }
            InitialCondition::Tabulated { ref x, ref f, .. } => {
                let lo = a.max(x[0]);
                let hi = b.min(x[x.len() - 1]);
                if hi <= lo {
                    return 0.0;
                }
                // split at table nodes so every piece sees one interpolant
                let mut cuts = vec![lo];
                cuts.extend(x.iter().copied().filter(|&xi| xi > lo && xi < hi));
                cuts.push(hi);
                cuts.windows(2)
                    .map(|w| quad.integrate(w[0], w[1], |t| loglog_interp(x, f, t)))
                    .sum()
            }
        }
    }
}

fn check_mass(mass: f64) -> Result<()> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(config(format!("initial.mass must be positive, got {mass}")));
    }
    Ok(())
}

fn validate_table(x: &[f64], f: &[f64]) -> Result<()> {
    if x.len() != f.len() {
        return Err(data("tabulated profile: x and f lengths differ"));
    }
    if x.len() < 2 {
        return Err(data("tabulated profile needs at least two rows"));
    }
    if x[0] <= 0.0 {
        return Err(data("tabulated profile: x must be positive"));
    }
    if x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(data("tabulated profile: x must be strictly increasing"));
    }
    if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(data("tabulated profile: f must be finite and non-negative"));
    }
    Ok(())
}

/// Reads a headed two-column CSV of positive abscissae and values.
pub(crate) fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 {
        return Err(data(format!(
            "{}: expected two columns, found header {:?}",
            path.display(),
            headers
        )));
    }
    let mut x = Vec::new();
    let mut f = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| {
                data(format!("{}: row {}: {e}", path.display(), line + 2))
            })
        };
        x.push(parse(0)?);
        f.push(parse(1)?);
    }
    validate_table(&x, &f)?;
    Ok((x, f))
}

/// Log-log interpolation inside the table, linear where a neighbour is zero,
/// and zero outside the tabulated range.
pub(crate) fn loglog_interp(x: &[f64], f: &[f64], t: f64) -> f64 {
    if t < x[0] || t > x[x.len() - 1] {
        return 0.0;
    }
    let k = match x.binary_search_by(|v| v.total_cmp(&t)) {
        Ok(k) => return f[k],
        Err(k) => k - 1,
    };
    let (x0, x1, f0, f1) = (x[k], x[k + 1], f[k], f[k + 1]);
    if f0 > 0.0 && f1 > 0.0 {
        let s = (t / x0).ln() / (x1 / x0).ln();
        (f0.ln() + s * (f1 / f0).ln()).exp()
    } else {
        f0 + (f1 - f0) * (t - x0) / (x1 - x0)
    }
}

/// Cell averages of an initial condition on `grid`, rescaled so that the
/// discrete first moment equals the configured mass.
pub fn sample_initial(ic: &InitialCondition, grid: &Arc<Grid>) -> Result<State> {
    ic.validate()?;
    let quad = GaussLegendre::new(NonZeroUsize::new(32).expect("nonzero"));
    let mut density: Vec<f64> = grid
        .edges()
        .windows(2)
        .zip(grid.widths())
        .map(|(e, dx)| ic.cell_integral(e[0], e[1], &quad) / dx)
        .collect();
    if let Some(target) = ic.mass() {
        let raw = grid.moment_of(&density, 1.0);
        if !(raw > 0.0) {
            return Err(config(
                "initial condition carries no mass on the grid; cannot rescale",
            ));
        }
        let s = target / raw;
        density.iter_mut().for_each(|f| *f *= s);
    }
    State::new(grid.clone(), density, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_two_mesh() {
        let g = Grid::new(1.0, 4.0, 2).unwrap();
        assert_eq!(g.edges(), &[1.0, 2.0, 4.0]);
        assert!((g.centers()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((g.centers()[1] - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(g.widths(), &[1.0, 2.0]);
    }

    #[test]
    fn closed_form_ratio() {
        let g = Grid::new(1e-4, 1e3, 70).unwrap();
        let expected = 1e7f64.powf(1.0 / 70.0);
        assert!((g.ratio() - expected).abs() < 1e-12);
        assert!((expected - 1.2589).abs() < 1e-4);
        for w in g.edges().windows(2) {
            assert!((w[1] / w[0] - expected).abs() / expected < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(Grid::new(1.0, 1.0, 10).is_err());
        assert!(Grid::new(0.0, 1.0, 10).is_err());
        assert!(Grid::new(-1.0, 1.0, 10).is_err());
        assert!(Grid::new(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn centers_inside_cells() {
        let g = Grid::new(1e-6, 1e4, 123).unwrap();
        for (i, c) in g.centers().iter().enumerate() {
            assert!(*c > g.edges()[i] && *c < g.edges()[i + 1]);
        }
    }

    #[test]
    fn cell_lookup_matches_edges() {
        let g = Grid::new(1e-3, 10.0, 40).unwrap();
        for (i, e) in g.edges()[..40].iter().enumerate() {
            assert_eq!(g.cell_of(*e), Some(i));
            assert_eq!(g.cell_of(e * 1.0001), Some(i));
        }
        assert_eq!(g.cell_of(10.0), None);
        assert_eq!(g.cell_of(1e-4), None);
    }

    #[test]
    fn split_preserves_number_and_volume() {
        let g = Grid::new(1e-2, 1e2, 37).unwrap();
        for v in [0.0123, 0.5, 1.0, 3.3, 77.0] {
            let [(i, a), (j, b)] = g.split(v);
            assert!((a + b - 1.0).abs() < 1e-14);
            let vol = a * g.centers()[i] + b * g.centers()[j];
            assert!((vol - v).abs() < 1e-13 * v);
            assert!(a >= 0.0 && b >= 0.0);
        }
        // beyond the last centre only volume survives
        let [(k, w), _] = g.split(99.0);
        assert_eq!(k, 36);
        assert!((w * g.centers()[36] - 99.0).abs() < 1e-12);
    }

    #[test]
    fn extended_grid_shares_edges() {
        let g = Grid::new(1e-4, 1e3, 300).unwrap();
        let h = g.extended_to(2e3).unwrap();
        assert!(h.x_max() >= 2e3);
        assert_eq!(&h.edges()[..=300], g.edges());
        assert!((h.ratio() - g.ratio()).abs() < 1e-15);
    }

    #[test]
    fn exponential_moments() {
        let g = Arc::new(Grid::new(1e-8, 80.0, 600).unwrap());
        let s = sample_initial(&InitialCondition::exponential(1.0), &g).unwrap();
        assert!((s.moment(1.0) - 1.0).abs() < 1e-12);
        assert!((s.moment(0.0) - 1.0).abs() < 1e-3);
        assert!((s.moment(2.0) - 2.0).abs() < 2e-3);
    }

    #[test]
    fn zero_table_has_zero_moments() {
        let g = Arc::new(Grid::new(1e-3, 10.0, 30).unwrap());
        let ic = InitialCondition::Tabulated {
            x: vec![1e-3, 1.0, 10.0],
            f: vec![0.0, 0.0, 0.0],
            mass: None,
        };
        let s = sample_initial(&ic, &g).unwrap();
        for m in [-1.0, 0.0, 1.0, 2.0] {
            assert_eq!(s.moment(m), 0.0);
        }
    }

    #[test]
    fn power_cutoff_needs_finite_mass() {
        let g = Arc::new(Grid::new(1e-3, 10.0, 30).unwrap());
        let ic = InitialCondition::PowerCutoff {
            p: 2.0,
            x_c: 1.0,
            mass: 1.0,
        };
        assert!(matches!(
            sample_initial(&ic, &g),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn loglog_interp_reproduces_power_law() {
        let x = [1.0, 10.0, 100.0];
        let f = [1.0, 0.1, 0.01];
        assert!((loglog_interp(&x, &f, 3.0) - 1.0 / 3.0).abs() < 1e-14);
        assert_eq!(loglog_interp(&x, &f, 1000.0), 0.0);
    }
}
