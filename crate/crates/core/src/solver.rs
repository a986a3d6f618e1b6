//! Sectional discretization of the truncated equation and its time integration.
//!
//! Pairwise quantities are tabulated once per grid: the truncated kernel, the
//! coalescence probability, where a merged particle lands, and how the
//! fragments of a breakup are distributed over cells. Merged particles and
//! fragment packets are placed on the two cell centres bracketing their
//! mean volume with weights that preserve number and volume together, so the
//! discrete first moment is an exact invariant of the semi-discrete system.
//!
//! Fragment deposition is factorized. Every daughter family is a power law
//! `C z^nu` on a support `(0, u)`, so the number and volume it puts into a
//! cell lying entirely below `u` are `C` times fixed cell integrals. Sources
//! accumulate `C` into a bucket at the cell containing `u`, and a suffix sum
//! yields all full-cell deposits in `O(N)`. Only the partial cell
//! `[e_p, u]` and the piece below `x_min` need per-source data. Volume that
//! falls below `x_min` is added to the first cell at its centre, which keeps
//! the first moment exact at the price of a small number defect.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::daughter::{DaughterSpec, ProbSpec};
use crate::error::{config, Error, Result};
use crate::grid::{Grid, State};
use crate::kernels::KernelSpec;

/// How pairs whose merged volume leaves the grid are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// `K_n = min{n, K} 1_{x+y<n}`: such pairs never collide, and the
    /// discrete mass is conserved exactly.
    #[default]
    Conserving,
    /// The untruncated kernel acts on every pair of grid cells; volume
    /// created beyond `x_max` leaves the system. Used to observe gelation.
    Outflow,
}

/// Up to three `(cell, number)` deposits.
#[derive(Debug, Clone, Copy, Default)]
struct Deposit {
    len: u8,
    cells: [u32; 3],
    numbers: [f64; 3],
}

impl Deposit {
    fn push(&mut self, cell: usize, number: f64) {
        if number == 0.0 {
            return;
        }
        let k = self.len as usize;
        self.cells[k] = cell as u32;
        self.numbers[k] = number;
        self.len += 1;
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(|k| (self.cells[k] as usize, self.numbers[k]))
    }
}

/// Fragment support `(0, u)` with the pieces that depend on `u`.
#[derive(Debug, Clone, Copy)]
struct FragSource {
    /// `(nu+2) / u^{nu+1}`.
    scale: f64,
    /// First cell not entirely below `u` (`N` when `u >= x_max`).
    bucket: u32,
    /// Deposit of the partial cell and the sub-`x_min` volume per unit of
    /// the source coefficient `C`.
    partial: Deposit,
}

#[derive(Debug, Clone, Copy)]
struct PairEntry {
    i: u32,
    j: u32,
    k: f64,
    /// `(1 - E) K`.
    kb: f64,
    /// `E K dx_i dx_j`, halved on the diagonal.
    coag: f64,
    coag_to: Deposit,
    /// `(1 - E) K dx_i dx_j (nu+2)/v^{nu+1}`, halved on the diagonal (power
    /// families whose support is the merged volume).
    brk: f64,
    frag: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Support {
    /// Fragments live on `(0, x+y)`.
    Total,
    /// Fragments of each partner live on `(0, x)` and `(0, y)`.
    Each,
}

/// Precomputed pair tables for one grid, kernel, daughter and probability.
#[derive(Debug, Clone)]
pub struct OperatorTables {
    grid: Arc<Grid>,
    n_trunc: f64,
    mode: TruncationMode,
    daughter: DaughterSpec,
    nu: f64,
    support: Support,
    k_table: Vec<f64>,
    e_table: Vec<f64>,
    pairs: Vec<PairEntry>,
    /// Per-pair sources for `Support::Total`, per-cell sources for
    /// `Support::Each`.
    sources: Vec<FragSource>,
    /// `int_cell z^nu dz` for every cell.
    j0: Vec<f64>,
    /// Number-and-volume split of a full-cell fragment packet.
    full_split: Vec<Deposit>,
    breakage: bool,
}

impl OperatorTables {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n_trunc(&self) -> f64 {
        self.n_trunc
    }

    pub fn mode(&self) -> TruncationMode {
        self.mode
    }

    pub fn daughter(&self) -> &DaughterSpec {
        &self.daughter
    }

    pub fn cell_count(&self) -> usize {
        self.grid.cell_count()
    }

    /// Tabulated kernel value for cells `(i, j)`.
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        self.k_table[i * self.cell_count() + j]
    }

    /// Tabulated coalescence probability for cells `(i, j)`.
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.e_table[i * self.cell_count() + j]
    }

    /// Number-and-volume preserving placement of the merged particle
    /// `c_i + c_j`; empty when the volume leaves the grid.
    pub fn coag_target(&self, i: usize, j: usize) -> Vec<(usize, f64)> {
        let v = self.grid.centers()[i] + self.grid.centers()[j];
        coag_deposit(&self.grid, v).iter().collect()
    }

    /// `int_{cell k} b(z, c_i, c_j) dz` for every destination cell.
    pub fn fragment_weights(&self, i: usize, j: usize) -> Vec<f64> {
        let (x, y) = (self.grid.centers()[i], self.grid.centers()[j]);
        self.grid
            .edges()
            .windows(2)
            .map(|e| self.daughter.interval_integral(0.0, e[0], e[1], x, y))
            .collect()
    }

    /// Fragment numbers the scheme deposits in each cell for one breakup
    /// of `(c_i, c_j)`, after the number-and-volume split.
    pub fn fragment_deposit(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.cell_count();
        let mut out = vec![0.0; n];
        let add_source = |src: &FragSource, coef: f64, out: &mut [f64]| {
            for k in 0..(src.bucket as usize).min(n) {
                for (cell, w) in self.full_split[k].iter() {
                    out[cell] += coef * src.scale * self.j0[k] * w;
                }
            }
            for (cell, w) in src.partial.iter() {
                out[cell] += coef * src.scale * w;
            }
        };
        match self.support {
            Support::Total => {
                let c = self.grid.centers();
                let src = frag_source(&self.grid, self.nu, c[i] + c[j], self.mode);
                add_source(&src, 1.0, &mut out);
            }
            Support::Each => {
                add_source(&self.sources[i], 1.0, &mut out);
                add_source(&self.sources[j], 1.0, &mut out);
            }
        }
        out
    }

    /// Whether any pair breaks up.
    pub fn has_breakage(&self) -> bool {
        self.breakage
    }
}

fn coag_deposit(grid: &Grid, v: f64) -> Deposit {
    let mut d = Deposit::default();
    if v >= grid.x_max() {
        return d;
    }
    for (cell, w) in grid.split(v) {
        d.push(cell, w);
    }
    d
}

/// `int_lo^hi z^{e-1} dz`.
fn power_integral(e: f64, lo: f64, hi: f64) -> f64 {
    let l = (hi / lo).ln();
    if e == 0.0 {
        l
    } else {
        lo.powf(e) * (e * l).exp_m1() / e
    }
}

/// Places a fragment packet of number `n` and volume `m` on the grid.
fn packet(grid: &Grid, n: f64, m: f64, d: &mut Deposit) {
    if !(n > 0.0) {
        return;
    }
    for (cell, w) in grid.split(m / n) {
        d.push(cell, n * w);
    }
}

fn frag_source(grid: &Grid, nu: f64, u: f64, mode: TruncationMode) -> FragSource {
    let n = grid.cell_count();
    let x_min = grid.x_min();
    let mut partial = Deposit::default();
    let bucket = match grid.cell_of(u) {
        Some(p) => {
            let lo = grid.edges()[p];
            if u > lo {
                packet(
                    grid,
                    power_integral(nu + 1.0, lo, u),
                    power_integral(nu + 2.0, lo, u),
                    &mut partial,
                );
            }
            p
        }
        None => {
            // u >= x_max: only reachable in outflow mode, the part above
            // x_max leaves the system
            debug_assert!(u >= grid.x_max());
            let _ = mode;
            n
        }
    };
    // volume below x_min, placed at the first centre
    let m0 = x_min.powf(nu + 2.0) / (nu + 2.0);
    partial.push(0, m0 / grid.centers()[0]);
    FragSource {
        scale: (nu + 2.0) / u.powf(nu + 1.0),
        bucket: bucket as u32,
        partial,
    }
}

/// Tabulates the operators on `grid`.
///
/// `n_trunc` plays the role of the truncation level and must not exceed
/// `x_max`; in [`TruncationMode::Outflow`] it is ignored.
pub fn build_tables(
    grid: &Arc<Grid>,
    kernel: &KernelSpec,
    n_trunc: f64,
    daughter: &DaughterSpec,
    prob: &ProbSpec,
    mode: TruncationMode,
) -> Result<OperatorTables> {
    daughter.validate()?;
    prob.validate()?;
    if matches!(daughter, DaughterSpec::PowerEach { .. }) && kernel.declared_alpha > 0.0 {
        return Err(config(format!(
            "daughter.family: power_each is only admissible with a kernel of alpha = 0 (kernel {} declares alpha = {})",
            kernel.family.name(),
            kernel.declared_alpha
        )));
    }
    if !(n_trunc > 0.0) || n_trunc > grid.x_max() * (1.0 + 1e-12) {
        return Err(config(format!(
            "n_trunc must lie in (0, x_max = {}], got {n_trunc}",
            grid.x_max()
        )));
    }
    let n = grid.cell_count();
    let c = grid.centers();
    let dx = grid.widths();
    let nu = daughter.nu();
    let support = match daughter {
        DaughterSpec::PowerEach { .. } => Support::Each,
        _ => Support::Total,
    };
    let mut k_table = vec![0.0; n * n];
    let mut e_table = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = c[i] + c[j];
            let k = match mode {
                TruncationMode::Conserving => {
                    if v < n_trunc {
                        kernel.eval(c[i], c[j])?.min(n_trunc)
                    } else {
                        0.0
                    }
                }
                TruncationMode::Outflow => kernel.eval(c[i], c[j])?,
            };
            if !(k >= 0.0) || !k.is_finite() {
                return Err(Error::Domain(format!(
                    "kernel value {k} at ({}, {}) is not a finite non-negative rate",
                    c[i], c[j]
                )));
            }
            let e = prob.eval(c[i], c[j])?;
            k_table[i * n + j] = k;
            k_table[j * n + i] = k;
            e_table[i * n + j] = e;
            e_table[j * n + i] = e;
        }
    }

    let j0: Vec<f64> = grid
        .edges()
        .windows(2)
        .map(|w| power_integral(nu + 1.0, w[0], w[1]))
        .collect();
    let full_split: Vec<Deposit> = grid
        .edges()
        .windows(2)
        .map(|w| {
            let mut d = Deposit::default();
            packet(
                grid,
                power_integral(nu + 1.0, w[0], w[1]),
                power_integral(nu + 2.0, w[0], w[1]),
                &mut d,
            );
            // per unit of the cell's number integral
            let total = power_integral(nu + 1.0, w[0], w[1]);
            for x in d.numbers.iter_mut() {
                *x /= total;
            }
            d
        })
        .collect();

    let mut pairs = Vec::new();
    let mut sources = Vec::new();
    let mut breakage = false;
    if support == Support::Each {
        sources = c.iter().map(|&ci| frag_source(grid, nu, ci, mode)).collect();
    }
    for i in 0..n {
        for j in i..n {
            let k = k_table[i * n + j];
            if k == 0.0 {
                continue;
            }
            let e = e_table[i * n + j];
            let v = c[i] + c[j];
            let half = if i == j { 0.5 } else { 1.0 };
            let kb = (1.0 - e) * k;
            breakage |= kb > 0.0;
            let mut entry = PairEntry {
                i: i as u32,
                j: j as u32,
                k,
                kb,
                coag: half * e * k * dx[i] * dx[j],
                coag_to: coag_deposit(grid, v),
                brk: 0.0,
                frag: 0,
            };
            if support == Support::Total && kb > 0.0 {
                let src = frag_source(grid, nu, v, mode);
                entry.brk = half * kb * dx[i] * dx[j] * src.scale;
                entry.frag = sources.len() as u32;
                sources.push(src);
            }
            pairs.push(entry);
        }
    }

    Ok(OperatorTables {
        grid: grid.clone(),
        n_trunc,
        mode,
        daughter: *daughter,
        nu,
        support,
        k_table,
        e_table,
        pairs,
        sources,
        j0,
        full_split,
        breakage,
    })
}

/// Reusable buffers for right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    gain: Vec<f64>,
    rate: Vec<f64>,
    brk_rate: Vec<f64>,
    bucket: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Workspace {
            gain: vec![0.0; n],
            rate: vec![0.0; n],
            brk_rate: vec![0.0; n],
            bucket: vec![0.0; n + 1],
        }
    }
}

impl OperatorTables {
    /// Writes `df/dt` into `out` and returns the largest collision rate
    /// `max_i sum_j K_ij f_j dx_j`.
    pub fn rhs_into(&self, f: &[f64], out: &mut [f64], ws: &mut Workspace) -> f64 {
        let n = self.cell_count();
        let dx = self.grid.widths();
        ws.gain.iter_mut().for_each(|x| *x = 0.0);
        ws.rate.iter_mut().for_each(|x| *x = 0.0);
        ws.brk_rate.iter_mut().for_each(|x| *x = 0.0);
        ws.bucket.iter_mut().for_each(|x| *x = 0.0);

        for p in &self.pairs {
            let (i, j) = (p.i as usize, p.j as usize);
            let (fi, fj) = (f[i], f[j]);
            if fi == 0.0 && fj == 0.0 {
                continue;
            }
            ws.rate[i] += p.k * fj * dx[j];
            if i != j {
                ws.rate[j] += p.k * fi * dx[i];
            }
            let w = fi * fj;
            if w == 0.0 {
                continue;
            }
            let cw = p.coag * w;
            for (cell, x) in p.coag_to.iter() {
                ws.gain[cell] += cw * x;
            }
            match self.support {
                Support::Total => {
                    if p.brk > 0.0 {
                        let bw = p.brk * w;
                        let src = &self.sources[p.frag as usize];
                        ws.bucket[src.bucket as usize] += bw;
                        for (cell, x) in src.partial.iter() {
                            ws.gain[cell] += bw * x;
                        }
                    }
                }
                Support::Each => {
                    if p.kb > 0.0 {
                        ws.brk_rate[i] += p.kb * fj * dx[j];
                        if i != j {
                            ws.brk_rate[j] += p.kb * fi * dx[i];
                        }
                    }
                }
            }
        }

        if self.support == Support::Each {
            for (i, src) in self.sources.iter().enumerate() {
                let g = f[i] * dx[i] * ws.brk_rate[i] * src.scale;
                if g == 0.0 {
                    continue;
                }
                ws.bucket[src.bucket as usize] += g;
                for (cell, x) in src.partial.iter() {
                    ws.gain[cell] += g * x;
                }
            }
        }

        if self.breakage {
            // T_k = sum of coefficients of sources whose support covers cell k
            let mut tail = 0.0;
            for k in (0..n).rev() {
                tail += ws.bucket[k + 1];
                if tail != 0.0 {
                    let num = tail * self.j0[k];
                    for (cell, x) in self.full_split[k].iter() {
                        ws.gain[cell] += num * x;
                    }
                }
            }
        }

        let mut max_rate: f64 = 0.0;
        for k in 0..n {
            out[k] = ws.gain[k] / dx[k] - f[k] * ws.rate[k];
            max_rate = max_rate.max(ws.rate[k]);
        }
        max_rate
    }

    /// Largest collision rate for density `f`.
    pub fn max_rate(&self, f: &[f64]) -> f64 {
        let n = self.cell_count();
        let dx = self.grid.widths();
        let mut rate = vec![0.0; n];
        for p in &self.pairs {
            let (i, j) = (p.i as usize, p.j as usize);
            rate[i] += p.k * f[j] * dx[j];
            if i != j {
                rate[j] += p.k * f[i] * dx[i];
            }
        }
        rate.into_iter().fold(0.0, f64::max)
    }
}

/// `df/dt` at `state`.
pub fn apply_rhs(tables: &OperatorTables, state: &State) -> Vec<f64> {
    let mut out = vec![0.0; tables.cell_count()];
    let mut ws = Workspace::new(tables.cell_count());
    tables.rhs_into(state.density(), &mut out, &mut ws);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with a rate-limited step.
    Rk4,
    /// Embedded Euler/Heun pair with error control.
    HeunAdaptive,
}

/// Time-stepping parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepControl {
    pub method: Method,
    /// Upper bound on the step (the fixed step for `Rk4` unless the rate
    /// limit is smaller).
    pub dt_max: f64,
    pub dt_min: f64,
    pub rtol: f64,
    /// Absolute tolerance relative to the initial mass.
    pub atol_rel: f64,
    /// Steps satisfy `dt * max collision rate <= cfl`.
    pub cfl: f64,
    /// Accepted steps may clip at most this fraction of the mass.
    pub clip_tol: f64,
    pub t_end: f64,
    /// Ascending output times in `(0, t_end]`; `t = 0` is always recorded.
    pub output_times: Vec<f64>,
}

impl StepControl {
    pub fn new(method: Method, t_end: f64) -> Self {
        StepControl {
            method,
            dt_max: match method {
                Method::Rk4 => 1e-2,
                Method::HeunAdaptive => 0.1,
            },
            dt_min: 1e-12,
            rtol: 1e-6,
            atol_rel: 1e-12,
            cfl: 0.9,
            clip_tol: 1e-10,
            t_end,
            output_times: vec![t_end],
        }
    }

    pub fn with_outputs_every(mut self, every: f64) -> Self {
        self.output_times = uniform_times(self.t_end, every);
        self
    }

    pub fn with_dt_max(mut self, dt: f64) -> Self {
        self.dt_max = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(config(format!("control.t_end must be positive, got {}", self.t_end)));
        }
        if !(self.dt_min > 0.0) || !(self.dt_max >= self.dt_min) {
            return Err(config(format!(
                "control.dt_min/dt_max must satisfy 0 < dt_min <= dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.rtol > 0.0) || !(self.atol_rel > 0.0) {
            return Err(config("control.rtol and control.atol must be positive"));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(config(format!("control.cfl must lie in (0, 1], got {}", self.cfl)));
        }
        let mut prev = 0.0;
        for &t in &self.output_times {
            if !(t > prev) || t > self.t_end * (1.0 + 1e-12) {
                return Err(config(
                    "control.output_times must be strictly increasing within (0, t_end]",
                ));
            }
            prev = t;
        }
        Ok(())
    }
}

/// `every, 2 every, ..., t_end` (the last point is `t_end` exactly).
pub fn uniform_times(t_end: f64, every: f64) -> Vec<f64> {
    let count = (t_end / every - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (1..count).map(|k| k as f64 * every).collect();
    times.push(t_end);
    times
}

/// Counters gathered while integrating.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Total volume removed by clipping negative values.
    pub clipped_mass: f64,
    /// Largest clipped volume in one step relative to the mass at that step.
    pub max_clip_fraction: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// States at the requested output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Arc<Grid>,
    pub states: Vec<State>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(State::time).collect()
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }
}

/// One attempted step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub density: Vec<f64>,
    /// Volume removed by clipping.
    pub clipped_mass: f64,
    /// Weighted error estimate (adaptive method only; `0` for `Rk4`).
    pub error: f64,
}

struct Stepper<'a> {
    tables: &'a OperatorTables,
    ws: Workspace,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    weight: Vec<f64>,
    evals: usize,
}

impl<'a> Stepper<'a> {
    fn new(tables: &'a OperatorTables) -> Self {
        let n = tables.cell_count();
        let weight = tables
            .grid()
            .centers()
            .iter()
            .zip(tables.grid().widths())
            .map(|(c, d)| c * d)
            .collect();
        Stepper {
            tables,
            ws: Workspace::new(n),
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
            weight,
            evals: 0,
        }
    }

    fn eval(&mut self, f: &[f64], slot: usize) -> f64 {
        self.evals += 1;
        let mut out = std::mem::take(&mut self.k[slot]);
        let r = self.tables.rhs_into(f, &mut out, &mut self.ws);
        self.k[slot] = out;
        r
    }

    /// Assumes `k[0]` holds the derivative at `f`.
    fn rk4(&mut self, f: &[f64], dt: f64) -> Vec<f64> {
        let n = f.len();
        for i in 0..n {
            self.tmp[i] = f[i] + 0.5 * dt * self.k[0][i];
        }
        let tmp = std::mem::take(&mut self.tmp);
        self.eval(&tmp, 1);
        let mut tmp = tmp;
        for i in 0..n {
            tmp[i] = f[i] + 0.5 * dt * self.k[1][i];
        }
        self.eval(&tmp, 2);
        for i in 0..n {
            tmp[i] = f[i] + dt * self.k[2][i];
        }
        self.eval(&tmp, 3);
        self.tmp = tmp;
        (0..n)
            .map(|i| {
                f[i] + dt / 6.0
                    * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i])
            })
            .collect()
    }

    /// Assumes `k[0]` holds the derivative at `f`. Returns the Heun
    /// solution and the weighted error norm.
    fn heun(&mut self, f: &[f64], dt: f64, atol: f64, rtol: f64) -> (Vec<f64>, f64) {
        let n = f.len();
        let mut euler = std::mem::take(&mut self.tmp);
        for i in 0..n {
            euler[i] = f[i] + dt * self.k[0][i];
        }
        self.eval(&euler, 1);
        let mut err: f64 = 0.0;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let y = f[i] + 0.5 * dt * (self.k[0][i] + self.k[1][i]);
                let e = 0.5 * dt * (self.k[1][i] - self.k[0][i]);
                let w = self.weight[i];
                let scale = atol + rtol * (y.abs().max(f[i].abs()) * w);
                err = err.max((e * w).abs() / scale);
                y
            })
            .collect();
        self.tmp = euler;
        (next, err)
    }
}

/// Sets negative entries to zero and returns the removed volume.
fn clip(f: &mut [f64], weight: &[f64]) -> f64 {
    let mut removed = 0.0;
    for (x, w) in f.iter_mut().zip(weight) {
        if *x < 0.0 {
            removed += -*x * w;
            *x = 0.0;
        }
    }
    removed
}

/// Advances `state` by one step of size `dt` without step-size control.
pub fn step(tables: &OperatorTables, state: &State, dt: f64, method: Method) -> StepOutcome {
    let mut st = Stepper::new(tables);
    let f = state.density();
    st.eval(f, 0);
    let (mut next, error) = match method {
        Method::Rk4 => (st.rk4(f, dt), 0.0),
        Method::HeunAdaptive => {
            let atol = 1e-12 * state.mass().max(f64::MIN_POSITIVE);
            st.heun(f, dt, atol, 1e-6)
        }
    };
    let clipped_mass = clip(&mut next, &st.weight);
    StepOutcome {
        density: next,
        clipped_mass,
        error,
    }
}

/// Integrates from `initial` to `control.t_end`, recording the state at
/// `t = 0` and at every output time.
pub fn integrate(tables: &OperatorTables, initial: &State, control: &StepControl) -> Result<Trajectory> {
    control.validate()?;
    if initial.grid().as_ref() != tables.grid().as_ref() {
        return Err(config("initial state and operator tables use different grids"));
    }
    let grid = tables.grid().clone();
    let mut st = Stepper::new(tables);
    let mut f = initial.density().to_vec();
    let mut t = initial.time();
    let mass0 = initial.mass();
    let atol = control.atol_rel * mass0.max(f64::MIN_POSITIVE);
    let mut stats = StepStats {
        min_dt: f64::INFINITY,
        ..StepStats::default()
    };
    let mut states = vec![State::from_parts_unchecked(grid.clone(), f.clone(), t)];
    let t_start = t;
    let mut outputs = control
        .output_times
        .iter()
        .copied()
        .filter(|&s| s > t_start)
        .peekable();
    let mut dt = control.dt_max;
    let mut rate = st.eval(&f, 0);

    while let Some(&target) = outputs.peek() {
        let mut limit = control.dt_max;
        if rate > 0.0 {
            limit = limit.min(control.cfl / rate);
        }
        let mut h = match control.method {
            Method::Rk4 => limit,
            Method::HeunAdaptive => dt.min(limit),
        };
        let remaining = target - t;
        let lands = h >= remaining * (1.0 - 1e-12);
        if lands {
            h = remaining;
        } else if h > 0.5 * remaining {
            // avoid a sliver step before the output time
            h = 0.5 * remaining;
        }
        if h < control.dt_min {
            return Err(Error::Integration {
                time: t,
                dt: h,
                reason: "step size fell below dt_min".into(),
            });
        }

        let (mut next, err) = match control.method {
            Method::Rk4 => (st.rk4(&f, h), 0.0),
            Method::HeunAdaptive => st.heun(&f, h, atol, control.rtol),
        };
        let finite = next.iter().all(|x| x.is_finite());
        let mass_now: f64 = f.iter().zip(&st.weight).map(|(x, w)| x * w).sum();
        let clipped = if finite { clip(&mut next, &st.weight) } else { f64::INFINITY };
        let clip_frac = if mass_now > 0.0 { clipped / mass_now } else { 0.0 };
        let reject = !finite || clip_frac > control.clip_tol || err > 1.0;
        if reject {
            stats.rejected += 1;
            dt = if err > 1.0 && finite {
                h * (0.9 * err.powf(-0.5)).clamp(0.2, 0.5)
            } else {
                0.5 * h
            };
            if dt < control.dt_min {
                return Err(Error::Integration {
                    time: t,
                    dt,
                    reason: if !finite {
                        "non-finite density".into()
                    } else if clip_frac > control.clip_tol {
                        format!("clipped mass fraction {clip_frac:e} exceeds tolerance")
                    } else {
                        format!("error estimate {err:e} not reducible")
                    },
                });
            }
            continue;
        }

        stats.accepted += 1;
        stats.clipped_mass += clipped;
        stats.max_clip_fraction = stats.max_clip_fraction.max(clip_frac);
        stats.min_dt = stats.min_dt.min(h);
        stats.max_dt = stats.max_dt.max(h);
        if control.method == Method::HeunAdaptive && !lands {
            let grow = if err > 0.0 { (0.9 * err.powf(-0.5)).clamp(0.2, 5.0) } else { 5.0 };
            dt = (h * grow).min(control.dt_max);
        }
        f = next;
        t = if lands { target } else { t + h };
        rate = st.eval(&f, 0);
        if lands {
            states.push(State::from_parts_unchecked(grid.clone(), f.clone(), t));
            outputs.next();
        }
    }
    stats.rhs_evals = st.evals;
    if stats.min_dt == f64::INFINITY {
        stats.min_dt = 0.0;
    }
    Ok(Trajectory {
        grid,
        states,
        stats,
    })
}

/// Test functions for the weak formulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    One,
    Identity,
    /// `min{x, 1}`.
    MinOne,
    /// Indicator of `(a, b)`.
    Indicator { a: f64, b: f64 },
    Power { m: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::One => 1.0,
            TestFunction::Identity => x,
            TestFunction::MinOne => x.min(1.0),
            TestFunction::Indicator { a, b } => {
                if x > a && x < b {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Power { m } => x.powf(m),
        }
    }

    /// `int_0^{x+y} phi(z) b(z, x, y) dz`.
    pub fn fragment_integral(&self, b: &DaughterSpec, x: f64, y: f64) -> Result<f64> {
        let v = x + y;
        match *self {
            TestFunction::One => b.moment_integral(0.0, x, y),
            TestFunction::Identity => Ok(v),
            TestFunction::MinOne => {
                let below = b.partial_moment_integral(1.0, v.min(1.0), x, y)?;
                let above = if v > 1.0 {
                    b.interval_integral(0.0, 1.0, v, x, y)
                } else {
                    0.0
                };
                Ok(below + above)
            }
            TestFunction::Indicator { a, b: hi } => {
                if a <= 0.0 {
                    b.partial_moment_integral(0.0, hi.min(v), x, y)
                } else {
                    Ok(b.interval_integral(0.0, a, hi, x, y))
                }
            }
            TestFunction::Power { m } => b.moment_integral(m, x, y),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TestFunction::One => "1".into(),
            TestFunction::Identity => "x".into(),
            TestFunction::MinOne => "min(x,1)".into(),
            TestFunction::Indicator { a, b } => format!("1_({a},{b})"),
            TestFunction::Power { m } => format!("x^{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualInterval {
    pub t0: f64,
    pub t1: f64,
    /// Change of `sum phi(c_i) f_i dx_i` over the interval.
    pub change: f64,
    /// Trapezoidal time integral of the collision term.
    pub flux_integral: f64,
    pub absolute: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakResidual {
    pub phi: TestFunction,
    pub intervals: Vec<ResidualInterval>,
    pub max_absolute: f64,
    pub max_relative: f64,
}

/// `1/2 sum_ij zeta_phi(c_i, c_j) K_ij f_i f_j dx_i dx_j` at one state.
fn weak_flux(tables: &OperatorTables, zeta: &[f64], f: &[f64]) -> f64 {
    let n = tables.cell_count();
    let dx = tables.grid().widths();
    let mut sum = 0.0;
    for i in 0..n {
        if f[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += zeta[i * n + j] * tables.k_table[i * n + j] * f[j] * dx[j];
        }
        sum += f[i] * dx[i] * row;
    }
    0.5 * sum
}

/// Compares the change of `int phi f` over each output interval with the
/// time integral of the collision term evaluated with the continuous
/// `zeta_phi = E phi(x+y) + (1-E) int phi b - phi(x) - phi(y)`.
///
/// The relative residual divides by the larger of the two sides; when both
/// sides are below `1e-12 |int phi f|` the quantity is conserved up to noise
/// and the residual is taken relative to `|int phi f|` instead.
pub fn weak_form_residual(
    tables: &OperatorTables,
    trajectory: &Trajectory,
    phi: TestFunction,
) -> Result<WeakResidual> {
    if trajectory.states.len() < 3 {
        return Err(config("weak-form residual needs at least three output times"));
    }
    let n = tables.cell_count();
    let c = tables.grid().centers();
    let mut zeta = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            if tables.k_table[i * n + j] == 0.0 {
                continue;
            }
            let e = tables.e_table[i * n + j];
            let v = c[i] + c[j];
            let frag = if e < 1.0 {
                phi.fragment_integral(&tables.daughter, c[i], c[j])?
            } else {
                0.0
            };
            let z = e * phi.eval(v) + (1.0 - e) * frag - phi.eval(c[i]) - phi.eval(c[j]);
            zeta[i * n + j] = z;
            zeta[j * n + i] = z;
        }
    }
    let grid = tables.grid();
    let totals: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| grid.integrate_with(s.density(), |x| phi.eval(x)))
        .collect();
    let fluxes: Vec<f64> = trajectory
        .states
        .iter()
        .map(|s| weak_flux(tables, &zeta, s.density()))
        .collect();
    let mut intervals = Vec::new();
    for k in 1..trajectory.states.len() {
        let t0 = trajectory.states[k - 1].time();
        let t1 = trajectory.states[k].time();
        let change = totals[k] - totals[k - 1];
        let flux_integral = 0.5 * (t1 - t0) * (fluxes[k] + fluxes[k - 1]);
        let absolute = (change - flux_integral).abs();
        let larger = change.abs().max(flux_integral.abs());
        let magnitude = totals[k - 1].abs().max(totals[k].abs());
        let denom = if larger > 1e-12 * magnitude { larger } else { magnitude };
        let relative = if denom > 0.0 { absolute / denom } else { 0.0 };
        intervals.push(ResidualInterval {
            t0,
            t1,
            change,
            flux_integral,
            absolute,
            relative,
        });
    }
    let max_absolute = intervals.iter().map(|r| r.absolute).fold(0.0, f64::max);
    let max_relative = intervals.iter().map(|r| r.relative).fold(0.0, f64::max);
    Ok(WeakResidual {
        phi,
        intervals,
        max_absolute,
        max_relative,
    })
}
