use nalgebra::{Cholesky, DMatrix};

use super::kernel::{Csr, Propagator, SplitGenerator};
use super::series::{Column, Snapshot, TimeSeries};
use super::{MasterEquation, Observable, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, HilbertLayout, C64};

/// Largest allowed `h · stiffness` for one integrator step.
pub const DEFAULT_STEP_BUDGET: f64 = 0.25;

const TRACE_TOL: f64 = 1e-7;
const HERMITIAN_TOL: f64 = 1e-8;
const POSITIVITY_TOL: f64 = 1e-7;

/// Which full states [`evolve`] keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotPolicy {
    None,
    Final,
    All,
}

#[derive(Clone, Debug)]
pub struct EvolveOptions {
    /// Budget for `h · stiffness`.
    pub step_budget: f64,
    /// Integrator steps per output interval; derived from the budget when `None`.
    pub substeps: Option<usize>,
    /// Number of evenly spread samples whose positivity is verified (the last
    /// sample is always checked when this is non-zero).
    pub positivity_checks: usize,
    pub snapshots: SnapshotPolicy,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            step_budget: DEFAULT_STEP_BUDGET,
            substeps: None,
            positivity_checks: 8,
            snapshots: SnapshotPolicy::Final,
        }
    }
}

/// Stiffness scale used by the step rule: Gershgorin bound of the
/// off-diagonal Hamiltonian plus Σ γ‖c†c‖ over jumps not solved in closed form.
pub fn stiffness(eq: &MasterEquation) -> f64 {
    SplitGenerator::new(eq).stiffness()
}

pub(crate) fn substeps_for(
    interval: f64,
    stiffness: f64,
    budget: f64,
    requested: Option<usize>,
) -> Result<usize> {
    if !(budget > 0.0) {
        return Err(Error::InvalidParameter { name: "step_budget", requirement: "> 0", value: budget });
    }
    let m = match requested {
        Some(0) => return Err(Error::InvalidGrid("substeps must be positive".into())),
        Some(m) => m,
        None => ((interval * stiffness / budget).ceil() as usize).max(1),
    };
    let product = interval / m as f64 * stiffness;
    if product > budget * (1.0 + 1e-12) {
        return Err(Error::StepRule { product, budget });
    }
    Ok(m)
}

pub(crate) fn check_invariants(x: &[C64], d: usize, time: f64, positivity: bool) -> Result<()> {
    let mut tr = C64::new(0.0, 0.0);
    for i in 0..d {
        tr += x[i * d + i];
    }
    if (tr - 1.0).norm() > TRACE_TOL {
        return Err(Error::InvariantBroken { time, detail: format!("trace drifted to {tr}") });
    }
    let mut herm: f64 = 0.0;
    for j in 0..d {
        for i in 0..j {
            herm = herm.max((x[j * d + i] - x[i * d + j].conj()).norm());
        }
    }
    if herm > HERMITIAN_TOL {
        return Err(Error::InvariantBroken { time, detail: format!("Hermiticity error {herm:e}") });
    }
    if positivity {
        let m = DMatrix::from_fn(d, d, |i, j| {
            let v = 0.5 * (x[j * d + i] + x[i * d + j].conj());
            if i == j {
                v + POSITIVITY_TOL
            } else {
                v
            }
        });
        if Cholesky::new(m).is_none() {
            return Err(Error::InvariantBroken {
                time,
                detail: format!("eigenvalue below -{POSITIVITY_TOL:e}"),
            });
        }
    }
    Ok(())
}

fn positivity_due(k: usize, intervals: usize, checks: usize) -> bool {
    if checks == 0 {
        return false;
    }
    if k == intervals || checks >= intervals {
        return true;
    }
    k > 0 && (k * checks) / intervals != ((k - 1) * checks) / intervals
}

/// Propagates `rho0` on `grid`, recording `Tr(ρ·O)` for every observable.
///
/// Hermitian observables produce one column; others produce `name.re` and
/// `name.im`. Trace and Hermiticity are verified at every sample; the run
/// aborts on violation.
pub fn evolve(
    rho0: &DensityMatrix,
    eq: &MasterEquation,
    grid: &TimeGrid,
    observables: &[Observable],
    opts: &EvolveOptions,
) -> Result<TimeSeries> {
    let layout = eq.hamiltonian().layout();
    if rho0.layout() != layout || observables.iter().any(|o| o.op.layout() != layout) {
        return Err(Error::LayoutMismatch);
    }
    let gen = SplitGenerator::new(eq);
    let m = substeps_for(grid.spacing(), gen.stiffness(), opts.step_budget, opts.substeps)?;
    let mut prop = Propagator::new(&gen, grid.spacing() / m as f64);
    evolve_with(rho0.matrix().as_slice().to_vec(), layout, grid, observables, opts, |u, _| {
        prop.advance(u, m);
        Ok(())
    })
}

/// [`evolve`] under a generator that is constant on consecutive blocks of
/// `intervals_per_segment` grid intervals; `segment(k)` builds the equation
/// of block `k`. `stiffness` must bound every segment's stiffness.
pub(crate) fn evolve_piecewise(
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    intervals_per_segment: usize,
    stiffness: f64,
    mut segment: impl FnMut(usize) -> Result<MasterEquation>,
    observables: &[Observable],
    opts: &EvolveOptions,
) -> Result<TimeSeries> {
    if intervals_per_segment == 0 {
        return Err(Error::InvalidGrid("segments must span at least one interval".into()));
    }
    let layout = rho0.layout();
    if observables.iter().any(|o| o.op.layout() != layout) {
        return Err(Error::LayoutMismatch);
    }
    let m = substeps_for(grid.spacing(), stiffness, opts.step_budget, opts.substeps)?;
    let h = grid.spacing() / m as f64;
    let mut current: Option<(usize, SplitGenerator)> = None;
    evolve_with(rho0.matrix().as_slice().to_vec(), layout, grid, observables, opts, |u, k| {
        let block = (k - 1) / intervals_per_segment;
        if current.as_ref().is_none_or(|(b, _)| *b != block) {
            let eq = segment(block)?;
            if eq.hamiltonian().layout() != layout {
                return Err(Error::LayoutMismatch);
            }
            current = Some((block, SplitGenerator::new(&eq)));
        }
        let gen = &current.as_ref().expect("generator built above").1;
        Propagator::new(gen, h).advance(u, m);
        Ok(())
    })
}

pub(crate) fn evolve_with(
    mut u: Vec<C64>,
    layout: &HilbertLayout,
    grid: &TimeGrid,
    observables: &[Observable],
    opts: &EvolveOptions,
    mut advance: impl FnMut(&mut [C64], usize) -> Result<()>,
) -> Result<TimeSeries> {
    let d = layout.dim();
    let obs: Vec<(Csr, bool)> = observables
        .iter()
        .map(|o| (Csr::from_dense(o.op.matrix()), o.op.is_hermitian(1e-12)))
        .collect();
    let mut columns: Vec<Column> = Vec::new();
    for (o, &(_, herm)) in observables.iter().zip(&obs) {
        if herm {
            columns.push(Column::new(o.name.clone(), o.unit.clone(), Vec::new()));
        } else {
            columns.push(Column::new(format!("{}.re", o.name), o.unit.clone(), Vec::new()));
            columns.push(Column::new(format!("{}.im", o.name), o.unit.clone(), Vec::new()));
        }
    }
    let times = grid.times();
    let mut snapshots = Vec::new();
    let to_state = |u: &[C64]| {
        DensityMatrix::from_matrix_unchecked(layout.clone(), DMatrix::from_column_slice(d, d, u))
    };

    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            advance(&mut u, k)?;
        }
        check_invariants(&u, d, t, positivity_due(k, grid.intervals, opts.positivity_checks))?;
        let mut col = 0;
        for (csr, herm) in &obs {
            let v = csr.trace_with(&u);
            columns[col].values.push(v.re);
            col += 1;
            if !herm {
                columns[col].values.push(v.im);
                col += 1;
            }
        }
        let keep = match opts.snapshots {
            SnapshotPolicy::None => false,
            SnapshotPolicy::Final => k == grid.intervals,
            SnapshotPolicy::All => true,
        };
        if keep {
            snapshots.push(Snapshot { time: t, state: to_state(&u) });
        }
    }
    Ok(TimeSeries::new(times, columns)?.with_snapshots(snapshots))
}

#[derive(Clone, Debug)]
pub struct SteadyStateOptions {
    /// Convergence threshold on `‖ρ(2t) − ρ(t)‖_max`.
    pub change_tol: f64,
    /// Required bound on `‖L(ρ)‖_max`.
    pub residual_tol: f64,
    /// First checkpoint; defaults to the inverse of the total dissipation rate.
    pub t_initial: Option<f64>,
    /// Give up after this much simulated time; defaults to 1e6 × `t_initial`.
    pub t_max: Option<f64>,
    pub step_budget: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            change_tol: 1e-10,
            residual_tol: 1e-9,
            t_initial: None,
            t_max: None,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

/// Long-time propagation from `rho_guess` with geometric checkpoints
/// `t, 2t, 4t, …` until successive checkpoints agree and the generator
/// residual is small.
pub fn steady_state(
    eq: &MasterEquation,
    rho_guess: &DensityMatrix,
    opts: &SteadyStateOptions,
) -> Result<DensityMatrix> {
    let layout = eq.hamiltonian().layout();
    if rho_guess.layout() != layout {
        return Err(Error::LayoutMismatch);
    }
    let total_rate: f64 = eq.dissipators().iter().map(|d| d.rate()).sum();
    if total_rate == 0.0 {
        return Err(Error::NoDissipators);
    }
    let d = layout.dim();
    let gen = SplitGenerator::new(eq);
    let t0 = opts.t_initial.unwrap_or(1.0 / total_rate);
    let t_max = opts.t_max.unwrap_or(1e6 * t0);

    let mut u = rho_guess.matrix().as_slice().to_vec();
    let mut prev = u.clone();
    let mut resid_buf = vec![C64::new(0.0, 0.0); u.len()];
    let mut t = 0.0;
    let mut chunk = t0;
    loop {
        let m = substeps_for(chunk, gen.stiffness(), opts.step_budget, None)?;
        let mut prop = Propagator::new(&gen, chunk / m as f64);
        prop.advance(&mut u, m);
        t += chunk;
        check_invariants(&u, d, t, true)?;
        let change = u.iter().zip(&prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        gen.apply_full(&u, &mut resid_buf);
        let residual = resid_buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if change < opts.change_tol && residual < opts.residual_tol {
            return DensityMatrix::new(crate::hilbert::Operator::new(
                layout.clone(),
                DMatrix::from_column_slice(d, d, &u),
            )?);
        }
        if t >= t_max {
            return Err(Error::SteadyStateNotConverged { time: t, residual });
        }
        prev.copy_from_slice(&u);
        chunk = t;
    }
}
