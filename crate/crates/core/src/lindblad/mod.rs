//! Lindblad master equations: construction, propagation and steady states.
//!
//! Rates and frequencies are angular (ħ = 1).

mod evolve;
mod kernel;
mod series;

pub use evolve::{
    evolve, steady_state, stiffness, EvolveOptions, SnapshotPolicy, SteadyStateOptions,
    DEFAULT_STEP_BUDGET,
};
pub use series::{Column, Snapshot, TimeSeries};
pub(crate) use evolve::evolve_piecewise;

use kernel::SplitGenerator;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, Operator};

const HAMILTONIAN_HERMITIAN_TOL: f64 = 1e-10;

/// A collapse operator with its rate.
#[derive(Clone, Debug)]
pub struct Dissipator {
    jump: Operator,
    rate: f64,
}

impl Dissipator {
    pub fn new(jump: Operator, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter {
                name: "rate",
                requirement: "finite and >= 0",
                value: rate,
            });
        }
        Ok(Self { jump, rate })
    }

    pub fn jump(&self) -> &Operator {
        &self.jump
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// `dρ/dt = −i[H, ρ] + Σ γ (cρc† − ½{c†c, ρ})`.
#[derive(Clone, Debug)]
pub struct MasterEquation {
    hamiltonian: Operator,
    dissipators: Vec<Dissipator>,
}

impl MasterEquation {
    pub fn new(hamiltonian: Operator, dissipators: Vec<Dissipator>) -> Result<Self> {
        let herm = hamiltonian.hermiticity_error();
        if herm > HAMILTONIAN_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("Hamiltonian not Hermitian ({herm:e})")));
        }
        if dissipators.iter().any(|d| d.jump.layout() != hamiltonian.layout()) {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self { hamiltonian, dissipators })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn dissipators(&self) -> &[Dissipator] {
        &self.dissipators
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Applies the full generator to `rho`.
    pub fn generator(&self, rho: &DensityMatrix) -> Result<Operator> {
        if rho.layout() != self.hamiltonian.layout() {
            return Err(Error::LayoutMismatch);
        }
        let gen = SplitGenerator::new(self);
        let x = rho.matrix().as_slice();
        let mut out = vec![Default::default(); x.len()];
        gen.apply_full(x, &mut out);
        let d = self.dim();
        Operator::new(self.hamiltonian.layout().clone(), nalgebra::DMatrix::from_vec(d, d, out))
    }
}

/// Cooling `(a, γ(n̄+1))` and heating `(a†, γn̄)`.
pub fn thermal_dissipators(a: &Operator, gamma: f64, nbar: f64) -> Result<Vec<Dissipator>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter { name: "gamma", requirement: ">= 0", value: gamma });
    }
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParameter { name: "nbar", requirement: ">= 0", value: nbar });
    }
    Ok(vec![
        Dissipator::new(a.clone(), gamma * (nbar + 1.0))?,
        Dissipator::new(a.adjoint(), gamma * nbar)?,
    ])
}

/// Uniform sampling of `[0, t_end]` with `intervals` equal steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub intervals: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, intervals: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!("t_end must be positive, got {t_end}")));
        }
        if intervals == 0 {
            return Err(Error::InvalidGrid("need at least one interval".into()));
        }
        Ok(Self { t_end, intervals })
    }

    pub fn spacing(&self) -> f64 {
        self.t_end / self.intervals as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.intervals).map(|k| self.time(k)).collect()
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.t_end
        } else {
            k as f64 * self.spacing()
        }
    }
}

/// A named operator recorded as `Tr(ρ·O)`.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub unit: String,
    pub op: Operator,
}

impl Observable {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), unit: unit.into(), op }
    }
}

/// `⟨n(t)⟩ = n_ss + (n0 − n_ss)·e^{−γ_c t}` on `grid`.
pub fn analytic_phonon_curve(n0: f64, n_ss: f64, gamma_c: f64, grid: &TimeGrid) -> Result<TimeSeries> {
    if !(gamma_c > 0.0) {
        return Err(Error::InvalidParameter { name: "gamma_c", requirement: "> 0", value: gamma_c });
    }
    let times = grid.times();
    let values = times.iter().map(|&t| n_ss + (n0 - n_ss) * (-gamma_c * t).exp()).collect();
    TimeSeries::new(times, vec![Column::new("mean_n", "quanta", values)])
}
