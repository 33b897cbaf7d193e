use nalgebra::{DMatrix, DVector};

use super::{Factor, HilbertLayout, Operator, C64};
use crate::error::{Error, Result};

/// Truncated thermal tails must stay below this mass.
pub const THERMAL_TAIL_TOLERANCE: f64 = 1e-6;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const POSITIVITY_TOL: f64 = 1e-8;

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

fn hermitian_eigenvalues(m: &DMatrix<C64>) -> DVector<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues()
}

/// `√m` for a Hermitian PSD matrix; also returns the smallest eigenvalue seen.
fn psd_sqrt(m: &DMatrix<C64>) -> (DMatrix<C64>, f64) {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let roots = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.adjoint();
    (s, min)
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), unit trace (1e-9) and positivity (−1e-8).
    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian: |ρ−ρ†|max = {herm:e}")));
        }
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace = {tr}")));
        }
        let min = hermitian_eigenvalues(op.matrix()).min();
        if min < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:e}")));
        }
        Ok(Self { op })
    }

    pub(crate) fn from_matrix_unchecked(layout: HilbertLayout, matrix: DMatrix<C64>) -> Self {
        Self { op: Operator::new(layout, matrix).expect("matrix matches layout") }
    }

    /// `|ψ⟩⟨ψ|` for a normalized ket.
    pub fn from_ket(layout: &HilbertLayout, ket: &DVector<C64>) -> Result<Self> {
        if ket.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: ket.len() });
        }
        let m = ket * ket.adjoint();
        Self::new(Operator::new(layout.clone(), m)?)
    }

    /// Projector onto the basis state `|spin, fock…⟩`.
    pub fn basis_state(layout: &HilbertLayout, spin: usize, fock: &[usize]) -> Result<Self> {
        if spin >= layout.spin_dim() || fock.len() != layout.n_modes() {
            return Err(Error::InvalidState("basis label outside layout".into()));
        }
        for (m, &n) in fock.iter().enumerate() {
            if n >= layout.mode_cutoffs()[m] {
                return Err(Error::InvalidState(format!("Fock label {n} >= cutoff on mode {m}")));
            }
        }
        let d = layout.dim();
        let mut m = DMatrix::zeros(d, d);
        let i = layout.index(spin, fock);
        m[(i, i)] = C64::new(1.0, 0.0);
        Ok(Self { op: Operator::new(layout.clone(), m)? })
    }

    /// `|↑⟩⟨↑|` (`up = true`) or `|↓⟩⟨↓|` on a bare spin layout.
    pub fn spin_state(up: bool) -> Self {
        Self::basis_state(&HilbertLayout::spin(), if up { 0 } else { 1 }, &[])
            .expect("spin basis state")
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.op.matrix()
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.op.layout()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// `self ⊗ other`; `other` must not carry a spin factor.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<Self> {
        let layout = self.layout().tensor(other.layout())?;
        let m = self.matrix().kronecker(other.matrix());
        Ok(Self { op: Operator::new(layout, m)? })
    }

    /// `U ρ U†`, revalidated.
    pub fn conjugate_by(&self, u: &Operator) -> Result<Self> {
        if u.layout() != self.layout() {
            return Err(Error::LayoutMismatch);
        }
        let m = u.matrix() * self.matrix() * u.matrix().adjoint();
        Self::new(Operator::new(self.layout().clone(), m)?)
    }

    /// Diagonal of ρ in the product basis.
    pub fn populations(&self) -> Vec<f64> {
        self.matrix().diagonal().iter().map(|z| z.re).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(self.matrix()).min()
    }

    /// Reduced state of a single factor.
    pub fn partial_trace(&self, keep: Factor) -> Result<Self> {
        let layout = self.layout();
        let (before, size, after) = layout.surrounding_dims(keep)?;
        let reduced_layout = match keep {
            Factor::Spin => HilbertLayout::spin(),
            Factor::Mode(m) => layout.single_mode(m)?,
        };
        let rho = self.matrix();
        let mut out = DMatrix::zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..before {
                    for r in 0..after {
                        acc += rho[((b * size + i) * after + r, (b * size + j) * after + r)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(Self { op: Operator::new(reduced_layout, out)? })
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.op.to_json()
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        Self::new(Operator::from_json(value)?)
    }
}

/// Geometric populations `n̄ⁿ/(n̄+1)ⁿ⁺¹` for `n < cutoff`, plus the discarded tail mass.
pub fn thermal_populations(nbar: f64, cutoff: usize) -> Result<(Vec<f64>, f64)> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParameter { name: "nbar", requirement: ">= 0", value: nbar });
    }
    let ratio = nbar / (nbar + 1.0);
    let mut pops = Vec::with_capacity(cutoff);
    let mut p = 1.0 / (nbar + 1.0);
    for _ in 0..cutoff {
        pops.push(p);
        p *= ratio;
    }
    let tail = ratio.powi(cutoff as i32);
    Ok((pops, tail))
}

/// Truncated thermal state of one mode, renormalized over the kept levels.
#[derive(Clone, Debug)]
pub struct ThermalState {
    pub rho: DensityMatrix,
    pub populations: Vec<f64>,
    /// Mass beyond the cutoff that was dropped before renormalizing.
    pub discarded_mass: f64,
}

/// Thermal state of `mode_index`, returned on that mode's single-mode layout.
///
/// Fails when the truncated tail `Σ_{n≥N_c} pₙ` is not below
/// [`THERMAL_TAIL_TOLERANCE`].
pub fn thermal_state(layout: &HilbertLayout, mode_index: usize, nbar: f64) -> Result<ThermalState> {
    let cutoff = layout.mode_cutoff(mode_index)?;
    let (mut pops, tail) = thermal_populations(nbar, cutoff)?;
    if tail >= THERMAL_TAIL_TOLERANCE {
        return Err(Error::NbarTooLarge { nbar, cutoff, tail, tolerance: THERMAL_TAIL_TOLERANCE });
    }
    let kept: f64 = pops.iter().sum();
    for p in &mut pops {
        *p /= kept;
    }
    let diag = DVector::from_iterator(cutoff, pops.iter().map(|&p| C64::new(p, 0.0)));
    let rho = DensityMatrix::from_matrix_unchecked(
        layout.single_mode(mode_index)?,
        DMatrix::from_diagonal(&diag),
    );
    Ok(ThermalState { rho, populations: pops, discarded_mass: tail })
}

/// `Tr(ρ·O)`.
pub fn expectation(rho: &DensityMatrix, obs: &Operator) -> Result<C64> {
    if rho.layout() != obs.layout() {
        return Err(Error::LayoutMismatch);
    }
    Ok(trace_product(rho.matrix(), obs.matrix()))
}

pub(crate) fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    // Tr(AB) = Σᵢⱼ Aᵢⱼ Bⱼᵢ
    let d = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..d {
        for i in 0..d {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Uhlmann fidelity `(Tr√(√ρ σ √ρ))²`, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.layout() != sigma.layout() {
        return Err(Error::LayoutMismatch);
    }
    let (s, min_rho) = psd_sqrt(rho.matrix());
    if min_rho < -POSITIVITY_TOL {
        return Err(Error::InvalidState(format!("first argument has eigenvalue {min_rho:e}")));
    }
    let inner = &s * sigma.matrix() * &s;
    let eig = hermitian_eigenvalues(&inner);
    if eig.min() < -POSITIVITY_TOL {
        return Err(Error::InvalidState(format!("second argument has eigenvalue {:e}", eig.min())));
    }
    let tr: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}
