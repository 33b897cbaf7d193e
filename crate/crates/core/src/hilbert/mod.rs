//! Operators and states on a spin-1/2 ⊗ (truncated Fock)ᵏ Hilbert space.
//!
//! Basis ordering is fixed: the spin factor (when present) comes first, then
//! the bosonic modes in declaration order, row-major. The flat basis index of
//! `|s, n₁, …, nₖ⟩` is `s·Πcutoffs + Σ nᵢ·strideᵢ` with `strideᵢ = Π_{j>i} cutoffⱼ`.
//! Spin index 0 is `|↑⟩_z` (σ_z = +1), index 1 is `|↓⟩_z`.

mod operator;
mod state;

pub use operator::{displacement_op, mode_op, Operator};
pub use state::{
    expectation, fidelity, thermal_populations, thermal_state, DensityMatrix, ThermalState,
    THERMAL_TAIL_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertLayout {
    spin_present: bool,
    mode_cutoffs: Vec<usize>,
}

/// One tensor factor of a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    Spin,
    Mode(usize),
}

impl HilbertLayout {
    pub fn new(spin_present: bool, mode_cutoffs: Vec<usize>) -> Result<Self> {
        if mode_cutoffs.iter().any(|&n| n == 0) {
            return Err(Error::InvalidLayout("mode cutoffs must be positive".into()));
        }
        if !spin_present && mode_cutoffs.is_empty() {
            return Err(Error::InvalidLayout("layout has no factors".into()));
        }
        Ok(Self { spin_present, mode_cutoffs })
    }

    /// Spin-1/2 only.
    pub fn spin() -> Self {
        Self { spin_present: true, mode_cutoffs: Vec::new() }
    }

    pub fn modes(cutoffs: &[usize]) -> Result<Self> {
        Self::new(false, cutoffs.to_vec())
    }

    pub fn spin_modes(cutoffs: &[usize]) -> Result<Self> {
        Self::new(true, cutoffs.to_vec())
    }

    pub fn spin_present(&self) -> bool {
        self.spin_present
    }

    pub fn mode_cutoffs(&self) -> &[usize] {
        &self.mode_cutoffs
    }

    pub fn n_modes(&self) -> usize {
        self.mode_cutoffs.len()
    }

    pub fn spin_dim(&self) -> usize {
        if self.spin_present {
            2
        } else {
            1
        }
    }

    pub fn mode_dim(&self) -> usize {
        self.mode_cutoffs.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.spin_dim() * self.mode_dim()
    }

    pub fn mode_cutoff(&self, mode: usize) -> Result<usize> {
        self.check_mode(mode)?;
        Ok(self.mode_cutoffs[mode])
    }

    pub fn mode_stride(&self, mode: usize) -> Result<usize> {
        self.check_mode(mode)?;
        Ok(self.mode_cutoffs[mode + 1..].iter().product())
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.mode_cutoffs.len() {
            return Err(Error::ModeOutOfRange { index: mode, modes: self.mode_cutoffs.len() });
        }
        Ok(())
    }

    /// Flat basis index of `|spin, fock…⟩`. `spin` must be 0 when there is no spin factor.
    pub fn index(&self, spin: usize, fock: &[usize]) -> usize {
        debug_assert_eq!(fock.len(), self.mode_cutoffs.len());
        let mut idx = spin;
        for (n, &cut) in fock.iter().zip(&self.mode_cutoffs) {
            debug_assert!(*n < cut);
            idx = idx * cut + n;
        }
        idx
    }

    /// Inverse of [`HilbertLayout::index`].
    pub fn decompose(&self, mut index: usize) -> (usize, Vec<usize>) {
        let mut fock = vec![0; self.mode_cutoffs.len()];
        for (slot, &cut) in fock.iter_mut().zip(&self.mode_cutoffs).rev() {
            *slot = index % cut;
            index /= cut;
        }
        (index, fock)
    }

    /// Dimensions of the identity factors to the left and right of `factor`.
    pub(crate) fn surrounding_dims(&self, factor: Factor) -> Result<(usize, usize, usize)> {
        match factor {
            Factor::Spin => {
                if !self.spin_present {
                    return Err(Error::NoSpin);
                }
                Ok((1, 2, self.mode_dim()))
            }
            Factor::Mode(m) => {
                self.check_mode(m)?;
                let before =
                    self.spin_dim() * self.mode_cutoffs[..m].iter().product::<usize>();
                let after = self.mode_cutoffs[m + 1..].iter().product();
                Ok((before, self.mode_cutoffs[m], after))
            }
        }
    }

    /// Layout of `self ⊗ other`. The spin factor, if any, must stay leftmost.
    pub fn tensor(&self, other: &HilbertLayout) -> Result<HilbertLayout> {
        if other.spin_present {
            return Err(Error::InvalidLayout(
                "spin factor must be the leftmost tensor factor".into(),
            ));
        }
        let mut modes = self.mode_cutoffs.clone();
        modes.extend_from_slice(&other.mode_cutoffs);
        HilbertLayout::new(self.spin_present, modes)
    }

    /// Layout of a single mode of `self`, without spin.
    pub fn single_mode(&self, mode: usize) -> Result<HilbertLayout> {
        HilbertLayout::modes(&[self.mode_cutoff(mode)?])
    }
}
