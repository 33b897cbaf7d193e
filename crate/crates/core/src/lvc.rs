//! Linear vibronic coupling models: a donor/acceptor spin coupled to one or
//! two damped harmonic modes.
//!
//! `H = (ΔE/2)σ_z + Vσ_x + Σᵢ [(gᵢ/2)σ_z(aᵢ + aᵢ†) + ωᵢ aᵢ†aᵢ]` with
//! `|D⟩ = |↑⟩` (σ_z = +1) and `|A⟩ = |↓⟩`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    displacement_op, mode_op, thermal_populations, DensityMatrix, HilbertLayout, Operator,
};
use crate::lindblad::{thermal_dissipators, Dissipator, MasterEquation};

/// Largest mass an initial state may lose to the Fock truncation.
pub const INITIAL_TAIL_TOLERANCE: f64 = 1e-6;

/// Multiplier applied to the minimal cutoff to leave room for heating.
pub const CUTOFF_HEADROOM: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSpec {
    pub gamma: f64,
    pub nbar: f64,
}

/// Extra decoherence: spin dephasing through σ_y and motional dephasing
/// through aᵢ†aᵢ at one rate shared by all modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImperfectionSpec {
    #[serde(default)]
    pub gamma_z: f64,
    #[serde(default)]
    pub gamma_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub g: f64,
    pub omega: f64,
    pub bath: BathSpec,
}

/// Which electronic site the spin starts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    Donor,
    Acceptor,
}

impl Site {
    fn sz(self) -> f64 {
        match self {
            Site::Donor => 1.0,
            Site::Acceptor => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvcModel {
    pub delta_e: f64,
    pub v: f64,
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub imperfections: ImperfectionSpec,
    /// Fock cutoff per mode; empty means "choose by the default policy".
    #[serde(default)]
    pub cutoffs: Vec<usize>,
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, requirement: "finite and >= 0", value })
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, requirement: "finite", value })
    }
}

impl LvcModel {
    /// Validates the parameters and fills in default cutoffs when none are given.
    pub fn new(
        delta_e: f64,
        v: f64,
        modes: Vec<ModeSpec>,
        imperfections: ImperfectionSpec,
        cutoffs: Option<Vec<usize>>,
    ) -> Result<Self> {
        let model = Self { delta_e, v, modes, imperfections, cutoffs: cutoffs.unwrap_or_default() };
        model.resolved()
    }

    /// A copy with default cutoffs filled in, validated.
    pub fn resolved(&self) -> Result<Self> {
        self.validate_parameters()?;
        let mut out = self.clone();
        if out.cutoffs.is_empty() {
            out.cutoffs = out.modes.iter().map(default_cutoff).collect::<Result<_>>()?;
        }
        out.validate()?;
        Ok(out)
    }

    fn validate_parameters(&self) -> Result<()> {
        finite("delta_e", self.delta_e)?;
        finite("v", self.v)?;
        if self.modes.is_empty() || self.modes.len() > 2 {
            return Err(Error::InvalidLayout(format!(
                "LVC model needs one or two modes, got {}",
                self.modes.len()
            )));
        }
        for m in &self.modes {
            finite("g", m.g)?;
            if !(m.omega > 0.0) || !m.omega.is_finite() {
                return Err(Error::InvalidParameter { name: "omega", requirement: "> 0", value: m.omega });
            }
            non_negative("gamma", m.bath.gamma)?;
            non_negative("nbar", m.bath.nbar)?;
        }
        non_negative("gamma_z", self.imperfections.gamma_z)?;
        non_negative("gamma_m", self.imperfections.gamma_m)
    }

    /// Checks parameters and that each cutoff holds the initial mode state.
    pub fn validate(&self) -> Result<()> {
        self.validate_parameters()?;
        if self.cutoffs.len() != self.modes.len() {
            return Err(Error::InvalidLayout(format!(
                "{} cutoffs given for {} modes",
                self.cutoffs.len(),
                self.modes.len()
            )));
        }
        for (m, &cut) in self.modes.iter().zip(&self.cutoffs) {
            let mass = displaced_thermal_tail(m.surface_center(Site::Donor), m.bath.nbar, cut)?;
            if mass >= INITIAL_TAIL_TOLERANCE {
                return Err(Error::CutoffTooSmall { cutoff: cut, mass, tolerance: INITIAL_TAIL_TOLERANCE });
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<HilbertLayout> {
        HilbertLayout::spin_modes(&self.cutoffs)
    }

    /// Reorganization energy `Σ gᵢ²/ωᵢ`.
    pub fn reorganization_energy(&self) -> f64 {
        self.modes.iter().map(|m| m.g * m.g / m.omega).sum()
    }

    pub fn with_delta_e(&self, delta_e: f64) -> Self {
        Self { delta_e, ..self.clone() }
    }
}

impl ModeSpec {
    /// Center of the mode on the given site's surface, as a coherent amplitude.
    fn surface_center(&self, site: Site) -> f64 {
        -site.sz() * self.g / (2.0 * self.omega)
    }
}

/// Mass of `𝒟(α) thermal(n̄) 𝒟†(α)` on Fock levels `≥ cutoff`.
fn displaced_thermal_tail(alpha: f64, nbar: f64, cutoff: usize) -> Result<f64> {
    let pops = displaced_thermal_matrix(alpha, nbar, cutoff)?.1;
    Ok(1.0 - pops.iter().take(cutoff).sum::<f64>())
}

/// Working size large enough that the displaced thermal state is converged.
fn reference_size(alpha: f64, nbar: f64, cutoff: usize) -> usize {
    let ratio = nbar / (nbar + 1.0);
    let thermal = if ratio > 0.0 { (1e-16f64.ln() / ratio.ln()).ceil() as usize } else { 1 };
    let spread = alpha.abs() + 8.0;
    (thermal + (spread * spread).ceil() as usize + 16).max(cutoff + 16).max(32)
}

/// Displaced thermal state built on a large basis, returned with its
/// Fock-level populations on that basis.
fn displaced_thermal_matrix(alpha: f64, nbar: f64, cutoff: usize) -> Result<(DMatrix<C64>, Vec<f64>)> {
    let big = reference_size(alpha, nbar, cutoff);
    let layout = HilbertLayout::modes(&[big])?;
    let (pops, _) = thermal_populations(nbar, big)?;
    let d = displacement_op(&layout, 0, C64::new(alpha, 0.0))?;
    let dm = d.matrix();
    let mut rho = DMatrix::<C64>::zeros(big, big);
    for (k, &p) in pops.iter().enumerate() {
        if p < 1e-300 {
            break;
        }
        let col = dm.column(k);
        rho.gerc(C64::new(p, 0.0), &col, &col, C64::new(1.0, 0.0));
    }
    let diag = (0..big).map(|i| rho[(i, i)].re).collect();
    Ok((rho, diag))
}

/// Smallest cutoff keeping the donor-displaced thermal state's tail below
/// [`INITIAL_TAIL_TOLERANCE`], enlarged by [`CUTOFF_HEADROOM`].
pub fn default_cutoff(mode: &ModeSpec) -> Result<usize> {
    let alpha = mode.surface_center(Site::Donor);
    let (_, pops) = displaced_thermal_matrix(alpha, mode.bath.nbar, 0)?;
    let mut tail = 1.0 - pops.iter().sum::<f64>();
    let mut minimal = pops.len();
    for n in (0..pops.len()).rev() {
        tail += pops[n];
        if tail >= INITIAL_TAIL_TOLERANCE {
            minimal = n + 1;
            break;
        }
    }
    Ok(((minimal as f64) * CUTOFF_HEADROOM).ceil() as usize)
}

/// LVC Hamiltonian on spin ⊗ modes.
pub fn build_hamiltonian(model: &LvcModel) -> Result<Operator> {
    model.validate()?;
    let layout = model.layout()?;
    let sz = Operator::sigma_z(&layout)?;
    let mut h = sz
        .scale_real(model.delta_e / 2.0)
        .add(&Operator::sigma_x(&layout)?.scale_real(model.v))?;
    for (i, m) in model.modes.iter().enumerate() {
        let a = mode_op(&layout, i)?;
        let x = a.add(&a.adjoint())?;
        h = h
            .add(&sz.mul(&x)?.scale_real(m.g / 2.0))?
            .add(&a.adjoint().mul(&a)?.scale_real(m.omega))?;
    }
    Ok(h)
}

/// Hamiltonian plus per-mode thermal baths, σ_y dephasing at γ_z and aᵢ†aᵢ
/// dephasing at γ_m. Imperfection channels with zero rate are left out.
pub fn build_master_equation(model: &LvcModel) -> Result<MasterEquation> {
    let h = build_hamiltonian(model)?;
    let layout = h.layout().clone();
    let mut diss = Vec::new();
    for (i, m) in model.modes.iter().enumerate() {
        diss.extend(thermal_dissipators(&mode_op(&layout, i)?, m.bath.gamma, m.bath.nbar)?);
    }
    let imp = model.imperfections;
    if imp.gamma_z > 0.0 {
        diss.push(Dissipator::new(Operator::sigma_y(&layout)?, imp.gamma_z)?);
    }
    if imp.gamma_m > 0.0 {
        for i in 0..model.modes.len() {
            let a = mode_op(&layout, i)?;
            diss.push(Dissipator::new(a.adjoint().mul(&a)?, imp.gamma_m)?);
        }
    }
    MasterEquation::new(h, diss)
}

/// `|site⟩⟨site| ⊗ Πᵢ 𝒟(∓gᵢ/2ωᵢ) thermal(n̄ᵢ) 𝒟†(∓gᵢ/2ωᵢ)`: each mode in
/// thermal equilibrium on the surface of `site`.
///
/// Built on a larger basis and truncated, so the displacement itself is
/// free of truncation error; the dropped mass is below
/// [`INITIAL_TAIL_TOLERANCE`] and the rest is renormalized.
pub fn initial_state(model: &LvcModel, site: Site) -> Result<DensityMatrix> {
    model.validate()?;
    let mut rho = DensityMatrix::spin_state(site == Site::Donor);
    for (m, &cut) in model.modes.iter().zip(&model.cutoffs) {
        let (big, _) = displaced_thermal_matrix(m.surface_center(site), m.bath.nbar, cut)?;
        let block = big.view((0, 0), (cut, cut)).into_owned();
        let kept = block.trace().re;
        if 1.0 - kept >= INITIAL_TAIL_TOLERANCE {
            return Err(Error::CutoffTooSmall { cutoff: cut, mass: 1.0 - kept, tolerance: INITIAL_TAIL_TOLERANCE });
        }
        let block = block / C64::new(kept, 0.0);
        let block = (&block + block.adjoint()) * C64::new(0.5, 0.0);
        let local = DensityMatrix::new(Operator::new(HilbertLayout::modes(&[cut])?, block)?)?;
        rho = rho.tensor(&local)?;
    }
    Ok(rho)
}

/// Donor-site thermal displaced initial state.
pub fn initial_donor_state(model: &LvcModel) -> Result<DensityMatrix> {
    initial_state(model, Site::Donor)
}

/// `k_BT = ω / ln(1 + 1/n̄)`; zero at n̄ = 0.
pub fn temperature_from_nbar(nbar: f64, omega: f64) -> Result<f64> {
    non_negative("nbar", nbar)?;
    if nbar == 0.0 {
        return Ok(0.0);
    }
    Ok(omega / (1.0 / nbar).ln_1p())
}

/// Inverse of [`temperature_from_nbar`]: `n̄ = 1/(e^{ω/k_BT} − 1)`.
pub fn nbar_from_temperature(k_bt: f64, omega: f64) -> Result<f64> {
    non_negative("k_bt", k_bt)?;
    if k_bt == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (omega / k_bt).exp_m1())
}
