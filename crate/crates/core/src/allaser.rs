//! Thermal bath from a coherent red sideband plus a blue sideband whose phase
//! is redrawn every `tau`, acting on a coolant spin with metastable decay.
//!
//! The coolant spin uses the layout's spin factor with `|e⟩ = |↑⟩` (index 0)
//! and `|g⟩ = |↓⟩` (index 1), so `σ⁻` empties `|e⟩`.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{thermal_populations, DensityMatrix, Factor, HilbertLayout, Operator, C64};
use crate::lindblad::{
    evolve_piecewise, stiffness, Dissipator, EvolveOptions, MasterEquation, Observable, SnapshotPolicy,
    TimeGrid, TimeSeries,
};
use crate::probe::MEAN_N;

/// Ratio `Γ / max(Ω_r, Ω_b)` below which the elimination of `|e⟩` is doubtful.
pub const ELIMINATION_RATIO: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticDriveSpec {
    pub omega_r: f64,
    pub omega_b: f64,
    /// Decay rate Γ of `|e⟩`.
    pub gamma_decay: f64,
    /// Interval over which the blue-sideband phase is held.
    pub tau: f64,
    pub cutoff: usize,
    pub seed: u64,
}

impl StochasticDriveSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |name, requirement, value: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, requirement, value })
            }
        };
        check("omega_r", ">= 0", self.omega_r, self.omega_r >= 0.0 && self.omega_r.is_finite())?;
        check("omega_b", ">= 0", self.omega_b, self.omega_b >= 0.0 && self.omega_b.is_finite())?;
        check("gamma_decay", "> 0", self.gamma_decay, self.gamma_decay > 0.0 && self.gamma_decay.is_finite())?;
        check("tau", "> 0", self.tau, self.tau > 0.0 && self.tau.is_finite())?;
        check("cutoff", ">= 2", self.cutoff as f64, self.cutoff >= 2)
    }

    /// Human-readable warnings for parameters outside the intended regime.
    pub fn warnings(&self) -> Vec<String> {
        let drive = self.omega_r.max(self.omega_b);
        if self.gamma_decay < ELIMINATION_RATIO * drive {
            vec![format!(
                "gamma_decay = {} is below {ELIMINATION_RATIO}·max(omega_r, omega_b) = {}",
                self.gamma_decay,
                ELIMINATION_RATIO * drive
            )]
        } else {
            Vec::new()
        }
    }
}

/// `γ_b = (8Ω_b²/Γ²τ)(Γτ/2 − 1 + e^{−Γτ/2})`.
pub fn blue_heating_rate(omega_b: f64, gamma: f64, tau: f64) -> f64 {
    let x = 0.5 * gamma * tau;
    // x − 1 + e^{−x} loses all digits for small x
    let bracket = if x < 1e-3 { x * x * (0.5 - x / 6.0 + x * x / 24.0) } else { x + (-x).exp_m1() };
    8.0 * omega_b * omega_b / (gamma * gamma * tau) * bracket
}

/// `γ_r = 4Ω_r²/Γ`.
pub fn red_cooling_rate(omega_r: f64, gamma: f64) -> f64 {
    4.0 * omega_r * omega_r / gamma
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRates {
    pub gamma_b: f64,
    pub gamma_r: f64,
    /// Equilibration rate `γ_r − γ_b`.
    pub gamma_prime: f64,
    pub n_ss: f64,
}

/// Effective cooling/heating rates of the bath and its steady-state occupation.
pub fn effective_rates(spec: &StochasticDriveSpec) -> Result<EffectiveRates> {
    spec.validate()?;
    let gamma_b = blue_heating_rate(spec.omega_b, spec.gamma_decay, spec.tau);
    let gamma_r = red_cooling_rate(spec.omega_r, spec.gamma_decay);
    if gamma_r <= gamma_b {
        return Err(Error::NonEquilibrating { gamma_r, gamma_b });
    }
    let gamma_prime = gamma_r - gamma_b;
    Ok(EffectiveRates { gamma_b, gamma_r, gamma_prime, n_ss: gamma_b / gamma_prime })
}

/// Red-sideband Rabi frequency giving steady state `n_ss` for fixed Ω_b, Γ, τ.
pub fn red_rabi_for_steady_state(n_ss: f64, omega_b: f64, gamma: f64, tau: f64) -> Result<f64> {
    if !(n_ss > 0.0) || !n_ss.is_finite() {
        return Err(Error::InvalidParameter { name: "n_ss", requirement: "finite and > 0", value: n_ss });
    }
    let gamma_r = blue_heating_rate(omega_b, gamma, tau) * (1.0 + 1.0 / n_ss);
    Ok((gamma_r * gamma / 4.0).sqrt())
}

/// Two-time correlation of the held random phase, `½·max(0, 1 − |t − t′|/τ)`.
pub fn phase_correlation(t: f64, t_prime: f64, tau: f64) -> f64 {
    0.5 * (1.0 - (t - t_prime).abs() / tau).max(0.0)
}

/// Steady state of the single jump `K = Ω_r a + Ω_b a†` produced by two
/// coherent sidebands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoherentSteadyState {
    /// Squeezed vacuum with `r = atanh(Ω_b/Ω_r)`, `θ = 0`. `residual` is
    /// `‖K|ψ⟩‖` on a Fock space of `cutoff` levels.
    Squeezed { r: f64, residual: f64, cutoff: usize },
    /// `Ω_r ≤ Ω_b`: no normalizable dark state, the mode never equilibrates.
    NonPhysical,
}

const SQUEEZE_RESIDUAL: f64 = 1e-9;
const MAX_SQUEEZE_CUTOFF: usize = 1 << 20;

/// Classifies the coherent-drive steady state and, when it exists, checks
/// numerically that the squeezed vacuum is annihilated by K.
pub fn coherent_pathology_check(omega_r: f64, omega_b: f64) -> Result<CoherentSteadyState> {
    if !(omega_r >= 0.0 && omega_b >= 0.0) {
        return Err(Error::InvalidParameter { name: "omega_r, omega_b", requirement: ">= 0", value: omega_r.min(omega_b) });
    }
    if omega_r <= omega_b {
        return Ok(CoherentSteadyState::NonPhysical);
    }
    let ratio = omega_b / omega_r;
    let r = ratio.atanh();
    let mut cutoff = 16;
    loop {
        let psi = squeezed_vacuum(r, cutoff);
        // K restricted to `cutoff` levels, applied entry by entry.
        let residual = (0..cutoff)
            .map(|n| {
                let lower = if n + 1 < cutoff { omega_r * ((n + 1) as f64).sqrt() * psi[n + 1] } else { 0.0 };
                let raise = if n > 0 { omega_b * (n as f64).sqrt() * psi[n - 1] } else { 0.0 };
                (lower + raise).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if residual < SQUEEZE_RESIDUAL || cutoff >= MAX_SQUEEZE_CUTOFF {
            return Ok(CoherentSteadyState::Squeezed { r, residual, cutoff });
        }
        cutoff *= 2;
    }
}

/// Fock amplitudes of `S(r)|0⟩` with `S(r) = exp(r(a² − a†²)/2)`, truncated
/// to `cutoff` levels and normalized.
pub fn squeezed_vacuum(r: f64, cutoff: usize) -> Vec<f64> {
    let t = r.tanh();
    let mut psi = vec![0.0; cutoff];
    psi[0] = 1.0 / r.cosh().sqrt();
    for n in (2..cutoff).step_by(2) {
        psi[n] = -t * (((n - 1) as f64) / n as f64).sqrt() * psi[n - 2];
    }
    let norm = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    psi.iter().map(|v| v / norm).collect()
}

/// Layout of coolant spin plus one mode.
pub fn coolant_layout(cutoff: usize) -> Result<HilbertLayout> {
    HilbertLayout::spin_modes(&[cutoff])
}

/// `|g⟩⟨g| ⊗ thermal(n0)`, with the thermal law truncated to the cutoff and
/// renormalized.
pub fn coolant_initial_state(cutoff: usize, n0: f64) -> Result<DensityMatrix> {
    let (pops, _tail) = thermal_populations(n0, cutoff)?;
    let total: f64 = pops.iter().sum();
    let mode = HilbertLayout::modes(&[cutoff])?;
    let m = DMatrix::from_diagonal(&DVector::from_iterator(cutoff, pops.iter().map(|p| C64::new(p / total, 0.0))));
    DensityMatrix::spin_state(false).tensor(&DensityMatrix::new(Operator::new(mode, m)?)?)
}

struct CoolantOps {
    sp_a: Operator,
    sp_ad: Operator,
    sm: Operator,
    n: Operator,
}

impl CoolantOps {
    fn new(layout: &HilbertLayout) -> Result<Self> {
        let sp = Operator::sigma_plus(layout)?;
        let a = Operator::annihilation(layout, 0)?;
        Ok(Self {
            sp_a: sp.mul(&a)?,
            sp_ad: sp.mul(&a.adjoint())?,
            sm: Operator::sigma_minus(layout)?,
            n: Operator::number(layout, 0)?,
        })
    }

    /// `H_RS + H_BS(φ)` with `H_RS = Ω_r(σ⁺a + h.c.)` and
    /// `H_BS = Ω_b(σ⁺a†e^{iφ} + h.c.)`.
    fn hamiltonian(&self, spec: &StochasticDriveSpec, phi: f64) -> Result<Operator> {
        let red = self.sp_a.scale_real(spec.omega_r);
        let blue = self.sp_ad.scale(C64::from_polar(spec.omega_b, phi));
        let half = red.add(&blue)?;
        half.add(&half.adjoint())
    }

    fn equation(&self, spec: &StochasticDriveSpec, phi: f64) -> Result<MasterEquation> {
        MasterEquation::new(
            self.hamiltonian(spec, phi)?,
            vec![Dissipator::new(self.sm.clone(), spec.gamma_decay)?],
        )
    }
}

/// Blue-sideband phases of one trajectory, one per `tau` interval.
///
/// Trajectory `index` reads stream `index` of a ChaCha20 generator keyed by
/// `seed`, so the draws do not depend on how trajectories are scheduled.
pub fn phase_sequence(seed: u64, index: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..count).map(|_| rng.random::<f64>() * TAU).collect()
}

fn intervals_per_hold(spec: &StochasticDriveSpec, grid: &TimeGrid) -> Result<usize> {
    let ratio = spec.tau / grid.spacing();
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio {
        return Err(Error::InvalidGrid(format!(
            "tau = {} is not an integer multiple of the grid step {}",
            spec.tau,
            grid.spacing()
        )));
    }
    Ok(m as usize)
}

/// One stochastic trajectory with trajectory index 0.
pub fn sample_trajectory(spec: &StochasticDriveSpec, rho0: &DensityMatrix, grid: &TimeGrid) -> Result<TimeSeries> {
    sample_trajectory_indexed(spec, rho0, grid, 0)
}

/// Records `mean_n` at every grid time; the final state is kept as a snapshot.
pub fn sample_trajectory_indexed(
    spec: &StochasticDriveSpec,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    index: u64,
) -> Result<TimeSeries> {
    spec.validate()?;
    let layout = coolant_layout(spec.cutoff)?;
    if rho0.layout() != &layout {
        return Err(Error::LayoutMismatch);
    }
    let per_hold = intervals_per_hold(spec, grid)?;
    let holds = grid.intervals.div_ceil(per_hold);
    let phases = phase_sequence(spec.seed, index, holds);
    let ops = CoolantOps::new(&layout)?;
    // The stiffness bound depends only on |entries|, not on φ.
    let s = stiffness(&ops.equation(spec, 0.0)?);
    let opts = EvolveOptions { snapshots: SnapshotPolicy::Final, ..EvolveOptions::default() };
    evolve_piecewise(
        rho0,
        grid,
        per_hold,
        s,
        |k| ops.equation(spec, phases[k]),
        &[Observable::new(MEAN_N, "quanta", ops.n.clone())],
        &opts,
    )
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean_n: Vec<f64>,
    /// Standard error of `mean_n` from the trajectory scatter.
    pub stderr: Vec<f64>,
    pub final_state_mean: DensityMatrix,
    pub n_trajectories: usize,
}

impl EnsembleResult {
    /// Mode state of the ensemble-mean final state.
    pub fn final_mode_state(&self) -> Result<DensityMatrix> {
        self.final_state_mean.partial_trace(Factor::Mode(0))
    }

    pub fn write_csv<W: Write>(&self, writer: W, time_unit: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([format!("time [{time_unit}]"), "mean_n [quanta]".into(), "stderr [quanta]".into()])
            .map_err(io)?;
        for k in 0..self.times.len() {
            w.write_record([self.times[k].to_string(), self.mean_n[k].to_string(), self.stderr[k].to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs trajectories `0..n_traj` in parallel and averages them in index order.
pub fn ensemble_mean_n(
    spec: &StochasticDriveSpec,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    n_traj: usize,
) -> Result<EnsembleResult> {
    if n_traj < 2 {
        return Err(Error::InvalidParameter { name: "n_traj", requirement: ">= 2", value: n_traj as f64 });
    }
    let runs: Vec<TimeSeries> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            sample_trajectory_indexed(spec, rho0, grid, i as u64)
                .map_err(|e| Error::Trajectory { index: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let times = runs[0].times().to_vec();
    let n = n_traj as f64;
    let mut mean_n = vec![0.0; times.len()];
    let mut stderr = vec![0.0; times.len()];
    for (k, (mean, se)) in mean_n.iter_mut().zip(stderr.iter_mut()).enumerate() {
        let values: Vec<f64> = runs.iter().map(|r| r.column(MEAN_N).expect("recorded")[k]).collect();
        *mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - *mean).powi(2)).sum::<f64>() / (n - 1.0);
        *se = (var / n).sqrt();
    }
    let mut sum = DMatrix::<C64>::zeros(rho0.dim(), rho0.dim());
    for r in &runs {
        sum += r.final_state().expect("final snapshot kept").matrix();
    }
    let final_state_mean = DensityMatrix::new(Operator::new(rho0.layout().clone(), sum / C64::new(n, 0.0))?)?;
    Ok(EnsembleResult { times, mean_n, stderr, final_state_mean, n_trajectories: n_traj })
}

/// Deterministic equation with the blue sideband replaced by the composite
/// jumps `aσ⁻` and `a†σ⁺` at rate γ_b.
pub fn intermediate_master_equation(spec: &StochasticDriveSpec) -> Result<MasterEquation> {
    spec.validate()?;
    let layout = coolant_layout(spec.cutoff)?;
    let ops = CoolantOps::new(&layout)?;
    let red = ops.sp_a.scale_real(spec.omega_r);
    let gamma_b = blue_heating_rate(spec.omega_b, spec.gamma_decay, spec.tau);
    MasterEquation::new(
        red.add(&red.adjoint())?,
        vec![
            Dissipator::new(ops.sm.clone(), spec.gamma_decay)?,
            Dissipator::new(ops.sp_a.adjoint(), gamma_b)?,
            Dissipator::new(ops.sp_ad.clone(), gamma_b)?,
        ],
    )
}

/// Mode-only equation `γ_r D[a] + γ_b D[a†]`.
pub fn effective_master_equation(spec: &StochasticDriveSpec) -> Result<MasterEquation> {
    spec.validate()?;
    let layout = HilbertLayout::modes(&[spec.cutoff])?;
    let a = Operator::annihilation(&layout, 0)?;
    MasterEquation::new(
        Operator::zeros(&layout),
        vec![
            Dissipator::new(a.clone(), red_cooling_rate(spec.omega_r, spec.gamma_decay))?,
            Dissipator::new(a.adjoint(), blue_heating_rate(spec.omega_b, spec.gamma_decay, spec.tau))?,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{expectation, fidelity, thermal_state};
    use crate::lindblad::{steady_state, SteadyStateOptions};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const KHZ: f64 = TAU; // 2π·kHz in rad/ms

    fn spec(omega_r: f64, omega_b: f64, cutoff: usize) -> StochasticDriveSpec {
        StochasticDriveSpec { omega_r, omega_b, gamma_decay: 1e3 * KHZ, tau: 0.1, cutoff, seed: 7 }
    }

    #[test]
    fn blue_rate_fixture_and_limit() {
        assert_relative_eq!(blue_heating_rate(5.0 * KHZ, 1e3 * KHZ, 0.1), 0.6263, epsilon = 5e-5);
        let (ob, g) = (2.0, 50.0);
        assert_relative_eq!(blue_heating_rate(ob, g, 1e6), 4.0 * ob * ob / g, max_relative = 1e-6);
        // Small Γτ: the bracket tends to (Γτ/2)²/2, so γ_b → Ω_b²τ.
        assert_relative_eq!(blue_heating_rate(ob, 1e-6, 1e-3), ob * ob * 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn inverse_rates_target_two() {
        let omega_r = red_rabi_for_steady_state(2.0, 5.0 * KHZ, 1e3 * KHZ, 0.1).unwrap();
        assert!((omega_r / KHZ - 6.1).abs() < 0.05, "{}", omega_r / KHZ);
        let rates = effective_rates(&spec(omega_r, 5.0 * KHZ, 10)).unwrap();
        assert_relative_eq!(rates.gamma_r, 1.5 * 0.6263, epsilon = 1e-4);
        assert_relative_eq!(rates.n_ss, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn non_equilibrating_rates() {
        let s = spec(0.0, 5.0 * KHZ, 10);
        assert!(matches!(effective_rates(&s), Err(Error::NonEquilibrating { .. })));
    }

    #[test]
    fn warns_on_weak_decay() {
        let mut s = spec(1.0, 1.0, 10);
        assert!(s.warnings().is_empty());
        s.gamma_decay = 5.0;
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn correlation_shape() {
        assert_eq!(phase_correlation(1.0, 1.0, 0.1), 0.5);
        assert_relative_eq!(phase_correlation(1.0, 1.05, 0.1), 0.25, epsilon = 1e-12);
        assert_eq!(phase_correlation(1.0, 1.2, 0.1), 0.0);
        // ∫ C dt′ over the support is τ/2.
        let n = 20000;
        let h = 0.2 / n as f64;
        let integral: f64 = (0..n).map(|k| phase_correlation(0.0, -0.1 + (k as f64 + 0.5) * h, 0.1) * h).sum();
        assert_relative_eq!(integral, 0.05, epsilon = 1e-8);
    }

    #[test]
    fn coherent_steady_states() {
        match coherent_pathology_check(1.0, 0.0).unwrap() {
            CoherentSteadyState::Squeezed { r, residual, .. } => {
                assert_eq!(r, 0.0);
                assert!(residual < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        match coherent_pathology_check(2.0, 1.0).unwrap() {
            CoherentSteadyState::Squeezed { r, residual, .. } => {
                assert_relative_eq!(r, 0.5493, epsilon = 1e-4);
                assert!(residual < 1e-6);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(coherent_pathology_check(1.0, 1.0).unwrap(), CoherentSteadyState::NonPhysical);
        assert_eq!(coherent_pathology_check(1.0, 2.0).unwrap(), CoherentSteadyState::NonPhysical);
    }

    #[test]
    fn squeezed_vacuum_matches_operator_form() {
        // S(r)|0⟩ from the matrix exponential on a large space.
        let (r, big, small) = (0.4, 80, 20);
        let layout = HilbertLayout::modes(&[big]).unwrap();
        let a = Operator::annihilation(&layout, 0).unwrap();
        let a2 = a.mul(&a).unwrap();
        let gen = a2.sub(&a2.adjoint()).unwrap().scale_real(0.5 * r);
        let s = gen.matrix().clone().exp();
        let psi = squeezed_vacuum(r, big);
        for n in 0..small {
            assert!((s[(n, 0)].re - psi[n]).abs() < 1e-10 && s[(n, 0)].im.abs() < 1e-10, "n = {n}");
        }
        // The dark state of K is stationary under the single-jump equation.
        let k = a.scale_real(1.0 / r.tanh()).add(&a.adjoint()).unwrap();
        let eq = MasterEquation::new(Operator::zeros(&layout), vec![Dissipator::new(k, 1.0).unwrap()]).unwrap();
        let ket = DVector::from_iterator(big, psi.iter().map(|v| C64::new(*v, 0.0)));
        let rho = DensityMatrix::from_ket(&layout, &ket).unwrap();
        assert!(eq.generator(&rho).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn phases_are_reproducible_and_independent() {
        assert_eq!(phase_sequence(3, 0, 50), phase_sequence(3, 0, 50));
        assert_ne!(phase_sequence(3, 0, 50), phase_sequence(3, 1, 50));
        assert_ne!(phase_sequence(3, 0, 50), phase_sequence(4, 0, 50));
        assert!(phase_sequence(3, 5, 1000).iter().all(|p| (0.0..TAU).contains(p)));
    }

    #[test]
    fn phases_pass_uniformity_test() {
        let mut p = phase_sequence(11, 2, 20_000);
        p.sort_by(f64::total_cmp);
        let n = p.len() as f64;
        let d = p
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = v / TAU;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn grid_must_divide_hold_time() {
        let s = spec(1.0, 1.0, 4);
        let rho = coolant_initial_state(4, 0.1).unwrap();
        assert!(matches!(
            sample_trajectory(&s, &rho, &TimeGrid::new(0.3, 4).unwrap()),
            Err(Error::InvalidGrid(_))
        ));
        assert!(sample_trajectory(&s, &rho, &TimeGrid::new(0.3, 6).unwrap()).is_ok());
    }

    #[test]
    fn undriven_state_is_constant() {
        let s = spec(0.0, 0.0, 6);
        let rho = coolant_initial_state(6, 0.7).unwrap();
        let grid = TimeGrid::new(0.5, 5).unwrap();
        let ts = sample_trajectory(&s, &rho, &grid).unwrap();
        let n0 = ts.column(MEAN_N).unwrap()[0];
        assert!(ts.column(MEAN_N).unwrap().iter().all(|v| (v - n0).abs() < 1e-12));
        assert!((ts.final_state().unwrap().matrix() - rho.matrix()).camax() < 1e-12);
    }

    #[test]
    fn red_sideband_alone_cools() {
        // Without the blue drive, ⟨n⟩ decays at close to γ_r = 4Ω_r²/Γ.
        let s = StochasticDriveSpec { omega_r: 2.0, omega_b: 0.0, gamma_decay: 200.0, tau: 0.05, cutoff: 8, seed: 1 };
        let rho = coolant_initial_state(8, 0.5).unwrap();
        let grid = TimeGrid::new(2.0, 40).unwrap();
        let ts = sample_trajectory(&s, &rho, &grid).unwrap();
        let n = ts.column(MEAN_N).unwrap();
        assert!(n.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let rate = (n[0] / n[40]).ln() / 2.0;
        assert_relative_eq!(rate, red_cooling_rate(2.0, 200.0), max_relative = 0.03);
        let other = sample_trajectory(&StochasticDriveSpec { seed: 99, ..s.clone() }, &rho, &grid).unwrap();
        assert_eq!(other.column(MEAN_N).unwrap(), n);
    }

    fn small_spec(seed: u64) -> StochasticDriveSpec {
        // Γ/Ω ≈ 40 keeps the spin adiabatic; small cutoff keeps runs short.
        let (gamma, tau, ob) = (100.0, 0.05, 1.2);
        let omega_r = red_rabi_for_steady_state(0.5, ob, gamma, tau).unwrap();
        StochasticDriveSpec { omega_r, omega_b: ob, gamma_decay: gamma, tau, cutoff: 14, seed }
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let s = small_spec(5);
        let rho = coolant_initial_state(14, 0.1).unwrap();
        let grid = TimeGrid::new(0.5, 10).unwrap();
        let a = sample_trajectory(&s, &rho, &grid).unwrap();
        let b = sample_trajectory(&s, &rho, &grid).unwrap();
        assert_eq!(a.column(MEAN_N).unwrap(), b.column(MEAN_N).unwrap());
        assert_eq!(a.final_state().unwrap().matrix(), b.final_state().unwrap().matrix());
        let c = sample_trajectory(&small_spec(6), &rho, &grid).unwrap();
        assert_ne!(a.column(MEAN_N).unwrap(), c.column(MEAN_N).unwrap());
    }

    #[test]
    fn small_ensemble_tracks_effective_model() {
        let s = small_spec(21);
        let rates = effective_rates(&s).unwrap();
        let rho = coolant_initial_state(14, 0.1).unwrap();
        let t_end = 4.0 / rates.gamma_prime;
        let intervals = (t_end / s.tau).round() as usize;
        let grid = TimeGrid::new(intervals as f64 * s.tau, intervals).unwrap();
        let ens = ensemble_mean_n(&s, &rho, &grid, 12).unwrap();
        assert_eq!(ens.n_trajectories, 12);
        for (k, &t) in ens.times.iter().enumerate().step_by(5) {
            let want = rates.n_ss + (0.1 - rates.n_ss) * (-rates.gamma_prime * t).exp();
            assert!(
                (ens.mean_n[k] - want).abs() <= 3.0 * ens.stderr[k] + 0.03 * rates.n_ss,
                "t = {t}: {} vs {want} ± {}",
                ens.mean_n[k],
                ens.stderr[k]
            );
        }
        let tr = ens.final_state_mean.matrix().trace();
        assert!((tr.re - 1.0).abs() < 1e-9 && tr.im.abs() < 1e-12);
    }

    #[test]
    fn model_tiers_agree_on_steady_state() {
        let s = small_spec(0);
        let rates = effective_rates(&s).unwrap();
        let opts = SteadyStateOptions { change_tol: 1e-9, residual_tol: 1e-7, ..SteadyStateOptions::default() };
        let inter = intermediate_master_equation(&s).unwrap();
        let rho = steady_state(&inter, &coolant_initial_state(14, 0.5).unwrap(), &opts).unwrap();
        let n = expectation(&rho, &Operator::number(rho.layout(), 0).unwrap()).unwrap().re;
        assert!((n - rates.n_ss).abs() < 0.05 * rates.n_ss, "{n} vs {}", rates.n_ss);

        let eff = effective_master_equation(&s).unwrap();
        let mode = HilbertLayout::modes(&[14]).unwrap();
        let rho = steady_state(&eff, &thermal_state(&mode, 0, 0.1).unwrap().rho, &opts).unwrap();
        let target = thermal_state(&mode, 0, rates.n_ss).unwrap().rho;
        assert!(fidelity(&rho, &target).unwrap() > 0.99999);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn rate_inverse_roundtrip(n_ss in 0.05f64..20.0, ob in 0.1f64..50.0, gamma in 100.0f64..1e4, tau in 0.001f64..1.0) {
            let omega_r = red_rabi_for_steady_state(n_ss, ob, gamma, tau).unwrap();
            let s = StochasticDriveSpec { omega_r, omega_b: ob, gamma_decay: gamma, tau, cutoff: 4, seed: 0 };
            let rates = effective_rates(&s).unwrap();
            prop_assert!((rates.n_ss - n_ss).abs() <= 1e-10 * n_ss.max(1.0));
        }
    }
}
