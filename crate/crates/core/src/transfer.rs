//! Donor populations, transfer rates and their analytic counterparts.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{displacement_op, thermal_populations, HilbertLayout, Operator, C64};
use crate::lindblad::{
    evolve, Column, EvolveOptions, Observable, SnapshotPolicy, TimeGrid, TimeSeries, DEFAULT_STEP_BUDGET,
};
use crate::lvc::{build_master_equation, initial_donor_state, LvcModel};

/// Name of the ⟨σ_z⟩ record produced by [`simulate_donor_dynamics`].
pub const SZ: &str = "sz";
/// Name of the donor population record.
pub const P_DONOR: &str = "p_donor";

const RATE_DENOMINATOR_FLOOR: f64 = 1e-12;
const POPULATION_SLACK: f64 = 1e-7;

/// `P_D = (⟨σ_z⟩ + 1)/2`, clamped to [0, 1] once it is known to lie within
/// roundoff of that range.
pub fn donor_population(series: &TimeSeries) -> Result<TimeSeries> {
    let sz = series.column(SZ)?;
    let mut values = Vec::with_capacity(sz.len());
    for (k, &s) in sz.iter().enumerate() {
        let p = 0.5 * (s + 1.0);
        if !(-POPULATION_SLACK..=1.0 + POPULATION_SLACK).contains(&p) {
            return Err(Error::InvariantBroken {
                time: series.times()[k],
                detail: format!("donor population {p} outside [0, 1]"),
            });
        }
        values.push(p.clamp(0.0, 1.0));
    }
    TimeSeries::new(series.times().to_vec(), vec![Column::new(P_DONOR, "1", values)])
}

fn trapezoid(dt: f64, f: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = f.collect();
    if v.len() < 2 {
        return 0.0;
    }
    dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// `k_T = ∫P_D dt / ∫t·P_D dt − 2/t_sim` by the trapezoid rule on the
/// series' uniform grid, which must span `[0, t_sim]`.
pub fn transfer_rate(pd: &TimeSeries, t_sim: f64) -> Result<f64> {
    let p = pd.column(P_DONOR)?;
    let times = pd.times();
    let n = times.len();
    if n < 2 {
        return Err(Error::InvalidGrid("need at least two samples".into()));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    let uniform = times.iter().enumerate().all(|(k, &t)| (t - times[0] - k as f64 * dt).abs() <= 1e-9 * t_sim);
    if times[0].abs() > 1e-12 || (times[n - 1] - t_sim).abs() > 1e-9 * t_sim || !uniform {
        return Err(Error::InvalidGrid(format!("samples must cover [0, {t_sim}] uniformly")));
    }
    let zeroth = trapezoid(dt, p.iter().copied());
    let first = trapezoid(dt, p.iter().zip(times).map(|(p, t)| p * t));
    if first.abs() < RATE_DENOMINATOR_FLOOR {
        return Err(Error::DegenerateRate(first));
    }
    Ok(zeroth / first - 2.0 / t_sim)
}

/// Sampling for a transfer simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSettings {
    pub t_sim: f64,
    /// Output intervals on `[0, t_sim]`; chosen from the model when absent.
    #[serde(default)]
    pub intervals: Option<usize>,
    /// Integrator step budget (see [`crate::lindblad::EvolveOptions`]).
    #[serde(default = "default_step_budget")]
    pub step_budget: f64,
}

fn default_step_budget() -> f64 {
    DEFAULT_STEP_BUDGET
}

impl TransferSettings {
    pub fn new(t_sim: f64) -> Self {
        Self { t_sim, intervals: None, step_budget: DEFAULT_STEP_BUDGET }
    }
}

/// `t_sim = 5 / min γᵢ` over the modes' baths.
pub fn default_t_sim(model: &LvcModel) -> Result<f64> {
    let gamma = model.modes.iter().map(|m| m.bath.gamma).fold(f64::INFINITY, f64::min);
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter { name: "gamma", requirement: "> 0 for a default t_sim", value: gamma });
    }
    Ok(5.0 / gamma)
}

/// Output intervals resolving the fastest coherent oscillation, about five
/// samples per period of `|ΔE| + 2|V| + Σωᵢ`.
pub fn default_intervals(model: &LvcModel, t_sim: f64) -> usize {
    let freq = model.delta_e.abs() + 2.0 * model.v.abs() + model.modes.iter().map(|m| m.omega).sum::<f64>();
    let spacing = 1.2 / freq.max(1e-3);
    ((t_sim / spacing).ceil() as usize).max(16)
}

/// Evolves the donor initial state, recording ⟨σ_z⟩ and `P_D`.
pub fn simulate_donor_dynamics(model: &LvcModel, settings: &TransferSettings) -> Result<TimeSeries> {
    simulate_donor_dynamics_keeping(model, settings, SnapshotPolicy::None)
}

/// [`simulate_donor_dynamics`] that also keeps the states selected by `snapshots`.
pub fn simulate_donor_dynamics_keeping(
    model: &LvcModel,
    settings: &TransferSettings,
    snapshots: SnapshotPolicy,
) -> Result<TimeSeries> {
    let model = model.resolved()?;
    let intervals = settings.intervals.unwrap_or_else(|| default_intervals(&model, settings.t_sim));
    let grid = TimeGrid::new(settings.t_sim, intervals)?;
    let eq = build_master_equation(&model)?;
    let rho0 = initial_donor_state(&model)?;
    let sz = Observable::new(SZ, "1", Operator::sigma_z(&model.layout()?)?);
    let opts = EvolveOptions {
        step_budget: settings.step_budget,
        snapshots,
        ..Default::default()
    };
    let mut series = evolve(&rho0, &eq, &grid, &[sz], &opts)?;
    let pd = donor_population(&series)?;
    series.push_column(Column::new(P_DONOR, "1", pd.column(P_DONOR)?.to_vec()))?;
    Ok(series)
}

/// k_T of one model.
pub fn simulated_rate(model: &LvcModel, settings: &TransferSettings) -> Result<f64> {
    transfer_rate(&simulate_donor_dynamics(model, settings)?, settings.t_sim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub model: LvcModel,
    pub settings: TransferSettings,
}

/// k_T sampled over a ΔE grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpectrum {
    pub delta_e_grid: Vec<f64>,
    pub rates: Vec<f64>,
    pub metadata: SpectrumMetadata,
}

impl RateSpectrum {
    /// CSV with `delta_e` and `k_T` columns.
    pub fn write_csv<W: Write>(&self, writer: W, unit: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([format!("delta_e [{unit}]"), format!("k_T [{unit}]")]).map_err(io)?;
        for (e, k) in self.delta_e_grid.iter().zip(&self.rates) {
            w.write_record([e.to_string(), k.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Indices of strict local maxima of the rate.
    pub fn local_maxima(&self) -> Vec<usize> {
        let r = &self.rates;
        (1..r.len().saturating_sub(1)).filter(|&i| r[i] > r[i - 1] && r[i] > r[i + 1]).collect()
    }

    /// Rate at the grid point nearest `delta_e`.
    pub fn rate_near(&self, delta_e: f64) -> Option<f64> {
        self.delta_e_grid
            .iter()
            .zip(&self.rates)
            .min_by(|a, b| (a.0 - delta_e).abs().total_cmp(&(b.0 - delta_e).abs()))
            .map(|(_, &k)| k)
    }
}

/// One independent simulation per ΔE, run on the current rayon pool.
/// Results keep grid order, so the output does not depend on the pool size.
pub fn rate_spectrum(
    template: &LvcModel,
    delta_e_grid: &[f64],
    settings: &TransferSettings,
) -> Result<RateSpectrum> {
    if delta_e_grid.is_empty() {
        return Err(Error::InvalidGrid("empty ΔE grid".into()));
    }
    if delta_e_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("ΔE grid must be increasing".into()));
    }
    let model = template.resolved()?;
    let rates = delta_e_grid
        .par_iter()
        .enumerate()
        .map(|(index, &de)| {
            simulated_rate(&model.with_delta_e(de), settings)
                .map_err(|e| Error::GridPoint { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RateSpectrum {
        delta_e_grid: delta_e_grid.to_vec(),
        rates,
        metadata: SpectrumMetadata { model, settings: *settings },
    })
}

/// Two-mode resonance `ΔE = √((ℓ₁ω₁ + ℓ₂ω₂)² − (2V)²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub l1: i32,
    pub l2: i32,
    pub delta_e: f64,
}

/// All real, positive resonances with `|ℓᵢ| ≤ l_max`, sorted by ΔE.
///
/// Pairs giving the same ΔE within 1e-9 (such as `(ℓ₁, ℓ₂)` and
/// `(−ℓ₁, −ℓ₂)`) appear once, labelled by the pair with positive
/// `ℓ₁ω₁ + ℓ₂ω₂` and the fewest quanta.
pub fn resonance_positions(v: f64, omega1: f64, omega2: f64, l_max: u32) -> Vec<Resonance> {
    let l = l_max as i32;
    let mut all = Vec::new();
    for l1 in -l..=l {
        for l2 in -l..=l {
            let s = l1 as f64 * omega1 + l2 as f64 * omega2;
            let disc = s * s - 4.0 * v * v;
            if s > 0.0 && disc > 0.0 {
                all.push(Resonance { l1, l2, delta_e: disc.sqrt() });
            }
        }
    }
    all.sort_by(|a, b| {
        a.delta_e
            .total_cmp(&b.delta_e)
            .then((a.l1.abs() + a.l2.abs()).cmp(&(b.l1.abs() + b.l2.abs())))
            .then((a.l1, a.l2).cmp(&(b.l1, b.l2)))
    });
    let mut out: Vec<Resonance> = Vec::new();
    for r in all {
        match out.last() {
            Some(last) if (r.delta_e - last.delta_e).abs() <= 1e-9 => {}
            _ => out.push(r),
        }
    }
    out
}

/// Basis size on which `⟨m|𝒟(d)|n⟩` is converged for `m, n < levels`.
fn overlap_basis(levels: usize, d: f64) -> usize {
    let spread = d.abs() + 8.0;
    levels + (spread * spread).ceil() as usize + 16
}

/// `|⟨m|𝒟(d)|n⟩|²` for all `m, n < levels`.
pub fn franck_condon_table(levels: usize, d: f64) -> Result<DMatrix<f64>> {
    let big = overlap_basis(levels, d);
    let disp = displacement_op(&HilbertLayout::modes(&[big])?, 0, C64::new(d, 0.0))?;
    let m = disp.matrix();
    Ok(DMatrix::from_fn(levels, levels, |i, j| m[(i, j)].norm_sqr()))
}

/// Franck–Condon factor `FC_{m,n}(d) = |⟨m|𝒟(d)|n⟩|²`.
pub fn franck_condon(m: usize, n: usize, d: f64) -> Result<f64> {
    let table = franck_condon_table(m.max(n) + 1, d)?;
    Ok(table[(m, n)])
}

/// Thermally weighted overlap `Σ_m p_m(n̄) FC_{m,m+n}(d)`.
pub fn thermal_franck_condon(n: usize, d: f64, nbar: f64) -> Result<f64> {
    let mut levels = 1;
    while thermal_populations(nbar, levels)?.1 > 1e-14 {
        levels += 1;
    }
    let (pops, _) = thermal_populations(nbar, levels)?;
    let table = franck_condon_table(levels + n, d)?;
    Ok(pops.iter().enumerate().map(|(m, p)| p * table[(m, m + n)]).sum())
}

/// `k_FGR = A·|V|²·Σ_m p_m(n̄) FC_{m,m+n}(g/ω)` for `ΔE = nω`.
pub fn fgr_rate(v: f64, g: f64, omega: f64, nbar: f64, delta_e: f64, prefactor_a: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter { name: "omega", requirement: "> 0", value: omega });
    }
    let ratio = delta_e / omega;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 || n < 1.0 {
        return Err(Error::NonIntegerGap { delta_e, omega });
    }
    Ok(prefactor_a * v * v * thermal_franck_condon(n as usize, g / omega, nbar)?)
}

/// `k_M = |V|²√(π/(λk_BT)) exp[−(λ − ΔE)²/(4λk_BT)]`.
pub fn marcus_rate(v: f64, lambda: f64, k_bt: f64, delta_e: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter { name: "lambda", requirement: "> 0", value: lambda });
    }
    if !(k_bt > 0.0) {
        return Err(Error::InvalidParameter { name: "k_bt", requirement: "> 0", value: k_bt });
    }
    let lk = lambda * k_bt;
    Ok(v * v * (std::f64::consts::PI / lk).sqrt() * (-(lambda - delta_e).powi(2) / (4.0 * lk)).exp())
}

/// Electronic character of an eigenstate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Lower,
    Upper,
    Unclassified,
}

#[derive(Clone, Debug)]
pub struct AdiabaticSurfaces {
    pub eigenvalues: Vec<f64>,
    /// Columns in the full spin ⊗ modes basis, in eigenvalue order.
    pub eigenvectors: DMatrix<C64>,
    pub donor_weight: Vec<f64>,
    pub surface: Vec<Surface>,
}

impl AdiabaticSurfaces {
    /// CSV with energy, donor weight and surface label per eigenstate.
    pub fn write_csv<W: Write>(&self, writer: W, unit: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "index [1]".to_string(),
            format!("energy [{unit}]"),
            "donor_weight [1]".to_string(),
            "surface [label]".to_string(),
        ])
        .map_err(io)?;
        for k in 0..self.eigenvalues.len() {
            let label = match self.surface[k] {
                Surface::Lower => "lower",
                Surface::Upper => "upper",
                Surface::Unclassified => "unclassified",
            };
            w.write_record([
                k.to_string(),
                self.eigenvalues[k].to_string(),
                self.donor_weight[k].to_string(),
                label.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

const DEGENERACY_TOL: f64 = 1e-9;
const AMBIGUOUS_WEIGHT: f64 = 1e-6;

/// Eigendecomposition of the full LVC Hamiltonian with donor weights.
///
/// An eigenstate belongs to the lower surface when most of its weight sits
/// on the site whose diabatic minimum is lower (the acceptor for ΔE > 0).
/// Weights within 1e-6 of one half inherit the previous state's label;
/// members of degenerate eigenvalue clusters are left unclassified, since
/// their eigenvectors are not unique.
pub fn adiabatic_surfaces(model: &LvcModel) -> Result<AdiabaticSurfaces> {
    let h = crate::lvc::build_hamiltonian(model)?;
    let dim = h.dim();
    let eig = h.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);
    let half = dim / 2;
    let donor_weight: Vec<f64> = (0..dim)
        .map(|j| (0..half).map(|i| eigenvectors[(i, j)].norm_sqr()).sum::<f64>().clamp(0.0, 1.0))
        .collect();

    let donor_is_lower = model.delta_e < 0.0;
    let mut surface = Vec::with_capacity(dim);
    let mut previous = None;
    for k in 0..dim {
        let degenerate = (k > 0 && eigenvalues[k] - eigenvalues[k - 1] < DEGENERACY_TOL)
            || (k + 1 < dim && eigenvalues[k + 1] - eigenvalues[k] < DEGENERACY_TOL);
        let w = donor_weight[k];
        let label = if degenerate {
            Surface::Unclassified
        } else if (w - 0.5).abs() < AMBIGUOUS_WEIGHT {
            previous.unwrap_or(Surface::Unclassified)
        } else if (w > 0.5) == donor_is_lower {
            Surface::Lower
        } else {
            Surface::Upper
        };
        if label != Surface::Unclassified {
            previous = Some(label);
        }
        surface.push(label);
    }
    Ok(AdiabaticSurfaces { eigenvalues, eigenvectors, donor_weight, surface })
}
