//! Command execution. Every command returns its artifacts in memory; the
//! caller writes them once the run is complete.

use rayon::prelude::*;
use serde_json::json;
use thermbath_core::allaser::{coolant_initial_state, effective_rates, ensemble_mean_n};
use thermbath_core::hilbert::{fidelity, thermal_state, DensityMatrix, HilbertLayout, Operator};
use thermbath_core::lindblad::{
    analytic_phonon_curve, evolve, steady_state, thermal_dissipators, EvolveOptions, MasterEquation, Observable,
    SnapshotPolicy, SteadyStateOptions, TimeGrid,
};
use thermbath_core::probe::{
    bsb_signal_noisy, fit_free_populations_with_prior, fit_thermal, probe_grid, thermal_probe_populations,
    total_variation, ShotNoise, MEAN_N,
};
use thermbath_core::transfer::{
    adiabatic_surfaces, fgr_rate, marcus_rate, resonance_positions, simulate_donor_dynamics_keeping,
    simulated_rate, RateSpectrum, SpectrumMetadata, TransferSettings,
};
use thermbath_core::Error as CoreError;

use crate::config::{
    drive_spec, AllaserParams, BathRelaxParams, DynamicsParams, FgrParams, InitialOccupation, MarcusParams, Params,
    PopulationSpec, ProbeFitParams, ResonanceParams, Resolved, SpectrumParams, SteadyStateParams,
};
use crate::output::{Artifacts, PointFailure};

const TIME_UNIT: &str = "ms";
const ENERGY_UNIT: &str = "omega";

#[derive(Default)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub failures: Vec<PointFailure>,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CoreError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| CoreError::Io(std::io::Error::other(e.to_string())))
}

fn to_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), CoreError>) -> Result<Vec<u8>, CoreError> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn add_state(out: &mut Outcome, state: Option<&DensityMatrix>) {
    if let Some(rho) = state {
        out.artifacts.add_json("final_state.json", &rho.to_json());
    }
}

/// Runs the resolved command on the current rayon pool.
pub fn execute(resolved: &Resolved) -> Result<Outcome, CoreError> {
    let seed = resolved.config.seed.unwrap_or(0);
    let dump = resolved.config.dump_state.unwrap_or(false);
    match &resolved.params {
        Params::BathRelax(p) => bath_relax(p, dump),
        Params::SteadyState(p) => bath_steady_state(p, dump),
        Params::TransferSpectrum(p) | Params::TwoModeSpectrum(p) => spectrum(p),
        Params::TransferDynamics(p) => dynamics(p, dump),
        Params::ProbeFit(p) => probe(p, seed),
        Params::Allaser(p) => allaser(p, seed, dump),
        Params::Fgr(p) => fgr(p),
        Params::Marcus(p) => marcus(p),
        Params::Surfaces(p) => {
            let surfaces = adiabatic_surfaces(&p.model)?;
            let mut out = Outcome::default();
            out.artifacts.add("surfaces.csv", to_bytes(|b| surfaces.write_csv(b, ENERGY_UNIT))?);
            Ok(out)
        }
        Params::Resonances(p) => resonances(p),
    }
}

fn pure_bath(cutoff: usize, gamma_c: f64, gamma_h: f64, omega: f64) -> Result<(HilbertLayout, MasterEquation), CoreError> {
    let layout = HilbertLayout::modes(&[cutoff])?;
    let a = Operator::annihilation(&layout, 0)?;
    let h = Operator::number(&layout, 0)?.scale_real(omega);
    let eq = MasterEquation::new(h, thermal_dissipators(&a, gamma_c, gamma_h / gamma_c)?)?;
    Ok((layout, eq))
}

fn bath_relax(p: &BathRelaxParams, dump: bool) -> Result<Outcome, CoreError> {
    let cutoff = p.cutoff.expect("resolved");
    let (layout, eq) = pure_bath(cutoff, p.gamma_c, p.gamma_h, 0.0)?;
    let rho0 = match p.initial.unwrap_or_default() {
        InitialOccupation::Thermal => thermal_state(&layout, 0, p.n0)?.rho,
        InitialOccupation::Fock => DensityMatrix::basis_state(&layout, 0, &[p.n0 as usize])?,
    };
    let grid = TimeGrid::new(p.t_max, p.checkpoints.expect("resolved"))?;
    let opts = EvolveOptions {
        step_budget: p.step_budget.expect("resolved"),
        snapshots: if dump { SnapshotPolicy::Final } else { SnapshotPolicy::None },
        ..Default::default()
    };
    let n = Observable::new(MEAN_N, "quanta", Operator::number(&layout, 0)?);
    let mut series = evolve(&rho0, &eq, &grid, &[n], &opts)?.with_time_unit(TIME_UNIT);
    let analytic = analytic_phonon_curve(p.n0, p.gamma_h / p.gamma_c, p.gamma_c, &grid)?;
    let values = analytic.column(MEAN_N)?.to_vec();
    series.push_column(thermbath_core::lindblad::Column::new("mean_n_analytic", "quanta", values))?;
    let mut out = Outcome::default();
    out.artifacts.add("relaxation.csv", to_bytes(|b| series.write_csv(b))?);
    add_state(&mut out, series.final_state());
    out.summary = json!({ "n_ss": p.gamma_h / p.gamma_c, "final_mean_n": series.column(MEAN_N)?.last() });
    Ok(out)
}

fn bath_steady_state(p: &SteadyStateParams, dump: bool) -> Result<Outcome, CoreError> {
    let cutoff = p.cutoff.expect("resolved");
    let (layout, eq) = pure_bath(cutoff, p.gamma_c, p.gamma_h, p.omega.unwrap_or(0.0))?;
    let guess = DensityMatrix::basis_state(&layout, 0, &[0])?;
    let rho = steady_state(&eq, &guess, &SteadyStateOptions::default())?;
    let n_ss = p.gamma_h / p.gamma_c;
    let thermal = thermal_state(&layout, 0, n_ss)?;
    let pops = rho.populations();
    let ratio = n_ss / (n_ss + 1.0);
    let balance = pops.windows(2).map(|w| (w[1] / w[0] - ratio).abs()).fold(0.0, f64::max);
    let header = ["n [1]".to_string(), "population [1]".into(), "thermal [1]".into()];
    let rows = pops.iter().zip(&thermal.populations).enumerate().map(|(n, (p, t))| vec![n.to_string(), p.to_string(), t.to_string()]);
    let mut out = Outcome::default();
    out.artifacts.add("steady_state.csv", csv_bytes(&header, rows)?);
    add_state(&mut out, dump.then_some(&rho));
    out.summary = json!({
        "mean_n": pops.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>(),
        "fidelity_to_thermal": fidelity(&rho, &thermal.rho)?,
        "detailed_balance_error": balance,
    });
    Ok(out)
}

fn settings(t_sim: Option<f64>, intervals: Option<usize>, step_budget: Option<f64>) -> TransferSettings {
    TransferSettings {
        t_sim: t_sim.expect("resolved"),
        intervals,
        step_budget: step_budget.expect("resolved"),
    }
}

fn spectrum(p: &SpectrumParams) -> Result<Outcome, CoreError> {
    let settings = settings(p.t_sim, p.intervals, p.step_budget);
    let grid = p.delta_e.points();
    let results: Vec<Result<f64, CoreError>> =
        grid.par_iter().map(|&de| simulated_rate(&p.model.with_delta_e(de), &settings)).collect();
    let mut kept = RateSpectrum {
        delta_e_grid: Vec::new(),
        rates: Vec::new(),
        metadata: SpectrumMetadata { model: p.model.clone(), settings },
    };
    let mut out = Outcome::default();
    for (index, (de, r)) in grid.iter().zip(results).enumerate() {
        match r {
            Ok(k) => {
                kept.delta_e_grid.push(*de);
                kept.rates.push(k);
            }
            Err(e) => out.failures.push(PointFailure { index, value: *de, error: e.to_string() }),
        }
    }
    let bytes = to_bytes(|b| kept.write_csv(b, ENERGY_UNIT))?;
    if out.failures.is_empty() {
        out.artifacts.add("k_t.csv", bytes);
    } else {
        out.artifacts.add_partial("k_t.partial.csv", bytes);
    }
    let peaks: Vec<f64> = kept.local_maxima().into_iter().map(|i| kept.delta_e_grid[i]).collect();
    out.summary = json!({ "points": grid.len(), "local_maxima": peaks });
    Ok(out)
}

fn dynamics(p: &DynamicsParams, dump: bool) -> Result<Outcome, CoreError> {
    let settings = settings(p.t_sim, p.intervals, p.step_budget);
    let policy = if dump { SnapshotPolicy::Final } else { SnapshotPolicy::None };
    let series = simulate_donor_dynamics_keeping(&p.model, &settings, policy)?.with_time_unit(format!("1/{ENERGY_UNIT}"));
    let k_t = thermbath_core::transfer::transfer_rate(&series, settings.t_sim)?;
    let mut out = Outcome::default();
    out.artifacts.add("dynamics.csv", to_bytes(|b| series.write_csv(b))?);
    add_state(&mut out, series.final_state());
    out.summary = json!({ "k_t": k_t });
    Ok(out)
}

fn probe(p: &ProbeFitParams, seed: u64) -> Result<Outcome, CoreError> {
    let truth = match &p.population {
        PopulationSpec::Thermal(n) => thermal_probe_populations(*n)?,
        PopulationSpec::Free(v) => v.clone(),
    };
    let omega = p.omega_rabi.expect("resolved");
    let grid = probe_grid(omega, p.points.expect("resolved"), p.window.expect("resolved"));
    let noise = ShotNoise { shots: p.shots.expect("resolved"), seed, rabi_jitter: p.rabi_jitter.expect("resolved") };
    let signal = bsb_signal_noisy(&truth, omega, p.gamma_d.expect("resolved"), &grid, &noise)?;
    let thermal = fit_thermal(&signal)?;
    let free = fit_free_populations_with_prior(&signal, &thermal, p.n_max.expect("resolved"), p.constraint_scale.expect("resolved"))?;
    let header = ["n [1]".to_string(), "p_fit [1]".into(), "sigma [1]".into(), "p_true [1]".into()];
    let rows = free.p_n.iter().enumerate().map(|(n, v)| {
        vec![
            n.to_string(),
            v.to_string(),
            free.covariance[n][n].max(0.0).sqrt().to_string(),
            truth.get(n).copied().unwrap_or(0.0).to_string(),
        ]
    });
    let mut out = Outcome::default();
    out.artifacts.add("signal.csv", to_bytes(|b| signal.write_csv(b, TIME_UNIT))?);
    out.artifacts.add("populations.csv", csv_bytes(&header, rows)?);
    out.summary = json!({
        "thermal_fit": thermal,
        "n_ave_sigma": thermal.n_ave_sigma(),
        "free_fit": { "nbar_mean": free.nbar_mean, "nbar_sigma": free.nbar_sigma,
                      "chi2_reduced": free.chi2_reduced, "active_upper": free.active_upper,
                      "converged": free.converged },
        "total_variation_to_truth": total_variation(&free.p_n, &truth),
    });
    Ok(out)
}

fn allaser(p: &AllaserParams, seed: u64, dump: bool) -> Result<Outcome, CoreError> {
    let spec = drive_spec(p, seed);
    spec.validate()?;
    let rates = effective_rates(&spec)?;
    let rho0 = coolant_initial_state(spec.cutoff, p.n0)?;
    let t_end = p.t_end.expect("resolved");
    let holds = (t_end / p.tau).round() as usize;
    let grid = TimeGrid::new(t_end, holds)?;
    let ens = ensemble_mean_n(&spec, &rho0, &grid, p.trajectories.expect("resolved"))?;
    let curve = analytic_phonon_curve(ens.mean_n[0], rates.n_ss, rates.gamma_prime, &grid)?;
    let reference = curve.column(MEAN_N)?;
    let header = [
        format!("time [{TIME_UNIT}]"),
        "mean_n [quanta]".into(),
        "stderr [quanta]".into(),
        "mean_n_effective [quanta]".into(),
    ];
    let rows = (0..ens.times.len()).map(|k| {
        vec![ens.times[k].to_string(), ens.mean_n[k].to_string(), ens.stderr[k].to_string(), reference[k].to_string()]
    });
    let mode = ens.final_mode_state()?;
    let thermal = thermal_state(mode.layout(), 0, rates.n_ss)?;
    let mut out = Outcome::default();
    out.artifacts.add("ensemble.csv", csv_bytes(&header, rows)?);
    add_state(&mut out, dump.then_some(&ens.final_state_mean));
    out.warnings = spec.warnings();
    out.summary = json!({
        "rates_per_ms": { "gamma_b": rates.gamma_b, "gamma_r": rates.gamma_r, "gamma_prime": rates.gamma_prime },
        "n_ss": rates.n_ss,
        "omega_r_2pi_khz": p.omega_r,
        "trajectories": ens.n_trajectories,
        "final_fidelity_to_thermal": fidelity(&mode, &thermal.rho)?,
    });
    Ok(out)
}

fn fgr(p: &FgrParams) -> Result<Outcome, CoreError> {
    let omega = p.omega.expect("resolved");
    let a = p.prefactor_a.expect("resolved");
    let grid = p.delta_e.points();
    let mut header = vec![format!("delta_e [{ENERGY_UNIT}]")];
    header.extend(p.nbar.iter().map(|n| format!("k_fgr_nbar_{n} [{ENERGY_UNIT}]")));
    let mut rows = Vec::with_capacity(grid.len());
    for &de in &grid {
        let mut row = vec![de.to_string()];
        for &n in &p.nbar {
            row.push(fgr_rate(p.v, p.g, omega, n, de, a)?.to_string());
        }
        rows.push(row);
    }
    let mut out = Outcome::default();
    out.artifacts.add("fgr.csv", csv_bytes(&header, rows)?);
    Ok(out)
}

fn marcus(p: &MarcusParams) -> Result<Outcome, CoreError> {
    let lambda = p.lambda.expect("resolved");
    let header = [format!("delta_e [{ENERGY_UNIT}]"), format!("k_marcus [{ENERGY_UNIT}]")];
    let rows = p
        .delta_e
        .points()
        .into_iter()
        .map(|de| Ok(vec![de.to_string(), marcus_rate(p.v, lambda, p.k_bt, de)?.to_string()]))
        .collect::<Result<Vec<_>, CoreError>>()?;
    let mut out = Outcome::default();
    out.artifacts.add("marcus.csv", csv_bytes(&header, rows)?);
    out.summary = json!({ "lambda": lambda });
    Ok(out)
}

fn resonances(p: &ResonanceParams) -> Result<Outcome, CoreError> {
    let res = resonance_positions(p.v, p.omega1, p.omega2, p.l_max.expect("resolved"));
    let header = ["l1 [1]".to_string(), "l2 [1]".into(), format!("delta_e [{ENERGY_UNIT}]")];
    let rows = res.iter().map(|r| vec![r.l1.to_string(), r.l2.to_string(), r.delta_e.to_string()]);
    let mut out = Outcome::default();
    out.artifacts.add("resonances.csv", csv_bytes(&header, rows)?);
    Ok(out)
}
