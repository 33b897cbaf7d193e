//! End-to-end acceptance checks. Each test prints one `[criterion N] PASS|FAIL`
//! line with the measured quantities, then asserts.
//!
//! Heavy full-size variants are `#[ignore]`d; run them with
//! `cargo test --release -p thermbath-core --test acceptance -- --ignored`.

use std::f64::consts::{PI, TAU};
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thermbath_core::allaser::{
    coolant_initial_state, effective_rates, ensemble_mean_n, phase_sequence, red_rabi_for_steady_state,
    StochasticDriveSpec,
};
use thermbath_core::hilbert::{
    displacement_op, expectation, fidelity, thermal_state, DensityMatrix, HilbertLayout, Operator, C64,
};
use thermbath_core::lindblad::{
    analytic_phonon_curve, evolve, steady_state, thermal_dissipators, Column, EvolveOptions, MasterEquation,
    Observable, SnapshotPolicy, SteadyStateOptions, TimeGrid, TimeSeries,
};
use thermbath_core::lvc::{initial_donor_state, nbar_from_temperature, BathSpec, ImperfectionSpec, LvcModel, ModeSpec};
use thermbath_core::probe::{
    bsb_signal_noisy, default_probe_grid, extract_rates, fit_free_populations_with_prior, fit_thermal,
    thermal_probe_populations, total_variation, RateMode, ShotNoise, DEFAULT_PROBE_POINTS, MEAN_N,
};
use thermbath_core::transfer::{
    fgr_rate, franck_condon_table, marcus_rate, rate_spectrum, resonance_positions, simulated_rate, transfer_rate,
    RateSpectrum, TransferSettings, P_DONOR,
};

/// Held by every test so timings are not shared with a concurrent test.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: &str, pass: bool, detail: impl AsRef<str>) {
    println!("[criterion {criterion}] {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(pass, "criterion {criterion} failed: {}", detail.as_ref());
}

fn pure_bath(cutoff: usize, gamma_c: f64, gamma_h: f64) -> (HilbertLayout, MasterEquation, Operator) {
    let layout = HilbertLayout::modes(&[cutoff]).unwrap();
    let a = Operator::annihilation(&layout, 0).unwrap();
    let eq = MasterEquation::new(Operator::zeros(&layout), thermal_dissipators(&a, gamma_c, gamma_h / gamma_c).unwrap())
        .unwrap();
    (layout.clone(), eq, Operator::number(&layout, 0).unwrap())
}

fn mean_n(rho: &DensityMatrix, n: &Operator) -> f64 {
    expectation(rho, n).unwrap().re
}

// Relaxation law of the engineered bath.

#[test]
fn relaxation_law() {
    let _serial = serial();
    let (gc, gh) = (4.03, 5.34);
    let started = Instant::now();
    let (layout, eq, n_op) = pure_bath(40, gc, gh);
    let grid = TimeGrid::new(3.0, 20).unwrap();
    let initial = [
        ("fock 7", DensityMatrix::basis_state(&layout, 0, &[7]).unwrap()),
        ("thermal 0.1", thermal_state(&layout, 0, 0.1).unwrap().rho),
    ];
    let mut worst = 0.0f64;
    let mut relaxed = None;
    for (_, rho0) in &initial {
        let n0 = mean_n(rho0, &n_op);
        let obs = [Observable::new(MEAN_N, "quanta", n_op.clone())];
        let opts = EvolveOptions { snapshots: SnapshotPolicy::Final, ..EvolveOptions::default() };
        let series = evolve(rho0, &eq, &grid, &obs, &opts).unwrap();
        relaxed = series.final_state().cloned();
        let exact = analytic_phonon_curve(n0, gh / gc, gc, &grid).unwrap();
        for (a, b) in series.column(MEAN_N).unwrap().iter().zip(exact.column(MEAN_N).unwrap()) {
            worst = worst.max(((a - b) / b).abs());
        }
    }
    let evolved = started.elapsed().as_secs_f64();
    let ss = steady_state(&eq, &relaxed.unwrap(), &SteadyStateOptions::default()).unwrap();
    let n_ss = mean_n(&ss, &n_op);
    let ss_err = (n_ss - gh / gc).abs() / (gh / gc);
    let secs = started.elapsed().as_secs_f64();
    report(
        "1",
        worst <= 1e-5 && ss_err <= 1e-3 && secs < 10.0,
        format!(
            "max rel err {worst:.2e} (<= 1e-5), n_ss {n_ss:.6} rel err {ss_err:.2e} (<= 1e-3), \
             {secs:.2} s (< 10 s; evolution {evolved:.2} s)"
        ),
    );
}

// Thermal steady state and detailed balance.

#[test]
fn thermal_steady_state() {
    let _serial = serial();
    let mut details = Vec::new();
    let mut pass = true;
    for nbar in [0.09, 1.10, 2.74] {
        let (layout, eq, _) = pure_bath(60, 1.0, nbar);
        let guess = DensityMatrix::basis_state(&layout, 0, &[0]).unwrap();
        let opts = SteadyStateOptions { change_tol: 1e-13, residual_tol: 1e-13, ..Default::default() };
        let ss = steady_state(&eq, &guess, &opts).unwrap();
        let thermal = thermal_state(&layout, 0, nbar).unwrap();
        let f = fidelity(&ss, &thermal.rho).unwrap();
        let p = ss.populations();
        let ratio = nbar / (nbar + 1.0);
        // Levels below 1e-8 carry ratios dominated by roundoff.
        let balance = p
            .windows(2)
            .filter(|w| w[0] > 1e-8)
            .map(|w| (w[1] / w[0] - ratio).abs())
            .fold(0.0, f64::max);
        pass &= f >= 0.999999 && balance <= 1e-6;
        details.push(format!("nbar {nbar}: F = {f:.9}, ratio err {balance:.1e}"));
    }
    report("2", pass, details.join("; "));
}

// Single-mode transfer spectrum.

fn single_mode_model(nbar: f64) -> LvcModel {
    LvcModel {
        delta_e: 0.0,
        v: 0.2,
        modes: vec![ModeSpec { g: 1.1, omega: 1.0, bath: BathSpec { gamma: 0.036, nbar } }],
        imperfections: ImperfectionSpec { gamma_z: 0.0014, gamma_m: 0.016 },
        cutoffs: vec![],
    }
}

/// Highest interior local maximum within `window` of `target`.
fn peak_near(s: &RateSpectrum, target: f64, window: f64) -> Option<f64> {
    s.local_maxima()
        .into_iter()
        .filter(|&i| (s.delta_e_grid[i] - target).abs() <= window + 1e-9)
        .max_by(|&i, &j| s.rates[i].total_cmp(&s.rates[j]))
        .map(|i| s.delta_e_grid[i])
}

#[test]
fn single_mode_spectrum() {
    let _serial = serial();
    let grid: Vec<f64> = (2..=65).map(|k| k as f64 * 0.1).collect();
    let started = Instant::now();
    let spectra: Vec<RateSpectrum> = [0.15, 0.80]
        .iter()
        .map(|&nbar| {
            let model = single_mode_model(nbar);
            let t_sim = 5.0 / 0.036;
            rate_spectrum(&model, &grid, &TransferSettings::new(t_sim)).unwrap()
        })
        .collect();
    let (cold, hot) = (&spectra[0], &spectra[1]);
    let peaks: Vec<Option<f64>> = [3.0, 4.0, 5.0].iter().map(|&e| peak_near(cold, e, 0.15)).collect();
    let hot_peaks: Vec<Option<f64>> = [3.0, 4.0, 5.0].iter().map(|&e| peak_near(hot, e, 0.15)).collect();
    let a = peaks.iter().all(Option::is_some);
    let b = cold.rate_near(1.0).unwrap() > hot.rate_near(1.0).unwrap();
    let at5 = peaks[2].unwrap_or(5.0);
    let c = hot.rate_near(at5).unwrap() >= cold.rate_near(at5).unwrap();
    report(
        "3",
        a && b && c,
        format!(
            "cold maxima near 3,4,5: {peaks:?} (hot {hot_peaks:?}); k(1.0): cold {:.4e} > hot {:.4e}; k({at5}): hot {:.4e} >= cold {:.4e}; {:.0} s",
            cold.rate_near(1.0).unwrap(),
            hot.rate_near(1.0).unwrap(),
            hot.rate_near(at5).unwrap(),
            cold.rate_near(at5).unwrap(),
            started.elapsed().as_secs_f64()
        ),
    );
}

// Two-mode resonances.

fn two_mode_model(nbar2: f64) -> LvcModel {
    LvcModel {
        delta_e: 0.0,
        v: 0.13,
        modes: vec![
            ModeSpec { g: 0.33, omega: 1.0, bath: BathSpec { gamma: 0.013, nbar: 0.10 } },
            ModeSpec { g: 0.20, omega: 0.6, bath: BathSpec { gamma: 0.010 * 0.6, nbar: nbar2 } },
        ],
        imperfections: ImperfectionSpec { gamma_z: 0.0004, gamma_m: 0.0040 },
        cutoffs: vec![],
    }
}

/// Smallest per-mode cutoffs accepted for the donor initial state.
fn minimal_cutoffs(model: &LvcModel) -> LvcModel {
    let defaults = model.resolved().unwrap().cutoffs;
    let mut cutoffs = defaults.clone();
    for i in 0..cutoffs.len() {
        cutoffs[i] = (2..=defaults[i])
            .find(|&n| {
                let mut trial = model.clone();
                trial.cutoffs = defaults.clone();
                trial.cutoffs[i] = n;
                trial.resolved().is_ok_and(|m| initial_donor_state(&m).is_ok())
            })
            .unwrap();
    }
    let mut out = model.clone();
    out.cutoffs = cutoffs;
    out.resolved().unwrap()
}

fn local_spectrum(model: &LvcModel, centre: f64, half_width: f64, step: f64, settings: &TransferSettings) -> RateSpectrum {
    let n = (half_width / step).round() as i64;
    let grid: Vec<f64> = (-n..=n).map(|k| centre + k as f64 * step).collect();
    rate_spectrum(model, &grid, settings).unwrap()
}

fn two_mode_settings() -> TransferSettings {
    // t_sim = 5 / min γ; step budget 1.0 agrees with 0.25 to 1e-5 relative here.
    TransferSettings { t_sim: 5.0 / 0.006, intervals: None, step_budget: 1.0 }
}

#[test]
fn two_mode_resonances_closed_form() {
    let _serial = serial();
    let res = resonance_positions(0.13, 1.0, 0.6, 3);
    let found: Vec<Option<f64>> = [0.304, 0.541, 0.966]
        .iter()
        .map(|&t| res.iter().map(|r| r.delta_e).find(|e| (e - t).abs() <= 1e-3))
        .collect();
    report("4 closed form", found.iter().all(Option::is_some), format!("{found:?} vs 0.304, 0.541, 0.966 (+-1e-3)"));
}

#[test]
fn two_mode_resonances_dynamics() {
    let _serial = serial();
    let started = Instant::now();
    let settings = two_mode_settings();
    let cold = minimal_cutoffs(&two_mode_model(0.02));
    let hot = minimal_cutoffs(&two_mode_model(0.80));
    let cold_a = local_spectrum(&cold, 0.54, 0.06, 0.02, &settings);
    let cold_b = local_spectrum(&cold, 0.97, 0.06, 0.02, &settings);
    let hot_c = local_spectrum(&hot, 0.30, 0.06, 0.02, &settings);
    let (pa, pb, pc) = (peak_near(&cold_a, 0.54, 0.05), peak_near(&cold_b, 0.97, 0.05), peak_near(&hot_c, 0.30, 0.05));
    let a = pa.is_some() && pb.is_some();
    let at_c = pc.unwrap_or(0.30);
    let k_hot_c = hot_c.rate_near(at_c).unwrap();
    let k_cold_c = simulated_rate(&cold.with_delta_e(at_c), &settings).unwrap();
    let b = pc.is_some() && k_hot_c >= 2.0 * k_cold_c;
    let at_a = pa.unwrap_or(0.54);
    let k_cold_a = cold_a.rate_near(at_a).unwrap();
    let k_hot_a = simulated_rate(&hot.with_delta_e(at_a), &settings).unwrap();
    let c = k_hot_a < k_cold_a;
    report(
        "4 dynamics",
        a && b && c,
        format!(
            "cold peaks {pa:?}, {pb:?}; hot peak {pc:?} with k {k_hot_c:.3e} vs cold {k_cold_c:.3e} (ratio {:.2}, >= 2); \
             at {at_a}: hot {k_hot_a:.3e} < cold {k_cold_a:.3e}; cutoffs cold {:?} hot {:?}; {:.0} s",
            k_hot_c / k_cold_c,
            cold.cutoffs,
            hot.cutoffs,
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "full two-mode spectra at default cutoffs take several hours on one core"]
fn two_mode_full_spectra() {
    let _serial = serial();
    let grid: Vec<f64> = (10..=120).map(|k| k as f64 * 0.01).collect();
    let settings = TransferSettings { t_sim: 5.0 / 0.006, intervals: None, step_budget: 0.25 };
    let cold = rate_spectrum(&two_mode_model(0.02), &grid, &settings).unwrap();
    let hot = rate_spectrum(&two_mode_model(0.80), &grid, &settings).unwrap();
    let a = peak_near(&cold, 0.54, 0.05).is_some() && peak_near(&cold, 0.97, 0.05).is_some();
    let pc = peak_near(&hot, 0.30, 0.05);
    let b = pc.is_some_and(|e| hot.rate_near(e).unwrap() >= 2.0 * cold.rate_near(e).unwrap());
    let at_a = peak_near(&cold, 0.54, 0.05).unwrap_or(0.54);
    let c = hot.rate_near(at_a).unwrap() < cold.rate_near(at_a).unwrap();
    report("4 full", a && b && c, format!("cold maxima {:?}, hot peak {pc:?}", cold.local_maxima()));
}

// All-laser bath.

fn allaser_run(n0: f64, n_ss: f64, trajectories: usize) -> (bool, String) {
    let (omega_b, gamma, tau) = (TAU * 5.0, TAU * 1000.0, 0.1);
    let spec = StochasticDriveSpec {
        omega_r: red_rabi_for_steady_state(n_ss, omega_b, gamma, tau).unwrap(),
        omega_b,
        gamma_decay: gamma,
        tau,
        cutoff: 40,
        seed: 2025,
    };
    let rates = effective_rates(&spec).unwrap();
    // Five relaxation times, rounded up to whole milliseconds.
    let t_end = (5.0 / rates.gamma_prime).ceil();
    let grid = TimeGrid::new(t_end, (t_end / tau).round() as usize).unwrap();
    let rho0 = coolant_initial_state(40, n0).unwrap();
    let ens = ensemble_mean_n(&spec, &rho0, &grid, trajectories).unwrap();
    let reference = analytic_phonon_curve(ens.mean_n[0], rates.n_ss, rates.gamma_prime, &grid).unwrap();
    let reference = reference.column(MEAN_N).unwrap();
    let mut worst = 0.0f64;
    let mut inside = 0;
    for k in 0..ens.times.len() {
        let dev = (ens.mean_n[k] - reference[k]).abs();
        if dev <= 3.0 * ens.stderr[k] {
            inside += 1;
        }
        if ens.stderr[k] > 0.0 {
            worst = worst.max(dev / ens.stderr[k]);
        }
    }
    let mode = ens.final_mode_state().unwrap();
    let f = fidelity(&mode, &thermal_state(mode.layout(), 0, n_ss).unwrap().rho).unwrap();
    let pass = inside == ens.times.len() && f >= 0.999;
    (
        pass,
        format!(
            "(n0 {n0}, n_ss {n_ss}): {inside}/{} checkpoints within 3 se (worst {worst:.2} se), F = {f:.5}",
            ens.times.len()
        ),
    )
}

fn allaser_check(trajectories: usize, label: &str, limit_secs: Option<f64>) {
    let started = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for (n0, n_ss) in [(0.1, 0.5), (0.1, 2.0), (5.0, 0.5), (5.0, 2.0)] {
        let (ok, d) = allaser_run(n0, n_ss, trajectories);
        pass &= ok;
        details.push(d);
    }
    let secs = started.elapsed().as_secs_f64();
    let in_time = limit_secs.is_none_or(|l| secs < l);
    details.push(format!("N = {trajectories}, {secs:.0} s"));
    report(label, pass && in_time, details.join("; "));
}

#[test]
fn allaser_smoke() {
    let _serial = serial();
    allaser_check(10, "5 smoke", Some(300.0));
}

#[test]
#[ignore = "50 trajectories per run; roughly 25 minutes on one core"]
fn allaser_full() {
    let _serial = serial();
    allaser_check(50, "5 full", None);
}

// Golden-rule anchor.

#[test]
fn golden_rule_anchor() {
    let _serial = serial();
    let started = Instant::now();
    let mut ratios = Vec::new();
    for nbar in [0.15, 0.8, 1.5, 3.0] {
        let model = LvcModel {
            delta_e: 0.0,
            v: 0.2,
            modes: vec![ModeSpec { g: 1.1, omega: 1.0, bath: BathSpec { gamma: 0.036, nbar } }],
            imperfections: ImperfectionSpec { gamma_z: 0.001, gamma_m: 0.016 },
            cutoffs: vec![],
        };
        for de in [3.0, 5.0] {
            let k = simulated_rate(&model.with_delta_e(de), &TransferSettings::new(5.0 / 0.036)).unwrap();
            let bare = fgr_rate(0.2, 1.1, 1.0, nbar, de, 1.0).unwrap();
            ratios.push((nbar, de, k / bare));
        }
    }
    let pass = ratios.iter().all(|&(_, _, r)| (r - 1.18).abs() <= 0.3 * 1.18);
    let listed: Vec<String> = ratios.iter().map(|(n, e, r)| format!("({n}, {e}): {r:.3}")).collect();
    report(
        "6",
        pass,
        format!("k_T/(V^2 FC) in [0.826, 1.534]: {}; {:.0} s", listed.join(", "), started.elapsed().as_secs_f64()),
    );
}

// Marcus regime.

struct MarcusCase {
    g: f64,
    k_bt: f64,
    cutoff: usize,
    grid: Vec<f64>,
}

fn marcus_checks(case: &MarcusCase, label: &str) {
    let started = Instant::now();
    let lambda = case.g * case.g;
    let nbar = nbar_from_temperature(case.k_bt, 1.0).unwrap();
    let model = |gamma: f64| LvcModel {
        delta_e: 0.0,
        v: 0.2,
        modes: vec![ModeSpec { g: case.g, omega: 1.0, bath: BathSpec { gamma, nbar } }],
        imperfections: ImperfectionSpec::default(),
        cutoffs: vec![case.cutoff],
    };
    // Budget 1.0 agrees with 0.25 to 1e-5 relative on this model.
    let settings = TransferSettings { t_sim: TAU * 250.0, intervals: None, step_budget: 1.0 };
    let spectrum = rate_spectrum(&model(0.2), &case.grid, &settings).unwrap();
    let step = case.grid[1] - case.grid[0];
    let (imax, _) = spectrum.rates.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let peak = spectrum.delta_e_grid[imax];
    let peak_ok = (peak - lambda).abs() <= step;
    let ratios: Vec<(f64, f64)> = spectrum
        .delta_e_grid
        .iter()
        .zip(&spectrum.rates)
        .filter(|(e, _)| **e >= 0.5 * lambda - 1e-9 && **e <= 1.5 * lambda + 1e-9)
        .map(|(&e, &k)| (e, k / (PI.sqrt() * marcus_rate(0.2, lambda, case.k_bt, e).unwrap())))
        .collect();
    let ratio_ok = ratios.iter().all(|(_, r)| (0.7..=1.3).contains(r));
    let k_peak = spectrum.rates[imax];
    let k_double = simulated_rate(&model(0.4).with_delta_e(peak), &settings).unwrap();
    let change = (k_double - k_peak).abs() / k_peak;
    let listed: Vec<String> = ratios.iter().map(|(e, r)| format!("{e}: {r:.3}")).collect();
    report(
        label,
        peak_ok && ratio_ok && change < 0.15,
        format!(
            "lambda {lambda}, peak at {peak} (step {step}); ratio to sqrt(pi) k_M {}; gamma doubled changes k_T by {:.1}% (< 15%); {:.0} s",
            listed.join(", "),
            100.0 * change,
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn marcus_scaled() {
    let _serial = serial();
    let case = MarcusCase { g: 4.0, k_bt: 2.5, cutoff: 60, grid: (2..=6).map(|k| k as f64 * 4.0).collect() };
    marcus_checks(&case, "7 scaled");
}

#[test]
#[ignore = "d = 460; about 10 h per grid point and 5 days in total on one core"]
fn marcus_full() {
    let _serial = serial();
    let case = MarcusCase { g: 9.0, k_bt: 10.5, cutoff: 230, grid: (5..=15).map(|k| k as f64 * 8.1).collect() };
    marcus_checks(&case, "7 full");
}

// Thermometry.

#[test]
fn thermometry_roundtrip() {
    let _serial = serial();
    let omega = TAU * 0.1;
    let grid = default_probe_grid(omega, DEFAULT_PROBE_POINTS);
    let seeds = 10u64;
    let mut details = Vec::new();
    let mut pass = true;
    for nbar in [0.09, 1.10, 2.74] {
        let truth = thermal_probe_populations(nbar).unwrap();
        let (mut sq, mut worst_rel, mut tv_sum, mut worst_tv) = (0.0, 0.0f64, 0.0, 0.0f64);
        for seed in 0..seeds {
            let noise = ShotNoise { shots: 200, seed, rabi_jitter: 0.0 };
            let signal = bsb_signal_noisy(&truth, omega, 0.004, &grid, &noise).unwrap();
            let thermal = fit_thermal(&signal).unwrap();
            let free = fit_free_populations_with_prior(&signal, &thermal, 15, 500.0).unwrap();
            let rel = (thermal.n_ave - nbar) / nbar;
            sq += rel * rel;
            worst_rel = worst_rel.max(rel.abs());
            let tv = total_variation(&free.p_n, &truth);
            tv_sum += tv;
            worst_tv = worst_tv.max(tv);
        }
        let rms = (sq / seeds as f64).sqrt();
        let mean_tv = tv_sum / seeds as f64;
        pass &= rms <= 0.10 && mean_tv <= 0.05;
        details.push(format!(
            "nbar {nbar}: rms rel err {rms:.3} (worst {worst_rel:.3}), mean TV {mean_tv:.4} (worst {worst_tv:.4})"
        ));
    }

    let (gc, gh, n0) = (4.03, 5.34, 7.0);
    let line = |t: f64| 0.1 + gh * t;
    let relax = |t: f64| gh / gc + (n0 - gh / gc) * (-gc * t).exp();
    let series = |f: &dyn Fn(f64) -> f64, t_end: f64, noise: Option<(u64, f64)>| {
        let times: Vec<f64> = (0..=20).map(|k| t_end * k as f64 / 20.0).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(noise.map_or(0, |n| n.0));
        let normal = Normal::new(0.0, noise.map_or(0.0, |n| n.1)).unwrap();
        let values = times.iter().map(|&t| f(t) + normal.sample(&mut rng)).collect();
        TimeSeries::new(times, vec![Column::new(MEAN_N, "quanta", values)]).unwrap()
    };
    let exact_h = extract_rates(&series(&line, 0.2, None), RateMode::Heating).unwrap();
    let exact_c = extract_rates(&series(&relax, 3.0, None), RateMode::Cooling).unwrap();
    let exact_ok = (exact_h.rate - gh).abs() <= exact_h.sigma + 1e-9 * gh
        && (exact_c.rate - gc).abs() <= exact_c.sigma + 1e-6 * gc;
    // Calibration of σ on noisy data: about 68% of fits fall within 1σ. Near
    // the plateau a noise step can exceed the monotonicity tolerance, and the
    // fit then refuses the series; those draws are counted apart.
    let draws = 40;
    let mut coverage = Vec::new();
    for (f, t_end, mode, truth) in [(&line as &dyn Fn(f64) -> f64, 0.2, RateMode::Heating, gh), (&relax, 3.0, RateMode::Cooling, gc)] {
        let (mut fitted, mut within) = (0, 0);
        for seed in 0..draws {
            if let Ok(r) = extract_rates(&series(f, t_end, Some((seed, 0.05))), mode) {
                fitted += 1;
                within += usize::from((r.rate - truth).abs() <= r.sigma);
            }
        }
        coverage.push((fitted as f64 / draws as f64, within as f64 / fitted.max(1) as f64));
    }
    let calibrated = coverage.iter().all(|&(fit, cov)| fit >= 0.8 && (0.5..=0.85).contains(&cov));
    pass &= exact_ok && calibrated;
    details.push(format!(
        "rates: exact gamma_h {:.6}+-{:.1e}, gamma_c {:.6}+-{:.1e}; noisy (fitted fraction, within 1 sigma): heating {:.2?}, cooling {:.2?}",
        exact_h.rate, exact_h.sigma, exact_c.rate, exact_c.sigma, coverage[0], coverage[1]
    ));
    report("8", pass, details.join("; "));
}

// Property suites.

fn run_property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() });
    let started = Instant::now();
    let out = runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"));
    println!("  {name}: {:.1} s", started.elapsed().as_secs_f64());
    out
}

#[test]
fn property_suites() {
    let _serial = serial();
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut record = |r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(e);
        }
    };

    record(run_property("ladder algebra", 32, 2usize..30, |n| {
        let layout = HilbertLayout::modes(&[n]).unwrap();
        let a = Operator::annihilation(&layout, 0).unwrap();
        let comm = a.commutator(&a.adjoint()).unwrap();
        let num = a.adjoint().mul(&a).unwrap();
        for i in 0..n {
            let expected = if i + 1 < n { 1.0 } else { 1.0 - n as f64 };
            prop_assert!((comm.matrix()[(i, i)].re - expected).abs() < 1e-12);
            prop_assert!((num.matrix()[(i, i)].re - i as f64).abs() < 1e-12);
        }
        Ok(())
    }));

    record(run_property("displacement", 32, (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), |(a, b, c, d)| {
        let layout = HilbertLayout::modes(&[60]).unwrap();
        let (x, y) = (C64::new(a, b), C64::new(c, d));
        let dx = displacement_op(&layout, 0, x).unwrap();
        let dy = displacement_op(&layout, 0, y).unwrap();
        let dxy = displacement_op(&layout, 0, x + y).unwrap();
        let unit = dx.adjoint().mul(&dx).unwrap();
        // D(x)D(y) = exp((x y* − x* y)/2) D(x + y), checked on the low levels.
        let phase = ((x * y.conj() - x.conj() * y) * 0.5).exp();
        let prod = dx.mul(&dy).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((unit.matrix()[(i, j)] - id).norm() < 1e-9);
                prop_assert!((prod.matrix()[(i, j)] - phase * dxy.matrix()[(i, j)]).norm() < 1e-8);
            }
        }
        Ok(())
    }));

    record(run_property("trace, hermiticity, positivity", 12, (0.0..2.0f64, 0.1..2.0f64, 0.0..1.5f64), |(nbar, gamma, v)| {
        let model = LvcModel {
            delta_e: 0.7,
            v,
            modes: vec![ModeSpec { g: 0.8, omega: 1.0, bath: BathSpec { gamma, nbar } }],
            imperfections: ImperfectionSpec { gamma_z: 0.01, gamma_m: 0.02 },
            cutoffs: vec![],
        };
        let model = model.resolved().unwrap();
        let eq = thermbath_core::lvc::build_master_equation(&model).unwrap();
        let rho0 = initial_donor_state(&model).unwrap();
        let opts = EvolveOptions { snapshots: SnapshotPolicy::All, ..Default::default() };
        let series = evolve(&rho0, &eq, &TimeGrid::new(3.0, 6).unwrap(), &[], &opts).unwrap();
        for snap in series.snapshots() {
            let m = snap.state.matrix();
            prop_assert!((m.trace().re - 1.0).abs() < 1e-9);
            prop_assert!((m - m.adjoint()).camax() < 1e-10);
            prop_assert!(snap.state.min_eigenvalue() > -1e-9);
        }
        Ok(())
    }));

    record(run_property("detailed balance", 8, 0.0..2.0f64, |nbar| {
        // The truncated bath obeys detailed balance exactly, at any cutoff.
        let (layout, eq, _) = pure_bath(25, 1.0, nbar);
        let guess = DensityMatrix::basis_state(&layout, 0, &[0]).unwrap();
        let ss = steady_state(&eq, &guess, &SteadyStateOptions::default()).unwrap();
        let p = ss.populations();
        let r = nbar / (nbar + 1.0);
        for w in p.windows(2).filter(|w| w[0] > 1e-6) {
            prop_assert!((w[1] / w[0] - r).abs() < 1e-4);
        }
        Ok(())
    }));

    record(run_property("k_T analytic cases", 32, (0.01..1.0f64, 5.0..50.0f64), |(k, t_sim)| {
        let times: Vec<f64> = (0..=20000).map(|i| t_sim * i as f64 / 20000.0).collect();
        let decay: Vec<f64> = times.iter().map(|t| (-k * t).exp()).collect();
        let s = TimeSeries::new(times.clone(), vec![Column::new(P_DONOR, "1", decay)]).unwrap();
        let kt = t_sim * k;
        // ∫e^{-kt} / ∫t e^{-kt} on [0, T] minus 2/T.
        let expected = k * (1.0 - (-kt).exp()) / (1.0 - (1.0 + kt) * (-kt).exp()) - 2.0 / t_sim;
        let got = transfer_rate(&s, t_sim).unwrap();
        prop_assert!((got - expected).abs() < 1e-5 * expected.abs().max(1e-3), "{got} vs {expected}");
        let flat = TimeSeries::new(times, vec![Column::new(P_DONOR, "1", vec![1.0; 20001])]).unwrap();
        prop_assert!(transfer_rate(&flat, t_sim).unwrap().abs() < 1e-9);
        Ok(())
    }));

    record(run_property("Franck-Condon completeness", 16, 0.0..3.0f64, |d| {
        let table = franck_condon_table(12, d).unwrap();
        let big = franck_condon_table(12 + (d * d).ceil() as usize + 60, d).unwrap();
        for n in 0..12 {
            let col: f64 = big.column(n).iter().sum();
            prop_assert!((col - 1.0).abs() < 1e-9, "column {n}: {col}");
            prop_assert!((table[(n, 0)] - big[(n, 0)]).abs() < 1e-12);
        }
        Ok(())
    }));

    record(run_property("parallel determinism", 3, 0.05..0.5f64, |nbar| {
        let model = LvcModel {
            delta_e: 0.0,
            v: 0.2,
            modes: vec![ModeSpec { g: 0.5, omega: 1.0, bath: BathSpec { gamma: 0.2, nbar } }],
            imperfections: ImperfectionSpec::default(),
            cutoffs: vec![],
        };
        let grid: Vec<f64> = (1..=6).map(|k| k as f64 * 0.6).collect();
        let settings = TransferSettings::new(10.0);
        let csv = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let s = pool.install(|| rate_spectrum(&model, &grid, &settings)).unwrap();
            let mut buf = Vec::new();
            s.write_csv(&mut buf, "omega").unwrap();
            buf
        };
        prop_assert_eq!(csv(1), csv(4));
        Ok(())
    }));

    record(run_property("RNG substreams", 16, (any::<u64>(), 0u64..1000), |(seed, index)| {
        let a = phase_sequence(seed, index, 4000);
        let b = phase_sequence(seed, index + 1, 4000);
        prop_assert_eq!(&a, &phase_sequence(seed, index, 4000));
        prop_assert!(a != b);
        // Sample correlation of independent uniforms has sd ≈ 1/√n.
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        prop_assert!((cov / (va * vb).sqrt()).abs() < 5.0 / (4000f64).sqrt());
        Ok(())
    }));

    let secs = started.elapsed().as_secs_f64();
    let detail = if failures.is_empty() {
        format!("8 property suites in {secs:.1} s (< 60 s)")
    } else {
        format!("{}; {secs:.1} s", failures.join("; "))
    };
    report("9", failures.is_empty() && secs < 60.0, detail);
}
