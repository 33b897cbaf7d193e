//! Blue-sideband thermometry: synthetic probe signals and the fits that
//! recover phonon populations and heating/cooling rates from them.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, numeric_jacobian, LmOptions};
use crate::hilbert::thermal_populations;
use crate::lindblad::TimeSeries;

const SIMPLEX_TOL: f64 = 1e-6;
/// Thermal sums are cut where the remaining tail drops below this.
const THERMAL_SUM_TAIL: f64 = 1e-12;
/// Most points used by the thermal fit's start-point search.
const SEARCH_POINTS: usize = 160;

/// Probe durations per scan in the default grid.
pub const DEFAULT_PROBE_POINTS: usize = 400;

/// Default scan length in units of π/Ω.
pub const DEFAULT_PROBE_WINDOW: f64 = 10.0;

/// Upper bound on n_ave explored by the thermal fit.
const MAX_FIT_NBAR: f64 = 60.0;

/// Spin-up probability versus probe duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSignal {
    pub t_p: Vec<f64>,
    pub p_up: Vec<f64>,
    /// Standard error per point, when the signal is noisy.
    pub sigma: Option<Vec<f64>>,
}

impl ProbeSignal {
    pub fn new(t_p: Vec<f64>, p_up: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if t_p.len() != p_up.len() || sigma.as_ref().is_some_and(|s| s.len() != t_p.len()) {
            return Err(Error::InvalidFitInput("signal arrays differ in length".into()));
        }
        if t_p.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidFitInput("probe durations must increase".into()));
        }
        if p_up.iter().any(|p| !(-1e-12..=1.0 + 1e-12).contains(p)) {
            return Err(Error::InvalidFitInput("probabilities must lie in [0, 1]".into()));
        }
        if sigma.as_ref().is_some_and(|s| s.iter().any(|&v| !(v > 0.0))) {
            return Err(Error::InvalidFitInput("sigma must be positive".into()));
        }
        Ok(Self { t_p, p_up, sigma })
    }

    fn weights(&self) -> Vec<f64> {
        match &self.sigma {
            Some(s) => s.iter().map(|v| 1.0 / v).collect(),
            None => vec![1.0; self.t_p.len()],
        }
    }

    /// CSV with `t_p`, `p_up` and, when present, `sigma`.
    pub fn write_csv<W: Write>(&self, writer: W, time_unit: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut header = vec![format!("t_p [{time_unit}]"), "p_up [1]".to_string()];
        if self.sigma.is_some() {
            header.push("sigma [1]".into());
        }
        w.write_record(&header).map_err(io)?;
        for k in 0..self.t_p.len() {
            let mut row = vec![self.t_p[k].to_string(), self.p_up[k].to_string()];
            if let Some(s) = &self.sigma {
                row.push(s[k].to_string());
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Measurement noise for synthetic signals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotNoise {
    pub shots: u32,
    pub seed: u64,
    /// Relative standard deviation of a per-point multiplicative jitter on Ω.
    #[serde(default)]
    pub rabi_jitter: f64,
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidSimplex("no populations".into()));
    }
    if let Some(v) = p.iter().find(|&&v| !(v >= -SIMPLEX_TOL) || !v.is_finite()) {
        return Err(Error::InvalidSimplex(format!("negative population {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplex(format!("populations sum to {sum}")));
    }
    Ok(())
}

fn bsb_point(p_n: &[f64], omega: f64, gamma_d: f64, t: f64) -> f64 {
    let damp = (-gamma_d * t).exp();
    0.5 * p_n
        .iter()
        .enumerate()
        .map(|(n, p)| p * (1.0 - damp * (omega * t * ((n + 1) as f64).sqrt()).cos()))
        .sum::<f64>()
}

/// `P_↑(t_p) = ½ Σₙ pₙ [1 − e^{−γ_d t_p} cos(Ω t_p √(n+1))]`.
pub fn bsb_signal(p_n: &[f64], omega_rabi: f64, gamma_d: f64, t_p_grid: &[f64]) -> Result<ProbeSignal> {
    check_simplex(p_n)?;
    if !(omega_rabi > 0.0) {
        return Err(Error::InvalidParameter { name: "omega_rabi", requirement: "> 0", value: omega_rabi });
    }
    if !(gamma_d >= 0.0) {
        return Err(Error::InvalidParameter { name: "gamma_d", requirement: ">= 0", value: gamma_d });
    }
    let p_up = t_p_grid.iter().map(|&t| bsb_point(p_n, omega_rabi, gamma_d, t).clamp(0.0, 1.0)).collect();
    ProbeSignal::new(t_p_grid.to_vec(), p_up, None)
}

/// [`bsb_signal`] with binomial shot noise and optional Ω jitter.
///
/// The reported σ uses the Agresti–Coull centre `(k+2)/(shots+4)`, so that
/// points measured as exactly 0 or 1 still carry a finite weight.
pub fn bsb_signal_noisy(
    p_n: &[f64],
    omega_rabi: f64,
    gamma_d: f64,
    t_p_grid: &[f64],
    noise: &ShotNoise,
) -> Result<ProbeSignal> {
    let exact = bsb_signal(p_n, omega_rabi, gamma_d, t_p_grid)?;
    if noise.shots == 0 {
        return Err(Error::InvalidParameter { name: "shots", requirement: "> 0", value: 0.0 });
    }
    if !(noise.rabi_jitter >= 0.0) {
        return Err(Error::InvalidParameter { name: "rabi_jitter", requirement: ">= 0", value: noise.rabi_jitter });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
    let jitter = Normal::new(0.0, noise.rabi_jitter).expect("finite jitter");
    let shots = noise.shots as f64;
    let mut p_up = Vec::with_capacity(t_p_grid.len());
    let mut sigma = Vec::with_capacity(t_p_grid.len());
    for (k, &t) in t_p_grid.iter().enumerate() {
        let p = if noise.rabi_jitter > 0.0 {
            let omega = omega_rabi * (1.0 + jitter.sample(&mut rng));
            bsb_point(p_n, omega, gamma_d, t).clamp(0.0, 1.0)
        } else {
            exact.p_up[k]
        };
        let count = Binomial::new(noise.shots as u64, p).expect("probability in [0, 1]").sample(&mut rng) as f64;
        let centre = (count + 2.0) / (shots + 4.0);
        p_up.push(count / shots);
        sigma.push((centre * (1.0 - centre) / shots).sqrt());
    }
    ProbeSignal::new(t_p_grid.to_vec(), p_up, Some(sigma))
}

/// `points` evenly spaced durations on the default window.
pub fn default_probe_grid(omega_rabi: f64, points: usize) -> Vec<f64> {
    probe_grid(omega_rabi, points, DEFAULT_PROBE_WINDOW)
}

/// `points` evenly spaced durations on `[0, window·π/Ω]`.
pub fn probe_grid(omega_rabi: f64, points: usize, window: f64) -> Vec<f64> {
    let t_max = window * std::f64::consts::PI / omega_rabi;
    (0..points).map(|k| t_max * k as f64 / (points.max(2) - 1) as f64).collect()
}

/// Thermal populations summed until the tail is below 1e-12.
pub fn thermal_probe_populations(nbar: f64) -> Result<Vec<f64>> {
    let ratio = nbar / (nbar + 1.0);
    let levels = if ratio > 0.0 { (THERMAL_SUM_TAIL.ln() / ratio.ln()).ceil() as usize + 1 } else { 1 };
    Ok(thermal_populations(nbar, levels.max(1))?.0)
}

/// Result of the three-parameter thermal fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalFit {
    pub n_ave: f64,
    pub omega_rabi: f64,
    pub gamma_d: f64,
    /// Covariance of `(n_ave, Ω, γ_d)`.
    pub covariance: [[f64; 3]; 3],
    pub chi2_reduced: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl ThermalFit {
    pub fn n_ave_sigma(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }
}

fn thermal_residuals(signal: &ProbeSignal, w: &[f64], x: &[f64]) -> DVector<f64> {
    let pops = thermal_probe_populations(x[0].max(0.0)).unwrap_or_else(|_| vec![1.0]);
    DVector::from_iterator(
        signal.t_p.len(),
        signal.t_p.iter().zip(&signal.p_up).zip(w).map(|((&t, &y), &w)| w * (bsb_point(&pops, x[1], x[2], t) - y)),
    )
}

fn covariance_of(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let h = jac.transpose() * jac;
    h.try_inverse().map(|c| (&c + c.transpose()) * 0.5)
}

/// Fits `(n_ave, Ω, γ_d)` of a thermal population to the signal.
///
/// The start point is the best of a fixed grid over the three parameters,
/// so the fit is deterministic.
pub fn fit_thermal(signal: &ProbeSignal) -> Result<ThermalFit> {
    let n = signal.t_p.len();
    if n < 4 {
        return Err(Error::InvalidFitInput(format!("need at least 4 points, got {n}")));
    }
    let t_max = *signal.t_p.last().expect("non-empty");
    if !(t_max > 0.0) {
        return Err(Error::InvalidFitInput("probe durations must reach t_p > 0".into()));
    }
    let w = signal.weights();
    // The start-point search only needs the coarse shape, so it scores a
    // thinned copy of the signal.
    let stride = n.div_ceil(SEARCH_POINTS);
    let coarse = ProbeSignal {
        t_p: signal.t_p.iter().step_by(stride).copied().collect(),
        p_up: signal.p_up.iter().step_by(stride).copied().collect(),
        sigma: signal.sigma.as_ref().map(|s| s.iter().step_by(stride).copied().collect()),
    };
    let coarse_w = coarse.weights();
    let seeds_nbar = [0.05, 0.2, 0.5, 1.0, 2.0, 4.0, 8.0];
    let seed_pops: Vec<Vec<f64>> =
        seeds_nbar.iter().map(|&nb| thermal_probe_populations(nb)).collect::<Result<_>>()?;
    let levels = seed_pops.iter().map(Vec::len).max().unwrap_or(1);
    let m = coarse.t_p.len();
    let mut cosines = vec![0.0; m * levels];

    let mut best = (f64::INFINITY, [0.0; 3]);
    for k in 0..400 {
        let cycles = 0.5 * 80f64.powf(k as f64 / 399.0);
        let omega = 2.0 * std::f64::consts::PI * cycles / t_max;
        for (i, &t) in coarse.t_p.iter().enumerate() {
            for n in 0..levels {
                cosines[i * levels + n] = (omega * t * ((n + 1) as f64).sqrt()).cos();
            }
        }
        for (&nbar, pops) in seeds_nbar.iter().zip(&seed_pops) {
            let coherence: Vec<f64> = (0..m)
                .map(|i| pops.iter().zip(&cosines[i * levels..]).map(|(p, c)| p * c).sum())
                .collect();
            for &gd in &[0.0, 1.0 / t_max, 3.0 / t_max] {
                let c: f64 = (0..m)
                    .map(|i| {
                        let model = 0.5 * (1.0 - (-gd * coarse.t_p[i]).exp() * coherence[i]);
                        (coarse_w[i] * (model - coarse.p_up[i])).powi(2)
                    })
                    .sum();
                if c < best.0 {
                    best = (c, [nbar, omega, gd]);
                }
            }
        }
    }
    let project = |x: &mut [f64]| {
        x[0] = x[0].clamp(0.0, MAX_FIT_NBAR);
        x[1] = x[1].max(1e-12);
        x[2] = x[2].max(0.0);
    };
    let res = levenberg_marquardt(
        |x| {
            let f = |y: &[f64]| thermal_residuals(signal, &w, y);
            (f(x), numeric_jacobian(f, x))
        },
        project,
        &best.1,
        &LmOptions::default(),
    );
    let dof = n.saturating_sub(3);
    let mut covariance = [[f64::NAN; 3]; 3];
    if let Some(c) = covariance_of(&res.jacobian) {
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = c[(i, j)];
            }
        }
    }
    Ok(ThermalFit {
        n_ave: res.x[0],
        omega_rabi: res.x[1],
        gamma_d: res.x[2],
        covariance,
        chi2_reduced: if dof > 0 { res.cost / dof as f64 } else { f64::NAN },
        dof,
        converged: res.converged,
        iterations: res.iterations,
    })
}

/// Free-population fit result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub p_n: Vec<f64>,
    /// Covariance of `p_n`.
    pub covariance: Vec<Vec<f64>>,
    pub nbar_mean: f64,
    pub nbar_sigma: f64,
    pub omega_rabi: f64,
    pub gamma_d: f64,
    pub chi2_reduced: f64,
    pub dof: usize,
    /// Levels sitting on their `scale·p_n^th` upper bound.
    pub active_upper: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub thermal_prior: ThermalFit,
}

/// Euclidean projection onto `{0 ≤ pᵢ ≤ uᵢ, Σpᵢ = 1}`.
fn project_capped_simplex(p: &mut [f64], upper: &[f64]) {
    let total = |tau: f64, p: &[f64]| p.iter().zip(upper).map(|(x, u)| (x - tau).clamp(0.0, *u)).sum::<f64>();
    let mut lo = p.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid, p) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    for (x, u) in p.iter_mut().zip(upper) {
        *x = (*x - tau).clamp(0.0, *u);
    }
}

/// Free fit of `p_0..p_{n_max}` plus Ω and γ_d, with `pₙ ≤ scale·pₙ^th`
/// where `pₙ^th` comes from a preceding thermal fit.
pub fn fit_free_populations(signal: &ProbeSignal, n_max: usize, constraint_scale: f64) -> Result<PopulationEstimate> {
    let prior = fit_thermal(signal)?;
    fit_free_populations_with_prior(signal, &prior, n_max, constraint_scale)
}

pub fn fit_free_populations_with_prior(
    signal: &ProbeSignal,
    prior: &ThermalFit,
    n_max: usize,
    constraint_scale: f64,
) -> Result<PopulationEstimate> {
    let levels = n_max + 1;
    let npts = signal.t_p.len();
    if npts <= levels + 1 {
        return Err(Error::InvalidFitInput(format!("{npts} points cannot constrain {} parameters", levels + 2)));
    }
    if !(constraint_scale > 0.0) {
        return Err(Error::InvalidParameter { name: "constraint_scale", requirement: "> 0", value: constraint_scale });
    }
    let (p_th, _) = thermal_populations(prior.n_ave, levels)?;
    let upper: Vec<f64> = p_th.iter().map(|p| (constraint_scale * p).min(1.0)).collect();
    if upper.iter().sum::<f64>() < 1.0 {
        return Err(Error::InfeasibleConstraints(format!(
            "bounds {constraint_scale}·p_n^th over n ≤ {n_max} sum below 1"
        )));
    }
    let w = signal.weights();
    let sqrt_n: Vec<f64> = (0..levels).map(|n| ((n + 1) as f64).sqrt()).collect();
    // Exact residuals and Jacobian: the model is linear in pₙ.
    let residuals = |x: &[f64]| {
        let (omega, gd) = (x[levels], x[levels + 1]);
        let mut r = DVector::zeros(npts);
        let mut j = DMatrix::zeros(npts, levels + 2);
        for k in 0..npts {
            let t = signal.t_p[k];
            let damp = (-gd * t).exp();
            let (mut val, mut d_omega, mut d_gd) = (0.0, 0.0, 0.0);
            for n in 0..levels {
                let (s, c) = (omega * t * sqrt_n[n]).sin_cos();
                let basis = 0.5 * (1.0 - damp * c);
                val += x[n] * basis;
                j[(k, n)] = w[k] * basis;
                d_omega += x[n] * 0.5 * damp * s * t * sqrt_n[n];
                d_gd += x[n] * 0.5 * t * damp * c;
            }
            j[(k, levels)] = w[k] * d_omega;
            j[(k, levels + 1)] = w[k] * d_gd;
            r[k] = w[k] * (val - signal.p_up[k]);
        }
        (r, j)
    };
    let project = |x: &mut [f64]| {
        project_capped_simplex(&mut x[..levels], &upper);
        x[levels] = x[levels].max(1e-12);
        x[levels + 1] = x[levels + 1].max(0.0);
    };
    let kept: f64 = p_th.iter().sum();
    let mut x0: Vec<f64> = p_th.iter().map(|p| p / kept).collect();
    x0.extend([prior.omega_rabi, prior.gamma_d]);
    let res = levenberg_marquardt(residuals, project, &x0, &LmOptions { max_iterations: 2000, ..LmOptions::default() });
    let p: Vec<f64> = res.x[..levels].to_vec();

    // Covariance on the tangent space of the active constraints.
    let at_upper = |n: usize| upper[n] < 1.0 && p[n] >= upper[n] * (1.0 - 1e-9);
    let at_lower = |n: usize| p[n] <= 1e-12;
    let free_p: Vec<usize> = (0..levels).filter(|&n| !at_upper(n) && !at_lower(n)).collect();
    let mut free_other = vec![levels];
    if res.x[levels + 1] > 0.0 {
        free_other.push(levels + 1);
    }
    let nvar = levels + 2;
    let basis_len = free_p.len().saturating_sub(1) + free_other.len();
    let mut z = DMatrix::<f64>::zeros(nvar, basis_len);
    let mut col = 0;
    for pair in free_p.windows(2) {
        z[(pair[1], col)] = 1.0;
        z[(free_p[0], col)] = -1.0;
        col += 1;
    }
    for &i in &free_other {
        z[(i, col)] = 1.0;
        col += 1;
    }
    let jz = &res.jacobian * &z;
    let reduced = jz.transpose() * &jz;
    let eig = reduced.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut singular = Vec::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-13 * max_eig {
            let v = &z * eig.eigenvectors.column(k);
            let peak = (0..levels).map(|n| v[n].abs()).fold(0.0, f64::max);
            singular.extend((0..levels).filter(|&n| v[n].abs() > 0.3 * peak && peak > 0.0));
        }
    }
    if !singular.is_empty() {
        singular.sort_unstable();
        singular.dedup();
        return Err(Error::RankDeficient { levels: singular });
    }
    let cov_full = match reduced.try_inverse() {
        Some(inv) => &z * inv * z.transpose(),
        None => DMatrix::from_element(nvar, nvar, f64::NAN),
    };
    let ns = DVector::from_iterator(levels, (0..levels).map(|n| n as f64));
    let cov_p = cov_full.view((0, 0), (levels, levels)).into_owned();
    let nbar_var = (ns.transpose() * &cov_p * &ns)[(0, 0)];
    let dof = npts.saturating_sub(basis_len);
    Ok(PopulationEstimate {
        nbar_mean: p.iter().enumerate().map(|(n, v)| n as f64 * v).sum(),
        nbar_sigma: nbar_var.max(0.0).sqrt(),
        covariance: (0..levels).map(|i| (0..levels).map(|j| cov_p[(i, j)]).collect()).collect(),
        omega_rabi: res.x[levels],
        gamma_d: res.x[levels + 1],
        chi2_reduced: if dof > 0 { res.cost / dof as f64 } else { f64::NAN },
        dof,
        active_upper: (0..levels).filter(|&n| at_upper(n)).collect(),
        converged: res.converged,
        iterations: res.iterations,
        thermal_prior: prior.clone(),
        p_n: p,
    })
}

/// Total-variation distance `½Σ|pₙ − qₙ|`, padding the shorter vector with zeros.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Slope of a straight line through early-time data.
    Heating,
    /// Decay constant of `n_ss + (n0 − n_ss)e^{−γt}`.
    Cooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub sigma: f64,
    /// Intercept (heating) or fitted n_ss (cooling).
    pub offset: f64,
}

/// Column of phonon means used by [`extract_rates`].
pub const MEAN_N: &str = "mean_n";

/// Extracts γ_h (heating) or γ_c (cooling) from a `mean_n` series.
/// Uncertainties come from the residual scatter.
pub fn extract_rates(series: &TimeSeries, mode: RateMode) -> Result<RateEstimate> {
    let y = series.column(MEAN_N)?;
    let t = series.times();
    let n = t.len();
    let min_points = match mode {
        RateMode::Heating => 3,
        RateMode::Cooling => 4,
    };
    if n < min_points.max(4) {
        return Err(Error::InvalidFitInput(format!("need at least 4 points, got {n}")));
    }
    match mode {
        RateMode::Heating => {
            let tm = t.iter().sum::<f64>() / n as f64;
            let ym = y.iter().sum::<f64>() / n as f64;
            let sxx: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
            let slope = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum::<f64>() / sxx;
            let intercept = ym - slope * tm;
            let rss: f64 = t.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
            let s = (rss / (n - 2) as f64).sqrt();
            let resid: Vec<f64> = t.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
            check_monotone(y, 1.0, &resid)?;
            Ok(RateEstimate { rate: slope, sigma: s / sxx.sqrt(), offset: intercept })
        }
        RateMode::Cooling => {
            let model = |x: &[f64]| {
                DVector::from_iterator(n, t.iter().zip(y).map(|(&t, &y)| x[0] + (x[1] - x[0]) * (-x[2] * t).exp() - y))
            };
            let span = t[n - 1] - t[0];
            let (n_ss0, n00) = (y[n - 1], y[0]);
            let mut start = [n_ss0, n00, 1.0 / span];
            let mut best = f64::INFINITY;
            for k in 0..60 {
                let g = 0.1 / span * 1000f64.powf(k as f64 / 59.0);
                let c = model(&[n_ss0, n00, g]).norm_squared();
                if c < best {
                    best = c;
                    start[2] = g;
                }
            }
            let res = levenberg_marquardt(
                |x| (model(x), numeric_jacobian(model, x)),
                |x| x[2] = x[2].max(0.0),
                &start,
                &LmOptions::default(),
            );
            let s2 = res.cost / (n - 3) as f64;
            let sigma = covariance_of(&res.jacobian).map(|c| (c[(2, 2)] * s2).max(0.0).sqrt()).unwrap_or(f64::NAN);
            let direction = (res.x[0] - res.x[1]).signum();
            let resid: Vec<f64> = model(&res.x).iter().copied().collect();
            check_monotone(y, direction, &resid)?;
            Ok(RateEstimate { rate: res.x[2], sigma, offset: res.x[0] })
        }
    }
}

/// Rejects series that step against `direction` by more than three robust
/// standard deviations (median absolute residual) of a point difference.
fn check_monotone(y: &[f64], direction: f64, residuals: &[f64]) -> Result<()> {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let scatter = 1.4826 * abs[abs.len() / 2] * std::f64::consts::SQRT_2;
    let tol = 3.0 * scatter + 1e-12 * y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for w in y.windows(2) {
        if direction * (w[1] - w[0]) < -tol {
            return Err(Error::InvalidFitInput(format!(
                "series is not monotone: step {} → {} against the expected trend",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}
