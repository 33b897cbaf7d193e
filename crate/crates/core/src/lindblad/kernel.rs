//! Split Lindblad generator and the exponential RK4 step.
//!
//! The generator is split as `L = A + N`. `A` is solved in closed form: the
//! diagonal of H, jumps diagonal in the product basis, and "one-way" jumps
//! (one entry per row and column, targets never sources, e.g. σ⁻ ⊗ I), whose
//! sandwich term only links an unfed source entry of ρ to a target entry.
//! The remainder `N(ρ) = Kρ + ρK† + Σ γ cρc†` with `K = −iH_off − ½Σγc†c`
//! is integrated explicitly. Phases of `A` are removed by an interaction
//! picture and its decay part enters through φ-functions (Cox–Matthews
//! ETD-RK4), so strong decay does not limit the step. Both parts are
//! trace-free and the scheme keeps Tr ρ to roundoff.

use nalgebra::DMatrix;

use super::MasterEquation;
use crate::hilbert::C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Compressed sparse rows of a square complex matrix.
#[derive(Clone, Debug)]
pub(crate) struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<C64>,
}

impl Csr {
    pub(crate) fn from_dense_filtered(m: &DMatrix<C64>, keep: impl Fn(usize, usize) -> bool) -> Self {
        let n = m.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != ZERO && keep(i, j) {
                    col.push(j);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub(crate) fn from_dense(m: &DMatrix<C64>) -> Self {
        Self::from_dense_filtered(m, |_, _| true)
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Largest absolute row sum; bounds the spectral radius.
    fn max_row_sum(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `out = self · x` for column-major square `x`.
    fn mul_dense(&self, x: &[C64], out: &mut [C64]) {
        let n = self.n;
        for (xc, oc) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            for (i, o) in oc.iter_mut().enumerate() {
                let mut acc = ZERO;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.val[p] * xc[self.col[p]];
                }
                *o = acc;
            }
        }
    }

    /// `Tr(x · self)` = Σⱼ Σᵢ self_ji x_ij.
    pub(crate) fn trace_with(&self, x: &[C64]) -> C64 {
        let n = self.n;
        let mut acc = ZERO;
        for j in 0..n {
            for (i, v) in self.row(j) {
                acc += v * x[j * n + i];
            }
        }
        acc
    }
}

fn as_diagonal(m: &DMatrix<C64>) -> Option<Vec<C64>> {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != ZERO {
                return None;
            }
        }
    }
    Some((0..n).map(|i| m[(i, i)]).collect())
}

/// Entries `(target, source, weight)` of a jump with at most one entry per
/// row and column whose targets are never sources.
fn as_one_way(m: &DMatrix<C64>) -> Option<Vec<(usize, usize, C64)>> {
    let n = m.nrows();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; n];
    let mut entries = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let v = m[(i, j)];
            if v == ZERO {
                continue;
            }
            if row_used[i] || col_used[j] || i == j {
                return None;
            }
            row_used[i] = true;
            col_used[j] = true;
            entries.push((i, j, v));
        }
    }
    if entries.iter().any(|&(t, _, _)| col_used[t]) {
        return None;
    }
    Some(entries)
}

/// φ₀ … φ₄ at real `z`, with φ₀ = eᶻ and φₖ(z) = Σⱼ zʲ/(j+k)!.
fn phis(z: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    out[0] = z.exp();
    if z.abs() < 0.5 {
        for (k, slot) in out.iter_mut().enumerate().skip(1) {
            let mut fact: f64 = (1..=k).map(|i| i as f64).product();
            let mut pow = 1.0;
            let mut sum = 0.0;
            for j in 0..24 {
                sum += pow / fact;
                pow *= z;
                fact *= (j + k + 1) as f64;
            }
            *slot = sum;
        }
    } else {
        // φₖ = (φₖ₋₁ − 1/(k−1)!)/z
        let mut fact = 1.0;
        for k in 1..5 {
            out[k] = (out[k - 1] - 1.0 / fact) / z;
            fact *= k as f64;
        }
    }
    out
}

/// The six scalar functions of the step, `F(x)` for decay rate `x`:
/// `e^{xh/2}`, `e^{xh}`, `(h/2)φ₁(xh/2)`, `h·f₁(xh)`, `h·f₂(xh)`, `h·f₃(xh)`
/// with the Cox–Matthews weights f₁ = φ₁−3φ₂+4φ₃, f₂ = φ₂−2φ₃, f₃ = −φ₂+4φ₃.
/// With `deriv`, returns `dF/dx` instead.
fn step_functions(x: f64, h: f64, deriv: bool) -> [f64; 6] {
    let half = phis(0.5 * x * h);
    let full = phis(x * h);
    if !deriv {
        return [
            half[0],
            full[0],
            0.5 * h * half[1],
            h * (full[1] - 3.0 * full[2] + 4.0 * full[3]),
            h * (full[2] - 2.0 * full[3]),
            h * (-full[2] + 4.0 * full[3]),
        ];
    }
    // φₖ' = φₖ − kφₖ₊₁ (k ≥ 1), φ₀' = φ₀
    let dh = |p: &[f64; 5], k: usize| p[k] - k as f64 * p[k + 1];
    let (d1, d2, d3) = (dh(&full, 1), dh(&full, 2), dh(&full, 3));
    [
        0.5 * h * half[0],
        h * full[0],
        0.25 * h * h * dh(&half, 1),
        h * h * (d1 - 3.0 * d2 + 4.0 * d3),
        h * h * (d2 - 2.0 * d3),
        h * h * (-d2 + 4.0 * d3),
    ]
}

/// `(F(a) − F(b))/(a − b)` for each step function, stable as `a → b`.
fn step_divided_differences(a: f64, b: f64, h: f64) -> [f64; 6] {
    if ((a - b) * h).abs() > 1e-5 {
        let fa = step_functions(a, h, false);
        let fb = step_functions(b, h, false);
        std::array::from_fn(|k| (fa[k] - fb[k]) / (a - b))
    } else {
        step_functions(0.5 * (a + b), h, true)
    }
}

/// A master equation decomposed for the exponential step.
pub(crate) struct SplitGenerator {
    d: usize,
    /// Entrywise rate of `A` for ρᵢⱼ (column-major).
    lambda: Vec<C64>,
    /// `(target, source, g)`: `A` also moves `g·ρ[source]` into `ρ[target]`.
    links: Vec<(usize, usize, C64)>,
    k: Csr,
    jumps: Vec<(f64, Csr)>,
    stiffness: f64,
}

impl SplitGenerator {
    pub(crate) fn new(eq: &MasterEquation) -> Self {
        let h = eq.hamiltonian().matrix();
        let d = h.nrows();
        let hd: Vec<f64> = (0..d).map(|i| h[(i, i)].re).collect();
        let mut lambda = vec![ZERO; d * d];
        for j in 0..d {
            for i in 0..d {
                lambda[j * d + i] = C64::new(0.0, -(hd[i] - hd[j]));
            }
        }
        let active: Vec<_> = eq.dissipators().iter().filter(|x| x.rate() > 0.0).collect();

        let mut others = Vec::new();
        for diss in &active {
            let rate = diss.rate();
            match as_diagonal(diss.jump().matrix()) {
                Some(dg) => {
                    for j in 0..d {
                        for i in 0..d {
                            lambda[j * d + i] += rate
                                * (dg[i] * dg[j].conj()
                                    - 0.5 * (dg[i].norm_sqr() + dg[j].norm_sqr()));
                        }
                    }
                }
                None => others.push(*diss),
            }
        }

        let mut is_source = vec![false; d];
        let mut is_target = vec![false; d];
        let mut links = Vec::new();
        let mut remaining = Vec::new();
        for diss in others {
            let rate = diss.rate();
            let Some(entries) = as_one_way(diss.jump().matrix()) else {
                remaining.push(diss);
                continue;
            };
            let disjoint = entries.iter().all(|&(t, s, _)| !is_source[t] && !is_target[s]);
            // The interaction picture needs each link to join entries
            // rotating at the same frequency.
            let tol = 1e-12 * (1.0 + hd.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let same_phase = entries.iter().all(|&(ti, si, _)| {
                entries.iter().all(|&(tj, sj, _)| {
                    (lambda[tj * d + ti].im - lambda[sj * d + si].im).abs() <= tol
                })
            });
            if !(disjoint && same_phase) {
                remaining.push(diss);
                continue;
            }
            let mut q = vec![0.0; d];
            for &(t, s, w) in &entries {
                is_target[t] = true;
                is_source[s] = true;
                q[s] = w.norm_sqr();
            }
            for j in 0..d {
                for i in 0..d {
                    lambda[j * d + i] -= 0.5 * rate * (q[i] + q[j]);
                }
            }
            for &(tj, sj, wj) in &entries {
                for &(ti, si, wi) in &entries {
                    links.push((tj * d + ti, sj * d + si, rate * wi * wj.conj()));
                }
            }
        }

        let mut k_dense = h.map(|v| v * C64::new(0.0, -1.0));
        for i in 0..d {
            k_dense[(i, i)] = ZERO;
        }
        let h_off = Csr::from_dense_filtered(h, |i, j| i != j);
        // (strength, frequency) of every coupling left to the explicit part.
        let mut couplings: Vec<(f64, f64)> = h_off
            .entries()
            .map(|(i, j, v)| (v.norm(), (hd[i] - hd[j]).abs()))
            .collect();
        let mut strength = h_off.max_row_sum();
        let mut jumps = Vec::new();
        for diss in remaining {
            let rate = diss.rate();
            let c = diss.jump().matrix();
            let cdc = c.adjoint() * c;
            k_dense -= cdc.map(|v| v * (0.5 * rate));
            let bound = rate * Csr::from_dense(&cdc).max_row_sum();
            strength += bound;
            let csr = Csr::from_dense(c);
            let freq = csr.entries().map(|(t, s, _)| (hd[t] - hd[s]).abs()).fold(0.0, f64::max);
            couplings.push((bound, 2.0 * freq));
            jumps.push((rate, csr));
        }

        // RK4 error from a coupling grows like strength · (h·frequency)⁴, so a
        // weak coupling's frequency is discounted by its relative strength.
        let freq_term = couplings
            .iter()
            .map(|&(s, f)| {
                let w = if strength > 0.0 { (s / strength).min(1.0).powf(0.25) } else { 1.0 };
                f * w
            })
            .fold(0.0, f64::max);

        let k = Csr::from_dense(&k_dense);
        Self { d, lambda, links, k, jumps, stiffness: strength + freq_term }
    }

    /// Step-size scale of the explicit part.
    pub(crate) fn stiffness(&self) -> f64 {
        self.stiffness
    }

    fn is_trivial_remainder(&self) -> bool {
        self.k.nnz() == 0 && self.jumps.is_empty()
    }

    /// `out = N(x)`; `kx` and `y` are scratch.
    ///
    /// Only the Hermitian part of the result is kept, so roundoff in the
    /// anti-Hermitian part of `x` is never amplified by the sandwich terms.
    fn remainder(&self, x: &[C64], out: &mut [C64], kx: &mut [C64], y: &mut [C64]) {
        let d = self.d;
        self.k.mul_dense(x, kx);
        for j in 0..d {
            for i in 0..d {
                out[j * d + i] = kx[j * d + i] + kx[i * d + j].conj();
            }
        }
        if self.jumps.is_empty() {
            return;
        }
        kx.fill(ZERO);
        for (rate, c) in &self.jumps {
            c.mul_dense(x, y);
            for j in 0..d {
                let zc = &mut kx[j * d..(j + 1) * d];
                for (kcol, v) in c.row(j) {
                    let f = v.conj() * *rate;
                    let yc = &y[kcol * d..(kcol + 1) * d];
                    for (z, &yv) in zc.iter_mut().zip(yc) {
                        *z += f * yv;
                    }
                }
            }
        }
        for j in 0..d {
            for i in 0..d {
                out[j * d + i] += 0.5 * (kx[j * d + i] + kx[i * d + j].conj());
            }
        }
    }

    /// Full generator applied to `x`, used for residual checks.
    pub(crate) fn apply_full(&self, x: &[C64], out: &mut [C64]) {
        let n = x.len();
        let mut kx = vec![ZERO; n];
        let mut y = vec![ZERO; n];
        self.remainder(x, out, &mut kx, &mut y);
        for ((o, &l), &v) in out.iter_mut().zip(&self.lambda).zip(x) {
            *o += l * v;
        }
        for &(t, s, g) in &self.links {
            out[t] += g * x[s];
        }
    }
}

/// A function of `A` restricted to the step: entrywise part plus link terms.
struct Coef {
    diag: Vec<C64>,
    cross: Vec<(usize, usize, C64)>,
}

impl Coef {
    /// `out += self(x)`
    fn add_to(&self, x: &[C64], out: &mut [C64]) {
        for ((o, &c), &v) in out.iter_mut().zip(&self.diag).zip(x) {
            *o += c * v;
        }
        for &(t, s, c) in &self.cross {
            out[t] += c * x[s];
        }
    }
}

/// Coefficients of one step of size h; see [`Propagator::step`].
struct StepCoefficients {
    e_half: Coef,
    e_full: Coef,
    ca: Coef,
    cb: Coef,
    cc1: Coef,
    cc3: Coef,
    w1: Coef,
    w23: Coef,
    w4: Coef,
}

impl StepCoefficients {
    fn new(gen: &SplitGenerator, h: f64) -> Self {
        // (function index, phase multiple of h, scale)
        const PLAN: [(usize, f64, f64); 9] = [
            (0, 0.5, 1.0),
            (1, 1.0, 1.0),
            (2, 0.5, 1.0),
            (2, 0.0, 1.0),
            (2, 1.0, -1.0),
            (2, 0.5, 2.0),
            (3, 1.0, 1.0),
            (4, 0.5, 2.0),
            (5, 0.0, 1.0),
        ];
        let n = gen.lambda.len();
        let mut coefs: Vec<Coef> = (0..9)
            .map(|_| Coef { diag: Vec::with_capacity(n), cross: Vec::with_capacity(gen.links.len()) })
            .collect();
        for &l in &gen.lambda {
            let f = step_functions(l.re, h, false);
            for (c, &(fi, ph, sc)) in coefs.iter_mut().zip(&PLAN) {
                c.diag.push(C64::new(0.0, l.im * ph * h).exp() * (sc * f[fi]));
            }
        }
        for &(t, s, g) in &gen.links {
            let (lt, ls) = (gen.lambda[t], gen.lambda[s]);
            let dd = step_divided_differences(ls.re, lt.re, h);
            for (c, &(fi, ph, sc)) in coefs.iter_mut().zip(&PLAN) {
                c.cross.push((t, s, C64::new(0.0, lt.im * ph * h).exp() * g * (sc * dd[fi])));
            }
        }
        let mut it = coefs.into_iter();
        let mut next = || it.next().expect("nine coefficient sets");
        Self {
            e_half: next(),
            e_full: next(),
            ca: next(),
            cb: next(),
            cc1: next(),
            cc3: next(),
            w1: next(),
            w23: next(),
            w4: next(),
        }
    }
}

/// Fixed-step integrator for one split generator.
pub(crate) struct Propagator<'a> {
    gen: &'a SplitGenerator,
    coef: StepCoefficients,
    trivial: bool,
    buf: [Vec<C64>; 9],
}

impl<'a> Propagator<'a> {
    pub(crate) fn new(gen: &'a SplitGenerator, h: f64) -> Self {
        let n = gen.d * gen.d;
        Self {
            gen,
            coef: StepCoefficients::new(gen, h),
            trivial: gen.is_trivial_remainder(),
            buf: std::array::from_fn(|_| vec![ZERO; n]),
        }
    }

    /// Advances `u` (column-major ρ) by `steps` steps of size h.
    pub(crate) fn advance(&mut self, u: &mut [C64], steps: usize) {
        for _ in 0..steps {
            self.step(u);
        }
    }

    /// Interaction-picture ETD-RK4. With `P_s = e^{i Im(Λ) s}`, the decay part
    /// `R` of `A` (real rates plus links), `E_s = P_s e^{R s}` and
    /// `φ = (h/2)φ₁(R h/2)`:
    ///
    /// ```text
    /// K1 = N(u)
    /// Ua = E_{h/2} u + P_{h/2} φ K1;                     K2 = N(Ua)
    /// Ub = E_{h/2} u + φ K2;                             K3 = N(Ub)
    /// Uc = E_{h/2} Ua + φ (2 P_{h/2} K3 − P_h K1);       K4 = N(Uc)
    /// u' = E_h u + h [P_h f₁ K1 + 2 P_{h/2} f₂ (K2 + K3) + f₃ K4]
    /// ```
    fn step(&mut self, u: &mut [C64]) {
        let c = &self.coef;
        let [k1, k2, k3, k4, ua, stage, out, kx, y] = &mut self.buf;
        if self.trivial {
            out.fill(ZERO);
            c.e_full.add_to(u, out);
            u.copy_from_slice(out);
            return;
        }
        let gen = self.gen;

        gen.remainder(u, k1, kx, y);

        ua.fill(ZERO);
        c.e_half.add_to(u, ua);
        c.ca.add_to(k1, ua);
        gen.remainder(ua, k2, kx, y);

        stage.fill(ZERO);
        c.e_half.add_to(u, stage);
        c.cb.add_to(k2, stage);
        gen.remainder(stage, k3, kx, y);

        stage.fill(ZERO);
        c.e_half.add_to(ua, stage);
        c.cc1.add_to(k1, stage);
        c.cc3.add_to(k3, stage);
        gen.remainder(stage, k4, kx, y);

        out.fill(ZERO);
        c.e_full.add_to(u, out);
        c.w1.add_to(k1, out);
        for (a, &b) in k2.iter_mut().zip(k3.iter()) {
            *a += b;
        }
        c.w23.add_to(k2, out);
        c.w4.add_to(k4, out);
        u.copy_from_slice(out);
    }
}
