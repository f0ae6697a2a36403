//! Time-domain validation: fixed-step integration with zero-order-hold input,
//! periodic steady states by iterating the stroboscopic map, randomized and
//! worst-case periodic inputs, and heuristic contraction and bound estimates.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gains;
use crate::linops;
use crate::median::MedianOptions;
use crate::model::{norm, Channel, Composition, NonlinearSystem, SampledSignal, Structure};

/// States and outputs on the integration grid, `K = periods * N + 1` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub n_states: usize,
    pub n_outputs: usize,
    /// Row-major `K x n`.
    pub states: Vec<f64>,
    /// Row-major `K x p`.
    pub outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.n_states
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_states..(k + 1) * self.n_states]
    }

    pub fn output(&self, k: usize) -> &[f64] {
        &self.outputs[k * self.n_outputs..(k + 1) * self.n_outputs]
    }
}

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    scratch: crate::model::Scratch,
}

impl Rk4 {
    fn new(nsys: &NonlinearSystem) -> Self {
        let n = nsys.linear.n();
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], scratch: nsys.scratch() }
    }

    /// One classical RK4 step with the input held at `u`.
    fn step(&mut self, nsys: &NonlinearSystem, x: &mut [f64], u: &[f64], dt: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        nsys.vector_field(x, u, k1, &mut self.scratch);
        for ((t, xi), ki) in self.tmp.iter_mut().zip(x.iter()).zip(k1.iter()) {
            *t = xi + 0.5 * dt * ki;
        }
        nsys.vector_field(&self.tmp, u, k2, &mut self.scratch);
        for ((t, xi), ki) in self.tmp.iter_mut().zip(x.iter()).zip(k2.iter()) {
            *t = xi + 0.5 * dt * ki;
        }
        nsys.vector_field(&self.tmp, u, k3, &mut self.scratch);
        for ((t, xi), ki) in self.tmp.iter_mut().zip(x.iter()).zip(k3.iter()) {
            *t = xi + dt * ki;
        }
        nsys.vector_field(&self.tmp, u, k4, &mut self.scratch);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

fn check_input(nsys: &NonlinearSystem, input: &SampledSignal, x0: &[f64]) -> Result<()> {
    if input.dim() != nsys.linear.m() {
        return Err(Error::Dimension(format!("input has dim {}, system expects {}", input.dim(), nsys.linear.m())));
    }
    if x0.len() != nsys.linear.n() {
        return Err(Error::Dimension(format!("initial state has dim {}, system has {}", x0.len(), nsys.linear.n())));
    }
    Ok(())
}

/// Integrates `periods` periods of the periodic `input` from `x0` with `dt = T/N`.
pub fn integrate(nsys: &NonlinearSystem, input: &SampledSignal, x0: &[f64], periods: usize) -> Result<Trajectory> {
    check_input(nsys, input, x0)?;
    let (n, p) = (nsys.linear.n(), nsys.linear.p());
    let steps = periods * input.len();
    let dt = input.dt();
    let mut states = Vec::with_capacity((steps + 1) * n);
    let mut outputs = vec![0.0; (steps + 1) * p];
    let mut x = x0.to_vec();
    states.extend_from_slice(&x);
    let mut rk = Rk4::new(nsys);
    for k in 0..steps {
        rk.step(nsys, &mut x, input.sample(k), dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_finite: k });
        }
        states.extend_from_slice(&x);
    }
    for (k, y) in outputs.chunks_exact_mut(p).enumerate() {
        nsys.output_into(&states[k * n..(k + 1) * n], y);
    }
    Ok(Trajectory { t0: 0.0, dt, n_states: n, n_outputs: p, states, outputs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PssOptions {
    /// Relative tolerance on the period-to-period state increment.
    pub tol: f64,
    pub max_periods: usize,
}

impl Default for PssOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_periods: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub states: SampledSignal,
    pub outputs: SampledSignal,
    pub periods_used: usize,
    /// Estimated distance of the recorded initial state from the periodic
    /// orbit, `d / (1 - q)` with `d` the last increment and `q` the observed
    /// per-period contraction.
    pub transient: f64,
}

/// Iterates the stroboscopic map `x(0) -> x(T)` until
/// `|x(kT) - x((k-1)T)| <= tol (1 + |x(kT)|)` and returns the last period.
pub fn periodic_steady_state(
    nsys: &NonlinearSystem,
    input: &SampledSignal,
    x0: &[f64],
    opts: &PssOptions,
) -> Result<SteadyState> {
    check_input(nsys, input, x0)?;
    let (n, p) = (nsys.linear.n(), nsys.linear.p());
    let big_n = input.len();
    let dt = input.dt();
    let mut rk = Rk4::new(nsys);
    let mut x = x0.to_vec();
    let mut states = vec![0.0; big_n * n];
    let mut increment = f64::INFINITY;
    for period in 1..=opts.max_periods {
        let start = x.clone();
        for k in 0..big_n {
            states[k * n..(k + 1) * n].copy_from_slice(&x);
            rk.step(nsys, &mut x, input.sample(k), dt);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { last_finite: (period - 1) * big_n });
        }
        let previous =
            std::mem::replace(&mut increment, x.iter().zip(&start).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        if increment <= opts.tol * (1.0 + norm(&x)) {
            let q = if previous.is_finite() && previous > 0.0 { (increment / previous).min(0.999) } else { 0.0 };
            let mut outputs = vec![0.0; big_n * p];
            for (k, y) in outputs.chunks_exact_mut(p).enumerate() {
                nsys.output_into(&states[k * n..(k + 1) * n], y);
            }
            return Ok(SteadyState {
                states: SampledSignal::new(input.period(), n, states)?,
                outputs: SampledSignal::new(input.period(), p, outputs)?,
                periods_used: period,
                transient: increment / (1.0 - q),
            });
        }
    }
    Err(Error::NoPss { periods: opts.max_periods, increment })
}

/// Deterministic 64-bit seed for a task keyed by `(seed, keys...)` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    keys.iter().fold(mix(seed), |acc, &k| mix(acc.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ k))
}

/// `u(t) = u_dc + sum_k a_k cos(2 pi k t / T + phi_k)` per channel, rescaled so that
/// `|u_dc|` and the grid sup of `|u_ac|` equal the caps of `composition` at `level`.
pub fn random_harmonic_input(
    period: f64,
    n: usize,
    dim: usize,
    n_harmonics: usize,
    composition: Composition,
    level: f64,
    seed: u64,
) -> Result<SampledSignal> {
    if !(level >= 0.0) || level.is_infinite() {
        return Err(Error::InvalidArgument(format!("level {level} must be nonnegative")));
    }
    let caps = composition.caps(level);
    if caps.ac > 0.0 && n_harmonics == 0 {
        return Err(Error::InvalidArgument("an AC component needs at least one harmonic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dc_dir: Vec<f64> = loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            break v.iter().map(|x| x / r).collect();
        }
    };
    let harmonics: Vec<(usize, f64, f64)> = (0..dim)
        .flat_map(|_| {
            (1..=n_harmonics)
                .map(|k| (k, rng.random_range(0.0..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
                .collect::<Vec<_>>()
        })
        .collect();
    let ac = SampledSignal::from_fn(period, n, dim, |t, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = harmonics[i * n_harmonics..(i + 1) * n_harmonics]
                .iter()
                .map(|&(k, a, phi)| a * (std::f64::consts::TAU * k as f64 * t / period + phi).cos())
                .sum();
        }
    })?;
    let (_, ac) = crate::model::acdc_decompose(&ac);
    let sup = ac.sup_norm();
    let scale = if caps.ac > 0.0 { caps.ac / sup } else { 0.0 };
    let values = ac.values().iter().enumerate().map(|(idx, a)| dc_dir[idx % dim] * caps.dc + scale * a).collect();
    SampledSignal::new(period, dim, values)
}

/// The input attaining the exact AC gain of `ch` in output direction `v`:
/// `u_ac(-tau) = cap (v.H_T(tau) - mu) / |v.H_T(tau) - mu|` with `mu` the geometric median.
pub fn bangbang_worst_input(ch: &Channel, period: f64, n: usize, v: &[f64], cap: f64) -> Result<SampledSignal> {
    if v.len() != ch.outputs() {
        return Err(Error::Dimension(format!("direction has dim {}, channel has {} outputs", v.len(), ch.outputs())));
    }
    let grid = linops::periodic_impulse_response(ch, period, n)?;
    let mu = gains::directional_median(&grid, v, &MedianOptions::default())?;
    let m = ch.inputs();
    let mut values = vec![0.0; n * m];
    for (k, h) in grid.samples.iter().enumerate() {
        let w: Vec<f64> = (0..m).map(|j| (0..h.nrows()).map(|i| v[i] * h[(i, j)]).sum::<f64>() - mu[j]).collect();
        let r = norm(&w);
        if r < 1e-12 {
            continue;
        }
        let slot = (n - k) % n;
        for j in 0..m {
            values[slot * m + j] = cap * w[j] / r;
        }
    }
    let (_, ac) = crate::model::acdc_decompose(&SampledSignal::new(period, m, values)?);
    let sup = ac.sup_norm();
    Ok(if sup > 0.0 { ac.scaled(cap / sup) } else { ac })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// Coordinates of the real modal basis of `A`.
    Modal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// Largest logarithmic norm of the Jacobian over the samples, in `metric`.
    pub max_log_norm: f64,
    pub metric: Metric,
    /// Heuristic only: negative log norm on samples, not a proof.
    pub plausibly_contractive: bool,
}

/// Real basis `P` with `P^-1 A P` block diagonal (1x1 real, 2x2 `[[s, w], [-w, s]]` blocks).
fn modal_basis(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eigs = linops::eigenvalues(a).ok()?;
    let scale = eigs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let ac: DMatrix<Complex<f64>> = a.map(|x| Complex::new(x, 0.0));
    let mut columns = Vec::with_capacity(n);
    for lambda in eigs {
        if lambda.im < -1e-12 * scale {
            continue;
        }
        let shifted = &ac - DMatrix::from_diagonal_element(n, n, lambda);
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t?;
        let idx = svd.singular_values.imin();
        let mut v: Vec<Complex<f64>> = v_t.row(idx).iter().map(|z| z.conj()).collect();
        if lambda.im.abs() <= 1e-12 * scale {
            let pivot = v.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm()))?;
            let phase = pivot.conj() / pivot.norm();
            v.iter_mut().for_each(|z| *z *= phase);
            columns.push(DMatrix::from_iterator(n, 1, v.iter().map(|z| z.re)));
        } else {
            columns.push(DMatrix::from_iterator(n, 1, v.iter().map(|z| z.re)));
            columns.push(DMatrix::from_iterator(n, 1, v.iter().map(|z| z.im)));
        }
    }
    if columns.len() != n {
        return None;
    }
    let p = DMatrix::from_columns(&columns.iter().map(|c| c.column(0)).collect::<Vec<_>>());
    let sv = p.singular_values();
    let cond = sv.max() / sv.min();
    (cond.is_finite() && cond < 1e8).then_some(p)
}

fn log_norm(j: &DMatrix<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Largest log norm of `A + F df/dx` over `(x, u)` samples. Both the Euclidean
/// and the modal metric of `A` are tried; the smaller maximum is reported.
pub fn contraction_check(
    nsys: &NonlinearSystem,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
) -> Result<ContractionReport> {
    let (n, m) = (nsys.linear.n(), nsys.linear.m());
    if states.iter().any(|x| x.len() != n) || inputs.iter().any(|u| u.len() != m) {
        return Err(Error::Dimension("contraction samples do not match the system".into()));
    }
    let zero_x = [vec![0.0; n]];
    let zero_u = [vec![0.0; m]];
    let states = if states.is_empty() { &zero_x[..] } else { states };
    let inputs = if inputs.is_empty() { &zero_u[..] } else { inputs };
    let jacobians: Vec<DMatrix<f64>> =
        states.iter().flat_map(|x| inputs.iter().map(move |u| nsys.state_jacobian(x, u))).collect();
    let euclid = jacobians.iter().map(log_norm).fold(f64::NEG_INFINITY, f64::max);
    let mut best = (euclid, Metric::Euclidean);
    if let Some(p) = modal_basis(nsys.linear.a()) {
        if let Some(p_inv) = p.clone().try_inverse() {
            let modal = jacobians.iter().map(|j| log_norm(&(&p_inv * j * &p))).fold(f64::NEG_INFINITY, f64::max);
            if modal < best.0 {
                best = (modal, Metric::Modal);
            }
        }
    }
    Ok(ContractionReport { max_log_norm: best.0, metric: best.1, plausibly_contractive: best.0 < 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BEstimateOptions {
    pub trials: usize,
    pub seed: u64,
    /// Periods the trials cycle through.
    pub periods: Vec<f64>,
    pub n: usize,
    pub harmonics: usize,
    pub safety: f64,
    pub pss: PssOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BEstimate {
    /// Heuristic bound: `safety` times the largest sampled sup.
    pub b: f64,
    pub sampled_max: f64,
}

/// Randomized surrogate for the invariant-set bound at input level `level`:
/// the largest steady-state `|x|` (or `|Cx|` for output-Lurie systems) seen
/// over the trials, times the safety factor. Not rigorous.
pub fn estimate_b(nsys: &NonlinearSystem, level: f64, opts: &BEstimateOptions) -> Result<BEstimate> {
    if !(level < nsys.u_max) {
        return Err(Error::InvalidArgument(format!("level {level} must be below u_max = {}", nsys.u_max)));
    }
    if opts.periods.is_empty() {
        return Err(Error::InvalidArgument("estimate_b needs at least one period".into()));
    }
    let m = nsys.linear.m();
    let n_states = nsys.linear.n();
    let sups: Vec<Result<f64>> = (0..opts.trials)
        .into_par_iter()
        .map(|trial| {
            let composition = Composition::ALL[trial % Composition::ALL.len()];
            let period = opts.periods[(trial / Composition::ALL.len()) % opts.periods.len()];
            let seed = derive_seed(opts.seed, &[level.to_bits(), trial as u64]);
            let input = random_harmonic_input(period, opts.n, m, opts.harmonics, composition, level, seed)?;
            let pss = periodic_steady_state(nsys, &input, &vec![0.0; n_states], &opts.pss)
                .map_err(|_| Error::UnboundedSuspect { trial })?;
            Ok(match nsys.structure {
                Structure::General => pss.states.sup_norm(),
                Structure::OutputLurie => pss.outputs.sup_norm(),
            })
        })
        .collect();
    let mut sampled_max = 0.0f64;
    for s in sups {
        sampled_max = sampled_max.max(s?);
    }
    Ok(BEstimate { b: opts.safety * sampled_max, sampled_max })
}
