//! Gain computations: the classical asymptotic gain of a linear channel, the
//! exact and conservative linear PAG, and the conservative PAG of Lurie-type
//! nonlinear systems built from four linear sub-channel PAGs.
//!
//! Integrals over one period use the trapezoid rule on the `N`-point grid
//! closed by the left limit `H_T(T-)`; the periodic impulse response jumps
//! by `CB` across the period boundary, so a plain left-endpoint sum would
//! carry an `O(1/N)` bias. The geometric median is taken with the same
//! trapezoid weights, which makes it the minimizer of the quadrature that
//! is reported.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linops::{self, ImpulseGrid};
use crate::median::{weighted_geometric_median, MedianOptions};
use crate::model::{Channel, Composition, InputMap, NonlinearSystem, OutputMap, RhoVector, StateSpace, Structure};
use crate::DEFAULT_GRID_N;

/// Coarse angular seeds for the two-dimensional direction search.
const ANGLE_SEEDS: usize = 64;
/// Relative accuracy target of the improper impulse-norm integral.
const AG_TAIL_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainOptions {
    /// Samples per period.
    pub n: usize,
    pub median: MedianOptions,
    /// Global seed for the randomized direction search (three or more outputs).
    pub seed: u64,
    pub multistarts: usize,
}

impl Default for GainOptions {
    fn default() -> Self {
        Self { n: DEFAULT_GRID_N, median: MedianOptions::default(), seed: 0, multistarts: 128 }
    }
}

impl GainOptions {
    pub fn with_n(n: usize) -> Self {
        Self { n, ..Self::default() }
    }
}

/// Diagonal linear PAG `diag(gamma_dc, gamma_ac(T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPag {
    pub period: f64,
    pub gamma_dc: f64,
    pub gamma_ac: f64,
    /// False when the supremum over output directions came from a heuristic
    /// search; the value is then a lower estimate.
    pub ac_certified: bool,
}

impl LinearPag {
    pub fn apply(&self, rho: RhoVector) -> RhoVector {
        RhoVector { dc: self.gamma_dc * rho.dc, ac: self.gamma_ac * rho.ac }
    }
}

/// `int_0^inf |H(t)| dt` with the spectral norm.
///
/// Steps the impulse response with a single propagator at `dt = 1/(1000 r)`,
/// `r` the spectral radius of `A`, integrates the norm of the piecewise-linear
/// interpolant, and removes the `O(dt^2)` error by Richardson extrapolation
/// against the `2 dt` grid. Integration stops once an envelope bound on the
/// remaining tail falls below `1e-9` of the accumulated value.
pub fn classical_ag_slope(ch: &Channel) -> Result<f64> {
    let sigma = linops::ensure_hurwitz(&ch.a)?;
    let radius = linops::eigenvalues(&ch.a)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let dt = 1.0 / (1000.0 * radius);
    // slightly slower decay than the abscissa so polynomial factors are dominated
    let decay = 0.9 * sigma;
    let min_horizon = 5.0 / decay.abs();
    let max_steps = 200_000_000usize;

    let phi = linops::matrix_exponential(&(&ch.a * dt))?;
    let mut state = ch.b.clone();
    let mut h_back2: Option<DMatrix<f64>> = None;
    let mut h_back1 = &ch.c * &state;
    let mut envelope = linops::spectral_norm(&h_back1);
    let (mut fine, mut coarse) = (0.0, 0.0);
    let mut k = 0usize;
    loop {
        state = &phi * state;
        k += 1;
        let h = &ch.c * &state;
        let t = k as f64 * dt;
        envelope = envelope.max(linops::spectral_norm(&h) * (-decay * t).exp());
        fine += segment_norm_integral(&h_back1, &h, dt);
        if k.is_multiple_of(2) {
            if let Some(h2) = &h_back2 {
                coarse += segment_norm_integral(h2, &h, 2.0 * dt);
            }
            let tail = envelope * (decay * t).exp() / decay.abs();
            if (t >= min_horizon && tail <= AG_TAIL_FRACTION * fine) || envelope == 0.0 || k >= max_steps {
                break;
            }
        }
        h_back2 = Some(std::mem::replace(&mut h_back1, h));
    }
    Ok(fine + (fine - coarse) / 3.0)
}

/// Integral over `[0, len]` of the norm of the linear interpolant between
/// `h0` and `h1`: exact for row/column vectors, trapezoid for matrices.
fn segment_norm_integral(h0: &DMatrix<f64>, h1: &DMatrix<f64>, len: f64) -> f64 {
    if h0.nrows() == 1 || h0.ncols() == 1 {
        len * linear_norm_integral(h0.as_slice(), h1.as_slice())
    } else {
        0.5 * len * (linops::spectral_norm(h0) + linops::spectral_norm(h1))
    }
}

/// `int_0^1 |a + s (b - a)| ds`.
pub(crate) fn linear_norm_integral(a: &[f64], b: &[f64]) -> f64 {
    let (mut dd, mut ad, mut aa) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let d = y - x;
        dd += d * d;
        ad += x * d;
        aa += x * x;
    }
    let norm_at = |s: f64| {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let v = x + s * (y - x);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    if dd == 0.0 {
        return aa.sqrt();
    }
    let closest = -ad / dd;
    let offset2 = ((aa - ad * ad / dd) / dd).max(0.0);
    if offset2 >= 1.0 || !(-0.5..=1.5).contains(&closest) {
        // the segment stays well away from the origin: the norm is smooth there
        return (norm_at(0.0) + 4.0 * norm_at(0.5) + norm_at(1.0)) / 6.0;
    }
    // |a + s d|^2 = dd ((s - closest)^2 + offset2)
    let antiderivative = |u: f64| {
        let r = (u * u + offset2).sqrt();
        let log_part = if offset2 > 0.0 { offset2 * (u / offset2.sqrt()).asinh() } else { 0.0 };
        0.5 * (u * r + log_part)
    };
    dd.sqrt() * (antiderivative(1.0 - closest) - antiderivative(-closest))
}

/// Points `v . H_T(t_k)` for `k = 0..N` plus the closing left limit, with trapezoid weights.
fn directional_points(grid: &ImpulseGrid, v: &[f64]) -> Vec<f64> {
    let closing = grid.closing.as_ref().expect("periodic grid carries its closing sample");
    let m = closing.ncols();
    let mut points = Vec::with_capacity((grid.len() + 1) * m);
    for h in grid.samples.iter().chain(std::iter::once(closing)) {
        for j in 0..m {
            points.push((0..h.nrows()).map(|i| v[i] * h[(i, j)]).sum());
        }
    }
    points
}

fn trapezoid_weights(n: usize) -> Vec<f64> {
    let mut w = vec![1.0; n + 1];
    w[0] = 0.5;
    w[n] = 0.5;
    w
}

/// Mean absolute deviation of `v . H_T` from its geometric median over one period.
fn directional_mad(grid: &ImpulseGrid, weights: &[f64], v: &[f64], opts: &MedianOptions) -> Result<(f64, Vec<f64>)> {
    let points = directional_points(grid, v);
    let m = points.len() / weights.len();
    let r = weighted_geometric_median(&points, Some(weights), m, opts)?;
    Ok((r.mad, r.mu))
}

/// Median of `v . H_T` together with its sample points (used by the worst-case input).
pub(crate) fn directional_median(grid: &ImpulseGrid, v: &[f64], opts: &MedianOptions) -> Result<Vec<f64>> {
    let weights = trapezoid_weights(grid.len());
    Ok(directional_mad(grid, &weights, v, opts)?.1)
}

/// `sup_{|v|=1} D_median(v . H_T)` and the maximizing direction.
fn sphere_sup(grid: &ImpulseGrid, period: f64, opts: &GainOptions) -> Result<(f64, Vec<f64>, bool)> {
    let p = grid.samples[0].nrows();
    let weights = trapezoid_weights(grid.len());
    let eval = |v: &[f64]| directional_mad(grid, &weights, v, &opts.median).map(|r| r.0);
    match p {
        1 => Ok((eval(&[1.0])?, vec![1.0], true)),
        2 => {
            // D(-v) = D(v): half a turn covers every direction
            let dir = |theta: f64| [theta.cos(), theta.sin()];
            let step = std::f64::consts::PI / ANGLE_SEEDS as f64;
            let mut best = (f64::NEG_INFINITY, 0.0);
            for j in 0..ANGLE_SEEDS {
                let theta = j as f64 * step;
                let value = eval(&dir(theta))?;
                if value > best.0 {
                    best = (value, theta);
                }
            }
            let (value, theta) = golden_section_max(|t| eval(&dir(t)), best.1 - step, best.1 + step, 1e-10)?;
            let (value, theta) = if value >= best.0 { (value, theta) } else { best };
            Ok((value, dir(theta).to_vec(), true))
        }
        _ => {
            let (value, v) = multistart_ascent(p, period, opts, &eval)?;
            Ok((value, v, false))
        }
    }
}

fn golden_section_max(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (f1, x1) } else { (f2, x2) })
}

fn normalize(v: &mut [f64]) {
    let n = crate::model::norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Uniform direction on the unit sphere by rejection from the cube.
fn random_direction(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = crate::model::norm(&v);
        if r > 1e-3 && r <= 1.0 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Projected gradient ascent on the unit sphere from random starts; finite-difference gradients.
fn multistart_ascent(
    p: usize,
    period: f64,
    opts: &GainOptions,
    eval: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ period.to_bits().rotate_left(17));
    let h = 1e-6;
    let mut best = (f64::NEG_INFINITY, vec![0.0; p]);
    for _ in 0..opts.multistarts.max(1) {
        let mut v = random_direction(&mut rng, p);
        let mut value = eval(&v)?;
        for _ in 0..100 {
            let mut grad = vec![0.0; p];
            for i in 0..p {
                let mut probe = v.clone();
                probe[i] += h;
                normalize(&mut probe);
                grad[i] = (eval(&probe)? - value) / h;
            }
            let radial: f64 = grad.iter().zip(&v).map(|(g, x)| g * x).sum();
            grad.iter_mut().zip(&v).for_each(|(g, x)| *g -= radial * x);
            let gnorm = crate::model::norm(&grad);
            if gnorm < 1e-12 {
                break;
            }
            let mut angle = 0.5;
            let mut improved = None;
            while angle > 1e-8 {
                let mut candidate: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x + angle * g / gnorm).collect();
                normalize(&mut candidate);
                let cv = eval(&candidate)?;
                if cv > value {
                    improved = Some((cv, candidate));
                    break;
                }
                angle *= 0.5;
            }
            match improved {
                Some((cv, candidate)) => {
                    let gain = cv - value;
                    value = cv;
                    v = candidate;
                    if gain <= 1e-6 * value.abs() {
                        break;
                    }
                }
                None => break,
            }
        }
        if value > best.0 {
            best = (value, v);
        }
    }
    if best.0.is_finite() {
        Ok(best)
    } else {
        Err(Error::SupFail { best: best.0.max(0.0) })
    }
}

/// Exact linear PAG: `gamma_dc = |G(0)|`, `gamma_ac(T) = T sup_v D_median(v . H_T)`.
pub fn linear_pag(ch: &Channel, period: f64, opts: &GainOptions) -> Result<LinearPag> {
    let gamma_dc = linops::spectral_norm(&linops::dc_transfer(ch)?);
    let grid = linops::periodic_impulse_response(ch, period, opts.n)?;
    let (mad, _, certified) = sphere_sup(&grid, period, opts)?;
    Ok(LinearPag { period, gamma_dc, gamma_ac: period * mad, ac_certified: certified })
}

/// The maximizing output direction of the exact AC gain.
pub fn worst_direction(ch: &Channel, period: f64, opts: &GainOptions) -> Result<Vec<f64>> {
    let grid = linops::periodic_impulse_response(ch, period, opts.n)?;
    Ok(sphere_sup(&grid, period, opts)?.1)
}

/// Conservative AC gain `int_0^T |H_T(t)| dt` (trapezoid on the period grid).
pub fn linear_pag_conservative(ch: &Channel, period: f64, n: usize) -> Result<f64> {
    let grid = linops::periodic_impulse_response(ch, period, n)?;
    let closing = grid.closing.as_ref().expect("periodic grid carries its closing sample");
    let interior: f64 = grid.samples.iter().skip(1).map(linops::spectral_norm).sum();
    let ends = 0.5 * (linops::spectral_norm(&grid.samples[0]) + linops::spectral_norm(closing));
    Ok(grid.dt * (interior + ends))
}

/// The four linear PAGs a nonlinear system is assembled from, all at one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsystemPags {
    pub u_to_x: LinearPag,
    pub f_to_x: LinearPag,
    pub u_to_y: LinearPag,
    pub f_to_y: LinearPag,
}

pub fn subsystem_pags(sys: &StateSpace, period: f64, opts: &GainOptions) -> Result<SubsystemPags> {
    let pag = |input, output| linear_pag(&sys.channel(input, output), period, opts);
    Ok(SubsystemPags {
        u_to_x: pag(InputMap::Input, OutputMap::State)?,
        f_to_x: pag(InputMap::Nonlinearity, OutputMap::State)?,
        u_to_y: pag(InputMap::Input, OutputMap::Output)?,
        f_to_y: pag(InputMap::Nonlinearity, OutputMap::Output)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The smaller root of `a xi^2 - xi + c`.
    Root,
    /// The a-priori cap.
    Saturated,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Root => "root",
            Branch::Saturated => "saturated",
        }
    }
}

/// Largest `xi` in `[0, cap]` with `a xi^2 - xi + c >= 0`.
///
/// If `a cap^2 + c <= cap` the cap lies between the roots and the answer is
/// the smaller root, evaluated as `2c / (1 + sqrt(1 - 4ac))` (equal to
/// `(1 - sqrt(1 - 4ac)) / 2a`, and exact in the `a -> 0` limit). Otherwise
/// the cap itself satisfies the inequality.
pub fn quad_resolve(a: f64, c: f64, cap: f64) -> (f64, Branch) {
    // an unbounded cap only constrains through the linear term
    let fits = if cap.is_infinite() { a == 0.0 } else { a * cap * cap + c <= cap };
    if fits {
        let disc = (1.0 - 4.0 * a * c).max(0.0);
        (2.0 * c / (1.0 + disc.sqrt()), Branch::Root)
    } else {
        (cap, Branch::Saturated)
    }
}

/// Invariant-set bounds `b` per input level; queried with the smallest tabulated level
/// not below the requested one.
#[derive(Debug, Clone, PartialEq)]
pub struct BTable {
    entries: Vec<(f64, f64)>,
}

impl BTable {
    /// Entries are `(level, b)`; levels must be distinct and `b` non-decreasing in level.
    pub fn new(mut entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.iter().any(|&(l, b)| !(l >= 0.0 && b >= 0.0) || !l.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument("b-table levels and bounds must be finite and nonnegative".into()));
        }
        entries.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidArgument(format!("b-table lists level {} twice", w[0].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidArgument(format!(
                    "b-table is not monotone: b({}) = {} > b({}) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }

    pub fn lookup(&self, level: f64) -> Option<f64> {
        let tol = 1e-12 * level.abs().max(1e-300);
        self.entries.iter().find(|&&(l, _)| l >= level - tol).map(|&(_, b)| b)
    }
}

/// Conservative nonlinear PAG evaluated at one input magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearPagResult {
    pub eta_dc: f64,
    pub eta_ac: f64,
    /// State-level bounds (general structure only).
    pub xi_dc: Option<f64>,
    pub xi_ac: Option<f64>,
    pub branch_dc: Branch,
    pub branch_ac: Branch,
    pub b: f64,
}

impl NonlinearPagResult {
    pub fn bound(&self) -> RhoVector {
        RhoVector { dc: self.eta_dc, ac: self.eta_ac }
    }
}

/// Sub-channel PAGs at a fixed period plus the quadratic constants; evaluates
/// the conservative PAG at any input magnitude without recomputing gains.
#[derive(Debug, Clone, PartialEq)]
pub struct PagEvaluator {
    pub structure: Structure,
    pub m_f: f64,
    pub m_g: f64,
    pub u_max: f64,
    pub u_to_y: LinearPag,
    pub f_to_y: LinearPag,
    /// State channels, present for the general structure.
    pub u_to_x: Option<LinearPag>,
    pub f_to_x: Option<LinearPag>,
}

impl PagEvaluator {
    pub fn general(pags: &SubsystemPags, m_f: f64, m_g: f64, u_max: f64) -> Self {
        Self {
            structure: Structure::General,
            m_f,
            m_g,
            u_max,
            u_to_y: pags.u_to_y,
            f_to_y: pags.f_to_y,
            u_to_x: Some(pags.u_to_x),
            f_to_x: Some(pags.f_to_x),
        }
    }

    pub fn output_lurie(u_to_y: LinearPag, f_to_y: LinearPag, m_f: f64, u_max: f64) -> Self {
        Self { structure: Structure::OutputLurie, m_f, m_g: 0.0, u_max, u_to_y, f_to_y, u_to_x: None, f_to_x: None }
    }

    /// Computes the sub-channel PAGs the system's structure needs.
    pub fn for_system(nsys: &NonlinearSystem, period: f64, opts: &GainOptions) -> Result<Self> {
        let ss = &nsys.linear;
        ss.ensure_hurwitz()?;
        match nsys.structure {
            Structure::General => Ok(Self::general(&subsystem_pags(ss, period, opts)?, nsys.m_f, nsys.m_g, nsys.u_max)),
            Structure::OutputLurie => {
                let u_to_y = linear_pag(&ss.channel(InputMap::Input, OutputMap::Output), period, opts)?;
                let f_to_y = linear_pag(&ss.channel(InputMap::Nonlinearity, OutputMap::Output), period, opts)?;
                Ok(Self::output_lurie(u_to_y, f_to_y, nsys.m_f, nsys.u_max))
            }
        }
    }

    pub fn period(&self) -> f64 {
        self.u_to_y.period
    }

    /// `b` bounds `|x|` (general) or `|Cx|` (output-Lurie) on the invariant set for this input level.
    pub fn evaluate(&self, b: f64, rho: RhoVector) -> Result<NonlinearPagResult> {
        let (dc, ac) = (rho.dc, rho.ac);
        if !(dc >= 0.0 && ac >= 0.0) {
            return Err(Error::InvalidArgument(format!("input magnitudes {rho} must be nonnegative")));
        }
        if rho.one_norm() >= self.u_max {
            return Err(Error::InvalidArgument(format!("|rho|_1 = {} exceeds u_max = {}", rho.one_norm(), self.u_max)));
        }
        if !(b > 0.0) {
            if rho.one_norm() == 0.0 && b == 0.0 {
                return Ok(NonlinearPagResult {
                    eta_dc: 0.0,
                    eta_ac: 0.0,
                    xi_dc: self.u_to_x.map(|_| 0.0),
                    xi_ac: self.u_to_x.map(|_| 0.0),
                    branch_dc: Branch::Root,
                    branch_ac: Branch::Root,
                    b,
                });
            }
            return Err(Error::InvalidBound(b));
        }
        let rho2 = dc * dc + ac * ac;
        let m_f = self.m_f;
        match (self.u_to_x, self.f_to_x) {
            (Some(ux), Some(fx)) => {
                let a_ac = 2.0 * m_f * fx.gamma_ac;
                let (xi_ac, branch_ac) = quad_resolve(a_ac, a_ac * ac * ac + ux.gamma_ac * ac, 2.0 * b);
                let a_dc = m_f * fx.gamma_dc;
                let (xi_dc, branch_dc) = quad_resolve(a_dc, a_dc * (xi_ac * xi_ac + rho2) + ux.gamma_dc * dc, b);
                let (uy, fy) = (self.u_to_y, self.f_to_y);
                let eta_dc = uy.gamma_dc * dc
                    + m_f * fy.gamma_dc * rho2
                    + (m_f * fy.gamma_dc + self.m_g) * (xi_dc * xi_dc + xi_ac * xi_ac);
                let eta_ac = uy.gamma_ac * ac
                    + m_f * fy.gamma_ac * 2.0 * ac * ac
                    + (m_f * fy.gamma_ac + self.m_g) * 2.0 * xi_ac * xi_ac;
                Ok(NonlinearPagResult {
                    eta_dc,
                    eta_ac,
                    xi_dc: Some(xi_dc),
                    xi_ac: Some(xi_ac),
                    branch_dc,
                    branch_ac,
                    b,
                })
            }
            _ => {
                let (uy, fy) = (self.u_to_y, self.f_to_y);
                let a_ac = 2.0 * m_f * fy.gamma_ac;
                let (eta_ac, branch_ac) = quad_resolve(a_ac, a_ac * ac * ac + uy.gamma_ac * ac, 2.0 * b);
                let a_dc = m_f * fy.gamma_dc;
                let (eta_dc, branch_dc) = quad_resolve(a_dc, a_dc * (eta_ac * eta_ac + rho2) + uy.gamma_dc * dc, b);
                Ok(NonlinearPagResult { eta_dc, eta_ac, xi_dc: None, xi_ac: None, branch_dc, branch_ac, b })
            }
        }
    }
}

/// Conservative PAG of a general-structure system (state-level bounds first).
pub fn nonlinear_pag_general(
    nsys: &NonlinearSystem,
    period: f64,
    opts: &GainOptions,
    b: f64,
    rho: RhoVector,
) -> Result<NonlinearPagResult> {
    let pags = subsystem_pags(&nsys.linear, period, opts)?;
    PagEvaluator::general(&pags, nsys.m_f, nsys.m_g, nsys.u_max).evaluate(b, rho)
}

/// Conservative PAG of an output-Lurie system (output-level bounds only).
pub fn nonlinear_pag_special(
    nsys: &NonlinearSystem,
    period: f64,
    opts: &GainOptions,
    b: f64,
    rho: RhoVector,
) -> Result<NonlinearPagResult> {
    if nsys.structure != Structure::OutputLurie {
        return Err(Error::StructureMismatch("the output-level PAG needs an output-Lurie system".into()));
    }
    PagEvaluator::for_system(nsys, period, opts)?.evaluate(b, rho)
}

/// Average slope `(1/l) |gamma_T(rho)|_1` with `rho` fixed by the composition.
pub fn mu_slope(gain: impl Fn(RhoVector) -> Result<RhoVector>, level: f64, composition: Composition) -> Result<f64> {
    if !(level > 0.0) {
        return Err(Error::InvalidArgument(format!("level {level} must be positive")));
    }
    Ok(gain(composition.caps(level))?.one_norm() / level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    PagSharper,
    AgSharper,
    Tie,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::PagSharper => "pag_sharper",
            Verdict::AgSharper => "ag_sharper",
            Verdict::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness {
    pub verdict: Verdict,
    /// `|gamma_T(rho)|_1`.
    pub pag_bound: f64,
    /// `gamma(|rho|_1)`.
    pub ag_bound: f64,
}

/// Compares the output sup-bound implied by the PAG with the classical AG bound.
pub fn sharpness_compare(pag: RhoVector, ag_bound: f64) -> Sharpness {
    let pag_bound = pag.one_norm();
    let slack = 1e-12 * pag_bound.max(ag_bound);
    let verdict = if (pag_bound - ag_bound).abs() <= slack {
        Verdict::Tie
    } else if pag_bound < ag_bound {
        Verdict::PagSharper
    } else {
        Verdict::AgSharper
    };
    Sharpness { verdict, pag_bound, ag_bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn rv(dc: f64, ac: f64) -> RhoVector {
        RhoVector { dc, ac }
    }

    fn lag(pole: f64, gain: f64) -> Channel {
        Channel::new(
            DMatrix::from_element(1, 1, -pole),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, gain),
        )
        .unwrap()
    }

    /// `H(t) = e^{-alpha t} sin(beta t) / beta`.
    fn oscillator(alpha: f64, beta: f64) -> Channel {
        Channel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -(alpha * alpha + beta * beta), -2.0 * alpha]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn lag_at_period_two() {
        let pag = linear_pag(&lag(1.0, 1.0), 2.0, &GainOptions::default()).unwrap();
        assert_relative_eq!(pag.gamma_dc, 1.0, epsilon = 1e-12);
        assert!((pag.gamma_ac - 0.5f64.tanh()).abs() < 1e-6, "{}", pag.gamma_ac);
        assert!(pag.ac_certified);
        let cons = linear_pag_conservative(&lag(1.0, 1.0), 2.0, DEFAULT_GRID_N).unwrap();
        assert!((cons - 1.0).abs() < 1e-6, "{cons}");
        assert!((classical_ag_slope(&lag(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn oscillator_ag_slope_closed_form() {
        for (alpha, beta) in [(1.0, 1.0), (0.2, 3.0), (2.0, 0.5)] {
            let exact = (alpha * std::f64::consts::PI / (2.0 * beta)).tanh().recip() / (alpha * alpha + beta * beta);
            let got = classical_ag_slope(&oscillator(alpha, beta)).unwrap();
            assert!((got - exact).abs() < 1e-8 * exact, "{alpha} {beta}: {got} vs {exact}");
        }
    }

    #[test]
    fn vector_impulse_ag_slope_closed_form() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let exact = 0.5 * (2f64.sqrt() + 1f64.asinh());
        assert!((classical_ag_slope(&ch).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn linear_norm_integral_cases() {
        // passes through the origin: |s - 1/2| * 2 integrated gives 1/2
        assert_relative_eq!(linear_norm_integral(&[-1.0, 0.0], &[1.0, 0.0]), 0.5, epsilon = 1e-14);
        // far from the origin the norm is almost linear
        assert_relative_eq!(linear_norm_integral(&[10.0, 0.0], &[11.0, 0.0]), 10.5, epsilon = 1e-12);
        // perpendicular offset 1, travel from -1 to 1
        let exact = 2f64.sqrt() + 1f64.asinh();
        assert_relative_eq!(linear_norm_integral(&[-1.0, 1.0], &[1.0, 1.0]), exact / 2.0, epsilon = 1e-13);
    }

    #[test]
    fn quad_resolve_examples() {
        assert_eq!(quad_resolve(0.0, 0.3, 1.0), (0.3, Branch::Root));
        assert_eq!(quad_resolve(0.0, 2.0, 1.0), (1.0, Branch::Saturated));
        let (xi, br) = quad_resolve(1.0, 0.1, 0.5);
        assert_eq!(br, Branch::Root);
        assert_relative_eq!(xi, (1.0 - 0.6f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert_eq!(quad_resolve(1.0, 0.3, 0.5), (0.5, Branch::Saturated));
        assert_eq!(quad_resolve(0.5, 0.0, 1.0), (0.0, Branch::Root));
        let (xi, br) = quad_resolve(0.01, 0.1, 1.0);
        assert_eq!(br, Branch::Root);
        assert!((xi - 0.100100).abs() < 1e-6);
        assert_relative_eq!(xi, (1.0 - 0.996f64.sqrt()) / 0.02, max_relative = 1e-12);
        assert_eq!(quad_resolve(0.5, 0.125, 20.0), (20.0, Branch::Saturated));
    }

    #[test]
    fn unbounded_cap() {
        assert_eq!(quad_resolve(0.0, 3.0, f64::INFINITY), (3.0, Branch::Root));
        assert_eq!(quad_resolve(0.1, 3.0, f64::INFINITY), (f64::INFINITY, Branch::Saturated));
    }

    #[test]
    fn b_table_lookup() {
        let t = BTable::new(vec![(0.06, 0.1), (0.02, 0.04), (0.1, 0.15)]).unwrap();
        assert_eq!(t.lookup(0.02), Some(0.04));
        assert_eq!(t.lookup(0.03), Some(0.1));
        assert_eq!(t.lookup(0.1), Some(0.15));
        assert_eq!(t.lookup(0.2), None);
        assert!(BTable::new(vec![(0.02, 0.1), (0.06, 0.05)]).is_err());
        assert!(BTable::new(vec![(0.02, 0.1), (0.02, 0.2)]).is_err());
    }

    #[test]
    fn zero_output_map_has_zero_gains() {
        let ch = lag(1.0, 0.0);
        let pag = linear_pag(&ch, 1.0, &GainOptions::with_n(256)).unwrap();
        assert_eq!((pag.gamma_dc, pag.gamma_ac), (0.0, 0.0));
        assert_eq!(linear_pag_conservative(&ch, 1.0, 256).unwrap(), 0.0);
        assert_eq!(classical_ag_slope(&ch).unwrap(), 0.0);
    }

    #[test]
    fn long_period_approaches_ag() {
        let pag = linear_pag(&lag(1.0, 1.0), 20.0, &GainOptions::default()).unwrap();
        assert!((pag.gamma_ac - 1.0).abs() < 0.01);
    }

    #[test]
    fn dominated_diagonal_matrix_channel() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!((classical_ag_slope(&ch).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn subsystem_identities() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -2.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let opts = GainOptions::with_n(256);
        let same =
            StateSpace::new(a.clone(), b.clone(), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), b.clone()).unwrap();
        let s = subsystem_pags(&same, 1.3, &opts).unwrap();
        assert_eq!(s.u_to_x, s.f_to_x);
        assert_eq!(s.u_to_y, s.f_to_y);
        let ident = StateSpace::new(a, b.clone(), DMatrix::identity(2, 2), b * 2.0).unwrap();
        let s = subsystem_pags(&ident, 1.3, &opts).unwrap();
        assert_eq!(s.u_to_x, s.u_to_y);
    }

    #[test]
    fn multi_output_search_finds_embedded_scalar_channel() {
        let base = oscillator(0.5, 2.0);
        let mut c = DMatrix::zeros(3, 2);
        c.set_row(1, &base.c.row(0));
        let ch = Channel::new(base.a.clone(), base.b.clone(), c).unwrap();
        let opts = GainOptions { n: 512, multistarts: 8, ..GainOptions::default() };
        let scalar = linear_pag(&base, 1.7, &opts).unwrap();
        let multi = linear_pag(&ch, 1.7, &opts).unwrap();
        assert!(!multi.ac_certified);
        assert!((multi.gamma_ac - scalar.gamma_ac).abs() < 1e-6 * scalar.gamma_ac);
    }

    #[test]
    fn two_output_search_matches_dense_scan() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.3]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 1.0]),
        )
        .unwrap();
        let period = 2.3;
        let n = 400;
        let opts = GainOptions::with_n(n);
        let pag = linear_pag(&ch, period, &opts).unwrap();
        let grid = linops::periodic_impulse_response(&ch, period, n).unwrap();
        let w = trapezoid_weights(n);
        let dense = (0..3600)
            .map(|j| {
                let th = j as f64 * std::f64::consts::PI / 3600.0;
                directional_mad(&grid, &w, &[th.cos(), th.sin()], &opts.median).unwrap().0
            })
            .fold(0.0, f64::max);
        assert!(pag.gamma_ac >= period * dense - 1e-12);
        assert!(pag.gamma_ac - period * dense < 1e-5 * pag.gamma_ac);
    }

    fn general_system(m_f: f64, m_g: f64) -> NonlinearSystem {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        NonlinearSystem::new(
            ss,
            crate::model::Nonlinearity::Quadratic { gain: m_f },
            m_f,
            m_g,
            Structure::General,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn nonlinear_pag_reduces_to_linear_without_nonlinearity() {
        let sys = general_system(0.0, 0.0);
        let opts = GainOptions::with_n(256);
        let rho = rv(0.2, 0.3);
        let r = nonlinear_pag_general(&sys, 1.5, &opts, 100.0, rho).unwrap();
        let lin = linear_pag(&sys.linear.channel(InputMap::Input, OutputMap::Output), 1.5, &opts).unwrap();
        assert_relative_eq!(r.eta_dc, lin.gamma_dc * 0.2, epsilon = 1e-15);
        assert_relative_eq!(r.eta_ac, lin.gamma_ac * 0.3, epsilon = 1e-15);
        let zero = nonlinear_pag_general(&sys, 1.5, &opts, 1.0, rv(0.0, 0.0)).unwrap();
        assert_eq!((zero.eta_dc, zero.eta_ac), (0.0, 0.0));
    }

    #[test]
    fn nonlinear_pag_errors() {
        let sys = general_system(0.5, 0.0);
        let opts = GainOptions::with_n(128);
        assert!(matches!(nonlinear_pag_general(&sys, 1.0, &opts, 0.0, rv(0.1, 0.0)), Err(Error::InvalidBound(_))));
        assert!(matches!(nonlinear_pag_special(&sys, 1.0, &opts, 1.0, rv(0.1, 0.0)), Err(Error::StructureMismatch(_))));
        assert!(matches!(nonlinear_pag_general(&sys, 1.0, &opts, 1.0, rv(6.0, 5.0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sharpness_verdicts() {
        assert_eq!(sharpness_compare(rv(0.0, 0.0), 0.0).verdict, Verdict::Tie);
        assert_eq!(sharpness_compare(rv(0.1, 0.2), 0.5).verdict, Verdict::PagSharper);
        assert_eq!(sharpness_compare(rv(0.3, 0.3), 0.5).verdict, Verdict::AgSharper);
    }

    #[test]
    fn mu_slope_of_linear_pag() {
        let pag = LinearPag { period: 1.0, gamma_dc: 2.0, gamma_ac: 0.5, ac_certified: true };
        let gain = |r| Ok(pag.apply(r));
        assert_relative_eq!(mu_slope(gain, 0.4, Composition::PureDc).unwrap(), 2.0);
        assert_relative_eq!(mu_slope(gain, 0.4, Composition::PureAc).unwrap(), 0.5);
        assert_relative_eq!(mu_slope(gain, 0.4, Composition::Split).unwrap(), 1.25);
        assert!(mu_slope(gain, 0.0, Composition::Split).is_err());
    }

    /// Stable random system with bounded stiffness.
    fn random_channel(seed: u64, n: usize, p: usize) -> Channel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = linops::eigenvalues(&a).unwrap().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            a[(i, i)] -= shift + rng.random_range(0.3..1.5);
        }
        let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        Channel::new(a, b, c).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn lag_matches_closed_form(pole in 0.1f64..5.0, gain in -3.0f64..3.0, period in 0.05f64..20.0) {
            let pag = linear_pag(&lag(pole, gain), period, &GainOptions::with_n(2048)).unwrap();
            let exact = gain.abs() / pole * (pole * period / 4.0).tanh();
            // trapezoid error is (a dt)^2 / 12 relative
            let tol = 1e-9 + (pole * period / 2048.0).powi(2) / 6.0;
            prop_assert!((pag.gamma_ac - exact).abs() <= tol * exact);
        }

        #[test]
        fn gain_ordering(seed in any::<u64>(), n in 1usize..4, p in 1usize..3, period in 0.1f64..10.0) {
            let ch = random_channel(seed, n, p);
            let pag = linear_pag(&ch, period, &GainOptions::with_n(512)).unwrap();
            let cons = linear_pag_conservative(&ch, period, 512).unwrap();
            let ag = classical_ag_slope(&ch).unwrap();
            prop_assert!(pag.gamma_ac <= cons * (1.0 + 1e-9));
            prop_assert!(cons <= ag * (1.0 + 1e-3));
            prop_assert!(pag.gamma_dc <= ag * (1.0 + 1e-6));
        }

        #[test]
        fn quad_resolve_is_largest_feasible(a in 0.0f64..5.0, c in 0.0f64..1.0, cap in 0.01f64..2.0) {
            let (xi, _) = quad_resolve(a, c, cap);
            let q = |x: f64| a * x * x - x + c;
            prop_assert!(xi >= 0.0 && xi <= cap);
            prop_assert!(q(xi) >= -1e-12);
            let steps = 100_000;
            let brute = (0..=steps)
                .map(|i| cap * i as f64 / steps as f64)
                .filter(|&x| q(x) >= 0.0)
                .fold(0.0, f64::max);
            prop_assert!((xi - brute).abs() <= cap / steps as f64 + 1e-12);
        }

        #[test]
        fn nonlinear_pag_monotone(dc in 0.0f64..0.3, ac in 0.0f64..0.3, ddc in 0.0f64..0.1, dac in 0.0f64..0.1,
                                   m_f in 0.0f64..2.0, b in 0.1f64..3.0) {
            let pags = SubsystemPags {
                u_to_x: LinearPag { period: 1.0, gamma_dc: 0.7, gamma_ac: 0.4, ac_certified: true },
                f_to_x: LinearPag { period: 1.0, gamma_dc: 0.9, gamma_ac: 0.3, ac_certified: true },
                u_to_y: LinearPag { period: 1.0, gamma_dc: 1.1, gamma_ac: 0.5, ac_certified: true },
                f_to_y: LinearPag { period: 1.0, gamma_dc: 0.6, gamma_ac: 0.2, ac_certified: true },
            };
            let ev = PagEvaluator::general(&pags, m_f, 0.1, 1.0);
            let lo = ev.evaluate(b, rv(dc, ac)).unwrap();
            let hi = ev.evaluate(b, rv(dc + ddc, ac + dac)).unwrap();
            prop_assert!(hi.eta_dc >= lo.eta_dc && hi.eta_ac >= lo.eta_ac);
            let lurie = PagEvaluator::output_lurie(pags.u_to_y, pags.f_to_y, m_f, 1.0);
            let lo = lurie.evaluate(b, rv(dc, ac)).unwrap();
            let hi = lurie.evaluate(b, rv(dc + ddc, ac + dac)).unwrap();
            prop_assert!(hi.eta_dc >= lo.eta_dc && hi.eta_ac >= lo.eta_ac);
        }
    }
}
