//! Synchronous-reference-frame PLL error dynamics.
//!
//! State `(theta, omega)`, output `y = theta`, input `u = (v_d, v_q)` deviations
//! of the normalized grid voltage, nonlinearity
//! `f(y, u) = y - sin y + u . [cos y - 1, sin y]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{NonlinearSystem, Nonlinearity, StateSpace, Structure};

/// Default points per axis of the `(y, ybar)` scan in [`estimate_mf`].
pub const MF_GRID: usize = 65;
/// Sampling margin applied to the scanned maximum.
pub const MF_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllParams {
    pub zeta: f64,
    /// Bandwidth in rad/s.
    pub omega_c: f64,
}

impl Default for PllParams {
    fn default() -> Self {
        Self { zeta: std::f64::consts::FRAC_1_SQRT_2, omega_c: 2.0 * std::f64::consts::PI * 10.0 }
    }
}

impl PllParams {
    pub fn new(zeta: f64, omega_c: f64) -> Result<Self> {
        if !(zeta > 0.0 && omega_c > 0.0) || zeta.is_infinite() || omega_c.is_infinite() {
            return Err(Error::InvalidArgument(format!(
                "PLL tuning zeta = {zeta}, omega_c = {omega_c} must be positive"
            )));
        }
        Ok(Self { zeta, omega_c })
    }

    pub fn kp(&self) -> f64 {
        2.0 * self.zeta * self.omega_c
    }

    pub fn ki(&self) -> f64 {
        self.omega_c * self.omega_c
    }

    /// Matrices `A, B, C, F`.
    pub fn state_space(&self) -> StateSpace {
        let (kp, ki) = (self.kp(), self.ki());
        StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[-kp, 1.0, -ki, 0.0]),
            DMatrix::from_row_slice(2, 2, &[kp, 0.0, ki, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[kp, ki]),
        )
        .expect("PLL matrices are well formed")
    }
}

/// The PLL as an output-Lurie system with quadratic constant `m_f` valid for `|u| <= u_max`.
pub fn pll_system(params: &PllParams, m_f: f64, u_max: f64) -> Result<NonlinearSystem> {
    NonlinearSystem::new(params.state_space(), Nonlinearity::Pll, m_f, 0.0, Structure::OutputLurie, u_max)
}

/// Quadratic remainder constant of the PLL nonlinearity over `|y| <= y_max`, `|u| <= u_max`.
pub fn estimate_mf(y_max: f64, u_max: f64) -> Result<f64> {
    estimate_mf_with_grid(y_max, u_max, MF_GRID)
}

/// Scans `(y, ybar)` on a `grid x grid` lattice; the supremum over the input
/// pair is taken analytically (see [`pair_bound`]), and the `y -> ybar` limit
/// is covered by the Hessian bound at every `ybar`. Returns the maximum times
/// [`MF_MARGIN`].
pub fn estimate_mf_with_grid(y_max: f64, u_max: f64, grid: usize) -> Result<f64> {
    if !(y_max > 0.0) || y_max.is_infinite() || !(u_max >= 0.0) || u_max.is_infinite() {
        return Err(Error::InvalidArgument(format!("region y_max = {y_max}, u_max = {u_max} is invalid")));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument("M_f grid needs at least two points per axis".into()));
    }
    let ys: Vec<f64> = (0..grid).map(|i| -y_max + 2.0 * y_max * i as f64 / (grid - 1) as f64).collect();
    let mut best = 0.0f64;
    for &ybar in &ys {
        best = best.max(hessian_bound(ybar, u_max));
        for &y in &ys {
            if y != ybar {
                best = best.max(pair_bound(y, ybar, u_max));
            }
        }
    }
    Ok(MF_MARGIN * best)
}

/// Remainder of `f` about `(ybar, ubar)` at `(y, u)`, divided by `|y - ybar|^2 + |u - ubar|^2`.
pub fn remainder_ratio(y: f64, u: [f64; 2], ybar: f64, ubar: [f64; 2]) -> f64 {
    let f = |y: f64, u: [f64; 2]| y - y.sin() + u[0] * (y.cos() - 1.0) + u[1] * y.sin();
    let (sb, cb) = ybar.sin_cos();
    let dfdy = 1.0 - cb - ubar[0] * sb + ubar[1] * cb;
    let dfdu = [cb - 1.0, sb];
    let (dy, du) = (y - ybar, [u[0] - ubar[0], u[1] - ubar[1]]);
    let denom = dy * dy + du[0] * du[0] + du[1] * du[1];
    if denom == 0.0 {
        return 0.0;
    }
    let r = f(y, u) - f(ybar, ubar) - dfdy * dy - dfdu[0] * du[0] - dfdu[1] * du[1];
    r.abs() / denom
}

/// Upper bound of the remainder ratio over all `|u|, |ubar| <= u_max` at fixed `y != ybar`.
///
/// With `f = phi(y) + u . psi(y)` the remainder splits into
/// `r_phi + ubar . r_psi + (u - ubar) . (psi(y) - psi(ybar))`, so for `|u - ubar| = s`
/// its magnitude is at most `P + s Q`; the bound maximizes `(P + s Q) / (dy^2 + s^2)`
/// over `s in [0, 2 u_max]`.
fn pair_bound(y: f64, ybar: f64, u_max: f64) -> f64 {
    let dy = y - ybar;
    let (sy, cy) = y.sin_cos();
    let (sb, cb) = ybar.sin_cos();
    let r_phi = (y - sy) - (ybar - sb) - (1.0 - cb) * dy;
    let r_psi = [(cy - 1.0) - (cb - 1.0) + sb * dy, sy - sb - cb * dy];
    let p = r_phi.abs() + u_max * r_psi[0].hypot(r_psi[1]);
    let q = (cy - cb).hypot(sy - sb);
    let d = dy * dy;
    let ratio = |s: f64| (p + s * q) / (d + s * s);
    let s_max = 2.0 * u_max;
    let mut best = ratio(0.0).max(ratio(s_max));
    if q > 0.0 {
        let s_star = (-p + (p * p + q * q * d).sqrt()) / q;
        if s_star > 0.0 && s_star < s_max {
            best = best.max(ratio(s_star));
        }
    }
    best
}

/// Half the spectral radius of the Hessian of `f` in `(y, u)`, maximized over `|ubar| <= u_max`.
fn hessian_bound(ybar: f64, u_max: f64) -> f64 {
    let h = ybar.sin().abs() + u_max;
    if u_max == 0.0 {
        // no room to move u: only the curvature in y counts
        return 0.5 * ybar.sin().abs();
    }
    // eigenvalues of [[h, g^T], [g, 0]] with |g| = 1
    0.5 * 0.5 * (h + (h * h + 4.0).sqrt())
}
