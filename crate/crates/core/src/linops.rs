//! Linear-systems primitives: matrix exponential, stability, transfer matrices
//! and (periodic) impulse responses.

use nalgebra::{Complex, DMatrix, Schur};

use crate::error::{Error, Result};
use crate::model::Channel;

/// Condition-number ceiling for `I - exp(AT)` before a period is rejected.
const PERIOD_COND_LIMIT: f64 = 1e13;

/// `exp(M)` by scaling and squaring with a diagonal Padé approximant.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("expm needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("expm argument must be finite".into()));
    }
    let e = m.exp();
    if e.iter().all(|v| v.is_finite()) {
        Ok(e)
    } else {
        Err(Error::ExpOverflow)
    }
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::Dimension("eigenvalues need a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigFail);
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * a.nrows().max(1)).ok_or(Error::EigFail)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Returns whether every eigenvalue has negative real part, and the largest real part.
pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<(bool, f64)> {
    let abscissa = eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok((abscissa < 0.0, abscissa))
}

pub(crate) fn ensure_hurwitz(a: &DMatrix<f64>) -> Result<f64> {
    match is_hurwitz(a)? {
        (true, sigma) => Ok(sigma),
        (false, sigma) => Err(Error::NotHurwitz(sigma)),
    }
}

/// Largest singular value (Euclidean norm for row or column vectors).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 || m.ncols() == 1 {
        m.norm()
    } else {
        m.singular_values().max()
    }
}

/// `G(0) = -C A^{-1} B`.
pub fn dc_transfer(ch: &Channel) -> Result<DMatrix<f64>> {
    ensure_hurwitz(&ch.a)?;
    let x = ch.a.clone().lu().solve(&ch.b).ok_or(Error::NotHurwitz(0.0))?;
    Ok(-(&ch.c * x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub omega: f64,
    pub matrix: DMatrix<Complex<f64>>,
    /// Largest singular value of `matrix`.
    pub norm: f64,
}

/// `G(jw) = C (jwI - A)^{-1} B` and its spectral norm.
pub fn frequency_response(ch: &Channel, omega: f64) -> Result<FrequencyResponse> {
    let n = ch.n();
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    let mut lhs = -to_c(&ch.a);
    for i in 0..n {
        lhs[(i, i)] += Complex::new(0.0, omega);
    }
    let x = lhs
        .lu()
        .solve(&to_c(&ch.b))
        .ok_or_else(|| Error::InvalidArgument(format!("jwI - A is singular at w = {omega}")))?;
    let matrix = to_c(&ch.c) * x;
    let norm = if matrix.nrows() == 1 || matrix.ncols() == 1 { matrix.norm() } else { matrix.singular_values().max() };
    Ok(FrequencyResponse { omega, matrix, norm })
}

/// Matrix-valued samples `H(t_k)` on a uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseGrid {
    pub dt: f64,
    pub samples: Vec<DMatrix<f64>>,
    /// Left limit at the end of the period (`H_T(T-)`), present for periodic responses.
    pub closing: Option<DMatrix<f64>>,
}

impl ImpulseGrid {
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn span(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }
}

/// `H(k dt) = C exp(A k dt) B` for `k = 0..n`, stepping with one propagator.
pub fn impulse_response(ch: &Channel, dt: f64, n: usize) -> Result<ImpulseGrid> {
    if !(dt > 0.0) || n < 2 {
        return Err(Error::InvalidArgument(format!("impulse grid needs dt > 0 and n >= 2 (dt = {dt}, n = {n})")));
    }
    let phi = matrix_exponential(&(&ch.a * dt))?;
    let mut x = ch.b.clone();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(&ch.c * &x);
        x = &phi * x;
    }
    Ok(ImpulseGrid { dt, samples, closing: None })
}

/// `H_T(t_k) = C exp(A t_k) (I - exp(AT))^{-1} B` on `t_k = kT/n`, `k = 0..n`.
pub fn periodic_impulse_response(ch: &Channel, period: f64, n: usize) -> Result<ImpulseGrid> {
    if !(period > 0.0) || !period.is_finite() || n < 2 {
        return Err(Error::InvalidArgument(format!("period grid needs T > 0 and N >= 2 (T = {period}, N = {n})")));
    }
    ensure_hurwitz(&ch.a)?;
    let dim = ch.n();
    let e_period = matrix_exponential(&(&ch.a * period))?;
    let m = DMatrix::identity(dim, dim) - &e_period;
    let inv = m.clone().try_inverse().ok_or(Error::PeriodSingular { period })?;
    // rounding in exp(AT) is of size eps*|exp(AT)|, so compare against that scale too
    let cond = m.lp_norm(1).max(e_period.lp_norm(1)) * inv.lp_norm(1);
    if !cond.is_finite() || cond > PERIOD_COND_LIMIT {
        return Err(Error::PeriodSingular { period });
    }
    let weights = inv * &ch.b;
    let closing = &ch.c * &e_period * &weights;
    let mut grid = impulse_response(&Channel { a: ch.a.clone(), b: weights, c: ch.c.clone() }, period / n as f64, n)?;
    grid.closing = Some(closing);
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lag() -> Channel {
        Channel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    pub(crate) fn pll_a() -> DMatrix<f64> {
        let zeta = std::f64::consts::FRAC_1_SQRT_2;
        let wc = 2.0 * std::f64::consts::PI * 10.0;
        let (kp, ki) = (2.0 * zeta * wc, wc * wc);
        DMatrix::from_row_slice(2, 2, &[-kp, 1.0, -ki, 0.0])
    }

    #[test]
    fn expm_cases() {
        let z = matrix_exponential(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z, DMatrix::identity(3, 3));

        let d = matrix_exponential(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]))).unwrap();
        assert_relative_eq!(d[(0, 0)], (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(d[(1, 1)], (-2.0f64).exp(), max_relative = 1e-12);
        assert_eq!(d[(0, 1)], 0.0);

        let r = matrix_exponential(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        let (s, c) = 1.0f64.sin_cos();
        let want = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        assert!((r - want).abs().max() < 1e-14);
    }

    #[test]
    fn expm_large_norm_matches_eigen_decomposition() {
        // exp of diag(-5, 3) after a similarity transform
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 3.0]);
        let pinv = p.clone().try_inverse().unwrap();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-5.0, 3.0]));
        let m = &p * &d * &pinv;
        let e = matrix_exponential(&m).unwrap();
        let want =
            &p * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![(-5.0f64).exp(), 3.0f64.exp()])) * &pinv;
        assert!(((e - &want).abs().max() / want.abs().max()) < 1e-12);
    }

    #[test]
    fn expm_overflow() {
        let m = DMatrix::from_element(1, 1, 1000.0);
        assert!(matches!(matrix_exponential(&m), Err(Error::ExpOverflow)));
    }

    #[test]
    fn hurwitz_checks() {
        assert_eq!(is_hurwitz(&DMatrix::from_element(1, 1, -1.0)).unwrap(), (true, -1.0));
        let (stable, sigma) = is_hurwitz(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(!stable);
        assert!(sigma.abs() < 1e-12);

        let (stable, sigma) = is_hurwitz(&pll_a()).unwrap();
        assert!(stable);
        let want = -std::f64::consts::FRAC_1_SQRT_2 * 2.0 * std::f64::consts::PI * 10.0;
        assert_relative_eq!(sigma, want, max_relative = 1e-10);
        assert!((sigma + 44.43).abs() < 0.01);
    }

    #[test]
    fn dc_transfer_scalar() {
        assert_relative_eq!(dc_transfer(&lag()).unwrap()[(0, 0)], 1.0);
        let ch = Channel::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert_relative_eq!(dc_transfer(&ch).unwrap()[(0, 0)], 1.5);
    }

    #[test]
    fn dc_transfer_rejects_unstable() {
        let ch = Channel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!(matches!(dc_transfer(&ch), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn frequency_response_first_order_lag() {
        let ch = lag();
        assert_relative_eq!(frequency_response(&ch, 0.0).unwrap().norm, 1.0, max_relative = 1e-15);
        assert_relative_eq!(
            frequency_response(&ch, 1.0).unwrap().norm,
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-14
        );
        let pi = std::f64::consts::PI;
        let g = frequency_response(&ch, pi).unwrap().norm;
        assert_relative_eq!(g, 1.0 / (1.0 + pi * pi).sqrt(), max_relative = 1e-14);
        assert!((g - 0.30331).abs() < 1e-5);
    }

    #[test]
    fn frequency_response_at_zero_is_dc_transfer() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, -4.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 3.0]),
        )
        .unwrap();
        let g0 = dc_transfer(&ch).unwrap();
        let fr = frequency_response(&ch, 0.0).unwrap();
        for (z, r) in fr.matrix.iter().zip(g0.iter()) {
            assert!((z.re - r).abs() < 1e-14 && z.im == 0.0);
        }
        assert_relative_eq!(fr.norm, spectral_norm(&g0), max_relative = 1e-12);
    }

    #[test]
    fn impulse_response_samples() {
        let grid = impulse_response(&lag(), 1.0 / 1024.0, 1025).unwrap();
        assert_eq!(grid.samples[0][(0, 0)], 1.0);
        assert_relative_eq!(grid.samples[1024][(0, 0)], (-1.0f64).exp(), max_relative = 1e-12);

        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, -3.0, -4.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
        )
        .unwrap();
        let grid = impulse_response(&ch, 0.01, 4).unwrap();
        assert_relative_eq!(grid.samples[0][(0, 0)], 2.5);
    }

    #[test]
    fn periodic_impulse_response_closed_form() {
        let grid = periodic_impulse_response(&lag(), 2.0, 4096).unwrap();
        let scale = 1.0 / (1.0 - (-2.0f64).exp());
        assert_relative_eq!(grid.samples[0][(0, 0)], scale, max_relative = 1e-12);
        assert!((grid.samples[0][(0, 0)] - 1.15652).abs() < 1e-5);
        let k = 1234;
        let t = k as f64 * 2.0 / 4096.0;
        assert_relative_eq!(grid.samples[k][(0, 0)], (-t).exp() * scale, max_relative = 1e-11);
        // the jump across the period boundary is C B
        let closing = grid.closing.unwrap()[(0, 0)];
        assert_relative_eq!(grid.samples[0][(0, 0)] - closing, 1.0, max_relative = 1e-12);

        let long = periodic_impulse_response(&lag(), 60.0, 16).unwrap();
        assert!((long.samples[0][(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_response_integrates_to_dc_gain() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-0.5, 2.0, -3.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
        )
        .unwrap();
        for (ch, period) in [(lag(), 2.0), (ch.clone(), 0.7), (ch, 5.0)] {
            let grid = periodic_impulse_response(&ch, period, 4096).unwrap();
            // trapezoid on [0, T] using the left limit at T
            let h = |k: usize| grid.samples[k][(0, 0)];
            let closing = grid.closing.as_ref().unwrap()[(0, 0)];
            let interior: f64 = (1..grid.len()).map(h).sum();
            let integral = grid.dt * (interior + 0.5 * (h(0) + closing));
            let g0 = dc_transfer(&ch).unwrap()[(0, 0)];
            assert!((integral - g0).abs() < 1e-6, "T = {period}: {integral} vs {g0}");
        }
    }

    #[test]
    fn periodic_response_matches_truncated_sum() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.0, -0.3]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let period = 3.0;
        let n = 8;
        let periodic = periodic_impulse_response(&ch, period, n).unwrap();
        let e_t = matrix_exponential(&(&ch.a * period)).unwrap();
        // terms needed for |exp(AT)|^K < 1e-10
        let k_max = ((1e-10f64).ln() / spectral_norm(&e_t).ln()).ceil() as usize + 1;
        for k in 0..n {
            let t = k as f64 * period / n as f64;
            let mut sum = 0.0;
            for j in 0..=k_max {
                let e = matrix_exponential(&(&ch.a * (t + j as f64 * period))).unwrap();
                sum += (&ch.c * e * &ch.b)[(0, 0)];
            }
            let got = periodic.samples[k][(0, 0)];
            assert!((got - sum).abs() <= 1e-8 * sum.abs().max(1e-3), "k = {k}: {got} vs {sum}");
        }
    }

    #[test]
    fn periodic_response_rejects_marginal_systems() {
        let ch = Channel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(periodic_impulse_response(&ch, 1.0, 16), Err(Error::NotHurwitz(_))));
        let leaky = Channel::new(
            DMatrix::from_element(1, 1, -1e-15),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert!(matches!(periodic_impulse_response(&leaky, 1.0, 16), Err(Error::PeriodSingular { .. })));
    }
}
