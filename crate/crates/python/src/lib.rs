//! Python bindings for pagkit.
//!
//! Matrices cross the boundary as lists of rows and sampled signals as lists
//! of per-sample vectors.

use pagkit::gains::{self, GainOptions, PagEvaluator};
use pagkit::pll::{self, PllParams};
use pagkit::sim::{self, PssOptions};
use pagkit::{Composition, InputMap, Nonlinearity, OutputMap, RhoVector, SampledSignal, Structure};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: pagkit::Error) -> PyErr {
    match e {
        pagkit::Error::SupFail { .. } | pagkit::Error::Diverged { .. } | pagkit::Error::NoPss { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rho(dc: f64, ac: f64) -> PyResult<RhoVector> {
    RhoVector::new(dc, ac).map_err(to_py)
}

fn signal(period: f64, samples: Vec<Vec<f64>>) -> PyResult<SampledSignal> {
    let dim = samples.first().map_or(0, Vec::len);
    if samples.iter().any(|s| s.len() != dim) {
        return Err(PyValueError::new_err("all samples must have the same length"));
    }
    SampledSignal::new(period, dim, samples.concat()).map_err(to_py)
}

type Samples = Vec<Vec<f64>>;

fn rows(s: &SampledSignal) -> Samples {
    s.samples().map(<[f64]>::to_vec).collect()
}

/// Linear part `x' = A x + B u + F f`, `y = C x`.
#[pyclass(name = "StateSpace", frozen)]
struct PyStateSpace {
    inner: pagkit::StateSpace,
}

#[pymethods]
impl PyStateSpace {
    #[new]
    #[pyo3(signature = (a, b, c, f=None))]
    fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>>, f: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let inner = pagkit::StateSpace::from_rows(&a, &b, &c, f.as_deref()).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    /// Spectral abscissa; raises if `A` is not Hurwitz.
    fn ensure_hurwitz(&self) -> PyResult<f64> {
        self.inner.ensure_hurwitz().map_err(to_py)
    }

    fn dc_gain(&self) -> PyResult<f64> {
        let g = pagkit::linops::dc_transfer(&self.io()).map_err(to_py)?;
        Ok(pagkit::linops::spectral_norm(&g))
    }

    fn frequency_response_norm(&self, omega: f64) -> PyResult<f64> {
        Ok(pagkit::linops::frequency_response(&self.io(), omega).map_err(to_py)?.norm)
    }

    /// Slope of the classical asymptotic gain from `u` to `y`.
    fn classical_ag_slope(&self) -> PyResult<f64> {
        gains::classical_ag_slope(&self.io()).map_err(to_py)
    }

    #[pyo3(signature = (period, n=pagkit::DEFAULT_GRID_N, seed=0))]
    fn linear_pag(&self, period: f64, n: usize, seed: u64) -> PyResult<LinearPag> {
        let opts = GainOptions { n, seed, ..GainOptions::default() };
        Ok(LinearPag { inner: gains::linear_pag(&self.io(), period, &opts).map_err(to_py)? })
    }

    #[pyo3(signature = (period, n=pagkit::DEFAULT_GRID_N))]
    fn linear_pag_conservative(&self, period: f64, n: usize) -> PyResult<f64> {
        gains::linear_pag_conservative(&self.io(), period, n).map_err(to_py)
    }

    /// Output-direction maximizer of the AC gain.
    #[pyo3(signature = (period, n=pagkit::DEFAULT_GRID_N))]
    fn worst_direction(&self, period: f64, n: usize) -> PyResult<Vec<f64>> {
        gains::worst_direction(&self.io(), period, &GainOptions::with_n(n)).map_err(to_py)
    }

    /// Input of period `period` attaining the AC gain at amplitude `cap`.
    #[pyo3(signature = (period, cap, n=pagkit::DEFAULT_GRID_N))]
    fn bangbang_input(&self, period: f64, cap: f64, n: usize) -> PyResult<Vec<Vec<f64>>> {
        let ch = self.io();
        let v = gains::worst_direction(&ch, period, &GainOptions::with_n(n)).map_err(to_py)?;
        Ok(rows(&sim::bangbang_worst_input(&ch, period, n, &v, cap).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("StateSpace(n={}, m={}, p={}, q={})", self.inner.n(), self.inner.m(), self.inner.p(), self.inner.q())
    }
}

impl PyStateSpace {
    fn io(&self) -> pagkit::Channel {
        self.inner.channel(InputMap::Input, OutputMap::Output)
    }
}

#[pyclass(frozen)]
struct LinearPag {
    inner: gains::LinearPag,
}

#[pymethods]
impl LinearPag {
    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    #[getter]
    fn gamma_dc(&self) -> f64 {
        self.inner.gamma_dc
    }

    #[getter]
    fn gamma_ac(&self) -> f64 {
        self.inner.gamma_ac
    }

    #[getter]
    fn ac_certified(&self) -> bool {
        self.inner.ac_certified
    }

    fn apply(&self, dc: f64, ac: f64) -> PyResult<(f64, f64)> {
        let r = self.inner.apply(rho(dc, ac)?);
        Ok((r.dc, r.ac))
    }

    fn __repr__(&self) -> String {
        format!(
            "LinearPag(period={}, gamma_dc={}, gamma_ac={})",
            self.inner.period, self.inner.gamma_dc, self.inner.gamma_ac
        )
    }
}

#[pyclass(name = "NonlinearSystem", frozen)]
struct PyNonlinearSystem {
    inner: pagkit::NonlinearSystem,
}

#[pymethods]
impl PyNonlinearSystem {
    /// `structure` is `"general"` or `"output_lurie"`.
    #[new]
    #[pyo3(signature = (linear, nonlinearity="none", params=Vec::new(), m_f=0.0, m_g=0.0, structure="general", u_max=f64::INFINITY))]
    fn new(
        linear: PyRef<'_, PyStateSpace>,
        nonlinearity: &str,
        params: Vec<f64>,
        m_f: f64,
        m_g: f64,
        structure: &str,
        u_max: f64,
    ) -> PyResult<Self> {
        let structure = match structure {
            "general" => Structure::General,
            "output_lurie" => Structure::OutputLurie,
            other => return Err(PyValueError::new_err(format!("unknown structure {other:?}"))),
        };
        let nl = Nonlinearity::from_name(nonlinearity, &params).map_err(to_py)?;
        let inner =
            pagkit::NonlinearSystem::new(linear.inner.clone(), nl, m_f, m_g, structure, u_max).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Phase-locked loop with PI loop filter.
    #[staticmethod]
    #[pyo3(signature = (m_f, u_max, zeta=std::f64::consts::FRAC_1_SQRT_2, omega_c=std::f64::consts::TAU * 10.0))]
    fn pll(m_f: f64, u_max: f64, zeta: f64, omega_c: f64) -> PyResult<Self> {
        let params = PllParams::new(zeta, omega_c).map_err(to_py)?;
        Ok(Self { inner: pll::pll_system(&params, m_f, u_max).map_err(to_py)? })
    }

    #[getter]
    fn m_f(&self) -> f64 {
        self.inner.m_f
    }

    #[getter]
    fn m_g(&self) -> f64 {
        self.inner.m_g
    }

    #[getter]
    fn structure(&self) -> &'static str {
        match self.inner.structure {
            Structure::General => "general",
            Structure::OutputLurie => "output_lurie",
        }
    }

    /// Conservative nonlinear PAG at input magnitudes `(dc, ac)` given the
    /// invariant-set bound `b`.
    #[pyo3(signature = (period, b, dc, ac, n=pagkit::DEFAULT_GRID_N))]
    fn nonlinear_pag(&self, period: f64, b: f64, dc: f64, ac: f64, n: usize) -> PyResult<NonlinearPagResult> {
        let ev = PagEvaluator::for_system(&self.inner, period, &GainOptions::with_n(n)).map_err(to_py)?;
        Ok(NonlinearPagResult { inner: ev.evaluate(b, rho(dc, ac)?).map_err(to_py)? })
    }

    /// Average slope of the nonlinear PAG at `level` for `"pure_ac"`, `"split"` or `"pure_dc"`.
    #[pyo3(signature = (period, b, level, composition, n=pagkit::DEFAULT_GRID_N))]
    fn mu(&self, period: f64, b: f64, level: f64, composition: &str, n: usize) -> PyResult<f64> {
        let comp = Composition::from_name(composition).map_err(to_py)?;
        let ev = PagEvaluator::for_system(&self.inner, period, &GainOptions::with_n(n)).map_err(to_py)?;
        gains::mu_slope(|r| ev.evaluate(b, r).map(|x| x.bound()), level, comp).map_err(to_py)
    }

    /// Periodic steady state for one period of `input` (a list of input
    /// vectors on a uniform grid). Returns `(states, outputs)`.
    #[pyo3(signature = (input, period, x0=None, tol=1e-10, max_periods=20_000))]
    fn periodic_steady_state(
        &self,
        py: Python<'_>,
        input: Vec<Vec<f64>>,
        period: f64,
        x0: Option<Vec<f64>>,
        tol: f64,
        max_periods: usize,
    ) -> PyResult<(Samples, Samples)> {
        let u = signal(period, input)?;
        let x0 = x0.unwrap_or_else(|| vec![0.0; self.inner.linear.n()]);
        let opts = PssOptions { tol, max_periods };
        let pss = py.detach(|| sim::periodic_steady_state(&self.inner, &u, &x0, &opts)).map_err(to_py)?;
        Ok((rows(&pss.states), rows(&pss.outputs)))
    }
}

#[pyclass(frozen)]
struct NonlinearPagResult {
    inner: gains::NonlinearPagResult,
}

#[pymethods]
impl NonlinearPagResult {
    #[getter]
    fn eta_dc(&self) -> f64 {
        self.inner.eta_dc
    }

    #[getter]
    fn eta_ac(&self) -> f64 {
        self.inner.eta_ac
    }

    #[getter]
    fn xi_dc(&self) -> Option<f64> {
        self.inner.xi_dc
    }

    #[getter]
    fn xi_ac(&self) -> Option<f64> {
        self.inner.xi_ac
    }

    #[getter]
    fn branch_dc(&self) -> &'static str {
        self.inner.branch_dc.name()
    }

    #[getter]
    fn branch_ac(&self) -> &'static str {
        self.inner.branch_ac.name()
    }

    fn __repr__(&self) -> String {
        format!("NonlinearPagResult(eta_dc={}, eta_ac={})", self.inner.eta_dc, self.inner.eta_ac)
    }
}

/// `(|mean|, max |u - mean|)` of a sampled period.
#[pyfunction]
fn rho_of(samples: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    // the period does not enter the magnitudes
    let r = pagkit::rho_of(&signal(1.0, samples)?);
    Ok((r.dc, r.ac))
}

/// Largest `xi` in `[0, cap]` reachable from 0 with `a xi^2 - xi + c >= 0`.
#[pyfunction]
fn quad_resolve(a: f64, c: f64, cap: f64) -> (f64, &'static str) {
    let (xi, branch) = gains::quad_resolve(a, c, cap);
    (xi, branch.name())
}

/// Quadratic remainder constant of the PLL nonlinearity over `|y| <= y_max`, `|u| <= u_max`.
#[pyfunction]
fn estimate_mf(y_max: f64, u_max: f64) -> PyResult<f64> {
    pll::estimate_mf(y_max, u_max).map_err(to_py)
}

#[pymodule]
fn pagkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DEFAULT_GRID_N", pagkit::DEFAULT_GRID_N)?;
    m.add_class::<PyStateSpace>()?;
    m.add_class::<LinearPag>()?;
    m.add_class::<PyNonlinearSystem>()?;
    m.add_class::<NonlinearPagResult>()?;
    m.add_function(wrap_pyfunction!(rho_of, m)?)?;
    m.add_function(wrap_pyfunction!(quad_resolve, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mf, m)?)?;
    Ok(())
}
