//! Core value types: state-space systems, the nonlinearity registry, sampled
//! periodic signals and their AC/DC magnitudes.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which input matrix drives a linear channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputMap {
    /// The external input matrix `B`.
    Input,
    /// The nonlinearity injection matrix `F`.
    Nonlinearity,
}

/// Which output map a linear channel observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputMap {
    /// The output matrix `C`.
    Output,
    /// The full state (`C` replaced by the identity).
    State,
}

/// Linear part `(A, B, C, F)` of `x' = Ax + Bu + F f(.)`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    f: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, f: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xm with m > 0, got {}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be px{n} with p > 0, got {}x{}", c.nrows(), c.ncols())));
        }
        if f.nrows() != n || f.ncols() == 0 {
            return Err(Error::Dimension(format!("F must be {n}xq with q > 0, got {}x{}", f.nrows(), f.ncols())));
        }
        let all_finite = [&a, &b, &c, &f].iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidArgument("state-space matrices must be finite".into()));
        }
        Ok(Self { a, b, c, f })
    }

    /// A purely linear system; `F` is a single zero column.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, c, DMatrix::zeros(n, 1))
    }

    /// Builds a system from row-major nested vectors.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>], f: Option<&[Vec<f64>]>) -> Result<Self> {
        let a = matrix_from_rows(a)?;
        let b = matrix_from_rows(b)?;
        let c = matrix_from_rows(c)?;
        match f {
            Some(f) => Self::new(a, b, c, matrix_from_rows(f)?),
            None => Self::linear(a, b, c),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    /// Nonlinearity dimension.
    pub fn q(&self) -> usize {
        self.f.ncols()
    }

    pub fn input_matrix(&self, map: InputMap) -> &DMatrix<f64> {
        match map {
            InputMap::Input => &self.b,
            InputMap::Nonlinearity => &self.f,
        }
    }

    /// The LTI triple seen from `input` to `output`.
    pub fn channel(&self, input: InputMap, output: OutputMap) -> Channel {
        let c = match output {
            OutputMap::Output => self.c.clone(),
            OutputMap::State => DMatrix::identity(self.n(), self.n()),
        };
        Channel { a: self.a.clone(), b: self.input_matrix(input).clone(), c }
    }

    /// Returns the spectral abscissa, or `NotHurwitz` if it is not negative.
    pub fn ensure_hurwitz(&self) -> Result<f64> {
        let (stable, abscissa) = crate::linops::is_hurwitz(&self.a)?;
        if stable {
            Ok(abscissa)
        } else {
            Err(Error::NotHurwitz(abscissa))
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Dimension("matrix must have at least one row and column".into()));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// A single linear input-output channel `x' = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Channel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let ss = StateSpace::linear(a, b, c)?;
        Ok(ss.channel(InputMap::Input, OutputMap::Output))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// How the nonlinearity enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// `x' = Ax + Bu + F f(x, u)`.
    General,
    /// `x' = Ax + Bu + F f(Cx, u)`, `y = Cx`.
    OutputLurie,
}

/// Built-in nonlinearities. All vanish with their first derivatives at the origin.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    None,
    /// `f(y, u) = y - sin y + u . [cos y - 1, sin y]` (scalar `y`, `u` in R^2).
    Pll,
    /// `f(z, u) = gain * z_0^2`; its quadratic remainder constant is exactly `|gain|`.
    Quadratic {
        gain: f64,
    },
}

impl Nonlinearity {
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        match (name, params) {
            ("none", []) => Ok(Self::None),
            ("pll", []) => Ok(Self::Pll),
            ("quadratic", [gain]) if gain.is_finite() => Ok(Self::Quadratic { gain: *gain }),
            _ => {
                Err(Error::InvalidArgument(format!("unknown nonlinearity {name:?} with {} parameter(s)", params.len())))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Pll => "pll",
            Self::Quadratic { .. } => "quadratic",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Quadratic { gain } => vec![*gain],
            _ => Vec::new(),
        }
    }

    /// Writes `f(arg, u)` into `out`.
    pub fn eval(&self, arg: &[f64], u: &[f64], out: &mut [f64]) {
        match self {
            Self::None => out.fill(0.0),
            Self::Pll => {
                let y = arg[0];
                let (s, c) = y.sin_cos();
                out[0] = y - s + u[0] * (c - 1.0) + u[1] * s;
            }
            Self::Quadratic { gain } => {
                out.fill(0.0);
                out[0] = gain * arg[0] * arg[0];
            }
        }
    }

    /// Jacobian of `f` with respect to its first argument (`q x arg.len()`).
    pub fn jacobian_arg(&self, arg: &[f64], u: &[f64], q: usize) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(q, arg.len());
        match self {
            Self::None => {}
            Self::Pll => {
                let (s, c) = arg[0].sin_cos();
                jac[(0, 0)] = 1.0 - c - u[0] * s + u[1] * c;
            }
            Self::Quadratic { gain } => jac[(0, 0)] = 2.0 * gain * arg[0],
        }
        jac
    }

    fn check_dims(&self, arg_dim: usize, m: usize, q: usize) -> Result<()> {
        let ok = match self {
            Self::None => true,
            Self::Pll => arg_dim == 1 && m == 2 && q == 1,
            Self::Quadratic { .. } => arg_dim >= 1 && q == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "nonlinearity {} incompatible with argument dim {arg_dim}, input dim {m}, q = {q}",
                self.name()
            )))
        }
    }
}

/// A Lurie-type system: linear part, registered nonlinearity and its quadratic bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSystem {
    pub linear: StateSpace,
    pub nonlinearity: Nonlinearity,
    pub m_f: f64,
    pub m_g: f64,
    pub structure: Structure,
    pub u_max: f64,
}

impl NonlinearSystem {
    pub fn new(
        linear: StateSpace,
        nonlinearity: Nonlinearity,
        m_f: f64,
        m_g: f64,
        structure: Structure,
        u_max: f64,
    ) -> Result<Self> {
        if !(m_f >= 0.0 && m_g >= 0.0) || m_f.is_infinite() || m_g.is_infinite() {
            return Err(Error::InvalidArgument(format!("M_f = {m_f}, M_g = {m_g} must be finite and nonnegative")));
        }
        if !(u_max > 0.0) {
            return Err(Error::InvalidArgument(format!("u_max = {u_max} must be positive")));
        }
        if nonlinearity == Nonlinearity::None && (m_f != 0.0 || m_g != 0.0) {
            return Err(Error::InvalidArgument("nonlinearity \"none\" requires M_f = M_g = 0".into()));
        }
        if structure == Structure::OutputLurie && m_g != 0.0 {
            return Err(Error::StructureMismatch("output-Lurie systems have g = 0, so M_g must be 0".into()));
        }
        let arg_dim = match structure {
            Structure::General => linear.n(),
            Structure::OutputLurie => linear.p(),
        };
        nonlinearity.check_dims(arg_dim, linear.m(), linear.q())?;
        Ok(Self { linear, nonlinearity, m_f, m_g, structure, u_max })
    }

    /// Wraps a linear system with the `none` nonlinearity.
    pub fn linear_only(linear: StateSpace) -> Self {
        Self {
            linear,
            nonlinearity: Nonlinearity::None,
            m_f: 0.0,
            m_g: 0.0,
            structure: Structure::General,
            u_max: f64::INFINITY,
        }
    }

    pub fn with_m_f(mut self, m_f: f64) -> Self {
        self.m_f = m_f;
        self
    }

    pub fn with_m_g(mut self, m_g: f64) -> Self {
        self.m_g = m_g;
        self
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity == Nonlinearity::None
    }

    /// Evaluates `x' = Ax + Bu + F f(.)` into `dx`.
    pub fn vector_field(&self, x: &[f64], u: &[f64], dx: &mut [f64], scratch: &mut Scratch) {
        let ss = &self.linear;
        let n = ss.n();
        for (i, d) in dx.iter_mut().enumerate().take(n) {
            let ax: f64 = x.iter().enumerate().map(|(j, xj)| ss.a[(i, j)] * xj).sum();
            let bu: f64 = u.iter().enumerate().map(|(j, uj)| ss.b[(i, j)] * uj).sum();
            *d = ax + bu;
        }
        if self.is_linear() {
            return;
        }
        let arg: &[f64] = match self.structure {
            Structure::General => x,
            Structure::OutputLurie => {
                self.output_into(x, &mut scratch.y);
                &scratch.y
            }
        };
        self.nonlinearity.eval(arg, u, &mut scratch.f);
        for (i, d) in dx.iter_mut().enumerate().take(n) {
            *d += scratch.f.iter().enumerate().map(|(j, fj)| ss.f[(i, j)] * fj).sum::<f64>();
        }
    }

    /// `y = Cx` (built-in systems have `g = 0`).
    pub fn output_into(&self, x: &[f64], y: &mut [f64]) {
        let c = &self.linear.c;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..c.ncols()).map(|j| c[(i, j)] * x[j]).sum();
        }
    }

    /// Jacobian `A + F df/dx` at `(x, u)`.
    pub fn state_jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let ss = &self.linear;
        match self.structure {
            Structure::General => {
                let jf = self.nonlinearity.jacobian_arg(x, u, ss.q());
                &ss.a + &ss.f * jf
            }
            Structure::OutputLurie => {
                let mut y = vec![0.0; ss.p()];
                self.output_into(x, &mut y);
                let jf = self.nonlinearity.jacobian_arg(&y, u, ss.q());
                &ss.a + &ss.f * jf * &ss.c
            }
        }
    }

    pub fn scratch(&self) -> Scratch {
        Scratch { y: vec![0.0; self.linear.p()], f: vec![0.0; self.linear.q()] }
    }
}

/// Reusable buffers for vector-field evaluation.
#[derive(Debug, Clone)]
pub struct Scratch {
    y: Vec<f64>,
    f: Vec<f64>,
}

/// A `T`-periodic vector signal sampled at `t_k = kT/N`, `k = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    period: f64,
    dim: usize,
    values: Vec<f64>,
}

impl SampledSignal {
    /// `values` is row-major: sample `k` occupies `values[k*dim..(k+1)*dim]`.
    pub fn new(period: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidArgument(format!("period {period} must be positive")));
        }
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} values do not split into samples of dim {dim}", values.len())));
        }
        if values.len() / dim < 2 {
            return Err(Error::InvalidArgument("a sampled signal needs at least 2 samples".into()));
        }
        Ok(Self { period, dim, values })
    }

    pub fn from_fn(period: f64, n: usize, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let dt = period / n as f64;
        let mut values = vec![0.0; n * dim];
        for (k, chunk) in values.chunks_exact_mut(dim.max(1)).enumerate() {
            f(k as f64 * dt, chunk);
        }
        Self::new(period, dim, values)
    }

    pub fn constant(period: f64, n: usize, value: &[f64]) -> Result<Self> {
        Self::from_fn(period, n, value.len(), |_, out| out.copy_from_slice(value))
    }

    pub fn period(&self) -> f64 {
        self.period
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Number of samples per period.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn dt(&self) -> f64 {
        self.period / self.len() as f64
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sample `k`, wrapping modulo `N`.
    pub fn sample(&self, k: usize) -> &[f64] {
        let k = k % self.len();
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for s in self.samples() {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Largest sample norm on the grid.
    pub fn sup_norm(&self) -> f64 {
        self.samples().map(norm).fold(0.0, f64::max)
    }

    /// The same signal viewed as `k*T`-periodic.
    pub fn tile(&self, k: usize) -> Self {
        let mut values = Vec::with_capacity(self.values.len() * k);
        for _ in 0..k {
            values.extend_from_slice(&self.values);
        }
        Self { period: self.period * k as f64, dim: self.dim, values }
    }

    /// Cyclic shift: sample `k` of the result is sample `k + shift` of `self`.
    pub fn rotate(&self, shift: usize) -> Self {
        let mut values = self.values.clone();
        values.rotate_left((shift % self.len()) * self.dim);
        Self { values, ..self.clone() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect(), ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(Error::Dimension("signals must share grid and dimension".into()));
        }
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(), ..self.clone() })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Splits `s` into its period mean and the zero-mean remainder.
pub fn acdc_decompose(s: &SampledSignal) -> (Vec<f64>, SampledSignal) {
    let dc = s.mean();
    let mut values = s.values.clone();
    for chunk in values.chunks_exact_mut(s.dim) {
        for (v, m) in chunk.iter_mut().zip(&dc) {
            *v -= m;
        }
    }
    let ac = SampledSignal { period: s.period, dim: s.dim, values };
    (dc, ac)
}

/// `(|f_dc|, |f_ac|_inf)` of a periodic sampled signal.
pub fn rho_of(s: &SampledSignal) -> RhoVector {
    let dc = s.mean();
    let ac =
        s.samples().map(|x| x.iter().zip(&dc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()).fold(0.0, f64::max);
    RhoVector { dc: norm(&dc), ac }
}

/// DC magnitude and AC sup-magnitude of a periodic signal, or a bound on them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RhoVector {
    pub dc: f64,
    pub ac: f64,
}

impl RhoVector {
    pub fn new(dc: f64, ac: f64) -> Result<Self> {
        if !(dc >= 0.0 && ac >= 0.0) {
            return Err(Error::InvalidArgument(format!("rho components ({dc}, {ac}) must be nonnegative")));
        }
        Ok(Self { dc, ac })
    }

    pub fn one_norm(&self) -> f64 {
        self.dc + self.ac
    }

    /// Euclidean norm of the 2-vector.
    pub fn norm(&self) -> f64 {
        self.dc.hypot(self.ac)
    }

    /// Componentwise `self <= other`.
    pub fn preceq(&self, other: &RhoVector) -> bool {
        self.dc <= other.dc && self.ac <= other.ac
    }
}

impl fmt::Display for RhoVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(dc {:.6e}, ac {:.6e})", self.dc, self.ac)
    }
}

/// AC/DC composition of an `l`-bounded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Composition {
    PureAc,
    Split,
    PureDc,
}

impl Composition {
    pub const ALL: [Composition; 3] = [Composition::PureAc, Composition::Split, Composition::PureDc];

    /// The input magnitudes `rho` this composition allows at level `l`.
    pub fn caps(self, level: f64) -> RhoVector {
        match self {
            Self::PureAc => RhoVector { dc: 0.0, ac: level },
            Self::Split => RhoVector { dc: level / 2.0, ac: level / 2.0 },
            Self::PureDc => RhoVector { dc: level, ac: 0.0 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PureAc => "pure_ac",
            Self::Split => "split",
            Self::PureDc => "pure_dc",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pure_ac" => Ok(Self::PureAc),
            "split" => Ok(Self::Split),
            "pure_dc" => Ok(Self::PureDc),
            other => Err(Error::InvalidArgument(format!("unknown composition {other:?}"))),
        }
    }
}

/// One period's worth of gain data.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub period: f64,
    pub gamma_dc: f64,
    pub gamma_ac_exact: f64,
    pub gamma_ac_conservative: f64,
    pub ag_slope: f64,
    pub freq_resp_norm: f64,
    pub eta_dc: Option<f64>,
    pub eta_ac: Option<f64>,
    pub mu: Option<f64>,
}

/// Gain data over a grid of periods, sorted by strictly increasing period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainCurve {
    rows: Vec<GainRow>,
}

impl GainCurve {
    pub fn from_rows(mut rows: Vec<GainRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.period.total_cmp(&b.period));
        if rows.windows(2).any(|w| w[0].period >= w[1].period) {
            return Err(Error::InvalidArgument("gain curve periods must be distinct".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[GainRow] {
        &self.rows
    }
}
