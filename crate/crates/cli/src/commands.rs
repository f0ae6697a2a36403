//! The four subcommands. Work is spread over the rayon pool; results are
//! collected in task order so output bytes do not depend on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pagkit::gains::{
    classical_ag_slope, linear_pag, linear_pag_conservative, mu_slope, sharpness_compare, worst_direction, GainOptions,
    PagEvaluator, Verdict,
};
use pagkit::linops::{dc_transfer, frequency_response, spectral_norm};
use pagkit::sim::{
    bangbang_worst_input, derive_seed, estimate_b, periodic_steady_state, random_harmonic_input, BEstimateOptions,
    PssOptions,
};
use pagkit::{rho_of, GainCurve, GainRow, InputMap, OutputMap, RhoVector, SampledSignal, Structure};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Prepared, RunConfig};
use crate::error::CliError;
use crate::output::{json_with_meta, num, write, Meta};

/// Safety factor applied by `estimate-b`.
pub const B_SAFETY: f64 = 1.5;

pub struct Context {
    pub config: RunConfig,
    pub prepared: Prepared,
    pub out: PathBuf,
    pub meta: Meta,
}

impl Context {
    fn gain_options(&self) -> GainOptions {
        GainOptions { n: self.config.n, seed: self.config.seed, ..GainOptions::default() }
    }
}

pub fn linpag(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let sys = &ctx.prepared.system;
    sys.linear.ensure_hurwitz()?;
    let ch = sys.linear.channel(InputMap::Input, OutputMap::Output);
    let ag = classical_ag_slope(&ch)?;
    let opts = ctx.gain_options();
    let rows = ctx
        .prepared
        .periods
        .par_iter()
        .map(|&period| {
            let pag = linear_pag(&ch, period, &opts)?;
            Ok((
                GainRow {
                    period,
                    gamma_dc: pag.gamma_dc,
                    gamma_ac_exact: pag.gamma_ac,
                    gamma_ac_conservative: linear_pag_conservative(&ch, period, opts.n)?,
                    ag_slope: ag,
                    freq_resp_norm: frequency_response(&ch, std::f64::consts::TAU / period)?.norm,
                    eta_dc: None,
                    eta_ac: None,
                    mu: None,
                },
                pag.ac_certified,
            ))
        })
        .collect::<Result<Vec<_>, pagkit::Error>>()?;
    let certified = rows.iter().all(|r| r.1);
    let curve = GainCurve::from_rows(rows.into_iter().map(|r| r.0).collect())?;
    let mut csv = ctx.meta.header();
    if !certified {
        csv.push_str("# gamma_ac_exact comes from a multistart search over output directions (lower estimate)\n");
    }
    csv.push_str("T,omega,gamma_dc,gamma_ac_exact,gamma_ac_conservative,ag_slope,freq_resp_norm\n");
    for r in curve.rows() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            num(r.period),
            num(std::f64::consts::TAU / r.period),
            num(r.gamma_dc),
            num(r.gamma_ac_exact),
            num(r.gamma_ac_conservative),
            num(r.ag_slope),
            num(r.freq_resp_norm)
        );
    }
    Ok(vec![write(&ctx.out, "linpag.csv", &csv)?])
}

/// Per-level `b` and `M_f`, resolved before any heavy work.
fn level_constants(p: &Prepared) -> Result<Vec<(f64, f64, f64)>, CliError> {
    p.levels
        .iter()
        .map(|&level| {
            let b = p.b_for(level)?;
            Ok((level, b, p.m_f_for(level, b)?))
        })
        .collect()
}

fn evaluators(ctx: &Context) -> Result<Vec<PagEvaluator>, CliError> {
    let sys = &ctx.prepared.system;
    let opts = ctx.gain_options();
    Ok(ctx
        .prepared
        .periods
        .par_iter()
        .map(|&period| PagEvaluator::for_system(sys, period, &opts))
        .collect::<Result<Vec<_>, _>>()?)
}

fn mf_comment_lines(constants: &[(f64, f64, f64)]) -> String {
    let mut s = String::new();
    for &(level, b, m_f) in constants {
        let _ = writeln!(s, "# M_f level={} y_max={} M_f={}", num(level), num(b), num(m_f));
    }
    s
}

pub fn nlpag(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let constants = level_constants(&ctx.prepared)?;
    let evals = evaluators(ctx)?;
    let mut csv = ctx.meta.header();
    csv.push_str(&mf_comment_lines(&constants));
    csv.push_str("T,level,composition,eta_dc,eta_ac,mu,branch_dc,branch_ac,b,M_f\n");
    for (period, base) in ctx.prepared.periods.iter().zip(&evals) {
        for &(level, b, m_f) in &constants {
            let ev = PagEvaluator { m_f, ..base.clone() };
            for &comp in &ctx.prepared.compositions {
                let r = ev.evaluate(b, comp.caps(level))?;
                let mu = mu_slope(|rho| ev.evaluate(b, rho).map(|r| r.bound()), level, comp)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{}",
                    num(*period),
                    num(level),
                    comp.name(),
                    num(r.eta_dc),
                    num(r.eta_ac),
                    num(mu),
                    r.branch_dc.name(),
                    r.branch_ac.name(),
                    num(b),
                    num(m_f)
                );
            }
        }
    }
    Ok(vec![write(&ctx.out, "nlpag.csv", &csv)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrialKind {
    Random,
    BangBang,
}

struct Task {
    period_idx: usize,
    level_idx: usize,
    comp_idx: usize,
    trial: usize,
    kind: TrialKind,
}

struct TrialResult {
    rho_u: RhoVector,
    outcome: Result<TrialMeasure, String>,
}

struct TrialMeasure {
    rho_y: RhoVector,
    bound: RhoVector,
    ag_bound: f64,
    /// Comparison slack per component.
    slack: RhoVector,
    verdict: Verdict,
    violation: bool,
    waveform: String,
}

/// Slack for comparing measured magnitudes with bounds: the `O(dt^2)` error
/// of the gain quadrature, the undecayed transient of the recorded period
/// mapped to the output, and rounding.
fn slack(bound: f64, transient: f64, scale: f64) -> f64 {
    1e-6 * bound + 2.0 * transient + 1e-12 * (1.0 + scale)
}

#[derive(Serialize, Default)]
struct Counts {
    trials: usize,
    failed: usize,
    violations: usize,
    pag_sharper: usize,
    ag_sharper: usize,
    tie: usize,
}

impl Counts {
    fn add(&mut self, r: &TrialResult) {
        self.trials += 1;
        match &r.outcome {
            Err(_) => self.failed += 1,
            Ok(m) => {
                self.violations += m.violation as usize;
                match m.verdict {
                    Verdict::PagSharper => self.pag_sharper += 1,
                    Verdict::AgSharper => self.ag_sharper += 1,
                    Verdict::Tie => self.tie += 1,
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ConfigSummary {
    #[serde(rename = "T")]
    period: f64,
    level: f64,
    composition: &'static str,
    b: Option<f64>,
    #[serde(rename = "M_f")]
    m_f: f64,
    #[serde(flatten)]
    counts: Counts,
    /// Largest measured/bound ratio over the successful trials, with the
    /// comparison slack added to the bound.
    max_ratio_dc: f64,
    max_ratio_ac: f64,
    bangbang_ratio_ac: Option<f64>,
}

#[derive(Serialize)]
struct ValidateSummary {
    #[serde(flatten)]
    totals: Counts,
    configs: Vec<ConfigSummary>,
}

pub fn validate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let p = &ctx.prepared;
    let cfg = &ctx.config;
    let constants = level_constants(p)?;
    let evals = evaluators(ctx)?;
    let sys = &p.system;
    let ch = sys.linear.channel(InputMap::Input, OutputMap::Output);
    let opts = ctx.gain_options();
    let m = sys.linear.m();

    // worst AC direction per period and the DC direction of largest static gain
    let directions =
        p.periods.par_iter().map(|&period| worst_direction(&ch, period, &opts)).collect::<Result<Vec<_>, _>>()?;
    let g0 = dc_transfer(&ch)?;
    let dc_dir: Vec<f64> = {
        let svd = g0.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let idx = svd.singular_values.imax();
        v_t.row(idx).iter().copied().collect()
    };
    let ag_slope = if sys.is_linear() { Some(classical_ag_slope(&ch)?) } else { None };
    let c_norm = spectral_norm(sys.linear.c());
    let ag_bound = |level_sum: f64| -> f64 {
        match (ag_slope, sys.structure) {
            (Some(slope), _) => slope * level_sum,
            (None, Structure::OutputLurie) => {
                p.b_table.as_ref().and_then(|t| t.lookup(level_sum)).unwrap_or(f64::INFINITY)
            }
            (None, Structure::General) => {
                c_norm * p.b_table.as_ref().and_then(|t| t.lookup(level_sum)).unwrap_or(f64::INFINITY)
            }
        }
    };

    let mut tasks = Vec::new();
    for period_idx in 0..p.periods.len() {
        for level_idx in 0..constants.len() {
            for comp_idx in 0..p.compositions.len() {
                for trial in 0..=cfg.trials {
                    let kind = if trial < cfg.trials { TrialKind::Random } else { TrialKind::BangBang };
                    tasks.push(Task { period_idx, level_idx, comp_idx, trial, kind });
                }
            }
        }
    }

    let run = |task: &Task| -> Result<TrialResult, CliError> {
        let period = p.periods[task.period_idx];
        let (level, b, m_f) = constants[task.level_idx];
        let comp = p.compositions[task.comp_idx];
        let caps = comp.caps(level);
        let input = match task.kind {
            TrialKind::Random => {
                let seed = derive_seed(
                    cfg.seed,
                    &[task.period_idx as u64, task.level_idx as u64, task.comp_idx as u64, task.trial as u64],
                );
                random_harmonic_input(period, cfg.n, m, cfg.harmonics, comp, level, seed)?
            }
            TrialKind::BangBang => {
                let ac = if caps.ac > 0.0 {
                    bangbang_worst_input(&ch, period, cfg.n, &directions[task.period_idx], caps.ac)?
                } else {
                    SampledSignal::constant(period, cfg.n, &vec![0.0; m])?
                };
                let dc: Vec<f64> = dc_dir.iter().map(|d| d * caps.dc).collect();
                ac.add(&SampledSignal::constant(period, cfg.n, &dc)?)?
            }
        };
        let rho_u = rho_of(&input);
        let ev = PagEvaluator { m_f, ..evals[task.period_idx].clone() };
        let bound = ev.evaluate(b, rho_u)?.bound();
        let pss = match periodic_steady_state(sys, &input, &vec![0.0; sys.linear.n()], &PssOptions::default()) {
            Ok(pss) => pss,
            Err(e) => return Ok(TrialResult { rho_u, outcome: Err(e.to_string()) }),
        };
        let rho_y = rho_of(&pss.outputs);
        let ag = ag_bound(rho_u.one_norm());
        let verdict = sharpness_compare(bound, ag).verdict;
        let transient = c_norm * pss.transient;
        let scale = pss.outputs.sup_norm();
        let slack = RhoVector { dc: slack(bound.dc, transient, scale), ac: slack(bound.ac, transient, scale) };
        let violation = rho_y.dc > bound.dc + slack.dc || rho_y.ac > bound.ac + slack.ac;
        let mut waveform = String::new();
        let dt = pss.outputs.dt();
        for (k, y) in pss.outputs.samples().enumerate().step_by(cfg.waveform_stride.max(1)) {
            let _ = write!(
                waveform,
                "{},{},{},{},{}",
                num(period),
                num(level),
                comp.name(),
                task.trial,
                num(k as f64 * dt)
            );
            for v in y {
                let _ = write!(waveform, ",{}", num(*v));
            }
            waveform.push('\n');
        }
        Ok(TrialResult {
            rho_u,
            outcome: Ok(TrialMeasure { rho_y, bound, ag_bound: ag, slack, verdict, violation, waveform }),
        })
    };
    let results = tasks.par_iter().map(run).collect::<Result<Vec<_>, CliError>>()?;

    let p_out = sys.linear.p();
    let mut trials_csv = ctx.meta.header();
    trials_csv.push_str(&mf_comment_lines(&constants));
    trials_csv.push_str(
        "T,level,composition,trial,kind,u_dc,u_ac,y_dc,y_ac,bound_dc,bound_ac,pag_sup_bound,ag_bound,verdict,violation,status\n",
    );
    let mut waves = ctx.meta.header();
    waves.push_str("T,level,composition,trial,t");
    for i in 0..p_out {
        let _ = write!(waves, ",y{i}");
    }
    waves.push('\n');

    let mut totals = Counts::default();
    let mut configs: Vec<ConfigSummary> = Vec::new();
    for (task, r) in tasks.iter().zip(&results) {
        let period = p.periods[task.period_idx];
        let (level, b, m_f) = constants[task.level_idx];
        let comp = p.compositions[task.comp_idx];
        if task.trial == 0 {
            configs.push(ConfigSummary {
                period,
                level,
                composition: comp.name(),
                b: b.is_finite().then_some(b),
                m_f,
                counts: Counts::default(),
                max_ratio_dc: 0.0,
                max_ratio_ac: 0.0,
                bangbang_ratio_ac: None,
            });
        }
        let summary = configs.last_mut().expect("summary opened at trial 0");
        summary.counts.add(r);
        totals.add(r);
        let kind = match task.kind {
            TrialKind::Random => "random",
            TrialKind::BangBang => "bangbang",
        };
        match &r.outcome {
            Ok(mm) => {
                let ratio = |y: f64, bound: f64, slack: f64| y / (bound + slack);
                summary.max_ratio_dc = summary.max_ratio_dc.max(ratio(mm.rho_y.dc, mm.bound.dc, mm.slack.dc));
                summary.max_ratio_ac = summary.max_ratio_ac.max(ratio(mm.rho_y.ac, mm.bound.ac, mm.slack.ac));
                if task.kind == TrialKind::BangBang {
                    summary.bangbang_ratio_ac = Some(ratio(mm.rho_y.ac, mm.bound.ac, mm.slack.ac));
                }
                let _ = writeln!(
                    trials_csv,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},ok",
                    num(period),
                    num(level),
                    comp.name(),
                    task.trial,
                    kind,
                    num(r.rho_u.dc),
                    num(r.rho_u.ac),
                    num(mm.rho_y.dc),
                    num(mm.rho_y.ac),
                    num(mm.bound.dc),
                    num(mm.bound.ac),
                    num(mm.bound.one_norm()),
                    num(mm.ag_bound),
                    mm.verdict.name(),
                    mm.violation as u8
                );
                waves.push_str(&mm.waveform);
            }
            Err(msg) => {
                let _ = writeln!(
                    trials_csv,
                    "{},{},{},{},{},{},{},,,,,,,,,failed: {}",
                    num(period),
                    num(level),
                    comp.name(),
                    task.trial,
                    kind,
                    num(r.rho_u.dc),
                    num(r.rho_u.ac),
                    msg.replace(',', ";")
                );
            }
        }
    }

    let summary = ValidateSummary { totals, configs };
    let files = vec![
        write(&ctx.out, "validate.csv", &trials_csv)?,
        write(&ctx.out, "validate_waveforms.csv", &waves)?,
        write(&ctx.out, "validate_summary.json", &json_with_meta(&ctx.meta, &summary)?)?,
    ];
    if summary.totals.violations > 0 {
        return Err(CliError::Violations(summary.totals.violations));
    }
    if summary.totals.failed > 0 {
        return Err(CliError::Failures(summary.totals.failed));
    }
    Ok(files)
}

#[derive(Serialize)]
struct BRow {
    level: f64,
    b: f64,
    sampled_max: f64,
}

#[derive(Serialize)]
struct BTableFile {
    heuristic: bool,
    safety: f64,
    trials: usize,
    table: Vec<BRow>,
}

pub fn estimate_b_table(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let cfg = &ctx.config;
    let p = &ctx.prepared;
    let periods = match &cfg.b_periods {
        Some(grid) => grid.values()?,
        None => p.periods.clone(),
    };
    let opts = BEstimateOptions {
        trials: cfg.trials,
        seed: cfg.seed,
        periods,
        n: cfg.n,
        harmonics: cfg.harmonics,
        safety: B_SAFETY,
        pss: PssOptions::default(),
    };
    let mut table = Vec::with_capacity(p.levels.len());
    for &level in &p.levels {
        let est = estimate_b(&p.system, level, &opts)?;
        table.push(BRow { level, b: est.b, sampled_max: est.sampled_max });
    }
    let file = BTableFile { heuristic: true, safety: B_SAFETY, trials: cfg.trials, table };
    Ok(vec![write(&ctx.out, "b_table.json", &json_with_meta(&ctx.meta, &file)?)?])
}

/// Resolves the output directory: `--out`, then the config, then `out`.
pub fn output_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}
