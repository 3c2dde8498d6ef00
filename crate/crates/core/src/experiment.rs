//! Experiment configurations, runners and reports.
//!
//! A report is a table of preformatted cells plus a summary map. Numbers are
//! written with six decimals so that rerunning a configuration reproduces the
//! table byte for byte; only the timestamp changes between runs.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aap::{estimate_security, run_completeness_experiment, Extractor, InputStrategy, MoneyProtocol, OracleMode};
use crate::bits::BitString;
use crate::cloning::{self, BillForge, CloningStrategy, GameMode};
use crate::error::{Error, Result};
use crate::extractor::{exact_extraction_acceptance, fit_extraction_bound, NaiveExtractor, PhiExtractor, PhiPath, Scheme};
use crate::itm::DENSE_BLOCK_CAP_QUBITS;
use crate::provers::{self, ProverKind};
use crate::qsim::MAX_QUBITS;
use crate::stats::{derive_seed, Proportion};
use crate::subspace::{self, SubspaceScenario, SubspaceSecret};
use crate::wiesner::{self, WiesnerScenario, WiesnerSecret};

/// Code-version tag embedded in every report.
pub const CODE_VERSION: &str = concat!("poqk-core ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Completeness,
    ExtractionSweep,
    CloningGame,
    Amplification,
    NondestructiveScan,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Completeness => "completeness",
            ExperimentKind::ExtractionSweep => "extraction-sweep",
            ExperimentKind::CloningGame => "cloning-game",
            ExperimentKind::Amplification => "amplification",
            ExperimentKind::NondestructiveScan => "nondestructive-scan",
        }
    }
}

/// Extractor used by the extraction sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorChoice {
    #[default]
    Phi,
    PhiDense,
    PhiCircuit,
    Naive,
}

fn default_prover() -> ProverKind {
    ProverKind::Honest
}

fn default_kappa() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scheme,
    pub experiment: ExperimentKind,
    pub lambda: usize,
    #[serde(default = "default_prover")]
    pub prover: ProverKind,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    /// Oracle mode; defaults to purified for the extraction sweep and real
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleMode>,
    /// Output path stem for the report files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Knowledge-error threshold: sweep rows flag whether `p̂ ≥ κ`.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Sweep values for the prover's noise parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub extractor: ExtractorChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CloningStrategy>,
    #[serde(default)]
    pub mode: GameMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh: Option<bool>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn oracle_mode(&self) -> OracleMode {
        self.oracle.unwrap_or(match self.experiment {
            ExperimentKind::ExtractionSweep => OracleMode::Purified,
            _ => OracleMode::Real,
        })
    }

    fn chal_width(&self) -> usize {
        match self.scenario {
            Scheme::Wiesner => self.lambda,
            Scheme::Subspace => 1,
        }
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3])
    }

    pub fn strategy(&self) -> CloningStrategy {
        self.strategy.clone().unwrap_or(CloningStrategy::OptimalCloner)
    }

    pub fn rounds(&self) -> usize {
        self.rounds.unwrap_or(3)
    }

    pub fn fresh(&self) -> bool {
        self.fresh.unwrap_or(true)
    }

    /// Prover kind at sweep value `x`.
    pub fn sweep_prover(&self, x: f64) -> Result<ProverKind> {
        match self.prover {
            ProverKind::Depolarizing { .. } => Ok(ProverKind::Depolarizing { q: x }),
            ProverKind::PhaseDeviation { .. } => Ok(ProverKind::PhaseDeviation { phi: x }),
            _ => Err(Error::Config("extraction-sweep needs a depolarizing or phase-deviation prover".into())),
        }
    }

    fn prover_spec(&self, kind: &ProverKind) -> Result<crate::itm::QuantumMachineSpec> {
        provers::build(kind, self.lambda, self.chal_width()).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks ranges and the simulation caps: every experiment must fit in
    /// [`MAX_QUBITS`] and dense Φ needs a block of at most
    /// [`DENSE_BLOCK_CAP_QUBITS`] qubits.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let l = self.lambda;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad(format!("kappa {} outside [0,1]", self.kappa));
        }
        match self.scenario {
            Scheme::Wiesner if !(1..=6).contains(&l) => return bad(format!("wiesner λ={l} outside 1..=6")),
            Scheme::Subspace if !(l == 2 || l == 4 || l == 6) => return bad(format!("subspace λ={l} must be 2, 4 or 6")),
            _ => {}
        }
        let cw = self.chal_width();
        let spec = self.prover_spec(&self.prover)?;
        let aux = spec.private_width() - l;
        let prover_qubits = cw + l + aux;
        let total = match self.experiment {
            ExperimentKind::Completeness => {
                let bank = if self.oracle_mode() == OracleMode::Purified { l } else { 0 };
                bank + l + prover_qubits
            }
            ExperimentKind::ExtractionSweep => {
                let grid = self.grid_values();
                if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
                    return bad("grid must be a non-empty list of numbers".into());
                }
                for &x in &grid {
                    self.prover_spec(&self.sweep_prover(x)?)?;
                }
                let dense_ok = l <= 3 && l + spec.private_width() <= DENSE_BLOCK_CAP_QUBITS;
                let circuit_ok = l <= crate::extractor::CIRCUIT_LAMBDA_CAP;
                let ok = match self.extractor {
                    ExtractorChoice::PhiDense => dense_ok,
                    ExtractorChoice::PhiCircuit => circuit_ok,
                    ExtractorChoice::Phi => dense_ok || circuit_ok,
                    ExtractorChoice::Naive => true,
                };
                if !ok {
                    return bad(format!(
                        "extraction at λ={l}: dense Φ is capped at λ=3 and {DENSE_BLOCK_CAP_QUBITS} block qubits, circuit Φ at λ={}",
                        crate::extractor::CIRCUIT_LAMBDA_CAP
                    ));
                }
                let bank = if self.oracle_mode() == OracleMode::Purified { l } else { 0 };
                bank + l + prover_qubits + 2 * l
            }
            ExperimentKind::CloningGame => {
                let env = self.strategy().channel().map_or(0, |c| c.env_qubits);
                let copies = 2 * l + l * env;
                match self.mode {
                    GameMode::Ver => copies,
                    GameMode::Interactive => copies + 2 * (cw + l + aux),
                }
            }
            ExperimentKind::Amplification => {
                let n = self.rounds();
                if n == 0 {
                    return bad("rounds must be at least 1".into());
                }
                if cw * n > 16 {
                    return bad("more than 16 verifier coin bits".into());
                }
                let seq = provers::sequential(&self.prover, l, cw, n, self.fresh()).map_err(|e| Error::Config(e.to_string()))?;
                cw + l + seq.private_width()
            }
            ExperimentKind::NondestructiveScan => {
                let cap = if self.scenario == Scheme::Wiesner { 2 } else { 4 };
                if l > cap {
                    return bad(format!("nondestructive scan is capped at λ={cap} for {}", self.scenario.name()));
                }
                l + prover_qubits
            }
        };
        if total > MAX_QUBITS {
            return bad(format!("{} at λ={l} needs {total} qubits, cap is {MAX_QUBITS}", self.experiment.name()));
        }
        Ok(())
    }
}

/// Tabular experiment output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub timestamp: String,
    pub config: RunConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: BTreeMap<String, String>,
}

/// Six-decimal formatting used for every real-valued cell.
pub fn fmt6(x: f64) -> String {
    // no "-0.000000" from rounding noise
    let x = if x.abs() < 5e-7 { 0.0 } else { x };
    format!("{x:.6}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(fmt6).unwrap_or_default()
}

impl Report {
    fn new(config: &RunConfig, timestamp: &str, columns: &[&str]) -> Self {
        Self {
            version: CODE_VERSION.into(),
            timestamp: timestamp.into(),
            config: config.clone(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    fn headline(&mut self, p: &Proportion) {
        self.summary.insert("headline_estimate".into(), fmt6(p.estimate));
        self.summary.insert("headline_lo".into(), fmt6(p.lo));
        self.summary.insert("headline_hi".into(), fmt6(p.hi));
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// CSV with `#` comment lines carrying the version, timestamp, config and
    /// summary, followed by the header and the rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# {}\n# timestamp: {}\n# config: {}\n",
            self.version,
            self.timestamp,
            serde_json::to_string(&self.config).expect("config serializes")
        );
        for (k, v) in &self.summary {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out + &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Checks that must hold whatever the seed: honest completeness is 1 and
    /// Ver-mode cloning stays under `(3/4)^λ` up to sampling error.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.config;
        if c.experiment == ExperimentKind::Completeness && c.prover == ProverKind::Honest {
            if let Some(p) = self.summary.get("p_hat").filter(|p| *p != "1.000000") {
                out.push(format!("honest completeness {p} < 1"));
            }
        }
        if self.summary.get("within_bound").is_some_and(|v| v == "false") && c.mode == GameMode::Ver {
            out.push("cloning win rate above (3/4)^λ".into());
        }
        out
    }

    /// The report without its timestamp, for reproducibility comparisons.
    pub fn without_timestamp(&self) -> Self {
        Self {
            timestamp: String::new(),
            ..self.clone()
        }
    }
}

fn wiesner_maker(cfg: &RunConfig) -> impl Fn(u64) -> WiesnerScenario + Sync {
    let (l, m) = (cfg.lambda, cfg.oracle_mode());
    move |s| WiesnerScenario::new(l, m, s)
}

fn subspace_maker(cfg: &RunConfig) -> impl Fn(u64) -> SubspaceScenario + Sync {
    let (l, m) = (cfg.lambda, cfg.oracle_mode());
    move |s| SubspaceScenario::new(l, m, s).expect("λ validated")
}

/// Runs the configured experiment. `timestamp` is copied into the report.
pub fn run(cfg: &RunConfig, timestamp: &str) -> Result<Report> {
    cfg.validate()?;
    match (cfg.experiment, cfg.scenario) {
        (ExperimentKind::Completeness, Scheme::Wiesner) => completeness(cfg, timestamp, wiesner_maker(cfg)),
        (ExperimentKind::Completeness, Scheme::Subspace) => completeness(cfg, timestamp, subspace_maker(cfg)),
        (ExperimentKind::ExtractionSweep, Scheme::Wiesner) => sweep(cfg, timestamp, wiesner_maker(cfg)),
        (ExperimentKind::ExtractionSweep, Scheme::Subspace) => sweep(cfg, timestamp, subspace_maker(cfg)),
        (ExperimentKind::CloningGame, Scheme::Wiesner) => cloning_game(cfg, timestamp, wiesner_maker(cfg)),
        (ExperimentKind::CloningGame, Scheme::Subspace) => cloning_game(cfg, timestamp, subspace_maker(cfg)),
        (ExperimentKind::Amplification, Scheme::Wiesner) => amplification(cfg, timestamp, wiesner_maker(cfg)),
        (ExperimentKind::Amplification, Scheme::Subspace) => amplification(cfg, timestamp, subspace_maker(cfg)),
        (ExperimentKind::NondestructiveScan, _) => nondestructive(cfg, timestamp),
    }
}

fn exact_pass(cfg: &RunConfig, kind: &ProverKind) -> Result<Option<f64>> {
    let spec = cfg.prover_spec(kind)?;
    Ok(match cfg.scenario {
        Scheme::Wiesner if cfg.lambda <= 3 => Some(wiesner::exact_pass_probability(cfg.lambda, &spec)?),
        Scheme::Subspace if cfg.lambda == 2 => Some(subspace::exact_pass_probability(cfg.lambda, &spec)?),
        _ => None,
    })
}

fn completeness<S: MoneyProtocol, F: Fn(u64) -> S + Sync>(cfg: &RunConfig, ts: &str, make: F) -> Result<Report> {
    let results: Vec<(bool, bool)> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(cfg.seed, k);
            let mut scen = make(s);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            run_completeness_experiment(&mut scen, &cfg.prover, InputStrategy::Honest, &mut rng).map(|r| (r.agree, r.agree && r.prove))
        })
        .collect::<Result<_>>()?;
    let agree = Proportion::new(results.iter().filter(|r| r.0).count() as u64, cfg.trials);
    let pass = Proportion::new(results.iter().filter(|r| r.1).count() as u64, cfg.trials);
    let exact = exact_pass(cfg, &cfg.prover)?;
    let mut rep = Report::new(
        cfg,
        ts,
        &["scenario", "lambda", "prover", "oracle", "trials", "agree_rate", "p_hat", "ci_lo", "ci_hi", "p_exact"],
    );
    rep.rows.push(vec![
        cfg.scenario.name().into(),
        cfg.lambda.to_string(),
        cfg.prover.label(),
        oracle_name(cfg.oracle_mode()).into(),
        cfg.trials.to_string(),
        fmt6(agree.estimate),
        fmt6(pass.estimate),
        fmt6(pass.lo),
        fmt6(pass.hi),
        opt6(exact),
    ]);
    rep.summary.insert("p_hat".into(), fmt6(pass.estimate));
    rep.headline(&pass);
    Ok(rep)
}

fn oracle_name(m: OracleMode) -> &'static str {
    match m {
        OracleMode::Real => "real",
        OracleMode::Purified => "purified",
    }
}

fn extractor_for(choice: ExtractorChoice, cfg: &RunConfig) -> Box<dyn Extractor> {
    match choice {
        ExtractorChoice::Phi => Box::new(PhiExtractor::new(PhiPath::Auto, "ext")),
        ExtractorChoice::PhiDense => Box::new(PhiExtractor::new(PhiPath::Dense, "ext")),
        ExtractorChoice::PhiCircuit => Box::new(PhiExtractor::new(PhiPath::Circuit, "ext")),
        ExtractorChoice::Naive => Box::new(NaiveExtractor {
            challenge: BitString::zeros(cfg.chal_width()),
        }),
    }
}

/// One row of the extraction sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mu: Proportion,
    pub delta: Proportion,
    pub mu_exact: Option<f64>,
    pub delta_exact: Option<f64>,
    pub calls: u64,
}

fn sweep<S: MoneyProtocol, F: Fn(u64) -> S + Sync>(cfg: &RunConfig, ts: &str, make: F) -> Result<Report> {
    let ext = extractor_for(cfg.extractor, cfg);
    let exact_ok = match cfg.scenario {
        Scheme::Wiesner => cfg.lambda <= 3,
        Scheme::Subspace => cfg.lambda == 2,
    };
    let mut points = Vec::new();
    for (i, &x) in cfg.grid_values().iter().enumerate() {
        let kind = cfg.sweep_prover(x)?;
        let est = estimate_security(&make, &kind, Some(ext.as_ref()), cfg.trials, derive_seed(cfg.seed, i as u64))?;
        let delta_exact = if exact_ok {
            Some(1.0 - exact_extraction_acceptance(cfg.scenario, cfg.lambda, cfg.prover_spec(&kind)?, ext.as_ref())?)
        } else {
            None
        };
        points.push(SweepPoint {
            value: x,
            mu: est.pass.complement(),
            delta: est.delta,
            mu_exact: exact_pass(cfg, &kind)?.map(|p| 1.0 - p),
            delta_exact,
            calls: est.prover_calls,
        });
    }
    let param = match cfg.prover {
        ProverKind::PhaseDeviation { .. } => "phi",
        _ => "q",
    };
    let mut rep = Report::new(
        cfg,
        ts,
        &[
            param,
            "mu_hat",
            "mu_lo",
            "mu_hi",
            "delta_hat",
            "delta_lo",
            "delta_hi",
            "mu_exact",
            "delta_exact",
            "p_above_kappa",
            "prover_calls",
        ],
    );
    for p in &points {
        rep.rows.push(vec![
            fmt6(p.value),
            fmt6(p.mu.estimate),
            fmt6(p.mu.lo),
            fmt6(p.mu.hi),
            fmt6(p.delta.estimate),
            fmt6(p.delta.lo),
            fmt6(p.delta.hi),
            opt6(p.mu_exact),
            opt6(p.delta_exact),
            (1.0 - p.mu.estimate >= cfg.kappa).to_string(),
            p.calls.to_string(),
        ]);
    }
    let s = summarize_sweep(&points);
    rep.summary.insert("monotone".into(), s.monotone.to_string());
    rep.summary.insert("endpoints_separated".into(), s.endpoints_separated.to_string());
    rep.summary.insert("fit_c".into(), fmt6(s.c));
    rep.summary.insert("fit_exponent".into(), opt6(s.exponent));
    rep.summary.insert("bound_holds".into(), s.bound_holds.to_string());
    if let Some(last) = points.last() {
        rep.headline(&last.delta);
    }
    Ok(rep)
}

/// Trend checks over a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSummary {
    /// `δ̂` nondecreasing once the points are ordered by `μ̂`.
    pub monotone: bool,
    /// The `δ` intervals at the smallest and largest `μ̂` do not overlap.
    pub endpoints_separated: bool,
    pub c: f64,
    pub exponent: Option<f64>,
    /// `δ̂ ≤ C μ̂^{1/4}` at every point (`δ̂ = 0` where `μ̂ = 0`).
    pub bound_holds: bool,
}

pub fn summarize_sweep(points: &[SweepPoint]) -> SweepSummary {
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.mu.estimate.total_cmp(&b.mu.estimate));
    let monotone = sorted.windows(2).all(|w| w[1].delta.estimate >= w[0].delta.estimate);
    let endpoints_separated = match (sorted.first(), sorted.last()) {
        (Some(a), Some(b)) if sorted.len() > 1 => b.delta.lo > a.delta.hi,
        _ => false,
    };
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.mu.estimate, p.delta.estimate)).collect();
    let fit = fit_extraction_bound(&pts);
    let bound_holds = pts
        .iter()
        .all(|&(m, d)| if m > 0.0 { d <= fit.c_quarter * m.powf(0.25) + 1e-12 } else { d == 0.0 });
    SweepSummary {
        monotone,
        endpoints_separated,
        c: fit.c_quarter,
        exponent: fit.exponent,
        bound_holds,
    }
}

fn cloning_game<S: MoneyProtocol + BillForge, F: Fn(u64) -> S + Sync>(cfg: &RunConfig, ts: &str, make: F) -> Result<Report> {
    let strategy = cfg.strategy();
    let r = cloning::run_no_cloning_game(make, cfg.lambda, &strategy, cfg.mode, &cfg.prover, cfg.trials, cfg.seed)?;
    let exact = match (cfg.scenario, cfg.mode, strategy.channel()) {
        (Scheme::Wiesner, GameMode::Ver, Some(ch)) if cfg.lambda <= 4 => Some(cloning::exact_wiesner_game_value(&ch, cfg.lambda)?),
        _ => None,
    };
    let mut rep = Report::new(
        cfg,
        ts,
        &["scenario", "strategy", "mode", "lambda", "trials", "win_rate", "ci_lo", "ci_hi", "bound_(3/4)^lambda", "win_exact"],
    );
    rep.rows.push(vec![
        cfg.scenario.name().into(),
        r.strategy.clone(),
        serde_json::to_value(cfg.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        cfg.lambda.to_string(),
        cfg.trials.to_string(),
        fmt6(r.win.estimate),
        fmt6(r.win.lo),
        fmt6(r.win.hi),
        fmt6(r.bound),
        opt6(exact),
    ]);
    rep.summary.insert("within_bound".into(), r.within_bound().to_string());
    rep.headline(&r.win);
    Ok(rep)
}

fn amplification<S: MoneyProtocol + BillForge, F: Fn(u64) -> S + Sync>(cfg: &RunConfig, ts: &str, make: F) -> Result<Report> {
    let n = cfg.rounds();
    let r = cloning::sequential_amplification(make, &cfg.prover, n, cfg.fresh(), cfg.trials, cfg.seed)?;
    let exact = match cfg.scenario {
        Scheme::Wiesner if cfg.lambda <= 2 => Some(cloning::exact_sequential_wiesner(cfg.lambda, &cfg.prover, n, cfg.fresh())?),
        _ => None,
    };
    let mut rep = Report::new(cfg, ts, &["round", "pass_rate", "ci_lo", "ci_hi", "exact"]);
    for (i, p) in r.per_round.iter().enumerate() {
        rep.rows.push(vec![(i + 1).to_string(), fmt6(p.estimate), fmt6(p.lo), fmt6(p.hi), String::new()]);
    }
    rep.rows.push(vec![
        "all".into(),
        fmt6(r.overall.estimate),
        fmt6(r.overall.lo),
        fmt6(r.overall.hi),
        opt6(exact),
    ]);
    rep.headline(&r.overall);
    Ok(rep)
}

fn nondestructive(cfg: &RunConfig, ts: &str) -> Result<Report> {
    let l = cfg.lambda;
    let spec = cfg.prover_spec(&cfg.prover)?;
    let cases: Vec<(String, Vec<crate::qsim::C64>, crate::itm::ClassicalMachineSpec)> = match cfg.scenario {
        Scheme::Wiesner => WiesnerSecret::all(l)
            .into_iter()
            .map(|s| (format!("v={} theta={}", s.v, s.theta), wiesner::money_amplitudes(&s), wiesner::verifier_v2(&s)))
            .collect(),
        Scheme::Subspace => {
            let secrets = if l <= 2 {
                SubspaceSecret::all(l)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                (0..cfg.trials).map(|_| SubspaceSecret::random(l, &mut rng)).collect::<Result<_>>()?
            };
            secrets
                .into_iter()
                .map(|s| {
                    let label = format!("id={}", s.to_bits().to_hex());
                    (label, subspace::money_amplitudes(&s), subspace::verifier_v2(&s))
                })
                .collect()
        }
    };
    let mut rep = Report::new(cfg, ts, &["bill", "deterministic", "min_replay_fidelity", "damage", "nondestructive"]);
    let mut max_damage = 0.0f64;
    let mut all = true;
    for (label, amps, v) in cases {
        let world = crate::qsim::StateVector::from_amplitudes(&[("bill", l)], amps)?;
        let r = cloning::nondestructive_check(spec.clone(), &v, &world, "bill", 1e-9)?;
        max_damage = max_damage.max(r.max_damage);
        all &= r.nondestructive;
        rep.rows.push(vec![
            label,
            r.deterministic.to_string(),
            fmt6(r.min_replay_fidelity),
            fmt6(r.max_damage),
            r.nondestructive.to_string(),
        ]);
    }
    rep.summary.insert("nondestructive".into(), all.to_string());
    rep.summary.insert("max_damage".into(), fmt6(max_damage));
    Ok(rep)
}

/// Result of rerunning a report's configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ReplayOutcome {
    /// Same seed, identical table and summary.
    Match,
    /// Same seed, different content.
    Mismatch { differences: Vec<String> },
    /// A different seed was requested: not a replay. `consistent` tells
    /// whether the headline estimates' intervals overlap.
    NonReplay { original_seed: u64, seed: u64, consistent: bool },
}

impl ReplayOutcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            ReplayOutcome::Match => 0,
            _ => 1,
        }
    }
}

pub fn replay(report: &Report, seed: Option<u64>) -> Result<(ReplayOutcome, Report)> {
    let mut cfg = report.config.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fresh = run(&cfg, &report.timestamp)?;
    if cfg.seed != report.config.seed {
        let get = |r: &Report, k: &str| r.summary.get(k).and_then(|v| v.parse::<f64>().ok());
        let consistent = match (
            get(report, "headline_lo"),
            get(report, "headline_hi"),
            get(&fresh, "headline_lo"),
            get(&fresh, "headline_hi"),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => a <= d && c <= b,
            _ => fresh.summary == report.summary,
        };
        return Ok((
            ReplayOutcome::NonReplay {
                original_seed: report.config.seed,
                seed: cfg.seed,
                consistent,
            },
            fresh,
        ));
    }
    let mut differences = Vec::new();
    if report.version != fresh.version {
        differences.push(format!("version: {} vs {}", report.version, fresh.version));
    }
    if report.columns != fresh.columns {
        differences.push("columns differ".into());
    }
    for (i, (a, b)) in report.rows.iter().zip(&fresh.rows).enumerate() {
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            if x != y {
                let col = fresh.columns.get(j).cloned().unwrap_or_default();
                differences.push(format!("row {i} {col}: report {x}, rerun {y}"));
            }
        }
    }
    if report.rows.len() != fresh.rows.len() {
        differences.push(format!("{} rows vs {}", report.rows.len(), fresh.rows.len()));
    }
    for (k, v) in &fresh.summary {
        if report.summary.get(k) != Some(v) {
            differences.push(format!("summary {k}: report {:?}, rerun {v}", report.summary.get(k)));
        }
    }
    if report.summary.len() != fresh.summary.len() {
        differences.push("summary keys differ".into());
    }
    let outcome = if differences.is_empty() {
        ReplayOutcome::Match
    } else {
        ReplayOutcome::Mismatch { differences }
    };
    Ok((outcome, fresh))
}
