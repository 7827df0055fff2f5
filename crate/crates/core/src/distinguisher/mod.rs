//! Statistical harness for the obliviousness definitions.
//!
//! A [`Construction`] turns a logical trace and a seed into an
//! [`Observation`]: the adversary view of its first accesses and, when the
//! run was carried to the end, its total length. Samples for input `i` use
//! seed `rng::derive(master, i, j)` and are produced in parallel; results
//! are collected in sample order, so every report is reproducible.
//!
//! Verdicts come from Pearson two-sample tests on the projected symbols
//! only; [`AccessKind`](crate::trace::AccessKind) never reaches a statistic.

pub mod constructions;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use num_bigint::BigUint;
use rayon::prelude::*;

pub use constructions::{
    BogusConstruction, FuturePeeking, PathOramConstruction, PeriodicConstruction,
    RecursiveConstruction,
};

use crate::error::{Error, Result};
use crate::path_oram::EvictionMode;
use crate::recursive::{RecursiveConfig, RecursiveOram};
use crate::rng;
use crate::trace::{AdversaryView, LogicalTrace, Op};
use stats::{bonferroni, histogram, two_sample, ChiSquaredResult};

/// How much of a run to perform and record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limit {
    /// Accesses to record.
    pub keep: usize,
    /// Keep running (counting only) after `keep` accesses until the input
    /// ends. Requires a finite input.
    pub to_end: bool,
}

impl Limit {
    pub fn prefix(n: usize) -> Self {
        Limit { keep: n, to_end: false }
    }

    pub fn full(keep: usize) -> Self {
        Limit { keep, to_end: true }
    }
}

/// Observable total length of a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthOutcome {
    Finite(BigUint),
    /// The construction raised an error (e.g. stash overflow).
    Failed,
    /// The run was cut before the input ended.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub accesses: Vec<AdversaryView>,
    pub length: LengthOutcome,
}

impl Observation {
    pub fn failed(&self) -> bool {
        self.length == LengthOutcome::Failed
    }
}

/// One position of a truncated observable trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Access(AdversaryView),
    /// The run failed here.
    Fail,
    /// The run ended before this position.
    End,
}

/// `[ORAM(A)]_n` with explicit failure and end markers.
pub fn truncate_observation(obs: &Observation, n: usize) -> Vec<Symbol> {
    let mut out: Vec<Symbol> = obs.accesses.iter().take(n).map(|&v| Symbol::Access(v)).collect();
    if out.len() < n && obs.failed() {
        out.push(Symbol::Fail);
    }
    out.resize(n, Symbol::End);
    out
}

/// An ORAM construction under test, with its configuration fixed.
pub trait Construction: Sync {
    fn name(&self) -> String;

    /// Run on `input` with the given seed. Errors of the construction are
    /// reported through [`LengthOutcome::Failed`], never as a panic.
    fn observe(&self, input: &LogicalTrace, seed: u64, limit: Limit) -> Observation;
}

/// Drive a request-at-a-time ORAM over `input`.
pub fn drive(oram: &mut impl crate::Oram, input: &LogicalTrace, limit: Limit) -> Observation {
    let mut views = Vec::new();
    let mut out = Vec::new();
    let mut count: u64 = 0;
    let mut it = input.iter().peekable();
    let mut failed = false;
    if !limit.to_end && limit.keep == 0 {
        let length = if it.peek().is_none_or(|a| a.op == Op::Halt) {
            LengthOutcome::Finite(BigUint::ZERO)
        } else {
            LengthOutcome::Unknown
        };
        return Observation { accesses: views, length };
    }
    for req in it.by_ref() {
        if req.op == Op::Halt {
            break;
        }
        out.clear();
        let res = oram.serve(&req, &mut out);
        count += out.len() as u64;
        let room = limit.keep.saturating_sub(views.len());
        views.extend(out.iter().take(room).map(|a| a.view()));
        if res.is_err() {
            failed = true;
            break;
        }
        if !limit.to_end && count >= limit.keep as u64 {
            break;
        }
    }
    let length = if failed {
        LengthOutcome::Failed
    } else if it.peek().is_none_or(|a| a.op == Op::Halt) {
        LengthOutcome::Finite(BigUint::from(count))
    } else {
        LengthOutcome::Unknown
    };
    Observation { accesses: views, length }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Indistinguishable { alpha: f64 },
    Distinguished { p: f64 },
    /// Length distributions differ, so the finite-length definition asks
    /// nothing more.
    VacuouslySatisfied { length_p: f64 },
}

impl Verdict {
    fn from_p(p: f64, alpha: f64) -> Self {
        if p < alpha {
            Verdict::Distinguished { p }
        } else {
            Verdict::Indistinguishable { alpha }
        }
    }

    pub fn is_distinguished(&self) -> bool {
        matches!(self, Verdict::Distinguished { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Indistinguishable { alpha } => write!(f, "indistinguishable(alpha={alpha})"),
            Verdict::Distinguished { p } => write!(f, "distinguished(p={p:.3e})"),
            Verdict::VacuouslySatisfied { length_p } => {
                write!(f, "vacuously_satisfied(length_p={length_p:.3e})")
            }
        }
    }
}

/// A two-sample experiment on one construction and one pair of inputs.
pub struct ExperimentSpec<'a> {
    pub construction: &'a dyn Construction,
    /// Label for reports, e.g. `sequential/random`.
    pub pair_label: String,
    pub inputs: [LogicalTrace; 2],
    /// Truncation length.
    pub n: usize,
    pub n_samples: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// Positions compared by the full-trace stage of [`test_def1`].
    pub full_cap: usize,
}

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_FULL_CAP: usize = 4096;
pub const MIN_SAMPLES: usize = 100;

impl<'a> ExperimentSpec<'a> {
    pub fn new(construction: &'a dyn Construction, inputs: [LogicalTrace; 2], n: usize) -> Self {
        ExperimentSpec {
            construction,
            pair_label: "A1/A2".into(),
            inputs,
            n,
            n_samples: DEFAULT_SAMPLES,
            alpha: DEFAULT_ALPHA,
            master_seed: 0,
            full_cap: DEFAULT_FULL_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "n_samples must be at least {MIN_SAMPLES}, got {}",
                self.n_samples
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n == 0 {
            return Err(Error::Config("truncation length must be positive".into()));
        }
        Ok(())
    }

    fn require_finite(&self) -> Result<()> {
        if self.inputs.iter().any(|t| t.len().is_none()) {
            return Err(Error::Config("this test needs finite inputs".into()));
        }
        Ok(())
    }
}

/// `n_samples` independent observations per input, in sample order.
pub fn sample(spec: &ExperimentSpec<'_>, limit: Limit) -> [Vec<Observation>; 2] {
    let run = |i: usize| -> Vec<Observation> {
        (0..spec.n_samples)
            .into_par_iter()
            .map(|j| {
                let seed = rng::derive(spec.master_seed, i as u64, j as u64);
                spec.construction.observe(&spec.inputs[i], seed, limit)
            })
            .collect()
    };
    [run(0), run(1)]
}

/// Length-`n` truncations of `n_samples` runs per input.
pub fn sample_truncations(spec: &ExperimentSpec<'_>) -> Result<[Vec<Vec<Symbol>>; 2]> {
    spec.validate()?;
    let [a, b] = sample(spec, Limit::prefix(spec.n));
    let cut = |obs: Vec<Observation>| obs.iter().map(|o| truncate_observation(o, spec.n)).collect();
    Ok([cut(a), cut(b)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestRow {
    pub test: String,
    pub result: ChiSquaredResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistinguisherReport {
    pub definition: &'static str,
    pub construction: String,
    pub pair_label: String,
    pub n: usize,
    pub rows: Vec<TestRow>,
    /// The p-value the verdict was taken from.
    pub combined_p: f64,
    pub verdict: Verdict,
    /// Length histograms per input, when lengths were observed.
    pub lengths: Option<[BTreeMap<LengthOutcome, u64>; 2]>,
}

pub const CSV_HEADER: &str = "definition,construction,workload_pair,n,test,statistic,dof,p,verdict\n";

impl DistinguisherReport {
    /// One CSV row per test, without header.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{},{:.6e},{}",
                self.definition,
                self.construction,
                self.pair_label,
                self.n,
                r.test,
                r.result.statistic,
                r.result.dof,
                r.result.p_value,
                self.verdict
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}{}", self.csv_rows())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} | {} | {} | n={} | combined p={:.3e} | {}",
            self.definition, self.construction, self.pair_label, self.n, self.combined_p, self.verdict
        );
        if let Some([a, b]) = &self.lengths {
            let _ = write!(s, " | distinct lengths {}/{}", a.len(), b.len());
        }
        s
    }

    /// Lengths observed on both sides, all finite and all equal.
    pub fn lengths_constant_and_equal(&self) -> bool {
        match &self.lengths {
            Some([a, b]) => {
                a.len() == 1 && a.keys().eq(b.keys()) && matches!(a.keys().next(), Some(LengthOutcome::Finite(_)))
            }
            None => false,
        }
    }
}

/// Per-position tests over truncated traces plus a marginal test over
/// every recorded access; Bonferroni across the family.
fn trace_rows(a: &[Vec<Symbol>], b: &[Vec<Symbol>], n: usize) -> (Vec<TestRow>, f64) {
    let mut rows = Vec::with_capacity(n + 1);
    for pos in 0..n {
        let ha = histogram(a.iter().map(|t| t[pos]));
        let hb = histogram(b.iter().map(|t| t[pos]));
        rows.push(TestRow {
            test: format!("position[{pos}]"),
            result: two_sample(&ha, &hb),
        });
    }
    let marginal = |side: &[Vec<Symbol>]| {
        histogram(side.iter().flatten().map(|s| match s {
            Symbol::Access(v) => Some((v.tree, v.leaf)),
            _ => None,
        }))
    };
    rows.push(TestRow {
        test: "leaf_marginal".into(),
        result: two_sample(&marginal(a), &marginal(b)),
    });
    let p = bonferroni(&rows.iter().map(|r| r.result.p_value).collect::<Vec<_>>());
    (rows, p)
}

fn length_histograms(obs: &[Vec<Observation>; 2]) -> [BTreeMap<LengthOutcome, u64>; 2] {
    [
        histogram(obs[0].iter().map(|o| o.length.clone())),
        histogram(obs[1].iter().map(|o| o.length.clone())),
    ]
}

/// Truncation indistinguishability: are `[ORAM(A1)]_n` and `[ORAM(A2)]_n`
/// identically distributed?
pub fn test_truncation(spec: &ExperimentSpec<'_>) -> Result<DistinguisherReport> {
    let [a, b] = sample_truncations(spec)?;
    let (rows, p) = trace_rows(&a, &b, spec.n);
    Ok(DistinguisherReport {
        definition: "truncation",
        construction: spec.construction.name(),
        pair_label: spec.pair_label.clone(),
        n: spec.n,
        rows,
        combined_p: p,
        verdict: Verdict::from_p(p, spec.alpha),
        lengths: None,
    })
}

/// Finite-length definition, two stages: if total lengths differ the
/// definition is vacuous; otherwise compare whole traces (up to
/// `full_cap` positions).
pub fn test_def1(spec: &ExperimentSpec<'_>) -> Result<DistinguisherReport> {
    spec.validate()?;
    spec.require_finite()?;
    let obs = sample(spec, Limit::full(spec.full_cap));
    let lengths = length_histograms(&obs);
    let length_test = two_sample(&lengths[0], &lengths[1]);
    let mut rows = vec![TestRow {
        test: "total_length".into(),
        result: length_test,
    }];
    let base = DistinguisherReport {
        definition: "finite_length",
        construction: spec.construction.name(),
        pair_label: spec.pair_label.clone(),
        n: 0,
        rows: Vec::new(),
        combined_p: length_test.p_value,
        verdict: Verdict::VacuouslySatisfied {
            length_p: length_test.p_value,
        },
        lengths: Some(lengths),
    };
    if length_test.p_value < spec.alpha {
        return Ok(DistinguisherReport { rows, ..base });
    }
    let longest = obs.iter().flatten().map(|o| o.accesses.len()).max().unwrap_or(0);
    let n = longest.min(spec.full_cap).max(1);
    let cut = |side: &Vec<Observation>| -> Vec<Vec<Symbol>> {
        side.iter().map(|o| truncate_observation(o, n)).collect()
    };
    let (trace, p) = trace_rows(&cut(&obs[0]), &cut(&obs[1]), n);
    rows.extend(trace);
    Ok(DistinguisherReport {
        n,
        rows,
        combined_p: p,
        verdict: Verdict::from_p(p, spec.alpha),
        ..base
    })
}

/// Strong definition: equal input lengths must give identically
/// distributed observable traces, total length included.
pub fn test_strong_def(spec: &ExperimentSpec<'_>) -> Result<DistinguisherReport> {
    spec.validate()?;
    spec.require_finite()?;
    if spec.inputs[0].len() != spec.inputs[1].len() {
        return Err(Error::Config("strong definition compares inputs of equal length".into()));
    }
    let obs = sample(spec, Limit::full(spec.n));
    let lengths = length_histograms(&obs);
    let mut rows = vec![TestRow {
        test: "total_length".into(),
        result: two_sample(&lengths[0], &lengths[1]),
    }];
    let cut = |side: &Vec<Observation>| -> Vec<Vec<Symbol>> {
        side.iter().map(|o| truncate_observation(o, spec.n)).collect()
    };
    let (trace, trace_p) = trace_rows(&cut(&obs[0]), &cut(&obs[1]), spec.n);
    rows.extend(trace);
    let p = bonferroni(&[rows[0].result.p_value, trace_p]);
    Ok(DistinguisherReport {
        definition: "strong",
        construction: spec.construction.name(),
        pair_label: spec.pair_label.clone(),
        n: spec.n,
        rows,
        combined_p: p,
        verdict: Verdict::from_p(p, spec.alpha),
        lengths: Some(lengths),
    })
}

/// A construction that passes the strong test should also pass the
/// truncation test at the same settings.
pub fn chain_consistent(strong: &DistinguisherReport, truncation: &DistinguisherReport) -> bool {
    strong.verdict.is_distinguished() || !truncation.verdict.is_distinguished()
}

/// For each `n`, the run on `[A]_n` must be an exact prefix of the run on
/// `A` under the same seed.
pub fn test_causality(
    construction: &dyn Construction,
    input: &LogicalTrace,
    n_list: &[usize],
    seed: u64,
) -> bool {
    n_list.iter().all(|&n| {
        let short = construction.observe(&input.truncate(n), seed, Limit::full(usize::MAX));
        let limit = match input.len() {
            Some(_) => Limit::full(usize::MAX),
            None => Limit::prefix(short.accesses.len()),
        };
        let long = construction.observe(input, seed, limit);
        long.accesses.starts_with(&short.accesses)
    })
}

/// Net stash growth per logical access on the two workloads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRates {
    pub rate_seq: f64,
    pub rate_rand: f64,
}

/// Average stash-occupancy increase per logical access over the first
/// `window` accesses of each workload, on a fresh recursive ORAM each.
///
/// The configuration must recurse, evict nothing in the background and
/// have an unbounded stash.
pub fn stash_growth(
    config: &RecursiveConfig,
    seq: &LogicalTrace,
    rand: &LogicalTrace,
    window: usize,
) -> Result<GrowthRates> {
    if config.recursion.depth == 0 {
        return Err(Error::Config("stash growth needs a recursive configuration".into()));
    }
    if config.base.eviction != EvictionMode::None || config.base.stash_capacity.is_some() {
        return Err(Error::Config(
            "stash growth needs eviction off and an unbounded stash".into(),
        ));
    }
    let rate = |trace: &LogicalTrace| -> Result<f64> {
        if window == 0 {
            return Ok(0.0);
        }
        let mut oram = RecursiveOram::new(config.clone())?;
        let start = oram.stash_occupancy();
        let mut out = Vec::new();
        let mut served = 0usize;
        for a in trace.iter().take(window) {
            if a.op == Op::Halt {
                break;
            }
            out.clear();
            oram.raccess(a.op, a.addr, Some(a.data), &mut out)?;
            served += 1;
        }
        let grown = oram.stash_occupancy() as f64 - start as f64;
        Ok(if served == 0 { 0.0 } else { grown / served as f64 })
    };
    Ok(GrowthRates {
        rate_seq: rate(seq)?,
        rate_rand: rate(rand)?,
    })
}

/// `construction,window,seed,rate_seq,rate_rand` rows.
pub fn growth_csv(rows: &[(String, usize, u64, GrowthRates)]) -> String {
    let mut s = String::from("construction,window,seed,rate_seq,rate_rand\n");
    for (name, w, seed, g) in rows {
        let _ = writeln!(s, "{name},{w},{seed},{:.6},{:.6}", g.rate_seq, g.rate_rand);
    }
    s
}
