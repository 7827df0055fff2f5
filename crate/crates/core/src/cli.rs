//! Command-line front end.
//!
//! Every subcommand is a pure function of its flags, config file and
//! `master_seed`: running it twice produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bogus::{bogus_prefix, bogus_wrap, BogusEncoding, PassThrough};
use crate::distinguisher::{
    self, constructions::InnerOram, growth_csv, stash_growth, test_causality, test_def1,
    test_strong_def, test_truncation, BogusConstruction, Construction, ExperimentSpec,
    PathOramConstruction, PeriodicConstruction, RecursiveConstruction,
};
use crate::error::{Error, Result};
use crate::leakage::{termination_bits, timing_bits};
use crate::oram::Oram;
use crate::path_oram::{default_threshold, EvictionMode, OramConfig, PathOram};
use crate::periodic::{
    run_dynamic, run_periodic, EpochSchedule, OccupancySelector, PoissonArrivals, RateSet, RunLength,
};
use crate::praxen::{self, AllocMode, ArrivalProcess, DefaultPolicy, LeakageLedger, PastHist};
use crate::recursive::{RecursionConfig, RecursiveConfig, RecursiveOram};
use crate::rng::derive;
use crate::trace::{
    format_observed, format_trace, generate, llc_filter, read_trace_file, LlcConfig, LogicalAccess,
    LogicalTrace, ObservedTrace, TraceLength, WorkloadKind, WorkloadSpec,
};

const CONFIG_HELP: &str = "\
Config files are TOML. Sections may be written as tables or with dotted
keys (`oram.levels = 10`). Unknown keys are rejected.

  construction   path_oram | recursive | unified_plb | bogus | periodic | praxen
  master_seed    u64, default 0
  [oram]         levels, bucket_size, addr_space, stash_capacity?,
                 eviction = none|background, eviction_threshold?
  [recursion]    depth, entries_per_block, plb_capacity=0, unified=false,
                 superblock_size=1, posmap_levels?
  [bogus]        addr_bits=2, include_data=false, max_emit=1000000
  [periodic]     inner = path_oram|recursive, o_int, arrival_rate,
                 mode = static|dynamic, slots?, epochs?, rates?, watermark=4.0
  [workload]     kind = sequential|uniform_random|strided|zipf|mixed, length,
                 addr_space?, seed?, write_fraction=0, stride?, zipf_exponent?,
                 locality?, trace_file?, llc = { capacity_blocks, associativity }?
  [distinguish]  tests = [truncation, def1, strong, causality], n=64,
                 n_samples=1000, alpha=0.01, full_cap=4096,
                 causality_ns=[0,1,8,32], causality_seeds=10, a = {workload}, b = {workload}
  [stash]        window=10000, seeds=10
  [praxen]       sim_ticks, delta=1, mode = static|work_conserving,
                 alphabet=[1,2,4,8], watermark=2.0, epoch=256,
                 threads = [{ arrivals = bernoulli|phased|saturated, rate?, rates?,
                              phase?, addr_space=32, initial_config=1 }]
  [output]       dir = \"out\"

See docs/FORMATS.md for every key and output column.";

/// Deterministic ORAM simulation laboratory.
#[derive(Debug, Parser)]
#[command(name = "oramlab", version, about, after_long_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic logical trace file.
    GenTrace(GenTraceArgs),
    /// Run one construction on a workload; writes observed.csv and counters.csv.
    Run(ConfigArgs),
    /// Run the statistical tests; writes distinguish.csv and summary.txt.
    Distinguish(ConfigArgs),
    /// Measure stash growth on sequential vs random workloads; writes growth.csv.
    StashAnalyze(ConfigArgs),
    /// Timing/termination leakage bounds, or the ledger of a decision history.
    LeakageReport(LeakageArgs),
    /// Simulate the partitioned shared controller; writes history.csv,
    /// ledger.csv and services.csv.
    PraxenSim(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    /// sequential | random | strided:<stride> | zipf:<exponent> | mixed:<locality>
    #[arg(long)]
    pub kind: String,
    /// Number of accesses.
    #[arg(long)]
    pub len: usize,
    /// Address space in blocks (power of two).
    #[arg(long)]
    pub space: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of writes.
    #[arg(long, default_value_t = 0.0)]
    pub write_fraction: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeakageArgs {
    /// log2 of the maximum program run time L_max.
    #[arg(long)]
    pub lmax_bits: Option<u32>,
    /// Termination is rounded up to a multiple of 2^round_bits.
    #[arg(long, default_value_t = 0)]
    pub round_bits: u32,
    /// Number of epochs |E|.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of allowed rates |R|.
    #[arg(long)]
    pub rates: Option<usize>,
    /// Decision history CSV written by praxen-sim; reports its ledger.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    PathOram,
    Recursive,
    UnifiedPlb,
    Bogus,
    Periodic,
    Praxen,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub construction: ConstructionKind,
    #[serde(default)]
    pub master_seed: u64,
    pub oram: Option<OramSection>,
    pub recursion: Option<RecursionSection>,
    pub bogus: Option<BogusSection>,
    pub periodic: Option<PeriodicSection>,
    pub workload: Option<WorkloadSection>,
    pub distinguish: Option<DistinguishSection>,
    pub stash: Option<StashSection>,
    pub praxen: Option<PraxenSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvictionKind {
    #[default]
    None,
    Background,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OramSection {
    pub levels: u32,
    pub bucket_size: usize,
    pub addr_space: u64,
    pub stash_capacity: Option<usize>,
    #[serde(default)]
    pub eviction: EvictionKind,
    pub eviction_threshold: Option<usize>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursionSection {
    pub depth: u32,
    pub entries_per_block: u64,
    #[serde(default)]
    pub plb_capacity: usize,
    #[serde(default)]
    pub unified: bool,
    #[serde(default = "one")]
    pub superblock_size: u64,
    pub posmap_levels: Option<Vec<u32>>,
}

fn two_u32() -> u32 {
    2
}

fn million() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BogusSection {
    #[serde(default = "two_u32")]
    pub addr_bits: u32,
    #[serde(default)]
    pub include_data: bool,
    /// Observed accesses written to observed.csv at most.
    #[serde(default = "million")]
    pub max_emit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerKind {
    #[default]
    PathOram,
    Recursive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapingMode {
    #[default]
    Static,
    Dynamic,
}

fn four() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicSection {
    #[serde(default)]
    pub inner: InnerKind,
    pub o_int: u64,
    /// Mean requests per tick.
    pub arrival_rate: f64,
    #[serde(default)]
    pub mode: ShapingMode,
    /// Static mode: number of slots; drains the workload when absent.
    pub slots: Option<u64>,
    pub epochs: Option<Vec<u64>>,
    pub rates: Option<Vec<u64>>,
    #[serde(default = "four")]
    pub watermark: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKindCfg {
    Sequential,
    UniformRandom,
    Strided,
    Zipf,
    Mixed,
}

impl WorkloadKindCfg {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKindCfg::Sequential => "sequential",
            WorkloadKindCfg::UniformRandom => "uniform_random",
            WorkloadKindCfg::Strided => "strided",
            WorkloadKindCfg::Zipf => "zipf",
            WorkloadKindCfg::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlcSection {
    pub capacity_blocks: usize,
    pub associativity: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: Option<WorkloadKindCfg>,
    pub length: Option<usize>,
    /// Defaults to `oram.addr_space`.
    pub addr_space: Option<u64>,
    /// Defaults to a seed derived from `master_seed`.
    pub seed: Option<u64>,
    #[serde(default)]
    pub write_fraction: f64,
    pub stride: Option<u64>,
    pub zipf_exponent: Option<f64>,
    pub locality: Option<f64>,
    /// Read the trace from this file instead of generating it.
    pub trace_file: Option<PathBuf>,
    pub llc: Option<LlcSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Truncation,
    Def1,
    Strong,
    Causality,
}

fn default_tests() -> Vec<TestKind> {
    vec![TestKind::Truncation]
}

fn sixty_four() -> usize {
    64
}

fn default_samples() -> usize {
    distinguisher::DEFAULT_SAMPLES
}

fn default_alpha() -> f64 {
    distinguisher::DEFAULT_ALPHA
}

fn default_cap() -> usize {
    distinguisher::DEFAULT_FULL_CAP
}

fn default_ns() -> Vec<usize> {
    vec![0, 1, 8, 32]
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistinguishSection {
    #[serde(default = "default_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default = "sixty_four")]
    pub n: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_cap")]
    pub full_cap: usize,
    #[serde(default = "default_ns")]
    pub causality_ns: Vec<usize>,
    #[serde(default = "ten")]
    pub causality_seeds: usize,
    pub a: WorkloadSection,
    pub b: WorkloadSection,
}

fn ten_thousand() -> usize {
    10_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StashSection {
    #[serde(default = "ten_thousand")]
    pub window: usize,
    #[serde(default = "ten")]
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AllocModeCfg {
    #[default]
    Static,
    WorkConserving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Bernoulli,
    Phased,
    Saturated,
}

fn thirty_two() -> u64 {
    32
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadSection {
    pub arrivals: ArrivalKind,
    pub rate: Option<f64>,
    pub rates: Option<[f64; 2]>,
    pub phase: Option<u64>,
    #[serde(default = "thirty_two")]
    pub addr_space: u64,
    #[serde(default = "one_u32")]
    pub initial_config: u32,
}

fn default_alphabet() -> Vec<u32> {
    praxen::ALPHABET.to_vec()
}

fn two_f64() -> f64 {
    2.0
}

fn epoch_default() -> u64 {
    256
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PraxenSection {
    pub sim_ticks: u64,
    #[serde(default = "one")]
    pub delta: u64,
    #[serde(default)]
    pub mode: AllocModeCfg,
    #[serde(default = "default_alphabet")]
    pub alphabet: Vec<u32>,
    #[serde(default = "two_f64")]
    pub watermark: f64,
    #[serde(default = "epoch_default")]
    pub epoch: u64,
    pub threads: Vec<ThreadSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

fn missing(section: &str) -> Error {
    Error::Config(format!("missing [{section}] section"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Schema checks that do not need to run anything.
    pub fn validate(&self) -> Result<()> {
        match self.construction {
            ConstructionKind::PathOram => {
                self.oram_config(0)?;
            }
            ConstructionKind::Recursive | ConstructionKind::UnifiedPlb => {
                self.recursive_config(0)?;
            }
            ConstructionKind::Bogus => {}
            ConstructionKind::Periodic => {
                let p = self.periodic.as_ref().ok_or_else(|| missing("periodic"))?;
                if p.o_int == 0 {
                    return Err(Error::Config("periodic.o_int must be at least 1".into()));
                }
                if !(p.arrival_rate > 0.0 && p.arrival_rate.is_finite()) {
                    return Err(Error::Config("periodic.arrival_rate must be positive".into()));
                }
                if p.mode == ShapingMode::Dynamic {
                    self.epoch_plan()?;
                }
                self.inner_oram(0)?;
            }
            ConstructionKind::Praxen => {
                self.praxen_setup()?;
                self.oram_config(0)?;
            }
        }
        if let Some(w) = &self.workload {
            self.workload_spec(w, 0)?;
        }
        if let Some(d) = &self.distinguish {
            self.workload_spec(&d.a, 0)?;
            self.workload_spec(&d.b, 0)?;
        }
        Ok(())
    }

    pub fn oram_config(&self, seed: u64) -> Result<OramConfig> {
        let o = self.oram.as_ref().ok_or_else(|| missing("oram"))?;
        let mut c = OramConfig::new(o.levels, o.bucket_size, o.addr_space, seed);
        c.stash_capacity = o.stash_capacity;
        c.eviction = match (o.eviction, o.eviction_threshold) {
            (EvictionKind::None, None) => EvictionMode::None,
            (EvictionKind::None, Some(_)) => {
                return Err(Error::Config("oram.eviction_threshold needs eviction = \"background\"".into()))
            }
            (EvictionKind::Background, Some(threshold)) => EvictionMode::Background { threshold },
            (EvictionKind::Background, None) => {
                let cap = o.stash_capacity.ok_or_else(|| {
                    Error::Config("background eviction needs oram.stash_capacity or oram.eviction_threshold".into())
                })?;
                EvictionMode::Background {
                    threshold: default_threshold(cap, o.bucket_size, o.levels)?,
                }
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn recursive_config(&self, seed: u64) -> Result<RecursiveConfig> {
        let r = self.recursion.as_ref().ok_or_else(|| missing("recursion"))?;
        let mut recursion = RecursionConfig {
            depth: r.depth,
            entries_per_block: r.entries_per_block,
            plb_capacity: r.plb_capacity,
            unified: r.unified,
            superblock_size: r.superblock_size,
            posmap_levels: r.posmap_levels.clone(),
        };
        if self.construction == ConstructionKind::UnifiedPlb {
            if r.plb_capacity == 0 {
                return Err(Error::Config("unified_plb needs recursion.plb_capacity > 0".into()));
            }
            recursion.unified = true;
        }
        let cfg = RecursiveConfig {
            base: self.oram_config(seed)?,
            recursion,
        };
        RecursiveOram::new(cfg.clone())?;
        Ok(cfg)
    }

    fn inner_oram(&self, seed: u64) -> Result<InnerOram> {
        let p = self.periodic.as_ref().ok_or_else(|| missing("periodic"))?;
        Ok(match p.inner {
            InnerKind::PathOram => InnerOram::Path(self.oram_config(seed)?),
            InnerKind::Recursive => InnerOram::Recursive(self.recursive_config(seed)?),
        })
    }

    fn epoch_plan(&self) -> Result<(EpochSchedule, RateSet)> {
        let p = self.periodic.as_ref().ok_or_else(|| missing("periodic"))?;
        let epochs = p
            .epochs
            .clone()
            .ok_or_else(|| Error::Config("dynamic mode needs periodic.epochs".into()))?;
        let rates = p
            .rates
            .clone()
            .ok_or_else(|| Error::Config("dynamic mode needs periodic.rates".into()))?;
        Ok((EpochSchedule::new(epochs)?, RateSet::new(rates)?))
    }

    fn default_space(&self) -> Option<u64> {
        self.oram.as_ref().map(|o| o.addr_space)
    }

    /// The logical trace a workload section describes.
    pub fn workload_trace(&self, w: &WorkloadSection, default_seed: u64) -> Result<LogicalTrace> {
        let space = w
            .addr_space
            .or(self.default_space())
            .unwrap_or(1 << (self.bogus.as_ref().map_or(2, |b| b.addr_bits)));
        let trace = match &w.trace_file {
            Some(path) => read_trace_file(path, space)?,
            None => generate(&self.workload_spec(w, default_seed)?)?,
        };
        match &w.llc {
            Some(l) => {
                let cfg = LlcConfig {
                    capacity_blocks: l.capacity_blocks,
                    associativity: l.associativity,
                    enabled: true,
                };
                LogicalTrace::finite(llc_filter(&trace.to_vec()?, &cfg)?)
            }
            None => Ok(trace),
        }
    }

    fn workload_spec(&self, w: &WorkloadSection, default_seed: u64) -> Result<WorkloadSpec> {
        if w.trace_file.is_some() {
            return Ok(WorkloadSpec::new(WorkloadKind::Sequential, TraceLength::Finite(1), 2, 0));
        }
        let kind = match w.kind.ok_or_else(|| Error::Config("workload.kind is required".into()))? {
            WorkloadKindCfg::Sequential => WorkloadKind::Sequential,
            WorkloadKindCfg::UniformRandom => WorkloadKind::UniformRandom,
            WorkloadKindCfg::Strided => WorkloadKind::Strided(
                w.stride.ok_or_else(|| Error::Config("strided workload needs stride".into()))?,
            ),
            WorkloadKindCfg::Zipf => WorkloadKind::Zipf(
                w.zipf_exponent
                    .ok_or_else(|| Error::Config("zipf workload needs zipf_exponent".into()))?,
            ),
            WorkloadKindCfg::Mixed => WorkloadKind::Mixed(
                w.locality.ok_or_else(|| Error::Config("mixed workload needs locality".into()))?,
            ),
        };
        let length = w.length.ok_or_else(|| Error::Config("workload.length is required".into()))?;
        let space = w
            .addr_space
            .or(self.default_space())
            .or(self.bogus.as_ref().map(|b| 1u64 << b.addr_bits))
            .ok_or_else(|| Error::Config("workload.addr_space is required".into()))?;
        let spec = WorkloadSpec::new(kind, TraceLength::Finite(length), space, w.seed.unwrap_or(default_seed))
            .with_write_fraction(w.write_fraction);
        spec.validate()?;
        Ok(spec)
    }

    fn bogus_encoding(&self) -> BogusEncoding {
        self.bogus
            .as_ref()
            .map(|b| BogusEncoding {
                addr_bits: b.addr_bits,
                include_data: b.include_data,
            })
            .unwrap_or_default()
    }

    pub fn praxen_setup(&self) -> Result<(praxen::PraxenSetup, DefaultPolicy)> {
        let p = self.praxen.as_ref().ok_or_else(|| missing("praxen"))?;
        if p.threads.is_empty() {
            return Err(Error::Config("praxen.threads must not be empty".into()));
        }
        if p.alphabet.is_empty() || p.epoch == 0 {
            return Err(Error::Config("praxen.alphabet must be nonempty and praxen.epoch positive".into()));
        }
        let mut threads = Vec::new();
        for (i, t) in p.threads.iter().enumerate() {
            let arrivals = match t.arrivals {
                ArrivalKind::Bernoulli => ArrivalProcess::Bernoulli(
                    t.rate.ok_or_else(|| Error::Config(format!("praxen.threads[{i}] needs rate")))?,
                ),
                ArrivalKind::Phased => ArrivalProcess::Phased {
                    rates: t.rates.ok_or_else(|| Error::Config(format!("praxen.threads[{i}] needs rates")))?,
                    phase: t.phase.ok_or_else(|| Error::Config(format!("praxen.threads[{i}] needs phase")))?,
                },
                ArrivalKind::Saturated => ArrivalProcess::Saturated,
            };
            if !p.alphabet.contains(&t.initial_config) {
                return Err(Error::Config(format!(
                    "praxen.threads[{i}].initial_config {} is not in the alphabet",
                    t.initial_config
                )));
            }
            threads.push(praxen::ThreadModel {
                arrivals,
                addr_space: t.addr_space,
                initial_config: t.initial_config,
                seed: derive(self.master_seed, 3, i as u64),
            });
        }
        let needed: u64 = threads.len() as u64 * threads.iter().map(|t| t.addr_space).max().unwrap_or(0);
        if let Some(space) = self.default_space() {
            if space < needed {
                return Err(Error::Config(format!(
                    "oram.addr_space {space} is smaller than threads x thread addr_space = {needed}"
                )));
            }
        }
        let setup = praxen::PraxenSetup {
            threads,
            sim_ticks: p.sim_ticks,
            delta: p.delta,
            mode: match p.mode {
                AllocModeCfg::Static => AllocMode::Static,
                AllocModeCfg::WorkConserving => AllocMode::WorkConserving,
            },
        };
        let policy = DefaultPolicy {
            alphabet: p.alphabet.clone(),
            watermark: p.watermark,
            epoch: p.epoch,
        };
        Ok((setup, policy))
    }

    fn construction(&self) -> Result<Box<dyn Construction>> {
        Ok(match self.construction {
            ConstructionKind::PathOram => Box::new(PathOramConstruction {
                config: self.oram_config(0)?,
            }),
            ConstructionKind::Recursive | ConstructionKind::UnifiedPlb => Box::new(RecursiveConstruction {
                config: self.recursive_config(0)?,
            }),
            ConstructionKind::Bogus => Box::new(BogusConstruction {
                encoding: self.bogus_encoding(),
            }),
            ConstructionKind::Periodic => {
                let p = self.periodic.as_ref().ok_or_else(|| missing("periodic"))?;
                if p.mode == ShapingMode::Dynamic {
                    return Err(Error::Config("distinguish supports static periodic shaping only".into()));
                }
                Box::new(PeriodicConstruction {
                    inner: self.inner_oram(0)?,
                    o_int: p.o_int,
                    arrival_rate: p.arrival_rate,
                })
            }
            ConstructionKind::Praxen => {
                return Err(Error::Config("praxen is simulated with praxen-sim, not sampled".into()))
            }
        })
    }
}

/// Files produced by a subcommand, in write order.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
}

impl Outputs {
    fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, content) in &self.files {
            let path = dir.join(name);
            fs::write(&path, content)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn serve_all(oram: &mut dyn Oram, trace: &LogicalTrace) -> (ObservedTrace, u64, Option<Error>) {
    let mut out = Vec::new();
    let mut requests = 0;
    for a in trace.iter() {
        match oram.serve(&a, &mut out) {
            Ok(_) => requests += 1,
            Err(e) => return (out, requests, Some(e)),
        }
    }
    (out, requests, None)
}

fn status(err: &Option<Error>) -> String {
    match err {
        None => "ok".into(),
        Some(e) => format!("\"{e}\""),
    }
}

/// `run`: one construction on one workload.
pub fn cmd_run(cfg: &RunConfig) -> Result<Outputs> {
    let mut out = Outputs::default();
    let oram_seed = derive(cfg.master_seed, 0, 0);
    let workload_seed = derive(cfg.master_seed, 1, 0);
    if cfg.construction == ConstructionKind::Praxen {
        return cmd_praxen_sim(cfg);
    }
    let w = cfg.workload.as_ref().ok_or_else(|| missing("workload"))?;
    let trace = cfg.workload_trace(w, workload_seed)?;
    let mut counters = String::from("counter,value\n");
    match cfg.construction {
        ConstructionKind::PathOram => {
            let mut o = PathOram::new(cfg.oram_config(oram_seed)?)?;
            let (obs, requests, err) = serve_all(&mut o, &trace);
            let c = o.counters();
            let _ = write!(
                counters,
                "status,{}\nrequests,{requests}\nobserved_accesses,{}\nreal_accesses,{}\ndummy_accesses,{}\nstash_peak,{}\noverflow_events,{}\nstash_final,{}\n",
                status(&err),
                obs.len(),
                c.real_accesses,
                c.dummy_accesses,
                c.stash_peak,
                c.overflow_events,
                o.stash_occupancy()
            );
            out.add("observed.csv", format_observed(&obs, true));
            out.add("snapshot.txt", o.snapshot());
        }
        ConstructionKind::Recursive | ConstructionKind::UnifiedPlb => {
            let mut o = RecursiveOram::new(cfg.recursive_config(oram_seed)?)?;
            let (obs, requests, err) = serve_all(&mut o, &trace);
            let rc = o.counters().clone();
            let _ = write!(counters, "status,{}\nrequests,{requests}\nobserved_accesses,{}\n", status(&err), obs.len());
            for (j, n) in rc.level_accesses.iter().enumerate() {
                let _ = writeln!(counters, "level{j}_accesses,{n}");
            }
            for (t, tree) in o.trees().iter().enumerate() {
                let c = tree.counters();
                let _ = write!(
                    counters,
                    "tree{t}_dummy_accesses,{}\ntree{t}_stash_peak,{}\ntree{t}_overflow_events,{}\ntree{t}_stash_final,{}\n",
                    c.dummy_accesses,
                    c.stash_peak,
                    c.overflow_events,
                    tree.stash_occupancy()
                );
            }
            let _ = write!(
                counters,
                "plb_lookups,{}\nplb_hits,{}\nposmap_accesses_saved,{}\nprefetch_lookups,{}\nprefetch_hits,{}\n",
                rc.plb_lookups, rc.plb_hits, rc.posmap_accesses_saved, rc.prefetch_lookups, rc.prefetch_hits
            );
            out.add("observed.csv", format_observed(&obs, true));
        }
        ConstructionKind::Bogus => {
            let max_emit = cfg.bogus.as_ref().map_or_else(million, |b| b.max_emit);
            let plan = bogus_wrap(&PassThrough, &trace.to_vec()?, &cfg.bogus_encoding())?;
            let obs = bogus_prefix(&plan, max_emit);
            let _ = write!(
                counters,
                "status,ok\nrequests,{}\ninner_accesses,{}\ntotal_length,{}\npadding_length,{}\nemitted,{}\n",
                trace.len().unwrap_or(0),
                plan.inner_trace.len(),
                plan.total_length,
                plan.padding_length(),
                obs.len()
            );
            out.add("observed.csv", format_observed(&obs, true));
        }
        ConstructionKind::Periodic => {
            let p = cfg.periodic.as_ref().ok_or_else(|| missing("periodic"))?;
            let arrivals = PoissonArrivals::new(trace.iter(), p.arrival_rate, derive(cfg.master_seed, 2, 0))?;
            let mut oram: Box<dyn Oram> = match cfg.inner_oram(oram_seed)? {
                InnerOram::Path(c) => Box::new(PathOram::new(c)?),
                InnerOram::Recursive(c) => Box::new(RecursiveOram::new(c)?),
            };
            let run = match p.mode {
                ShapingMode::Static => {
                    let length = p.slots.map_or(RunLength::Drain, RunLength::Slots);
                    run_periodic(&mut oram, arrivals, p.o_int, length)?
                }
                ShapingMode::Dynamic => {
                    let (epochs, rates) = cfg.epoch_plan()?;
                    let mut selector = OccupancySelector { watermark: p.watermark };
                    let d = run_dynamic(&mut oram, arrivals, &epochs, &rates, &mut selector)?;
                    out.add("epochs.csv", d.to_csv());
                    d.run
                }
            };
            let _ = write!(
                counters,
                "status,ok\nslots,{}\nreal,{}\ndummy,{}\nserved,{}\ntotal_wait,{}\n",
                run.trace.len(),
                run.real,
                run.dummy,
                run.served,
                run.total_wait
            );
            out.add("observed.csv", format_observed(&run.trace, true));
        }
        ConstructionKind::Praxen => unreachable!("handled above"),
    }
    out.files.insert(0, ("counters.csv".into(), counters));
    if let Some(i) = out.files.iter().position(|(n, _)| n == "observed.csv") {
        let observed = out.files.remove(i);
        out.files.insert(0, observed);
    }
    Ok(out)
}

/// `distinguish`: the configured tests on inputs `a` and `b`.
pub fn cmd_distinguish(cfg: &RunConfig) -> Result<Outputs> {
    let d = cfg.distinguish.as_ref().ok_or_else(|| missing("distinguish"))?;
    let construction = cfg.construction()?;
    let a = cfg.workload_trace(&d.a, derive(cfg.master_seed, 1, 0))?;
    let b = cfg.workload_trace(&d.b, derive(cfg.master_seed, 1, 1))?;
    let label = |w: &WorkloadSection| match (&w.trace_file, w.kind) {
        (Some(p), _) => p.display().to_string(),
        (None, Some(k)) => k.name().to_string(),
        (None, None) => "?".into(),
    };
    let mut spec = ExperimentSpec::new(construction.as_ref(), [a.clone(), b], d.n);
    spec.pair_label = format!("{}/{}", label(&d.a), label(&d.b));
    spec.n_samples = d.n_samples;
    spec.alpha = d.alpha;
    spec.full_cap = d.full_cap;
    spec.master_seed = cfg.master_seed;
    let mut csv = String::from(distinguisher::CSV_HEADER);
    let mut summary = String::new();
    for test in &d.tests {
        let report = match test {
            TestKind::Truncation => test_truncation(&spec)?,
            TestKind::Def1 => test_def1(&spec)?,
            TestKind::Strong => test_strong_def(&spec)?,
            TestKind::Causality => {
                let total = d.causality_seeds;
                let passed = (0..total)
                    .filter(|&s| test_causality(construction.as_ref(), &a, &d.causality_ns, derive(cfg.master_seed, 4, s as u64)))
                    .count();
                let verdict = if passed == total { "pass" } else { "fail" };
                let _ = writeln!(
                    csv,
                    "causality,{},{},{},prefix_check,{passed},{total},{},{verdict}",
                    construction.name(),
                    label(&d.a),
                    d.causality_ns.iter().max().copied().unwrap_or(0),
                    if passed == total { 1.0 } else { 0.0 }
                );
                let _ = writeln!(summary, "causality | {} | {passed}/{total} seeds | {verdict}", construction.name());
                continue;
            }
        };
        csv.push_str(&report.csv_rows());
        let _ = writeln!(summary, "{}", report.summary());
    }
    let mut out = Outputs::default();
    out.add("distinguish.csv", csv);
    out.add("summary.txt", summary);
    Ok(out)
}

/// `stash-analyze`: growth rates over seeds.
pub fn cmd_stash_analyze(cfg: &RunConfig) -> Result<Outputs> {
    let s = cfg.stash.as_ref().ok_or_else(|| missing("stash"))?;
    let base = cfg.recursive_config(0)?;
    let space = base.base.addr_space;
    let mut rows = Vec::new();
    let (mut sum_seq, mut sum_rand) = (0.0, 0.0);
    for i in 0..s.seeds as u64 {
        let seed = derive(cfg.master_seed, 0, i);
        let mut c = base.clone();
        c.base.seed = seed;
        let len = TraceLength::Finite(s.window.max(1));
        let seq = generate(&WorkloadSpec::new(WorkloadKind::Sequential, len, space, seed))?;
        let rand = generate(&WorkloadSpec::new(WorkloadKind::UniformRandom, len, space, derive(cfg.master_seed, 1, i)))?;
        let g = stash_growth(&c, &seq, &rand, s.window)?;
        sum_seq += g.rate_seq;
        sum_rand += g.rate_rand;
        rows.push(("recursive".to_string(), s.window, seed, g));
    }
    let mut csv = growth_csv(&rows);
    if s.seeds > 0 {
        let k = s.seeds as f64;
        let _ = writeln!(csv, "mean,{},,{:.6},{:.6}", s.window, sum_seq / k, sum_rand / k);
    }
    let mut out = Outputs::default();
    out.add("growth.csv", csv);
    Ok(out)
}

/// `praxen-sim`: the partitioned controller.
pub fn cmd_praxen_sim(cfg: &RunConfig) -> Result<Outputs> {
    let (setup, policy) = cfg.praxen_setup()?;
    let mut oram = PathOram::new(cfg.oram_config(derive(cfg.master_seed, 0, 0))?)?;
    let run = praxen::run_praxen(&setup, &mut oram, &policy)?;
    let mut out = Outputs::default();
    out.add("history.csv", run.history.to_csv());
    out.add("ledger.csv", run.ledger.to_csv());
    out.add("services.csv", run.services_csv());
    Ok(out)
}

/// `leakage-report`.
pub fn cmd_leakage_report(args: &LeakageArgs) -> Result<String> {
    let mut s = String::new();
    if let Some(path) = &args.history {
        let hist = PastHist::parse_csv(&fs::read_to_string(path)?)?;
        s.push_str(&LeakageLedger::from_history(&hist).to_csv());
        return Ok(s);
    }
    s.push_str("component,bits\n");
    let timing = match (args.epochs, args.rates) {
        (Some(e), Some(r)) => Some(timing_bits::<f64>(e, r)?),
        (None, None) => None,
        _ => return Err(Error::Config("--epochs and --rates go together".into())),
    };
    if let Some(t) = timing {
        let _ = writeln!(s, "timing,{t}");
    }
    let termination = match args.lmax_bits {
        Some(b) => {
            let t = termination_bits::<f64>(2f64.powi(b as i32), args.round_bits)?;
            let _ = writeln!(s, "termination,{t}");
            Some(t)
        }
        None => None,
    };
    if timing.is_none() && termination.is_none() {
        return Err(Error::Config("give --lmax-bits, --epochs/--rates or --history".into()));
    }
    let _ = writeln!(s, "total,{}", timing.unwrap_or(0.0) + termination.unwrap_or(0.0));
    Ok(s)
}

/// Parse `sequential`, `random`, `strided:K`, `zipf:S` or `mixed:P`.
pub fn parse_kind(s: &str) -> Result<WorkloadKind> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let bad = || Error::Config(format!("invalid workload kind {s:?}"));
    Ok(match (name, arg) {
        ("sequential", None) => WorkloadKind::Sequential,
        ("random" | "uniform_random", None) => WorkloadKind::UniformRandom,
        ("strided", Some(a)) => WorkloadKind::Strided(a.parse().map_err(|_| bad())?),
        ("zipf", Some(a)) => WorkloadKind::Zipf(a.parse().map_err(|_| bad())?),
        ("mixed", Some(a)) => WorkloadKind::Mixed(a.parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    })
}

/// `gen-trace`.
pub fn cmd_gen_trace(args: &GenTraceArgs) -> Result<String> {
    let spec = WorkloadSpec::new(parse_kind(&args.kind)?, TraceLength::Finite(args.len), args.space, args.seed)
        .with_write_fraction(args.write_fraction);
    let trace: Vec<LogicalAccess> = generate(&spec)?.to_vec()?;
    Ok(format_trace(&trace))
}

fn emit(text: String, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_config_command(args: &ConfigArgs, f: fn(&RunConfig) -> Result<Outputs>) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    for path in f(&cfg)?.write(&dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTrace(a) => emit(cmd_gen_trace(&a)?, &a.out),
        Command::Run(a) => run_config_command(&a, cmd_run),
        Command::Distinguish(a) => run_config_command(&a, cmd_distinguish),
        Command::StashAnalyze(a) => run_config_command(&a, cmd_stash_analyze),
        Command::LeakageReport(a) => emit(cmd_leakage_report(&a)?, &a.out),
        Command::PraxenSim(a) => run_config_command(&a, cmd_praxen_sim),
    }
}

/// Binary entry point: parse arguments, run, report errors on stderr.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH: &str = r#"
construction = "path_oram"
master_seed = 7
oram.levels = 5
oram.bucket_size = 4
oram.addr_space = 32
workload.kind = "uniform_random"
workload.length = 50
workload.write_fraction = 0.5
"#;

    #[test]
    fn dotted_keys_and_unknown_keys() {
        let cfg = RunConfig::parse(PATH).unwrap();
        assert_eq!(cfg.oram.as_ref().unwrap().levels, 5);
        let err = RunConfig::parse(&format!("{PATH}oram.colour = 1\n")).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        assert!(RunConfig::parse("construction = \"nope\"").is_err());
        assert!(RunConfig::parse("construction = \"path_oram\"").is_err());
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = RunConfig::parse(PATH).unwrap();
        let a = cmd_run(&cfg).unwrap();
        let b = cmd_run(&cfg).unwrap();
        assert_eq!(a.files, b.files);
        let names: Vec<&str> = a.files.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["observed.csv", "counters.csv", "snapshot.txt"]);
        assert!(a.files[1].1.contains("requests,50"));
    }

    #[test]
    fn gen_trace_sequential() {
        let args = GenTraceArgs {
            kind: "sequential".into(),
            len: 8,
            space: 8,
            seed: 0,
            write_fraction: 0.0,
            out: None,
        };
        let text = cmd_gen_trace(&args).unwrap();
        let addrs: Vec<&str> = text.lines().map(|l| l.trim_start_matches("R,")).collect();
        assert_eq!(addrs, ["0", "1", "2", "3", "4", "5", "6", "7"]);
        assert!(parse_kind("strided:3").is_ok());
        assert!(parse_kind("zipf").is_err());
    }

    #[test]
    fn leakage_report_flags() {
        let args = LeakageArgs {
            lmax_bits: Some(62),
            round_bits: 30,
            epochs: None,
            rates: None,
            history: None,
            out: None,
        };
        let s = cmd_leakage_report(&args).unwrap();
        assert!(s.contains("termination,32\n"), "{s}");
        let args = LeakageArgs {
            epochs: Some(62),
            rates: Some(4),
            round_bits: 62,
            ..args
        };
        let s = cmd_leakage_report(&args).unwrap();
        assert!(s.contains("timing,124\n") && s.contains("total,124\n"), "{s}");
    }
}
