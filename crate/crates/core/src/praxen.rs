//! Leakage-accounted resource partitioning of a shared ORAM controller.
//!
//! Threads share one controller that serves one access per tick. Slots are
//! handed out by a static weighted round-robin frame computed from the
//! threads' current configs, and a slot whose owner has nothing to do is
//! burnt on a dummy access rather than given away. Configs change only at
//! decision points. At each one a [`Policy`] first picks the new config
//! from the set allowed by the previous decision (using the thread's own
//! performance indicators), then, without those indicators, fixes the next
//! allowed set and decision time. A thread therefore leaks at most
//! `log2 |C|` bits per decision, which the [`LeakageLedger`] adds up.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::leakage::{choice_bits, termination_bits};
use crate::oram::Oram;
use crate::rng::{self, SimRng};
use crate::trace::{AccessKind, LogicalAccess, ObservedAccess, ObservedTrace};
use crate::Bits;

pub type Config = u32;

/// Default config alphabet: resource weights.
pub const ALPHABET: [Config; 4] = [1, 2, 4, 8];

/// One recorded decision `(i, c_i, t_i, C_i, t'_i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionPoint {
    pub thread: usize,
    /// Config chosen at this decision.
    pub config: Config,
    pub time: u64,
    /// Configs the next decision may choose from.
    pub next_set: Vec<Config>,
    pub next_time: u64,
}

/// Decision points ordered by time, ties by thread id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PastHist {
    points: Vec<DecisionPoint>,
}

impl PastHist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[DecisionPoint] {
        &self.points
    }

    pub fn push(&mut self, p: DecisionPoint) {
        let pos = self
            .points
            .partition_point(|q| (q.time, q.thread) <= (p.time, p.thread));
        self.points.insert(pos, p);
    }

    /// `PastHist_i`, in time order.
    pub fn of_thread(&self, thread: usize) -> Vec<DecisionPoint> {
        self.points.iter().filter(|p| p.thread == thread).cloned().collect()
    }

    pub fn last_of(&self, thread: usize) -> Option<&DecisionPoint> {
        self.points.iter().rev().find(|p| p.thread == thread)
    }

    pub fn threads(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.points.iter().map(|p| p.thread).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// `decision,thread,time,config,next_set,next_time,set_size,lambda`,
    /// where `set_size` and `lambda` refer to the set this decision chose
    /// from (empty for a thread's initial record).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("decision,thread,time,config,next_set,next_time,set_size,lambda\n");
        let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
        for (j, p) in self.points.iter().enumerate() {
            let set: Vec<String> = p.next_set.iter().map(|c| c.to_string()).collect();
            let (size, lambda) = match prev.get(&p.thread) {
                Some(&n) => (n.to_string(), format!("{}", choice_bits::<f64>(n))),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                s,
                "{j},{},{},{},{},{},{size},{lambda}",
                p.thread,
                p.time,
                p.config,
                set.join("|"),
                p.next_time
            );
            prev.insert(p.thread, p.next_set.len());
        }
        s
    }

    /// Inverse of [`PastHist::to_csv`]; derived columns are ignored.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut hist = PastHist::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if idx == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 6 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected at least 6 fields, got {}", f.len()),
                });
            }
            let num = |s: &str| -> Result<u64> {
                s.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid number {s:?}"),
                })
            };
            let next_set = f[4]
                .split('|')
                .filter(|s| !s.is_empty())
                .map(|s| num(s).map(|v| v as Config))
                .collect::<Result<Vec<_>>>()?;
            hist.push(DecisionPoint {
                thread: num(f[1])? as usize,
                time: num(f[2])?,
                config: num(f[3])? as Config,
                next_set,
                next_time: num(f[5])?,
            });
        }
        Ok(hist)
    }
}

/// `Next(PastHist, t)`: the earliest pending decision time `>= t` over all
/// threads, lowest thread id first on ties.
pub fn next_decision_point(hist: &PastHist, t: u64) -> Result<(u64, usize)> {
    hist.threads()
        .into_iter()
        .filter_map(|i| hist.last_of(i).map(|p| (p.next_time, i)))
        .filter(|&(time, _)| time >= t)
        .min()
        .ok_or(Error::ScheduleExhausted(t))
}

/// Performance indicators of one thread over its last decision window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerfInd {
    pub mean_queue: f64,
    pub served: u64,
    pub mean_latency: f64,
}

/// The decision function `F`, split so that the second phase cannot see
/// performance data.
pub trait Policy {
    /// Phase 1: the new config, which must lie in `allowed`.
    fn choose_config(
        &self,
        hist: &[DecisionPoint],
        time: u64,
        allowed: &[Config],
        perf: &PerfInd,
    ) -> Config;

    /// Phase 2: the next allowed set and decision time.
    fn plan_next(&self, hist: &[DecisionPoint], time: u64, chosen: Config) -> (Vec<Config>, u64);
}

/// Highest allowed weight when the queue ran above the watermark, lowest
/// otherwise; next set = the chosen weight and its alphabet neighbours;
/// next decision one epoch later.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultPolicy {
    pub alphabet: Vec<Config>,
    pub watermark: f64,
    pub epoch: u64,
}

impl Default for DefaultPolicy {
    fn default() -> Self {
        DefaultPolicy {
            alphabet: ALPHABET.to_vec(),
            watermark: 2.0,
            epoch: 256,
        }
    }
}

impl Policy for DefaultPolicy {
    fn choose_config(&self, _: &[DecisionPoint], _: u64, allowed: &[Config], perf: &PerfInd) -> Config {
        let pick = if perf.mean_queue > self.watermark {
            allowed.iter().max()
        } else {
            allowed.iter().min()
        };
        *pick.expect("allowed set is nonempty")
    }

    fn plan_next(&self, _: &[DecisionPoint], time: u64, chosen: Config) -> (Vec<Config>, u64) {
        let set = match self.alphabet.iter().position(|&c| c == chosen) {
            Some(i) => {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(self.alphabet.len() - 1);
                self.alphabet[lo..=hi].to_vec()
            }
            None => vec![chosen],
        };
        (set, time + self.epoch)
    }
}

/// Replays a fixed list of allowed sets (cycled) and always picks by a
/// fixed rule, whatever the performance data. For scripted runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPolicy {
    pub sets: Vec<Vec<Config>>,
    pub epoch: u64,
    /// Pick the largest allowed config instead of the smallest.
    pub pick_max: bool,
}

impl Policy for ScriptedPolicy {
    fn choose_config(&self, _: &[DecisionPoint], _: u64, allowed: &[Config], _: &PerfInd) -> Config {
        let pick = if self.pick_max { allowed.iter().max() } else { allowed.iter().min() };
        *pick.expect("allowed set is nonempty")
    }

    fn plan_next(&self, hist: &[DecisionPoint], time: u64, _: Config) -> (Vec<Config>, u64) {
        (self.sets[hist.len() % self.sets.len()].clone(), time + self.epoch)
    }
}

/// Running bound `sum_j log2 |C^(j-1)|` per thread, kept as exact set-size
/// multiplicities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LeakageLedger {
    /// thread -> (set size -> decisions taken from a set of that size)
    sizes: BTreeMap<usize, BTreeMap<usize, u64>>,
}

impl LeakageLedger {
    pub fn record(&mut self, thread: usize, set_size: usize) {
        *self.sizes.entry(thread).or_default().entry(set_size).or_insert(0) += 1;
    }

    pub fn decisions(&self, thread: usize) -> u64 {
        self.sizes.get(&thread).map_or(0, |m| m.values().sum())
    }

    pub fn bits(&self, thread: usize) -> Bits {
        self.sizes.get(&thread).map_or(0.0, |m| {
            m.iter().map(|(&s, &n)| n as f64 * choice_bits::<f64>(s)).sum()
        })
    }

    /// Set-size multiplicities of one thread.
    pub fn set_sizes(&self, thread: usize) -> BTreeMap<usize, u64> {
        self.sizes.get(&thread).cloned().unwrap_or_default()
    }

    /// Rebuild the ledger a history implies.
    pub fn from_history(hist: &PastHist) -> Self {
        let mut ledger = LeakageLedger::default();
        let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
        for p in hist.points() {
            if let Some(&n) = prev.get(&p.thread) {
                ledger.record(p.thread, n);
            }
            prev.insert(p.thread, p.next_set.len());
        }
        ledger
    }

    /// `thread,decisions,bits`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("thread,decisions,bits\n");
        for &t in self.sizes.keys() {
            let _ = writeln!(s, "{t},{},{}", self.decisions(t), self.bits(t));
        }
        s
    }
}

/// Bits leaked by termination time, with termination rounded up to a
/// multiple of `2^g`.
pub fn termination_leakage(l_max: f64, g: u32) -> Result<Bits> {
    termination_bits(l_max, g)
}

/// Run phase 1 and phase 2 for `thread` at `decision_time`.
pub fn scheduler_step(
    policy: &dyn Policy,
    hist_i: &[DecisionPoint],
    decision_time: u64,
    perf: &PerfInd,
) -> Result<DecisionPoint> {
    let prev = hist_i
        .last()
        .ok_or_else(|| Error::Config("thread has no initial decision record".into()))?;
    if prev.next_time != decision_time {
        return Err(Error::Config(format!(
            "decision at {decision_time} but thread {} is due at {}",
            prev.thread, prev.next_time
        )));
    }
    let chosen = policy.choose_config(hist_i, decision_time, &prev.next_set, perf);
    if !prev.next_set.contains(&chosen) {
        return Err(Error::ContractViolation {
            chosen,
            allowed: prev.next_set.clone(),
        });
    }
    let (next_set, next_time) = policy.plan_next(hist_i, decision_time, chosen);
    if next_set.is_empty() || next_time <= decision_time {
        return Err(Error::Config(format!(
            "policy planned an empty set or a non-increasing time at {decision_time}"
        )));
    }
    Ok(DecisionPoint {
        thread: prev.thread,
        config: chosen,
        time: decision_time,
        next_set,
        next_time,
    })
}

/// The static slot frame for a config vector: weights reduced by their gcd,
/// each thread a consecutive run of slots, threads in index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub frame: Vec<usize>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn alloc(configs: &[Config]) -> Allocation {
    let g = configs.iter().fold(0u64, |g, &c| gcd(g, c as u64));
    let frame = if g == 0 {
        (0..configs.len()).collect()
    } else {
        configs
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, (c as u64 / g) as usize))
            .collect()
    };
    Allocation { frame }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalProcess {
    /// One request per tick with this probability.
    Bernoulli(f64),
    /// Bernoulli rates that cycle every `phase` ticks.
    Phased { rates: [f64; 2], phase: u64 },
    /// Always at least one request waiting.
    Saturated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadModel {
    pub arrivals: ArrivalProcess,
    /// Blocks owned by the thread; thread `i` uses addresses
    /// `[i * addr_space, (i + 1) * addr_space)`.
    pub addr_space: u64,
    pub initial_config: Config,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocMode {
    /// Unused slots are burnt on dummies.
    Static,
    /// Unused slots go to the next thread in the frame with work. Leaks
    /// load; kept as a negative control.
    WorkConserving,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PraxenSetup {
    pub threads: Vec<ThreadModel>,
    pub sim_ticks: u64,
    /// Ticks between a decision and the moment its config takes effect.
    pub delta: u64,
    pub mode: AllocMode,
}

/// Completed request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceRecord {
    pub thread: usize,
    pub arrival: u64,
    pub finish: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PraxenRun {
    /// Accesses made in each thread's slots, ticks set to the slot.
    pub observed: Vec<ObservedTrace>,
    pub history: PastHist,
    pub ledger: LeakageLedger,
    pub services: Vec<ServiceRecord>,
    /// Ticks at which the allocation frame changed.
    pub alloc_changes: Vec<u64>,
    /// Ticks at which some config was applied (decision time + delta).
    pub applications: Vec<u64>,
}

impl PraxenRun {
    /// Ticks of thread `i`'s real accesses: what it can time itself.
    pub fn service_ticks(&self, thread: usize) -> Vec<u64> {
        self.observed[thread]
            .iter()
            .filter(|a| a.hidden_kind == AccessKind::Real)
            .map(|a| a.tick)
            .collect()
    }

    /// `thread,arrival,finish,latency`.
    pub fn services_csv(&self) -> String {
        let mut s = String::from("thread,arrival,finish,latency\n");
        for r in &self.services {
            let _ = writeln!(s, "{},{},{},{}", r.thread, r.arrival, r.finish, r.finish - r.arrival);
        }
        s
    }
}

struct ThreadState {
    queue: VecDeque<(u64, LogicalAccess)>,
    /// Remaining accesses of the request in service, and its arrival.
    pending: VecDeque<ObservedAccess>,
    pending_arrival: u64,
    rng: SimRng,
    // window since the last decision
    queue_sum: u64,
    window_ticks: u64,
    served: u64,
    latency_sum: u64,
}

impl ThreadState {
    fn perf(&self) -> PerfInd {
        PerfInd {
            mean_queue: if self.window_ticks == 0 {
                0.0
            } else {
                self.queue_sum as f64 / self.window_ticks as f64
            },
            served: self.served,
            mean_latency: if self.served == 0 {
                0.0
            } else {
                self.latency_sum as f64 / self.served as f64
            },
        }
    }

    fn reset_window(&mut self) {
        self.queue_sum = 0;
        self.window_ticks = 0;
        self.served = 0;
        self.latency_sum = 0;
    }

    fn has_work(&self) -> bool {
        !self.pending.is_empty() || !self.queue.is_empty()
    }
}

fn arrives(process: ArrivalProcess, t: u64, queued: usize, rng: &mut SimRng) -> bool {
    match process {
        ArrivalProcess::Bernoulli(p) => rng.random_bool(p.clamp(0.0, 1.0)),
        ArrivalProcess::Phased { rates, phase } => {
            let r = rates[((t / phase.max(1)) % 2) as usize];
            rng.random_bool(r.clamp(0.0, 1.0))
        }
        ArrivalProcess::Saturated => queued == 0,
    }
}

/// Event loop of the partitioned controller.
///
/// Each tick: record decisions due now, apply configs due now (recomputing
/// the frame when the config vector changes), admit arrivals, then serve
/// one access in the slot's owner's name.
pub fn run_praxen<O: Oram + ?Sized>(
    setup: &PraxenSetup,
    oram: &mut O,
    policy: &dyn Policy,
) -> Result<PraxenRun> {
    let n = setup.threads.len();
    if n == 0 {
        return Err(Error::Config("at least one thread is required".into()));
    }
    let mut hist = PastHist::new();
    let mut ledger = LeakageLedger::default();
    let mut configs: Vec<Config> = setup.threads.iter().map(|t| t.initial_config).collect();
    for (i, &c) in configs.iter().enumerate() {
        let (next_set, next_time) = policy.plan_next(&[], 0, c);
        hist.push(DecisionPoint {
            thread: i,
            config: c,
            time: 0,
            next_set,
            next_time,
        });
    }
    let mut states: Vec<ThreadState> = setup
        .threads
        .iter()
        .map(|t| ThreadState {
            queue: VecDeque::new(),
            pending: VecDeque::new(),
            pending_arrival: 0,
            rng: rng::stream(t.seed),
            queue_sum: 0,
            window_ticks: 0,
            served: 0,
            latency_sum: 0,
        })
        .collect();
    let mut allocation = alloc(&configs);
    let mut frame_start = 0u64;
    // (apply_at, thread, config), in decision order
    let mut scheduled: VecDeque<(u64, usize, Config)> = VecDeque::new();
    let mut out = PraxenRun {
        observed: vec![Vec::new(); n],
        history: PastHist::new(),
        ledger: LeakageLedger::default(),
        services: Vec::new(),
        alloc_changes: Vec::new(),
        applications: Vec::new(),
    };
    let mut scratch = Vec::new();

    for t in 0..setup.sim_ticks {
        while let Ok((due, i)) = next_decision_point(&hist, t) {
            if due != t {
                break;
            }
            let hist_i = hist.of_thread(i);
            let prev_size = hist_i.last().expect("initial record").next_set.len();
            let point = scheduler_step(policy, &hist_i, t, &states[i].perf())?;
            states[i].reset_window();
            scheduled.push_back((t + setup.delta, i, point.config));
            ledger.record(i, prev_size);
            hist.push(point);
        }
        let mut changed = false;
        while scheduled.front().is_some_and(|&(at, _, _)| at <= t) {
            let (_, i, c) = scheduled.pop_front().expect("checked");
            out.applications.push(t);
            if configs[i] != c {
                configs[i] = c;
                changed = true;
            }
        }
        out.applications.dedup();
        if changed {
            allocation = alloc(&configs);
            frame_start = t;
            out.alloc_changes.push(t);
        }

        for (i, (model, st)) in setup.threads.iter().zip(states.iter_mut()).enumerate() {
            if arrives(model.arrivals, t, st.queue.len() + st.pending.len(), &mut st.rng) {
                let addr = i as u64 * model.addr_space + st.rng.random_range(0..model.addr_space);
                st.queue.push_back((t, LogicalAccess::read(addr)));
            }
            st.queue_sum += st.queue.len() as u64;
            st.window_ticks += 1;
        }

        let slot_owner = allocation.frame[((t - frame_start) % allocation.frame.len() as u64) as usize];
        let owner = match setup.mode {
            AllocMode::Static => slot_owner,
            AllocMode::WorkConserving => (0..n)
                .map(|d| (slot_owner + d) % n)
                .find(|&i| states[i].has_work())
                .unwrap_or(slot_owner),
        };
        let st = &mut states[owner];
        if st.pending.is_empty() {
            scratch.clear();
            match st.queue.pop_front() {
                Some((arrival, req)) => {
                    oram.serve(&req, &mut scratch)?;
                    st.pending_arrival = arrival;
                }
                None => oram.idle(&mut scratch)?,
            }
            st.pending.extend(scratch.drain(..));
        }
        if let Some(mut a) = st.pending.pop_front() {
            a.tick = t;
            let finished = st.pending.is_empty() && a.hidden_kind != AccessKind::Dummy;
            out.observed[owner].push(a);
            if finished {
                st.served += 1;
                st.latency_sum += t - st.pending_arrival;
                out.services.push(ServiceRecord {
                    thread: owner,
                    arrival: st.pending_arrival,
                    finish: t,
                });
            }
        }
    }
    out.history = hist;
    out.ledger = ledger;
    Ok(out)
}

/// Every recorded choice lies in the set allowed by the thread's previous
/// decision, and decision times follow the plan.
pub fn verify_history(hist: &PastHist) -> bool {
    hist.threads().into_iter().all(|i| {
        hist.of_thread(i).windows(2).all(|w| {
            w[1].time == w[0].next_time
                && w[0].next_set.contains(&w[1].config)
                && w[1].next_time > w[1].time
        })
    })
}

/// Recompute every `(C', t'')` from `(PastHist_i, t, c')` alone.
pub fn replay_phase2(hist: &PastHist, policy: &dyn Policy) -> bool {
    hist.threads().into_iter().all(|i| {
        let h = hist.of_thread(i);
        (0..h.len()).all(|j| {
            let p = &h[j];
            policy.plan_next(&h[..j], p.time, p.config) == (p.next_set.clone(), p.next_time)
        })
    })
}

/// Service times at which an observer with `period` slots per frame sees
/// its gap pattern break: `S_m` with `g_m != g_{m-period}`.
pub fn gap_change_points(service: &[u64], period: usize) -> Vec<usize> {
    let gaps: Vec<u64> = service.windows(2).map(|w| w[1] - w[0]).collect();
    // gaps[k] = S_{k+1} - S_k
    (period..gaps.len())
        .filter(|&k| gaps[k] != gaps[k - period])
        .map(|k| k + 1)
        .collect()
}

/// Each change point `m` must be explained by an application time in
/// `(S_{m-period-1}, S_m]`.
pub fn change_points_explained(service: &[u64], period: usize, applications: &[u64]) -> bool {
    gap_change_points(service, period).into_iter().all(|m| {
        let hi = service[m];
        let lo = service[m - period - 1];
        applications.iter().any(|&a| a > lo && a <= hi)
    })
}
