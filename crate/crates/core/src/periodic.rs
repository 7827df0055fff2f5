//! Timing shaping: one bus access per slot, whatever the request stream does.
//!
//! A slot engine owns one [`Oram`]. At every slot time it puts exactly one
//! access on the bus: the next pending access of a request already in
//! service, else the first access of the oldest waiting request, else a
//! dummy eviction. A request whose service causes several accesses (a
//! recursive walk, evictions ahead of the real access) occupies consecutive
//! slots; one that causes none (a prefetch hit) takes no slot at all.
//!
//! Static mode places slot `k` at `k * o_int`. Dynamic mode splits the run
//! into epochs of fixed slot counts; inside epoch `e` the gap is the rate
//! `r_e` picked from a public set by a [`RateSelector`] that only ever sees
//! the previous epoch's [`EpochStats`].

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::iter::Peekable;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::leakage::{timing_leakage, BitScalar, TimingLeakageReport};
use crate::oram::Oram;
use crate::rng::{stream, SimRng};
use crate::trace::{AccessKind, LogicalAccess, ObservedAccess, ObservedTrace, Op};

/// A logical request and the tick it becomes visible to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedRequest {
    pub arrival: u64,
    pub access: LogicalAccess,
}

/// Every request available at tick 0.
pub fn back_to_back<I>(accesses: I) -> impl Iterator<Item = TimedRequest>
where
    I: IntoIterator<Item = LogicalAccess>,
{
    accesses.into_iter().map(|access| TimedRequest { arrival: 0, access })
}

/// Poisson arrivals: exponential gaps with mean `1 / rate` ticks, rounded up
/// to the next integral tick.
pub struct PoissonArrivals<I> {
    source: I,
    gaps: Exp<f64>,
    rng: SimRng,
    clock: f64,
}

impl<I: Iterator<Item = LogicalAccess>> PoissonArrivals<I> {
    pub fn new(source: I, rate: f64, seed: u64) -> Result<Self> {
        let gaps = Exp::new(rate)
            .ok()
            .filter(|_| rate > 0.0 && rate.is_finite())
            .ok_or_else(|| Error::Config(format!("arrival rate must be positive, got {rate}")))?;
        Ok(PoissonArrivals {
            source,
            gaps,
            rng: stream(seed),
            clock: 0.0,
        })
    }
}

impl<I: Iterator<Item = LogicalAccess>> Iterator for PoissonArrivals<I> {
    type Item = TimedRequest;

    fn next(&mut self) -> Option<TimedRequest> {
        let access = self.source.next()?;
        self.clock += self.gaps.sample(&mut self.rng);
        Some(TimedRequest {
            arrival: self.clock.ceil() as u64,
            access,
        })
    }
}

/// How long a run lasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLength {
    Slots(u64),
    /// Until every request has been served. Requires a finite request stream.
    Drain,
    /// Whichever of `Slots(n)` and `Drain` ends first.
    AtMost(u64),
}

/// Epoch lengths in slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochSchedule(Vec<u64>);

impl EpochSchedule {
    pub fn new(lengths: Vec<u64>) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::Config("epoch lengths must be a nonempty list of positive counts".into()));
        }
        Ok(EpochSchedule(lengths))
    }

    pub fn lengths(&self) -> &[u64] {
        &self.0
    }

    pub fn total_slots(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Allowed gaps between accesses, in ticks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateSet(Vec<u64>);

impl RateSet {
    pub fn new(mut rates: Vec<u64>) -> Result<Self> {
        rates.sort_unstable();
        let distinct = rates.windows(2).all(|w| w[0] != w[1]);
        if rates.is_empty() || rates[0] == 0 || !distinct {
            return Err(Error::Config("rates must be distinct positive tick counts".into()));
        }
        Ok(RateSet(rates))
    }

    /// Ascending: fastest first.
    pub fn rates(&self) -> &[u64] {
        &self.0
    }

    pub fn slowest(&self) -> u64 {
        *self.0.last().expect("nonempty")
    }

    pub fn fastest(&self) -> u64 {
        self.0[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleMode {
    Static,
    DynamicEpochs { epochs: EpochSchedule, rates: RateSet },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodicConfig {
    /// Ticks between consecutive accesses in static mode.
    pub o_int: u64,
    pub mode: ScheduleMode,
}

impl PeriodicConfig {
    pub fn fixed(o_int: u64) -> Self {
        PeriodicConfig {
            o_int,
            mode: ScheduleMode::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.o_int == 0 {
            return Err(Error::Config("o_int must be at least 1".into()));
        }
        Ok(())
    }

    /// Leakage bound of this schedule for programs running at most `l_max`
    /// ticks with termination rounded to `2^g`. Static mode picks one of
    /// one rate once.
    pub fn leakage<T: BitScalar>(&self, l_max: T, g: u32) -> Result<TimingLeakageReport<T>> {
        match &self.mode {
            ScheduleMode::Static => timing_leakage(1, 1, l_max, g),
            ScheduleMode::DynamicEpochs { epochs, rates } => {
                timing_leakage(epochs.lengths().len(), rates.rates().len(), l_max, g)
            }
        }
    }
}

/// Outcome of a shaped run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PeriodicRun {
    /// One access per slot, ticks rewritten to slot times.
    pub trace: ObservedTrace,
    pub real: u64,
    pub dummy: u64,
    /// Requests whose service started.
    pub served: u64,
    /// Sum over served requests of (first slot - arrival).
    pub total_wait: u64,
}

impl PeriodicRun {
    pub fn mean_wait(&self) -> f64 {
        if self.served == 0 {
            0.0
        } else {
            self.total_wait as f64 / self.served as f64
        }
    }
}

/// Aggregate statistics of one finished epoch: the only input a
/// [`RateSelector`] gets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub rate: u64,
    pub slots: u64,
    /// Ticks the epoch spanned.
    pub duration: u64,
    pub arrivals: u64,
    pub real: u64,
    pub dummy: u64,
    /// Waiting requests at the first and after the last slot.
    pub queue_start: u64,
    pub queue_end: u64,
    /// Waiting requests averaged over the epoch's slots.
    pub mean_queue: f64,
}

/// Picks the next epoch's rate.
pub trait RateSelector {
    /// Index into `rates` (ascending) for an epoch of `next_slots` slots.
    fn select(&mut self, finished: &EpochStats, rates: &RateSet, next_slots: u64) -> usize;
}

/// Slowest rate whose projected queue stays, on average, at or below the
/// watermark.
///
/// With arrival rate `a = arrivals / duration` from the finished epoch and
/// `q0` its final queue, a rate `r` over `n` slots projects
/// `q1 = max(0, q0 + a*n*r - n)` and average `(q0 + q1) / 2`. If no rate
/// qualifies, the fastest is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancySelector {
    pub watermark: f64,
}

impl Default for OccupancySelector {
    fn default() -> Self {
        OccupancySelector { watermark: 4.0 }
    }
}

impl RateSelector for OccupancySelector {
    fn select(&mut self, finished: &EpochStats, rates: &RateSet, next_slots: u64) -> usize {
        let arrival_rate = if finished.duration == 0 {
            0.0
        } else {
            finished.arrivals as f64 / finished.duration as f64
        };
        let q0 = finished.queue_end as f64;
        let n = next_slots as f64;
        let fits = |r: u64| {
            let q1 = (q0 + arrival_rate * n * r as f64 - n).max(0.0);
            (q0 + q1) / 2.0 <= self.watermark
        };
        rates
            .rates()
            .iter()
            .rposition(|&r| fits(r))
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicRun {
    pub run: PeriodicRun,
    /// One rate per epoch.
    pub chosen_rates: Vec<u64>,
    pub epochs: Vec<EpochStats>,
}

impl DynamicRun {
    /// `epoch,rate,real,dummy` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,rate,real,dummy\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.rate, e.real, e.dummy);
        }
        s
    }
}

fn not_halt(r: &TimedRequest) -> bool {
    r.access.op != Op::Halt
}

type Admitted<I> = Peekable<std::iter::Filter<I, fn(&TimedRequest) -> bool>>;

struct Engine<'a, O: ?Sized, I: Iterator<Item = TimedRequest>> {
    oram: &'a mut O,
    source: Admitted<I>,
    queue: VecDeque<TimedRequest>,
    pending: VecDeque<ObservedAccess>,
    scratch: ObservedTrace,
    run: PeriodicRun,
    admitted: u64,
    queue_samples: u64,
}

impl<'a, O: Oram + ?Sized, I: Iterator<Item = TimedRequest>> Engine<'a, O, I> {
    fn new(oram: &'a mut O, source: I) -> Self {
        Engine {
            oram,
            // Halt is a no-op for the controller; dropping it lets a drained
            // run end on its last real access.
            source: source
                .filter(not_halt as fn(&TimedRequest) -> bool)
                .peekable(),
            queue: VecDeque::new(),
            pending: VecDeque::new(),
            scratch: Vec::new(),
            run: PeriodicRun::default(),
            admitted: 0,
            queue_samples: 0,
        }
    }

    fn admit(&mut self, t: u64) {
        while let Some(r) = self.source.next_if(|r| r.arrival <= t) {
            self.queue.push_back(r);
            self.admitted += 1;
        }
    }

    fn slot(&mut self, t: u64) -> Result<()> {
        self.admit(t);
        self.queue_samples += self.queue.len() as u64;
        while self.pending.is_empty() {
            self.scratch.clear();
            match self.queue.pop_front() {
                Some(req) => {
                    self.run.served += 1;
                    self.run.total_wait += t.saturating_sub(req.arrival);
                    self.oram.serve(&req.access, &mut self.scratch)?;
                }
                None => self.oram.idle(&mut self.scratch)?,
            }
            self.pending.extend(self.scratch.drain(..));
        }
        let mut a = self.pending.pop_front().expect("filled above");
        a.tick = t;
        match a.hidden_kind {
            AccessKind::Real => self.run.real += 1,
            _ => self.run.dummy += 1,
        }
        self.run.trace.push(a);
        Ok(())
    }

    fn drained(&mut self) -> bool {
        self.pending.is_empty() && self.queue.is_empty() && self.source.peek().is_none()
    }

    fn waiting(&self) -> u64 {
        self.queue.len() as u64
    }
}

/// Static schedule: slot `k` (from 1) at tick `k * o_int`.
pub fn run_periodic<O, I>(oram: &mut O, requests: I, o_int: u64, length: RunLength) -> Result<PeriodicRun>
where
    O: Oram + ?Sized,
    I: IntoIterator<Item = TimedRequest>,
{
    if o_int == 0 {
        return Err(Error::Config("o_int must be at least 1".into()));
    }
    let mut engine = Engine::new(oram, requests.into_iter());
    let mut k = 0u64;
    loop {
        match length {
            RunLength::Slots(n) if k >= n => break,
            RunLength::AtMost(n) if k >= n => break,
            RunLength::Drain | RunLength::AtMost(_) if engine.drained() => break,
            _ => {}
        }
        k += 1;
        engine.slot(k * o_int)?;
    }
    Ok(engine.run)
}

/// Epoch schedule. The first epoch runs at the slowest rate; each later
/// rate comes from `selector` given the previous epoch's statistics.
pub fn run_dynamic<O, I>(
    oram: &mut O,
    requests: I,
    epochs: &EpochSchedule,
    rates: &RateSet,
    selector: &mut dyn RateSelector,
) -> Result<DynamicRun>
where
    O: Oram + ?Sized,
    I: IntoIterator<Item = TimedRequest>,
{
    let mut engine = Engine::new(oram, requests.into_iter());
    let mut out = DynamicRun::default();
    let mut start = 0u64;
    let mut rate = rates.slowest();
    let lengths = epochs.lengths();
    for (e, &slots) in lengths.iter().enumerate() {
        if e > 0 {
            let last = out.epochs.last().expect("previous epoch");
            rate = rates.rates()[selector.select(last, rates, slots)];
        }
        engine.admit(start);
        let queue_start = engine.waiting();
        let (admitted0, samples0) = (engine.admitted, engine.queue_samples);
        let (real0, dummy0) = (engine.run.real, engine.run.dummy);
        for i in 1..=slots {
            engine.slot(start + i * rate)?;
        }
        start += slots * rate;
        out.chosen_rates.push(rate);
        out.epochs.push(EpochStats {
            epoch: e,
            rate,
            slots,
            duration: slots * rate,
            arrivals: engine.admitted - admitted0,
            real: engine.run.real - real0,
            dummy: engine.run.dummy - dummy0,
            queue_start,
            queue_end: engine.waiting(),
            mean_queue: (engine.queue_samples - samples0) as f64 / slots as f64,
        });
    }
    out.run = engine.run;
    Ok(out)
}

/// Distinct inter-access gaps of a trace, ascending.
pub fn gap_set(trace: &[ObservedAccess]) -> Vec<u64> {
    let mut gaps: Vec<u64> = trace.windows(2).map(|w| w[1].tick - w[0].tick).collect();
    gaps.sort_unstable();
    gaps.dedup();
    gaps
}

/// Requests drawn uniformly from `addr_space`, for load generation.
pub fn uniform_requests(addr_space: u64, seed: u64) -> impl Iterator<Item = LogicalAccess> {
    let mut rng = stream(seed);
    std::iter::from_fn(move || Some(LogicalAccess::read(rng.random_range(0..addr_space))))
}
