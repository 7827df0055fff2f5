//! Logical and observed access sequences.
//!
//! A [`LogicalTrace`] is what the program asks of memory; an
//! [`ObservedTrace`] is what an ORAM construction puts on the bus. Only the
//! [`AdversaryView`] projection of an observed access may feed a statistic;
//! [`AccessKind`] is ground truth kept for diagnostics.

mod io;
mod llc;
mod workload;

pub use io::{format_observed, format_trace, parse_trace, read_trace_file, write_trace_file};
pub use llc::{llc_filter, LlcConfig, LlcFilter};
pub use workload::{generate, TraceLength, WorkloadIter, WorkloadKind, WorkloadSpec};

use std::fmt;

use crate::error::{Error, Result};

/// Width of a block payload in bytes.
pub const BLOCK_BYTES: usize = 64;

/// Opaque fixed-width block payload.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Payload(pub [u8; BLOCK_BYTES]);

impl Payload {
    pub const ZERO: Payload = Payload([0; BLOCK_BYTES]);

    /// Payload holding `value` big-endian in its low-order bytes.
    pub fn from_u64(value: u64) -> Self {
        let mut bytes = [0u8; BLOCK_BYTES];
        bytes[BLOCK_BYTES - 8..].copy_from_slice(&value.to_be_bytes());
        Payload(bytes)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Parse a hex string as a big-endian number, zero-extended to the block width.
    pub fn from_hex(hex: &str) -> std::result::Result<Self, String> {
        if hex.is_empty() {
            return Err("empty data field".into());
        }
        if hex.len() > 2 * BLOCK_BYTES {
            return Err(format!("data wider than {BLOCK_BYTES} bytes"));
        }
        let digits: Vec<u8> = hex
            .chars()
            .map(|c| {
                c.to_digit(16)
                    .map(|d| d as u8)
                    .ok_or_else(|| format!("invalid hex digit {c:?}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut bytes = [0u8; BLOCK_BYTES];
        // Fill from the least significant nibble upward.
        for (i, d) in digits.iter().rev().enumerate() {
            let byte = BLOCK_BYTES - 1 - i / 2;
            bytes[byte] |= if i % 2 == 0 { *d } else { *d << 4 };
        }
        Ok(Payload(bytes))
    }

    /// Minimal lowercase hex rendering (`"0"` for the zero payload).
    pub fn to_hex(&self) -> String {
        let full: String = self.0.iter().map(|b| format!("{b:02x}")).collect();
        let trimmed = full.trim_start_matches('0');
        if trimmed.is_empty() {
            "0".to_string()
        } else {
            trimmed.to_string()
        }
    }
}

impl Default for Payload {
    fn default() -> Self {
        Payload::ZERO
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload(0x{})", self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
    Halt,
}

/// One program-side request `(op, addr, data)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogicalAccess {
    pub op: Op,
    pub addr: u64,
    pub data: Payload,
}

impl LogicalAccess {
    pub fn read(addr: u64) -> Self {
        LogicalAccess {
            op: Op::Read,
            addr,
            data: Payload::ZERO,
        }
    }

    pub fn write(addr: u64, data: Payload) -> Self {
        LogicalAccess {
            op: Op::Write,
            addr,
            data,
        }
    }

    pub fn halt() -> Self {
        LogicalAccess {
            op: Op::Halt,
            addr: 0,
            data: Payload::ZERO,
        }
    }
}

/// A program access sequence, either materialized or backed by a
/// deterministic generator that can produce any prefix.
#[derive(Debug, Clone, PartialEq)]
pub enum LogicalTrace {
    Finite(Vec<LogicalAccess>),
    Generated(WorkloadSpec),
}

impl LogicalTrace {
    /// Wrap a finite sequence, checking that `Halt` appears at most once and only last.
    pub fn finite(accesses: Vec<LogicalAccess>) -> Result<Self> {
        check_halt_placement(&accesses)?;
        Ok(LogicalTrace::Finite(accesses))
    }

    /// Number of accesses, `None` when unbounded.
    pub fn len(&self) -> Option<usize> {
        match self {
            LogicalTrace::Finite(v) => Some(v.len()),
            LogicalTrace::Generated(spec) => match spec.length {
                TraceLength::Finite(n) => Some(n),
                TraceLength::Unbounded => None,
            },
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = LogicalAccess> + '_> {
        match self {
            LogicalTrace::Finite(v) => Box::new(v.iter().copied()),
            LogicalTrace::Generated(spec) => Box::new(spec.iter()),
        }
    }

    /// The first `n` accesses (fewer if the trace is shorter).
    pub fn prefix(&self, n: usize) -> Vec<LogicalAccess> {
        self.iter().take(n).collect()
    }

    /// `[A]_n` as a finite trace.
    pub fn truncate(&self, n: usize) -> LogicalTrace {
        LogicalTrace::Finite(self.prefix(n))
    }

    /// Materialize a finite trace; errors on an unbounded one.
    pub fn to_vec(&self) -> Result<Vec<LogicalAccess>> {
        match self.len() {
            Some(n) => Ok(self.prefix(n)),
            None => Err(Error::Config("cannot materialize an unbounded trace".into())),
        }
    }
}

pub(crate) fn check_halt_placement(accesses: &[LogicalAccess]) -> Result<()> {
    if let Some(pos) = accesses.iter().position(|a| a.op == Op::Halt) {
        if pos + 1 != accesses.len() {
            return Err(Error::Config(format!(
                "halt at position {pos} is not the last access"
            )));
        }
    }
    Ok(())
}

/// Ground-truth tag of an observed access. Never part of the adversary view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Real,
    Dummy,
    Padding,
}

/// One access as it appears on the memory bus.
///
/// `tree` names the physical region (0 for the data tree, `j` for the
/// level-`j` position-map tree when recursion keeps separate trees); `leaf`
/// is the path label, or the physical address for constructions without a
/// tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservedAccess {
    pub tick: u64,
    pub tree: u16,
    pub leaf: u64,
    pub hidden_kind: AccessKind,
}

/// The adversary-visible projection of an [`ObservedAccess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdversaryView {
    pub tick: u64,
    pub tree: u16,
    pub leaf: u64,
}

impl ObservedAccess {
    pub fn view(&self) -> AdversaryView {
        AdversaryView {
            tick: self.tick,
            tree: self.tree,
            leaf: self.leaf,
        }
    }
}

pub type ObservedTrace = Vec<ObservedAccess>;

/// Strip ground truth from a trace.
pub fn adversary_projection(trace: &[ObservedAccess]) -> Vec<AdversaryView> {
    trace.iter().map(ObservedAccess::view).collect()
}
