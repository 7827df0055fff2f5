//! Length-padding wrapper around a non-oblivious RAM.
//!
//! The inner RAM's physical access sequence is encoded as a bit string
//! (2-bit op code then the address, per access) and read as a big-endian
//! integer `x`. The wrapper performs the inner accesses and then pads with
//! reads of address 0 until exactly `x` accesses were made. Distinct inner
//! sequences give distinct lengths, so two inputs only ever produce equal
//! length distributions when their inner sequences coincide, while the
//! inner accesses themselves sit unprotected at the front of the trace.
//!
//! Plans are lazy: `x` is kept as an arbitrary-precision integer and only
//! requested prefixes are produced.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::trace::{AccessKind, LogicalAccess, ObservedAccess, ObservedTrace, Op, BLOCK_BYTES};

/// A RAM that turns a logical trace into a finite physical access sequence.
pub trait InnerRam {
    fn run(&self, trace: &[LogicalAccess]) -> Vec<LogicalAccess>;
}

/// Physical address = logical address.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl InnerRam for PassThrough {
    fn run(&self, trace: &[LogicalAccess]) -> Vec<LogicalAccess> {
        trace.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BogusEncoding {
    pub addr_bits: u32,
    /// Append the full data payload to every record.
    pub include_data: bool,
}

impl Default for BogusEncoding {
    fn default() -> Self {
        BogusEncoding {
            addr_bits: 2,
            include_data: false,
        }
    }
}

impl BogusEncoding {
    fn op_code(op: Op) -> u64 {
        match op {
            Op::Read => 0b01,
            Op::Write => 0b10,
            Op::Halt => 0b11,
        }
    }

    pub fn record_bits(&self) -> u64 {
        2 + self.addr_bits as u64 + if self.include_data { 8 * BLOCK_BYTES as u64 } else { 0 }
    }

    /// Concatenated records read as a big-endian integer.
    pub fn encode(&self, accesses: &[LogicalAccess]) -> Result<BigUint> {
        let mut x = BigUint::zero();
        for a in accesses {
            if self.addr_bits < 64 && a.addr >> self.addr_bits != 0 {
                return Err(Error::AddressOutOfRange {
                    addr: a.addr,
                    space: 1 << self.addr_bits,
                });
            }
            x <<= 2u32;
            x |= BigUint::from(Self::op_code(a.op));
            x <<= self.addr_bits;
            x |= BigUint::from(a.addr);
            if self.include_data {
                x <<= 8 * BLOCK_BYTES;
                x |= BigUint::from_bytes_be(&a.data.0);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedPlan {
    /// The inner RAM's accesses, performed first.
    pub inner_trace: Vec<LogicalAccess>,
    pub x: BigUint,
    /// Always equal to `x`.
    pub total_length: BigUint,
}

/// Wrap `inner` around the finite input `trace`.
pub fn bogus_wrap(
    inner: &impl InnerRam,
    trace: &[LogicalAccess],
    encoding: &BogusEncoding,
) -> Result<PaddedPlan> {
    let inner_trace = inner.run(trace);
    let x = encoding.encode(&inner_trace)?;
    debug_assert!(x >= BigUint::from(inner_trace.len()));
    Ok(PaddedPlan {
        inner_trace,
        total_length: x.clone(),
        x,
    })
}

impl PaddedPlan {
    pub fn padding_length(&self) -> BigUint {
        &self.total_length - BigUint::from(self.inner_trace.len())
    }

    /// Total length as `u64`, if it fits.
    pub fn total_length_u64(&self) -> Option<u64> {
        self.total_length.to_u64()
    }

    /// Observed access at position `i`, assuming `i < total_length`.
    fn at(&self, i: usize) -> ObservedAccess {
        match self.inner_trace.get(i) {
            Some(a) => ObservedAccess {
                tick: i as u64,
                tree: 0,
                leaf: a.addr,
                hidden_kind: AccessKind::Real,
            },
            None => ObservedAccess {
                tick: i as u64,
                tree: 0,
                leaf: 0,
                hidden_kind: AccessKind::Padding,
            },
        }
    }

    /// Lazily stream the whole padded sequence.
    pub fn iter(&self) -> impl Iterator<Item = ObservedAccess> + '_ {
        let total = self.total_length.to_usize().unwrap_or(usize::MAX);
        (0..total).map(|i| self.at(i))
    }
}

/// The first `min(n, x)` accesses of a plan.
pub fn bogus_prefix(plan: &PaddedPlan, n: usize) -> ObservedTrace {
    plan.iter().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Payload;
    use std::collections::HashSet;

    fn enc(bits: u32) -> BogusEncoding {
        BogusEncoding {
            addr_bits: bits,
            include_data: false,
        }
    }

    #[test]
    fn empty_input_has_zero_length() {
        let plan = bogus_wrap(&PassThrough, &[], &enc(2)).unwrap();
        assert!(plan.x.is_zero());
        assert!(bogus_prefix(&plan, 10).is_empty());
    }

    #[test]
    fn single_read_of_address_two() {
        // "01" ++ "10" = 0b0110 = 6
        let plan = bogus_wrap(&PassThrough, &[LogicalAccess::read(2)], &enc(2)).unwrap();
        assert_eq!(plan.x, BigUint::from(6u32));
        assert_eq!(plan.padding_length(), BigUint::from(5u32));
        let p = bogus_prefix(&plan, 3);
        assert_eq!(p.len(), 3);
        assert_eq!((p[0].leaf, p[0].hidden_kind), (2, AccessKind::Real));
        for a in &p[1..] {
            assert_eq!((a.leaf, a.hidden_kind), (0, AccessKind::Padding));
        }
        assert!(bogus_prefix(&plan, 0).is_empty());
        assert_eq!(bogus_prefix(&plan, 100).len(), 6);
    }

    fn all_sequences(max_len: usize, addr_bits: u32) -> Vec<Vec<LogicalAccess>> {
        let addrs = 1u64 << addr_bits;
        let singles: Vec<LogicalAccess> = (0..addrs)
            .flat_map(|a| [LogicalAccess::read(a), LogicalAccess::write(a, Payload::ZERO)])
            .collect();
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for seq in &frontier {
                for a in &singles {
                    let mut s: Vec<LogicalAccess> = seq.clone();
                    s.push(*a);
                    next.push(s);
                }
                let mut h = seq.clone();
                h.push(LogicalAccess::halt());
                out.push(h);
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn length_is_injective_on_short_sequences() {
        let seqs = all_sequences(3, 2);
        // 1 empty + (8 + 64 + 512) access-only + halted variants of length 1..=3
        assert_eq!(seqs.len(), 1 + 8 + 64 + 512 + 1 + 8 + 64);
        let mut seen = HashSet::new();
        for s in &seqs {
            let plan = bogus_wrap(&PassThrough, s, &enc(2)).unwrap();
            assert!(plan.x >= BigUint::from(s.len()));
            assert!(seen.insert(plan.x.clone()), "collision at {s:?}");
        }
    }

    #[test]
    fn data_switch_widens_records() {
        let e = BogusEncoding {
            addr_bits: 2,
            include_data: true,
        };
        let a = [LogicalAccess::write(1, Payload::from_u64(7))];
        let b = [LogicalAccess::write(1, Payload::from_u64(8))];
        assert_ne!(e.encode(&a).unwrap(), e.encode(&b).unwrap());
        assert_eq!(enc(2).encode(&a).unwrap(), enc(2).encode(&b).unwrap());
        assert_eq!(e.record_bits(), 516);
    }

    #[test]
    fn wide_address_rejected() {
        assert!(bogus_wrap(&PassThrough, &[LogicalAccess::read(4)], &enc(2)).is_err());
    }
}
