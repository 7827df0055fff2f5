//! Bit-leakage arithmetic for timing and termination channels.
//!
//! Generic over the floating scalar; the crate root exposes `f64` and `f32`
//! aliases. Set sizes that are powers of two give integral bit counts, which
//! both precisions represent exactly.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar usable for bit quantities.
pub trait BitScalar: Float + FromPrimitive + Debug {}

impl<T: Float + FromPrimitive + Debug> BitScalar for T {}

fn scalar<T: BitScalar>(v: usize) -> T {
    T::from_usize(v).expect("count representable in the scalar type")
}

/// `log2 |set|`: bits needed to name one member of a set of `size` choices.
pub fn choice_bits<T: BitScalar>(size: usize) -> T {
    assert!(size > 0, "choice set must be nonempty");
    scalar::<T>(size).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingLeakageReport<T> {
    /// `|E| log2 |R|`: one rate choice per epoch.
    pub timing_bits: T,
    /// `log2 L_max - g` once termination is rounded up to multiples of `2^g`.
    pub termination_bits: T,
    pub total_bits: T,
}

/// Bits leaked by choosing one of `rates` rates at each of `epochs` epochs.
pub fn timing_bits<T: BitScalar>(epochs: usize, rates: usize) -> Result<T> {
    if epochs == 0 || rates == 0 {
        return Err(Error::Config("epoch and rate counts must be positive".into()));
    }
    Ok(scalar::<T>(epochs) * choice_bits::<T>(rates))
}

/// Bits leaked by the termination time of a program running at most
/// `l_max` ticks when termination is rounded up to the next multiple of `2^g`.
pub fn termination_bits<T: BitScalar>(l_max: T, g: u32) -> Result<T> {
    if l_max.is_nan() || l_max < T::one() {
        return Err(Error::Config("L_max must be at least 1".into()));
    }
    let granule = T::from_u32(2).unwrap().powi(g as i32);
    if granule > l_max {
        return Err(Error::InvalidGranularity { g });
    }
    Ok(l_max.log2() - T::from_u32(g).unwrap())
}

pub fn timing_leakage<T: BitScalar>(
    epochs: usize,
    rates: usize,
    l_max: T,
    g: u32,
) -> Result<TimingLeakageReport<T>> {
    let timing_bits = timing_bits(epochs, rates)?;
    let termination_bits = termination_bits(l_max, g)?;
    Ok(TimingLeakageReport {
        timing_bits,
        termination_bits,
        total_bits: timing_bits + termination_bits,
    })
}

impl<T: BitScalar + std::fmt::Display> TimingLeakageReport<T> {
    pub fn to_csv(&self) -> String {
        format!(
            "component,bits\ntiming,{}\ntermination,{}\ntotal,{}\n",
            self.timing_bits, self.termination_bits, self.total_bits
        )
    }
}
