//! Scalar abstraction: every numeric routine in this crate is generic over
//! `f32` / `f64` through this trait. f32 is the training precision, f64 is
//! what the finite-difference gradient checks run in.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Type tag recorded in checkpoints ("f32" / "f64").
    const DTYPE: &'static str;
    /// Width of one element in the checkpoint byte stream.
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shorthand for converting an `f64` literal into the working scalar type.
#[inline]
pub fn s<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 -> scalar conversion")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip_is_exact() {
        let mut buf = Vec::new();
        let x = 0.1f32 + 0.7f32;
        x.write_le(&mut buf);
        assert_eq!(f32::read_le(&buf).to_bits(), x.to_bits());

        let mut buf = Vec::new();
        let y = std::f64::consts::PI;
        y.write_le(&mut buf);
        assert_eq!(f64::read_le(&buf).to_bits(), y.to_bits());
    }
}
