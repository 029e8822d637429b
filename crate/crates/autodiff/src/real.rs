use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of arrays and parameters.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Width in bytes of one serialized element.
    const BYTES: usize;

    fn from_f64c(x: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from the first `BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn from_f64c(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn from_f64c(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}
