//! Scalar abstraction: all model math is generic over `f32`/`f64`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar used for model parameters, metrics, weights,
/// trust scores and network parameters.
///
/// Adds to [`num_traits::Float`] the pieces the simulator needs: a
/// canonical byte encoding (IEEE-754 little-endian bit patterns, used
/// for ledger hashing and checkpoints) and seeded sampling.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::default::Default
    + std::iter::Sum
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Append the IEEE-754 little-endian bit pattern of `self` to `out`.
    fn write_canonical(self, out: &mut Vec<u8>);

    /// Inverse of [`Scalar::write_canonical`]; `bytes` must hold exactly
    /// one encoded value.
    fn read_canonical(bytes: &[u8]) -> Option<(Self, &[u8])>;

    /// Uniform sample from `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Standard normal sample.
    fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64` (exact for `f64`).
    fn real(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Lossy conversion to `f64` (exact for `f64`).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    fn write_canonical(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn read_canonical(bytes: &[u8]) -> Option<(Self, &[u8])> {
        let (head, rest) = bytes.split_first_chunk::<4>()?;
        Some((f32::from_bits(u32::from_le_bytes(*head)), rest))
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }

    fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    fn write_canonical(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bits().to_le_bytes());
    }

    fn read_canonical(bytes: &[u8]) -> Option<(Self, &[u8])> {
        let (head, rest) = bytes.split_first_chunk::<8>()?;
        Some((f64::from_bits(u64::from_le_bytes(*head)), rest))
    }

    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }

    fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
