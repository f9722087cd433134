//! Information Bottleneck laboratory.

pub mod attacks;
pub mod ba;
pub mod config;
pub mod data;
pub mod error;
pub mod mi;
pub mod objectives;
pub mod persist;
pub mod plot;
pub mod run;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};

/// Independent child seed for `stream` (splitmix64 of the mixed pair).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
