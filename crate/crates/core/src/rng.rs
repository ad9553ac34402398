//! Counter-based random streams.
//!
//! Every random variate in the engine is derived from a master seed and the
//! integer coordinates that identify it (realization index, mode index, step
//! index, plus a per-purpose salt). There is no stateful generator: the value
//! at a coordinate tuple is a pure function of the tuple, so results are
//! bit-identical no matter how work is split across threads.
//!
//! The mixer is the SplitMix64 finalizer, applied once per absorbed word.
//! Gaussians come from the Box-Muller transform on two derived uniforms;
//! mapping a 64-bit word to (0,1] caps the tails near 8.5 sigma, far outside
//! anything observable at the ensemble sizes used here.

/// Purpose salts keep independent uses of the same (realization, mode, step)
/// coordinates decorrelated.
pub mod salt {
    pub const WIENER: u64 = 0x57_49_45_4e;
    pub const STOCH_CONV: u64 = 0x53_43_4f_4e;
    pub const INITIAL: u64 = 0x58_49_30_30;
    pub const LIPSCHITZ: u64 = 0x4c_49_50_53;
    pub const BOOTSTRAP: u64 = 0x42_4f_4f_54;
}

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mixes the master seed with a coordinate tuple into one well-scrambled word.
#[inline]
pub fn stream_word(seed: u64, salt: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix64(seed ^ salt);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    h
}

/// Uniform on (0,1]: the open lower end keeps `ln` finite in Box-Muller.
#[inline]
fn unit_open(word: u64) -> f64 {
    ((word >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal variate at a coordinate tuple.
#[inline]
pub fn standard_normal(seed: u64, salt: u64, a: u64, b: u64, c: u64) -> f64 {
    let w1 = stream_word(seed, salt, a, b, c);
    let w2 = mix64(w1 ^ 0xa5a5_a5a5_5a5a_5a5a);
    let u1 = unit_open(w1);
    let u2 = unit_open(w2);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform variate on [0,1) at a coordinate tuple.
#[inline]
pub fn uniform(seed: u64, salt: u64, a: u64, b: u64, c: u64) -> f64 {
    (stream_word(seed, salt, a, b, c) >> 11) as f64 * (1.0 / 9007199254740992.0)
}
