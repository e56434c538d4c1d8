//! Deterministic seed derivation.
//!
//! Every source of randomness in a run is seeded from a single base seed
//! mixed with structural indices (repetition, round, batch slot) and a salt
//! naming the consumer. Parallel episodes therefore draw from independent,
//! reproducible streams regardless of scheduling order.

/// Salts naming each consumer of derived randomness.
pub mod salt {
    pub const EPISODE_POLICY: u64 = 0x01;
    pub const EPISODE_ENV: u64 = 0x02;
    pub const MRT_POLICY: u64 = 0x03;
    pub const MRT_ENV: u64 = 0x04;
    pub const SOBOL_ROUND: u64 = 0x05;
    pub const GP_FIT: u64 = 0x06;
    pub const ACQUISITION: u64 = 0x07;
}

/// splitmix64 finalizer; decorrelates structured inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Mixes a base seed with a sequence of indices into a derived seed.
pub fn mix(base: u64, parts: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Seed for the policy rng of episode `(rep, round, slot)`.
pub fn episode_policy_seed(base: u64, rep: u64, round: u64, slot: u64) -> u64 {
    mix(base, &[salt::EPISODE_POLICY, rep, round, slot])
}

/// Seed for the environment rng of episode `(rep, round, slot)`.
pub fn episode_env_seed(base: u64, rep: u64, round: u64, slot: u64) -> u64 {
    mix(base, &[salt::EPISODE_ENV, rep, round, slot])
}
