//! Small shared helpers: stable hashing and float formatting.

/// FNV-1a 64-bit hash. Used wherever a stable, platform-independent hash is
/// needed (holdout splits, config fingerprints, fixture checksums), so hashed
/// artifacts stay comparable across runs and machines.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Formats a float with the shortest representation that round-trips, e.g.
/// `3.5` stays `3.5` and `3.0` becomes `3`. Architecture encodings and CSV
/// cells rely on this being deterministic.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
