use sha2::{Digest, Sha256};

/// Derives an independent stream seed from a master seed and a purpose tag,
/// so adding a new consumer never shifts the draws of existing ones.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Rounds half away from zero at `digits` decimal places. All reported
/// percentages go through this exactly once, at render time.
pub fn round_dp(x: f64, digits: u32) -> f64 {
    let p = 10f64.powi(digits as i32);
    (x * p).round() / p
}
