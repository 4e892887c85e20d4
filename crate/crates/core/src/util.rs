pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mixes a base seed with stream indices (splitmix64 finaliser) so that
/// independent streams never share a generator state.
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    let mut x = base;
    for &s in streams {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(s.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}
