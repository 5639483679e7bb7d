//! Key hashing and bucket indexing.

pub const FNV_OFFSET_BASIS: u64 = 14695981039346656037;
pub const FNV_PRIME: u64 = 1099511628211;

/// 64-bit FNV-1a.
#[inline]
pub fn hash(key: &[u8]) -> u64 {
    key.iter()
        .fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Maps a hash onto a table of `len` buckets. `len` must be a power of two.
#[inline]
pub fn bucket_of(hash: u64, len: usize) -> usize {
    debug_assert!(len.is_power_of_two());
    (hash as usize) & (len - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Byte-at-a-time reference written against the published definition,
    // using u128 arithmetic reduced mod 2^64.
    fn reference_fnv1a(bytes: &[u8]) -> u64 {
        let mut h: u128 = 0xcbf2_9ce4_8422_2325;
        for &b in bytes {
            h ^= b as u128;
            h = (h * 0x0100_0000_01b3) % (1u128 << 64);
        }
        h as u64
    }

    #[test]
    fn empty_key_is_offset_basis() {
        assert_eq!(hash(b""), 14695981039346656037);
    }

    #[test]
    fn single_byte_matches_reference() {
        assert_eq!(hash(b"a"), reference_fnv1a(b"a"));
        assert_eq!(hash(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn order_sensitive() {
        assert_ne!(hash(b"ab"), hash(b"ba"));
        assert_eq!(hash(b"ab"), reference_fnv1a(b"ab"));
        assert_eq!(hash(b"ba"), reference_fnv1a(b"ba"));
    }

    #[test]
    fn bucket_masks_low_bits() {
        assert_eq!(bucket_of(13, 8), 5);
        assert_eq!(bucket_of(8, 8), 0);
        assert_eq!(bucket_of(u64::MAX, 1), 0);
        assert_eq!(bucket_of(12345, 1), 0);
    }

    proptest::proptest! {
        #[test]
        fn matches_reference(bytes in proptest::collection::vec(proptest::num::u8::ANY, 0..64)) {
            proptest::prop_assert_eq!(hash(&bytes), reference_fnv1a(&bytes));
        }

        #[test]
        fn bucket_in_range(h in proptest::num::u64::ANY, shift in 0u32..20) {
            let len = 1usize << shift;
            proptest::prop_assert_eq!(bucket_of(h, len), (h % len as u64) as usize);
        }
    }
}
