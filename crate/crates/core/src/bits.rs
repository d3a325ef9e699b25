//! Bit-sequence helpers. Bits are ordered most significant first within each
//! byte.

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|b| (0..8).map(move |i| b & (0x80 >> i) != 0))
        .collect()
}

/// Packs bits into bytes; a trailing partial byte is zero-padded on the right.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| if b { acc | (0x80 >> i) } else { acc })
        })
        .collect()
}

/// The `len` low bits of `value`, most significant first.
pub fn uint_to_bits(value: u64, len: usize) -> Vec<bool> {
    (0..len).rev().map(|i| (value >> i) & 1 == 1).collect()
}

pub fn bits_to_uint(bits: &[bool]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first() {
        assert_eq!(bytes_to_bits(&[0xa0]), [true, false, true, false, false, false, false, false]);
        assert_eq!(bits_to_bytes(&[true, true]), vec![0xc0]);
        assert_eq!(uint_to_bits(5, 4), [false, true, false, true]);
        assert_eq!(bits_to_uint(&[true, false, true]), 5);
    }
}
