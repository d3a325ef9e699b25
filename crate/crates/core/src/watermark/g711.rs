//! G.711 μ-law companding, used to model the A/D and D/A conversions at the
//! PSTN edge and the PCMU payload on the IP leg.

const BIAS: i32 = 0x84;
const CLIP: i32 = 8159;
const SEG_END: [i32; 8] = [0x3f, 0x7f, 0xff, 0x1ff, 0x3ff, 0x7ff, 0xfff, 0x1fff];

/// Encodes a 16-bit linear sample to a μ-law code word.
pub fn encode(sample: i16) -> u8 {
    let mut pcm = (sample as i32) >> 2;
    let mask = if pcm < 0 {
        pcm = -pcm;
        0x7f
    } else {
        0xff
    };
    let pcm = pcm.min(CLIP) + (BIAS >> 2);
    let seg = SEG_END.iter().position(|&end| pcm <= end).unwrap_or(8) as i32;
    if seg >= 8 {
        return (0x7f ^ mask) as u8;
    }
    let uval = (seg << 4) | ((pcm >> (seg + 1)) & 0x0f);
    (uval ^ mask) as u8
}

/// Decodes a μ-law code word to a 16-bit linear sample.
pub fn decode(code: u8) -> i16 {
    let u = !code as i32;
    let t = (((u & 0x0f) << 3) + BIAS) << ((u & 0x70) >> 4);
    (if u & 0x80 != 0 { BIAS - t } else { t - BIAS }) as i16
}

/// Encode then decode: the value a sample takes after one companding pass.
pub fn requantize(sample: i16) -> i16 {
    decode(encode(sample))
}

pub fn encode_frame(samples: &[i16]) -> Vec<u8> {
    samples.iter().map(|&s| encode(s)).collect()
}

pub fn decode_frame(codes: &[u8]) -> Vec<i16> {
    codes.iter().map(|&c| decode(c)).collect()
}
