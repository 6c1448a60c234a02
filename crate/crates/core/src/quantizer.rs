//! The `(s, b)` stochastic quantizer: block-wise randomized level rounding with
//! per-block norms, exact bit accounting and a packed wire codec.
//!
//! Wire payload layout (bits are written LSB-first within each byte):
//!
//! ```text
//! [block norm 0: f32 LE bits] ... [block norm b-1]
//! [sign 0][level 0: w bits] [sign 1][level 1] ... [sign D-1][level D-1]
//! [zero padding to the next byte]
//! ```
//!
//! where `w = ceil(log2(s + 1))` and a sign bit of 1 means negative. The framed
//! form used by [`serialize`] prefixes a 28-byte header:
//! `dim: u32, s: u32, b: u32, sender: u64, step: u64`, all little-endian.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ParameterVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    levels: u32,
    blocks: usize,
    dim: usize,
}

impl QuantizerSpec {
    pub fn new(levels: u32, blocks: usize, dim: usize) -> Result<Self> {
        if levels < 1 {
            return Err(Error::invalid("quantizer level count s must be >= 1"));
        }
        if dim < 1 {
            return Err(Error::invalid("quantizer dimension D must be >= 1"));
        }
        if blocks < 1 || blocks > dim {
            return Err(Error::invalid(format!(
                "quantizer block count b must satisfy 1 <= b <= D (b={blocks}, D={dim})"
            )));
        }
        Ok(QuantizerSpec {
            levels,
            blocks,
            dim,
        })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Contiguous, near-uniform partition of `0..D`; the first `D mod b`
    /// blocks hold one extra coordinate.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let base = self.dim / self.blocks;
        let extra = self.dim % self.blocks;
        let mut start = 0;
        (0..self.blocks)
            .map(|l| {
                let len = base + usize::from(l < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    /// `ceil(D / b)`, the largest block size.
    pub fn max_block_len(&self) -> usize {
        self.dim.div_ceil(self.blocks)
    }

    /// `sigma_q^2 = min{ ceil(D/b) / s^2, sqrt(ceil(D/b)) / s }`.
    pub fn variance_bound(&self) -> f64 {
        let d = self.max_block_len() as f64;
        let s = f64::from(self.levels);
        (d / (s * s)).min(d.sqrt() / s)
    }

    /// Nominal cost `32 b + D (1 + log2(s + 1))` bits (fractional).
    pub fn nominal_bits(&self) -> f64 {
        32.0 * self.blocks as f64 + self.dim as f64 * (1.0 + (f64::from(self.levels) + 1.0).log2())
    }

    /// Bits used per level on the wire: `ceil(log2(s + 1))`.
    pub fn level_width(&self) -> u32 {
        u32::BITS - self.levels.leading_zeros()
    }

    /// Exact payload size in bits: `32 b + D (1 + ceil(log2(s + 1)))`.
    pub fn wire_bits(&self) -> u64 {
        32 * self.blocks as u64 + self.dim as u64 * (1 + u64::from(self.level_width()))
    }

    pub fn wire_bytes(&self) -> usize {
        self.wire_bits().div_ceil(8) as usize
    }
}

/// An encoded local update: block norms, per-coordinate signs and levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMessage {
    pub sender: u64,
    pub step: u64,
    pub block_norms: Vec<f64>,
    /// `true` marks a negative coordinate.
    pub negative: Vec<bool>,
    pub levels: Vec<u32>,
}

impl QuantizedMessage {
    pub fn with_origin(mut self, sender: u64, step: u64) -> Self {
        self.sender = sender;
        self.step = step;
        self
    }

    pub fn nominal_bits(&self, spec: &QuantizerSpec) -> f64 {
        spec.nominal_bits()
    }

    fn check_against(&self, spec: &QuantizerSpec) -> Result<()> {
        if self.block_norms.len() != spec.blocks {
            return Err(Error::Codec(format!(
                "block count mismatch: message has {}, spec has {}",
                self.block_norms.len(),
                spec.blocks
            )));
        }
        if self.levels.len() != spec.dim || self.negative.len() != spec.dim {
            return Err(Error::Codec(format!(
                "dimension mismatch: message has {}/{} levels/signs, spec has D={}",
                self.levels.len(),
                self.negative.len(),
                spec.dim
            )));
        }
        if let Some(l) = self.levels.iter().find(|&&l| l > spec.levels) {
            return Err(Error::Codec(format!("level {l} exceeds s={}", spec.levels)));
        }
        if let Some(n) = self
            .block_norms
            .iter()
            .find(|n| !(n.is_finite() && **n >= 0.0))
        {
            return Err(Error::Codec(format!("invalid block norm {n}")));
        }
        Ok(())
    }
}

/// Quantizes `u` block by block. Within block `l` with norm `n > 0`, coordinate
/// `i` with `x = |u_i| s / n` in `[m, m+1]` gets level `m + 1` with probability
/// `x - m`, else `m`; a ratio exactly on a level rounds deterministically.
/// Zero-norm blocks encode as all-zero levels.
pub fn quantize<R: Rng + ?Sized>(
    spec: &QuantizerSpec,
    u: &ParameterVector,
    rng: &mut R,
) -> Result<QuantizedMessage> {
    u.check_dim(spec.dim)?;
    u.check_finite()?;
    let values = u.as_slice();
    let s = f64::from(spec.levels);
    let mut block_norms = Vec::with_capacity(spec.blocks);
    let mut negative = Vec::with_capacity(spec.dim);
    let mut levels = Vec::with_capacity(spec.dim);
    for range in spec.block_ranges() {
        let block = &values[range];
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("block norm overflowed".into()));
        }
        block_norms.push(norm);
        for &v in block {
            negative.push(v < 0.0);
            // one draw per coordinate keeps stream consumption input-independent
            let draw: f64 = rng.random();
            if norm == 0.0 {
                levels.push(0);
                continue;
            }
            let x = (v.abs() * s / norm).min(s);
            let m = x.floor().min(s - 1.0);
            let level = if draw < x - m { m + 1.0 } else { m };
            levels.push(level as u32);
        }
    }
    Ok(QuantizedMessage {
        sender: 0,
        step: 0,
        block_norms,
        negative,
        levels,
    })
}

/// Reconstructs `norm_l * sign_i * level_i / s` for every coordinate.
pub fn dequantize(msg: &QuantizedMessage, spec: &QuantizerSpec) -> Result<ParameterVector> {
    msg.check_against(spec)?;
    let s = f64::from(spec.levels);
    let mut out = vec![0.0; spec.dim];
    for (range, &norm) in spec.block_ranges().into_iter().zip(&msg.block_norms) {
        for i in range {
            let mag = norm * f64::from(msg.levels[i]) / s;
            out[i] = if msg.negative[i] { -mag } else { mag };
        }
    }
    Ok(ParameterVector::from_raw(out))
}

struct BitWriter {
    bytes: Vec<u8>,
    bit: usize,
}

impl BitWriter {
    fn with_capacity(bytes: usize) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(bytes),
            bit: 0,
        }
    }

    fn push(&mut self, value: u64, width: u32) {
        for k in 0..width {
            if self.bit.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> k) & 1 == 1 {
                *self.bytes.last_mut().expect("byte pushed above") |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl BitReader<'_> {
    fn take(&mut self, width: u32) -> Result<u64> {
        let mut value = 0u64;
        for k in 0..width {
            let byte = self
                .bytes
                .get(self.bit / 8)
                .ok_or_else(|| Error::Codec("truncated payload".into()))?;
            value |= u64::from((byte >> (self.bit % 8)) & 1) << k;
            self.bit += 1;
        }
        Ok(value)
    }
}

/// Packs the message body into exactly [`QuantizerSpec::wire_bytes`] bytes.
/// Block norms are narrowed to `f32`.
pub fn encode_payload(msg: &QuantizedMessage, spec: &QuantizerSpec) -> Result<Vec<u8>> {
    msg.check_against(spec)?;
    let width = spec.level_width();
    let mut w = BitWriter::with_capacity(spec.wire_bytes());
    for &n in &msg.block_norms {
        let narrowed = n as f32;
        if !narrowed.is_finite() {
            return Err(Error::Codec(format!("block norm {n} does not fit in f32")));
        }
        w.push(u64::from(narrowed.to_bits()), 32);
    }
    for (&neg, &level) in msg.negative.iter().zip(&msg.levels) {
        w.push(u64::from(neg), 1);
        w.push(u64::from(level), width);
    }
    debug_assert_eq!(w.bytes.len(), spec.wire_bytes());
    Ok(w.bytes)
}

pub fn decode_payload(bytes: &[u8], spec: &QuantizerSpec) -> Result<QuantizedMessage> {
    if bytes.len() != spec.wire_bytes() {
        return Err(Error::Codec(format!(
            "payload is {} bytes, expected {}",
            bytes.len(),
            spec.wire_bytes()
        )));
    }
    let mut r = BitReader { bytes, bit: 0 };
    let block_norms = (0..spec.blocks)
        .map(|_| r.take(32).map(|b| f64::from(f32::from_bits(b as u32))))
        .collect::<Result<Vec<_>>>()?;
    let width = spec.level_width();
    let mut negative = Vec::with_capacity(spec.dim);
    let mut levels = Vec::with_capacity(spec.dim);
    for _ in 0..spec.dim {
        negative.push(r.take(1)? == 1);
        levels.push(r.take(width)? as u32);
    }
    let used = spec.wire_bits() as usize;
    if !used.is_multiple_of(8) && bytes[used / 8] >> (used % 8) != 0 {
        return Err(Error::Codec("non-zero padding bits".into()));
    }
    let msg = QuantizedMessage {
        sender: 0,
        step: 0,
        block_norms,
        negative,
        levels,
    };
    msg.check_against(spec)?;
    Ok(msg)
}

const HEADER_LEN: usize = 28;

/// Self-describing framing: header (dimension, s, b, sender, step) + payload.
pub fn serialize(msg: &QuantizedMessage, spec: &QuantizerSpec) -> Result<Vec<u8>> {
    let payload = encode_payload(msg, spec)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(spec.dim as u32).to_le_bytes());
    out.extend_from_slice(&spec.levels.to_le_bytes());
    out.extend_from_slice(&(spec.blocks as u32).to_le_bytes());
    out.extend_from_slice(&msg.sender.to_le_bytes());
    out.extend_from_slice(&msg.step.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<(QuantizerSpec, QuantizedMessage)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Codec(format!(
            "buffer of {} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dim = u32_at(0) as usize;
    if dim == 0 {
        return Err(Error::Codec("empty-dimension message".into()));
    }
    let spec = QuantizerSpec::new(u32_at(4), u32_at(8) as usize, dim)
        .map_err(|e| Error::Codec(format!("malformed header: {e}")))?;
    let msg = decode_payload(&bytes[HEADER_LEN..], &spec)?.with_origin(u64_at(12), u64_at(20));
    Ok((spec, msg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, Purpose};
    use proptest::prelude::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(QuantizerSpec::new(0, 1, 4).is_err());
        assert!(QuantizerSpec::new(1, 0, 4).is_err());
        assert!(QuantizerSpec::new(1, 5, 4).is_err());
        assert!(QuantizerSpec::new(1, 4, 0).is_err());
        assert!(QuantizerSpec::new(1, 4, 4).is_ok());
    }

    #[test]
    fn variance_bound_examples() {
        let q = QuantizerSpec::new(17, 1134, 34826).unwrap();
        assert_eq!(q.max_block_len(), 31);
        assert!((q.variance_bound() - 31.0 / 289.0).abs() < 1e-15);
        assert!((q.variance_bound() - 0.10727).abs() < 1e-5);
        for s in [1, 2, 5, 40] {
            let q = QuantizerSpec::new(s, 9, 9).unwrap();
            let s = f64::from(s);
            assert_eq!(q.variance_bound(), 1.0 / (s * s));
        }
        let mut prev = f64::INFINITY;
        for s in [1, 10, 100, 1000, 100_000] {
            let v = QuantizerSpec::new(s, 3, 300).unwrap().variance_bound();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn nominal_bits_examples() {
        assert_eq!(QuantizerSpec::new(3, 2, 100).unwrap().nominal_bits(), 364.0);
        let big = QuantizerSpec::new(17, 1134, 34826).unwrap().nominal_bits();
        assert!((big - (36288.0 + 34826.0 * 18f64.log2() + 34826.0)).abs() < 1e-6);
        assert!((big - 216335.808).abs() < 1e-3);
        for d in [1usize, 7, 64] {
            assert_eq!(
                QuantizerSpec::new(1, 1, d).unwrap().nominal_bits(),
                32.0 + 2.0 * d as f64
            );
        }
    }

    #[test]
    fn wire_size_formula() {
        let q = QuantizerSpec::new(17, 3, 10).unwrap();
        assert_eq!(q.level_width(), 5);
        assert_eq!(q.wire_bits(), 96 + 10 * 6);
        assert_eq!(q.wire_bytes(), 20);
        assert_eq!(QuantizerSpec::new(1, 1, 1).unwrap().level_width(), 1);
        assert_eq!(QuantizerSpec::new(3, 1, 1).unwrap().level_width(), 2);
        assert_eq!(QuantizerSpec::new(4, 1, 1).unwrap().level_width(), 3);
        assert_eq!(QuantizerSpec::new(7, 1, 1).unwrap().level_width(), 3);
    }

    #[test]
    fn partition_sizes() {
        let q = QuantizerSpec::new(1, 3, 10).unwrap();
        let lens: Vec<usize> = q.block_ranges().iter().map(|r| r.len()).collect();
        assert_eq!(lens, vec![4, 3, 3]);
    }

    #[test]
    fn three_four_outcomes() {
        // u = (3,4), s = 1, b = 1: coordinate 1 is 5 w.p. 0.6, coordinate 2 is 5 w.p. 0.8
        let q = QuantizerSpec::new(1, 1, 2).unwrap();
        let u = pv(&[3.0, 4.0]);
        let mut rng = derive_stream(11, Purpose::Probe, 0, 0).rng();
        let mut hits = [0u32; 2];
        let n = 20_000;
        for _ in 0..n {
            let d = dequantize(&quantize(&q, &u, &mut rng).unwrap(), &q).unwrap();
            for (i, v) in d.as_slice().iter().enumerate() {
                assert!(*v == 0.0 || *v == 5.0);
                hits[i] += u32::from(*v == 5.0);
            }
        }
        let f0 = f64::from(hits[0]) / n as f64;
        let f1 = f64::from(hits[1]) / n as f64;
        let se0 = (0.6f64 * 0.4 / n as f64).sqrt();
        let se1 = (0.8f64 * 0.2 / n as f64).sqrt();
        assert!((f0 - 0.6).abs() < 4.0 * se0, "{f0}");
        assert!((f1 - 0.8).abs() < 4.0 * se1, "{f1}");
    }

    #[test]
    fn axis_vector_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in [1, 2, 7, 100] {
            let q = QuantizerSpec::new(s, 1, 3).unwrap();
            for c in [0.1, -2.5, 1e-9, 3.0] {
                let u = pv(&[c, 0.0, 0.0]);
                for _ in 0..20 {
                    let d = dequantize(&quantize(&q, &u, &mut rng).unwrap(), &q).unwrap();
                    assert_eq!(d, u);
                }
            }
        }
    }

    #[test]
    fn zero_vector_quantizes_to_zero() {
        let q = QuantizerSpec::new(5, 2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = quantize(&q, &ParameterVector::zeros(6), &mut rng).unwrap();
        assert!(m.levels.iter().all(|&l| l == 0));
        assert_eq!(dequantize(&m, &q).unwrap(), ParameterVector::zeros(6));
    }

    #[test]
    fn non_finite_input_rejected() {
        let q = QuantizerSpec::new(1, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = ParameterVector::from_raw(vec![1.0, f64::NAN]);
        assert!(quantize(&q, &bad, &mut rng).is_err());
        let huge = pv(&[f64::MAX, f64::MAX]);
        assert!(quantize(&q, &huge, &mut rng).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let q = QuantizerSpec::new(1, 1, 2).unwrap();
        let msg = QuantizedMessage {
            sender: 0,
            step: 0,
            block_norms: vec![5.0],
            negative: vec![false, false],
            levels: vec![1, 1],
        };
        assert_eq!(dequantize(&msg, &q).unwrap().as_slice(), &[5.0, 5.0]);
        let zero = QuantizedMessage {
            levels: vec![0, 0],
            ..msg.clone()
        };
        assert_eq!(dequantize(&zero, &q).unwrap().as_slice(), &[0.0, 0.0]);
        let bad_level = QuantizedMessage {
            levels: vec![2, 0],
            ..msg.clone()
        };
        assert!(dequantize(&bad_level, &q).is_err());
        let bad_blocks = QuantizedMessage {
            block_norms: vec![5.0, 1.0],
            ..msg
        };
        assert!(dequantize(&bad_blocks, &q).is_err());
    }

    #[test]
    fn lattice_inputs_round_trip_exactly() {
        // ratios |u_i| / ||u_block|| that sit exactly on levels m/s
        let cases: [(u32, usize, &[f64]); 4] = [
            (5, 1, &[3.0, -4.0]),
            (5, 2, &[3.0, 4.0, 0.0, -6.0]),
            (13, 1, &[5.0, 0.0, -12.0]),
            (10, 1, &[-6.0, 8.0, 0.0, 0.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (s, b, values) in cases {
            let q = QuantizerSpec::new(s, b, values.len()).unwrap();
            let u = pv(values);
            for _ in 0..50 {
                let d = dequantize(&quantize(&q, &u, &mut rng).unwrap(), &q).unwrap();
                assert_eq!(d, u, "s={s} b={b}");
            }
        }
    }

    #[test]
    fn decoded_coordinates_bracket_the_input() {
        let q = QuantizerSpec::new(3, 2, 5).unwrap();
        let u = pv(&[0.3, -1.2, 0.7, 2.0, -0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = 3.0;
        for _ in 0..200 {
            let d = dequantize(&quantize(&q, &u, &mut rng).unwrap(), &q).unwrap();
            for (range, block_norm) in q
                .block_ranges()
                .into_iter()
                .zip([(0.09f64 + 1.44 + 0.49).sqrt(), (4.0f64 + 0.01).sqrt()])
            {
                for i in range {
                    let r = u.as_slice()[i].abs() / block_norm * s;
                    let lo = r.floor() * block_norm / s;
                    let hi = (r.floor() + 1.0) * block_norm / s;
                    let got = d.as_slice()[i].abs();
                    assert!(
                        (got - lo).abs() < 1e-12 || (got - hi).abs() < 1e-12,
                        "coord {i}: {got} not in {{{lo}, {hi}}}"
                    );
                    if got != 0.0 {
                        assert_eq!(d.as_slice()[i].signum(), u.as_slice()[i].signum());
                    }
                }
            }
        }
    }

    #[test]
    fn codec_rejects_malformed_buffers() {
        let q = QuantizerSpec::new(3, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let msg = quantize(&q, &pv(&[1.0, 2.0, 3.0, 4.0, 5.0]), &mut rng).unwrap();
        let bytes = serialize(&msg, &q).unwrap();
        assert!(deserialize(&bytes[..bytes.len() - 1]).is_err());
        assert!(deserialize(&bytes[..10]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(deserialize(&extra).is_err());
        let mut zero_dim = bytes.clone();
        zero_dim[0..4].copy_from_slice(&0u32.to_le_bytes());
        assert!(deserialize(&zero_dim).is_err());
        // s = 0 in the header is not a valid quantizer
        let mut bad_s = bytes.clone();
        bad_s[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(deserialize(&bad_s).is_err());
        // padding: 2*32 + 5*3 = 79 bits -> last bit is padding
        let mut pad = bytes;
        *pad.last_mut().unwrap() |= 0x80;
        assert!(deserialize(&pad).is_err());
    }

    #[test]
    fn level_above_s_on_the_wire_is_rejected() {
        // s = 2 uses 2 bits per level, so the value 3 is representable but invalid
        let q = QuantizerSpec::new(2, 1, 1).unwrap();
        let msg = QuantizedMessage {
            sender: 0,
            step: 0,
            block_norms: vec![1.0],
            negative: vec![false],
            levels: vec![2],
        };
        let mut payload = encode_payload(&msg, &q).unwrap();
        // level bits sit at positions 33..35
        payload[4] |= 0b110;
        assert!(decode_payload(&payload, &q).is_err());
    }

    fn arb_message() -> impl Strategy<Value = (QuantizerSpec, QuantizedMessage)> {
        (1u32..40, 1usize..70)
            .prop_flat_map(|(s, d)| (Just(s), Just(d), 1..=d))
            .prop_flat_map(|(s, d, b)| {
                (
                    Just(QuantizerSpec::new(s, b, d).unwrap()),
                    proptest::collection::vec(0.0f32..1e6, b),
                    proptest::collection::vec(any::<bool>(), d),
                    proptest::collection::vec(0..=s, d),
                    any::<u64>(),
                    any::<u64>(),
                )
            })
            .prop_map(|(spec, norms, negative, levels, sender, step)| {
                let msg = QuantizedMessage {
                    sender,
                    step,
                    block_norms: norms.into_iter().map(f64::from).collect(),
                    negative,
                    levels,
                };
                (spec, msg)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn codec_round_trip_is_bit_exact((spec, msg) in arb_message()) {
            let bytes = serialize(&msg, &spec).unwrap();
            prop_assert_eq!(bytes.len(), 28 + spec.wire_bytes());
            let (spec2, back) = deserialize(&bytes).unwrap();
            prop_assert_eq!(spec2, spec);
            prop_assert_eq!(&back, &msg);
            prop_assert_eq!(serialize(&back, &spec2).unwrap(), bytes);
        }

        #[test]
        fn quantized_messages_reencode_stably(
            values in proptest::collection::vec(-100.0f64..100.0, 1..40),
            s in 1u32..20,
            seed in any::<u64>(),
        ) {
            let d = values.len();
            let spec = QuantizerSpec::new(s, d.div_ceil(3), d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let msg = quantize(&spec, &pv(&values), &mut rng).unwrap();
            let payload = encode_payload(&msg, &spec).unwrap();
            let back = decode_payload(&payload, &spec).unwrap();
            prop_assert_eq!(&back.levels, &msg.levels);
            prop_assert_eq!(encode_payload(&back, &spec).unwrap(), payload);
        }

        #[test]
        fn partition_is_exact(d in 1usize..500, b_frac in 0.0f64..1.0) {
            let b = 1 + ((d - 1) as f64 * b_frac) as usize;
            let spec = QuantizerSpec::new(1, b, d).unwrap();
            let ranges = spec.block_ranges();
            prop_assert_eq!(ranges.len(), b);
            prop_assert_eq!(ranges[0].start, 0);
            prop_assert_eq!(ranges[b - 1].end, d);
            for w in ranges.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            let lens: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
            let lo = *lens.iter().min().unwrap();
            let hi = *lens.iter().max().unwrap();
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(lo, d / b);
            prop_assert_eq!(hi, spec.max_block_len());
        }
    }
}
