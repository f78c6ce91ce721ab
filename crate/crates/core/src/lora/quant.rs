use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Largest code magnitude used by the quantizer; codes are stored with an
/// offset of 8 so the full range fits a nibble (`0..=15` ↔ `-8..=7`).
const QMAX: f64 = 7.0;
const OFFSET: i8 = 8;

/// Blockwise absmax 4-bit storage of a frozen matrix.
///
/// Elements are grouped into consecutive row-major blocks; each block keeps
/// its absmax (the step is `absmax / 7`) and one signed 4-bit code per
/// element, packed two to a byte. Zero and the block absmax are exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    shape: Vec<usize>,
    block_size: usize,
    absmax: Vec<f64>,
    #[serde(with = "hex_bytes")]
    packed: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl QuantizedMatrix {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Quantization step of block `b`.
    pub fn scale(&self, b: usize) -> f64 {
        self.absmax[b] / QMAX
    }

    pub fn n_blocks(&self) -> usize {
        self.absmax.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Code in `0..=15` of element `i`.
    pub fn code(&self, i: usize) -> u8 {
        let byte = self.packed[i / 2];
        if i.is_multiple_of(2) {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    /// Payload size in bytes (codes plus scales).
    pub fn storage_bytes(&self) -> usize {
        self.packed.len() + 8 * self.absmax.len()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.block_size as u64).to_le_bytes());
        for s in &self.absmax {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&self.packed);
        out
    }
}

pub fn quantize(w: &Tensor, block_size: usize) -> Result<QuantizedMatrix> {
    if block_size == 0 {
        return Err(Error::Contract("block_size must be at least 1".into()));
    }
    if w.is_empty() {
        return Err(Error::Contract("cannot quantize an empty matrix".into()));
    }
    w.check_finite("quantize input")?;
    let data = w.data();
    let mut maxes = Vec::with_capacity(data.len().div_ceil(block_size));
    let mut packed = vec![0u8; data.len().div_ceil(2)];
    for (bi, block) in data.chunks(block_size).enumerate() {
        let absmax = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = absmax / QMAX;
        maxes.push(absmax);
        for (j, &v) in block.iter().enumerate() {
            let q = if scale == 0.0 {
                0
            } else {
                (v / scale).round().clamp(-QMAX, QMAX) as i8
            };
            let code = (q + OFFSET) as u8;
            let i = bi * block_size + j;
            if i.is_multiple_of(2) {
                packed[i / 2] |= code;
            } else {
                packed[i / 2] |= code << 4;
            }
        }
    }
    Ok(QuantizedMatrix {
        shape: w.shape().to_vec(),
        block_size,
        absmax: maxes,
        packed,
    })
}

pub fn dequantize(q: &QuantizedMatrix) -> Tensor {
    let n = q.len();
    let data = (0..n)
        .map(|i| {
            let level = (q.code(i) as i8 - OFFSET) as f64;
            let absmax = q.absmax[i / q.block_size];
            if level.abs() == QMAX {
                absmax.copysign(level)
            } else {
                level * (absmax / QMAX)
            }
        })
        .collect();
    Tensor::new(q.shape.clone(), data).expect("shape recorded at quantization")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roundtrip_error_within_bound(w: &Tensor, block: usize) -> bool {
        let q = quantize(w, block).unwrap();
        let d = dequantize(&q);
        w.data().chunks(block).zip(d.data().chunks(block)).all(|(orig, back)| {
            let absmax = orig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            orig.iter().zip(back).all(|(a, b)| (a - b).abs() <= absmax / 7.0)
        })
    }

    #[test]
    fn zero_matrix_round_trips_exactly() {
        let w = Tensor::zeros(&[5, 7]);
        assert_eq!(dequantize(&quantize(&w, 4).unwrap()), w);
    }

    #[test]
    fn block_absmax_round_trips_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = Tensor::zeros(&[8, 16]);
        for b in 0..(128 / 32) {
            let i = b * 32 + rng.random_range(0..32);
            w.data_mut()[i] = rng.random_range(-3.0..3.0);
        }
        let back = dequantize(&quantize(&w, 32).unwrap());
        assert_eq!(back, w);
    }

    #[test]
    fn random_normal_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::randn(&[33, 70], 1.0, &mut rng);
        assert!(roundtrip_error_within_bound(&w, DEFAULT_BLOCK_SIZE));
    }

    #[test]
    fn contract_errors() {
        assert!(quantize(&Tensor::zeros(&[2, 2]), 0).is_err());
        assert!(quantize(&Tensor::zeros(&[0, 3]), 4).is_err());
    }

    #[test]
    fn packs_two_codes_per_byte() {
        let w = Tensor::zeros(&[3, 3]);
        let q = quantize(&w, 64).unwrap();
        assert_eq!(q.storage_bytes(), 5 + 8);
        assert!((0..9).all(|i| q.code(i) == 8));
    }

    proptest! {
        #[test]
        fn bound_holds_for_arbitrary_matrices(
            vals in proptest::collection::vec(-1e3f64..1e3, 1..200),
            block in 1usize..80,
        ) {
            let w = Tensor::new(vec![vals.len()], vals).unwrap();
            prop_assert!(roundtrip_error_within_bound(&w, block));
        }
    }
}
