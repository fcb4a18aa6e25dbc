//! Weight file format: `CBFLW1`, layer count (u32 LE), then per layer
//! `input_dim` (u32 LE), `output_dim` (u32 LE), activation code (u8), the
//! row-major weights and then the biases as little-endian f64.

use ndarray::{Array1, Array2};

use super::{Activation, Layer, LayerSpec, MlpParams};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 6] = b"CBFLW1";
const LAYER_HEADER: usize = 4 + 4 + 1;

/// Exact serialized size for a given layer stack.
pub fn serialized_len(specs: &[LayerSpec]) -> usize {
    MAGIC.len() + 4 + specs.iter().map(|s| LAYER_HEADER + 8 * s.parameter_count()).sum::<usize>()
}

pub fn serialize_params<T: Scalar>(params: &MlpParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_len(&params.specs()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.depth() as u32).to_le_bytes());
    for layer in params.layers() {
        out.extend_from_slice(&(layer.spec.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.spec.output_dim as u32).to_le_bytes());
        out.push(layer.spec.activation.code());
        for v in layer.weights.iter().chain(layer.biases.iter()) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::parse(None, format!("truncated weight file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "parameter")?.try_into().expect("8 bytes")))
    }
}

pub fn deserialize_params<T: Scalar>(bytes: &[u8]) -> Result<MlpParams<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::parse(None, "bad magic bytes"));
    }
    let depth = r.u32("layer count")? as usize;
    if depth == 0 {
        return Err(Error::parse(None, "weight file declares zero layers"));
    }
    let mut layers = Vec::with_capacity(depth.min(1024));
    for _ in 0..depth {
        let input_dim = r.u32("input_dim")? as usize;
        let output_dim = r.u32("output_dim")? as usize;
        let code = r.take(1, "activation")?[0];
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::parse(None, format!("unknown activation code {code}")))?;
        let spec = LayerSpec::new(input_dim, output_dim, activation);
        // refuse sizes the remaining bytes cannot hold before allocating
        let needed = spec.parameter_count().checked_mul(8);
        if needed.is_none_or(|n| n > bytes.len() - r.pos) {
            return Err(Error::parse(None, "truncated weight file: layer larger than remaining bytes"));
        }
        let mut w = Vec::with_capacity(input_dim * output_dim);
        for _ in 0..input_dim * output_dim {
            w.push(T::lit(r.f64()?));
        }
        let mut b = Vec::with_capacity(output_dim);
        for _ in 0..output_dim {
            b.push(T::lit(r.f64()?));
        }
        layers.push(Layer {
            spec,
            weights: Array2::from_shape_vec((output_dim, input_dim), w).expect("sized above"),
            biases: Array1::from(b),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(None, format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    MlpParams::new(layers).map_err(|e| Error::parse(None, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use proptest::prelude::*;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(7, 5, Activation::Relu),
            LayerSpec::new(5, 3, Activation::Linear),
            LayerSpec::new(3, 1, Activation::Sigmoid),
        ]
    }

    #[test]
    fn length_is_header_plus_eight_bytes_per_parameter() {
        let p: MlpParams<f64> = init_params(&specs(), 1).unwrap();
        let bytes = serialize_params(&p);
        let header = 6 + 4 + 3 * (4 + 4 + 1);
        assert_eq!(bytes.len(), header + 8 * p.parameter_count());
        assert_eq!(bytes.len(), serialized_len(&p.specs()));
    }

    #[test]
    fn corrupt_inputs_fail_to_parse() {
        assert!(deserialize_params::<f64>(&[]).is_err());
        let p: MlpParams<f64> = init_params(&specs(), 1).unwrap();
        let bytes = serialize_params(&p);
        assert!(deserialize_params::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(deserialize_params::<f64>(&bad).is_err());
        let mut bad_act = bytes.clone();
        bad_act[6 + 4 + 8] = 9;
        assert!(deserialize_params::<f64>(&bad_act).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(deserialize_params::<f64>(&long).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..6) {
            let specs = [LayerSpec::new(4, hidden, Activation::Relu), LayerSpec::new(hidden, 2, Activation::Sigmoid)];
            let p: MlpParams<f64> = init_params(&specs, seed).unwrap();
            let back: MlpParams<f64> = deserialize_params(&serialize_params(&p)).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn f32_round_trip_is_exact(seed in any::<u64>()) {
            let p: MlpParams<f32> = init_params(&specs(), seed).unwrap();
            let back: MlpParams<f32> = deserialize_params(&serialize_params(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
