//! Binary checkpoint format.
//!
//! ```text
//! NITS1\n
//! key=value\n ...        UTF-8 header
//! \n                     blank line
//! <params>               float64 little-endian, declaration order
//! <crc>                  CRC-64/ECMA-182 of <params>, u64 little-endian
//! ```
//!
//! Header keys: `dims`, `widths`, `hidden`, `blocks`, `dropout`, `masking`,
//! `seed`, `params`, then `bounds.<i>=lo,hi`, `shift.<i>` and `scale.<i>`
//! per dimension. Floats use shortest round-trip decimal formatting, so a
//! save/load cycle is exact.

use std::collections::BTreeMap;
use std::path::Path;

use crc::{Crc, CRC_64_ECMA_182};

use super::{Masking, NitsModel, WeightModel, WeightModelSpec};
use crate::data::Standardization;
use crate::error::{NitsError, Result};
use crate::pnn::{Bounds, PnnSpec};

pub const MAGIC: &[u8] = b"NITS1\n";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn to_bytes(model: &NitsModel) -> Vec<u8> {
    let wm = model.weight_model().spec();
    let t = model.transform();
    let mut header = String::new();
    let mut put = |k: &str, v: String| {
        header.push_str(k);
        header.push('=');
        header.push_str(&v);
        header.push('\n');
    };
    put("dims", model.dims().to_string());
    put(
        "widths",
        model
            .widths()
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    put("hidden", wm.hidden_dim.to_string());
    put("blocks", wm.residual_blocks.to_string());
    put("dropout", format!("{:?}", wm.dropout_rate));
    put("masking", wm.masking.as_str().to_string());
    put("seed", model.seed().to_string());
    put("params", model.weight_model().param_count().to_string());
    for (i, b) in model.bounds().iter().enumerate() {
        put(&format!("bounds.{i}"), join(&[b.lo, b.hi]));
        put(&format!("shift.{i}"), format!("{:?}", t.shift[i]));
        put(&format!("scale.{i}"), format!("{:?}", t.scale[i]));
    }

    let phi = model.weight_model().phi();
    let mut payload = Vec::with_capacity(phi.len() * 8);
    for v in phi {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out.extend_from_slice(&CRC64.checksum(&payload).to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> NitsError {
    NitsError::Checkpoint(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<NitsModel> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("missing NITS1 magic; not a checkpoint file"))?;
    let split = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("header is not terminated by a blank line"))?;
    let header = std::str::from_utf8(&rest[..split + 1]).map_err(|_| bad("header is not UTF-8"))?;
    let body = &rest[split + 2..];

    let mut kv = BTreeMap::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| bad(format!("header key '{k}' missing")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| bad(format!("header key '{k}' has invalid value '{v}'")))
    }
    let floats =
        |k: &str| -> Result<Vec<f64>> { get(k)?.split(',').map(|s| num::<f64>(k, s)).collect() };

    let dims: usize = num("dims", get("dims")?)?;
    let widths: Vec<usize> = get("widths")?
        .split(',')
        .map(|s| num("widths", s))
        .collect::<Result<_>>()?;
    let hidden: usize = num("hidden", get("hidden")?)?;
    let blocks: usize = num("blocks", get("blocks")?)?;
    let dropout: f64 = num("dropout", get("dropout")?)?;
    let masking: Masking = get("masking")?.parse()?;
    let seed: u64 = num("seed", get("seed")?)?;
    let n_params: usize = num("params", get("params")?)?;

    let mut specs = Vec::with_capacity(dims);
    let mut shift = Vec::with_capacity(dims);
    let mut scale = Vec::with_capacity(dims);
    for i in 0..dims {
        let b = floats(&format!("bounds.{i}"))?;
        if b.len() != 2 {
            return Err(bad(format!("bounds.{i} needs two values")));
        }
        specs.push(PnnSpec::new(widths.clone(), Bounds::new(b[0], b[1])?)?);
        shift.push(num(&format!("shift.{i}"), get(&format!("shift.{i}"))?)?);
        scale.push(num(&format!("scale.{i}"), get(&format!("scale.{i}"))?)?);
    }
    if specs.is_empty() {
        return Err(bad("dims must be at least 1"));
    }

    if body.len() != n_params * 8 + 8 {
        return Err(bad(format!(
            "payload holds {} bytes, expected {} parameters plus checksum",
            body.len(),
            n_params
        )));
    }
    let (payload, crc_bytes) = body.split_at(n_params * 8);
    let stored = u64::from_le_bytes(crc_bytes.try_into().unwrap());
    if CRC64.checksum(payload) != stored {
        return Err(bad("payload checksum mismatch"));
    }
    let phi: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let wm_spec = WeightModelSpec {
        data_dim: dims,
        hidden_dim: hidden,
        residual_blocks: blocks,
        dropout_rate: dropout,
        params_per_dim: specs[0].param_count(),
        masking,
    };
    let wm = WeightModel::from_phi(wm_spec, phi)?;
    NitsModel::from_parts(specs, wm, Standardization::new(shift, scale)?, seed)
}

pub fn save(model: &NitsModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NitsModel> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::random_model;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = random_model(3, Masking::Autoregressive, 21);
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&back), bytes);
        let x = [0.3, -0.2, 1.7];
        assert_eq!(
            m.log_likelihood(&x).unwrap(),
            back.log_likelihood(&x).unwrap()
        );
    }

    #[test]
    fn header_layout() {
        let m = random_model(2, Masking::Independent, 22);
        let bytes = to_bytes(&m);
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(
            text.starts_with("NITS1\ndims=2\nwidths=1,6,6,1\n"),
            "{text}"
        );
        assert!(text.contains("masking=independent\n"));
        assert!(text.contains("bounds.1=-3.0,3.0\n"));
    }

    #[test]
    fn detects_corruption() {
        let m = random_model(2, Masking::Autoregressive, 23);
        let mut bytes = to_bytes(&m);
        bytes[0] = b'X';
        assert!(from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let mut bytes = to_bytes(&m);
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("checksum"));

        let bytes = to_bytes(&m);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
