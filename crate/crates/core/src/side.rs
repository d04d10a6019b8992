//! Reliable side link: range coding of the rounded hyper-latent and the
//! conversion of its bits into channel symbols.
//!
//! Container layout: `b"DSSZ"`, `u8` version, `u32` table hash, `u32`
//! payload bit length, payload. The hash is a CRC-32 over the serialised
//! tables so a model mismatch between the ends fails before decoding.

use log::warn;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::rangecoder::{CdfTable, RangeDecoder, RangeEncoder};
use crate::rate::RateAllocation;

const MAGIC: &[u8; 4] = b"DSSZ";
pub const BITSTREAM_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SideBitstream {
    pub bytes: Vec<u8>,
    pub bit_length: u64,
    /// Each frame's share of `bit_length`, in proportion to its ideal cost.
    pub frame_bits: Vec<f64>,
    pub table_hash: u32,
    /// Values that fell outside their table and were escape-coded.
    pub escapes: usize,
}

impl SideBitstream {
    pub fn to_container(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bytes.len());
        out.extend_from_slice(MAGIC);
        out.push(BITSTREAM_VERSION);
        out.extend_from_slice(&self.table_hash.to_le_bytes());
        out.extend_from_slice(&(self.bit_length as u32).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }
}

pub fn tables_hash(tables: &[CdfTable]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&(tables.len() as u32).to_le_bytes());
    for t in tables {
        h.update(&t.offset.to_le_bytes());
        h.update(&(t.cdf.len() as u32).to_le_bytes());
        for c in &t.cdf {
            h.update(&c.to_le_bytes());
        }
    }
    h.finalize()
}

fn check_tables(shape: &[usize], tables: &[CdfTable]) -> Result<()> {
    if shape.len() != 3 || shape[1] != tables.len() {
        return Err(Error::Shape(format!(
            "side latent {shape:?} needs one table per channel, have {}",
            tables.len()
        )));
    }
    Ok(())
}

/// Range-codes integer-valued `z_hat` (shape `(B, N, T)`), channel `n`
/// under `tables[n]`.
pub fn encode_side(z_hat: &Array3<f64>, tables: &[CdfTable]) -> Result<SideBitstream> {
    check_tables(z_hat.shape(), tables)?;
    let mut enc = RangeEncoder::new();
    let mut escapes = 0;
    let mut ideal = vec![0.0; z_hat.shape()[0]];
    for ((b, n, _), &v) in z_hat.indexed_iter() {
        if v.fract() != 0.0 || !v.is_finite() || v.abs() > i32::MAX as f64 {
            return Err(Error::Bitstream(format!("side value {v} is not a coded integer")));
        }
        let v = v as i32;
        let table = &tables[n];
        ideal[b] += table.cost_bits(v);
        match table.index_of(v) {
            Some(i) => enc.encode_symbol(table, i),
            None => {
                escapes += 1;
                enc.encode_symbol(table, table.escape_index());
                enc.encode_raw32(v as u32);
            }
        }
    }
    if escapes > 0 {
        warn!("{escapes} side values outside table support were escape-coded");
    }
    let (bytes, bit_length) = enc.finish();
    let total: f64 = ideal.iter().sum();
    let frame_bits = ideal
        .iter()
        .map(|&f| if total > 0.0 { bit_length as f64 * f / total } else { 0.0 })
        .collect();
    Ok(SideBitstream {
        bytes,
        bit_length,
        frame_bits,
        table_hash: tables_hash(tables),
        escapes,
    })
}

/// Parses a container and decodes `z_hat` of the given `(B, N, T)` shape.
pub fn decode_side(container: &[u8], tables: &[CdfTable], shape: [usize; 3]) -> Result<Array3<f64>> {
    check_tables(&shape, tables)?;
    if container.len() < HEADER_LEN || &container[..4] != MAGIC {
        return Err(Error::Bitstream("missing DSSZ header".into()));
    }
    if container[4] != BITSTREAM_VERSION {
        return Err(Error::Bitstream(format!(
            "unsupported side bitstream version {}",
            container[4]
        )));
    }
    let hash = u32::from_le_bytes(container[5..9].try_into().expect("4 bytes"));
    let expected = tables_hash(tables);
    if hash != expected {
        return Err(Error::Bitstream(format!(
            "table hash {hash:08x} does not match the local model ({expected:08x})"
        )));
    }
    let bit_length = u32::from_le_bytes(container[9..13].try_into().expect("4 bytes")) as u64;
    let payload = &container[HEADER_LEN..];
    if bit_length > 8 * payload.len() as u64 || 8 * payload.len() as u64 >= bit_length + 8 {
        return Err(Error::Bitstream(format!(
            "bit length {bit_length} inconsistent with {} payload bytes",
            payload.len()
        )));
    }
    let mut dec = RangeDecoder::new(payload);
    let mut out = Array3::zeros(shape);
    for ((_, n, _), v) in out.indexed_iter_mut() {
        let table = &tables[n];
        let i = dec.decode_symbol(table)?;
        *v = if i == table.escape_index() {
            dec.decode_raw32()? as i32 as f64
        } else {
            (table.offset + i as i32) as f64
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthReport {
    pub k_y: usize,
    pub k_z: usize,
    pub k_total: usize,
    pub bits_z: f64,
    pub capacity_bits_per_symbol: f64,
}

/// Ideal-coding capacity `log2(1 + SNR)` per complex symbol.
pub fn capacity_bits_per_symbol(snr_db: f64) -> f64 {
    (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// `K_y = sum k_bar`, `K_z = ceil(bits_z / capacity)`, `K = K_y + K_z`.
pub fn account_bandwidth(alloc: &RateAllocation, bits_z: f64, snr_db: f64) -> Result<BandwidthReport> {
    if !(bits_z.is_finite() && bits_z >= 0.0) {
        return Err(Error::NonFinite(format!("side bits {bits_z}")));
    }
    let capacity = capacity_bits_per_symbol(snr_db);
    // A noiseless link has unbounded capacity and the side bits cost nothing.
    if capacity.is_nan() || capacity <= 0.0 {
        return Err(Error::Channel(format!("no usable capacity at {snr_db} dB")));
    }
    let k_y = alloc.k_y();
    let k_z = (bits_z / capacity).ceil() as usize;
    Ok(BandwidthReport {
        k_y,
        k_z,
        k_total: k_y + k_z,
        bits_z,
        capacity_bits_per_symbol: capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peaked() -> Vec<CdfTable> {
        let pmf = [0.02, 0.08, 0.8, 0.08, 0.02 - 1e-6];
        vec![CdfTable::from_pmf(-2, &pmf).unwrap(); 2]
    }

    #[test]
    fn roundtrip_and_container() {
        let tables = peaked();
        let z = Array3::from_shape_fn((3, 2, 5), |(b, n, t)| ((b + 2 * n + t) % 5) as f64 - 2.0);
        let bs = encode_side(&z, &tables).unwrap();
        let container = bs.to_container();
        assert_eq!(decode_side(&container, &tables, [3, 2, 5]).unwrap(), z);
        assert!(bs.bit_length <= 8 * bs.bytes.len() as u64);
        assert!(8 * (bs.bytes.len() as u64) < bs.bit_length + 8);
        let share: f64 = bs.frame_bits.iter().sum();
        assert!((share - bs.bit_length as f64).abs() < 1e-6);
    }

    #[test]
    fn escapes_survive() {
        let tables = peaked();
        let mut z = Array3::zeros((1, 2, 4));
        z[[0, 1, 2]] = 4000.0;
        z[[0, 0, 0]] = -77.0;
        let bs = encode_side(&z, &tables).unwrap();
        assert_eq!(bs.escapes, 2);
        assert_eq!(decode_side(&bs.to_container(), &tables, [1, 2, 4]).unwrap(), z);
    }

    #[test]
    fn mismatched_tables_are_detected() {
        let tables = peaked();
        let z = Array3::zeros((1, 2, 4));
        let container = encode_side(&z, &tables).unwrap().to_container();
        let mut other = tables.clone();
        other[1].cdf[2] += 1;
        other[1].cdf[3] += 1;
        assert!(matches!(
            decode_side(&container, &other, [1, 2, 4]),
            Err(Error::Bitstream(_))
        ));
        let mut bad = container.clone();
        bad[0] = b'X';
        assert!(decode_side(&bad, &tables, [1, 2, 4]).is_err());
    }

    #[test]
    fn non_integers_are_rejected() {
        let z = Array3::from_elem((1, 2, 1), 0.5);
        assert!(encode_side(&z, &peaked()).is_err());
    }

    #[test]
    fn bandwidth_arithmetic() {
        let alloc = RateAllocation::uniform(100, 0, &[8, 16]).unwrap();
        let r = account_bandwidth(&alloc, 0.0, 10.0).unwrap();
        assert_eq!((r.k_y, r.k_z, r.k_total), (800, 0, 800));
        let r = account_bandwidth(&alloc, 1000.0, 10.0).unwrap();
        assert!((r.capacity_bits_per_symbol - 11f64.log2()).abs() < 1e-12);
        assert_eq!(r.k_z, 290);
        assert_eq!(r.k_total, 1090);
    }
}
