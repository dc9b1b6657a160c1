//! On-disk tensor format.
//!
//! A tensor record is the magic bytes `UFOT`, one JSON header line
//! `{"dims":[..],"dtype":"f32","byte-order":"LE"}` terminated by `\n`, then
//! the raw row-major `f32` little-endian payload. Multi-tensor files (model
//! checkpoints, trimmed models, predictor state) are a JSON manifest line
//! that lists tensor names, followed by one record per name in that order.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"UFOT";

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    dtype: String,
    #[serde(rename = "byte-order")]
    byte_order: String,
}

/// Writes one tensor record. Values are narrowed to `f32`.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    let header = Header {
        dims: t.shape().to_vec(),
        dtype: "f32".to_string(),
        byte_order: "LE".to_string(),
    };
    let mut line = serde_json::to_vec(&header)?;
    line.push(b'\n');
    w.write_all(&line)?;
    let mut payload = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

fn read_line<R: Read>(r: &mut R, what: &str) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(CoreError::Format(format!("truncated {what} header line")));
        }
        if byte[0] == b'\n' {
            return Ok(line);
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(CoreError::Format(format!("unterminated {what} header line")));
        }
    }
}

/// Reads one tensor record written by [`write_tensor`].
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Format("missing tensor magic".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Format(format!(
            "bad tensor magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let line = read_line(r, "tensor")?;
    let header: Header = serde_json::from_slice(&line)?;
    if header.dtype != "f32" {
        return Err(CoreError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    if header.byte_order != "LE" {
        return Err(CoreError::Format(format!(
            "unsupported byte order {}",
            header.byte_order
        )));
    }
    let n: usize = header.dims.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)
        .map_err(|_| CoreError::Format(format!("truncated payload, wanted {} bytes", n * 4)))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Tensor::new(header.dims, data)
}

#[derive(Serialize, Deserialize)]
struct ArchiveManifest<M> {
    manifest: M,
    tensors: Vec<String>,
}

/// Writes a manifest line followed by named tensor records.
pub fn write_archive<W: Write, M: Serialize>(
    w: &mut W,
    manifest: &M,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let wrapper = ArchiveManifest {
        manifest,
        tensors: tensors.iter().map(|(n, _)| n.clone()).collect(),
    };
    let mut line = serde_json::to_vec(&wrapper)?;
    line.push(b'\n');
    w.write_all(&line)?;
    for (_, t) in tensors {
        write_tensor(w, t)?;
    }
    Ok(())
}

/// Reads a manifest and its named tensors, in file order.
pub fn read_archive<R: Read, M: DeserializeOwned>(r: &mut R) -> Result<(M, Vec<(String, Tensor)>)> {
    let line = read_line(r, "archive")?;
    let wrapper: ArchiveManifest<M> = serde_json::from_slice(&line)?;
    let mut tensors = Vec::with_capacity(wrapper.tensors.len());
    for name in wrapper.tensors {
        let t = read_tensor(r)?;
        tensors.push((name, t));
    }
    Ok((wrapper.manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_preserves_f32_values() {
        // Values chosen representable in f32 so the roundtrip is exact.
        let t = Tensor::new(vec![2, 3], vec![1.5, -2.25, 0.0, 8.0, -0.5, 3.75]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn header_is_json_with_pinned_fields() {
        let t = Tensor::zeros(&[2]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"UFOT");
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[4..nl]).unwrap();
        assert_eq!(header["dims"], serde_json::json!([2]));
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["byte-order"], "LE");
    }

    #[test]
    fn bad_magic_and_truncation_are_reported() {
        let t = Tensor::zeros(&[4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(
            read_tensor(&mut wrong.as_slice()),
            Err(CoreError::Format(_))
        ));

        let short = &buf[..buf.len() - 3];
        let err = read_tensor(&mut &short[..]).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn archive_roundtrip_keeps_order_and_manifest() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Meta {
            kind: String,
        }
        let a = Tensor::full(&[2, 2], 1.0);
        let b = Tensor::full(&[3], -2.5);
        let mut buf = Vec::new();
        write_archive(
            &mut buf,
            &Meta { kind: "demo".into() },
            &[("w".to_string(), &a), ("b".to_string(), &b)],
        )
        .unwrap();
        let (meta, tensors): (Meta, _) = read_archive(&mut buf.as_slice()).unwrap();
        assert_eq!(meta, Meta { kind: "demo".into() });
        assert_eq!(tensors[0].0, "w");
        assert_eq!(tensors[1].0, "b");
        assert_eq!(tensors[1].1.data(), &[-2.5, -2.5, -2.5]);
    }
}
