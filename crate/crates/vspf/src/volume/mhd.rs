//! MetaImage (.mhd + .raw) reader/writer.
//!
//! Supported header subset: ObjectType, NDims=3, DimSize, ElementSpacing,
//! Offset, ElementType in {MET_SHORT, MET_USHORT, MET_FLOAT, MET_DOUBLE},
//! ElementDataFile. Header lines are `Key = Value`, LF or CRLF; the raw
//! payload is little-endian. Integer element types are promoted to f64 on
//! load; volumes are always written as MET_DOUBLE so save/load round-trips
//! are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut ndims: Option<usize> = None;
    let mut dims: Option<[usize; 3]> = None;
    let mut spacing = [1.0f64; 3];
    let mut origin = [0.0f64; 3];
    let mut element_type: Option<String> = None;
    let mut data_file: Option<String> = None;

    for raw_line in text.lines() {
        let line = raw_line.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("malformed line {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(Error::Header(format!("unsupported ObjectType {value}")));
                }
            }
            "NDims" => {
                ndims = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Header(format!("bad NDims {value:?}")))?,
                );
            }
            "DimSize" => dims = Some(parse_triple(value, "DimSize")?),
            "ElementSpacing" => {
                let s = parse_triple_f64(value, "ElementSpacing")?;
                spacing = s;
            }
            "Offset" | "Position" | "Origin" => {
                origin = parse_triple_f64(value, key)?;
            }
            "ElementType" => element_type = Some(value.to_string()),
            "ElementDataFile" => data_file = Some(value.to_string()),
            // Tolerated extras commonly emitted by other tools.
            "BinaryData" | "BinaryDataByteOrderMSB" | "CompressedData" | "TransformMatrix"
            | "CenterOfRotation" | "AnatomicalOrientation" | "ElementNumberOfChannels" => {}
            _ => {}
        }
    }

    if let Some(n) = ndims {
        if n != 3 {
            return Err(Error::Header(format!("NDims {n} unsupported, need 3")));
        }
    }
    let dims = dims.ok_or_else(|| Error::Header("missing DimSize".into()))?;
    let element_type = element_type.ok_or_else(|| Error::Header("missing ElementType".into()))?;
    let data_file = data_file.ok_or_else(|| Error::Header("missing ElementDataFile".into()))?;
    if data_file == "LOCAL" {
        return Err(Error::Header("inline LOCAL payloads not supported".into()));
    }

    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&data_file);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;

    let expected = dims[0] * dims[1] * dims[2];
    let data = decode_elements(&bytes, &element_type, expected)?;
    Volume::new(dims, spacing, origin, data)
}

fn decode_elements(bytes: &[u8], element_type: &str, expected: usize) -> Result<Vec<f64>> {
    let width = match element_type {
        "MET_SHORT" | "MET_USHORT" => 2,
        "MET_FLOAT" => 4,
        "MET_DOUBLE" => 8,
        other => return Err(Error::UnsupportedElementType(other.to_string())),
    };
    if bytes.len() % width != 0 || bytes.len() / width != expected {
        return Err(Error::DataLengthMismatch {
            expected,
            actual: bytes.len() / width,
        });
    }
    let mut data = Vec::with_capacity(expected);
    match element_type {
        "MET_SHORT" => {
            for c in bytes.chunks_exact(2) {
                data.push(i16::from_le_bytes([c[0], c[1]]) as f64);
            }
        }
        "MET_USHORT" => {
            for c in bytes.chunks_exact(2) {
                data.push(u16::from_le_bytes([c[0], c[1]]) as f64);
            }
        }
        "MET_FLOAT" => {
            for c in bytes.chunks_exact(4) {
                data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
            }
        }
        "MET_DOUBLE" => {
            for c in bytes.chunks_exact(8) {
                data.push(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]));
            }
        }
        _ => unreachable!(),
    }
    Ok(data)
}

/// Writes `vol` as a .mhd/.raw pair. The raw file sits next to the header
/// with the same stem and is referenced relatively.
pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::InvalidArgument(format!("bad output path {path:?}")))?
        .to_string_lossy()
        .into_owned();
    let raw_name = format!("{stem}.raw");
    let raw_path = path.with_file_name(&raw_name);

    let header = format!(
        "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n\
         DimSize = {} {} {}\nElementSpacing = {} {} {}\nOffset = {} {} {}\n\
         ElementType = MET_DOUBLE\nElementDataFile = {}\n",
        vol.dims[0],
        vol.dims[1],
        vol.dims[2],
        vol.spacing[0],
        vol.spacing[1],
        vol.spacing[2],
        vol.origin[0],
        vol.origin[1],
        vol.origin[2],
        raw_name
    );
    fs::write(path, header).map_err(|e| Error::io(path, e))?;

    let mut raw = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let mut buf = Vec::with_capacity(vol.data.len() * 8);
    for &v in &vol.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    raw.write_all(&buf).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

fn parse_triple(value: &str, key: &str) -> Result<[usize; 3]> {
    let parts: Vec<_> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Header(format!("{key} needs 3 entries, got {value:?}")));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| Error::Header(format!("{key}: bad integer {p:?}")))?;
    }
    Ok(out)
}

fn parse_triple_f64(value: &str, key: &str) -> Result<[f64; 3]> {
    let parts: Vec<_> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Header(format!("{key} needs 3 entries, got {value:?}")));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| Error::Header(format!("{key}: bad number {p:?}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = Vec::new();
        let mut s = 99u64;
        for _ in 0..8 {
            s = crate::rng::splitmix64(s);
            data.push(f64::from_bits((s >> 12) | 0x3FF0_0000_0000_0000));
        }
        let vol = Volume::new([2, 2, 2], [1.0, 2.0, 3.0], [-0.5, 0.25, 7.0], data).unwrap();
        let p = dir.path().join("vol.mhd");
        save_volume(&vol, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.dims, vol.dims);
        assert_eq!(back.spacing, vol.spacing);
        assert_eq!(back.origin, vol.origin);
        assert_eq!(back.data, vol.data);
    }

    #[test]
    fn zeros_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::constant([2, 2, 2], [1.0; 3], [0.0; 3], 0.0);
        let p = dir.path().join("z.mhd");
        save_volume(&vol, &p).unwrap();
        assert_eq!(load_volume(&p).unwrap(), vol);
    }

    #[test]
    fn spacing_preserved_in_header() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::constant([3, 3, 3], [1.0, 2.0, 3.0], [0.0; 3], 1.0);
        let p = dir.path().join("s.mhd");
        save_volume(&vol, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.spacing, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn short_elements_promote_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("i16.mhd");
        let raw = dir.path().join("i16.raw");
        let mut bytes = Vec::new();
        for v in [0i16, 100, 0, 100, 100, 0, 100, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&raw, bytes).unwrap();
        fs::write(
            &hdr,
            "ObjectType = Image\r\nNDims = 3\r\nDimSize = 2 2 2\r\nElementSpacing = 1 1 1\r\n\
             Offset = 0 0 0\r\nElementType = MET_SHORT\r\nElementDataFile = i16.raw\r\n",
        )
        .unwrap();
        let vol = load_volume(&hdr).unwrap();
        assert_eq!(vol.data, vec![0.0, 100.0, 0.0, 100.0, 100.0, 0.0, 100.0, 0.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("bad.mhd");
        let raw = dir.path().join("bad.raw");
        fs::write(&raw, vec![0u8; 63 * 8]).unwrap();
        fs::write(
            &hdr,
            "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\n\
             Offset = 0 0 0\nElementType = MET_DOUBLE\nElementDataFile = bad.raw\n",
        )
        .unwrap();
        let err = load_volume(&hdr).unwrap_err();
        assert!(err.to_string().contains("data length mismatch"), "{err}");
    }

    #[test]
    fn unsupported_element_type_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("u8.mhd");
        let raw = dir.path().join("u8.raw");
        fs::write(&raw, vec![0u8; 8]).unwrap();
        fs::write(
            &hdr,
            "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\n\
             Offset = 0 0 0\nElementType = MET_UCHAR\nElementDataFile = u8.raw\n",
        )
        .unwrap();
        assert!(matches!(
            load_volume(&hdr).unwrap_err(),
            Error::UnsupportedElementType(_)
        ));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_volume("/nonexistent/nowhere.mhd").is_err());
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let vol = Volume::constant([2, 2, 2], [1.0; 3], [0.0; 3], 0.0);
        assert!(save_volume(&vol, "/nonexistent-dir/out.mhd").is_err());
    }

    #[test]
    fn non_finite_sample_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("nan.mhd");
        let raw = dir.path().join("nan.raw");
        let mut bytes = Vec::new();
        for i in 0..8 {
            let v = if i == 5 { f64::NAN } else { 1.0 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&raw, bytes).unwrap();
        fs::write(
            &hdr,
            "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\n\
             Offset = 0 0 0\nElementType = MET_DOUBLE\nElementDataFile = nan.raw\n",
        )
        .unwrap();
        assert!(matches!(
            load_volume(&hdr).unwrap_err(),
            Error::NonFiniteSample(5)
        ));
    }
}
