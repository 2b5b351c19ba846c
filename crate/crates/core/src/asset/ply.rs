//! Binary little-endian PLY serialization in the de-facto 3DGS layout.
//!
//! Reads are lenient (extra float properties are skipped, comments are
//! ignored); writes always emit the canonical property order so that
//! `load . save` is byte-identical for files this module produced.

use super::{normalize_quat, GaussianAsset, SH_COEFFS};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const N_REST: usize = SH_COEFFS - 3;

fn required_properties() -> Vec<String> {
    let mut props = vec![
        "x".to_string(),
        "y".to_string(),
        "z".to_string(),
        "nx".to_string(),
        "ny".to_string(),
        "nz".to_string(),
        "f_dc_0".to_string(),
        "f_dc_1".to_string(),
        "f_dc_2".to_string(),
    ];
    for i in 0..N_REST {
        props.push(format!("f_rest_{i}"));
    }
    props.push("opacity".to_string());
    for i in 0..3 {
        props.push(format!("scale_{i}"));
    }
    for i in 0..4 {
        props.push(format!("rot_{i}"));
    }
    props
}

struct Header {
    count: usize,
    /// Column index of every property in file order.
    columns: Vec<String>,
}

fn read_header_line<R: Read>(reader: &mut R) -> Result<String> {
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(Error::PlyParse("unexpected end of file inside header".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::PlyParse("header line too long".into()));
        }
    }
    String::from_utf8(line)
        .map(|s| s.trim_end_matches('\r').to_string())
        .map_err(|_| Error::PlyParse("non-utf8 header line".into()))
}

fn parse_header<R: Read>(reader: &mut R) -> Result<Header> {
    if read_header_line(reader)? != "ply" {
        return Err(Error::PlyParse("missing 'ply' magic line".into()));
    }
    let format = read_header_line(reader)?;
    if format != "format binary_little_endian 1.0" {
        return Err(Error::PlyParse(format!(
            "unsupported format declaration '{format}' (need binary_little_endian 1.0)"
        )));
    }
    let mut count: Option<usize> = None;
    let mut columns = Vec::new();
    loop {
        let line = read_header_line(reader)?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") | Some("obj_info") => continue,
            Some("element") => {
                let name = parts.next().unwrap_or("");
                if name != "vertex" {
                    return Err(Error::PlyParse(format!("unsupported element '{name}'")));
                }
                if count.is_some() {
                    return Err(Error::PlyParse("duplicate vertex element".into()));
                }
                let c: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::PlyParse("bad vertex count".into()))?;
                count = Some(c);
            }
            Some("property") => {
                if count.is_none() {
                    return Err(Error::PlyParse("property before element".into()));
                }
                let ty = parts.next().unwrap_or("");
                let name = parts.next().unwrap_or("");
                if ty != "float" {
                    return Err(Error::PlyParse(format!(
                        "property '{name}' has unsupported type '{ty}' (need float)"
                    )));
                }
                columns.push(name.to_string());
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::PlyParse(format!("unexpected header keyword '{other}'")))
            }
            None => continue,
        }
    }
    let count = count.ok_or_else(|| Error::PlyParse("missing vertex element".into()))?;
    Ok(Header { count, columns })
}

/// Load a 3DGS asset from a binary little-endian PLY file.
pub fn load_ply(path: &Path) -> Result<GaussianAsset> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let header = parse_header(&mut reader)?;

    let mut index = Vec::with_capacity(required_properties().len());
    for name in required_properties() {
        match header.columns.iter().position(|c| *c == name) {
            Some(p) => index.push(p),
            None => {
                return Err(Error::PlyParse(format!("missing required property '{name}'")))
            }
        }
    }

    let stride = header.columns.len();
    let n = header.count;
    if n == 0 {
        return Err(Error::Invariant("N >= 1 violated: PLY declares zero vertices".into()));
    }

    let mut positions = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacity_logits = Vec::with_capacity(n);
    let mut sh = Vec::with_capacity(n);
    let mut row = vec![0.0f32; stride];

    for rec in 0..n {
        for v in row.iter_mut() {
            *v = reader.read_f32::<LittleEndian>().map_err(|_| {
                Error::PlyParse(format!(
                    "truncated payload: expected {n} records, file ends inside record {rec}"
                ))
            })?;
        }
        let get = |slot: usize| f64::from(row[index[slot]]);
        positions.push([get(0), get(1), get(2)]);
        // Slots 3..6 are normals; stored for schema compatibility, unused.
        let mut coeffs = [0.0f64; SH_COEFFS];
        for c in 0..3 {
            coeffs[c] = get(6 + c);
        }
        for r in 0..N_REST {
            coeffs[3 + r] = get(9 + r);
        }
        sh.push(coeffs);
        opacity_logits.push(get(9 + N_REST));
        log_scales.push([get(10 + N_REST), get(11 + N_REST), get(12 + N_REST)]);
        let q = [get(13 + N_REST), get(14 + N_REST), get(15 + N_REST), get(16 + N_REST)];
        rotations.push(normalize_quat(q).map_err(|_| {
            Error::PlyParse(format!("degenerate quaternion in record {rec}"))
        })?);
    }

    GaussianAsset::new(positions, log_scales, rotations, opacity_logits, sh)
}

/// Save an asset in the canonical binary layout.
pub fn save_ply(asset: &GaussianAsset, path: &Path) -> Result<()> {
    asset.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);

    write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", asset.len())?;
    for name in required_properties() {
        write!(w, "property float {name}\n")?;
    }
    write!(w, "end_header\n")?;

    for i in 0..asset.len() {
        let p = asset.positions()[i];
        for v in p {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for _ in 0..3 {
            w.write_f32::<LittleEndian>(0.0)?; // normals
        }
        for v in asset.sh()[i] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        w.write_f32::<LittleEndian>(asset.opacity_logits()[i] as f32)?;
        for v in asset.log_scales()[i] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for v in asset.rotations()[i] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::random_asset;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("splatmark-ply-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let asset = random_asset(11, 100);
        let p1 = tmp("rt1.ply");
        let p2 = tmp("rt2.ply");
        save_ply(&asset, &p1).unwrap();
        let loaded = load_ply(&p1).unwrap();
        save_ply(&loaded, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn load_normalizes_quaternions() {
        let mut asset = random_asset(12, 1);
        // Force a non-unit quaternion through the unchecked path.
        asset = GaussianAsset::new_unchecked(
            asset.positions().to_vec(),
            asset.log_scales().to_vec(),
            vec![[2.0, 0.0, 0.0, 0.0]],
            asset.opacity_logits().to_vec(),
            asset.sh().to_vec(),
        );
        let p = tmp("quat.ply");
        // save_ply validates, so write through the raw writer path by
        // bypassing validation: construct the file manually.
        {
            let file = File::create(&p).unwrap();
            let mut w = BufWriter::new(file);
            write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex 1\n").unwrap();
            for name in required_properties() {
                write!(w, "property float {name}\n").unwrap();
            }
            write!(w, "end_header\n").unwrap();
            let row: Vec<f32> = {
                let mut row = Vec::new();
                row.extend(asset.positions()[0].iter().map(|&v| v as f32));
                row.extend([0.0f32; 3]);
                row.extend(asset.sh()[0].iter().map(|&v| v as f32));
                row.push(asset.opacity_logits()[0] as f32);
                row.extend(asset.log_scales()[0].iter().map(|&v| v as f32));
                row.extend([2.0f32, 0.0, 0.0, 0.0]);
                row
            };
            for v in row {
                w.write_f32::<LittleEndian>(v).unwrap();
            }
        }
        let loaded = load_ply(&p).unwrap();
        assert_eq!(loaded.rotations()[0], [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let asset = random_asset(13, 10);
        let p = tmp("trunc.ply");
        save_ply(&asset, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // Drop the last record's worth of floats.
        let cut = bytes.len() - 62 * 4;
        std::fs::write(&p, &bytes[..cut]).unwrap();
        let err = load_ply(&p).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("truncated"), "got: {msg}");
    }

    #[test]
    fn missing_property_is_named() {
        let p = tmp("missing.ply");
        let mut content = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for name in required_properties() {
            if name != "opacity" {
                content.push_str(&format!("property float {name}\n"));
            }
        }
        content.push_str("end_header\n");
        let mut bytes = content.into_bytes();
        bytes.extend(std::iter::repeat(0u8).take(61 * 4));
        std::fs::write(&p, &bytes).unwrap();
        let err = load_ply(&p).unwrap_err();
        assert!(format!("{err}").contains("opacity"));
    }

    #[test]
    fn extra_properties_are_skipped() {
        let asset = random_asset(14, 3);
        let p = tmp("extra.ply");
        {
            let file = File::create(&p).unwrap();
            let mut w = BufWriter::new(file);
            write!(w, "ply\nformat binary_little_endian 1.0\nelement vertex 3\n").unwrap();
            write!(w, "property float pad_before\n").unwrap();
            for name in required_properties() {
                write!(w, "property float {name}\n").unwrap();
            }
            write!(w, "end_header\n").unwrap();
            for i in 0..3 {
                w.write_f32::<LittleEndian>(99.0).unwrap();
                for v in asset.positions()[i] {
                    w.write_f32::<LittleEndian>(v as f32).unwrap();
                }
                for _ in 0..3 {
                    w.write_f32::<LittleEndian>(0.0).unwrap();
                }
                for v in asset.sh()[i] {
                    w.write_f32::<LittleEndian>(v as f32).unwrap();
                }
                w.write_f32::<LittleEndian>(asset.opacity_logits()[i] as f32).unwrap();
                for v in asset.log_scales()[i] {
                    w.write_f32::<LittleEndian>(v as f32).unwrap();
                }
                for v in asset.rotations()[i] {
                    w.write_f32::<LittleEndian>(v as f32).unwrap();
                }
            }
        }
        let loaded = load_ply(&p).unwrap();
        assert_eq!(loaded.len(), 3);
        let direct = tmp("extra_direct.ply");
        save_ply(&asset, &direct).unwrap();
        let reference = load_ply(&direct).unwrap();
        assert_eq!(loaded, reference);
    }

    #[test]
    fn save_rejects_invalid_assets() {
        let empty = GaussianAsset::new_unchecked(vec![], vec![], vec![], vec![], vec![]);
        let err = save_ply(&empty, &tmp("never.ply")).unwrap_err();
        assert!(format!("{err}").contains("N >= 1"));

        let mut sh = [0.0; SH_COEFFS];
        sh[0] = f64::INFINITY;
        let bad = GaussianAsset::new_unchecked(
            vec![[0.0; 3]],
            vec![[0.0; 3]],
            vec![[1.0, 0.0, 0.0, 0.0]],
            vec![0.0],
            vec![sh],
        );
        let p = tmp("nonfinite.ply");
        let _ = std::fs::remove_file(&p);
        assert!(save_ply(&bad, &p).is_err());
        // Validation happens before the file is opened.
        assert!(!p.exists());
    }
}
