//! PGM/PFM image files and the text sidecar describing a measurement geometry.
//!
//! Arrays are written with axis 0 as image rows (height) and axis 1 as
//! columns (width).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::operators::Geometry;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Reads header tokens (magic, numbers) separated by whitespace and comments.
fn header_tokens(reader: &mut impl BufRead, count: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    while tokens.len() < count {
        if reader.read(&mut byte)? == 0 {
            return Err(format_err("truncated header"));
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else {
            current.push(c);
        }
    }
    Ok(tokens)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| format_err(format!("bad {what}: {s:?}")))
}

/// Writes a binary PGM, clamping values to `[0, 1]`. `bits` is 8 or 16.
pub fn write_pgm(path: &Path, image: &Image, bits: u32) -> Result<()> {
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::Param(format!("PGM depth must be 8 or 16, got {bits}"))),
    };
    let (n1, n2) = image.shape();
    let mut out = format!("P5\n{n2} {n1}\n{maxval}\n").into_bytes();
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if bits == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a binary PGM and maps it linearly to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let t = header_tokens(&mut reader, 4)?;
    if t[0] != "P5" {
        return Err(format_err(format!("not a binary PGM (magic {:?})", t[0])));
    }
    let (n2, n1, maxval): (usize, usize, u32) = (parse(&t[1], "width")?, parse(&t[2], "height")?, parse(&t[3], "maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("bad maxval {maxval}")));
    }
    let wide = maxval > 255;
    let mut raw = vec![0u8; n1 * n2 * if wide { 2 } else { 1 }];
    reader.read_exact(&mut raw)?;
    let values: Vec<f64> = if wide {
        raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64).collect()
    } else {
        raw.iter().map(|&b| b as f64 / maxval as f64).collect()
    };
    Image::new(Array2::from_shape_vec((n1, n2), values).map_err(|e| format_err(e.to_string()))?)
}

/// Writes a grayscale little-endian PFM; rows are stored bottom to top.
pub fn write_pfm(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (n1, n2) = values.dim();
    let mut out = format!("Pf\n{n2} {n1}\n-1.0\n").into_bytes();
    for row in values.outer_iter().rev() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Array2<f64>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let t = header_tokens(&mut reader, 4)?;
    if t[0] != "Pf" {
        return Err(format_err(format!("not a grayscale PFM (magic {:?})", t[0])));
    }
    let (n2, n1, scale): (usize, usize, f64) = (parse(&t[1], "width")?, parse(&t[2], "height")?, parse(&t[3], "scale")?);
    if scale == 0.0 {
        return Err(format_err("PFM scale must be nonzero"));
    }
    let mut raw = vec![0u8; n1 * n2 * 4];
    reader.read_exact(&mut raw)?;
    let decode = |c: &[u8]| {
        let b = [c[0], c[1], c[2], c[3]];
        if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    };
    let mut out = Array2::zeros((n1, n2));
    for (r, chunk) in raw.chunks_exact(4 * n2).enumerate() {
        for (c, px) in chunk.chunks_exact(4).enumerate() {
            out[[n1 - 1 - r, c]] = decode(px) as f64;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} contains non-finite values", path.display())));
    }
    Ok(out)
}

pub fn write_image_pfm(path: &Path, image: &Image) -> Result<()> {
    write_pfm(path, image.data())
}

pub fn read_image_pfm(path: &Path) -> Result<Image> {
    Image::new(read_pfm(path)?)
}

/// Reads a PGM or PFM image, chosen by the magic number.
pub fn read_image(path: &Path) -> Result<Image> {
    let mut magic = [0u8; 2];
    fs::File::open(path)?.read_exact(&mut magic)?;
    match &magic {
        b"P5" => read_pgm(path),
        b"Pf" => read_image_pfm(path),
        _ => Err(format_err(format!("{}: unsupported image format", path.display()))),
    }
}

/// Text form of a geometry, one `key = value` per line.
pub fn geometry_to_text(geometry: &Geometry) -> String {
    let (n1, n2) = geometry.grid();
    let mut out = String::new();
    match geometry {
        Geometry::Radon {
            angles_deg, rays, spacing, ..
        } => {
            let angles: Vec<String> = angles_deg.iter().map(|a| a.to_string()).collect();
            out.push_str(&format!("kind = radon\ngrid = {n1}x{n2}\nrays = {rays}\nspacing = {spacing}\n"));
            out.push_str(&format!("angles_deg = {}\n", angles.join(",")));
        }
        Geometry::Downsample { factor, .. } => {
            out.push_str(&format!("kind = downsample\ngrid = {n1}x{n2}\nfactor = {factor}\n"));
        }
        Geometry::Scaled { scale, .. } => {
            out.push_str(&format!("kind = scaled\ngrid = {n1}x{n2}\nscale = {scale}\n"));
        }
    }
    out
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once('x').ok_or_else(|| format_err(format!("grid must be NxM, got {s:?}")))?;
    Ok((parse(a.trim(), "grid")?, parse(b.trim(), "grid")?))
}

pub fn geometry_from_text(text: &str) -> Result<Geometry> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| format_err(format!("expected key = value, got {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| map.get(k).ok_or_else(|| format_err(format!("geometry is missing {k:?}")));
    let grid = parse_grid(get("grid")?)?;
    Ok(match get("kind")?.as_str() {
        "radon" => Geometry::Radon {
            grid,
            angles_deg: get("angles_deg")?
                .split(',')
                .map(|a| parse(a.trim(), "angle"))
                .collect::<Result<_>>()?,
            rays: parse(get("rays")?, "rays")?,
            spacing: parse(get("spacing")?, "spacing")?,
        },
        "downsample" => Geometry::Downsample {
            grid,
            factor: parse(get("factor")?, "factor")?,
        },
        "scaled" => Geometry::Scaled {
            grid,
            scale: parse(get("scale")?, "scale")?,
        },
        other => return Err(format_err(format!("unknown geometry kind {other:?}"))),
    })
}

/// Sidecar path for a data file: `data.pfm` -> `data.pfm.geom`.
pub fn sidecar_path(data_path: &Path) -> std::path::PathBuf {
    let mut s = data_path.as_os_str().to_owned();
    s.push(".geom");
    s.into()
}

/// Writes measurement values as PFM plus the geometry sidecar.
pub fn write_measurement(path: &Path, data: &crate::operators::MeasurementData) -> Result<()> {
    write_pfm(path, &data.values)?;
    let mut f = fs::File::create(sidecar_path(path))?;
    f.write_all(geometry_to_text(&data.geometry).as_bytes())?;
    Ok(())
}

pub fn read_measurement(path: &Path) -> Result<crate::operators::MeasurementData> {
    let values = read_pfm(path)?;
    let geometry = geometry_from_text(&fs::read_to_string(sidecar_path(path))?)?;
    crate::operators::MeasurementData::new(values, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{MeasurementOp, Radon};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("tdm-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn test_image() -> Image {
        Image::from_fn(5, 7, |(i, j)| (i * 7 + j) as f64 / 34.0)
    }

    #[test]
    fn pgm_round_trip() {
        let img = test_image();
        for (bits, tol) in [(8, 0.5 / 255.0), (16, 0.5 / 65535.0)] {
            let p = tmp(&format!("a{bits}.pgm"));
            write_pgm(&p, &img, bits).unwrap();
            let back = read_pgm(&p).unwrap();
            assert_eq!(back.shape(), (5, 7));
            assert!((back.data() - img.data()).iter().all(|d| d.abs() <= tol + 1e-12));
            assert_eq!(read_image(&p).unwrap(), back);
        }
        assert!(write_pgm(&tmp("x.pgm"), &img, 12).is_err());
    }

    #[test]
    fn pfm_layout() {
        let img = test_image();
        let p = tmp("a.pfm");
        write_image_pfm(&p, &img).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"Pf\n7 5\n-1.0\n"));
        // first stored row is the bottom image row
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, img.get(4, 0) as f32);
        let back = read_image(&p).unwrap();
        assert!((back.data() - img.data()).iter().all(|d| d.abs() < 1e-7));
    }

    #[test]
    fn measurement_round_trip() {
        let op = Radon::new((8, 8), vec![0.0, 22.5, 90.0], None).unwrap();
        let data = op.apply(&Image::constant(8, 8, 1.0)).unwrap();
        let p = tmp("sino.pfm");
        write_measurement(&p, &data).unwrap();
        let back = read_measurement(&p).unwrap();
        assert_eq!(back.geometry, data.geometry);
        assert!((&back.values - &data.values).iter().all(|d| d.abs() < 1e-5));
        for g in [Geometry::Downsample { grid: (8, 8), factor: 2 }, Geometry::Scaled { grid: (4, 6), scale: 0.5 }] {
            assert_eq!(geometry_from_text(&geometry_to_text(&g)).unwrap(), g);
        }
        assert!(geometry_from_text("kind = radon\n").is_err());
    }
}
