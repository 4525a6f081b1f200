//! Depth PNG, RGB PNG and "PIEH" flow codecs.

use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType};

use super::{FlowField, Grid, RgbImage, SparseDepth};
use crate::error::{Error, Result};

/// Raw 16-bit units per metre.
pub const DEPTH_SCALE: f64 = 256.0;

/// Largest storable raw value.
pub const MAX_DEPTH_RAW: u32 = 65535;

const FLOW_TAG: &[u8; 4] = b"PIEH";

fn encode_png(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8], what: &'static str) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::format(what, "cannot encode an empty raster"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| Error::format(what, e.to_string()))?;
        writer.write_image_data(data).map_err(|e| Error::format(what, e.to_string()))?;
        writer.finish().map_err(|e| Error::format(what, e.to_string()))?;
    }
    Ok(out)
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode_png(bytes: &[u8], what: &'static str) -> Result<DecodedPng> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::format(what, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(what, "image too large"))?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(|e| Error::format(what, e.to_string()))?;
    data.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// Decodes a 16-bit single-channel PNG: `depth = raw / 256`, raw 0 = invalid.
pub fn decode_depth_png(bytes: &[u8]) -> Result<SparseDepth> {
    let img = decode_png(bytes, "depth PNG")?;
    if img.color != ColorType::Grayscale || img.depth != BitDepth::Sixteen {
        return Err(Error::format(
            "depth PNG",
            format!(
                "expected 16-bit grayscale, got {:?} at {:?} bits",
                img.color, img.depth
            ),
        ));
    }
    let vals = img
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / DEPTH_SCALE)
        .collect();
    SparseDepth::new(Grid::from_vec(img.width, img.height, vals)?)
}

/// Raw value for a depth in metres: nearest integer of `depth·256`, halves
/// rounded away from zero.
pub fn depth_to_raw(depth: f64) -> Result<u16> {
    if depth == 0.0 {
        return Ok(0);
    }
    let raw = (depth * DEPTH_SCALE).round();
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::invalid(format!("depth {depth} is not encodable")));
    }
    if raw > MAX_DEPTH_RAW as f64 {
        return Err(Error::invalid(format!(
            "depth {depth} m exceeds the 16-bit ceiling of {} m",
            MAX_DEPTH_RAW as f64 / DEPTH_SCALE
        )));
    }
    if raw < 1.0 {
        return Err(Error::invalid(format!(
            "depth {depth} m is below the format resolution and would read back as invalid"
        )));
    }
    Ok(raw as u16)
}

pub fn encode_depth_png(depth: &SparseDepth) -> Result<Vec<u8>> {
    let g = depth.grid();
    let mut data = Vec::with_capacity(g.len() * 2);
    for (i, &d) in g.data().iter().enumerate() {
        let raw = depth_to_raw(d).map_err(|e| {
            Error::invalid(format!("pixel ({}, {}): {e}", i % g.width(), i / g.width()))
        })?;
        data.extend_from_slice(&raw.to_be_bytes());
    }
    encode_png(g.width(), g.height(), ColorType::Grayscale, BitDepth::Sixteen, &data, "depth PNG")
}

/// Decodes an 8- or 16-bit RGB(A) PNG into `[0, 1]` values; alpha is dropped.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode_png(bytes, "RGB PNG")?;
    let channels = match img.color {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => {
            return Err(Error::format("RGB PNG", format!("unsupported color type {other:?}")));
        }
    };
    let px: Vec<[f64; 3]> = match img.depth {
        BitDepth::Eight => img
            .data
            .chunks_exact(channels)
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect(),
        BitDepth::Sixteen => img
            .data
            .chunks_exact(2 * channels)
            .map(|p| {
                let c = |k: usize| u16::from_be_bytes([p[2 * k], p[2 * k + 1]]) as f64 / 65535.0;
                [c(0), c(1), c(2)]
            })
            .collect(),
        other => return Err(Error::format("RGB PNG", format!("unsupported bit depth {other:?}"))),
    };
    RgbImage::new(Grid::from_vec(img.width, img.height, px)?)
}

/// Encodes as 8-bit RGB (`round(v·255)`).
pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let g = img.grid();
    let data: Vec<u8> = g
        .data()
        .iter()
        .flat_map(|p| p.map(|c| (c * 255.0).round() as u8))
        .collect();
    encode_png(g.width(), g.height(), ColorType::Rgb, BitDepth::Eight, &data, "RGB PNG")
}

/// `"PIEH"`, u32 width, u32 height, then row-major interleaved `(du, dv)`
/// as f32, all little-endian.
pub fn encode_flow(flow: &FlowField) -> Vec<u8> {
    let g = flow.grid();
    let mut out = Vec::with_capacity(12 + 8 * g.len());
    out.extend_from_slice(FLOW_TAG);
    out.extend_from_slice(&(g.width() as u32).to_le_bytes());
    out.extend_from_slice(&(g.height() as u32).to_le_bytes());
    for [u, v] in g.data() {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::format("flow", "shorter than the 12-byte header"));
    }
    if &bytes[..4] != FLOW_TAG {
        return Err(Error::format("flow", format!("bad tag {:?}", &bytes[..4])));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let want = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format("flow", "extents overflow"))?;
    let payload = &bytes[12..];
    if payload.len() != want {
        return Err(Error::format(
            "flow",
            format!("{w}x{h} field needs {want} payload bytes, found {}", payload.len()),
        ));
    }
    let vals = payload
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            ]
        })
        .collect();
    FlowField::new(Grid::from_vec(w, h, vals)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { format, reason } => Error::format(format, format!("{}: {reason}", path.display())),
        other => other,
    })
}

pub fn read_depth_png(path: &Path) -> Result<SparseDepth> {
    with_path(path, decode_depth_png(&read(path)?))
}

pub fn write_depth_png(path: &Path, depth: &SparseDepth) -> Result<()> {
    write(path, &encode_depth_png(depth)?)
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    with_path(path, decode_rgb_png(&read(path)?))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write(path, &encode_rgb_png(img)?)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    with_path(path, decode_flow(&read(path)?))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write(path, &encode_flow(flow))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn depth(w: usize, h: usize, vals: Vec<f64>) -> SparseDepth {
        SparseDepth::new(Grid::from_vec(w, h, vals).unwrap()).unwrap()
    }

    fn raw_png(w: u32, h: u32, color: ColorType, bits: BitDepth, data: &[u8]) -> Vec<u8> {
        encode_png(w as usize, h as usize, color, bits, data, "test").unwrap()
    }

    #[test]
    fn raw_values_map_to_metres() {
        let bytes = raw_png(2, 1, ColorType::Grayscale, BitDepth::Sixteen, &[0, 0, 1, 0]);
        let d = decode_depth_png(&bytes).unwrap();
        assert!(!d.is_valid(0, 0));
        assert_eq!(d.get(1, 0), 1.0);
    }

    #[test]
    fn encode_rounds_to_nearest_raw() {
        assert_eq!(depth_to_raw(1.0).unwrap(), 256);
        assert_eq!(depth_to_raw(0.0).unwrap(), 0);
        assert_eq!(depth_to_raw(0.3).unwrap(), 77);
        // 0.5/256 is exactly half a raw step: rounds away from zero.
        assert_eq!(depth_to_raw(0.5 / 256.0).unwrap(), 1);
        assert!(depth_to_raw(0.4 / 256.0).is_err());
        assert_eq!(depth_to_raw(65535.0 / 256.0).unwrap(), 65535);
        assert!(depth_to_raw(300.0).is_err());
    }

    #[test]
    fn non_depth_pngs_are_rejected() {
        let eight = raw_png(1, 1, ColorType::Grayscale, BitDepth::Eight, &[5]);
        assert!(decode_depth_png(&eight).is_err());
        let rgb16 = raw_png(1, 1, ColorType::Rgb, BitDepth::Sixteen, &[0; 6]);
        assert!(decode_depth_png(&rgb16).is_err());
        assert!(decode_depth_png(b"not a png").is_err());
    }

    #[test]
    fn flow_single_pixel_and_zero_field() {
        let f = FlowField::uniform(1, 1, 2.5, -1.0);
        let bytes = encode_flow(&f);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(decode_flow(&bytes).unwrap(), f);
        let z = decode_flow(&encode_flow(&FlowField::zeros(4, 3))).unwrap();
        assert!(z.grid().data().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn malformed_flow_is_rejected() {
        let mut bytes = encode_flow(&FlowField::uniform(2, 2, 1.0, 1.0));
        assert!(decode_flow(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_flow(&extra).is_err());
        bytes[0] = b'X';
        assert!(decode_flow(&bytes).is_err());
        assert!(decode_flow(b"PIEH").is_err());
    }

    #[test]
    fn rgb_round_trip_on_byte_levels() {
        let g = Grid::from_fn(3, 2, |x, y| [x as f64 / 255.0, (10 * y) as f64 / 255.0, 1.0]);
        let img = RgbImage::new(g).unwrap();
        assert_eq!(decode_rgb_png(&encode_rgb_png(&img).unwrap()).unwrap(), img);
        let gray = raw_png(1, 1, ColorType::Grayscale, BitDepth::Eight, &[5]);
        assert!(decode_rgb_png(&gray).is_err());
    }

    proptest! {
        #[test]
        fn depth_codec_round_trips(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raws: Vec<u16> = (0..w * h)
                .map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..=u16::MAX) })
                .collect();
            let d = depth(w, h, raws.iter().map(|&r| r as f64 / 256.0).collect());
            let bytes = encode_depth_png(&d).unwrap();
            let back = decode_depth_png(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(encode_depth_png(&back).unwrap(), bytes);
        }

        #[test]
        fn flow_codec_round_trips(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::from_fn(w, h, |_, _| [rng.random_range(-50.0f32..50.0), rng.random_range(-50.0f32..50.0)]);
            let f = FlowField::new(g).unwrap();
            let bytes = encode_flow(&f);
            let back = decode_flow(&bytes).unwrap();
            prop_assert!(back.grid().data().iter().zip(f.grid().data())
                .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits()));
            prop_assert_eq!(encode_flow(&back), bytes);
        }
    }
}
