//! PFM and PNG disparity files, image files and sequence manifests.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::StereoFrame;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// Largest disparity a 16-bit PNG can hold (exclusive).
pub const PNG_DISPARITY_LIMIT: f32 = 256.0;

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Writes a `(1, 1, h, w)` map as `Pf` or a `(1, 3, h, w)` image as `PF`,
/// little-endian, rows bottom to top.
pub fn write_pfm<W: Write>(mut out: W, t: &Tensor4<f32>) -> Result<()> {
    let s = t.shape();
    let tag = match (s.n, s.c) {
        (1, 1) => "Pf",
        (1, 3) => "PF",
        _ => {
            return Err(Error::shape(
                "write_pfm",
                format!("expected 1x1xHxW or 1x3xHxW, got {s}"),
            ))
        }
    };
    write!(out, "{tag}\n{} {}\n-1.0\n", s.w, s.h)?;
    let mut buf = Vec::with_capacity(s.len() * 4);
    for y in (0..s.h).rev() {
        for x in 0..s.w {
            for c in 0..s.c {
                buf.extend_from_slice(&t.at(0, c, y, x).to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn header_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(bad("truncated PFM header"));
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
        if tok.len() > 32 {
            return Err(bad("PFM header token too long"));
        }
    }
    String::from_utf8(tok).map_err(|_| bad("PFM header is not ASCII"))
}

pub fn read_pfm<R: Read>(input: R) -> Result<Tensor4<f32>> {
    let mut r = BufReader::new(input);
    let channels = match header_token(&mut r)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(format!("unknown PFM tag {other:?}"))),
    };
    let dim = |t: String| t.parse::<usize>().map_err(|_| bad(format!("bad PFM dimension {t:?}")));
    let w = dim(header_token(&mut r)?)?;
    let h = dim(header_token(&mut r)?)?;
    let scale: f64 = header_token(&mut r)?
        .parse()
        .map_err(|_| bad("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("PFM scale must be non-zero"));
    }
    if w == 0 || h == 0 || w.saturating_mul(h) > 1 << 28 {
        return Err(bad(format!("implausible PFM size {w}x{h}")));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; w * h * channels * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated PFM data"))?;
    let mut t = Tensor4::zeros(Shape4::new(1, channels, h, w));
    let mut it = raw.chunks_exact(4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..channels {
                let b: [u8; 4] = it.next().expect("sized").try_into().expect("4 bytes");
                let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
                t.set(0, c, y, x, v);
            }
        }
    }
    Ok(t)
}

pub fn save_pfm(path: &Path, t: &Tensor4<f32>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_pfm(std::io::BufWriter::new(f), t)
}

pub fn load_pfm(path: &Path) -> Result<Tensor4<f32>> {
    read_pfm(fs::File::open(path)?)
}

/// Encodes disparity as `round(d * 256)` in a 16-bit PNG, 0 for invalid.
pub fn encode_disparity_png(disp: &Tensor4<f32>, mask: Option<&Tensor4<f32>>) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    let s = disp.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("disparity png", format!("expected 1x1xHxW, got {s}")));
    }
    if let Some(m) = mask {
        m.expect_shape("disparity png", s)?;
    }
    let mut img = ImageBuffer::new(s.w as u32, s.h as u32);
    for y in 0..s.h {
        for x in 0..s.w {
            let valid = mask.is_none_or(|m| m.at(0, 0, y, x) > 0.0);
            let v = if valid {
                let d = disp.at(0, 0, y, x);
                if !(0.0..PNG_DISPARITY_LIMIT).contains(&d) {
                    return Err(bad(format!(
                        "disparity {d} at ({y}, {x}) outside [0, {PNG_DISPARITY_LIMIT})"
                    )));
                }
                (d * 256.0).round().min(65535.0) as u16
            } else {
                0
            };
            img.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    Ok(img)
}

/// Disparity map and validity mask of a 16-bit PNG.
pub fn decode_disparity_png(img: &DynamicImage) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(bad("disparity PNG must be 16-bit single channel"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut disp = Tensor4::zeros(Shape4::new(1, 1, h, w));
    let mut mask = Tensor4::zeros(Shape4::new(1, 1, h, w));
    for (x, y, p) in buf.enumerate_pixels() {
        let v = p.0[0];
        if v > 0 {
            disp.set(0, 0, y as usize, x as usize, f32::from(v) / 256.0);
            mask.set(0, 0, y as usize, x as usize, 1.0);
        }
    }
    Ok((disp, mask))
}

pub fn save_disparity_png(path: &Path, disp: &Tensor4<f32>, mask: Option<&Tensor4<f32>>) -> Result<()> {
    encode_disparity_png(disp, mask)?
        .save(path)
        .map_err(|e| image_error(path, e))
}

pub fn load_disparity_png(path: &Path) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    decode_disparity_png(&image::open(path).map_err(|e| image_error(path, e))?)
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => bad(format!("{}: {other}", path.display())),
    }
}

/// Writes a `(1, 3, h, w)` image in `[0, 1]` as a 16-bit RGB PNG.
pub fn save_image_png(path: &Path, img: &Tensor4<f32>) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("image png", format!("expected 1x3xHxW, got {s}")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| (img.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 65535.0).round() as u16;
        Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Reads any RGB(A)/grey PNG into a `(1, 3, h, w)` tensor in `[0, 1]`.
pub fn load_image_png(path: &Path) -> Result<Tensor4<f32>> {
    let rgb = image::open(path).map_err(|e| image_error(path, e))?.into_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Tensor4::from_fn(Shape4::new(1, 3, h, w), |_, c, y, x| {
        rgb.get_pixel(x as u32, y as u32).0[c]
    }))
}

/// Maps a disparity to an RGB colour, blue (near zero) to red (`max`).
pub fn colour_map(d: f32, max: f32) -> [u8; 3] {
    let t = if max > 0.0 { (d / max).clamp(0.0, 1.0) } else { 0.0 };
    let ramp = |centre: f32| (1.5 - (4.0 * t - centre).abs()).clamp(0.0, 1.0);
    [ramp(3.0), ramp(2.0), ramp(1.0)].map(|v| (v * 255.0).round() as u8)
}

/// 8-bit visualisation of a disparity map.
pub fn save_colour_png(path: &Path, disp: &Tensor4<f32>, max: f32) -> Result<()> {
    let s = disp.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("colour png", format!("expected 1x1xHxW, got {s}")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(colour_map(disp.at(0, 0, y as usize, x as usize), max))
    });
    buf.save(path).map_err(|e| image_error(path, e))
}

/// One frame of a sequence on disk; paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<PathBuf>,
}

/// Ordered list of frames, stored as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| bad(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads frame `i`, resolving paths against `base`.
    pub fn load_frame(&self, base: &Path, i: usize) -> Result<StereoFrame<f32>> {
        let e = self
            .frames
            .get(i)
            .ok_or_else(|| Error::Config(format!("manifest has no frame {i}")))?;
        let left = load_image_png(&base.join(&e.left))?;
        let right = load_image_png(&base.join(&e.right))?;
        let frame = StereoFrame::new(left, right)?;
        match &e.disparity {
            None => Ok(frame),
            Some(p) => {
                let p = base.join(p);
                let (d, m) = if p.extension().is_some_and(|x| x == "pfm") {
                    (load_pfm(&p)?, None)
                } else {
                    let (d, m) = load_disparity_png(&p)?;
                    (d, Some(m))
                };
                frame.with_ground_truth(d, m)
            }
        }
    }
}

/// Writes frames as PNG files plus `manifest.toml` into `dir`.
pub fn export_sequence<'a>(dir: &Path, frames: impl IntoIterator<Item = &'a StereoFrame<f32>>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    for (i, f) in frames.into_iter().enumerate() {
        let left = PathBuf::from(format!("{i:06}_left.png"));
        let right = PathBuf::from(format!("{i:06}_right.png"));
        save_image_png(&dir.join(&left), &f.left)?;
        save_image_png(&dir.join(&right), &f.right)?;
        let disparity = match &f.gt_disparity {
            Some(gt) => {
                let p = PathBuf::from(format!("{i:06}_disp.png"));
                save_disparity_png(&dir.join(&p), gt, f.valid_mask.as_ref())?;
                Some(p)
            }
            None => None,
        };
        manifest.frames.push(ManifestEntry { left, right, disparity });
    }
    manifest.save(&dir.join("manifest.toml"))?;
    Ok(manifest)
}
