//! Image file IO: 8-bit PNG (via the `image` crate) and binary PPM (P6,
//! maxval 255).
//!
//! Decoding maps stored byte `v` to `v / 255` in linear units; grayscale
//! PNGs are replicated to three channels and alpha is dropped. Encoding
//! clamps to `[0, 1]`, scales by 255, and rounds half-away-from-zero —
//! the single quantization rule used everywhere in this project. Clamping
//! happens only here, never mid-pipeline.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use lle_core::Image;

/// Decode a PNG or PPM file by extension.
pub fn load_image(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => load_png(path),
        "ppm" => load_ppm(path),
        other => bail!(
            "unsupported image format '.{other}' for {} (expected .png or .ppm)",
            path.display()
        ),
    }
}

/// Encode to PNG or PPM by extension.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    if !img.is_finite() {
        bail!("refusing to save non-finite samples to {}", path.display());
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "ppm" => save_ppm(img, path),
        other => bail!(
            "unsupported image format '.{other}' for {} (expected .png or .ppm)",
            path.display()
        ),
    }
}

/// The export quantization: clamp, scale by 255, round half-away-from-zero.
pub fn to_bytes(img: &Image) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::from_vec(height, width, data)?)
}

fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).with_context(|| format!("decoding {}", path.display()))?;
    use image::DynamicImage::*;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let rgb = match dynimg {
        ImageRgb8(img) => img,
        ImageRgba8(img) => image::DynamicImage::ImageRgba8(img).to_rgb8(),
        ImageLuma8(img) => image::DynamicImage::ImageLuma8(img).to_rgb8(),
        ImageLumaA8(img) => image::DynamicImage::ImageLumaA8(img).to_rgb8(),
        other => bail!(
            "unsupported PNG bit depth/color type {:?} in {} (expected 8-bit)",
            other.color(),
            path.display()
        ),
    };
    from_bytes(h, w, rgb.as_raw())
}

fn save_png(img: &Image, path: &Path) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, to_bytes(img))
            .expect("buffer length matches dimensions");
    buf.save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_ppm(path: &Path) -> Result<Image> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_end(&mut raw)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated PPM header in {}", path.display());
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        bail!("unsupported PPM magic '{magic}' in {} (expected P6)", path.display());
    }
    let width: usize = token()?.parse().context("PPM width")?;
    let height: usize = token()?.parse().context("PPM height")?;
    let maxval: usize = token()?.parse().context("PPM maxval")?;
    if maxval != 255 {
        bail!("unsupported PPM maxval {maxval} in {} (expected 255)", path.display());
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if raw.len() < pos + need {
        bail!(
            "PPM payload truncated in {}: need {need} bytes, have {}",
            path.display(),
            raw.len() - pos
        );
    }
    from_bytes(height, width, &raw[pos..pos + need])
}

fn save_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write!(f, "P6\n{} {}\n255\n", img.width(), img.height())?;
    f.write_all(&to_bytes(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use lle_core::rng::SplitMix64;

    #[test]
    fn ppm_single_pixel_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("px.ppm");
        std::fs::write(&p, b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
        std::fs::write(&p, b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn save_clamps_and_rounds_half_away() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ppm");
        let img = Image::from_vec(1, 1, vec![1.5, 0.5, -0.2]).unwrap();
        save_image(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let payload = &bytes[bytes.len() - 3..];
        // 0.5·255 = 127.5 rounds away from zero to 128
        assert_eq!(payload, &[255, 128, 0]);
    }

    #[test]
    fn png_roundtrip_on_grid_values_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.png");
        let mut rng = SplitMix64::new(5);
        let img = Image::from_fn(9, 7, |_, _| {
            let mut v = || (rng.next_u64() % 256) as f64 / 255.0;
            [v(), v(), v()]
        });
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn roundtrip_error_bounded_by_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.ppm");
        let mut rng = SplitMix64::new(6);
        let img = Image::from_fn(8, 8, |_, _| [rng.next_f64(), rng.next_f64(), rng.next_f64()]);
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn png_decode_matches_reference_decoder() {
        // encode known bytes with the image crate directly, then compare
        // our loader's samples against bytes/255
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.png");
        let bytes: Vec<u8> = (0..2 * 2 * 3).map(|i| (i * 19 + 3) as u8).collect();
        let buf: image::RgbImage = image::ImageBuffer::from_raw(2, 2, bytes.clone()).unwrap();
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        for (s, b) in img.data().iter().zip(&bytes) {
            assert!((s - *b as f64 / 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grayscale_png_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let buf: image::GrayImage = image::ImageBuffer::from_raw(2, 1, vec![10, 200]).unwrap();
        buf.save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.get(0, 0, 0), 10.0 / 255.0);
        assert_eq!(img.get(0, 0, 1), 10.0 / 255.0);
        assert_eq!(img.get(0, 1, 2), 200.0 / 255.0);
    }

    #[test]
    fn unsupported_extension_and_bad_header_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bmp");
        assert!(load_image(&p).is_err());
        let p = dir.path().join("bad.ppm");
        std::fs::write(&p, b"P5\n1 1\n255\n\x00").unwrap();
        let err = load_image(&p).unwrap_err().to_string();
        assert!(err.contains("P6"), "error should name the property: {err}");
        let p16 = dir.path().join("bad16.ppm");
        std::fs::write(&p16, b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").unwrap();
        let err = load_image(&p16).unwrap_err().to_string();
        assert!(err.contains("maxval"), "{err}");
    }
}
