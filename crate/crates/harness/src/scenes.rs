//! Procedural bright-scene generator for tests and demo corpora.
//!
//! Scenes are built from a smooth illumination gradient, a handful of soft
//! rectangles, and a few bright Gaussian blobs whose centers are recorded
//! (they double as keypoints for the blob-heatmap task). Everything is
//! seeded, so a corpus regenerates bit-for-bit.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use lle_core::rng::SplitMix64;
use lle_core::Image;

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Image,
    /// Blob centers as `(y, x)`.
    pub centers: Vec<(f64, f64)>,
}

/// Render one synthetic scene with decent mid-tone coverage.
pub fn generate_scene(size: usize, seed: u64) -> Scene {
    let mut rng = SplitMix64::new(seed);
    let s = size as f64;
    // background gradient
    let gx = rng.next_f64() * 0.4 / s;
    let gy = rng.next_f64() * 0.4 / s;
    let base = [
        0.25 + 0.35 * rng.next_f64(),
        0.25 + 0.35 * rng.next_f64(),
        0.25 + 0.35 * rng.next_f64(),
    ];
    // soft rectangles
    let n_rects = 2 + (rng.next_u64() % 3) as usize;
    let mut rects = Vec::new();
    for _ in 0..n_rects {
        let y0 = rng.next_f64() * 0.7 * s;
        let x0 = rng.next_f64() * 0.7 * s;
        let hh = (0.15 + 0.25 * rng.next_f64()) * s;
        let ww = (0.15 + 0.25 * rng.next_f64()) * s;
        let tint = [
            0.6 * (rng.next_f64() - 0.5),
            0.6 * (rng.next_f64() - 0.5),
            0.6 * (rng.next_f64() - 0.5),
        ];
        rects.push((y0, x0, y0 + hh, x0 + ww, tint));
    }
    // bright blobs
    let n_blobs = 2 + (rng.next_u64() % 3) as usize;
    let mut blobs = Vec::new();
    for _ in 0..n_blobs {
        let cy = (0.1 + 0.8 * rng.next_f64()) * s;
        let cx = (0.1 + 0.8 * rng.next_f64()) * s;
        let sigma = (0.02 + 0.03 * rng.next_f64()) * s;
        let gain = 0.35 + 0.3 * rng.next_f64();
        blobs.push((cy, cx, sigma, gain));
    }
    // light texture so smoothing has work to do
    let tex_amp = 0.02 + 0.03 * rng.next_f64();
    let mut tex_rng = SplitMix64::new(seed ^ 0x7E87);
    let image = Image::from_fn(size, size, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut px = [
            base[0] + gx * xf + gy * yf,
            base[1] + gx * xf + gy * yf,
            base[2] + gx * xf + gy * yf,
        ];
        for &(y0, x0, y1, x1, tint) in &rects {
            if yf >= y0 && yf < y1 && xf >= x0 && xf < x1 {
                for (p, t) in px.iter_mut().zip(tint) {
                    *p += t;
                }
            }
        }
        for &(cy, cx, sigma, gain) in &blobs {
            let d2 = (yf - cy) * (yf - cy) + (xf - cx) * (xf - cx);
            let g = gain * (-d2 / (2.0 * sigma * sigma)).exp();
            for p in px.iter_mut() {
                *p += g;
            }
        }
        let t = tex_amp * (2.0 * tex_rng.next_f64() - 1.0);
        for p in px.iter_mut() {
            *p = (*p + t).clamp(0.0, 1.0);
        }
        px
    });
    Scene {
        image,
        centers: blobs.iter().map(|&(cy, cx, ..)| (cy, cx)).collect(),
    }
}

/// Write `count` scenes as `img_NNNN.png` plus a `centers.json` sidecar
/// mapping stem names to blob centers. Returns the stem names.
pub fn write_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut names = Vec::with_capacity(count);
    let mut centers = serde_json::Map::new();
    for i in 0..count {
        let scene = generate_scene(size, SplitMix64::derive(seed, 0x5CE8E, i as u64).next_u64());
        let name = format!("img_{i:04}");
        crate::codec::save_image(&scene.image, &dir.join(format!("{name}.png")))?;
        centers.insert(
            name.clone(),
            serde_json::json!(scene
                .centers
                .iter()
                .map(|&(y, x)| vec![y, x])
                .collect::<Vec<_>>()),
        );
        names.push(name);
    }
    let sidecar = serde_json::Value::Object(centers);
    fs::write(
        dir.join("centers.json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_replay_and_cover_midtones() {
        let a = generate_scene(64, 9);
        let b = generate_scene(64, 9);
        assert_eq!(a.image, b.image);
        assert_eq!(a.centers, b.centers);
        let mean = a.image.mean();
        assert!(mean > 0.2 && mean < 0.8, "mean {mean}");
        assert!(!a.centers.is_empty());
    }

    #[test]
    fn corpus_writes_files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let names = write_corpus(dir.path(), 3, 32, 1).unwrap();
        assert_eq!(names.len(), 3);
        for n in &names {
            assert!(dir.path().join(format!("{n}.png")).exists());
        }
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("centers.json")).unwrap())
                .unwrap();
        assert!(sidecar.get("img_0000").is_some());
    }
}
