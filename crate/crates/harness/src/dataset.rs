//! Paired dark/bright dataset layout:
//!
//! ```text
//! dataset/
//!   manifest.json
//!   bright/NAME.png
//!   dark/NAME.png
//! ```
//!
//! The manifest records the pairs, the tier name, and the degradation
//! configuration. Per-image noise seeds derive from the recorded base seed
//! as `SplitMix64::derive(seed, DARK_LABEL, index)`, so a dataset rebuilds
//! byte-for-byte from its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lle_core::degrade::{fit_attenuation, synth_low_light, DegradeConfig, Tier};
use lle_core::image::mean_intensity;
use lle_core::rng::SplitMix64;
use lle_core::Image;

use crate::codec;

/// Stream label for per-image dark-frame noise seeds.
pub const DARK_LABEL: u64 = 0xDA52;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DegradeConfigFile {
    pub attenuation: f64,
    pub read_noise_sigma: f64,
    pub quantize_bits: u32,
    pub seed: u64,
}

impl From<DegradeConfig> for DegradeConfigFile {
    fn from(c: DegradeConfig) -> Self {
        DegradeConfigFile {
            attenuation: c.attenuation,
            read_noise_sigma: c.read_noise_sigma,
            quantize_bits: c.quantize_bits,
            seed: c.seed,
        }
    }
}

impl DegradeConfigFile {
    pub fn to_config(&self) -> DegradeConfig {
        DegradeConfig::new(
            self.attenuation,
            self.read_noise_sigma,
            self.quantize_bits,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub bright: String,
    pub dark: String,
    /// Blob centers as `[y, x]`, when the bright corpus provided them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_mean_255: Option<f64>,
    /// Mean intensity of the dark set actually achieved, 0-255 scale.
    pub achieved_mean_255: f64,
    pub degrade: DegradeConfigFile,
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn load(dataset_dir: &Path) -> Result<Manifest> {
        let p = dataset_dir.join("manifest.json");
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
    }

    pub fn save(&self, dataset_dir: &Path) -> Result<()> {
        let p = dataset_dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}

/// How the attenuation for a new dataset is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Attenuation {
    /// Bisect α so the degraded corpus hits the tier's target mean.
    FitTier(Tier),
    /// Use a fixed α (tier recorded as `None`).
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub attenuation: Attenuation,
    pub read_noise_sigma: f64,
    pub quantize_bits: u32,
    pub seed: u64,
}

/// Build a paired dataset from a directory of bright images.
///
/// Reads every `.png`/`.ppm` in `bright_dir` (sorted by name for
/// determinism), fits or takes the attenuation, writes `bright/` copies,
/// `dark/` degraded frames, and the manifest. A `centers.json` sidecar in
/// `bright_dir` (as written by [`crate::scenes::write_corpus`]) is folded
/// into the manifest as per-pair keypoints.
pub fn synthesize(bright_dir: &Path, out_dir: &Path, settings: &SynthSettings) -> Result<Manifest> {
    let mut entries: Vec<PathBuf> = fs::read_dir(bright_dir)
        .with_context(|| format!("listing {}", bright_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!("no .png/.ppm images found in {}", bright_dir.display());
    }
    let centers: BTreeMap<String, Vec<[f64; 2]>> = {
        let sidecar = bright_dir.join("centers.json");
        if sidecar.exists() {
            serde_json::from_str(&fs::read_to_string(&sidecar)?)
                .with_context(|| format!("parsing {}", sidecar.display()))?
        } else {
            BTreeMap::new()
        }
    };
    let brights: Vec<(String, Image)> = entries
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            codec::load_image(p).map(|img| (name, img))
        })
        .collect::<Result<_>>()?;
    let (alpha, tier) = match settings.attenuation {
        Attenuation::FitTier(tier) => {
            let imgs: Vec<Image> = brights.iter().map(|(_, i)| i.clone()).collect();
            (fit_attenuation(&imgs, tier)?, Some(tier))
        }
        Attenuation::Fixed(a) => (a, None),
    };
    fs::create_dir_all(out_dir.join("bright"))?;
    fs::create_dir_all(out_dir.join("dark"))?;
    let mut pairs = Vec::with_capacity(brights.len());
    let mut dark_sum = 0.0;
    for (i, (name, bright)) in brights.iter().enumerate() {
        let cfg = DegradeConfig::new(
            alpha,
            settings.read_noise_sigma,
            settings.quantize_bits,
            SplitMix64::derive(settings.seed, DARK_LABEL, i as u64).next_u64(),
        );
        let dark = synth_low_light(bright, &cfg)?;
        dark_sum += mean_intensity(&dark);
        let bright_rel = format!("bright/{name}.png");
        let dark_rel = format!("dark/{name}.png");
        codec::save_image(bright, &out_dir.join(&bright_rel))?;
        codec::save_image(&dark, &out_dir.join(&dark_rel))?;
        pairs.push(PairEntry {
            name: name.clone(),
            bright: bright_rel,
            dark: dark_rel,
            keypoints: centers.get(name).cloned(),
        });
    }
    let manifest = Manifest {
        tier: tier.map(|t| t.name().to_string()),
        target_mean_255: tier.map(|t| t.target_mean_255()),
        achieved_mean_255: dark_sum / pairs.len() as f64,
        degrade: DegradeConfig::new(alpha, settings.read_noise_sigma, settings.quantize_bits, settings.seed)
            .into(),
        pairs,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// A dataset loaded into memory, manifest order preserved.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub name: String,
    pub bright: Image,
    pub dark: Image,
    pub keypoints: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub pairs: Vec<LoadedPair>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = Manifest::load(dir)?;
    if manifest.pairs.is_empty() {
        bail!("dataset {} lists no pairs", dir.display());
    }
    let pairs = manifest
        .pairs
        .iter()
        .map(|p| {
            Ok(LoadedPair {
                name: p.name.clone(),
                bright: codec::load_image(&dir.join(&p.bright))?,
                dark: codec::load_image(&dir.join(&p.dark))?,
                keypoints: p
                    .keypoints
                    .as_ref()
                    .map(|ks| ks.iter().map(|k| (k[0], k[1])).collect()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset { manifest, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::write_corpus;

    #[test]
    fn synthesize_roundtrips_and_replays() {
        let bright = tempfile::tempdir().unwrap();
        write_corpus(bright.path(), 3, 24, 7).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let settings = SynthSettings {
            attenuation: Attenuation::Fixed(0.05),
            read_noise_sigma: 0.01,
            quantize_bits: 8,
            seed: 3,
        };
        let ma = synthesize(bright.path(), out_a.path(), &settings).unwrap();
        let mb = synthesize(bright.path(), out_b.path(), &settings).unwrap();
        assert_eq!(ma.pairs.len(), 3);
        assert_eq!(ma.achieved_mean_255, mb.achieved_mean_255);
        for pair in &ma.pairs {
            let a = std::fs::read(out_a.path().join(&pair.dark)).unwrap();
            let b = std::fs::read(out_b.path().join(&pair.dark)).unwrap();
            assert_eq!(a, b, "dark bytes must replay for {}", pair.name);
            assert!(pair.keypoints.is_some(), "corpus sidecar should flow through");
        }
        let loaded = load_dataset(out_a.path()).unwrap();
        assert_eq!(loaded.pairs.len(), 3);
        assert_eq!(loaded.pairs[0].name, ma.pairs[0].name);
    }

    #[test]
    fn tier_fit_records_target_and_achieves_mean() {
        let bright = tempfile::tempdir().unwrap();
        write_corpus(bright.path(), 4, 32, 11).unwrap();
        let out = tempfile::tempdir().unwrap();
        let settings = SynthSettings {
            attenuation: Attenuation::FitTier(Tier::Extreme),
            read_noise_sigma: 0.0,
            quantize_bits: 8,
            seed: 5,
        };
        let m = synthesize(bright.path(), out.path(), &settings).unwrap();
        assert_eq!(m.tier.as_deref(), Some("LL-E"));
        assert_eq!(m.target_mean_255, Some(0.9));
        // post-quantization mean should land near the target on a real corpus
        assert!(
            (m.achieved_mean_255 - 0.9).abs() < 0.3,
            "achieved {}",
            m.achieved_mean_255
        );
    }

    #[test]
    fn empty_bright_dir_errors() {
        let bright = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let settings = SynthSettings {
            attenuation: Attenuation::Fixed(0.5),
            read_noise_sigma: 0.0,
            quantize_bits: 8,
            seed: 0,
        };
        assert!(synthesize(bright.path(), out.path(), &settings).is_err());
    }
}
