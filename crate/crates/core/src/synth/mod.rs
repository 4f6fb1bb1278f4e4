//! Synthetic planar scenes with exact depth, on-disk datasets and augmentation.

mod scene;

pub use scene::{
    random_scene, render_depth, render_image, Aabb, CameraIntrinsics, DepthMap, Plane, SceneSpec,
    CAMERA_HEIGHT,
};

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netpbm::{self, GrayImage};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub kappa: f64,
    /// Probability of dropping a ground-truth pixel from the mask.
    pub gt_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            kappa: 10.0,
            gt_dropout: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic image size must be positive"));
        }
        if !(self.kappa > 1.0) {
            return Err(Error::invalid(format!("kappa must exceed 1, got {}", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.gt_dropout) {
            return Err(Error::invalid(format!(
                "gt_dropout must be in [0, 1), got {}",
                self.gt_dropout
            )));
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::for_size(self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[C, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub depth: DepthMap,
    pub mask: Vec<bool>,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    /// Repeats a single-channel image `channels` times.
    pub fn with_channels(mut self, channels: usize) -> Result<Self> {
        let c = self.channels();
        if c == channels {
            return Ok(self);
        }
        if c != 1 || channels == 0 {
            return Err(Error::invalid(format!("cannot convert {c} channels into {channels}")));
        }
        let plane = self.image.data().to_vec();
        let data = plane.iter().copied().cycle().take(plane.len() * channels).collect();
        self.image = Tensor::new(vec![channels, self.height(), self.width()], data)?;
        Ok(self)
    }
}

/// Per-sample seed, so any sample can be regenerated alone.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_sample(cfg: &SynthConfig, master_seed: u64, index: u64) -> Result<Sample> {
    cfg.validate()?;
    let camera = cfg.camera()?;
    let seed = sample_seed(master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng, cfg.kappa, seed);
    let depth = render_depth(&scene, &camera)?;
    let shade = render_image(&scene, &camera)?;
    let mask = (0..depth.data.len())
        .map(|_| cfg.gt_dropout == 0.0 || !rng.gen_bool(cfg.gt_dropout))
        .collect();
    Ok(Sample {
        image: Tensor::new(vec![1, cfg.height, cfg.width], shade.data)?,
        depth,
        mask,
    })
}

fn sample_names(index: usize) -> [String; 3] {
    [
        format!("img_{index:06}.pgm"),
        format!("depth_{index:06}.pfm"),
        format!("mask_{index:06}.pgm"),
    ]
}

/// Writes `n` samples plus `manifest.tsv` into `dir`, creating it if needed.
pub fn gen_dataset(n: usize, cfg: &SynthConfig, seed: u64, dir: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for i in 0..n {
        let s = generate_sample(cfg, seed, i as u64)?;
        let [img, depth, mask] = sample_names(i);
        write_sample(&s, &dir.join(&img), &dir.join(&depth), &dir.join(&mask))?;
        manifest.push_str(&format!("{i}\t{img}\t{depth}\t{mask}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {n} samples to {}", dir.display());
    Ok(())
}

fn write_sample(s: &Sample, img: &Path, depth: &Path, mask: &Path) -> Result<()> {
    let (w, h) = (s.width(), s.height());
    let gray = &s.image.data()[..w * h];
    netpbm::write_pgm(img, &GrayImage::new(w, h, netpbm::quantize_unit(gray))?, 65535)?;
    netpbm::write_pfm(depth, &s.depth)?;
    let m = s.mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    netpbm::write_pgm(mask, &GrayImage::new(w, h, m)?, 255)
}

/// Paths of one manifest entry, resolved against the manifest directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: PathBuf,
    pub depth: PathBuf,
    pub mask: PathBuf,
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let index = match (f.len(), f[0].parse()) {
                (4, Ok(i)) => i,
                _ => return Err(Error::format(&path, format!("line {}: expected index and 3 paths", n + 1))),
            };
            Ok(ManifestEntry {
                index,
                image: dir.join(f[1]),
                depth: dir.join(f[2]),
                mask: dir.join(f[3]),
            })
        })
        .collect()
}

pub fn load_sample(entry: &ManifestEntry) -> Result<Sample> {
    let (img, maxval) = netpbm::read_pgm(&entry.image)?;
    let depth = netpbm::read_pfm(&entry.depth)?;
    let (mask, _) = netpbm::read_pgm(&entry.mask)?;
    if (img.width, img.height) != (depth.width, depth.height)
        || (mask.width, mask.height) != (depth.width, depth.height)
    {
        return Err(Error::format(&entry.depth, "image, depth and mask sizes differ"));
    }
    let scale = maxval as f32;
    let image = Tensor::new(
        vec![1, img.height, img.width],
        img.data.iter().map(|&v| v as f32 / scale).collect(),
    )?;
    let mask: Vec<bool> = mask.data.iter().map(|&v| v > 0).collect();
    if let Some(i) = (0..mask.len()).find(|&i| mask[i] && !(depth.data[i] > 0.0)) {
        return Err(Error::format(&entry.depth, format!("non-positive depth at valid pixel {i}")));
    }
    Ok(Sample { image, depth, mask })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    read_manifest(dir)?.iter().map(load_sample).collect()
}

/// Random choices of one augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    /// `(gamma, brightness)`: image becomes `clamp(image^gamma * brightness, 0, 1)`.
    pub photometric: Option<(f32, f32)>,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        photometric: None,
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let flip = rng.gen_bool(0.5);
        let photometric = rng
            .gen_bool(0.5)
            .then(|| (rng.gen_range(0.9..=1.1), rng.gen_range(0.9..=1.1)));
        Self { flip, photometric }
    }
}

fn flip_rows<T: Copy>(data: &mut [T], width: usize) {
    data.chunks_exact_mut(width).for_each(<[T]>::reverse);
}

pub fn apply_augment(sample: &Sample, draw: AugmentDraw) -> Sample {
    let mut out = sample.clone();
    let w = out.width();
    if draw.flip {
        flip_rows(out.image.data_mut(), w);
        flip_rows(&mut out.depth.data, w);
        flip_rows(&mut out.mask, w);
    }
    if let Some((gamma, brightness)) = draw.photometric {
        for v in out.image.data_mut() {
            *v = (v.powf(gamma) * brightness).clamp(0.0, 1.0);
        }
    }
    out
}

/// Horizontal flip and photometric jitter, each with probability 1/2.
pub fn augment<R: Rng>(sample: &Sample, rng: &mut R) -> Sample {
    apply_augment(sample, AugmentDraw::sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 24,
            height: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_sample(&small(), 5, 3).unwrap();
        let b = generate_sample(&small(), 5, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_sample(&small(), 5, 4).unwrap());
    }

    #[test]
    fn dropout_thins_mask() {
        let cfg = SynthConfig {
            gt_dropout: 0.5,
            ..small()
        };
        let s = generate_sample(&cfg, 1, 0).unwrap();
        let kept = s.mask.iter().filter(|&&m| m).count();
        assert!(kept > 100 && kept < 284, "{kept}");
        assert!(generate_sample(&small(), 1, 0).unwrap().mask.iter().all(|&m| m));
    }

    #[test]
    fn augment_cases() {
        let s = generate_sample(&small(), 2, 0).unwrap();
        assert_eq!(apply_augment(&s, AugmentDraw::IDENTITY), s);
        let flip = AugmentDraw {
            flip: true,
            photometric: None,
        };
        let once = apply_augment(&s, flip);
        assert_ne!(once, s);
        assert_eq!(apply_augment(&once, flip), s);
        let mut sorted_a = s.depth.data.clone();
        let mut sorted_b = once.depth.data.clone();
        sorted_a.sort_by(f32::total_cmp);
        sorted_b.sort_by(f32::total_cmp);
        assert_eq!(sorted_a, sorted_b);

        let mut flat = s.clone();
        flat.image.data_mut().fill(0.5);
        let bright = apply_augment(
            &flat,
            AugmentDraw {
                flip: false,
                photometric: Some((1.0, 1.1)),
            },
        );
        assert!(bright.image.data().iter().all(|&v| (v - 0.55).abs() < 1e-6));
        assert_eq!(bright.depth, flat.depth);
    }

    #[test]
    fn channel_replication() {
        let s = generate_sample(&small(), 2, 0).unwrap().with_channels(3).unwrap();
        assert_eq!(s.image.shape(), &[3, 16, 24]);
        let n = 16 * 24;
        assert_eq!(&s.image.data()[..n], &s.image.data()[2 * n..]);
    }
}
