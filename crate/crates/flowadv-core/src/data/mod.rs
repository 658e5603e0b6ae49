//! Deterministic synthetic image datasets, IDX ingestion, dequantization,
//! and the binary dataset cache.

use crate::error::{Error, Result};
use crate::numerics::prng::Prng;
use crate::numerics::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub const CACHE_MAGIC: &[u8; 4] = b"NFDS";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
    Unsplit,
}

/// Images [N × C × H × W] in [0,1] plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<u8>,
    classes: usize,
    pub tag: SplitTag,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, classes: usize, tag: SplitTag) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "dataset images must be rank 4, got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if images.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Domain("pixel outside [0,1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_dim(&self) -> usize {
        let s = self.images.shape();
        s[1] * s[2] * s[3]
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.image_dim();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }
}

/// Procedural grayscale classes: 0 filled square, 1 cross, 2 hollow circle,
/// 3 diagonal stripe; random ±1 px offsets, intensity in [0.6, 1.0], additive
/// Gaussian noise, clipped to [0,1]. Classes balanced round-robin.
pub fn gen_shapes(
    n: usize,
    classes: usize,
    size: usize,
    noise_std: f32,
    seed: u64,
) -> Result<Dataset> {
    if !(2..=4).contains(&classes) {
        return Err(Error::Domain(format!(
            "gen_shapes supports 2..=4 classes, got {classes}"
        )));
    }
    if size < 8 || size % 2 != 0 {
        return Err(Error::Domain(format!(
            "gen_shapes needs even size >= 8, got {size}"
        )));
    }
    let mut prng = Prng::derived(seed, 0xDA7A);
    let dim = size * size;
    let mut pixels = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let center = (size as f32 - 1.0) / 2.0;
    for i in 0..n {
        let class = (i % classes) as u8;
        let dx = prng.below(3) as i32 - 1;
        let dy = prng.below(3) as i32 - 1;
        let intensity = prng.uniform_range(0.6, 1.0);
        let mut img = vec![0.0f32; dim];
        for r in 0..size as i32 {
            for c in 0..size as i32 {
                // Template coordinates before the random offset.
                let tr = r - dy;
                let tc = c - dx;
                let inside = match class {
                    0 => {
                        let lo = size as i32 / 4;
                        let hi = size as i32 - 1 - lo;
                        tr >= lo && tr <= hi && tc >= lo && tc <= hi
                    }
                    1 => {
                        let mid = size as i32 / 2;
                        tr == mid || tr == mid - 1 || tc == mid || tc == mid - 1
                    }
                    2 => {
                        let dr = tr as f32 - center;
                        let dc = tc as f32 - center;
                        let dist = (dr * dr + dc * dc).sqrt();
                        let radius = size as f32 / 2.0 - 1.0;
                        (dist - radius).abs() <= 0.9
                    }
                    _ => (tr - tc).abs() <= 1,
                };
                if inside {
                    img[(r as usize) * size + c as usize] = intensity;
                }
            }
        }
        for p in &mut img {
            if noise_std > 0.0 {
                *p += noise_std * prng.standard_normal();
            }
            *p = p.clamp(0.0, 1.0);
        }
        pixels.extend(img);
        labels.push(class);
    }
    let images = Tensor::new(vec![n, 1, size, size], pixels)?;
    Dataset::new(images, labels, classes, SplitTag::Unsplit)
}

fn read_be_u32(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if buf.len() < end {
        return Err(Error::Parse {
            offset: buf.len(),
            message: format!("truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes(buf[offset..end].try_into().unwrap()))
}

/// Reads the IDX binary pair (big-endian magic 0x803 images / 0x801 labels);
/// pixels are scaled by 1/255 into [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read_all = |p: &Path| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        std::fs::File::open(p)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(p.display().to_string(), e))?;
        Ok(buf)
    };
    let img_buf = read_all(images_path)?;
    let lbl_buf = read_all(labels_path)?;

    let magic = read_be_u32(&img_buf, 0, "images magic")?;
    if magic != 0x0000_0803 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad images magic {magic:#010x}, expected 0x00000803"),
        });
    }
    let n = read_be_u32(&img_buf, 4, "image count")? as usize;
    let h = read_be_u32(&img_buf, 8, "image rows")? as usize;
    let w = read_be_u32(&img_buf, 12, "image cols")? as usize;
    let expect = 16 + n * h * w;
    if img_buf.len() < expect {
        return Err(Error::Parse {
            offset: img_buf.len(),
            message: format!("image payload truncated, expected {expect} bytes"),
        });
    }

    let lmagic = read_be_u32(&lbl_buf, 0, "labels magic")?;
    if lmagic != 0x0000_0801 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad labels magic {lmagic:#010x}, expected 0x00000801"),
        });
    }
    let ln = read_be_u32(&lbl_buf, 4, "label count")? as usize;
    if ln != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("label count {ln} does not match image count {n}"),
        });
    }
    if lbl_buf.len() < 8 + n {
        return Err(Error::Parse {
            offset: lbl_buf.len(),
            message: format!("label payload truncated, expected {} bytes", 8 + n),
        });
    }

    let pixels: Vec<f32> = img_buf[16..expect].iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<u8> = lbl_buf[8..8 + n].to_vec();
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let images = Tensor::new(vec![n, 1, h, w], pixels)?;
    Dataset::new(images, labels, classes.max(2), SplitTag::Unsplit)
}

/// Replaces each 8-bit-grid pixel with (255·x + u)/256, u ~ U[0,1), so the
/// density model sees continuous data. Flow training only; never applied to
/// attack targets.
pub fn dequantize_pixels(pixels: &mut [f32], prng: &mut Prng) {
    for p in pixels {
        *p = (255.0 * *p + prng.uniform()) / 256.0;
    }
}

pub fn dequantize(dataset: &Dataset, prng: &mut Prng) -> Dataset {
    let mut out = dataset.clone();
    dequantize_pixels(out.images.data_mut(), prng);
    out
}

/// Label-stratified deterministic split into (train, test).
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Domain(format!(
            "split fraction must be in (0,1), got {fraction}"
        )));
    }
    let mut prng = Prng::derived(seed, 0x5B17);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..dataset.classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] as usize == class)
            .collect();
        prng.shuffle(&mut members);
        let take = (members.len() as f64 * fraction).round() as usize;
        train_idx.extend_from_slice(&members[..take]);
        test_idx.extend_from_slice(&members[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let subset = |idx: &[usize], tag: SplitTag| -> Result<Dataset> {
        let d = dataset.image_dim();
        let mut pixels = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            pixels.extend_from_slice(dataset.image(i));
            labels.push(dataset.labels[i]);
        }
        let (c, h, w) = dataset.image_shape();
        Dataset::new(
            Tensor::new(vec![idx.len(), c, h, w], pixels)?,
            labels,
            dataset.classes,
            tag,
        )
    };
    Ok((
        subset(&train_idx, SplitTag::Train)?,
        subset(&test_idx, SplitTag::Test)?,
    ))
}

/// Binary cache: "NFDS", version, N/C/H/W, class count (all LE u32), raw LE
/// f32 pixels, labels as bytes.
pub fn cache_bytes(dataset: &Dataset) -> Vec<u8> {
    let (c, h, w) = dataset.image_shape();
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    for v in [
        CACHE_VERSION,
        dataset.len() as u32,
        c as u32,
        h as u32,
        w as u32,
        dataset.classes as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &p in dataset.images.data() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out.extend_from_slice(&dataset.labels);
    out
}

pub fn cache_from_bytes(buf: &[u8]) -> Result<Dataset> {
    if buf.len() < 4 || &buf[..4] != CACHE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad dataset cache magic, expected NFDS".into(),
        });
    }
    let le_u32 = |off: usize, what: &str| -> Result<u32> {
        if buf.len() < off + 4 {
            return Err(Error::Parse {
                offset: buf.len(),
                message: format!("truncated while reading {what}"),
            });
        }
        Ok(u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()))
    };
    let version = le_u32(4, "version")?;
    if version != CACHE_VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported cache version {version}"),
        });
    }
    let n = le_u32(8, "count")? as usize;
    let c = le_u32(12, "channels")? as usize;
    let h = le_u32(16, "height")? as usize;
    let w = le_u32(20, "width")? as usize;
    let classes = le_u32(24, "class count")? as usize;
    let px_start = 28;
    let px_bytes = n * c * h * w * 4;
    let lbl_start = px_start + px_bytes;
    if buf.len() < lbl_start + n {
        return Err(Error::Parse {
            offset: buf.len(),
            message: format!("cache payload truncated, expected {} bytes", lbl_start + n),
        });
    }
    let pixels: Vec<f32> = buf[px_start..lbl_start]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = buf[lbl_start..lbl_start + n].to_vec();
    Dataset::new(Tensor::new(vec![n, c, h, w], pixels)?, labels, classes, SplitTag::Unsplit)
}

pub fn save_cache(dataset: &Dataset, path: &Path) -> Result<()> {
    crate::harness::fsutil::atomic_write(path, &cache_bytes(dataset))
}

pub fn load_cache(path: &Path) -> Result<Dataset> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    cache_from_bytes(&buf)
}
