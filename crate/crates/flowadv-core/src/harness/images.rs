//! Binary PGM (P5) output for clean/adversarial/perturbation image dumps.

use crate::error::{Error, Result};
use crate::harness::fsutil::atomic_write;
use std::path::Path;

/// Gain for the magnified perturbation view: an 8/255 perturbation spans
/// roughly ±40% of the gray range at gain 5.
pub const PERTURBATION_GAIN: f32 = 5.0;

/// Encodes one grayscale image (values clipped to [0,1]) as binary PGM.
pub fn pgm_bytes(pixels: &[f32], width: usize, height: usize) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{} pixels for {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Parses a binary PGM produced by `pgm_bytes` back into [0,1] pixels.
pub fn pgm_from_bytes(buf: &[u8]) -> Result<(Vec<f32>, usize, usize)> {
    let header_end = buf
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| Error::Parse {
            offset: buf.len(),
            message: "PGM header incomplete".into(),
        })?;
    let header = std::str::from_utf8(&buf[..header_end]).map_err(|_| Error::Parse {
        offset: 0,
        message: "PGM header not UTF-8".into(),
    })?;
    let mut fields = header.split_ascii_whitespace();
    if fields.next() != Some("P5") {
        return Err(Error::Parse {
            offset: 0,
            message: "not a binary PGM (P5)".into(),
        });
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("bad PGM {what}"),
            })
    };
    let width = next_usize("width")?;
    let height = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("unsupported PGM maxval {maxval}"),
        });
    }
    let data = &buf[header_end + 1..];
    if data.len() != width * height {
        return Err(Error::Parse {
            offset: buf.len(),
            message: format!("PGM payload is {} bytes, expected {}", data.len(), width * height),
        });
    }
    Ok((
        data.iter().map(|&b| b as f32 / 255.0).collect(),
        width,
        height,
    ))
}

/// Writes `<prefix>_clean.pgm`, `<prefix>_adv.pgm`, and
/// `<prefix>_perturbation.pgm` (0.5 + gain·(x_adv − x), clipped).
pub fn dump_images(
    clean: &[f32],
    adversarial: &[f32],
    width: usize,
    height: usize,
    prefix: &Path,
) -> Result<()> {
    if clean.len() != adversarial.len() {
        return Err(Error::ShapeMismatch(format!(
            "clean has {} pixels, adversarial {}",
            clean.len(),
            adversarial.len()
        )));
    }
    let perturbation: Vec<f32> = clean
        .iter()
        .zip(adversarial)
        .map(|(&c, &a)| 0.5 + PERTURBATION_GAIN * (a - c))
        .collect();
    let with_suffix = |suffix: &str| {
        let mut name = prefix.file_name().unwrap_or_default().to_os_string();
        name.push(suffix);
        prefix.with_file_name(name)
    };
    atomic_write(&with_suffix("_clean.pgm"), &pgm_bytes(clean, width, height)?)?;
    atomic_write(&with_suffix("_adv.pgm"), &pgm_bytes(adversarial, width, height)?)?;
    atomic_write(
        &with_suffix("_perturbation.pgm"),
        &pgm_bytes(&perturbation, width, height)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_8bit_quantization() {
        let px: Vec<f32> = (0..64).map(|i| i as f32 / 63.0).collect();
        let bytes = pgm_bytes(&px, 8, 8).unwrap();
        let (back, w, h) = pgm_from_bytes(&bytes).unwrap();
        assert_eq!((w, h), (8, 8));
        for (a, b) in px.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn zero_perturbation_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("ex0");
        let x = vec![0.3f32; 16];
        dump_images(&x, &x, 4, 4, &prefix).unwrap();
        let buf = std::fs::read(dir.path().join("ex0_perturbation.pgm")).unwrap();
        let (px, _, _) = pgm_from_bytes(&buf).unwrap();
        assert!(px.iter().all(|&p| (p - 128.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn gain_spans_expected_range() {
        let eps = 8.0f32 / 255.0;
        let x = vec![0.5f32];
        let adv = vec![0.5 + eps];
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("g");
        dump_images(&x, &adv, 1, 1, &prefix).unwrap();
        let buf = std::fs::read(dir.path().join("g_perturbation.pgm")).unwrap();
        let (px, _, _) = pgm_from_bytes(&buf).unwrap();
        // 0.5 + 5·(8/255) ≈ 0.657
        assert!((px[0] - (0.5 + 5.0 * eps)).abs() < 1.0 / 255.0);
    }

    #[test]
    fn clipping_applies() {
        let bytes = pgm_bytes(&[-0.5, 1.5], 2, 1).unwrap();
        let (px, _, _) = pgm_from_bytes(&bytes).unwrap();
        assert_eq!(px, vec![0.0, 1.0]);
    }
}
