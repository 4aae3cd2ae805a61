//! Binary PPM/PGM writers for inspection images.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::geometry::Vec3;
use crate::masks::Frame;

/// Label colors; background is black.
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

pub fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn ppm_bytes(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

pub fn pgm_bytes(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn write_rgb(path: &Path, width: usize, height: usize, pixels: &[Vec3]) -> Result<()> {
    let rgb: Vec<[u8; 3]> = pixels.iter().map(|c| [to_byte(c.x), to_byte(c.y), to_byte(c.z)]).collect();
    fs::write(path, ppm_bytes(width, height, &rgb))?;
    Ok(())
}

/// Argmax labels painted with [`PALETTE`].
pub fn write_label_overlay(path: &Path, frame: &Frame) -> Result<()> {
    let rgb: Vec<[u8; 3]> = frame.labels().iter().map(|l| PALETTE[*l as usize % PALETTE.len()]).collect();
    fs::write(path, ppm_bytes(frame.width, frame.height, &rgb))?;
    Ok(())
}

/// One grayscale image per channel, `round(255 p)`, named `{stem}_c{channel}.pgm`.
pub fn write_channel_pgms(dir: &Path, stem: &str, frame: &Frame) -> Result<()> {
    for c in 0..frame.channels {
        let gray: Vec<u8> = frame.data.iter().skip(c).step_by(frame.channels).map(|v| to_byte(*v as f64)).collect();
        fs::write(dir.join(format!("{stem}_c{c}.pgm")), pgm_bytes(frame.width, frame.height, &gray))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_and_payload() {
        let b = ppm_bytes(2, 1, &[[1, 2, 3], [4, 5, 6]]);
        assert_eq!(&b[..11], b"P6\n2 1\n255\n");
        assert_eq!(&b[11..], &[1, 2, 3, 4, 5, 6]);
        let g = pgm_bytes(1, 2, &[7, 8]);
        assert_eq!(&g[..11], b"P5\n1 2\n255\n");
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(2.0), 255);
    }

    #[test]
    fn channel_images() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Frame::from_labels(0, 2, 1, 2, &[0, 1]);
        write_channel_pgms(dir.path(), "m", &frame).unwrap();
        let c1 = fs::read(dir.path().join("m_c1.pgm")).unwrap();
        assert_eq!(&c1[c1.len() - 2..], &[0, 255]);
        write_label_overlay(&dir.path().join("o.ppm"), &frame).unwrap();
        let o = fs::read(dir.path().join("o.ppm")).unwrap();
        assert_eq!(&o[o.len() - 6..], &[0, 0, 0, 230, 25, 75]);
    }
}
