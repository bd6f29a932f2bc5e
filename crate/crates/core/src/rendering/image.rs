use std::fs;
use std::io::Write;
use std::path::Path;

use super::RenderError;

/// Linear RGB image, row-major from the top-left, values nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width * height * 3) as usize, "image data length");
        Image { width, height, data }
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Writes an 8-bit RGB PNG (values clamped to [0, 1] and rounded).
    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ExtendedColorType::Rgb8)
            .map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))
    }

    /// Reads an 8-bit PNG; an alpha channel is composited over `background`.
    pub fn load_png(path: &Path, background: [f64; 3]) -> Result<Image, RenderError> {
        let img = image::open(path).map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))?;
        let rgba = img.to_rgba8();
        let (w, h) = rgba.dimensions();
        let mut data = Vec::with_capacity((w * h * 3) as usize);
        for p in rgba.pixels() {
            let a = p.0[3] as f64 / 255.0;
            for c in 0..3 {
                data.push(p.0[c] as f64 / 255.0 * a + background[c] * (1.0 - a));
            }
        }
        Ok(Image::new(w, h, data))
    }

    /// Box-filter downsample by an integer factor (trailing partial blocks dropped).
    pub fn downsample(&self, factor: u32) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Image::filled(w, h, [0.0; 3]);
        let n = (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v / n));
            }
        }
        out
    }

    /// Horizontal concatenation (heights must match).
    pub fn hstack(images: &[&Image]) -> Image {
        let h = images[0].height;
        let w: u32 = images.iter().map(|i| i.width).sum();
        let mut out = Image::filled(w, h, [0.0; 3]);
        let mut x0 = 0;
        for img in images {
            assert_eq!(img.height, h, "hstack height mismatch");
            for y in 0..h {
                for x in 0..img.width {
                    out.set_pixel(x0 + x, y, img.pixel(x, y));
                }
            }
            x0 += img.width;
        }
        out
    }
}

/// Single-channel PFM (`Pf`, little-endian, scale -1.0, rows bottom to top).
pub fn write_pfm(path: &Path, width: u32, height: u32, values: &[f64]) -> Result<(), RenderError> {
    assert_eq!(values.len(), (width * height) as usize);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for y in (0..height).rev() {
        for x in 0..width {
            out.extend_from_slice(&(values[(y * width + x) as usize] as f32).to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))
}

/// Reads a file written by [`write_pfm`]; returns `(width, height, values)` top row first.
pub fn read_pfm(path: &Path) -> Result<(u32, u32, Vec<f32>), RenderError> {
    let bytes = fs::read(path).map_err(|e| RenderError::Image(format!("{}: {e}", path.display())))?;
    let bad = || RenderError::Image(format!("{}: malformed PFM", path.display()));
    let mut lines = 0;
    let mut header_end = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            lines += 1;
            if lines == 3 {
                header_end = i + 1;
                break;
            }
        }
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad())?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("Pf") {
        return Err(bad());
    }
    let w: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let h: u32 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let scale: f64 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    if scale >= 0.0 {
        return Err(RenderError::Image("big-endian PFM is not supported".into()));
    }
    let body = &bytes[header_end..];
    if body.len() != (w * h * 4) as usize {
        return Err(bad());
    }
    let mut values = vec![0.0f32; (w * h) as usize];
    for (row, chunk) in body.chunks_exact((w * 4) as usize).enumerate() {
        let y = h as usize - 1 - row;
        for (x, v) in chunk.chunks_exact(4).enumerate() {
            values[y * w as usize + x] = f32::from_le_bytes(v.try_into().expect("4 bytes"));
        }
    }
    Ok((w, h, values))
}
