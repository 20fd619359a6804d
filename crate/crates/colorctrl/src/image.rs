//! 8-bit image buffers and the codecs the pipeline reads and writes:
//! PNG (via the `png` crate), PPM (P6) and PGM (P5).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit image, 1 (gray) or 3 (RGB) channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "unsupported channel count {channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        })
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        img.data.fill(value);
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, ch: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// ITU-R 601 luma conversion; grayscale inputs pass through unchanged.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = ImageBuffer::new(self.width, self.height, 1).unwrap();
        for i in 0..self.width * self.height {
            let r = self.data[i * 3] as f32;
            let g = self.data[i * 3 + 1] as f32;
            let b = self.data[i * 3 + 2] as f32;
            out.data[i] = (0.299 * r + 0.587 * g + 0.114 * b)
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        out
    }
}

/// Write an image choosing the codec from the file extension
/// (`.png`, `.ppm`, `.pgm`).
pub fn save(path: &Path, img: &ImageBuffer) -> Result<()> {
    match extension(path) {
        Some("png") => write_png(path, img),
        Some("ppm") => write_pnm(path, img),
        Some("pgm") => write_pnm(path, img),
        other => Err(Error::Input(format!(
            "unsupported image extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

/// Read an image choosing the codec from the file extension.
pub fn load(path: &Path) -> Result<ImageBuffer> {
    match extension(path) {
        Some("png") => read_png(path),
        Some("ppm") | Some("pgm") => read_pnm(path),
        other => Err(Error::Input(format!(
            "unsupported image extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let file = create(path)?;
    let w = BufWriter::new(file);
    let mut encoder = png::Encoder::new(w, img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Codec(e.to_string()))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Codec(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Codec(e.to_string()))?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Codec(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::Codec(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    ImageBuffer::from_raw(info.width as usize, info.height as usize, channels, buf)
}

/// P6 for RGB, P5 for grayscale.
pub fn write_pnm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut w = BufWriter::new(create(path)?);
    write!(w, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn read_pnm(path: &Path) -> Result<ImageBuffer> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let magic = pnm_token(&bytes, &mut pos)
        .ok_or_else(|| Error::Codec(format!("{}: missing PNM magic", path.display())))?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::Codec(format!(
                "{}: unsupported PNM magic {other}",
                path.display()
            )))
        }
    };
    let width = pnm_number(&bytes, &mut pos, path)?;
    let height = pnm_number(&bytes, &mut pos, path)?;
    let maxval = pnm_number(&bytes, &mut pos, path)?;
    if maxval != 255 {
        return Err(Error::Codec(format!(
            "{}: only maxval 255 is supported",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height * channels;
    if bytes.len() < pos + expected {
        return Err(Error::Codec(format!(
            "{}: truncated PNM payload",
            path.display()
        )));
    }
    ImageBuffer::from_raw(width, height, channels, bytes[pos..pos + expected].to_vec())
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // Skip whitespace and '#' comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

fn pnm_number(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<usize> {
    pnm_token(bytes, pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Codec(format!("{}: malformed PNM header", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> ImageBuffer {
        let mut img = ImageBuffer::new(5, 4, 3).unwrap();
        for (i, b) in img.data_mut().iter_mut().enumerate() {
            *b = (i * 7 % 256) as u8;
        }
        img
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join("colorctrl_img_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        let img = test_image();
        write_png(&path, &img).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }

    #[test]
    fn pnm_round_trip_rgb_and_gray() {
        let dir = std::env::temp_dir().join("colorctrl_img_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let rgb = test_image();
        let path = dir.join("rt.ppm");
        write_pnm(&path, &rgb).unwrap();
        assert_eq!(read_pnm(&path).unwrap(), rgb);

        let gray = rgb.to_gray();
        let path = dir.join("rt.pgm");
        write_pnm(&path, &gray).unwrap();
        assert_eq!(read_pnm(&path).unwrap(), gray);
    }

    #[test]
    fn gray_conversion_is_luma_601() {
        let mut img = ImageBuffer::new(1, 1, 3).unwrap();
        img.set(0, 0, 0, 255);
        let gray = img.to_gray();
        assert_eq!(gray.get(0, 0, 0), (0.299f32 * 255.0).round() as u8);
    }

    #[test]
    fn rejects_bad_channel_count() {
        assert!(ImageBuffer::new(2, 2, 4).is_err());
    }
}
