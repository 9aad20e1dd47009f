use super::{DataError, Result};

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DataError::Argument(format!(
                "image dimensions {width}x{height} must be positive"
            )));
        }
        if pixels.len() != 3 * width * height {
            return Err(DataError::Argument(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from a per-pixel closure `(x, y) -> [r, g, b]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Decodes binary PPM (P6, maxval 255). Other formats (PNG, JPEG) go through
/// the `image` crate.
pub fn decode_image(bytes: &[u8]) -> Result<ImageRgb> {
    if bytes.starts_with(b"P6") {
        return decode_ppm(bytes);
    }
    if bytes.first() == Some(&b'P') {
        return Err(DataError::Decode {
            offset: 0,
            reason: "unsupported PNM variant; only binary P6 is accepted".into(),
        });
    }
    let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode {
        offset: 0,
        reason: format!("unrecognized image data: {e}"),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageRgb::new(w as usize, h as usize, rgb.into_raw())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DataError::Decode {
                offset: start,
                reason: if start >= self.bytes.len() {
                    format!("truncated header: missing {what}")
                } else {
                    format!("expected {what}")
                },
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let value = text.parse().map_err(|_| DataError::Decode {
            offset: start,
            reason: format!("{what} out of range"),
        })?;
        Ok((value, start))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<ImageRgb> {
    let mut h = Header { bytes, pos: 2 };
    let (width, w_at) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, m_at) = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(DataError::Decode {
            offset: w_at,
            reason: format!("zero image dimension {width}x{height}"),
        });
    }
    if maxval != 255 {
        return Err(DataError::Decode {
            offset: m_at,
            reason: format!("maxval {maxval} is not supported (only 255)"),
        });
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(DataError::Decode {
            offset: h.pos,
            reason: "expected a single whitespace byte before pixel data".into(),
        });
    }
    let start = h.pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| DataError::Decode {
            offset: w_at,
            reason: "image dimensions overflow".into(),
        })?;
    let have = bytes.len() - start;
    if have < need {
        return Err(DataError::Decode {
            offset: bytes.len(),
            reason: format!(
                "truncated pixel data: {width}x{height} needs {need} bytes, found {have}"
            ),
        });
    }
    ImageRgb::new(width, height, bytes[start..start + need].to_vec())
}

/// Binary PPM with a minimal header.
pub fn encode_ppm(img: &ImageRgb) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_png(img: &ImageRgb) -> Result<Vec<u8>> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("buffer length matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| DataError::Argument(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Alias of [`encode_ppm`]: PPM is the pipeline's interchange format.
pub fn encode_image(img: &ImageRgb) -> Vec<u8> {
    encode_ppm(img)
}
