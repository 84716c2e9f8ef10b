//! Binary PGM (P5) / PPM (P6) images, 8-bit only, as planar `[C, H, W]`
//! tensors with values in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{wfdt, Tensor};

/// A `[C, H, W]` tensor with `C ∈ {1, 3}` and every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    tensor: Tensor,
}

impl Image {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let (c, _, _) = tensor.chw()?;
        if c != 1 && c != 3 {
            return Err(Error::InvalidArgument(format!("image must have 1 or 3 channels, got {c}")));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { tensor })
    }

    /// Clamps into `[0, 1]` instead of rejecting.
    pub fn clamped(tensor: &Tensor) -> Result<Self> {
        Self::new(tensor.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => return Err(Error::Format(format!("unsupported PNM magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(Error::Format("empty PNM file".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | Some(b'\r') | None) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while matches!(bytes.get(pos), Some(b) if b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!("malformed PNM header at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PNM header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after PNM maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}; only 8-bit (255) is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("degenerate image {width}x{height}")));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

/// Decodes an in-memory P5/P6 file.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let hdr = parse_header(bytes)?;
    let (c, h, w) = (hdr.channels, hdr.height, hdr.width);
    let need = c * h * w;
    let payload = &bytes[hdr.data_offset..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "truncated PNM payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    let mut data = vec![0.0; need];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = payload[(y * w + x) * c + ch] as f64 / 255.0;
            }
        }
    }
    Image::new(Tensor::from_raw(vec![c, h, w], data))
}

/// Encodes a `[C, H, W]` tensor (C = 1 → P5, C = 3 → P6), clamping to
/// `[0, 1]` and quantizing with `round(v · 255)`.
pub fn encode_pnm(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = t.chw()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::InvalidArgument(format!("cannot write {c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(t.at3(ch, y, x)));
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_pnm(&bytes)
}

pub fn write_ppm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(t)?).map_err(|e| Error::file(path, e))
}

fn is_wfdt(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wfdt"))
}

/// Loads a `.wfdt` tensor verbatim, anything else as a PNM image.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if is_wfdt(path) {
        wfdt::load(path)
    } else {
        Ok(read_ppm(path)?.into_tensor())
    }
}

/// Saves to `.wfdt` exactly, anything else as a clamped 8-bit PNM.
pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_wfdt(path) {
        wfdt::save(path, t)
    } else {
        write_ppm(t, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn all_white_and_all_black() {
        let mut white = b"P6\n2 2\n255\n".to_vec();
        white.extend([255u8; 12]);
        assert_eq!(decode_pnm(&white).unwrap().tensor(), &Tensor::ones(&[3, 2, 2]));
        let mut black = b"P5 2 2 255\n".to_vec();
        black.extend([0u8; 4]);
        assert_eq!(decode_pnm(&black).unwrap().tensor(), &Tensor::zeros(&[1, 2, 2]));
    }

    #[test]
    fn header_comments_and_errors() {
        let mut ok = b"P5\n# comment\n1 1\n255\n".to_vec();
        ok.push(128);
        assert!((decode_pnm(&ok).unwrap().tensor().data()[0] - 128.0 / 255.0).abs() < 1e-15);
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P6\n2 2\n255\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0 0 0"), Err(Error::Format(_))));
        assert!(matches!(decode_pnm(b"P6\nx 2\n255\n"), Err(Error::Format(_))));
    }

    #[test]
    fn clamps_on_write() {
        let t = Tensor::new(&[1, 1, 2], vec![1.5, -0.1]).unwrap();
        let bytes = encode_pnm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 0]);
    }

    proptest! {
        #[test]
        fn write_read_is_byte_identical(c in prop::sample::select(vec![1usize, 3]), h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut file = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            file.extend((0..c * h * w).map(|_| (rng.next_u64() & 0xff) as u8));
            let img = decode_pnm(&file).unwrap();
            prop_assert_eq!(encode_pnm(img.tensor()).unwrap(), file);
        }

        #[test]
        fn quantization_bound(seed in any::<u64>()) {
            let t = Tensor::rand_uniform(&[3, 4, 5], 0.0, 1.0, &mut Rng::new(seed));
            let back = decode_pnm(&encode_pnm(&t).unwrap()).unwrap();
            prop_assert!(back.tensor().max_abs_diff(&t).unwrap() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
