//! Binary PPM (P6) / PGM (P5) images, 8-bit, `byte = floor(v·255 + 0.5)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Tensor};

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Encodes a 3-channel image as P6 or a 1-channel image as P5.
pub fn encode(image: &ImageTensor) -> Result<Vec<u8>> {
    if !image.is_image() || !(image.channels() == 1 || image.channels() == 3) {
        return Err(Error::Dimension(format!(
            "PNM output needs 1 or 3 channels, got {:?}",
            image.shape()
        )));
    }
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let magic = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    let d = image.data();
    out.reserve(c * hw);
    for i in 0..hw {
        for ch in 0..c {
            out.push(quantize(d[ch * hw + i]));
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ImageTensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let c = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Format(format!("unsupported PNM magic {other}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PNM field `{s}`")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit PNM is supported (maxval {maxval})"
        )));
    }
    let hw = h * w;
    let raster = bytes
        .get(pos..pos + c * hw)
        .ok_or_else(|| Error::Format("truncated PNM raster".into()))?;
    let mut data = vec![0.0; c * hw];
    for i in 0..hw {
        for ch in 0..c {
            data[ch * hw + i] = dequantize(raster[i * c + ch]);
        }
    }
    Tensor::new(vec![c, h, w], data)
}

pub fn write(path: &Path, image: &ImageTensor) -> Result<()> {
    fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(1.0 / 255.0 * 0.49), 0);
    }

    #[test]
    fn header_layout_is_exact() {
        let img = Tensor::from_fn(&[3, 2, 3], |i| i as f32 / 17.0);
        let bytes = encode(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let gray = Tensor::full(&[1, 2, 2], 1.0);
        assert_eq!(
            encode(&gray).unwrap(),
            b"P5\n2 2\n255\n\xff\xff\xff\xff".to_vec()
        );
    }

    proptest::proptest! {
        #[test]
        fn decode_inverts_encode_up_to_quantization(
            vals in proptest::collection::vec(0.0f32..=1.0, 3 * 4 * 5),
            gray in proptest::bool::ANY,
        ) {
            let c = if gray { 1 } else { 3 };
            let img = Tensor::new(vec![c, 4, 5], vals[..c * 20].to_vec()).unwrap();
            let back = decode(&encode(&img).unwrap()).unwrap();
            proptest::prop_assert_eq!(back.shape(), img.shape());
            for (a, b) in img.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
            // Re-encoding decoded bytes is a fixed point.
            proptest::prop_assert_eq!(encode(&back).unwrap(), encode(&img).unwrap());
        }
    }
}
