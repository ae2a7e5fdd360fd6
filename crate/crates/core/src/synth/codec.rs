//! Binary PGM (P5, 8-bit) images plus an `id,label,filename` manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImageSample;
use crate::error::{Error, Result};
use crate::types::{Label, SampleId};

pub const MANIFEST: &str = "manifest.csv";

pub fn encode_pgm(image: &ImageSample) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len());
    for (index, &value) in image.pixels.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::IntensityOutOfRange { index, value });
        }
        out.push((value * 255.0).round() as u8);
    }
    Ok(out)
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::PgmHeader("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::PgmHeader(format!("bad {what} `{}`", String::from_utf8_lossy(tok))))
}

pub fn decode_pgm(bytes: &[u8], id: SampleId, label: Label) -> Result<ImageSample> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::PgmHeader(format!(
            "magic `{}` is not P5",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::PgmHeader(format!(
            "maxval {maxval}, only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::PgmHeader("zero dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::PgmHeader("missing separator before payload".into()));
    }
    let payload = &bytes[pos + 1..];
    let expected = width * height;
    if payload.len() != expected {
        return Err(Error::PgmTruncated {
            expected,
            actual: payload.len(),
        });
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageSample::new(id, width, height, pixels, label)
}

pub fn write_image(path: &Path, image: &ImageSample) -> Result<()> {
    fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path, id: SampleId, label: Label) -> Result<ImageSample> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, id, label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: SampleId,
    pub label: Label,
    pub filename: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "filename"] {
        return Err(Error::Manifest(format!(
            "{}: header must be id,label,filename",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize() {
        let row: ManifestRow = row?;
        if !seen.insert(row.id) {
            return Err(Error::Manifest(format!(
                "duplicate id {} in {}",
                row.id,
                path.display()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes `dir/manifest.csv` and one PGM per sample.
pub fn write_split(dir: &Path, samples: &[ImageSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(MANIFEST);
    let mut writer = csv::Writer::from_path(&manifest)?;
    for s in samples {
        let filename = format!("{:06}.pgm", s.id.0);
        write_image(&dir.join(&filename), s)?;
        writer.serialize(ManifestRow {
            id: s.id,
            label: s.label,
            filename,
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<Vec<ImageSample>> {
    let rows = read_manifest(&dir.join(MANIFEST))?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let path = dir.join(&row.filename);
        if !path.is_file() {
            return Err(Error::Manifest(format!(
                "sample {} lists missing file {}",
                row.id, row.filename
            )));
        }
        out.push(read_image(&path, row.id, row.label)?);
    }
    if let Some(first) = out.first() {
        if let Some(odd) = out
            .iter()
            .find(|s| (s.width, s.height) != (first.width, first.height))
        {
            return Err(Error::Manifest(format!(
                "sample {} has mismatched dimensions",
                odd.id
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, DatasetSpec};

    #[test]
    fn zero_image_bytes() {
        let img = ImageSample::new(SampleId(0), 2, 2, vec![0.0; 4], Label::Negative).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert_eq!(bytes, b"P5\n2 2\n255\n\0\0\0\0");
    }

    #[test]
    fn round_trip_is_exact_after_quantization() {
        let spec = DatasetSpec {
            n_samples: 4,
            image_size: 16,
            ..Default::default()
        };
        for s in generate_dataset(&spec).unwrap() {
            let bytes = encode_pgm(&s).unwrap();
            let back = decode_pgm(&bytes, s.id, s.label).unwrap();
            let quantized: Vec<f64> = s
                .pixels
                .iter()
                .map(|p| (p * 255.0).round() / 255.0)
                .collect();
            assert_eq!(back.pixels, quantized);
            assert_eq!(encode_pgm(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        match decode_pgm(&bytes, SampleId(0), Label::Negative) {
            Err(Error::PgmTruncated {
                expected: 4,
                actual: 3,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b"P2\n2 2\n255\n\0\0\0\0"[..],
            b"P5\n2 x\n255\n\0\0\0\0",
            b"P5\n2 2\n65535\n\0\0\0\0",
            b"P5",
        ] {
            assert!(matches!(
                decode_pgm(bad, SampleId(0), Label::Negative),
                Err(Error::PgmHeader(_))
            ));
        }
        let with_comment = b"P5\n# made by hand\n1 1\n255\n\x80";
        let img = decode_pgm(with_comment, SampleId(0), Label::Negative).unwrap();
        assert!((img.pixels[0] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_intensity_is_rejected_on_write() {
        let img = ImageSample {
            id: SampleId(0),
            width: 1,
            height: 1,
            pixels: vec![1.5],
            label: Label::Negative,
        };
        assert!(matches!(
            encode_pgm(&img),
            Err(Error::IntensityOutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn split_directory_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_samples: 6,
            image_size: 8,
            ..Default::default()
        };
        let data = generate_dataset(&spec).unwrap();
        write_split(dir.path(), &data).unwrap();
        let back = read_split(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[3].label, data[3].label);
        std::fs::remove_file(dir.path().join("000002.pgm")).unwrap();
        assert!(matches!(read_split(dir.path()), Err(Error::Manifest(_))));
    }
}
