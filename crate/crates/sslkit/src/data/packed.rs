//! Packed binary image-set format for fast tests.
//!
//! Layout (all integers little-endian u32):
//!   magic "IMSET1" | C | per-class counts (C values) | H | W |
//!   raw u8 RGB pixel data, samples grouped by class in class order.

use super::{ImageSample, LabeledDataset};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const PACKED_FILE: &str = "data.imset";
const MAGIC: &[u8; 6] = b"IMSET1";

pub fn write_packed(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let (h, w) = match dataset.samples().first() {
        Some(s) => (s.height, s.width),
        None => return Err(Error::data("cannot pack an empty dataset")),
    };
    if dataset
        .samples()
        .iter()
        .any(|s| s.height != h || s.width != w)
    {
        return Err(Error::data("packed format requires uniform image dimensions"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write_u32 =
        |out: &mut std::io::BufWriter<std::fs::File>, v: usize| -> Result<()> {
            out.write_all(&(v as u32).to_le_bytes())
                .map_err(|e| Error::io(path, e))
        };
    out.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    write_u32(&mut out, dataset.num_classes())?;
    for &c in dataset.class_counts() {
        write_u32(&mut out, c)?;
    }
    write_u32(&mut out, h)?;
    write_u32(&mut out, w)?;
    for class in 0..dataset.num_classes() {
        for i in dataset.indices_of_class(class) {
            let bytes: Vec<u8> = dataset.sample(i)
                .pixels
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_packed(path: &Path, class_names: Vec<String>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = std::io::BufReader::new(file);
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::data(format!("{}: bad magic bytes", path.display())));
    }
    let read_u32 = |input: &mut std::io::BufReader<std::fs::File>| -> Result<usize> {
        let mut buf = [0u8; 4];
        input.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(u32::from_le_bytes(buf) as usize)
    };
    let c = read_u32(&mut input)?;
    if c != class_names.len() {
        return Err(Error::data(format!(
            "{}: file has {c} classes, classes.json lists {}",
            path.display(),
            class_names.len()
        )));
    }
    let mut counts = Vec::with_capacity(c);
    for _ in 0..c {
        counts.push(read_u32(&mut input)?);
    }
    let h = read_u32(&mut input)?;
    let w = read_u32(&mut input)?;
    let mut samples = Vec::new();
    let mut buf = vec![0u8; h * w * 3];
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            input.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let pixels: Vec<f64> = buf.iter().map(|&b| b as f64 / 255.0).collect();
            samples.push(ImageSample::new(h, w, pixels, Some(class))?);
        }
    }
    LabeledDataset::new(samples, class_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn packed_round_trip_preserves_quantized_pixels() {
        let ds = generate_synthetic(&SyntheticSpec::small_two_class(3), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(PACKED_FILE);
        write_packed(&ds, &path).unwrap();
        let loaded = read_packed(&path, ds.class_names().to_vec()).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.class_counts(), ds.class_counts());
        for (a, b) in loaded.samples().iter().zip(ds.samples()) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                assert!((x - y).abs() < 1.0 / 255.0 + 1e-9);
            }
        }
        // quantized content is stable across a second round trip
        let path2 = dir.path().join("again.imset");
        write_packed(&loaded, &path2).unwrap();
        let again = read_packed(&path2, ds.class_names().to_vec()).unwrap();
        for (a, b) in again.samples().iter().zip(loaded.samples()) {
            assert_eq!(a.pixels, b.pixels);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.imset");
        std::fs::write(&path, b"NOTSET123").unwrap();
        assert!(read_packed(&path, vec!["a".into()]).is_err());
    }
}
