//! Dataset ingestion: IDX parsing (optionally gzipped), 0/1 filtering,
//! zero-padding of 28x28 images into 32x32 frames, deterministic splits, and
//! a synthetic two-class dataset for fully offline runs.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const RAW_SIDE: usize = 28;
pub const PADDED_SIDE: usize = 32;
pub const PAD: usize = 2;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Environment variable consulted when no dataset directory flag is given.
pub const DATA_DIR_ENV: &str = "QPATE_DATA_DIR";

/// One preprocessed sample: a 32x32 image in the unit interval with a
/// 2-pixel zero border,
/// its binary label, and the index it had in the source dataset.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub pixels: Vec<f64>,
    pub label: u8,
    pub source_id: usize,
}

/// Raw images straight out of an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn count(&self) -> usize {
        self.pixels
            .len()
            .checked_div(self.rows * self.cols)
            .unwrap_or(0)
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[index * size..(index + 1) * size]
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip container is corrupt: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "truncated header: expected {end} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file (magic 2051, dims count x rows x cols).
/// Transparently decompresses gzip containers.
pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImages> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x} at offset 0 (expected {IMAGE_MAGIC})"
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let rows = read_u32_be(&bytes, 8)? as usize;
    let cols = read_u32_be(&bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "image payload size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(RawImages {
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

/// Parses an IDX label file (magic 2049, dims count).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x} at offset 0 (expected {LABEL_MAGIC})"
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "label payload size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Serializes images back into the IDX byte layout; inverse of
/// [`parse_idx_images`] on uncompressed inputs.
pub fn write_idx_images(images: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Indices of the samples labeled 0 or 1, order preserved.
pub fn filter_binary(labels: &[u8]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l <= 1)
        .map(|(i, _)| i)
        .collect()
}

/// Scales a 28x28 byte image by 1/255 and centers it in a zero 32x32 frame.
pub fn pad_normalize(image: &[u8]) -> Result<Vec<f64>> {
    if image.len() != RAW_SIDE * RAW_SIDE {
        return Err(Error::Usage(format!(
            "expected {} pixels, got {}",
            RAW_SIDE * RAW_SIDE,
            image.len()
        )));
    }
    let mut out = vec![0.0; PADDED_SIDE * PADDED_SIDE];
    for y in 0..RAW_SIDE {
        for x in 0..RAW_SIDE {
            out[(y + PAD) * PADDED_SIDE + (x + PAD)] = image[y * RAW_SIDE + x] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Filters to the binary task and preprocesses each kept image.
pub fn build_records(images: &RawImages, labels: &[u8]) -> Result<Vec<ImageRecord>> {
    if images.count() != labels.len() {
        return Err(Error::Format(format!(
            "image count {} does not match label count {}",
            images.count(),
            labels.len()
        )));
    }
    filter_binary(labels)
        .into_iter()
        .map(|i| {
            Ok(ImageRecord {
                pixels: pad_normalize(images.image(i))?,
                label: labels[i],
                source_id: i,
            })
        })
        .collect()
}

/// Split sizes and shuffle seed. Defaults follow the 1000/1000/100/100 layout.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub teacher_pool: usize,
    pub student_pool: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            teacher_pool: 1000,
            student_pool: 1000,
            validation: 100,
            test: 100,
            seed: 0,
        }
    }
}

/// Pairwise-disjoint index sets produced by a seeded shuffle followed by
/// consecutive slicing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub teacher: Vec<usize>,
    pub student: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_splits(dataset_len: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    let needed = spec.teacher_pool + spec.student_pool + spec.validation + spec.test;
    if dataset_len < needed {
        return Err(Error::Usage(format!(
            "dataset has {dataset_len} records but the splits need {needed}"
        )));
    }
    let mut indices: Vec<usize> = (0..dataset_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle(&mut indices, &mut rng);

    let mut cursor = indices.into_iter();
    let take = |cursor: &mut std::vec::IntoIter<usize>, n: usize| cursor.by_ref().take(n).collect();
    Ok(SplitIndices {
        teacher: take(&mut cursor, spec.teacher_pool),
        student: take(&mut cursor, spec.student_pool),
        validation: take(&mut cursor, spec.validation),
        test: take(&mut cursor, spec.test),
    })
}

/// Fisher-Yates with our seeded generator so splits are stable across
/// platforms and releases.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

pub fn take_records(records: &[ImageRecord], indices: &[usize]) -> Vec<ImageRecord> {
    indices.iter().map(|&i| records[i].clone()).collect()
}

/// Deterministic synthetic dataset: class 0 draws a noisy ring, class 1 a
/// noisy vertical bar, both rasterized at 28x28 and then padded/normalized
/// like the real data. Labels alternate so counts stay balanced within one.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    if n == 0 {
        return Err(Error::Usage("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let mut raw = [0u8; RAW_SIDE * RAW_SIDE];
        if label == 0 {
            draw_ring(&mut raw, &mut rng);
        } else {
            draw_bar(&mut raw, &mut rng);
        }
        speckle(&mut raw, &mut rng);
        records.push(ImageRecord {
            pixels: pad_normalize(&raw)?,
            label,
            source_id: i,
        });
    }
    Ok(records)
}

fn draw_ring(raw: &mut [u8], rng: &mut ChaCha8Rng) {
    let cx = 13.5 + rng.random::<f64>() * 3.0 - 1.5;
    let cy = 13.5 + rng.random::<f64>() * 3.0 - 1.5;
    let radius = 7.5 + rng.random::<f64>() * 3.0 - 1.5;
    let thickness = 1.8 + rng.random::<f64>() * 0.8;
    for y in 0..RAW_SIDE {
        for x in 0..RAW_SIDE {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            if (d - radius).abs() < thickness {
                raw[y * RAW_SIDE + x] = 220;
            }
        }
    }
}

fn draw_bar(raw: &mut [u8], rng: &mut ChaCha8Rng) {
    let cx = 13.5 + rng.random::<f64>() * 6.0 - 3.0;
    let half_width = 1.2 + rng.random::<f64>() * 0.8;
    let y0 = 4 + rng.random_range(0..3);
    let y1 = 24 - rng.random_range(0..3);
    for y in y0..y1 {
        for x in 0..RAW_SIDE {
            if (x as f64 - cx).abs() < half_width {
                raw[y * RAW_SIDE + x] = 220;
            }
        }
    }
}

fn speckle(raw: &mut [u8], rng: &mut ChaCha8Rng) {
    for v in raw.iter_mut() {
        let noise = rng.random_range(0..24u32) as u8;
        *v = v.saturating_add(noise);
    }
}

/// Resolves the dataset directory from an explicit flag or the environment.
pub fn resolve_data_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Loads one split ("train" or "t10k") from a dataset directory, accepting
/// both gzipped and raw IDX files, and cross-checks the counts.
pub fn load_idx_dir(dir: &Path, prefix: &str) -> Result<(RawImages, Vec<u8>)> {
    let image_file = find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let label_file = find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let images = parse_idx_images(&std::fs::read(image_file)?)?;
    let labels = parse_idx_labels(&std::fs::read(label_file)?)?;
    if images.count() != labels.len() {
        return Err(Error::Format(format!(
            "{prefix}: image count {} does not match label count {}",
            images.count(),
            labels.len()
        )));
    }
    Ok((images, labels))
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Usage(format!(
        "dataset file {stem}[.gz] not found in {}; pass --data-dir or set {DATA_DIR_ENV}",
        dir.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_image_fixture() -> Vec<u8> {
        write_idx_images(&RawImages {
            rows: RAW_SIDE,
            cols: RAW_SIDE,
            pixels: vec![0u8; RAW_SIDE * RAW_SIDE],
        })
    }

    #[test]
    fn parses_single_zero_image_fixture() {
        let parsed = parse_idx_images(&one_image_fixture()).unwrap();
        assert_eq!(parsed.count(), 1);
        assert_eq!(parsed.rows, 28);
        assert!(parsed.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn parses_single_label_fixture() {
        let bytes = write_idx_labels(&[1]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![1]);
    }

    #[test]
    fn idx_round_trip_is_byte_exact() {
        let images = RawImages {
            rows: 28,
            cols: 28,
            pixels: (0..28 * 28 * 3).map(|i| (i % 251) as u8).collect(),
        };
        let bytes = write_idx_images(&images);
        let reparsed = parse_idx_images(&bytes).unwrap();
        assert_eq!(write_idx_images(&reparsed), bytes);

        let labels = vec![0u8, 1, 5, 9];
        let lbytes = write_idx_labels(&labels);
        assert_eq!(write_idx_labels(&parse_idx_labels(&lbytes).unwrap()), lbytes);
    }

    #[test]
    fn gzipped_idx_is_accepted() {
        use std::io::Write;
        let bytes = one_image_fixture();
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&bytes).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(parse_idx_images(&gz).unwrap().count(), 1);
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut bytes = one_image_fixture();
        bytes[3] = 0xff;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));

        let mut truncated = one_image_fixture();
        truncated.truncate(100);
        let err = parse_idx_images(&truncated).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("expected") && msg.contains("got"), "{msg}");
    }

    #[test]
    fn filter_keeps_only_binary_labels_in_order() {
        assert_eq!(filter_binary(&[0, 5, 1, 9, 1]), vec![0, 2, 4]);
        assert!(filter_binary(&[3, 7, 9]).is_empty());
    }

    #[test]
    fn pad_normalize_offsets_and_scales() {
        let mut image = vec![0u8; 28 * 28];
        image[0] = 255;
        let out = pad_normalize(&image).unwrap();
        assert_eq!(out[2 * 32 + 2], 1.0);
        assert_eq!(out.iter().filter(|&&v| v != 0.0).count(), 1);

        let zeros = pad_normalize(&vec![0u8; 28 * 28]).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pad_normalize_preserves_mass_and_zero_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let image: Vec<u8> = (0..28 * 28).map(|_| rng.random::<u8>()).collect();
            let out = pad_normalize(&image).unwrap();
            let in_mass: f64 = image.iter().map(|&v| v as f64).sum::<f64>() / 255.0;
            let out_mass: f64 = out.iter().sum();
            approx::assert_relative_eq!(in_mass, out_mass, epsilon = 1e-9);
            assert!(border_is_zero(&out));
        }
    }

    fn border_is_zero(pixels: &[f64]) -> bool {
        for y in 0..32 {
            for x in 0..32 {
                if (y < 2 || y >= 30 || x < 2 || x >= 30) && pixels[y * 32 + x] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn splits_are_disjoint_sized_and_reproducible() {
        let spec = SplitSpec {
            seed: 11,
            ..SplitSpec::default()
        };
        let a = make_splits(2500, &spec).unwrap();
        let b = make_splits(2500, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.teacher.len(), 1000);
        assert_eq!(a.student.len(), 1000);
        assert_eq!(a.validation.len(), 100);
        assert_eq!(a.test.len(), 100);

        let mut all: Vec<usize> = a
            .teacher
            .iter()
            .chain(&a.student)
            .chain(&a.validation)
            .chain(&a.test)
            .copied()
            .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total, "split index sets overlap");
    }

    #[test]
    fn splits_reject_insufficient_data() {
        assert!(make_splits(100, &SplitSpec::default()).is_err());
    }

    #[test]
    fn synthetic_dataset_is_deterministic_and_balanced() {
        let a = synthetic_dataset(11, 5).unwrap();
        let b = synthetic_dataset(11, 5).unwrap();
        assert_eq!(a.len(), 11);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.label, y.label);
        }
        let zeros = a.iter().filter(|r| r.label == 0).count();
        let ones = a.len() - zeros;
        assert!(zeros.abs_diff(ones) <= 1);
        for r in &a {
            assert!(border_is_zero(&r.pixels));
            assert!(r.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
