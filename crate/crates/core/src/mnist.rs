//! MNIST in IDX containers, binarization, and conversion to activation datasets.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitPattern;
use crate::dataset::{ActivationDataset, Record};
use crate::error::{invalid, Error, Result};
use crate::nn::{Mlp, Selector};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
/// Pixels at or above this intensity read as +1.
pub const THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    /// `count × 784` intensities, row-major per image.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFilter {
    All,
    Pair(u8, u8),
}

impl LabelFilter {
    pub fn keeps(self, label: u8) -> bool {
        match self {
            LabelFilter::All => true,
            LabelFilter::Pair(a, b) => label == a || label == b,
        }
    }
}

fn read_u32<R: Read>(source: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    source.read_exact(&mut b).map_err(|_| Error::Format(format!("truncated {what}")))?;
    Ok(u32::from_be_bytes(b))
}

fn read_payload<R: Read>(source: &mut R, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut data = vec![0u8; len];
    source.read_exact(&mut data).map_err(|_| Error::Format(format!("truncated {what} payload")))?;
    Ok(data)
}

/// Reads an image file, returning the image count and the pixels.
pub fn read_idx_images<R: Read>(mut source: R) -> Result<(usize, Vec<u8>)> {
    let magic = read_u32(&mut source, "image header")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = read_u32(&mut source, "image header")? as usize;
    let rows = read_u32(&mut source, "image header")? as usize;
    let cols = read_u32(&mut source, "image header")? as usize;
    if (rows, cols) != (SIDE, SIDE) {
        return Err(Error::Format(format!("image dimensions {rows}x{cols}, expected {SIDE}x{SIDE}")));
    }
    Ok((count, read_payload(&mut source, count * PIXELS, "image")?))
}

pub fn read_idx_labels<R: Read>(mut source: R) -> Result<Vec<u8>> {
    let magic = read_u32(&mut source, "label header")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = read_u32(&mut source, "label header")? as usize;
    let labels = read_payload(&mut source, count, "label")?;
    if let Some(l) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {l} is not a digit")));
    }
    Ok(labels)
}

pub fn load_idx<R1: Read, R2: Read>(images: R1, labels: R2) -> Result<ImageSet> {
    let (count, images) = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if labels.len() != count {
        return Err(Error::Format(format!("{count} images but {} labels", labels.len())));
    }
    Ok(ImageSet { images, labels })
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<ImageSet> {
    load_idx(BufReader::new(File::open(images)?), BufReader::new(File::open(labels)?))
}

pub fn write_idx_images<W: Write>(pixels: &[u8], mut sink: W) -> Result<()> {
    if pixels.len() % PIXELS != 0 {
        return Err(invalid("pixel buffer is not a whole number of 28x28 images"));
    }
    for v in [IMAGE_MAGIC, (pixels.len() / PIXELS) as u32, SIDE as u32, SIDE as u32] {
        sink.write_all(&v.to_be_bytes())?;
    }
    sink.write_all(pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(labels: &[u8], mut sink: W) -> Result<()> {
    sink.write_all(&LABEL_MAGIC.to_be_bytes())?;
    sink.write_all(&(labels.len() as u32).to_be_bytes())?;
    sink.write_all(labels)?;
    Ok(())
}

pub fn binarize_pixel(p: u8) -> bool {
    p >= THRESHOLD
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn filter(&self, filter: LabelFilter) -> ImageSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| filter.keeps(self.labels[i])).collect();
        ImageSet {
            images: keep.iter().flat_map(|&i| self.image(i).iter().copied()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Thresholded images with pixels mapped to 255 and 0.
    pub fn binarized(&self) -> ImageSet {
        ImageSet {
            images: self.images.iter().map(|&p| if binarize_pixel(p) { 255 } else { 0 }).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn pattern(&self, i: usize) -> BitPattern {
        let bits: Vec<bool> = self.image(i).iter().map(|&p| binarize_pixel(p)).collect();
        BitPattern::from_bools(&bits)
    }

    /// Binarized images as network inputs with pixels in {0, 1}.
    pub fn binary_inputs(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|i| self.image(i).iter().map(|&p| binarize_pixel(p) as u8 as f64).collect())
            .collect()
    }
}

/// What the record value is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Fixed(Selector),
    /// The logit of each image's own label.
    TargetLogit,
}

/// Binarized images as 784-variable records, valued by the classifier's output on
/// the binarized image.
pub fn to_input_dataset(
    imgs: &ImageSet,
    filter: LabelFilter,
    classifier: &Mlp,
    source: ValueSource,
) -> Result<ActivationDataset> {
    let kept = imgs.filter(filter);
    if kept.is_empty() {
        return Err(invalid(format!("no images left after filter {filter:?}")));
    }
    if classifier.input_dim() != PIXELS {
        return Err(Error::DimensionMismatch { expected: PIXELS, found: classifier.input_dim() });
    }
    let inputs = kept.binary_inputs();
    let records = inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let out = classifier.forward(x)?;
            let value = match source {
                ValueSource::Fixed(sel) => sel.select(&out),
                ValueSource::TargetLogit => out
                    .get(kept.labels[i] as usize)
                    .copied()
                    .ok_or(Error::IndexOutOfRange { index: kept.labels[i] as usize, n: out.len() })?,
            };
            Ok(Record::new(kept.pattern(i), value))
        })
        .collect::<Result<_>>()?;
    ActivationDataset::new(PIXELS, records)
}
