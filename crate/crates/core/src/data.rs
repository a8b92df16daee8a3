//! Source samples, the synthetic toy-digit generator and dataset file formats.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One source item. `id` is unique within an experiment and survives
/// splitting, subsampling and label corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub image: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    classes: usize,
    shape: ImageShape,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, classes: usize, shape: ImageShape) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Validation("dataset needs at least one class".into()));
        }
        for s in &samples {
            if s.image.len() != shape.len() {
                return Err(Error::Validation(format!(
                    "sample {} has {} values, expected {}",
                    s.id,
                    s.image.len(),
                    shape.len()
                )));
            }
            if s.label >= classes {
                return Err(Error::Validation(format!(
                    "sample {} has label {} outside {classes} classes",
                    s.id, s.label
                )));
            }
        }
        Ok(Dataset { samples, classes, shape })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples grouped by class, preserving order.
    pub fn by_class(&self) -> Vec<Vec<&Sample>> {
        let mut groups = vec![Vec::new(); self.classes];
        for s in &self.samples {
            groups[s.label].push(s);
        }
        groups
    }

    /// Writes the flat binary format: header, `f32` image rows, `u8` labels.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        if self.classes > 256 {
            return Err(Error::Validation("binary format stores labels as u8".into()));
        }
        w.write_all(DATASET_MAGIC)?;
        for v in [
            self.samples.len(),
            self.shape.channels,
            self.shape.height,
            self.shape.width,
            self.classes,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for s in &self.samples {
            for &p in &s.image {
                w.write_all(&(p as f32).to_le_bytes())?;
            }
        }
        let labels: Vec<u8> = self.samples.iter().map(|s| s.label as u8).collect();
        w.write_all(&labels)?;
        Ok(())
    }

    /// Reads the flat binary format; ids are assigned from `first_id` upwards.
    pub fn read_binary<R: Read>(mut r: R, first_id: u64) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a toy dataset file".into()));
        }
        let mut header = [0usize; 5];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *h = u32::from_le_bytes(b) as usize;
        }
        let [count, channels, height, width, classes] = header;
        let shape = ImageShape::new(channels, height, width);
        let mut images = Vec::with_capacity(count);
        let mut buf = vec![0u8; shape.len() * 4];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            images.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect::<Vec<_>>(),
            );
        }
        let mut labels = vec![0u8; count];
        r.read_exact(&mut labels)?;
        let samples = images
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (image, label))| Sample {
                id: first_id + i as u64,
                image,
                label: label as usize,
            })
            .collect();
        Dataset::new(samples, classes, shape)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path, first_id: u64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Dataset::read_binary(std::io::BufReader::new(f), first_id)
    }
}

const DATASET_MAGIC: &[u8; 8] = b"TALSCDS1";

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Reads a CIFAR-10 binary batch (`data_batch_*.bin`), scaling pixels to [0,1].
pub fn load_cifar10_batch(path: &Path, first_id: u64) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_cifar10(&bytes, first_id)
}

pub fn parse_cifar10(bytes: &[u8], first_id: u64) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| Sample {
            id: first_id + i as u64,
            label: rec[0] as usize,
            image: rec[1..].iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect();
    Dataset::new(samples, 10, ImageShape::new(3, 32, 32))
}

/// 5x7 bitmap glyphs for the digits 0-9, one row per byte (low 5 bits).
const GLYPHS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

/// Parameters of the synthetic toy-digit images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDigits {
    pub shape: ImageShape,
    pub classes: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Probability that a glyph pixel is dropped.
    pub dropout: f64,
}

impl ToyDigits {
    pub fn new(side: usize, classes: usize) -> Self {
        ToyDigits {
            shape: ImageShape::new(1, side, side),
            classes,
            noise: 0.1,
            dropout: 0.05,
        }
    }

    /// Draws `per_class` images of each class, ids starting at `first_id`.
    pub fn generate<R: Rng>(&self, per_class: usize, first_id: u64, rng: &mut R) -> Result<Dataset> {
        if self.classes == 0 || self.classes > GLYPHS.len() {
            return Err(Error::Config(format!(
                "toy digits support 1..={} classes, got {}",
                GLYPHS.len(),
                self.classes
            )));
        }
        let scale = (self.shape.height.min(self.shape.width) / 8).max(1);
        let (gw, gh) = (5 * scale, 7 * scale);
        if gw > self.shape.width || gh > self.shape.height {
            return Err(Error::Config("toy digit images must be at least 7 pixels tall".into()));
        }
        let noise = Normal::new(0.0, self.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let mut samples = Vec::with_capacity(per_class * self.classes);
        let mut id = first_id;
        for _ in 0..per_class {
            for class in 0..self.classes {
                let dx = rng.random_range(0..=self.shape.width - gw);
                let dy = rng.random_range(0..=self.shape.height - gh);
                let amp = rng.random_range(0.6..1.0);
                let plane = self.shape.height * self.shape.width;
                let mut image = vec![0.0; self.shape.len()];
                for (r, bits) in GLYPHS[class].iter().enumerate() {
                    for c in 0..5 {
                        if bits >> (4 - c) & 1 == 0 {
                            continue;
                        }
                        for sy in 0..scale {
                            for sx in 0..scale {
                                if rng.random::<f64>() < self.dropout {
                                    continue;
                                }
                                let y = dy + r * scale + sy;
                                let x = dx + c * scale + sx;
                                for ch in 0..self.shape.channels {
                                    image[ch * plane + y * self.shape.width + x] = amp;
                                }
                            }
                        }
                    }
                }
                for p in image.iter_mut() {
                    *p = (*p + noise.sample(rng)).clamp(0.0, 1.0);
                }
                samples.push(Sample { id, image, label: class });
                id += 1;
            }
        }
        Dataset::new(samples, self.classes, self.shape)
    }
}

/// Isotropic Gaussian clusters on the vertices of a scaled simplex-like
/// layout; `spread` is the per-coordinate standard deviation.
pub fn gaussian_blobs<R: Rng>(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    first_id: u64,
    rng: &mut R,
) -> Result<Dataset> {
    if dim < classes {
        return Err(Error::Config("blob dimension must be at least the class count".into()));
    }
    let normal = Normal::new(0.0, spread).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::new();
    let mut id = first_id;
    for _ in 0..per_class {
        for class in 0..classes {
            let image = (0..dim)
                .map(|d| if d == class { 3.0 } else { 0.0 } + normal.sample(rng))
                .collect();
            samples.push(Sample { id, image, label: class });
            id += 1;
        }
    }
    Dataset::new(samples, classes, ImageShape::new(1, 1, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn toy_digits_have_requested_shape_and_balance() {
        let mut rng = substream(1, Stream::Data);
        let d = ToyDigits::new(16, 10).generate(3, 100, &mut rng).unwrap();
        assert_eq!(d.len(), 30);
        assert_eq!(d.class_counts(), vec![3; 10]);
        assert_eq!(d.samples()[0].id, 100);
        assert!(d.samples().iter().all(|s| s.image.iter().all(|p| (0.0..=1.0).contains(p))));
    }

    #[test]
    fn binary_round_trip_preserves_labels_and_f32_pixels() {
        let mut rng = substream(2, Stream::Data);
        let d = ToyDigits::new(8, 4).generate(2, 0, &mut rng).unwrap();
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        let back = Dataset::read_binary(&buf[..], 0).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in d.samples().iter().zip(back.samples()) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.image.iter().zip(&b.image) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn cifar_records_parse() {
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat_n(255u8, 3072));
        let d = parse_cifar10(&rec, 5).unwrap();
        assert_eq!(d.samples()[0].label, 7);
        assert_eq!(d.samples()[0].id, 5);
        assert_eq!(d.samples()[0].image[0], 1.0);
        assert!(parse_cifar10(&rec[..100], 0).is_err());
    }
}
