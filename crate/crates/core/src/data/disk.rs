//! On-disk dataset layout: one directory per split holding lossless PNGs
//! named `<id>_<label>.png`, a `manifest.csv` with columns `id,label,split`,
//! and `channel_means.txt` with the training-split means.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, ImageSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MEANS_FILE: &str = "channel_means.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "training" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" | "testing" => Ok(SplitName::Test),
            other => Err(Error::arg(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: u8,
    pub split: SplitName,
}

impl ManifestEntry {
    pub fn file_name(&self) -> String {
        format!("{}_{}.png", self.id, self.label)
    }

    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(self.split.as_str()).join(self.file_name())
    }
}

/// Training-split channel means and the square side they were computed at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoredMeans {
    pub input_side: usize,
    pub means: [f64; 3],
}

impl StoredMeans {
    pub fn render(&self) -> String {
        format!(
            "input_side={}\nmean_r={:?}\nmean_g={:?}\nmean_b={:?}\n",
            self.input_side, self.means[0], self.means[1], self.means[2]
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut side = None;
        let mut means = [None; 3];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad channel-means line `{line}`")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|e| Error::Format(format!("{k}: {e}")));
            match k {
                "input_side" => side = Some(v.parse::<usize>().map_err(|e| Error::Format(format!("{k}: {e}")))?),
                "mean_r" => means[0] = Some(num(v)?),
                "mean_g" => means[1] = Some(num(v)?),
                "mean_b" => means[2] = Some(num(v)?),
                _ => return Err(Error::Format(format!("unknown channel-means key `{k}`"))),
            }
        }
        match (side, means) {
            (Some(input_side), [Some(r), Some(g), Some(b)]) => Ok(Self {
                input_side,
                means: [r, g, b],
            }),
            _ => Err(Error::Format("channel-means file is incomplete".into())),
        }
    }
}

pub fn write_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::shape(format!("PNG export needs a 3 x H x W image, got {s:?}"))),
    };
    let plane = h * w;
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            bytes.push(d[c * plane + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let png_err = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: only 8-bit images are supported",
            path.display()
        )));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = buf[p * stride + c] as f32;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

/// Writes the three splits, the manifest and the channel means under `root`.
pub fn write_dataset(root: &Path, split: &DatasetSplit, means: &StoredMeans) -> Result<()> {
    create_dir(root)?;
    let mut manifest = Vec::new();
    for (name, samples) in [
        (SplitName::Train, &split.training),
        (SplitName::Validation, &split.validation),
        (SplitName::Test, &split.testing),
    ] {
        let dir = root.join(name.as_str());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        }
        create_dir(&dir)?;
        for s in samples {
            let entry = ManifestEntry {
                id: s.id.clone(),
                label: s.label,
                split: name,
            };
            write_png(&entry.path(root), &s.pixels)?;
            manifest.push(entry);
        }
    }
    write_manifest(&root.join(MANIFEST_FILE), &manifest)?;
    let mpath = root.join(MEANS_FILE);
    fs::write(&mpath, means.render()).map_err(|e| Error::file(&mpath, e))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for e in entries {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::file(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
        ));
    }
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
    let entries = r
        .deserialize()
        .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
        .map_err(csv_err)?;
    if let Some(bad) = entries.iter().find(|e| e.label > 1) {
        return Err(Error::Format(format!(
            "manifest entry {} has label {}",
            bad.id, bad.label
        )));
    }
    Ok(entries)
}

pub fn read_means(root: &Path) -> Result<StoredMeans> {
    let path = root.join(MEANS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    StoredMeans::parse(&text)
}

/// Loads the raw (unpreprocessed) images of one split, in manifest order.
pub fn load_samples(root: &Path, split: SplitName) -> Result<Vec<ImageSample>> {
    read_manifest(root)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            Ok(ImageSample {
                pixels: read_png(&e.path(root))?,
                label: e.label,
                id: e.id,
            })
        })
        .collect()
}
