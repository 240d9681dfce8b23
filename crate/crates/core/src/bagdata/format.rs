//! FBAG v1, little-endian:
//!
//! ```text
//! "FBAG" | u32 version | u32 M | u32 num_classes | u32 num_images | u8 has_gt
//! num_classes x (u16 len, utf-8 class name)
//! num_images  x (u16 len, utf-8 id, u32 K, num_classes x i8 label,
//!                K x (f32 x4 box, f32 objectness, f32 x M features))
//! if has_gt:  u32 num_gt, num_gt x (u16 len, utf-8 id, u16 class, f32 x4 box)
//! ```

use std::fs;
use std::path::Path;

use super::{BoundingBox, Dataset, FeatureBag, GroundTruthBox, Label, RegionInstance};
use crate::binio::{count_u32, put_f32, put_str, put_u32, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FBAG_MAGIC: &[u8; 4] = b"FBAG";
pub const FBAG_VERSION: u32 = 1;

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_dataset(&bytes, name)
}

pub fn write_dataset<T: Scalar>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_dataset<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(FBAG_MAGIC);
    put_u32(&mut out, FBAG_VERSION);
    put_u32(&mut out, count_u32(dataset.dim, "feature dimension")?);
    put_u32(&mut out, count_u32(dataset.num_classes(), "class count")?);
    put_u32(&mut out, count_u32(dataset.bags.len(), "image count")?);
    out.push(u8::from(dataset.ground_truth.is_some()));
    for name in &dataset.class_names {
        put_str(&mut out, name)?;
    }
    for bag in &dataset.bags {
        put_str(&mut out, &bag.image_id)?;
        put_u32(&mut out, count_u32(bag.regions.len(), "region count")?);
        for label in &bag.labels {
            out.push(label.to_i8() as u8);
        }
        for region in &bag.regions {
            put_box(&mut out, &region.bbox);
            put_f32(&mut out, region.objectness.as_f32());
            for v in &region.features {
                put_f32(&mut out, v.as_f32());
            }
        }
    }
    if let Some(gt) = &dataset.ground_truth {
        put_u32(&mut out, count_u32(gt.len(), "ground-truth count")?);
        for record in gt {
            put_str(&mut out, &record.image_id)?;
            let class = u16::try_from(record.class_index)
                .map_err(|_| Error::Format("class index exceeds u16".into()))?;
            out.extend_from_slice(&class.to_le_bytes());
            put_box(&mut out, &record.bbox);
        }
    }
    Ok(out)
}

pub fn decode_dataset<T: Scalar>(bytes: &[u8], name: impl Into<String>) -> Result<Dataset<T>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != FBAG_MAGIC {
        return Err(Error::Format("missing FBAG magic".into()));
    }
    let version = r.u32()?;
    if version != FBAG_VERSION {
        return Err(Error::Format(format!("unsupported FBAG version {version}")));
    }
    let dim = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let num_images = r.u32()? as usize;
    let has_gt = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("ground-truth flag must be 0 or 1, got {v}"))),
    };

    let class_names = (0..num_classes)
        .map(|_| r.string())
        .collect::<Result<Vec<_>>>()?;

    let mut bags = Vec::with_capacity(num_images.min(1 << 16));
    for _ in 0..num_images {
        let image_id = r.string()?;
        let k = r.u32()? as usize;
        let labels = (0..num_classes)
            .map(|c| {
                let v = r.u8()? as i8;
                Label::from_i8(v).ok_or_else(|| {
                    Error::Validation(format!(
                        "image {image_id:?} class {c}: label {v} is not -1 or +1"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut regions = Vec::with_capacity(k.min(1 << 12));
        for idx in 0..k {
            let bbox = read_box(&mut r)?;
            let objectness = T::from_f32_bits(r.f32()?);
            let available = r.remaining() / 4;
            if available < dim {
                return Err(Error::Validation(format!(
                    "image {image_id:?} region {idx}: expected {dim} features, file holds {available}"
                )));
            }
            let features = (0..dim)
                .map(|_| r.f32().map(T::from_f32_bits))
                .collect::<Result<Vec<_>>>()?;
            regions.push(RegionInstance {
                bbox,
                objectness,
                features,
            });
        }
        bags.push(FeatureBag {
            image_id,
            regions,
            labels,
        });
    }

    let ground_truth = if has_gt {
        let n = r.u32()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let image_id = r.string()?;
            let class_index = r.u16()? as usize;
            let bbox = read_box(&mut r)?;
            records.push(GroundTruthBox {
                image_id,
                class_index,
                bbox,
            });
        }
        Some(records)
    } else {
        None
    };

    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after dataset",
            r.remaining()
        )));
    }

    let dataset = Dataset {
        name: name.into(),
        dim,
        class_names,
        bags,
        ground_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn put_box<T: Scalar>(out: &mut Vec<u8>, b: &BoundingBox<T>) {
    for v in b.to_array() {
        put_f32(out, v.as_f32());
    }
}

fn read_box<T: Scalar>(r: &mut Reader<'_>) -> Result<BoundingBox<T>> {
    let x1 = T::from_f32_bits(r.f32()?);
    let y1 = T::from_f32_bits(r.f32()?);
    let x2 = T::from_f32_bits(r.f32()?);
    let y2 = T::from_f32_bits(r.f32()?);
    Ok(BoundingBox { x1, y1, x2, y2 })
}
