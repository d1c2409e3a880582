use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

use crate::catalog::{Catalog, ImageRecord, Marking, Rotation};

#[derive(Debug, Error)]
pub enum CropError {
    #[error("image {image_id} not found at {path}")]
    MissingImage { image_id: String, path: PathBuf },
    #[error("image {image_id} could not be decoded: {message}")]
    Decode { image_id: String, message: String },
    #[error("unknown image {0}")]
    UnknownImage(String),
}

/// Supplies the unrotated pixel crop of a marking.
pub trait CropSource: Send + Sync {
    fn crop(&self, marking: &Marking) -> Result<DynamicImage, CropError>;
}

/// Reads crops from image files; relative URIs resolve under `root`.
#[derive(Debug, Clone)]
pub struct FileCrops {
    root: PathBuf,
    images: std::collections::BTreeMap<String, ImageRecord>,
}

impl FileCrops {
    pub fn new(root: impl Into<PathBuf>, catalog: &Catalog) -> Self {
        Self {
            root: root.into(),
            images: catalog.images().map(|i| (i.image_id.clone(), i.clone())).collect(),
        }
    }
}

pub fn resolve(root: &Path, uri: &str) -> PathBuf {
    let p = Path::new(uri);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

impl CropSource for FileCrops {
    fn crop(&self, marking: &Marking) -> Result<DynamicImage, CropError> {
        let rec = self
            .images
            .get(&marking.image_id)
            .ok_or_else(|| CropError::UnknownImage(marking.image_id.clone()))?;
        crop_file(&resolve(&self.root, &rec.uri), marking)
    }
}

pub fn crop_file(path: &Path, marking: &Marking) -> Result<DynamicImage, CropError> {
    if !path.exists() {
        return Err(CropError::MissingImage {
            image_id: marking.image_id.clone(),
            path: path.to_path_buf(),
        });
    }
    let img = image::open(path).map_err(|e| CropError::Decode {
        image_id: marking.image_id.clone(),
        message: e.to_string(),
    })?;
    Ok(crop_image(&img, marking))
}

/// Pixel crop covering the box: edges are floored/ceiled outward and clamped
/// to the image.
pub fn crop_image(img: &DynamicImage, marking: &Marking) -> DynamicImage {
    let b = &marking.bbox;
    let (w, h) = (img.width(), img.height());
    let x0 = (b.x_min.floor().max(0.0) as u32).min(w.saturating_sub(1));
    let y0 = (b.y_min.floor().max(0.0) as u32).min(h.saturating_sub(1));
    let x1 = (b.x_max.ceil() as u32).clamp(x0 + 1, w.max(x0 + 1));
    let y1 = (b.y_max.ceil() as u32).clamp(y0 + 1, h.max(y0 + 1));
    img.crop_imm(x0, y0, x1 - x0, y1 - y0)
}

/// Rotates clockwise.
pub fn rotate(img: &DynamicImage, rotation: Rotation) -> DynamicImage {
    match rotation {
        Rotation::R0 => img.clone(),
        Rotation::R90 => img.rotate90(),
        Rotation::R180 => img.rotate180(),
        Rotation::R270 => img.rotate270(),
    }
}

pub fn encode_png(img: &DynamicImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory");
    buf.into_inner()
}

/// A uniform grey crop of the box's size, for backends that ignore pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlankCrops;

impl CropSource for BlankCrops {
    fn crop(&self, marking: &Marking) -> Result<DynamicImage, CropError> {
        let w = marking.bbox.width().ceil().max(1.0) as u32;
        let h = marking.bbox.height().ceil().max(1.0) as u32;
        Ok(DynamicImage::ImageLuma8(image::GrayImage::from_pixel(w, h, image::Luma([128]))))
    }
}
