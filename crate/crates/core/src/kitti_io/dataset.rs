use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use super::{
    decode_depth_image, decode_gt_mask, encode_gt_mask, encode_unit_grid_u16, parse_calibration,
    read_point_cloud, serialize_calibration, write_point_cloud, FrameBundle, KittiError,
};

/// Paths of the per-modality directories under a dataset root.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub const SUBDIRS: [&'static str; 5] = ["image_2", "velodyne", "calib", "depth", "gt_image_2"];

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn image(&self, id: &str) -> PathBuf {
        self.root.join("image_2").join(format!("{id}.png"))
    }

    pub fn velodyne(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }

    pub fn calib(&self, id: &str) -> PathBuf {
        self.root.join("calib").join(format!("{id}.txt"))
    }

    pub fn depth(&self, id: &str) -> PathBuf {
        self.root.join("depth").join(format!("{id}.png"))
    }

    /// Ground-truth candidates: `<id>.png`, then KITTI's `<cat>_road_<num>.png`.
    pub fn gt_candidates(&self, id: &str) -> Vec<PathBuf> {
        let dir = self.root.join("gt_image_2");
        let mut out = vec![dir.join(format!("{id}.png"))];
        if let Some((cat, num)) = id.rsplit_once('_') {
            out.push(dir.join(format!("{cat}_road_{num}.png")));
        }
        out
    }

    pub fn create_dirs(&self) -> Result<(), KittiError> {
        for sub in Self::SUBDIRS {
            let p = self.root.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> KittiError {
    KittiError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, KittiError> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn read_png(path: &Path) -> Result<DynamicImage, KittiError> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| KittiError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn write_png(path: &Path, img: &DynamicImage) -> Result<(), KittiError> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| KittiError::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

/// Frame ids present under `image_2/`, sorted. A missing directory yields
/// an empty list.
pub fn list_frames(root: &Path) -> Result<Vec<String>, KittiError> {
    let dir = root.join("image_2");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
        let path = entry.map_err(|e| io_err(&dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_frame(root: &Path, id: &str) -> Result<FrameBundle, KittiError> {
    let layout = DatasetLayout::new(root);
    let image = read_png(&layout.image(id))?.to_rgb8();
    let cloud = read_point_cloud(&read_bytes(&layout.velodyne(id))?)?;
    let calib_path = layout.calib(id);
    let text = String::from_utf8(read_bytes(&calib_path)?).map_err(|e| KittiError::Image {
        path: calib_path.display().to_string(),
        message: e.to_string(),
    })?;
    let calib = parse_calibration(&text)?;
    let depth = decode_depth_image(&read_png(&layout.depth(id))?)?;
    let gt = match layout.gt_candidates(id).into_iter().find(|p| p.exists()) {
        Some(p) => Some(decode_gt_mask(&read_png(&p)?)?),
        None => None,
    };
    let bundle = FrameBundle {
        frame_id: id.to_string(),
        image,
        cloud,
        calib,
        depth,
        gt,
    };
    bundle.check_dims()?;
    Ok(bundle)
}

/// Writes `bundle` under `root` in the layout above (directories are created).
pub fn write_frame(root: &Path, bundle: &FrameBundle) -> Result<(), KittiError> {
    let layout = DatasetLayout::new(root);
    layout.create_dirs()?;
    let id = &bundle.frame_id;
    write_png(&layout.image(id), &DynamicImage::ImageRgb8(bundle.image.clone()))?;
    let p = layout.velodyne(id);
    fs::write(&p, write_point_cloud(&bundle.cloud)).map_err(|e| io_err(&p, e))?;
    let p = layout.calib(id);
    fs::write(&p, serialize_calibration(&bundle.calib)).map_err(|e| io_err(&p, e))?;
    write_png(
        &layout.depth(id),
        &DynamicImage::ImageLuma16(encode_unit_grid_u16(&bundle.depth.grid)),
    )?;
    if let Some(gt) = &bundle.gt {
        write_png(
            &layout.gt_candidates(id)[0],
            &DynamicImage::ImageRgb8(encode_gt_mask(gt)),
        )?;
    }
    Ok(())
}
