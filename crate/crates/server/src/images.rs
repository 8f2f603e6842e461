//! Source images for reading sessions, filtered on demand and cached as PNG.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sievelab::data::{load_image_meta, ImageMeta};
use sievelab::filter::{encode_png16, lowpass, read_gray_image, FilterSpec, GrayImage};
use sievelab::study::compose_ventral_hanging;

use crate::error::ApiError;

/// Metadata file listing the images of a library directory.
pub const IMAGES_FILE: &str = "images.jsonl";

const CACHE_CAPACITY: usize = 256;

/// Rendered PNGs keyed by image or exam id and filter spec JSON.
type RenderCache = Mutex<HashMap<(String, String), Arc<Vec<u8>>>>;

/// Images listed in `images.jsonl` of a directory, each stored next to it as
/// `{image_id}.png` or `{image_id}.pgm`.
pub struct ImageLibrary {
    images: BTreeMap<String, (ImageMeta, PathBuf)>,
    exams: BTreeMap<String, Vec<String>>,
    cache: RenderCache,
}

impl ImageLibrary {
    pub fn empty() -> Self {
        Self {
            images: BTreeMap::new(),
            exams: BTreeMap::new(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, ApiError> {
        let metas = load_image_meta(&dir.join(IMAGES_FILE)).map_err(|e| ApiError::Internal(e.to_string()))?;
        let mut lib = Self::empty();
        for meta in metas {
            let path = ["png", "pgm"]
                .iter()
                .map(|ext| dir.join(format!("{}.{ext}", meta.image_id)))
                .find(|p| p.is_file())
                .ok_or_else(|| ApiError::Internal(format!("no pixel file for image {}", meta.image_id)))?;
            lib.exams.entry(meta.exam_id.clone()).or_default().push(meta.image_id.clone());
            if lib.images.insert(meta.image_id.clone(), (meta.clone(), path)).is_some() {
                return Err(ApiError::Internal(format!("duplicate image id {}", meta.image_id)));
            }
        }
        Ok(lib)
    }

    pub fn metas(&self) -> impl Iterator<Item = &ImageMeta> {
        self.images.values().map(|(m, _)| m)
    }

    pub fn has_exam(&self, exam_id: &str) -> bool {
        self.exams.contains_key(exam_id)
    }

    fn read(&self, image_id: &str) -> Result<GrayImage, ApiError> {
        let (meta, path) = &self.images[image_id];
        let img = read_gray_image(path, meta.mm_per_pixel).map_err(|e| ApiError::Internal(e.to_string()))?;
        if img.height != meta.height_px as usize || img.width != meta.width_px as usize {
            return Err(ApiError::Internal(format!(
                "image {image_id} is {}x{}, metadata says {}x{}",
                img.width, img.height, meta.width_px, meta.height_px
            )));
        }
        Ok(img)
    }

    fn filtered(&self, image_id: &str, spec: &FilterSpec) -> Result<GrayImage, ApiError> {
        lowpass(&self.read(image_id)?, spec).map_err(|e| ApiError::Internal(e.to_string()))
    }

    /// PNG of one image, or of an exam's ventral-hanging composite when `id`
    /// names an exam, at the given severity. Views are filtered before they
    /// are composed.
    pub fn render(&self, id: &str, spec: &FilterSpec) -> Result<Arc<Vec<u8>>, ApiError> {
        let key = (id.to_string(), serde_json::to_string(spec).expect("filter spec serializes"));
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let image = if self.images.contains_key(id) {
            self.filtered(id, spec)?
        } else if let Some(ids) = self.exams.get(id) {
            let views = ids
                .iter()
                .map(|i| Ok((self.images[i].0.view, self.filtered(i, spec)?)))
                .collect::<Result<Vec<_>, ApiError>>()?;
            let refs: Vec<_> = views.iter().map(|(v, im)| (*v, im)).collect();
            compose_ventral_hanging(&refs)?
        } else {
            return Err(ApiError::NotFound(format!("image {id}")));
        };
        let png = Arc::new(encode_png16(&image).map_err(|e| ApiError::Internal(e.to_string()))?);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(key, png.clone());
        Ok(png)
    }
}
