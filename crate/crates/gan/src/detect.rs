//! Clothing region detection interface.
//!
//! No detector model is bundled. [`WholeImageDetector`] passes the full frame
//! through; [`ReplayDetector`] replays detections produced elsewhere from a
//! JSON file keyed by image reference.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::GanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub class_label: String,
    pub confidence: f32,
}

impl Region {
    pub fn whole(img: &RgbImage) -> Self {
        Self {
            bbox: BBox {
                x: 0,
                y: 0,
                w: img.width(),
                h: img.height(),
            },
            class_label: "whole-image".into(),
            confidence: 1.0,
        }
    }

    /// Checks the box lies inside a `width × height` image with positive area.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), GanError> {
        let b = self.bbox;
        let fits = b.w > 0
            && b.h > 0
            && b.x.checked_add(b.w).is_some_and(|r| r <= width)
            && b.y.checked_add(b.h).is_some_and(|r| r <= height);
        if !fits || !(0.0..=1.0).contains(&self.confidence) {
            return Err(GanError::Detection(format!(
                "region {self:?} invalid for {width}x{height} image"
            )));
        }
        Ok(())
    }

    pub fn crop(&self, img: &RgbImage) -> RgbImage {
        let b = self.bbox;
        image::imageops::crop_imm(img, b.x, b.y, b.w, b.h).to_image()
    }
}

pub trait RegionDetector: Send + Sync {
    fn name(&self) -> &str;

    /// Regions of `image`; `key` identifies the image (URL or file name).
    fn detect(&self, key: &str, image: &RgbImage) -> Result<Vec<Region>, GanError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WholeImageDetector;

impl RegionDetector for WholeImageDetector {
    fn name(&self) -> &str {
        "whole-image"
    }

    fn detect(&self, _key: &str, image: &RgbImage) -> Result<Vec<Region>, GanError> {
        Ok(vec![Region::whole(image)])
    }
}

/// Detections loaded from a JSON object `{ "<image key>": [Region, ...] }`.
#[derive(Debug, Default, Clone)]
pub struct ReplayDetector {
    detections: HashMap<String, Vec<Region>>,
}

impl ReplayDetector {
    pub fn new(detections: HashMap<String, Vec<Region>>) -> Self {
        Self { detections }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GanError> {
        let detections =
            serde_json::from_slice(bytes).map_err(|e| GanError::Format(e.to_string()))?;
        Ok(Self { detections })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GanError> {
        Self::from_json(&std::fs::read(path)?)
    }
}

impl RegionDetector for ReplayDetector {
    fn name(&self) -> &str {
        "replay"
    }

    fn detect(&self, key: &str, _image: &RgbImage) -> Result<Vec<Region>, GanError> {
        match self.detections.get(key) {
            Some(regions) if !regions.is_empty() => Ok(regions.clone()),
            _ => Err(GanError::Detection(format!("no recorded detections for {key}"))),
        }
    }
}

/// Runs `detector`, falling back to the whole image (with a warning) when it
/// errors, returns nothing, or returns an out-of-bounds box.
pub fn detect_or_whole(detector: &dyn RegionDetector, key: &str, image: &RgbImage) -> Vec<Region> {
    let checked = detector.detect(key, image).and_then(|regions| {
        for r in &regions {
            r.validate(image.width(), image.height())?;
        }
        Ok(regions)
    });
    match checked {
        Ok(regions) if !regions.is_empty() => regions,
        Ok(_) => {
            log::warn!("{}: no regions for {key}, using whole image", detector.name());
            vec![Region::whole(image)]
        }
        Err(e) => {
            log::warn!("{}: {e}; using whole image for {key}", detector.name());
            vec![Region::whole(image)]
        }
    }
}

/// Options a detector factory may consume.
#[derive(Debug, Clone, Default)]
pub struct DetectorOptions {
    pub detections_file: Option<std::path::PathBuf>,
}

type DetectorFactory =
    Box<dyn Fn(&DetectorOptions) -> Result<Arc<dyn RegionDetector>, GanError> + Send + Sync>;

/// Detectors selectable by name.
pub struct DetectorRegistry {
    factories: BTreeMap<String, DetectorFactory>,
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("whole-image", |_| Ok(Arc::new(WholeImageDetector)));
        reg.register("replay", |opts| {
            let path = opts
                .detections_file
                .as_ref()
                .ok_or_else(|| GanError::Config("replay detector needs a detections file".into()))?;
            Ok(Arc::new(ReplayDetector::from_file(path)?))
        });
        reg
    }
}

impl DetectorRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&DetectorOptions) -> Result<Arc<dyn RegionDetector>, GanError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &DetectorOptions) -> Result<Arc<dyn RegionDetector>, GanError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| GanError::Config(format!("unknown detector {name:?}")))?;
        f(opts)
    }
}
