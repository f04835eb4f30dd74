//! Image embedders. The DCGAN embedder taps the discriminator's last
//! strided block; the pixel embedder is a raw-pixel baseline. Both are
//! selectable by name through [`EmbedderRegistry`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_or_whole, Region, RegionDetector};
use crate::io::load_params;
use crate::model::DcganParams;
use crate::preprocess::{decode, preprocess_image};
use crate::tensor::Tensor;
use crate::GanError;

/// Unit-length feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
}

impl Embedding {
    /// Normalizes `raw` to unit L2 norm.
    pub fn from_raw(mut raw: Vec<f32>) -> Result<Self, GanError> {
        l2_normalize(&mut raw)?;
        Ok(Self { vector: raw })
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Scales `v` to unit length in place. Zero or non-finite vectors are an
/// error.
pub fn l2_normalize(v: &mut [f32]) -> Result<(), GanError> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(GanError::NonFinite("feature vector".into()));
    }
    if norm == 0.0 {
        return Err(GanError::Degenerate("zero feature vector".into()));
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEmbedding {
    pub region: Region,
    pub embedding: Embedding,
}

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    /// Length of produced vectors.
    fn dimension(&self) -> usize;

    /// Side of the square input tensor.
    fn input_size(&self) -> usize {
        64
    }

    /// Raw (unnormalized) features of a preprocessed `[3, s, s]` image.
    fn features(&self, image: &Tensor<f32>) -> Result<Vec<f32>, GanError>;

    /// Serialized size of the model, zero when there is none.
    fn model_size_bytes(&self) -> u64;

    fn embed_tensor(&self, image: &Tensor<f32>) -> Result<Embedding, GanError> {
        let e = Embedding::from_raw(self.features(image)?)?;
        debug_assert!((e.norm() - 1.0).abs() <= 1e-6);
        Ok(e)
    }

    /// Preprocess + features + normalize for an already-decoded image.
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding, GanError> {
        self.embed_tensor(&preprocess_image(image, self.input_size()))
    }
}

/// Discriminator features of a trained DCGAN.
pub struct DcganEmbedder {
    model: Arc<DcganParams>,
    size_bytes: u64,
}

impl DcganEmbedder {
    pub fn new(model: Arc<DcganParams>, size_bytes: u64) -> Self {
        Self { model, size_bytes }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GanError> {
        let size = std::fs::metadata(path.as_ref())?.len();
        Ok(Self::new(Arc::new(load_params(path)?), size))
    }

    pub fn model(&self) -> &DcganParams {
        &self.model
    }
}

impl Embedder for DcganEmbedder {
    fn name(&self) -> &str {
        "dcgan"
    }

    fn dimension(&self) -> usize {
        self.model.config().feature_len()
    }

    fn input_size(&self) -> usize {
        self.model.config().image_size
    }

    fn features(&self, image: &Tensor<f32>) -> Result<Vec<f32>, GanError> {
        let (_, feats) = self.model.discriminator_forward(image)?;
        Ok(feats)
    }

    fn model_size_bytes(&self) -> u64 {
        self.size_bytes
    }
}

/// Flattened `[-1, 1]` pixels, truncated or zero-padded to `dimension`.
#[derive(Debug, Clone)]
pub struct PixelEmbedder {
    dimension: usize,
}

impl PixelEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension }
    }
}

impl Embedder for PixelEmbedder {
    fn name(&self) -> &str {
        "pixels"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn features(&self, image: &Tensor<f32>) -> Result<Vec<f32>, GanError> {
        let mut v = image.data().to_vec();
        v.resize(self.dimension, 0.0);
        Ok(v)
    }

    fn model_size_bytes(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone)]
pub struct EmbedderOptions {
    pub model_path: Option<PathBuf>,
    /// Output dimension for embedders that are not tied to a model.
    pub dimension: usize,
}

impl Default for EmbedderOptions {
    fn default() -> Self {
        Self {
            model_path: None,
            dimension: 8192,
        }
    }
}

type EmbedderFactory =
    Box<dyn Fn(&EmbedderOptions) -> Result<Arc<dyn Embedder>, GanError> + Send + Sync>;

/// Embedders selectable by name.
pub struct EmbedderRegistry {
    factories: BTreeMap<String, EmbedderFactory>,
}

impl Default for EmbedderRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("dcgan", |opts| {
            let path = opts
                .model_path
                .as_ref()
                .ok_or_else(|| GanError::Config("dcgan embedder needs a model file".into()))?;
            Ok(Arc::new(DcganEmbedder::load(path)?))
        });
        reg.register("pixels", |opts| Ok(Arc::new(PixelEmbedder::new(opts.dimension))));
        reg
    }
}

impl EmbedderRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&EmbedderOptions) -> Result<Arc<dyn Embedder>, GanError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &EmbedderOptions) -> Result<Arc<dyn Embedder>, GanError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| GanError::Config(format!("unknown embedder {name:?}")))?;
        f(opts)
    }
}

/// Detects regions in an image and embeds each one.
pub fn embed_regions(
    embedder: &dyn Embedder,
    detector: &dyn RegionDetector,
    key: &str,
    image: &RgbImage,
) -> Result<Vec<RegionEmbedding>, GanError> {
    detect_or_whole(detector, key, image)
        .into_iter()
        .map(|region| {
            let crop = region.crop(image);
            Ok(RegionEmbedding {
                embedding: embedder.embed_image(&crop)?,
                region,
            })
        })
        .collect()
}

/// Decode, detect, crop, preprocess, extract and normalize: one embedding
/// per detected region.
pub fn extract_embedding(
    embedder: &dyn Embedder,
    detector: &dyn RegionDetector,
    key: &str,
    image_bytes: &[u8],
) -> Result<Vec<RegionEmbedding>, GanError> {
    let image = decode(image_bytes)?;
    embed_regions(embedder, detector, key, &image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BBox, ReplayDetector, WholeImageDetector};
    use crate::model::DcganConfig;
    use crate::preprocess::encode_png;
    use std::collections::HashMap;

    fn small_embedder() -> DcganEmbedder {
        let cfg = DcganConfig {
            nz: 8,
            ngf: 4,
            ndf: 4,
            channels: 3,
            image_size: 16,
            blocks: 2,
        };
        DcganEmbedder::new(Arc::new(DcganParams::init_params(cfg, 2).unwrap()), 0)
    }

    fn picture(seed: u8) -> Vec<u8> {
        encode_png(&RgbImage::from_fn(40, 32, |x, y| {
            image::Rgb([(x * 5) as u8 ^ seed, (y * 7) as u8, seed])
        }))
    }

    #[test]
    fn normalizes_three_four_vector() {
        let mut v = vec![0.0f32; 8192];
        v[0] = 3.0;
        v[1] = 4.0;
        let e = Embedding::from_raw(v).unwrap();
        assert!((e.vector[0] - 0.6).abs() < 1e-7);
        assert!((e.vector[1] - 0.8).abs() < 1e-7);
        assert!(e.vector[2..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert!(Embedding::from_raw(vec![0.0; 4]).is_err());
    }

    #[test]
    fn whole_image_gives_single_unit_embedding() {
        let e = small_embedder();
        let out = extract_embedding(&e, &WholeImageDetector, "a", &picture(3)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].embedding.vector.len(), e.dimension());
        assert!((out[0].embedding.norm() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn identical_bytes_give_identical_embeddings() {
        let e = small_embedder();
        let a = extract_embedding(&e, &WholeImageDetector, "a", &picture(9)).unwrap();
        let b = extract_embedding(&e, &WholeImageDetector, "b", &picture(9)).unwrap();
        assert_eq!(a[0].embedding, b[0].embedding);
    }

    #[test]
    fn replayed_regions_each_get_an_embedding() {
        let mut map = HashMap::new();
        map.insert(
            "img".to_string(),
            vec![
                Region { bbox: BBox { x: 0, y: 0, w: 20, h: 32 }, class_label: "top".into(), confidence: 0.9 },
                Region { bbox: BBox { x: 20, y: 0, w: 20, h: 32 }, class_label: "skirt".into(), confidence: 0.8 },
            ],
        );
        let d = ReplayDetector::new(map);
        let out = extract_embedding(&small_embedder(), &d, "img", &picture(1)).unwrap();
        assert_eq!(out.len(), 2);
        assert_ne!(out[0].embedding, out[1].embedding);
    }

    #[test]
    fn undecodable_bytes_fail() {
        assert!(extract_embedding(&small_embedder(), &WholeImageDetector, "x", b"hello").is_err());
    }

    #[test]
    fn pixel_embedder_pads_and_truncates() {
        let img = Tensor::from_vec(&[3, 2, 2], vec![0.5; 12]).unwrap();
        assert_eq!(PixelEmbedder::new(20).features(&img).unwrap().len(), 20);
        assert_eq!(PixelEmbedder::new(5).features(&img).unwrap(), vec![0.5; 5]);
    }

    #[test]
    fn registry_resolves_by_name() {
        let reg = EmbedderRegistry::default();
        assert_eq!(reg.names(), vec!["dcgan", "pixels"]);
        let p = reg.create("pixels", &EmbedderOptions::default()).unwrap();
        assert_eq!(p.dimension(), 8192);
        assert!(reg.create("dcgan", &EmbedderOptions::default()).is_err());
        assert!(reg.create("resnet", &EmbedderOptions::default()).is_err());
    }
}
