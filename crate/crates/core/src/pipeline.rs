//! Image-to-saliency entry point combining a feature extractor with the
//! rarity and fusion engine.

use crate::features::{reference_vgg16, FeatureExtractor, LayerActivations, NetworkTopology, REFERENCE_SEED};
use crate::fusion::{FusionConfig, SaliencyBreakdown, SaliencyEngine};
use crate::rarity::DEFAULT_BIN_COUNT;
use crate::tensor::Tensor;
use crate::Error;

#[derive(Clone, Debug)]
pub struct DeepRare {
    extractor: FeatureExtractor,
    engine: SaliencyEngine,
    working_size: (usize, usize),
}

impl DeepRare {
    /// `working_size` `(width, height)` defaults to the topology's input size.
    pub fn new(
        extractor: FeatureExtractor,
        fusion: FusionConfig,
        bin_count: usize,
        working_size: Option<(usize, usize)>,
    ) -> Result<Self, Error> {
        let topology = extractor.topology().clone();
        let working_size = working_size.unwrap_or(topology.input_size);
        let engine = SaliencyEngine::new(topology, fusion, bin_count)?;
        Ok(Self {
            extractor,
            engine,
            working_size,
        })
    }

    /// The seeded reference backbone with default settings.
    pub fn reference() -> Self {
        let topology = NetworkTopology::vgg16_reference();
        let extractor = FeatureExtractor::from_net(reference_vgg16(REFERENCE_SEED), &topology)
            .expect("reference network matches its topology");
        Self::new(extractor, FusionConfig::default(), DEFAULT_BIN_COUNT, None).expect("default configuration is valid")
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn engine(&self) -> &SaliencyEngine {
        &self.engine
    }

    pub fn working_size(&self) -> (usize, usize) {
        self.working_size
    }

    pub fn features(&self, image: &Tensor) -> Result<Vec<LayerActivations>, Error> {
        Ok(self.extractor.extract(image, self.working_size)?)
    }

    /// Saliency of an RGB `[3, H, W]` image at its own resolution.
    pub fn saliency(&self, image: &Tensor) -> Result<SaliencyBreakdown, Error> {
        let acts = self.features(image)?;
        let (_, h, w) = image.dims3()?;
        Ok(self.engine.compute(&acts, (w, h))?)
    }
}
