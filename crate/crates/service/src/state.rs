use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use lru::LruCache;
use rxtriage_core::ingest::{self, ArchiveManifest, IngestError, SequenceRecord};
use rxtriage_core::render::{ColorMap, NormalizationMode};
use rxtriage_core::spectral::ModelFileError;
use rxtriage_core::triage::{ScoreDb, TriageError};
use rxtriage_core::BackgroundModel;
use thiserror::Error;

use crate::config::{ConfigError, ServiceConfig};

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model: {0}")]
    Model(#[from] ModelFileError),
    #[error("manifest: {0}")]
    Manifest(#[from] IngestError),
    #[error("score database: {0}")]
    ScoreDb(#[from] TriageError),
    #[error("sequence id {0} appears for both eyes; the API addresses sequences by id alone")]
    AmbiguousId(String),
    #[error("I/O: {0}")]
    Io(std::io::Error),
}

/// Heat-map cache key: sequence, normalization and model fingerprint.
pub type RenderKey = (String, NormalizationMode, String);

/// Shared, immutable-after-load service state plus the disposition write path.
pub struct AppState {
    pub model: BackgroundModel,
    pub fingerprint: String,
    pub manifest: ArchiveManifest,
    index: HashMap<String, usize>,
    pub colormap: ColorMap,
    pub(crate) db: RwLock<ScoreDb>,
    pub(crate) db_path: PathBuf,
    /// Serializes disposition writes.
    pub(crate) writer: tokio::sync::Mutex<()>,
    pub(crate) cache: Mutex<LruCache<RenderKey, axum::body::Bytes>>,
}

impl AppState {
    pub fn load(config: &ServiceConfig) -> Result<Self, StateError> {
        config.validate()?;
        let model = BackgroundModel::load(&config.model_path)?;
        let manifest = ingest::load_manifest(&config.manifest_path)?;
        let db = ScoreDb::load(&config.score_db_path)?;
        Self::new(model, manifest, db, &config.score_db_path, config.cache_capacity)
    }

    pub fn new(
        model: BackgroundModel,
        manifest: ArchiveManifest,
        db: ScoreDb,
        db_path: &Path,
        cache_capacity: usize,
    ) -> Result<Self, StateError> {
        let mut index = HashMap::with_capacity(manifest.len());
        for (i, rec) in manifest.entries.iter().enumerate() {
            if index.insert(rec.sequence_id.clone(), i).is_some() {
                return Err(StateError::AmbiguousId(rec.sequence_id.clone()));
            }
        }
        let capacity = NonZeroUsize::new(cache_capacity).ok_or(StateError::Config(ConfigError::Cache))?;
        Ok(Self {
            fingerprint: model.fingerprint(),
            model,
            manifest,
            index,
            colormap: ColorMap::default(),
            db: RwLock::new(db),
            db_path: db_path.to_path_buf(),
            writer: tokio::sync::Mutex::new(()),
            cache: Mutex::new(LruCache::new(capacity)),
        })
    }

    pub fn record(&self, sequence_id: &str) -> Option<&SequenceRecord> {
        self.index.get(sequence_id).map(|&i| &self.manifest.entries[i])
    }

    /// Number of heat maps currently cached.
    pub fn cached_renders(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}
