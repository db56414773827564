use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("port must be in 1..=65535")]
    Port,
    #[error("{name} does not exist: {}", path.display())]
    Missing { name: &'static str, path: PathBuf },
    #[error("cache capacity must be at least 1")]
    Cache,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub model_path: PathBuf,
    pub manifest_path: PathBuf,
    pub score_db_path: PathBuf,
    /// Built dashboard assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Rendered heat maps kept in memory.
    pub cache_capacity: usize,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(ConfigError::Port);
        }
        if self.cache_capacity == 0 {
            return Err(ConfigError::Cache);
        }
        let files = [
            ("model", &self.model_path),
            ("manifest", &self.manifest_path),
            ("score database", &self.score_db_path),
        ];
        for (name, path) in files {
            if !path.is_file() {
                return Err(ConfigError::Missing {
                    name,
                    path: path.clone(),
                });
            }
        }
        if let Some(dir) = &self.static_dir {
            if !dir.is_dir() {
                return Err(ConfigError::Missing {
                    name: "static directory",
                    path: dir.clone(),
                });
            }
        }
        Ok(())
    }
}
