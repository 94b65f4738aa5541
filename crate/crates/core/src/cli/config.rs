use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Environment variable that overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "CESDEMAND_OUTPUT_DIR";

/// Settings read from a `--config` TOML file. Every key is optional and
/// any flag given on the command line wins.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub manifest: Option<PathBuf>,

    pub methods: Option<Vec<String>>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub empirical: Option<bool>,
    pub starts: Option<usize>,
    pub bootstrap: Option<usize>,
    pub w_columns: Option<Vec<String>>,
    pub normalize: Option<String>,
    pub ks_se: Option<String>,
    pub powell_se: Option<String>,

    pub products: Option<usize>,
    pub markets: Option<usize>,
    pub gamma: Option<f64>,
    pub eta_law: Option<String>,
    pub xi_loading: Option<f64>,
    pub xi_noise: Option<f64>,
    pub mask_censored_prices: Option<bool>,

    pub first_stage: Option<String>,
    pub grid: Option<usize>,
    pub draws: Option<usize>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub reference: Option<String>,

    pub shares: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub market: Option<String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag, then environment, then config file, then the current directory.
pub fn resolve_output_dir(flag: Option<&Path>, env: Option<&str>, file: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| file.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}
