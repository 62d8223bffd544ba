//! Run configuration: a flat `key = value` file, overridden by flags.

use std::path::{Path, PathBuf};

use aiexposure::exposure::IndexChoice;
use aiexposure::kitagawa::SupportMode;
use aiexposure::oaxaca::default_cut;
use aiexposure::panel::{PanelSpec, PeriodId, PeriodKind};
use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub postings: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub exposure: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub period: PeriodKind,
    pub index: IndexChoice,
    /// `None` treats the baseline like any other period of `period` kind.
    pub baseline: Option<PeriodId>,
    pub from: Option<PeriodId>,
    pub mode: SupportMode,
    pub sample_rate: Option<f64>,
    pub min_cell_size: usize,
    pub seed: u64,
    pub cut: NaiveDate,
    pub endpoint: Option<String>,
    pub model: String,
    pub max_attempts: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            postings: None,
            annotations: None,
            exposure: None,
            panel: None,
            scenario: None,
            period: PeriodKind::Quarter,
            index: IndexChoice::Beta,
            baseline: Some(PeriodId::year(2021)),
            from: None,
            mode: SupportMode::Common,
            sample_rate: None,
            min_cell_size: 20,
            seed: 0,
            cut: default_cut(),
            endpoint: None,
            model: "mock".into(),
            max_attempts: 3,
            max_in_flight: 8,
            timeout_secs: 60,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), i + 1))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        }
        Ok(cfg)
    }

    /// Set one key from its text form, checking documented ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "postings" => self.postings = path(),
            "annotations" => self.annotations = path(),
            "exposure" => self.exposure = path(),
            "panel" => self.panel = path(),
            "scenario" => self.scenario = path(),
            "out" => self.out = PathBuf::from(value),
            "period" => self.period = value.parse().map_err(|e| anyhow!("period: {e}"))?,
            "index" => {
                let index: IndexChoice = value.parse().map_err(|e| anyhow!("index: {e}"))?;
                index.validate().map_err(|e| anyhow!("index: {e}"))?;
                self.index = index;
            }
            "baseline" => {
                self.baseline = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|e| anyhow!("baseline: {e}"))?),
                }
            }
            "from" => self.from = Some(value.parse().map_err(|e| anyhow!("from: {e}"))?),
            "mode" => {
                self.mode = match value {
                    "common" => SupportMode::Common,
                    "raw" => SupportMode::Raw,
                    other => bail!("mode: expected common or raw, got {other:?}"),
                }
            }
            "sample_rate" => {
                let r: f64 = value.parse().map_err(|e| anyhow!("sample_rate: {e}"))?;
                if !(r > 0.0 && r <= 1.0) {
                    bail!("sample_rate must be in (0, 1], got {r}");
                }
                self.sample_rate = Some(r);
            }
            "min_cell_size" => {
                self.min_cell_size = value.parse().map_err(|e| anyhow!("min_cell_size: {e}"))?
            }
            "seed" => self.seed = value.parse().map_err(|e| anyhow!("seed: {e}"))?,
            "cut" => {
                self.cut =
                    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|e| anyhow!("cut: {e}"))?
            }
            "endpoint" => self.endpoint = Some(value.to_string()),
            "model" => self.model = value.to_string(),
            "max_attempts" => {
                let n: u32 = value.parse().map_err(|e| anyhow!("max_attempts: {e}"))?;
                if n == 0 {
                    bail!("max_attempts must be at least 1");
                }
                self.max_attempts = n;
            }
            "max_in_flight" => {
                let n: usize = value.parse().map_err(|e| anyhow!("max_in_flight: {e}"))?;
                if n == 0 {
                    bail!("max_in_flight must be at least 1");
                }
                self.max_in_flight = n;
            }
            "timeout_secs" => {
                self.timeout_secs = value.parse().map_err(|e| anyhow!("timeout_secs: {e}"))?
            }
            other => bail!("unknown key {other:?}"),
        }
        Ok(())
    }

    pub fn panel_spec(&self) -> PanelSpec {
        PanelSpec {
            kind: self.period,
            baseline: self.baseline,
            periods: None,
        }
    }

    /// Resolve a required input path and check that it exists.
    pub fn input(&self, key: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = value
            .clone()
            .ok_or_else(|| anyhow!("no {key} file given (set {key} = ... or --{key})"))?;
        if !p.is_file() {
            bail!("{key} file {} does not exist", p.display());
        }
        Ok(p)
    }
}
