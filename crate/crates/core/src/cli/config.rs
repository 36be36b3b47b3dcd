use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SdConvention;
use crate::problems::{ProblemParams, ProblemSpec};
use crate::schemes::{SchemeConfig, SchemeKind, Solver};
use crate::train::{DecayPolicy, PolicyKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    pub dim: usize,
    /// Number of time steps `N`.
    pub steps: usize,
    #[serde(default)]
    pub params: ProblemParams,
}

/// Per-field overrides of the scheme's default policy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: Option<PolicyKind>,
    pub gamma0: Option<f64>,
    pub gamma_min: Option<f64>,
    pub period: Option<usize>,
    pub probe_every: Option<usize>,
    pub validation_size: Option<usize>,
    pub threshold: Option<f64>,
    pub factor: Option<f64>,
    pub patience: Option<usize>,
    pub warm_steps: Option<usize>,
    pub max_steps: Option<usize>,
}

impl PolicySection {
    pub fn resolve(&self, kind: SchemeKind) -> DecayPolicy {
        let mut p = DecayPolicy::for_scheme(kind);
        macro_rules! apply {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { p.$f = v; })*};
        }
        apply!(kind, gamma0, gamma_min, period, probe_every, validation_size, threshold, factor, patience, warm_steps, max_steps);
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch: usize,
    pub chunk: usize,
    pub seeds: Vec<u64>,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub policy: PolicySection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch: t.batch,
            chunk: t.chunk,
            seeds: vec![1],
            workers: 0,
            policy: PolicySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub test_size: usize,
    /// Seed of the shared test batch, drawn on its own Brownian stream.
    pub test_seed: u64,
    pub sd: SdConvention,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            test_size: 4096,
            test_seed: 0,
            sd: SdConvention::Population,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Axes of a sweep; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub schemes: Vec<SchemeKind>,
    pub dims: Vec<usize>,
    pub steps: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "is_default_sweep")]
    pub sweep: SweepSection,
}

fn is_default_sweep(s: &SweepSection) -> bool {
    *s == SweepSection::default()
}

/// Top-level key marking a manifest rather than a plain config.
pub const MANIFEST_KEY: &str = "manifest_format";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let value = match table.get(MANIFEST_KEY) {
            Some(_) => table
                .get("config")
                .cloned()
                .ok_or_else(|| Error::config("config", "manifest has no config table"))?,
            None => toml::Value::Table(table),
        };
        serde_path_to_error::deserialize(value).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Copy with every defaulted policy and architecture field written out,
    /// so the snapshot does not depend on the defaults of this build.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let p = self.policy();
        c.train.policy = PolicySection {
            kind: Some(p.kind),
            gamma0: Some(p.gamma0),
            gamma_min: Some(p.gamma_min),
            period: Some(p.period),
            probe_every: Some(p.probe_every),
            validation_size: Some(p.validation_size),
            threshold: Some(p.threshold),
            factor: Some(p.factor),
            patience: Some(p.patience),
            warm_steps: Some(p.warm_steps),
            max_steps: Some(p.max_steps),
        };
        let kind = self.scheme.kind;
        c.scheme.hidden_layers = Some(self.scheme.hidden_layers.unwrap_or(kind.default_hidden_layers()));
        c.scheme.hidden_width = Some(self.scheme.hidden_width.unwrap_or(self.problem.dim + 10));
        c.scheme.activation = Some(self.scheme.activation.unwrap_or(kind.default_activation()));
        c
    }

    pub fn policy(&self) -> DecayPolicy {
        self.train.policy.resolve(self.scheme.kind)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch: self.train.batch,
            chunk: self.train.chunk,
            policy: self.policy(),
        }
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        ProblemSpec::build(&self.problem.id, self.problem.dim, &self.problem.params)
    }

    pub fn build_solver(&self) -> Result<Solver> {
        Solver::new(&self.scheme, self.problem.dim, self.problem.steps)
    }

    /// Checks every cross-field constraint; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.problem.steps == 0 {
            return Err(Error::config("problem.steps", "must be at least 1"));
        }
        self.build_problem()?;
        self.build_solver()?;
        self.train_config().validate()?;
        if self.train.seeds.is_empty() {
            return Err(Error::config("train.seeds", "at least one seed is required"));
        }
        let mut seeds = self.train.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("train.seeds", "seeds must be distinct"));
        }
        if self.evaluate.test_size == 0 {
            return Err(Error::config("evaluate.test_size", "must be positive"));
        }
        if self.sweep.dims.contains(&0) {
            return Err(Error::config("sweep.dims", "dimensions must be at least 1"));
        }
        if self.sweep.steps.contains(&0) {
            return Err(Error::config("sweep.steps", "step counts must be at least 1"));
        }
        Ok(())
    }

    /// The configs of every sweep cell, schemes outermost, then `d`, then `N`.
    pub fn sweep_cells(&self) -> Vec<ExperimentConfig> {
        let schemes = if self.sweep.schemes.is_empty() {
            vec![self.scheme.kind]
        } else {
            self.sweep.schemes.clone()
        };
        let dims = if self.sweep.dims.is_empty() {
            vec![self.problem.dim]
        } else {
            self.sweep.dims.clone()
        };
        let steps = if self.sweep.steps.is_empty() {
            vec![self.problem.steps]
        } else {
            self.sweep.steps.clone()
        };
        let mut cells = Vec::with_capacity(schemes.len() * dims.len() * steps.len());
        for &kind in &schemes {
            for &d in &dims {
                for &n in &steps {
                    let mut c = self.clone();
                    c.scheme.kind = kind;
                    c.problem.dim = d;
                    c.problem.steps = n;
                    c.sweep = SweepSection::default();
                    c.output.dir = self.output.dir.join("cells").join(format!("{kind}-d{d}-N{n}"));
                    cells.push(c);
                }
            }
        }
        cells
    }
}
