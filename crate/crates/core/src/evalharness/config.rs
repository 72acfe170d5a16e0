use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llmclient::{LlmConfig, TransportConfig, UnparseablePolicy};
use crate::modelplug::BuiltinHyperparams;
use crate::modelplug::{ProviderConfig, ProviderKind};
use crate::promptgen::BaselineKind;
use crate::simindex::LshParams;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Reference cases plus reasoning chain.
    #[default]
    Augmented,
    Role,
    Auxiliary,
    Cot2step,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [Self::Augmented, Self::Role, Self::Auxiliary, Self::Cot2step];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Augmented => "augmented",
            Self::Role => "role",
            Self::Auxiliary => "auxiliary",
            Self::Cot2step => "cot2step",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Augmented => None,
            Self::Role => Some(BaselineKind::Role),
            Self::Auxiliary => Some(BaselineKind::Auxiliary),
            Self::Cot2step => Some(BaselineKind::Cot2step),
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown prompt mode \"{s}\""))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub size: usize,
    #[serde(default = "default_project")]
    pub project: String,
}

fn default_project() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// JSON-Lines corpus. Exactly one of `path` and `synthetic` is set.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Benign:vulnerable ratio after undersampling; absent keeps all records.
    pub undersample_ratio: Option<f64>,
    pub train_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: None,
            undersample_ratio: Some(1.0),
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSection {
    /// Findings files in the canonical JSON-Lines form.
    pub findings: Vec<PathBuf>,
    pub function_map: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub top_k: usize,
}

impl Default for StaticSection {
    fn default() -> Self {
        Self {
            findings: Vec::new(),
            function_map: None,
            mapping: None,
            top_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySection {
    pub library: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotMode {
    #[default]
    Offline,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub icl_size: usize,
    pub token_budget: Option<usize>,
    pub cot_mode: CotMode,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            icl_size: 3,
            token_budget: None,
            cot_mode: CotMode::Offline,
        }
    }
}

/// Everything a run needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub unparseable: UnparseablePolicy,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub index: LshParams,
    /// Prebuilt index over the training split; built from `index` otherwise.
    #[serde(default)]
    pub index_file: Option<PathBuf>,
    #[serde(default = "ProviderConfig::builtin")]
    pub provider: ProviderConfig,
    /// Used when the builtin provider has no model file.
    #[serde(default)]
    pub training: BuiltinHyperparams,
    #[serde(default, rename = "static")]
    pub static_analysis: StaticSection,
    #[serde(default)]
    pub taxonomy: TaxonomySection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub llm: LlmConfig,
}

impl RunConfig {
    /// A run over a generated corpus with every other setting at its default.
    pub fn synthetic(size: usize, seed: u64) -> Self {
        Self {
            seed,
            prompt_mode: PromptMode::Augmented,
            output_dir: None,
            unparseable: UnparseablePolicy::default(),
            corpus: CorpusSection {
                synthetic: Some(SyntheticSpec {
                    size,
                    project: default_project(),
                }),
                ..CorpusSection::default()
            },
            index: LshParams::default(),
            index_file: None,
            provider: ProviderConfig::builtin(),
            training: BuiltinHyperparams::default(),
            static_analysis: StaticSection::default(),
            taxonomy: TaxonomySection::default(),
            prompt: PromptSection::default(),
            llm: LlmConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `path`; relative paths inside are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.output_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.index_file.as_mut() {
            fix(p);
        }
        self.static_analysis.findings.iter_mut().for_each(fix);
        if let Some(p) = self.static_analysis.function_map.as_mut() {
            fix(p);
        }
        if let Some(p) = self.static_analysis.mapping.as_mut() {
            fix(p);
        }
        if let Some(p) = self.taxonomy.library.as_mut() {
            fix(p);
        }
        if let TransportConfig::Mock { script } = &mut self.llm.transport {
            fix(script);
        }
        if matches!(self.provider.kind, ProviderKind::File | ProviderKind::Builtin) {
            if let Some(loc) = self.provider.location.as_mut() {
                let mut p = PathBuf::from(&*loc);
                fix(&mut p);
                *loc = p.to_string_lossy().into_owned();
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(_), Some(_)) => return bad("corpus: set either path or synthetic, not both".into()),
            (None, None) => return bad("corpus: path or synthetic is required".into()),
            _ => {}
        }
        if self.prompt.icl_size == 0 {
            return bad("prompt.icl_size must be >= 1".into());
        }
        if self.static_analysis.top_k == 0 {
            return bad("static.top_k must be >= 1".into());
        }
        self.index
            .validate()
            .map_err(|e| PipelineError::Config(format!("index: {e}")))?;
        self.provider
            .validate()
            .map_err(|e| PipelineError::Config(format!("provider: {e}")))?;
        self.llm
            .validate()
            .map_err(|e| PipelineError::Config(format!("llm: {e}")))?;
        Ok(())
    }
}
