//! Pipeline configuration file (TOML).

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use topocf::codec::synthetic::{DEFAULT_SIDE, DEFAULT_TEXTURE_AMPLITUDE};
use topocf::codec::{ArcCodec, ArcScenario, Codec, CodecContract, SubprocessCodec, SyntheticCodec, SyntheticRegistry};
use topocf::embedding::EmbeddingConfig;
use topocf::planner::PlannerConfig;
use topocf::segmenter::{PostprocConfig, WalkConfig};
use topocf::topology::{CoverConfig, DbscanConfig};
use topocf::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    /// Analytic phantom renderer.
    #[default]
    Synthetic,
    /// Phantom renderer reading class-style codes off a curved manifold.
    Arc,
    /// External command speaking the codec file protocol.
    Subprocess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub kind: CodecKind,
    /// Shell command template with `{op}` and `{request_dir}` placeholders.
    pub command: Option<String>,
    pub timeout_secs: f64,
    /// Individual-style code length of an external codec.
    pub is_dim: usize,
    pub height: usize,
    pub width: usize,
    pub texture_amplitude: f64,
    pub arc: ArcScenario,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            kind: CodecKind::Synthetic,
            command: None,
            timeout_secs: 300.0,
            is_dim: 6,
            height: DEFAULT_SIDE,
            width: DEFAULT_SIDE,
            texture_amplitude: DEFAULT_TEXTURE_AMPLITUDE,
            arc: ArcScenario::default(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config("codec images must be at least 8x8".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("codec timeout_secs must be positive".into()));
        }
        if self.kind == CodecKind::Subprocess {
            if self.command.as_deref().is_none_or(|c| c.trim().is_empty()) {
                return Err(Error::Config("subprocess codec needs `command`".into()));
            }
            if self.is_dim == 0 {
                return Err(Error::Config("subprocess codec needs a positive `is_dim`".into()));
            }
        }
        Ok(())
    }

    pub fn synthetic(&self) -> SyntheticCodec {
        SyntheticCodec::new(self.height, self.width, self.texture_amplitude)
    }

    pub fn build(&self, registry: Option<SyntheticRegistry>) -> Result<Box<dyn Codec>> {
        self.validate()?;
        let base = match registry {
            Some(r) => self.synthetic().with_registry(r),
            None => self.synthetic(),
        };
        Ok(match self.kind {
            CodecKind::Synthetic => Box::new(base),
            CodecKind::Arc => Box::new(ArcCodec::new(base, self.arc.clone())),
            CodecKind::Subprocess => Box::new(
                SubprocessCodec::new(
                    self.command.clone().unwrap_or_default(),
                    CodecContract::new(self.is_dim, self.height, self.width),
                )
                .with_timeout(Duration::from_secs_f64(self.timeout_secs)),
            ),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset synthesis and random goal selection; `--seed` overrides it.
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    pub cover: CoverConfig,
    pub dbscan: DbscanConfig,
    pub planner: PlannerConfig,
    pub walk: WalkConfig,
    pub postproc: PostprocConfig,
    pub codec: CodecConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            Error::parse(path, line, column, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Contract(m) => Error::Config(m),
            other => other,
        };
        self.embedding.validate().map_err(config)?;
        self.cover.validate().map_err(config)?;
        self.dbscan.validate().map_err(config)?;
        self.planner.validate().map_err(config)?;
        self.walk.validate().map_err(config)?;
        self.postproc.validate().map_err(config)?;
        self.codec.validate()
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use topocf::planner::GoalStrategy;
    use topocf::segmenter::ThresholdMode;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(
            PipelineConfig::parse("", Path::new("c.toml")).unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn sections_override_defaults() {
        let text = "seed = 9\n[cover]\nnx = 5\n[planner]\ngoal_mode = \"random\"\n[postproc]\nthreshold_mode = \"otsu\"\n[codec]\nkind = \"subprocess\"\ncommand = \"run {op} {request_dir}\"\nis_dim = 64\n";
        let c = PipelineConfig::parse(text, Path::new("c.toml")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!((c.cover.nx, c.cover.ny), (5, 8));
        assert_eq!(c.planner.goal_mode, GoalStrategy::Random);
        assert_eq!(c.postproc.threshold_mode, ThresholdMode::Otsu);
        assert_eq!(c.codec.kind, CodecKind::Subprocess);
        assert_eq!(c.codec.build(None).unwrap().contract().is_dim, 64);
    }

    #[test]
    fn unknown_keys_report_position() {
        match PipelineConfig::parse("seed = 1\n[cover]\nbins = 3\n", Path::new("c.toml")) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(PipelineConfig::parse("[nope]\n", Path::new("c.toml")).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = PipelineConfig::parse("[cover]\noverlap = 0.7\n", Path::new("c.toml")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(PipelineConfig::parse("[codec]\nkind = \"subprocess\"\n", Path::new("c.toml")).is_err());
    }

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let text = toml::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(
            PipelineConfig::parse(&text, Path::new("c.toml")).unwrap(),
            PipelineConfig::default()
        );
    }
}
