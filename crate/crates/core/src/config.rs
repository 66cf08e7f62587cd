//! Flat TOML pipeline configuration with dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaining::{ChainTrainConfig, Objective};
use crate::corpus::synth::SynthConfig;
use crate::encoder::mlm::TrainConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::mining::MiningConfig;
use crate::partition::{check_alpha, ALPHA_GRID};

pub const SCHEMA_VERSION: u32 = 1;

/// A model variant of the sweep: MLM only, or MLM then one chaining objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mlm,
    Associative,
    Analogical,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mlm, Variant::Associative, Variant::Analogical, Variant::Both];

    pub fn objective(self) -> Option<Objective> {
        match self {
            Variant::Mlm => None,
            Variant::Associative => Some(Objective::Associative),
            Variant::Analogical => Some(Objective::Analogical),
            Variant::Both => Some(Objective::Both),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mlm => "mlm",
            Variant::Associative => "associative",
            Variant::Analogical => "analogical",
            Variant::Both => "both",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub wordnet: Option<PathBuf>,
    /// Usage corpus (JSONL). Absent means a generated corpus.
    pub corpus: Option<PathBuf>,
    /// CoreLex anchor table; absent means the shipped table.
    pub corelex: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub runs: usize,
    pub alphas: Vec<f64>,
    pub variants: Vec<Variant>,
    pub paths: Paths,
    pub synth: SynthConfig,
    /// Absent with a generated corpus means thresholds scaled to the generator.
    pub mining: Option<MiningConfig>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub chain: ChainTrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            runs: 5,
            alphas: ALPHA_GRID.to_vec(),
            variants: Variant::ALL.to_vec(),
            paths: Paths {
                out: PathBuf::from("out"),
                ..Paths::default()
            },
            synth: SynthConfig::default(),
            mining: None,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            chain: ChainTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

pub const DESK_PROFILE: &str = include_str!("../configs/desk.toml");

impl PipelineConfig {
    /// The smaller profile used by the acceptance harness.
    pub fn desk() -> Self {
        Self::from_toml(DESK_PROFILE, &[]).expect("shipped desk profile parses")
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults with overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self> {
        let base = toml::to_string(&PipelineConfig::default()).expect("defaults serialize");
        Self::from_toml(&base, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be positive"));
        }
        if self.alphas.is_empty() {
            return Err(Error::config("alphas", "must list at least one value"));
        }
        for &a in &self.alphas {
            check_alpha(a).map_err(|_| Error::config("alphas", format!("{a} is not one of {ALPHA_GRID:?}")))?;
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "must list at least one variant"));
        }
        self.encoder.validate()?;
        self.train.validate()?;
        self.chain.validate()?;
        if self.paths.corpus.is_none() {
            self.synth.validate()?;
        }
        if let Some(m) = &self.mining {
            m.validate()?;
        }
        if self.eval.n_distractors == 0 {
            return Err(Error::config("eval.n_distractors", "must be positive"));
        }
        Ok(())
    }

    pub fn mining(&self) -> MiningConfig {
        match (&self.mining, &self.paths.corpus) {
            (Some(m), _) => m.clone(),
            (None, None) => self.synth.scaled_mining(),
            (None, Some(_)) => MiningConfig::default(),
        }
    }

    /// Paths that must exist before a run.
    pub fn check_paths(&self) -> Result<()> {
        for (field, p) in [
            ("paths.wordnet", &self.paths.wordnet),
            ("paths.corpus", &self.paths.corpus),
            ("paths.corelex", &self.paths.corelex),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::config(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out = PathBuf::new();
        let mut h = Sha256::new();
        h.update(c.to_toml().as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}", self.hash(), self.seed)
    }
}

/// Sets `a.b.c = value` in a TOML table. The value is parsed as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut cur = table;
    for seg in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{seg}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let c = PipelineConfig::with_overrides(&["encoder.d_model=32".into(), "runs=3".into(), "chain.objective=both".into()]).unwrap();
        assert_eq!(c.encoder.d_model, 32);
        assert_eq!(c.runs, 3);
        assert_eq!(c.chain.objective, Objective::Both);
        assert_ne!(c.hash(), PipelineConfig::default().hash());
    }

    #[test]
    fn violations_name_the_field() {
        let e = PipelineConfig::with_overrides(&["alphas=[0.5]".into()]).unwrap_err();
        assert!(e.to_string().contains("alphas"), "{e}");
        let e = PipelineConfig::with_overrides(&["schema_version=9".into()]).unwrap_err();
        assert!(e.to_string().contains("schema_version"), "{e}");
        assert!(PipelineConfig::with_overrides(&["nonsense=1".into()]).is_err());
        assert!(PipelineConfig::with_overrides(&["runs".into()]).is_err());
    }

    #[test]
    fn desk_profile_is_valid() {
        let d = PipelineConfig::desk();
        assert_eq!(d.alphas, ALPHA_GRID.to_vec());
        assert_eq!(d.variants.len(), 4);
    }

    #[test]
    fn out_dir_does_not_affect_hash() {
        let a = PipelineConfig::default();
        let b = PipelineConfig::with_overrides(&["paths.out=elsewhere".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
