//! Pipeline configuration: one flat TOML file, every key optional, defaults
//! matching the reference setup. Command-line `--set key=value` overrides
//! win over file values, and `--seed` wins over both.

use anyhow::{bail, Context, Result};
use hesm_core::encoder::EncoderConfig;
use hesm_core::hesmverify::VerifierConfig;
use hesm_core::hopretrieve::{RetrieveParams, RetrieverTrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Every tunable of the pipeline in one flat struct. Field names are the
/// TOML keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed; stage-specific streams are derived from it.
    pub seed: u64,
    /// Documents kept per claim by title-based selection.
    pub k1: usize,
    /// Retrieval iterations: 2 = roots plus hyperlink expansion, 1 = roots
    /// only.
    pub hops: usize,
    /// Evidence-set roots kept by the first iteration.
    pub k2: usize,
    /// Sentences per evidence set, root included.
    pub m_s: usize,
    /// First-iteration probability threshold (strict).
    pub th_evi1: f64,
    /// Second-iteration probability threshold (strict).
    pub th_evi2: f64,
    pub encoder_d: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_t_max: usize,
    pub retriever_epochs: usize,
    pub retriever_batch_size: usize,
    pub retriever_lr: f64,
    pub retriever_weight_decay: f64,
    /// Negatives per positive before annealing.
    pub negative_ratio: f64,
    /// Per-epoch geometric annealing factor for the negative ratio.
    pub negative_decay: f64,
    pub verifier_epochs: usize,
    pub verifier_batch_size: usize,
    pub verifier_lr: f64,
    pub verifier_weight_decay: f64,
    /// Chance of hiding each claim word from a verifier training example.
    pub verifier_word_dropout: f64,
    /// Layers in the set-level encoder of the contextual path.
    pub set_layers: usize,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            seed: 0,
            k1: 10,
            hops: 2,
            k2: 3,
            m_s: 3,
            th_evi1: 0.5,
            th_evi2: 0.8,
            encoder_d: 64,
            encoder_layers: 2,
            encoder_heads: 4,
            encoder_t_max: 128,
            retriever_epochs: 4,
            retriever_batch_size: 64,
            retriever_lr: 5e-5,
            retriever_weight_decay: 0.0,
            negative_ratio: 8.0,
            negative_decay: 0.5,
            verifier_epochs: 4,
            verifier_batch_size: 32,
            verifier_lr: 2e-5,
            verifier_weight_decay: 0.0,
            verifier_word_dropout: 0.0,
            set_layers: 2,
        }
    }
}

impl PipelineConfig {
    /// Read the file (when given), apply `--set` overrides, then `--seed`.
    pub fn load(
        path: Option<&Path>,
        sets: &[String],
        seed_flag: Option<u64>,
    ) -> Result<PipelineConfig> {
        let mut table = match path {
            Some(p) => {
                let body = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                body.parse::<toml::Table>()
                    .with_context(|| format!("parsing config file {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for assignment in sets {
            let (key, value) = assignment.split_once('=').with_context(|| {
                format!("override {assignment:?} is not of the form key=value")
            })?;
            // Parse the right-hand side with TOML value grammar (numbers,
            // booleans, quoted strings); anything else stays a bare string.
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.trim().to_string(), parsed);
        }
        // Round-trip through document form so a bad key or type is reported
        // with the offending line, whichever side supplied it.
        let document = toml::to_string(&table).context("encoding effective config")?;
        let config: PipelineConfig = toml::from_str(&document)
            .context("config does not match the documented key set")?;
        let config = PipelineConfig {
            seed: seed_flag.unwrap_or(config.seed),
            ..config
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 {
            bail!("k1 must be at least 1");
        }
        if !(self.hops == 1 || self.hops == 2) {
            bail!("hops must be 1 or 2, got {}", self.hops);
        }
        self.retrieve_params()
            .validate()
            .context("retrieval settings")?;
        self.encoder_config(4).validate().context("encoder settings")?;
        self.retriever_train()
            .validate()
            .context("retriever training settings")?;
        self.verifier_train()
            .validate()
            .context("verifier training settings")?;
        Ok(())
    }

    pub fn retrieve_params(&self) -> RetrieveParams {
        RetrieveParams {
            k2: self.k2,
            m_s: self.m_s,
            th_evi1: self.th_evi1,
            th_evi2: self.th_evi2,
        }
    }

    pub fn encoder_config(&self, vocab: usize) -> EncoderConfig {
        EncoderConfig {
            d: self.encoder_d,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            t_max: self.encoder_t_max,
            vocab,
        }
    }

    pub fn verifier_config(&self, vocab: usize) -> VerifierConfig {
        VerifierConfig {
            encoder: self.encoder_config(vocab),
            set_layers: self.set_layers,
            max_sets: self.k2,
        }
    }

    pub fn retriever_train(&self) -> RetrieverTrainConfig {
        RetrieverTrainConfig {
            epochs: self.retriever_epochs,
            batch_size: self.retriever_batch_size,
            lr: self.retriever_lr,
            weight_decay: self.retriever_weight_decay,
            negative_ratio: self.negative_ratio,
            negative_decay: self.negative_decay,
            seed: self.seed,
        }
    }

    pub fn verifier_train(&self) -> hesm_core::hesmverify::VerifierTrainConfig {
        hesm_core::hesmverify::VerifierTrainConfig {
            epochs: self.verifier_epochs,
            batch_size: self.verifier_batch_size,
            lr: self.verifier_lr,
            weight_decay: self.verifier_weight_decay,
            word_dropout: self.verifier_word_dropout,
            seed: self.seed,
        }
    }

    /// Stage-distinct model-init seeds so the two retrieval passes and the
    /// verifier never share initial weights.
    pub fn seed_for(&self, stage: SeedStage) -> u64 {
        self.seed.wrapping_add(match stage {
            SeedStage::Synth => 0,
            SeedStage::RetrieverPass1 => 1,
            SeedStage::RetrieverPass2 => 2,
            SeedStage::Verifier => 3,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStage {
    Synth,
    RetrieverPass1,
    RetrieverPass2,
    Verifier,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = PipelineConfig::default();
        assert_eq!(
            (c.k1, c.hops, c.k2, c.m_s),
            (10, 2, 3, 3),
            "selection defaults"
        );
        assert_eq!((c.th_evi1, c.th_evi2), (0.5, 0.8), "threshold defaults");
        assert_eq!(
            (c.retriever_epochs, c.retriever_batch_size, c.retriever_lr),
            (4, 64, 5e-5),
            "retriever training defaults"
        );
        assert_eq!(
            (c.negative_ratio, c.negative_decay),
            (8.0, 0.5),
            "negative sampling defaults"
        );
        assert_eq!(
            (c.verifier_epochs, c.verifier_batch_size, c.verifier_lr),
            (4, 32, 2e-5),
            "verifier training defaults"
        );
        assert_eq!(c.set_layers, 2, "set-encoder depth default");
        c.validate().expect("defaults validate");
    }

    #[test]
    fn overrides_beat_file_values_and_seed_beats_both() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "k1 = 7\nseed = 11\nverifier_lr = 1e-3\n").expect("write");
        let c = PipelineConfig::load(
            Some(&path),
            &["k1=9".to_string(), "m_s=2".to_string()],
            Some(42),
        )
        .expect("loads");
        assert_eq!(c.k1, 9, "--set overrides the file");
        assert_eq!(c.m_s, 2, "--set fills keys the file omits");
        assert_eq!(c.verifier_lr, 1e-3, "file overrides the default");
        assert_eq!(c.seed, 42, "--seed wins over the file");
    }

    #[test]
    fn unknown_keys_and_bad_types_name_the_field() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "k_one = 7\n").expect("write");
        let err = PipelineConfig::load(Some(&path), &[], None).unwrap_err();
        assert!(
            format!("{err:#}").contains("k_one"),
            "unknown key named in {err:#}"
        );
        std::fs::write(&path, "k1 = \"ten\"\n").expect("write");
        let err = PipelineConfig::load(Some(&path), &[], None).unwrap_err();
        assert!(
            format!("{err:#}").contains("k1"),
            "mistyped key named in {err:#}"
        );
    }

    #[test]
    fn nonsense_values_are_rejected() {
        let bad = PipelineConfig {
            hops: 3,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err(), "hops beyond 2 rejected");
        let bad = PipelineConfig {
            th_evi2: 1.5,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err(), "threshold beyond 1 rejected");
    }
}
