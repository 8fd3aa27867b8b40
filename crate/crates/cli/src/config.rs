use std::fs;
use std::path::{Path, PathBuf};

use answergen::corpus::synth::SynthConfig;
use answergen::corpus::Split;
use answergen::decoding::BeamConfig;
use answergen::model::ModelConfig;
use answergen::retrieval::RetrievalConfig;
use answergen::training::TrainConfig;
use answergen::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw JSONL corpus read by `prepare` and written by `synth`.
    pub corpus: PathBuf,
    /// Optional "<V> <d>" text vectors; seeded vectors are used when unset.
    pub embeddings: Option<PathBuf>,
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub word_table: PathBuf,
    pub snippets: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub answers: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            embeddings: None,
            dataset: "work/dataset.jsonl".into(),
            vocab: "work/vocab.json".into(),
            word_table: "work/word_table.txt".into(),
            snippets: "work/snippets.jsonl".into(),
            checkpoint: "work/checkpoint.json".into(),
            train_log: "work/train_log.jsonl".into(),
            answers: "work/answers.jsonl".into(),
            report: "work/report.json".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.dataset,
            &mut self.vocab,
            &mut self.word_table,
            &mut self.snippets,
            &mut self.checkpoint,
            &mut self.train_log,
            &mut self.answers,
            &mut self.report,
        ] {
            fix(p);
        }
        if let Some(p) = &mut self.embeddings {
            fix(p);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub beam_width: usize,
    pub max_len: usize,
    pub length_normalize: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        let b = BeamConfig::default();
        Self {
            beam_width: b.beam_width,
            max_len: b.max_len,
            length_normalize: b.length_normalize,
        }
    }
}

impl DecodingConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_normalize: self.length_normalize,
            ..BeamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, batch order, seeded word vectors and the
    /// synthetic corpus.
    pub seed: u64,
    /// 32 or 64.
    pub precision: u32,
    /// Minimum count for a word to enter the vocabulary.
    pub min_freq: usize,
    /// Split answered by `generate` and scored by `evaluate`.
    pub eval_split: Split,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub decoding: DecodingConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            precision: 32,
            min_freq: 1,
            eval_split: Split::Test,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            decoding: DecodingConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Copies the run seed into every seeded component and validates.
    pub fn finish(mut self) -> Result<Self, Error> {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        if self.precision != 32 && self.precision != 64 {
            return Err(Error::Config(format!("precision must be 32 or 64, got {}", self.precision)));
        }
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 9\n[model]\ndim = 16\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap().finish().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.model.dec_kernel, 4);
        assert_eq!(cfg.paths.snippets, dir.path().join("work/snippets.jsonl"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[train]\nlearning_rat = 0.1\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn shipped_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
        let cfg = RunConfig::load(&path).unwrap().finish().unwrap();
        assert_eq!(cfg.model.dim, 32);
        assert_eq!(cfg.synth.n_pairs, 240);
    }
}
