//! Experiment configuration file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hypermix::agents::AgentConfig;
use hypermix::envs::{EnvConfig, DEFAULT_GAMMA};
use hypermix::mixers::{MixerConfig, MixerKind};
use hypermix::training::{RunSpec, TrainConfig};

use crate::CliError;

/// Mixer section: kind plus network widths and learned hyperedge count `m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixerSection {
    pub kind: MixerKind,
    pub embed: usize,
    pub hypernet_hidden: usize,
    pub hyperedges: usize,
}

impl Default for MixerSection {
    fn default() -> Self {
        let c = MixerConfig::default();
        Self {
            kind: MixerKind::HgcnMix,
            embed: c.embed,
            hypernet_hidden: c.hypernet_hidden,
            hyperedges: c.hyperedges,
        }
    }
}

impl MixerSection {
    /// `m = 0` on hgcn-mix behaves as the one-hot variant.
    pub fn effective_kind(&self) -> MixerKind {
        if self.kind == MixerKind::HgcnMix && self.hyperedges == 0 {
            MixerKind::HgcnMixOh
        } else {
            self.kind
        }
    }

    pub fn network(&self) -> MixerConfig {
        MixerConfig {
            embed: self.embed,
            hypernet_hidden: self.hypernet_hidden,
            hyperedges: self.hyperedges,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub env: EnvConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub mixer: MixerSection,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Learned hyperedge counts to sweep; empty means just `mixer.hyperedges`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_m: Vec<usize>,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Config {
    pub fn new(env: EnvConfig, kind: MixerKind) -> Self {
        Self {
            env,
            gamma: DEFAULT_GAMMA,
            mixer: MixerSection {
                kind,
                ..MixerSection::default()
            },
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            sweep_m: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if self.mixer.embed == 0 {
            return bad("mixer.embed", "must be positive");
        }
        if self.mixer.hypernet_hidden == 0 {
            return bad("mixer.hypernet_hidden", "must be positive");
        }
        if self.agent.hidden == 0 || self.agent.rnn_hidden == 0 {
            return bad("agent", "hidden and rnn_hidden must be positive");
        }
        if !self.sweep_m.is_empty() && self.mixer.kind != MixerKind::HgcnMix {
            return bad("sweep_m", "only applies to mixer.kind = \"hgcn-mix\"");
        }
        if let EnvConfig::MatrixGame { payoff } = &self.env {
            if payoff.is_empty() || payoff.iter().any(|r| r.len() != payoff[0].len() || r.is_empty()) {
                return bad("env.payoff", "must be a non-empty rectangular matrix");
            }
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.env
            .build(self.gamma)
            .map_err(|e| CliError::Config(format!("env: {e}")))?;
        Ok(())
    }

    /// The run specification for one variant.
    pub fn run_spec(&self, variant: &Variant) -> RunSpec {
        let mut mixer = self.mixer;
        mixer.kind = variant.kind;
        if let Some(m) = variant.hyperedges {
            mixer.hyperedges = m;
        }
        RunSpec {
            env: self.env.clone(),
            gamma: self.gamma,
            mixer: mixer.effective_kind(),
            agent: self.agent,
            mixer_config: mixer.network(),
            train: self.train,
        }
    }

    /// The snapshot stored in a run directory: one seed, one variant.
    pub fn snapshot(&self, variant: &Variant, seed: u64) -> Config {
        let mut c = self.clone();
        c.mixer.kind = variant.kind;
        if let Some(m) = variant.hyperedges {
            c.mixer.hyperedges = m;
        }
        c.seeds = vec![seed];
        c.sweep_m.clear();
        c
    }

    /// Variants trained by `train`: the sweep if present, else the configured mixer.
    pub fn variants(&self) -> Vec<Variant> {
        if self.sweep_m.is_empty() {
            vec![Variant {
                kind: self.mixer.kind,
                hyperedges: None,
            }]
        } else {
            self.sweep_m
                .iter()
                .map(|&m| Variant {
                    kind: MixerKind::HgcnMix,
                    hyperedges: Some(m),
                })
                .collect()
        }
    }
}

/// A mixer kind with an optional `m` override, written `kind` or `kind:m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub kind: MixerKind,
    pub hyperedges: Option<usize>,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        let (kind, m) = match s.split_once(':') {
            Some((k, m)) => (k, Some(m)),
            None => (s, None),
        };
        let kind: MixerKind = kind.parse().map_err(|e: hypermix::Error| CliError::Config(format!("mixers: {e}")))?;
        let hyperedges = m
            .map(|m| {
                m.parse::<usize>()
                    .map_err(|_| CliError::Config(format!("mixers: bad hyperedge count in {s:?}")))
            })
            .transpose()?;
        if hyperedges.is_some() && kind != MixerKind::HgcnMix {
            return Err(CliError::Config(format!("mixers: {s:?} sets m on a mixer without learned hyperedges")));
        }
        Ok(Self { kind, hyperedges })
    }

    pub fn label(&self) -> String {
        match self.hyperedges {
            Some(m) => format!("{}:{m}", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// Directory name under the output root.
    pub fn dir_name(&self) -> String {
        match self.hyperedges {
            Some(m) => format!("{}_m{m}", self.kind),
            None => self.kind.to_string(),
        }
    }
}
