//! Run settings for `generate`: a `key=value` config file, flag overrides on
//! top, and the sidecar manifest that records the resolved values.
//!
//! A manifest is itself a valid config file, so feeding it back through
//! `--config` regenerates the same trace file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use scawb_core::leakage_sim::default_config;
use scawb_core::leakage_sim::lfsr::BANK_SIZE;
use scawb_core::{AesKey, Channel, LeakageConfig, BLOCK_BYTES};

/// Environment variable supplying the seed when neither flag nor config sets it.
pub const SEED_ENV: &str = "SCAWB_SEED";
pub const DEFAULT_TRACES: usize = 1000;

const KNOWN_KEYS: [&str; 15] = [
    "subcommand",
    "out",
    "channel",
    "key",
    "traces",
    "seed",
    "sigma",
    "reps",
    "lfsr",
    "samples",
    "gain",
    "offset",
    "lfsr_coupling",
    "lfsr_seeds",
    "store_key",
];

/// Parses 32 hex digits; whitespace between digits is ignored.
pub fn parse_key(text: &str) -> Result<AesKey> {
    let digits: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let digits = digits.strip_prefix("0x").unwrap_or(&digits);
    if digits.len() != 2 * BLOCK_BYTES {
        bail!("key must be {} hex digits, got {}", 2 * BLOCK_BYTES, digits.len());
    }
    let mut key = [0u8; BLOCK_BYTES];
    for (i, byte) in key.iter_mut().enumerate() {
        let pair = digits
            .get(2 * i..2 * i + 2)
            .ok_or_else(|| anyhow!("key must be ASCII hex"))?;
        *byte = u8::from_str_radix(pair, 16).map_err(|_| anyhow!("invalid hex digits {pair:?} in key"))?;
    }
    Ok(key)
}

pub fn format_key(key: &[u8]) -> String {
    key.iter().map(|b| format!("{b:02X}")).collect()
}

/// Ordered `key=value` pairs; later inserts win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Reads a config file: one `key=value` per line, `#` comments, blank lines ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut settings = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", n + 1))?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                bail!("line {}: unknown setting {k:?}", n + 1);
            }
            settings.set(k, v.trim());
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("invalid {key} {v:?}: {e}")))
            .transpose()
    }

    /// Resolves everything `generate` needs.
    ///
    /// Seed precedence: explicit setting, then `SCAWB_SEED`, then 0.
    pub fn resolve(&self) -> Result<GenerateSettings> {
        if let Some(sub) = self.get("subcommand") {
            if sub != "generate" {
                bail!("config is for subcommand {sub:?}, not generate");
            }
        }
        let channel: Channel = self
            .parsed("channel")?
            .ok_or_else(|| anyhow!("no channel given (--channel or channel= in the config)"))?;
        let key = parse_key(
            self.get("key")
                .ok_or_else(|| anyhow!("no key given (--key or key= in the config)"))?,
        )?;
        let traces = self.parsed("traces")?.unwrap_or(DEFAULT_TRACES);
        if traces < 2 {
            bail!("at least 2 traces are needed for a correlation, got {traces}");
        }
        let seed = match self.parsed::<u64>("seed")? {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|e| anyhow!("invalid {SEED_ENV} {v:?}: {e}"))?,
                Err(_) => 0,
            },
        };

        let mut config = default_config(channel);
        if let Some(s) = self.parsed::<usize>("samples")? {
            config = config.with_sample_count(s);
        }
        config.noise_sigma = self.parsed("sigma")?.unwrap_or(config.noise_sigma);
        config.repetitions = self.parsed("reps")?.unwrap_or(config.repetitions);
        config.gain = self.parsed("gain")?.unwrap_or(config.gain);
        config.offset = self.parsed("offset")?.unwrap_or(config.offset);
        config.lfsr_coupling = self.parsed("lfsr_coupling")?.unwrap_or(config.lfsr_coupling);
        config.lfsr_enabled = match self.get("lfsr") {
            None | Some("off") => false,
            Some("on") => true,
            Some(other) => bail!("lfsr must be on or off, got {other:?}"),
        };
        if let Some(list) = self.get("lfsr_seeds") {
            config.lfsr_seeds = parse_seeds(list)?;
        }
        config.rng_seed = seed;
        config.validate()?;

        let store_key = self.parsed("store_key")?.unwrap_or(true);
        Ok(GenerateSettings {
            key,
            traces,
            seed,
            store_key,
            config,
            out: self.get("out").map(PathBuf::from),
        })
    }
}

fn parse_seeds(list: &str) -> Result<[u8; BANK_SIZE]> {
    let seeds = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u8>()
                .map_err(|e| anyhow!("invalid LFSR seed {s:?}: {e}"))
        })
        .collect::<Result<Vec<_>>>()?;
    seeds
        .try_into()
        .map_err(|v: Vec<u8>| anyhow!("need {BANK_SIZE} LFSR seeds, got {}", v.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSettings {
    pub key: AesKey,
    pub traces: usize,
    pub seed: u64,
    pub store_key: bool,
    pub config: LeakageConfig,
    pub out: Option<PathBuf>,
}

impl GenerateSettings {
    pub fn channel(&self) -> Channel {
        self.config.channel
    }

    /// Manifest text; parsing it back yields the same settings.
    pub fn manifest(&self, out: &Path) -> String {
        let c = &self.config;
        let seeds: Vec<String> = c.lfsr_seeds.iter().map(u8::to_string).collect();
        let mut text = String::from("# scawb generate manifest\n");
        let lines: [(&str, String); 15] = [
            ("subcommand", "generate".into()),
            ("channel", c.channel.to_string()),
            ("key", format_key(&self.key)),
            ("traces", self.traces.to_string()),
            ("seed", self.seed.to_string()),
            ("samples", c.sample_count.to_string()),
            ("sigma", c.noise_sigma.to_string()),
            ("reps", c.repetitions.to_string()),
            ("gain", c.gain.to_string()),
            ("offset", c.offset.to_string()),
            ("lfsr", if c.lfsr_enabled { "on" } else { "off" }.into()),
            ("lfsr_coupling", c.lfsr_coupling.to_string()),
            ("lfsr_seeds", seeds.join(",")),
            ("store_key", self.store_key.to_string()),
            ("out", out.display().to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(text, "{k}={v}");
        }
        text
    }
}

/// Sidecar manifest path for a trace file: `<file>.manifest`.
pub fn manifest_path(trace_file: &Path) -> PathBuf {
    let mut name = trace_file.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Seed recorded in a trace file's sidecar manifest, if there is one.
pub fn recorded_seed(trace_file: &Path) -> Option<u64> {
    let text = std::fs::read_to_string(manifest_path(trace_file)).ok()?;
    Settings::parse(&text).ok()?.get("seed")?.parse().ok()
}
