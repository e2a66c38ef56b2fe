//! Command-line front end.
//!
//! ```text
//! mutual-span generate                       corpus.jsonl train.jsonl test.jsonl
//! mutual-span train   [--train P] [--val P]  report.json losses.csv checkpoint.json
//! mutual-span eval    [--checkpoint P] [--corpus P]   metrics.json metrics.csv
//! mutual-span ablate  [--train P] [--val P] [--seeds 1,2,3]   ablation.csv ablation_alpha_beta.csv
//! mutual-span trace   [--report P]           alpha_beta.csv
//! ```
//!
//! Every command echoes its effective config as `<command>.config.toml` next
//! to its outputs, so the whole pipeline can share one directory, and refuses to replace existing files unless `--force` is given. Any config
//! field can be overridden with `--<field> <value>`, or `--<section>.<field>`
//! where the bare name is ambiguous. A bare name that appears in several
//! sections (`seed`, `d_in`, `vocab_size`) sets all of them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_manifest, load_checkpoint, save_checkpoint};
use crate::data::{load_corpus, save_corpus};
use crate::engine::{ablate, alpha_beta_trace, evaluate, mean_trace, train, write_trace_csv, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::synth::{generate_corpus, split_corpus, GenConfig};
use crate::timeline::MetricsReport;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "MUTUAL_SPAN_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 5.0 / 6.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub gen: GenConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

/// Fields that serialize to nothing when unset, so they are invisible in the
/// default table but still valid override targets.
const OPTIONAL_FIELDS: &[(&str, &str)] = &[("train", "max_len")];

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key = value` overrides. Values are parsed as TOML literals,
    /// falling back to plain strings.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut root = toml::Table::try_from(self).expect("config serializes");
        for (key, raw) in overrides {
            let value = parse_literal(raw);
            let targets = resolve_key(&root, key)?;
            for (section, field) in targets {
                root.get_mut(&section)
                    .and_then(toml::Value::as_table_mut)
                    .expect("sections are tables")
                    .insert(field, value.clone());
            }
        }
        let cfg: CliConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn resolve_key(root: &toml::Table, key: &str) -> Result<Vec<(String, String)>> {
    let has = |section: &str, field: &str| {
        root.get(section)
            .and_then(toml::Value::as_table)
            .is_some_and(|t| t.contains_key(field))
            || OPTIONAL_FIELDS.contains(&(section, field))
    };
    let unknown = || Error::UnknownKey(key.to_string());
    if let Some((section, field)) = key.split_once('.') {
        return if has(section, field) {
            Ok(vec![(section.to_string(), field.to_string())])
        } else {
            Err(unknown())
        };
    }
    let hits: Vec<(String, String)> = root
        .keys()
        .filter(|section| has(section, key))
        .map(|section| (section.clone(), key.to_string()))
        .collect();
    if hits.is_empty() {
        Err(unknown())
    } else {
        Ok(hits)
    }
}

#[derive(Debug, Parser)]
#[command(name = "mutual-span", version, about = "Visual answer localization with cross-modal span transfer")]
struct Args {
    /// TOML config; defaults to $MUTUAL_SPAN_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed (generation, split, training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Train without mutual transfer.
    #[arg(long, global = true)]
    no_mkt: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its train/test split.
    Generate,
    /// Train and save the best checkpoint.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Compare training with and without transfer over several seeds.
    Ablate {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Export the per-epoch alpha/beta means of a training report.
    Trace {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Flags owned by the parser; any other `--name` is a config override.
const PARSER_FLAGS: &[&str] = &[
    "config", "seed", "no-mkt", "force", "out", "train", "val", "checkpoint", "corpus", "seeds",
    "report", "help", "version",
];

/// Config overrides as `(key, raw value)` pairs.
type Overrides = Vec<(String, String)>;

/// Splits `--key value` / `--key=value` config overrides from parser arguments.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut parser_args = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(text) = arg.to_str().and_then(|s| s.strip_prefix("--")) else {
            parser_args.push(arg);
            continue;
        };
        let (name, inline) = match text.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (text.to_string(), None),
        };
        if name.is_empty() || PARSER_FLAGS.contains(&name.as_str()) {
            parser_args.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?,
        };
        overrides.push((name.replace('-', "_"), value));
    }
    Ok((parser_args, overrides))
}

fn load_config(args: &Args, overrides: &[(String, String)]) -> Result<CliConfig> {
    let path = args
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let base = match path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            CliConfig::from_toml(&text)?
        }
        None => CliConfig::default(),
    };
    let mut all = overrides.to_vec();
    if let Some(seed) = args.seed {
        all.push(("seed".into(), seed.to_string()));
    }
    if args.no_mkt {
        all.push(("train.mkt_enabled".into(), "false".into()));
    }
    let mut cfg = base.with_overrides(&all)?;
    if let Some(out) = &args.out {
        cfg.paths.out = out.clone();
    }
    cfg.gen.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Output directory with the overwrite policy applied up front.
struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    fn prepare(dir: &Path, files: &[&str], force: bool) -> Result<Self> {
        if !force {
            for f in files {
                let p = dir.join(f);
                if p.exists() {
                    return Err(Error::WouldOverwrite(p));
                }
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    fn write_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }
}

fn metrics_csv(m: &MetricsReport, buf: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(MetricsReport::CSV_HEADER)?;
    w.write_record(m.csv_row())?;
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn run(args: Args, cfg: CliConfig) -> Result<()> {
    let out = cfg.paths.out.clone();
    let config_toml = cfg.to_toml();
    let or_out = |p: Option<PathBuf>, default: &str| p.unwrap_or_else(|| out.join(default));
    match args.command {
        Command::Generate => {
            let o = OutDir::prepare(&out, &["corpus.jsonl", "train.jsonl", "test.jsonl", "generate.config.toml"], args.force)?;
            let corpus = generate_corpus(&cfg.gen)?;
            let (tr, te) = split_corpus(&corpus, cfg.split.train_frac, cfg.split.seed)?;
            save_corpus(o.path("corpus.jsonl"), &corpus)?;
            save_corpus(o.path("train.jsonl"), &tr)?;
            save_corpus(o.path("test.jsonl"), &te)?;
            o.write("generate.config.toml", config_toml)?;
            eprintln!("wrote {} samples ({} train, {} test) to {}", corpus.len(), tr.len(), te.len(), out.display());
        }
        Command::Train { train: tp, val: vp } => {
            let files = ["report.json", "losses.csv", "checkpoint.json", "train.config.toml"];
            let o = OutDir::prepare(&out, &files, args.force)?;
            let tr = load_corpus(or_out(tp, "train.jsonl"))?;
            let va = load_corpus(or_out(vp, "test.jsonl"))?;
            let mut run = train(&tr, &va, &cfg.train)?;
            save_checkpoint(o.path("checkpoint.json"), &run.best)?;
            run.report.checkpoint = Some("checkpoint.json".into());
            let report = &run.report;
            o.write(
                "report.json",
                serde_json::to_string_pretty(report).expect("report serializes"),
            )?;
            o.write_with("losses.csv", |b| report.write_losses_csv(b))?;
            o.write("train.config.toml", config_toml)?;
            eprintln!(
                "best validation mIoU {:.2} at epoch {} of {}",
                report.best_miou,
                report.best_epoch,
                report.epochs.len()
            );
        }
        Command::Eval { checkpoint, corpus } => {
            let o = OutDir::prepare(&out, &["metrics.json", "metrics.csv", "eval.config.toml"], args.force)?;
            let params = load_checkpoint(or_out(checkpoint, "checkpoint.json"))?;
            check_manifest(&params, &cfg.train.model_config())?;
            let samples = load_corpus(or_out(corpus, "test.jsonl"))?;
            let m = evaluate(&params, &samples, cfg.train.max_len)?;
            let json = serde_json::to_string_pretty(&m.to_flat_json()).expect("metrics serialize");
            o.write("metrics.json", json + "\n")?;
            o.write_with("metrics.csv", |b| metrics_csv(&m, b))?;
            o.write("eval.config.toml", config_toml)?;
            for (k, v) in m.flat() {
                println!("{k}\t{v:.2}");
            }
        }
        Command::Ablate { train: tp, val: vp, seeds } => {
            let o = OutDir::prepare(&out, &["ablation.csv", "ablation_alpha_beta.csv", "ablate.config.toml"], args.force)?;
            let tr = load_corpus(or_out(tp, "train.jsonl"))?;
            let va = load_corpus(or_out(vp, "test.jsonl"))?;
            let ab = ablate(&tr, &va, &cfg.train, &seeds)?;
            o.write_with("ablation.csv", |b| ab.write_csv(b))?;
            if cfg.train.mkt_enabled {
                let traces = ab
                    .reports
                    .iter()
                    .map(|(_, with, _)| alpha_beta_trace(with))
                    .collect::<Result<Vec<_>>>()?;
                o.write_with("ablation_alpha_beta.csv", |b| write_trace_csv(&mean_trace(&traces), b))?;
            }
            o.write("ablate.config.toml", config_toml)?;
            ab.write_csv(std::io::stdout())?;
        }
        Command::Trace { report } => {
            let path = or_out(report, "report.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let report: TrainReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            let trace = alpha_beta_trace(&report)?;
            let o = OutDir::prepare(&out, &["alpha_beta.csv", "trace.config.toml"], args.force)?;
            o.write_with("alpha_beta.csv", |b| write_trace_csv(&trace, b))?;
            o.write("trace.config.toml", config_toml)?;
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit code. Errors are printed to stderr.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let result = split_overrides(argv).and_then(|(parser_args, overrides)| {
        let args = match Args::try_parse_from(parser_args) {
            Ok(a) => a,
            Err(e) => {
                let code = if e.use_stderr() { 1 } else { 0 };
                let _ = e.print();
                return Ok(Some(code));
            }
        };
        let cfg = load_config(&args, &overrides)?;
        run(args, cfg).map(|()| None)
    });
    match result {
        Ok(code) => code.unwrap_or(0),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = CliConfig::default();
        assert_eq!(CliConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = CliConfig::from_toml("[gen]\nnum_sampels = 3\n").unwrap_err();
        assert!(err.to_string().contains("num_sampels"), "{err}");
        let err = CliConfig::default().with_overrides(&ov(&[("epochz", "3")])).unwrap_err();
        assert!(matches!(&err, Error::UnknownKey(k) if k == "epochz"));
        assert!(CliConfig::default().with_overrides(&ov(&[("gen.epochs", "3")])).is_err());
    }

    #[test]
    fn overrides_resolve_bare_and_qualified_names() {
        let cfg = CliConfig::default()
            .with_overrides(&ov(&[
                ("epochs", "3"),
                ("seed", "9"),
                ("gen.d_in", "8"),
                ("max_len", "12"),
                ("subtitle_gap_prob", "0.5"),
            ]))
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!((cfg.gen.seed, cfg.split.seed, cfg.train.seed), (9, 9, 9));
        assert_eq!((cfg.gen.d_in, cfg.train.d_in), (8, 32));
        assert_eq!(cfg.train.max_len, Some(12));
        assert_eq!(cfg.gen.subtitle_gap_prob, 0.5);
    }

    #[test]
    fn override_values_are_type_checked() {
        let err = CliConfig::default().with_overrides(&ov(&[("epochs", "many")])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn override_args_are_split_from_parser_args() {
        let args: Vec<OsString> = ["bin", "train", "--epochs", "2", "--force", "--lr=3", "--out", "x"]
            .iter()
            .map(OsString::from)
            .collect();
        let (p, o) = split_overrides(args).unwrap();
        assert_eq!(p, ["bin", "train", "--force", "--out", "x"].map(OsString::from));
        assert_eq!(o, ov(&[("epochs", "2"), ("lr", "3")]));
    }
}
