use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use nand_core::eval::{aggregate_report, render_text, EvalReport, Summary};
use nand_core::EncoderClient;

use crate::cache::{self, CacheLock};
use crate::config::{Config, DetectorChoice, EncoderKind};
use crate::fixture::write_fixture;
use crate::runtime::{self, Runtime, RuntimeError};

/// Text-guided normality addition for image anomaly detectors.
#[derive(Debug, Parser)]
#[command(name = "nand", version)]
pub struct Cli {
    /// Config file; defaults to ./nand.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index the dataset and bring the embedding cache up to date.
    Ingest,
    /// Re-encode every image with the stub encoder under a new seed.
    EncodeStub {
        #[arg(long)]
        seed: u64,
    },
    /// Build the feature bank of one class from its train images.
    BuildBank {
        #[arg(long)]
        class: String,
        /// Coreset fraction; the configured value when omitted.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Add each anomaly group as a normality and report AUROC before/after.
    Eval {
        #[arg(long)]
        class: String,
        #[arg(long)]
        group: Option<String>,
        #[arg(long, value_enum)]
        detector: Option<DetectorChoice>,
        /// Structured report path; `<cache>/reports/...json` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one image with and without a normality and write the maps.
    Preview {
        #[arg(long)]
        class: String,
        /// Image path inside the class, e.g. `test/crack/000.png`.
        #[arg(long)]
        image: String,
        #[arg(long)]
        normality: String,
        #[arg(long, value_enum)]
        detector: Option<DetectorChoice>,
        /// Directory for before.png, sup.png, after.png and preview.json.
        #[arg(long, default_value = "preview")]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write the synthetic two-group demo dataset and a config for it.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFailure {
    pub group: String,
    pub error: String,
}

/// Contents of the structured eval file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub class: String,
    pub detector: DetectorChoice,
    pub reports: Vec<EvalReport>,
    pub summary: Option<Summary>,
    pub failures: Vec<GroupFailure>,
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    let default = Path::new("nand.toml");
    let path = path.or_else(|| default.is_file().then_some(default));
    Ok(Config::load(path)?)
}

fn ingest_with(config: &Config, force: bool, out: &mut dyn Write) -> anyhow::Result<()> {
    config.validate()?;
    let lock = CacheLock::acquire(&config.cache.dir)?;
    let index = runtime::index(config)?;
    let assets = runtime::load_assets(config)?;
    let plants = cache::load_plants(config)?;
    let descriptor = cache::encoder_descriptor(config, plants.as_ref());
    let stub = match config.encoder.kind {
        EncoderKind::Stub => Some(cache::stub_encoder(config, &index, &assets, plants.as_ref())?),
        EncoderKind::Files => None,
    };
    let (manifest, stats) = cache::ingest(
        config,
        &index,
        stub.as_ref().map(|s| s as &dyn EncoderClient),
        descriptor,
        force,
        &lock,
    )?;
    writeln!(
        out,
        "{} images: {} cached, {} encoded, {} rebuilt, {} adopted",
        manifest.images.len(),
        stats.hits,
        stats.encoded,
        stats.rebuilt,
        stats.adopted
    )?;
    Ok(())
}

pub fn cmd_ingest(config: &Config, out: &mut dyn Write) -> anyhow::Result<()> {
    ingest_with(config, false, out)
}

pub fn cmd_encode_stub(config: &Config, seed: u64, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut config = config.clone();
    config.encoder.kind = EncoderKind::Stub;
    config.encoder.seed = seed;
    ingest_with(&config, true, out)
}

pub fn cmd_build_bank(config: &Config, class: &str, fraction: Option<f64>, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut config = config.clone();
    if let Some(f) = fraction {
        config.detector.coreset_fraction = f;
    }
    config.validate()?;
    let lock = CacheLock::acquire(&config.cache.dir)?;
    let index = runtime::index(&config)?;
    let (bank, entry) = cache::build_class_bank(&config, &index, class, config.detector.coreset_fraction, &lock)?;
    writeln!(
        out,
        "{class}: kept {} of {} patches (fraction {}) in {}",
        bank.len(),
        entry.source_count,
        entry.fraction,
        entry.path
    )?;
    Ok(())
}

/// Runs every requested group; failures are collected, not fatal.
pub fn eval_class(rt: &Runtime, class: &str, group: Option<&str>, choice: DetectorChoice) -> Result<EvalOutput, RuntimeError> {
    let groups = rt.groups_of(class, group)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for g in groups {
        match rt.evaluate_group(class, &g, choice) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(GroupFailure {
                group: g,
                error: e.to_string(),
            }),
        }
    }
    let summary = if reports.is_empty() {
        None
    } else {
        Some(aggregate_report(&reports).map_err(|e| RuntimeError::Internal(e.to_string()))?)
    };
    Ok(EvalOutput {
        class: class.to_owned(),
        detector: choice,
        reports,
        summary,
        failures,
    })
}

pub fn default_report_path(config: &Config, class: &str, group: Option<&str>, choice: DetectorChoice) -> PathBuf {
    let name = match group {
        Some(g) => format!("{class}_{g}_{}.json", choice.as_str()),
        None => format!("{class}_{}.json", choice.as_str()),
    };
    config.cache.dir.join("reports").join(name)
}

/// Returns the exit code: 0 when at least one group was evaluated.
pub fn cmd_eval(
    config: &Config,
    class: &str,
    group: Option<&str>,
    detector: Option<DetectorChoice>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> anyhow::Result<i32> {
    let rt = Runtime::open(config.clone())?;
    let choice = detector.unwrap_or(config.detector.kind);
    let result = eval_class(&rt, class, group, choice)?;
    if let Some(s) = &result.summary {
        write!(out, "{}", render_text(&result.reports, s))?;
    }
    for f in &result.failures {
        writeln!(err, "error: {class}/{}: {}", f.group, f.error)?;
    }
    let path = out_path
        .map(Path::to_owned)
        .unwrap_or_else(|| default_report_path(config, class, group, choice));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    writeln!(err, "report written to {}", path.display())?;
    Ok(if result.reports.is_empty() { 2 } else { 0 })
}

pub fn cmd_preview(
    config: &Config,
    class: &str,
    image: &str,
    normality: &str,
    detector: Option<DetectorChoice>,
    dir: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let rt = Runtime::open(config.clone())?;
    let p = rt.preview(class, image, normality, detector.unwrap_or(config.detector.kind))?;
    fs::create_dir_all(dir)?;
    for (name, m) in [("before", &p.map_before), ("sup", &p.map_sup), ("after", &p.map_after)] {
        fs::write(dir.join(format!("{name}.png")), m.png_bytes()?)?;
    }
    fs::write(dir.join("preview.json"), serde_json::to_string_pretty(&p)? + "\n")?;
    writeln!(
        out,
        "{class}/{image} with \"{normality}\": score {:.6} -> {:.6}",
        p.score_before, p.score_after
    )?;
    writeln!(out, "maps written to {}", dir.display())?;
    Ok(())
}

pub fn cmd_serve(config: &Config, port: Option<u16>) -> anyhow::Result<()> {
    let rt = Arc::new(Runtime::open(config.clone())?);
    let port = port.unwrap_or(config.service.port);
    tokio::runtime::Runtime::new()?.block_on(crate::server::serve(rt, port))
}

/// Dispatches `cli`; returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    if let Command::MakeFixture { out: dir, seed } = &cli.command {
        let config = write_fixture(dir, *seed)?;
        writeln!(out, "fixture written; config at {}", config.display())?;
        return Ok(0);
    }
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest => cmd_ingest(&config, out)?,
        Command::EncodeStub { seed } => cmd_encode_stub(&config, seed, out)?,
        Command::BuildBank { class, fraction } => cmd_build_bank(&config, &class, fraction, out)?,
        Command::Eval {
            class,
            group,
            detector,
            out: path,
        } => return cmd_eval(&config, &class, group.as_deref(), detector, path.as_deref(), out, err),
        Command::Preview {
            class,
            image,
            normality,
            detector,
            out: dir,
        } => cmd_preview(&config, &class, &image, &normality, detector, &dir, out)?,
        Command::Serve { port } => cmd_serve(&config, port)?,
        Command::MakeFixture { .. } => unreachable!("handled above"),
    }
    Ok(0)
}
