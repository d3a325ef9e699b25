use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use voiceseal::bits::{bits_to_bytes, bytes_to_bits};
use voiceseal::sim::report::summarize_log;
use voiceseal::sim::{run_scenario_traced, ScenarioConfig};
use voiceseal::watermark::io::{join_windows, read_pcm, split_windows, write_pcm};
use voiceseal::watermark::{
    calibrate_delta, embed_bits, extract_bits, Layer, WatermarkLayer, DEFAULT_DELTA, LAYER_CAPACITY,
};

#[derive(Parser)]
#[command(name = "voiceseal", version, about = "Watermark-token call authentication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerArg {
    /// Endpoint layer.
    #[value(name = "1")]
    One,
    /// Gateway layer.
    #[value(name = "2")]
    Two,
}

impl From<LayerArg> for Layer {
    fn from(l: LayerArg) -> Layer {
        match l {
            LayerArg::One => Layer::Endpoint,
            LayerArg::Two => Layer::Gateway,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and print a summary.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed (default: the file's, then $VOICESEAL_SEED, then 1).
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the JSON report instead of the summary.
        #[arg(long)]
        json: bool,
        /// Write the gateway event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the sender's packet trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Find the smallest QIM step that survives the codec path.
    CalibrateDelta {
        audio: PathBuf,
        /// Headerless little-endian samples instead of WAV.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Embed a payload into every window of an audio file.
    Embed {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum)]
        layer: LayerArg,
        /// Payload as hex.
        #[arg(long)]
        payload: String,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: u16,
        #[arg(long)]
        raw: bool,
    },
    /// Print the payload bits of each window as hex.
    Extract {
        input: PathBuf,
        #[arg(long, value_enum)]
        layer: LayerArg,
        /// Bits per window (multiple of 8).
        #[arg(long, default_value_t = 128)]
        bits: usize,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: u16,
        #[arg(long)]
        raw: bool,
    },
    /// Summarize a JSON report or an event log.
    Report { file: PathBuf },
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(scenario: &Path, seed: Option<u64>, report: Option<PathBuf>, json: bool, log: Option<PathBuf>, trace: Option<PathBuf>) -> Result<bool> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    let (r, packets) = run_scenario_traced(&cfg)?;
    if json {
        println!("{}", r.to_json());
    } else {
        print!("{}", r.summary());
    }
    if let Some(p) = report {
        write(&p, &r.to_json())?;
    }
    if let Some(p) = log {
        write(&p, &r.event_log())?;
    }
    if let Some(p) = trace {
        write(&p, &packets.iter().map(|t| format!("{t}\n")).collect::<String>())?;
    }
    Ok(match &cfg.expect {
        Some(e) if !e.matches(&r.outcome) => {
            eprintln!("expected {e}, got {}", r.outcome);
            false
        }
        Some(e) => {
            if !json {
                println!("expectation {e} met");
            }
            true
        }
        None => true,
    })
}

fn calibrate(audio: &Path, raw: bool, seed: u64) -> Result<()> {
    let windows = split_windows(&read_pcm(audio, raw)?, 1);
    if windows.is_empty() {
        bail!("{} holds no samples", audio.display());
    }
    let trials = calibrate_delta(&windows, seed);
    println!("delta  bit errors");
    for t in &trials {
        println!("{:>5}  {}/{}", t.delta, t.bit_errors, t.bits);
    }
    match trials.iter().find(|t| t.bit_errors == 0) {
        Some(t) => println!("calibrated delta: {}", t.delta),
        None => bail!("no step up to {} survives", trials.last().map(|t| t.delta).unwrap_or(0)),
    }
    Ok(())
}

fn embed(input: &Path, output: &Path, layer: Layer, payload: &str, delta: u16, raw: bool) -> Result<()> {
    let bytes = hex::decode(payload.trim()).context("payload is not hex")?;
    let bits = bytes_to_bits(&bytes);
    if bits.len() > LAYER_CAPACITY {
        bail!("payload is {} bits; a layer holds {LAYER_CAPACITY}", bits.len());
    }
    let layer = WatermarkLayer::new(layer, delta)?;
    let windows = split_windows(&read_pcm(input, raw)?, 1);
    let marked = windows.iter().map(|w| embed_bits(w, &layer, &bits)).collect::<Result<Vec<_>, _>>()?;
    write_pcm(output, &join_windows(&marked), raw)?;
    println!("marked {} window(s) with {} bits", marked.len(), bits.len());
    Ok(())
}

fn extract(input: &Path, layer: Layer, bits: usize, delta: u16, raw: bool) -> Result<()> {
    if bits == 0 || !bits.is_multiple_of(8) {
        bail!("--bits must be a positive multiple of 8");
    }
    let layer = WatermarkLayer::new(layer, delta)?;
    for w in split_windows(&read_pcm(input, raw)?, 1) {
        let got = extract_bits(&w, &layer, bits)?;
        println!("{:>4} {}", w.index, hex::encode(bits_to_bytes(&got)));
    }
    Ok(())
}

fn report(file: &Path) -> Result<()> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).context("report is not valid JSON")?;
        let outcome = &v["outcome"];
        let kind = outcome["kind"].as_str().unwrap_or("?");
        match outcome["window"].as_u64() {
            Some(w) => println!("outcome: {kind}@{w}"),
            None => println!("outcome: {kind}"),
        }
        let windows = v["windows"].as_array().map(Vec::len).unwrap_or(0);
        println!("scenario {} seed {}: {windows} window(s)", v["name"], v["seed"]);
        println!("lot: {}", v["lot_trace"]);
        println!("rollbacks: {}", v["rollbacks"]);
        println!("signalling buffers equal: {}", v["signalling"]["equal"]);
    } else {
        print!("{}", summarize_log(&text));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, report, json, log, trace } => run(&scenario, seed, report, json, log, trace),
        Command::CalibrateDelta { audio, raw, seed } => calibrate(&audio, raw, seed).map(|_| true),
        Command::Embed { input, output, layer, payload, delta, raw } => {
            embed(&input, &output, layer.into(), &payload, delta, raw).map(|_| true)
        }
        Command::Extract { input, layer, bits, delta, raw } => extract(&input, layer.into(), bits, delta, raw).map(|_| true),
        Command::Report { file } => report(&file).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
