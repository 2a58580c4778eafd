//! `psep` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use psep_core::datagen::{CorpusSpec, Split};
use psep_core::dsp::StftConfig;
use psep_core::model::Model;
use psep_core::trainer::{curriculum_train, parse_kv, train, EpochRecord, TrainConfig};

use crate::checks::{run_checks, Module};
use crate::corpus::{load_split, parse_corpus_spec, set_corpus_key, write_corpus};
use crate::eval::{evaluate_items, summarize, to_csv, to_jsonl, MaskSource, PhaseSource, Pipeline};
use crate::fileio::{read_checkpoint, read_wav, write_checkpoint, write_wav};
use crate::parallel::PoolMapper;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "psep", version, about = "Speaker separation with mask-conditioned phase estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-talker corpus.
    SynthData(SynthArgs),
    /// Train a separator.
    Train(TrainArgs),
    /// Score a checkpoint or an oracle on a corpus split.
    Eval(EvalArgs),
    /// Separate one mixture file.
    Separate(SeparateArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// `key = value` corpus spec; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_valid: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    sample_rate: Option<u32>,
    #[arg(long)]
    snr_lo: Option<f64>,
    #[arg(long)]
    snr_hi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Criterion {
    Mp,
    Md,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PhaseWeight {
    Plain,
    Mwl,
    Imwl,
    Joint,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train with the first combination weight, then retrain with `curriculum_alpha`.
    #[arg(long)]
    curriculum: bool,
    /// Per-epoch JSON lines; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum)]
    criterion: Option<Criterion>,
    #[arg(long, value_enum)]
    phase_weight: Option<PhaseWeight>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    Irm,
    Psm,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Estimated,
    Noisy,
    True,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Needed unless `--oracle` is given.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    #[arg(long, value_enum, default_value = "estimated")]
    phase: PhaseArg,
    /// Reconstruct phases with this many MISI iterations instead.
    #[arg(long)]
    misi: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Analysis window when no checkpoint is given.
    #[arg(long, default_value_t = 256)]
    fft_size: usize,
    #[arg(long, default_value_t = 64)]
    hop: usize,
}

#[derive(Args, Debug)]
struct SeparateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Writes `<prefix>.s1.wav`, `<prefix>.s2.wav`, ...
    #[arg(long)]
    out_prefix: String,
    /// Use the mixture phase instead of the phase network.
    #[arg(long)]
    mask_only: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModuleArg {
    Losses,
    Model,
    All,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    module: ModuleArg,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cmd {
        Command::SynthData(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Separate(a) => separate_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let mut spec = match &a.spec {
        Some(p) => parse_corpus_spec(&fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)?,
        None => CorpusSpec::default(),
    };
    let flags = [
        ("n_train", a.n_train.map(|v| v.to_string())),
        ("n_valid", a.n_valid.map(|v| v.to_string())),
        ("n_test", a.n_test.map(|v| v.to_string())),
        ("duration_s", a.duration.map(|v| v.to_string())),
        ("sample_rate_hz", a.sample_rate.map(|v| v.to_string())),
        ("snr_lo_db", a.snr_lo.map(|v| v.to_string())),
        ("snr_hi_db", a.snr_hi.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            set_corpus_key(&mut spec, k, &v)?;
        }
    }
    let mapper = PoolMapper::from_env()?;
    let entries = write_corpus(&a.out, &spec, &mapper)?;
    writeln!(out, "wrote {} mixtures to {}", entries.len(), a.out.display())?;
    Ok(EXIT_OK)
}

/// Reads a complete config file and applies flag overrides.
fn load_train_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("cannot read {}", a.config.display()))?;
    let mut entries: Vec<(String, String)> = parse_kv(&text)?.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut set = |k: &str, v: String| match entries.iter_mut().find(|(ek, _)| ek == k) {
        Some(e) => e.1 = v,
        None => entries.push((k.to_string(), v)),
    };
    for o in &a.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        set(k.trim(), v.trim().to_string());
    }
    if let Some(c) = a.criterion {
        set("pit_criterion", format!("{c:?}").to_lowercase());
    }
    if let Some(w) = a.phase_weight {
        set("weight_scheme", format!("{w:?}").to_lowercase());
    }
    let named = [
        ("lr", a.lr.map(|v| format!("{v:?}"))),
        ("max_epochs", a.max_epochs.map(|v| v.to_string())),
        ("patience", a.patience.map(|v| v.to_string())),
        ("alpha", a.alpha.map(|v| format!("{v:?}"))),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in named {
        if let Some(v) = v {
            set(k, v);
        }
    }
    Ok(TrainConfig::from_entries(entries.iter().map(|(k, v)| (k.as_str(), v.as_str())))?)
}

#[derive(serde::Serialize)]
struct LogLine {
    epoch: usize,
    phase: u8,
    dc: f64,
    mi: f64,
    pi: f64,
    total: f64,
    val_dc: f64,
    val_mi: f64,
    val_pi: f64,
    val_total: f64,
    alpha: f64,
    lr: f64,
    improved: bool,
}

fn log_line(r: &EpochRecord) -> String {
    let l = LogLine {
        epoch: r.epoch,
        phase: r.phase,
        dc: r.train.dc,
        mi: r.train.mi,
        pi: r.train.pi,
        total: r.train.total,
        val_dc: r.valid.dc,
        val_mi: r.valid.mi,
        val_pi: r.valid.pi,
        val_total: r.valid.total,
        alpha: r.alpha,
        lr: r.lr,
        improved: r.improved,
    };
    serde_json::to_string(&l).expect("log line serializes")
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = load_train_config(&a)?;
    let mapper = PoolMapper::from_env()?;
    let train_items = load_split(&a.data, Split::Train, &mapper)?;
    let valid_items = load_split(&a.data, Split::Valid, &mapper)?;
    if train_items.is_empty() || valid_items.is_empty() {
        bail!("{} needs train and valid items", a.data.display());
    }
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    let mut log = fs::File::create(&log_path).with_context(|| format!("cannot write {}", log_path.display()))?;
    let mut write_err = None;
    let mut on_epoch = |r: &EpochRecord| {
        if let Err(e) = writeln!(log, "{}", log_line(r)) {
            write_err.get_or_insert(e);
        }
        let _ = writeln!(
            out,
            "epoch {:>3} (phase {}, alpha {}): train {:.4}  valid {:.4}{}",
            r.epoch,
            r.phase,
            r.alpha,
            r.train.total,
            r.valid.total,
            if r.improved { "  *" } else { "" }
        );
    };
    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    let best = if a.curriculum {
        let o = curriculum_train(&cfg, &train_items, &valid_items, &mut model, &mapper, &mut on_epoch)?;
        write_checkpoint(&with_suffix(&a.out, ".phase1"), &o.phase1.best)?;
        writeln!(out, "curriculum: alpha {} -> {} at epoch {}", cfg.alpha, cfg.curriculum_alpha, o.transition_epoch)?;
        o.phase2.best
    } else {
        train(&cfg, &train_items, &valid_items, &mut model, &mapper, &mut on_epoch)?.best
    };
    if let Some(e) = write_err {
        return Err(e).context(format!("writing {}", log_path.display()));
    }
    write_checkpoint(&a.out, &best)?;
    writeln!(out, "best epoch {} (valid {:.4}); wrote {}", best.epoch, best.best_val, a.out.display())?;
    Ok(EXIT_OK)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let ckpt = a.ckpt.as_ref().map(|p| read_checkpoint(p)).transpose()?;
    let model = ckpt.as_ref().map(|c| c.model()).transpose()?;
    let stft_cfg = match &ckpt {
        Some(c) => c.config.stft(),
        None => StftConfig { fft_size: a.fft_size, hop: a.hop, ..StftConfig::default() },
    };
    let masks = match a.oracle {
        Some(OracleArg::Irm) => MaskSource::Irm,
        Some(OracleArg::Psm) => MaskSource::Psm,
        None if model.is_some() => MaskSource::Model,
        None => bail!("eval needs --ckpt or --oracle"),
    };
    let phase = match a.phase {
        PhaseArg::Estimated => PhaseSource::Estimated,
        PhaseArg::Noisy => PhaseSource::Noisy,
        PhaseArg::True => PhaseSource::True,
    };
    let pipeline = Pipeline { masks, phase, misi: a.misi };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::Test => Split::Test,
    };
    let mapper = PoolMapper::from_env()?;
    let items = load_split(&a.data, split, &mapper)?;
    if items.is_empty() {
        bail!("no {} items in {}", split.as_str(), a.data.display());
    }
    let rows = evaluate_items(model.as_ref(), &items, &stft_cfg, &pipeline, &mapper)?;
    fs::write(&a.out, to_jsonl(&rows)).with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(p) = &a.csv {
        fs::write(p, to_csv(&rows)).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let s = summarize(&rows);
    writeln!(out, "{:<20} {:>6} {:>12} {:>14} {:>16}", "method", "items", "SI-SDR (dB)", "SI-SDRi (dB)", "median SI-SDRi")?;
    writeln!(
        out,
        "{:<20} {:>6} {:>12.2} {:>14.2} {:>16.2}",
        pipeline.label(),
        s.count,
        s.mean_si_sdr,
        s.mean_improvement,
        s.median_improvement
    )?;
    Ok(EXIT_OK)
}

fn separate_cmd(a: SeparateArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let model = ckpt.model()?;
    let mix = read_wav(&a.input)?;
    let stft_cfg = ckpt.config.stft();
    let sources = if a.mask_only { model.separate_mask_only(&mix, &stft_cfg)? } else { model.separate(&mix, &stft_cfg)? };
    for (c, s) in sources.iter().enumerate() {
        let p = PathBuf::from(format!("{}.s{}.wav", a.out_prefix, c + 1));
        write_wav(&p, s)?;
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let module = match a.module {
        ModuleArg::Losses => Module::Losses,
        ModuleArg::Model => Module::Model,
        ModuleArg::All => Module::All,
    };
    let results = run_checks(module, a.inject_fault)?;
    writeln!(out, "{:<12} {:>14} {:>8}  result", "check", "max rel err", "checked")?;
    let mut ok = true;
    for r in &results {
        ok &= r.report.passed;
        writeln!(
            out,
            "{:<12} {:>14.3e} {:>8}  {}",
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            if r.report.passed { "ok" } else { "FAIL" }
        )?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}
