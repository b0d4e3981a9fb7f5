use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use speechsplit::core::converter::AspectSet;
use speechsplit::core::synthgen::sample_corpus;
use speechsplit::persistence::{read_csv, write_csv, write_json, FeatureFile, ModelKind, PairRecord, RunConfig};
use speechsplit::workflows::{self as wf, Corpus};
use speechsplit::{AppError, AppResult};

#[derive(Parser)]
#[command(name = "speechsplit", version, about = "Unsupervised decomposition of speech into rhythm, content, pitch and timbre")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract mel spectrograms and quantised pitch from a directory of WAV files.
    Features {
        audio_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// CSV with `file,speaker` columns; paths are relative to the audio directory.
        #[arg(long)]
        speaker_map: PathBuf,
    },
    /// Generate a synthetic corpus with known factors.
    Synth {
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        /// Utterances per speaker.
        #[arg(long, default_value_t = 32)]
        utterances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the main model (resumes from `<run-dir>/latest.ssck` when present).
    Train(TrainArgs),
    /// Train the pitch-contour model used for pitch conversion.
    TrainPitchMini(TrainArgs),
    /// Convert a source utterance toward a target on the chosen aspects.
    Convert {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mini: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        /// Comma-separated subset of rhythm,pitch,timbre, or `all7`.
        #[arg(long)]
        aspects: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-out probes and bottleneck report.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path; a `.txt` rendering is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Extra probes; `rr-recon` trains a content-only autoencoder first.
        #[arg(long, value_delimiter = ',')]
        include: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pitch metrics and factor-recovery scores for every pair.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mini: Option<PathBuf>,
        /// CSV with `source,target` columns.
        #[arg(long)]
        pairs: PathBuf,
        /// Corpus directory (defaults to the directory holding the pairs file).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a feature-cache file as a PNG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a configuration preset (desk, full, wide-rhythm, tiny).
    InitConfig {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_aspects(s: &str) -> AppResult<Vec<AspectSet>> {
    if s == "all7" {
        return Ok(AspectSet::nonempty_subsets().to_vec());
    }
    let a: AspectSet = s.parse().map_err(|e| AppError::Usage(format!("--aspects: {e}")))?;
    if a.is_empty() {
        return Err(AppError::Usage("--aspects: choose at least one aspect".into()));
    }
    Ok(vec![a])
}

fn train(kind: ModelKind, a: &TrainArgs) -> AppResult<()> {
    let mut cfg = RunConfig::read(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let corpus = Corpus::load(&a.data)?;
    let log_every = cfg.train.log_every.max(1);
    let (_, s) = wf::train(kind, &cfg, &corpus, &a.data, &a.out, |step, loss| {
        if step % log_every == 0 {
            eprintln!("step {step} loss {loss:.6}");
        }
    })?;
    println!("trained {:?} to step {}: loss {:.6} -> {:.6} in {:.0}s", s.kind, s.steps, s.initial_loss, s.final_loss, s.seconds);
    Ok(())
}

fn run(cli: Cli) -> AppResult<()> {
    wf::configure_threads()?;
    match cli.command {
        Command::Features { audio_dir, out, speaker_map } => {
            let m = wf::extract_features(&audio_dir, &out, &speaker_map)?;
            println!("{} utterances from {} speakers", m.utterances.len(), m.speakers.len());
        }
        Command::Synth { speakers, utterances, seed, out } => {
            let c = sample_corpus(speakers, utterances, seed)?;
            wf::write_synth_corpus(&c, &out)?;
            println!("{} utterances, {} test pairs", c.entries.len(), c.pairs.len());
        }
        Command::Train(a) => train(ModelKind::Main, &a)?,
        Command::TrainPitchMini(a) => train(ModelKind::PitchMini, &a)?,
        Command::Convert { model, mini, data, source, target, aspects, out } => {
            let sets = parse_aspects(&aspects)?;
            let model = wf::load_main(&model)?;
            let mini = mini.as_deref().map(wf::load_mini).transpose()?;
            let corpus = Corpus::load(&data)?;
            for p in wf::convert_pair(&model, mini.as_ref(), &corpus, &source, &target, &sets, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Probe { model, data, out, include, config } => {
            let cfg = match config {
                Some(p) => RunConfig::read(&p)?,
                None => RunConfig::default(),
            };
            let rr = match include.iter().map(String::as_str).find(|s| *s != "rr-recon") {
                Some(other) => return Err(AppError::Usage(format!("--include: unknown probe '{other}'"))),
                None => !include.is_empty(),
            };
            let trained = wf::load_main(&model)?;
            let corpus = Corpus::load(&data)?;
            let ae = if rr {
                let mut c = cfg.clone();
                c.model.n_speakers = corpus.n_speakers();
                let dir = out.with_extension("content_ae");
                wf::train(ModelKind::ContentAutoencoder, &c, &corpus, &data, &dir, |_, _| {})?;
                let (m, p, _) = wf::load_content_ae(&dir.join("final.ssck"))?;
                Some((m, p))
            } else {
                None
            };
            let report = wf::probe(&trained, &corpus, &cfg, ae.as_ref().map(|(m, p)| (m, p)))?;
            write_json(&out, &report)?;
            let mut text = report.bottleneck.to_text();
            if let Some(r) = &report.rr_recon {
                text.push_str(&format!("rr_recon max_offset {} aligned_fraction {:.3}\n", r.max_offset, r.aligned_fraction));
            }
            speechsplit::persistence::atomic_write(&out.with_extension("txt"), text.as_bytes())?;
            print!("{text}");
        }
        Command::Eval { model, mini, pairs, data, out } => {
            let records: Vec<PairRecord> = read_csv(&pairs)?;
            let data = data.unwrap_or_else(|| pairs.parent().map(Path::to_path_buf).unwrap_or_default());
            let model = wf::load_main(&model)?;
            let mini = mini.as_deref().map(wf::load_mini).transpose()?;
            let corpus = Corpus::load(&data)?;
            let rows = wf::evaluate(&model, mini.as_ref(), &corpus, &records)?;
            write_csv(&out, &rows)?;
            println!("{} rows", rows.len());
        }
        Command::Plot { input, out } => {
            let f = FeatureFile::read(&input)?;
            let pitch = (0..f.pitch.len()).any(|t| f.pitch.is_voiced(t)).then_some(&f.pitch);
            speechsplit::plot::save(&speechsplit::plot::render(&f.mel, pitch), &out)?;
        }
        Command::InitConfig { preset, speakers, out } => {
            let mut cfg = RunConfig::preset(&preset)?;
            if let Some(n) = speakers {
                cfg.model.n_speakers = n;
            }
            cfg.model.validate()?;
            cfg.write(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("{}", AppError::Usage("missing subcommand (see --help)".into()).one_line());
            return ExitCode::from(2);
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", AppError::Usage(first).one_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
