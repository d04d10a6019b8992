use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use dsst::channel::{ChannelKind, ChannelState, CsiTrace};
use dsst::checkpoint::Checkpoint;
use dsst::config::TrainConfig;
use dsst::corpus::{frame_clip, load_corpus, read_audio, write_audio, Corpus, Split, SplitFractions};
use dsst::eval::{evaluate, EvalOptions, EVAL_CSV_HEADER};
use dsst::model::InferOptions;
use dsst::sweep::{rd_sweep, SweepOptions};
use dsst::train::Trainer;

#[derive(Parser)]
#[command(name = "dsst", version, about = "Speech semantic transmission over simulated wireless channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(clap::Args)]
struct ChannelArgs {
    /// Channel SNR in dB ("inf" for a noiseless link).
    #[arg(long, default_value_t = 6.0)]
    snr: f64,
    /// awgn, block_fading or trace.
    #[arg(long, default_value = "awgn")]
    channel: ChannelKind,
    /// Frames per fading block.
    #[arg(long, default_value_t = 1)]
    coherence: usize,
    /// CSI trace (binary CSI1 or CSV) for --channel trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// SNR token value, needed when --snr is inf.
    #[arg(long)]
    snr_token: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config on a directory of WAV clips.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the configured step count.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate a checkpoint on a corpus split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[command(flatten)]
        link: ChannelArgs,
        /// Must match the checkpoint; defaults to it.
        #[arg(long, value_enum)]
        side_info: Option<OnOff>,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        eta_y: Option<f64>,
        /// Write reference and reconstructed WAVs here.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write per-batch records as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Operating λ for a lambda-conditioned checkpoint.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train one model per lambda (or one lambda-conditioned model) and write the RD curve.
    RdSweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, default_value_t = 6.0)]
        snr: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        batches: usize,
    },
    /// Send one WAV file through the model and a channel.
    Transmit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        link: ChannelArgs,
        /// Operating λ for a lambda-conditioned checkpoint.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Print a checkpoint's config and parameter blocks.
    InspectCkpt {
        ckpt: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>) -> dsst::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn corpus(data: &std::path::Path, seed: u64) -> dsst::Result<Corpus> {
    load_corpus(data, SplitFractions::default(), seed)
}

fn trace(link: &ChannelArgs) -> dsst::Result<Option<CsiTrace>> {
    link.trace.as_deref().map(CsiTrace::load).transpose()
}

fn run(cli: Cli) -> dsst::Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            resume,
            steps,
        } => {
            let mut trainer = match resume {
                Some(p) => Trainer::from_checkpoint(Checkpoint::load(&p)?)?,
                None => Trainer::new(load_config(config.as_ref())?)?,
            };
            if let Some(s) = steps {
                trainer.cfg.steps = s;
            }
            info!("config:\n{}", trainer.cfg.to_toml());
            let corpus = corpus(&data, trainer.cfg.seed)?;
            std::fs::create_dir_all(&out).map_err(|e| dsst::Error::Io {
                path: out.clone(),
                source: e,
            })?;
            corpus.write_manifest(&out.join("manifest.csv"))?;
            let until = trainer.cfg.steps;
            trainer.run(&corpus.train, until, Some(&out))?;
            println!("trained to step {} -> {}", trainer.step, out.join("final.ckpt").display());
        }
        Command::Evaluate {
            ckpt,
            data,
            split,
            link,
            side_info,
            batches,
            batch,
            eta_y,
            export,
            csv,
            lambda,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let model = ck.model()?;
            let corpus = corpus(&data, ck.config.seed)?;
            let opts = EvalOptions {
                snr_db: link.snr,
                channel: link.channel,
                coherence: link.coherence,
                trace: trace(&link)?,
                side_info: side_info.map_or(model.side_info(), |s| s == OnOff::On),
                batches,
                batch,
                seed: link.seed,
                eta_y,
                snr_token: link.snr_token,
                lambda,
                export_dir: export,
            };
            let summary = evaluate(&model, &ck.params, &ck.config, corpus.split(split.into()), &opts)?;
            let mut lines = vec![EVAL_CSV_HEADER.to_string()];
            lines.extend(summary.records.iter().chain([&summary.aggregate]).map(|r| r.csv_line()));
            match csv {
                Some(p) => std::fs::write(&p, lines.join("\n") + "\n")
                    .map_err(|e| dsst::Error::Io { path: p, source: e })?,
                None => println!("{}", lines.join("\n")),
            }
            let a = &summary.aggregate;
            println!(
                "K_total {} ({} + {}) = {:.1} Hz, mse {:.4e}, mfcc nmse {:.4}",
                a.k_total, a.k_y, a.k_z, a.bandwidth_hz, a.dist_time, a.dist_mfcc
            );
        }
        Command::RdSweep {
            config,
            data,
            lambdas,
            snr,
            out,
            batches,
        } => {
            let template = load_config(config.as_ref())?;
            let corpus = corpus(&data, template.seed)?;
            let opts = SweepOptions {
                snr_db: snr,
                early_steps: 50,
                eval: EvalOptions {
                    batches,
                    batch: template.batch,
                    ..EvalOptions::new(snr, template.model.codec.side_info)
                },
            };
            let table = rd_sweep(&template, &lambdas, &corpus.train, &corpus.val, &opts, Some(&out))?;
            print!("{}", table.to_csv());
            match table.violations {
                None => println!("single converged point, no frontier check"),
                Some(v) if v.is_empty() => println!("frontier check: monotone"),
                Some(v) => println!("frontier check: violations at rows {v:?}"),
            }
        }
        Command::Transmit {
            ckpt,
            input,
            output,
            link,
            lambda,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let model = ck.model()?;
            let mut clip = read_audio(&input)?;
            clip.peak_normalize();
            let batch = frame_clip(&clip, model.cfg.frame_length)?;
            let frames = batch.batch_frames();
            let channel = match link.channel {
                ChannelKind::Awgn => ChannelState::awgn(link.snr, frames),
                ChannelKind::BlockFading => {
                    ChannelState::block_fading(link.snr, frames, link.coherence, link.seed)?
                }
                ChannelKind::Trace => {
                    let t = trace(&link)?.ok_or_else(|| {
                        dsst::Error::Config("--channel trace needs --trace".into())
                    })?;
                    ChannelState::from_trace(link.snr, &t, frames, 0)
                }
            };
            let inf = model.infer(
                &ck.params,
                &batch,
                &InferOptions {
                    channel,
                    snr_token: link.snr_token,
                    lambda: lambda.or(Some(ck.config.lambda)),
                    eta_y: ck.config.eta_y,
                    seed: link.seed,
                    alloc: None,
                },
            )?;
            let mut samples: Vec<f64> = inf.x_hat.iter().copied().collect();
            samples.truncate(clip.len());
            write_audio(&samples, &output)?;
            let b = inf.bandwidth;
            println!(
                "{} frames, K_total {} ({} + {}), {:.1} Hz, {} erased frames -> {}",
                frames,
                b.k_total,
                b.k_y,
                b.k_z,
                dsst::eval::bandwidth_hz(b.k_total, frames, model.cfg.frame_length),
                inf.equalize.erased_frames,
                output.display()
            );
        }
        Command::InspectCkpt { ckpt } => {
            let ck = Checkpoint::load(&ckpt)?;
            println!("step {}", ck.step);
            match &ck.optimizer {
                Some(o) => println!("optimizer state at step {}", o.step),
                None => println!("no optimizer state"),
            }
            let mut total = 0;
            for (name, shape) in ck.summary() {
                let n: usize = shape.iter().product();
                total += n;
                println!("{name:40} {shape:?}");
            }
            println!("{total} parameters\n\n{}", ck.config.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
