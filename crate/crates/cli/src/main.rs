use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wfdiff::analysis::synthetic::color_cast_blur_corpus;
use wfdiff::analysis::{analyze_corpus, read_manifest, swap, write_report, MetricReport, SwapStrategy};
use wfdiff::config::{load_config, RunConfig};
use wfdiff::fourier::{fft2, recombine, Spectrum};
use wfdiff::imageio::{load_tensor, save_tensor};
use wfdiff::pipeline::{train_stage1, train_stage2, Model};
use wfdiff::tensor::wfdt;
use wfdiff::wavelet::{crop, dwt2, idwt2, pad_even, SubbandSet, BAND_NAMES};
use wfdiff::{Rng, Tensor};

/// Wavelet/Fourier underwater image enhancement toolkit.
///
/// Images are binary PPM (P6) or PGM (P5); paths ending in `.wfdt` are
/// read and written as raw tensors instead.
#[derive(Parser)]
#[command(name = "wfdiff", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Haar decomposition into BASE.ll, BASE.lh, BASE.hl, BASE.hh (WFDT).
    Dwt {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reassemble an image from the four subband files of BASE.
    Idwt {
        base: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Crop the result to HxW (undoes odd-extent padding).
        #[arg(long, value_parser = parse_size)]
        crop: Option<(usize, usize)>,
    },
    /// Amplitude and phase spectra as BASE.amp and BASE.phase (WFDT).
    Fft {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inverse transform of one spectrum's amplitude with another's phase.
    Recombine {
        /// Base path whose `.amp` file supplies the amplitude.
        #[arg(long)]
        amp: PathBuf,
        /// Base path whose `.phase` file supplies the phase.
        #[arg(long)]
        phase: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exchange amplitudes between two images.
    Swap {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "s3")]
        strategy: SwapStrategy,
        /// Amplitude of B with the phase of A.
        #[arg(long)]
        out_a: PathBuf,
        /// Amplitude of A with the phase of B.
        #[arg(long)]
        out_b: PathBuf,
    },
    /// Score amplitude swaps over a manifest of degraded/reference pairs.
    Analyze {
        #[arg(long)]
        strategy: SwapStrategy,
        #[arg(long)]
        pairs: PathBuf,
        /// CSV report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM of an image against a reference.
    Metrics { image: PathBuf, reference: PathBuf },
    /// Write a synthetic color-cast/blur corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the enhancement network on one image pair.
    TrainStage1 {
        #[command(flatten)]
        data: PairArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Maximum optimizer steps (overrides the config).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the residual diffusion denoisers with stage 1 frozen.
    TrainStage2 {
        #[command(flatten)]
        data: PairArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-1 enhancement followed by residual diffusion sampling.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampling steps; the noise schedule is rescaled to match.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage-1 enhancement, with `--adjust` also the diffusion stage.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        adjust: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PairArgs {
    #[arg(long, requires = "clean", conflicts_with = "synthetic")]
    degraded: Option<PathBuf>,
    #[arg(long, requires = "degraded")]
    clean: Option<PathBuf>,
    /// Train on a generated SIZE×SIZE pair instead of files.
    #[arg(long)]
    synthetic: Option<usize>,
}

impl PairArgs {
    fn load(&self, seed: u64) -> Result<(Tensor, Tensor)> {
        match (&self.degraded, &self.clean, self.synthetic) {
            (Some(d), Some(c), None) => Ok((read(d)?, read(c)?)),
            (None, None, Some(size)) => {
                let mut pairs = color_cast_blur_corpus(1, size, seed)?;
                Ok(pairs.pop().expect("one pair"))
            }
            _ => bail!("give either --degraded and --clean, or --synthetic SIZE"),
        }
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    let parse = |v: &str| v.parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(h)?, parse(w)?))
}

fn read(path: &Path) -> Result<Tensor> {
    load_tensor(path).with_context(|| format!("reading {}", path.display()))
}

fn write(t: &Tensor, path: &Path) -> Result<()> {
    save_tensor(t, path).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn save_raw(t: &Tensor, path: &Path) -> Result<()> {
    wfdt::save(path, t).with_context(|| format!("writing {}", path.display()))
}

fn load_raw(path: &Path) -> Result<Tensor> {
    wfdt::load(path).with_context(|| format!("reading {}", path.display()))
}

fn load_spectrum(base: &Path) -> Result<Spectrum> {
    Ok(Spectrum {
        amplitude: load_raw(&with_suffix(base, "amp"))?,
        phase: load_raw(&with_suffix(base, "phase"))?,
    })
}

fn print_metrics(m: &MetricReport) {
    println!("psnr_db {}", m.psnr_db);
    println!("ssim {}", m.ssim);
}

fn model_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Dwt { input, out } => {
            let img = read(&input)?;
            let (padded, (h, w)) = pad_even(&img)?;
            if padded.shape() != img.shape() {
                eprintln!("note: padded {h}x{w} to even extents; use `idwt --crop {h}x{w}` to undo");
            }
            let bands = dwt2(&padded)?;
            for (name, band) in BAND_NAMES.iter().zip(bands.bands()) {
                save_raw(band, &with_suffix(&out, name))?;
            }
        }
        Cmd::Idwt { base, out, crop: size } => {
            let [ll, lh, hl, hh] = BAND_NAMES.map(|n| load_raw(&with_suffix(&base, n)));
            let mut img = idwt2(&SubbandSet::new(ll?, lh?, hl?, hh?)?)?;
            if let Some((h, w)) = size {
                img = crop(&img, h, w)?;
            }
            write(&img, &out)?;
        }
        Cmd::Fft { input, out } => {
            let spec = fft2(&read(&input)?)?;
            save_raw(&spec.amplitude, &with_suffix(&out, "amp"))?;
            save_raw(&spec.phase, &with_suffix(&out, "phase"))?;
        }
        Cmd::Recombine { amp, phase, out } => {
            let img = recombine(&load_spectrum(&amp)?, &load_spectrum(&phase)?)?;
            write(&img, &out)?;
        }
        Cmd::Swap {
            a,
            b,
            strategy,
            out_a,
            out_b,
        } => {
            let (x, y) = swap(&read(&a)?, &read(&b)?, strategy)?;
            write(&x, &out_a)?;
            write(&y, &out_b)?;
        }
        Cmd::Analyze { strategy, pairs, out } => {
            let manifest = read_manifest(&pairs)?;
            let report = analyze_corpus(&manifest, strategy)?;
            for row in &report.rows {
                if let Err(e) = &row.metrics {
                    eprintln!("pair {}: {e}", row.pair_id);
                }
            }
            match out {
                Some(path) => {
                    let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                    write_report(&report, BufWriter::new(f))?;
                }
                None => write_report(&report, io::stdout().lock())?,
            }
        }
        Cmd::Metrics { image, reference } => {
            print_metrics(&MetricReport::compute(&read(&image)?, &read(&reference)?)?);
        }
        Cmd::Synth { out, count, size, seed } => {
            if size < 2 {
                bail!("--size must be at least 2");
            }
            let pairs = color_cast_blur_corpus(count, size, seed)?;
            let manifest = wfdiff::analysis::synthetic::write_corpus(&out, &pairs)?;
            println!("{}", manifest.display());
        }
        Cmd::TrainStage1 {
            data,
            config,
            steps,
            seed,
            out,
        } => {
            let mut cfg = model_config(config.as_deref())?;
            if let Some(s) = steps {
                cfg.train.stage1_steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (degraded, clean) = data.load(cfg.train.seed)?;
            let mut model = Model::new(&cfg)?;
            eprintln!("parameters: {}", model.wfi.params.num_scalars());
            let report = train_stage1(&mut model, &degraded, &clean, |step, loss| {
                if step % 50 == 0 {
                    eprintln!("step {step} loss {loss:.6}");
                }
            })?;
            println!(
                "stage1 updates {} initial {} final {} ratio {}",
                report.updates,
                report.initial,
                report.final_value,
                report.final_value / report.initial
            );
            model.save(&out)?;
        }
        Cmd::TrainStage2 {
            data,
            checkpoint,
            steps,
            out,
        } => {
            let mut model = Model::load(&checkpoint)?;
            if let Some(s) = steps {
                model.config.train.stage2_steps = s;
            }
            let (degraded, clean) = data.load(model.config.train.seed)?;
            let report = train_stage2(&mut model, &degraded, &clean, |name, step, loss| {
                if step % 100 == 0 {
                    eprintln!("{name} step {step} loss {loss:.6}");
                }
            })?;
            for (name, r) in [("ldfb", &report.ldfb), ("hdfb", &report.hdfb)] {
                println!(
                    "{name} updates {} initial_ma {} final_ma {} ratio {}",
                    r.updates,
                    r.initial,
                    r.final_value,
                    r.final_value / r.initial
                );
            }
            model.save(&out)?;
        }
        Cmd::Sample {
            checkpoint,
            input,
            seed,
            steps,
            out,
        } => {
            let model = Model::load(&checkpoint)?;
            let sched = match steps {
                Some(t) => model.config.diffusion.with_steps(t)?.build()?,
                None => model.schedule()?,
            };
            let img = model.enhance(&read(&input)?, true, &sched, &Rng::new(seed))?;
            write(&img, &out)?;
        }
        Cmd::Enhance {
            checkpoint,
            input,
            adjust,
            seed,
            out,
        } => {
            let model = Model::load(&checkpoint)?;
            let img = model.enhance(&read(&input)?, adjust, &model.schedule()?, &Rng::new(seed))?;
            write(&img, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
