use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use dfdg_core::autodiff::Tensor;
use dfdg_core::data::{
    generate_shifted_waveforms, generate_spurious_gaussian, leave_one_domain_out, load_dataset,
    save_dataset, SpuriousGaussianParams, WaveformParams,
};
use dfdg_core::eval::{self, argmax, GridPoint};
use dfdg_core::saliency::{smoothgrad, vanilla_saliency, SmoothGradConfig};
use dfdg_core::trainer::train_with;
use dfdg_core::{Error, Exec, Model, Result, StrategyMode, TrainConfig};

#[derive(Parser)]
#[command(name = "dfdg", version, about = "Domain-free domain generalization experiments")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SpuriousGaussian,
    Waveforms,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-domain dataset.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        num_domains: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        n_per_domain_class: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        signal_dims: Option<usize>,
        #[arg(long)]
        nuisance_dims: Option<usize>,
        #[arg(long)]
        nuisance_strength: Option<f64>,
        #[arg(long)]
        signal_separation: Option<f64>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        background_amplitude: Option<f64>,
        #[arg(long)]
        motif_width: Option<usize>,
    },
    /// Train one model; with --target, on every domain except that one.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<String>,
    },
    /// Leave-one-domain-out comparison of strategy modes.
    Lodo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "ce_only,align_only,mask_only,alternate")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-domain-out runs over (alpha, m, q_max) overrides.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON list of {"alpha", "m_percent", "q_max"} objects.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vanilla and SmoothGrad maps of the first K samples as one long CSV.
    SaliencyExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        sg_n: usize,
        #[arg(long, default_value_t = 0.15)]
        sg_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explain the predicted class instead of the label.
        #[arg(long)]
        predicted: bool,
    },
    /// Penultimate-layer activations with domain and label columns.
    ExportFeatures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_report(report: &eval::RunReport, out: &Path) -> Result<()> {
    report.save(out)?;
    print!("{}", report.to_text());
    info!("report written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::auto() };
    match cli.command {
        Command::Generate {
            kind,
            out,
            seed,
            num_domains,
            classes,
            n_per_domain_class,
            noise_sd,
            signal_dims,
            nuisance_dims,
            nuisance_strength,
            signal_separation,
            length,
            background_amplitude,
            motif_width,
        } => {
            let ds = match kind {
                Kind::SpuriousGaussian => {
                    let d = SpuriousGaussianParams::default();
                    generate_spurious_gaussian(&SpuriousGaussianParams {
                        num_domains: num_domains.unwrap_or(d.num_domains),
                        classes: classes.unwrap_or(d.classes),
                        signal_dims: signal_dims.unwrap_or(d.signal_dims),
                        nuisance_dims: nuisance_dims.unwrap_or(d.nuisance_dims),
                        nuisance_strength: nuisance_strength.unwrap_or(d.nuisance_strength),
                        noise_sd: noise_sd.unwrap_or(d.noise_sd),
                        signal_separation: signal_separation.unwrap_or(d.signal_separation),
                        n_per_domain_class: n_per_domain_class.unwrap_or(d.n_per_domain_class),
                        seed,
                    })?
                }
                Kind::Waveforms => {
                    let d = WaveformParams::default();
                    generate_shifted_waveforms(&WaveformParams {
                        num_domains: num_domains.unwrap_or(d.num_domains),
                        classes: classes.unwrap_or(d.classes),
                        length: length.unwrap_or(d.length),
                        n_per_domain_class: n_per_domain_class.unwrap_or(d.n_per_domain_class),
                        seed,
                        background_amplitude: background_amplitude.unwrap_or(d.background_amplitude),
                        noise_sd: noise_sd.unwrap_or(d.noise_sd),
                        motif_width: motif_width.unwrap_or(d.motif_width),
                    })?
                }
            };
            save_dataset(&ds, &out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Train {
            data,
            config,
            out,
            target,
        } => {
            let ds = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let view = match &target {
                Some(t) => leave_one_domain_out(&ds, t)?.train,
                None => ds.train_view(),
            };
            let (model, history) = train_with(&view, &cfg, exec)?;
            create_dir(&out)?;
            model.save(&out.join("checkpoint.json"))?;
            history.save_csv(&out.join("history.csv"))?;
            cfg.save(&out.join("config.json"))?;
            let last = history.records.last().expect("at least one iteration");
            println!(
                "trained {} iterations, final ce {:.4}; wrote {}",
                history.len(),
                last.ce,
                out.display()
            );
            if let Some(t) = target {
                let split = leave_one_domain_out(&ds, &t)?;
                println!("target {t} accuracy {:.4}", eval::evaluate(&model, &split.test)?);
            }
        }
        Command::Lodo {
            data,
            config,
            methods,
            seeds,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let modes = methods
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<StrategyMode>>>()?;
            let report = eval::lodo_experiment_with(&ds, &cfg, &modes, &seeds, exec)?;
            write_report(&report, &out)?;
        }
        Command::Ablation {
            data,
            config,
            grid,
            seeds,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let points: Vec<GridPoint> = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: grid.clone(),
                source,
            })?;
            let report = eval::ablation_grid_with(&ds, &cfg, &points, &seeds, exec)?;
            write_report(&report, &out)?;
        }
        Command::SaliencyExport {
            checkpoint,
            data,
            samples,
            out,
            sg_n,
            sg_sigma,
            seed,
            predicted,
        } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            let sg = SmoothGradConfig {
                n: sg_n,
                sigma: sg_sigma,
                seed,
            };
            sg.validate()?;
            let mut lines = String::from("sample,domain,label,class,index,value,vanilla,smoothgrad\n");
            for i in 0..samples.min(ds.len()) {
                let row = ds.row(i);
                let x = Tensor::new(row.to_vec(), ds.input_shape())?;
                let class = if predicted {
                    argmax(&model.predict(row, Exec::Sequential)?)
                } else {
                    ds.labels()[i]
                };
                let cfg = SmoothGradConfig {
                    seed: seed.wrapping_add(i as u64),
                    ..sg
                };
                let vanilla = vanilla_saliency(&model, &x, class)?;
                let smooth = smoothgrad(&model, &x, class, &cfg)?;
                for (j, v) in row.iter().enumerate() {
                    lines.push_str(&format!(
                        "{i},{},{},{class},{j},{v:.16e},{:.16e},{:.16e}\n",
                        ds.domain_of(i),
                        ds.labels()[i],
                        vanilla.scores[j],
                        smooth.scores[j]
                    ));
                }
            }
            std::fs::write(&out, lines).map_err(|e| Error::io(&out, e))?;
            println!("wrote saliency for {} samples to {}", samples.min(ds.len()), out.display());
        }
        Command::ExportFeatures { checkpoint, data, out } => {
            let model = Model::load(&checkpoint)?;
            let ds = load_dataset(&data)?;
            eval::export_features(&model, &ds, &out)?;
            println!("wrote {} feature rows to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
