use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsntk_cli::config::PdKernel;
use qsntk_cli::error::{CliError, CliResult, EXIT_OTHER};
use qsntk_cli::experiment::{self, Figure};
use qsntk_cli::{Experiment, ExperimentConfig};

const CORETYPE_VAR: &str = "OPENBLAS_CORETYPE";
const THREADS_VAR: &str = "QSNTK_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "qsntk",
    version,
    about = "Neural-network quantum state training and tangent-kernel predictions"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML experiment configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: tfim, hubbard, tfim-small or hubbard-small.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides both the split and the initialization seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prepare the target wavefunction.
    MakeTarget,
    /// Train the finite-width ensemble.
    Train {
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Infinite-width loss curves.
    NtkPredict {
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Entanglement entropy scan.
    Entropy,
    /// Positive-definiteness check of a kernel Gram matrix.
    PdCheck {
        /// gauss_net, gaussian, relu_ntk or rff_arccos.
        #[arg(long, value_parser = parse_kernel)]
        kernel: Option<PdKernel>,
        /// Number of random points in the Gram matrix.
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Run everything behind one figure: 1, 2, s1 or s2.
    ReproduceFigure {
        #[arg(value_parser = parse_figure)]
        figure: Figure,
    },
}

fn parse_kernel(s: &str) -> Result<PdKernel, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        format!("unknown kernel {s:?}; expected gauss_net, gaussian, relu_ntk or rff_arccos")
    })
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    Figure::parse(s).ok_or_else(|| format!("unknown figure {s:?}; expected 1, 2, s1 or s2"))
}

fn resolve_config(g: &GlobalArgs, default_preset: &str) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&g.config, &g.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::preset(default_preset)?,
    };
    if let Some(seed) = g.seed {
        cfg.seeds.split = seed;
        cfg.seeds.init = seed;
    }
    if let Some(out) = &g.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let default_preset = match &cli.command {
        Command::ReproduceFigure { figure } => figure.default_preset(),
        _ => "tfim",
    };
    let mut cfg = resolve_config(&cli.global, default_preset)?;
    if let Command::PdCheck { kernel, n_points } = &cli.command {
        if let Some(k) = kernel {
            cfg.pd_check.kernel = *k;
        }
        if let Some(n) = n_points {
            cfg.pd_check.n_points = *n;
        }
    }
    let exp = Experiment::new(cfg)?;
    println!("config_sha256 {}", exp.provenance().config_sha256);
    println!("output {}", exp.out_dir().display());
    match cli.command {
        Command::MakeTarget => {
            let (_, info) = experiment::make_target(&exp)?;
            println!("basis size {}", info.basis_size);
            println!("norm {:.15}", info.norm);
            println!("wrote {}", info.path.display());
        }
        Command::Train { target } => {
            let s = experiment::train(&exp, target.as_deref())?;
            println!("members {} of {}", s.members.len(), s.ensemble);
            println!(
                "final test loss {:.6e} ± {:.2e}",
                s.final_test.mean, s.final_test.std
            );
            println!(
                "final total loss {:.6e} ± {:.2e}",
                s.final_total.mean, s.final_total.std
            );
        }
        Command::NtkPredict { target } => {
            let p = experiment::ntk_predict(&exp, target.as_deref())?;
            println!("min Gram eigenvalue {:.6e}", p.min_eigenvalue);
            println!(
                "train loss at step {}: {:.6e}",
                p.n_steps,
                p.final_losses.train_l_mu + p.final_losses.train_l_gamma
            );
            println!(
                "test loss at step {}: {:.6e}",
                p.n_steps, p.final_losses.test_l_total
            );
            println!("test loss limit {:.6e}", p.limit.test_l_total);
        }
        Command::Entropy => {
            let s = experiment::entropy(&exp)?;
            for f in &s.fits {
                println!("volume-law slope {:.4} (Page {:.4})", f.slope, f.page_slope);
            }
            println!("{} reports", s.rows.len());
        }
        Command::PdCheck { .. } => {
            let r = experiment::pd_check(&exp)?;
            println!(
                "{} on {} points: min eigenvalue {:.6e}, pd {}",
                r.kernel, r.n_points, r.min_eig, r.verdict
            );
        }
        Command::ReproduceFigure { figure } => {
            experiment::reproduce_figure(&exp, figure)?;
            println!("figure data written");
        }
    }
    Ok(())
}

/// Restart with the OpenBLAS kernel pinned unless it already is; the
/// autodetected SkylakeX `dgemm` gives wrong products on some hosts.
#[cfg(unix)]
fn ensure_blas_env() -> Result<(), String> {
    use std::os::unix::process::CommandExt;
    if std::env::var_os(CORETYPE_VAR).is_some() {
        return Ok(());
    }
    let exe = std::env::current_exe().map_err(|e| format!("cannot locate own executable: {e}"))?;
    let mut cmd = std::process::Command::new(exe);
    cmd.args(std::env::args_os().skip(1))
        .env(CORETYPE_VAR, "Haswell");
    if let (Some(n), None) = (
        std::env::var_os(THREADS_VAR),
        std::env::var_os("OPENBLAS_NUM_THREADS"),
    ) {
        cmd.env("OPENBLAS_NUM_THREADS", n);
    }
    Err(format!("re-exec failed: {}", cmd.exec()))
}

#[cfg(not(unix))]
fn ensure_blas_env() -> Result<(), String> {
    Ok(())
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| format!("{THREADS_VAR}={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let setup = ensure_blas_env()
        .and_then(|_| init_threads())
        .and_then(|_| {
            qsntk::linalg::blas_self_check().map_err(|e| format!("BLAS self-check failed: {e}"))
        });
    if let Err(msg) = setup {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_OTHER as u8);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Engine(qsntk::error::Error::Conditioning { min_eigenvalue }) = &e {
                eprintln!("min eigenvalue {min_eigenvalue:e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
