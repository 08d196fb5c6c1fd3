//! `lodfem` command line: experiment sweeps, field export and corrector decay.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lodfem::corrector::{decay_profile, CorrectorContext, DecayMode, NeumannLoads};
use lodfem::experiment::{run_experiment, run_lod, ExperimentConfig, FineProblem, LodOptions, CSV_HEADER, csv_row};
use lodfem::fem::FeFunction;
use lodfem::interp::{assemble_clement, prolongate};
use lodfem::vtk::export_field;
use lodfem::{Error, Result};

#[derive(Parser)]
#[command(name = "lodfem", version, about = "Localized orthogonal decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set H=2^-3,2^-4`. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write results.csv and manifest.json.
    Run(ConfigArgs),
    /// Export reference, LOD solution, fine part and error of the first sweep entry as VTK.
    Field(ConfigArgs),
    /// Energy of a global corrector outside growing coarse layer patches.
    Decay {
        #[command(flatten)]
        config: ConfigArgs,
        /// Coarse element; defaults to the element containing --point.
        #[arg(long)]
        elem: Option<usize>,
        /// Point `x,y` selecting the coarse element.
        #[arg(long, default_value = "0.4,0.22", value_name = "X,Y")]
        point: String,
        /// Local vertex 0..2 of the element corrector, or `neumann`.
        #[arg(long, default_value = "0")]
        corrector: String,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
    },
}

fn run(cfg: ExperimentConfig) -> Result<()> {
    let out = run_experiment(&cfg)?;
    println!("{CSV_HEADER}");
    for r in &out.rows {
        println!("{}", csv_row(r));
    }
    info!("wrote {} and {}", out.csv_path.display(), out.manifest_path.display());
    Ok(())
}

fn field(cfg: ExperimentConfig) -> Result<()> {
    let (cl, policy) = cfg.jobs()[0];
    let problem = lodfem::problems::by_name(&cfg.problem, &cfg.problem_overrides)?;
    let fine = FineProblem::new(problem, cfg.fine_level)?;
    let reference = fine.reference(cfg.reference)?;
    let opts = LodOptions { tolerances: cfg.tolerances, threads: cfg.threads, cache_dir: None };
    let run = run_lod(&fine, &reference.u, cl, policy, &opts)?;
    let cfmap = fine.cfmap(cl)?;
    let coarse_part = prolongate(&cfmap, &run.v_coarse)?;
    let fine_part: Vec<f64> = (0..fine.mesh.n_nodes())
        .map(|x| run.u_lod.values[x] - coarse_part.values[x] - run.g_h.values[x])
        .collect();
    let diff: Vec<f64> = reference.u.values.iter().zip(&run.u_lod.values).map(|(a, b)| a - b).collect();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let fields = [
        ("reference", &reference.u),
        ("lod", &run.u_lod),
        ("fine_part", &FeFunction::fine(fine_part)),
        ("error", &FeFunction::fine(diff)),
    ];
    for (name, f) in fields {
        let path = cfg.output_dir.join(format!("{name}.vtk"));
        export_field(&path, &fine.mesh, f, name)?;
        println!("{}", path.display());
    }
    println!("{CSV_HEADER}\n{}", csv_row(&run.info));
    Ok(())
}

fn coarse_elem_at(n: usize, x: f64, y: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::Config(format!("point ({x}, {y}) is outside the unit square")));
    }
    let h = 1.0 / n as f64;
    let i = ((x / h) as usize).min(n - 1);
    let j = ((y / h) as usize).min(n - 1);
    let (lx, ly) = (x - i as f64 * h, y - j as f64 * h);
    Ok(2 * (j * n + i) + usize::from(lx < ly))
}

fn decay(cfg: ExperimentConfig, elem: Option<usize>, point: &str, corrector: &str, k_max: usize) -> Result<()> {
    let cl = cfg.coarse_levels[0];
    let problem = lodfem::problems::by_name(&cfg.problem, &cfg.problem_overrides)?;
    let fine = FineProblem::new(problem, cfg.fine_level)?;
    let cfmap = fine.cfmap(cl)?;
    let clement = assemble_clement(&cfmap);
    let ctx = CorrectorContext {
        cfmap: &cfmap,
        coef: &fine.coef,
        stiffness: &fine.stiffness,
        clement: &clement,
        tol: cfg.tolerances,
    };
    let mode = match corrector {
        "neumann" => DecayMode::Neumann,
        v => DecayMode::Element {
            vertex: v.parse().map_err(|_| Error::Config(format!("--corrector: '{v}' is not 0, 1, 2 or neumann")))?,
        },
    };
    let t = match elem {
        Some(t) => t,
        None => {
            let (x, y) = point
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
                .ok_or_else(|| Error::Config(format!("--point: '{point}' is not X,Y")))?;
            coarse_elem_at(1 << cl, x, y)?
        }
    };
    let loads = NeumannLoads::new(&cfmap, &fine.edge_loads);
    let report = decay_profile(&ctx, t, mode, &loads, k_max)?;
    println!("coarse_elem,{}", report.coarse_elem);
    println!("k,tail");
    for (k, tail) in report.tails.iter().enumerate() {
        println!("{k},{tail:.6e}");
    }
    match report.theta {
        Some(th) => println!("theta,{th:.6}"),
        None => println!("theta,none"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => args.load().and_then(run),
        Command::Field(args) => args.load().and_then(field),
        Command::Decay { config, elem, point, corrector, k_max } => {
            config.load().and_then(|c| decay(c, elem, &point, &corrector, k_max))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
