//! `oscar`: command-line front end for the shear-flow resolvent toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use oscar_core::airy::SIGMA0_DEFAULT;
use oscar_core::background::Background;
use oscar_core::config::{ExperimentConfig, NormKind, Route, TimeGrid};
use oscar_core::diagnostics::{self, RateSpec};
use oscar_core::evolution::EvolutionState;
use oscar_core::experiment::{self, BUMP_CENTER, BUMP_RADIUS};
use oscar_core::green::{fit_bounds_refined, green_modified, ModifiedOptions};
use oscar_core::grid::Grid;
use oscar_core::io::{self, ArtifactWriter};
use oscar_core::profile::{param_geometry, GeometryConfig, ProfileDescriptor, ShearProfile, SpectralPoint, WeightCheck};
use oscar_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "oscar", version, about = "Resolvent and semigroup diagnostics for periodic shear flows")]
struct Cli {
    /// Experiment configuration (TOML); supplies the profile and grid.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true, env = "OSCAR_THREADS")]
    threads: Option<usize>,
    /// Seed for bootstrap resampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ProfileArgs {
    /// Kolmogorov period when no configuration is given.
    #[arg(long, default_value_t = 8.0)]
    period: f64,
    /// Grid size when no configuration is given.
    #[arg(long, default_value_t = 512)]
    n: usize,
}

#[derive(Args, Debug, Clone)]
struct PointArgs {
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    nu: f64,
    #[arg(long, default_value_t = 1)]
    k: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RouteArg {
    Direct,
    Contour,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical points, curvatures and localization scales of the profile.
    Profile(ProfileArgs),
    /// Fundamental solution of the Airy operator and its fitted envelope.
    Airy {
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        point: PointArgs,
        /// Write the kernel matrix as a binary block.
        #[arg(long)]
        dump_kernel: Option<PathBuf>,
    },
    /// Modified Green's function at a critical point and its fitted bounds.
    Green {
        #[command(flatten)]
        profile: ProfileArgs,
        #[command(flatten)]
        point: PointArgs,
        /// Use the modified operator (the plain Helmholtz Green otherwise).
        #[arg(long)]
        modified: bool,
        /// Critical point index (1 or 2).
        #[arg(long, default_value_t = 1)]
        j: usize,
        /// Write the matrix block; fitted constants go to a `.json` sidecar.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Limiting-absorption estimates over the spectral windows.
    Lap {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 1e-3)]
        nu: f64,
        #[arg(long, default_value_t = 1.875)]
        gamma: f64,
        /// Scan points per window.
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, value_enum, default_value_t = NormArg::Weighted)]
        norm: NormArg,
    },
    /// Evolve one Fourier mode of the linearized flow.
    Evolve {
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long, value_enum, default_value_t = RouteArg::Direct)]
        route: RouteArg,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long, default_value_t = 1e-3)]
        nu: f64,
        /// Sample times as start:step:end.
        #[arg(long, default_value = "0:0.25:20")]
        t: TimeGrid,
        /// Initial vorticity as a `y,re,im` CSV (built-in odd bump otherwise).
        #[arg(long)]
        ic: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
    },
    /// Fit decay exponents and rates to a stored trajectory.
    Rates {
        #[command(flatten)]
        profile: ProfileArgs,
        /// Field blocks written by `evolve`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: u32,
        #[arg(long)]
        nu: f64,
        #[arg(long, default_value_t = 1.875)]
        gamma: f64,
        #[arg(long, num_args = 2, default_values_t = [5.0, 50.0])]
        window: Vec<f64>,
    },
    /// Run the full configured pipeline and write a manifest.
    Bench,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Weighted,
    H1k,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Weighted => NormKind::Weighted,
            NormArg::H1k => NormKind::H1k,
        }
    }
}

struct Setup {
    profile: ShearProfile,
    grid: Grid,
    geometry: GeometryConfig,
}

fn setup(cli: &Cli, args: &ProfileArgs) -> Result<Setup> {
    match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_path(path)?;
            let profile = ShearProfile::build(&cfg.profile)?;
            let grid = Grid::new(cfg.grid.n, profile.period())?;
            Ok(Setup { profile, grid, geometry: cfg.geometry })
        }
        None => {
            let profile = ShearProfile::build(&ProfileDescriptor::Kolmogorov { period: args.period })?;
            let grid = Grid::new(args.n, profile.period())?;
            Ok(Setup { profile, grid, geometry: GeometryConfig::default() })
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn critical_index(j: usize) -> Result<usize> {
    match j {
        1 | 2 => Ok(j - 1),
        _ => Err(Error::ConfigInvalid { field: "j".into(), line: None, message: "must be 1 or 2".into() }),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Profile(args) => {
            let s = setup(cli, args)?;
            emit(out, &io::to_json_string(&experiment::profile_report(&s.profile, &s.grid))?)
        }
        Command::Airy { profile, point, dump_kernel } => {
            let s = setup(cli, profile)?;
            let bg = Background::new(&s.profile, &s.grid);
            let p = SpectralPoint::new(point.lambda, point.alpha, point.nu, point.k);
            p.validate(SIGMA0_DEFAULT)?;
            let (report, kernel) = experiment::kernel_report(&s.profile, &bg, &p, &s.geometry)?;
            if let Some(path) = dump_kernel {
                fs::write(path, io::encode_matrix(&kernel.values))?;
            }
            emit(out, &io::to_json_string(&report)?)
        }
        Command::Green { profile, point, modified, j, dump } => {
            let s = setup(cli, profile)?;
            let j = critical_index(*j)?;
            let p = SpectralPoint::new(point.lambda, point.alpha, point.nu, point.k);
            if p.k == 0 {
                return Err(Error::ZeroMode);
            }
            let geom = param_geometry(&s.profile, &p, &s.geometry);
            let opts = ModifiedOptions { zero_potential: !modified, check: WeightCheck::Enforce };
            let green = green_modified(&s.profile, &s.grid, &p, j, geom.delta, opts)?;
            let fine_grid = Grid::new(2 * s.grid.n(), s.grid.period())?;
            let fine = green_modified(&s.profile, &fine_grid, &p, j, geom.delta, opts)?;
            let bounds = fit_bounds_refined(&s.profile, &green, Some(&fine))?;
            let report = json!({
                "delta": green.delta,
                "max_residual": green.max_residual,
                "symmetry_defect": green.symmetry_defect,
                "min_re_potential": green.min_re_potential,
                "bounds": bounds,
            });
            let text = String::from_utf8(io::to_json_bytes(&report)?).expect("utf-8");
            if let Some(path) = dump {
                fs::write(path, io::encode_matrix(&green.matrix))?;
                fs::write(path.with_extension("json"), &text)?;
            }
            emit(out, &text)
        }
        Command::Lap { profile, k, nu, gamma, points, norm } => {
            let s = setup(cli, profile)?;
            let bg = Background::new(&s.profile, &s.grid);
            let choice = experiment::norm_choice((*norm).into(), *gamma);
            let mut rows = Vec::new();
            for j in 0..2 {
                let lambdas = experiment::sigma_lambdas(&s.profile, j, *points);
                rows.extend(experiment::lap_scan(&s.profile, &bg, *k, *nu, j, &lambdas, &s.geometry, choice)?);
            }
            emit(out, &io::to_json_string(&rows)?)
        }
        Command::Evolve { profile, route, k, nu, t, ic, alpha } => {
            let s = setup(cli, profile)?;
            let bg = Background::new(&s.profile, &s.grid);
            let omega0 = match ic {
                Some(path) => {
                    let (ys, zs) = io::read_field_csv(path)?;
                    experiment::initial_from_samples(&s.grid, &ys, &zs)?
                }
                None => experiment::bump_initial(&s.grid, BUMP_CENTER, BUMP_RADIUS),
            };
            let routes = match route {
                RouteArg::Direct => vec![Route::Direct],
                RouteArg::Contour => vec![Route::Contour],
                RouteArg::Both => vec![Route::Direct, Route::Contour],
            };
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("evolve_out"));
            let mut w = ArtifactWriter::new(&dir)?;
            let times = t.times();
            let mut states = Vec::new();
            let mut reports = Vec::new();
            for r in routes {
                let (state, report) = experiment::evolve_route(&bg, *k as f64, *nu, &omega0, &times, r, *alpha)?;
                let name = format!("{r:?}").to_lowercase();
                let fields: Vec<&[_]> = state.omega.iter().map(|f| f.as_slice().expect("contiguous")).collect();
                w.write_blocks(&format!("omega_{name}.bin"), &state.times, &fields)?;
                reports.push(json!({ "route": name, "contour": report }));
                states.push(state);
            }
            let difference = (states.len() == 2).then(|| experiment::route_difference(&states[0], &states[1], 0.25));
            let manifest = json!({
                "grid": { "n": s.grid.n(), "period": s.grid.period() },
                "k": k,
                "nu": nu,
                "times": times,
                "routes": reports,
                "route_difference": difference,
                "checksums": w.entries(),
            });
            fs::write(dir.join(io::MANIFEST_NAME), io::to_json_bytes(&manifest)?)?;
            Ok(())
        }
        Command::Rates { profile, input, k, nu, gamma, window } => {
            let s = setup(cli, profile)?;
            let blocks = io::decode_blocks(&fs::read(input)?)?;
            let times = blocks.iter().map(|b| b.0).collect();
            let omega = blocks.into_iter().map(|b| b.1.into()).collect();
            let state = EvolutionState::from_omega(&s.grid, *k as f64, *nu, times, omega)?;
            let spec = RateSpec {
                window: (window[0], window[1]),
                gamma: *gamma,
                critical_points: s.profile.critical_points(),
                seed: cli.seed.unwrap_or(0),
            };
            emit(out, &io::to_json_string(&diagnostics::fit_rates(&state, &spec)?)?)
        }
        Command::Bench => {
            let path = cli.config.as_ref().ok_or_else(|| Error::ConfigInvalid {
                field: "config".into(),
                line: None,
                message: "bench needs --config".into(),
            })?;
            let mut cfg = ExperimentConfig::from_path(path)?;
            if let Some(seed) = cli.seed {
                cfg.rates.seed = seed;
            }
            let dir = out.map(Path::to_path_buf).or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("run"));
            let manifest = experiment::run_experiment(&cfg, &dir)?;
            println!("{} artifacts written to {}", manifest.artifacts.len(), dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("oscar: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oscar: {e}");
            ExitCode::FAILURE
        }
    }
}
