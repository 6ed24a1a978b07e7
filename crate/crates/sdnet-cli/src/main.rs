//! Command line around the sdnet library: train models, materialize rule
//! files, run global robustness verification, extract points from flagged
//! regions, generate the synthetic 2D dataset, and inspect reports.
//!
//! Exit codes: 0 success, 1 usage, 2 data or artifact error, 3 training
//! divergence or exhausted sampling budget.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sdnet::data::{
    gen_synth2d, load_dataset, load_mnist_dir, save_dataset, Dataset, Synth2DConfig,
};
use sdnet::error::Error;
use sdnet::mapping::{region_rules, RulesFile};
use sdnet::net::{
    train, training_log_csv, Architecture, LossKind, ModelFile, SdNetwork, TrainConfig,
};
use sdnet::pattern::ActivationPattern;
use sdnet::plot::{emit_region_svg, image_grid, sample_clouds_csv, write_pgm};
use sdnet::verify::{
    discover_populated_regions, extract_adversarial_examples, verify_with_graph,
    VerificationReport, VerifyBudgets, VerifyParams,
};

#[derive(Parser)]
#[command(name = "sdnet", version, about = "Sliding door networks: train, map rules, verify global robustness")]
struct Cli {
    /// Worker threads for sampling and probing stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    CrossEntropy,
    SquaredError,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> LossKind {
        match l {
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::SquaredError => LossKind::SquaredError,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a sliding door network and write the model as JSON.
    Train {
        /// IDX directory (train/test image+label files) or a dataset cache file.
        #[arg(long)]
        data: PathBuf,
        /// Mean-pool square images down to this side length first.
        #[arg(long)]
        downscale: Option<usize>,
        /// Hidden shape per layer: `<groups>x<group_size>[,<groups>x<group_size>]...`
        #[arg(long, value_parser = parse_arch)]
        arch: Architecture,
        /// Amplification of the active door.
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Door-absence penalty weight.
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, value_enum, default_value_t = LossArg::CrossEntropy)]
        loss: LossArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output model path; the epoch log lands next to it as CSV.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV path (default: `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Discover populated regions of a model and write their rules as JSON.
    Rules {
        #[arg(long)]
        model: PathBuf,
        /// Dataset whose points seed discovery (uniform draws otherwise).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        downscale: Option<usize>,
        /// Uniform discovery samples on top of the dataset points.
        #[arg(long = "budget-discovery", default_value_t = 4096)]
        budget_discovery: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify global robustness; writes a JSON report, plus SVG/CSV renderings
    /// for 2D models.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Dataset whose points seed region discovery.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        downscale: Option<usize>,
        /// Radius threshold: components with a smaller limiting ball are findings.
        #[arg(short = 'R', long = "radius")]
        radius: f64,
        /// Volume-fraction threshold for protruding regions.
        #[arg(short = 'r', long = "ratio")]
        ratio: f64,
        #[arg(long = "budget-discovery", default_value_t = 4096)]
        budget_discovery: usize,
        /// Rejection samples per region.
        #[arg(long = "budget-samples", default_value_t = 4096)]
        budget_samples: usize,
        /// Boundary probes per explicit inequality.
        #[arg(long = "budget-probes", default_value_t = 64)]
        budget_probes: usize,
        /// Samples per limiting ball.
        #[arg(long = "budget-ball", default_value_t = 4096)]
        budget_ball: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; 2D models also get `<stem>.svg`, `<stem>.grid.csv`,
        /// and `<stem>.clouds.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Raster resolution for the SVG rendering.
        #[arg(long, default_value_t = 400)]
        resolution: usize,
    },
    /// Draw points from a verified region and write them as a JSON point list
    /// (plus a PGM montage when inputs are square images).
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Vertex id from the report, or a door-pattern literal like `[[18,1],[1,15]]`.
        #[arg(long)]
        region: String,
        /// Class disambiguator when a pattern literal matches several vertices.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Rejection-sampling attempts.
        #[arg(long = "budget-draws", default_value_t = 65536)]
        budget_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic 2D dataset (axis-aligned rectangle plus an
    /// optional planted noise blob) as a cache file with a JSON sidecar.
    Synth2d {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "points-per-class", default_value_t = 1500)]
        points_per_class: usize,
        /// Omit the planted noise blob.
        #[arg(long = "no-noise")]
        no_noise: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a verification report; optionally re-render its SVG/CSV.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// Model file, required for re-rendering.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long = "grid-csv")]
        grid_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 400)]
        resolution: usize,
    },
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    let mut hidden = Vec::new();
    for part in s.split(',') {
        let (g, n) = part
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("`{part}`: expected <groups>x<group_size>"))?;
        let groups: usize = g.trim().parse().map_err(|_| format!("`{g}`: not a group count"))?;
        let size: usize = n.trim().parse().map_err(|_| format!("`{n}`: not a group size"))?;
        if groups == 0 || size == 0 {
            return Err(format!("`{part}`: groups and group size must be positive"));
        }
        hidden.push((groups, size));
    }
    Ok(Architecture { hidden })
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(Error::TrainingDiverged { .. }) => 3,
            CliError::Lib(Error::NonFiniteForward { .. }) => 3,
            CliError::Lib(_) => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads(cli.threads);
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) {
    if threads > 0 {
        // Repeat configuration in the same process is a caller bug; the CLI
        // sets the pool once before any work.
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("thread pool configured before first use");
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_threads: usize) {}

/// Loads either an IDX directory (returning train and test splits) or a
/// dataset cache file (single split).
fn load_data(
    path: &Path,
    downscale_to: Option<usize>,
) -> Result<(Dataset, Option<Dataset>), Error> {
    let (train_split, test_split) = if path.is_dir() {
        let (tr, te) = load_mnist_dir(path)?;
        (tr, Some(te))
    } else {
        (load_dataset(path)?, None)
    };
    match downscale_to {
        None => Ok((train_split, test_split)),
        Some(target) => {
            let side = (train_split.dim() as f64).sqrt().round() as usize;
            let tr = sdnet::data::downscale(&train_split, side, target)?;
            let te = test_split
                .map(|d| sdnet::data::downscale(&d, side, target))
                .transpose()?;
            Ok((tr, te))
        }
    }
}

fn load_net(path: &Path) -> Result<SdNetwork, Error> {
    ModelFile::load(path)?.into_net()
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_text(path, &json)
}

fn read_report(path: &Path) -> Result<VerificationReport, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Point list artifact written by `attack`.
#[derive(Debug, Serialize, Deserialize)]
struct AttackFile {
    version: String,
    seed: u64,
    model: String,
    report: String,
    class: usize,
    pattern: ActivationPattern,
    key: u64,
    requested: usize,
    budget_draws: usize,
    points: Vec<Vec<f64>>,
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Train {
            data,
            downscale,
            arch,
            alpha,
            epochs,
            batch,
            lr,
            lambda,
            loss,
            seed,
            out,
            log,
        } => {
            if alpha <= 1.0 {
                return Err(CliError::Usage("--alpha must exceed 1".into()));
            }
            if epochs != 0 && batch == 0 {
                return Err(CliError::Usage("--batch must be positive".into()));
            }
            let (train_split, test_split) = load_data(&data, downscale)?;
            let config = TrainConfig {
                epochs,
                batch_size: batch.max(1),
                learning_rate: lr,
                lambda,
                loss_kind: loss.into(),
                seed,
            };
            let outcome = train(&arch, alpha, &config, &train_split)?;
            ModelFile::from_net(&outcome.net, Some(config)).save(&out)?;
            let log_path = log.unwrap_or_else(|| log_path_for(&out));
            write_text(&log_path, &training_log_csv(&outcome.log))?;
            let train_acc = outcome.net.accuracy(&train_split);
            let train_sat = outcome.net.sat_rate(&train_split);
            println!("model: {}", out.display());
            println!("log: {}", log_path.display());
            println!("train accuracy: {train_acc:.4}  sat-rate: {train_sat:.4}");
            if let Some(test) = test_split {
                println!(
                    "test accuracy: {:.4}  sat-rate: {:.4}",
                    outcome.net.accuracy(&test),
                    outcome.net.sat_rate(&test)
                );
            }
            Ok(0)
        }
        Command::Rules { model, data, downscale, budget_discovery, seed, out } => {
            let net = load_net(&model)?;
            let dataset = data
                .as_ref()
                .map(|p| load_data(p, downscale).map(|(tr, _)| tr))
                .transpose()?;
            let regions =
                discover_populated_regions(&net, dataset.as_ref(), budget_discovery, seed)?;
            let mut file = RulesFile::new(seed, budget_discovery, regions);
            file.model = Some(model.display().to_string());
            file.data = data.map(|p| p.display().to_string());
            file.save(&out)?;
            println!("rules: {} ({} populated regions)", out.display(), file.regions.len());
            Ok(0)
        }
        Command::Verify {
            model,
            data,
            downscale,
            radius,
            ratio,
            budget_discovery,
            budget_samples,
            budget_probes,
            budget_ball,
            seed,
            out,
            resolution,
        } => {
            let net = load_net(&model)?;
            let dataset = data
                .as_ref()
                .map(|p| load_data(p, downscale).map(|(tr, _)| tr))
                .transpose()?;
            let params = VerifyParams { radius_threshold: radius, ratio_threshold: ratio };
            let budgets = VerifyBudgets {
                discovery_samples: budget_discovery,
                region_samples: budget_samples,
                boundary_probes: budget_probes,
                ball_samples: budget_ball,
            };
            let (mut report, graph) =
                verify_with_graph(&net, dataset.as_ref(), params, budgets, seed)?;
            report.notes.insert(
                0,
                format!(
                    "run: model={}, data={}",
                    model.display(),
                    data.as_ref().map_or("none".into(), |p| p.display().to_string())
                ),
            );
            write_json(&out, &report)?;
            if net.input_bounds.dim() == 2 {
                let plot = emit_region_svg(&net, &report, resolution)?;
                write_text(&sibling(&out, "svg"), &plot.svg)?;
                write_text(&sibling(&out, "grid.csv"), &plot.csv)?;
                write_text(&sibling(&out, "clouds.csv"), &sample_clouds_csv(&graph))?;
            }
            println!("report: {}", out.display());
            println!("{}", summarize(&report));
            if report.incomplete {
                eprintln!("verification incomplete: sampling budget exhausted on some regions");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Attack {
            model,
            report, // report path
            region,
            class,
            count,
            budget_draws,
            seed,
            out,
        } => {
            let net = load_net(&model)?;
            let rep = read_report(&report)?;
            let vertex = resolve_vertex(&rep, &region, class)?;
            let rules = region_rules(&net, vertex.class, &vertex.pattern)?;
            let points = extract_adversarial_examples(&net, &rules, count, budget_draws, seed);
            let produced = points.len();
            let file = AttackFile {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                model: model.display().to_string(),
                report: report.display().to_string(),
                class: vertex.class,
                pattern: vertex.pattern.clone(),
                key: vertex.key,
                requested: count,
                budget_draws,
                points,
            };
            write_json(&out, &file)?;
            let side = (net.input_bounds.dim() as f64).sqrt() as usize;
            if side >= 2 && side * side == net.input_bounds.dim() && produced > 0 {
                let (pixels, w, h) = image_grid(&file.points, side);
                let pgm = sibling(&out, "pgm");
                write_pgm(&pgm, &pixels, w, h)?;
                println!("montage: {}", pgm.display());
            }
            println!(
                "points: {} ({} of {} requested, class {})",
                out.display(),
                produced,
                count,
                vertex.class
            );
            if produced < count {
                eprintln!("draw budget exhausted: region too thin for the requested count");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Synth2d { out, points_per_class, no_noise, seed } => {
            let config = Synth2DConfig {
                points_per_class,
                plant_noise: !no_noise,
                seed,
                ..Synth2DConfig::default()
            };
            let dataset = gen_synth2d(&config);
            save_dataset(&out, &dataset, Some(&config))?;
            println!(
                "dataset: {} ({} points, {} classes)",
                out.display(),
                dataset.len(),
                dataset.classes
            );
            Ok(0)
        }
        Command::Report { report, model, svg, grid_csv, resolution } => {
            let rep = read_report(&report)?;
            println!("{}", summarize(&rep));
            if svg.is_some() || grid_csv.is_some() {
                let Some(model) = model else {
                    return Err(CliError::Usage(
                        "--model is required to re-render SVG/CSV artifacts".into(),
                    ));
                };
                let net = load_net(&model)?;
                let plot = emit_region_svg(&net, &rep, resolution)?;
                if let Some(path) = svg {
                    write_text(&path, &plot.svg)?;
                    println!("svg: {}", path.display());
                }
                if let Some(path) = grid_csv {
                    write_text(&path, &plot.csv)?;
                    println!("grid: {}", path.display());
                }
            }
            Ok(0)
        }
    }
}

/// `report.json` -> `report.svg`, `report.grid.csv`, ...
fn sibling(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn log_path_for(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

fn resolve_vertex<'r>(
    report: &'r VerificationReport,
    selector: &str,
    class: Option<usize>,
) -> Result<&'r sdnet::verify::VertexReport, CliError> {
    if let Ok(id) = selector.parse::<usize>() {
        return report.vertices.get(id).ok_or_else(|| {
            CliError::Lib(Error::BadDataset(format!(
                "vertex {id} not in report ({} vertices)",
                report.vertices.len()
            )))
        });
    }
    let pattern: ActivationPattern = serde_json::from_str(selector).map_err(|_| {
        CliError::Usage(format!(
            "--region `{selector}`: expected a vertex id or a door-pattern literal like [[18,1],[1,15]]"
        ))
    })?;
    let matches: Vec<&sdnet::verify::VertexReport> = report
        .vertices
        .iter()
        .filter(|v| v.pattern == pattern && class.is_none_or(|c| v.class == c))
        .collect();
    match matches.as_slice() {
        [v] => Ok(v),
        [] => Err(CliError::Lib(Error::BadDataset(format!(
            "no report vertex realizes pattern {selector}"
        )))),
        many => Err(CliError::Usage(format!(
            "pattern matches {} vertices (classes {:?}); add --class",
            many.len(),
            many.iter().map(|v| v.class).collect::<Vec<_>>()
        ))),
    }
}

fn summarize(report: &VerificationReport) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "verdict: {}  (R={}, r={}, seed={}, version={})",
        match report.verdict {
            sdnet::verify::Verdict::GloballyRobust => "globally_robust",
            sdnet::verify::Verdict::NotGloballyRobust => "not_globally_robust",
        },
        report.params.radius_threshold,
        report.params.ratio_threshold,
        report.seed,
        report.version
    )
    .unwrap();
    writeln!(
        s,
        "graph: {} vertices, {} edges, {} components",
        report.vertices.len(),
        report.edges.len(),
        report.components.len()
    )
    .unwrap();
    for c in &report.components {
        let radius = c
            .ball
            .as_ref()
            .map_or("none".to_string(), |b| format!("{:.6}", b.radius));
        writeln!(
            s,
            "  component {}: class {}, {} vertices, ball radius {}{}",
            c.id,
            c.class,
            c.vertices.len(),
            radius,
            if c.small_isolated { ", small isolated" } else { "" }
        )
        .unwrap();
    }
    for f in &report.findings {
        writeln!(
            s,
            "finding: {} class={} vertices={:?} center={:?} radius={:.6}{}",
            match f.kind {
                sdnet::verify::FindingKind::SmallIsolated => "small_isolated",
                sdnet::verify::FindingKind::Protruding => "protruding",
            },
            f.class,
            f.vertices,
            f.ball.center,
            f.ball.radius,
            f.fraction.map_or(String::new(), |x| format!(" fraction={x:.4}"))
        )
        .unwrap();
    }
    if report.incomplete {
        writeln!(s, "incomplete: yes").unwrap();
        for n in &report.notes {
            writeln!(s, "  note: {n}").unwrap();
        }
    }
    s.pop();
    s
}
