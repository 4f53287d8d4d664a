use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gradwatch::cusum::write_curve_csv;
use gradwatch::estimator::detect_with_quantiles;
use gradwatch::harness::{self, ErrorSpec, FULL_REPLICATIONS};
use gradwatch::longrun::{LagWindow, SmootherConfig};
use gradwatch::series::{load_csv, save_csv, ColumnSelector, CsvOptions};
use gradwatch::{
    AlphaSpec, Design, DesignKind, Direction, FeatureSpec, McSetup, Mode, PipelineConfig,
    VarianceEstimator,
};

#[derive(Parser)]
#[command(name = "gradwatch", version, about = "Estimate where a feature of a time series starts to vary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate u0 for a series read from CSV.
    Detect(DetectArgs),
    /// Monte Carlo replications of a simulation design.
    Mc(McArgs),
    /// Write one simulated path of a design to CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Level alpha of the threshold quantiles.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Shrinking level c*T^-r given as "c,r"; overrides --alpha.
    #[arg(long, value_name = "C,R")]
    alpha_schedule: Option<AlphaSpec>,
    /// Nadaraya-Watson bandwidth (default 0.2, or 0.1 in setting2).
    #[arg(long)]
    h: Option<f64>,
    /// HAC lag truncation b.
    #[arg(long)]
    hac_bandwidth: Option<usize>,
    #[arg(long, value_name = "bartlett|flattop")]
    lag_window: Option<LagWindow>,
    /// Long-run variance estimator in setting1.
    #[arg(long, value_name = "hac|diff")]
    variance: Option<VarianceEstimator>,
    /// Monte Carlo draws for the quantile curve.
    #[arg(long, default_value_t = gradwatch::quantiles::DEFAULT_DRAWS)]
    draws: usize,
    /// Number of points of the simulation grid.
    #[arg(long, default_value_t = gradwatch::quantiles::DEFAULT_SIM_GRID)]
    sim_grid: usize,
}

impl PipelineArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        cfg.alpha = self.alpha_schedule.unwrap_or(AlphaSpec::Fixed(self.alpha));
        if let Some(h) = self.h {
            cfg.smoother = Some(SmootherConfig::new(h)?);
        }
        if let Some(b) = self.hac_bandwidth {
            cfg.hac.bandwidth = b;
        }
        if let Some(w) = self.lag_window {
            cfg.hac.window = w;
        }
        if let Some(v) = self.variance {
            cfg.variance = v;
        }
        cfg.draws = self.draws;
        cfg.sim_grid = self.sim_grid;
        Ok(())
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// mean | autocov:<p> | covmat | second-moment
    #[arg(long, default_value = "mean")]
    feature: FeatureSpec,
    #[arg(long, default_value = "setting1", value_name = "setting1|setting2|general")]
    mode: Mode,
    #[arg(long, default_value = "left", value_name = "left|right")]
    direction: Direction,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Seed of the quantile simulation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subtract a Nadaraya-Watson mean before evaluating features.
    #[arg(long)]
    center: bool,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// Comma-separated column names or 0-based indices.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Write the scaled statistic curve (u, value) here.
    #[arg(long)]
    curves_out: Option<PathBuf>,
    /// Write the quantile curve (u, q) here.
    #[arg(long)]
    quantiles_out: Option<PathBuf>,
    /// Print only the JSON record.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DesignArgs {
    /// mu1 | mu2 | mu4 | mu5 | nochange | returns | piecewise
    #[arg(long)]
    design: DesignKind,
    #[arg(long = "T", default_value_t = 500)]
    t_len: usize,
    /// Dimension of the nochange design.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Jump of piecewise, start of the flat segment of returns.
    #[arg(long)]
    change_at: Option<f64>,
    /// Innovation standard deviation.
    #[arg(long)]
    sd: Option<f64>,
    /// Slope a of the returns volatility 1 + a (change_at - u)_+.
    #[arg(long)]
    vol_slope: Option<f64>,
}

impl DesignArgs {
    fn design(&self) -> Result<Design> {
        let mut d = Design::new(self.design, self.t_len)?.with_dim(self.dim)?;
        if let Some(u) = self.change_at {
            d = d.with_change_at(u)?;
        }
        if let Some(a) = self.vol_slope {
            d = d.with_vol_slope(a)?;
        }
        if let Some(sd) = self.sd {
            if !(sd >= 0.0) {
                bail!("--sd must be nonnegative");
            }
            let errors = match d.errors {
                ErrorSpec::Ar1 { phi, .. } => ErrorSpec::Ar1 { phi, sd },
                ErrorSpec::Iid { .. } => ErrorSpec::Iid { sd },
            };
            d = d.with_errors(errors);
        }
        Ok(d)
    }
}

#[derive(Args)]
struct McArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long = "N", default_value_t = harness::DEFAULT_REPLICATIONS)]
    n: usize,
    /// Use the full replication count of the simulation study.
    #[arg(long, conflicts_with = "n")]
    full: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Base seed; replication r uses seed + r, the quantile curve uses seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(a) => detect(a),
        Command::Mc(a) => mc(a),
        Command::Generate(a) => generate(a),
    }
}

fn detect(a: DetectArgs) -> Result<()> {
    let columns = if a.columns.is_empty() {
        ColumnSelector::All
    } else if a.columns.iter().all(|c| c.parse::<usize>().is_ok()) {
        ColumnSelector::Indices(a.columns.iter().map(|c| c.parse().unwrap()).collect())
    } else {
        ColumnSelector::Names(a.columns.clone())
    };
    let opts = CsvOptions {
        has_header: !a.no_header,
        columns,
    };
    let series = load_csv(&a.input, &opts)?;
    let family = a.feature.family_for(series.dim())?;

    let mut cfg = PipelineConfig {
        seed: a.seed,
        center: a.center,
        ..PipelineConfig::default()
    };
    a.pipeline.apply(&mut cfg)?;

    let est = detect_with_quantiles(&series, &family, a.mode, a.direction, &cfg, None)?;

    if let Some(path) = &a.curves_out {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_curve_csv(
            BufWriter::new(file),
            "statistic",
            &est.curves.field_grid,
            &est.curves.statistic,
        )
        .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = &a.quantiles_out {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        write_curve_csv(
            BufWriter::new(file),
            "q",
            &est.curves.quantile_grid,
            &est.curves.quantile,
        )
        .with_context(|| format!("cannot write {}", path.display()))?;
    }

    if !a.json {
        println!("input        {} (T = {}, d = {})", a.input.display(), series.len(), series.dim());
        println!("feature      {} (K = {})", a.feature, family.len());
        println!("mode         {} ({:?})", a.mode, a.direction);
        println!("alpha        {}", est.alpha);
        println!("tau prelim   {:.6}  ->  u0 prelim {:.4}", est.tau_prelim, est.u0_prelim);
        println!("tau refined  {:.6}  ->  u0       {:.4}", est.tau_refined, est.u0);
        for w in &est.warnings {
            println!("warning      {w}");
        }
    }
    println!("{}", serde_json::to_string(&est)?);
    Ok(())
}

fn mc(a: McArgs) -> Result<()> {
    let design = a.design.design()?;
    let mut setup = McSetup::for_design(&design);
    a.pipeline.apply(&mut setup.pipeline)?;
    setup.pipeline.seed = a.seed;
    let n = if a.full { FULL_REPLICATIONS } else { a.n };

    let report = harness::run_mc(&design, n, &setup, a.seed)?;
    let files = harness::emit(&report, &a.out)?;

    let s = &report.summary;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} T={} N={} alpha={} feature={} mode={} direction={:?}",
        design.kind, design.t_len, n, report.alpha, report.feature, report.mode, report.direction
    );
    println!(
        "median {}  mean {}  below u0 {}  below 1 {}  failures {}",
        fmt(s.median),
        fmt(s.mean),
        fmt(s.underestimation),
        fmt(s.below_one),
        report.failures
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let design = a.design.design()?;
    let x = harness::generate(&design, a.seed);
    save_csv(&x, &a.out, true)?;
    println!("wrote {} ({} rows)", a.out.display(), x.len());
    Ok(())
}
