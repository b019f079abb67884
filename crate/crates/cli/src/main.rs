use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfscm::estimator::{effects, fit, placebo_in_time, EstimationConfig, Variant};
use mfscm::inference::{block_bootstrap_ci, BlockRule, BootstrapConfig};
use mfscm::simlab::{
    coverage_experiment, risk_ratio_experiment, CoverageConfig, DgpConfig, ExperimentResult,
    RiskConfig,
};
use mfscm::{load_panel, EffectSeries, Error, FitResult};
use serde::Serialize;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "mfscm",
    version,
    about = "Mixed-frequency synthetic control estimation and simulation"
)]
struct Cli {
    /// Worker threads for bootstrap and simulation replicates (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit weights and MIDAS coefficients, write fit.json and effects.csv.
    Fit(FitArgs),
    /// Fit, then build a block-subsampling bootstrap interval for the ATE.
    Infer(InferArgs),
    /// Refit with a pseudo treatment date inside the pre-treatment window.
    Placebo(PlaceboArgs),
    /// Risk-ratio experiment over a grid of pre-treatment lengths.
    SimRisk(SimRiskArgs),
    /// Interval coverage experiment over a grid of (T0, T1) cells.
    SimCoverage(SimCoverageArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// Panel manifest (TOML).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimator variant: mfscm, no-midas or baseline-only (overrides the manifest).
    #[arg(long)]
    variant: Option<Variant>,
}

impl PanelArgs {
    fn manifest(&self) -> Result<&Path, Error> {
        self.manifest
            .as_deref()
            .ok_or_else(|| config_err("manifest", "a panel manifest is required"))
    }

    fn out(&self) -> Result<&Path, Error> {
        self.out
            .as_deref()
            .ok_or_else(|| config_err("out", "an output directory is required"))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
}

#[derive(Args)]
struct BootArgs {
    /// Confidence level in (0, 1).
    #[arg(long, default_value_t = 0.90)]
    level: f64,
    /// Bootstrap replicates.
    #[arg(long = "n-boot", default_value_t = 1000)]
    n_boot: usize,
    /// Block length rule: pow:A, fixed:M or minpow:A:MIN.
    #[arg(long = "block-rule", default_value = "pow:0.8")]
    block_rule: BlockRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args)]
struct PlaceboArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Pseudo treatment date, strictly between 0 and the manifest's t0.
    #[arg(long = "pseudo-t0")]
    pseudo_t0: usize,
}

#[derive(Args)]
struct DgpArgs {
    /// Number of donors.
    #[arg(long = "J", default_value_t = 20)]
    j: usize,
    /// Seed for the design draws and replicates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimRiskArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Pre-treatment lengths, comma separated.
    #[arg(long = "T0", value_delimiter = ',', default_value = "20,80,320,1280")]
    t0: Vec<usize>,
    /// Post-treatment length of the evaluation surface.
    #[arg(long = "T1", default_value_t = 100)]
    t1: usize,
    /// Training panels per grid point.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Evaluation draws forming the risk surface.
    #[arg(long = "m-draws", default_value_t = 1000)]
    m_draws: usize,
}

#[derive(Args)]
struct SimCoverageArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Pre-treatment lengths, comma separated.
    #[arg(long = "T0", value_delimiter = ',', default_value = "40")]
    t0: Vec<usize>,
    /// Post-treatment lengths, comma separated; every (T0, T1) pair is run.
    #[arg(long = "T1", value_delimiter = ',', default_value = "20")]
    t1: Vec<usize>,
    /// Monte Carlo replications per cell.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long = "n-boot", default_value_t = 1000)]
    n_boot: usize,
    /// Block length rule: pow:A, fixed:M or minpow:A:MIN.
    #[arg(long = "block-rule", default_value = "minpow:0.5:10")]
    block_rule: BlockRule,
    /// Constant treatment effect injected after T0.
    #[arg(long, default_value_t = 0.0)]
    effect: f64,
}

#[derive(Serialize)]
struct Envelope<'a, B: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: B,
}

#[derive(Serialize)]
struct CiOut {
    ate: f64,
    sigma_v_hat: f64,
    ci_lower: f64,
    ci_upper: f64,
    level: f64,
    n_boot: usize,
    block_size: usize,
    seed: u64,
}

#[derive(Serialize)]
struct PlaceboOut<'a> {
    pseudo_t0: usize,
    ate: f64,
    effects: &'a [f64],
    fit: &'a FitResult,
}

/// Files to write once every computation has succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn json<B: Serialize>(&mut self, name: &str, command: &str, body: B) -> Result<(), Error> {
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            command,
            body,
        };
        let mut text =
            serde_json::to_string_pretty(&env).map_err(|e| Error::Domain(e.to_string()))?;
        text.push('\n');
        self.files.push((name.to_string(), text));
        Ok(())
    }

    fn text(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    /// Each file goes to a temporary sibling first and is renamed into place.
    fn commit(self) -> Result<(), Error> {
        let io = |path: &Path, source: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        for (name, body) in self.files {
            let target = self.dir.join(&name);
            let mut tmp =
                tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io(&self.dir, e))?;
            tmp.write_all(body.as_bytes()).map_err(|e| io(&target, e))?;
            tmp.persist(&target).map_err(|e| io(&target, e.error))?;
        }
        Ok(())
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn effects_csv(e: &EffectSeries) -> String {
    let mut s = String::from("t,effect\n");
    for (i, v) in e.effects.iter().enumerate() {
        let _ = writeln!(s, "{},{}", e.t0 + 1 + i, v);
    }
    s
}

fn summary(f: &FitResult, e: &EffectSeries) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "weights (nonzero):");
    for (id, w) in &f.weights {
        if w.abs() > 1e-6 {
            let _ = writeln!(s, "  {id:<16} {w:.4}");
        }
    }
    let _ = writeln!(s, "pre_mse  {:.6}", f.pre_mse);
    let _ = writeln!(s, "ATE      {:.6}  (T1 = {})", e.ate, e.t1());
    for d in &f.diagnostics {
        let _ = writeln!(s, "note: {d}");
    }
    s
}

fn estimation(manifest_cfg: &EstimationConfig, variant: Option<Variant>) -> EstimationConfig {
    let mut cfg = manifest_cfg.clone();
    if let Some(v) = variant {
        cfg.variant = v;
    }
    cfg
}

fn run_fit(args: &FitArgs) -> Result<(), Error> {
    let out_dir = args.panel.out()?;
    let loaded = load_panel::<f64>(args.panel.manifest()?)?;
    let cfg = estimation(&loaded.manifest.estimation, args.panel.variant);
    cfg.validate()?;
    let f = fit(&loaded.panel, &cfg)?;
    let e = effects(&f, &loaded.panel)?;
    let mut out = Outputs::new(out_dir);
    out.json("fit.json", "fit", &f)?;
    out.text("effects.csv", effects_csv(&e));
    out.commit()?;
    print!("{}", summary(&f, &e));
    Ok(())
}

fn run_infer(args: &InferArgs) -> Result<(), Error> {
    let b = &args.boot;
    let boot = BootstrapConfig {
        n_boot: b.n_boot,
        block_rule: b.block_rule,
        seed: b.seed,
        level: b.level,
    };
    boot.validate()?;
    let out_dir = args.panel.out()?;
    let loaded = load_panel::<f64>(args.panel.manifest()?)?;
    let cfg = estimation(&loaded.manifest.estimation, args.panel.variant);
    cfg.validate()?;
    boot.block_rule.block_size(loaded.panel.t0)?;
    if loaded.panel.t1 < 2 {
        return Err(config_err(
            "t0",
            "inference needs at least two post-treatment periods",
        ));
    }
    let f = fit(&loaded.panel, &cfg)?;
    let e = effects(&f, &loaded.panel)?;
    let ci = block_bootstrap_ci(&loaded.panel, &f, &e, &boot)?;
    let mut out = Outputs::new(out_dir);
    out.json("fit.json", "infer", &f)?;
    out.text("effects.csv", effects_csv(&e));
    out.json(
        "ci.json",
        "infer",
        CiOut {
            ate: ci.ate,
            sigma_v_hat: ci.sigma_v_hat,
            ci_lower: ci.ci_lower,
            ci_upper: ci.ci_upper,
            level: ci.level,
            n_boot: ci.n_boot,
            block_size: ci.block_size,
            seed: ci.seed,
        },
    )?;
    let mut stats = String::from("replicate,stat\n");
    for (i, s) in ci.boot_stats.iter().enumerate() {
        let _ = writeln!(stats, "{},{}", i + 1, s);
    }
    out.text("boot_stats.csv", stats);
    out.commit()?;
    print!("{}", summary(&f, &e));
    println!(
        "{:.0}% CI  ({:.6}, {:.6})  [N = {}, block = {}]",
        ci.level * 100.0,
        ci.ci_lower,
        ci.ci_upper,
        ci.n_boot,
        ci.block_size
    );
    Ok(())
}

fn run_placebo(args: &PlaceboArgs) -> Result<(), Error> {
    let out_dir = args.panel.out()?;
    let loaded = load_panel::<f64>(args.panel.manifest()?)?;
    let t0 = loaded.panel.t0;
    if args.pseudo_t0 == 0 || args.pseudo_t0 >= t0 {
        return Err(config_err(
            "pseudo-t0",
            format!("must lie strictly between 0 and t0 = {t0}"),
        ));
    }
    let cfg = estimation(&loaded.manifest.estimation, args.panel.variant);
    cfg.validate()?;
    let (f, e) = placebo_in_time(&loaded.panel, args.pseudo_t0, &cfg)?;
    let mut out = Outputs::new(out_dir);
    out.json(
        "placebo.json",
        "placebo",
        PlaceboOut {
            pseudo_t0: args.pseudo_t0,
            ate: e.ate,
            effects: &e.effects,
            fit: &f,
        },
    )?;
    out.text("placebo_effects.csv", effects_csv(&e));
    out.commit()?;
    print!("{}", summary(&f, &e));
    Ok(())
}

fn dgp_config(a: &DgpArgs) -> DgpConfig {
    DgpConfig {
        j: a.j,
        seed: a.seed,
        ..DgpConfig::default()
    }
}

fn write_experiment(
    dir: &Path,
    stem: &str,
    command: &str,
    res: &ExperimentResult,
) -> Result<(), Error> {
    let mut out = Outputs::new(dir);
    out.json(&format!("{stem}.json"), command, res)?;
    out.text(&format!("{stem}.csv"), res.to_csv());
    out.commit()?;
    print!("{}", res.to_csv());
    eprintln!("finished in {:.1}s", res.runtime_secs);
    Ok(())
}

fn run_sim_risk(args: &SimRiskArgs) -> Result<(), Error> {
    if args.t0.is_empty() || args.t0.contains(&0) {
        return Err(config_err(
            "T0",
            "grid must be nonempty with positive entries",
        ));
    }
    let dgp = dgp_config(&args.dgp);
    dgp.validate()?;
    let cfg = RiskConfig {
        t0_grid: args.t0.clone(),
        t1: args.t1,
        s: args.reps,
        m_draws: args.m_draws,
        seed: args.dgp.seed,
        ..RiskConfig::default()
    };
    let res = risk_ratio_experiment(&dgp, &cfg)?;
    write_experiment(&args.dgp.out, "risk_ratio", "sim-risk", &res)
}

fn run_sim_coverage(args: &SimCoverageArgs) -> Result<(), Error> {
    if args.t0.is_empty() || args.t1.is_empty() {
        return Err(config_err("T0", "grids must be nonempty"));
    }
    if args.n_boot == 0 {
        return Err(config_err("n-boot", "must be at least 1"));
    }
    let dgp = DgpConfig {
        effect: args.effect,
        ..dgp_config(&args.dgp)
    };
    dgp.validate()?;
    let cells = args
        .t1
        .iter()
        .flat_map(|&t1| args.t0.iter().map(move |&t0| (t0, t1)))
        .collect();
    let cfg = CoverageConfig {
        cells,
        reps: args.reps,
        n_boot: args.n_boot,
        block_rule: args.block_rule,
        seed: args.dgp.seed,
        ..CoverageConfig::default()
    };
    let res = coverage_experiment(&dgp, &cfg)?;
    write_experiment(&args.dgp.out, "coverage", "sim-coverage", &res)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Validation(_) | Error::Parse { .. } | Error::Io { .. } => 2,
        Error::Domain(_) | Error::IllPosed { .. } | Error::SampleSize { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // per-replicate solver notes are noise at simulation scale
    let default_filter = match cli.command {
        Command::SimRisk(_) | Command::SimCoverage(_) => "error",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFSC_LOG", default_filter))
        .init();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Infer(a) => run_infer(a),
        Command::Placebo(a) => run_placebo(a),
        Command::SimRisk(a) => run_sim_risk(a),
        Command::SimCoverage(a) => run_sim_coverage(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
