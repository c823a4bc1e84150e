//! Configuration-driven front end for the walk laboratory. One `run`
//! subcommand executes an experiment described either by a TOML config
//! file or by a bare experiment kind plus flag overrides, writes JSON and
//! CSV artifacts named by the config hash, and exits 0 on pass, 2 on a
//! statistical failure, 1 on a usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::{fmt, fs};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gwalk::env_model::{validate_assumptions, ValidationReport};
use gwalk::montecarlo::{
    oracle_gate, plan_constants, verify_joint_transform, verify_local_time_law,
    verify_survival_rate, verify_yaglom, ExperimentPlan, MonteCarloError, PlanCaps, SampleMode,
};
use gwalk::range_sampler::sample_annealed_range;
use gwalk::reduction::{build_reduced_forest, encode_forest, extract_regeneration_set};
use gwalk::report::{artifact_stem, config_hash, curve_rows, write_curve_csv, write_encoding_csv, write_json};
use gwalk::walker::{level_stats, run_walk, WalkCaps};
use gwalk::{make_gaussian_binary_family, EnvTree};

/// Environment variable overriding the artifact output directory.
const OUT_DIR_ENV: &str = "GWALK_OUT_DIR";
/// Validation window half-width for the family assumption checks.
const VALIDATION_DELTA: f64 = 0.1;
/// Per-check significance of the sampler equivalence gate.
const GATE_THRESHOLD: f64 = 0.01;

#[derive(Parser)]
#[command(name = "gwalk", version, about = "Monte Carlo laboratory for biased walks on marked trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment from a TOML config file or a bare kind name.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML config, or an experiment kind: psi, validate,
    /// walk, range, reduce, constants, survival, local-time, yaglom,
    /// joint, oracle-check.
    target: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Environment family constructor (only gaussian-binary is built in).
    #[arg(long)]
    family: Option<String>,
    /// Tail exponent kappa of the family.
    #[arg(long)]
    kappa: Option<f64>,
    /// Evaluation point for the psi kind.
    #[arg(long)]
    t: Option<f64>,
    /// Sampling backend for distribution-level experiments.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated excursion grid, e.g. 100,200,400.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<u32>>,
    /// Critical-generation coefficient.
    #[arg(long)]
    a: Option<f64>,
    /// Comma-separated Laplace grid, e.g. 0.25,0.5,1.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Monte Carlo replicates of the main experiment.
    #[arg(long)]
    replicates: Option<u64>,
    /// Root seed of every random stream; runs never seed from the clock.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Worker threads (0 = library default). Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Artifact directory; also settable via GWALK_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Excursion count for walk, range and reduce runs.
    #[arg(long)]
    p: Option<u32>,
    /// Regeneration separation depth for reduce runs.
    #[arg(long)]
    ell: Option<u32>,
    /// Truncation depth for range and reduce runs.
    #[arg(long)]
    depth: Option<u32>,
    /// Skip the JSON artifact.
    #[arg(long)]
    no_json: bool,
    /// Skip the CSV artifact.
    #[arg(long)]
    no_csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Walker,
    RangeSampler,
}

impl From<ModeArg> for SampleMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::Walker => SampleMode::Walker,
            ModeArg::RangeSampler => SampleMode::RangeSampler,
        }
    }
}

/// Experiment selector; the config file spells these in kebab-case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Psi,
    Validate,
    Walk,
    Range,
    Reduce,
    Constants,
    Survival,
    LocalTime,
    Yaglom,
    Joint,
    OracleCheck,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Psi => "psi",
            Kind::Validate => "validate",
            Kind::Walk => "walk",
            Kind::Range => "range",
            Kind::Reduce => "reduce",
            Kind::Constants => "constants",
            Kind::Survival => "survival",
            Kind::LocalTime => "local-time",
            Kind::Yaglom => "yaglom",
            Kind::Joint => "joint",
            Kind::OracleCheck => "oracle-check",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string())).ok()
    }

    /// Kinds that consume random streams and therefore need a seed.
    fn stochastic(self) -> bool {
        !matches!(self, Kind::Psi | Kind::Validate)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Clap exits 2 by default; the contract reserves 2 for
            // statistical failures and 1 for usage errors.
            let _ = err.print();
            return ExitCode::from(u8::from(err.use_stderr()));
        }
    };
    let Command::Run(args) = cli.command;
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Experiment(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    /// Exit 1: bad flags, unreadable or invalid config, I/O trouble.
    Usage(String),
    /// Exit 2: the experiment ran but could not complete its budget.
    Experiment(String),
}

impl From<MonteCarloError> for CliError {
    fn from(err: MonteCarloError) -> Self {
        match err {
            MonteCarloError::Plan(msg) => CliError::Usage(format!("invalid plan: {msg}")),
            other => CliError::Experiment(other.to_string()),
        }
    }
}

fn io_err(path: &Path, err: std::io::Error) -> CliError {
    CliError::Usage(format!("io error at {}: {err}", path.display()))
}

// ---------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    kind: Kind,
    #[serde(default)]
    family: FamilyConfig,
    #[serde(default)]
    plan: PlanConfig,
    #[serde(default)]
    params: ParamsConfig,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default = "default_true")]
    emit_json: bool,
    #[serde(default = "default_true")]
    emit_csv: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyConfig {
    name: FamilyName,
    kappa: f64,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        FamilyConfig { name: FamilyName::GaussianBinary, kappa: 3.0 }
    }
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyName {
    GaussianBinary,
}

#[derive(Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanConfig {
    mode: Option<SampleMode>,
    n_grid: Option<Vec<u32>>,
    a: Option<f64>,
    lambda_grid: Option<Vec<f64>>,
    replicates: Option<u64>,
    master_seed: Option<u64>,
    caps: Option<PlanCaps>,
}

/// Scalar knobs of the small single-run kinds.
#[derive(Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsConfig {
    p: Option<u32>,
    ell: Option<u32>,
    depth: Option<u32>,
    t: Option<f64>,
}

/// Fully resolved run: config file merged with flag overrides.
struct Resolved {
    kind: Kind,
    plan: ExperimentPlan,
    p: u32,
    ell: u32,
    depth: u32,
    t: f64,
    workers: Option<usize>,
    out_dir: PathBuf,
    emit_json: bool,
    emit_csv: bool,
    hash: String,
}

/// Semantic payload of the config hash: everything that can change a
/// result, nothing that cannot (output paths, format flags, workers).
#[derive(Serialize)]
struct SemanticConfig<'a> {
    kind: Kind,
    plan: &'a ExperimentPlan,
    p: u32,
    ell: u32,
    depth: u32,
    t: f64,
}

fn run(args: &RunArgs) -> Result<bool, CliError> {
    let resolved = resolve(args)?;
    if let Some(workers) = resolved.workers {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?;
        pool.install(|| execute(&resolved))
    } else {
        execute(&resolved)
    }
}

fn resolve(args: &RunArgs) -> Result<Resolved, CliError> {
    let o = &args.overrides;
    let config = load_config(&args.target)?;

    let family = FamilyConfig {
        name: match o.family.as_deref() {
            None => config.family.name,
            Some("gaussian-binary") => FamilyName::GaussianBinary,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown family '{other}'; available: gaussian-binary"
                )))
            }
        },
        kappa: o.kappa.unwrap_or(config.family.kappa),
    };
    let FamilyName::GaussianBinary = family.name;
    if !(family.kappa > 1.0) || !family.kappa.is_finite() {
        return Err(CliError::Usage(format!(
            "family.kappa must be a finite number above 1, got {}",
            family.kappa
        )));
    }
    let spec = make_gaussian_binary_family(family.kappa);

    let seed_given = o.master_seed.or(config.plan.master_seed).is_some();
    let plan = ExperimentPlan {
        spec,
        mode: o
            .mode
            .map(SampleMode::from)
            .or(config.plan.mode)
            .unwrap_or(SampleMode::RangeSampler),
        n_grid: o.n_grid.clone().or(config.plan.n_grid.clone()).unwrap_or(vec![100, 200, 400]),
        a: o.a.or(config.plan.a).unwrap_or(1.0),
        lambda_grid: o
            .lambda_grid
            .clone()
            .or(config.plan.lambda_grid.clone())
            .unwrap_or(vec![0.25, 0.5, 1.0, 2.0]),
        replicates: o.replicates.or(config.plan.replicates).unwrap_or(100_000),
        master_seed: o.master_seed.or(config.plan.master_seed).unwrap_or(0),
        caps: config.plan.caps.clone().unwrap_or_default(),
    };
    plan.validate().map_err(CliError::from)?;

    let kind = config.kind;
    if kind.stochastic() && !seed_given {
        return Err(CliError::Usage(format!(
            "plan.master_seed is required for the '{kind}' experiment; set it in the \
             config or pass --master-seed (runs never seed from the clock)"
        )));
    }

    let p = o.p.or(config.params.p).unwrap_or(1);
    if p == 0 {
        return Err(CliError::Usage("params.p must be at least 1".into()));
    }
    let ell = o.ell.or(config.params.ell).unwrap_or(0);
    let depth = o.depth.or(config.params.depth).unwrap_or(64);
    let t = o.t.or(config.params.t).unwrap_or(1.0);
    if !t.is_finite() {
        return Err(CliError::Usage("params.t must be finite".into()));
    }

    let out_dir = o
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or(config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let hash = config_hash(&SemanticConfig { kind, plan: &plan, p, ell, depth, t });

    Ok(Resolved {
        kind,
        plan,
        p,
        ell,
        depth,
        t,
        workers: o.workers.or(config.workers),
        out_dir,
        emit_json: config.emit_json && !o.no_json,
        emit_csv: config.emit_csv && !o.no_csv,
        hash,
    })
}

fn load_config(target: &str) -> Result<RunConfig, CliError> {
    if let Some(kind) = Kind::parse(target) {
        return Ok(RunConfig {
            kind,
            family: FamilyConfig::default(),
            plan: PlanConfig::default(),
            params: ParamsConfig::default(),
            output_dir: None,
            workers: None,
            emit_json: true,
            emit_csv: true,
        });
    }
    let path = Path::new(target);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "'{target}' is neither an experiment kind nor an existing config file; \
             kinds: psi, validate, walk, range, reduce, constants, survival, \
             local-time, yaglom, joint, oracle-check"
        )));
    }
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&body)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

// ---------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------

fn execute(r: &Resolved) -> Result<bool, CliError> {
    match r.kind {
        Kind::Psi => run_psi(r),
        Kind::Validate => run_validate(r),
        Kind::Walk => run_walk_kind(r),
        Kind::Range => run_range(r),
        Kind::Reduce => run_reduce(r),
        Kind::Constants => run_constants(r),
        Kind::Survival => run_survival(r),
        Kind::LocalTime => run_local_time(r),
        Kind::Yaglom => run_yaglom(r),
        Kind::Joint => run_joint(r),
        Kind::OracleCheck => run_oracle_check(r),
    }
}

/// Equivalence gate sized from the plan: a tenth of the main budget,
/// clamped to something the chi-square bins can carry.
fn gate_size(plan: &ExperimentPlan) -> u64 {
    (plan.replicates / 10).clamp(200, 100_000)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn artifact_path(r: &Resolved, ext: &str) -> PathBuf {
    r.out_dir.join(format!("{}.{ext}", artifact_stem(r.kind.as_str(), &r.hash)))
}

fn emit_json_artifact<T: Serialize>(r: &Resolved, value: &T) -> Result<(), CliError> {
    if !r.emit_json {
        return Ok(());
    }
    fs::create_dir_all(&r.out_dir).map_err(|e| io_err(&r.out_dir, e))?;
    let path = artifact_path(r, "json");
    write_json(&path, value).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn emit_csv_artifact(r: &Resolved, body: CsvBody<'_>) -> Result<(), CliError> {
    if !r.emit_csv {
        return Ok(());
    }
    fs::create_dir_all(&r.out_dir).map_err(|e| io_err(&r.out_dir, e))?;
    let path = artifact_path(r, "csv");
    match body {
        CsvBody::Curve(rows) => write_curve_csv(&path, rows).map_err(|e| io_err(&path, e))?,
        CsvBody::Encoding(enc) => write_encoding_csv(&path, enc).map_err(|e| io_err(&path, e))?,
    }
    println!("wrote {}", path.display());
    Ok(())
}

enum CsvBody<'a> {
    Curve(&'a [gwalk::report::CurveRow]),
    Encoding(&'a gwalk::reduction::ForestEncoding),
}

#[derive(Serialize)]
struct PsiArtifact {
    config_hash: String,
    kappa: f64,
    t: f64,
    value: f64,
}

fn run_psi(r: &Resolved) -> Result<bool, CliError> {
    let value = r
        .plan
        .spec
        .psi(r.t)
        .map_err(|e| CliError::Usage(format!("psi({}) is not defined: {e}", r.t)))?;
    // The family is built to satisfy psi(1) = 0 exactly; values inside
    // floating-point noise of zero print as zero.
    let shown = if value.abs() < 1e-12 { 0.0 } else { value };
    println!("{shown:?}");
    let kappa = r.plan.kappa().map_err(CliError::from)?;
    emit_json_artifact(r, &PsiArtifact { config_hash: r.hash.clone(), kappa, t: r.t, value: shown })?;
    Ok(true)
}

#[derive(Serialize)]
struct ValidateArtifact {
    config_hash: String,
    report: ValidationReport,
}

fn run_validate(r: &Resolved) -> Result<bool, CliError> {
    let report = validate_assumptions(&r.plan.spec, VALIDATION_DELTA);
    for check in &report.checks {
        println!(
            "{}: {} ({})",
            check.name,
            if check.passed { "pass" } else { "FAIL" },
            check.detail
        );
    }
    match report.kappa {
        Some(kappa) => println!("kappa = {kappa:.6}"),
        None => println!("kappa = (not solvable)"),
    }
    let pass = report.all_passed;
    emit_json_artifact(r, &ValidateArtifact { config_hash: r.hash.clone(), report })?;
    println!("result: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

#[derive(Serialize)]
struct WalkArtifact {
    config_hash: String,
    master_seed: u64,
    p: u32,
    tau: u64,
    excursions: u32,
    range_size: usize,
    max_depth_reached: u32,
    z: Vec<u64>,
    l: Vec<u64>,
}

fn run_walk_kind(r: &Resolved) -> Result<bool, CliError> {
    let key = r.plan.base_key().child(64);
    let mut env = EnvTree::with_root_key(r.plan.spec.clone(), key.child(0));
    let caps = WalkCaps::new(r.plan.caps.max_walk_steps, r.plan.caps.growth());
    let record = run_walk(&mut env, r.p, key.child(1), &caps)
        .map_err(|e| CliError::Experiment(format!("walk did not complete: {e}")))?;
    let ls = level_stats(&record, &env);
    println!(
        "tau = {}, range = {}, max depth = {}",
        record.tau,
        record.range_size(),
        record.max_depth_reached
    );
    for (k, &z) in ls.z.iter().take(12).enumerate() {
        println!("level {k}: Z = {z}, L = {}", ls.l.get(k).copied().unwrap_or(0));
    }
    let artifact = WalkArtifact {
        config_hash: r.hash.clone(),
        master_seed: r.plan.master_seed,
        p: r.p,
        tau: record.tau,
        excursions: record.excursions,
        range_size: record.range_size(),
        max_depth_reached: record.max_depth_reached,
        z: ls.z,
        l: ls.l,
    };
    emit_json_artifact(r, &artifact)?;
    Ok(true)
}

#[derive(Serialize)]
struct RangeArtifact {
    config_hash: String,
    master_seed: u64,
    p: u32,
    depth: u32,
    vertices: usize,
    truncated_at_depth: bool,
    level_counts: Vec<u64>,
}

fn run_range(r: &Resolved) -> Result<bool, CliError> {
    let caps = r.plan.caps.range(r.depth);
    let rt = sample_annealed_range(&r.plan.spec, r.p, r.plan.base_key().child(65), &caps)
        .map_err(|e| CliError::Experiment(format!("range sampling did not complete: {e}")))?;
    let level_counts = rt.level_counts(r.depth);
    println!("vertices = {}, truncated = {}", rt.len(), rt.truncated_at_depth());
    for (k, &z) in level_counts.iter().enumerate().take(12) {
        println!("level {k}: Z = {z}");
    }
    let artifact = RangeArtifact {
        config_hash: r.hash.clone(),
        master_seed: r.plan.master_seed,
        p: r.p,
        depth: r.depth,
        vertices: rt.len(),
        truncated_at_depth: rt.truncated_at_depth(),
        level_counts,
    };
    emit_json_artifact(r, &artifact)?;
    Ok(true)
}

#[derive(Serialize)]
struct ReduceArtifact {
    config_hash: String,
    master_seed: u64,
    p: u32,
    ell: u32,
    depth: u32,
    regenerations: usize,
    total_vertices: u64,
    tree_sizes: Vec<usize>,
    z: Vec<u64>,
    l: Vec<u64>,
}

fn run_reduce(r: &Resolved) -> Result<bool, CliError> {
    let caps = r.plan.caps.range(r.depth);
    let rt = sample_annealed_range(&r.plan.spec, r.p, r.plan.base_key().child(66), &caps)
        .map_err(|e| CliError::Experiment(format!("range sampling did not complete: {e}")))?;
    let regen = extract_regeneration_set(&rt, r.ell);
    let (forest, stats) = build_reduced_forest(&rt, &regen);
    let encoding = encode_forest(&forest);
    println!(
        "B = {} regeneration vertices, reduced forest of {} vertices",
        forest.trees.len(),
        forest.total_vertices()
    );
    let artifact = ReduceArtifact {
        config_hash: r.hash.clone(),
        master_seed: r.plan.master_seed,
        p: r.p,
        ell: r.ell,
        depth: r.depth,
        regenerations: forest.trees.len(),
        total_vertices: forest.total_vertices(),
        tree_sizes: forest.trees.iter().map(|t| t.len()).collect(),
        z: stats.z,
        l: stats.l,
    };
    emit_json_artifact(r, &artifact)?;
    emit_csv_artifact(r, CsvBody::Encoding(&encoding))?;
    Ok(true)
}

#[derive(Serialize)]
struct ConstantsArtifact {
    config_hash: String,
    master_seed: u64,
    constants: gwalk::limit_laws::LimitConstants,
}

fn run_constants(r: &Resolved) -> Result<bool, CliError> {
    let constants = plan_constants(&r.plan)?;
    println!("kappa = {:.6}", constants.kappa);
    println!(
        "survival rate = {:.6} (se {:.2e}, {:?})",
        constants.survival_rate.value, constants.survival_rate.se, constants.survival_rate.provenance
    );
    println!(
        "C_kappa = {:.6} (se {:.2e})",
        constants.c_bold_kappa.value, constants.c_bold_kappa.se
    );
    println!("C_infty = {:.6} (se {:.2e})", constants.c_infty.value, constants.c_infty.se);
    let artifact = ConstantsArtifact {
        config_hash: r.hash.clone(),
        master_seed: r.plan.master_seed,
        constants,
    };
    emit_json_artifact(r, &artifact)?;
    Ok(true)
}

fn run_oracle_check(r: &Resolved) -> Result<bool, CliError> {
    let report = oracle_gate(&r.plan, r.plan.replicates.max(200), GATE_THRESHOLD)?;
    warn_all(&report.warnings);
    for check in &report.checks {
        println!(
            "{}: p = {:.4} ({})",
            check.name,
            check.outcome.p_value,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    let pass = report.pass;
    emit_json_artifact(r, &report)?;
    println!("result: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn run_survival(r: &Resolved) -> Result<bool, CliError> {
    let gate = oracle_gate(&r.plan, gate_size(&r.plan), GATE_THRESHOLD)?;
    warn_all(&gate.warnings);
    let report = verify_survival_rate(&r.plan, &gate)?;
    warn_all(&report.warnings);
    for p in &report.points {
        println!(
            "n = {}: scaled survival {:.4} (se {:.4}), target {:.4}",
            p.n, p.scaled, p.scaled_se, report.target
        );
    }
    print_verdicts_and_emit(r, report.pass, &report.verdicts, &report)
}

fn run_local_time(r: &Resolved) -> Result<bool, CliError> {
    let gate = oracle_gate(&r.plan, gate_size(&r.plan), GATE_THRESHOLD)?;
    warn_all(&gate.warnings);
    let report = verify_local_time_law(&r.plan, &gate)?;
    warn_all(&report.warnings);
    println!(
        "n = {}, level = {}: mean statistic {:.4} (se {:.4})",
        report.n, report.level, report.mean_statistic, report.mean_se
    );
    let rows = curve_rows(&report.curve, &report.targets);
    emit_csv_artifact(r, CsvBody::Curve(&rows))?;
    print_verdicts_and_emit(r, report.pass, &report.verdicts, &report)
}

fn run_yaglom(r: &Resolved) -> Result<bool, CliError> {
    let gate = oracle_gate(&r.plan, gate_size(&r.plan), GATE_THRESHOLD)?;
    warn_all(&gate.warnings);
    let report = verify_yaglom(&r.plan, &gate)?;
    warn_all(&report.warnings);
    for slice in &report.slices {
        println!(
            "n = {}: survivors {}, sup distance {:.4}",
            slice.n, slice.survivors, slice.sup_distance
        );
    }
    // The curve artifact is the largest grid entry, the closest to the limit.
    if let Some(last) = report.slices.last() {
        let rows = curve_rows(&last.curve, &last.targets);
        emit_csv_artifact(r, CsvBody::Curve(&rows))?;
    }
    print_verdicts_and_emit(r, report.pass, &report.verdicts, &report)
}

fn run_joint(r: &Resolved) -> Result<bool, CliError> {
    let gate = oracle_gate(&r.plan, gate_size(&r.plan), GATE_THRESHOLD)?;
    warn_all(&gate.warnings);
    let report = verify_joint_transform(&r.plan, &gate)?;
    warn_all(&report.warnings);
    for p in &report.points {
        println!(
            "lambda = ({:.2}, {:.2}): J = {:.4} (se {:.4}), target {:.4}",
            p.lambda1, p.lambda2, p.estimate, p.se, p.target
        );
    }
    print_verdicts_and_emit(r, report.pass, &report.verdicts, &report)
}

fn print_verdicts_and_emit<T: Serialize>(
    r: &Resolved,
    pass: bool,
    verdicts: &[gwalk::montecarlo::Verdict],
    report: &T,
) -> Result<bool, CliError> {
    for v in verdicts {
        println!("{}: {} ({})", v.name, if v.pass { "pass" } else { "FAIL" }, v.detail);
    }
    emit_json_artifact(r, report)?;
    println!("result: {}", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}
