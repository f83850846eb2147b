//! Command-line front end for the nudgeworld toolkit.
//!
//! Every subcommand reads an optional TOML config (or a previously written
//! manifest JSON, whose embedded config re-runs byte-identically), applies
//! flag overrides, validates, and writes its tables plus a `manifest.json`
//! into the output directory. Nothing outside that directory is touched.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure,
//! 4 pattern-assertion failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nudgeworld::experiments::{
    reproduce_effectiveness_curves, reproduce_policy_maps, run_sensitivity, ExperimentConfig,
    UserPreset,
};
use nudgeworld::intervention::{min_effectiveness, InterventionKind, InterventionProfile};
use nudgeworld::model::{user_policy, user_value, v_right, v_stay, UserParams, UserState, WorldParams};
use nudgeworld::planner::{classify, extract_windows, plan, AppPolicy};
use nudgeworld::report;
use nudgeworld::sim::{batch_stats, derive_seeds};
use nudgeworld::Error as ModelError;

const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "nudgeworld",
    version,
    about = "Planning and simulation toolkit for parameter-nudging interventions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file: TOML, or a manifest.json from a previous run (re-runs
    /// its embedded config). Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override for all randomized work.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created on demand; the only place files are written).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Output formats, comma separated. csv: tables; json: structured tables;
    /// svg: plots (reproduce-figures only). The manifest is always written.
    #[arg(long, global = true, value_delimiter = ',')]
    format: Option<Vec<Format>>,

    /// User preset override (default, myopic, farsighted, underconfident,
    /// overconfident). Replaces the config's user section.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print and save the acting-side value table (delta, v_stay, v_right, V*, acts).
    SolveUser,
    /// Plan interventions for one user and save the per-state decision table.
    Plan,
    /// Save minimum-effectiveness thresholds for every kind and state.
    MinEffect,
    /// Roll out seeded episodes under the planned policy and save batch statistics.
    Simulate {
        /// Number of episodes (overrides the config).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Sample parameter sets, evaluate window patterns, save per-trial verdicts.
    Sensitivity {
        /// Number of sampled trials (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Regenerate every preset figure table (policy maps, windows, effectiveness).
    ReproduceFigures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    world: WorldSection,
    user: UserSection,
    profile: ProfileSection,
    gamma_app: f64,
    seed: u64,
    episodes: usize,
    horizon: usize,
    start_w: usize,
    trials: usize,
    resolution: usize,
    formats: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldSection::default(),
            user: UserSection::default(),
            profile: ProfileSection::default(),
            gamma_app: nudgeworld::planner::DEFAULT_GAMMA_APP,
            seed: 0,
            episodes: 10_000,
            horizon: 10_000,
            start_w: 1,
            trials: 20,
            resolution: 2000,
            formats: vec!["csv".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct WorldSection {
    n_states: usize,
    p_world: f64,
    d_world: f64,
    sigma2: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection { n_states: 8, p_world: 0.6, d_world: 0.1, sigma2: 0.0 }
    }
}

/// Either a preset name or explicit parameters (explicit fields override the
/// stock default user; a preset must stand alone).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct UserSection {
    preset: Option<String>,
    burden: Option<f64>,
    goal_reward: Option<f64>,
    disengage_reward: Option<f64>,
    p_user: Option<f64>,
    gamma_user: Option<f64>,
}

/// Either a mode name ("maximal" or "zeros") or explicit nudge magnitudes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProfileSection {
    mode: Option<String>,
    delta_b: Option<f64>,
    delta_d: Option<f64>,
    delta_gamma: Option<f64>,
    delta_p: Option<f64>,
    d_floor: Option<f64>,
    epsilon_b: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Numerical(String),
    Pattern(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Pattern(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m)
            | CliError::Numerical(m)
            | CliError::Pattern(m)
            | CliError::Io(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::InvalidParameter(_) => CliError::Validation(err.to_string()),
            ModelError::Singularity(_)
            | ModelError::NonConvergence { .. }
            | ModelError::SingularSystem(_) => CliError::Numerical(err.to_string()),
            ModelError::PatternViolation(_) => CliError::Pattern(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        // A previous run's manifest: re-run its embedded config.
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let config = value
            .get("config")
            .cloned()
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "{}: JSON config must be a manifest with a `config` member",
                    path.display()
                ))
            })?;
        serde_json::from_value(config)
            .map_err(|e| CliError::Validation(format!("{}: config: {e}", path.display())))
    } else {
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

impl RunConfig {
    fn world(&self) -> CliResult<WorldParams> {
        Ok(WorldParams::new(
            self.world.n_states,
            self.world.p_world,
            self.world.d_world,
            self.world.sigma2,
        )?)
    }

    fn user(&self) -> CliResult<UserParams> {
        let section = &self.user;
        if let Some(name) = &section.preset {
            let explicit = [
                section.burden,
                section.goal_reward,
                section.disengage_reward,
                section.p_user,
                section.gamma_user,
            ];
            if explicit.iter().any(Option::is_some) {
                return Err(CliError::Validation(
                    "user: choose a preset or explicit parameters, not both".into(),
                ));
            }
            return Ok(UserPreset::parse(name)?.user());
        }
        let stock = nudgeworld::experiments::default_user();
        Ok(UserParams::new(
            section.burden.unwrap_or(stock.burden),
            section.goal_reward.unwrap_or(stock.goal_reward),
            section.disengage_reward.unwrap_or(stock.disengage_reward),
            section.p_user.unwrap_or(stock.p_user),
            section.gamma_user.unwrap_or(stock.gamma_user),
        )?)
    }

    fn profile(&self, user: &UserParams) -> CliResult<InterventionProfile> {
        let section = &self.profile;
        let stock = InterventionProfile::maximal(user);
        let d_floor = section.d_floor.unwrap_or(stock.d_floor);
        let epsilon_b = section.epsilon_b.unwrap_or(stock.epsilon_b);
        let deltas =
            [section.delta_b, section.delta_d, section.delta_gamma, section.delta_p];

        // Full-range caps computed against the (possibly overridden) bounds.
        let maximal = || -> CliResult<InterventionProfile> {
            let base = InterventionProfile::new(0.0, 0.0, 0.0, 0.0, d_floor, epsilon_b)?;
            Ok(InterventionProfile::new(
                base.max_delta(InterventionKind::OnB, user),
                base.max_delta(InterventionKind::OnD, user),
                base.max_delta(InterventionKind::OnGamma, user),
                base.max_delta(InterventionKind::OnP, user),
                d_floor,
                epsilon_b,
            )?)
        };

        if let Some(mode) = &section.mode {
            if deltas.iter().any(Option::is_some) {
                return Err(CliError::Validation(
                    "profile: choose a mode or explicit deltas, not both".into(),
                ));
            }
            return match mode.as_str() {
                "maximal" => maximal(),
                "zeros" => {
                    Ok(InterventionProfile::new(0.0, 0.0, 0.0, 0.0, d_floor, epsilon_b)?)
                }
                other => Err(CliError::Validation(format!(
                    "profile: unknown mode `{other}` (expected maximal or zeros)"
                ))),
            };
        }
        if deltas.iter().all(Option::is_none) {
            // No mode and no explicit deltas: offer every nudge at full range.
            return maximal();
        }
        Ok(InterventionProfile::new(
            section.delta_b.unwrap_or(0.0),
            section.delta_d.unwrap_or(0.0),
            section.delta_gamma.unwrap_or(0.0),
            section.delta_p.unwrap_or(0.0),
            d_floor,
            epsilon_b,
        )?)
    }

    fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            n_states: self.world.n_states,
            p_world: self.world.p_world,
            d_world: self.world.d_world,
            sigma2: self.world.sigma2,
            gamma_app: self.gamma_app,
            resolution: self.resolution,
        }
    }

    fn formats(&self) -> CliResult<Vec<Format>> {
        let mut formats = Vec::new();
        for name in &self.formats {
            let format = match name.as_str() {
                "csv" => Format::Csv,
                "json" => Format::Json,
                "svg" => Format::Svg,
                other => {
                    return Err(CliError::Validation(format!(
                        "formats: unknown format `{other}` (expected csv, json, or svg)"
                    )))
                }
            };
            if !formats.contains(&format) {
                formats.push(format);
            }
        }
        if formats.is_empty() {
            return Err(CliError::Validation("formats: at least one format required".into()));
        }
        Ok(formats)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    toolkit_version: String,
    command: String,
    config_sha256: String,
    config: RunConfig,
    outputs: Vec<String>,
    results: serde_json::Value,
}

/// Collects files for one run; everything lands in the output directory.
struct Outputs {
    dir: PathBuf,
    formats: Vec<Format>,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path, formats: Vec<Format>) -> Self {
        Outputs { dir: dir.to_path_buf(), formats, written: Vec::new() }
    }

    fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, contents: &str) -> CliResult<()> {
        if self.wants(Format::Csv) {
            self.write(name, contents)?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        if self.wants(Format::Json) {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Io(e.to_string()))?;
            self.write(name, &text)?;
        }
        Ok(())
    }

    fn finish(
        mut self,
        command: &str,
        config: &RunConfig,
        results: serde_json::Value,
    ) -> CliResult<PathBuf> {
        let canonical =
            serde_json::to_vec(config).map_err(|e| CliError::Io(e.to_string()))?;
        let digest = Sha256::digest(&canonical);
        let config_sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            config: config.clone(),
            outputs: self.written.clone(),
            results,
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        self.write("manifest.json", &text)?;
        Ok(self.dir.join("manifest.json"))
    }
}

fn state_cell(state: UserState) -> String {
    match state {
        UserState::Progress(w) => w.to_string(),
        UserState::Goal => "goal".into(),
        UserState::Disengaged => "disengaged".into(),
    }
}

fn plan_csv(policy: &AppPolicy) -> String {
    let mut out = String::from("state,delta,window,admissible,chosen,default_act\n");
    for decision in &policy.decisions {
        let delta =
            decision.delta.map(|d| d.to_string()).unwrap_or_else(|| "absent".into());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            state_cell(decision.state),
            delta,
            classify(&decision.admissible).label(),
            report::kind_set_cell(&decision.admissible),
            decision.chosen.label(),
            u8::from(decision.default_act),
        ));
    }
    out
}

fn windows_json(policy: &AppPolicy) -> serde_json::Value {
    let windows = extract_windows(policy);
    serde_json::Value::Array(
        windows
            .runs
            .iter()
            .map(|run| {
                serde_json::json!({
                    "window": run.label.label(),
                    "delta_far": run.delta_far,
                    "delta_near": run.delta_near,
                    "kinds": run.kinds.iter().map(|k| k.label()).collect::<Vec<_>>(),
                    "signature": run.bounded_signature().map(|k| k.label()),
                })
            })
            .collect(),
    )
}

fn cmd_solve_user(config: &RunConfig, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let user = config.user()?;
    let world = config.world()?;
    let table = report::user_values_csv(&user, &world)?;
    print!("{table}");
    outputs.write_csv("solve_user.csv", &table)?;
    let mut rows = Vec::new();
    for delta in 1..world.n_states {
        rows.push(serde_json::json!({
            "delta": delta,
            "v_stay": v_stay(&user, world.d_world)?,
            "v_right": v_right(&user, delta)?,
            "v_star": user_value(&user, world.d_world, delta)?,
            "acts": user_policy(&user, world.d_world, delta)?,
        }));
    }
    outputs.write_json("solve_user.json", &rows)?;
    Ok(serde_json::json!({
        "states": world.n_states - 1,
        "near_goal_value": user_value(&user, world.d_world, 1)?,
    }))
}

fn cmd_plan(config: &RunConfig, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let user = config.user()?;
    let world = config.world()?;
    let profile = config.profile(&user)?;
    let policy = plan(&user, &world, &profile, config.gamma_app)?;
    outputs.write_csv("plan.csv", &plan_csv(&policy))?;
    outputs.write_json("plan.json", &policy)?;
    let windows = windows_json(&policy);
    println!(
        "planned {} states; windows: {}",
        policy.decisions.len(),
        extract_windows(&policy)
            .runs
            .iter()
            .map(|r| r.label.label())
            .collect::<Vec<_>>()
            .join(" -> ")
    );
    Ok(serde_json::json!({ "windows": windows }))
}

fn cmd_min_effect(config: &RunConfig, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let user = config.user()?;
    let world = config.world()?;
    let profile = config.profile(&user)?;
    let mut table = String::from("w,delta,kind,effectiveness_pct\n");
    let mut rows = Vec::new();
    let mut feasible = 0usize;
    for w in 1..world.n_states {
        let delta = world.n_states - w;
        for kind in InterventionKind::ACTIVE {
            let pct =
                min_effectiveness(&user, &world, delta, kind, &profile, config.resolution)?;
            feasible += usize::from(pct.is_some());
            let cell = pct.map(|v| v.to_string()).unwrap_or_else(|| "absent".into());
            table.push_str(&format!("{w},{delta},{},{cell}\n", kind.label()));
            rows.push(serde_json::json!({
                "w": w,
                "delta": delta,
                "kind": kind.label(),
                "effectiveness_pct": pct,
            }));
        }
    }
    outputs.write_csv("min_effect.csv", &table)?;
    outputs.write_json("min_effect.json", &rows)?;
    println!("{feasible} feasible thresholds across {} rows", rows.len());
    Ok(serde_json::json!({ "rows": rows.len(), "feasible": feasible }))
}

fn cmd_simulate(config: &RunConfig, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let user = config.user()?;
    let world = config.world()?;
    let profile = config.profile(&user)?;
    let policy = plan(&user, &world, &profile, config.gamma_app)?;
    let seeds = derive_seeds(config.seed, config.episodes);
    let stats =
        batch_stats(&user, &world, &policy, &profile, &seeds, config.horizon, config.start_w)?;
    outputs.write_csv("batch_stats.csv", &report::batch_stats_csv(&stats))?;
    outputs.write_json("batch_stats.json", &stats)?;
    println!(
        "{} episodes: goal rate {:.4}, disengage rate {:.4}",
        stats.episodes, stats.goal_rate.estimate, stats.disengage_rate.estimate
    );
    Ok(serde_json::to_value(&stats).map_err(|e| CliError::Io(e.to_string()))?)
}

fn cmd_sensitivity(config: &RunConfig, outputs: &mut Outputs) -> CliResult<serde_json::Value> {
    let verdicts = run_sensitivity(&config.experiment_config(), config.trials, config.seed)?;
    outputs.write_csv("sensitivity.csv", &report::sensitivity_csv(&verdicts))?;
    outputs.write_json("sensitivity.json", &verdicts)?;
    let vacuous = verdicts.iter().filter(|v| v.vacuous).count();
    let passing = verdicts.iter().filter(|v| !v.vacuous && v.passes()).count();
    let failing: Vec<usize> =
        verdicts.iter().filter(|v| !v.passes()).map(|v| v.index).collect();
    println!(
        "{} trials: {} vacuous, {passing} non-vacuous passing, {} failing",
        verdicts.len(),
        vacuous,
        failing.len()
    );
    Ok(serde_json::json!({
        "trials": verdicts.len(),
        "vacuous": vacuous,
        "non_vacuous_passing": passing,
        "failing_trials": failing,
    }))
}

fn cmd_reproduce_figures(
    config: &RunConfig,
    outputs: &mut Outputs,
) -> CliResult<serde_json::Value> {
    let experiment = config.experiment_config();
    let maps = reproduce_policy_maps(&experiment)?;
    let curves = reproduce_effectiveness_curves(&experiment)?;
    let decompositions: Vec<_> =
        maps.iter().map(|m| (m.preset, m.windows.clone())).collect();
    outputs.write_csv("policy_map.csv", &report::policy_map_csv(&maps))?;
    outputs.write_csv("window_runs.csv", &report::window_runs_csv(&decompositions))?;
    outputs.write_csv("effectiveness.csv", &report::effectiveness_csv(&curves))?;
    if outputs.wants(Format::Svg) {
        outputs.write("policy_map.svg", &report::policy_map_svg(&maps))?;
        outputs.write("effectiveness.svg", &report::effectiveness_svg(&curves))?;
    }
    outputs.write_json("policy_map.json", &maps)?;
    outputs.write_json("effectiveness.json", &curves)?;
    let windows: serde_json::Value = serde_json::Value::Object(
        maps.iter()
            .map(|m| {
                (
                    m.preset.label().to_string(),
                    serde_json::Value::Array(
                        m.windows
                            .runs
                            .iter()
                            .map(|r| serde_json::Value::String(r.label.label().into()))
                            .collect(),
                    ),
                )
            })
            .collect(),
    );
    println!("reproduced figure tables for {} presets", maps.len());
    Ok(serde_json::json!({ "presets": maps.len(), "windows": windows }))
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(preset) = &cli.preset {
        UserPreset::parse(preset)?;
        config.user = UserSection { preset: Some(preset.clone()), ..UserSection::default() };
    }
    if let Some(formats) = &cli.format {
        config.formats = formats.iter().map(|f| f.name().to_string()).collect();
    }
    match &cli.command {
        Command::Simulate { episodes: Some(n) } => config.episodes = *n,
        Command::Sensitivity { trials: Some(n) } => config.trials = *n,
        _ => {}
    }
    if config.episodes == 0 {
        return Err(CliError::Validation("episodes must be positive".into()));
    }

    let formats = config.formats()?;
    let mut outputs = Outputs::new(&cli.out, formats);
    let (name, results) = match &cli.command {
        Command::SolveUser => ("solve-user", cmd_solve_user(&config, &mut outputs)?),
        Command::Plan => ("plan", cmd_plan(&config, &mut outputs)?),
        Command::MinEffect => ("min-effect", cmd_min_effect(&config, &mut outputs)?),
        Command::Simulate { .. } => ("simulate", cmd_simulate(&config, &mut outputs)?),
        Command::Sensitivity { .. } => ("sensitivity", cmd_sensitivity(&config, &mut outputs)?),
        Command::ReproduceFigures => {
            ("reproduce-figures", cmd_reproduce_figures(&config, &mut outputs)?)
        }
    };
    let manifest_path = outputs.finish(name, &config, results)?;
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
