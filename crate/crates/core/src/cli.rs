//! Pipeline stages over a run directory, and the command-line front end.
//!
//! Each stage reads the artifacts of earlier stages from the run directory and
//! writes only its own. `demo` runs every stage against simulators it starts
//! and stops itself.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Risk, SecurityRequirement, Threat, ThreatCatalogEntry};
use crate::bundled;
use crate::executor::{self, ExecContext, ExecTarget, ResultStore, Verdict};
use crate::item_model::{self, FingerprintReport, Item, ProbeConfig};
use crate::planner::{self, FuzzSettings, PlanContext, Planned, Policy, TestPlan};
use crate::reporter::{self, Format, TraceIndex};
use crate::scenario_dsl::{parse_scenario, serialize};
use crate::script_registry::Registry;
use crate::sut_sim::{SimConfig, SimEndpoint, SimServer};
use crate::tcg::{self, SutDatabase, TestCase};
use crate::vuln_scanner::{self, VulnDbEntry};

pub const RUN_DIR_ENV: &str = "VECUFORGE_RUN_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing {artifact}: run the `{stage}` stage first")]
    Missing { artifact: String, stage: &'static str },
    #[error("{0}")]
    Infra(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Missing { .. } => 2,
            CliError::Infra(_) => 3,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn infra(e: impl std::fmt::Display) -> CliError {
    CliError::Infra(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Item,
    Fingerprint,
    Analyze,
    Concept,
    Plan,
    Tcg,
    Execute,
    Report,
    Demo,
}

impl Stage {
    pub const PIPELINE: [Stage; 8] = [
        Stage::Item,
        Stage::Fingerprint,
        Stage::Analyze,
        Stage::Concept,
        Stage::Plan,
        Stage::Tcg,
        Stage::Execute,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Item => "item",
            Stage::Fingerprint => "fingerprint",
            Stage::Analyze => "analyze",
            Stage::Concept => "concept",
            Stage::Plan => "plan",
            Stage::Tcg => "tcg",
            Stage::Execute => "execute",
            Stage::Report => "report",
            Stage::Demo => "demo",
        }
    }

    /// Files and directories the stage owns in the run directory.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Item => &["item.json"],
            Stage::Fingerprint => &["fingerprint.json", "reconcile.json"],
            Stage::Analyze => &["threats.json", "risks.json"],
            Stage::Concept => &["requirements.json", "consistency.json"],
            Stage::Plan => &["plan.json", "scenarios"],
            Stage::Tcg => &["cases.json"],
            Stage::Execute => &["results"],
            Stage::Report => &["report.json", "report.txt"],
            Stage::Demo => &[],
        }
    }

    pub fn producing(artifact: &str) -> Option<Stage> {
        Stage::PIPELINE.into_iter().find(|s| s.artifacts().contains(&artifact))
    }
}

/// The run directory.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CliError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| infra(format!("cannot create run dir {}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.root.join(artifact)
    }

    pub fn write_text(&self, artifact: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(artifact);
        let tmp = self.root.join(format!(".{artifact}.tmp"));
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| infra(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize>(&self, artifact: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write_text(artifact, &text)
    }

    fn missing(artifact: &str) -> CliError {
        CliError::Missing {
            artifact: artifact.to_string(),
            stage: Stage::producing(artifact).map(Stage::name).unwrap_or("?"),
        }
    }

    pub fn read_text(&self, artifact: &str) -> Result<String, CliError> {
        let path = self.path(artifact);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Self::missing(artifact)),
            Err(e) => Err(infra(format!("cannot read {}: {e}", path.display()))),
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, artifact: &str) -> Result<T, CliError> {
        let text = self.read_text(artifact)?;
        serde_json::from_str(&text).map_err(|e| usage(format!("corrupt {artifact}: {e}")))
    }

    /// Empties (or creates) a directory artifact.
    pub fn reset_dir(&self, artifact: &str) -> Result<PathBuf, CliError> {
        let dir = self.path(artifact);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| infra(format!("cannot clear {}: {e}", dir.display())))?;
        }
        fs::create_dir_all(&dir).map_err(|e| infra(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn item(&self) -> Result<Item, CliError> {
        Item::from_json(&self.read_text("item.json")?).map_err(|e| usage(format!("corrupt item.json: {e}")))
    }

    pub fn planned(&self) -> Result<Planned, CliError> {
        let plan: TestPlan = self.read_json("plan.json")?;
        let dir = self.path("scenarios");
        let mut scenarios = Vec::with_capacity(plan.case_specs.len());
        for id in &plan.case_specs {
            let file = format!("scenarios/{id}.scn");
            let text = fs::read_to_string(dir.join(format!("{id}.scn"))).map_err(|_| Self::missing(&file).with_stage("plan"))?;
            scenarios.push(parse_scenario(&text).map_err(|e| usage(format!("{file}: {e}")))?);
        }
        Ok(Planned { plan, scenarios })
    }

    pub fn cases(&self) -> Result<CaseSet, CliError> {
        self.read_json("cases.json")
    }
}

impl CliError {
    fn with_stage(self, stage: &'static str) -> Self {
        match self {
            CliError::Missing { artifact, .. } => CliError::Missing { artifact, stage },
            other => other,
        }
    }
}

/// Output of the `tcg` stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSet {
    pub strength: usize,
    pub cases: Vec<TestCase>,
    /// Scenarios that produced no cases, with the reason.
    pub skipped: BTreeMap<String, String>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// Run directory holding every stage's artifacts.
    #[arg(long, env = RUN_DIR_ENV, default_value = "vecuforge-run", global = true)]
    pub run_dir: PathBuf,
    /// Item definition (JSON); the bundled sample item by default.
    #[arg(long, global = true)]
    pub item: Option<PathBuf>,
    /// Threat catalog (JSON).
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Countermeasure library (JSON).
    #[arg(long, global = true)]
    pub countermeasures: Option<PathBuf>,
    /// Attack-tree library (JSON).
    #[arg(long, global = true)]
    pub attack_trees: Option<PathBuf>,
    /// Vulnerability database (JSON).
    #[arg(long, global = true)]
    pub vulndb: Option<PathBuf>,
    /// SUT database with slots, domains and dictionaries (JSON).
    #[arg(long, global = true)]
    pub sutdb: Option<PathBuf>,
    /// Directory of test-script JSON files.
    #[arg(long, global = true)]
    pub scripts: Option<PathBuf>,
    /// Fuzzing seed.
    #[arg(long, default_value_t = 1, global = true)]
    pub seed: u64,
    /// Covering-array strength.
    #[arg(long, default_value_t = 2, global = true)]
    pub strength: usize,
    /// Fuzzing budget in frames.
    #[arg(long, default_value_t = 10_000, global = true)]
    pub budget: u64,
    /// Risk acceptance threshold.
    #[arg(long, default_value_t = analysis::DEFAULT_THRESHOLD, global = true)]
    pub threshold: u8,
    /// Running SUT as `data_host:port,mgmt_host:port`; a private simulator is started when absent.
    #[arg(long, global = true)]
    pub sim_endpoint: Option<String>,
    /// Overrides for started simulators, e.g. `vulns=off` or `v1=off,v3=off`.
    #[arg(long, global = true)]
    pub sim_config: Option<String>,
}

impl Options {
    /// Defaults with the given run directory.
    pub fn new(run_dir: impl Into<PathBuf>) -> Self {
        Self {
            run_dir: run_dir.into(),
            item: None,
            catalog: None,
            countermeasures: None,
            attack_trees: None,
            vulndb: None,
            sutdb: None,
            scripts: None,
            seed: 1,
            strength: 2,
            budget: 10_000,
            threshold: analysis::DEFAULT_THRESHOLD,
            sim_endpoint: None,
            sim_config: None,
        }
    }

    fn read_input(path: &Option<PathBuf>, bundled: &'static str) -> Result<String, CliError> {
        match path {
            Some(p) => fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display()))),
            None => Ok(bundled.to_string()),
        }
    }

    pub fn catalog(&self) -> Result<Vec<ThreatCatalogEntry>, CliError> {
        analysis::parse_catalog(&Self::read_input(&self.catalog, bundled::CATALOG)?).map_err(usage)
    }

    pub fn vulndb(&self) -> Result<Vec<VulnDbEntry>, CliError> {
        vuln_scanner::parse_vulndb(&Self::read_input(&self.vulndb, bundled::VULNDB)?).map_err(usage)
    }

    pub fn sutdb(&self) -> Result<SutDatabase, CliError> {
        SutDatabase::from_json(&Self::read_input(&self.sutdb, bundled::SUTDB)?).map_err(usage)
    }

    pub fn registry(&self) -> Result<Registry, CliError> {
        match &self.scripts {
            Some(dir) => Registry::open_dir(dir).map_err(usage),
            None => Ok(Registry::bundled()),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        SimConfig::default()
            .with_overrides(self.sim_config.as_deref().unwrap_or(""))
            .map_err(usage)
    }

    pub fn endpoint(&self) -> Result<Option<SimEndpoint>, CliError> {
        self.sim_endpoint
            .as_deref()
            .map(|s| SimEndpoint::parse(s).ok_or_else(|| usage(format!("bad --sim-endpoint `{s}`"))))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    /// 0 on success, 1 when failed findings exist.
    pub exit_code: i32,
    pub messages: Vec<String>,
}

impl StageOutcome {
    fn ok(message: String) -> Self {
        Self {
            exit_code: 0,
            messages: vec![message],
        }
    }
}

/// Runs `f` against the configured endpoint, or a simulator started for it.
fn with_sut<T>(opts: &Options, f: impl FnOnce(SimEndpoint) -> T) -> Result<T, CliError> {
    match opts.endpoint()? {
        Some(ep) => Ok(f(ep)),
        None => {
            let server = SimServer::spawn(opts.sim_config()?).map_err(|e| infra(format!("cannot start simulator: {e}")))?;
            let out = f(server.endpoint());
            server.shutdown();
            Ok(out)
        }
    }
}

fn stage_item(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let item = match &opts.item {
        Some(p) => item_model::load_item(p).map_err(usage)?,
        None => Item::from_json(bundled::ITEM).map_err(usage)?,
    };
    store.write_text("item.json", &item_model::serialize_item(&item))?;
    Ok(StageOutcome::ok(format!(
        "item: {} with {} functions, {} interfaces, {} goals",
        item.id,
        item.functions.len(),
        item.interfaces.len(),
        item.security_goals.len()
    )))
}

fn stage_fingerprint(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let item = store.item()?;
    let probe = ProbeConfig::default();
    let reports: Vec<FingerprintReport> = with_sut(opts, |ep| {
        item.external_interfaces()
            .map(|i| item_model::fingerprint_endpoint(i, ep, &probe))
            .collect::<Result<_, _>>()
    })?
    .map_err(infra)?;
    let mut reconciled = BTreeMap::new();
    for fp in &reports {
        reconciled.insert(fp.probed_interface.clone(), item_model::reconcile(&item, fp).map_err(usage)?);
    }
    store.write_json("fingerprint.json", &reports)?;
    store.write_json("reconcile.json", &reconciled)?;
    let n: usize = reconciled.values().map(Vec::len).sum();
    Ok(StageOutcome::ok(format!(
        "fingerprint: {} interfaces probed, {n} discrepancies with the item definition",
        reports.len()
    )))
}

fn stage_analyze(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let item = store.item()?;
    let catalog = opts.catalog()?;
    let threats = analysis::enumerate_threats(&item, &catalog);
    let risks = analysis::assess_with_defaults(&threats, &catalog, opts.threshold).map_err(usage)?;
    store.write_json("threats.json", &threats)?;
    store.write_json("risks.json", &risks)?;
    let unacceptable = risks.iter().filter(|r| !r.acceptable).count();
    Ok(StageOutcome::ok(format!(
        "analyze: {} threats, {unacceptable} with unacceptable risk",
        threats.len()
    )))
}

fn stage_concept(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let item = store.item()?;
    let threats: Vec<Threat> = store.read_json("threats.json")?;
    let risks: Vec<Risk> = store.read_json("risks.json")?;
    let library = analysis::parse_concept_library(&Options::read_input(&opts.countermeasures, bundled::COUNTERMEASURES)?)
        .map_err(usage)?;
    let mut pairs = Vec::new();
    for t in &threats {
        let r = risks
            .iter()
            .find(|r| r.threat_ref == t.id)
            .ok_or_else(|| usage(format!("risks.json has no entry for {}", t.id)))?;
        pairs.push((t.clone(), r.clone()));
    }
    let reqs = analysis::derive_requirements(&pairs, &library.countermeasures, &library.config);
    let consistency = analysis::check_consistency(&reqs, &item.security_goals, &item);
    store.write_json("requirements.json", &reqs)?;
    store.write_json("consistency.json", &consistency)?;
    Ok(StageOutcome::ok(format!(
        "concept: {} requirements, consistency {}",
        reqs.len(),
        if consistency.is_clean() { "clean" } else { "has gaps" }
    )))
}

fn stage_plan(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let item = store.item()?;
    let threats: Vec<Threat> = store.read_json("threats.json")?;
    let risks: Vec<Risk> = store.read_json("risks.json")?;
    let reqs: Vec<SecurityRequirement> = store.read_json("requirements.json")?;
    let trees = planner::parse_attack_trees(&Options::read_input(&opts.attack_trees, bundled::ATTACK_TREES)?).map_err(usage)?;
    let policy = Policy::default();
    let ctx = PlanContext {
        policy: &policy,
        attack_trees: &trees,
        fuzz: FuzzSettings {
            budget: opts.budget,
            seed: opts.seed,
            ..FuzzSettings::default()
        },
    };
    let planned = planner::build_plan(&item, &threats, &risks, &reqs, &ctx).map_err(usage)?;
    let dir = store.reset_dir("scenarios")?;
    for s in &planned.scenarios {
        let path = dir.join(format!("{}.scn", s.id));
        fs::write(&path, serialize(s)).map_err(|e| infra(format!("cannot write {}: {e}", path.display())))?;
    }
    store.write_json("plan.json", &planned.plan)?;
    Ok(StageOutcome::ok(format!("plan: {} scenarios", planned.scenarios.len())))
}

fn stage_tcg(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let planned = store.planned()?;
    let sutdb = opts.sutdb()?;
    let registry = opts.registry()?;
    let mut set = CaseSet {
        strength: opts.strength,
        ..CaseSet::default()
    };
    for s in &planned.scenarios {
        match tcg::generate_cases(s, &sutdb, &registry, opts.strength) {
            Ok(cs) => set.cases.extend(cs),
            Err(e) => {
                set.skipped.insert(s.id.clone(), e.to_string());
            }
        }
    }
    store.write_json("cases.json", &set)?;
    let mut msg = format!("tcg: {} cases from {} scenarios", set.cases.len(), planned.scenarios.len());
    if !set.skipped.is_empty() {
        msg.push_str(&format!(", {} scenarios without cases", set.skipped.len()));
    }
    Ok(StageOutcome::ok(msg))
}

fn stage_execute(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let set = store.cases()?;
    let ctx = ExecContext::new(store.item()?, opts.sutdb()?, opts.vulndb()?);
    let target = match opts.endpoint()? {
        Some(ep) => ExecTarget::Endpoint(ep),
        None => ExecTarget::Spawn(opts.sim_config()?),
    };
    let results_dir = store.reset_dir("results")?;
    let results_store = ResultStore::open(&results_dir).map_err(infra)?;
    let results = executor::execute_all(&set.cases, &target, &ctx, Some(&results_store));
    let count = |v: Verdict| results.iter().filter(|r| r.verdict == v).count();
    let (fail, error) = (count(Verdict::Fail), count(Verdict::Error));
    let unrestored = results
        .iter()
        .filter(|r| r.cleanup.as_ref().is_some_and(|c| !c.restored))
        .count();
    let mut messages = vec![format!(
        "execute: {} cases, {} pass, {fail} fail, {error} error, {} inconclusive",
        results.len(),
        count(Verdict::Pass),
        count(Verdict::Inconclusive)
    )];
    for r in results.iter().filter(|r| r.verdict == Verdict::Error) {
        messages.push(format!("  {}: {}", r.case_ref, r.error.as_deref().unwrap_or("")));
    }
    if unrestored > 0 {
        messages.push(format!("  {unrestored} cases left the SUT unrestored"));
    }
    let exit_code = if error > 0 || unrestored > 0 {
        3
    } else if fail > 0 {
        1
    } else {
        0
    };
    Ok(StageOutcome { exit_code, messages })
}

fn stage_report(opts: &Options, store: &RunStore) -> Result<StageOutcome, CliError> {
    let planned = store.planned()?;
    let set = store.cases()?;
    let item = store.item()?;
    let threats: Vec<Threat> = store.read_json("threats.json")?;
    let risks: Vec<Risk> = store.read_json("risks.json")?;
    let reqs: Vec<SecurityRequirement> = store.read_json("requirements.json")?;
    let trace = TraceIndex::new(&item.security_goals, &threats, &risks, &reqs, &opts.catalog()?, &opts.vulndb()?);
    let results = if store.path("results").is_dir() {
        ResultStore::open(store.path("results")).map_err(infra)?.all().map_err(usage)?
    } else {
        Vec::new()
    };
    let mut report = reporter::build_report(&planned, &set.cases, &results, &trace);
    for (scenario, reason) in &set.skipped {
        if let Some(u) = report.untested.iter_mut().find(|u| &u.case_ref == scenario) {
            u.detail = reason.clone();
        }
    }
    store.write_text("report.json", &reporter::render(&report, Format::Machine))?;
    store.write_text("report.txt", &reporter::render(&report, Format::Text))?;
    let d = report.dashboard;
    let mut messages = vec![format!(
        "report: pass {} fail {} error {} inconclusive {} untested {}",
        d.pass, d.fail, d.error, d.inconclusive, d.untested
    )];
    for f in report.failed() {
        messages.push(format!(
            "  FAIL {} severity {} ({} <- {})",
            f.case_ref,
            f.severity,
            f.links.requirement.join(","),
            f.links.goal.join(",")
        ));
    }
    Ok(StageOutcome {
        exit_code: i32::from(d.fail > 0),
        messages,
    })
}

fn stage_demo(opts: &Options) -> Result<StageOutcome, CliError> {
    let mut messages = Vec::new();
    let mut exit_code = 0;
    for stage in Stage::PIPELINE {
        let out = run_stage(stage, opts)?;
        messages.extend(out.messages);
        // execute reports infrastructure trouble with 3; a fail verdict is left to the report
        if stage == Stage::Execute && out.exit_code == 3 {
            exit_code = 3;
        }
        if stage == Stage::Report && exit_code == 0 {
            exit_code = out.exit_code;
        }
    }
    Ok(StageOutcome { exit_code, messages })
}

pub fn run_stage(stage: Stage, opts: &Options) -> Result<StageOutcome, CliError> {
    if stage == Stage::Demo {
        return stage_demo(opts);
    }
    let store = RunStore::open(&opts.run_dir)?;
    match stage {
        Stage::Item => stage_item(opts, &store),
        Stage::Fingerprint => stage_fingerprint(opts, &store),
        Stage::Analyze => stage_analyze(opts, &store),
        Stage::Concept => stage_concept(opts, &store),
        Stage::Plan => stage_plan(opts, &store),
        Stage::Tcg => stage_tcg(opts, &store),
        Stage::Execute => stage_execute(opts, &store),
        Stage::Report => stage_report(opts, &store),
        Stage::Demo => unreachable!(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "vecuforge", version, about = "Automotive security testing pipeline with a virtual ECU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate the item definition.
    Item,
    /// Enumerate the SUT's responding ids and services and compare with the item.
    Fingerprint,
    /// Enumerate threats and assess their risk.
    Analyze,
    /// Derive security requirements from unacceptable risks.
    Concept,
    /// Select test methods and generate scenarios.
    Plan,
    /// Bind scenarios to the SUT and generate test cases.
    Tcg,
    /// Run every test case.
    Execute,
    /// Build the test report.
    Report,
    /// Run every stage against a private simulator.
    Demo,
    /// Serve a simulator until interrupted.
    Sim,
}

fn serve_sim(opts: &Options) -> Result<StageOutcome, CliError> {
    let server = SimServer::spawn(opts.sim_config()?).map_err(|e| infra(format!("cannot start simulator: {e}")))?;
    println!("{}", server.endpoint());
    loop {
        std::thread::park();
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stage = match cli.command {
        Command::Item => Stage::Item,
        Command::Fingerprint => Stage::Fingerprint,
        Command::Analyze => Stage::Analyze,
        Command::Concept => Stage::Concept,
        Command::Plan => Stage::Plan,
        Command::Tcg => Stage::Tcg,
        Command::Execute => Stage::Execute,
        Command::Report => Stage::Report,
        Command::Demo => Stage::Demo,
        Command::Sim => {
            return match serve_sim(&cli.options) {
                Ok(_) => 0,
                Err(e) => {
                    eprintln!("vecuforge: {e}");
                    e.exit_code()
                }
            }
        }
    };
    match run_stage(stage, &cli.options) {
        Ok(out) => {
            for m in out.messages {
                println!("{m}");
            }
            out.exit_code
        }
        Err(e) => {
            eprintln!("vecuforge {}: {e}", stage.name());
            e.exit_code()
        }
    }
}
