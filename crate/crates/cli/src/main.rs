use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use proctm::harness::{
    aggregate, emit_report, exemplar_for, lint_corpus, load_corpus, load_entry, normalized_turtle, run_experiment,
    scores_json, write_run, CellStatus, Corpus, ExperimentSpec, HarnessError, ReportFormat,
};
use proctm::llm::{open_backend, BackendMode, LlmError, ProviderConfig};
use proctm::model::{validate, Plan, StepId};
use proctm::oracle::{
    answer_comparison, answer_count, answer_list, answer_nested, answer_sequence, ComparisonContext, CountMode,
    OracleAnswer,
};
use proctm::parser::{parse_document, parse_procedure, render_text, ParseConfig};
use proctm::prompt::{
    parse_response, render_answer, LearningSetting, OutputFormat, ParsedAnswer, PromptParams, PromptRequest,
    SettingKind, TemplateKind, Templates,
};
use proctm::rdf::{from_triples, read_rdfxml, read_turtle, to_triples, write_rdfxml, write_turtle};
use proctm::rouge::{render_percent, score_all, RougeReport, TokenizeConfig};

#[derive(Parser)]
#[command(
    name = "proctm",
    version,
    about = "Extract, query and evaluate procedures from manual text"
)]
struct Cli {
    /// TOML file with a [provider] table overriding LLM settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanFormat {
    Text,
    Turtle,
    Rdfxml,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an enumerated procedure and write it as text, Turtle or RDF/XML.
    Parse {
        #[arg(long = "in")]
        input: PathBuf,
        /// Procedure name; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum, default_value = "turtle")]
        format: PlanFormat,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one of the five question templates from a plan.
    Query {
        /// Text, Turtle (.ttl) or RDF/XML (.rdf, .xml) file.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        template: TemplateKind,
        /// Selects a procedure by name when the plan file holds several.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        step: Option<StepId>,
        /// Second context for the comparison template.
        #[arg(long)]
        plan2: Option<PathBuf>,
        #[arg(long, default_value = "main")]
        mode: CountMode,
    },
    /// ROUGE of a candidate file against a reference file.
    Score {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Keep IRIs and prefixed names as single tokens.
        #[arg(long)]
        ontology_mode: bool,
        /// Parse both files as Turtle and compare canonical serializations.
        #[arg(long)]
        normalized: bool,
    },
    /// Ask a model for the steps of one procedure in a manual.
    Extract {
        #[arg(long)]
        manual: PathBuf,
        #[arg(long)]
        procedure: String,
        #[arg(long, default_value = "raw")]
        setting: SettingKind,
        #[arg(long, default_value = "text")]
        format: OutputFormat,
        #[arg(long, default_value = "replay")]
        backend: BackendMode,
        #[arg(long)]
        cassette: Option<PathBuf>,
        /// Corpus entry directory used as a 2-shot exemplar; give two.
        #[arg(long = "exemplar")]
        exemplars: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment over a corpus and write scores and report.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "replay")]
        backend: BackendMode,
        #[arg(long)]
        cassette: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also print the report in this format.
        #[arg(long)]
        report_format: Option<ReportFormat>,
    },
}

/// Failure classes, one per exit code.
enum Failure {
    Io(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Data(m) | Failure::Backend(m) => m,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io { .. } => Failure::Io(e.to_string()),
            HarnessError::Backend(inner) => inner.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::FileWrite { .. } => Failure::Io(e.to_string()),
            other => Failure::Backend(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Data(format!("{context}: {e}"))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ConfigFile {
    provider: Option<ProviderConfig>,
}

fn load_provider(config: Option<&Path>, fallback: ProviderConfig) -> Result<ProviderConfig, Failure> {
    let Some(path) = config else { return Ok(fallback) };
    let file: ConfigFile = toml::from_str(&read(path)?).map_err(data(&path.display().to_string()))?;
    Ok(file.provider.unwrap_or(fallback))
}

/// Every plan in a text, Turtle or RDF/XML file.
fn load_plans(path: &Path) -> Result<Vec<Plan>, Failure> {
    let text = read(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let what = path.display().to_string();
    let plans = match ext {
        "ttl" => from_triples(&read_turtle(&text).map_err(data(&what))?).map_err(data(&what))?,
        "rdf" | "xml" | "owl" => from_triples(&read_rdfxml(&text).map_err(data(&what))?).map_err(data(&what))?,
        _ => {
            let plans = parse_document(&text, &ParseConfig::default()).map_err(data(&what))?;
            if plans.is_empty() {
                vec![parse_procedure(&text, &file_stem(path), &ParseConfig::default()).map_err(data(&what))?]
            } else {
                plans
            }
        }
    };
    if plans.is_empty() {
        return Err(Failure::Data(format!("{what}: no procedure found")));
    }
    Ok(plans)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn pick_plan(plans: Vec<Plan>, name: Option<&str>) -> Result<Plan, Failure> {
    match name {
        None => Ok(plans.into_iter().next().expect("load_plans returns at least one plan")),
        Some(name) => plans
            .into_iter()
            .find(|p| p.label == name)
            .ok_or_else(|| Failure::Data(format!("no procedure named {name:?}"))),
    }
}

fn cmd_parse(input: &Path, name: Option<String>, format: PlanFormat, out: Option<&Path>, json: bool) -> Outcome {
    let text = read(input)?;
    let name = name.unwrap_or_else(|| file_stem(input));
    let plan = parse_procedure(&text, &name, &ParseConfig::default()).map_err(data(&input.display().to_string()))?;
    let report = validate(&plan);
    if !report.is_valid() {
        return Err(Failure::Data(report.to_string()));
    }
    let rendered = if json {
        to_json(&plan)
    } else {
        match format {
            PlanFormat::Text => render_text(&plan),
            PlanFormat::Turtle => write_turtle(&to_triples(&plan).map_err(data("serialize"))?),
            PlanFormat::Rdfxml => write_rdfxml(&to_triples(&plan).map_err(data("serialize"))?),
        }
    };
    match out {
        Some(path) => write(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn query_answer(
    plans: Vec<Plan>,
    template: TemplateKind,
    name: Option<&str>,
    step: Option<StepId>,
    plan2: Option<&Path>,
    mode: CountMode,
) -> Result<OracleAnswer, Failure> {
    let need_step = || {
        step.clone()
            .ok_or_else(|| Failure::Data(format!("--step is required for {template}")))
    };
    let oracle = data("query");
    Ok(match template {
        TemplateKind::List => OracleAnswer::List(answer_list(&pick_plan(plans, name)?)),
        TemplateKind::Counting => OracleAnswer::Count(answer_count(&pick_plan(plans, name)?, mode)),
        TemplateKind::Nested => {
            OracleAnswer::Nested(answer_nested(&pick_plan(plans, name)?, &need_step()?).map_err(oracle)?)
        }
        TemplateKind::Sequence => {
            OracleAnswer::Sequence(answer_sequence(&pick_plan(plans, name)?, &need_step()?).map_err(oracle)?)
        }
        TemplateKind::Comparison => {
            let second = plan2.ok_or_else(|| Failure::Data("--plan2 is required for comparison".into()))?;
            let contexts = [
                ComparisonContext {
                    name: "Context1".into(),
                    plans,
                },
                ComparisonContext {
                    name: "Context2".into(),
                    plans: load_plans(second)?,
                },
            ];
            OracleAnswer::Comparison(answer_comparison(&contexts, mode).map_err(oracle)?)
        }
    })
}

fn render_query(answer: &OracleAnswer) -> String {
    match answer {
        OracleAnswer::Count(n) => format!("{n}\n"),
        OracleAnswer::List(items) => items
            .iter()
            .map(|i| format!("{}{}\n", "  ".repeat(i.depth), i.label))
            .collect(),
        other => {
            let text = render_answer(other, OutputFormat::PlainText);
            if text.ends_with('\n') {
                text
            } else {
                text + "\n"
            }
        }
    }
}

fn cmd_score(candidate: &Path, reference: &Path, ontology_mode: bool, normalized: bool, json: bool) -> Outcome {
    let mut cand = read(candidate)?;
    let mut refr = read(reference)?;
    if normalized {
        let canon = |text: &str, path: &Path| {
            normalized_turtle(text).ok_or_else(|| Failure::Data(format!("{}: not valid Turtle", path.display())))
        };
        cand = canon(&cand, candidate)?;
        refr = canon(&refr, reference)?;
    }
    let config = if ontology_mode || normalized {
        TokenizeConfig::ontology()
    } else {
        TokenizeConfig::default()
    };
    let report: RougeReport<f64> = score_all(&cand, &refr, &config);
    if json {
        print!("{}", to_json(&report));
    } else {
        println!("| Metric | Precision | Recall | F1 |");
        println!("|---|---|---|---|");
        for (name, s) in ["Rouge1", "Rouge2", "RougeL", "Rouge-Lsum"]
            .iter()
            .zip(report.metrics())
        {
            println!(
                "| {name} | {} | {} | {} |",
                render_percent(s.precision),
                render_percent(s.recall),
                render_percent(s.f1)
            );
        }
    }
    Ok(())
}

struct ExtractArgs {
    manual: PathBuf,
    procedure: String,
    setting: SettingKind,
    format: OutputFormat,
    backend: BackendMode,
    cassette: Option<PathBuf>,
    exemplars: Vec<PathBuf>,
    out: PathBuf,
}

fn exemplar_entry(dir: &Path) -> Result<proctm::harness::CorpusEntry, Failure> {
    let domain = dir
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Failure::Data(format!("{}: parent directory is not a domain", dir.display())))?;
    load_entry(domain, dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn cmd_extract(args: ExtractArgs, provider: &ProviderConfig, json: bool) -> Outcome {
    let manual = read(&args.manual)?;
    let templates = Templates::builtin();
    let setting = match args.setting {
        SettingKind::Raw => LearningSetting::Raw,
        SettingKind::OntologyDefinitions => LearningSetting::OntologyDefinitions,
        SettingKind::TwoShot => {
            let corpus = Corpus::default();
            let shot = |dir: &Path| -> Result<_, Failure> {
                Ok(exemplar_for(
                    &exemplar_entry(dir)?,
                    &corpus,
                    TemplateKind::List,
                    args.format,
                    templates,
                )?)
            };
            LearningSetting::two_shot(shot(&args.exemplars[0])?, shot(&args.exemplars[1])?)
        }
    };
    let request = PromptRequest {
        kind: TemplateKind::List,
        setting,
        format: args.format,
        context: manual,
        params: PromptParams {
            procedure_name: args.procedure.clone(),
            ..PromptParams::default()
        },
    };
    let mut messages = templates.build_prompt(&request).map_err(data("prompt"))?;
    let backend = open_backend(args.backend, provider, args.cassette.as_deref())?;
    let reply = backend.complete(&messages, provider)?;
    let text = reply.content.clone();
    messages.push(reply);

    write(&args.out.join("transcript.json"), &to_json(&messages))?;
    write(&args.out.join("reply.txt"), &text)?;
    let mut plan = match parse_response(TemplateKind::List, args.format, &text) {
        Ok(ParsedAnswer::List(plan)) => plan,
        Ok(_) => unreachable!("list replies parse to plans"),
        Err(e) => return Err(Failure::Data(format!("unparseable reply: {e}"))),
    };
    if plan.label.is_empty() {
        plan.label = args.procedure;
    }
    write(&args.out.join("plan.txt"), &render_text(&plan))?;
    let turtle = write_turtle(&to_triples(&plan).map_err(data("serialize"))?);
    write(&args.out.join("plan.ttl"), &turtle)?;
    if json {
        print!("{}", to_json(&plan));
    } else {
        print!("{}", render_text(&plan));
    }
    Ok(())
}

struct EvaluateArgs {
    corpus: PathBuf,
    spec: PathBuf,
    backend: BackendMode,
    cassette: Option<PathBuf>,
    out: PathBuf,
    report_format: Option<ReportFormat>,
}

fn cmd_evaluate(args: EvaluateArgs, config: Option<&Path>, json: bool) -> Outcome {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    spec.provider = load_provider(config, spec.provider)?;
    let corpus = load_corpus(&args.corpus)?;
    for d in &corpus.diagnostics {
        eprintln!("warning: skipped {d}");
    }
    let issues = lint_corpus(&corpus);
    if !issues.is_empty() {
        let listing: Vec<String> = issues.iter().map(|i| format!("  {}: {}", i.entry, i.message)).collect();
        return Err(Failure::Data(format!("corpus lint failed:\n{}", listing.join("\n"))));
    }
    let backend = open_backend(args.backend, &spec.provider, args.cassette.as_deref())?;
    let result = run_experiment(&spec, &corpus, backend.as_ref())?;
    let dir = write_run(&result, &args.out, &spec.report)?;

    let failed = result.cells.iter().filter(|c| c.status == CellStatus::Failed).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} cells failed; see {}",
            result.cells.len(),
            dir.join("report.md").display()
        );
    }
    log::info!(
        "{} conversations, {} messages",
        result.transcripts.len(),
        result.transcripts.iter().map(|t| t.messages.len()).sum::<usize>()
    );
    if let Some(format) = args.report_format {
        print!("{}", emit_report(&aggregate(&result.cells), format, &spec.report));
    } else if json {
        print!("{}", scores_json(&result));
    } else {
        println!("{}", dir.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Parse {
            input,
            name,
            format,
            out,
        } => cmd_parse(&input, name, format, out.as_deref(), cli.json),
        Command::Query {
            plan,
            template,
            name,
            step,
            plan2,
            mode,
        } => {
            let answer = query_answer(
                load_plans(&plan)?,
                template,
                name.as_deref(),
                step,
                plan2.as_deref(),
                mode,
            )?;
            if cli.json {
                print!("{}", to_json(&answer));
            } else {
                print!("{}", render_query(&answer));
            }
            Ok(())
        }
        Command::Score {
            candidate,
            reference,
            ontology_mode,
            normalized,
        } => cmd_score(&candidate, &reference, ontology_mode, normalized, cli.json),
        Command::Extract {
            manual,
            procedure,
            setting,
            format,
            backend,
            cassette,
            exemplars,
            out,
        } => {
            if setting == SettingKind::TwoShot && exemplars.len() != 2 {
                Cli::command()
                    .error(
                        clap::error::ErrorKind::MissingRequiredArgument,
                        "--setting 2shot needs exactly two --exemplar directories",
                    )
                    .exit();
            }
            let provider = load_provider(config, ProviderConfig::default())?;
            let args = ExtractArgs {
                manual,
                procedure,
                setting,
                format,
                backend,
                cassette,
                exemplars,
                out,
            };
            cmd_extract(args, &provider, cli.json)
        }
        Command::Evaluate {
            corpus,
            spec,
            backend,
            cassette,
            out,
            report_format,
        } => cmd_evaluate(
            EvaluateArgs {
                corpus,
                spec,
                backend,
                cassette,
                out,
                report_format,
            },
            config,
            cli.json,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
