mod config;
mod render;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use flowzero_core::bench::{
    all_cases, infer_case, injection_schedule, run_benchmark, score_case, BenchCase, BenchOptions,
    SimulatedPlanner, VerifierPolicy,
};
use flowzero_core::bundle::{emit_bundle, noise_file_name, write_tensor, BundleParams};
use flowzero_core::dss::{parse_dss, serialize_dss, DynamicSceneSyntax, ScenePrompt};
use flowzero_core::exec::Execution;
use flowzero_core::llm::{
    HttpClient, HttpConfig, LlmClient, LlmError, PromptTemplates, RecordingClient, ReplayClient,
    ScriptedClient,
};
use flowzero_core::mns::{generate_noise_sequence_with, plan_sequence, NoiseTensor};
use flowzero_core::refine::{RefinementTrace, Refiner};
use flowzero_core::verify::{evaluate_rules, feedback_from_checks, Task};

use config::{CliConfig, Settings, VerifierArg};

/// Bad invocation: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

enum Failure {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Pipeline(e)
    }
}

type Outcome = Result<(), Failure>;

/// Layout planning for zero-shot text-to-video: scene plans from an LLM,
/// refined with verification feedback, plus motion-shifted initial noise.
#[derive(Parser)]
#[command(name = "flowzero", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the LLM for a frame-by-frame scene plan
    Generate { prompt: String },
    /// Generate a plan and refine it with verification feedback
    Refine { prompt: String },
    /// Check a plan against the rules implied by its prompt
    Verify {
        dss: PathBuf,
        /// Prompt to derive the rules from instead of the plan's own
        #[arg(long, value_name = "PROMPT")]
        expect: Option<String>,
    },
    /// Write motion-shifted noise tensors for every frame of a plan
    Shift { dss: PathBuf },
    /// Write a conditioning bundle: plan, noise tensors and manifest
    Emit { dss: PathBuf },
    /// Draw every frame's layout as a PNG
    Render { dss: PathBuf },
    /// Score the four layout tasks with and without refinement
    Bench,
    /// Generate, refine, shift noise and emit a bundle in one go
    Pipeline { prompt: String },
}

const DEFAULT_PIPELINE_OUT: &str = "flowzero-out";

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let settings = cli.settings.with_config_file()?;
    let cfg = CliConfig::resolve(&settings)?;
    match cli.command {
        Command::Generate { prompt } => cmd_generate(&cfg, &prompt),
        Command::Refine { prompt } => cmd_refine(&cfg, &prompt),
        Command::Verify { dss, expect } => cmd_verify(&cfg, &dss, expect.as_deref()),
        Command::Shift { dss } => cmd_shift(&cfg, &dss),
        Command::Emit { dss } => cmd_emit(&cfg, &dss),
        Command::Render { dss } => cmd_render(&cfg, &dss),
        Command::Bench => cmd_bench(&cfg),
        Command::Pipeline { prompt } => cmd_pipeline(&cfg, &prompt),
    }
}

fn require_out(cfg: &CliConfig, cmd: &str) -> Result<PathBuf, Failure> {
    cfg.out
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{cmd} needs --out <DIR>")))
}

fn templates(cfg: &CliConfig) -> Result<PromptTemplates, Failure> {
    match &cfg.templates {
        Some(dir) => {
            PromptTemplates::load_dir(dir).map_err(|e| Failure::Usage(format!("templates: {e}")))
        }
        None => Ok(PromptTemplates::default()),
    }
}

fn live_client() -> Result<HttpClient, Failure> {
    let http = HttpConfig::from_env()
        .map_err(|e| Failure::Usage(format!("{e}; export it or pass --mock/--replay")))?;
    Ok(HttpClient::new(http))
}

fn make_client(cfg: &CliConfig) -> Result<Box<dyn LlmClient>, Failure> {
    let inner: Box<dyn LlmClient> = if let Some(path) = &cfg.mock {
        let text = fs::read_to_string(path).map_err(|e| {
            Failure::Usage(format!("cannot read mock script {}: {e}", path.display()))
        })?;
        Box::new(ScriptedClient::from_json(&text).map_err(|e| Failure::Usage(e.to_string()))?)
    } else if let Some(path) = &cfg.replay {
        Box::new(ReplayClient::open(path).map_err(|e| {
            Failure::Usage(format!("cannot read transcript {}: {e}", path.display()))
        })?)
    } else {
        Box::new(live_client()?)
    };
    match &cfg.record {
        Some(path) => Ok(Box::new(
            RecordingClient::create(inner, path)
                .with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Ok(inner),
    }
}

fn scene_prompt(cfg: &CliConfig, prompt: &str) -> Result<ScenePrompt, Failure> {
    ScenePrompt::new(prompt, cfg.num_frames).map_err(|e| Failure::Usage(e.to_string()))
}

/// The rule expectation local feedback needs; `None` in LLM mode.
fn local_case(cfg: &CliConfig, prompt: &str) -> Result<Option<BenchCase>, Failure> {
    use flowzero_core::refine::FeedbackMode;
    if cfg.refine.feedback_mode == FeedbackMode::Llm {
        return Ok(None);
    }
    infer_case(prompt).map(Some).ok_or_else(|| {
        Failure::Usage(format!(
            "--feedback local cannot derive rules from {prompt:?}; use --feedback llm"
        ))
    })
}

fn read_dss(path: &Path) -> Result<DynamicSceneSyntax, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_dss(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn noises_for(cfg: &CliConfig, dss: &DynamicSceneSyntax) -> anyhow::Result<Vec<NoiseTensor>> {
    let [h, w, c] = cfg.latent;
    let base = NoiseTensor::gaussian(h, w, c, cfg.noise.rng_seed)?;
    Ok(generate_noise_sequence_with(
        &base,
        &dss.motions(),
        &cfg.noise,
        Execution::default(),
    )?)
}

/// Everything a refinement run needs, resolved before any output is
/// written so usage errors leave no files behind.
struct RefineJob {
    scene: ScenePrompt,
    case: Option<BenchCase>,
    templates: PromptTemplates,
    client: Box<dyn LlmClient>,
}

impl RefineJob {
    fn prepare(cfg: &CliConfig, prompt: &str) -> Result<Self, Failure> {
        Ok(Self {
            scene: scene_prompt(cfg, prompt)?,
            case: local_case(cfg, prompt)?,
            templates: templates(cfg)?,
            client: make_client(cfg)?,
        })
    }

    fn run(&self, cfg: &CliConfig) -> Result<RefinementTrace, Failure> {
        let refiner = Refiner::new(self.client.as_ref(), &self.templates, cfg.refine)
            .with_settings(cfg.model.clone());
        Ok(refiner
            .run(&self.scene, self.case.as_ref())
            .context("refinement failed")?)
    }
}

fn trace_line(trace: &RefinementTrace) -> String {
    let best = trace.best_index();
    format!(
        "{} iteration(s), {}; selected iteration {} (confidence {})",
        trace.len(),
        match trace.terminal_reason {
            flowzero_core::refine::TerminalReason::Converged => "converged",
            flowzero_core::refine::TerminalReason::Exhausted => "exhausted",
        },
        best + 1,
        trace.iterations[best].feedback.confidence
    )
}

fn cmd_generate(cfg: &CliConfig, prompt: &str) -> Outcome {
    let scene = scene_prompt(cfg, prompt)?;
    let templates = templates(cfg)?;
    let client = make_client(cfg)?;
    let refiner =
        Refiner::new(client.as_ref(), &templates, cfg.refine).with_settings(cfg.model.clone());
    let dss = refiner.generate(&scene).context("generation failed")?;
    let text = serialize_dss(&dss);
    match &cfg.out {
        Some(out) => {
            let path = out.join("dss.json");
            write_file(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_refine(cfg: &CliConfig, prompt: &str) -> Outcome {
    let job = RefineJob::prepare(cfg, prompt)?;
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let trace = job.run(cfg)?;
    match &cfg.out {
        Some(out) => {
            trace.write_dir(out).context("writing trace")?;
            println!("{}", trace_line(&trace));
            println!("wrote {}", out.join("trace.json").display());
        }
        None => println!("{}", trace.to_json()),
    }
    Ok(())
}

fn cmd_verify(cfg: &CliConfig, path: &Path, expect: Option<&str>) -> Outcome {
    let dss = read_dss(path)?;
    let source = expect.unwrap_or(&dss.prompt().text).to_string();
    let case = infer_case(&source).ok_or_else(|| {
        Failure::Usage(format!(
            "cannot derive rules from {source:?}; pass --expect with a prompt naming a movement, size change, visibility or several objects"
        ))
    })?;
    let checks = evaluate_rules(&dss, &case, &cfg.refine.rules);
    let doc = serde_json::json!({
        "expectation": case.expectation,
        "report": score_case(&case, &dss, &cfg.refine.rules),
        "checks": checks,
        "feedback": feedback_from_checks(&checks),
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    match &cfg.out {
        Some(out) => {
            let path = out.join("verify.json");
            write_file(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_shift(cfg: &CliConfig, path: &Path) -> Outcome {
    let out = require_out(cfg, "shift")?;
    let dss = read_dss(path)?;
    let noises = noises_for(cfg, &dss)?;
    for (i, t) in noises.iter().enumerate() {
        let file = out.join(noise_file_name(i));
        if let Some(parent) = file.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        write_tensor(&file, t, cfg.dtype).with_context(|| format!("writing {}", file.display()))?;
    }
    let info = plan_sequence(&dss.motions(), &cfg.noise);
    write_file(
        &out.join("frames.json"),
        &serde_json::to_string_pretty(&info).expect("frame info serializes"),
    )?;
    println!(
        "wrote {} noise tensors to {}",
        noises.len(),
        out.join("noise").display()
    );
    Ok(())
}

fn cmd_emit(cfg: &CliConfig, path: &Path) -> Outcome {
    let out = require_out(cfg, "emit")?;
    let dss = read_dss(path)?;
    let noises = noises_for(cfg, &dss)?;
    emit_bundle(&dss, &noises, &out, &bundle_params(cfg)).context("writing bundle")?;
    println!("wrote bundle to {}", out.display());
    Ok(())
}

fn bundle_params(cfg: &CliConfig) -> BundleParams {
    BundleParams {
        noise: cfg.noise,
        dtype: cfg.dtype,
    }
}

fn cmd_render(cfg: &CliConfig, path: &Path) -> Outcome {
    let out = require_out(cfg, "render")?;
    let dss = read_dss(path)?;
    let files = render::render_all(&dss, &out, cfg.canvas)?;
    println!("wrote {} frames to {}", files.len(), out.display());
    Ok(())
}

fn transcript_name(case: &BenchCase, index: usize) -> String {
    format!("{}_{index:03}.jsonl", case.task.as_str())
}

fn cmd_bench(cfg: &CliConfig) -> Outcome {
    if cfg.mock.is_some() {
        return Err(Failure::Usage(
            "bench takes --simulate or --replay <DIR>, not --mock".into(),
        ));
    }
    let opts = BenchOptions {
        cases_per_task: cfg.cases,
        seed: cfg.noise.rng_seed,
        num_frames: cfg.num_frames,
        tasks: Task::ALL.to_vec(),
        concurrency: cfg.concurrency,
        execution: Execution::default(),
        templates: templates(cfg)?,
        settings: cfg.model.clone(),
    };
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let transcripts = cfg.out.as_ref().map(|o| o.join("transcripts"));
    let record = |inner: Box<dyn LlmClient>,
                  case: &BenchCase,
                  i: usize|
     -> Result<Box<dyn LlmClient>, LlmError> {
        match &transcripts {
            Some(dir) => Ok(Box::new(RecordingClient::create(
                inner,
                dir.join(transcript_name(case, i)),
            )?)),
            None => Ok(inner),
        }
    };

    let result = if cfg.simulate {
        let cases: Vec<BenchCase> = all_cases(&opts).into_iter().map(|(_, c)| c).collect();
        let faults = injection_schedule(&cases, cfg.error_rate, opts.seed);
        let policy = match cfg.verifier {
            VerifierArg::Strict => VerifierPolicy::Strict(2),
            VerifierArg::Graded => VerifierPolicy::Graded,
        };
        let factory = |case: &BenchCase, i: usize| {
            let k = cases
                .iter()
                .position(|c| c == case)
                .ok_or_else(|| LlmError::Config("unknown case".into()))?;
            let planner = SimulatedPlanner::new(case.clone(), opts.num_frames, faults[k].clone())
                .with_policy(policy);
            record(Box::new(planner), case, i)
        };
        run_benchmark(&factory, &cfg.refine, &opts)
    } else if let Some(dir) = &cfg.replay {
        if !dir.is_dir() {
            return Err(Failure::Usage(format!(
                "bench --replay expects a transcript directory, got {}",
                dir.display()
            )));
        }
        let factory = |case: &BenchCase, i: usize| -> Result<Box<dyn LlmClient>, LlmError> {
            Ok(Box::new(ReplayClient::open(
                &dir.join(transcript_name(case, i)),
            )?))
        };
        run_benchmark(&factory, &cfg.refine, &opts)
    } else {
        let http = HttpConfig::from_env()
            .map_err(|e| Failure::Usage(format!("{e}; export it or pass --simulate/--replay")))?;
        let factory =
            |case: &BenchCase, i: usize| record(Box::new(HttpClient::new(http.clone())), case, i);
        run_benchmark(&factory, &cfg.refine, &opts)
    };

    let table = result.render_table();
    print!("{table}");
    let failed = result.outcomes.iter().filter(|o| o.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} case(s) failed to run; see bench.json");
    }
    if let Some(out) = &cfg.out {
        write_file(&out.join("table.txt"), &table)?;
        write_file(&out.join("bench.json"), &result.to_json())?;
        write_file(&out.join("reports.jsonl"), &result.reports_jsonl())?;
        println!("wrote results to {}", out.display());
    }
    Ok(())
}

fn cmd_pipeline(cfg: &CliConfig, prompt: &str) -> Outcome {
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_PIPELINE_OUT));
    let job = RefineJob::prepare(cfg, prompt)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let probe = out.join(".write-check");
    fs::write(&probe, b"").with_context(|| format!("{} is not writable", out.display()))?;
    let _ = fs::remove_file(&probe);

    let trace = job.run(cfg)?;
    let trace_dir = out.join("trace");
    trace.write_dir(&trace_dir).context("writing trace")?;

    let selected = trace.best();
    let dss = &selected.dss;
    let noises = noises_for(cfg, dss)?;
    let bundle_dir = out.join("bundle");
    let manifest =
        emit_bundle(dss, &noises, &bundle_dir, &bundle_params(cfg)).context("writing bundle")?;

    let mut summary = String::new();
    let _ = writeln!(summary, "prompt: {prompt}");
    let _ = writeln!(summary, "frames: {}", dss.num_frames());
    let _ = writeln!(summary, "refinement: {}", trace_line(&trace));
    let _ = writeln!(summary, "objects: {}", dss.object_names().join(", "));
    let _ = writeln!(summary, "background motion:");
    for info in &manifest.frames {
        let offset = match (info.offset, info.phase_magnitude) {
            (Some([x, y]), _) => format!("shift ({x:+.2}, {y:+.2}) px"),
            (None, Some(m)) => format!("phase jitter {m:.3} rad"),
            (None, None) => "base noise".to_string(),
        };
        let _ = writeln!(
            summary,
            "  frame {}: {} at speed {:.2}, {offset}",
            info.frame + 1,
            info.direction,
            info.speed
        );
    }
    let [h, w, c] = manifest.latent_shape;
    let _ = writeln!(
        summary,
        "latent: {h}x{w}x{c}, pixel scale {}",
        manifest.pixel_scale
    );
    let _ = writeln!(summary, "trace: {}", trace_dir.display());
    let _ = writeln!(summary, "bundle: {}", bundle_dir.display());
    write_file(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
