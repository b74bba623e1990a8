use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod inputs;
mod manifest;
mod settings;

#[derive(Parser, Debug)]
#[command(name = "curvebind", version, about = "Curvature-aware protein-ligand blind docking")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Worker threads for per-complex work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Run everything serially, ignoring --jobs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Seed for initialization, shuffling and noise.
    #[arg(long, global = true, env = "CURVEBIND_SEED")]
    pub seed: Option<u64>,
}

impl GlobalArgs {
    pub fn effective_jobs(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.jobs
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and normalize complex documents into a dataset index.
    Ingest(commands::IngestArgs),
    /// Edge curvature and per-node curvature statistics as TSV.
    Curvature(commands::CurvatureArgs),
    /// Node feature matrices for each complex.
    Featurize(commands::FeaturizeArgs),
    /// Fit a model and write a checkpoint and a per-step log.
    Train(commands::TrainArgs),
    /// Predict pockets and poses with a checkpoint.
    Dock(commands::DockArgs),
    /// Score predicted poses against reference ligands.
    Eval(commands::EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Write ligand, protein and cross graphs as JSON.
    DumpGraph(commands::DumpGraphArgs),
}

/// Raised when a gradient check completes with failing blocks.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gradient check failed in {} block(s)", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use curvebind::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<GradcheckFailed>().is_some() {
            return (3, "gradcheck");
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Divergence(_) => (3, "divergence"),
                E::Io(_) => (4, "io"),
                E::Parse { .. } => (2, "parse"),
                E::Format(_) | E::Json(_) => (2, "format"),
                E::MissingEmbedding(_) => (2, "missing_embedding"),
                E::Shape(_) => (2, "shape"),
                E::Checkpoint(_) => (2, "checkpoint"),
                E::Untrainable(_) => (2, "untrainable"),
                E::Empty(_) => (2, "empty"),
                _ => (2, "validation"),
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (4, "io");
        }
    }
    (2, "validation")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let g = &cli.global;
    let result = if g.jobs == 0 {
        Err(anyhow::anyhow!("--jobs must be at least 1"))
    } else {
        // A second initialization can only fail if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(g.effective_jobs())
            .build_global();
        match &cli.command {
            Command::Ingest(a) => commands::ingest(g, a, &argv),
            Command::Curvature(a) => commands::curvature(g, a, &argv),
            Command::Featurize(a) => commands::featurize(g, a, &argv),
            Command::Train(a) => commands::train(g, a, &argv),
            Command::Dock(a) => commands::dock(g, a, &argv),
            Command::Eval(a) => commands::eval(g, a, &argv),
            Command::Gradcheck(a) => commands::gradcheck(g, a, &argv),
            Command::DumpGraph(a) => commands::dump_graph(g, a, &argv),
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let body = serde_json::json!({
                "error": { "kind": kind, "message": format!("{err:#}"), "exit_code": code }
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
