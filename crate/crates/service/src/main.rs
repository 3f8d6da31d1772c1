use std::path::PathBuf;

use axum::http::HeaderValue;
use clap::Parser;

use hwr_core::pipeline::{PipelineModel, Recognizer};
use hwr_service::{router, AppState, CorsOrigin};

#[derive(Parser)]
#[command(name = "hwr-service", version, about = "Recognition service for the writing pad")]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Model file; without one the service starts and answers 503.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "feedback-dir")]
    feedback_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when absent.
    #[arg(long = "cors-origin")]
    cors_origin: Option<String>,
}

fn load(path: &PathBuf) -> Result<Recognizer, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let model = PipelineModel::from_json(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Recognizer::new(model).map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() {
    let args = Args::parse();
    let recognizer = match args.model.as_ref().map(load).transpose() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    };
    let cors = match args.cors_origin.as_deref().map(HeaderValue::from_str).transpose() {
        Ok(Some(origin)) => CorsOrigin::Exact(origin),
        Ok(None) => CorsOrigin::Any,
        Err(e) => {
            eprintln!("usage error: bad --cors-origin: {e}");
            std::process::exit(2);
        }
    };
    let listener = match tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}:{}: {e}", args.host, args.port);
            std::process::exit(1);
        }
    };
    eprintln!("listening on {}", listener.local_addr().map_or_else(|_| "?".into(), |a| a.to_string()));
    let app = router(AppState::new(recognizer, args.feedback_dir), cors);
    if let Err(e) = axum::serve(listener, app).await {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
