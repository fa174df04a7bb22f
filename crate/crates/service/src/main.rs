use clap::{Parser, ValueEnum};
use color_mapper::{rgb_from_u8, RemoteConfig, Rgb};
use color_mapper_service::{router, spawn_eviction, AppState, BackendChoice, ServiceConfig};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Simulator,
    Remote,
}

/// HTTP service for calibrating color mappers and editing images with them.
#[derive(Debug, Parser)]
#[command(name = "color-mapper-service", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "COLOR_MAPPER_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Generator to run against.
    #[arg(long, env = "COLOR_MAPPER_BACKEND", value_enum, default_value = "simulator")]
    backend: BackendKind,
    /// Base URL of the remote generator.
    #[arg(long, env = "COLOR_MAPPER_BACKEND_URL")]
    backend_url: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long, env = "COLOR_MAPPER_BACKEND_TIMEOUT", default_value_t = 120.0)]
    timeout: f64,
    /// Simulator color at the first endpoint, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb, default_value = "140,191,242")]
    sim_color0: Rgb,
    /// Simulator color at the second endpoint, R,G,B in 0-255.
    #[arg(long, value_parser = parse_rgb, default_value = "13,26,115")]
    sim_color1: Rgb,
    /// Simulator curve exponent.
    #[arg(long, default_value_t = 2.2)]
    sim_gamma: f64,
    /// Seconds a session may sit unused before it is dropped.
    #[arg(long, env = "COLOR_MAPPER_IDLE_TIMEOUT", default_value_t = 3600)]
    idle_timeout: u64,
    /// Directory of built UI assets to serve at `/`.
    #[arg(long, env = "COLOR_MAPPER_STATIC_DIR")]
    static_dir: Option<PathBuf>,
}

fn parse_rgb(text: &str) -> Result<Rgb, String> {
    let channels = text
        .split(',')
        .map(|p| p.trim().parse::<i64>().map_err(|_| format!("channel {p:?} is not an integer")))
        .collect::<Result<Vec<_>, _>>()?;
    match channels[..] {
        [r, g, b] => rgb_from_u8(r, g, b).map_err(|e| e.to_string()),
        _ => Err(format!("expected R,G,B, got {text:?}")),
    }
}

fn backend(args: &Args) -> Result<BackendChoice, String> {
    match args.backend {
        BackendKind::Simulator => Ok(BackendChoice::Simulator {
            color0: args.sim_color0,
            color1: args.sim_color1,
            gamma: args.sim_gamma,
        }),
        BackendKind::Remote => {
            let url = args
                .backend_url
                .clone()
                .ok_or("--backend remote needs --backend-url or COLOR_MAPPER_BACKEND_URL")?;
            if !(args.timeout.is_finite() && args.timeout > 0.0) {
                return Err(format!("--timeout must be positive, got {}", args.timeout));
            }
            let mut config = RemoteConfig::new(url);
            config.timeout = Duration::from_secs_f64(args.timeout);
            BackendChoice::remote(config).map_err(|e| e.to_string())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let level = record.level().as_str().to_lowercase();
            let level = if level == "warn" { "warning".to_string() } else { level };
            writeln!(buf, "{level}: {}", record.args())
        })
        .init();

    let backend = match backend(&args) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let state = AppState::new(ServiceConfig {
        backend,
        idle_timeout: Duration::from_secs(args.idle_timeout.max(1)),
        static_dir: args.static_dir.clone(),
    });
    spawn_eviction(state.clone());
    let listener = match tokio::net::TcpListener::bind(args.bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.bind);
            return ExitCode::from(1);
        }
    };
    log::info!("listening on http://{}", args.bind);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
