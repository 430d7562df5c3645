//! Sandbox server: a 60 Hz pipeline thread steered by client pose commands,
//! broadcasting every tick over `/ws`, with the UI's static files at `/`.
//!
//! The pipeline never waits on clients. Ticks go into a bounded broadcast
//! channel; a client that falls behind skips the oldest messages.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use palmpipe_core::cnn::{load_checkpoint, ModelParams};
use palmpipe_core::downsample::FusionMode;
use palmpipe_core::kinematics::KinematicsConfig;
use palmpipe_core::pipeline::{Clock, FrameSource, Pipeline, PipelineMode, Pose, RealClock, SyntheticSource, TICK_RATE_HZ};
use palmpipe_core::sensor::SimConfig;
use palmpipe_core::types::{AngleClass, PositionClass, TactileFrame};
use tokio::sync::{broadcast, Notify};
use tower_http::services::ServeDir;

use crate::args::ServeArgs;
use crate::settings::{pick, Settings};
use crate::wire::{error_message, PoseCommand, TickMessage};

/// Messages buffered per client before the oldest are skipped.
const CLIENT_BACKLOG: usize = 16;

pub struct ServeConfig {
    pub addr: SocketAddr,
    pub assets: PathBuf,
    pub model: Option<ModelParams>,
    pub sim: SimConfig,
    pub seed: u64,
    pub fusion: FusionMode,
    pub kinematics: KinematicsConfig,
}

#[derive(Clone)]
struct AppState {
    control: Arc<Mutex<PoseCommand>>,
    ticks: broadcast::Sender<Utf8Bytes>,
    has_model: bool,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    ticks: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    notify: Arc<Notify>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    ticker: std::thread::JoinHandle<Result<()>>,
}

impl ServerHandle {
    /// Pipeline ticks so far, whether or not anyone is listening.
    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::Relaxed)
    }

    pub async fn shutdown(self) -> Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        self.notify.notify_one();
        self.server.await??;
        self.ticker.join().map_err(|_| anyhow::anyhow!("pipeline thread panicked"))??;
        Ok(())
    }
}

fn initial_command() -> PoseCommand {
    PoseCommand {
        pose: Pose { angle: AngleClass::Deg0, position: PositionClass::Center, grip_step: 0 },
        mode: PipelineMode::Direct,
    }
}

/// Binds, starts the pipeline thread and begins serving.
pub async fn start(cfg: ServeConfig) -> Result<ServerHandle> {
    let listener = tokio::net::TcpListener::bind(cfg.addr)
        .await
        .with_context(|| format!("binding {}", cfg.addr))?;
    let addr = listener.local_addr()?;
    if !cfg.assets.is_dir() {
        log::warn!("asset directory {} not found; only /ws is available", cfg.assets.display());
    }

    let control = Arc::new(Mutex::new(initial_command()));
    let (tx, _) = broadcast::channel(CLIENT_BACKLOG);
    let state = AppState { control: control.clone(), ticks: tx.clone(), has_model: cfg.model.is_some() };

    let stop = Arc::new(AtomicBool::new(false));
    let ticks = Arc::new(AtomicU64::new(0));
    let ticker = {
        let pipe = Pipeline::new(cfg.model, cfg.fusion, cfg.kinematics)?;
        let pose_control = control.clone();
        let source = SyntheticSource::new(cfg.sim, cfg.seed, move |_| pose_control.lock().unwrap().pose)?;
        let (stop, ticks) = (stop.clone(), ticks.clone());
        std::thread::Builder::new()
            .name("pipeline".into())
            .spawn(move || tick_loop(pipe, source, control, tx, stop, ticks))?
    };

    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .fallback_service(ServeDir::new(&cfg.assets))
        .with_state(state);
    let notify = Arc::new(Notify::new());
    let shutdown = notify.clone();
    let server = tokio::spawn(async move {
        axum::serve(listener, app).with_graceful_shutdown(async move { shutdown.notified().await }).await
    });
    Ok(ServerHandle { addr, ticks, stop, notify, server, ticker })
}

fn tick_loop(
    mut pipe: Pipeline,
    mut source: impl FrameSource,
    control: Arc<Mutex<PoseCommand>>,
    tx: broadcast::Sender<Utf8Bytes>,
    stop: Arc<AtomicBool>,
    ticks: Arc<AtomicU64>,
) -> Result<()> {
    let period = 1.0 / TICK_RATE_HZ;
    let mut clock = RealClock::new();
    let mut last = TactileFrame::zero(0.0);
    let mut deadline = 0.0;
    while !stop.load(Ordering::Relaxed) {
        clock.sleep_until(deadline);
        let now = clock.now();
        if now - deadline > period {
            log::warn!("tick {} started {:.2} ms late", pipe.ticks(), (now - deadline) * 1e3);
            deadline = now;
        }
        if let Some(f) = source.poll(now)?.frame {
            last = f;
        }
        let mode = control.lock().unwrap().mode;
        let snap = pipe.tick(&last, mode)?;
        let text = serde_json::to_string(&TickMessage::from(&snap))?;
        // No receivers is fine: the server only observes the loop.
        let _ = tx.send(text.into());
        ticks.fetch_add(1, Ordering::Relaxed);
        deadline += period;
    }
    Ok(())
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut ticks = state.ticks.subscribe();
    loop {
        tokio::select! {
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    if let Err(e) = apply(&state, &text) {
                        if sink.send(Message::Text(error_message(&e).into())).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    if sink.send(Message::Text(error_message("expected a text message").into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
            tick = ticks.recv() => match tick {
                Ok(text) => {
                    if sink.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("client skipped {n} ticks"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
}

fn apply(state: &AppState, text: &str) -> Result<(), String> {
    let cmd = PoseCommand::parse(text)?;
    if cmd.mode != PipelineMode::Direct && !state.has_model {
        return Err("masked mode unavailable: server started without a checkpoint".into());
    }
    *state.control.lock().unwrap() = cmd;
    Ok(())
}

pub fn serve_blocking(a: ServeArgs, s: &Settings, out: &mut dyn Write) -> Result<()> {
    let port = pick(a.port, s.port, 8080);
    let addr: SocketAddr = format!("{}:{port}", a.host)
        .parse()
        .map_err(|e| crate::UsageError(format!("--host {}: {e}", a.host)))?;
    let sim = SimConfig { noise_sigma: pick(a.noise, s.noise, SimConfig::default().noise_sigma), ..Default::default() };
    sim.validate().map_err(|e| crate::UsageError(e.to_string()))?;
    let model = match &a.ckpt {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let cfg = ServeConfig {
        addr,
        assets: a.assets,
        model,
        sim,
        seed: pick(a.seed, s.seed, 0),
        fusion: s.fusion,
        kinematics: s.kinematics.clone(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = start(cfg).await?;
        writeln!(out, "listening on http://{} (WebSocket at /ws); Ctrl-C to stop", handle.addr)?;
        out.flush()?;
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await
    })
}
