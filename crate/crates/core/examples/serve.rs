//! Runs the teleoperation service with MaxEnt assistance on the default
//! scene. Connect a websocket client to `ws://127.0.0.1:<port>/ws` and send
//! `{"type":"command","dir":[1,0,0]}` to drive the end-effector.
//! The port comes from `RT_PORT` (default 8080).

use std::net::SocketAddr;

use robot_trajectron::control::{AssistMode, ControllerConfig};
use robot_trajectron::scene::Scene;
use robot_trajectron::service::{serve, AppState, Session, PORT_ENV};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().init();
    let port: u16 = std::env::var(PORT_ENV).ok().and_then(|p| p.parse().ok()).unwrap_or(8080);
    let session = Session::new(Scene::default(), ControllerConfig::default(), AssistMode::MaxentAssist, None)?;
    let state = AppState::new(session, None)?;
    serve(state, SocketAddr::from(([127, 0, 0, 1], port))).await?;
    Ok(())
}
