//! Teleoperation service: session state, wire records and the HTTP and
//! websocket server.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{parse_command, Command, Heatmap, ServerMessage, StateMessage};
pub use server::{router, serve, serve_listener, AppState, PORT_ENV};
pub use session::{read_log, replay_log, replay_positions, LogRecord, Session, GRASP_RADIUS, HEATMAP_CELLS};
