//! Environment sessions over a local stream socket.
//!
//! Frames are a 4-byte big-endian length followed by that many bytes of UTF-8
//! JSON. The server speaks first with a `hello`; the client then sends `reset`,
//! `step` and `close` requests with strictly increasing ids, each answered by
//! exactly one reply. A malformed or rejected request gets an `error` reply
//! and the session ends. See `docs/bridge-protocol.md`.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvReply, EnvSetup, MultiPathEnv, StepInfo};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("server error: {0}")]
    Remote(String),
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Reset {
        id: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Step {
        id: u64,
        action: usize,
    },
    Close {
        id: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Self::Reset { id, .. } | Self::Step { id, .. } | Self::Close { id } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub action_space: String,
    pub obs_len: usize,
    pub n_actions: usize,
    pub mask_len: usize,
    pub paths: usize,
    pub window: usize,
    pub levels: usize,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reply {
    Hello(Hello),
    ObsReply {
        id: u64,
        obs: Vec<f64>,
        mask: Vec<bool>,
        reward: f64,
        done: bool,
        info: StepInfo,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
    Closed {
        id: u64,
    },
}

pub fn write_frame<W: Write>(out: &mut W, payload: &[u8]) -> Result<(), BridgeError> {
    if payload.len() > MAX_FRAME_BYTES {
        return Err(BridgeError::FrameTooLarge(payload.len()));
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(payload);
    out.write_all(&frame)?;
    out.flush()?;
    Ok(())
}

/// Next frame, or `None` if the peer closed the stream between frames.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Vec<u8>>, BridgeError> {
    let mut len = [0u8; 4];
    match input.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(BridgeError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn send<W: Write, T: Serialize>(out: &mut W, message: &T) -> Result<(), BridgeError> {
    let bytes = serde_json::to_vec(message).map_err(|e| BridgeError::Malformed(e.to_string()))?;
    write_frame(out, &bytes)
}

pub fn hello_for(env: &MultiPathEnv) -> Hello {
    let setup = env.setup();
    Hello {
        version: PROTOCOL_VERSION,
        action_space: setup.action_space().kind.to_string(),
        obs_len: env.observation_len(),
        n_actions: env.num_actions(),
        mask_len: env.num_actions(),
        paths: setup.layout().paths,
        window: setup.layout().window,
        levels: setup.layout().levels,
    }
}

fn obs_reply(id: u64, r: EnvReply) -> Reply {
    Reply::ObsReply {
        id,
        obs: r.obs,
        mask: r.mask,
        reward: r.reward,
        done: r.done,
        info: r.info,
    }
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEnd {
    Closed,
    Disconnected,
    ProtocolError(String),
}

/// Runs one session on an already-connected stream.
pub fn serve_session<S: Read + Write>(
    stream: &mut S,
    setup: Arc<EnvSetup>,
) -> Result<SessionEnd, BridgeError> {
    let mut env = MultiPathEnv::new(setup);
    send(stream, &Reply::Hello(hello_for(&env)))?;
    let mut last_id: Option<u64> = None;
    loop {
        let Some(frame) = read_frame(stream)? else {
            return Ok(SessionEnd::Disconnected);
        };
        let request: Request = match serde_json::from_slice(&frame) {
            Ok(r) => r,
            Err(e) => return fail(stream, None, format!("malformed request: {e}")),
        };
        let id = request.id();
        if last_id.is_some_and(|last| id <= last) {
            return fail(
                stream,
                Some(id),
                format!("id {id} does not increase (last {})", last_id.unwrap_or(0)),
            );
        }
        last_id = Some(id);
        let result = match request {
            Request::Reset { seed, .. } => env.reset(seed),
            Request::Step { action, .. } => env.step(action),
            Request::Close { .. } => {
                send(stream, &Reply::Closed { id })?;
                return Ok(SessionEnd::Closed);
            }
        };
        match result {
            Ok(reply) => send(stream, &obs_reply(id, reply))?,
            Err(e) => return fail(stream, Some(id), e.to_string()),
        }
    }
}

fn fail<S: Write>(stream: &mut S, id: Option<u64>, message: String) -> Result<SessionEnd, BridgeError> {
    log::warn!("bridge session error: {message}");
    send(stream, &Reply::Error { id, message: message.clone() })?;
    Ok(SessionEnd::ProtocolError(message))
}

/// TCP listener handing each connection its own environment and thread.
pub struct BridgeServer {
    listener: TcpListener,
    setup: Arc<EnvSetup>,
}

impl BridgeServer {
    pub fn bind<A: ToSocketAddrs>(addr: A, setup: Arc<EnvSetup>) -> Result<Self, BridgeError> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            setup,
        })
    }

    pub fn local_addr(&self) -> Result<std::net::SocketAddr, BridgeError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until `max_sessions` have been accepted (forever
    /// when `None`), then waits for the open sessions to end.
    pub fn serve(self, max_sessions: Option<usize>) -> Result<(), BridgeError> {
        let mut handles = Vec::new();
        for (i, stream) in self.listener.incoming().enumerate() {
            let mut stream = stream?;
            stream.set_nodelay(true)?;
            let setup = Arc::clone(&self.setup);
            handles.push(thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                match serve_session(&mut stream, setup) {
                    Ok(end) => log::info!("session {peer:?} ended: {end:?}"),
                    Err(e) => log::warn!("session {peer:?} failed: {e}"),
                }
            }));
            if max_sessions.is_some_and(|m| i + 1 >= m) {
                break;
            }
        }
        for h in handles {
            let _ = h.join();
        }
        Ok(())
    }
}

/// Minimal client, mostly for tests and Rust-side tooling.
pub struct BridgeClient {
    stream: TcpStream,
    next_id: u64,
    hello: Hello,
}

impl BridgeClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, BridgeError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let hello = match Self::receive(&mut stream)? {
            Reply::Hello(h) => h,
            other => return Err(BridgeError::Unexpected(format!("{other:?}"))),
        };
        Ok(Self {
            stream,
            next_id: 1,
            hello,
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Result<EnvReply, BridgeError> {
        let id = self.take_id();
        self.call(Request::Reset { id, seed })
    }

    pub fn step(&mut self, action: usize) -> Result<EnvReply, BridgeError> {
        let id = self.take_id();
        self.call(Request::Step { id, action })
    }

    pub fn close(mut self) -> Result<(), BridgeError> {
        let id = self.take_id();
        send(&mut self.stream, &Request::Close { id })?;
        match Self::receive(&mut self.stream)? {
            Reply::Closed { .. } => Ok(()),
            other => Err(BridgeError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Sends a raw frame and returns the raw reply; for protocol tests.
    pub fn raw_exchange(&mut self, payload: &[u8]) -> Result<Reply, BridgeError> {
        write_frame(&mut self.stream, payload)?;
        Self::receive(&mut self.stream)
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn call(&mut self, request: Request) -> Result<EnvReply, BridgeError> {
        send(&mut self.stream, &request)?;
        match Self::receive(&mut self.stream)? {
            Reply::ObsReply {
                obs,
                mask,
                reward,
                done,
                info,
                ..
            } => Ok(EnvReply {
                obs,
                mask,
                reward,
                done,
                info,
            }),
            Reply::Error { message, .. } => Err(BridgeError::Remote(message)),
            other => Err(BridgeError::Unexpected(format!("{other:?}"))),
        }
    }

    fn receive(stream: &mut TcpStream) -> Result<Reply, BridgeError> {
        let frame = read_frame(stream)?
            .ok_or_else(|| BridgeError::Unexpected("connection closed".into()))?;
        serde_json::from_slice(&frame).map_err(|e| BridgeError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"a\":1}").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 7]);
        let mut cur = io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cur).unwrap().unwrap(), b"{\"a\":1}");
        assert_eq!(read_frame(&mut cur).unwrap(), None);
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut cur = io::Cursor::new(u32::MAX.to_be_bytes().to_vec());
        assert!(matches!(read_frame(&mut cur), Err(BridgeError::FrameTooLarge(_))));
    }

    #[test]
    fn request_json_shape() {
        let r: Request = serde_json::from_str(r#"{"kind":"step","id":4,"action":12}"#).unwrap();
        assert_eq!(r, Request::Step { id: 4, action: 12 });
        let r: Request = serde_json::from_str(r#"{"kind":"reset","id":1}"#).unwrap();
        assert_eq!(r, Request::Reset { id: 1, seed: None });
        assert!(serde_json::from_str::<Request>(r#"{"kind":"fly","id":1}"#).is_err());
    }
}
