use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::frame::{
    encode_answers, read_frame, write_frame, ErrorCode, ErrorPayload, Frame, FrameType, HelloPayload, ParamsEcho, QueryPayload,
};
use super::{DatabaseState, NetError};
use crate::sim::{answer_query, values};

/// Idle connections are dropped after this long.
const IDLE_TIMEOUT: Duration = Duration::from_secs(60);

/// A running database server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Connections already open finish on their own.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Serves until the process is killed.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Binds `addr` and answers queries against `state`, one thread per connection.
pub fn serve_database<A: ToSocketAddrs>(state: DatabaseState, addr: A) -> Result<ServerHandle, NetError> {
    let listener = TcpListener::bind(addr).map_err(|e| NetError::Io(format!("bind: {e}")))?;
    let local = listener.local_addr().map_err(|e| NetError::Io(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let state = Arc::new(state);
    let flag = stop.clone();
    let accept = thread::Builder::new()
        .name(format!("spir-db{}", state.db_index))
        .spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let state = state.clone();
                thread::spawn(move || {
                    let _ = handle_connection(&state, stream);
                });
            }
        })
        .map_err(|e| NetError::Io(e.to_string()))?;
    Ok(ServerHandle { addr: local, stop, accept: Some(accept) })
}

fn handle_connection(state: &DatabaseState, stream: TcpStream) -> std::io::Result<()> {
    stream.set_read_timeout(Some(IDLE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                // The stream may be out of sync; report and close.
                let _ = write_frame(&mut writer, &ErrorPayload::new(ErrorCode::Malformed, e.to_string()).frame());
                break;
            }
        };
        write_frame(&mut writer, &respond(state, &frame))?;
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

fn respond(state: &DatabaseState, frame: &Frame) -> Frame {
    let echo = ParamsEcho::of(&state.params);
    match frame.kind {
        FrameType::Hello => Frame::new(FrameType::Hello, HelloPayload { params: echo, db: state.db_index as u16 }.encode()),
        FrameType::Query => {
            let query = match QueryPayload::decode(&frame.payload) {
                Ok(q) => q,
                Err(e) => return ErrorPayload::new(ErrorCode::Malformed, e.to_string()).frame(),
            };
            if query.params != echo {
                return ErrorPayload::new(ErrorCode::ParamsMismatch, format!("query for {}, serving {}", query.params, echo)).frame();
            }
            match answer_query(&state.store, &state.server, &query.requests) {
                Ok(a) => Frame::new(FrameType::Answer, encode_answers(&values(&a))),
                Err(e) => ErrorPayload::new(ErrorCode::BadRequest, e.to_string()).frame(),
            }
        }
        other => ErrorPayload::new(ErrorCode::UnexpectedFrame, format!("{other} frames are not accepted by a database")).frame(),
    }
}
