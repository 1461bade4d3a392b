use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use super::frame::{decode_answers, read_frame, write_frame, ErrorPayload, Frame, FrameType, HelloPayload, ParamsEcho, QueryPayload};
use super::{NetError, UserFile};
use crate::field::Seed;
use crate::pir::{MessageIndex, SchemeParams};
use crate::scheme::{measured_rates, select_query_traced, Fault, SpirRequest};
use crate::sim::{decode, values, Transcript, TranscriptSeeds, TransportInfo};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

struct Exchange {
    answers: Vec<u64>,
    sent: u64,
    received: u64,
}

/// Retrieves message `desired` from the databases at `endpoints` (in database
/// order), using the user's provisioned CR and a query drawn from `query_seed`.
pub fn run_client_retrieval(
    endpoints: &[String],
    user: &UserFile,
    desired: MessageIndex,
    query_seed: Seed,
    fault: Option<Fault>,
) -> Result<Transcript, NetError> {
    let params = user.params;
    if endpoints.len() != params.n {
        return Err(NetError::Provision(format!("{} endpoints for N = {} databases", endpoints.len(), params.n)));
    }
    let desired = params.desired(desired.0 as usize).map_err(|e| NetError::Provision(e.to_string()))?;
    let randomness = user.randomness();
    let selected = select_query_traced(&params, desired, randomness.index, &mut query_seed.stream(), fault)?;

    let results: Vec<Result<Exchange, NetError>> = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .iter()
            .zip(&selected.query.per_db)
            .enumerate()
            .map(|(i, (ep, reqs))| s.spawn(move || exchange(ep, i + 1, &params, reqs)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("client worker panicked")).collect()
    });
    let mut answers = Vec::with_capacity(params.n);
    let (mut sent, mut received) = (0, 0);
    for r in results {
        let x = r?;
        sent += x.sent;
        received += x.received;
        answers.push(x.answers);
    }

    let elements: Vec<Vec<_>> = answers.iter().map(|a| a.iter().map(|&v| params.q.element(v)).collect()).collect();
    let decoded = decode(&params, &selected.query, &elements, desired, &randomness)?;
    Ok(Transcript {
        params,
        desired,
        user_cr_index: randomness.index,
        seeds: TranscriptSeeds { query: query_seed, deal: None },
        query: selected.query.per_db,
        answers,
        decoded: values(&decoded),
        rates: measured_rates(&params),
        transport: Some(TransportInfo { endpoints: endpoints.to_vec(), bytes_sent: sent, bytes_received: received }),
    })
}

fn exchange(endpoint: &str, db: usize, params: &SchemeParams, requests: &[SpirRequest]) -> Result<Exchange, NetError> {
    let io = |source| NetError::Transport { endpoint: endpoint.to_string(), source };
    let protocol = |message: String| NetError::Protocol { endpoint: endpoint.to_string(), message };
    let addr = endpoint
        .to_socket_addrs()
        .map_err(io)?
        .next()
        .ok_or_else(|| protocol("endpoint resolves to no address".into()))?;
    let stream = TcpStream::connect_timeout(&addr, DEFAULT_TIMEOUT).map_err(io)?;
    stream.set_read_timeout(Some(DEFAULT_TIMEOUT)).map_err(io)?;
    stream.set_nodelay(true).map_err(io)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(io)?);
    let mut writer = BufWriter::new(stream);
    let mut sent = 0u64;
    let mut received = 0u64;
    let mut call = |frame: Frame| -> Result<Frame, NetError> {
        sent += write_frame(&mut writer, &frame).map_err(io)? as u64;
        let reply = read_frame(&mut reader)
            .map_err(|source| NetError::Frame { endpoint: endpoint.to_string(), source })?
            .ok_or_else(|| protocol("connection closed".into()))?;
        received += (super::HEADER_LEN + reply.payload.len()) as u64;
        if reply.kind == FrameType::Error {
            let e = ErrorPayload::decode(&reply.payload).map_err(|source| NetError::Frame { endpoint: endpoint.to_string(), source })?;
            return Err(NetError::Remote { endpoint: endpoint.to_string(), code: e.code, message: e.message });
        }
        Ok(reply)
    };
    let frame_err = |source| NetError::Frame { endpoint: endpoint.to_string(), source };

    let echo = ParamsEcho::of(params);
    let hello = call(Frame::empty(FrameType::Hello))?;
    if hello.kind != FrameType::Hello {
        return Err(protocol(format!("expected Hello, got {}", hello.kind)));
    }
    let hello = HelloPayload::decode(&hello.payload).map_err(frame_err)?;
    if hello.params != echo {
        return Err(protocol(format!("server holds {}, user holds {}", hello.params, echo)));
    }
    if hello.db as usize != db {
        return Err(protocol(format!("endpoint serves database {}, expected {db}", hello.db)));
    }
    let reply = call(Frame::new(FrameType::Query, QueryPayload { params: echo, requests: requests.to_vec() }.encode()))?;
    if reply.kind != FrameType::Answer {
        return Err(protocol(format!("expected Answer, got {}", reply.kind)));
    }
    let answers = decode_answers(&reply.payload).map_err(frame_err)?;
    if answers.len() != requests.len() {
        return Err(protocol(format!("{} answers to {} requests", answers.len(), requests.len())));
    }
    if let Some(v) = answers.iter().find(|&&v| v >= params.q.value()) {
        return Err(protocol(format!("answer {v} not below q")));
    }
    Ok(Exchange { answers, sent, received })
}
