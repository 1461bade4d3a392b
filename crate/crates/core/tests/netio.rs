use std::io::{Read, Write};
use std::net::TcpStream;

use spir_core::net::*;
use spir_core::sim::{run_retrieval, RunSeeds};
use spir_core::pir::{SymbolRef, SymbolRequest};
use spir_core::{CrIndex, MessageIndex, PrimeModulus, SchemeParams, SpirRequest};

fn params(n: usize, k: usize, q: u64) -> SchemeParams {
    SchemeParams::new(n, k, PrimeModulus::new(q).unwrap()).unwrap()
}

fn start(p: &SchemeParams, seeds: &RunSeeds, dir: &std::path::Path) -> (Vec<ServerHandle>, Vec<String>, UserFile) {
    let placeholders: Vec<String> = (0..p.n).map(|i| format!("127.0.0.1:{}", 7000 + i)).collect();
    let out = provision(p, &seeds.deal, &placeholders, dir).unwrap();
    let servers: Vec<ServerHandle> =
        out.db_files.iter().map(|f| serve_database(load_database(f).unwrap().1, "127.0.0.1:0").unwrap()).collect();
    let endpoints = servers.iter().map(|s| s.local_addr().to_string()).collect();
    (servers, endpoints, load_user(&out.user_file).unwrap())
}

#[test]
fn networked_run_matches_in_process_run() {
    for (n, k, q) in [(2, 2, 5), (1, 3, 3), (3, 2, 2)] {
        let p = params(n, k, q);
        for master in 0..5u64 {
            let seeds = RunSeeds::from_master(master);
            let desired = MessageIndex((master % k as u64) as u16 + 1);
            let dir = tempfile::tempdir().unwrap();
            let (servers, endpoints, user) = start(&p, &seeds, dir.path());
            let net = run_client_retrieval(&endpoints, &user, desired, seeds.query, None).unwrap();
            let local = run_retrieval(&p, desired, &seeds, None).unwrap();
            assert!(local.correct());
            assert!(net.same_retrieval(&local.transcript), "N={n} K={k} seed {master}");
            let t = net.transport.as_ref().unwrap();
            assert_eq!(t.endpoints, endpoints);
            assert!(t.bytes_sent > 0 && t.bytes_received > 0);
            servers.into_iter().for_each(ServerHandle::shutdown);
        }
    }
}

#[test]
fn down_server_is_a_transport_error() {
    let p = params(2, 2, 3);
    let seeds = RunSeeds::from_master(9);
    let dir = tempfile::tempdir().unwrap();
    let (mut servers, endpoints, user) = start(&p, &seeds, dir.path());
    servers.pop().unwrap().shutdown();
    let err = run_client_retrieval(&endpoints, &user, MessageIndex(1), seeds.query, None).unwrap_err();
    assert!(matches!(err, NetError::Transport { ref endpoint, .. } | NetError::Protocol { ref endpoint, .. } if *endpoint == endpoints[1]), "{err}");
}

#[test]
fn swapped_endpoints_are_rejected() {
    let p = params(2, 2, 3);
    let seeds = RunSeeds::from_master(10);
    let dir = tempfile::tempdir().unwrap();
    let (_servers, mut endpoints, user) = start(&p, &seeds, dir.path());
    endpoints.swap(0, 1);
    let err = run_client_retrieval(&endpoints, &user, MessageIndex(2), seeds.query, None).unwrap_err();
    assert!(matches!(err, NetError::Protocol { ref message, .. } if message.contains("database")), "{err}");
}

fn call(stream: &mut TcpStream, frame: &Frame) -> Frame {
    write_frame(stream, frame).unwrap();
    read_frame(stream).unwrap().unwrap()
}

#[test]
fn server_reports_bad_requests_and_keeps_the_connection() {
    let p = params(2, 2, 3);
    let seeds = RunSeeds::from_master(11);
    let dir = tempfile::tempdir().unwrap();
    let (servers, endpoints, _) = start(&p, &seeds, dir.path());
    let mut s = TcpStream::connect(&endpoints[0]).unwrap();

    let hello = call(&mut s, &Frame::empty(FrameType::Hello));
    assert_eq!(HelloPayload::decode(&hello.payload).unwrap(), HelloPayload { params: ParamsEcho::of(&p), db: 1 });

    let base = SymbolRequest::new(vec![SymbolRef { message: MessageIndex(1), symbol: 1 }]).unwrap();
    let req = SpirRequest { base, cr: Some(CrIndex(9)) };
    let bad = QueryPayload { params: ParamsEcho::of(&p), requests: vec![req] };
    let reply = call(&mut s, &Frame::new(FrameType::Query, bad.encode()));
    assert_eq!(reply.kind, FrameType::Error);
    assert_eq!(ErrorPayload::decode(&reply.payload).unwrap().code, ErrorCode::BadRequest as u16);

    let wrong = QueryPayload { params: ParamsEcho { q: 5, ..ParamsEcho::of(&p) }, requests: vec![] };
    let reply = call(&mut s, &Frame::new(FrameType::Query, wrong.encode()));
    assert_eq!(ErrorPayload::decode(&reply.payload).unwrap().code, ErrorCode::ParamsMismatch as u16);

    let reply = call(&mut s, &Frame::empty(FrameType::Provision));
    assert_eq!(ErrorPayload::decode(&reply.payload).unwrap().code, ErrorCode::UnexpectedFrame as u16);

    // Still usable after the errors.
    let ok = QueryPayload { params: ParamsEcho::of(&p), requests: vec![] };
    assert_eq!(decode_answers(&call(&mut s, &Frame::new(FrameType::Query, ok.encode())).payload).unwrap(), Vec::<u64>::new());

    // Garbage gets a Malformed error, then the server hangs up.
    s.write_all(b"NOPE\x01\x01\0\0\0\0").unwrap();
    let reply = read_frame(&mut s).unwrap().unwrap();
    assert_eq!(ErrorPayload::decode(&reply.payload).unwrap().code, ErrorCode::Malformed as u16);
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    assert!(rest.is_empty());
    drop(servers);
}

#[test]
fn concurrent_clients() {
    let p = params(2, 2, 5);
    let seeds = RunSeeds::from_master(12);
    let dir = tempfile::tempdir().unwrap();
    let (_servers, endpoints, user) = start(&p, &seeds, dir.path());
    let truth = run_retrieval(&p, MessageIndex(1), &seeds, None).unwrap().deal.store;
    std::thread::scope(|s| {
        for i in 0..8u64 {
            let (endpoints, user, truth) = (&endpoints, &user, &truth);
            s.spawn(move || {
                let d = MessageIndex((i % 2) as u16 + 1);
                let t = run_client_retrieval(endpoints, user, d, spir_core::Seed::from_u64(1000 + i), None).unwrap();
                let want: Vec<u64> = truth.message(d).iter().map(|e| e.value()).collect();
                assert_eq!(t.decoded, want);
            });
        }
    });
}
