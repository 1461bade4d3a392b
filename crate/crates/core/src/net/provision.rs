//! Dealer output files.
//!
//! A database file is one JSON header line followed by raw little-endian
//! `u64` symbols: the `K * L` message symbols (message-major), then the
//! `rs_size` server CR symbols. The user file is plain JSON and holds the
//! user's single CR index and value, nothing else.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NetError;
use crate::field::FieldElement;
use crate::pir::SchemeParams;
use crate::scheme::CrIndex;
use crate::sim::{deal, DealSeeds, MessageStore, ServerRandomness, UserRandomness};

pub const DB_FORMAT: &str = "spir-db/1";
pub const USER_FORMAT: &str = "spir-user/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFingerprints {
    pub messages: String,
    pub randomness: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbFileHeader {
    pub format: String,
    /// 1-based.
    pub db_index: usize,
    pub endpoint: String,
    pub params: SchemeParams,
    pub seeds: SeedFingerprints,
    pub symbol_width: usize,
    pub message_symbols: usize,
    pub cr_symbols: usize,
    pub state_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFile {
    pub format: String,
    pub params: SchemeParams,
    pub cr_index: CrIndex,
    pub cr_value: u64,
}

impl UserFile {
    pub fn randomness(&self) -> UserRandomness {
        UserRandomness { index: self.cr_index, value: self.params.q.element(self.cr_value) }
    }
}

/// Provisioned state of one database.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatabaseState {
    pub params: SchemeParams,
    /// 1-based.
    pub db_index: usize,
    pub store: MessageStore,
    pub server: ServerRandomness,
}

#[derive(Clone, Debug)]
pub struct Provisioned {
    pub db_files: Vec<PathBuf>,
    pub user_file: PathBuf,
}

fn symbols<'a>(store: &'a MessageStore, server: &'a ServerRandomness) -> impl Iterator<Item = u64> + 'a {
    store.messages.iter().flatten().chain(&server.0).map(|e| e.value())
}

/// SHA-256 over the raw symbol section; equal for every replica.
pub fn state_hash(store: &MessageStore, server: &ServerRandomness) -> String {
    let mut h = Sha256::new();
    for v in symbols(store, server) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Deals fresh state and writes `db{i}.spirdb` per endpoint plus `user.json` into `dir`.
pub fn provision(params: &SchemeParams, seeds: &DealSeeds, endpoints: &[String], dir: &Path) -> Result<Provisioned, NetError> {
    if endpoints.len() != params.n {
        return Err(NetError::Provision(format!("{} endpoints for N = {} databases", endpoints.len(), params.n)));
    }
    fs::create_dir_all(dir).map_err(|e| NetError::Io(format!("{}: {e}", dir.display())))?;
    let dealt = deal(params, seeds);
    let hash = state_hash(&dealt.store, &dealt.server);
    let mut body = Vec::with_capacity(8 * (params.k * params.l + params.rs_size));
    for v in symbols(&dealt.store, &dealt.server) {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let mut db_files = Vec::new();
    for (i, endpoint) in endpoints.iter().enumerate() {
        let header = DbFileHeader {
            format: DB_FORMAT.into(),
            db_index: i + 1,
            endpoint: endpoint.clone(),
            params: *params,
            seeds: SeedFingerprints { messages: seeds.messages.fingerprint(), randomness: seeds.randomness.fingerprint() },
            symbol_width: 8,
            message_symbols: params.k * params.l,
            cr_symbols: params.rs_size,
            state_sha256: hash.clone(),
        };
        let mut bytes = serde_json::to_vec(&header).map_err(|e| NetError::Provision(e.to_string()))?;
        bytes.push(b'\n');
        bytes.extend_from_slice(&body);
        let path = dir.join(format!("db{}.spirdb", i + 1));
        fs::write(&path, bytes).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
        db_files.push(path);
    }
    let user = UserFile { format: USER_FORMAT.into(), params: *params, cr_index: dealt.user.index, cr_value: dealt.user.value.value() };
    let user_file = dir.join("user.json");
    let json = serde_json::to_string_pretty(&user).map_err(|e| NetError::Provision(e.to_string()))?;
    fs::write(&user_file, json + "\n").map_err(|e| NetError::Io(format!("{}: {e}", user_file.display())))?;
    Ok(Provisioned { db_files, user_file })
}

pub fn load_database(path: &Path) -> Result<(DbFileHeader, DatabaseState), NetError> {
    let bad = |m: String| NetError::Provision(format!("{}: {m}", path.display()));
    let file = fs::File::open(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
    let header: DbFileHeader = serde_json::from_str(line.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != DB_FORMAT {
        return Err(bad(format!("format {:?}, expected {DB_FORMAT:?}", header.format)));
    }
    let p = header.params;
    if header.symbol_width != 8 || header.message_symbols != p.k * p.l || header.cr_symbols != p.rs_size {
        return Err(bad("symbol counts disagree with the parameters".into()));
    }
    if header.db_index == 0 || header.db_index > p.n {
        return Err(bad(format!("database index {} outside 1..={}", header.db_index, p.n)));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| bad(e.to_string()))?;
    let want = 8 * (header.message_symbols + header.cr_symbols);
    if body.len() != want {
        return Err(bad(format!("{} symbol bytes, expected {want}", body.len())));
    }
    let q = p.q;
    let mut values = Vec::with_capacity(want / 8);
    for chunk in body.chunks_exact(8) {
        let v = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if v >= q.value() {
            return Err(bad(format!("symbol {v} not below q = {q}")));
        }
        values.push(q.element(v));
    }
    let (msgs, cr) = values.split_at(header.message_symbols);
    let store = MessageStore { q, messages: msgs.chunks(p.l).map(<[FieldElement]>::to_vec).collect() };
    let server = ServerRandomness(cr.to_vec());
    if state_hash(&store, &server) != header.state_sha256 {
        return Err(bad("state hash mismatch".into()));
    }
    let state = DatabaseState { params: p, db_index: header.db_index, store, server };
    Ok((header, state))
}

pub fn load_user(path: &Path) -> Result<UserFile, NetError> {
    let text = fs::read_to_string(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
    let user: UserFile = serde_json::from_str(&text).map_err(|e| NetError::Provision(format!("{}: {e}", path.display())))?;
    if user.format != USER_FORMAT {
        return Err(NetError::Provision(format!("{}: format {:?}, expected {USER_FORMAT:?}", path.display(), user.format)));
    }
    CrIndex::new(user.cr_index.0, user.params.rs_size).map_err(|e| NetError::Provision(e.to_string()))?;
    if user.cr_value >= user.params.q.value() {
        return Err(NetError::Provision(format!("CR value {} not below q", user.cr_value)));
    }
    Ok(user)
}
