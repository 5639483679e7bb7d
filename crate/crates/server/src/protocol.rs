//! Incremental parser and executor for the memcached text protocol.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use fleec_core::{Cache, CacheError, Clock, MAX_KEY_LEN};

/// Longest command line accepted before the connection is dropped.
pub const MAX_LINE: usize = 64 * 1024;

/// Relative expiry times are at most this many seconds; larger values are
/// absolute Unix timestamps.
pub const REALTIME_MAXDELTA: i64 = 60 * 60 * 24 * 30;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const ERROR: &str = "ERROR\r\n";
const BAD_FORMAT: &str = "CLIENT_ERROR bad command line format\r\n";
const BAD_CHUNK: &str = "CLIENT_ERROR bad data chunk\r\n";
const TOO_LARGE: &str = "SERVER_ERROR object too large for cache\r\n";
const OUT_OF_MEMORY: &str = "SERVER_ERROR out of memory storing object\r\n";
const BAD_DELETE: &str =
    "CLIENT_ERROR bad command line format.  Usage: delete <key> [noreply]\r\n";
const LINE_TOO_LONG: &str = "CLIENT_ERROR line too long\r\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Get(Vec<Vec<u8>>),
    Set {
        key: Vec<u8>,
        flags: u32,
        exptime: i64,
        data: Vec<u8>,
        noreply: bool,
    },
    Delete {
        key: Vec<u8>,
        noreply: bool,
    },
    Stats,
    Version,
    Quit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parse {
    Complete { cmd: Command, consumed: usize },
    NeedMoreData,
    /// The request at the front of the input is invalid. `consumed` bytes
    /// belong to it, and `swallow` more payload bytes follow that must be
    /// discarded as they arrive.
    Error {
        reply: &'static str,
        noreply: bool,
        consumed: usize,
        swallow: usize,
    },
}

impl Parse {
    fn error(reply: &'static str, noreply: bool, consumed: usize) -> Self {
        Parse::Error {
            reply,
            noreply,
            consumed,
            swallow: 0,
        }
    }
}

fn valid_key(k: &[u8]) -> bool {
    !k.is_empty() && k.len() <= MAX_KEY_LEN && k.iter().all(|&b| b > b' ' && b != 0x7f)
}

fn number<T: std::str::FromStr>(tok: &[u8]) -> Option<T> {
    std::str::from_utf8(tok).ok()?.parse().ok()
}

/// Parses the request at the front of `input`. Values longer than
/// `max_value` are rejected without buffering them.
pub fn parse_command(input: &[u8], max_value: usize) -> Parse {
    let Some(nl) = input.iter().position(|&b| b == b'\n') else {
        return Parse::NeedMoreData;
    };
    let consumed = nl + 1;
    let line = input[..nl].strip_suffix(b"\r").unwrap_or(&input[..nl]);
    let tokens: Vec<&[u8]> = line.split(|&b| b == b' ').filter(|t| !t.is_empty()).collect();
    let Some(&verb) = tokens.first() else {
        return Parse::error(ERROR, false, consumed);
    };
    let noreply = tokens.len() > 1 && *tokens.last().unwrap() == b"noreply";
    let done = |cmd| Parse::Complete { cmd, consumed };
    match verb {
        b"get" => {
            if tokens.len() < 2 {
                return Parse::error(ERROR, false, consumed);
            }
            if !tokens[1..].iter().all(|k| valid_key(k)) {
                return Parse::error(BAD_FORMAT, false, consumed);
            }
            done(Command::Get(tokens[1..].iter().map(|k| k.to_vec()).collect()))
        }
        b"set" => {
            if tokens.len() != 5 && tokens.len() != 6 {
                return Parse::error(ERROR, false, consumed);
            }
            let key = tokens[1];
            let (Some(flags), Some(exptime), Some(nbytes)) = (
                number::<u32>(tokens[2]),
                number::<i64>(tokens[3]),
                number::<i64>(tokens[4]),
            ) else {
                return Parse::error(BAD_FORMAT, noreply, consumed);
            };
            if !valid_key(key) || nbytes < 0 || nbytes > i32::MAX as i64 - 2 {
                return Parse::error(BAD_FORMAT, noreply, consumed);
            }
            let n = nbytes as usize;
            if n > max_value {
                return Parse::Error {
                    reply: TOO_LARGE,
                    noreply,
                    consumed,
                    swallow: n + 2,
                };
            }
            let end = consumed + n + 2;
            if input.len() < end {
                return Parse::NeedMoreData;
            }
            if &input[consumed + n..end] != b"\r\n" {
                return Parse::error(BAD_CHUNK, noreply, end);
            }
            Parse::Complete {
                cmd: Command::Set {
                    key: key.to_vec(),
                    flags,
                    exptime,
                    data: input[consumed..consumed + n].to_vec(),
                    noreply,
                },
                consumed: end,
            }
        }
        b"delete" => {
            if !(2..=4).contains(&tokens.len()) {
                return Parse::error(ERROR, false, consumed);
            }
            if !valid_key(tokens[1]) {
                return Parse::error(BAD_FORMAT, noreply, consumed);
            }
            // Legacy clients send a hold time, which must be zero.
            let extra = &tokens[2..];
            let hold_zero = extra.first() == Some(&&b"0"[..]);
            let ok = match extra.len() {
                0 => true,
                1 => hold_zero || noreply,
                _ => hold_zero && noreply,
            };
            if !ok {
                return Parse::error(BAD_DELETE, noreply, consumed);
            }
            done(Command::Delete {
                key: tokens[1].to_vec(),
                noreply,
            })
        }
        b"stats" if tokens.len() == 1 => done(Command::Stats),
        b"version" if tokens.len() == 1 => done(Command::Version),
        b"quit" if tokens.len() == 1 => done(Command::Quit),
        _ => Parse::error(ERROR, false, consumed),
    }
}

/// Cache-time expiry for a protocol `exptime`.
pub fn expiry_for(clock: &dyn Clock, exptime: i64) -> u64 {
    if exptime == 0 {
        0
    } else if exptime < 0 {
        // Already expired; any nonzero time not after the clock origin.
        1
    } else if exptime <= REALTIME_MAXDELTA {
        clock.now() + exptime as u64
    } else {
        clock.from_unix(exptime as u64)
    }
}

/// State shared by every connection of one server.
pub struct Context {
    pub cache: Arc<Cache>,
    pub threads: usize,
    started: Instant,
    curr_connections: AtomicU64,
    total_connections: AtomicU64,
}

impl Context {
    pub fn new(cache: Arc<Cache>, threads: usize) -> Self {
        Context {
            cache,
            threads,
            started: Instant::now(),
            curr_connections: AtomicU64::new(0),
            total_connections: AtomicU64::new(0),
        }
    }

    pub fn connection_opened(&self) {
        self.curr_connections.fetch_add(1, Ordering::Relaxed);
        self.total_connections.fetch_add(1, Ordering::Relaxed);
    }

    pub fn connection_closed(&self) {
        self.curr_connections.fetch_sub(1, Ordering::Relaxed);
    }

    pub fn curr_connections(&self) -> u64 {
        self.curr_connections.load(Ordering::Relaxed)
    }

    /// Runs `cmd` and appends its response. Returns false for `quit`.
    pub fn execute(&self, cmd: Command, out: &mut Vec<u8>) -> bool {
        let cache = &*self.cache;
        match cmd {
            Command::Get(keys) => {
                for key in keys {
                    cache.get_with(&key, |it| {
                        out.extend_from_slice(b"VALUE ");
                        out.extend_from_slice(&key);
                        let _ = write!(out, " {} {}\r\n", it.flags(), it.value().len());
                        out.extend_from_slice(it.value());
                        out.extend_from_slice(b"\r\n");
                    });
                }
                out.extend_from_slice(b"END\r\n");
            }
            Command::Set {
                key,
                flags,
                exptime,
                data,
                noreply,
            } => {
                let expiry = expiry_for(cache.clock(), exptime);
                let reply = match cache.set(&key, flags, expiry, &data) {
                    Ok(()) => "STORED\r\n",
                    Err(CacheError::ValueTooLarge) => TOO_LARGE,
                    Err(CacheError::KeyTooLong) => BAD_FORMAT,
                    Err(_) => OUT_OF_MEMORY,
                };
                if !noreply {
                    out.extend_from_slice(reply.as_bytes());
                }
            }
            Command::Delete { key, noreply } => {
                let reply = if cache.delete(&key) {
                    "DELETED\r\n"
                } else {
                    "NOT_FOUND\r\n"
                };
                if !noreply {
                    out.extend_from_slice(reply.as_bytes());
                }
            }
            Command::Stats => self.write_stats(out),
            Command::Version => {
                let _ = write!(out, "VERSION {VERSION}\r\n");
            }
            Command::Quit => return false,
        }
        true
    }

    fn write_stats(&self, out: &mut Vec<u8>) {
        let s = self.cache.stats();
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let rows: [(&str, String); 24] = [
            ("pid", std::process::id().to_string()),
            ("uptime", self.started.elapsed().as_secs().to_string()),
            ("time", unix.to_string()),
            ("version", VERSION.to_string()),
            ("pointer_size", (usize::BITS).to_string()),
            ("curr_connections", self.curr_connections().to_string()),
            (
                "total_connections",
                self.total_connections.load(Ordering::Relaxed).to_string(),
            ),
            ("threads", self.threads.to_string()),
            ("cmd_get", (s.get_hits + s.get_misses).to_string()),
            ("cmd_set", s.sets.to_string()),
            ("get_hits", s.get_hits.to_string()),
            ("get_misses", s.get_misses.to_string()),
            ("delete_misses", s.delete_misses.to_string()),
            ("delete_hits", s.deletes.to_string()),
            ("bytes", s.bytes_in_use.to_string()),
            ("curr_items", s.item_count.to_string()),
            ("limit_maxbytes", s.max_bytes.to_string()),
            ("evictions", s.evictions.to_string()),
            ("evicted_bytes", s.evicted_bytes.to_string()),
            ("reclaimed", s.expired_reclaimed.to_string()),
            ("hash_buckets", s.bucket_count.to_string()),
            ("hash_expansions", s.expansions.to_string()),
            ("epoch_advances", s.epoch_advances.to_string()),
            ("retired_bytes", s.retired_bytes.to_string()),
        ];
        for (name, value) in rows {
            let _ = write!(out, "STAT {name} {value}\r\n");
        }
        out.extend_from_slice(b"END\r\n");
    }
}

/// Per-connection protocol state: what is left of a rejected payload, and
/// whether the client has quit.
pub struct Session<'c> {
    ctx: &'c Context,
    max_value: usize,
    swallow: usize,
    closed: bool,
}

impl<'c> Session<'c> {
    pub fn new(ctx: &'c Context) -> Self {
        Session {
            ctx,
            max_value: ctx.cache.config().max_value_bytes,
            swallow: 0,
            closed: false,
        }
    }

    /// Executes every complete request in `input`, appending responses to
    /// `out`. Returns how many bytes of `input` were used up; the rest must
    /// be presented again with more data appended.
    pub fn process(&mut self, input: &[u8], out: &mut Vec<u8>) -> usize {
        let mut pos = 0;
        while !self.closed {
            if self.swallow > 0 {
                let n = self.swallow.min(input.len() - pos);
                pos += n;
                self.swallow -= n;
                if self.swallow > 0 {
                    break;
                }
                continue;
            }
            let rest = &input[pos..];
            match parse_command(rest, self.max_value) {
                Parse::NeedMoreData => {
                    if rest.len() > MAX_LINE && !rest.contains(&b'\n') {
                        out.extend_from_slice(LINE_TOO_LONG.as_bytes());
                        self.closed = true;
                    }
                    break;
                }
                Parse::Complete { cmd, consumed } => {
                    pos += consumed;
                    if !self.ctx.execute(cmd, out) {
                        self.closed = true;
                    }
                }
                Parse::Error {
                    reply,
                    noreply,
                    consumed,
                    swallow,
                } => {
                    pos += consumed;
                    self.swallow = swallow;
                    if !noreply {
                        out.extend_from_slice(reply.as_bytes());
                    }
                }
            }
        }
        pos
    }

    /// Whether the client asked to quit or broke the framing beyond repair.
    pub fn is_closed(&self) -> bool {
        self.closed
    }
}
