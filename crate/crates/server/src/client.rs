//! Minimal blocking client for the text protocol, used by tests and the
//! benchmark's network mode.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// One parsed response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    /// `VALUE` blocks up to `END`, as `(key, flags, data)`.
    Values(Vec<(Vec<u8>, u32, Vec<u8>)>),
    /// Any single-line response, without its CRLF.
    Line(String),
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

impl Client {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Writes raw request bytes without reading anything.
    pub fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)
    }

    pub fn shutdown_write(&self) -> io::Result<()> {
        self.writer.shutdown(std::net::Shutdown::Write)
    }

    /// Reads everything until the server closes the connection.
    pub fn read_to_end(&mut self) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        self.reader.read_to_end(&mut out)?;
        Ok(out)
    }

    fn line(&mut self) -> io::Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        line.strip_suffix("\r\n")
            .map(str::to_string)
            .ok_or_else(|| bad("response line without CRLF"))
    }

    /// Reads one complete response.
    pub fn read_response(&mut self) -> io::Result<Response> {
        let mut values = Vec::new();
        loop {
            let line = self.line()?;
            let Some(rest) = line.strip_prefix("VALUE ") else {
                if line == "END" {
                    return Ok(Response::Values(values));
                }
                if values.is_empty() {
                    return Ok(Response::Line(line));
                }
                return Err(bad("unterminated VALUE list"));
            };
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad("malformed VALUE line"));
            }
            let flags = parts[1].parse().map_err(|_| bad("bad flags"))?;
            let n: usize = parts[2].parse().map_err(|_| bad("bad length"))?;
            let mut data = vec![0u8; n + 2];
            self.reader.read_exact(&mut data)?;
            if !data.ends_with(b"\r\n") {
                return Err(bad("data block without CRLF"));
            }
            data.truncate(n);
            values.push((parts[0].as_bytes().to_vec(), flags, data));
        }
    }

    pub fn set(&mut self, key: &[u8], flags: u32, exptime: i64, value: &[u8]) -> io::Result<Response> {
        self.send(&set_request(key, flags, exptime, value))?;
        self.read_response()
    }

    pub fn get(&mut self, key: &[u8]) -> io::Result<Option<Vec<u8>>> {
        self.send(&get_request(key))?;
        match self.read_response()? {
            Response::Values(mut v) => Ok(v.pop().map(|(_, _, d)| d)),
            Response::Line(l) => Err(bad(&l)),
        }
    }

    pub fn delete(&mut self, key: &[u8]) -> io::Result<Response> {
        let mut req = b"delete ".to_vec();
        req.extend_from_slice(key);
        req.extend_from_slice(b"\r\n");
        self.send(&req)?;
        self.read_response()
    }
}

pub fn set_request(key: &[u8], flags: u32, exptime: i64, value: &[u8]) -> Vec<u8> {
    let mut req = b"set ".to_vec();
    req.extend_from_slice(key);
    req.extend_from_slice(format!(" {flags} {exptime} {}\r\n", value.len()).as_bytes());
    req.extend_from_slice(value);
    req.extend_from_slice(b"\r\n");
    req
}

pub fn get_request(key: &[u8]) -> Vec<u8> {
    let mut req = b"get ".to_vec();
    req.extend_from_slice(key);
    req.extend_from_slice(b"\r\n");
    req
}
