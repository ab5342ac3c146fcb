use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

/// Plain HTTP/1.1 JSON POST. Only `http://host[:port][/path]` endpoints are
/// supported; callers treat any error as "the endpoint did not answer".
pub(crate) fn post_json(url: &str, body: &str, timeout: Duration) -> Result<String, String> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| format!("unsupported endpoint {url}, expected http://"))?;
    let (hostport, path) = match rest.split_once('/') {
        Some((h, p)) => (h, format!("/{p}")),
        None => (rest, "/".to_string()),
    };
    if hostport.is_empty() {
        return Err(format!("no host in endpoint {url}"));
    }
    let authority = if hostport.contains(':') {
        hostport.to_string()
    } else {
        format!("{hostport}:80")
    };
    let addr = authority
        .to_socket_addrs()
        .map_err(|e| format!("resolve {authority}: {e}"))?
        .next()
        .ok_or_else(|| format!("no address for {authority}"))?;

    let mut stream =
        TcpStream::connect_timeout(&addr, timeout).map_err(|e| format!("connect {addr}: {e}"))?;
    stream.set_read_timeout(Some(timeout)).ok();
    stream.set_write_timeout(Some(timeout)).ok();

    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {hostport}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nAccept: application/json\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| format!("write: {e}"))?;

    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| format!("read: {e}"))?;
    let text = String::from_utf8_lossy(&raw);

    let header_end = text
        .find("\r\n\r\n")
        .ok_or_else(|| "malformed response, no header terminator".to_string())?;
    let (head, payload) = (&text[..header_end], &text[header_end + 4..]);
    let status_line = head.lines().next().unwrap_or("");
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| format!("malformed status line {status_line:?}"))?;
    if status != 200 {
        return Err(format!("endpoint returned status {status}"));
    }

    let chunked = head
        .lines()
        .any(|l| {
            let lower = l.to_ascii_lowercase();
            lower.starts_with("transfer-encoding:") && lower.contains("chunked")
        });
    if chunked {
        decode_chunked(payload)
    } else {
        Ok(payload.to_string())
    }
}

fn decode_chunked(payload: &str) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = payload;
    loop {
        let (size_line, tail) = rest
            .split_once("\r\n")
            .ok_or_else(|| "truncated chunked body".to_string())?;
        let size = usize::from_str_radix(size_line.trim().split(';').next().unwrap_or(""), 16)
            .map_err(|_| format!("bad chunk size {size_line:?}"))?;
        if size == 0 {
            return Ok(out);
        }
        if tail.len() < size {
            return Err("truncated chunk".to_string());
        }
        out.push_str(&tail[..size]);
        rest = tail[size..]
            .strip_prefix("\r\n")
            .ok_or_else(|| "missing chunk terminator".to_string())?;
    }
}
