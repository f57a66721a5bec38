//! A minimal JSON-RPC node answering `eth_getCode` from a fixed table.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub struct MockNode {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    /// While held, requests block.
    pub gate: Arc<Mutex<()>>,
}

/// Addresses map to hex code; `"error"` as code answers with an RPC error.
pub fn mock_node(code: &[(&str, &str)]) -> MockNode {
    let table: HashMap<String, String> = code.iter().map(|(a, c)| (a.to_lowercase(), c.to_string())).collect();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let gate = Arc::new(Mutex::new(()));
    let (count, g) = (requests.clone(), gate.clone());
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            count.fetch_add(1, Ordering::SeqCst);
            drop(g.lock().unwrap());
            let _ = answer(stream, &table);
        }
    });
    MockNode { url, requests, gate }
}

fn answer(mut stream: TcpStream, table: &HashMap<String, String>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let addr = req["params"][0].as_str().unwrap_or("").to_lowercase();
    let reply = match (req["method"].as_str(), table.get(&addr).map(String::as_str)) {
        (Some("eth_getCode"), Some("error")) => {
            json!({"jsonrpc": "2.0", "id": req["id"], "error": {"code": -32000, "message": "node unavailable"}})
        }
        (Some("eth_getCode"), code) => json!({"jsonrpc": "2.0", "id": req["id"], "result": code.unwrap_or("0x")}),
        _ => json!({"jsonrpc": "2.0", "id": req["id"], "error": {"code": -32601, "message": "method not found"}}),
    };
    let text = reply.to_string();
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    stream.flush()
}

pub const CONTRACT: &str = "0x00000000000000000000000000000000000c0de1";
pub const ACCOUNT: &str = "0x00000000000000000000000000000000000e0a01";
pub const BROKEN: &str = "0x00000000000000000000000000000000000bad01";
