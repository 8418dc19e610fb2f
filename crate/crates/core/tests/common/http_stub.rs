//! One-shot HTTP stub server for gateway tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crewline_core::gateway::{ChatMessage, ChatRequest};

/// What the stub saw: request line, lower-cased headers, body.
pub struct Captured {
    pub request_line: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

pub enum Reply {
    Status(u16, String),
    Stall(Duration),
}

/// Serves exactly one request on an ephemeral port.
pub fn stub(reply: Reply) -> (String, JoinHandle<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut headers = Vec::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once(':').unwrap();
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let len: usize = headers.iter().find(|(k, _)| k == "content-length").map_or(0, |(_, v)| v.parse().unwrap());
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        match reply {
            Reply::Status(code, text) => {
                let resp = format!(
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
            Reply::Stall(d) => thread::sleep(d),
        }
        Captured { request_line: request_line.trim_end().to_string(), headers, body: String::from_utf8(body).unwrap() }
    });
    (url, handle)
}

pub fn canonical_request() -> ChatRequest {
    ChatRequest::new(
        "aya-expanse:8b",
        vec![
            ChatMessage::system("You are a careful translator.\nReply with JSON only."),
            ChatMessage::user("Translate into hi: Diwali (दिवाली) is the \"festival of lights\"."),
        ],
        0.3,
        1024,
        "translation:0:0",
    )
    .unwrap()
}
