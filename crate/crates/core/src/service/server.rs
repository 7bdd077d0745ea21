use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use super::engine::Engine;
use super::protocol::{
    read_header, read_payload, write_frame, ErrorCode, MsgType, Request, Response, FRAME_MAGIC, MAX_PAYLOAD,
    PROTOCOL_VERSION,
};

/// Thread-per-connection TCP server over a shared [`Engine`].
pub struct Server {
    listener: TcpListener,
    engine: Arc<Engine>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            engine: Arc::new(Engine::new()),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn engine(&self) -> Arc<Engine> {
        Arc::clone(&self.engine)
    }

    /// Accepts connections forever.
    pub fn serve(self) -> io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("accept failed: {e}");
                    continue;
                }
            };
            let engine = Arc::clone(&self.engine);
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = handle_connection(stream, &engine) {
                    eprintln!("connection {peer:?} ended: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs [`Server::serve`] on a background thread and returns the bound address.
    pub fn spawn(self) -> io::Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || self.serve());
        Ok(addr)
    }
}

fn respond(w: &mut impl Write, resp: &Response) -> io::Result<()> {
    let session_id = match resp {
        Response::Ok { session_id } => *session_id,
        _ => 0,
    };
    write_frame(w, resp.msg_type(), session_id, &resp.encode_payload())
}

/// Serves one connection until the peer hangs up. Malformed frames get an
/// ERROR response; the connection is dropped only when the frame boundary
/// can no longer be trusted (bad magic, oversized payload).
pub fn handle_connection(stream: TcpStream, engine: &Engine) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(header) = read_header(&mut reader)? {
        if header.magic != FRAME_MAGIC {
            let msg = format!("bad frame magic {:?}", header.magic);
            return respond(&mut writer, &Response::error(ErrorCode::BadMagic, msg));
        }
        if header.payload_len > MAX_PAYLOAD {
            let msg = format!("payload of {} bytes exceeds limit {MAX_PAYLOAD}", header.payload_len);
            return respond(&mut writer, &Response::error(ErrorCode::PayloadTooLarge, msg));
        }
        let payload = read_payload(&mut reader, header.payload_len)?;
        if header.version != PROTOCOL_VERSION {
            let msg = format!(
                "protocol version {} unsupported, expected {PROTOCOL_VERSION}",
                header.version
            );
            respond(&mut writer, &Response::error(ErrorCode::VersionMismatch, msg))?;
            continue;
        }
        let response = match MsgType::from_code(header.msg_type) {
            None => Response::error(
                ErrorCode::UnknownMessageType,
                format!("unknown message type {}", header.msg_type),
            ),
            Some(msg_type) => match Request::decode(msg_type, &payload) {
                Ok(req) => engine.handle(header.session_id, req),
                Err(e) => Response::error(ErrorCode::MalformedPayload, e.to_string()),
            },
        };
        respond(&mut writer, &response)?;
    }
    Ok(())
}
