use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};

use crate::config::SessionConfig;
use crate::error::{Error, Result};
use crate::tensor_io::{flow_from_tensors, Tensor};
use crate::types::{FeatureMap, FlowMap, ObjectMask};

use super::protocol::{read_header, read_payload, write_frame, Request, Response};

/// Blocking client; one request in flight at a time.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends one request and returns the raw response.
    pub fn request(&mut self, session_id: u64, req: &Request) -> Result<Response> {
        write_frame(&mut self.writer, req.msg_type(), session_id, &req.encode_payload())?;
        self.read_response()
    }

    /// Writes arbitrary bytes, then reads one response frame.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<Response> {
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        self.read_response()
    }

    pub fn read_response(&mut self) -> Result<Response> {
        let header =
            read_header(&mut self.reader)?.ok_or_else(|| Error::Io(std::io::ErrorKind::UnexpectedEof.into()))?;
        let payload = read_payload(&mut self.reader, header.payload_len)?;
        Response::decode(&header, &payload)
    }

    fn expect_ok(&mut self, session_id: u64, req: &Request) -> Result<u64> {
        match self.request(session_id, req)? {
            Response::Ok { session_id } => Ok(session_id),
            other => Err(unexpected(other)),
        }
    }

    fn expect_tensors(&mut self, session_id: u64, req: &Request) -> Result<Vec<Tensor>> {
        match self.request(session_id, req)? {
            Response::Tensors(ts) => Ok(ts),
            other => Err(unexpected(other)),
        }
    }

    pub fn init_session(&mut self, config: &SessionConfig) -> Result<u64> {
        self.expect_ok(0, &Request::InitSession(config.clone()))
    }

    pub fn put_reference(
        &mut self,
        session_id: u64,
        object: u32,
        t: u32,
        layer: u32,
        reference: &FeatureMap,
        m_ref: &ObjectMask,
    ) -> Result<()> {
        let req = Request::PutReference {
            object,
            t,
            layer,
            reference: reference.clone(),
            m_ref: m_ref.clone(),
        };
        self.expect_ok(session_id, &req).map(|_| ())
    }

    pub fn rearrange(
        &mut self,
        session_id: u64,
        t: u32,
        layer: u32,
        target: &FeatureMap,
        target_masks: &[ObjectMask],
    ) -> Result<FeatureMap> {
        let req = Request::Rearrange {
            t,
            layer,
            target: target.clone(),
            target_masks: target_masks.to_vec(),
        };
        single_map(self.expect_tensors(session_id, &req)?)
    }

    pub fn adain(
        &mut self,
        session_id: u64,
        t: u32,
        content: &FeatureMap,
        style: &FeatureMap,
        m_content: &ObjectMask,
        m_style: &ObjectMask,
    ) -> Result<FeatureMap> {
        let req = Request::Adain {
            t,
            content: content.clone(),
            style: style.clone(),
            m_content: m_content.clone(),
            m_style: m_style.clone(),
        };
        single_map(self.expect_tensors(session_id, &req)?)
    }

    pub fn readout_flow(&mut self, session_id: u64, object: u32) -> Result<FlowMap> {
        let mut ts = self.expect_tensors(session_id, &Request::ReadoutFlow { object })?;
        if ts.len() != 2 {
            return Err(Error::Parse(format!("expected 2 tensors, got {}", ts.len())));
        }
        let valid = ts.pop();
        flow_from_tensors(ts.pop().expect("len checked"), valid)
    }

    pub fn close_session(&mut self, session_id: u64) -> Result<()> {
        self.expect_ok(session_id, &Request::CloseSession).map(|_| ())
    }
}

fn single_map(mut ts: Vec<Tensor>) -> Result<FeatureMap> {
    if ts.len() != 1 {
        return Err(Error::Parse(format!("expected 1 tensor, got {}", ts.len())));
    }
    FeatureMap::try_from(ts.pop().expect("len checked"))
}

fn unexpected(resp: Response) -> Error {
    match resp {
        Response::Error { code, message } => Error::Remote { code, message },
        other => Error::Parse(format!("unexpected response {:?}", other.msg_type())),
    }
}
