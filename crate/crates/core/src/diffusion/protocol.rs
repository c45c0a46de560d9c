//! SVDN: binary framing for talking to an out-of-process denoiser.
//!
//! Frame: `"SVDN" | version u32 | msg_type u32 | payload_len u64 | payload`,
//! all integers little-endian. A request carries the timestep, the text
//! condition and one `[frames, channels, h, w]` tensor; a response carries
//! the `eps` and `var` tensors of the same shape.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::denoiser::{Capability, DenoiserEndpoint, PredictRequest, Prediction};
use super::latent::LatentTensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SVDN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
/// Largest payload either side accepts.
pub const MAX_PAYLOAD: u64 = 1 << 30;
const MAX_NDIM: u32 = 8;

/// Environment variable naming the external denoiser address.
pub const DENOISER_ENV: &str = "STEREOGEN_DENOISER";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum MsgType {
    PredictRequest = 1,
    PredictResponse = 2,
    Error = 3,
}

impl MsgType {
    fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(MsgType::PredictRequest),
            2 => Some(MsgType::PredictResponse),
            3 => Some(MsgType::Error),
            _ => None,
        }
    }
}

/// Codes carried by error frames.
pub mod codes {
    pub const MALFORMED: u32 = 1;
    pub const VERSION: u32 = 2;
    pub const MESSAGE_TYPE: u32 = 3;
    pub const SHAPE: u32 = 4;
    pub const MODEL: u32 = 5;
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl WireTensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        match element_count(&dims) {
            Some(n) if n == data.len() => Ok(Self { dims, data }),
            _ => Err(Error::ShapeMismatch(format!("dims {dims:?} with {} values", data.len()))),
        }
    }

    pub fn zeros(dims: Vec<u32>) -> Self {
        let n = element_count(&dims).expect("tensor size overflows");
        Self { dims, data: vec![0.0; n] }
    }
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireRequest {
    pub t: u32,
    pub cond: String,
    pub tensors: Vec<WireTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Request(WireRequest),
    Response { eps: WireTensor, var: WireTensor },
    Error { code: u32, message: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Request(_) => MsgType::PredictRequest,
            Message::Response { .. } => MsgType::PredictResponse,
            Message::Error { .. } => MsgType::Error,
        }
    }
}

/// A decoding failure, with the code an error frame should carry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireError {
    pub code: u32,
    pub message: String,
}

impl WireError {
    pub fn new(code: u32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<WireError> for Error {
    fn from(e: WireError) -> Self {
        Error::Protocol(format!("code {}: {}", e.code, e.message))
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &WireTensor) {
    out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        Message::Request(req) => {
            out.extend_from_slice(&req.t.to_le_bytes());
            out.extend_from_slice(&(req.cond.len() as u32).to_le_bytes());
            out.extend_from_slice(req.cond.as_bytes());
            out.extend_from_slice(&(req.tensors.len() as u32).to_le_bytes());
            for t in &req.tensors {
                put_tensor(&mut out, t);
            }
        }
        Message::Response { eps, var } => {
            out.extend_from_slice(&2u32.to_le_bytes());
            put_tensor(&mut out, eps);
            put_tensor(&mut out, var);
        }
        Message::Error { code, message } => {
            out.extend_from_slice(&code.to_le_bytes());
            out.extend_from_slice(message.as_bytes());
        }
    }
    out
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(msg.msg_type() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            WireError::new(codes::MALFORMED, format!("payload truncated at byte {} (need {n})", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> std::result::Result<WireTensor, WireError> {
        let ndim = self.u32()?;
        if ndim > MAX_NDIM {
            return Err(WireError::new(codes::SHAPE, format!("{ndim} dimensions")));
        }
        let dims = (0..ndim).map(|_| self.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let bytes = element_count(&dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WireError::new(codes::SHAPE, format!("dims {dims:?} overflow")))?;
        let raw = self.take(bytes)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(WireTensor { dims, data })
    }

    fn finish(&self) -> std::result::Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::new(
                codes::MALFORMED,
                format!("{} trailing payload bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_payload(msg_type: u32, payload: &[u8]) -> std::result::Result<Message, WireError> {
    let ty = MsgType::from_u32(msg_type)
        .ok_or_else(|| WireError::new(codes::MESSAGE_TYPE, format!("unknown message type {msg_type}")))?;
    let mut c = Cursor { buf: payload, pos: 0 };
    let msg = match ty {
        MsgType::PredictRequest => {
            let t = c.u32()?;
            let cond_len = c.u32()? as usize;
            let cond = std::str::from_utf8(c.take(cond_len)?)
                .map_err(|_| WireError::new(codes::MALFORMED, "condition is not UTF-8"))?
                .to_owned();
            let n = c.u32()?;
            if n == 0 || n > 16 {
                return Err(WireError::new(codes::SHAPE, format!("{n} tensors in request")));
            }
            let tensors = (0..n).map(|_| c.tensor()).collect::<std::result::Result<Vec<_>, _>>()?;
            Message::Request(WireRequest { t, cond, tensors })
        }
        MsgType::PredictResponse => {
            let n = c.u32()?;
            if n != 2 {
                return Err(WireError::new(codes::SHAPE, format!("{n} tensors in response, expected 2")));
            }
            let eps = c.tensor()?;
            let var = c.tensor()?;
            if eps.dims != var.dims {
                return Err(WireError::new(codes::SHAPE, "eps and var shapes differ"));
            }
            Message::Response { eps, var }
        }
        MsgType::Error => {
            let code = c.u32()?;
            let rest = c.take(payload.len() - 4)?;
            let message = String::from_utf8_lossy(rest).into_owned();
            Message::Error { code, message }
        }
    };
    c.finish()?;
    Ok(msg)
}

/// Outcome of reading one frame off a stream.
#[derive(Debug)]
pub enum Incoming {
    Message(Message),
    /// The frame was read whole but is invalid; the stream stays in sync.
    Rejected(WireError),
    /// The header is unusable; the stream cannot be trusted past this point.
    Fatal(WireError),
    Eof,
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

pub fn read_message(r: &mut impl Read) -> io::Result<Incoming> {
    let mut header = [0u8; HEADER_LEN];
    match read_full(r, &mut header)? {
        0 => return Ok(Incoming::Eof),
        n if n < HEADER_LEN => {
            return Ok(Incoming::Fatal(WireError::new(codes::MALFORMED, format!("truncated header ({n} bytes)"))))
        }
        _ => {}
    }
    if header[..4] != MAGIC {
        return Ok(Incoming::Fatal(WireError::new(codes::MALFORMED, "bad magic")));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let msg_type = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let len = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Ok(Incoming::Fatal(WireError::new(codes::MALFORMED, format!("payload of {len} bytes exceeds limit"))));
    }
    let mut payload = vec![0u8; len as usize];
    let got = read_full(r, &mut payload)?;
    if got < payload.len() {
        return Ok(Incoming::Fatal(WireError::new(
            codes::MALFORMED,
            format!("payload truncated: {got} of {len} bytes"),
        )));
    }
    if version != VERSION {
        return Ok(Incoming::Rejected(WireError::new(codes::VERSION, format!("unsupported version {version}"))));
    }
    Ok(match decode_payload(msg_type, &payload) {
        Ok(m) => Incoming::Message(m),
        Err(e) => Incoming::Rejected(e),
    })
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// A model behind [`serve`]: maps a request to `(eps, var)` or a wire error.
pub trait WireModel {
    fn predict(&mut self, req: &WireRequest) -> std::result::Result<(WireTensor, WireTensor), WireError>;
}

impl<F> WireModel for F
where
    F: FnMut(&WireRequest) -> std::result::Result<(WireTensor, WireTensor), WireError>,
{
    fn predict(&mut self, req: &WireRequest) -> std::result::Result<(WireTensor, WireTensor), WireError> {
        self(req)
    }
}

/// Answers every request with zero noise and zero variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZerosModel;

impl WireModel for ZerosModel {
    fn predict(&mut self, req: &WireRequest) -> std::result::Result<(WireTensor, WireTensor), WireError> {
        if req.tensors.len() != 1 {
            return Err(WireError::new(codes::SHAPE, format!("{} tensors, expected 1", req.tensors.len())));
        }
        let dims = req.tensors[0].dims.clone();
        Ok((WireTensor::zeros(dims.clone()), WireTensor::zeros(dims)))
    }
}

/// Serves requests until EOF or an unrecoverable framing error. Every frame
/// read gets exactly one response or error frame.
pub fn serve(mut r: impl Read, mut w: impl Write, model: &mut impl WireModel) -> io::Result<()> {
    loop {
        let reply = match read_message(&mut r)? {
            Incoming::Eof => return Ok(()),
            Incoming::Fatal(e) => {
                write_message(&mut w, &Message::Error { code: e.code, message: e.message })?;
                return Ok(());
            }
            Incoming::Rejected(e) => Message::Error { code: e.code, message: e.message },
            Incoming::Message(Message::Request(req)) => match model.predict(&req) {
                Ok((eps, var)) if eps.dims == req.tensors[0].dims && var.dims == eps.dims => {
                    Message::Response { eps, var }
                }
                Ok(_) => Message::Error { code: codes::MODEL, message: "model returned wrong shapes".into() },
                Err(e) => Message::Error { code: e.code, message: e.message },
            },
            Incoming::Message(other) => Message::Error {
                code: codes::MESSAGE_TYPE,
                message: format!("servers accept predict requests only, got {:?}", other.msg_type()),
            },
        };
        write_message(&mut w, &reply)?;
    }
}

/// Packs a latent sequence as one `[frames, channels, h, w]` tensor.
pub fn pack_sequence(latents: &[LatentTensor]) -> Result<WireTensor> {
    let first = latents.first().ok_or_else(|| Error::InvalidArgument("empty latent sequence".into()))?;
    if latents.iter().any(|z| !z.same_shape(first)) {
        return Err(Error::ShapeMismatch("latents in one sequence must share a shape".into()));
    }
    let [c, h, w] = first.shape();
    let dims = [latents.len(), c, h, w]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::ShapeMismatch(format!("dimension {d} too large"))))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(latents.len() * first.len());
    for z in latents {
        data.extend_from_slice(z.data());
    }
    WireTensor::new(dims, data)
}

/// Inverse of [`pack_sequence`], checked against the expected shape.
pub fn unpack_sequence(t: WireTensor, expected: &[u32]) -> Result<Vec<LatentTensor>> {
    if t.dims != expected {
        return Err(Error::Protocol(format!("response tensor {:?}, expected {expected:?}", t.dims)));
    }
    let [f, c, h, w] = [0, 1, 2, 3].map(|i| expected[i] as usize);
    let per = c * h * w;
    let mut out = Vec::with_capacity(f);
    for chunk in t.data.chunks_exact(per.max(1)).take(f) {
        out.push(LatentTensor::new(c, h, w, chunk.to_vec())?);
    }
    Ok(out)
}

trait Transport: Read + Write + Send {}
impl<T: Read + Write + Send> Transport for T {}

struct ChildPipe {
    child: Child,
    stdin: ChildStdin,
    stdout: ChildStdout,
}

impl Read for ChildPipe {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.stdout.read(buf)
    }
}

impl Write for ChildPipe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.stdin.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.stdin.flush()
    }
}

impl Drop for ChildPipe {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Client side: a [`DenoiserEndpoint`] backed by an SVDN connection.
/// One request is in flight at a time.
pub struct ExternalDenoiser {
    conn: Mutex<Box<dyn Transport>>,
    max_len: Option<usize>,
}

impl ExternalDenoiser {
    /// Connects to `tcp://host:port`, `host:port`, or spawns `stdio:<command>`
    /// and speaks over its stdin/stdout.
    pub fn connect(addr: &str) -> Result<Self> {
        if let Some(cmd) = addr.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace();
            let prog = parts.next().ok_or_else(|| Error::InvalidArgument("empty stdio command".into()))?;
            let mut child = Command::new(prog)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| Error::io(prog, e))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            return Ok(Self::from_stream(ChildPipe { child, stdin, stdout }));
        }
        let hostport = addr.strip_prefix("tcp://").unwrap_or(addr);
        let stream = TcpStream::connect(hostport).map_err(|e| Error::io(hostport, e))?;
        let _ = stream.set_nodelay(true);
        Ok(Self::from_stream(stream))
    }

    /// Wraps an already-open duplex stream.
    pub fn from_stream(stream: impl Read + Write + Send + 'static) -> Self {
        Self { conn: Mutex::new(Box::new(stream)), max_len: None }
    }

    pub fn with_max_sequence_len(mut self, limit: usize) -> Self {
        self.max_len = Some(limit);
        self
    }

    /// Sends one raw request and returns the reply message.
    pub fn round_trip(&self, req: WireRequest) -> Result<Message> {
        let mut conn = self.conn.lock().map_err(|_| Error::Protocol("connection poisoned".into()))?;
        write_message(&mut *conn, &Message::Request(req)).map_err(|e| Error::Protocol(format!("send: {e}")))?;
        match read_message(&mut *conn).map_err(|e| Error::Protocol(format!("receive: {e}")))? {
            Incoming::Message(m) => Ok(m),
            Incoming::Eof => Err(Error::Protocol("endpoint closed the connection".into())),
            Incoming::Rejected(e) | Incoming::Fatal(e) => Err(e.into()),
        }
    }
}

impl DenoiserEndpoint for ExternalDenoiser {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let packed = pack_sequence(req.latents)?;
        let dims = packed.dims.clone();
        let t = u32::try_from(req.t).map_err(|_| Error::InvalidArgument(format!("timestep {}", req.t)))?;
        let wire = WireRequest { t, cond: req.cond.to_owned(), tensors: vec![packed] };
        match self.round_trip(wire)? {
            Message::Response { eps, var } => {
                let pred = Prediction { eps: unpack_sequence(eps, &dims)?, var: unpack_sequence(var, &dims)? };
                pred.check(req.latents).map_err(|e| Error::Protocol(e.to_string()))?;
                Ok(pred)
            }
            Message::Error { code, message } => Err(Error::Remote { code, message }),
            Message::Request(_) => Err(Error::Protocol("endpoint sent a request".into())),
        }
    }

    fn capability(&self) -> Capability {
        Capability::Serialized
    }

    fn max_sequence_len(&self) -> Option<usize> {
        self.max_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> Message {
        Message::Request(WireRequest {
            t: 980,
            cond: "a cat".into(),
            tensors: vec![WireTensor::new(vec![1, 1, 1, 2], vec![1.5, -2.0]).unwrap()],
        })
    }

    #[test]
    fn request_bytes_match_layout() {
        let bytes = encode_frame(&request());
        let mut want = Vec::new();
        want.extend_from_slice(b"SVDN");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        let payload_len = 4 + 4 + 5 + 4 + 4 + 16 + 8;
        want.extend_from_slice(&(payload_len as u64).to_le_bytes());
        want.extend_from_slice(&980u32.to_le_bytes());
        want.extend_from_slice(&5u32.to_le_bytes());
        want.extend_from_slice(b"a cat");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&4u32.to_le_bytes());
        for d in [1u32, 1, 1, 2] {
            want.extend_from_slice(&d.to_le_bytes());
        }
        want.extend_from_slice(&1.5f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn messages_round_trip() {
        let t = WireTensor::new(vec![2, 1], vec![0.25, f32::MIN_POSITIVE]).unwrap();
        for m in [
            request(),
            Message::Response { eps: t.clone(), var: t },
            Message::Error { code: 5, message: "boom".into() },
        ] {
            let bytes = encode_frame(&m);
            match read_message(&mut bytes.as_slice()).unwrap() {
                Incoming::Message(back) => assert_eq!(back, m),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn header_faults() {
        let mut bytes = encode_frame(&request());
        bytes[0] = b'X';
        assert!(matches!(read_message(&mut bytes.as_slice()).unwrap(), Incoming::Fatal(e) if e.code == 1));

        let mut bytes = encode_frame(&request());
        bytes[4] = 2;
        assert!(matches!(read_message(&mut bytes.as_slice()).unwrap(), Incoming::Rejected(e) if e.code == 2));

        let mut bytes = encode_frame(&request());
        bytes[8] = 9;
        assert!(matches!(read_message(&mut bytes.as_slice()).unwrap(), Incoming::Rejected(e) if e.code == 3));

        let bytes = encode_frame(&request());
        assert!(matches!(read_message(&mut &bytes[..30]).unwrap(), Incoming::Fatal(_)));
        assert!(matches!(read_message(&mut &bytes[..0]).unwrap(), Incoming::Eof));
    }

    #[test]
    fn overflowing_dims_are_rejected() {
        let mut p = Vec::new();
        p.extend_from_slice(&1u32.to_le_bytes());
        p.extend_from_slice(&0u32.to_le_bytes());
        p.extend_from_slice(&1u32.to_le_bytes());
        p.extend_from_slice(&4u32.to_le_bytes());
        for _ in 0..4 {
            p.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode_payload(1, &p).is_err());
    }

    #[test]
    fn serve_answers_zeros_then_rejects_then_stops() {
        let mut input = encode_frame(&request());
        let mut bad = encode_frame(&request());
        bad[8] = 2; // a response sent to a server
        input.extend_from_slice(&bad);
        let mut out = Vec::new();
        serve(input.as_slice(), &mut out, &mut ZerosModel).unwrap();
        let mut r = out.as_slice();
        match read_message(&mut r).unwrap() {
            Incoming::Message(Message::Response { eps, var }) => {
                assert_eq!(eps.dims, vec![1, 1, 1, 2]);
                assert!(eps.data.iter().chain(&var.data).all(|&v| v == 0.0));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_message(&mut r).unwrap(), Incoming::Message(Message::Error { .. })));
        assert!(matches!(read_message(&mut r).unwrap(), Incoming::Eof));
    }

    #[test]
    fn pack_unpack_sequence() {
        let a = LatentTensor::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = LatentTensor::new(2, 1, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let packed = pack_sequence(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(packed.dims, vec![2, 2, 1, 2]);
        let dims = packed.dims.clone();
        assert_eq!(unpack_sequence(packed, &dims).unwrap(), vec![a.clone(), b]);
        let c = LatentTensor::zeros(1, 1, 2);
        assert!(pack_sequence(&[a, c]).is_err());
    }
}
