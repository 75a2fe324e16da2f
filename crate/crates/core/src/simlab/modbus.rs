//! Modbus/TCP request encoding and an in-memory stub controller.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::net::{serve, ServerHandle};
use crate::relay::MbapFramer;

pub const READ_COILS: u8 = 0x01;
pub const READ_DISCRETE_INPUTS: u8 = 0x02;
pub const READ_HOLDING_REGISTERS: u8 = 0x03;
pub const READ_INPUT_REGISTERS: u8 = 0x04;
pub const WRITE_SINGLE_COIL: u8 = 0x05;
pub const WRITE_SINGLE_REGISTER: u8 = 0x06;
pub const WRITE_MULTIPLE_COILS: u8 = 0x0F;
pub const WRITE_MULTIPLE_REGISTERS: u8 = 0x10;

/// The eight function codes the stub answers, in benchmark order.
pub const SUPPORTED_FUNCTIONS: [u8; 8] = [
    READ_COILS,
    READ_DISCRETE_INPUTS,
    READ_HOLDING_REGISTERS,
    READ_INPUT_REGISTERS,
    WRITE_SINGLE_COIL,
    WRITE_SINGLE_REGISTER,
    WRITE_MULTIPLE_COILS,
    WRITE_MULTIPLE_REGISTERS,
];

pub const ILLEGAL_FUNCTION: u8 = 0x01;
pub const ILLEGAL_DATA_ADDRESS: u8 = 0x02;
pub const ILLEGAL_DATA_VALUE: u8 = 0x03;

const TABLE_SIZE: usize = 1 << 16;

pub fn function_name(fc: u8) -> &'static str {
    match fc {
        READ_COILS => "read_coils",
        READ_DISCRETE_INPUTS => "read_discrete_inputs",
        READ_HOLDING_REGISTERS => "read_holding_registers",
        READ_INPUT_REGISTERS => "read_input_registers",
        WRITE_SINGLE_COIL => "write_single_coil",
        WRITE_SINGLE_REGISTER => "write_single_register",
        WRITE_MULTIPLE_COILS => "write_multiple_coils",
        WRITE_MULTIPLE_REGISTERS => "write_multiple_registers",
        _ => "unsupported",
    }
}

/// Wraps a PDU in an MBAP header for unit 1.
pub fn adu(transaction: u16, pdu: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + pdu.len());
    out.extend_from_slice(&transaction.to_be_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&((pdu.len() + 1) as u16).to_be_bytes());
    out.push(1);
    out.extend_from_slice(pdu);
    out
}

fn be(v: u16) -> [u8; 2] {
    v.to_be_bytes()
}

/// Read request for FC 1–4.
pub fn read_request(fc: u8, addr: u16, qty: u16) -> Vec<u8> {
    let [a0, a1] = be(addr);
    let [q0, q1] = be(qty);
    vec![fc, a0, a1, q0, q1]
}

pub fn write_single_coil(addr: u16, on: bool) -> Vec<u8> {
    let [a0, a1] = be(addr);
    vec![WRITE_SINGLE_COIL, a0, a1, if on { 0xFF } else { 0 }, 0]
}

pub fn write_single_register(addr: u16, value: u16) -> Vec<u8> {
    let [a0, a1] = be(addr);
    let [v0, v1] = be(value);
    vec![WRITE_SINGLE_REGISTER, a0, a1, v0, v1]
}

pub fn write_multiple_coils(addr: u16, values: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; values.len().div_ceil(8)];
    for (i, &v) in values.iter().enumerate() {
        if v {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    let mut pdu = vec![WRITE_MULTIPLE_COILS];
    pdu.extend_from_slice(&be(addr));
    pdu.extend_from_slice(&be(values.len() as u16));
    pdu.push(bytes.len() as u8);
    pdu.extend_from_slice(&bytes);
    pdu
}

pub fn write_multiple_registers(addr: u16, values: &[u16]) -> Vec<u8> {
    let mut pdu = vec![WRITE_MULTIPLE_REGISTERS];
    pdu.extend_from_slice(&be(addr));
    pdu.extend_from_slice(&be(values.len() as u16));
    pdu.push((values.len() * 2) as u8);
    for v in values {
        pdu.extend_from_slice(&be(*v));
    }
    pdu
}

/// A representative request PDU for each supported function code.
pub fn sample_request(fc: u8, seq: u16) -> Vec<u8> {
    match fc {
        READ_COILS | READ_DISCRETE_INPUTS => read_request(fc, seq % 64, 16),
        READ_HOLDING_REGISTERS | READ_INPUT_REGISTERS => read_request(fc, seq % 64, 10),
        WRITE_SINGLE_COIL => write_single_coil(seq % 64, seq.is_multiple_of(2)),
        WRITE_SINGLE_REGISTER => write_single_register(seq % 64, seq),
        WRITE_MULTIPLE_COILS => write_multiple_coils(seq % 64, &[true, false, true, true, false, false, true, false, true, true]),
        WRITE_MULTIPLE_REGISTERS => write_multiple_registers(seq % 64, &[seq, seq.wrapping_add(1), seq.wrapping_add(2), seq.wrapping_add(3)]),
        _ => vec![fc],
    }
}

/// Coil, discrete-input and register tables of the stub.
pub struct DataMap {
    coils: Vec<bool>,
    discrete: Vec<bool>,
    holding: Vec<u16>,
    input: Vec<u16>,
}

impl Default for DataMap {
    fn default() -> Self {
        DataMap {
            coils: vec![false; TABLE_SIZE],
            discrete: (0..TABLE_SIZE).map(|i| i % 3 == 0).collect(),
            holding: vec![0; TABLE_SIZE],
            input: (0..TABLE_SIZE).map(|i| i as u16).collect(),
        }
    }
}

fn exception(fc: u8, code: u8) -> Vec<u8> {
    vec![fc | 0x80, code]
}

fn u16_at(pdu: &[u8], i: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*pdu.get(i)?, *pdu.get(i + 1)?]))
}

fn range(addr: u16, qty: u16, max_qty: u16) -> Result<std::ops::Range<usize>, u8> {
    if qty == 0 || qty > max_qty {
        return Err(ILLEGAL_DATA_VALUE);
    }
    let start = addr as usize;
    let end = start + qty as usize;
    if end > TABLE_SIZE {
        return Err(ILLEGAL_DATA_ADDRESS);
    }
    Ok(start..end)
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

impl DataMap {
    /// Executes one request PDU and returns the response PDU.
    pub fn execute(&mut self, pdu: &[u8]) -> Vec<u8> {
        let Some(&fc) = pdu.first() else {
            return exception(0, ILLEGAL_FUNCTION);
        };
        match self.try_execute(fc, pdu) {
            Ok(resp) => resp,
            Err(code) => exception(fc, code),
        }
    }

    fn try_execute(&mut self, fc: u8, pdu: &[u8]) -> Result<Vec<u8>, u8> {
        if !SUPPORTED_FUNCTIONS.contains(&fc) {
            return Err(ILLEGAL_FUNCTION);
        }
        let addr = u16_at(pdu, 1).ok_or(ILLEGAL_DATA_VALUE)?;
        let word = u16_at(pdu, 3).ok_or(ILLEGAL_DATA_VALUE)?;
        match fc {
            READ_COILS | READ_DISCRETE_INPUTS => {
                let r = range(addr, word, 2000)?;
                let table = if fc == READ_COILS { &self.coils } else { &self.discrete };
                let bytes = pack_bits(&table[r]);
                let mut out = vec![fc, bytes.len() as u8];
                out.extend(bytes);
                Ok(out)
            }
            READ_HOLDING_REGISTERS | READ_INPUT_REGISTERS => {
                let r = range(addr, word, 125)?;
                let table = if fc == READ_HOLDING_REGISTERS { &self.holding } else { &self.input };
                let mut out = vec![fc, (word * 2) as u8];
                for v in &table[r] {
                    out.extend_from_slice(&v.to_be_bytes());
                }
                Ok(out)
            }
            WRITE_SINGLE_COIL => {
                let on = match word {
                    0xFF00 => true,
                    0x0000 => false,
                    _ => return Err(ILLEGAL_DATA_VALUE),
                };
                self.coils[addr as usize] = on;
                Ok(pdu[..5].to_vec())
            }
            WRITE_SINGLE_REGISTER => {
                self.holding[addr as usize] = word;
                Ok(pdu[..5].to_vec())
            }
            WRITE_MULTIPLE_COILS => {
                let r = range(addr, word, 1968)?;
                let count = *pdu.get(5).ok_or(ILLEGAL_DATA_VALUE)? as usize;
                let data = pdu.get(6..6 + count).ok_or(ILLEGAL_DATA_VALUE)?;
                if count != (word as usize).div_ceil(8) {
                    return Err(ILLEGAL_DATA_VALUE);
                }
                for (j, i) in r.enumerate() {
                    self.coils[i] = data[j / 8] & (1 << (j % 8)) != 0;
                }
                Ok(vec![fc, pdu[1], pdu[2], pdu[3], pdu[4]])
            }
            _ => {
                let r = range(addr, word, 123)?;
                let count = *pdu.get(5).ok_or(ILLEGAL_DATA_VALUE)? as usize;
                let data = pdu.get(6..6 + count).ok_or(ILLEGAL_DATA_VALUE)?;
                if count != word as usize * 2 {
                    return Err(ILLEGAL_DATA_VALUE);
                }
                for (j, i) in r.enumerate() {
                    self.holding[i] = u16::from_be_bytes([data[2 * j], data[2 * j + 1]]);
                }
                Ok(vec![fc, pdu[1], pdu[2], pdu[3], pdu[4]])
            }
        }
    }
}

/// Answers one MBAP frame: same transaction and unit id, response PDU.
pub fn respond(map: &Mutex<DataMap>, frame: &[u8]) -> Option<Vec<u8>> {
    if frame.len() < 8 || frame[2] != 0 || frame[3] != 0 {
        return None;
    }
    let resp = map.lock().unwrap().execute(&frame[7..]);
    let mut out = adu(u16::from_be_bytes([frame[0], frame[1]]), &resp);
    out[6] = frame[6];
    Some(out)
}

/// Stand-in for the protected controller.
pub struct StubController {
    handle: ServerHandle,
    map: Arc<Mutex<DataMap>>,
}

impl StubController {
    pub fn start(addr: SocketAddr) -> io::Result<Self> {
        let map = Arc::new(Mutex::new(DataMap::default()));
        let shared = map.clone();
        let handle = serve(addr, "stub", move |stream, _peer, stop| {
            if let Err(e) = session(stream, &shared, &stop) {
                log::debug!("stub session ended: {e}");
            }
        })?;
        Ok(StubController { handle, map })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.handle.local_addr()
    }

    pub fn data(&self) -> &Arc<Mutex<DataMap>> {
        &self.map
    }

    pub fn shutdown(self) {
        self.handle.shutdown();
    }
}

fn session(mut stream: TcpStream, map: &Mutex<DataMap>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut framer = MbapFramer::new();
    let mut buf = [0u8; 4096];
    while !stop.load(Ordering::Relaxed) {
        let n = match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        };
        let frames = framer
            .push(&buf[..n])
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        for frame in frames {
            if let Some(resp) = respond(map, &frame) {
                stream.write_all(&resp)?;
            }
        }
    }
    Ok(())
}

/// Sends one request ADU and reads back one response ADU.
pub fn round_trip(stream: &mut TcpStream, request: &[u8]) -> io::Result<Vec<u8>> {
    stream.write_all(request)?;
    let mut head = [0u8; 6];
    stream.read_exact(&mut head)?;
    let len = u16::from_be_bytes([head[4], head[5]]) as usize;
    let mut out = head.to_vec();
    out.resize(6 + len, 0);
    stream.read_exact(&mut out[6..])?;
    Ok(out)
}
