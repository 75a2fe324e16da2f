use thiserror::Error;

/// Bytes before the MBAP length field's payload: transaction id, protocol
/// id and the length field itself.
pub const MBAP_PREFIX_LEN: usize = 6;

/// Estimated Ethernet + IPv4 + TCP header bytes added to each application
/// message when reporting a frame length.
pub const SYNTHETIC_HEADER_BYTES: u32 = 54;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("MBAP length field is zero")]
    ZeroLength,
}

/// Splits a client byte stream into application messages. Modbus/TCP data
/// is cut on MBAP boundaries; a buffer whose protocol id is not 0 is not
/// Modbus and is passed on as one message per read burst. Bytes are never
/// altered.
#[derive(Debug, Default)]
pub struct MbapFramer {
    buf: Vec<u8>,
}

impl MbapFramer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Vec<u8>>, FrameError> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut start = 0;
        loop {
            let rest = &self.buf[start..];
            if rest.len() >= 4 && (rest[2] != 0 || rest[3] != 0) {
                out.push(rest.to_vec());
                start = self.buf.len();
                break;
            }
            if rest.len() < MBAP_PREFIX_LEN {
                break;
            }
            let declared = u16::from_be_bytes([rest[4], rest[5]]) as usize;
            if declared == 0 {
                self.buf.clear();
                return Err(FrameError::ZeroLength);
            }
            let total = MBAP_PREFIX_LEN + declared;
            if rest.len() < total {
                break;
            }
            out.push(rest[..total].to_vec());
            start += total;
        }
        self.buf.drain(..start);
        Ok(out)
    }
}

/// Modbus function code of a framed message, if it is long enough.
pub fn function_code(message: &[u8]) -> Option<u8> {
    message.get(7).copied()
}
