use thiserror::Error;

/// Largest payload a frame may carry, excluding the newline terminator.
pub const MAX_PAYLOAD: usize = 256;
pub const TERMINATOR: u8 = b'\n';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload is {0} bytes, over the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("payload contains a newline at byte {0}")]
    InteriorNewline(usize),
    #[error("payload contains a non-ASCII byte at {0}")]
    NonAscii(usize),
}

/// A newline-terminated ASCII line carrying one command string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame(Vec<u8>);

impl Frame {
    pub fn new(payload: impl Into<Vec<u8>>) -> Result<Self, FrameError> {
        let payload = payload.into();
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::Oversize(payload.len()));
        }
        if let Some(i) = payload.iter().position(|&b| b == TERMINATOR) {
            return Err(FrameError::InteriorNewline(i));
        }
        if let Some(i) = payload.iter().position(|b| !b.is_ascii()) {
            return Err(FrameError::NonAscii(i));
        }
        Ok(Self(payload))
    }

    pub fn payload(&self) -> &[u8] {
        &self.0
    }

    /// Payload as text; always valid since frames are ASCII.
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("frames are ASCII")
    }

    /// Wire bytes: payload followed by the terminator.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        out.extend_from_slice(&self.0);
        out.push(TERMINATOR);
        out
    }
}

/// Newline-delimited reassembly of a byte stream.
///
/// A line that grows past [`MAX_PAYLOAD`] is dropped up to its terminator
/// and reported once as [`FrameError::Oversize`].
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    overflowed: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<Vec<u8>, FrameError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == TERMINATOR {
                if self.overflowed > 0 {
                    out.push(Err(FrameError::Oversize(self.overflowed)));
                    self.overflowed = 0;
                } else {
                    out.push(Ok(std::mem::take(&mut self.buf)));
                }
            } else if self.overflowed > 0 {
                self.overflowed += 1;
            } else if self.buf.len() == MAX_PAYLOAD {
                self.overflowed = self.buf.len() + 1;
                self.buf.clear();
            } else {
                self.buf.push(b);
            }
        }
        out
    }

    /// Bytes of an unfinished line, if any.
    pub fn pending(&self) -> usize {
        if self.overflowed > 0 {
            self.overflowed
        } else {
            self.buf.len()
        }
    }

    /// Drops any unfinished line, returning how many bytes were discarded.
    pub fn discard_partial(&mut self) -> usize {
        let n = self.pending();
        self.buf.clear();
        self.overflowed = 0;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_validation() {
        assert_eq!(Frame::new("f,100").unwrap().encode(), b"f,100\n");
        assert_eq!(Frame::new(vec![b'a'; 257]), Err(FrameError::Oversize(257)));
        assert!(Frame::new(vec![b'a'; 256]).is_ok());
        assert_eq!(Frame::new("f\ns"), Err(FrameError::InteriorNewline(1)));
        assert_eq!(Frame::new("f,1é"), Err(FrameError::NonAscii(3)));
        assert_eq!(Frame::new("").unwrap().encode(), b"\n");
    }

    #[test]
    fn decoder_reassembles_split_lines() {
        let mut d = FrameDecoder::new();
        assert!(d.push(b"f,1").is_empty());
        assert_eq!(d.pending(), 3);
        let got = d.push(b"00\nr,90\n\ns");
        assert_eq!(got, vec![Ok(b"f,100".to_vec()), Ok(b"r,90".to_vec()), Ok(Vec::new())]);
        assert_eq!(d.discard_partial(), 1);
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn decoder_drops_oversize_lines_whole() {
        let mut d = FrameDecoder::new();
        let mut bytes = vec![b'x'; 300];
        bytes.extend_from_slice(b"\ns\n");
        let got = d.push(&bytes);
        assert_eq!(got, vec![Err(FrameError::Oversize(300)), Ok(b"s".to_vec())]);
    }
}
