//! Length-prefixed framing.
//!
//! ```text
//! +--------------------+-------------------------------+
//! | length N (4 bytes) | N bytes of UTF-8 JSON         |
//! | big-endian u32     | one message document          |
//! +--------------------+-------------------------------+
//! ```

use serde_json::Value;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::message::Message;

/// Largest accepted frame body.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub const HEADER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("message body of {0} bytes exceeds the {MAX_FRAME_LEN} byte frame cap")]
    OversizeMessage(usize),
    #[error("frame announces {expected} body bytes but only {available} are available")]
    TruncatedFrame { expected: usize, available: usize },
    #[error("malformed message body: {0}")]
    MalformedBody(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Encodes one message into a complete frame.
pub fn encode(message: &Message) -> Result<Vec<u8>, ProtocolError> {
    encode_document(message)
}

/// Decodes the single frame at the start of `frame`. Trailing bytes are
/// ignored; use [`decode_prefix`] to walk a buffer of several frames.
pub fn decode(frame: &[u8]) -> Result<Message, ProtocolError> {
    decode_prefix(frame).map(|(m, _)| m)
}

/// Decodes the first frame of `buf`, returning the message and the number
/// of bytes consumed.
pub fn decode_prefix(buf: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if buf.len() < HEADER_LEN {
        return Err(ProtocolError::TruncatedFrame {
            expected: HEADER_LEN,
            available: buf.len(),
        });
    }
    let len = body_len(buf[..HEADER_LEN].try_into().expect("4 byte header"))?;
    let available = buf.len() - HEADER_LEN;
    if len > available {
        return Err(ProtocolError::TruncatedFrame {
            expected: len,
            available,
        });
    }
    let message = decode_body(&buf[HEADER_LEN..HEADER_LEN + len])?;
    Ok((message, HEADER_LEN + len))
}

/// Decodes every frame in `buf`, which must end on a frame boundary.
pub fn decode_all(mut buf: &[u8]) -> Result<Vec<Message>, ProtocolError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (m, used) = decode_prefix(buf)?;
        out.push(m);
        buf = &buf[used..];
    }
    Ok(out)
}

fn body_len(header: [u8; HEADER_LEN]) -> Result<usize, ProtocolError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::OversizeMessage(len));
    }
    Ok(len)
}

/// Decodes a frame body (no header).
pub fn decode_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let doc: Value =
        serde_json::from_slice(body).map_err(|e| ProtocolError::MalformedBody(e.to_string()))?;
    let kind = doc
        .get("kind")
        .ok_or_else(|| ProtocolError::MalformedBody("missing \"kind\"".into()))?
        .as_str()
        .ok_or_else(|| ProtocolError::MalformedBody("\"kind\" is not a string".into()))?;
    if !Message::is_known_kind(kind) {
        return Err(ProtocolError::UnknownKind(kind.to_owned()));
    }
    serde_json::from_value(doc).map_err(|e| ProtocolError::MalformedBody(e.to_string()))
}

/// Frames an arbitrary serializable document. Used for the external
/// executor contract, which shares the framing but not the message schema.
pub fn encode_document<T: serde::Serialize>(doc: &T) -> Result<Vec<u8>, ProtocolError> {
    let mut frame = vec![0u8; HEADER_LEN];
    serde_json::to_writer(&mut frame, doc).map_err(|e| ProtocolError::MalformedBody(e.to_string()))?;
    let body_len = frame.len() - HEADER_LEN;
    if body_len > MAX_FRAME_LEN {
        return Err(ProtocolError::OversizeMessage(body_len));
    }
    frame[..HEADER_LEN].copy_from_slice(&(body_len as u32).to_be_bytes());
    Ok(frame)
}

/// Reads one raw frame body. Returns `Ok(None)` on a clean end of stream
/// before any header byte.
pub async fn read_frame<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Vec<u8>>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let n = reader.read(&mut header[filled..]).await?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(ProtocolError::TruncatedFrame {
                expected: HEADER_LEN,
                available: filled,
            });
        }
        filled += n;
    }
    let len = body_len(header)?;
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ProtocolError::TruncatedFrame {
            expected: len,
            available: 0,
        },
        _ => ProtocolError::Io(e),
    })?;
    Ok(Some(body))
}

pub async fn read_message<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Option<Message>, ProtocolError> {
    match read_frame(reader).await? {
        Some(body) => decode_body(&body).map(Some),
        None => Ok(None),
    }
}

pub async fn write_message<W: AsyncWrite + Unpin>(writer: &mut W, message: &Message) -> Result<(), ProtocolError> {
    let frame = encode(message)?;
    writer.write_all(&frame).await?;
    writer.flush().await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::types::*;
    use std::collections::BTreeMap;

    #[test]
    fn heartbeat_frame_layout() {
        let frame = encode(&Message::Heartbeat { client_id: "c1".into() }).unwrap();
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        assert_eq!(len, frame.len() - 4);
        let body: Value = serde_json::from_slice(&frame[4..]).unwrap();
        assert_eq!(body["kind"], "heartbeat");
        assert_eq!(body["client_id"], "c1");
    }

    #[test]
    fn cancel_round_trip() {
        let m = Message::Cancel {
            assignment_id: AssignmentId::new("a1"),
        };
        assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn short_body_is_truncated() {
        let mut frame = 100u32.to_be_bytes().to_vec();
        frame.extend(std::iter::repeat_n(b' ', 50));
        assert!(matches!(
            decode(&frame),
            Err(ProtocolError::TruncatedFrame { expected: 100, available: 50 })
        ));
    }

    #[test]
    fn partial_header_is_truncated() {
        assert!(matches!(decode(&[0, 0]), Err(ProtocolError::TruncatedFrame { .. })));
    }

    fn frame_body(body: &[u8]) -> Vec<u8> {
        let mut f = (body.len() as u32).to_be_bytes().to_vec();
        f.extend_from_slice(body);
        f
    }

    #[test]
    fn unknown_kind() {
        let err = decode(&frame_body(br#"{"kind":"warp"}"#)).unwrap_err();
        assert!(matches!(err, ProtocolError::UnknownKind(k) if k == "warp"));
    }

    #[test]
    fn malformed_bodies() {
        for body in [&b"not json"[..], br#"{"no_kind":1}"#, br#"{"kind":7}"#, br#"{"kind":"cancel"}"#] {
            assert!(matches!(decode(&frame_body(body)), Err(ProtocolError::MalformedBody(_))), "{body:?}");
        }
    }

    #[test]
    fn unknown_fields_are_tolerated() {
        let m = decode(&frame_body(br#"{"kind":"heartbeat","client_id":"c9","future":[1,2]}"#)).unwrap();
        assert_eq!(m, Message::Heartbeat { client_id: "c9".into() });
    }

    #[test]
    fn header_over_cap_is_rejected_without_allocating() {
        let frame = (MAX_FRAME_LEN as u32 + 1).to_be_bytes();
        assert!(matches!(decode(&frame), Err(ProtocolError::OversizeMessage(_))));
    }

    fn sample_result(n: usize) -> Message {
        let mut values = BTreeMap::new();
        values.insert("v".to_owned(), (0..n).map(|i| 123.456789012345 + i as f64 * 1e-3).collect());
        Message::Result {
            result: TaskResult {
                assignment_id: AssignmentId::new("ab"),
                iteration: 0,
                client_id: "c1".into(),
                body: ResultBody::Sample { values },
            },
        }
    }

    #[test]
    fn oversize_boundary_is_measured() {
        // One million doubles: serialize the body directly, measure it, and
        // check encode agrees with the cap on that measurement.
        let m = sample_result(1_000_000);
        let measured = serde_json::to_vec(&m).unwrap().len();
        match encode(&m) {
            Ok(frame) => {
                assert!(measured <= MAX_FRAME_LEN);
                assert_eq!(frame.len(), measured + HEADER_LEN);
            }
            Err(ProtocolError::OversizeMessage(n)) => {
                assert!(measured > MAX_FRAME_LEN);
                assert_eq!(n, measured);
            }
            Err(e) => panic!("unexpected {e}"),
        }
        // A smaller result must fit.
        assert!(encode(&sample_result(10_000)).is_ok());
    }

    #[tokio::test]
    async fn async_stream_round_trip() {
        let (mut a, mut b) = tokio::io::duplex(64);
        let msgs = vec![
            Message::Heartbeat { client_id: "c1".into() },
            sample_result(500),
            Message::StatusRequest,
        ];
        let sent = msgs.clone();
        let writer = tokio::spawn(async move {
            for m in &sent {
                write_message(&mut a, m).await.unwrap();
            }
        });
        for m in &msgs {
            assert_eq!(read_message(&mut b).await.unwrap().as_ref(), Some(m));
        }
        writer.await.unwrap();
        assert!(read_message(&mut b).await.unwrap().is_none());
    }
}
