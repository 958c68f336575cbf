//! Message vocabulary, assignment/task/result schemas and the wire framing
//! shared by every node.

pub mod codec;
pub mod message;
pub mod types;
pub mod validate;

pub use codec::{
    decode, decode_all, decode_prefix, encode, encode_document, read_frame, read_message, write_message, ProtocolError,
    MAX_FRAME_LEN,
};
pub use message::Message;
pub use types::*;
pub use validate::{check_spec, validate_assignment, validate_value, ValidationFailed, Violation};
