//! Reference external executor: reads one task document from stdin, runs
//! the built-in kernel on the supplied samples and writes the result body.

use std::io::{Read, Write};

use oodida::client::{compute, ExternalTask};
use oodida::protocol::encode_document;

fn main() {
    let mut input = Vec::new();
    if let Err(e) = std::io::stdin().read_to_end(&mut input) {
        eprintln!("cannot read stdin: {e}");
        std::process::exit(2);
    }
    if input.len() < 4 {
        eprintln!("no frame on stdin");
        std::process::exit(2);
    }
    let doc: ExternalTask = match serde_json::from_slice(&input[4..]) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("bad task document: {e}");
            std::process::exit(2);
        }
    };
    match compute(&doc.client_id, doc.seed, &doc.task, &doc.samples) {
        Ok(body) => {
            let frame = encode_document(&body).expect("result encodes");
            let mut out = std::io::stdout().lock();
            out.write_all(&frame).and_then(|_| out.flush()).expect("stdout writable");
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
