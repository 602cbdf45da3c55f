//! Serves a causality dump over the adapter line protocol.
//!
//! Usage: `cexroot-dump-adapter <dump.json>`. Reads `WHY <node-key>` queries
//! on stdin and answers `PARENTS <n>` plus one `<signal> <cycle> <value>`
//! line per parent, or `ERR <message>`. Lets the subprocess adapter path be
//! exercised against the same data the in-process oracle reads.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use cexroot_core::event::NodeKey;
use cexroot_core::oracle::{load_dump, CausalityOracle};

fn main() {
    let mut args = std::env::args_os().skip(1);
    let path = match (args.next(), args.next()) {
        (Some(path), None) => PathBuf::from(path),
        _ => {
            eprintln!("usage: cexroot-dump-adapter <dump.json>");
            std::process::exit(2);
        }
    };
    let dump = match load_dump(&path) {
        Ok(dump) => dump,
        Err(e) => {
            eprintln!("cexroot-dump-adapter: {e}");
            std::process::exit(1);
        }
    };

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = match line {
            Ok(line) => line,
            Err(_) => break,
        };
        let reply = answer(&dump, line.trim());
        if out.write_all(reply.as_bytes()).and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}

fn answer(dump: &cexroot_core::oracle::CausalityDump, request: &str) -> String {
    let Some(key_text) = request.strip_prefix("WHY ") else {
        return format!("ERR unrecognized request {request:?}\n");
    };
    let key: NodeKey = match key_text.trim().parse() {
        Ok(key) => key,
        Err(e) => return format!("ERR {e}\n"),
    };
    match dump.parents_of(&key) {
        Ok(parents) => {
            let mut reply = format!("PARENTS {}\n", parents.len());
            for p in parents {
                reply.push_str(&format!("{} {} {}\n", p.signal, p.cycle, p.value));
            }
            reply
        }
        Err(e) => format!("ERR {e}\n"),
    }
}
