//! Text trace files: one `op,addr[,data_hex]` record per line, `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    check_halt_placement, AccessKind, LogicalAccess, LogicalTrace, ObservedAccess, Op, Payload,
};
use crate::error::{Error, Result};

/// Parse trace text, rejecting addresses `>= addr_space`.
pub fn parse_trace(text: &str, addr_space: u64) -> Result<LogicalTrace> {
    let mut accesses = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let access = parse_record(line).map_err(|msg| Error::Parse { line: line_no, msg })?;
        if access.op != Op::Halt && access.addr >= addr_space {
            return Err(Error::Parse {
                line: line_no,
                msg: Error::AddressOutOfRange {
                    addr: access.addr,
                    space: addr_space,
                }
                .to_string(),
            });
        }
        accesses.push(access);
    }
    check_halt_placement(&accesses)?;
    Ok(LogicalTrace::Finite(accesses))
}

fn parse_record(line: &str) -> std::result::Result<LogicalAccess, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let op = match fields[0] {
        "R" => Op::Read,
        "W" => Op::Write,
        "H" => Op::Halt,
        other => return Err(format!("unknown op code {other:?}")),
    };
    if op == Op::Halt {
        return match fields.as_slice() {
            [_] | [_, "0"] => Ok(LogicalAccess::halt()),
            _ => Err("halt takes no address or data".into()),
        };
    }
    if fields.len() < 2 || fields.len() > 3 {
        return Err(format!("expected op,addr[,data], got {} fields", fields.len()));
    }
    let addr: u64 = fields[1]
        .parse()
        .map_err(|_| format!("invalid address {:?}", fields[1]))?;
    let data = match fields.get(2) {
        Some(hex) => Payload::from_hex(hex)?,
        None => Payload::ZERO,
    };
    Ok(LogicalAccess { op, addr, data })
}

/// Render accesses in the trace file format. Zero payloads are omitted.
pub fn format_trace(accesses: &[LogicalAccess]) -> String {
    let mut out = String::new();
    for a in accesses {
        let line = match a.op {
            Op::Halt => "H".to_string(),
            op => {
                let code = if op == Op::Read { 'R' } else { 'W' };
                if a.data.is_zero() {
                    format!("{code},{}", a.addr)
                } else {
                    format!("{code},{},{}", a.addr, a.data.to_hex())
                }
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Render an observed trace as `tick,tree,leaf` lines (adversary view only),
/// or `tick,tree,leaf,kind` with ground truth appended.
pub fn format_observed(trace: &[ObservedAccess], with_kind: bool) -> String {
    let mut out = String::with_capacity(trace.len() * 16);
    out.push_str(if with_kind { "tick,tree,leaf,kind\n" } else { "tick,tree,leaf\n" });
    for a in trace {
        let _ = write!(out, "{},{},{}", a.tick, a.tree, a.leaf);
        if with_kind {
            let kind = match a.hidden_kind {
                AccessKind::Real => "real",
                AccessKind::Dummy => "dummy",
                AccessKind::Padding => "padding",
            };
            let _ = write!(out, ",{kind}");
        }
        out.push('\n');
    }
    out
}

pub fn read_trace_file(path: impl AsRef<Path>, addr_space: u64) -> Result<LogicalTrace> {
    parse_trace(&fs::read_to_string(path)?, addr_space)
}

pub fn write_trace_file(trace: &LogicalTrace, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_trace(&trace.to_vec()?))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(line: &str) -> Result<LogicalAccess> {
        parse_trace(line, 1 << 20).map(|t| t.to_vec().unwrap()[0])
    }

    #[test]
    fn records() {
        assert_eq!(one("R,5").unwrap(), LogicalAccess::read(5));
        assert_eq!(
            one("W,3,deadbeef").unwrap(),
            LogicalAccess::write(3, Payload::from_u64(0xdead_beef))
        );
        assert_eq!(one("H").unwrap(), LogicalAccess::halt());
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_trace("# header\nR,1\nX,1\n", 8).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_trace("R,1\nR,9\n", 8).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_trace("R", 8).is_err());
        assert!(parse_trace("R,1,2,3", 8).is_err());
        assert!(parse_trace("W,1,zz", 8).is_err());
        assert!(parse_trace("H\nR,1", 8).is_err());
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let t = parse_trace("# c\n\nR,1\n  # indented\nW,2,ff\n", 8).unwrap();
        assert_eq!(t.len(), Some(2));
    }

    fn access_strategy() -> impl Strategy<Value = LogicalAccess> {
        (0u8..2, 0u64..1024, any::<u64>(), any::<bool>()).prop_map(|(op, addr, v, zero)| {
            let data = if zero { Payload::ZERO } else { Payload::from_u64(v) };
            if op == 0 {
                LogicalAccess { op: Op::Read, addr, data }
            } else {
                LogicalAccess::write(addr, data)
            }
        })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            mut accesses in proptest::collection::vec(access_strategy(), 0..64),
            halt in any::<bool>(),
        ) {
            if halt {
                accesses.push(LogicalAccess::halt());
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.trace");
            let trace = LogicalTrace::finite(accesses.clone()).unwrap();
            write_trace_file(&trace, &path).unwrap();
            let back = read_trace_file(&path, 1024).unwrap();
            prop_assert_eq!(back.to_vec().unwrap(), accesses);
        }
    }
}
