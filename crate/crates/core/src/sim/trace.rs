//! Optional line-oriented event trace.
//!
//! One line per event: `time_us channel node kind detail`, with `-` for a
//! missing channel or node.

use std::fmt::{self, Write as _};

use crate::time::Micros;
use crate::types::{ChannelId, NodeId};

#[derive(Debug, Clone, Default)]
pub struct Trace {
    buf: Option<String>,
}

impl Trace {
    pub fn enabled() -> Self {
        Trace {
            buf: Some(String::new()),
        }
    }

    pub fn disabled() -> Self {
        Trace { buf: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.buf.is_some()
    }

    pub fn record(
        &mut self,
        time: Micros,
        channel: Option<ChannelId>,
        node: Option<NodeId>,
        kind: &str,
        detail: fmt::Arguments<'_>,
    ) {
        let Some(buf) = self.buf.as_mut() else {
            return;
        };
        let _ = write!(buf, "{} ", time.0);
        let _ = match channel {
            Some(c) => write!(buf, "{c} "),
            None => write!(buf, "- "),
        };
        let _ = match node {
            Some(n) => write!(buf, "{n} "),
            None => write!(buf, "- "),
        };
        let _ = writeln!(buf, "{kind} {detail}");
    }

    pub fn into_text(self) -> String {
        self.buf.unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut t = Trace::enabled();
        t.record(Micros(1500), Some(ChannelId(0)), None, "boundary", format_args!("frame=3"));
        t.record(Micros(2000), Some(ChannelId(1)), Some(NodeId(4)), "tx", format_args!("control"));
        assert_eq!(t.into_text(), "1500 c0 - boundary frame=3\n2000 c1 n4 tx control\n");
        let mut off = Trace::disabled();
        off.record(Micros(0), None, None, "x", format_args!(""));
        assert_eq!(off.into_text(), "");
    }
}
