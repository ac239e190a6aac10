//! Verbosity control via the `SPANFORGE_LOG` environment variable:
//! unset or `off` is quiet, `info` reports stage progress, `debug` adds
//! per-artifact detail. Output goes to stderr only.

use std::sync::OnceLock;

pub fn level() -> u8 {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("SPANFORGE_LOG").as_deref() {
        Ok("debug") => 2,
        Ok("info") => 1,
        _ => 0,
    })
}

macro_rules! vinfo {
    ($($arg:tt)*) => {
        if $crate::vlog::level() >= 1 {
            eprintln!($($arg)*);
        }
    };
}

macro_rules! vdebug {
    ($($arg:tt)*) => {
        if $crate::vlog::level() >= 2 {
            eprintln!($($arg)*);
        }
    };
}

pub(crate) use {vdebug, vinfo};
