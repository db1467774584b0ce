//! Monotonic nanosecond clock shared by the logging hot path and the
//! benchmark harness.

/// Current reading of the platform monotonic clock in nanoseconds.
///
/// The epoch is unspecified (usually boot time); only differences between
/// readings are meaningful.
#[inline]
pub fn now_ns() -> u64 {
    imp::now_ns()
}

/// Resolution of the monotonic clock in nanoseconds, as reported by the OS.
pub fn resolution_ns() -> u64 {
    imp::resolution_ns()
}

#[cfg(unix)]
mod imp {
    #[inline]
    pub fn now_ns() -> u64 {
        let mut ts = libc::timespec {
            tv_sec: 0,
            tv_nsec: 0,
        };
        // CLOCK_MONOTONIC cannot fail with a valid pointer.
        unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
    }

    pub fn resolution_ns() -> u64 {
        let mut ts = libc::timespec {
            tv_sec: 0,
            tv_nsec: 0,
        };
        unsafe { libc::clock_getres(libc::CLOCK_MONOTONIC, &mut ts) };
        ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
    }
}

#[cfg(not(unix))]
mod imp {
    use std::sync::OnceLock;
    use std::time::Instant;

    static ANCHOR: OnceLock<Instant> = OnceLock::new();

    #[inline]
    pub fn now_ns() -> u64 {
        let anchor = ANCHOR.get_or_init(Instant::now);
        anchor.elapsed().as_nanos() as u64
    }

    pub fn resolution_ns() -> u64 {
        1
    }
}
