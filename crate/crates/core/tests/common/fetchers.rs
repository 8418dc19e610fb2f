//! Fake search fetchers: one counts calls, one forbids the network.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crewline_core::search::{FetchError, Fetcher};

pub const PAGE: &str = r#"<table>
<tr><td><a rel="nofollow" href="https://example.org/a" class='result-link'>First &amp; best</a></td></tr>
<tr><td class='result-snippet'>Snippet <b>one</b>.</td></tr>
<tr><td><a rel="nofollow" href="https://example.org/b" class='result-link'>Second</a></td></tr>
<tr><td class='result-snippet'>Snippet two.</td></tr>
</table>"#;

/// Serves `PAGE`, counting calls; the first `fail_first` calls fail.
pub struct Counting {
    pub calls: Arc<AtomicUsize>,
    pub fail_first: usize,
    pub transient: bool,
    pub delay: Duration,
    pub page: String,
}

impl Counting {
    pub fn new(calls: &Arc<AtomicUsize>) -> Self {
        Self { calls: calls.clone(), fail_first: 0, transient: true, delay: Duration::ZERO, page: PAGE.into() }
    }
}

impl Fetcher for Counting {
    fn fetch(&self, _endpoint: &str, _query: &str) -> Result<String, FetchError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        if n < self.fail_first {
            return Err(FetchError { transient: self.transient, message: "connection reset".into() });
        }
        Ok(self.page.clone())
    }
}

pub struct NoNetwork;

impl Fetcher for NoNetwork {
    fn fetch(&self, _endpoint: &str, query: &str) -> Result<String, FetchError> {
        panic!("network used in fixture mode for {query}");
    }
}
