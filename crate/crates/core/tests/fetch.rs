use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::NaiveDate;
use quant_core::market_data::{fetch_remote, DataError, FetchOptions};

/// Minimal HTTP server answering `GET /<ticker>?...` from a fixed table.
struct Fixture {
    endpoint: String,
    hits: Arc<AtomicUsize>,
    paths: Arc<Mutex<Vec<String>>>,
}

fn serve(routes: HashMap<String, (u16, String)>) -> Fixture {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let paths = Arc::new(Mutex::new(Vec::new()));
    let (h, p) = (hits.clone(), paths.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).is_err() {
                continue;
            }
            loop {
                let mut header = String::new();
                if reader.read_line(&mut header).map_or(true, |n| n == 0) || header.trim().is_empty() {
                    break;
                }
            }
            h.fetch_add(1, Ordering::SeqCst);
            let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
            p.lock().unwrap().push(path.clone());
            let ticker = path.trim_start_matches('/').split('?').next().unwrap_or("");
            let (status, body) = routes
                .get(ticker)
                .cloned()
                .unwrap_or((404, "not found".to_string()));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: text/csv\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    Fixture { endpoint, hits, paths }
}

const PAYLOAD: &str = "Date,Open,High,Low,Close,Adj Close,Volume\n\
2021-01-04,10,11,9,10.5,10.4,1000\n\
2021-01-05,10.5,12,10,11.5,11.4,2000\n\
2021-01-06,11.5,12.5,11,12,11.9,1500\n";

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn options(endpoint: &str, dir: &std::path::Path) -> FetchOptions {
    FetchOptions {
        max_attempts: 2,
        timeout: Duration::from_secs(5),
        ..FetchOptions::new(endpoint, dir)
    }
}

#[test]
fn downloads_then_serves_from_cache() {
    let fx = serve(HashMap::from([("AAA".to_string(), (200, PAYLOAD.to_string()))]));
    let dir = tempfile::tempdir().unwrap();
    let opts = options(&fx.endpoint, dir.path());
    let s = fetch_remote("AAA", ymd(2021, 1, 1), ymd(2021, 1, 31), &opts).unwrap();
    assert_eq!(s.closes(), vec![10.5, 11.5, 12.0]);
    assert_eq!(fx.hits.load(Ordering::SeqCst), 1);
    let path = fx.paths.lock().unwrap()[0].clone();
    assert!(path.starts_with("/AAA?period1=1609459200&period2="), "{path}");
    assert!(path.ends_with("&interval=1d&events=history"), "{path}");

    let cached = std::fs::read_to_string(dir.path().join("AAA.csv")).unwrap();
    assert_eq!(
        cached,
        "date,ticker,open,high,low,close,volume\n\
         2021-01-04,AAA,10,11,9,10.5,1000\n\
         2021-01-05,AAA,10.5,12,10,11.5,2000\n\
         2021-01-06,AAA,11.5,12.5,11,12,1500\n"
    );

    let again = fetch_remote("AAA", ymd(2021, 1, 5), ymd(2021, 1, 31), &opts).unwrap();
    assert_eq!(again.closes(), vec![11.5, 12.0]);
    assert_eq!(fx.hits.load(Ordering::SeqCst), 1, "cache hit must not touch the network");
}

#[test]
fn errors_are_classified() {
    let fx = serve(HashMap::from([
        ("BUSY".to_string(), (503, "try later".to_string())),
        ("JUNK".to_string(), (200, "<html>nope</html>".to_string())),
        ("OLD".to_string(), (200, PAYLOAD.to_string())),
    ]));
    let dir = tempfile::tempdir().unwrap();
    let opts = options(&fx.endpoint, dir.path());
    let (start, end) = (ymd(2021, 1, 1), ymd(2021, 1, 31));

    let busy = fetch_remote("BUSY", start, end, &opts).unwrap_err();
    assert!(busy.is_retryable(), "{busy}");
    assert_eq!(fx.hits.load(Ordering::SeqCst), 2, "retryable failure is retried");

    let missing = fetch_remote("NONE", start, end, &opts).unwrap_err();
    assert!(matches!(missing, DataError::Http { retryable: false, .. }), "{missing}");
    assert!(matches!(fetch_remote("JUNK", start, end, &opts), Err(DataError::Payload(_))));
    assert!(matches!(
        fetch_remote("OLD", ymd(2000, 1, 1), ymd(2000, 2, 1), &opts),
        Err(DataError::EmptyRange { .. })
    ));
    assert!(matches!(fetch_remote("OLD", end, start, &opts), Err(DataError::InvalidArgument(_))));
    assert!(!dir.path().join("BUSY.csv").exists());
}

#[test]
fn unreachable_endpoint_is_retryable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let opts = FetchOptions {
        max_attempts: 1,
        ..options(&format!("http://127.0.0.1:{port}"), dir.path())
    };
    let err = fetch_remote("AAA", ymd(2021, 1, 1), ymd(2021, 1, 2), &opts).unwrap_err();
    assert!(err.is_retryable(), "{err}");
}
