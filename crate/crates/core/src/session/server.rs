use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{Session, SessionError};

/// Builds the session for the `n`-th connection.
pub type SessionFactory = dyn Fn(usize) -> Result<Session, SessionError> + Send + Sync;

/// Serve one session over line-delimited JSON until `reader` closes. Blank
/// lines are ignored; every other line produces at least one message.
pub fn serve_lines<R: BufRead, W: Write>(session: &mut Session, reader: R, mut writer: W) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for msg in session.handle_line(&line) {
            writeln!(writer, "{}", msg.to_line())?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Accept connections, each with its own session on its own thread. Stops
/// after `max_connections` connections when given.
pub fn serve_tcp(listener: TcpListener, factory: Arc<SessionFactory>, max_connections: Option<usize>) -> std::io::Result<()> {
    let counter = AtomicUsize::new(0);
    let mut handles = Vec::new();
    for stream in listener.incoming() {
        let stream = stream?;
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let factory = Arc::clone(&factory);
        handles.push(std::thread::spawn(move || -> std::io::Result<()> {
            let reader = BufReader::new(stream.try_clone()?);
            match factory(n) {
                Ok(mut session) => serve_lines(&mut session, reader, stream),
                Err(e) => {
                    let mut stream = stream;
                    writeln!(stream, "{}", super::error(None, &e).to_line())
                }
            }
        }));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        h.join().map_err(|_| std::io::Error::other("session thread panicked"))??;
    }
    Ok(())
}
