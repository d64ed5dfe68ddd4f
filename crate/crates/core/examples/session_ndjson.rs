//! Start a session server on a free port, drive it as a client would and
//! print every line the server sends back.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use droplab::bioassay::FluorescenceModel;
use droplab::runner::Strains;
use droplab::session::{serve_tcp, Session, SessionFactory};
use droplab::stage::{Layout, PlateState, StageConfig};

fn main() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let factory: Arc<SessionFactory> = Arc::new(|n| {
        let plate = PlateState::from_layout(&Layout::grid(6, 3), StageConfig::default()).unwrap();
        Session::new(format!("demo{n}"), plate, Strains::new(), FluorescenceModel::default(), 0)
    });
    let server = std::thread::spawn(move || serve_tcp(listener, factory, Some(1)));

    let commands = [
        r#"{"type":"hello","seq":1,"client":"example"}"#,
        r#"{"type":"subscribe","seq":2,"events":["moves","merges"]}"#,
        r#"{"type":"dispense","seq":3,"volume_uL":10,"at":{"x":0,"y":1}}"#,
        r#"{"type":"dispense","seq":4,"volume_uL":10,"at":{"x":2,"y":1}}"#,
        r#"{"type":"dry_run_tilt","seq":5,"axis":"X","angle_deg":8}"#,
        r#"{"type":"tilt","seq":6,"axis":"X","angle_deg":8}"#,
        r#"{"type":"tilt","seq":7,"axis":"X","angle_deg":30}"#,
        r#"{"type":"query_state","seq":8}"#,
    ];
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    for cmd in commands {
        println!(">> {cmd}");
        writeln!(stream, "{cmd}").unwrap();
        // One response per command, then the subscribed events.
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        print!("<< {line}");
        if cmd.contains(r#""type":"tilt""#) && line.contains("moved") {
            line.clear();
            reader.read_line(&mut line).unwrap();
            print!("<< {line}");
        }
    }
    drop(stream);
    drop(reader);
    server.join().unwrap().unwrap();
}
