//! Live mode: the world advances with the wall clock on its own thread while
//! the operator API and a TE-facing TCP listener feed it.

use std::collections::HashMap;
use std::convert::Infallible;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use cpas_core::harness::scenario::FaultKind;
use cpas_core::harness::{Scenario, World};
use cpas_core::hmi::api::ApiResponse;
use cpas_core::hmi::{ConnId, HmiEvent};
use cpas_core::protocol::{encode_frame, AlarmType, Frame, FrameDecoder};
use futures::Stream;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot};

pub struct Options {
    pub speed: f64,
    pub api_port: u16,
    pub te_port: u16,
    pub bind: String,
}

enum Cmd {
    Api {
        method: String,
        target: String,
        body: Vec<u8>,
        reply: oneshot::Sender<ApiResponse>,
    },
    TcpOpen {
        conn: u64,
        tx: mpsc::UnboundedSender<Vec<u8>>,
    },
    TcpFrame {
        conn: u64,
        frame: Frame,
    },
    TcpClosed {
        conn: u64,
    },
    Inject(Injection),
}

/// A console line typed on stdin.
#[derive(Debug, Clone, PartialEq)]
pub enum Injection {
    Fault(u32, FaultKind),
    Sensor { te: u32, zone: u8, kind: AlarmType },
    Sms { te: u32, text: String },
}

pub fn parse_injection(line: &str) -> Result<Injection, String> {
    let mut it = line.split_whitespace();
    let verb = it.next().ok_or("empty line")?;
    let te: u32 = it
        .next()
        .ok_or("missing terminal id")?
        .parse()
        .map_err(|_| "terminal id must be a number".to_string())?;
    match verb {
        "kill" => Ok(Injection::Fault(te, FaultKind::Kill)),
        "power" => Ok(Injection::Fault(te, FaultKind::PowerOn)),
        "fail" => Ok(Injection::Fault(te, FaultKind::LinkFailure)),
        "alarm" => {
            let zone = it
                .next()
                .ok_or("missing zone")?
                .parse()
                .map_err(|_| "zone must be 0..=255".to_string())?;
            let kind = match it.next().map(str::to_ascii_uppercase).as_deref() {
                None | Some("IR") => AlarmType::Ir,
                Some("SMOKE") => AlarmType::Smoke,
                Some("TEMP" | "TEMPERATURE") => AlarmType::Temperature,
                Some(k) => return Err(format!("unknown alarm kind `{k}`")),
            };
            Ok(Injection::Sensor { te, zone, kind })
        }
        "sms" => {
            let text = it.collect::<Vec<_>>().join(" ");
            if text.is_empty() {
                return Err("missing SMS text".into());
            }
            Ok(Injection::Sms { te, text })
        }
        v => Err(format!("unknown command `{v}` (kill|power|fail|alarm|sms)")),
    }
}

#[derive(Clone)]
struct AppState {
    cmds: mpsc::UnboundedSender<Cmd>,
    events: broadcast::Sender<HmiEvent>,
}

pub fn serve(sc: Scenario, opts: Options) -> anyhow::Result<()> {
    let world = World::new(sc, None)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
        let (ev_tx, _) = broadcast::channel(1024);
        let speed = opts.speed;
        let ev_tx2 = ev_tx.clone();
        std::thread::Builder::new()
            .name("world".into())
            .spawn(move || world_loop(world, speed, cmd_rx, ev_tx2))?;

        let state = AppState { cmds: cmd_tx.clone(), events: ev_tx };
        let app = Router::new()
            .route("/stream", get(stream))
            .fallback(forward)
            .with_state(state);
        let api = TcpListener::bind((opts.bind.as_str(), opts.api_port)).await?;
        let te = TcpListener::bind((opts.bind.as_str(), opts.te_port)).await?;
        eprintln!(
            "operator API on http://{}, terminals on {}",
            api.local_addr()?,
            te.local_addr()?
        );
        tokio::spawn(accept_terminals(te, cmd_tx.clone()));
        tokio::spawn(read_stdin(cmd_tx));
        axum::serve(api, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn world_loop(
    mut world: World,
    speed: f64,
    mut cmds: mpsc::UnboundedReceiver<Cmd>,
    events: broadcast::Sender<HmiEvent>,
) {
    let feed = world.subscribe();
    let mut conns: HashMap<u64, mpsc::UnboundedSender<Vec<u8>>> = HashMap::new();
    let (t0, v0) = (Instant::now(), world.now());
    loop {
        let target = v0 + (t0.elapsed().as_secs_f64() * 1000.0 * speed) as u64;
        world.step_until(target.max(world.now()));
        loop {
            match cmds.try_recv() {
                Ok(cmd) => apply(&mut world, &mut conns, cmd),
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        for out in world.take_external_outbound() {
            let ConnId::Tcp(id) = out.conn else { continue };
            let f = out.frame;
            if let (Some(tx), Ok(bytes)) = (conns.get(&id), encode_frame(&f.message, f.te_id, f.seq)) {
                let _ = tx.send(bytes);
            }
        }
        while let Ok(ev) = feed.try_recv() {
            let _ = events.send(ev);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn apply(world: &mut World, conns: &mut HashMap<u64, mpsc::UnboundedSender<Vec<u8>>>, cmd: Cmd) {
    let now = world.now();
    match cmd {
        Cmd::Api { method, target, body, reply } => {
            let _ = reply.send(world.api(&method, &target, &body));
        }
        Cmd::TcpOpen { conn, tx } => {
            conns.insert(conn, tx);
        }
        Cmd::TcpFrame { conn, frame } => world.external_frame(conn, frame),
        Cmd::TcpClosed { conn } => {
            conns.remove(&conn);
            world.external_closed(conn);
        }
        Cmd::Inject(Injection::Fault(te, f)) => world.inject_fault(te, f, now),
        Cmd::Inject(Injection::Sensor { te, zone, kind }) => world.inject_sensor(te, zone, kind, now),
        Cmd::Inject(Injection::Sms { te, text }) => {
            if !world.inject_user_sms(te, &text, now) {
                eprintln!("sms to terminal {te} rejected");
            }
        }
    }
}

async fn forward(State(st): State<AppState>, method: Method, uri: Uri, body: Bytes) -> impl IntoResponse {
    let target = uri.path_and_query().map_or_else(|| uri.path().to_string(), |pq| pq.to_string());
    let (reply, rx) = oneshot::channel();
    let cmd = Cmd::Api { method: method.to_string(), target, body: body.to_vec(), reply };
    if st.cmds.send(cmd).is_err() {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"error": "world stopped"})));
    }
    match rx.await {
        Ok(r) => (
            StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            Json(r.body),
        ),
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, Json(serde_json::json!({"error": "world stopped"}))),
    }
}

async fn stream(State(st): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = st.events.subscribe();
    let s = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let e = Event::default()
                        .event("hmi")
                        .id(ev.id.to_string())
                        .json_data(ev)
                        .expect("events serialize");
                    return Some((Ok(e), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(s).keep_alive(KeepAlive::default())
}

async fn accept_terminals(listener: TcpListener, cmds: mpsc::UnboundedSender<Cmd>) {
    let mut next = 1u64;
    while let Ok((sock, _)) = listener.accept().await {
        let conn = next;
        next += 1;
        tokio::spawn(terminal_conn(conn, sock, cmds.clone()));
    }
}

async fn terminal_conn(conn: u64, sock: TcpStream, cmds: mpsc::UnboundedSender<Cmd>) {
    let (mut rd, mut wr) = sock.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    if cmds.send(Cmd::TcpOpen { conn, tx }).is_err() {
        return;
    }
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
    });
    let mut dec = FrameDecoder::new();
    let mut buf = [0u8; 2048];
    loop {
        match rd.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                dec.extend(&buf[..n]);
                for frame in dec.frames() {
                    if cmds.send(Cmd::TcpFrame { conn, frame }).is_err() {
                        return;
                    }
                }
            }
        }
    }
    let _ = cmds.send(Cmd::TcpClosed { conn });
    writer.abort();
}

async fn read_stdin(cmds: mpsc::UnboundedSender<Cmd>) {
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Ok(Some(line)) = lines.next_line().await {
        if line.trim().is_empty() {
            continue;
        }
        match parse_injection(&line) {
            Ok(inj) => {
                if cmds.send(Cmd::Inject(inj)).is_err() {
                    return;
                }
            }
            Err(e) => eprintln!("{e}"),
        }
    }
}
