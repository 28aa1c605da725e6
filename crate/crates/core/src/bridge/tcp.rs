use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{info, warn};

use super::driver::{driver_loop, ErrorCode, FrameHandler, Reply};
use super::frame::Frame;
use super::relay::{AccessPoint, Relayed};
use super::serial::{serial_channel, SerialConfig};

const POLL: Duration = Duration::from_millis(20);

/// Access point listening on a real TCP socket, with the driver on a
/// background thread behind the emulated serial line.
///
/// Only one controller may be connected at a time; others receive
/// `err:busy` and are closed.
pub struct TcpBridge {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

type Target = Arc<Mutex<Option<TcpStream>>>;

impl TcpBridge {
    pub fn bind<A, H>(addr: A, handler: H, serial: SerialConfig) -> io::Result<Self>
    where
        A: ToSocketAddrs,
        H: FrameHandler + Send + 'static,
    {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = serial_channel(serial);
        let ap = Arc::new(Mutex::new(AccessPoint::new(tx)));
        let target: Target = Arc::new(Mutex::new(None));
        let (reply_tx, reply_rx) = mpsc::channel::<Reply>();

        let driver = thread::Builder::new().name("bridge-driver".into()).spawn(move || {
            let mut handler = handler;
            let n = driver_loop(&rx, &mut handler, &reply_tx);
            info!("driver loop finished after {n} frames");
        })?;

        let forward_target = Arc::clone(&target);
        let forwarder = thread::Builder::new().name("bridge-replies".into()).spawn(move || {
            for reply in reply_rx {
                let mut guard = forward_target.lock().expect("reply target lock");
                if let Some(stream) = guard.as_mut() {
                    if let Err(e) = stream.write_all(&reply.encode()) {
                        warn!("failed to deliver reply {reply}: {e}");
                    }
                } else {
                    warn!("no controller connected; reply {reply} dropped");
                }
            }
        })?;

        let accept_stop = Arc::clone(&stop);
        let acceptor = thread::Builder::new().name("bridge-accept".into()).spawn(move || {
            let active = Arc::new(AtomicBool::new(false));
            let mut conns: Vec<JoinHandle<()>> = Vec::new();
            while !accept_stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((mut stream, peer)) => {
                        if active.swap(true, Ordering::SeqCst) {
                            info!("refusing second controller {peer}");
                            let _ = stream.write_all(&Reply::Err(ErrorCode::Busy).encode());
                            let _ = stream.shutdown(Shutdown::Both);
                            continue;
                        }
                        info!("controller connected from {peer}");
                        let ap = Arc::clone(&ap);
                        let target = Arc::clone(&target);
                        let active = Arc::clone(&active);
                        let stop = Arc::clone(&accept_stop);
                        conns.retain(|h| !h.is_finished());
                        conns.push(thread::spawn(move || serve_controller(stream, &ap, &target, &stop, &active)));
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                    Err(e) => {
                        warn!("accept failed: {e}");
                        thread::sleep(POLL);
                    }
                }
            }
            for c in conns {
                let _ = c.join();
            }
            // Dropping the last access point handle closes the serial line,
            // which ends the driver loop.
        })?;

        Ok(Self { addr: local, stop, threads: vec![acceptor, driver, forwarder] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the bridge is stopped from another thread (never, for a
    /// foreground server).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for TcpBridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn serve_controller(
    mut stream: TcpStream,
    ap: &Mutex<AccessPoint>,
    target: &Mutex<Option<TcpStream>>,
    stop: &AtomicBool,
    active: &AtomicBool,
) {
    let setup = stream
        .set_nonblocking(false)
        .and_then(|_| stream.set_read_timeout(Some(POLL * 5)))
        .and_then(|_| stream.try_clone());
    match setup {
        Ok(writer) => *target.lock().expect("reply target lock") = Some(writer),
        Err(e) => {
            warn!("cannot set up controller stream: {e}");
            active.store(false, Ordering::SeqCst);
            return;
        }
    }
    let mut buf = [0u8; 512];
    loop {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let mut ap = ap.lock().expect("access point lock");
                let now = ap.serial().clock();
                for relayed in ap.ingest(&buf[..n], now) {
                    if let Relayed::Rejected(reply) = relayed {
                        let mut guard = target.lock().expect("reply target lock");
                        if let Some(w) = guard.as_mut() {
                            let _ = w.write_all(&reply.encode());
                        }
                    }
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => {
                warn!("controller read failed: {e}");
                break;
            }
        }
    }
    ap.lock().expect("access point lock").disconnect();
    *target.lock().expect("reply target lock") = None;
    active.store(false, Ordering::SeqCst);
    info!("controller disconnected");
}

/// Controller side of the TCP bridge.
pub struct TcpClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
}

impl TcpClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self { writer: stream, reader })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.writer.set_read_timeout(timeout)
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)
    }

    /// Reads the next reply line.
    pub fn read_reply(&mut self) -> io::Result<Reply> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::new(ErrorKind::UnexpectedEof, "bridge closed the connection"));
        }
        Reply::decode(&line)
            .ok_or_else(|| io::Error::new(ErrorKind::InvalidData, format!("unrecognised reply {line:?}")))
    }

    /// Sends one frame and waits for its reply.
    pub fn send(&mut self, frame: &Frame) -> io::Result<Reply> {
        self.send_raw(&frame.encode())?;
        self.read_reply()
    }
}
