//! Connection plumbing shared by every node: boxed byte streams, connectors,
//! a framed writer activity per connection and reconnect backoff.

use std::future::Future;
use std::io;
use std::pin::Pin;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader, ReadHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, Notify};

use crate::protocol::{encode, Message};

pub trait ByteStream: AsyncRead + AsyncWrite + Unpin + Send + 'static {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send + 'static> ByteStream for T {}

pub type BoxStream = Box<dyn ByteStream>;
/// Buffered read half of a split connection.
pub type Reader = BufReader<ReadHalf<BoxStream>>;
pub type BoxFuture<T> = Pin<Box<dyn Future<Output = T> + Send + 'static>>;

/// Opens a fresh connection to a peer each time it is called.
pub trait Connector: Send + Sync + 'static {
    fn connect(&self) -> BoxFuture<io::Result<BoxStream>>;
}

impl<F> Connector for F
where
    F: Fn() -> BoxFuture<io::Result<BoxStream>> + Send + Sync + 'static,
{
    fn connect(&self) -> BoxFuture<io::Result<BoxStream>> {
        self()
    }
}

/// A type-erased, cloneable connector.
#[derive(Clone)]
pub struct SharedConnector(pub Arc<dyn Connector>);

impl SharedConnector {
    pub fn new(c: impl Connector) -> Self {
        Self(Arc::new(c))
    }
}

impl Connector for SharedConnector {
    fn connect(&self) -> BoxFuture<io::Result<BoxStream>> {
        self.0.connect()
    }
}

#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub addr: String,
}

impl TcpConnector {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> BoxFuture<io::Result<BoxStream>> {
        let addr = self.addr.clone();
        Box::pin(async move {
            let s = TcpStream::connect(&addr).await?;
            s.set_nodelay(true)?;
            Ok(Box::new(s) as BoxStream)
        })
    }
}

const WRITE_BATCH: usize = 256 * 1024;

enum Outbound {
    Message(Message),
    Close,
}

/// Sending side of a connection. Cloning is cheap; the writer activity
/// ends when every clone is dropped or [`Peer::close`] is called.
#[derive(Clone)]
pub struct Peer {
    tx: mpsc::UnboundedSender<Outbound>,
    closed: Arc<Notify>,
}

impl Peer {
    /// Queues a message; returns false once the connection is gone.
    pub fn send(&self, m: Message) -> bool {
        self.tx.send(Outbound::Message(m)).is_ok()
    }

    /// Flushes queued messages, then shuts the connection down.
    pub fn close(&self) {
        let _ = self.tx.send(Outbound::Close);
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }

    /// Resolves once the writer activity has stopped.
    pub async fn closed(&self) {
        self.closed.notified().await
    }

    pub fn same_connection(&self, other: &Peer) -> bool {
        self.tx.same_channel(&other.tx)
    }

    /// A peer whose messages land in a channel, for tests.
    pub fn detached() -> (Peer, mpsc::UnboundedReceiver<Message>) {
        let (tx, mut rx) = mpsc::unbounded_channel::<Outbound>();
        let (mtx, mrx) = mpsc::unbounded_channel();
        let closed = Arc::new(Notify::new());
        let done = closed.clone();
        tokio::spawn(async move {
            while let Some(Outbound::Message(m)) = rx.recv().await {
                if mtx.send(m).is_err() {
                    break;
                }
            }
            done.notify_waiters();
        });
        (Peer { tx, closed }, mrx)
    }
}

impl std::fmt::Debug for Peer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Peer").field("closed", &self.tx.is_closed()).finish()
    }
}

/// Splits a stream into its read half and a [`Peer`] backed by a writer
/// activity that frames every queued message.
pub fn split(stream: BoxStream) -> (Reader, Peer) {
    let (read, mut write) = tokio::io::split(stream);
    let (tx, mut rx) = mpsc::unbounded_channel::<Outbound>();
    let closed = Arc::new(Notify::new());
    let done = closed.clone();
    tokio::spawn(async move {
        let mut buf = Vec::with_capacity(WRITE_BATCH);
        let mut open = true;
        while open {
            let Some(first) = rx.recv().await else { break };
            let mut next = Some(first);
            // Coalesce whatever is already queued into one write.
            while let Some(out) = next.take() {
                match out {
                    Outbound::Message(m) => match encode(&m) {
                        Ok(frame) => buf.extend_from_slice(&frame),
                        Err(e) => tracing::warn!(error = %e, kind = m.kind_name(), "dropping unencodable message"),
                    },
                    Outbound::Close => {
                        open = false;
                        break;
                    }
                }
                if buf.len() < WRITE_BATCH {
                    next = rx.try_recv().ok();
                }
            }
            if !buf.is_empty() {
                if write.write_all(&buf).await.is_err() || write.flush().await.is_err() {
                    break;
                }
                buf.clear();
            }
        }
        rx.close();
        let _ = write.shutdown().await;
        done.notify_waiters();
        done.notify_one();
    });
    (BufReader::with_capacity(64 * 1024, read), Peer { tx, closed })
}

/// Exponential reconnect backoff.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    cap: Duration,
    next: Duration,
}

impl Backoff {
    pub fn new(base: Duration, cap: Duration) -> Self {
        Self { base, cap, next: base }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.cap);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.base;
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(Duration::from_secs(1), Duration::from_secs(30))
    }
}
