//! Tokio TCP server: one task per connection, all sharing one cache.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio::task::JoinSet;

use fleec_core::Cache;

use crate::protocol::{Context, Session};

const READ_CHUNK: usize = 16 * 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Runtime worker threads, i.e. how many commands can run in the cache
    /// at the same time.
    pub workers: usize,
}

/// Accepts connections on `listener` until `shutdown` resolves, then stops
/// accepting, lets every connection finish the commands it has already
/// received, and returns once they have all closed.
pub async fn serve(
    listener: TcpListener,
    ctx: Arc<Context>,
    shutdown: impl Future<Output = ()>,
) -> io::Result<()> {
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut conns = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let ctx = ctx.clone();
                    let stop = stop_rx.clone();
                    conns.spawn(async move {
                        // I/O errors end this session only.
                        let _ = connection(stream, ctx, stop).await;
                    });
                }
                Err(e) => {
                    // Typically EMFILE; back off instead of spinning.
                    eprintln!("fleec: accept failed: {e}");
                    tokio::time::sleep(std::time::Duration::from_millis(10)).await;
                }
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    let _ = stop_tx.send(true);
    while conns.join_next().await.is_some() {}
    Ok(())
}

struct Open<'a>(&'a Context);

impl Drop for Open<'_> {
    fn drop(&mut self) {
        self.0.connection_closed();
    }
}

async fn connection(
    mut stream: TcpStream,
    ctx: Arc<Context>,
    mut stop: watch::Receiver<bool>,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    ctx.connection_opened();
    let _open = Open(&ctx);
    let (mut rd, mut wr) = stream.split();
    let mut session = Session::new(&ctx);
    let mut buf = Vec::with_capacity(READ_CHUNK);
    let mut chunk = vec![0u8; READ_CHUNK];
    let mut out = Vec::with_capacity(READ_CHUNK);
    loop {
        let used = session.process(&buf, &mut out);
        buf.drain(..used);
        if !out.is_empty() {
            wr.write_all(&out).await?;
            out.clear();
        }
        if session.is_closed() || *stop.borrow() {
            return Ok(());
        }
        tokio::select! {
            n = rd.read(&mut chunk) => {
                let n = n?;
                if n == 0 {
                    return Ok(());
                }
                buf.extend_from_slice(&chunk[..n]);
            }
            _ = stop.changed() => {}
        }
    }
}

/// A server running on its own runtime in a background thread.
pub struct RunningServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<io::Result<()>>>,
    ctx: Arc<Context>,
}

impl RunningServer {
    /// Binds `config.bind` (port 0 picks a free port) and starts serving.
    pub fn start(cache: Arc<Cache>, config: ServerConfig) -> io::Result<Self> {
        let rt = runtime(config.workers)?;
        let listener = rt.block_on(TcpListener::bind(config.bind))?;
        let addr = listener.local_addr()?;
        let ctx = Arc::new(Context::new(cache, config.workers));
        let (tx, rx) = oneshot::channel::<()>();
        let serve_ctx = ctx.clone();
        let thread = thread::Builder::new()
            .name("fleec-server".into())
            .spawn(move || {
                rt.block_on(serve(listener, serve_ctx, async {
                    let _ = rx.await;
                }))
            })?;
        Ok(RunningServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
            ctx,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn context(&self) -> &Context {
        &self.ctx
    }

    /// Stops accepting, drains open connections and waits for the runtime.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

pub fn runtime(workers: usize) -> io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.max(1))
        .thread_name("fleec-worker")
        .enable_all()
        .build()
}
