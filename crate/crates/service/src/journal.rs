//! Append-only JSON-lines journal fed through a single writer task.

use std::path::PathBuf;

use serde_json::Value;
use tokio::io::AsyncWriteExt;
use tokio::sync::{mpsc, oneshot};

enum Command {
    Record(Value),
    Flush(oneshot::Sender<()>),
}

#[derive(Debug, Clone)]
pub struct Journal {
    tx: Option<mpsc::UnboundedSender<Command>>,
}

impl std::fmt::Debug for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Command::Record(v) => write!(f, "Record({v})"),
            Command::Flush(_) => f.write_str("Flush"),
        }
    }
}

impl Journal {
    pub fn disabled() -> Self {
        Journal { tx: None }
    }

    /// Start the writer. Must be called inside a tokio runtime.
    pub fn open(path: PathBuf) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<Command>();
        tokio::spawn(async move {
            let mut file = match tokio::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .await
            {
                Ok(f) => f,
                Err(e) => {
                    tracing::error!(path = %path.display(), error = %e, "journal unavailable");
                    return;
                }
            };
            while let Some(cmd) = rx.recv().await {
                match cmd {
                    Command::Record(v) => {
                        let mut line = v.to_string();
                        line.push('\n');
                        if let Err(e) = file.write_all(line.as_bytes()).await {
                            tracing::error!(error = %e, "journal write failed");
                        }
                    }
                    Command::Flush(done) => {
                        let _ = file.flush().await;
                        let _ = done.send(());
                    }
                }
            }
        });
        Journal { tx: Some(tx) }
    }

    pub fn record(&self, entry: Value) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(Command::Record(entry));
        }
    }

    /// Wait until everything recorded so far has been written.
    pub async fn flush(&self) {
        if let Some(tx) = &self.tx {
            let (done, wait) = oneshot::channel();
            if tx.send(Command::Flush(done)).is_ok() {
                let _ = wait.await;
            }
        }
    }
}
