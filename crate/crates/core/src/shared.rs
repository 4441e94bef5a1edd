use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::RwLock;

use crate::clock::LogicalClock;
use crate::config::EngineConfig;
use crate::epoch::EpochRegistry;
use crate::error::Result;
use crate::metrics::Metrics;
use crate::page::Page;
use crate::table::Table;
use crate::txn::TxnTable;
use crate::wal::Wal;

/// Engine-wide services handed to every table.
pub(crate) struct Shared {
    pub config: EngineConfig,
    pub clock: LogicalClock,
    pub txns: TxnTable,
    pub epoch: Arc<EpochRegistry>,
    pub wal: Option<Wal>,
    pub metrics: Arc<Metrics>,
    pub tables: RwLock<Vec<Weak<Table>>>,
    /// Set during recovery replay: suppresses logging and triggers.
    pub replaying: AtomicBool,
}

impl Shared {
    pub fn new(config: EngineConfig) -> Result<Arc<Shared>> {
        let metrics = Arc::new(Metrics::default());
        let wal = match &config.logging {
            Some(lc) => Some(Wal::create(&lc.log_path(), lc.fsync, lc.group_buffer)?),
            None => None,
        };
        Ok(Arc::new(Shared {
            config,
            clock: LogicalClock::new(),
            txns: TxnTable::new(),
            epoch: Arc::new(EpochRegistry::new(Arc::clone(&metrics))),
            wal,
            metrics,
            tables: RwLock::new(Vec::new()),
            replaying: AtomicBool::new(false),
        }))
    }

    pub fn table(&self, id: u32) -> Option<Arc<Table>> {
        self.tables.read().get(id as usize).and_then(|w| w.upgrade())
    }

    pub fn logging_active(&self) -> bool {
        self.wal.is_some() && !self.replaying.load(Ordering::Acquire)
    }

    pub fn page_image_path(&self, table: u32, tag: &str, column: u32, owner: u64, idx: u32) -> Option<PathBuf> {
        let lc = self.config.logging.as_ref()?;
        if !lc.page_images {
            return None;
        }
        Some(
            lc.pages_dir()
                .join(format!("t{table}_{tag}_{column}_{owner}_{idx}.lspg")),
        )
    }

    /// Write a page image atomically (drained/full pages only).
    pub fn persist_page(&self, path: &std::path::Path, page: &Page) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, page.write_image())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}
