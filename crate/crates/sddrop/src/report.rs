//! Report writers. Every artifact is written to a temporary file in the
//! target directory and renamed into place, so emitted files are either
//! complete or absent. Numbers use shortest-round-trip formatting, which is
//! byte-deterministic for identical values.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::metrics::BinStats;
use crate::trainer::EpochMetrics;

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write-to-temp then rename; the destination never holds a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.display().to_string();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(&name, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// `key = value` lines in the given order.
pub fn write_key_values(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k} = {v}\n"));
    }
    write_text(path, &text)
}

pub fn kv(key: &str, value: impl std::fmt::Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Column order: epoch, lr, train_loss, train_acc, val_acc.
pub fn epoch_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,train_loss,train_acc,val_acc\n");
    for m in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.val_acc
        ));
    }
    out
}

/// Column order: bin_low, bin_high, count, acc, conf.
pub fn reliability_csv(bins: &[BinStats], num_bins: usize) -> String {
    let mut out = String::from("bin_low,bin_high,count,acc,conf\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.low(num_bins),
            b.high(num_bins),
            b.count,
            b.acc,
            b.conf
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = std::env::temp_dir().join("sddrop_report");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("out.kv");
        write_key_values(&path, &[kv("a", 1), kv("b", 2.5)]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a = 1\nb = 2.5\n");
        let leftovers = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp."))
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn epoch_csv_has_header_and_rows() {
        let log = vec![EpochMetrics {
            epoch: 0,
            lr: 0.1,
            train_loss: 1.5,
            train_acc: 0.5,
            val_acc: 0.25,
        }];
        let text = epoch_csv(&log);
        assert_eq!(
            text,
            "epoch,lr,train_loss,train_acc,val_acc\n0,0.1,1.5,0.5,0.25\n"
        );
    }
}
