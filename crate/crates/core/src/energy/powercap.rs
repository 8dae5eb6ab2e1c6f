//! Linux powercap (RAPL) energy counters.
//!
//! Package domains (`intel-rapl:N`, also used by AMD) feed the CPU channel and
//! `dram` subdomains feed the RAM channel. There is no GPU counter here, so the
//! GPU channel reads 0 W.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::PowerSample;

pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";

struct Counter {
    energy_path: PathBuf,
    max_uj: u64,
    last_uj: u64,
}

impl Counter {
    fn open(dir: &Path) -> Result<Self> {
        let energy_path = dir.join("energy_uj");
        let last_uj = read_u64(&energy_path)?;
        let max_uj = read_u64(&dir.join("max_energy_range_uj")).unwrap_or(u64::MAX);
        Ok(Self {
            energy_path,
            max_uj,
            last_uj,
        })
    }

    /// Microjoules since the previous read, accounting for one wraparound.
    fn delta_uj(&mut self) -> Result<u64> {
        let now = read_u64(&self.energy_path)?;
        let delta = if now >= self.last_uj {
            now - self.last_uj
        } else {
            self.max_uj - self.last_uj + now
        };
        self.last_uj = now;
        Ok(delta)
    }
}

fn read_u64(path: &Path) -> Result<u64> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::CountersUnavailable(format!("{}: {e}", path.display())))?;
    text.trim()
        .parse()
        .map_err(|_| Error::CountersUnavailable(format!("{}: unparsable counter", path.display())))
}

/// Converts counter deltas between reads into average watts.
pub struct PowercapReader {
    packages: Vec<Counter>,
    dram: Vec<Counter>,
    last_t: f64,
}

impl PowercapReader {
    pub fn open(root: &Path) -> Result<Self> {
        let entries = fs::read_dir(root)
            .map_err(|e| Error::CountersUnavailable(format!("{}: {e}", root.display())))?;
        let mut package_dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("intel-rapl:") && n.matches(':').count() == 1)
            })
            .collect();
        package_dirs.sort();

        let mut packages = Vec::new();
        let mut dram = Vec::new();
        for dir in &package_dirs {
            packages.push(Counter::open(dir)?);
            let Ok(children) = fs::read_dir(dir) else { continue };
            let mut subdirs: Vec<PathBuf> = children.filter_map(|e| e.ok()).map(|e| e.path()).collect();
            subdirs.sort();
            for sub in subdirs {
                let is_dram = fs::read_to_string(sub.join("name")).is_ok_and(|n| n.trim() == "dram");
                if is_dram {
                    dram.push(Counter::open(&sub)?);
                }
            }
        }
        if packages.is_empty() {
            return Err(Error::CountersUnavailable(format!(
                "no RAPL package domains under {}",
                root.display()
            )));
        }
        Ok(Self {
            packages,
            dram,
            last_t: 0.0,
        })
    }

    /// Average power since the previous read (or since `open` for the first read).
    /// A read at the same instant as the previous one reports 0 W.
    pub fn read(&mut self, t: f64) -> Result<PowerSample> {
        let dt = t - self.last_t;
        self.last_t = t;
        let sum = |counters: &mut Vec<Counter>| -> Result<f64> {
            let mut uj = 0u64;
            for c in counters.iter_mut() {
                uj = uj.saturating_add(c.delta_uj()?);
            }
            Ok(uj as f64 * 1e-6)
        };
        let cpu_j = sum(&mut self.packages)?;
        let ram_j = sum(&mut self.dram)?;
        let watts = |j: f64| if dt > 0.0 { j / dt } else { 0.0 };
        Ok(PowerSample {
            timestamp: t,
            cpu_w: watts(cpu_j),
            gpu_w: 0.0,
            ram_w: watts(ram_j),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_tree(root: &Path, pkg_uj: u64, dram_uj: u64) {
        let pkg = root.join("intel-rapl:0");
        let dram = pkg.join("intel-rapl:0:0");
        fs::create_dir_all(&dram).unwrap();
        fs::write(pkg.join("name"), "package-0\n").unwrap();
        fs::write(pkg.join("energy_uj"), format!("{pkg_uj}\n")).unwrap();
        fs::write(pkg.join("max_energy_range_uj"), "1000000000\n").unwrap();
        fs::write(dram.join("name"), "dram\n").unwrap();
        fs::write(dram.join("energy_uj"), format!("{dram_uj}\n")).unwrap();
    }

    #[test]
    fn missing_tree_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            PowercapReader::open(&dir.path().join("nope")),
            Err(Error::CountersUnavailable(_))
        ));
        assert!(matches!(PowercapReader::open(dir.path()), Err(Error::CountersUnavailable(_))));
    }

    #[test]
    fn deltas_become_watts() {
        let dir = tempfile::tempdir().unwrap();
        fake_tree(dir.path(), 5_000_000, 1_000_000);
        let mut r = PowercapReader::open(dir.path()).unwrap();
        fake_tree(dir.path(), 25_000_000, 3_000_000);
        let s = r.read(2.0).unwrap();
        assert!((s.cpu_w - 10.0).abs() < 1e-12);
        assert!((s.ram_w - 1.0).abs() < 1e-12);
        assert_eq!(s.gpu_w, 0.0);
    }

    #[test]
    fn counter_wraparound() {
        let dir = tempfile::tempdir().unwrap();
        fake_tree(dir.path(), 999_000_000, 0);
        let mut r = PowercapReader::open(dir.path()).unwrap();
        fake_tree(dir.path(), 1_000_000, 0);
        let s = r.read(1.0).unwrap();
        assert!((s.cpu_w - 2.0).abs() < 1e-12);
    }
}
