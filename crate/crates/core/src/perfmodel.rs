//! Arithmetic intensity, roofline predictions and the accelerator catalog.
//!
//! The byte model assumes ideal caching: per site and application, the 8
//! smeared and 8 Naik links are read once regardless of the number of
//! right-hand sides, each rhs reads 16 neighbor vectors and writes one output
//! vector. Flops per site and rhs are `16·66 + 15·6 = 1146`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{COLOR_ADD_FLOPS, FULL_LINK_REALS, MAT_VEC_FLOPS, R14_LINK_REALS};
use crate::fields::{LinkStorage, VECTOR_REALS};
use crate::real::Precision;

/// Matrix-vector products per site and rhs.
pub const HOPS_PER_SITE: u64 = 16;
/// Flops per site per rhs.
pub const FLOPS_PER_SITE: u64 = HOPS_PER_SITE * MAT_VEC_FLOPS + (HOPS_PER_SITE - 1) * COLOR_ADD_FLOPS;

/// Right-hand-side counts of the reference intensity table.
pub const REFERENCE_RHS: [usize; 7] = [1, 2, 3, 4, 5, 6, 8];
/// Published single-precision intensities with full Naik storage.
pub const REFERENCE_FULL: [f64; 7] = [0.73, 1.16, 1.45, 1.65, 1.80, 1.91, 2.08];
/// Published single-precision intensities with r14 Naik storage.
pub const REFERENCE_R14: [f64; 7] = [0.80, 1.25, 1.53, 1.73, 1.87, 1.98, 2.14];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown device '{0}'")]
    UnknownDevice(String),
    #[error("device '{0}' has no measured bandwidth")]
    MissingMeasuredBandwidth(String),
    #[error("device config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid device '{name}': {msg}")]
    InvalidDevice { name: String, msg: String },
    #[error("power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("number of right-hand sides must be at least 1")]
    ZeroRhs,
}

/// Flop and byte constants of the transfer model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub flops_per_site_per_rhs: u64,
    pub smeared_link_reals: u64,
    pub naik_full_reals: u64,
    pub naik_r14_reals: u64,
    pub links_per_kind: u64,
    pub vectors_read_per_rhs: u64,
    pub vectors_written_per_rhs: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            flops_per_site_per_rhs: FLOPS_PER_SITE,
            smeared_link_reals: FULL_LINK_REALS as u64,
            naik_full_reals: FULL_LINK_REALS as u64,
            naik_r14_reals: R14_LINK_REALS as u64,
            links_per_kind: 8,
            vectors_read_per_rhs: HOPS_PER_SITE,
            vectors_written_per_rhs: 1,
        }
    }
}

impl CostModel {
    pub fn naik_reals(&self, storage: LinkStorage) -> u64 {
        match storage {
            LinkStorage::Full18 => self.naik_full_reals,
            LinkStorage::R14 => self.naik_r14_reals,
        }
    }

    /// Link bytes per site: `8·18·P + 8·L_N·P`.
    pub fn link_bytes(&self, storage: LinkStorage, precision: Precision) -> u64 {
        self.links_per_kind * (self.smeared_link_reals + self.naik_reals(storage)) * precision.bytes()
    }

    /// Vector bytes read per site and rhs.
    pub fn vector_in_bytes_per_rhs(&self, precision: Precision) -> u64 {
        self.vectors_read_per_rhs * VECTOR_REALS as u64 * precision.bytes()
    }

    /// Vector bytes written per site and rhs.
    pub fn vector_out_bytes_per_rhs(&self, precision: Precision) -> u64 {
        self.vectors_written_per_rhs * VECTOR_REALS as u64 * precision.bytes()
    }

    /// `(16 + 1)·6·P`.
    pub fn vector_bytes_per_rhs(&self, precision: Precision) -> u64 {
        self.vector_in_bytes_per_rhs(precision) + self.vector_out_bytes_per_rhs(precision)
    }

    pub fn arithmetic_intensity(&self, n_rhs: usize, storage: LinkStorage, precision: Precision) -> f64 {
        let n = n_rhs as f64;
        self.flops_per_site_per_rhs as f64 * n
            / (self.link_bytes(storage, precision) as f64 + n * self.vector_bytes_per_rhs(precision) as f64)
    }

    pub fn asymptotic_intensity(&self, precision: Precision) -> f64 {
        self.flops_per_site_per_rhs as f64 / self.vector_bytes_per_rhs(precision) as f64
    }
}

/// Flop/byte of one Dslash application on `n_rhs` vectors.
pub fn arithmetic_intensity(n_rhs: usize, storage: LinkStorage, precision: Precision) -> f64 {
    CostModel::default().arithmetic_intensity(n_rhs, storage, precision)
}

/// Limit of [`arithmetic_intensity`] for infinitely many rhs; independent of link storage.
pub fn asymptotic_intensity(precision: Precision) -> f64 {
    CostModel::default().asymptotic_intensity(precision)
}

/// Rounds to the two decimals used in the reference table.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub aliases: Vec<String>,
    /// GFlop/s.
    pub peak_fp32: f64,
    pub peak_fp64: f64,
    /// GB/s.
    pub bandwidth: f64,
    /// Stream-benchmark bandwidth, GB/s.
    pub measured_bandwidth: Option<f64>,
    /// Watts.
    pub tdp: f64,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| ModelError::InvalidDevice { name: self.name.clone(), msg: msg.into() };
        if [self.peak_fp32, self.peak_fp64, self.bandwidth, self.tdp].iter().any(|v| !(*v > 0.0)) {
            return Err(bad("peaks, bandwidth and TDP must be positive"));
        }
        if let Some(m) = self.measured_bandwidth {
            if !(m > 0.0) || m > self.bandwidth {
                return Err(bad("measured bandwidth must be positive and at most the theoretical one"));
            }
        }
        Ok(())
    }

    pub fn peak(&self, precision: Precision) -> f64 {
        match precision {
            Precision::F32 => self.peak_fp32,
            Precision::F64 => self.peak_fp64,
        }
    }

    fn matches(&self, query: &str) -> bool {
        let q = normalize(query);
        normalize(&self.name) == q || self.aliases.iter().any(|a| normalize(a) == q)
    }
}

fn normalize(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace() && *c != '-' && *c != '_').flat_map(char::to_lowercase).collect()
}

fn device(name: &str, aliases: &[&str], fp32: f64, fp64: f64, bw: f64, measured: Option<f64>, tdp: f64) -> DeviceSpec {
    DeviceSpec {
        name: name.into(),
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
        peak_fp32: fp32,
        peak_fp64: fp64,
        bandwidth: bw,
        measured_bandwidth: measured,
        tdp,
    }
}

/// Built-in accelerators. The K40 entry is the highest boost clock.
pub fn device_catalog() -> Vec<DeviceSpec> {
    vec![
        device("5110P", &["Phi", "Phi 5110P", "Xeon Phi 5110P"], 2020.0, 1010.0, 320.0, Some(140.0), 225.0),
        device("K20", &["Tesla K20"], 3520.0, 1170.0, 208.0, None, 225.0),
        device("K40", &["Tesla K40"], 4290.0, 1430.0, 288.0, None, 235.0),
        device("Titan", &["GTX Titan"], 4500.0, 1500.0, 288.0, None, 250.0),
    ]
}

/// A device list that can be extended from a config file.
#[derive(Clone, Debug)]
pub struct DeviceCatalog {
    devices: Vec<DeviceSpec>,
}

impl Default for DeviceCatalog {
    fn default() -> Self {
        DeviceCatalog { devices: device_catalog() }
    }
}

impl DeviceCatalog {
    pub fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    pub fn lookup(&self, name: &str) -> Result<&DeviceSpec, ModelError> {
        self.devices
            .iter()
            .find(|d| d.matches(name))
            .ok_or_else(|| ModelError::UnknownDevice(name.to_string()))
    }

    /// Adds or replaces devices from `name key=value ...` lines.
    /// Keys: `fp32`, `fp64` (GFlop/s), `bw`, `measured_bw` (GB/s), `tdp` (W).
    /// Blank lines and `#` comments are ignored.
    pub fn extend_from_config(&mut self, text: &str) -> Result<(), ModelError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let d = parse_device_line(line).map_err(|msg| ModelError::Parse { line: i + 1, msg })?;
            d.validate()?;
            match self.devices.iter_mut().find(|e| normalize(&e.name) == normalize(&d.name)) {
                Some(slot) => *slot = d,
                None => self.devices.push(d),
            }
        }
        Ok(())
    }
}

fn parse_device_line(line: &str) -> Result<DeviceSpec, String> {
    let mut parts = line.split_whitespace();
    let name = parts.next().ok_or("missing device name")?;
    let mut d = device(name, &[], 0.0, 0.0, 0.0, None, 0.0);
    for kv in parts {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got '{kv}'"))?;
        let v: f64 = v.parse().map_err(|_| format!("bad number '{v}' for {k}"))?;
        match k {
            "fp32" => d.peak_fp32 = v,
            "fp64" => d.peak_fp64 = v,
            "bw" => d.bandwidth = v,
            "measured_bw" => d.measured_bandwidth = Some(v),
            "tdp" => d.tdp = v,
            other => return Err(format!("unknown key '{other}'")),
        }
    }
    Ok(d)
}

/// `min(AI × bandwidth, peak)` in GFlop/s.
pub fn roofline_predict(
    device: &DeviceSpec,
    n_rhs: usize,
    storage: LinkStorage,
    precision: Precision,
    use_measured_bw: bool,
) -> Result<f64, ModelError> {
    if n_rhs == 0 {
        return Err(ModelError::ZeroRhs);
    }
    let bw = if use_measured_bw {
        device
            .measured_bandwidth
            .ok_or_else(|| ModelError::MissingMeasuredBandwidth(device.name.clone()))?
    } else {
        device.bandwidth
    };
    Ok((arithmetic_intensity(n_rhs, storage, precision) * bw).min(device.peak(precision)))
}

/// (GFlop/s)/W.
pub fn efficiency(gflops: f64, power_watts: f64) -> Result<f64, ModelError> {
    if !(power_watts > 0.0) {
        return Err(ModelError::NonPositivePower(power_watts));
    }
    Ok(gflops / power_watts)
}

/// Which link storages a table query covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageSelection {
    Full,
    R14,
    Both,
}

impl StorageSelection {
    pub fn storages(self) -> Vec<LinkStorage> {
        match self {
            StorageSelection::Full => vec![LinkStorage::Full18],
            StorageSelection::R14 => vec![LinkStorage::R14],
            StorageSelection::Both => vec![LinkStorage::Full18, LinkStorage::R14],
        }
    }
}

impl FromStr for StorageSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(StorageSelection::Full),
            "r14" => Ok(StorageSelection::R14),
            "both" => Ok(StorageSelection::Both),
            other => Err(format!("unknown reconstruct '{other}' (expected full|r14|both)")),
        }
    }
}

impl fmt::Display for StorageSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageSelection::Full => "full",
            StorageSelection::R14 => "r14",
            StorageSelection::Both => "both",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F32: Precision = Precision::F32;

    #[test]
    fn constants() {
        assert_eq!(FLOPS_PER_SITE, 1146);
        let m = CostModel::default();
        assert_eq!(m.link_bytes(LinkStorage::Full18, F32), 1152);
        assert_eq!(m.link_bytes(LinkStorage::R14, F32), 1024);
        assert_eq!(m.vector_bytes_per_rhs(F32), 408);
    }

    #[test]
    fn intensity_examples() {
        assert!((arithmetic_intensity(1, LinkStorage::Full18, F32) - 0.73).abs() <= 0.005);
        assert!((arithmetic_intensity(4, LinkStorage::R14, F32) - 1.73).abs() <= 0.005);
        assert!((arithmetic_intensity(8, LinkStorage::Full18, F32) - 2.08).abs() <= 0.005);
    }

    #[test]
    fn reference_table_reproduced() {
        for (i, &n) in REFERENCE_RHS.iter().enumerate() {
            let full = arithmetic_intensity(n, LinkStorage::Full18, F32);
            let r14 = arithmetic_intensity(n, LinkStorage::R14, F32);
            assert!((full - REFERENCE_FULL[i]).abs() <= 0.005, "full n={n}: {full}");
            assert!((r14 - REFERENCE_R14[i]).abs() <= 0.005, "r14 n={n}: {r14}");
        }
    }

    #[test]
    fn asymptote_and_fractions() {
        let inf = asymptotic_intensity(F32);
        assert!((inf - 1146.0 / 408.0).abs() < 1e-15);
        assert!((inf - 2.809).abs() < 5e-4);
        let f8 = arithmetic_intensity(8, LinkStorage::Full18, F32) / inf;
        assert!((f8 - 0.739).abs() < 5e-4, "{f8}");
        let f1 = arithmetic_intensity(1, LinkStorage::Full18, F32) / inf;
        assert!((f1 - 0.2615).abs() < 5e-4, "{f1}");
    }

    #[test]
    fn intensity_increases_and_stays_below_limit() {
        for storage in [LinkStorage::Full18, LinkStorage::R14] {
            for precision in [Precision::F32, Precision::F64] {
                let mut prev = 0.0;
                for n in 1..200 {
                    let ai = arithmetic_intensity(n, storage, precision);
                    assert!(ai > prev && ai < asymptotic_intensity(precision));
                    prev = ai;
                }
            }
        }
    }

    #[test]
    fn roofline_examples() {
        let cat = DeviceCatalog::default();
        let k40 = cat.lookup("K40").unwrap();
        let p = roofline_predict(k40, 4, LinkStorage::R14, F32, false).unwrap();
        assert!((p - 498.0).abs() <= 1.0, "{p}");
        let phi = cat.lookup("5110P").unwrap();
        let p = roofline_predict(phi, 4, LinkStorage::Full18, F32, true).unwrap();
        assert!((p - 231.0).abs() <= 1.0, "{p}");
        // 1146/1560 × 208 with the unrounded intensity.
        let k20 = cat.lookup("K20").unwrap();
        let p = roofline_predict(k20, 1, LinkStorage::Full18, F32, false).unwrap();
        assert!((p - 152.8).abs() <= 0.05, "{p}");
        assert_eq!(
            roofline_predict(k40, 4, LinkStorage::R14, F32, true),
            Err(ModelError::MissingMeasuredBandwidth("K40".into()))
        );
    }

    #[test]
    fn roofline_never_exceeds_peak() {
        let tiny = device("tiny", &[], 10.0, 5.0, 1000.0, None, 1.0);
        for n in 1..16 {
            assert!(roofline_predict(&tiny, n, LinkStorage::R14, F32, false).unwrap() <= 10.0);
            assert!(roofline_predict(&tiny, n, LinkStorage::R14, Precision::F64, false).unwrap() <= 5.0);
        }
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency(416.0, 185.0).unwrap() - 2.25).abs() < 0.005);
        assert!((efficiency(281.0, 125.0).unwrap() - 2.25).abs() < 0.005);
        assert_eq!(efficiency(300.0, 200.0).unwrap(), 1.5);
        assert!(efficiency(1.0, 0.0).is_err());
    }

    #[test]
    fn catalog_lookup() {
        let cat = DeviceCatalog::default();
        assert_eq!(cat.lookup("K40").unwrap().bandwidth, 288.0);
        assert_eq!(cat.lookup("5110P").unwrap().peak_fp32, 2020.0);
        assert_eq!(cat.lookup("gtx titan").unwrap().name, "Titan");
        assert_eq!(cat.lookup("A100"), Err(ModelError::UnknownDevice("A100".into())));
        for d in cat.devices() {
            d.validate().unwrap();
        }
    }

    #[test]
    fn catalog_config_file() {
        let mut cat = DeviceCatalog::default();
        cat.extend_from_config("# custom\nHost fp32=1000 fp64=500 bw=100 measured_bw=80 tdp=150\n\nK40 fp32=4290 fp64=1430 bw=288 measured_bw=200 tdp=235\n")
            .unwrap();
        assert_eq!(cat.lookup("host").unwrap().measured_bandwidth, Some(80.0));
        assert_eq!(cat.lookup("K40").unwrap().measured_bandwidth, Some(200.0));
        assert_eq!(cat.devices().len(), 5);
        assert!(matches!(cat.extend_from_config("X fp32"), Err(ModelError::Parse { line: 1, .. })));
        assert!(matches!(
            cat.extend_from_config("X fp32=1 fp64=1 bw=10 measured_bw=20 tdp=1"),
            Err(ModelError::InvalidDevice { .. })
        ));
    }
}
