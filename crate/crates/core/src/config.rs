//! Simulation configuration.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SimConfig {
    pub devices: usize,
    /// Unidirectional bandwidth of one device-to-device link.
    pub peak_p2p_bytes_per_s: f64,
    /// Effective memory throughput of one device.
    pub device_throughput_bytes_per_s: f64,
    /// Fixed cost per kernel launch.
    pub launch_overhead_s: f64,
    /// Cost of one synchronization.
    pub sync_overhead_s: f64,
    /// Number of asynchronous queues.
    pub queues: usize,
    /// Per-device memory capacity.
    pub capacity_bytes: u64,
    /// Per-pair link bandwidth overrides (both directions).
    pub p2p_overrides: Vec<(usize, usize, f64)>,
    /// Throughput factor applied to kernels whose pointers were all
    /// proven conflict-free by specialization.
    pub specialized_throughput_multiplier: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            devices: 1,
            peak_p2p_bytes_per_s: 25e9,
            device_throughput_bytes_per_s: 900e9,
            launch_overhead_s: 10e-6,
            sync_overhead_s: 5e-6,
            queues: 16,
            capacity_bytes: 16 << 30,
            p2p_overrides: Vec::new(),
            specialized_throughput_multiplier: 1.0,
        }
    }
}

impl SimConfig {
    pub fn link_bandwidth(&self, from: usize, to: usize) -> f64 {
        for (a, b, bw) in &self.p2p_overrides {
            if (*a == from && *b == to) || (*a == to && *b == from) {
                return *bw;
            }
        }
        self.peak_p2p_bytes_per_s
    }

    pub fn from_json(text: &str) -> Result<SimConfig, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = SimConfig::from_json(r#"{"devices": 4, "queues": 8}"#).unwrap();
        assert_eq!(cfg.devices, 4);
        assert_eq!(cfg.queues, 8);
        assert_eq!(cfg.peak_p2p_bytes_per_s, 25e9);
        assert_eq!(cfg.specialized_throughput_multiplier, 1.0);
    }
}
