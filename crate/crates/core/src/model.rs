//! Problem description: the task, the mobile device, the edge server fleet,
//! and the constants every other module derives from them.
//!
//! Units are SI throughout: bits, bits/s, cycles, Hz, joules, seconds. The
//! delay weight `alpha` is in joules per second so the objective is in joules.

use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The computation task to be placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Input size in bits.
    #[serde(rename = "L_bits")]
    pub l_bits: u64,
    /// Completion deadline in seconds; `None` means unbounded.
    #[serde(rename = "tau_d_s")]
    pub tau_d: Option<f64>,
    /// CPU cycles needed per input bit.
    #[serde(rename = "gamma_A")]
    pub gamma_a: f64,
}

impl TaskSpec {
    /// Deadline in seconds, `f64::INFINITY` when unbounded.
    pub fn deadline(&self) -> f64 {
        self.tau_d.unwrap_or(f64::INFINITY)
    }

    pub fn bits(&self) -> f64 {
        self.l_bits as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    #[serde(rename = "f_max_hz")]
    pub f_max: f64,
    /// Effective switched capacitance; a cycle at frequency `f` costs `kappa * f^2` joules.
    pub kappa: f64,
    #[serde(rename = "P_tx_w")]
    pub p_tx: f64,
    /// Radio tail energy, charged once whenever anything is uploaded.
    #[serde(rename = "E_t_j")]
    pub e_tail: f64,
    /// Uplink rate from the device to the access point.
    #[serde(rename = "r_hp_bps")]
    pub r_hp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub id: String,
    /// Access point to server rate.
    #[serde(rename = "r_bps")]
    pub rate: f64,
    /// Processing capability in cycles per second.
    #[serde(rename = "c_hz")]
    pub capability: f64,
}

/// A complete offloading problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub task: TaskSpec,
    pub device: DeviceSpec,
    pub servers: Vec<ServerSpec>,
    pub alpha: f64,
    /// Maximum number of servers a task may be split across.
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("field `{0}` must be finite and strictly positive")]
    NonPositiveField(String),
    #[error("duplicate server id `{0}`")]
    DuplicateServerId(String),
    #[error("m = {m} exceeds the fleet size N = {n}")]
    MExceedsN { m: usize, n: usize },
    #[error("no servers available and local execution cannot meet the deadline")]
    EmptyFleetWithOffloadRequired,
}

/// Constants shared by the closed-form solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedParams {
    /// Total task cycles, `gamma_A * L`.
    pub b0: f64,
    /// `kappa * b0^3`.
    pub k: f64,
    /// Energy to upload the whole task, `P_tx * L / r_hp`.
    pub phi: f64,
    /// Time to upload the whole task, `L / r_hp`.
    pub q0: f64,
    /// Per-server delay per unit fraction, `L / r_i + gamma_A * L / c_i`, in fleet order.
    pub q: Vec<f64>,
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl Instance {
    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    /// Collects every violated standing assumption.
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errors = Vec::new();
        let mut need = |ok: bool, field: &str| {
            if !ok {
                errors.push(ValidationError::NonPositiveField(field.to_string()));
            }
        };
        need(self.task.l_bits >= 1, "task.L_bits");
        need(positive(self.task.gamma_a), "task.gamma_A");
        if let Some(t) = self.task.tau_d {
            need(!t.is_nan() && t > 0.0, "task.tau_d_s");
        }
        need(positive(self.device.f_max), "device.f_max_hz");
        need(positive(self.device.kappa), "device.kappa");
        need(positive(self.device.p_tx), "device.P_tx_w");
        need(positive(self.device.e_tail), "device.E_t_j");
        need(positive(self.device.r_hp), "device.r_hp_bps");
        need(positive(self.alpha), "alpha");
        for (i, s) in self.servers.iter().enumerate() {
            if !positive(s.rate) {
                need(false, &format!("servers[{i}].r_bps"));
            }
            if !positive(s.capability) {
                need(false, &format!("servers[{i}].c_hz"));
            }
        }

        let n = self.servers.len();
        if n >= 1 {
            if self.m == 0 {
                errors.push(ValidationError::NonPositiveField("m".into()));
            } else if self.m > n {
                errors.push(ValidationError::MExceedsN { m: self.m, n });
            }
        } else {
            let cycles = self.task.gamma_a * self.task.bits();
            if positive(self.device.f_max) && cycles / self.device.f_max > self.task.deadline() {
                errors.push(ValidationError::EmptyFleetWithOffloadRequired);
            }
        }

        for i in duplicate_ids(&self.servers) {
            errors.push(ValidationError::DuplicateServerId(
                self.servers[i].id.clone(),
            ));
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    pub fn derive_params(&self) -> DerivedParams {
        let l = self.task.bits();
        let gamma = self.task.gamma_a;
        let b0 = gamma * l;
        let q = self.servers.iter().map(|s| server_q(l, gamma, s)).collect();
        DerivedParams {
            b0,
            k: self.device.kappa * b0 * b0 * b0,
            phi: self.device.p_tx * l / self.device.r_hp,
            q0: l / self.device.r_hp,
            q,
        }
    }
}

/// Indices of servers whose id already appeared earlier in the fleet, ascending.
fn duplicate_ids(servers: &[ServerSpec]) -> Vec<usize> {
    // Sorting hashes keeps memory access sequential on large fleets.
    let mut keyed: Vec<(u64, usize)> = servers
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut h = DefaultHasher::new();
            s.id.hash(&mut h);
            (h.finish(), i)
        })
        .collect();
    keyed.sort_unstable();
    let mut dups = Vec::new();
    for run in keyed.chunk_by(|a, b| a.0 == b.0).filter(|r| r.len() > 1) {
        for (k, &(_, i)) in run.iter().enumerate() {
            if run[..k]
                .iter()
                .any(|&(_, j)| servers[j].id == servers[i].id)
            {
                dups.push(i);
            }
        }
    }
    dups.sort_unstable();
    dups
}

/// Delay of routing and processing the whole task on one server.
pub fn server_q(l_bits: f64, gamma_a: f64, server: &ServerSpec) -> f64 {
    l_bits / server.rate + gamma_a * l_bits / server.capability
}

/// Device and task constants used in the experimental study.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSettings {
    pub l_bits: u64,
    pub gamma_a: f64,
    pub device: DeviceSpec,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            // 50 KB, binary kilobytes.
            l_bits: 50 * 1024 * 8,
            gamma_a: 700.0,
            device: DeviceSpec {
                f_max: 2e9,
                kappa: 1e-26,
                p_tx: 0.5,
                e_tail: 0.15,
                r_hp: 2.5e6,
            },
        }
    }
}

impl ReferenceSettings {
    pub fn task(&self, tau_d: Option<f64>) -> TaskSpec {
        TaskSpec {
            l_bits: self.l_bits,
            tau_d,
            gamma_a: self.gamma_a,
        }
    }
}
