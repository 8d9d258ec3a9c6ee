//! Declarative scenario files (JSON).

use std::collections::BTreeSet;

use cbdc_core::Limits;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub profile: ProfileName,
    #[serde(default = "default_timeout")]
    pub timeout_ticks: u64,
    pub actors: Actors,
    pub script: Vec<Step>,
    #[serde(default)]
    pub expected: Expected,
}

fn default_timeout() -> u64 {
    cbdc_core::protocol::DEFAULT_TIMEOUT_TICKS
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    #[default]
    Nfc,
    Ble,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actors {
    pub wallets: Vec<WalletDecl>,
    #[serde(default)]
    pub devices: Vec<DeviceDecl>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalletDecl {
    pub id: String,
    pub kyc: KycDecl,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KycDecl {
    pub name: String,
    #[serde(default)]
    pub sanctioned: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDecl {
    pub id: String,
    pub wallet: String,
    #[serde(default = "default_expiry")]
    pub expiry_epoch: u64,
    #[serde(default)]
    pub limits: Option<LimitsDecl>,
}

fn default_expiry() -> u64 {
    100
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsDecl {
    pub cum_limit: u64,
    pub per_tx_cap: u64,
    pub max_tx: u64,
}

impl From<LimitsDecl> for Limits {
    fn from(l: LimitsDecl) -> Self {
        Limits {
            cum_limit: l.cum_limit,
            per_tx_cap: l.per_tx_cap,
            max_tx: l.max_tx,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FaultName {
    Drop,
    Dup,
    Corrupt,
    Truncate,
    Delay,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RollbackAction {
    Snapshot,
    Restore,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditScopeDecl {
    /// Label of a `pay` step.
    Payment(String),
    Device(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Onboard {
        wallet: String,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Issue {
        wallet: String,
        amount: u64,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Allocate {
        device: String,
        amount: u64,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Reclaim {
        device: String,
    },
    Pay {
        from: String,
        to: String,
        amount: u64,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        expect_error: Option<String>,
        /// Expected outcome status, e.g. "completed" or "pending_sync".
        #[serde(default)]
        expect_status: Option<String>,
    },
    /// Seeded random payments between the listed devices (all devices if
    /// omitted). Infeasible draws are skipped.
    RandomPay {
        count: u32,
        max_amount: u64,
        #[serde(default)]
        devices: Vec<String>,
    },
    /// Fault on the frame `frame` positions after the next one sent.
    InjectFault {
        fault: FaultName,
        #[serde(default)]
        frame: u64,
        #[serde(default)]
        ticks: u64,
    },
    /// Random fault rates (per mille) for all later frames.
    FaultRates {
        #[serde(default)]
        drop: u16,
        #[serde(default)]
        dup: u16,
        #[serde(default)]
        corrupt: u16,
        #[serde(default)]
        truncate: u16,
        #[serde(default)]
        delay: u16,
        #[serde(default)]
        delay_ticks: u64,
    },
    AttackRollback {
        device: String,
        action: RollbackAction,
    },
    AdvanceEpoch {
        #[serde(default = "one")]
        by: u64,
    },
    Sync {
        #[serde(default)]
        wallets: Vec<String>,
    },
    Audit {
        scope: AuditScopeDecl,
        #[serde(default)]
        forged: bool,
        /// "disclosed", "grant_invalid" or "scope_unknown".
        expect: String,
    },
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub double_spends: Option<usize>,
    pub credits: Option<usize>,
    pub voided: Option<usize>,
    /// Conservation holds at every check.
    pub conservation_always: Option<bool>,
    /// Conservation holds after the last step.
    pub conservation_final: Option<bool>,
    #[serde(default)]
    pub wallet_balances: std::collections::BTreeMap<String, u64>,
    #[serde(default)]
    pub device_balances: std::collections::BTreeMap<String, u64>,
    #[serde(default)]
    pub frozen: Vec<String>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Every step refers to declared actors.
    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let mut wallets = BTreeSet::new();
        for w in &self.actors.wallets {
            if !wallets.insert(w.id.as_str()) {
                return bad(format!("duplicate wallet {}", w.id));
            }
        }
        let mut devices = BTreeSet::new();
        for d in &self.actors.devices {
            if !wallets.contains(d.wallet.as_str()) {
                return bad(format!("device {} names unknown wallet {}", d.id, d.wallet));
            }
            if !devices.insert(d.id.as_str()) || wallets.contains(d.id.as_str()) {
                return bad(format!("duplicate actor {}", d.id));
            }
        }
        let wallet = |id: &str| {
            if wallets.contains(id) {
                Ok(())
            } else {
                bad(format!("unknown wallet {id}"))
            }
        };
        let device = |id: &str| {
            if devices.contains(id) {
                Ok(())
            } else {
                bad(format!("unknown device {id}"))
            }
        };
        let mut labels = BTreeSet::new();
        for step in &self.script {
            match step {
                Step::Onboard { wallet: w, .. } | Step::Issue { wallet: w, .. } => wallet(w)?,
                Step::Allocate { device: d, .. } | Step::Reclaim { device: d } | Step::AttackRollback { device: d, .. } => {
                    device(d)?
                }
                Step::Pay { from, to, label, .. } => {
                    device(from)?;
                    device(to)?;
                    if let Some(l) = label {
                        if !labels.insert(l.clone()) {
                            return bad(format!("duplicate payment label {l}"));
                        }
                    }
                }
                Step::RandomPay { devices: ds, .. } => {
                    for d in ds {
                        device(d)?;
                    }
                }
                Step::Sync { wallets: ws } => {
                    for w in ws {
                        wallet(w)?;
                    }
                }
                Step::Audit { scope, .. } => match scope {
                    AuditScopeDecl::Payment(l) if !labels.contains(l) => return bad(format!("unknown payment label {l}")),
                    AuditScopeDecl::Device(d) => device(d)?,
                    _ => {}
                },
                Step::InjectFault { .. } | Step::FaultRates { .. } | Step::AdvanceEpoch { .. } => {}
            }
        }
        for w in self.expected.wallet_balances.keys() {
            wallet(w)?;
        }
        for d in self.expected.device_balances.keys().chain(&self.expected.frozen) {
            device(d)?;
        }
        Ok(())
    }
}
