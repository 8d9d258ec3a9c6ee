#![allow(dead_code)]

use cbdc_core::hash;
use cbdc_core::intermediary::{Intermediary, KycDoc, ReconciliationReport};
use cbdc_core::ledger::OmniscientState;
use cbdc_core::protocol::{self, Message};
use cbdc_core::secure_element::{LogRole, Provisioning};
use cbdc_core::wallet::{Device, MainWallet};
use cbdc_core::{DeviceId, KeyPair, Limits};

pub struct World {
    pub fi: Intermediary,
    pub auditor: KeyPair,
    pub wallets: Vec<MainWallet>,
    pub epoch: u64,
}

pub type Dev = (usize, DeviceId);

impl World {
    pub fn new() -> Self {
        let auditor = KeyPair::from_seed(b"auditor");
        World {
            fi: Intermediary::new(KeyPair::from_seed(b"fi"), *auditor.public(), Limits::REFERENCE),
            auditor,
            wallets: Vec::new(),
            epoch: 1,
        }
    }

    pub fn wallet(&mut self, name: &str, issue: u64) -> usize {
        let rec = self
            .fi
            .onboard_customer(&KycDoc {
                name: name.into(),
                sanctioned: false,
            })
            .unwrap();
        let keys = KeyPair::from_seed(format!("wallet/{name}").as_bytes());
        self.fi.register_wallet(&rec.owner_id, *keys.public()).unwrap();
        let mut w = MainWallet::new(rec.owner_id, keys);
        if issue > 0 {
            self.fi.issue_cbdc(&rec.owner_id, issue).unwrap();
            w.credit(issue);
        }
        self.wallets.push(w);
        self.wallets.len() - 1
    }

    pub fn device(&mut self, w: usize, name: &str, load: u64) -> Dev {
        self.device_with(w, name, load, Limits::REFERENCE, 100)
    }

    pub fn device_with(&mut self, w: usize, name: &str, load: u64, limits: Limits, expiry: u64) -> Dev {
        let keys = KeyPair::from_seed(format!("device/{name}").as_bytes());
        let owner = *self.wallets[w].owner_id();
        let (id, certificate) = self.fi.enroll_device(&owner, *keys.public(), limits, expiry).unwrap();
        let device = Device::provision(Provisioning {
            device_id: id,
            keys,
            prf_seed: hash::tagged(b"test-prf", &[name.as_bytes()]),
            certificate,
            owner_pk: *self.wallets[w].public_key(),
            fi_pub: *self.fi.public_key(),
        })
        .unwrap();
        self.wallets[w].add_device(device);
        if load > 0 {
            self.wallets[w].allocate_to_subwallet(&id, load).unwrap();
        }
        (w, id)
    }

    pub fn dev(&self, d: Dev) -> &Device {
        self.wallets[d.0].device(&d.1).unwrap()
    }

    pub fn dev_mut(&mut self, d: Dev) -> &mut Device {
        self.wallets[d.0].device_mut(&d.1).unwrap()
    }

    /// Runs the exchange, dropping the `drop`-th message (0 init, 1 accept,
    /// 2 commit) and timing out both sides afterwards.
    pub fn pay(&mut self, payer: Dev, payee: Dev, amount: u64, drop: Option<usize>) -> [u8; 32] {
        let epoch = self.epoch;
        let init = protocol::payer_start(self.dev_mut(payer), amount, payee.1, epoch).unwrap();
        let tx = init.tx_id;
        let mut msg = Some(Message::Init(init));
        let mut step = 0;
        while let Some(m) = msg.take() {
            if drop == Some(step) {
                break;
            }
            let target = if step % 2 == 0 { payee } else { payer };
            msg = protocol::handle_message(self.dev_mut(target), &m, epoch).unwrap().reply;
            step += 1;
        }
        protocol::handle_timeout(self.dev_mut(payer), &tx);
        protocol::handle_timeout(self.dev_mut(payee), &tx);
        tx
    }

    pub fn sync(&mut self) -> ReconciliationReport {
        let payloads: Vec<_> = self.wallets.iter().map(|w| w.collect_sync_payload()).collect();
        let report = self.fi.reconcile(&payloads, self.epoch);
        for w in &mut self.wallets {
            w.apply_report(&report);
        }
        report
    }

    pub fn omniscient(&self) -> OmniscientState {
        let mut s = OmniscientState::default();
        let mut payments = std::collections::BTreeMap::new();
        for w in &self.wallets {
            s.main_balances += w.online_balance();
            for d in w.devices() {
                if self.fi.is_frozen(d.id()) {
                    s.frozen += d.se().balance();
                } else {
                    s.se_balances += d.se().balance();
                }
                for e in d.log() {
                    if matches!(e.role, LogRole::Payer | LogRole::Payee) {
                        payments.insert(*e.bundle_hash().unwrap(), e.amount());
                    }
                }
            }
        }
        s.in_flight = payments
            .iter()
            .filter(|(h, _)| !self.fi.is_resolved(h))
            .map(|(_, v)| v)
            .sum();
        s.frozen += self.fi.withheld_total();
        s
    }

    pub fn discrepancy(&self) -> i128 {
        self.omniscient().discrepancy(self.fi.ledger())
    }
}
