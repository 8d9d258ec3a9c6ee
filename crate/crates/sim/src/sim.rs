//! Deterministic discrete-event simulator.
//!
//! Steps of a scenario run one after another; after each step the event queue
//! (frame deliveries and protocol deadlines) is drained in `(tick, seq)`
//! order. The conservation oracle is evaluated after every event and every
//! step.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use cbdc_core::channel::{encode_frame, Channel, ChannelConfig, Fault, FaultPlan, FaultRates, Profile};
use cbdc_core::hash::{self, to_hex};
use cbdc_core::intermediary::{AuditGrant, AuditScope, Intermediary, KycDoc, ReconciliationReport};
use cbdc_core::ledger::OmniscientState;
use cbdc_core::protocol::{self, Message, OutcomeStatus, PaymentOutcome};
use cbdc_core::secure_element::{LogRole, Provisioning};
use cbdc_core::wallet::{device_pseudonym, Device, MainWallet};
use cbdc_core::zkp::analytic_size;
use cbdc_core::{DeviceId, Encode, KeyPair, Limits, OwnerId, RANGE_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::scenario::{AuditScopeDecl, FaultName, ProfileName, RollbackAction, Scenario, Step};

/// Converts an error's `Debug` form (`Se(LimitExceeded)`) to the snake-case
/// name of its innermost variant (`limit_exceeded`).
pub fn error_name(e: &impl std::fmt::Debug) -> String {
    let dbg = format!("{e:?}");
    let inner = dbg.rsplit('(').next().unwrap_or(&dbg).trim_end_matches(')');
    let inner = inner.split([' ', '{']).next().unwrap_or(inner);
    let mut out = String::new();
    for (i, c) in inner.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

fn status_name(s: &OutcomeStatus) -> String {
    match s {
        OutcomeStatus::Completed => "completed".into(),
        OutcomeStatus::AbortedTimeout => "aborted_timeout".into(),
        OutcomeStatus::AbortedReject(r) => format!("aborted_reject:{}", r.as_str()),
        OutcomeStatus::PendingSync => "pending_sync".into(),
    }
}

struct WalletSlot {
    id: String,
    kyc: KycDoc,
    keys_seed: Vec<u8>,
    wallet: Option<MainWallet>,
}

struct DeviceSlot {
    name: String,
    wallet: usize,
    limits: Limits,
    expiry_epoch: u64,
    id: Option<DeviceId>,
}

struct Payment {
    label: Option<String>,
    from: usize,
    to: usize,
    amount: u64,
    tx_id: [u8; 32],
    bundle_hash: [u8; 32],
    start_tick: u64,
    payer_status: Option<String>,
    payee_status: Option<String>,
    payee_done_tick: Option<u64>,
    settlement: Option<(String, u64)>,
    proof_bytes: usize,
    range_proof_bytes: usize,
    bundle_bytes: usize,
    init_frame_bytes: usize,
    init_chunks: usize,
    prove_us: u128,
    verify_us: Option<u128>,
}

enum Event {
    Deliver {
        from: usize,
        to: usize,
        payment: usize,
        delivery: cbdc_core::channel::Delivery,
    },
    Timeout {
        device: usize,
        payment: usize,
    },
}

#[derive(Default)]
struct Conservation {
    checks: u64,
    failures: u64,
    max_abs: i128,
    first_failure: Option<(usize, u64, i128)>,
    last: i128,
}

#[derive(Default)]
struct ChannelStats {
    frames: u64,
    deliveries: u64,
    faults: BTreeMap<&'static str, u64>,
    rx_errors: BTreeMap<String, u64>,
    protocol_errors: BTreeMap<String, u64>,
}

pub struct Simulator {
    scenario: Scenario,
    seed: u64,
    rng: ChaCha8Rng,
    fi: Intermediary,
    auditor: KeyPair,
    wallets: Vec<WalletSlot>,
    wallet_ix: BTreeMap<String, usize>,
    devices: Vec<DeviceSlot>,
    device_ix: BTreeMap<String, usize>,
    channel: Channel,
    tick: u64,
    epoch: u64,
    step: usize,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    next_seq: u64,
    payments: Vec<Payment>,
    trace: Vec<String>,
    conservation: Conservation,
    channel_stats: ChannelStats,
    syncs: Vec<Value>,
    double_spends: BTreeMap<String, Value>,
    audits: Vec<Value>,
    assertions: Vec<Value>,
    reconcile_us: Vec<u128>,
    bundle_bytes: Option<usize>,
}

/// Outcome of a scenario run.
pub struct RunResult {
    pub report: Value,
    pub passed: bool,
}

impl Simulator {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let tag = format!("{}/{seed}", scenario.name);
        let fi = Intermediary::new(
            KeyPair::from_seed(format!("{tag}/fi").as_bytes()),
            *KeyPair::from_seed(format!("{tag}/auditor").as_bytes()).public(),
            Limits::REFERENCE,
        );
        let auditor = KeyPair::from_seed(format!("{tag}/auditor").as_bytes());
        let wallets: Vec<WalletSlot> = scenario
            .actors
            .wallets
            .iter()
            .map(|w| WalletSlot {
                id: w.id.clone(),
                kyc: KycDoc {
                    name: w.kyc.name.clone(),
                    sanctioned: w.kyc.sanctioned,
                },
                keys_seed: format!("{tag}/wallet/{}", w.id).into_bytes(),
                wallet: None,
            })
            .collect();
        let wallet_ix: BTreeMap<_, _> = wallets.iter().enumerate().map(|(i, w)| (w.id.clone(), i)).collect();
        let devices: Vec<DeviceSlot> = scenario
            .actors
            .devices
            .iter()
            .map(|d| DeviceSlot {
                name: d.id.clone(),
                wallet: wallet_ix[&d.wallet],
                limits: d.limits.map(Into::into).unwrap_or(Limits::REFERENCE),
                expiry_epoch: d.expiry_epoch,
                id: None,
            })
            .collect();
        let device_ix = devices.iter().enumerate().map(|(i, d)| (d.name.clone(), i)).collect();
        let profile = match scenario.profile {
            ProfileName::Nfc => Profile::Nfc,
            ProfileName::Ble => Profile::Ble,
        };
        let channel = Channel::new(ChannelConfig {
            profile,
            fault_plan: FaultPlan {
                seed,
                ..FaultPlan::default()
            },
        });
        Simulator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            fi,
            auditor,
            wallets,
            wallet_ix,
            devices,
            device_ix,
            channel,
            tick: 0,
            epoch: 1,
            step: 0,
            queue: BinaryHeap::new(),
            events: BTreeMap::new(),
            next_seq: 0,
            payments: Vec::new(),
            trace: Vec::new(),
            conservation: Conservation::default(),
            channel_stats: ChannelStats::default(),
            syncs: Vec::new(),
            double_spends: BTreeMap::new(),
            audits: Vec::new(),
            assertions: Vec::new(),
            reconcile_us: Vec::new(),
            bundle_bytes: None,
            scenario,
        }
    }

    fn device(&self, ix: usize) -> Option<&Device> {
        let d = &self.devices[ix];
        self.wallets[d.wallet].wallet.as_ref()?.device(d.id.as_ref()?)
    }

    fn device_mut(&mut self, ix: usize) -> Option<&mut Device> {
        let d = &self.devices[ix];
        let id = d.id?;
        self.wallets[d.wallet].wallet.as_mut()?.device_mut(&id)
    }

    fn assert_that(&mut self, name: String, expected: Value, actual: Value) {
        let ok = expected == actual;
        self.assertions.push(json!({"name": name, "expected": expected, "actual": actual, "ok": ok}));
    }

    fn step_result<E: std::fmt::Debug>(&mut self, op: &str, expect: &Option<String>, r: Result<(), E>) {
        let actual = match &r {
            Ok(()) => "ok".to_string(),
            Err(e) => error_name(e),
        };
        let expected = expect.clone().unwrap_or_else(|| "ok".into());
        if actual != expected || expect.is_some() {
            let name = format!("step {} {op}", self.step);
            self.assert_that(name, json!(expected), json!(actual));
        }
        if r.is_err() {
            self.trace.push(format!("t={} step={} {op} error={actual}", self.tick, self.step));
        }
    }

    fn omniscient(&self) -> OmniscientState {
        let mut s = OmniscientState::default();
        let mut payments = BTreeMap::new();
        for w in self.wallets.iter().filter_map(|w| w.wallet.as_ref()) {
            s.main_balances += w.online_balance();
            for d in w.devices() {
                if self.fi.is_frozen(d.id()) {
                    s.frozen += d.se().balance();
                } else {
                    s.se_balances += d.se().balance();
                }
                for e in d.log() {
                    if matches!(e.role, LogRole::Payer | LogRole::Payee) {
                        payments.insert(*e.bundle_hash().expect("payment entry"), e.amount());
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

    fn check_conservation(&mut self) {
        let d = self.omniscient().discrepancy(self.fi.ledger());
        let c = &mut self.conservation;
        c.checks += 1;
        c.last = d;
        if d != 0 {
            c.failures += 1;
            c.max_abs = c.max_abs.max(d.abs());
            if c.first_failure.is_none() {
                c.first_failure = Some((self.step, self.tick, d));
            }
        }
    }

    fn push_event(&mut self, at: u64, ev: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((at, seq)));
        self.events.insert(seq, ev);
    }

    fn send(&mut self, from: usize, to: usize, payment: usize, msg: &Message) -> (usize, usize) {
        let frame = encode_frame(msg.msg_type(), &msg.payload()).expect("payload within limit");
        let index = self.channel.next_frame_index();
        let fault = self.channel.config.fault_plan.fault_for(index);
        let deliveries = self.channel.transmit(&frame, self.tick);
        self.channel_stats.frames += 1;
        if let Some(f) = fault {
            let name = match f {
                Fault::Drop => "drop",
                Fault::Duplicate => "dup",
                Fault::Corrupt => "corrupt",
                Fault::Truncate => "truncate",
                Fault::Delay(_) => "delay",
            };
            *self.channel_stats.faults.entry(name).or_default() += 1;
        }
        let chunks = deliveries.first().map_or(0, |d| d.chunks.len());
        self.trace.push(format!(
            "t={} send frame={index} type={} {}->{} bytes={} fault={:?} deliveries={}",
            self.tick,
            msg.msg_type(),
            self.devices[from].name,
            self.devices[to].name,
            frame.len(),
            fault,
            deliveries.len()
        ));
        for delivery in deliveries {
            self.channel_stats.deliveries += 1;
            let at = delivery.at_tick;
            self.push_event(
                at,
                Event::Deliver {
                    from,
                    to,
                    payment,
                    delivery,
                },
            );
        }
        (frame.len(), chunks)
    }

    fn record_outcome(&mut self, payment: usize, device: usize, outcome: &PaymentOutcome) {
        let p = &mut self.payments[payment];
        let status = status_name(&outcome.status);
        if device == p.from {
            p.payer_status = Some(status);
        } else {
            if outcome.status == OutcomeStatus::Completed {
                p.payee_done_tick = Some(self.tick);
            }
            p.payee_status = Some(status);
        }
    }

    fn run_queue(&mut self) {
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            self.tick = self.tick.max(at);
            let ev = self.events.remove(&seq).expect("queued event");
            match ev {
                Event::Deliver {
                    from,
                    to,
                    payment,
                    delivery,
                } => self.deliver(from, to, payment, delivery),
                Event::Timeout { device, payment } => {
                    let tx = self.payments[payment].tx_id;
                    let outcome = self.device_mut(device).and_then(|d| protocol::handle_timeout(d, &tx));
                    if let Some(o) = outcome {
                        self.trace.push(format!(
                            "t={} timeout {} {}",
                            self.tick,
                            self.devices[device].name,
                            status_name(&o.status)
                        ));
                        self.record_outcome(payment, device, &o);
                    }
                }
            }
            self.check_conservation();
        }
    }

    fn deliver(&mut self, from: usize, to: usize, payment: usize, delivery: cbdc_core::channel::Delivery) {
        let frame = match delivery.receive() {
            Ok(f) => f,
            Err(e) => {
                let name = error_name(&e);
                self.trace.push(format!("t={} rx {} frame={} error={name}", self.tick, self.devices[to].name, delivery.frame_index));
                *self.channel_stats.rx_errors.entry(name).or_default() += 1;
                return;
            }
        };
        let msg = match Message::decode(frame.msg_type, &frame.payload) {
            Ok(m) => m,
            Err(e) => {
                *self.channel_stats.protocol_errors.entry(error_name(&e)).or_default() += 1;
                return;
            }
        };
        let epoch = self.epoch;
        let started = Instant::now();
        let result = match self.device_mut(to) {
            Some(d) => protocol::handle_message(d, &msg, epoch),
            None => return,
        };
        let elapsed = started.elapsed().as_micros();
        match result {
            Ok(h) => {
                self.trace.push(format!(
                    "t={} rx {} frame={} type={} reply={:?}",
                    self.tick,
                    self.devices[to].name,
                    delivery.frame_index,
                    frame.msg_type,
                    h.reply.as_ref().map(Message::msg_type)
                ));
                if let Message::Init(_) = msg {
                    let p = &mut self.payments[payment];
                    if p.verify_us.is_none() {
                        p.verify_us = Some(elapsed);
                    }
                    if let Some(Message::Reject(r)) = &h.reply {
                        if p.payee_status.is_none() {
                            p.payee_status = Some(format!("rejected:{}", r.reason.as_str()));
                        }
                    }
                    if let Some(Message::Accept(_)) = &h.reply {
                        let at = self.tick + self.scenario.timeout_ticks;
                        self.push_event(at, Event::Timeout { device: to, payment });
                    }
                }
                if let Some(o) = &h.outcome {
                    self.record_outcome(payment, to, o);
                }
                if let Some(reply) = h.reply {
                    self.send(to, from, payment, &reply);
                }
            }
            Err(e) => {
                let name = error_name(&e);
                self.trace.push(format!("t={} rx {} frame={} error={name}", self.tick, self.devices[to].name, delivery.frame_index));
                *self.channel_stats.protocol_errors.entry(name).or_default() += 1;
            }
        }
    }

    fn onboard(&mut self, w: usize) -> Result<(), cbdc_core::intermediary::FiError> {
        let slot = &self.wallets[w];
        let rec = self.fi.onboard_customer(&slot.kyc)?;
        let keys = KeyPair::from_seed(&slot.keys_seed);
        self.fi.register_wallet(&rec.owner_id, *keys.public())?;
        let owner: OwnerId = rec.owner_id;
        let mut wallet = MainWallet::new(owner, keys);
        let tag = format!("{}/{}", self.scenario.name, self.seed);
        for dix in 0..self.devices.len() {
            if self.devices[dix].wallet != w || self.devices[dix].id.is_some() {
                continue;
            }
            let d = &self.devices[dix];
            let keys = KeyPair::from_seed(format!("{tag}/device/{}", d.name).as_bytes());
            let (id, certificate) = self.fi.enroll_device(&owner, *keys.public(), d.limits, d.expiry_epoch)?;
            let device = Device::provision(Provisioning {
                device_id: id,
                keys,
                prf_seed: hash::tagged(b"sim-prf/v1", &[tag.as_bytes(), d.name.as_bytes()]),
                certificate,
                owner_pk: *wallet.public_key(),
                fi_pub: *self.fi.public_key(),
            })
            .expect("fresh certificate provisions");
            wallet.add_device(device);
            self.devices[dix].id = Some(id);
        }
        self.wallets[w].wallet = Some(wallet);
        Ok(())
    }

    fn pay(&mut self, from: usize, to: usize, amount: u64, label: Option<String>) -> Result<usize, String> {
        let payee_id = self.devices[to].id.ok_or("payee not onboarded")?;
        let epoch = self.epoch;
        let started = Instant::now();
        let device = self.device_mut(from).ok_or("payer not onboarded")?;
        let init = protocol::payer_start(device, amount, payee_id, epoch).map_err(|e| error_name(&e))?;
        let prove_us = started.elapsed().as_micros();
        let b = &init.bundle;
        let range_proof_bytes = b.range_balance.proof_size();
        // Every bundle has the same fixed-width encoding; encoding is costly
        // (point compression), so measure it once.
        let bundle_hash = *device
            .log()
            .last()
            .and_then(|e| e.bundle_hash())
            .expect("payer entry just appended");
        let bundle_bytes = *self.bundle_bytes.get_or_insert_with(|| b.to_bytes().len());
        let ix = self.payments.len();
        self.payments.push(Payment {
            label,
            from,
            to,
            amount,
            tx_id: init.tx_id,
            bundle_hash,
            start_tick: self.tick,
            payer_status: None,
            payee_status: None,
            payee_done_tick: None,
            settlement: None,
            proof_bytes: range_proof_bytes + b.range_headroom.proof_size(),
            range_proof_bytes,
            bundle_bytes,
            init_frame_bytes: 0,
            init_chunks: 0,
            prove_us,
            verify_us: None,
        });
        let at = self.tick + self.scenario.timeout_ticks;
        self.push_event(at, Event::Timeout { device: from, payment: ix });
        let (bytes, chunks) = self.send(from, to, ix, &Message::Init(init));
        self.payments[ix].init_frame_bytes = bytes;
        self.payments[ix].init_chunks = chunks;
        self.run_queue();
        Ok(ix)
    }

    fn random_pay(&mut self, count: u32, max_amount: u64, names: &[String]) {
        let pool: Vec<usize> = if names.is_empty() {
            (0..self.devices.len()).collect()
        } else {
            names.iter().map(|n| self.device_ix[n]).collect()
        };
        let pool: Vec<usize> = pool.into_iter().filter(|&d| self.device(d).is_some()).collect();
        for _ in 0..count {
            if pool.len() < 2 {
                return;
            }
            let from = pool[self.rng.gen_range(0..pool.len())];
            let mut to = pool[self.rng.gen_range(0..pool.len() - 1)];
            if to == from {
                to = *pool.last().expect("two devices");
            }
            let se = self.device(from).expect("in pool").se();
            let limits = se.certificate().limits;
            let cap = max_amount
                .min(se.balance())
                .min(limits.per_tx_cap)
                .min(limits.cum_limit - se.cum_spent());
            if cap == 0 || se.remaining_tx() == 0 {
                self.trace.push(format!("t={} random-pay skip {}", self.tick, self.devices[from].name));
                continue;
            }
            let amount = self.rng.gen_range(1..=cap);
            if let Err(e) = self.pay(from, to, amount, None) {
                self.assert_that(format!("step {} random_pay", self.step), json!("ok"), json!(e));
            }
        }
    }

    fn sync(&mut self, names: &[String]) {
        let selected: Vec<usize> = if names.is_empty() {
            (0..self.wallets.len()).collect()
        } else {
            names.iter().map(|n| self.wallet_ix[n]).collect()
        };
        let payloads: Vec<_> = selected
            .iter()
            .filter_map(|&w| self.wallets[w].wallet.as_ref())
            .map(MainWallet::collect_sync_payload)
            .collect();
        let entries: usize = payloads.iter().map(|p| p.entry_count()).sum();
        let started = Instant::now();
        let report = self.fi.reconcile(&payloads, self.epoch);
        self.reconcile_us.push(started.elapsed().as_micros());
        for w in self.wallets.iter_mut().filter_map(|w| w.wallet.as_mut()) {
            w.apply_report(&report);
        }
        self.settle(&report);
        for d in &report.double_spends {
            self.double_spends.insert(
                to_hex(&d.nullifier),
                json!({
                    "nullifier": to_hex(&d.nullifier),
                    "tx_id": to_hex(&d.tx_id),
                    "bundle_hashes": d.bundle_hashes.iter().map(|h| to_hex(h)).collect::<Vec<_>>(),
                    "device_pseudonym": to_hex(&d.device),
                }),
            );
        }
        self.syncs.push(json!({
            "tick": self.tick,
            "epoch": self.epoch,
            "entries": entries,
            "credits": report.credits.len(),
            "credited_total": report.credited_total(),
            "voided": report.voided.len(),
            "debits": report.debits.len(),
            "double_spends": report.double_spends.len(),
            "withheld": report.withheld.iter().map(|w| w.amount).sum::<u64>(),
            "rejected": report.rejected_entries.iter().map(|r| r.reason.as_str()).collect::<Vec<_>>(),
            "acks": report.acks.len(),
            "ledger_delta_id": report.ledger_delta_id.map(|h| to_hex(&h)),
        }));
        self.trace.push(format!(
            "t={} sync entries={entries} credits={} voided={} double_spends={}",
            self.tick,
            report.credits.len(),
            report.voided.len(),
            report.double_spends.len()
        ));
    }

    fn settle(&mut self, report: &ReconciliationReport) {
        for i in 0..self.payments.len() {
            if self.payments[i].settlement.is_some() {
                continue;
            }
            let p = &self.payments[i];
            let wallet_pseudonym = |dev: usize| {
                self.wallets[self.devices[dev].wallet]
                    .wallet
                    .as_ref()
                    .map(|w| w.pseudonym())
            };
            let kind = if report
                .credits
                .iter()
                .any(|c| c.tx_id == p.tx_id && Some(c.payee) == wallet_pseudonym(p.to))
            {
                "credited"
            } else if report
                .voided
                .iter()
                .any(|v| v.tx_id == p.tx_id && Some(v.payer) == wallet_pseudonym(p.from))
            {
                "voided"
            } else if report.withheld.iter().any(|w| w.tx_id == p.tx_id) {
                "withheld"
            } else if self.fi.is_resolved(&p.bundle_hash) {
                "flagged"
            } else {
                continue;
            };
            self.payments[i].settlement = Some((kind.into(), self.tick));
        }
    }

    fn audit(&mut self, scope: &AuditScopeDecl, forged: bool, expect: &str) {
        let scope = match scope {
            AuditScopeDecl::Payment(label) => {
                let p = self.payments.iter().find(|p| p.label.as_deref() == Some(label.as_str()));
                AuditScope::TxId(p.map_or([0; 32], |p| p.tx_id))
            }
            AuditScopeDecl::Device(name) => {
                let pk = self.device(self.device_ix[name]).map(|d| *d.se().public_key());
                AuditScope::Device(pk.map_or([0; 32], |pk| device_pseudonym(&pk)))
            }
        };
        let signer = if forged {
            KeyPair::from_seed(b"not-the-auditor")
        } else {
            KeyPair::from_seed(format!("{}/{}/auditor", self.scenario.name, self.seed).as_bytes())
        };
        debug_assert!(forged || signer.public() == self.auditor.public());
        let grant = AuditGrant::sign(&signer, scope);
        let (result, records) = match self.fi.audit_disclose(&grant) {
            Ok(d) => (
                "disclosed".to_string(),
                d.iter()
                    .map(|d| {
                        json!({
                            "tx_id": to_hex(&d.tx_id),
                            "owner_identity": d.owner_identity,
                            "amount": d.amount,
                            "counterparty": to_hex(&d.counterparty),
                        })
                    })
                    .collect(),
            ),
            Err(e) => (error_name(&e), Vec::new()),
        };
        self.audits.push(json!({"step": self.step, "result": result, "records": records}));
        self.assert_that(format!("step {} audit", self.step), json!(expect), json!(result));
    }

    fn run_step(&mut self, step: &Step) {
        match step {
            Step::Onboard { wallet, expect_error } => {
                let w = self.wallet_ix[wallet];
                let r = if self.wallets[w].wallet.is_some() { Ok(()) } else { self.onboard(w) };
                self.step_result("onboard", expect_error, r);
            }
            Step::Issue {
                wallet,
                amount,
                expect_error,
            } => {
                let w = self.wallet_ix[wallet];
                let r = match &mut self.wallets[w].wallet {
                    None => Err("not_onboarded".to_string()),
                    Some(mw) => match self.fi.issue_cbdc(mw.owner_id(), *amount) {
                        Ok(_) => {
                            mw.credit(*amount);
                            Ok(())
                        }
                        Err(e) => Err(error_name(&e)),
                    },
                };
                self.step_result("issue", expect_error, r.map_err(Named));
            }
            Step::Allocate {
                device,
                amount,
                expect_error,
            } => {
                let d = &self.devices[self.device_ix[device]];
                let r = match (&mut self.wallets[d.wallet].wallet, d.id) {
                    (Some(w), Some(id)) => w.allocate_to_subwallet(&id, *amount).map(|_| ()).map_err(|e| error_name(&e)),
                    _ => Err("not_onboarded".into()),
                };
                self.step_result("allocate", expect_error, r.map_err(Named));
            }
            Step::Reclaim { device } => {
                let d = &self.devices[self.device_ix[device]];
                let r = match (&mut self.wallets[d.wallet].wallet, d.id) {
                    (Some(w), Some(id)) => w.reclaim_from_subwallet(&id).map(|_| ()).map_err(|e| error_name(&e)),
                    _ => Err("not_onboarded".into()),
                };
                self.step_result("reclaim", &None, r.map_err(Named));
            }
            Step::Pay {
                from,
                to,
                amount,
                label,
                expect_error,
                expect_status,
            } => {
                let r = self.pay(self.device_ix[from], self.device_ix[to], *amount, label.clone());
                if let (Ok(ix), Some(want)) = (&r, expect_status) {
                    let got = self.payment_status(*ix);
                    self.assert_that(format!("step {} pay status", self.step), json!(want), json!(got));
                }
                self.step_result("pay", expect_error, r.map(|_| ()).map_err(Named));
            }
            Step::RandomPay {
                count,
                max_amount,
                devices,
            } => self.random_pay(*count, *max_amount, devices),
            Step::InjectFault { fault, frame, ticks } => {
                let f = match fault {
                    FaultName::Drop => Fault::Drop,
                    FaultName::Dup => Fault::Duplicate,
                    FaultName::Corrupt => Fault::Corrupt,
                    FaultName::Truncate => Fault::Truncate,
                    FaultName::Delay => Fault::Delay(*ticks),
                };
                self.channel.schedule(*frame, f);
            }
            Step::FaultRates {
                drop,
                dup,
                corrupt,
                truncate,
                delay,
                delay_ticks,
            } => {
                self.channel.config.fault_plan.rates = FaultRates {
                    drop: *drop,
                    duplicate: *dup,
                    corrupt: *corrupt,
                    truncate: *truncate,
                    delay: *delay,
                    delay_ticks: *delay_ticks,
                };
            }
            Step::AttackRollback { device, action } => {
                let ix = self.device_ix[device];
                let r = match (self.device_mut(ix), action) {
                    (None, _) => Err("not_onboarded".to_string()),
                    (Some(d), RollbackAction::Snapshot) => {
                        d.snapshot();
                        Ok(())
                    }
                    (Some(d), RollbackAction::Restore) => d.restore().map_err(|e| error_name(&e)),
                };
                self.trace.push(format!("t={} rollback {device} {action:?}", self.tick));
                self.step_result("attack_rollback", &None, r.map_err(Named));
            }
            Step::AdvanceEpoch { by } => {
                self.epoch += by;
                // Let any pending deadlines fire.
                self.tick += self.scenario.timeout_ticks;
            }
            Step::Sync { wallets } => self.sync(wallets),
            Step::Audit { scope, forged, expect } => self.audit(scope, *forged, expect),
        }
        self.run_queue();
        self.check_conservation();
    }

    fn payment_status(&self, ix: usize) -> String {
        let p = &self.payments[ix];
        if p.payee_status.as_deref() == Some("completed") {
            return "completed".into();
        }
        p.payer_status.clone().unwrap_or_else(|| "in_flight".into())
    }

    pub fn run(&mut self) -> RunResult {
        let started = Instant::now();
        let script = self.scenario.script.clone();
        for (i, step) in script.iter().enumerate() {
            self.step = i;
            self.run_step(step);
        }
        self.check_expected();
        let total_ms = started.elapsed().as_secs_f64() * 1000.0;
        let passed = self.assertions.iter().all(|a| a["ok"] == json!(true));
        let report = self.report(passed, total_ms);
        RunResult { report, passed }
    }

    fn check_expected(&mut self) {
        let exp = self.scenario.expected.clone();
        if let Some(n) = exp.double_spends {
            self.assert_that("expected double_spends".into(), json!(n), json!(self.double_spends.len()));
        }
        let count = |payments: &[Payment], kind: &str| {
            payments
                .iter()
                .filter(|p| p.settlement.as_ref().is_some_and(|(k, _)| k == kind))
                .count()
        };
        if let Some(n) = exp.credits {
            let got = count(&self.payments, "credited");
            self.assert_that("expected credits".into(), json!(n), json!(got));
        }
        if let Some(n) = exp.voided {
            let got = count(&self.payments, "voided");
            self.assert_that("expected voided".into(), json!(n), json!(got));
        }
        if let Some(b) = exp.conservation_always {
            let got = self.conservation.failures == 0;
            self.assert_that("expected conservation_always".into(), json!(b), json!(got));
        }
        if let Some(b) = exp.conservation_final {
            let got = self.conservation.last == 0;
            self.assert_that("expected conservation_final".into(), json!(b), json!(got));
        }
        for (w, want) in &exp.wallet_balances {
            let got = self.wallets[self.wallet_ix[w]].wallet.as_ref().map(MainWallet::online_balance);
            self.assert_that(format!("expected balance {w}"), json!(want), json!(got));
        }
        for (d, want) in &exp.device_balances {
            let got = self.device(self.device_ix[d]).map(|d| d.se().balance());
            self.assert_that(format!("expected balance {d}"), json!(want), json!(got));
        }
        for d in &exp.frozen {
            let got = self.devices[self.device_ix[d]].id.is_some_and(|id| self.fi.is_frozen(&id));
            self.assert_that(format!("expected frozen {d}"), json!(true), json!(got));
        }
    }

    fn report(&self, passed: bool, total_ms: f64) -> Value {
        let analytic = analytic_size(RANGE_BITS);
        let payments: Vec<Value> = self
            .payments
            .iter()
            .enumerate()
            .map(|(i, p)| {
                json!({
                    "label": p.label,
                    "from": self.devices[p.from].name,
                    "to": self.devices[p.to].name,
                    "amount": p.amount,
                    "tx_id": to_hex(&p.tx_id),
                    "status": self.payment_status(i),
                    "payer_status": p.payer_status,
                    "payee_status": p.payee_status,
                    "start_tick": p.start_tick,
                    "latency_ticks": p.payee_done_tick.map(|t| t - p.start_tick),
                    "settlement": p.settlement.as_ref().map(|(k, _)| k),
                    "sync_delay_ticks": p.settlement.as_ref().map(|(_, t)| t - p.start_tick),
                    "proof_bytes": p.proof_bytes,
                    "range_proof_bytes": p.range_proof_bytes,
                    "bundle_bytes": p.bundle_bytes,
                    "init_frame_bytes": p.init_frame_bytes,
                    "init_chunks": p.init_chunks,
                })
            })
            .collect();
        let mut wallets = BTreeMap::new();
        for w in &self.wallets {
            wallets.insert(w.id.clone(), json!(w.wallet.as_ref().map(MainWallet::online_balance)));
        }
        let mut devices = BTreeMap::new();
        for (ix, d) in self.devices.iter().enumerate() {
            let v = self.device(ix).map(|dev| {
                json!({
                    "balance": dev.se().balance(),
                    "counter": dev.se().counter(),
                    "log_entries": dev.log().len(),
                    "log_storage_bytes": dev.log_storage_bytes(),
                    "frozen": self.fi.is_frozen(dev.id()),
                })
            });
            devices.insert(d.name.clone(), v.unwrap_or(Value::Null));
        }
        let ledger = self.fi.ledger();
        let c = &self.conservation;
        let trace_digest = hash::sha256(&[self.trace.join("\n").as_bytes()]);
        json!({
            "scenario": self.scenario.name,
            "seed": self.seed,
            "profile": match self.channel.config.profile { Profile::Nfc => "nfc", Profile::Ble => "ble" },
            "passed": passed,
            "payments": payments,
            "range_proof": {
                "bits": RANGE_BITS,
                "analytic_bytes": analytic,
                "all_match_analytic": self.payments.iter().all(|p| p.range_proof_bytes == analytic),
            },
            "syncs": self.syncs,
            "double_spends": self.double_spends.values().cloned().collect::<Vec<_>>(),
            "conservation": {
                "checks": c.checks,
                "failures": c.failures,
                "max_abs_discrepancy": c.max_abs as i64,
                "final_discrepancy": c.last as i64,
                "first_failure": c.first_failure.map(|(s, t, d)| json!({"step": s, "tick": t, "discrepancy": d as i64})),
            },
            "wallets": wallets,
            "devices": devices,
            "ledger": {
                "entries": ledger.len(),
                "total_issued": ledger.total_issued(),
                "head": to_hex(&ledger.head()),
                "chain_ok": ledger.verify_chain(),
                "withheld": self.fi.withheld_total(),
            },
            "channel": {
                "frames": self.channel_stats.frames,
                "deliveries": self.channel_stats.deliveries,
                "faults": self.channel_stats.faults,
                "rx_errors": self.channel_stats.rx_errors,
                "protocol_errors": self.channel_stats.protocol_errors,
            },
            "audits": self.audits,
            "assertions": self.assertions,
            "final_tick": self.tick,
            "final_epoch": self.epoch,
            "trace_len": self.trace.len(),
            "trace_digest": to_hex(&trace_digest),
            "timings": {
                "total_ms": total_ms,
                "prove_us": self.payments.iter().map(|p| p.prove_us).collect::<Vec<_>>(),
                "verify_us": self.payments.iter().map(|p| p.verify_us).collect::<Vec<_>>(),
                "reconcile_us": self.reconcile_us,
            },
        })
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    /// A provisioned device by scenario name.
    pub fn device_named(&self, name: &str) -> Option<&Device> {
        self.device(*self.device_ix.get(name)?)
    }

    pub fn intermediary(&self) -> &Intermediary {
        &self.fi
    }
}

/// Wraps an already-named error so `step_result` prints it verbatim.
struct Named(String);

impl std::fmt::Debug for Named {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}
