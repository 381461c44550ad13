//! End-to-end protocol simulation: random basis choices, sifting per layer,
//! error-rate estimation and asymptotic key finalization.

use std::collections::BTreeMap;
use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keystructure::{Layer, UserId};
use crate::measurement::{NodeSetting, Observation, PreparedState, Settings};
use crate::quantum::Symbol;
use crate::rng::{stream, Lane};
use crate::stats::binary_entropy;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("layer {layer}: not enough data to estimate {which}")]
    InsufficientData { layer: Layer, which: &'static str },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub rounds: usize,
    /// Probability that a testable node is measured in a test basis; the two
    /// test settings are equally likely.
    pub test_bias: f64,
    /// With probability `noise_v` a round follows the ideal state, otherwise
    /// every readout is uniform over the user's register.
    pub noise_v: f64,
    pub seed: u64,
    pub sacrifice_fraction: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            rounds: 10_000,
            test_bias: 1.0 / 3.0,
            noise_v: 1.0,
            seed: 0,
            sacrifice_fraction: 0.1,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.rounds == 0 {
            return Err(ProtocolError::Config("rounds must be at least 1".into()));
        }
        for (name, v) in [
            ("test_bias", self.test_bias),
            ("noise_v", self.noise_v),
            ("sacrifice_fraction", self.sacrifice_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ProtocolError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Settings and raw readout of one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRecord {
    pub settings: Settings,
    /// Per user: index into the user's alphabet in the joint state.
    pub readout: Vec<u32>,
    /// Per user and plan factor: the coin used for an unpaired test readout.
    pub coins: Vec<Vec<Option<bool>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTranscript {
    pub users: Vec<UserId>,
    pub seed: u64,
    pub sacrifice_fraction: f64,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundClass {
    /// Every member measured this node and all its ancestors in the key basis.
    Key,
    /// Every member tested this node with the key basis above it.
    Test,
    /// Mixed settings, or an ancestor was tested.
    Unusable,
}

pub fn classify(prep: &PreparedState, settings: &Settings, layer: usize) -> RoundClass {
    let members = member_indices(prep, layer);
    let at = |u: usize, l: usize| {
        let pos = prep.user_layers(u).iter().position(|&x| x == l).unwrap();
        settings[u][pos]
    };
    for &a in prep.ancestors(layer) {
        if members.iter().any(|&u| at(u, a) != NodeSetting::Z) {
            return RoundClass::Unusable;
        }
    }
    let zs = members.iter().filter(|&&u| at(u, layer) == NodeSetting::Z).count();
    if zs == members.len() {
        RoundClass::Key
    } else if zs == 0 {
        RoundClass::Test
    } else {
        RoundClass::Unusable
    }
}

fn member_indices(prep: &PreparedState, layer: usize) -> Vec<usize> {
    let k = prep.structure();
    k.layers()[layer]
        .members()
        .iter()
        .map(|u| k.user_index(u).expect("member"))
        .collect()
}

fn draw_settings<R: Rng>(prep: &PreparedState, u: usize, bias: f64, rng: &mut R) -> Vec<NodeSetting> {
    prep.user_layers(u)
        .iter()
        .map(|&l| {
            if prep.testable(l) && rng.random::<f64>() < bias {
                if rng.random::<bool>() {
                    NodeSetting::X
                } else {
                    NodeSetting::Y
                }
            } else {
                NodeSetting::Z
            }
        })
        .collect()
}

fn simulate_round(prep: &PreparedState, cfg: &ProtocolConfig, r: usize) -> RoundRecord {
    let n = prep.structure().users().len();
    let mut source = stream(cfg.seed, r as u64, Lane::Source);
    let noisy = source.random::<f64>() >= cfg.noise_v;
    let mut user_rngs: Vec<_> = (0..n).map(|u| stream(cfg.seed, r as u64, Lane::User(u))).collect();
    let settings: Settings = user_rngs
        .iter_mut()
        .enumerate()
        .map(|(u, rng)| draw_settings(prep, u, cfg.test_bias, rng))
        .collect();
    let mut coin_refs: Vec<&mut dyn rand::RngCore> =
        user_rngs.iter_mut().map(|r| r as &mut dyn rand::RngCore).collect();
    let (readout, coins) = prep.measure(&settings, noisy, &mut source, &mut coin_refs);
    RoundRecord {
        settings,
        readout,
        coins,
    }
}

/// Simulates `cfg.rounds` rounds. Every round draws from its own streams, so
/// the transcript does not depend on evaluation order.
pub fn run_session(prep: &PreparedState, cfg: &ProtocolConfig) -> Result<SessionTranscript, ProtocolError> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    let rounds = {
        use rayon::prelude::*;
        (0..cfg.rounds)
            .into_par_iter()
            .map(|r| simulate_round(prep, cfg, r))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rounds = (0..cfg.rounds).map(|r| simulate_round(prep, cfg, r)).collect();
    Ok(SessionTranscript {
        users: prep.structure().users().to_vec(),
        seed: cfg.seed,
        sacrifice_fraction: cfg.sacrifice_fraction,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSift {
    pub layer: Layer,
    pub key_rounds: Vec<usize>,
    pub test_rounds: Vec<usize>,
}

pub fn sift(prep: &PreparedState, transcript: &SessionTranscript) -> Vec<LayerSift> {
    prep.structure()
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mut s = LayerSift {
                layer: layer.clone(),
                key_rounds: Vec::new(),
                test_rounds: Vec::new(),
            };
            for (r, rec) in transcript.rounds.iter().enumerate() {
                match classify(prep, &rec.settings, l) {
                    RoundClass::Key => s.key_rounds.push(r),
                    RoundClass::Test => s.test_rounds.push(r),
                    RoundClass::Unusable => {}
                }
            }
            s
        })
        .collect()
}

pub fn is_sacrificed(transcript: &SessionTranscript, round: usize, layer: usize) -> bool {
    stream(transcript.seed, round as u64, Lane::Sacrifice(layer)).random::<f64>()
        < transcript.sacrifice_fraction
}

/// Members' key observations for `layer` in one round (`None` = ⊥).
fn key_symbols(prep: &PreparedState, rec: &RoundRecord, layer: usize) -> Vec<Option<u32>> {
    let obs = prep.observe(&rec.settings, &rec.readout, &rec.coins);
    member_indices(prep, layer)
        .into_iter()
        .map(|u| match prep.observation(&obs, u, layer) {
            Observation::Value(x) => Some(x),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub qz: f64,
    pub qx: f64,
    /// Sacrificed key rounds that entered QZ (all-⊥ rounds excluded).
    pub qz_samples: usize,
    /// Test rounds with an even number of y settings that reached the node.
    pub qx_samples: usize,
}

pub fn estimate_parameters(
    prep: &PreparedState,
    transcript: &SessionTranscript,
    layer: usize,
) -> Result<Estimates, ProtocolError> {
    let lay = prep.structure().layers()[layer].clone();
    let members = member_indices(prep, layer);
    let (mut errors, mut qz_samples) = (0usize, 0usize);
    let (mut qx_sum, mut qx_samples) = (0.0, 0usize);
    let mut ideal: BTreeMap<Vec<NodeSetting>, f64> = BTreeMap::new();
    for (r, rec) in transcript.rounds.iter().enumerate() {
        match classify(prep, &rec.settings, layer) {
            RoundClass::Key if is_sacrificed(transcript, r, layer) => {
                let ks = key_symbols(prep, rec, layer);
                if ks.iter().all(Option::is_none) {
                    continue;
                }
                qz_samples += 1;
                if ks.iter().any(|k| *k != ks[0]) {
                    errors += 1;
                }
            }
            RoundClass::Test => {
                let ms: Vec<NodeSetting> = members
                    .iter()
                    .map(|&u| {
                        let pos = prep.user_layers(u).iter().position(|&x| x == layer).unwrap();
                        rec.settings[u][pos]
                    })
                    .collect();
                if ms.iter().filter(|&&s| s == NodeSetting::Y).count() % 2 == 1 {
                    continue;
                }
                let obs = prep.observe(&rec.settings, &rec.readout, &rec.coins);
                let mut prod = 1.0;
                let mut reached = true;
                for &u in &members {
                    match prep.observation(&obs, u, layer) {
                        Observation::Parity(s) => prod *= s as f64,
                        _ => reached = false,
                    }
                }
                if !reached {
                    continue;
                }
                let e = match ideal.get(&ms) {
                    Some(e) => *e,
                    None => {
                        let e = prep
                            .ideal_test_parity(layer, &ms)
                            .expect("test rounds only occur on testable nodes");
                        ideal.insert(ms, e);
                        e
                    }
                };
                qx_sum += (1.0 - prod * e) / 2.0;
                qx_samples += 1;
            }
            _ => {}
        }
    }
    if qz_samples == 0 {
        return Err(ProtocolError::InsufficientData { layer: lay, which: "QZ" });
    }
    if qx_samples == 0 {
        return Err(ProtocolError::InsufficientData { layer: lay, which: "QX" });
    }
    Ok(Estimates {
        qz: errors as f64 / qz_samples as f64,
        qx: qx_sum / qx_samples as f64,
        qz_samples,
        qx_samples,
    })
}

/// Asymptotic secret fraction `max(0, 1 − h₂(QZ) − h₂(QX))`.
pub fn secret_fraction(qz: f64, qx: f64) -> f64 {
    (1.0 - binary_entropy(qz) - binary_entropy(qx)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerKey {
    pub layer: Layer,
    /// Alphabet size of the layer's key symbols.
    pub arity: u32,
    /// Member whose symbols form the raw key.
    pub reference: UserId,
    pub raw_key: Vec<u32>,
    /// Every member's symbol in the raw-key rounds (`None` = ⊥).
    pub member_keys: BTreeMap<UserId, Vec<Option<u32>>>,
    pub key_rounds: usize,
    pub sacrificed: usize,
    /// Unsacrificed key rounds in which the reference member decoded ⊥.
    pub bottom_rounds: usize,
    pub estimates: Option<Estimates>,
    pub fraction: f64,
    pub secure_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRing {
    pub layers: Vec<LayerKey>,
}

/// Sifted raw keys with ⊥ rounds dropped. Layers without estimates get
/// fraction 0.
pub fn finalize_keys(
    prep: &PreparedState,
    transcript: &SessionTranscript,
    estimates: &[Option<Estimates>],
) -> KeyRing {
    let k = prep.structure();
    let layers = k
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let members = layer.members();
            let mut key = LayerKey {
                layer: layer.clone(),
                arity: prep.arity(l),
                reference: members[0].clone(),
                raw_key: Vec::new(),
                member_keys: members.iter().map(|u| (u.clone(), Vec::new())).collect(),
                key_rounds: 0,
                sacrificed: 0,
                bottom_rounds: 0,
                estimates: estimates.get(l).copied().flatten(),
                fraction: 0.0,
                secure_length: 0.0,
            };
            for (r, rec) in transcript.rounds.iter().enumerate() {
                if classify(prep, &rec.settings, l) != RoundClass::Key {
                    continue;
                }
                key.key_rounds += 1;
                if is_sacrificed(transcript, r, l) {
                    key.sacrificed += 1;
                    continue;
                }
                let ks = key_symbols(prep, rec, l);
                let Some(x) = ks[0] else {
                    key.bottom_rounds += 1;
                    continue;
                };
                key.raw_key.push(x);
                for (u, v) in members.iter().zip(ks) {
                    key.member_keys.get_mut(u).unwrap().push(v);
                }
            }
            if let Some(e) = key.estimates {
                key.fraction = secret_fraction(e.qz, e.qx);
            }
            key.secure_length = key.raw_key.len() as f64 * key.fraction;
            key
        })
        .collect();
    KeyRing { layers }
}

/// Runs a session, estimates every layer that has enough data and finalizes.
pub fn run_protocol(
    prep: &PreparedState,
    cfg: &ProtocolConfig,
) -> Result<(SessionTranscript, KeyRing), ProtocolError> {
    let t = run_session(prep, cfg)?;
    let est: Vec<Option<Estimates>> = (0..prep.structure().num_layers())
        .map(|l| estimate_parameters(prep, &t, l).ok())
        .collect();
    let ring = finalize_keys(prep, &t, &est);
    Ok((t, ring))
}

/// Bits needed per key symbol.
pub fn bits_per_symbol(arity: u32) -> u32 {
    (32 - (arity.max(2) - 1).leading_zeros()).max(1)
}

/// Packs symbols MSB-first into bytes, zero-padded, as lowercase hex.
pub fn pack_hex(symbols: &[u32], bits: u32) -> String {
    let mut bytes = Vec::with_capacity((symbols.len() * bits as usize).div_ceil(8));
    let (mut acc, mut filled) = (0u8, 0u32);
    for &s in symbols {
        for b in (0..bits).rev() {
            acc = (acc << 1) | ((s >> b) & 1) as u8;
            filled += 1;
            if filled == 8 {
                bytes.push(acc);
                acc = 0;
                filled = 0;
            }
        }
    }
    if filled > 0 {
        bytes.push(acc << (8 - filled));
    }
    hex::encode(bytes)
}

pub fn unpack_hex(text: &str, bits: u32, len: usize) -> Result<Vec<u32>, ProtocolError> {
    let bad = || ProtocolError::Transcript(format!("invalid hex key `{text}`"));
    let bytes = hex::decode(text).map_err(|_| bad())?;
    if bytes.len() * 8 < len * bits as usize {
        return Err(bad());
    }
    let bit = |i: usize| ((bytes[i / 8] >> (7 - i % 8)) & 1) as u32;
    Ok((0..len)
        .map(|k| (0..bits as usize).fold(0, |acc, b| (acc << 1) | bit(k * bits as usize + b)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKeyReport {
    pub layer: Layer,
    pub arity: u32,
    pub bits_per_symbol: u32,
    pub raw_length: usize,
    pub raw_key_hex: String,
    pub key_rounds: usize,
    pub sacrificed: usize,
    pub bottom_rounds: usize,
    pub qz: Option<f64>,
    pub qx: Option<f64>,
    pub fraction: f64,
    pub secure_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRingReport {
    pub layers: Vec<LayerKeyReport>,
}

impl KeyRing {
    pub fn report(&self) -> KeyRingReport {
        KeyRingReport {
            layers: self
                .layers
                .iter()
                .map(|k| {
                    let bits = bits_per_symbol(k.arity);
                    LayerKeyReport {
                        layer: k.layer.clone(),
                        arity: k.arity,
                        bits_per_symbol: bits,
                        raw_length: k.raw_key.len(),
                        raw_key_hex: pack_hex(&k.raw_key, bits),
                        key_rounds: k.key_rounds,
                        sacrificed: k.sacrificed,
                        bottom_rounds: k.bottom_rounds,
                        qz: k.estimates.map(|e| e.qz),
                        qx: k.estimates.map(|e| e.qx),
                        fraction: k.fraction,
                        secure_length: k.secure_length,
                    }
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("report serializes")
    }
}

impl KeyRingReport {
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    round: usize,
    user: String,
    setting: String,
    outcome_symbol: String,
}

impl SessionTranscript {
    /// CSV with columns `round,user,setting,outcome_symbol`. The setting is
    /// one letter per layer of the user (`-` when the user has none). A
    /// readout that needed coins carries a `/` suffix with one of `+`, `-`
    /// or `.` per plan factor of the user.
    pub fn write_csv<W: io::Write>(&self, prep: &PreparedState, w: W) -> Result<(), ProtocolError> {
        let mut out = csv::Writer::from_writer(w);
        let layout = prep.state().layout();
        for (r, rec) in self.rounds.iter().enumerate() {
            for (u, uid) in self.users.iter().enumerate() {
                let setting: String = if rec.settings[u].is_empty() {
                    "-".into()
                } else {
                    rec.settings[u].iter().map(|s| s.as_char()).collect()
                };
                let mut outcome = layout.alphabet(u)[rec.readout[u] as usize].to_string();
                if rec.coins[u].iter().any(Option::is_some) {
                    outcome.push('/');
                    outcome.extend(rec.coins[u].iter().map(|c| match c {
                        Some(true) => '+',
                        Some(false) => '-',
                        None => '.',
                    }));
                }
                out.serialize(CsvRow {
                    round: r,
                    user: uid.to_string(),
                    setting,
                    outcome_symbol: outcome,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(
        prep: &PreparedState,
        reader: R,
        seed: u64,
        sacrifice_fraction: f64,
    ) -> Result<Self, ProtocolError> {
        let k = prep.structure();
        let users = k.users().to_vec();
        let layout = prep.state().layout();
        let n = users.len();
        let bad = |msg: String| ProtocolError::Transcript(msg);
        let mut rounds: Vec<RoundRecord> = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: CsvRow = row?;
            let u = k
                .user_index(&UserId::from(row.user.as_str()))
                .ok_or_else(|| bad(format!("unknown user `{}`", row.user)))?;
            if row.round == rounds.len() {
                rounds.push(RoundRecord {
                    settings: vec![Vec::new(); n],
                    readout: vec![u32::MAX; n],
                    coins: vec![Vec::new(); n],
                });
            } else if row.round + 1 != rounds.len() {
                return Err(bad(format!("round {} out of order", row.round)));
            }
            let rec = rounds.last_mut().unwrap();
            let settings = if row.setting == "-" {
                Vec::new()
            } else {
                row.setting
                    .chars()
                    .map(|c| NodeSetting::from_char(c).ok_or_else(|| bad(format!("bad setting `{c}`"))))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let (sym, coins) = match row.outcome_symbol.split_once('/') {
                Some((s, c)) => (s, Some(c)),
                None => (row.outcome_symbol.as_str(), None),
            };
            let sym: Symbol = sym.parse().map_err(|e| bad(format!("{e}")))?;
            let idx = layout
                .symbol_index(u, &sym)
                .ok_or_else(|| bad(format!("symbol `{sym}` not in alphabet of `{}`", row.user)))?;
            let slots = prep.user_factor_count(u);
            rec.coins[u] = match coins {
                None => vec![None; slots],
                Some(c) => c
                    .chars()
                    .map(|ch| match ch {
                        '+' => Ok(Some(true)),
                        '-' => Ok(Some(false)),
                        '.' => Ok(None),
                        _ => Err(bad(format!("bad coin `{ch}`"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            rec.settings[u] = settings;
            rec.readout[u] = idx as u32;
        }
        for (r, rec) in rounds.iter().enumerate() {
            if rec.readout.contains(&u32::MAX) {
                return Err(bad(format!("round {r} is missing users")));
            }
            prep.check_settings(&rec.settings)
                .map_err(|e| bad(format!("round {r}: {e}")))?;
        }
        Ok(SessionTranscript {
            users,
            seed,
            sacrifice_fraction,
            rounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystructure::LayeredKeyStructure;

    fn three_user() -> LayeredKeyStructure {
        LayeredKeyStructure::new(["1", "2", "3"], [vec!["1", "2", "3"], vec!["1", "2"]]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::default().validate().is_ok());
        let bad = ProtocolConfig { rounds: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ProtocolConfig { noise_v: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fraction_values() {
        assert_eq!(secret_fraction(0.0, 0.0), 1.0);
        assert!((secret_fraction(0.05, 0.05) - 0.4272).abs() < 1e-4);
        assert_eq!(secret_fraction(0.5, 0.0), 0.0);
    }

    #[test]
    fn hex_round_trip() {
        let syms = vec![1, 0, 1, 1, 0, 0, 1, 0, 1];
        let h = pack_hex(&syms, 1);
        assert_eq!(h, "b280");
        assert_eq!(unpack_hex(&h, 1, syms.len()).unwrap(), syms);
        let tern = vec![2, 0, 1, 2];
        assert_eq!(bits_per_symbol(3), 2);
        assert_eq!(unpack_hex(&pack_hex(&tern, 2), 2, 4).unwrap(), tern);
    }

    #[test]
    fn sift_mixed_round() {
        let p = PreparedState::flat(&three_user()).unwrap();
        // Users 1 and 2: layer {1,2,3} in x, layer {1,2} in z; user 3: x.
        let s = vec![
            vec![NodeSetting::X, NodeSetting::Z],
            vec![NodeSetting::X, NodeSetting::Z],
            vec![NodeSetting::X],
        ];
        assert_eq!(classify(&p, &s, 0), RoundClass::Test);
        assert_eq!(classify(&p, &s, 1), RoundClass::Key);
        let all_z = p.all_key_settings();
        assert_eq!(classify(&p, &all_z, 0), RoundClass::Key);
        assert_eq!(classify(&p, &all_z, 1), RoundClass::Key);
        let empty = SessionTranscript {
            users: three_user().users().to_vec(),
            seed: 0,
            sacrifice_fraction: 0.1,
            rounds: vec![],
        };
        assert!(sift(&p, &empty).iter().all(|s| s.key_rounds.is_empty() && s.test_rounds.is_empty()));
    }

    #[test]
    fn deterministic_and_zero_bias() {
        let p = PreparedState::flat(&three_user()).unwrap();
        let cfg = ProtocolConfig { rounds: 100, seed: 9, ..Default::default() };
        assert_eq!(run_session(&p, &cfg).unwrap(), run_session(&p, &cfg).unwrap());
        let cfg = ProtocolConfig { test_bias: 0.0, ..cfg };
        let t = run_session(&p, &cfg).unwrap();
        for s in sift(&p, &t) {
            assert_eq!(s.key_rounds.len(), 100);
        }
    }

    #[test]
    fn noiseless_keys_agree() {
        let k = three_user();
        for plan in [
            crate::planner::ConstructionPlan::flat(&k),
            crate::planner::ConstructionPlan::greedy_tradeoff(&k, 2).unwrap(),
        ] {
            let p = PreparedState::new(&plan).unwrap();
            let cfg = ProtocolConfig { rounds: 3000, seed: 1, ..Default::default() };
            let (t, ring) = run_protocol(&p, &cfg).unwrap();
            for (l, key) in ring.layers.iter().enumerate() {
                let e = key.estimates.unwrap();
                assert_eq!(e.qz, 0.0);
                assert_eq!(key.raw_key.len(), key.key_rounds - key.sacrificed - key.bottom_rounds);
                for v in key.member_keys.values() {
                    let v: Vec<u32> = v.iter().map(|x| x.unwrap()).collect();
                    assert_eq!(v, key.raw_key);
                }
                if plan.roots().iter().all(|r| matches!(r, crate::planner::PlanNode::Leaf { .. })) {
                    assert!(e.qx.abs() < 1e-12, "layer {l}");
                }
            }
            let mut buf = Vec::new();
            t.write_csv(&p, &mut buf).unwrap();
            let back = SessionTranscript::read_csv(&p, buf.as_slice(), t.seed, t.sacrifice_fraction).unwrap();
            assert_eq!(back, t);
            let report = KeyRingReport::from_json(&ring.to_json()).unwrap();
            assert_eq!(report, ring.report());
        }
    }
}
